"""Deterministic scenario runner.

A :class:`World` owns every entity of one simulation.  It doubles as the
programmatic builder; :func:`run_scenario` drives it from a declarative
script with one ``action key=value ...`` line per step.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass, field

from ..crypto import Rng, ServerKeyPair
from ..errors import ScriptError, UsageError
from ..reader import Outcome, Reader
from ..server import DAY, GoodsInfo, Server, SimClock
from ..tag_g import GTag, new_gtag
from ..tag_m import MTag, new_mtag
from .channel import (
    AdversaryPolicy, Channel, Drop, FlipBit, Inject, Pass, Record, Replay, Rule,
    Transcript, scan_for_secrets,
)

DEFAULT_SEED = bytes.fromhex("5ec0de5ec0de5ec0de5ec0de5ec0de5ec0de5ec0de5ec0de5ec0de5ec0de5ec0")
START_TIME = 1_700_000_000


@dataclass
class ScenarioReport:
    outcomes: list[Outcome] = field(default_factory=list)
    secret_leaks: list[tuple[int, str]] = field(default_factory=list)
    transcript_digest: str = ""

    @property
    def ok(self) -> bool:
        return not self.secret_leaks

    def to_dict(self) -> dict:
        return {"outcomes": [o.to_dict() for o in self.outcomes],
                "secret_leaks": [list(x) for x in self.secret_leaks],
                "transcript_digest": self.transcript_digest}


class World:
    def __init__(self, seed: bytes = DEFAULT_SEED, *, warranty_days: int = 365,
                 granularity: int = 60, start: int = START_TIME, server: Server | None = None):
        self.rng = Rng(seed)
        self.clock = SimClock(start)
        self.transcript = Transcript()
        self.policy = AdversaryPolicy(rng=self.rng.fork("adversary"))
        self.channel = Channel(self.transcript, self.clock, self.policy)
        if server is None:
            server = Server(ServerKeyPair.generate(self.rng.fork("server-keys")),
                            self.rng.fork("server"), self.clock,
                            warranty_days=warranty_days, granularity=granularity)
        else:
            server.clock = self.clock
        self.server = server
        self.mtags: dict[str, MTag] = {}
        self.gtags: dict[str, GTag] = {}
        self.goods: dict[str, GoodsInfo] = {}
        self.readers: dict[str, Reader] = {}
        self.cart_goods: dict[str, list[str]] = {}
        self.cart_member: dict[str, str] = {}
        self.outcomes: list[Outcome] = []
        self._secrets: dict[bytes, str] = {}
        self._harvest()

    # -- entities -----------------------------------------------------------

    def add_mtag(self, name: str) -> MTag:
        handle = f"mtag:{name}"
        if handle in self.mtags:
            raise UsageError(f"duplicate tag {name}")
        k0, t0 = self.server.issue_tag_key()
        tag = new_mtag(k0, t0, self.rng.fork(handle))
        self.mtags[handle] = tag
        self._harvest()
        return tag

    def add_gtag(self, name: str, price: int = 1000, discount: int = 0,
                 goods_id: str | None = None) -> GTag:
        handle = f"gtag:{name}"
        if handle in self.gtags:
            raise UsageError(f"duplicate tag {name}")
        k0, t0 = self.server.issue_tag_key()
        tag = new_gtag(k0, t0, self.rng.fork(handle))
        self.gtags[handle] = tag
        self.goods[handle] = GoodsInfo(goods_id or name, price, discount)
        self._harvest()
        return tag

    def open_cart(self, name: str) -> Reader:
        rname = f"reader:{name}"
        if rname not in self.readers:
            self.server.open_session(rname)
            self.readers[rname] = Reader(rname, self.rng.fork(rname), self.channel,
                                         self.server, session_id=rname)
            self.cart_goods[rname] = []
        return self.readers[rname]

    def desk(self, name: str = "desk") -> Reader:
        rname = f"desk:{name}"
        if rname not in self.readers:
            self.readers[rname] = Reader(rname, self.rng.fork(rname), self.channel, self.server)
        return self.readers[rname]

    @staticmethod
    def _handle(name: str, prefix: str) -> str:
        return name if name.startswith(prefix) else f"{prefix}{name}"

    def _tag(self, name: str):
        for table, prefix in ((self.mtags, "mtag:"), (self.gtags, "gtag:")):
            h = self._handle(name, prefix)
            if h in table:
                return h, table[h]
        raise UsageError(f"unknown tag {name}")

    # -- actions ------------------------------------------------------------

    def _record(self, out: Outcome) -> Outcome:
        self.outcomes.append(out)
        self._harvest()
        return out

    def shop(self, cart: str, tag: str) -> Outcome:
        reader = self.open_cart(cart.removeprefix("reader:"))
        handle, t = self._tag(tag)
        out = reader.run_shopping_auth(t, handle, self.goods.get(handle))
        if t.kind == "m" and out.ok:
            self.cart_member[reader.name] = handle
        if t.kind == "g" and handle not in self.cart_goods[reader.name]:
            self.cart_goods[reader.name].append(handle)
        return self._record(out)

    def checkout(self, cart: str, extra_in_range=()) -> Outcome:
        rname = self._handle(cart, "reader:")
        reader = self.readers.get(rname)
        if reader is None or rname not in self.cart_member:
            raise UsageError(f"cart {cart} has no logged-in member")
        m_handle = self.cart_member[rname]
        in_range = {hnd: self.gtags[hnd] for hnd in self.cart_goods[rname]}
        for x in extra_in_range:
            hnd = self._handle(x, "gtag:")
            in_range[hnd] = self.gtags[hnd]
        return self._record(reader.run_checkout(self.mtags[m_handle], m_handle, in_range))

    def aftersales(self, gtag: str, mtag: str, desk: str = "desk") -> Outcome:
        g_handle, g = self._tag(self._handle(gtag, "gtag:"))
        m_handle, m = self._tag(self._handle(mtag, "mtag:"))
        return self._record(self.desk(desk).run_aftersales(g, g_handle, m, m_handle))

    def advance(self, seconds: int = 0, days: int = 0) -> None:
        self.clock.advance(seconds + days * DAY)

    # -- inspection ---------------------------------------------------------

    def committed(self) -> dict:
        out = {"server": self.server.committed()}
        for table in (self.mtags, self.gtags):
            out.update({hnd: t.state.committed() for hnd, t in table.items()})
        return out

    def _harvest(self) -> None:
        """Remember every secret that has existed so far, for the leak scan."""
        k = self.server.keys
        self._secrets.setdefault(k.sk, "server sk")
        self._secrets.setdefault(k.sig_sk, "server sig_sk")
        for hnd, t in self.mtags.items():
            s = t.state
            self._secrets.setdefault(s.k_ci, f"{hnd} K_ci")
            self._secrets.setdefault(s.seed_e, f"{hnd} seed_e")
            if s.w is not None:
                self._secrets.setdefault(s.w, f"{hnd} w")
        for hnd, t in self.gtags.items():
            s = t.state
            self._secrets.setdefault(s.k_gi, f"{hnd} K_gi")
            if s.k_cg is not None:
                self._secrets.setdefault(s.k_cg, f"{hnd} K_cg")
        for n_i, rec in self.server.records.items():
            self._secrets.setdefault(rec.k_ci_current, f"record {n_i.hex()[:8]} key")

    def secrets(self) -> list[tuple[str, bytes]]:
        return [(label, s) for s, label in self._secrets.items()]

    def secret_scan(self) -> list[tuple[int, str]]:
        return scan_for_secrets(self.transcript, self.secrets())

    def report(self) -> ScenarioReport:
        return ScenarioReport(list(self.outcomes), self.secret_scan(), self.transcript.digest())

    def secrets_file(self) -> dict:
        """Material needed to re-derive every protocol value from a transcript."""
        k = self.server.keys
        return {
            "server_sk": k.sk.hex(),
            "sig_pk": k.sig_pk.hex(),
            "seeds": {hnd: t.state.seed_e.hex() for hnd, t in self.mtags.items()},
        }


# -- scripts -------------------------------------------------------------------

_ACTIONS = {
    "pass": lambda a: Pass(),
    "drop": lambda a: Drop(),
    "record": lambda a: Record(a.pop("drop", "no") in ("yes", "true", "1")),
    "replay": lambda a: Replay(int(a.pop("index", 0))),
    "flip_bit": lambda a: FlipBit(int(a.pop("bit"))),
    "inject": lambda a: Inject(bytes.fromhex(a.pop("hex"))),
}


def parse_script(text: str) -> list[tuple[int, str, dict]]:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            words = shlex.split(line)
        except ValueError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from exc
        args = {}
        for w in words[1:]:
            if "=" not in w:
                raise ScriptError(f"line {lineno}: expected key=value, got {w!r}")
            k, v = w.split("=", 1)
            args[k] = v
        steps.append((lineno, words[0], args))
    return steps


def _int(args: dict, key: str, default=None) -> int:
    if key not in args:
        if default is None:
            raise KeyError(key)
        return default
    return int(args.pop(key))


def _adversary(world: World, args: dict) -> None:
    name = args.pop("action")
    if name == "clear":
        world.policy.clear()
        return
    if name not in _ACTIONS:
        raise ScriptError(f"unknown adversary action {name!r}")
    action = _ACTIONS[name](args)
    times = args.pop("times", "1")
    rule = Rule(action, kind=args.pop("kind", None), direction=args.pop("direction", None),
                sender=args.pop("sender", None), receiver=args.pop("receiver", None),
                nth=int(args.pop("nth")) if "nth" in args else None,
                times=None if times == "all" else int(times))
    world.policy.add(rule)


def apply_step(world: World, action: str, args: dict):
    args = dict(args)
    if action == "mtag":
        world.add_mtag(args.pop("name"))
    elif action == "gtag":
        world.add_gtag(args.pop("name"), price=_int(args, "price", 1000),
                       discount=_int(args, "discount", 0), goods_id=args.pop("goods_id", None))
    elif action == "cart":
        world.open_cart(args.pop("name"))
    elif action == "shop":
        return world.shop(args.pop("cart"), args.pop("tag"))
    elif action == "checkout":
        extra = [x for x in args.pop("bystanders", "").split(",") if x]
        return world.checkout(args.pop("cart"), extra)
    elif action == "aftersales":
        return world.aftersales(args.pop("gtag"), args.pop("mtag"), args.pop("desk", "desk"))
    elif action == "advance":
        world.advance(seconds=_int(args, "seconds", 0), days=_int(args, "days", 0))
    elif action == "adversary":
        _adversary(world, args)
    else:
        raise ScriptError(f"unknown action {action!r}")
    if args:
        raise ScriptError(f"unexpected arguments {sorted(args)}")


def run_scenario(script, seed: bytes = DEFAULT_SEED, **world_kw) -> tuple[Transcript, ScenarioReport]:
    world = play(script, seed, **world_kw)
    return world.transcript, world.report()


def play(script, seed: bytes = DEFAULT_SEED, **world_kw) -> World:
    """Run a script and hand back the finished world for inspection."""
    steps = parse_script(script) if isinstance(script, str) else list(script)
    config = {}
    if steps and steps[0][1] == "config":
        _, _, cargs = steps.pop(0)
        try:
            config = {"warranty_days": int(cargs.pop("warranty", 365)),
                      "granularity": int(cargs.pop("granularity", 60))}
        except ValueError as exc:
            raise ScriptError(f"bad config: {exc}") from exc
        if cargs:
            raise ScriptError(f"unexpected config arguments {sorted(cargs)}")
    world = World(seed, **{**config, **world_kw})
    for lineno, action, args in steps:
        try:
            apply_step(world, action, args)
        except ScriptError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from exc
        except (KeyError, ValueError, UsageError) as exc:
            raise ScriptError(f"line {lineno}: {action}: {exc}") from exc
    return world


HAPPY_PATH = """\
mtag name=alice
gtag name=kettle price=3999 discount=500
gtag name=toaster price=2599
gtag name=blender price=5999 discount=1000
cart name=c1
shop cart=c1 tag=alice
shop cart=c1 tag=kettle
shop cart=c1 tag=toaster
shop cart=c1 tag=blender
checkout cart=c1
advance days=30
aftersales gtag=kettle mtag=alice
"""
