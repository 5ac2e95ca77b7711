"""Attack suites: replay, tamper, tracking and desynchronisation."""
from __future__ import annotations

import copy
import hashlib
import random
from dataclasses import dataclass, field

from .. import wire
from ..crypto import Rng, pke_decrypt
from ..wire import decode, encode
from .channel import Drop, FlipBit, Record, Replay, Rule
from .scenario import DEFAULT_SEED, World

FLIPS_PER_KIND = 64


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class AttackReport:
    name: str
    checks: list[Check] = field(default_factory=list)
    transcript_digests: list[str] = field(default_factory=list)
    secret_leaks: list[tuple[int, str]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks) and not self.secret_leaks

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        self.checks.append(Check(name, bool(passed), detail))
        return passed

    def absorb(self, world: World) -> None:
        self.transcript_digests.append(world.transcript.digest())
        self.secret_leaks.extend(world.secret_scan())

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "checks": [vars(c) for c in self.checks],
                "secret_leaks": [list(x) for x in self.secret_leaks],
                "transcripts": len(self.transcript_digests)}


def trial_seeds(seed: bytes, n: int) -> list[bytes]:
    return [hashlib.sha256(seed + i.to_bytes(4, "big")).digest() for i in range(n)]


def _shopped_world(seed: bytes, goods=("g1",)) -> World:
    """A member card plus goods, all authenticated in cart c1 (not yet checked out)."""
    w = World(seed)
    w.add_mtag("alice")
    for g in goods:
        w.add_gtag(g, price=1500)
    w.open_cart("c1")
    w.shop("c1", "alice")
    for g in goods:
        w.shop("c1", g)
    return w


def _errored(out, where: str, name: str) -> bool:
    return (where, name) in out.errors


# -- replay ------------------------------------------------------------------

def _replay_trial(seed: bytes, rep: AttackReport, document: bool) -> tuple[int, int]:
    """Returns (attempts, acceptances) for the three replay attempts."""
    accepted = 0

    # AuthResponse captured in one cart session, replayed in the next
    w = World(seed)
    w.add_mtag("alice")
    w.policy.add(Rule(Record(), kind="AuthResponse", sender="mtag:alice"))
    w.shop("c1", "alice")
    w.policy.add(Rule(Replay(0), kind="AuthResponse", sender="mtag:alice"))
    out = w.shop("c2", "alice")
    if not _errored(out, "server", "AuthFailure"):
        accepted += 1
    rep.absorb(w)

    # KcgWrapped from a checkout whose broadcast was jammed, replayed at the retry
    w = _shopped_world(seed)
    w.policy.add(Rule(Record(), kind="KcgWrapped"))
    w.policy.add(Rule(Drop(), kind="DeactivateBroadcast"))
    w.checkout("c1")
    w.policy.add(Rule(Replay(0), kind="KcgWrapped"))
    out = w.checkout("c1")
    if not _errored(out, "server", "IntegrityFailure") or not w.gtags["gtag:g1"].state.active:
        accepted += 1
    rep.absorb(w)

    # ActivateChallenge jammed, then replayed against a fresh activation challenge
    w = _shopped_world(seed)
    w.checkout("c1")
    w.advance(days=1)
    w.policy.add(Rule(Record(drop=True), kind="ActivateChallenge"))
    w.aftersales("g1", "alice")
    w.policy.add(Rule(Replay(0), kind="ActivateChallenge"))
    out = w.aftersales("g1", "alice")
    if not _errored(out, "gtag:g1", "Rejected") or w.gtags["gtag:g1"].state.active:
        accepted += 1
    rep.absorb(w)

    if document:
        # Freshness assumption: a forced repeat of the reader nonce lets the
        # old response through the server's check.
        w = World(seed)
        w.add_mtag("alice")
        w.policy.add(Rule(Record(), kind="AuthResponse", sender="mtag:alice"))
        w.shop("c1", "alice")
        first = w.readers["reader:c1"].rng.seed
        w.open_cart("c2").rng = Rng(first)
        w.policy.add(Rule(Replay(0), kind="AuthResponse", sender="mtag:alice"))
        out = w.shop("c2", "alice")
        rep.check("identical-nonce replay passes server auth (documents freshness assumption)",
                  not _errored(out, "server", "AuthFailure"), f"errors={out.errors}")
        rep.absorb(w)

        # A re-broadcast to an inactive tag is a no-op
        w = _shopped_world(seed)
        w.policy.add(Rule(Record(), kind="DeactivateBroadcast"))
        w.checkout("c1")
        g = w.gtags["gtag:g1"]
        before = copy.deepcopy(g.state)
        data = w.channel.send("reader:c1", "gtag:g1", w.policy.recorded[0], "replay/broadcast")
        changed = g.deactivate(decode(data, wire.DeactivateBroadcast))
        rep.check("replayed DeactivateBroadcast to inactive tag is a no-op",
                  not changed and g.state == before)
        rep.absorb(w)
    return 3, accepted


def attack_replay(seed: bytes = DEFAULT_SEED, trials: int = 20) -> AttackReport:
    rep = AttackReport("replay")
    attempts = accepted = 0
    for i, s in enumerate(trial_seeds(seed, trials)):
        a, acc = _replay_trial(s, rep, document=(i == 0))
        attempts += a
        accepted += acc
    rep.check("AuthResponse/KcgWrapped/ActivateChallenge replays rejected",
              accepted == 0, f"{accepted} acceptances in {attempts} replays over {trials} trials")
    return rep


# -- tamper ------------------------------------------------------------------

def _tamper_world(seed: bytes) -> World:
    w = World(seed)
    w.add_mtag("alice")
    w.add_gtag("g1", price=4200, discount=200)
    w.add_gtag("g2", price=999)
    w.open_cart("c1")
    return w


TAMPER_STEPS = (
    lambda w: w.shop("c1", "alice"),
    lambda w: w.shop("c1", "g1"),
    lambda w: w.shop("c1", "g2"),
    lambda w: w.checkout("c1"),
    lambda w: w.advance(days=1),
    lambda w: w.aftersales("g1", "alice"),
)


@dataclass
class TamperRun:
    kind: str
    bit: int
    rejected: bool
    clean: bool
    errors: list


def tamper_runs(seed: bytes = DEFAULT_SEED, flips: int = FLIPS_PER_KIND, rep: AttackReport | None = None):
    """Yield one :class:`TamperRun` per (message kind, flipped bit).

    A run is clean when the rejecting entity's committed state is untouched
    and every other entity ends either where it started or where the honest
    run ends.
    """
    honest = _tamper_world(seed)
    first_step: dict[str, int] = {}
    prefixes = []
    for i, step in enumerate(TAMPER_STEPS):
        prefixes.append(copy.deepcopy(honest))
        n = len(honest.transcript.events)
        step(honest)
        for e in honest.transcript.events[n:]:
            first_step.setdefault(e.kind, i)
    if rep is not None:
        rep.absorb(honest)
    picker = random.Random(hashlib.sha256(seed + b"tamper").digest())
    honest_after = {}
    for cls in wire.message_types():
        kind = cls.__name__
        idx = first_step[kind]
        if idx not in honest_after:
            ref = copy.deepcopy(prefixes[idx])
            TAMPER_STEPS[idx](ref)
            honest_after[idx] = ref.committed()
        for bit in picker.sample(range(8 * cls.wire_length()), flips):
            w = copy.deepcopy(prefixes[idx])
            pre = w.committed()
            w.policy.add(Rule(FlipBit(bit), kind=kind))
            out = TAMPER_STEPS[idx](w)
            post = w.committed()
            good = honest_after[idx]
            clean = all(post[e] in (pre[e], good[e]) for e in post)
            rejecters = {where for where, _ in out.errors}
            if out.detail.get("decision") == "DeniedForged":
                rejecters.add("server")
            clean = clean and all(post[e] == pre[e] for e in rejecters if e in post)
            if rep is not None:
                rep.absorb(w)
            yield TamperRun(kind, bit, out.rejected, clean, out.errors)


def attack_tamper(seed: bytes = DEFAULT_SEED, flips: int = FLIPS_PER_KIND) -> AttackReport:
    rep = AttackReport("tamper")
    by_kind: dict[str, list[TamperRun]] = {}
    for run in tamper_runs(seed, flips, rep):
        by_kind.setdefault(run.kind, []).append(run)
    total = rejected = dirty = 0
    for kind, runs in by_kind.items():
        r = sum(x.rejected for x in runs)
        d = sum(not x.clean for x in runs)
        total += len(runs)
        rejected += r
        dirty += d
        rep.check(f"{kind}: {len(runs)} flips rejected without state change",
                  r == len(runs) and d == 0, f"rejected={r} dirty={d}")
    rep.check("all flips rejected", rejected == total, f"{rejected}/{total} rejections, {dirty} dirty")
    return rep


# -- tracking ----------------------------------------------------------------

def _observable(data: bytes) -> list[bytes]:
    msg = decode(data)
    fb = msg.field_bytes()
    return [fb[name] for name, _, role in msg.LAYOUT if role != "nonce"]


def attack_track(seed: bytes = DEFAULT_SEED, sessions: int = 5) -> AttackReport:
    rep = AttackReport("track")

    w = World(seed)
    w.add_mtag("alice")
    seen: dict[bytes, set[int]] = {}
    t_values = []
    for i in range(sessions):
        w.add_gtag(f"g{i}")
        n = len(w.transcript.events)
        w.shop(f"c{i}", "alice")
        w.shop(f"c{i}", f"g{i}")
        w.checkout(f"c{i}")
        for e in w.transcript.events[n:]:
            if e.sender != "mtag:alice":
                continue
            data = bytes.fromhex(e.hex)
            if e.kind == "AuthResponse":
                t_values.append(decode(data).t)
            for value in _observable(data):
                seen.setdefault(value, set()).add(i)
    rep.check(f"T_ci distinct across {sessions} sessions",
              len(set(t_values)) == len(t_values) == sessions, f"{len(set(t_values))} distinct")
    repeats = [v.hex()[:16] for v, s in seen.items() if len(s) > 1]
    rep.check("no non-nonce m-tag field repeats across sessions", not repeats,
              f"repeats={repeats}")
    rep.absorb(w)

    # two customers' goods deactivated in the same time window
    w = World(seed)
    for who, g, cart in (("alice", "ga", "ca"), ("bob", "gb", "cb")):
        w.add_mtag(who)
        w.add_gtag(g)
        w.shop(cart, who)
        w.shop(cart, g)
        w.checkout(cart)
    replies = []
    for g in ("gtag:ga", "gtag:gb"):
        data = encode(w.gtags[g].inactive_reply())
        w.channel.send(g, "reader:probe", data, "probe")
        replies.append(data)
    diff = [i for i, (a, b) in enumerate(zip(*replies)) if a != b]
    lo, hi = wire.InactiveReply.offsets()["gamma1"]
    rep.check("inactive replies differ only in the nonce",
              len(replies[0]) == len(replies[1]) and all(lo <= i < hi for i in diff),
              f"differing offsets {diff[:4]}... within [{lo},{hi})")
    rep.absorb(w)

    # documented window: a dropped Provision leaves T_ci unchanged for the next query
    w = World(seed)
    w.add_mtag("alice")
    w.policy.add(Rule(Drop(), kind="Provision"))
    w.shop("c1", "alice")
    w.shop("c2", "alice")
    ts = [decode(bytes.fromhex(e.hex)).t for e in w.transcript.events if e.kind == "AuthResponse"]
    rep.check("T_ci repeats after a dropped Provision (documents linkability window)",
              len(ts) == 2 and ts[0] == ts[1])
    rep.absorb(w)
    return rep


# -- desync ------------------------------------------------------------------

def _desync_trial(seed: bytes, rep: AttackReport) -> tuple[bool, bool, bool]:
    # lost after-sales acknowledgement
    w = _shopped_world(seed)
    w.checkout("c1")
    w.advance(days=2)
    w.policy.add(Rule(Drop(), kind="KeyUpdateAck"))
    after = w.aftersales("g1", "alice")
    ack_ok = (after.detail["activated"] and not after.detail["key_updated"]
              and w.shop("c2", "alice").ok)
    rep.absorb(w)

    # lost shopping provision, then a retry and a full checkout
    w = World(seed)
    w.add_mtag("alice")
    w.add_gtag("g1")
    w.policy.add(Rule(Drop(), kind="Provision", receiver="mtag:alice"))
    lost = w.shop("c1", "alice")
    retry = w.shop("c1", "alice")
    w.shop("c1", "g1")
    prov_ok = (lost.errors == [("mtag:alice", "ChannelLoss")] and retry.ok
               and w.checkout("c1").status == "Accepted")
    rep.absorb(w)

    # control: nothing dropped, keys agree everywhere
    w = _shopped_world(seed)
    m = w.mtags["mtag:alice"].state
    rec = w.server.records[m.n_i]
    sync = m.k_ci == rec.k_ci_current == pke_decrypt(w.server.keys.sk, m.t_ci)
    rep.absorb(w)
    return ack_ok, prov_ok, sync


def attack_desync(seed: bytes = DEFAULT_SEED, trials: int = 20) -> AttackReport:
    rep = AttackReport("desync")
    results = [_desync_trial(s, rep) for s in trial_seeds(seed, trials)]
    rep.check("dropped KeyUpdateAck: next shopping auth accepted",
              all(r[0] for r in results), f"{sum(r[0] for r in results)}/{trials}")
    rep.check("dropped Provision: retry accepted and checkout completes",
              all(r[1] for r in results), f"{sum(r[1] for r in results)}/{trials}")
    rep.check("control run: tag, record and T_ci agree on the key",
              all(r[2] for r in results), f"{sum(r[2] for r in results)}/{trials}")
    return rep


ATTACKS = {
    "replay": attack_replay,
    "tamper": attack_tamper,
    "track": attack_track,
    "desync": attack_desync,
}
