"""``flipflag`` command-line front door.

Exit codes are stable for CI: 0 success, 1 protocol or attack failure,
2 I/O or data corruption, 64 usage.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .crypto import Rng
from .errors import CorruptStore, ScriptError, UsageError
from .server import STORE_FORMAT, ServiceDecision, SimClock, store_restore, store_snapshot
from .simnet.attacks import ATTACKS
from .simnet.scenario import DEFAULT_SEED, HAPPY_PATH, World, play
from .verify import verify_transcript

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64
SEED_ENV = "FLIPFLAG_SEED"

# keyword that sets the size of each suite
_TRIAL_KW = {"replay": "trials", "tamper": "flips", "track": "sessions", "desync": "trials"}


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(value: str) -> bytes:
    try:
        seed = bytes.fromhex(value)
    except ValueError:
        raise argparse.ArgumentTypeError("seed must be hex") from None
    if len(seed) != 32:
        raise argparse.ArgumentTypeError("seed must be 32 bytes (64 hex digits)")
    return seed


def resolve_seed(flag: bytes | None, env=None) -> bytes:
    """--seed beats $FLIPFLAG_SEED beats the built-in default."""
    if flag is not None:
        return flag
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            return _seed(env[SEED_ENV])
        except argparse.ArgumentTypeError as exc:
            raise _Usage(f"${SEED_ENV}: {exc}") from None
    return DEFAULT_SEED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None,
                        help=f"32-byte hex RNG seed (default: ${SEED_ENV}, else built-in)")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--warranty", type=int, default=None, metavar="DAYS",
                        help="warranty period in days (default 365)")
    common.add_argument("--dj-granularity", type=int, default=None, metavar="SECONDS",
                        help="transaction-time quantization window (default 60)")
    common.add_argument("--store", type=Path, default=None,
                        help="server store snapshot: restored if present, written afterwards")
    common.add_argument("--transcript", type=Path, default=None,
                        help="write the air transcript (JSON Lines) here")

    p = _Parser(prog="flipflag", description="Simulate the tag deactivation/activation protocol.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    demo = sub.add_parser("demo", parents=[common], help="run the canonical shopping lifecycle")
    demo.add_argument("--advance-days", type=int, default=30,
                      help="days between checkout and the return (default 30)")
    demo.add_argument("--secrets-out", type=Path, default=None,
                      help="write the keys needed by 'transcript verify --secrets'")

    run = sub.add_parser("run", parents=[common], help="run a scenario script")
    run.add_argument("script", type=Path)
    run.add_argument("--secrets-out", type=Path, default=None)

    atk = sub.add_parser("attack", parents=[common], help="run attack suites")
    atk.add_argument("name", choices=[*ATTACKS, "all"])
    atk.add_argument("--trials", type=int, default=None,
                     help="suite size (trials, flips per kind, or sessions)")

    tr = sub.add_parser("transcript", help="transcript tools")
    trs = tr.add_subparsers(dest="tcommand", required=True, parser_class=_Parser)
    ver = trs.add_parser("verify", parents=[common], help="check a transcript offline")
    ver.add_argument("path", type=Path)
    ver.add_argument("--secrets", type=Path, default=None,
                     help="secrets file; enables full re-derivation of every value")

    st = sub.add_parser("store", help="store snapshot tools")
    sts = st.add_subparsers(dest="scommand", required=True, parser_class=_Parser)
    ins = sts.add_parser("inspect", parents=[common], help="summarise a store snapshot")
    ins.add_argument("path", type=Path)
    return p


# -- helpers -----------------------------------------------------------------

def _emit(args, human: str, data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True) if args.json else human)


def _world_kw(args, seed: bytes) -> dict:
    """Construction arguments for World, restoring the server from --store if it exists."""
    kw = {}
    if args.store is not None and args.store.exists():
        server = store_restore(args.store, Rng(seed).fork("server"), SimClock())
        if args.warranty is not None:
            server.warranty_days = args.warranty
        if args.dj_granularity is not None:
            server.granularity = args.dj_granularity
        kw["server"] = server
    else:
        if args.warranty is not None:
            kw["warranty_days"] = args.warranty
        if args.dj_granularity is not None:
            kw["granularity"] = args.dj_granularity
    return kw


def _finish(args, world: World) -> None:
    if args.transcript is not None:
        world.transcript.write(args.transcript)
    if getattr(args, "secrets_out", None) is not None:
        args.secrets_out.write_text(json.dumps(world.secrets_file(), indent=2) + "\n")
    if args.store is not None:
        store_snapshot(world.server, args.store)


def _nominal(world: World) -> bool:
    for o in world.outcomes:
        if o.errors:
            return False
        if o.action == "aftersales":
            if o.status != ServiceDecision.GRANTED.value or not o.detail.get("key_updated"):
                return False
        elif o.status != "Accepted":
            return False
    return not world.secret_scan()


def _describe(o) -> str:
    d = o.detail
    if o.action == "shop":
        return f"{d.get('tag', '?')} authenticated and provisioned" if o.ok else d.get("tag", "")
    if o.action == "checkout":
        deact = d.get("deactivated", {})
        return (f"{sum(deact.values())}/{len(deact)} goods deactivated"
                + (f", D_j={d['d_j']}" if "d_j" in d else ""))
    if o.action == "aftersales":
        return (f"{d.get('gtag')} via {d.get('mtag')}: activated={d.get('activated')} "
                f"key_updated={d.get('key_updated')}")
    return ""


def _outcome_lines(world: World) -> list[str]:
    lines = []
    for i, o in enumerate(world.outcomes, 1):
        line = f"  [{i:2}] {o.action:<10} {o.status:<14} {_describe(o)}"
        if o.errors:
            line += "  errors: " + ", ".join(f"{w}:{e}" for w, e in o.errors)
        lines.append(line)
    return lines


def _world_summary(world: World, nominal: bool, elapsed: float) -> dict:
    return {"nominal": nominal, "elapsed_s": round(elapsed, 4),
            "transcript_digest": world.transcript.digest(),
            "events": len(world.transcript.events),
            **world.report().to_dict()}


# -- commands ----------------------------------------------------------------

def cmd_demo(args) -> int:
    seed = resolve_seed(args.seed)
    script = HAPPY_PATH.replace("advance days=30", f"advance days={args.advance_days}")
    t0 = time.perf_counter()
    world = play(script, seed, **_world_kw(args, seed))
    elapsed = time.perf_counter() - t0
    nominal = _nominal(world)
    _finish(args, world)
    phases = {"shop": "phase 1: shopping", "checkout": "phase 2: checkout",
              "aftersales": f"phase 3: after-sales return (+{args.advance_days} days)"}
    human = [f"seed {seed.hex()}"]
    seen = set()
    for line, o in zip(_outcome_lines(world), world.outcomes):
        if o.action not in seen:
            seen.add(o.action)
            human.append(phases.get(o.action, o.action))
        human.append(line)
    leaks = world.secret_scan()
    human.append(f"secret scan: {len(leaks)} leak(s)")
    human.append(f"transcript {world.transcript.digest()} ({len(world.transcript.events)} events)")
    if not nominal:
        bad = [o.status for o in world.outcomes if o.status not in ("Accepted", "Granted")]
        human.append("FAIL: " + (", ".join(bad) if bad else "secret leak"))
    else:
        human.append(f"OK in {elapsed:.3f}s")
    _emit(args, "\n".join(human), _world_summary(world, nominal, elapsed))
    return EXIT_OK if nominal else EXIT_FAIL


def cmd_run(args) -> int:
    seed = resolve_seed(args.seed)
    try:
        text = args.script.read_text()
    except OSError as exc:
        print(f"flipflag: cannot read script: {exc}", file=sys.stderr)
        return EXIT_IO
    t0 = time.perf_counter()
    world = play(text, seed, **_world_kw(args, seed))
    elapsed = time.perf_counter() - t0
    nominal = _nominal(world)
    _finish(args, world)
    human = _outcome_lines(world)
    human.append(f"transcript {world.transcript.digest()}  nominal={nominal}")
    _emit(args, "\n".join(human), _world_summary(world, nominal, elapsed))
    return EXIT_OK if nominal else EXIT_FAIL


def cmd_attack(args) -> int:
    seed = resolve_seed(args.seed)
    names = list(ATTACKS) if args.name == "all" else [args.name]
    reports = []
    for name in names:
        kw = {} if args.trials is None else {_TRIAL_KW[name]: args.trials}
        reports.append(ATTACKS[name](seed, **kw))
    human = [f"{'suite':<8} {'result':<6} check"]
    for rep in reports:
        for c in rep.checks:
            human.append(f"{rep.name:<8} {'PASS' if c.passed else 'FAIL':<6} {c.name}"
                         + (f" ({c.detail})" if c.detail else ""))
        if rep.secret_leaks:
            human.append(f"{rep.name:<8} FAIL   secret scan: {len(rep.secret_leaks)} leak(s)")
    ok = all(r.passed for r in reports)
    human.append("ALL PASS" if ok else "FAILURES: " + ", ".join(r.name for r in reports if not r.passed))
    _emit(args, "\n".join(human), {"passed": ok, "suites": [r.to_dict() for r in reports]})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_transcript_verify(args) -> int:
    try:
        issues = verify_transcript(args.path, args.secrets)
    except (OSError, ValueError, KeyError) as exc:
        print(f"flipflag: cannot load transcript or secrets: {exc}", file=sys.stderr)
        return EXIT_IO
    human = [f"FAIL {i}" for i in issues] or [f"OK {args.path}"]
    _emit(args, "\n".join(human),
          {"ok": not issues, "issues": [{"seq": i.seq, "message": i.message} for i in issues]})
    return EXIT_OK if not issues else EXIT_FAIL


def cmd_store_inspect(args) -> int:
    server = store_restore(args.path, Rng(DEFAULT_SEED), SimClock())
    recs = sorted(server.records.values(), key=lambda r: r.created_at)
    data = {
        "format": STORE_FORMAT,
        "warranty_days": server.warranty_days,
        "granularity": server.granularity,
        "shop_serial": server.shop_serial,
        "records": [{"n_i": r.n_i.hex(), "created_at": r.created_at, "d_j": r.d_j,
                     "goods": [g for g, _ in r.goods]} for r in recs],
    }
    human = [f"{args.path}: {len(recs)} record(s), warranty {server.warranty_days} days, "
             f"granularity {server.granularity}s"]
    human += [f"  {r['n_i']}  d_j={r['d_j']}  goods={','.join(r['goods']) or '-'}"
              for r in data["records"]]
    _emit(args, "\n".join(human), data)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "demo":
        cmd = cmd_demo
    elif args.command == "run":
        cmd = cmd_run
    elif args.command == "attack":
        cmd = cmd_attack
    elif args.command == "transcript":
        cmd = cmd_transcript_verify
    else:
        cmd = cmd_store_inspect
    try:
        return cmd(args)
    except CorruptStore as exc:
        print(f"flipflag: CorruptStore: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ScriptError, UsageError, _Usage) as exc:
        print(f"flipflag: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"flipflag: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
