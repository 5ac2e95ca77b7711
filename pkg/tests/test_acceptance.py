"""Acceptance gate: one test per criterion, each at its stated tolerance."""
import copy
import json
import random
import time

import pytest

from flipflag import cli, wire
from flipflag.crypto import pke_decrypt, verify_receipt
from flipflag.errors import Rejected
from flipflag.server import DAY
from flipflag.simnet import attacks
from flipflag.simnet.scenario import DEFAULT_SEED, HAPPY_PATH, World, play
from flipflag.wire import ActivateChallenge, AuthResponse, InactiveReply, decode

from conftest import criterion, oracle_h

SUITE_SIZES = {"replay": {"trials": 100}, "tamper": {"flips": 64},
               "track": {"sessions": 5}, "desync": {"trials": 100}}


def full_suite(seed=DEFAULT_SEED):
    """Happy path plus every attack suite at acceptance size."""
    w = play(HAPPY_PATH, seed)
    reports = {name: fn(seed, **SUITE_SIZES[name]) for name, fn in attacks.ATTACKS.items()}
    return w, reports


@pytest.fixture(scope="module")
def suite():
    return full_suite()


def test_c01_lifecycle(capsys):
    t0 = time.perf_counter()
    code = cli.main(["demo", "--json"])
    elapsed = time.perf_counter() - t0
    data = json.loads(capsys.readouterr().out)
    by_action = {o["action"]: o for o in data["outcomes"]}
    deactivated = by_action["checkout"]["deactivated"]
    after = by_action["aftersales"]
    ok = (code == 0 and len(deactivated) == 3 and all(deactivated.values())
          and after["activated"] and after["decision"] == "Granted" and elapsed < 5.0)
    assert criterion(1, "end-to-end lifecycle", ok,
                     f"exit={code} deactivated={sum(deactivated.values())}/3 "
                     f"decision={after['decision']} runtime={elapsed:.3f}s < 5s")


def test_c02_key_chain():
    w = World()
    tag = w.add_mtag("alice")
    expected = tag.state.k_ci
    steps_ok = 0
    for i in range(10):
        assert w.shop(f"c{i}", "alice").ok
        expected = oracle_h(expected)
        s = tag.state
        server_view = pke_decrypt(w.server.keys.sk, s.t_ci)
        if s.k_ci == expected == server_view == w.server.records[s.n_i].k_ci_current:
            steps_ok += 1
    assert criterion(2, "key-chain synchrony", steps_ok == 10,
                     f"{steps_ok}/10 steps equal h^i(K_0); final key = h^10(K_0)")


def test_c03_tamper():
    runs = list(attacks.tamper_runs(DEFAULT_SEED, flips=64))
    rejected = sum(r.rejected for r in runs)
    dirty = sum(not r.clean for r in runs)
    kinds = {r.kind for r in runs}
    ok = len(runs) == 768 and rejected == 768 and dirty == 0 and len(kinds) == 12
    assert criterion(3, "integrity under single-bit flips", ok,
                     f"{rejected}/{len(runs)} rejected, {dirty} committed changes, "
                     f"{len(kinds)} kinds")


def test_c04_replay(suite):
    rep = suite[1]["replay"]
    main = next(c for c in rep.checks if "replays rejected" in c.name)
    ok = rep.passed and main.detail.startswith("0 acceptances") and "100 trials" in main.detail
    assert criterion(4, "replay resistance", ok, main.detail)


def test_c05_location_privacy():
    w = World()
    w.add_mtag("alice")
    for i in range(5):
        w.add_gtag(f"g{i}")
        assert w.shop(f"c{i}", "alice").ok and w.shop(f"c{i}", f"g{i}").ok
        assert w.checkout(f"c{i}").status == "Accepted"
    ts = [decode(bytes.fromhex(e.hex)).t for e in w.transcript.events
          if e.kind == "AuthResponse" and e.sender == "mtag:alice"]
    distinct = len(ts) == 5 and len(set(ts)) == 5

    w = World()
    for who, g, cart in (("alice", "ga", "ca"), ("bob", "gb", "cb")):
        w.add_mtag(who)
        w.add_gtag(g)
        w.shop(cart, who)
        w.shop(cart, g)
        w.checkout(cart)
    a = wire.encode(w.gtags["gtag:ga"].inactive_reply())
    b = wire.encode(w.gtags["gtag:gb"].inactive_reply())
    diff = [i for i in range(len(a)) if a[i] != b[i]]
    # kind byte, 8-byte time, then the 16-byte nonce
    nonce_lo, nonce_hi = 9, 25
    assert InactiveReply.offsets()["gamma1"] == (nonce_lo, nonce_hi)
    confined = len(a) == len(b) and bool(diff) and all(nonce_lo <= i < nonce_hi for i in diff)
    assert criterion(5, "location privacy", distinct and confined,
                     f"{len(set(ts))}/5 distinct T_ci; reply diff offsets within "
                     f"[{nonce_lo},{nonce_hi}): {confined}")


def test_c06_owner_activation():
    w = World()
    w.add_mtag("alice")
    w.add_gtag("g1")
    w.shop("c1", "alice")
    w.shop("c1", "g1")
    w.checkout("c1")
    g = w.gtags["gtag:g1"]
    wrong = 0
    for i in range(5):
        w.add_mtag(f"other{i}")
        w.shop(f"o{i}", f"other{i}")  # a real card with its own history
        out = w.aftersales("g1", f"other{i}")
        wrong += out.detail["activated"] or g.state.active
    rng = random.Random(6)
    random_accepts = 0
    for _ in range(1000):
        g.inactive_reply()
        try:
            g.try_activate(ActivateChallenge(rng.randbytes(32)))
            random_accepts += 1
        except Rejected:
            pass
    still_inactive = not g.state.active
    out = w.aftersales("g1", "alice")
    ok = (wrong == 0 and random_accepts == 0 and still_inactive
          and out.detail["activated"] and g.state.active and out.status == "Granted")
    assert criterion(6, "owner-permitted activation", ok,
                     f"matching card activated={out.detail['activated']}; "
                     f"{wrong}/5 wrong-card activations; {random_accepts}/1000 random delta accepted")


def _sold_world():
    w = World()
    w.add_mtag("alice")
    w.add_gtag("g1", price=2500, discount=0)
    w.shop("c1", "alice")
    w.shop("c1", "g1")
    w.checkout("c1")
    return w


def test_c07_non_repudiation():
    w = play(HAPPY_PATH)
    pk = w.server.keys.sig_pk
    receipts = [rc for r in w.server.records.values() for _, rc in r.goods]
    receipts += [g.state.receipt for g in w.gtags.values()]
    all_verify = len(receipts) == 6 and all(verify_receipt(pk, r.body(), r.signature)
                                            for r in receipts)
    rng = random.Random(7)
    survived = 0
    for _ in range(100):
        raw = bytearray(rng.choice(receipts).to_bytes())
        raw[rng.randrange(len(raw))] ^= rng.randrange(1, 256)
        rc = wire.parse_receipt(bytes(raw))
        survived += verify_receipt(pk, rc.body(), rc.signature)

    base = _sold_world()
    warranty = base.server.warranty_days
    tx = base.gtags["gtag:g1"].state.receipt.tx_time
    decisions = {}
    for day in (warranty, warranty + 1):
        w2 = copy.deepcopy(base)
        w2.advance(seconds=tx + day * DAY - w2.clock.now())
        decisions[day] = w2.aftersales("g1", "alice").detail["decision"]
    boundary = decisions == {warranty: "Granted", warranty + 1: "DeniedExpired"}
    ok = all_verify and survived == 0 and boundary
    assert criterion(7, "non-repudiation", ok,
                     f"{len(receipts)} receipts verify={all_verify}; {survived}/100 mutations "
                     f"verified; day {warranty} -> {decisions[warranty]}, "
                     f"day {warranty + 1} -> {decisions[warranty + 1]}")


def _digests(world, reports):
    return [world.transcript.digest()] + [d for r in reports.values() for d in r.transcript_digests]


def test_c08_determinism(suite):
    first = _digests(*suite)
    second = _digests(*full_suite())
    ok = first == second and len(first) > 1
    assert criterion(8, "determinism", ok, f"{len(first)} transcript hashes identical across two runs")


def test_c09_secret_hygiene(suite):
    world, reports = suite
    leaks = world.secret_scan() + [x for r in reports.values() for x in r.secret_leaks]
    scanned = 1 + sum(len(r.transcript_digests) for r in reports.values())
    assert criterion(9, "secret hygiene", not leaks,
                     f"{len(leaks)} leaks across {scanned} transcripts")


def test_c10_desync(suite):
    rep = suite[1]["desync"]
    ack = next(c for c in rep.checks if "KeyUpdateAck" in c.name)
    prov = next(c for c in rep.checks if "Provision" in c.name)
    ok = ack.passed and prov.passed and ack.detail == prov.detail == "100/100"
    assert criterion(10, "desync survivability", ok,
                     f"ack drop {ack.detail}, provision drop {prov.detail}")
