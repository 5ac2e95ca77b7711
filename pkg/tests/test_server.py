import json

import pytest

from flipflag import wire
from flipflag.crypto import Rng, ServerKeyPair, sign_receipt
from flipflag.errors import AuthFailure, CorruptStore, UnknownPseudonym, UsageError
from flipflag.server import (
    DAY, Server, ServiceDecision, SimClock, store_restore, store_snapshot, warranty_decision,
)
from flipflag.wire import AuthResponse, CheckoutHello, Receipt


@pytest.fixture(scope="module")
def keys():
    return ServerKeyPair.generate(Rng(b"\x05" * 32))


def _receipt(keys, tx_time):
    body = Receipt(1, 100, tx_time, 0)
    return Receipt(1, 100, tx_time, 0, sign_receipt(keys.sig_sk, body.body()))


def test_clock():
    c = SimClock(10)
    c.advance(5)
    assert c.now() == 15
    with pytest.raises(ValueError):
        c.advance(-1)


@pytest.mark.parametrize("days,expected", [
    (0, ServiceDecision.GRANTED),
    (365, ServiceDecision.GRANTED),
    (366, ServiceDecision.DENIED_EXPIRED),
])
def test_warranty_boundary(keys, days, expected):
    t0 = 1_700_000_000
    assert warranty_decision(_receipt(keys, t0), t0 + days * DAY, keys.sig_pk, 365) is expected


def test_warranty_counts_whole_days(keys):
    t0 = 1_700_000_000
    rc = _receipt(keys, t0)
    assert warranty_decision(rc, t0 + 366 * DAY - 1, keys.sig_pk, 365) is ServiceDecision.GRANTED
    assert warranty_decision(rc, t0 + 366 * DAY, keys.sig_pk, 365) is ServiceDecision.DENIED_EXPIRED
    assert warranty_decision(rc, t0 + DAY - 1, keys.sig_pk, 0) is ServiceDecision.GRANTED


def test_forged_receipt(keys):
    rc = _receipt(keys, 1_700_000_000)
    forged = Receipt(rc.shop_serial, 1, rc.tx_time, rc.discount, rc.signature)
    assert warranty_decision(forged, rc.tx_time, keys.sig_pk, 365) is ServiceDecision.DENIED_FORGED


def test_bad_granularity(keys):
    with pytest.raises(ValueError):
        Server(keys, Rng(bytes(32)), SimClock(), granularity=0)


def test_auth_rejects_garbage(keys):
    s = Server(keys, Rng(bytes(32)), SimClock())
    s.open_session("c")
    resp = AuthResponse(bytes(80), bytes(32), bytes(16))
    with pytest.raises(AuthFailure):
        s.provision("c", "m", resp, bytes(16))
    with pytest.raises(UsageError):
        s.provision("c", "x", resp, bytes(16))


def test_unknown_pseudonym(keys):
    s = Server(keys, Rng(bytes(32)), SimClock())
    with pytest.raises(UnknownPseudonym):
        s.checkout_issue(CheckoutHello(bytes(16), bytes(16)))


def test_closed_record_reads_unknown(sold):
    n_i = sold.mtags["mtag:alice"].state.n_i
    with pytest.raises(UnknownPseudonym):
        sold.server.checkout_issue(CheckoutHello(n_i, bytes(16)))


def test_tx_time_quantized(keys):
    s = Server(keys, Rng(bytes(32)), SimClock(1_700_000_059), granularity=60)
    assert s.tx_time() == 1_700_000_040


def test_snapshot_roundtrip(sold, tmp_path):
    path = tmp_path / "store.jsonl"
    store_snapshot(sold.server, path)
    again = store_restore(path, Rng(bytes(32)), SimClock())
    assert again.committed() == sold.server.committed()
    assert again.keys == sold.server.keys
    # the restored server still honours the sold tag
    sold.server = again
    sold.advance(days=3)
    out = sold.aftersales("g1", "alice")
    assert out.status == "Granted"


def test_empty_store_roundtrip(keys, tmp_path):
    s = Server(keys, Rng(bytes(32)), SimClock(), warranty_days=30, granularity=10)
    path = tmp_path / "empty"
    s.snapshot(path)
    again = store_restore(path, Rng(bytes(32)), SimClock())
    assert again.records == {}
    assert (again.warranty_days, again.granularity) == (30, 10)


def _corrupt(path, edit):
    lines = path.read_text().splitlines()
    path.write_text("\n".join(edit(lines)) + "\n")


@pytest.mark.parametrize("edit", [
    lambda ls: ["not json"] + ls[1:],
    lambda ls: ls[:1],
    lambda ls: ls + ls[1:],
    lambda ls: [ls[0].replace("flipflag-store", "other")] + ls[1:],
    lambda ls: ls[:1] + [ls[1].replace('"n_i":"', '"n_i":"00')],
], ids=["header", "missing-record", "extra-record", "format", "width"])
def test_corrupt_store(sold, tmp_path, edit):
    path = tmp_path / "store"
    store_snapshot(sold.server, path)
    _corrupt(path, edit)
    with pytest.raises(CorruptStore):
        store_restore(path, Rng(bytes(32)), SimClock())


def test_tampered_receipt_in_store(sold, tmp_path):
    path = tmp_path / "store"
    store_snapshot(sold.server, path)
    header, rec = path.read_text().splitlines()
    d = json.loads(rec)
    raw = bytearray.fromhex(d["goods"][0]["receipt"])
    raw[15] ^= 1  # price byte
    d["goods"][0]["receipt"] = raw.hex()
    path.write_text(header + "\n" + json.dumps(d) + "\n")
    with pytest.raises(CorruptStore):
        store_restore(path, Rng(bytes(32)), SimClock())


def test_missing_store(tmp_path):
    with pytest.raises(CorruptStore):
        store_restore(tmp_path / "nope", Rng(bytes(32)), SimClock())
