import pytest

from flipflag import wire
from flipflag.crypto import h, xor
from flipflag.errors import UsageError
from flipflag.simnet.channel import FlipBit, Rule
from flipflag.simnet.scenario import World


def test_fresh_member_accepted(world):
    world.add_mtag("alice")
    out = world.shop("c1", "alice")
    assert out.ok and out.status == "Accepted"
    assert world.server.sessions["reader:c1"].member == world.mtags["mtag:alice"].state.n_i


def test_gtag_needs_goods_info(world):
    world.add_mtag("alice")
    world.shop("c1", "alice")
    world.add_gtag("g")
    reader = world.readers["reader:c1"]
    with pytest.raises(UsageError):
        reader.run_shopping_auth(world.gtags["gtag:g"], "gtag:g", None)


def test_reader_outside_cart(world):
    world.add_mtag("alice")
    with pytest.raises(UsageError):
        world.desk().run_shopping_auth(world.mtags["mtag:alice"], "mtag:alice")


def test_three_goods_share_time_key():
    w = World()
    w.add_mtag("alice")
    for g in ("a", "b", "c"):
        w.add_gtag(g)
    for t in ("alice", "a", "b", "c"):
        w.shop("c1", t)
    out = w.checkout("c1")
    assert out.status == "Accepted" and len(out.detail["deactivated"]) == 3
    states = [w.gtags[f"gtag:{g}"].state for g in "abc"]
    assert len({(s.k_cg, s.d_j) for s in states}) == 1
    m = w.mtags["mtag:alice"].state
    assert states[0].k_cg == h(m.seed_e, wire.u64(out.detail["d_j"]))


def test_empty_cart_checkout(world):
    world.add_mtag("alice")
    world.shop("c1", "alice")
    out = world.checkout("c1")
    assert out.status == "Accepted" and out.detail["deactivated"] == {}


def test_beta_flip_surfaces_integrity_failure(shopped):
    # flip a bit inside beta2 of KcgWrapped: the server must refuse it
    lo, _ = wire.KcgWrapped.offsets()["beta2"]
    shopped.policy.add(Rule(FlipBit(8 * lo + 3), kind="KcgWrapped"))
    out = shopped.checkout("c1")
    assert out.errors == [("server", "IntegrityFailure")]
    assert all(shopped.gtags[g].state.active for g in ("gtag:g1", "gtag:g2"))


def test_dropped_ack_leaves_stale_but_working_key(sold):
    from flipflag.simnet.channel import Drop
    m = sold.mtags["mtag:alice"]
    k = m.state.k_ci
    sold.policy.add(Rule(Drop(), kind="KeyUpdateAck"))
    out = sold.aftersales("g1", "alice")
    assert out.detail["activated"] and out.detail["decision"] == "Granted"
    assert not out.detail["key_updated"] and m.state.k_ci == k
    assert sold.shop("c2", "alice").ok


def test_dropped_provision_then_retry(world):
    from flipflag.simnet.channel import Drop
    world.add_mtag("alice")
    k = world.mtags["mtag:alice"].state.k_ci
    world.policy.add(Rule(Drop(), kind="Provision"))
    lost = world.shop("c1", "alice")
    assert lost.status == "ChannelLoss"
    assert world.mtags["mtag:alice"].state.k_ci == k
    assert world.shop("c1", "alice").ok


def test_exchange_ids(sold):
    exchanges = {e.exchange for e in sold.transcript.events}
    assert "reader:c1/shop/1" in exchanges and "reader:c1/checkout/4" in exchanges
