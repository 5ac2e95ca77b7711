import pytest

from flipflag import crypto
from flipflag.simnet import attacks


def test_replay_suite():
    rep = attacks.attack_replay(trials=3)
    assert rep.passed, rep.to_dict()
    names = [c.name for c in rep.checks]
    assert any("identical-nonce" in n for n in names)


def test_tamper_small():
    rep = attacks.attack_tamper(flips=4)
    assert rep.passed, [c for c in rep.checks if not c.passed]
    assert len(rep.checks) == 13


def test_tamper_negative_control(monkeypatch):
    # with integrity checks off, bit flips in masked fields must slip through
    monkeypatch.setattr(crypto, "INTEGRITY_CHECKS", False)
    rep = attacks.attack_tamper(flips=8)
    assert not rep.passed
    failing = {c.name.split(":")[0] for c in rep.checks if not c.passed}
    assert "Provision" in failing


def test_track_suite():
    rep = attacks.attack_track(sessions=3)
    assert rep.passed, rep.to_dict()


def test_desync_suite():
    rep = attacks.attack_desync(trials=3)
    assert rep.passed, rep.to_dict()


def test_trial_seeds_distinct():
    seeds = attacks.trial_seeds(b"\x00" * 32, 50)
    assert len(set(seeds)) == 50 and all(len(s) == 32 for s in seeds)


def test_tamper_runs_cover_every_kind():
    kinds = {r.kind for r in attacks.tamper_runs(flips=1)}
    assert len(kinds) == 12


@pytest.mark.parametrize("name", sorted(attacks.ATTACKS))
def test_reports_serialise(name):
    kw = {"tamper": {"flips": 1}, "track": {"sessions": 2}}.get(name, {"trials": 1})
    d = attacks.ATTACKS[name](**kw).to_dict()
    assert d["name"] == name and d["passed"] is True
