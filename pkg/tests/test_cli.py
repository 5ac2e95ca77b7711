import json
import subprocess
import sys

import pytest

from flipflag import cli, crypto
from flipflag.simnet.scenario import DEFAULT_SEED


def run(*argv, capsys=None):
    code = cli.main(list(argv))
    out = capsys.readouterr() if capsys else None
    return code, out


def test_demo_default(capsys, tmp_path):
    t = tmp_path / "t.jsonl"
    code, out = run("demo", "--transcript", str(t), capsys=capsys)
    assert code == 0
    assert "phase 3" in out.out and "Granted" in out.out
    assert len(t.read_text().splitlines()) == 22


def test_demo_json(capsys):
    code, out = run("demo", "--json", capsys=capsys)
    data = json.loads(out.out)
    assert code == 0 and data["nominal"] is True
    assert data["outcomes"][-1]["decision"] == "Granted"


def test_demo_expired_warranty(capsys):
    code, out = run("demo", "--warranty", "0", capsys=capsys)
    assert code == 1
    assert "DeniedExpired" in out.out


def test_demo_corrupt_store(capsys, tmp_path):
    store = tmp_path / "store"
    store.write_text("{}\n")
    code, out = run("demo", "--store", str(store), capsys=capsys)
    assert code == 2
    assert "CorruptStore" in out.err


def test_demo_store_roundtrip(capsys, tmp_path):
    store = tmp_path / "store"
    assert run("demo", "--store", str(store), capsys=capsys)[0] == 0
    assert run("demo", "--store", str(store), capsys=capsys)[0] == 0
    code, out = run("store", "inspect", str(store), "--json", capsys=capsys)
    assert code == 0
    assert len(json.loads(out.out)["records"]) == 2


def test_seed_precedence(monkeypatch):
    flag = bytes.fromhex("ab" * 32)
    monkeypatch.setenv(cli.SEED_ENV, "cd" * 32)
    assert cli.resolve_seed(flag) == flag
    assert cli.resolve_seed(None) == bytes.fromhex("cd" * 32)
    monkeypatch.delenv(cli.SEED_ENV)
    assert cli.resolve_seed(None) == DEFAULT_SEED


def test_seed_changes_transcript(capsys):
    run("demo", "--json", capsys=capsys)
    _, a = run("demo", "--json", capsys=capsys)
    _, b = run("demo", "--json", "--seed", "01" * 32, capsys=capsys)
    assert json.loads(a.out)["transcript_digest"] != json.loads(b.out)["transcript_digest"]


def test_bad_env_seed(monkeypatch, capsys):
    monkeypatch.setenv(cli.SEED_ENV, "xyz")
    assert run("demo", capsys=capsys)[0] == 64


@pytest.mark.parametrize("argv", [
    ["attack", "bogus"],
    ["demo", "--seed", "abcd"],
    ["nonsense"],
    [],
])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 64


def test_attack_single(capsys):
    code, out = run("attack", "desync", "--trials", "2", capsys=capsys)
    assert code == 0
    assert "PASS" in out.out and "FAIL" not in out.out.split("\n", 1)[1]


def test_attack_negative_control(capsys, monkeypatch):
    monkeypatch.setattr(crypto, "INTEGRITY_CHECKS", False)
    code, out = run("attack", "tamper", "--trials", "4", capsys=capsys)
    assert code == 1
    assert "FAIL" in out.out


def test_transcript_verify(capsys, tmp_path):
    t, s = tmp_path / "t.jsonl", tmp_path / "s.json"
    run("demo", "--transcript", str(t), "--secrets-out", str(s), capsys=capsys)
    assert run("transcript", "verify", str(t), "--secrets", str(s), capsys=capsys)[0] == 0

    lines = t.read_text().splitlines()
    ev = json.loads(lines[5])
    ev["hex"] = ("f" if ev["hex"][0] != "f" else "e") + ev["hex"][1:]
    lines[5] = json.dumps(ev)
    t.write_text("\n".join(lines) + "\n")
    code, out = run("transcript", "verify", str(t), capsys=capsys)
    assert code == 1
    assert "seq=5" in out.out


def test_transcript_verify_wrong_secrets(capsys, tmp_path):
    t, s = tmp_path / "t.jsonl", tmp_path / "s.json"
    run("demo", "--transcript", str(t), "--secrets-out", str(s), capsys=capsys)
    sec = json.loads(s.read_text())
    sec["server_sk"] = "33" * 32
    s.write_text(json.dumps(sec))
    code, out = run("transcript", "verify", str(t), "--secrets", str(s), capsys=capsys)
    assert code == 1
    assert "derivation mismatch" in out.out


def test_transcript_verify_missing_file(capsys, tmp_path):
    assert run("transcript", "verify", str(tmp_path / "nope"), capsys=capsys)[0] == 2


def test_run_script(capsys, tmp_path):
    script = tmp_path / "s.txt"
    script.write_text("mtag name=a\ngtag name=g\nshop cart=c tag=a\nshop cart=c tag=g\n"
                      "checkout cart=c\n")
    assert run("run", str(script), capsys=capsys)[0] == 0
    script.write_text("mtag name=a\nadversary action=drop kind=Provision\nshop cart=c tag=a\n")
    assert run("run", str(script), capsys=capsys)[0] == 1
    script.write_text("launch rockets=yes\n")
    code, out = run("run", str(script), capsys=capsys)
    assert code == 64 and "line 1" in out.err
    assert run("run", str(tmp_path / "missing"), capsys=capsys)[0] == 2


def test_module_entrypoint():
    proc = subprocess.run([sys.executable, "-m", "flipflag", "--help"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    for word in ("demo", "attack", "transcript", "store"):
        assert word in proc.stdout
