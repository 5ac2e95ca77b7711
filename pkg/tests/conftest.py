import hashlib
import struct

import pytest

from flipflag.simnet.scenario import World


def oracle_h(*fields: bytes) -> bytes:
    """Independent re-statement of the length-prefixed field hash."""
    buf = b"".join(struct.pack(">I", len(f)) + f for f in fields)
    return hashlib.sha256(buf).digest()


@pytest.fixture
def world():
    return World()


@pytest.fixture
def shopped():
    """Member card plus two goods, authenticated in cart c1 but not checked out."""
    w = World()
    w.add_mtag("alice")
    w.add_gtag("g1", price=1200, discount=100)
    w.add_gtag("g2", price=800)
    for tag in ("alice", "g1", "g2"):
        assert w.shop("c1", tag).ok
    return w


@pytest.fixture
def sold(shopped):
    assert shopped.checkout("c1").status == "Accepted"
    return shopped


# -- acceptance reporting ------------------------------------------------------
# Each acceptance criterion records one verdict line; the lines are echoed in
# the terminal summary so they survive output capture.
ACCEPTANCE: list[str] = []


def criterion(number: int, title: str, passed: bool, detail: str = "") -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
