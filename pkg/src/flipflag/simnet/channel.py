"""Air channel between readers and tags, with an in-path adversary.

Every frame crossing the channel is appended to a :class:`Transcript`.  The
reader-server back end never touches this module: it is a trusted call.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..crypto import Rng
from ..errors import UsageError
from ..wire import kind_name

GENESIS = bytes(32)


@dataclass(frozen=True)
class Event:
    seq: int
    time: int
    sender: str
    receiver: str
    kind: str
    hex: str
    action: str
    delivered: str | None
    exchange: str
    annotation: str = ""
    chain: str = ""

    def body(self) -> dict:
        d = asdict(self)
        d.pop("chain")
        return d


def _canon(d: dict) -> bytes:
    return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()


def chain_next(prev: bytes, body: dict) -> bytes:
    return hashlib.sha256(prev + _canon(body)).digest()


class Transcript:
    """Append-only event log; each event carries a running hash of its predecessors."""

    def __init__(self):
        self.events: list[Event] = []
        self._head = GENESIS

    def append(self, **kw) -> Event:
        ev = Event(seq=len(self.events), **kw)
        self._head = chain_next(self._head, ev.body())
        ev = Event(**{**ev.body(), "chain": self._head.hex()})
        self.events.append(ev)
        return ev

    def to_jsonl(self) -> str:
        return "".join(_canon(asdict(e)).decode() + "\n" for e in self.events)

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    def frames(self):
        """All byte strings that were ever on the air (sent and delivered)."""
        for e in self.events:
            yield bytes.fromhex(e.hex)
            if e.delivered is not None:
                yield bytes.fromhex(e.delivered)

    def by_sender(self, sender: str) -> list[Event]:
        return [e for e in self.events if e.sender == sender]


def scan_for_secrets(transcript: Transcript, secrets) -> list[tuple[int, str]]:
    """Return (seq, label) for every frame containing a secret as a substring."""
    hits = []
    secrets = list(secrets)
    for e in transcript.events:
        blobs = [bytes.fromhex(e.hex)]
        if e.delivered is not None:
            blobs.append(bytes.fromhex(e.delivered))
        for label, s in secrets:
            if any(s in b for b in blobs):
                hits.append((e.seq, label))
    return hits


# -- adversary ---------------------------------------------------------------

@dataclass(frozen=True)
class Pass:
    name = "pass"


@dataclass(frozen=True)
class Drop:
    name = "drop"


@dataclass(frozen=True)
class Record:
    drop: bool = False  # eavesdrop and jam in one move
    name = "record"


@dataclass(frozen=True)
class Replay:
    index: int = 0
    name = "replay"


@dataclass(frozen=True)
class FlipBit:
    offset: int  # bit offset into the frame, MSB of byte 0 is bit 0
    name = "flip_bit"


@dataclass(frozen=True)
class Inject:
    data: bytes
    name = "inject"


def flip_bit(data: bytes, offset: int) -> bytes:
    b = bytearray(data)
    b[offset // 8] ^= 0x80 >> (offset % 8)
    return bytes(b)


@dataclass
class Rule:
    """Apply ``action`` to frames matching every given predicate.

    ``nth`` selects the n-th match (0-based) only; ``times`` caps how many
    matches are acted on (None means unlimited).
    """

    action: object
    kind: str | None = None
    direction: str | None = None  # "to_tag" | "from_tag"
    sender: str | None = None
    receiver: str | None = None
    nth: int | None = None
    times: int | None = 1
    seen: int = field(default=0, compare=False)
    fired: int = field(default=0, compare=False)

    def matches(self, kind: str, direction: str, sender: str, receiver: str) -> bool:
        return ((self.kind is None or self.kind == kind)
                and (self.direction is None or self.direction == direction)
                and (self.sender is None or self.sender == sender)
                and (self.receiver is None or self.receiver == receiver))


class AdversaryPolicy:
    def __init__(self, rules=(), rng: Rng | None = None):
        self.rules: list[Rule] = list(rules)
        self.rng = rng
        self.recorded: list[bytes] = []

    def add(self, rule: Rule) -> Rule:
        self.rules.append(rule)
        return rule

    def clear(self) -> None:
        self.rules.clear()

    def decide(self, kind: str, direction: str, sender: str, receiver: str):
        for rule in self.rules:
            if not rule.matches(kind, direction, sender, receiver):
                continue
            idx = rule.seen
            rule.seen += 1
            if rule.nth is not None and idx != rule.nth:
                continue
            if rule.times is not None and rule.fired >= rule.times:
                continue
            rule.fired += 1
            return rule.action
        return Pass()


def _direction(sender: str) -> str:
    return "to_tag" if sender.startswith(("reader:", "desk:")) else "from_tag"


class Channel:
    def __init__(self, transcript: Transcript, clock, policy: AdversaryPolicy):
        self.transcript = transcript
        self.clock = clock
        self.policy = policy

    def send(self, sender: str, receiver: str, data: bytes, exchange: str = "",
             annotation: str = "") -> bytes | None:
        """Carry one frame; returns the bytes the receiver sees, or None if lost."""
        kind = kind_name(data)
        action = self.policy.decide(kind, _direction(sender), sender, receiver)
        out: bytes | None = data
        if isinstance(action, Drop):
            out = None
        elif isinstance(action, Record):
            self.policy.recorded.append(data)
            if action.drop:
                out = None
        elif isinstance(action, Replay):
            if not -len(self.policy.recorded) <= action.index < len(self.policy.recorded):
                raise UsageError(f"replay index {action.index}: nothing recorded there")
            out = self.policy.recorded[action.index]
        elif isinstance(action, FlipBit):
            out = flip_bit(data, action.offset % (8 * len(data)))
        elif isinstance(action, Inject):
            out = action.data
        self.transcript.append(
            time=self.clock.now(), sender=sender, receiver=receiver, kind=kind,
            hex=data.hex(), action=action.name,
            delivered=None if out == data else (out.hex() if out is not None else None),
            exchange=exchange, annotation=annotation,
        )
        return out
