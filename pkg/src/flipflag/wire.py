"""Fixed-width binary codec for every air-interface message.

Each message is one kind byte followed by its fields at static offsets; the
total length is fully determined by the kind byte.  Field roles drive two
audits: no variant may carry a bare secret, and the tracking probe ignores
fields declared as nonces.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, fields as dc_fields
from typing import ClassVar

from .crypto import H_LEN, K_LEN, L_T, NONCE_LEN, SIG_LEN
from .errors import MalformedMessage

W_LEN = 40
N_LEN = 16
D_LEN = 8
KCG_LEN = 32
RECEIPT_BODY_LEN = 32
RECEIPT_LEN = RECEIPT_BODY_LEN + SIG_LEN
WKT_LEN = W_LEN + K_LEN + L_T

assert W_LEN == KCG_LEN + D_LEN

# Roles a wire field may have.  "secret" is deliberately absent.
ROLES = frozenset({"nonce", "digest", "masked", "ciphertext", "pseudonym", "time", "receipt"})


def quantize(seconds: int, granularity: int) -> int:
    return seconds - seconds % granularity


def u64(x: int) -> bytes:
    return struct.pack(">Q", x)


def from_u64(b: bytes) -> int:
    return struct.unpack(">Q", b)[0]


@dataclass(frozen=True)
class Receipt:
    shop_serial: int
    price: int
    tx_time: int
    discount: int
    signature: bytes = bytes(SIG_LEN)

    def body(self) -> bytes:
        return receipt_body(self)

    def to_bytes(self) -> bytes:
        return self.body() + self.signature


def receipt_body(r: Receipt) -> bytes:
    return struct.pack(">QQQQ", r.shop_serial, r.price, r.tx_time, r.discount)


def parse_receipt(data: bytes) -> Receipt:
    if len(data) != RECEIPT_LEN:
        raise MalformedMessage(f"receipt must be {RECEIPT_LEN} bytes, got {len(data)}")
    serial, price, tx, disc = struct.unpack(">QQQQ", data[:RECEIPT_BODY_LEN])
    return Receipt(serial, price, tx, disc, bytes(data[RECEIPT_BODY_LEN:]))


# -- composite payloads --------------------------------------------------------

def pack_wkt(w: bytes, k: bytes, t: bytes) -> bytes:
    if (len(w), len(k), len(t)) != (W_LEN, K_LEN, L_T):
        raise MalformedMessage("w/k/t widths")
    return w + k + t


def unpack_wkt(data: bytes) -> tuple[bytes, bytes, bytes]:
    if len(data) != WKT_LEN:
        raise MalformedMessage(f"w||K||T must be {WKT_LEN} bytes")
    return data[:W_LEN], data[W_LEN:W_LEN + K_LEN], data[W_LEN + K_LEN:]


def pack_kcg_dj(k_cg: bytes, d_j: int) -> bytes:
    if len(k_cg) != KCG_LEN:
        raise MalformedMessage("K_cg width")
    return k_cg + u64(d_j)


def unpack_kcg_dj(data: bytes) -> tuple[bytes, int]:
    if len(data) != W_LEN:
        raise MalformedMessage(f"K_cg||D_j must be {W_LEN} bytes")
    return data[:KCG_LEN], from_u64(data[KCG_LEN:])


def pack_kt(k: bytes, t: bytes) -> bytes:
    if (len(k), len(t)) != (K_LEN, L_T):
        raise MalformedMessage("k/t widths")
    return k + t


def unpack_kt(data: bytes) -> tuple[bytes, bytes]:
    if len(data) != K_LEN + L_T:
        raise MalformedMessage("K||T width")
    return data[:K_LEN], data[K_LEN:]


def pack_pseudonym_slot(n_i: bytes) -> bytes:
    """The provisioning slot is receipt-sized; m-type tags get n_i zero-padded."""
    if len(n_i) != N_LEN:
        raise MalformedMessage("pseudonym width")
    return n_i + bytes(RECEIPT_LEN - N_LEN)


def unpack_pseudonym_slot(data: bytes) -> tuple[bytes, bytes]:
    """Return (n_i, padding); callers must check the padding is zero."""
    if len(data) != RECEIPT_LEN:
        raise MalformedMessage("provision slot width")
    return data[:N_LEN], data[N_LEN:]


# -- messages ------------------------------------------------------------------

_REGISTRY: dict[int, type["Message"]] = {}


class Message:
    KIND: ClassVar[int]
    # (name, width, role); width-8 "time" fields are u64 ints, the rest bytes
    LAYOUT: ClassVar[tuple[tuple[str, int, str], ...]]

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.KIND in _REGISTRY:
            raise TypeError(f"duplicate kind {cls.KIND:#04x}")
        _REGISTRY[cls.KIND] = cls

    @classmethod
    def wire_length(cls) -> int:
        return 1 + sum(width for _, width, _ in cls.LAYOUT)

    @classmethod
    def offsets(cls) -> dict[str, tuple[int, int]]:
        out, pos = {}, 1
        for name, width, _ in cls.LAYOUT:
            out[name] = (pos, pos + width)
            pos += width
        return out

    def __post_init__(self):
        for name, width, role in self.LAYOUT:
            v = getattr(self, name)
            if role == "time":
                if not isinstance(v, int) or not 0 <= v < 2 ** 64:
                    raise MalformedMessage(f"{type(self).__name__}.{name} must be a u64")
            elif not isinstance(v, bytes) or len(v) != width:
                raise MalformedMessage(f"{type(self).__name__}.{name} must be {width} bytes")

    def field_bytes(self) -> dict[str, bytes]:
        out = {}
        for name, _, role in self.LAYOUT:
            v = getattr(self, name)
            out[name] = u64(v) if role == "time" else v
        return out


def encode(m: Message) -> bytes:
    return bytes([m.KIND]) + b"".join(m.field_bytes().values())


def decode(data: bytes, expect: type[Message] | None = None) -> Message:
    if not data:
        raise MalformedMessage("empty message")
    cls = _REGISTRY.get(data[0])
    if cls is None:
        raise MalformedMessage(f"unknown kind byte {data[0]:#04x}")
    if expect is not None and cls is not expect:
        raise MalformedMessage(f"expected {expect.__name__}, got {cls.__name__}")
    if len(data) != cls.wire_length():
        raise MalformedMessage(
            f"{cls.__name__} must be {cls.wire_length()} bytes, got {len(data)}")
    kwargs, pos = {}, 1
    for name, width, role in cls.LAYOUT:
        chunk = bytes(data[pos:pos + width])
        kwargs[name] = from_u64(chunk) if role == "time" else chunk
        pos += width
    return cls(**kwargs)


def kind_name(data: bytes) -> str:
    cls = _REGISTRY.get(data[0]) if data else None
    return cls.__name__ if cls else "Unknown"


def message_types() -> list[type[Message]]:
    return [_REGISTRY[k] for k in sorted(_REGISTRY)]


@dataclass(frozen=True)
class Challenge(Message):
    KIND = 0x01
    LAYOUT = (("gamma1", NONCE_LEN, "nonce"),)
    gamma1: bytes


@dataclass(frozen=True)
class AuthResponse(Message):
    KIND = 0x02
    LAYOUT = (("t", L_T, "ciphertext"), ("v", H_LEN, "digest"), ("gamma2", NONCE_LEN, "nonce"))
    t: bytes
    v: bytes
    gamma2: bytes


@dataclass(frozen=True)
class Provision(Message):
    KIND = 0x03
    LAYOUT = (("alpha1", WKT_LEN, "masked"), ("beta1", H_LEN, "digest"),
              ("alpha2", RECEIPT_LEN, "masked"), ("beta2", H_LEN, "digest"))
    alpha1: bytes
    beta1: bytes
    alpha2: bytes
    beta2: bytes


@dataclass(frozen=True)
class CheckoutHello(Message):
    KIND = 0x04
    LAYOUT = (("n_i", N_LEN, "pseudonym"), ("gamma1", NONCE_LEN, "nonce"))
    n_i: bytes
    gamma1: bytes


@dataclass(frozen=True)
class TimeIssue(Message):
    KIND = 0x05
    LAYOUT = (("alpha1", D_LEN, "masked"), ("beta1", H_LEN, "digest"), ("gamma2", NONCE_LEN, "nonce"))
    alpha1: bytes
    beta1: bytes
    gamma2: bytes


@dataclass(frozen=True)
class KcgWrapped(Message):
    KIND = 0x06
    LAYOUT = (("alpha2", W_LEN + H_LEN, "masked"), ("beta2", H_LEN, "digest"))
    alpha2: bytes
    beta2: bytes


@dataclass(frozen=True)
class DeactivateBroadcast(Message):
    KIND = 0x07
    LAYOUT = (("delta", W_LEN, "masked"), ("nu", H_LEN, "digest"), ("gamma2", NONCE_LEN, "nonce"))
    delta: bytes
    nu: bytes
    gamma2: bytes


@dataclass(frozen=True)
class InactiveReply(Message):
    KIND = 0x08
    LAYOUT = (("d_j", D_LEN, "time"), ("gamma1", NONCE_LEN, "nonce"))
    d_j: int
    gamma1: bytes


@dataclass(frozen=True)
class AftersalesMTag(Message):
    KIND = 0x09
    LAYOUT = (("t", L_T, "ciphertext"), ("v1", H_LEN, "digest"), ("alpha1", H_LEN, "masked"),
              ("beta1", H_LEN, "digest"), ("gamma2", NONCE_LEN, "nonce"))
    t: bytes
    v1: bytes
    alpha1: bytes
    beta1: bytes
    gamma2: bytes


@dataclass(frozen=True)
class ActivateChallenge(Message):
    KIND = 0x0A
    LAYOUT = (("delta", H_LEN, "digest"),)
    delta: bytes


@dataclass(frozen=True)
class GTagProof(Message):
    KIND = 0x0B
    LAYOUT = (("t", L_T, "ciphertext"), ("v2", H_LEN, "digest"), ("receipt", RECEIPT_LEN, "receipt"))
    t: bytes
    v2: bytes
    receipt: bytes


@dataclass(frozen=True)
class KeyUpdateAck(Message):
    KIND = 0x0C
    LAYOUT = (("alpha2", K_LEN + L_T, "masked"), ("beta2", H_LEN, "digest"))
    alpha2: bytes
    beta2: bytes


def _check_layouts():
    for cls in message_types():
        names = [f.name for f in dc_fields(cls)]
        if names != [n for n, _, _ in cls.LAYOUT]:
            raise TypeError(f"{cls.__name__} layout does not match its fields")
        for _, width, role in cls.LAYOUT:
            if role not in ROLES or (role == "time" and width != D_LEN):
                raise TypeError(f"{cls.__name__} has a bad field role")


_check_layouts()
