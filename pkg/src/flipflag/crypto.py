"""Deterministic cryptographic primitives used by every entity.

All widths are fixed module constants so the wire codec can lay messages out
at static offsets.  Randomness is never drawn implicitly: every randomized
operation takes an explicit :class:`Rng`.
"""
from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthFailure, DecryptError, IntegrityFailure

H_LEN = 32
K_LEN = 32
NONCE_LEN = 16
SEED_LEN = 32
_EPH_LEN = 32
_AEAD_TAG_LEN = 16
L_T = _EPH_LEN + K_LEN + _AEAD_TAG_LEN
SIG_LEN = 64

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


class Rng:
    """Seedable deterministic byte stream.

    Not a CSPRNG: it exists so whole scenarios replay bit-exactly.  Child
    streams from :meth:`fork` are independent of the parent's consumption.
    """

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("rng seed must be 32 bytes")
        self.seed = bytes(seed)
        self._gen = random.Random(self.seed)

    def next(self, n: int) -> bytes:
        return self._gen.randbytes(n)

    def nonce(self) -> bytes:
        return self.next(NONCE_LEN)

    def fork(self, label: str) -> "Rng":
        return Rng(hashlib.sha256(self.seed + b"/" + label.encode()).digest())


def rng_next(rng: Rng, n: int) -> bytes:
    return rng.next(n)


def hash_fields(fields) -> bytes:
    """SHA-256 over the fields, each prefixed by its 4-byte big-endian length."""
    if not fields:
        raise ValueError("hash_fields needs at least one field")
    h = hashlib.sha256()
    for f in fields:
        h.update(struct.pack(">I", len(f)))
        h.update(f)
    return h.digest()


def h(*fields: bytes) -> bytes:
    return hash_fields(fields)


def mex(secret: bytes, nonce: bytes, n: int) -> bytes:
    """Counter-mode keystream: block i is h(secret, nonce, i as u32)."""
    if n < 0:
        raise ValueError("negative length")
    out = bytearray()
    i = 0
    while len(out) < n:
        out += hash_fields([secret, nonce, struct.pack(">I", i)])
        i += 1
    return bytes(out[:n])


def xor(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError("xor operands differ in length")
    return bytes(x ^ y for x, y in zip(a, b))


def mask(secret: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    return xor(plaintext, mex(secret, nonce, len(plaintext)))


unmask = mask


def pad8(secret: bytes, nonce: bytes) -> bytes:
    """Pad for 8-byte transaction times: leading bytes of h(secret, nonce)."""
    return h(secret, nonce)[:8]


# -- checks ------------------------------------------------------------------
# Every beta / nu comparison funnels through require_integrity.  The flag
# exists only for the negative-control test that proves the tamper suite can
# fail; nothing else may touch it.
INTEGRITY_CHECKS = True


def require_integrity(expected: bytes, actual: bytes, what: str) -> None:
    if INTEGRITY_CHECKS and not hmac.compare_digest(expected, actual):
        raise IntegrityFailure(what)


def require_auth(expected: bytes, actual: bytes, what: str) -> None:
    if not hmac.compare_digest(expected, actual):
        raise AuthFailure(what)


# -- public-key encryption of tag keys -------------------------------------

@dataclass(frozen=True)
class ServerKeyPair:
    pk: bytes
    sk: bytes
    sig_pk: bytes
    sig_sk: bytes

    @classmethod
    def generate(cls, rng: Rng) -> "ServerKeyPair":
        return cls.from_private(rng.next(32), rng.next(32))

    @classmethod
    def from_private(cls, sk: bytes, sig_sk: bytes) -> "ServerKeyPair":
        enc = X25519PrivateKey.from_private_bytes(sk)
        sig = Ed25519PrivateKey.from_private_bytes(sig_sk)
        return cls(
            pk=enc.public_key().public_bytes(_RAW, _RAW_PUB),
            sk=sk,
            sig_pk=sig.public_key().public_bytes(_RAW, _RAW_PUB),
            sig_sk=sig_sk,
        )


def _pke_key(shared: bytes, eph_pub: bytes, pk: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=eph_pub + pk,
        info=b"flipflag tag-key encapsulation",
    ).derive(shared)


_ZERO_NONCE = bytes(12)


def pke_encrypt(pk: bytes, k: bytes, rng: Rng) -> bytes:
    """ECIES over X25519: ephemeral public key || ChaCha20-Poly1305(k)."""
    if len(k) != K_LEN:
        raise ValueError("tag key must be K_LEN bytes")
    eph = X25519PrivateKey.from_private_bytes(rng.next(32))
    eph_pub = eph.public_key().public_bytes(_RAW, _RAW_PUB)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(pk))
    # fresh key per ciphertext, so a fixed AEAD nonce is safe
    ct = ChaCha20Poly1305(_pke_key(shared, eph_pub, pk)).encrypt(_ZERO_NONCE, k, None)
    return eph_pub + ct


def pke_decrypt(sk: bytes, t: bytes) -> bytes:
    if len(t) != L_T:
        raise DecryptError("ciphertext length")
    priv = X25519PrivateKey.from_private_bytes(sk)
    pk = priv.public_key().public_bytes(_RAW, _RAW_PUB)
    eph_pub, ct = t[:_EPH_LEN], t[_EPH_LEN:]
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        return ChaCha20Poly1305(_pke_key(shared, eph_pub, pk)).decrypt(_ZERO_NONCE, ct, None)
    except (InvalidTag, ValueError) as exc:
        raise DecryptError("tag key did not decrypt") from exc


# -- receipt signatures ----------------------------------------------------

def sign_receipt(sig_sk: bytes, body: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(sig_sk).sign(body)


def verify_receipt(sig_pk: bytes, body: bytes, signature: bytes) -> bool:
    if len(signature) != SIG_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(sig_pk).verify(signature, body)
    except (InvalidSignature, ValueError):
        return False
    return True
