"""Tag management center.

The server authenticates tags by decrypting the key they carry, hands out
shopping tokens, pseudonyms and signed receipts, issues transaction times at
checkout and decides after-sales requests.  Anything that depends on whether
a tag accepted a reply is staged and only committed once the reader reports
the exchange complete over the trusted back-end link.
"""
from __future__ import annotations

import enum
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import wire
from .crypto import (
    Rng, ServerKeyPair, h, mask, mex, pad8, pke_decrypt, pke_encrypt,
    require_auth, require_integrity, sign_receipt, unmask, verify_receipt, xor,
)
from .errors import (
    AuthFailure, CorruptStore, DecryptError, NoSession, UnknownPseudonym, UsageError,
)
from .wire import (
    ActivateChallenge, AftersalesMTag, AuthResponse, CheckoutHello,
    DeactivateBroadcast, GTagProof, KcgWrapped, KeyUpdateAck, Provision,
    Receipt, TimeIssue,
)

log = logging.getLogger(__name__)

STORE_FORMAT = "flipflag-store"
STORE_VERSION = 1
DAY = 86400


class SimClock:
    """Injected time source; logic never reads the wall clock."""

    def __init__(self, start: int = 1_700_000_000):
        self.t = start

    def now(self) -> int:
        return self.t

    def advance(self, seconds: int) -> None:
        if seconds < 0:
            raise ValueError("clock only moves forward")
        self.t += seconds


class ServiceDecision(str, enum.Enum):
    GRANTED = "Granted"
    DENIED_EXPIRED = "DeniedExpired"
    DENIED_FORGED = "DeniedForged"


@dataclass(frozen=True)
class GoodsInfo:
    goods_id: str
    price: int
    discount: int = 0


@dataclass
class TransactionRecord:
    n_i: bytes
    k_ci_current: bytes
    w: bytes
    created_at: int
    d_j: int | None = None
    goods: list[tuple[str, Receipt]] = field(default_factory=list)


@dataclass
class CartSession:
    session_id: str
    w: bytes
    member: bytes | None = None  # pseudonym of the member record
    authed_goods: list[str] = field(default_factory=list)


@dataclass
class PendingUpdate:
    k_old: bytes
    k_new: bytes
    t_new: bytes
    gamma2_m: bytes


@dataclass
class _Staged:
    session_id: str
    kind: str
    record: TransactionRecord | None = None
    goods: tuple[str, Receipt] | None = None
    handle: str | None = None


def warranty_decision(receipt: Receipt, now: int, sig_pk: bytes, warranty_days: int) -> ServiceDecision:
    if not verify_receipt(sig_pk, receipt.body(), receipt.signature):
        return ServiceDecision.DENIED_FORGED
    # counted in whole elapsed days; the last day of the period is still covered
    if (now - receipt.tx_time) // DAY > warranty_days:
        return ServiceDecision.DENIED_EXPIRED
    return ServiceDecision.GRANTED


class Server:
    def __init__(self, keys: ServerKeyPair, rng: Rng, clock: SimClock, *,
                 warranty_days: int = 365, granularity: int = 60,
                 shop_serial: int = 0x464C4950464C4147):
        if granularity <= 0:
            raise ValueError("granularity must be positive")
        self.keys = keys
        self.rng = rng
        self.clock = clock
        self.warranty_days = warranty_days
        self.granularity = granularity
        self.shop_serial = shop_serial
        self.records: dict[bytes, TransactionRecord] = {}
        self.sessions: dict[str, CartSession] = {}
        self._staged: dict[int, _Staged] = {}
        self._checkouts: dict[bytes, tuple[int, bytes]] = {}
        self._tickets = itertools.count(1)

    def tx_time(self) -> int:
        return wire.quantize(self.clock.now(), self.granularity)

    def issue_tag_key(self) -> tuple[bytes, bytes]:
        """Key material for a newly manufactured tag; the server keeps no copy."""
        k0 = self.rng.next(32)
        return k0, pke_encrypt(self.keys.pk, k0, self.rng)

    def open_session(self, session_id: str) -> CartSession:
        if session_id not in self.sessions:
            self.sessions[session_id] = CartSession(session_id, self.rng.next(wire.W_LEN))
        return self.sessions[session_id]

    def _authenticate(self, t: bytes, v: bytes, gamma1: bytes) -> bytes:
        try:
            k = pke_decrypt(self.keys.sk, t)
        except DecryptError as exc:
            raise AuthFailure("encrypted key did not decrypt") from exc
        require_auth(v, h(k, gamma1), "challenge response")
        return k

    # shopping --------------------------------------------------------------

    def provision(self, session_id: str, kind: str, resp: AuthResponse, gamma1: bytes,
                  goods: GoodsInfo | None = None, handle: str | None = None
                  ) -> tuple[Provision, int]:
        """Authenticate a tag and build its provisioning reply.

        Returns the reply and a ticket; call :meth:`commit` or :meth:`abort`
        with the ticket once the tag's verdict is known.
        """
        if kind not in ("m", "g"):
            raise UsageError(f"unknown tag kind {kind!r}")
        if kind == "g" and goods is None:
            raise UsageError("g-type provisioning needs goods info")
        session = self.sessions.get(session_id)
        if session is None:
            raise NoSession(f"no cart session {session_id!r}")
        if kind == "g" and session.member is None:
            raise NoSession("a member card must log in before goods are scanned")
        k = self._authenticate(resp.t, resp.v, gamma1)
        gamma2 = resp.gamma2
        k_new = h(k)
        t_new = pke_encrypt(self.keys.pk, k_new, self.rng)
        w = session.w
        alpha1 = mask(k, gamma2, wire.pack_wkt(w, k_new, t_new))
        beta1 = h(w, k_new, t_new, gamma2)
        staged = _Staged(session_id, kind, handle=handle)
        if kind == "m":
            n_i = self.rng.next(wire.N_LEN)
            while n_i in self.records:
                n_i = self.rng.next(wire.N_LEN)
            staged.record = TransactionRecord(n_i, k_new, w, created_at=self.tx_time())
            alpha2 = mask(w, gamma2, wire.pack_pseudonym_slot(n_i))
            beta2 = h(n_i, gamma2)
        else:
            body = Receipt(self.shop_serial, goods.price, self.tx_time(), goods.discount)
            receipt = Receipt(body.shop_serial, body.price, body.tx_time, body.discount,
                              sign_receipt(self.keys.sig_sk, body.body()))
            staged.goods = (goods.goods_id, receipt)
            v_g = receipt.to_bytes()
            alpha2 = mask(w, gamma2, v_g)
            beta2 = h(v_g, gamma2)
        ticket = next(self._tickets)
        self._staged[ticket] = staged
        return Provision(alpha1, beta1, alpha2, beta2), ticket

    def commit(self, ticket: int) -> None:
        st = self._staged.pop(ticket)
        session = self.sessions[st.session_id]
        if st.kind == "m":
            self.records[st.record.n_i] = st.record
            session.member = st.record.n_i
        else:
            rec = self.records.get(session.member)
            if rec is None:
                raise NoSession("member record vanished")
            rec.goods.append(st.goods)
            session.authed_goods.append(st.handle or st.goods[0])

    def abort(self, ticket: int) -> None:
        self._staged.pop(ticket, None)

    # purchasing ------------------------------------------------------------

    def _open_record(self, n_i: bytes) -> TransactionRecord:
        rec = self.records.get(n_i)
        if rec is None or rec.d_j is not None:
            raise UnknownPseudonym("pseudonym unknown or already checked out")
        return rec

    def checkout_issue(self, hello: CheckoutHello) -> TimeIssue:
        rec = self._open_record(hello.n_i)
        d_j = self.tx_time()
        gamma2 = self.rng.nonce()
        self._checkouts[hello.n_i] = (d_j, gamma2)
        return TimeIssue(
            alpha1=xor(wire.u64(d_j), pad8(rec.k_ci_current, hello.gamma1)),
            beta1=h(wire.u64(d_j), hello.gamma1),
            gamma2=gamma2,
        )

    def checkout_unwrap(self, n_i: bytes, wrapped: KcgWrapped) -> DeactivateBroadcast:
        rec = self._open_record(n_i)
        if n_i not in self._checkouts:
            raise UnknownPseudonym("no checkout in flight for pseudonym")
        _, gamma2 = self._checkouts[n_i]
        plain = unmask(rec.k_ci_current, gamma2, wrapped.alpha2)
        delta, nu = plain[:wire.W_LEN], plain[wire.W_LEN:]
        require_integrity(wrapped.beta2, h(delta, nu, gamma2), "wrapped beta2")
        # K_cg stays opaque here: the server never holds the card's seed
        return DeactivateBroadcast(delta=delta, nu=nu, gamma2=gamma2)

    def checkout_complete(self, n_i: bytes) -> int:
        rec = self._open_record(n_i)
        d_j, _ = self._checkouts.pop(n_i)
        rec.d_j = d_j
        return d_j

    # after-sales -----------------------------------------------------------

    def aftersales_mtag(self, msg: AftersalesMTag, gamma1: bytes
                        ) -> tuple[ActivateChallenge, PendingUpdate]:
        k = self._authenticate(msg.t, msg.v1, gamma1)
        k_new = h(k)
        pending = PendingUpdate(k, k_new, pke_encrypt(self.keys.pk, k_new, self.rng), msg.gamma2)
        delta = xor(msg.alpha1, mex(k, gamma1, 32))
        require_integrity(msg.beta1, h(delta, gamma1), "after-sales beta1")
        return ActivateChallenge(delta=delta), pending

    def aftersales_gtag(self, proof: GTagProof, gamma1: bytes, pending: PendingUpdate
                        ) -> tuple[ServiceDecision, KeyUpdateAck]:
        self._authenticate(proof.t, proof.v2, gamma1)
        decision = warranty_decision(wire.parse_receipt(proof.receipt), self.clock.now(),
                                     self.keys.sig_pk, self.warranty_days)
        p = pending
        ack = KeyUpdateAck(
            alpha2=mask(p.k_old, p.gamma2_m, wire.pack_kt(p.k_new, p.t_new)),
            beta2=h(p.k_new, p.t_new, p.gamma2_m),
        )
        # The m-tag's key needs no server-side record: it travels inside T_ci.
        log.debug("after-sales decision %s", decision.value)
        return decision, ack

    def committed(self) -> tuple:
        return tuple(sorted(
            (n, r.k_ci_current, r.w, r.d_j, tuple(r.goods)) for n, r in self.records.items()))

    # persistence -----------------------------------------------------------

    def snapshot(self, path) -> None:
        store_snapshot(self, path)


def _record_to_json(r: TransactionRecord) -> dict:
    return {
        "type": "record",
        "n_i": r.n_i.hex(),
        "k_ci_current": r.k_ci_current.hex(),
        "w": r.w.hex(),
        "d_j": r.d_j,
        "created_at": r.created_at,
        "goods": [{"goods_id": g, "receipt": rc.to_bytes().hex()} for g, rc in r.goods],
    }


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def store_snapshot(server: Server, path) -> None:
    """Header line (format, version, keys, config, record count), then one record per line."""
    k = server.keys
    header = {
        "format": STORE_FORMAT,
        "version": STORE_VERSION,
        "keys": {"sk": k.sk.hex(), "sig_sk": k.sig_sk.hex()},
        "config": {"warranty_days": server.warranty_days, "granularity": server.granularity,
                   "shop_serial": server.shop_serial},
        "records": len(server.records),
    }
    lines = [_dumps(header)]
    lines += [_dumps(_record_to_json(r)) for _, r in sorted(server.records.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def _hex(d: dict, key: str, width: int | None = None) -> bytes:
    b = bytes.fromhex(d[key])
    if width is not None and len(b) != width:
        raise ValueError(f"{key} has wrong width")
    return b


def store_restore(path, rng: Rng, clock: SimClock) -> Server:
    try:
        lines = Path(path).read_text().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptStore(f"cannot read store: {exc}") from exc
    try:
        header = json.loads(lines[0])
        if header.get("format") != STORE_FORMAT or header.get("version") != STORE_VERSION:
            raise CorruptStore("unrecognised store header")
        keys = ServerKeyPair.from_private(_hex(header["keys"], "sk", 32),
                                          _hex(header["keys"], "sig_sk", 32))
        cfg = header["config"]
        server = Server(keys, rng, clock, warranty_days=int(cfg["warranty_days"]),
                        granularity=int(cfg["granularity"]), shop_serial=int(cfg["shop_serial"]))
        body = [ln for ln in lines[1:] if ln.strip()]
        if len(body) != header["records"]:
            raise CorruptStore(f"expected {header['records']} records, found {len(body)}")
        for ln in body:
            d = json.loads(ln)
            if d.get("type") != "record":
                raise CorruptStore("unexpected line type")
            goods = [(str(g["goods_id"]), wire.parse_receipt(bytes.fromhex(g["receipt"])))
                     for g in d["goods"]]
            for _, rc in goods:
                if not verify_receipt(keys.sig_pk, rc.body(), rc.signature):
                    raise CorruptStore("stored receipt fails signature check")
            d_j = d["d_j"]
            rec = TransactionRecord(
                n_i=_hex(d, "n_i", wire.N_LEN),
                k_ci_current=_hex(d, "k_ci_current", 32),
                w=_hex(d, "w", wire.W_LEN),
                created_at=int(d["created_at"]),
                d_j=None if d_j is None else int(d_j),
                goods=goods,
            )
            if rec.n_i in server.records:
                raise CorruptStore("duplicate pseudonym")
            server.records[rec.n_i] = rec
    except CorruptStore:
        raise
    except Exception as exc:  # any parse problem means the file is unusable
        raise CorruptStore(f"cannot parse store: {exc}") from exc
    return server
