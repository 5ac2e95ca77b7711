"""Offline transcript verification.

Structural checks (ordering, hash chain, wire decodability) need nothing but
the file.  Given the server's private key and the cards' seeds, every
challenge response, mask and integrity value is re-derived from first
principles and compared with what was on the air.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import wire
from .crypto import h, mex, pad8, pke_decrypt, unmask, verify_receipt, xor
from .errors import DecryptError, MalformedMessage
from .simnet.channel import GENESIS, chain_next

EVENT_FIELDS = ("seq", "time", "sender", "receiver", "kind", "hex", "action",
                "delivered", "exchange", "annotation", "chain")
_CLEAN_ACTIONS = ("pass", "record")


@dataclass(frozen=True)
class Issue:
    seq: int
    message: str

    def __str__(self):
        return f"seq={self.seq}: {self.message}"


def load_events(path) -> list[dict]:
    """Raises OSError / ValueError on unreadable files."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno + 1} is not JSON: {exc}") from exc
    return out


def check_structure(events: list[dict]) -> tuple[list[Issue], list[tuple[dict, wire.Message]]]:
    issues: list[Issue] = []
    decoded = []
    head = GENESIS
    last_time = None
    for i, raw in enumerate(events):
        seq = raw.get("seq", i) if isinstance(raw, dict) else i
        if not isinstance(raw, dict) or set(raw) != set(EVENT_FIELDS):
            issues.append(Issue(seq, "event does not have the expected fields"))
            continue
        if raw["seq"] != i:
            issues.append(Issue(seq, f"out of order: expected seq {i}"))
        if last_time is not None and raw["time"] < last_time:
            issues.append(Issue(seq, "time runs backwards"))
        last_time = raw["time"]
        head = chain_next(head, {k: raw[k] for k in EVENT_FIELDS if k != "chain"})
        if raw["chain"] != head.hex():
            issues.append(Issue(seq, "hash chain mismatch (event edited or reordered)"))
            # resynchronise so one edit is reported once
            head = bytes.fromhex(raw["chain"]) if _is_hex(raw["chain"]) else head
        try:
            msg = wire.decode(bytes.fromhex(raw["hex"]))
        except (ValueError, MalformedMessage) as exc:
            issues.append(Issue(seq, f"frame does not decode: {exc}"))
            continue
        if type(msg).__name__ != raw["kind"]:
            issues.append(Issue(seq, f"kind label {raw['kind']} but frame is {type(msg).__name__}"))
        if raw["delivered"] is not None and not _is_hex(raw["delivered"]):
            issues.append(Issue(seq, "delivered bytes are not hex"))
        decoded.append((raw, msg))
    return issues, decoded


def _is_hex(s) -> bool:
    try:
        bytes.fromhex(s)
    except (TypeError, ValueError):
        return False
    return True


class _Deriver:
    def __init__(self, secrets: dict):
        self.sk = bytes.fromhex(secrets["server_sk"])
        self.sig_pk = bytes.fromhex(secrets["sig_pk"])
        self.seeds = {k: bytes.fromhex(v) for k, v in secrets.get("seeds", {}).items()}
        self.pseudonyms: dict[bytes, tuple[bytes, bytes, str]] = {}
        self.issues: list[Issue] = []

    def expect(self, cond: bool, seq: int, what: str) -> bool:
        if not cond:
            self.issues.append(Issue(seq, f"derivation mismatch: {what}"))
        return cond

    def decrypt(self, t: bytes, seq: int) -> bytes | None:
        try:
            return pke_decrypt(self.sk, t)
        except DecryptError:
            self.issues.append(Issue(seq, "derivation mismatch: encrypted key does not decrypt"))
            return None

    def run(self, decoded) -> list[Issue]:
        groups: dict[str, list] = {}
        for raw, msg in decoded:
            groups.setdefault(raw["exchange"], []).append((raw, msg))
        for ex, evs in groups.items():
            if any(raw["action"] not in _CLEAN_ACTIONS for raw, _ in evs):
                continue  # adversary touched this exchange; nothing honest to re-derive
            phase = ex.split("/")[1] if ex.count("/") >= 2 else ""
            handler = getattr(self, f"_{phase}", None)
            if handler is not None:
                handler({type(m).__name__: (raw, m) for raw, m in evs}, evs)
        return self.issues

    def _shop(self, by, evs):
        if "AuthResponse" not in by or "Challenge" not in by:
            return
        (_, ch), (rseq, resp) = by["Challenge"], by["AuthResponse"]
        k = self.decrypt(resp.t, rseq["seq"])
        if k is None:
            return
        self.expect(resp.v == h(k, ch.gamma1), rseq["seq"], "v != h(K, gamma1)")
        if "Provision" not in by:
            return
        praw, prov = by["Provision"]
        seq = praw["seq"]
        g2 = resp.gamma2
        w, k_new, t_new = wire.unpack_wkt(unmask(k, g2, prov.alpha1))
        self.expect(prov.beta1 == h(w, k_new, t_new, g2), seq, "beta1")
        self.expect(k_new == h(k), seq, "new key is not h(K)")
        self.expect(self.decrypt(t_new, seq) == k_new, seq, "new T does not carry new key")
        slot = unmask(w, g2, prov.alpha2)
        if praw["receiver"].startswith("mtag:"):
            n_i, pad = wire.unpack_pseudonym_slot(slot)
            self.expect(prov.beta2 == h(n_i, g2) and not any(pad), seq, "pseudonym beta2")
            self.pseudonyms[n_i] = (k_new, w, praw["receiver"])
        else:
            self.expect(prov.beta2 == h(slot, g2), seq, "receipt beta2")
            rc = wire.parse_receipt(slot)
            self.expect(verify_receipt(self.sig_pk, rc.body(), rc.signature), seq,
                        "receipt signature")

    def _checkout(self, by, evs):
        if "CheckoutHello" not in by or "TimeIssue" not in by:
            return
        (hraw, hello), (iraw, issue) = by["CheckoutHello"], by["TimeIssue"]
        rec = self.pseudonyms.get(hello.n_i)
        if not self.expect(rec is not None, hraw["seq"], "pseudonym never provisioned"):
            return
        k, w, m_handle = rec
        d_j = wire.from_u64(xor(issue.alpha1, pad8(k, hello.gamma1)))
        self.expect(issue.beta1 == h(wire.u64(d_j), hello.gamma1), iraw["seq"], "time beta1")
        if "KcgWrapped" not in by:
            return
        wraw, wrapped = by["KcgWrapped"]
        plain = unmask(k, issue.gamma2, wrapped.alpha2)
        delta, nu = plain[:wire.W_LEN], plain[wire.W_LEN:]
        self.expect(wrapped.beta2 == h(delta, nu, issue.gamma2), wraw["seq"], "wrapped beta2")
        seed = self.seeds.get(m_handle)
        if seed is not None:
            k_cg = h(seed, wire.u64(d_j))
            self.expect(delta == xor(w, wire.pack_kcg_dj(k_cg, d_j)), wraw["seq"],
                        "delta != w xor (K_cg || D_j)")
            self.expect(nu == h(k_cg, wire.u64(d_j), issue.gamma2), wraw["seq"], "nu")
        if "DeactivateBroadcast" in by:
            braw, bc = by["DeactivateBroadcast"]
            self.expect((bc.delta, bc.nu, bc.gamma2) == (delta, nu, issue.gamma2), braw["seq"],
                        "broadcast differs from unwrapped values")

    def _aftersales(self, by, evs):
        replies = [(raw, m) for raw, m in evs if isinstance(m, wire.InactiveReply)]
        if len(replies) < 2 or "AftersalesMTag" not in by:
            return
        (_, reply), (fraw, fwd) = replies[0], replies[1]
        araw, resp = by["AftersalesMTag"]
        seq = araw["seq"]
        k = self.decrypt(resp.t, seq)
        if k is None:
            return
        self.expect(resp.v1 == h(k, fwd.gamma1), seq, "v1 != h(K, gamma1)")
        delta = xor(resp.alpha1, mex(k, fwd.gamma1, 32))
        self.expect(resp.beta1 == h(delta, fwd.gamma1), seq, "after-sales beta1")
        seed = self.seeds.get(fraw["receiver"])
        if seed is not None:
            self.expect(delta == h(h(seed, wire.u64(fwd.d_j)), fwd.gamma1), seq,
                        "delta != h(h(e, D_j), gamma1)")
        if "ActivateChallenge" in by:
            craw, ch = by["ActivateChallenge"]
            self.expect(ch.delta == delta, craw["seq"], "forwarded delta differs")
        if "GTagProof" in by:
            graw, proof = by["GTagProof"]
            kg = self.decrypt(proof.t, graw["seq"])
            if kg is not None:
                self.expect(proof.v2 == h(kg, reply.gamma1), graw["seq"], "v2 != h(K_g, gamma1)")
            rc = wire.parse_receipt(proof.receipt)
            self.expect(verify_receipt(self.sig_pk, rc.body(), rc.signature), graw["seq"],
                        "receipt signature")
        if "KeyUpdateAck" in by:
            kraw, ack = by["KeyUpdateAck"]
            k_new, t_new = wire.unpack_kt(unmask(k, resp.gamma2, ack.alpha2))
            self.expect(ack.beta2 == h(k_new, t_new, resp.gamma2), kraw["seq"], "ack beta2")
            self.expect(k_new == h(k), kraw["seq"], "refreshed key is not h(K)")
            self.expect(self.decrypt(t_new, kraw["seq"]) == k_new, kraw["seq"],
                        "refreshed T does not carry refreshed key")


def verify_events(events: list[dict], secrets: dict | None = None) -> list[Issue]:
    issues, decoded = check_structure(events)
    if secrets is not None:
        issues += _Deriver(secrets).run(decoded)
    return sorted(issues, key=lambda i: i.seq)


def verify_transcript(path, secrets_path=None) -> list[Issue]:
    secrets = json.loads(Path(secrets_path).read_text()) if secrets_path else None
    return verify_events(load_events(path), secrets)
