"""Readers drive the three phases, forwarding frames between tags and server.

A reader holds no long-term secret.  It only generates challenges and relays
bytes; tag-side traffic crosses the (adversarial) air channel while server
calls are trusted in-process calls.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .crypto import Rng
from .errors import ChannelLoss, ProtocolError, Rejected, UsageError
from .server import GoodsInfo, Server, ServiceDecision
from .wire import (
    ActivateChallenge, AftersalesMTag, AuthResponse, Challenge, CheckoutHello,
    DeactivateBroadcast, GTagProof, InactiveReply, KcgWrapped, KeyUpdateAck,
    Provision, TimeIssue, decode, encode,
)


@dataclass
class Outcome:
    action: str
    status: str = "Accepted"
    errors: list[tuple[str, str]] = field(default_factory=list)  # (entity, error name)
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def rejected(self) -> bool:
        """True when some entity refused a frame (loss alone is not a rejection)."""
        return (any(name != "ChannelLoss" for _, name in self.errors)
                or self.detail.get("decision") == ServiceDecision.DENIED_FORGED.value)

    def fail(self, where: str, exc: ProtocolError) -> "Outcome":
        self.errors.append((where, type(exc).__name__))
        if self.status == "Accepted":
            self.status = type(exc).__name__
        return self

    def to_dict(self) -> dict:
        return {"action": self.action, "status": self.status,
                "errors": [list(e) for e in self.errors], **self.detail}


class _At(Exception):
    def __init__(self, where: str, exc: ProtocolError):
        self.where, self.exc = where, exc


def _at(where, fn, *args):
    try:
        return fn(*args)
    except ProtocolError as exc:
        raise _At(where, exc) from exc


class Reader:
    def __init__(self, name: str, rng: Rng, channel, server: Server,
                 session_id: str | None = None):
        self.name = name
        self.rng = rng
        self.channel = channel
        self.server = server
        self.session_id = session_id
        self._n = 0

    def _exchange(self, what: str) -> str:
        self._n += 1
        return f"{self.name}/{what}/{self._n}"

    def _xfer(self, sender, receiver, msg, expect, exchange, annotation=""):
        out = self.channel.send(sender, receiver, encode(msg), exchange, annotation)
        if out is None:
            raise _At(receiver, ChannelLoss(f"{type(msg).__name__} lost"))
        return _at(receiver, decode, out, expect)

    # -- shopping -----------------------------------------------------------

    def run_shopping_auth(self, tag, handle: str, goods: GoodsInfo | None = None) -> Outcome:
        if self.session_id is None:
            raise UsageError("shopping authentication needs a cart reader")
        if tag.kind == "g" and goods is None:
            raise UsageError("g-type authentication needs goods info")
        out = Outcome("shop", detail={"tag": handle})
        ex = self._exchange("shop")
        gamma1 = self.rng.nonce()
        ticket = None
        try:
            ch = self._xfer(self.name, handle, Challenge(gamma1), Challenge, ex, "step1")
            resp = _at(handle, tag.auth_response, ch.gamma1)
            resp = self._xfer(handle, self.name, resp, AuthResponse, ex, "step2")
            prov, ticket = _at("server", self.server.provision, self.session_id, tag.kind,
                               resp, gamma1, goods, handle)
            prov = self._xfer(self.name, handle, prov, Provision, ex, "step4")
            _at(handle, tag.apply_provision, prov)
        except _At as e:
            if ticket is not None:
                self.server.abort(ticket)
            return out.fail(e.where, e.exc)
        self.server.commit(ticket)
        return out

    # -- purchasing ---------------------------------------------------------

    def run_checkout(self, mtag, m_handle: str, in_range: dict) -> Outcome:
        """Check out the cart; ``in_range`` maps handle -> g-tag for every tag hearing the broadcast."""
        out = Outcome("checkout")
        ex = self._exchange("checkout")
        session = self.server.sessions.get(self.session_id)
        expected = list(dict.fromkeys(session.authed_goods)) if session else []
        try:
            hello = _at(m_handle, mtag.checkout_hello)
            hello = self._xfer(m_handle, self.name, hello, CheckoutHello, ex, "step2")
            issue = _at("server", self.server.checkout_issue, hello)
            issue = self._xfer(self.name, m_handle, issue, TimeIssue, ex, "step3")
            wrapped = _at(m_handle, mtag.checkout_wrap, issue)
            wrapped = self._xfer(m_handle, self.name, wrapped, KcgWrapped, ex, "step4")
            bc = _at("server", self.server.checkout_unwrap, hello.n_i, wrapped)
        except _At as e:
            return out.fail(e.where, e.exc)
        data = self.channel.send(self.name, f"broadcast:{self.name}", encode(bc), ex, "step5")
        results = {}
        for handle, gtag in in_range.items():
            try:
                if data is None:
                    raise _At(handle, ChannelLoss("broadcast lost"))
                msg = _at(handle, decode, data, DeactivateBroadcast)
                _at(handle, gtag.deactivate, msg)
                results[handle] = not gtag.state.active
            except _At as e:
                results[handle] = False
                out.fail(e.where, e.exc)
        out.detail["deactivated"] = results
        if all(results.get(hnd, False) for hnd in expected):
            out.detail["d_j"] = self.server.checkout_complete(hello.n_i)
        elif out.ok:
            out.status = "Incomplete"
        return out

    # -- after-sales ------------------------------------------------------

    def run_aftersales(self, gtag, g_handle: str, mtag, m_handle: str) -> Outcome:
        out = Outcome("aftersales", detail={"gtag": g_handle, "mtag": m_handle,
                                            "activated": False, "decision": None,
                                            "key_updated": False})
        ex = self._exchange("aftersales")
        try:
            reply = _at(g_handle, gtag.inactive_reply)
            reply = self._xfer(g_handle, self.name, reply, InactiveReply, ex, "step2")
            fwd = self._xfer(self.name, m_handle, reply, InactiveReply, ex, "step3")
            resp = _at(m_handle, mtag.aftersales_respond, fwd)
            resp = self._xfer(m_handle, self.name, resp, AftersalesMTag, ex, "step4")
            challenge, pending = _at("server", self.server.aftersales_mtag, resp, reply.gamma1)
            challenge = self._xfer(self.name, g_handle, challenge, ActivateChallenge, ex, "step5")
            proof = _at(g_handle, gtag.try_activate, challenge)
            out.detail["activated"] = True
            proof = self._xfer(g_handle, self.name, proof, GTagProof, ex, "step6")
            decision, ack = _at("server", self.server.aftersales_gtag, proof, reply.gamma1, pending)
            out.detail["decision"] = decision.value
            out.status = decision.value
            ack = self._xfer(self.name, m_handle, ack, KeyUpdateAck, ex, "step7")
            _at(m_handle, mtag.apply_key_update, ack)
            out.detail["key_updated"] = True
        except _At as e:
            out.fail(e.where, e.exc)
            if isinstance(e.exc, Rejected):
                out.status = "WrongCard"
            elif out.detail["decision"] is not None:
                out.status = out.detail["decision"]
        return out
