"""Membership-card (m-type) tag."""
from __future__ import annotations

import copy
from dataclasses import dataclass

from . import wire
from .crypto import (
    H_LEN, Rng, h, mask, pad8, require_integrity, unmask, xor,
)
from .errors import IntegrityFailure, NoPendingExchange, NoSession
from .wire import (
    AftersalesMTag, AuthResponse, CheckoutHello, InactiveReply, KcgWrapped,
    KeyUpdateAck, Provision, TimeIssue,
)


@dataclass
class MTagState:
    k_ci: bytes
    t_ci: bytes
    seed_e: bytes
    w: bytes | None = None
    n_i: bytes | None = None
    # one in-flight exchange at most: (phase, {nonce name: value})
    pending: tuple[str, dict] | None = None

    def committed(self) -> tuple:
        return (self.k_ci, self.t_ci, self.seed_e, self.w, self.n_i)


class MTag:
    """Single-owner state machine; a rejected message leaves state untouched."""

    kind = "m"

    def __init__(self, state: MTagState, rng: Rng):
        self.state = state
        self.rng = rng

    def _expect(self, phase: str) -> dict:
        p = self.state.pending
        if p is None or p[0] != phase:
            raise NoPendingExchange(f"m-tag has no {phase} exchange in flight")
        return p[1]

    # shopping phase --------------------------------------------------------

    def auth_response(self, gamma1: bytes) -> AuthResponse:
        s = self.state
        gamma2 = self.rng.nonce()
        s.pending = ("shop", {"gamma1": gamma1, "gamma2": gamma2})
        return AuthResponse(t=s.t_ci, v=h(s.k_ci, gamma1), gamma2=gamma2)

    def apply_provision(self, msg: Provision) -> None:
        s = self.state
        gamma2 = self._expect("shop")["gamma2"]
        w, k_new, t_new = wire.unpack_wkt(unmask(s.k_ci, gamma2, msg.alpha1))
        require_integrity(msg.beta1, h(w, k_new, t_new, gamma2), "provision beta1")
        n_i, padding = wire.unpack_pseudonym_slot(unmask(w, gamma2, msg.alpha2))
        require_integrity(msg.beta2, h(n_i, gamma2), "provision beta2")
        if any(padding):
            raise IntegrityFailure("provision slot padding")
        s.k_ci, s.t_ci, s.w, s.n_i = k_new, t_new, w, n_i
        s.pending = None

    # purchasing phase ------------------------------------------------------

    def checkout_hello(self) -> CheckoutHello:
        s = self.state
        if s.n_i is None:
            raise NoSession("m-tag has not completed a shopping phase")
        gamma1 = self.rng.nonce()
        s.pending = ("checkout", {"gamma1": gamma1})
        return CheckoutHello(n_i=s.n_i, gamma1=gamma1)

    def checkout_wrap(self, msg: TimeIssue) -> KcgWrapped:
        s = self.state
        gamma1 = self._expect("checkout")["gamma1"]
        d_j = wire.from_u64(xor(msg.alpha1, pad8(s.k_ci, gamma1)))
        require_integrity(msg.beta1, h(wire.u64(d_j), gamma1), "time issue beta1")
        k_cg = h(s.seed_e, wire.u64(d_j))  # derived on demand, never stored
        delta = xor(s.w, wire.pack_kcg_dj(k_cg, d_j))
        nu = h(k_cg, wire.u64(d_j), msg.gamma2)
        s.pending = None
        return KcgWrapped(alpha2=mask(s.k_ci, msg.gamma2, delta + nu),
                          beta2=h(delta, nu, msg.gamma2))

    # after-sales phase -----------------------------------------------------

    def aftersales_respond(self, msg: InactiveReply) -> AftersalesMTag:
        s = self.state
        k_cg = h(s.seed_e, wire.u64(msg.d_j))
        delta = h(k_cg, msg.gamma1)
        gamma2 = self.rng.nonce()
        s.pending = ("aftersales", {"gamma1": msg.gamma1, "gamma2": gamma2})
        return AftersalesMTag(
            t=s.t_ci,
            v1=h(s.k_ci, msg.gamma1),
            alpha1=mask(s.k_ci, msg.gamma1, delta),
            beta1=h(delta, msg.gamma1),
            gamma2=gamma2,
        )

    def apply_key_update(self, msg: KeyUpdateAck) -> None:
        s = self.state
        gamma2 = self._expect("aftersales")["gamma2"]
        k_new, t_new = wire.unpack_kt(unmask(s.k_ci, gamma2, msg.alpha2))
        require_integrity(msg.beta2, h(k_new, t_new, gamma2), "key update beta2")
        s.k_ci, s.t_ci = k_new, t_new
        s.pending = None

    def snapshot(self) -> MTagState:
        return copy.deepcopy(self.state)


def new_mtag(k0: bytes, t0: bytes, rng: Rng) -> MTag:
    """Card issuance: the seed comes from the card's own RNG; the server never sees it."""
    return MTag(MTagState(k_ci=k0, t_ci=t0, seed_e=rng.next(H_LEN)), rng)

