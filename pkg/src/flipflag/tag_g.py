"""Goods (g-type) tag: carries the receipt, deactivates at checkout."""
from __future__ import annotations

import copy
import hmac
from dataclasses import dataclass

from . import wire
from .crypto import Rng, h, require_integrity, unmask, xor
from .errors import ActiveTag, Inactive, NoPendingExchange, Rejected
from .wire import (
    ActivateChallenge, AuthResponse, DeactivateBroadcast, GTagProof,
    InactiveReply, Provision, Receipt,
)


@dataclass
class GTagState:
    k_gi: bytes
    t_gi: bytes
    active: bool = True
    session_w: bytes | None = None
    receipt: Receipt | None = None
    k_cg: bytes | None = None
    d_j: int | None = None
    pending: tuple[str, dict] | None = None

    def committed(self) -> tuple:
        return (self.k_gi, self.t_gi, self.active, self.session_w,
                self.receipt, self.k_cg, self.d_j)


class GTag:
    kind = "g"

    def __init__(self, state: GTagState, rng: Rng):
        self.state = state
        self.rng = rng

    def auth_response(self, gamma1: bytes) -> AuthResponse:
        s = self.state
        if not s.active:
            raise Inactive("deactivated tags do not run shopping authentication")
        gamma2 = self.rng.nonce()
        s.pending = ("shop", {"gamma1": gamma1, "gamma2": gamma2})
        return AuthResponse(t=s.t_gi, v=h(s.k_gi, gamma1), gamma2=gamma2)

    def apply_provision(self, msg: Provision) -> None:
        s = self.state
        if s.pending is None or s.pending[0] != "shop":
            raise NoPendingExchange("g-tag has no shopping exchange in flight")
        gamma2 = s.pending[1]["gamma2"]
        w, k_new, t_new = wire.unpack_wkt(unmask(s.k_gi, gamma2, msg.alpha1))
        require_integrity(msg.beta1, h(w, k_new, t_new, gamma2), "provision beta1")
        v_g = unmask(w, gamma2, msg.alpha2)
        require_integrity(msg.beta2, h(v_g, gamma2), "provision beta2")
        s.k_gi, s.t_gi, s.session_w = k_new, t_new, w
        s.receipt = wire.parse_receipt(v_g)
        s.pending = None

    def deactivate(self, msg: DeactivateBroadcast) -> bool:
        """Apply a checkout broadcast.  Returns False for the idempotent no-op case."""
        s = self.state
        if s.k_cg is not None:
            # already deactivated once; carts re-broadcast to every tag
            return False
        if s.session_w is None:
            raise NoPendingExchange("g-tag holds no shopping token")
        k_cg, d_j = wire.unpack_kcg_dj(xor(msg.delta, s.session_w))
        require_integrity(msg.nu, h(k_cg, wire.u64(d_j), msg.gamma2), "broadcast nu")
        s.k_cg, s.d_j, s.active = k_cg, d_j, False
        return True

    def inactive_reply(self) -> InactiveReply:
        s = self.state
        if s.active:
            raise ActiveTag("active tags answer shopping authentication instead")
        gamma1 = self.rng.nonce()
        # only the latest challenge is remembered
        s.pending = ("activate", {"gamma1": gamma1})
        return InactiveReply(d_j=s.d_j, gamma1=gamma1)

    def try_activate(self, msg: ActivateChallenge) -> GTagProof:
        s = self.state
        if s.active or s.pending is None or s.pending[0] != "activate":
            raise NoPendingExchange("g-tag has not issued an activation challenge")
        gamma1 = s.pending[1]["gamma1"]
        if not hmac.compare_digest(msg.delta, h(s.k_cg, gamma1)):
            raise Rejected("activation response does not match")
        s.active = True
        s.pending = None
        return GTagProof(t=s.t_gi, v2=h(s.k_gi, gamma1), receipt=s.receipt.to_bytes())

    def snapshot(self) -> GTagState:
        return copy.deepcopy(self.state)


def new_gtag(k0: bytes, t0: bytes, rng: Rng) -> GTag:
    return GTag(GTagState(k_gi=k0, t_gi=t0), rng)
