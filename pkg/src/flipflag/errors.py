"""Exception hierarchy shared by every protocol entity."""


class ProtocolError(Exception):
    """Base class for any rejection raised while processing a message."""


class DecryptError(ProtocolError):
    """An encrypted tag key failed to decrypt (forged or malformed T)."""


class MalformedMessage(ProtocolError):
    """Wire bytes have an unknown kind byte, the wrong length or an unexpected kind."""


class IntegrityFailure(ProtocolError):
    """A beta/nu check over a masked payload did not match."""


class AuthFailure(ProtocolError):
    """A tag's challenge response did not match the decrypted key."""


class NoSession(ProtocolError):
    """Checkout attempted before the shopping phase committed a session."""


class Inactive(ProtocolError):
    """A deactivated g-type tag was asked to run shopping authentication."""


class ActiveTag(ProtocolError):
    """An active g-type tag was asked for its inactive-mode reply."""


class Rejected(ProtocolError):
    """A g-type tag refused an activation challenge."""


class UnknownPseudonym(ProtocolError):
    """The server has no open transaction record for the pseudonym."""


class NoPendingExchange(ProtocolError):
    """A reply arrived while the entity had no matching exchange in flight."""


class ChannelLoss(ProtocolError):
    """The air channel dropped a message."""


class CorruptStore(Exception):
    """A store snapshot could not be parsed."""


class ScriptError(Exception):
    """A scenario script line is malformed."""


class UsageError(Exception):
    """An operation was invoked with missing or inconsistent arguments."""
