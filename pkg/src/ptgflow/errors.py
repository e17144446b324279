"""Exception types shared across the runtime."""


class PtgError(Exception):
    pass


class ProtocolError(PtgError):
    """A peer or user function broke a runtime invariant (over-fulfill,
    unknown AM id, late registration, signature mismatch)."""


class MalformedFrame(PtgError):
    """A wire frame does not match the signature used to decode it."""


class TransportError(PtgError):
    """The transport could not reach a peer or lost a connection."""


class BenchmarkError(PtgError):
    pass


class RankAborted(PtgError):
    """Raised on a rank whose launcher reported a failure elsewhere."""
