from ..codec import MessageTag

MAX_MESSAGE_BYTES = 2**31 - 1


class TransferHandle:
    """Opaque handle for one nonblocking send or receive."""

    __slots__ = ("id", "direction", "done", "buffer", "source", "tag")

    def __init__(self, hid, direction, buffer=None, source=None, tag=None):
        self.id = hid
        self.direction = direction
        self.done = False
        self.buffer = buffer
        self.source = source
        self.tag = tag

    def __repr__(self):
        return f"TransferHandle({self.id}, {self.direction}, done={self.done})"


class Transport:
    """Reliable point-to-point layer used by a communicator.

    All calls for one rank come from that rank's communication thread.
    Messages on the same (source, dest, tag) channel are delivered in
    send order.
    """

    rank = 0
    n_ranks = 1

    def isend(self, dest, tag, data):
        raise NotImplementedError

    def probe(self, source=None, tag=None):
        """Return ``(source, tag, size)`` for a deliverable message, or None."""
        raise NotImplementedError

    def irecv(self, source, tag, size, into=None):
        raise NotImplementedError

    def test(self, handle):
        raise NotImplementedError

    def close(self):
        pass

    def _check_dest(self, dest):
        if not 0 <= dest < self.n_ranks:
            raise ValueError(f"rank {dest} outside [0, {self.n_ranks})")

    @staticmethod
    def _check_size(nbytes):
        if nbytes > MAX_MESSAGE_BYTES:
            raise ValueError(
                f"message of {nbytes} bytes exceeds the {MAX_MESSAGE_BYTES} byte limit"
            )

    @staticmethod
    def _check_tag(tag):
        if tag not in MessageTag.ALL:
            raise ValueError(f"unknown tag {tag!r}")
