"""In-process multi-rank fabric with a logical clock and injectable delays."""

import itertools
import random
import threading
from collections import deque

from .base import TransferHandle, Transport


def _delay_fn(delay):
    if delay is None:
        return None
    if callable(delay):
        return delay
    if isinstance(delay, int):
        if delay < 0:
            raise ValueError("delay must be non-negative")
        return (lambda rng: delay) if delay else None
    lo, hi = delay
    if not 0 <= lo <= hi:
        raise ValueError(f"bad delay range {delay!r}")
    return lambda rng: rng.randint(lo, hi)


class _Msg:
    __slots__ = ("src", "tag", "data", "due", "stamp", "handle")

    def __init__(self, src, tag, data, due, stamp, handle):
        self.src = src
        self.tag = tag
        self.data = data
        self.due = due
        self.stamp = stamp
        self.handle = handle


class LoopbackFabric:
    """Shared medium for ``n_ranks`` in-process endpoints.

    Each message is deliverable once ``clock >= send_clock + delay``,
    with the delay drawn from ``delay`` (an int, an ``(lo, hi)`` range
    or a callable taking a :class:`random.Random`). Channels keyed by
    (source, dest, tag) stay FIFO whatever the drawn delays.

    The clock only moves through :meth:`tick`, or on every probe when
    ``auto_tick`` is set (useful for threaded runs with delays).
    """

    def __init__(self, n_ranks, delay=None, seed=0, auto_tick=False, record=False):
        if n_ranks < 1:
            raise ValueError("n_ranks must be >= 1")
        self.n_ranks = n_ranks
        self.clock = 0
        self.auto_tick = auto_tick
        self._delay = _delay_fn(delay)
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self._stamps = itertools.count(1)
        self._handles = itertools.count()
        # per destination: (src, tag) -> deque[_Msg]
        self._inbox = [dict() for _ in range(n_ranks)]
        self._last_due = {}
        self._n_pending = 0
        self.schedule = [] if record else None

    def endpoint(self, rank):
        if not 0 <= rank < self.n_ranks:
            raise ValueError(f"rank {rank} outside [0, {self.n_ranks})")
        return LoopbackTransport(self, rank)

    def endpoints(self):
        return [self.endpoint(r) for r in range(self.n_ranks)]

    def tick(self, n=1):
        with self._lock:
            self.clock += n
            return self.clock

    def next_stamp(self):
        """Global logical timestamp; strictly increasing across all ranks."""
        return next(self._stamps)

    def next_due(self):
        """Earliest delivery time among undelivered messages, or None."""
        with self._lock:
            best = None
            for box in self._inbox:
                for q in box.values():
                    if q and (best is None or q[0].due < best):
                        best = q[0].due
            return best

    def pending(self, tag=None):
        """Messages sent but not yet received, as ``(src, dst, tag, nbytes)``."""
        with self._lock:
            out = []
            for dst, box in enumerate(self._inbox):
                for (src, t), q in box.items():
                    if tag is None or t == tag:
                        out.extend((src, dst, t, len(m.data)) for m in q)
            return out

    @property
    def n_pending(self):
        return self._n_pending

    # endpoint operations, called with arguments already validated

    def _send(self, src, dest, tag, data):
        handle = TransferHandle(next(self._handles), "send")
        with self._lock:
            delay = self._delay(self._rng) if self._delay else 0
            key = (src, dest, tag)
            due = max(self.clock + delay, self._last_due.get(key, 0))
            self._last_due[key] = due
            msg = _Msg(src, tag, data, due, next(self._stamps), handle)
            box = self._inbox[dest]
            q = box.get((src, tag))
            if q is None:
                q = box[(src, tag)] = deque()
            q.append(msg)
            self._n_pending += 1
            if self.schedule is not None:
                self.schedule.append((msg.stamp, src, dest, tag, len(data), due))
        return handle

    def _probe(self, rank, source, tag):
        with self._lock:
            if self.auto_tick:
                self.clock += 1
            box = self._inbox[rank]
            if not box:
                return None
            best = None
            clock = self.clock
            if source is not None and tag is not None:
                q = box.get((source, tag))
                if q and q[0].due <= clock:
                    best = q[0]
            else:
                for (src, t), q in box.items():
                    if not q or (source is not None and src != source):
                        continue
                    if tag is not None and t != tag:
                        continue
                    m = q[0]
                    if m.due <= clock and (
                        best is None or (m.due, m.stamp) < (best.due, best.stamp)
                    ):
                        best = m
            if best is None:
                return None
            return best.src, best.tag, len(best.data)

    def _recv(self, rank, source, tag, size, into):
        with self._lock:
            box = self._inbox[rank]
            q = box.get((source, tag))
            if not q or q[0].due > self.clock:
                raise ValueError(f"no deliverable message from {source} with tag {tag}")
            msg = q[0]
            if len(msg.data) != size:
                raise ValueError(f"size {size} does not match probed size {len(msg.data)}")
            q.popleft()
            if not q:
                del box[(source, tag)]
            self._n_pending -= 1
        if into is None:
            buf = bytearray(msg.data)
        else:
            buf = into
            target = memoryview(into).cast("B")
            if target.nbytes != size:
                raise ValueError(f"receive buffer holds {target.nbytes} bytes, message {size}")
            target[:] = msg.data
        # the sender's buffer may be reused only once the bytes have landed
        msg.handle.done = True
        handle = TransferHandle(next(self._handles), "recv", buf, source, tag)
        handle.done = True
        return handle


class LoopbackTransport(Transport):
    def __init__(self, fabric, rank):
        self.fabric = fabric
        self.rank = rank
        self.n_ranks = fabric.n_ranks

    def isend(self, dest, tag, data):
        self._check_dest(dest)
        self._check_tag(tag)
        # no copy: the sender keeps its buffer intact until the send completes
        mv = memoryview(data).cast("B")
        self._check_size(mv.nbytes)
        return self.fabric._send(self.rank, dest, tag, mv)

    def probe(self, source=None, tag=None):
        return self.fabric._probe(self.rank, source, tag)

    def irecv(self, source, tag, size, into=None):
        return self.fabric._recv(self.rank, source, tag, size, into)

    def test(self, handle):
        return handle.done

    def stamp(self):
        return self.fabric.next_stamp()


def loopback_configure(n_ranks, delay=None, seed=0, **kwargs):
    """Build a fabric and return it with one transport per rank."""
    fabric = LoopbackFabric(n_ranks, delay=delay, seed=seed, **kwargs)
    return fabric, fabric.endpoints()
