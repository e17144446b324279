"""Distributed termination detection.

Every rank counts the user active messages it has queued and processed.
Rank 0 collects those counts; once the global sums agree it asks each
rank to confirm that its counts have not moved since it reported them,
and only a fully confirmed round ends the program.

Message flow (rank 0 plays both roles, talking to itself through the
same transport as everyone else)::

    any rank --COUNT(r, q, p)--------> rank 0
    rank 0   --REQUEST(t, q_r, p_r)--> rank r
    rank r   --CONFIRMATION(r, t)----> rank 0
    rank 0   --SHUTDOWN--------------> every rank > 0

Protocol messages are never included in the counts.
"""

import logging
import threading
from typing import NamedTuple

log = logging.getLogger(__name__)


class Count(NamedTuple):
    rank: int
    queued: int
    processed: int


class Request(NamedTuple):
    dest: int
    round: int
    queued: int
    processed: int


class Confirmation(NamedTuple):
    rank: int
    round: int


class Shutdown(NamedTuple):
    dest: int


class CompletionCounters:
    """Monotone per-rank tallies of user AMs (queued on send, processed
    after the handler returns)."""

    __slots__ = ("queued", "processed", "_lock")

    def __init__(self):
        self.queued = 0
        self.processed = 0
        self._lock = threading.Lock()

    def on_user_queued(self):
        with self._lock:
            self.queued += 1

    def on_user_processed(self):
        with self._lock:
            self.processed += 1

    def snapshot(self):
        with self._lock:
            return self.queued, self.processed

    def __repr__(self):
        return f"CompletionCounters(queued={self.queued}, processed={self.processed})"


class WorkerRankState:
    """Reporting and confirming side, run by every rank."""

    def __init__(self, rank):
        self.rank = rank
        self.last_sent = None
        self.last_request = None
        self.confirmed_round = 0
        self.shutdown = False

    def on_request(self, msg):
        # only the newest round matters; older ones are stale
        if self.last_request is None or msg.round > self.last_request.round:
            self.last_request = msg

    def step(self, queued, processed, idle):
        """One monitoring pass. Returns the messages to emit."""
        if self.shutdown:
            return []
        out = []
        counts = (queued, processed)
        if idle and counts != self.last_sent:
            self.last_sent = counts
            out.append(Count(self.rank, queued, processed))
        req = self.last_request
        if req is not None and req.round > self.confirmed_round:
            if (req.queued, req.processed) != counts:
                # counts moved since they were reported; a fresh COUNT
                # (sent above or once idle) supersedes this round
                self.last_request = None
            elif idle:
                self.confirmed_round = req.round
                out.append(Confirmation(self.rank, req.round))
        return out


class Rank0State:
    """Aggregating side, run by rank 0 only."""

    def __init__(self, n_ranks):
        self.n_ranks = n_ranks
        self.best_counts = [None] * n_ranks
        self.round = 0
        # no achievable sum equals None, so the first balanced sum fires
        self.last_sum = None
        self.confirmations = set()
        self.shutdown_sent = False

    def on_count(self, msg):
        cur = self.best_counts[msg.rank]
        if cur is None:
            self.best_counts[msg.rank] = (msg.queued, msg.processed)
        else:
            self.best_counts[msg.rank] = (max(cur[0], msg.queued), max(cur[1], msg.processed))

    def on_confirmation(self, msg):
        if msg.round == self.round:
            self.confirmations.add(msg.rank)

    def step(self):
        if self.shutdown_sent:
            return []
        out = []
        if all(c is not None for c in self.best_counts):
            total_q = sum(c[0] for c in self.best_counts)
            total_p = sum(c[1] for c in self.best_counts)
            if total_q == total_p and total_q != self.last_sum:
                self.round += 1
                self.last_sum = total_q
                self.confirmations = set()
                out.extend(
                    Request(r, self.round, q, p) for r, (q, p) in enumerate(self.best_counts)
                )
        if self.round and len(self.confirmations) == self.n_ranks:
            self.shutdown_sent = True
            out.extend(Shutdown(r) for r in range(self.n_ranks))
        return out


class CompletionProtocol:
    """Per-rank driver tying the state machines to a message sink.

    ``send(dest, msg)`` ships one protocol message. ``on_shutdown_sent``
    is called on rank 0 at the instant it decides to shut down, before
    any SHUTDOWN leaves; tests hang their global oracle on it.
    """

    def __init__(self, rank, n_ranks, counters, send, trace=None, on_shutdown_sent=None):
        self.rank = rank
        self.n_ranks = n_ranks
        self.counters = counters
        self.send = send
        self.trace = trace
        self.on_shutdown_sent = on_shutdown_sent
        self.worker = WorkerRankState(rank)
        self.root = Rank0State(n_ranks) if rank == 0 else None
        self.done = False

    def _record(self, direction, msg, extra=None):
        if log.isEnabledFor(logging.DEBUG):
            log.debug("rank %d %s %r", self.rank, direction, msg)
        if self.trace is not None:
            self.trace.append((self.rank, direction, msg, extra))

    def receive(self, msg):
        self._record("recv", msg)
        if isinstance(msg, Count):
            self.root.on_count(msg)
        elif isinstance(msg, Request):
            self.worker.on_request(msg)
        elif isinstance(msg, Confirmation):
            self.root.on_confirmation(msg)
        elif isinstance(msg, Shutdown):
            self.handle_shutdown()
        else:
            raise TypeError(f"not a protocol message: {msg!r}")

    def handle_shutdown(self):
        self.worker.shutdown = True
        self.done = True

    def step(self, idle):
        if self.done:
            return
        q, p = self.counters.snapshot()
        for msg in self.worker.step(q, p, idle):
            self._record("send", msg, (q, p))
            self.send(0, msg)
        if self.root is None:
            return
        for msg in self.root.step():
            if isinstance(msg, Shutdown):
                if msg.dest == 0:
                    if self.on_shutdown_sent is not None:
                        self.on_shutdown_sent()
                    continue
                self._record("send", msg)
                self.send(msg.dest, msg)
            else:
                self._record("send", msg)
                self.send(msg.dest, msg)
        if self.root.shutdown_sent:
            self.handle_shutdown()
