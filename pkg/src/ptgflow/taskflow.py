"""Parametrized task graphs over a user-chosen key space."""

import logging

from .engine import Task
from .errors import ProtocolError

log = logging.getLogger(__name__)


def _zero(k):
    return 0


def _unbound(k):
    return False


def _no_label(k):
    return ""


class Taskflow:
    """Dependency counting for tasks described by functions of a key.

    ``indegree(k)``
        number of :meth:`fulfill_promise` calls task ``k`` waits for (>= 1)
    ``task(k)``
        the task body; usually computes, then fulfills successors
    ``mapping(k)``
        worker thread that owns ``k``'s dependency count and first runs it
    ``priority(k)``
        higher runs first (default 0)
    ``binding(k)``
        True pins the task to its mapped thread; default False (stealable)
    ``name(k)``
        label used in traces

    A key is unknown to the flow until its first dependency is fulfilled.
    Dependency counts for key ``k`` live in the shard of thread
    ``mapping(k)`` and are only touched from that thread: a fulfill
    issued elsewhere is posted to the owner's intake.

    With ``debug=True`` fired keys are remembered so that fulfilling one
    again raises :class:`ProtocolError` (costs memory per task).
    """

    def __init__(
        self,
        pool,
        indegree=None,
        task=None,
        mapping=None,
        priority=None,
        binding=None,
        name=None,
        label="taskflow",
        debug=False,
    ):
        self.pool = pool
        self.label = label
        self.indegree = indegree
        self.task = task
        self.mapping = mapping
        self.priority = priority or _zero
        self.binding = binding or _unbound
        self.name = name or _no_label
        self.shards = [dict() for _ in range(pool.n_threads)]
        self.fired = [set() for _ in range(pool.n_threads)] if debug else None
        self._remote_am = None

    # chainable setters, mirroring the keyword arguments

    def set_indegree(self, f):
        self.indegree = f
        return self

    def set_task(self, f):
        self.task = f
        return self

    def set_mapping(self, f):
        self.mapping = f
        return self

    def set_priority(self, f):
        self.priority = f
        return self

    def set_binding(self, f):
        self.binding = f
        return self

    def set_name(self, f):
        self.name = f
        return self

    def _owner(self, k):
        t = self.mapping(k)
        if not 0 <= t < self.pool.n_threads:
            raise ValueError(
                f"{self.label}: mapping({k!r}) = {t} outside [0, {self.pool.n_threads})"
            )
        return t

    def fulfill_promise(self, k):
        """Satisfy one dependency of task ``k``; runs it when none remain."""
        t = self._owner(k)
        pool = self.pool
        if pool.current_thread_id() == t or not pool.running:
            self._apply(k, t)
        else:
            pool.post(t, lambda: self._apply(k, t))

    def _apply(self, k, t):
        shard = self.shards[t]
        remaining = shard.get(k)
        if remaining is None:
            if self.fired is not None and k in self.fired[t]:
                raise ProtocolError(f"{self.label}: task {k!r} fulfilled after it fired")
            n = self.indegree(k)
            if n < 1:
                raise ProtocolError(f"{self.label}: indegree({k!r}) = {n}, must be >= 1")
            remaining = n
        remaining -= 1
        if remaining:
            shard[k] = remaining
            return
        shard.pop(k, None)
        if self.fired is not None:
            self.fired[t].add(k)
        run = self.task
        self.pool.insert(
            Task(
                lambda: run(k),
                priority=self.priority(k),
                stealable=not self.binding(k),
                label=self.name(k),
                origin=self,
            ),
            t,
        )

    def n_resident(self):
        """Keys with some but not all dependencies fulfilled."""
        return sum(len(s) for s in self.shards)

    # remote fulfillment

    def enable_remote(self, comm, key_signature):
        """Register the active message used by :meth:`fulfill_remote`.

        ``key_signature`` describes one key: a scalar descriptor such as
        ``"i64"`` or a tuple such as ``("i32", "i32")``. Like any active
        message, this must happen in the same order on every rank.
        """
        if isinstance(key_signature, tuple):
            self._remote_am = comm.register_am(
                lambda k: self.fulfill_promise(tuple(k)), [key_signature]
            )
        else:
            self._remote_am = comm.register_am(self.fulfill_promise, [key_signature])
        return self._remote_am

    def fulfill_remote(self, k, dest):
        """Fulfill one dependency of ``k`` on rank ``dest``."""
        if self._remote_am is None:
            raise ProtocolError(f"{self.label}: enable_remote() was not called")
        self._remote_am.send(dest, k)
