"""Thread pool with per-thread dual priority queues and work stealing.

Each worker owns two max-priority queues: tasks in the *bound* queue
only ever run on that worker, tasks in the *stealable* queue may be
taken by idle workers. Both pop by (priority desc, insertion order).
Workers also own an intake mailbox of bookkeeping callables, used by
task flows to keep each dependency shard single-writer.
"""

import heapq
import itertools
import logging
import threading
import time
from collections import deque

log = logging.getLogger(__name__)

_local = threading.local()


class Task:
    """A runnable unit. ``seq`` is filled in by the pool on insertion."""

    __slots__ = ("body", "priority", "stealable", "label", "seq", "origin")

    def __init__(self, body, priority=0, stealable=True, label="", origin=None):
        self.body = body
        self.priority = priority
        self.stealable = stealable
        self.label = label
        self.seq = None
        self.origin = origin

    def __repr__(self):
        return (
            f"Task({self.label or self.body!r}, priority={self.priority}, "
            f"stealable={self.stealable}, seq={self.seq})"
        )


class _Queue:
    __slots__ = ("heap", "lock")

    def __init__(self):
        self.heap = []
        self.lock = threading.Lock()

    def push(self, task):
        with self.lock:
            heapq.heappush(self.heap, (-task.priority, task.seq, task))

    def head_key(self):
        h = self.heap
        return h[0][:2] if h else None

    def pop(self):
        with self.lock:
            if self.heap:
                return heapq.heappop(self.heap)[2]
        return None


class WorkerState:
    def __init__(self, thread_id):
        self.thread_id = thread_id
        self.stealable = _Queue()
        self.bound = _Queue()
        self.intake = deque()
        self.wake = threading.Event()
        self.idle = True
        self.executed = 0
        self.stolen = 0


class Threadpool:
    """Fixed set of ``n_threads`` workers.

    Tasks may be inserted before :meth:`start`; they are held until the
    workers run. :meth:`join` returns once every worker is idle and, if a
    communicator is attached, once the distributed completion protocol
    has shut it down. The thread calling :meth:`join` drives the
    communicator's progress loop.
    """

    def __init__(self, n_threads, comm=None, name="", spin=64, park_timeout=0.002, trace=False):
        if not isinstance(n_threads, int) or n_threads < 1:
            raise ValueError(f"n_threads must be a positive integer, got {n_threads!r}")
        self.n_threads = n_threads
        self.comm = comm
        self.name = name
        self.spin = spin
        self.park_timeout = park_timeout
        self.workers = [WorkerState(i) for i in range(n_threads)]
        self.trace = [] if trace else None
        self.running = False
        self._started = False
        self._joined = False
        self._stop = False
        self._abort = False
        self._threads = []
        self._seq = itertools.count()
        # queued tasks + intake actions + bodies mid-execution
        self._pending = 0
        self._pending_lock = threading.Lock()
        self._idle_cv = threading.Condition(self._pending_lock)
        self._errors = []
        if comm is not None:
            comm.idle_fn = self.is_idle

    # bookkeeping

    def _add_pending(self):
        with self._pending_lock:
            self._pending += 1

    def _done_pending(self):
        with self._pending_lock:
            self._pending -= 1
            if self._pending == 0:
                self._idle_cv.notify_all()

    def is_idle(self):
        """True iff no task is queued, running, or waiting in an intake."""
        return self._pending == 0

    def current_thread_id(self):
        """Id of the calling worker in this pool, or None."""
        if getattr(_local, "pool", None) is self:
            return _local.thread_id
        return None

    # insertion

    def insert(self, task, thread=0):
        """Queue ``task`` on worker ``thread``. Callable from any thread."""
        if not 0 <= thread < self.n_threads:
            raise ValueError(f"thread {thread} outside [0, {self.n_threads})")
        if not isinstance(task, Task):
            task = Task(task)
        if self._joined:
            raise RuntimeError("pool has already been joined")
        task.seq = next(self._seq)
        w = self.workers[thread]
        self._add_pending()
        (w.stealable if task.stealable else w.bound).push(task)
        w.wake.set()

    def post(self, thread, action):
        """Run ``action()`` on worker ``thread`` before its next task."""
        w = self.workers[thread]
        self._add_pending()
        w.intake.append(action)
        w.wake.set()

    # scheduling

    def acquire_next(self, w):
        """Pick the next task for worker ``w``: best local head, else one
        steal pass over the other workers' stealable queues."""
        kb = w.bound.head_key()
        ks = w.stealable.head_key()
        if kb is not None or ks is not None:
            # keys are (-priority, seq): smaller runs first
            if ks is None or (kb is not None and kb <= ks):
                first, second = w.bound, w.stealable
            else:
                first, second = w.stealable, w.bound
            task = first.pop()
            if task is None:
                task = second.pop()
            if task is not None:
                return task
        n = self.n_threads
        for off in range(1, n):
            victim = self.workers[(w.thread_id + off) % n]
            if victim.stealable.heap:
                task = victim.stealable.pop()
                if task is not None:
                    w.stolen += 1
                    return task
        return None

    def _drain_intake(self, w):
        while w.intake:
            action = w.intake.popleft()
            try:
                action()
            except BaseException as exc:  # surfaced by join()
                self._fail(exc)
            finally:
                self._done_pending()

    def _fail(self, exc):
        log.error("task raised %r", exc)
        self._errors.append(exc)

    def _run_task(self, w, task):
        w.idle = False
        try:
            if self.trace is not None:
                t0 = time.perf_counter()
                task.body()
                t1 = time.perf_counter()
                self.trace.append((task.label, w.thread_id, t0, t1))
                log.debug("%s thread=%d start=%.6f stop=%.6f", task.label, w.thread_id, t0, t1)
            else:
                task.body()
        except BaseException as exc:
            self._fail(exc)
        finally:
            w.executed += 1
            w.idle = True
            self._done_pending()

    def _worker(self, tid):
        _local.pool = self
        _local.thread_id = tid
        w = self.workers[tid]
        idle_loops = 0
        while True:
            if self._abort:
                return
            if w.intake:
                self._drain_intake(w)
            task = self.acquire_next(w)
            if task is not None:
                self._run_task(w, task)
                idle_loops = 0
                continue
            if self._stop and not w.intake:
                return
            idle_loops += 1
            if idle_loops < self.spin:
                time.sleep(0)
            else:
                # clear, then re-check, so a wake between the two is not lost
                w.wake.clear()
                if not (w.intake or w.bound.heap or w.stealable.heap):
                    w.wake.wait(self.park_timeout)

    # lifecycle

    def start(self):
        if self._started:
            return
        self._started = True
        self.running = True
        for tid in range(self.n_threads):
            th = threading.Thread(
                target=self._worker, args=(tid,), name=f"{self.name or 'pool'}-w{tid}", daemon=True
            )
            self._threads.append(th)
            th.start()

    def join(self):
        """Block until all work, local and distributed, is done."""
        if self._joined:
            return
        self.start()
        try:
            if self.comm is not None:
                self.comm.run(idle_fn=self.is_idle, should_stop=lambda: bool(self._errors))
            if not self._errors:
                with self._idle_cv:
                    while self._pending and not self._errors:
                        self._idle_cv.wait(0.05)
        finally:
            self._stop = True
            self._abort = bool(self._errors)
            for w in self.workers:
                w.wake.set()
            for th in self._threads:
                th.join()
            self.running = False
            self._joined = True
        if self._errors:
            raise self._errors[0]

    @property
    def executed(self):
        return sum(w.executed for w in self.workers)
