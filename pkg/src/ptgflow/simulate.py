"""Deterministic multi-rank simulation of the communication layer.

Real :class:`~ptgflow.messaging.Communicator` objects are driven from a
single thread over a :class:`~ptgflow.transport.LoopbackFabric` with
random delays. Each rank gets a toy worker whose tasks take a few ticks
and send user active messages; handlers insert new tasks while a global
message budget lasts. Because everything runs in one thread, the global
state seen at the moment rank 0 decides to shut down is exact, which is
what the oracle checks.
"""

import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .completion import Confirmation, Request
from .messaging import Communicator
from .transport import LoopbackFabric


@dataclass
class SimResult:
    seed: int
    n_ranks: int
    budget: int
    shutdown: bool = False
    passes: int = 0
    ticks: int = 0
    sent: int = 0
    handled: int = 0
    rounds: int = 0
    violations: list = field(default_factory=list)
    causality_errors: int = 0
    counts_stable: bool = None
    trace: list = None

    @property
    def ok(self):
        return self.shutdown and not self.violations and not self.causality_errors


class _Worker:
    __slots__ = ("queue", "current", "end")

    def __init__(self):
        self.queue = deque()
        self.current = None
        self.end = 0

    @property
    def idle(self):
        return self.current is None and not self.queue


def simulate(
    n_ranks,
    n_messages,
    seed,
    max_delay=100,
    max_passes=10**6,
    large_fraction=0.2,
    max_task_ticks=5,
    trace=False,
):
    """Run one randomized workload to completion and audit it.

    Returns a :class:`SimResult`; ``violations`` lists every oracle
    failure observed when rank 0 decided to shut down.
    """
    rng = random.Random(seed)
    fabric = LoopbackFabric(n_ranks, delay=(0, max_delay), seed=rng.getrandbits(32))
    res = SimResult(seed=seed, n_ranks=n_ranks, budget=n_messages)
    res.trace = [] if trace else None
    workers = [_Worker() for _ in range(n_ranks)]
    state = {"budget": n_messages}
    sent_stamp = {}
    comms = []

    def oracle():
        problems = []
        busy = [r for r, w in enumerate(workers) if not w.idle]
        if busy:
            problems.append(f"ranks {busy} not idle")
        if res.sent != res.handled:
            problems.append(f"{res.sent - res.handled} user AMs in flight")
        tq = sum(c.counters.queued for c in comms)
        tp = sum(c.counters.processed for c in comms)
        if tq != tp:
            problems.append(f"sum queued {tq} != sum processed {tp}")
        if res.handled != n_messages_sent_total():
            problems.append("handled count disagrees with budget accounting")
        if problems:
            res.violations.append((fabric.clock, problems))
        res.shutdown = True

    def n_messages_sent_total():
        return n_messages - state["budget"]

    def on_user(rank, uid):
        # handler-side bookkeeping shared by small and large AMs
        if fabric.next_stamp() <= sent_stamp.pop(uid):
            res.causality_errors += 1
        res.handled += 1
        if state["budget"] > 0 or rng.random() < 0.3:
            workers[rank].queue.append(rng.randint(0, 3))

    for r in range(n_ranks):
        comm = Communicator(
            fabric.endpoint(r),
            trace=res.trace,
            on_shutdown_sent=oracle if r == 0 else None,
        )
        comm.idle_fn = (lambda w: lambda: w.idle)(workers[r])
        small = comm.register_am((lambda rank: lambda uid: on_user(rank, uid))(r), ["u64"])
        inbox = {}

        def alloc(uid, n, inbox=inbox):
            buf = np.empty(n, dtype=np.uint8)
            inbox[uid] = buf
            return buf

        def process(uid, n, rank=r, inbox=inbox):
            buf = inbox.pop(uid)
            if buf.size != n or (n and int(buf[0]) != uid % 251):
                res.violations.append((fabric.clock, [f"corrupt large body {uid}"]))
            on_user(rank, uid)

        large = comm.register_large_am(alloc, process, signature=["u64", "u64"])
        comm.ams = (small, large)
        comms.append(comm)

    def send_some(rank, k):
        small, large = comms[rank].ams
        for _ in range(k):
            if state["budget"] <= 0:
                return
            if comms[rank].shutdown:
                # only reachable when shutdown came too early
                res.violations.append((fabric.clock, [f"rank {rank} sends after shutdown"]))
                return
            state["budget"] -= 1
            uid = res.sent
            res.sent += 1
            dest = rng.randrange(n_ranks)
            if rng.random() < large_fraction:
                n = rng.randint(0, 64)
                body = np.full(n, uid % 251, dtype=np.uint8)
                large.send(dest, body, uid, n)
            else:
                small.send(dest, uid)
            sent_stamp[uid] = fabric.next_stamp()

    # seed tasks
    if n_messages:
        for _ in range(rng.randint(1, 2 * n_ranks)):
            workers[rng.randrange(n_ranks)].queue.append(rng.randint(1, 3))

    order = list(range(n_ranks))
    while True:
        moved = False
        rng.shuffle(order)
        for r in order:
            w = workers[r]
            if w.current is not None and fabric.clock >= w.end:
                send_some(r, w.current)
                w.current = None
                moved = True
            if w.current is None and w.queue:
                w.current = w.queue.popleft()
                w.end = fabric.clock + rng.randint(0, max_task_ticks)
                moved = True
            if not comms[r].finished:
                moved |= comms[r].progress()
                res.passes += 1
        # every SHUTDOWN has landed; leftover sends (possible only after a
        # premature shutdown) have no receiver to complete them
        if all(c.shutdown for c in comms):
            break
        if res.passes >= max_passes:
            break
        if moved:
            fabric.tick()
        else:
            # jump to the next event instead of spinning idle ticks
            upcoming = [w.end for w in workers if w.current is not None]
            due = fabric.next_due()
            if due is not None:
                upcoming.append(due)
            if not upcoming:
                res.violations.append((fabric.clock, ["deadlock: no pending event"]))
                break
            fabric.clock = max(fabric.clock + 1, min(upcoming))
    res.ticks = fabric.clock
    res.rounds = comms[0].completion.root.round
    if res.handled != res.sent:
        res.violations.append((fabric.clock, ["messages lost after shutdown"]))
    if trace:
        res.counts_stable = confirmed_counts_match(res.trace, res.rounds, n_ranks)
    return res


def confirmed_counts_match(trace, final_round, n_ranks):
    """For the round that ended the run, the counts each rank reported
    (carried back in REQUEST) equal its counts when it confirmed."""
    requested = {}
    confirmed = {}
    for rank, direction, msg, extra in trace:
        if direction == "recv" and isinstance(msg, Request) and msg.round == final_round:
            requested[rank] = (msg.queued, msg.processed)
        if direction == "send" and isinstance(msg, Confirmation) and msg.round == final_round:
            confirmed[rank] = extra
    if set(requested) != set(range(n_ranks)) or set(confirmed) != set(range(n_ranks)):
        return False
    return all(requested[r] == confirmed[r] for r in range(n_ranks))
