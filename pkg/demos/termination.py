# Active messages between loopback ranks and the counting protocol that
# decides when everyone is done.
#
# Each rank is a thread with its own communicator. Rank 0 starts a token
# that hops around the ring a few times; nobody knows in advance when
# the program ends, yet every join() returns once the last hop lands.

import threading

from ptgflow import Communicator, Threadpool, Taskflow, loopback_configure

n_ranks, hops = 4, 12
trace = []
fabric, endpoints = loopback_configure(n_ranks)
seen = [[] for _ in range(n_ranks)]


def rank_main(r):
    comm = Communicator(endpoints[r], trace=trace)
    pool = Threadpool(2, comm=comm)

    def hop(k):
        seen[r].append(k)
        if k + 1 < hops:
            tf.fulfill_remote(k + 1, (r + 1) % n_ranks)

    tf = Taskflow(pool, indegree=lambda k: 1, task=hop, mapping=lambda k: k % 2)
    tf.enable_remote(comm, "i64")
    if r == 0:
        tf.fulfill_promise(0)
    pool.join()


threads = [threading.Thread(target=rank_main, args=(r,)) for r in range(n_ranks)]
for t in threads:
    t.start()
for t in threads:
    t.join()

for r in range(n_ranks):
    print(f"rank {r} handled hops {seen[r]}")

# The protocol messages, as rank 0 saw them. A REQUEST round is only
# confirmed if no rank's counts moved since it reported them.
for rank, direction, msg, extra in trace:
    if rank == 0:
        print(f"  rank 0 {direction:4} {msg}")
