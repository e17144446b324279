# A first task flow: a 1D stencil-ish chain on a thread pool.
#
# Tasks are never stored up front. The flow only knows functions of a
# key: how many promises a key waits for, what it runs, and which
# thread owns it. A key comes to life on its first fulfill.

from ptgflow import Taskflow, Threadpool

pool = Threadpool(4)
n_steps, width = 6, 8
log = []


def body(key):
    step, i = key
    log.append(key)
    if step + 1 < n_steps:
        # each cell feeds itself and its two neighbours at the next step
        for j in (i - 1, i, i + 1):
            if 0 <= j < width:
                tf.fulfill_promise((step + 1, j))


def indegree(key):
    step, i = key
    if step == 0:
        return 1
    return 1 + (i > 0) + (i < width - 1)


tf = Taskflow(
    pool,
    indegree=indegree,
    task=body,
    mapping=lambda key: key[1] % pool.n_threads,
    priority=lambda key: -key[0],  # older steps first
    name=lambda key: f"cell{key}",
)

for i in range(width):
    tf.fulfill_promise((0, i))
pool.join()

print(f"{len(log)} tasks ran ({n_steps * width} expected)")
# steps overlap: a cell only waits for its own three inputs
pos = {key: n for n, key in enumerate(log)}
ok = all(
    pos[(s - 1, j)] < pos[(s, i)]
    for (s, i) in log
    if s
    for j in (i - 1, i, i + 1)
    if 0 <= j < width
)
print("every cell ran after its inputs:", ok)
print("steps overlapped:", [s for s, _ in log] != sorted(s for s, _ in log))
print("stolen by idle threads:", sum(w.stolen for w in pool.workers))
