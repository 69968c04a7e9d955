"""A tuple-space coordination engine in the Concurrent-Collections style.

Three kinds of collections make up a graph: item collections (keyed,
single-assignment data), tag collections (sets of control tuples), and
step collections (computations, each prescribed by exactly one tag
collection: putting a tag creates one instance of every step it
prescribes).  The environment seeds items and tags, runs the graph to
quiescence, then reads result items back.

Two scheduling modes coexist, chosen per step:

* untuned — an instance is runnable as soon as it is prescribed.  A get
  of an unavailable item aborts the attempt, discards its tentative puts,
  counts one stall, and parks the instance until the missing item
  arrives, which requeues it (counted as a retry).
* tuned — the step declares a ``depends`` function mapping its tag to
  the exact item keys it will read; the scheduler holds the instance
  back until all of them are available, so it never stalls.

Steps buffer their puts and commit them atomically on success, which is
what makes abort-and-retry safe under single-assignment.

Termination is valid only if every prescribed instance has executed;
anything less raises `InvalidTerminationError` naming the leftovers.
"""

from __future__ import annotations

import threading
from collections import deque

import numpy as np

from .errors import InvalidTerminationError, NumericError, SingleAssignmentError
from .kernels import potrf_tile, trsm_tile, update_tile

_WAITING, _QUEUED, _RUNNING, _STALLED, _DONE = range(5)


class _Unavailable(Exception):
    __slots__ = ("collection", "key")

    def __init__(self, collection, key):
        self.collection = collection
        self.key = key


def _same_value(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(a, b)
    return a == b


class ItemCollection:
    __slots__ = ("name", "store")

    def __init__(self, name):
        self.name = name
        self.store = {}


class TagCollection:
    __slots__ = ("name", "tags", "prescribes")

    def __init__(self, name):
        self.name = name
        self.tags = set()
        self.prescribes = []


class StepCollection:
    __slots__ = ("name", "fn", "depends")

    def __init__(self, name, fn, depends=None):
        self.name = name
        self.fn = fn
        self.depends = depends


class _Instance:
    __slots__ = ("step", "tag", "state", "missing", "stall_count")

    def __init__(self, step, tag):
        self.step = step
        self.tag = tag
        self.state = _WAITING
        self.missing = 0
        self.stall_count = 0


class StepContext:
    """Handed to a step function: gets read committed state, puts are buffered."""

    __slots__ = ("_graph", "item_puts", "tag_puts")

    def __init__(self, graph):
        self._graph = graph
        self.item_puts = []
        self.tag_puts = []

    def get(self, collection: str, key):
        store = self._graph.items[collection].store
        try:
            return store[key]
        except KeyError:
            raise _Unavailable(collection, key) from None

    def put_item(self, collection: str, key, value):
        self.item_puts.append((collection, key, value))

    def put_tag(self, collection: str, key):
        self.tag_puts.append((collection, key))


class CncMetrics:
    __slots__ = ("steps_executed", "steps_stalled", "retries", "puts", "executed_by_step")

    def __init__(self):
        self.steps_executed = 0
        self.steps_stalled = 0
        self.retries = 0
        self.puts = {}
        self.executed_by_step = {}

    def to_json(self):
        return {
            "steps_executed": self.steps_executed,
            "steps_stalled": self.steps_stalled,
            "retries": self.retries,
            "puts": dict(sorted(self.puts.items())),
            "executed_by_step": dict(sorted(self.executed_by_step.items())),
        }


class CncGraph:
    """Collections plus the run state; build, seed via puts, run once."""

    def __init__(self):
        self.items = {}
        self.tag_collections = {}
        self.steps = {}
        self.metrics = CncMetrics()
        self._instances = {}
        self._ready = deque()
        self._watchers = {}
        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._pending = 0
        self._error = None
        self._stop = False
        self._ran = False

    # -- construction ------------------------------------------------------

    def add_item_collection(self, name) -> ItemCollection:
        coll = ItemCollection(name)
        self.items[name] = coll
        self.metrics.puts[name] = 0
        return coll

    def add_tag_collection(self, name) -> TagCollection:
        coll = TagCollection(name)
        self.tag_collections[name] = coll
        self.metrics.puts[name] = 0
        return coll

    def add_step(self, name, fn, prescribed_by: str, depends=None) -> StepCollection:
        step = StepCollection(name, fn, depends)
        self.steps[name] = step
        self.tag_collections[prescribed_by].prescribes.append(step)
        self.metrics.executed_by_step[name] = 0
        return step

    # -- environment interface --------------------------------------------

    def put_item(self, collection: str, key, value):
        with self._lock:
            self._commit_item(collection, key, value)

    def put_tag(self, collection: str, key):
        with self._lock:
            self._commit_tag(collection, key)

    def item(self, collection: str) -> dict:
        return self.items[collection].store

    # -- committed mutations (lock held) -----------------------------------

    def _commit_item(self, collection, key, value):
        store = self.items[collection].store
        if key in store:
            if not _same_value(store[key], value):
                raise SingleAssignmentError(
                    f"item {collection}{key!r} written twice with different values"
                )
            self.metrics.puts[collection] += 1
            return
        store[key] = value
        self.metrics.puts[collection] += 1
        for kind, inst in self._watchers.pop((collection, key), ()):
            if kind == "dep":
                inst.missing -= 1
                if inst.missing == 0:
                    self._enqueue(inst)
            else:  # stalled; the awaited item just arrived
                self.metrics.retries += 1
                self._enqueue(inst)

    def _commit_tag(self, collection, key):
        coll = self.tag_collections[collection]
        if key in coll.tags:
            self.metrics.puts[collection] += 1
            return  # idempotent: no second instance
        coll.tags.add(key)
        self.metrics.puts[collection] += 1
        for step in coll.prescribes:
            inst = _Instance(step, key)
            self._instances[(step.name, key)] = inst
            if step.depends is None:
                self._enqueue(inst)
            else:
                missing = 0
                for dep_coll, dep_key in step.depends(key):
                    if dep_key not in self.items[dep_coll].store:
                        missing += 1
                        self._watchers.setdefault((dep_coll, dep_key), []).append(("dep", inst))
                inst.missing = missing
                if missing == 0:
                    self._enqueue(inst)

    def _enqueue(self, inst):
        inst.state = _QUEUED
        self._pending += 1
        self._ready.append(inst)
        self._cv.notify_all()

    # -- execution ---------------------------------------------------------

    def _worker(self):
        while True:
            with self._cv:
                while not self._ready and not self._stop:
                    self._cv.wait(0.05)
                if self._stop:
                    return
                inst = self._ready.popleft()
                inst.state = _RUNNING
            ctx = StepContext(self)
            try:
                inst.step.fn(inst.tag, ctx)
            except _Unavailable as miss:
                with self._cv:
                    self.metrics.steps_stalled += 1
                    inst.stall_count += 1
                    if miss.key in self.items[miss.collection].store:
                        # The item landed while we were aborting; retry now.
                        self.metrics.retries += 1
                        inst.state = _QUEUED
                        self._ready.append(inst)
                        self._cv.notify_all()
                    else:
                        inst.state = _STALLED
                        self._watchers.setdefault(
                            (miss.collection, miss.key), []
                        ).append(("stall", inst))
                        self._pending -= 1
                        if self._pending == 0:
                            self._cv.notify_all()
            except BaseException as exc:
                with self._cv:
                    if self._error is None:
                        self._error = exc
                    self._stop = True
                    self._cv.notify_all()
                return
            else:
                with self._cv:
                    try:
                        for coll, key, value in ctx.item_puts:
                            self._commit_item(coll, key, value)
                        for coll, key in ctx.tag_puts:
                            self._commit_tag(coll, key)
                    except BaseException as exc:
                        if self._error is None:
                            self._error = exc
                        self._stop = True
                        self._cv.notify_all()
                        return
                    inst.state = _DONE
                    self.metrics.steps_executed += 1
                    self.metrics.executed_by_step[inst.step.name] += 1
                    self._pending -= 1
                    if self._pending == 0:
                        self._cv.notify_all()


def run_cnc(graph: CncGraph, workers: int = 1) -> CncMetrics:
    """Run to quiescence; raises on step failure or invalid termination."""
    if workers < 1:
        raise ValueError("need at least one worker")
    if graph._ran:
        raise ValueError("graph already run once; build and seed a fresh one")
    graph._ran = True
    threads = [
        threading.Thread(target=graph._worker, name=f"cnc-w{i}", daemon=True)
        for i in range(workers)
    ]
    for t in threads:
        t.start()
    try:
        with graph._cv:
            while graph._pending > 0 and graph._error is None:
                graph._cv.wait(0.05)
    finally:
        with graph._cv:
            graph._stop = True
            graph._cv.notify_all()
        for t in threads:
            t.join()
    if graph._error is not None:
        raise graph._error
    leftover = [
        (inst.step.name, inst.tag)
        for inst in graph._instances.values()
        if inst.state != _DONE
    ]
    if leftover:
        shown = ", ".join(f"{n}{t!r}" for n, t in sorted(leftover)[:8])
        more = "" if len(leftover) <= 8 else f" (+{len(leftover) - 8} more)"
        raise InvalidTerminationError(
            f"{len(leftover)} prescribed step(s) never executed: {shown}{more}",
            unexecuted=leftover,
        )
    return graph.metrics


# -- the Cholesky graph ----------------------------------------------------
#
# Item keys for Lkji are (k, j, i): version, column, row — version k is the
# state of tile (i, j) before step k's update; version j+1 of column j is
# final.  Control steps fan the tag space out exactly as the kernels need.


def _s_k_compute(tag, ctx):
    p = ctx.get("p", ())
    for k in range(p):
        ctx.put_tag("k_tags", (k,))


def _s_kj_compute(tag, ctx):
    (k,) = tag
    p = ctx.get("p", ())
    for j in range(k + 1, p):
        ctx.put_tag("kj_tags", (k, j))


def _s_kji_compute(tag, ctx):
    k, j = tag
    p = ctx.get("p", ())
    for i in range(j, p):
        ctx.put_tag("kji_tags", (k, j, i))


def _s_factor(tag, ctx):
    (k,) = tag
    ctx.get("b", ())
    akk = ctx.get("Lkji", (k, k, k))
    try:
        lkk = potrf_tile(akk)
    except NumericError as exc:
        exc.location = (k, k, k)
        raise
    ctx.put_item("Lkji", (k + 1, k, k), lkk)


def _s_solve(tag, ctx):
    k, j = tag
    ctx.get("b", ())
    lkk = ctx.get("Lkji", (k + 1, k, k))
    ajk = ctx.get("Lkji", (k, k, j))
    try:
        ljk = trsm_tile(lkk, ajk)
    except NumericError as exc:
        exc.location = (k, j, k)
        raise
    ctx.put_item("Lkji", (k + 1, k, j), ljk)


def _s_update(tag, ctx):
    k, j, i = tag
    ctx.get("b", ())
    aij = ctx.get("Lkji", (k, j, i))
    lik = ctx.get("Lkji", (k + 1, k, i))
    ljk = ctx.get("Lkji", (k + 1, k, j))
    ctx.put_item("Lkji", (k + 1, j, i), update_tile(aij, lik, ljk))


def _d_singleton(tag):
    return [("p", ())]


def _d_factor(tag):
    k = tag[0]
    return [("b", ()), ("Lkji", (k, k, k))]


def _d_solve(tag):
    k, j = tag
    return [("b", ()), ("Lkji", (k + 1, k, k)), ("Lkji", (k, k, j))]


def _d_update(tag):
    k, j, i = tag
    return [
        ("b", ()),
        ("Lkji", (k, j, i)),
        ("Lkji", (k + 1, k, i)),
        ("Lkji", (k + 1, k, j)),
    ]


def build_cholesky_cnc(tuned: bool) -> CncGraph:
    """The factorization graph; size-agnostic (p and b arrive as items)."""
    g = CncGraph()
    g.add_item_collection("Lkji")
    g.add_item_collection("b")
    g.add_item_collection("p")
    g.add_tag_collection("singleton")
    g.add_tag_collection("k_tags")
    g.add_tag_collection("kj_tags")
    g.add_tag_collection("kji_tags")
    dep = lambda f: f if tuned else None  # noqa: E731
    g.add_step("k_compute", _s_k_compute, "singleton", depends=dep(_d_singleton))
    g.add_step("kj_compute", _s_kj_compute, "k_tags", depends=dep(_d_singleton))
    g.add_step("kji_compute", _s_kji_compute, "kj_tags", depends=dep(_d_singleton))
    g.add_step("InitialFactorization", _s_factor, "k_tags", depends=dep(_d_factor))
    g.add_step("TriangularSolve", _s_solve, "kj_tags", depends=dep(_d_solve))
    g.add_step("SymmetricRankUpdate", _s_update, "kji_tags", depends=dep(_d_update))
    return g


def run_cholesky_cnc(a, n: int, b: int, workers: int = 1, tuned: bool = False):
    """Factor dense ``a`` through the tuple-space engine.

    Returns (dense L, info dict).  The environment seeds version-0 tiles,
    p, b and the singleton tag, runs to quiescence, then collects the
    final version of every lower tile.
    """
    from .tiling import assemble, decompose, lower_tiles_to_matrix

    tm = decompose(a, b)
    p = tm.p
    g = build_cholesky_cnc(tuned)
    g.put_item("p", (), p)
    g.put_item("b", (), b)
    for i in range(p):
        for j in range(i + 1):
            g.put_item("Lkji", (0, j, i), tm.tile(i, j))
    g.put_tag("singleton", ())
    metrics = run_cnc(g, workers)
    store = g.item("Lkji")
    tiles = {(i, j): store[(j + 1, j, i)] for i in range(p) for j in range(i + 1)}
    l_dense = assemble(lower_tiles_to_matrix(n, b, tiles))
    kernels = sum(
        metrics.executed_by_step[name]
        for name in ("InitialFactorization", "TriangularSolve", "SymmetricRankUpdate")
    )
    info = {
        "metrics": metrics,
        "counts": dict(metrics.executed_by_step),
        "kernel_activations": kernels,
        "barrier_waits": 0,
        "stalls": metrics.steps_stalled,
    }
    return l_dense, info
