"""Executable networks: compilation, scheduling, and run metrics.

:func:`compile_network` lowers a combinator expression into a graph of node
objects connected by streams.  :func:`run` drives that graph with a pool of
worker threads until quiescence and returns the records that reached the
exit together with a metrics snapshot.

Scheduling model
----------------

Every node owns a lazily created input deque and a tiny state machine
(idle / queued / running) guarded by a per-node lock, which serialises
activations per node without a global scheduler lock.  A "task" is the
obligation to drain one node's queue; at most one task per node exists at
any time.  Workers keep their own task deques (own end LIFO for cache
warmth, steal end FIFO) and steal from each other when idle.

Plumbing nodes (routers, synchrocells, checkers, boxes flagged
``lightweight``) are executed inline in the caller when their queue is
empty, so a record crossing ten coordination hops usually costs ten
function calls rather than ten scheduler round-trips.  Real work (kernel
boxes) is always enqueued, which is where threads buy parallelism.

Streams are soft-bounded: a put into a full queue blocks until the
consumer drains, except on feedback back-edges, which are unbounded and
jump the queue so recirculated records cannot be starved by new arrivals.
"""

from __future__ import annotations

import threading
import time
from collections import deque

from .combinators import (
    BoxExpr,
    FeedbackExpr,
    ParallelExpr,
    SerialExpr,
    SplitExpr,
    StarExpr,
    SyncExpr,
    input_patterns,
    validate,
)
from .errors import (
    ConservationError,
    CoordinationError,
    ContractError,
    DeadlockError,
    DivergenceError,
    KernelError,
    NumericError,
    RoutingError,
    ValidationError,
)
from .records import Record, merge_records

DEFAULT_STREAM_CAPACITY = 4096
TASK_BATCH = 16
MAX_INLINE_DEPTH = 64

_IDLE, _QUEUED, _RUNNING = 0, 1, 2

#: Sentinel target for the network's outermost output stream.
EXIT = object()


class _Aborted(Exception):
    """Internal: unwinds a blocked put after another worker already failed."""


def _pat_str(pat):
    parts = sorted(pat.required_fields) + [f"<{t}>" for t in sorted(pat.required_tags)]
    return "{" + ",".join(parts) + "}"


def _tname(target):
    return "exit" if target is EXIT else target.name


class _Node:
    """Common per-node machinery; subclasses implement ``handle``."""

    __slots__ = (
        "name",
        "metric_key",
        "lock",
        "state",
        "queue",
        "inline_ok",
        "activations",
        "produced",
        "absorbed",
    )

    kind = "node"

    def __init__(self, name, metric_key):
        self.name = name
        self.metric_key = metric_key
        self.lock = threading.Lock()
        self.state = _IDLE
        self.queue = None
        self.inline_ok = True
        self.activations = 0
        self.produced = 0
        self.absorbed = 0

    def handle(self, rec, eng, wctx):
        raise NotImplementedError

    def targets(self):
        return ()

    def describe(self):
        return f"{self.kind} {self.name} -> " + ", ".join(_tname(t) for t in self.targets())


class BoxNode(_Node):
    __slots__ = ("signature", "kernel", "pass_through", "out", "lightweight")

    kind = "box"

    def __init__(self, name, metric_key, signature, kernel, pass_through, lightweight, out):
        super().__init__(name, metric_key)
        self.signature = signature
        self.kernel = kernel
        self.pass_through = pass_through
        self.lightweight = lightweight
        self.out = out
        self.inline_ok = lightweight

    def targets(self):
        return (self.out,)

    def handle(self, rec, eng, wctx):
        self.activations += 1
        want_time = eng.timeline is not None and not self.lightweight
        t0 = time.perf_counter_ns() if want_time else 0
        outs = activate_box(self, rec)
        if want_time:
            t1 = time.perf_counter_ns()
            wctx.timeline.append((self.metric_key, rec.tags, t0, t1))
        self.absorbed += 1
        self.produced += len(outs)
        for out in outs:
            eng.send(self.out, out, wctx)

    def describe(self):
        sig = self.signature
        outs = " ".join(_pat_str(p) for p in sig.outputs)
        extra = " pass" if self.pass_through else ""
        return (
            f"box {self.name} in={_pat_str(sig.input)} out=[{outs}]{extra}"
            f" -> {_tname(self.out)}"
        )


def activate_box(node: BoxNode, rec):
    """One stateless box activation: check, invoke, contract-check, pass through.

    Returns the finished output records without sending them; the scheduler
    layers delivery and accounting on top.
    """
    sig = node.signature
    if not sig.input.matches(rec):
        raise RoutingError(f"box {node.name!r} received non-matching record {rec!r}")
    try:
        outs = list(node.kernel(rec))
    except (CoordinationError, NumericError):
        raise
    except Exception as exc:
        raise KernelError(f"box {node.name!r}: {exc}") from exc
    if node.pass_through:
        spare_f = {k: v for k, v in rec.fields.items() if k not in sig.input.required_fields}
        spare_t = {k: v for k, v in rec.tags.items() if k not in sig.input.required_tags}
        spare = Record._make(spare_f, spare_t) if (spare_f or spare_t) else None
    else:
        spare = None
    out_pats = sig.outputs
    for pos, out in enumerate(outs):
        ok = False
        for pat in out_pats:
            if pat.matches(out):
                ok = True
                break
        if not ok:
            raise ContractError(
                f"box {node.name!r} emitted {out!r}, which matches none of its "
                f"declared outputs"
            )
        if spare is not None:
            outs[pos] = merge_records(out, spare)
    return outs


class SyncState:
    """The synchrocell's slot store, isolated for direct unit testing.

    ``step`` returns ``("forwarded", rec)``, ``("parked", None)`` or
    ``("fired", merged)``.  A record is parked in the lowest-index empty
    slot whose pattern it matches; with all slots full the cell emits the
    slot merge (slot order, earlier slots win on clashes).  A non-repeating
    cell is dead after firing and forwards everything.
    """

    __slots__ = ("patterns", "repeating", "slots", "filled", "dead", "fired_count")

    def __init__(self, patterns, repeating):
        self.patterns = tuple(patterns)
        self.repeating = repeating
        self.slots = [None] * len(self.patterns)
        self.filled = 0
        self.dead = False
        self.fired_count = 0

    def step(self, rec):
        if self.dead:
            return ("forwarded", rec)
        slots = self.slots
        idx = -1
        for i, pat in enumerate(self.patterns):
            if slots[i] is None and pat.matches(rec):
                idx = i
                break
        if idx < 0:
            return ("forwarded", rec)
        slots[idx] = rec
        self.filled += 1
        if self.filled < len(slots):
            return ("parked", None)
        merged = slots[0]
        for other in slots[1:]:
            merged = merge_records(merged, other)
        self.fired_count += 1
        self.slots = [None] * len(slots)
        self.filled = 0
        if not self.repeating:
            self.dead = True
        return ("fired", merged)


def step_sync(state: SyncState, rec):
    """Feed one record to a synchrocell; returns (emitted records, parked?)."""
    what, payload = state.step(rec)
    if what == "parked":
        return [], True
    return [payload], False


class SyncNode(_Node):
    __slots__ = ("cell", "expect_drained", "out", "n_slots")

    kind = "sync"

    def __init__(self, name, metric_key, patterns, repeating, expect_drained, out):
        super().__init__(name, metric_key)
        self.cell = SyncState(patterns, repeating)
        self.expect_drained = expect_drained
        self.out = out
        self.n_slots = len(patterns)

    @property
    def dead(self):
        return self.cell.dead

    def targets(self):
        return (self.out,)

    def handle(self, rec, eng, wctx):
        self.activations += 1
        what, payload = self.cell.step(rec)
        if what == "parked":
            return
        if what == "fired":
            self.absorbed += self.n_slots
            self.produced += 1
        eng.send(self.out, payload, wctx)

    def describe(self):
        slots = " ".join(_pat_str(p) for p in self.cell.patterns)
        rep = "yes" if self.cell.repeating else "no"
        return f"sync {self.name} slots=[{slots}] repeating={rep} -> {_tname(self.out)}"


class RouterNode(_Node):
    """Entry of a parallel composition: best-match routing over branch inputs."""

    __slots__ = ("table",)

    kind = "parallel"

    def __init__(self, name, metric_key, table):
        super().__init__(name, metric_key)
        self.table = tuple(table)  # (pattern, entry node), flattened branch order

    def targets(self):
        seen = []
        for _, entry in self.table:
            if entry not in seen:
                seen.append(entry)
        return tuple(seen)

    def handle(self, rec, eng, wctx):
        self.activations += 1
        best = None
        best_arity = -1
        for pat, entry in self.table:
            if pat.arity > best_arity and pat.matches(rec):
                best = entry
                best_arity = pat.arity
        if best is None:
            raise RoutingError(f"router {self.name!r}: no branch accepts {rec!r}")
        eng.send(best, rec, wctx)

    def describe(self):
        legs = "; ".join(f"{_pat_str(p)}=>{e.name}" for p, e in self.table)
        return f"parallel {self.name} [{legs}]"


class _StarState:
    """Shared state of one star: its instance chain and creation bookkeeping."""

    __slots__ = ("name", "exit", "cap", "builder", "instances", "lock", "skippable", "first_live")

    def __init__(self, name, exit, cap, skippable):
        self.name = name
        self.exit = exit
        self.cap = cap
        self.builder = None  # set by the compiler
        self.instances = []
        self.lock = threading.Lock()
        self.skippable = skippable
        self.first_live = 0

    def instance_at(self, idx):
        with self.lock:
            while idx >= len(self.instances):
                if len(self.instances) >= self.cap:
                    raise DivergenceError(
                        f"star {self.name!r} exceeded its instance cap of {self.cap}"
                    )
                self.instances.append(self.builder(len(self.instances)))
        return self.instances[idx]


class StarDispatchNode(_Node):
    """Exit check in front of star instance ``start`` (0 = the star's entry).

    Non-exit records go to the first live instance at or after ``start``;
    instances of a bare-synchrocell body are skipped once dead, since a dead
    cell forwards everything unchanged.
    """

    __slots__ = ("star", "start", "out")

    kind = "star"

    def __init__(self, name, metric_key, star, start, out):
        super().__init__(name, metric_key)
        self.star = star
        self.start = start
        self.out = out

    def targets(self):
        return (self.out,)

    def handle(self, rec, eng, wctx):
        self.activations += 1
        star = self.star
        if star.exit.matches(rec):
            eng.send(self.out, rec, wctx)
            return
        idx = self.start
        if star.skippable:
            if idx < star.first_live:
                idx = star.first_live
            instances = star.instances
            n = len(instances)
            while idx < n and instances[idx].dead:
                idx += 1
            if self.start == 0 and idx > star.first_live:
                star.first_live = idx
        eng.send(star.instance_at(idx), rec, wctx)

    def describe(self):
        role = "entry" if self.start == 0 else f"check#{self.start}"
        return (
            f"star {self.name} ({role}) exit={_pat_str(self.star.exit)}"
            f" -> {_tname(self.out)}"
        )


class _SplitState:
    __slots__ = ("name", "tag", "builder", "table", "lock")

    def __init__(self, name, tag):
        self.name = name
        self.tag = tag
        self.builder = None
        self.table = {}
        self.lock = threading.Lock()

    def branch_for(self, val):
        entry = self.table.get(val)
        if entry is None:
            with self.lock:
                entry = self.table.get(val)
                if entry is None:
                    entry = self.builder(val)
                    self.table[val] = entry
        return entry


class SplitDispatchNode(_Node):
    __slots__ = ("split", "out")

    kind = "split"

    def __init__(self, name, metric_key, split, out):
        super().__init__(name, metric_key)
        self.split = split
        self.out = out

    def targets(self):
        return (self.out,)

    def handle(self, rec, eng, wctx):
        self.activations += 1
        val = rec.tags.get(self.split.tag)
        if val is None:
            raise RoutingError(
                f"split {self.name!r}: record lacks index tag <{self.split.tag}>: {rec!r}"
            )
        eng.send(self.split.branch_for(val), rec, wctx)

    def describe(self):
        return f"split {self.name} tag=<{self.split.tag}> -> {_tname(self.out)}"


class FeedbackCheckNode(_Node):
    """Output gate of a feedback loop: back-matches re-enter with priority."""

    __slots__ = ("back", "loop_entry", "out", "cap", "recirculations")

    kind = "loop"

    def __init__(self, name, metric_key, back, cap, out):
        super().__init__(name, metric_key)
        self.back = back
        self.loop_entry = None  # set by the compiler
        self.out = out
        self.cap = cap
        self.recirculations = 0

    def targets(self):
        return (self.loop_entry, self.out)

    def handle(self, rec, eng, wctx):
        self.activations += 1
        if self.back.matches(rec):
            self.recirculations += 1
            if self.recirculations > self.cap:
                raise DivergenceError(
                    f"feedback {self.name!r} exceeded its recirculation cap of {self.cap}"
                )
            eng.send(self.loop_entry, rec, wctx, front=True)
        else:
            eng.send(self.out, rec, wctx)

    def describe(self):
        return (
            f"loop {self.name} back={_pat_str(self.back)}"
            f" -> {_tname(self.loop_entry)} | {_tname(self.out)}"
        )


class NetworkGraph:
    """A compiled network: entry node plus the full node inventory."""

    def __init__(self):
        self.entry = None
        self.nodes = []
        self._names = set()
        self._lock = threading.Lock()
        self._stars = []
        self._splits = []
        self._loops = []
        self._ran = False

    def _add_static(self, node):
        if node.name in self._names:
            raise ValidationError(f"duplicate node name {node.name!r}")
        self._names.add(node.name)
        self.nodes.append(node)
        return node

    def _add_dynamic(self, node):
        with self._lock:
            self.nodes.append(node)
        return node

    def all_nodes(self):
        with self._lock:
            return list(self.nodes)

    def node_count(self):
        """Static node count (dynamic star/split instances excluded)."""
        return self._static_count

    def stream_count(self):
        """Static stream count: the entry stream plus each node's out-edges."""
        return self._static_streams

    def describe(self):
        lines = [
            f"nodes={self._static_count} streams={self._static_streams}",
            f"entry -> {self.entry.name}",
        ]
        lines.extend(node.describe() for node in self.nodes[: self._static_count])
        return "\n".join(lines)


class _Compiler:
    def __init__(self, graph):
        self.graph = graph

    def build(self, expr, down, npfx, mpfx, dynamic=False):
        """Wire ``expr`` toward ``down``; returns the entry node."""
        g = self.graph
        add = g._add_dynamic if dynamic else g._add_static
        if isinstance(expr, BoxExpr):
            node = BoxNode(
                npfx + expr.name,
                mpfx + expr.name,
                expr.signature,
                expr.kernel,
                expr.pass_through,
                expr.lightweight,
                down,
            )
            return add(node)
        if isinstance(expr, SerialExpr):
            right = self.build(expr.right, down, npfx, mpfx, dynamic)
            return self.build(expr.left, right, npfx, mpfx, dynamic)
        if isinstance(expr, ParallelExpr):
            table = []
            for op in expr.operands:
                entry = self.build(op, down, npfx, mpfx, dynamic)
                table.extend((pat, entry) for pat in input_patterns(op))
            return add(RouterNode(npfx + expr.name, mpfx + expr.name, table))
        if isinstance(expr, SyncExpr):
            node = SyncNode(
                npfx + expr.name,
                mpfx + expr.name,
                expr.patterns,
                expr.repeating,
                expr.expect_drained,
                down,
            )
            return add(node)
        if isinstance(expr, FeedbackExpr):
            check = FeedbackCheckNode(
                npfx + expr.name + ".check",
                mpfx + expr.name + ".check",
                expr.back,
                expr.max_recirculations,
                down,
            )
            add(check)
            g._loops.append(check)
            entry = self.build(expr.operand, check, npfx, mpfx, dynamic)
            check.loop_entry = entry
            return entry
        if isinstance(expr, StarExpr):
            skippable = isinstance(expr.operand, SyncExpr)
            star = _StarState(npfx + expr.name, expr.exit, expr.max_instances, skippable)
            g._stars.append(star)
            mbase = mpfx + expr.name

            def make_instance(idx, _expr=expr, _star=star, _mbase=mbase, _down=down):
                chk = StarDispatchNode(
                    f"{_star.name}#{idx}.check", f"{_mbase}.check", _star, idx + 1, _down
                )
                self.graph._add_dynamic(chk)
                return self.build(
                    _expr.operand, chk, f"{_star.name}#{idx}.", f"{_mbase}.", dynamic=True
                )

            star.builder = make_instance
            return add(StarDispatchNode(npfx + expr.name, mbase, star, 0, down))
        if isinstance(expr, SplitExpr):
            split = _SplitState(npfx + expr.name, expr.tag)
            g._splits.append(split)
            mbase = mpfx + expr.name

            def make_branch(val, _expr=expr, _split=split, _mbase=mbase, _down=down):
                return self.build(
                    _expr.operand, _down, f"{_split.name}[{val}].", f"{_mbase}.", dynamic=True
                )

            split.builder = make_branch
            return add(SplitDispatchNode(npfx + expr.name, mbase, split, down))
        raise TypeError(f"not a network expression: {expr!r}")


def compile_network(expr) -> NetworkGraph:
    """Validate ``expr`` and lower it to an executable graph.

    Graphs hold run state (synchrocell slots, replication tables, counters)
    and are therefore single-use: compile a fresh graph per run.
    """
    validate(expr)
    graph = NetworkGraph()
    graph.entry = _Compiler(graph).build(expr, EXIT, "", "")
    graph._static_count = len(graph.nodes)
    graph._static_streams = 1 + sum(len(n.targets()) for n in graph.nodes)
    return graph


class _WorkerCtx:
    __slots__ = ("index", "deque", "depth", "busy_ns", "idle_ns", "timeline")

    def __init__(self, index):
        self.index = index
        self.deque = deque()
        self.depth = 0
        self.busy_ns = 0
        self.idle_ns = 0
        self.timeline = []


class RunMetrics:
    """Aggregated observability snapshot for one run.

    Per-node counters are keyed by metric key, which is the template path:
    all instances of a replicated subnet fold into one entry.
    """

    def __init__(self):
        self.activations = {}
        self.parked = {}
        self.injected = 0
        self.produced = 0
        self.absorbed = 0
        self.emitted = 0
        self.recirculations = {}
        self.instances = {}
        self.blocked_puts = 0
        self.worker_busy_ns = []
        self.worker_idle_ns = []
        self.elapsed_ns = 0
        self.workers = 0
        self.peak_live = None
        self.timeline = None

    def to_json(self):
        doc = {
            "nodes": [
                {"node": k, "activations": self.activations[k], "parked": self.parked.get(k, 0)}
                for k in sorted(self.activations)
            ],
            "workers": [
                {"worker": i, "busy_ns": b, "idle_ns": d}
                for i, (b, d) in enumerate(zip(self.worker_busy_ns, self.worker_idle_ns))
            ],
            "records": {
                "injected": self.injected,
                "produced": self.produced,
                "absorbed": self.absorbed,
                "emitted": self.emitted,
                "parked": sum(self.parked.values()),
            },
            "instances": dict(sorted(self.instances.items())),
            "recirculations": dict(sorted(self.recirculations.items())),
            "blocked_puts": self.blocked_puts,
            "elapsed_ns": self.elapsed_ns,
        }
        if self.peak_live is not None:
            doc["peak_live"] = self.peak_live
        return doc


class RunResult:
    __slots__ = ("outputs", "metrics")

    def __init__(self, outputs, metrics):
        self.outputs = outputs
        self.metrics = metrics


class _Engine:
    def __init__(self, graph, workers, capacity, detailed, collect_timeline):
        if workers < 1:
            raise ValidationError("need at least one worker")
        self.graph = graph
        self.n_workers = workers
        self.capacity = capacity
        self.detailed = detailed
        self.timeline = [] if collect_timeline else None

        self.plock = threading.Lock()
        self.work_cond = threading.Condition(self.plock)
        self.done_cond = threading.Condition(self.plock)
        self.pending = 0
        self.idle_workers = 0

        self.bp_cond = threading.Condition()
        self.bp_waiters = 0
        self.blocked_workers = 0
        self.blocked_puts = 0

        self.inbox = deque()
        self.results = []
        self.injected = 0
        self.stop_flag = False
        self.error = None

        self.wctxs = [_WorkerCtx(i) for i in range(workers)]
        self.threads = []

        self._live = 0
        self._peak_live = 0
        self._live_lock = threading.Lock() if detailed else None

    # -- record movement ---------------------------------------------------

    def send(self, target, rec, wctx, front=False):
        if target is EXIT:
            self.results.append(rec)
            if self._live_lock is not None:
                with self._live_lock:
                    self._live -= 1
            return
        if (
            wctx is not None
            and target.inline_ok
            and wctx.depth < MAX_INLINE_DEPTH
        ):
            target.lock.acquire()
            if target.state == _IDLE and not target.queue:
                target.state = _RUNNING
                target.lock.release()
                wctx.depth += 1
                try:
                    self._activate(target, rec, wctx)
                finally:
                    wctx.depth -= 1
                    target.lock.acquire()
                    if target.queue:
                        target.state = _QUEUED
                        target.lock.release()
                        self._push_task(target, wctx)
                    else:
                        target.state = _IDLE
                        target.lock.release()
                return
            self._deliver_locked(target, rec, wctx, front)
            return
        target.lock.acquire()
        self._deliver_locked(target, rec, wctx, front)

    def _deliver_locked(self, node, rec, wctx, front):
        # Called with node.lock held; releases it.
        q = node.queue
        if q is None:
            q = node.queue = deque()
        if front:
            q.appendleft(rec)
        elif len(q) >= self.capacity:
            node.lock.release()
            self._blocking_put(node, rec, wctx)
            return
        else:
            q.append(rec)
        if node.state == _IDLE:
            node.state = _QUEUED
            node.lock.release()
            self._push_task(node, wctx)
        else:
            node.lock.release()

    def _blocking_put(self, node, rec, wctx):
        with self.bp_cond:
            self.bp_waiters += 1
            self.blocked_puts += 1
            if wctx is not None:
                self.blocked_workers += 1
        suspect = False
        try:
            while True:
                if self.stop_flag:
                    raise _Aborted
                schedule = None
                with node.lock:
                    q = node.queue
                    if len(q) < self.capacity:
                        q.append(rec)
                        schedule = node.state == _IDLE
                        if schedule:
                            node.state = _QUEUED
                if schedule is not None:
                    if schedule:
                        self._push_task(node, wctx)
                    return
                if self._put_deadlocked(wctx):
                    if suspect:
                        raise DeadlockError(
                            f"stream into {node.name!r} is full and no worker can "
                            f"drain it (bounded-capacity deadlock)"
                        )
                    suspect = True  # confirm on the next pass
                else:
                    suspect = False
                with self.bp_cond:
                    self.bp_cond.wait(0.01)
        finally:
            with self.bp_cond:
                self.bp_waiters -= 1
                if wctx is not None:
                    self.blocked_workers -= 1

    def _put_deadlocked(self, wctx):
        if wctx is None:
            # Injection context: stuck iff no worker holds or can obtain work.
            return self.pending == 0 and self.blocked_workers == 0
        if self.blocked_workers >= self.n_workers:
            return True
        if self.blocked_workers + self.idle_workers >= self.n_workers:
            if self.inbox:
                return False
            return all(not w.deque for w in self.wctxs)
        return False

    # -- task scheduling ---------------------------------------------------

    def _push_task(self, node, wctx):
        with self.plock:
            self.pending += 1
            if wctx is not None:
                wctx.deque.append(node)
            else:
                self.inbox.append(node)
            if self.idle_workers:
                self.work_cond.notify()

    def _task_done(self):
        with self.plock:
            self.pending -= 1
            if self.pending == 0:
                self.done_cond.notify_all()

    def _next_task(self, wctx):
        own = wctx.deque
        n = self.n_workers
        while True:
            if self.stop_flag:
                return None
            try:
                return own.pop()
            except IndexError:
                pass
            try:
                return self.inbox.popleft()
            except IndexError:
                pass
            for k in range(1, n):
                other = self.wctxs[(wctx.index + k) % n]
                try:
                    return other.deque.popleft()
                except IndexError:
                    continue
            t0 = time.perf_counter_ns()
            with self.plock:
                self.idle_workers += 1
                self.work_cond.wait(0.001)
                self.idle_workers -= 1
            wctx.idle_ns += time.perf_counter_ns() - t0

    def _worker_main(self, wctx):
        try:
            while True:
                node = self._next_task(wctx)
                if node is None:
                    return
                self._run_task(node, wctx)
        except BaseException as exc:  # pragma: no cover - defensive
            self._fail(exc)

    def _run_task(self, node, wctx):
        t0 = time.perf_counter_ns()
        budget = TASK_BATCH
        try:
            while True:
                with node.lock:
                    q = node.queue
                    if not q:
                        node.state = _IDLE
                        self._task_done()
                        return
                    rec = q.popleft()
                    node.state = _RUNNING
                if self.bp_waiters:
                    with self.bp_cond:
                        self.bp_cond.notify_all()
                try:
                    self._activate(node, rec, wctx)
                except BaseException as exc:
                    self._fail(exc)
                    self._task_done()
                    return
                budget -= 1
                if budget == 0:
                    with node.lock:
                        if node.queue:
                            node.state = _QUEUED
                            wctx.deque.append(node)  # task continues; pending unchanged
                            return
                        node.state = _IDLE
                    self._task_done()
                    return
        finally:
            wctx.busy_ns += time.perf_counter_ns() - t0

    def _activate(self, node, rec, wctx):
        if self._live_lock is not None:
            before = node.produced - node.absorbed
            node.handle(rec, self, wctx)
            delta = node.produced - node.absorbed - before
            if delta:
                with self._live_lock:
                    self._live += delta
                    if self._live > self._peak_live:
                        self._peak_live = self._live
        else:
            node.handle(rec, self, wctx)

    def _fail(self, exc):
        with self.plock:
            if self.error is None:
                self.error = exc
            self.stop_flag = True
            self.done_cond.notify_all()
            self.work_cond.notify_all()
        with self.bp_cond:
            self.bp_cond.notify_all()

    # -- run driver --------------------------------------------------------

    def run(self, inputs):
        graph = self.graph
        if graph._ran:
            raise ValidationError("graph already run once; compile a fresh network")
        graph._ran = True
        for wctx in self.wctxs:
            t = threading.Thread(
                target=self._worker_main, args=(wctx,), name=f"streamnet-w{wctx.index}", daemon=True
            )
            self.threads.append(t)
        t_start = time.perf_counter_ns()
        for t in self.threads:
            t.start()
        try:
            try:
                for rec in inputs:
                    if self.stop_flag:
                        break
                    self.injected += 1
                    if self._live_lock is not None:
                        with self._live_lock:
                            self._live += 1
                            if self._live > self._peak_live:
                                self._peak_live = self._live
                    graph.entry.lock.acquire()
                    self._deliver_locked(graph.entry, rec, None, False)
            except _Aborted:
                pass  # a worker failed while we were blocked; its error wins
            with self.plock:
                while self.pending > 0 and self.error is None:
                    self.done_cond.wait(0.05)
        finally:
            with self.plock:
                self.stop_flag = True
                self.work_cond.notify_all()
            with self.bp_cond:
                self.bp_cond.notify_all()
            for t in self.threads:
                t.join()
        elapsed = time.perf_counter_ns() - t_start
        if self.error is not None:
            raise self.error
        return self._finish(elapsed)

    def _finish(self, elapsed):
        nodes = self.graph.all_nodes()
        stuck = []
        for node in nodes:
            if isinstance(node, SyncNode) and node.expect_drained and node.cell.filled:
                held = [r for r in node.cell.slots if r is not None]
                stuck.append((node.name, held))
        if stuck:
            names = ", ".join(f"{n} ({len(h)} held)" for n, h in stuck)
            raise DeadlockError(
                f"network quiescent with undrained synchronisation cells: {names}",
                parked=stuck,
            )

        m = RunMetrics()
        parked_total = 0
        for node in nodes:
            key = node.metric_key
            m.activations[key] = m.activations.get(key, 0) + node.activations
            m.produced += node.produced
            m.absorbed += node.absorbed
            if isinstance(node, SyncNode) and node.cell.filled:
                m.parked[key] = m.parked.get(key, 0) + node.cell.filled
                parked_total += node.cell.filled
        m.injected = self.injected
        m.emitted = len(self.results)
        m.blocked_puts = self.blocked_puts
        m.worker_busy_ns = [w.busy_ns for w in self.wctxs]
        m.worker_idle_ns = [w.idle_ns for w in self.wctxs]
        m.elapsed_ns = elapsed
        m.workers = self.n_workers
        for star in self.graph._stars:
            m.instances[star.name] = len(star.instances)
        for split in self.graph._splits:
            m.instances[split.name] = len(split.table)
        for loop in self.graph._loops:
            key = loop.metric_key
            if key.endswith(".check"):
                key = key[: -len(".check")]
            m.recirculations[key] = m.recirculations.get(key, 0) + loop.recirculations
        if self._live_lock is not None:
            m.peak_live = self._peak_live
        if self.timeline is not None:
            for w in self.wctxs:
                self.timeline.extend(w.timeline)
            self.timeline.sort(key=lambda e: e[2])
            m.timeline = self.timeline

        balance = self.injected + m.produced - m.absorbed
        if balance != m.emitted + parked_total:
            raise ConservationError(
                f"record ledger out of balance: injected {self.injected} + produced "
                f"{m.produced} - absorbed {m.absorbed} = {balance}, but emitted "
                f"{m.emitted} + parked {parked_total} = {m.emitted + parked_total}"
            )
        return RunResult(self.results, m)


def run(
    graph: NetworkGraph,
    inputs,
    workers: int = 1,
    *,
    capacity: int = DEFAULT_STREAM_CAPACITY,
    detailed: bool = False,
    collect_timeline: bool = False,
) -> RunResult:
    """Drive ``graph`` with ``inputs`` until quiescence.

    ``capacity`` bounds every stream except feedback back-edges.  With
    ``detailed`` the engine additionally tracks the peak number of live
    records (a small per-activation cost).  ``collect_timeline`` records
    (node, tags, start_ns, end_ns) spans for every non-lightweight box
    activation into ``result.metrics.timeline``.
    """
    return _Engine(graph, workers, capacity, detailed, collect_timeline).run(inputs)
