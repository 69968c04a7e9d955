"""The stage-barrier coordination network for tiled Cholesky.

One iteration record (fields A = remaining trailing tiles, L = finished
factor tiles, tags <k>, <P>, <B>) cycles through a feedback loop whose
body runs three stages in strict order: factor tile (k,k), solve the
column panel, fold the rank updates.  Each work stage fans out per-tile
records and a counting collector (the stateful-feedback idiom: one state
record cycling through a synchrocell star) gathers exactly the expected
number of results before releasing the next stage: that release is the
barrier.  The loop pattern is {A}; after the last update the record still
carries an (empty) A map and recirculates once more, so the gate box can
strip A and let the terminal record escape to finalize.

Stages never overlap by construction; that is the point of this variant,
and the benchmark exposes its cost relative to the dataflow network.
"""

from __future__ import annotations

from .combinators import box, feedback, parallel, serial, split, star, sync
from .engine import DEFAULT_STREAM_CAPACITY, compile_network, run
from .kernels import potrf_tile, trsm_tile, update_tile
from .records import Record, pattern
from .tiling import assemble, decompose, lower_tiles_to_matrix

# Tags carried by the iteration record throughout.
_CTX_TAGS = ("k", "P", "B")


def _carry(rec, extra_fields, **tag_overrides):
    tags = {t: rec.tags[t] for t in _CTX_TAGS}
    tags.update(tag_overrides)
    return Record(extra_fields, tags)


def _k_decompose(rec):
    tiles = rec.fields["M"]
    return [Record({"A": dict(tiles), "L": {}}, {"k": 0, "P": rec.tags["P"], "B": rec.tags["B"]})]


def _k_gate(rec):
    if rec.tags["k"] == rec.tags["P"]:
        return [_carry(rec, {"L": rec.fields["L"]})]
    return [rec]


def _k_factor(rec):
    k, p = rec.tags["k"], rec.tags["P"]
    a, l = rec.fields["A"], rec.fields["L"]
    l[(k, k)] = potrf_tile(a.pop((k, k)))
    marker = "S1" if k < p - 1 else "S1e"
    return [_carry(rec, {marker: None, "A": a, "L": l})]


def _k_fan1(rec):
    k, p = rec.tags["k"], rec.tags["P"]
    a, l = rec.fields["A"], rec.fields["L"]
    lkk = l[(k, k)]
    out = [
        Record({"Ajk": a.pop((j, k)), "Lkk": lkk}, {"k": k, "j": j})
        for j in range(k + 1, p)
    ]
    out.append(_carry(rec, {"G1": None, "A": a, "L": l}, left=len(out)))
    return out


def _k_solve(rec):
    t = trsm_tile(rec.fields["Lkk"], rec.fields["Ajk"])
    return [Record({"T1": t}, {"k": rec.tags["k"], "j": rec.tags["j"]})]


def _k_fold1(rec):
    k = rec.tags["k"]
    a, l = rec.fields["A"], rec.fields["L"]
    l[(rec.tags["j"], k)] = rec.fields["T1"]
    left = rec.tags["left"] - 1
    if left:
        return [_carry(rec, {"G1": None, "A": a, "L": l}, left=left)]
    return [_carry(rec, {"D1": None, "A": a, "L": l})]


def _k_release1(rec):
    return [_carry(rec, {"S2": None, "A": rec.fields["A"], "L": rec.fields["L"]})]


def _k_bypass1(rec):
    return [_carry(rec, {"S2e": None, "A": rec.fields["A"], "L": rec.fields["L"]})]


def _k_fan2(rec):
    k, p = rec.tags["k"], rec.tags["P"]
    a, l = rec.fields["A"], rec.fields["L"]
    out = []
    for j in range(k + 1, p):
        ljk = l[(j, k)]
        for i in range(j, p):
            out.append(
                Record(
                    {"Aij": a.pop((i, j)), "Lik": l[(i, k)], "Ljk": ljk},
                    {"k": k, "i": i, "j": j},
                )
            )
    out.append(_carry(rec, {"G2": None, "A": a, "L": l}, left=len(out)))
    return out


def _k_update(rec):
    u = update_tile(rec.fields["Aij"], rec.fields["Lik"], rec.fields["Ljk"])
    return [Record({"U2": u}, {"k": rec.tags["k"], "i": rec.tags["i"], "j": rec.tags["j"]})]


def _k_fold2(rec):
    a, l = rec.fields["A"], rec.fields["L"]
    a[(rec.tags["i"], rec.tags["j"])] = rec.fields["U2"]
    left = rec.tags["left"] - 1
    if left:
        return [_carry(rec, {"G2": None, "A": a, "L": l}, left=left)]
    return [_carry(rec, {"D2": None, "A": a, "L": l})]


def _k_next(rec):
    return [_carry(rec, {"A": rec.fields["A"], "L": rec.fields["L"]}, k=rec.tags["k"] + 1)]


def _k_finalize(rec):
    return [Record({"Lres": rec.fields["L"]})]


def _passthrough(rec):
    return [rec]


def build_barrier_network(p: int, b: int):
    """The compiled-ready expression; ``p`` sizes the safety caps only.

    All sizing information the boxes need travels on the records as the
    <P> and <B> tags, so the box kernels are closed over nothing.
    """
    if p < 1:
        raise ValueError("need at least one tile")
    ctx = ["k", "P", "B"]

    decomp = box("decompose", _k_decompose, pattern("M", tags=["P", "B"]),
                 [pattern("A", "L", tags=ctx)], lightweight=True)
    gate = box("gate", _k_gate, pattern("L", tags=ctx),
               [pattern("A", "L", tags=ctx), pattern("L", tags=ctx)], lightweight=True)
    factor = box("InitialFactorization", _k_factor, pattern("A", "L", tags=ctx),
                 [pattern("S1", "A", "L", tags=ctx), pattern("S1e", "A", "L", tags=ctx)])
    done_pass = box("done", _passthrough, pattern("L", tags=["k", "P"]),
                    [pattern("L", tags=["k", "P"])], lightweight=True)

    fan1 = box("fan1", _k_fan1, pattern("S1", "A", "L", tags=ctx),
               [pattern("Ajk", "Lkk", tags=["k", "j"]),
                pattern("G1", "A", "L", tags=ctx + ["left"])], lightweight=True)
    solve = box("TriangularSolve", _k_solve, pattern("Ajk", "Lkk", tags=["k", "j"]),
                [pattern("T1", tags=["k", "j"])])
    g1pass = box("g1pass", _passthrough, pattern("G1"), [pattern("G1")], lightweight=True)
    fold1 = box("fold1", _k_fold1, pattern("G1", "T1", "A", "L", tags=["k", "j", "left"]),
                [pattern("G1", "A", "L", tags=ctx + ["left"]),
                 pattern("D1", "A", "L", tags=ctx)], lightweight=True)
    release1 = box("release1", _k_release1, pattern("D1", "A", "L", tags=ctx),
                   [pattern("S2", "A", "L", tags=ctx)], lightweight=True)
    bypass1 = box("bypass1", _k_bypass1, pattern("S1e", "A", "L", tags=ctx),
                  [pattern("S2e", "A", "L", tags=ctx)], lightweight=True)
    collect1 = feedback(
        serial(
            star(sync([pattern("G1"), pattern("T1")], expect_drained=True, name="cell1"),
                 exit=pattern("G1", "T1"), name="gather1"),
            fold1,
        ),
        back=pattern("G1"),
        name="round1",
    )
    stage1 = parallel(
        [serial(fan1, parallel([split(solve, "j", name="trsm_rows"), g1pass], name="route1"),
                collect1, release1),
         bypass1],
        name="stage1",
    )

    fan2 = box("fan2", _k_fan2, pattern("S2", "A", "L", tags=ctx),
               [pattern("Aij", "Lik", "Ljk", tags=["k", "i", "j"]),
                pattern("G2", "A", "L", tags=ctx + ["left"])], lightweight=True)
    update = box("SymmetricRankUpdate", _k_update,
                 pattern("Aij", "Lik", "Ljk", tags=["k", "i", "j"]),
                 [pattern("U2", tags=["k", "i", "j"])])
    g2pass = box("g2pass", _passthrough, pattern("G2"), [pattern("G2")], lightweight=True)
    fold2 = box("fold2", _k_fold2, pattern("G2", "U2", "A", "L", tags=["k", "i", "j", "left"]),
                [pattern("G2", "A", "L", tags=ctx + ["left"]),
                 pattern("D2", "A", "L", tags=ctx)], lightweight=True)
    release2 = box("release2", _k_next, pattern("D2", "A", "L", tags=ctx),
                   [pattern("A", "L", tags=ctx)], lightweight=True)
    bypass2 = box("bypass2", _k_next, pattern("S2e", "A", "L", tags=ctx),
                  [pattern("A", "L", tags=ctx)], lightweight=True)
    collect2 = feedback(
        serial(
            star(sync([pattern("G2"), pattern("U2")], expect_drained=True, name="cell2"),
                 exit=pattern("G2", "U2"), name="gather2"),
            fold2,
        ),
        back=pattern("G2"),
        name="round2",
    )
    stage2 = parallel(
        [serial(fan2,
                parallel([split(split(update, "j", name="upd_cols"), "i", name="upd_rows"),
                          g2pass], name="route2"),
                collect2, release2),
         bypass2],
        name="stage2",
    )

    body = serial(gate, parallel([serial(factor, stage1, stage2), done_pass], name="work"))
    # Recirculation count is exactly p; an exact cap turns any excess into a
    # loud divergence error instead of a hang.
    loop = feedback(body, back=pattern("A"), max_recirculations=p, name="iterate")
    final = box("finalize", _k_finalize, pattern("L", tags=["k", "P"]),
                [pattern("Lres")], lightweight=True)
    return serial(decomp, loop, final)


KERNEL_KEYS = {
    "potrf": "InitialFactorization",
    "trsm": "trsm_rows.TriangularSolve",
    "update": "upd_rows.upd_cols.SymmetricRankUpdate",
}

_BARRIER_KEYS = ("release1", "release2", "bypass1", "bypass2")


def barrier_counts(metrics) -> dict:
    """Logical counters extracted from the metric keys of this network."""
    act = metrics.activations
    out = {name: act.get(key, 0) for name, key in KERNEL_KEYS.items()}
    out["barrier_waits"] = sum(act.get(k, 0) for k in _BARRIER_KEYS)
    out["recirculations"] = metrics.recirculations.get("iterate", 0)
    return out


def run_barrier(a, n: int, b: int, workers: int = 1, collect_timeline: bool = False):
    """Factor dense ``a``; returns (dense L, info dict with the metrics)."""
    tm = decompose(a, b)
    p = tm.p
    tiles = {(i, j): tm.tile(i, j) for i in range(p) for j in range(i + 1)}
    graph = compile_network(build_barrier_network(p, b))
    # One fan-out activation emits a whole stage's records; make sure a
    # single burst can never wedge against the stream bound.
    cap = max(DEFAULT_STREAM_CAPACITY, p * p + 2)
    result = run(
        graph,
        [Record({"M": tiles}, {"P": p, "B": b})],
        workers,
        capacity=cap,
        collect_timeline=collect_timeline,
    )
    (out,) = result.outputs
    l_dense = assemble(lower_tiles_to_matrix(n, b, out.fields["Lres"]))
    counts = barrier_counts(result.metrics)
    info = {
        "metrics": result.metrics,
        "counts": counts,
        "kernel_activations": counts["potrf"] + counts["trsm"] + counts["update"],
        "barrier_waits": counts["barrier_waits"],
        "stalls": 0,
    }
    return l_dense, info
