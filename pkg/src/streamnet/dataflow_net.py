"""The fully data-driven coordination network for tiled Cholesky.

No stage barriers: every tile carries its dependencies in its message
type, synchrocell joins assemble kernel inputs, and a kernel fires the
moment its inputs exist, so step k+1 work overlaps step k work freely.

Message vocabulary (one payload tile per record):

* ``Fac_Akk`` <k> — ready for factorisation
* ``Tri_Ajk`` <k>,<j> — column-k tile of row j awaiting its solve
* ``Tri_Lkk`` <k>,<j> — the factored diagonal, fanned to row j's solve
* ``Sym_Aij`` / ``Sym_Lik`` / ``Sym_Ljk`` <k>,<i>,<j> — the three inputs
  of the rank update of tile (i,j) at step k
* ``Out`` <i>,<j> — a finished factor tile
* ``Result`` <X> — the accumulator state; X counts Out tiles still due

Every internal message also carries the ``Msg`` marker field, so one
feedback loop with back pattern {Msg} recirculates all of them into the
routing core, while Out and Result records fall through to the finalize
loops.  The index combinators replicate each box per distinct (k), (k,j)
or (k,i,j), which is where the concurrency comes from.
"""

from __future__ import annotations

from .combinators import box, feedback, parallel, serial, split, sync
from .engine import StarDispatchNode, compile_network, run
from .errors import ValidationError
from .kernels import potrf_tile, trsm_tile, update_tile
from .records import Record, pattern
from .tiling import assemble, decompose, lower_tiles_to_matrix


def emit_successors(k: int, r: int, p: int):
    """Destinations of the finished column tile L(r, k).

    It serves as the Lik operand for updates in row r (columns k+1..r)
    and as the Ljk operand for updates in column r (rows r..p-1); the
    diagonal update (r, r) receives it in both roles.
    """
    out = [("Sym_Lik", r, j) for j in range(k + 1, r + 1)]
    out.extend(("Sym_Ljk", i, r) for i in range(r, p))
    return out


def _make_start(p):
    x = p * (p + 1) // 2

    def start(rec):
        tiles = rec.fields["M"]
        out = [Record({"Result": {}}, {"X": x})]
        out.append(Record({"Msg": None, "Fac_Akk": tiles[(0, 0)]}, {"k": 0}))
        for j in range(1, p):
            out.append(Record({"Msg": None, "Tri_Ajk": tiles[(j, 0)]}, {"k": 0, "j": j}))
        for j in range(1, p):
            for i in range(j, p):
                out.append(
                    Record({"Msg": None, "Sym_Aij": tiles[(i, j)]}, {"k": 0, "i": i, "j": j})
                )
        return out

    return start


def _make_factor(p):
    def factor(rec):
        k = rec.tags["k"]
        lkk = potrf_tile(rec.fields["Fac_Akk"])
        out = [Record({"Out": lkk}, {"i": k, "j": k})]
        # descending j: a LIFO worker then picks the j=k+1 solve first,
        # the one on the critical path toward enabling iteration k+1
        out.extend(
            Record({"Msg": None, "Tri_Lkk": lkk}, {"k": k, "j": j})
            for j in range(p - 1, k, -1)
        )
        return out

    return factor


def _make_solve(p):
    def solve(rec):
        k, r = rec.tags["k"], rec.tags["j"]
        ljk = trsm_tile(rec.fields["Tri_Lkk"], rec.fields["Tri_Ajk"])
        out = [Record({"Out": ljk}, {"i": r, "j": k})]
        out.extend(
            Record({"Msg": None, role: ljk}, {"k": k, "i": i, "j": j})
            for role, i, j in emit_successors(k, r, p)
        )
        return out

    return solve


def _update(rec):
    k, i, j = rec.tags["k"], rec.tags["i"], rec.tags["j"]
    t = update_tile(rec.fields["Sym_Aij"], rec.fields["Sym_Lik"], rec.fields["Sym_Ljk"])
    if i == j == k + 1:
        return [Record({"Msg": None, "Fac_Akk": t}, {"k": k + 1})]
    if j == k + 1:
        return [Record({"Msg": None, "Tri_Ajk": t}, {"k": k + 1, "j": i})]
    return [Record({"Msg": None, "Sym_Aij": t}, {"k": k + 1, "i": i, "j": j})]


def _collect(rec):
    acc = rec.fields["Result"]
    acc[(rec.tags["i"], rec.tags["j"])] = rec.fields["Out"]
    x = rec.tags["X"] - 1
    if x:
        return [Record({"Result": acc}, {"X": x})]
    return [Record({"Lres": acc})]


def _recycle(rec):
    return [rec]


def build_dataflow_network(p: int, b: int):
    if p < 1:
        raise ValueError("need at least one tile")

    start = box("start", _make_start(p), pattern("M"),
                [pattern("Result", tags=["X"]),
                 pattern("Msg", "Fac_Akk", tags=["k"]),
                 pattern("Msg", "Tri_Ajk", tags=["k", "j"]),
                 pattern("Msg", "Sym_Aij", tags=["k", "i", "j"])], lightweight=True)

    factor = box("InitialFactorization", _make_factor(p), pattern("Fac_Akk", tags=["k"]),
                 [pattern("Out", tags=["i", "j"]),
                  pattern("Msg", "Tri_Lkk", tags=["k", "j"])])
    fac_leg = split(factor, "k", name="fac_k")

    solve_join = sync([pattern("Tri_Ajk", tags=["k", "j"]),
                       pattern("Tri_Lkk", tags=["k", "j"])],
                      expect_drained=True, name="solve_join")
    solve = box("TriangularSolve", _make_solve(p),
                pattern("Tri_Ajk", "Tri_Lkk", tags=["k", "j"]),
                [pattern("Out", tags=["i", "j"]),
                 pattern("Msg", "Sym_Lik", tags=["k", "i", "j"]),
                 pattern("Msg", "Sym_Ljk", tags=["k", "i", "j"])])
    solve_leg = split(split(serial(solve_join, solve), "j", name="solve_j"), "k", name="solve_k")

    upd_join = sync([pattern("Sym_Aij", tags=["k", "i", "j"]),
                     pattern("Sym_Lik", tags=["k", "i", "j"]),
                     pattern("Sym_Ljk", tags=["k", "i", "j"])],
                    expect_drained=True, name="upd_join")
    update = box("SymmetricRankUpdate", _update,
                 pattern("Sym_Aij", "Sym_Lik", "Sym_Ljk", tags=["k", "i", "j"]),
                 [pattern("Msg", "Fac_Akk", tags=["k"]),
                  pattern("Msg", "Tri_Ajk", tags=["k", "j"]),
                  pattern("Msg", "Sym_Aij", tags=["k", "i", "j"])])
    upd_leg = split(split(split(serial(upd_join, update), "j", name="upd_j"),
                          "i", name="upd_i"), "k", name="upd_k")

    core = parallel([fac_leg, solve_leg, upd_leg], name="core")
    mesh = feedback(core, back=pattern("Msg"), name="mesh")
    res_pass = box("res_pass", _recycle, pattern("Result", tags=["X"]),
                   [pattern("Result", tags=["X"])], lightweight=True)
    trunk = parallel([mesh, res_pass], name="trunk")

    fin_cell = sync([pattern("Result", tags=["X"]), pattern("Out", tags=["i", "j"])],
                    repeating=True, name="fin_cell")
    collect = box("Collect", _collect, pattern("Result", "Out", tags=["X", "i", "j"]),
                  [pattern("Result", tags=["X"]), pattern("Lres")], lightweight=True)
    recycle = box("recycle", _recycle, pattern("Out", tags=["i", "j"]),
                  [pattern("Out", tags=["i", "j"])], lightweight=True)
    fin = feedback(
        feedback(serial(fin_cell, parallel([collect, recycle], name="fin_route")),
                 back=pattern("Out"), name="fin_out_loop"),
        back=pattern("Result"),
        name="fin_res_loop",
    )

    return serial(start, trunk, fin)


KERNEL_KEYS = {
    "potrf": "fac_k.InitialFactorization",
    "trsm": "solve_k.solve_j.TriangularSolve",
    "update": "upd_k.upd_i.upd_j.SymmetricRankUpdate",
}


def dataflow_counts(metrics) -> dict:
    act = metrics.activations
    out = {name: act.get(key, 0) for name, key in KERNEL_KEYS.items()}
    out["out_tiles"] = act.get("Collect", 0)
    return out


def run_dataflow(a, n: int, b: int, workers: int = 1, collect_timeline: bool = False):
    """Factor dense ``a``; returns (dense L, info dict with the metrics)."""
    tm = decompose(a, b)
    p = tm.p
    tiles = {(i, j): tm.tile(i, j) for i in range(p) for j in range(i + 1)}
    graph = compile_network(build_dataflow_network(p, b))
    if any(isinstance(node, StarDispatchNode) for node in graph.nodes):
        raise ValidationError("dataflow network must not contain fan-in collectors")
    result = run(
        graph,
        [Record({"M": tiles})],
        workers,
        collect_timeline=collect_timeline,
    )
    (out,) = result.outputs
    l_dense = assemble(lower_tiles_to_matrix(n, b, out.fields["Lres"]))
    counts = dataflow_counts(result.metrics)
    info = {
        "metrics": result.metrics,
        "counts": counts,
        "kernel_activations": counts["potrf"] + counts["trsm"] + counts["update"],
        "barrier_waits": 0,
        "stalls": 0,
    }
    return l_dense, info
