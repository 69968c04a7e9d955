"""Runtime semantics: activation, synchrocells, dynamic instantiation,
feedback, scheduling, bounded streams, and the metrics ledger."""

import pytest

from streamnet import (
    ContractError,
    DeadlockError,
    DivergenceError,
    KernelError,
    NumericError,
    Record,
    RoutingError,
    SyncState,
    activate_box,
    box,
    compile_network,
    feedback,
    parallel,
    pattern,
    run,
    serial,
    split,
    star,
    step_sync,
    sync,
)

from conftest import as_multiset, fn_box, identity_box, rec


def _run(expr, inputs, workers=1, **kw):
    return run(compile_network(expr), inputs, workers=workers, **kw)


# -- boxes -----------------------------------------------------------------


def test_identity_box_one_activation():
    res = _run(identity_box(), [rec({"x": 7})])
    assert [r.fields["x"] for r in res.outputs] == [7]
    assert res.metrics.activations["ident"] == 1


def test_serial_composes():
    expr = serial(fn_box("f", lambda v: v + 1), fn_box("g", lambda v: v * 10))
    res = _run(expr, [rec({"x": 1}), rec({"x": 2})])
    assert sorted(r.fields["x"] for r in res.outputs) == [20, 30]


def test_serial_identity_is_neutral():
    base = fn_box("g", lambda v: v * 10)
    inputs = [rec({"x": v}) for v in (1, 2, 3)]
    alone = _run(base, inputs)
    wrapped = _run(serial(identity_box(), fn_box("g", lambda v: v * 10)), inputs)
    assert as_multiset(alone.outputs) == as_multiset(wrapped.outputs)


def test_box_zero_outputs_legal():
    sink = box("sink", lambda r: [], input=pattern("x"), outputs=[pattern("x")])
    res = _run(sink, [rec({"x": 1})])
    assert res.outputs == []


def test_activate_box_contract_error_names_node():
    bad = box("liar", lambda r: [Record({"y": 1}, {})],
              input=pattern("x"), outputs=[pattern("x")])
    node = compile_network(bad).entry
    with pytest.raises(ContractError) as exc:
        activate_box(node, rec({"x": 1}))
    assert "liar" in str(exc.value)


def test_activate_box_wraps_kernel_failure():
    def boom(r):
        raise ZeroDivisionError("nope")

    node = compile_network(
        box("broken", boom, input=pattern("x"), outputs=[pattern("x")])
    ).entry
    with pytest.raises(KernelError) as exc:
        activate_box(node, rec({"x": 1}))
    assert "broken" in str(exc.value)


def test_numeric_error_passes_unwrapped():
    def bad_pivot(r):
        raise NumericError("non-positive pivot", pivot_index=0)

    expr = box("potrf", bad_pivot, input=pattern("x"), outputs=[pattern("x")])
    with pytest.raises(NumericError):
        _run(expr, [rec({"x": 1})])


def test_pass_through_reattaches_spare_names():
    b = box(
        "consume",
        lambda r: [Record({"y": r.fields["x"] + 1}, {})],
        input=pattern("x"),
        outputs=[pattern("y")],
        pass_through=True,
    )
    res = _run(b, [Record({"x": 1, "keep": "me"}, {"k": 5})])
    (out,) = res.outputs
    assert out.fields["keep"] == "me" and out.tags["k"] == 5


# -- parallel routing ------------------------------------------------------


def _tagger(name, field):
    return box(
        name,
        lambda r, _n=name: [Record(dict(r.fields, via=_n), dict(r.tags))],
        input=pattern(field),
        outputs=[pattern(field, "via")],
    )


def test_parallel_routes_by_pattern():
    expr = parallel([_tagger("a_branch", "A"), _tagger("l_branch", "L")])
    res = _run(expr, [rec({"A": 1}), rec({"L": 2})])
    got = {next(iter(r.fields.keys() & {"A", "L"})): r.fields["via"] for r in res.outputs}
    assert got == {"A": "a_branch", "L": "l_branch"}


def test_parallel_best_match_prefers_larger_pattern():
    small = _tagger("small", "A")
    big = box(
        "big",
        lambda r: [Record(dict(r.fields, via="big"), dict(r.tags))],
        input=pattern("A", "L"),
        outputs=[pattern("A", "L", "via")],
    )
    res = _run(parallel([small, big]), [rec({"A": 1, "L": 2})])
    assert res.outputs[0].fields["via"] == "big"


def test_parallel_no_match_is_routing_error():
    expr = parallel([_tagger("a_branch", "A"), _tagger("l_branch", "L")])
    with pytest.raises(RoutingError):
        _run(expr, [rec({"B": 1})])


# -- star ------------------------------------------------------------------


def _pass_counter():
    def kern(r):
        n = r.tags["n"] + 1
        tags = {"n": n}
        if n >= 3:
            tags["done"] = 1
        return [Record(dict(r.fields), tags)]

    return box("count", kern, input=pattern("x", tags=("n",)),
               outputs=[pattern("x", tags=("n",))])


def test_star_exit_on_arrival_zero_activations():
    s = star(_pass_counter(), exit=pattern(tags=("done",)), name="rep")
    res = _run(s, [Record({"x": 1}, {"n": 0, "done": 1})])
    assert res.outputs[0].tags["n"] == 0
    assert sum(v for k, v in res.metrics.activations.items() if "count" in k) == 0


def test_star_three_passes_three_instances():
    s = star(_pass_counter(), exit=pattern(tags=("done",)), name="rep")
    res = _run(s, [Record({"x": 1}, {"n": 0})])
    assert res.outputs[0].tags["n"] == 3
    assert res.metrics.instances["rep"] == 3


def test_star_every_emission_matches_exit():
    s = star(_pass_counter(), exit=pattern(tags=("done",)), name="rep")
    res = _run(s, [Record({"x": v}, {"n": 0}) for v in range(5)], workers=2)
    assert len(res.outputs) == 5
    assert all("done" in r.tags for r in res.outputs)


def test_star_divergence_cap():
    runaway = box(
        "spin",
        lambda r: [Record(dict(r.fields), {"n": r.tags["n"] + 1})],
        input=pattern("x", tags=("n",)),
        outputs=[pattern("x", tags=("n",))],
    )
    s = star(runaway, exit=pattern(tags=("done",)), max_instances=16, name="lost")
    with pytest.raises(DivergenceError):
        _run(s, [Record({"x": 1}, {"n": 0})])


def test_star_equals_feedback_for_disjoint_cycle():
    # when the recirculated type is the only overlap between input and
    # output, star(b, exit) and feedback(b, back) agree
    def kern(r):
        v = r.tags["n"] + 1
        if v < 3:
            return [Record(dict(r.fields), {"n": v})]
        return [Record(dict(r.fields), {"done": 1})]

    def make():
        return box("walk", kern, input=pattern("x", tags=("n",)),
                   outputs=[pattern("x", tags=("n",)), pattern("x", tags=("done",))])

    inputs = [Record({"x": v}, {"n": 0}) for v in range(4)]
    via_star = _run(star(make(), exit=pattern(tags=("done",)), name="s"), inputs)
    via_fb = _run(feedback(make(), back=pattern(tags=("n",)), name="f"), inputs)
    assert as_multiset(via_star.outputs) == as_multiset(via_fb.outputs)


# -- split -----------------------------------------------------------------


def _branch_stamp():
    # records the branch identity via activation metrics rather than state
    return box(
        "stamp",
        lambda r: [Record(dict(r.fields), dict(r.tags))],
        input=pattern("x", tags=("k",)),
        outputs=[pattern("x", tags=("k",))],
    )


def test_split_same_tag_same_branch():
    expr = split(_branch_stamp(), "k", name="per_k")
    res = _run(expr, [Record({"x": i}, {"k": i % 2}) for i in range(6)])
    assert res.metrics.instances["per_k"] == 2
    assert res.metrics.activations["per_k.stamp"] == 6


def test_split_single_value_acts_as_operand():
    expr = split(_branch_stamp(), "k", name="per_k")
    res = _run(expr, [Record({"x": i}, {"k": 3}) for i in range(4)])
    assert res.metrics.instances["per_k"] == 1
    assert len(res.outputs) == 4


def test_split_n_values_n_branches():
    expr = split(_branch_stamp(), "k", name="per_k")
    res = _run(expr, [Record({"x": i}, {"k": i}) for i in range(5)])
    assert res.metrics.instances["per_k"] == 5


def test_split_missing_tag_routing_error():
    expr = split(_branch_stamp(), "k", name="per_k")
    with pytest.raises(RoutingError):
        _run(expr, [rec({"x": 1})])


# -- feedback --------------------------------------------------------------


def test_feedback_identity_when_back_never_matches():
    expr = feedback(identity_box(), back=pattern(tags=("never",)), name="fb")
    res = _run(expr, [rec({"x": 1}), rec({"x": 2})])
    assert sorted(r.fields["x"] for r in res.outputs) == [1, 2]
    assert res.metrics.recirculations["fb"] == 0


def test_feedback_exact_recirculation_count():
    P = 5

    def kern(r):
        k = r.tags["k"] + 1
        if k < P:
            return [Record({"A": r.fields["A"]}, {"k": k})]
        return [Record({"L": r.fields["A"]}, {"k": k})]

    b = box("step", kern, input=pattern(tags=("k",)),
            outputs=[pattern("A", tags=("k",)), pattern("L", tags=("k",))])
    expr = feedback(b, back=pattern("A"), name="iter")
    res = _run(expr, [Record({"A": "seed"}, {"k": 0})])
    assert res.outputs[0].tags["k"] == P
    assert res.metrics.recirculations["iter"] == P - 1  # k=1..P-1 re-enter


def test_feedback_divergence_cap():
    b = box("again", lambda r: [Record({"A": 1}, {"k": r.tags["k"] + 1})],
            input=pattern(tags=("k",)), outputs=[pattern("A", tags=("k",))])
    expr = feedback(b, back=pattern("A"), max_recirculations=8, name="iter")
    with pytest.raises(DivergenceError):
        _run(expr, [Record({"A": 0}, {"k": 0})])


def test_stateful_feedback_idiom_single_live_state():
    """The stateful-box idiom: star-of-sync plus feedback holds one state.

    A non-repeating synchrocell pairs the {s} state with one {r} job and
    dies; the star supplies a fresh cell per pairing, so jobs that overtake
    the recirculating state park in later instances instead of leaking
    past.  The follower box re-emits the state (looped back) plus a result.
    Exactly one {s} record is live at any time; at quiescence it is parked
    in the next cell, and one result per job has exited.
    """
    pairing = star(
        sync([pattern("s"), pattern("r")], name="cell"),
        exit=pattern("s", "r"),
        name="pair",
    )

    def follow(r):
        total = r.fields["s"] + r.fields["r"]
        return [
            Record({"s": total}, {}),
            Record({"out": total}, {}),
        ]

    fb = box("apply", follow, input=pattern("s", "r"),
             outputs=[pattern("s"), pattern("out")])
    expr = feedback(serial(pairing, fb), back=pattern("s"), name="state")
    jobs = [Record({"r": v}, {}) for v in (1, 2, 3)]
    state = [Record({"s": 0}, {})]
    res = _run(expr, state + jobs, workers=1)
    outs = [r for r in res.outputs if "out" in r.fields]
    assert sorted(r.fields["out"] for r in outs) == [1, 3, 6]
    # the single live state is parked in the freshest cell at quiescence
    assert sum(res.metrics.parked.values()) == 1
    assert res.metrics.activations["apply"] == 3


# -- synchrocell unit rules ------------------------------------------------


def test_sync_merges_in_either_arrival_order():
    st = SyncState([pattern("r"), pattern("s")], repeating=False)
    out, parked = step_sync(st, rec({"s": 2}))
    assert out == [] and parked
    out, parked = step_sync(st, rec({"r": 1}))
    assert not parked and len(out) == 1
    assert set(out[0].fields) == {"r", "s"}


def test_sync_forwards_nonmatching():
    st = SyncState([pattern("r"), pattern("s")], repeating=False)
    out, parked = step_sync(st, rec({"q": 9}))
    assert not parked and out[0].fields["q"] == 9
    assert st.fired_count == 0


def test_sync_nonrepeating_forwards_after_firing():
    st = SyncState([pattern("r"), pattern("s")], repeating=False)
    step_sync(st, rec({"r": 1}))
    step_sync(st, rec({"s": 2}))
    assert st.fired_count == 1 and st.dead
    out, parked = step_sync(st, rec({"r": 3}))
    assert not parked and out[0].fields["r"] == 3


def test_sync_repeating_rearms():
    st = SyncState([pattern("r"), pattern("s")], repeating=True)
    for _ in range(2):
        step_sync(st, rec({"r": 1}))
        (merged,), parked = step_sync(st, rec({"s": 2}))
        assert not parked and set(merged.fields) == {"r", "s"}
    assert st.fired_count == 2 and not st.dead


def test_sync_duplicate_fill_forwards_second():
    st = SyncState([pattern("r"), pattern("s")], repeating=False)
    out, parked = step_sync(st, rec({"r": 1}))
    assert parked
    out, parked = step_sync(st, rec({"r": 2}))
    assert not parked and out[0].fields["r"] == 2  # slot already held the first


def test_sync_ambiguous_record_takes_lowest_slot():
    st = SyncState([pattern("r"), pattern("s")], repeating=False)
    both = rec({"r": 1, "s": 1})
    out, parked = step_sync(st, both)
    assert parked and st.slots[0] is both and st.slots[1] is None


def test_sync_merge_slot_order_first_wins():
    st = SyncState([pattern("r"), pattern("s")], repeating=False)
    step_sync(st, Record({"r": 1}, {"k": 10}))
    (merged,), _ = step_sync(st, Record({"s": 2}, {"k": 99}))
    assert merged.tags["k"] == 10


def test_sync_conservation_in_equals_out():
    st = SyncState([pattern("r"), pattern("s")], repeating=True)
    fed = forwarded = merged_in = 0
    script = [rec({"q": 1}), rec({"r": 1}), rec({"s": 1}), rec({"r": 2}),
              rec({"q": 2}), rec({"s": 2})]
    for r in script:
        fed += 1
        out, parked = step_sync(st, r)
        if out and set(out[0].fields) >= {"r", "s"}:
            merged_in += 2
        elif out:
            forwarded += 1
    assert fed == forwarded + merged_in + st.filled


# -- scheduling, streams, and the ledger -----------------------------------


def test_determinism_across_worker_counts():
    expr = serial(fn_box("f", lambda v: v * 3), fn_box("g", lambda v: v - 1))
    inputs = [rec({"x": v}) for v in range(40)]
    base = as_multiset(_run(expr, inputs, workers=1).outputs)
    for w in (2, 8):
        expr2 = serial(fn_box("f", lambda v: v * 3), fn_box("g", lambda v: v - 1))
        assert as_multiset(_run(expr2, inputs, workers=w).outputs) == base


def test_fifo_single_worker_preserves_order():
    res = _run(identity_box(), [rec({"x": v}) for v in range(10)], workers=1)
    assert [r.fields["x"] for r in res.outputs] == list(range(10))


def test_bounded_stream_deadlock_vs_drain():
    def fan(r):
        return [Record({"x": i}, {}) for i in range(9)]

    def make():
        src = box("fan", fan, input=pattern("x"), outputs=[pattern("x")])
        sink = box("slow", lambda r: [r], input=pattern("x"), outputs=[pattern("x")])
        return serial(src, sink)

    # capacity 8 < 9 outputs: the lone worker blocks mid-activation forever
    with pytest.raises(DeadlockError):
        _run(make(), [rec({"x": 0})], workers=1, capacity=8)
    # a second worker drains the downstream queue; same network completes
    res = _run(make(), [rec({"x": 0})], workers=2, capacity=8)
    assert len(res.outputs) == 9
    assert res.metrics.blocked_puts >= 1


def test_expect_drained_sync_reports_deadlock():
    cell = sync([pattern("r"), pattern("s")], expect_drained=True, name="join")
    with pytest.raises(DeadlockError) as exc:
        _run(cell, [rec({"r": 1})])
    assert "join" in str(exc.value)
    assert exc.value.parked


def test_plain_sync_may_stay_parked():
    cell = sync([pattern("r"), pattern("s")], name="join")
    res = _run(cell, [rec({"r": 1})])
    assert res.outputs == []
    assert res.metrics.parked["join"] == 1


def test_conservation_ledger():
    expr = serial(
        box("dup", lambda r: [r, r], input=pattern("x"), outputs=[pattern("x")]),
        sync([pattern("x", tags=()), pattern("never")], name="hold"),
    )
    res = _run(expr, [rec({"x": 1}), rec({"x": 2})], workers=2)
    m = res.metrics
    assert m.injected + m.produced - m.absorbed == m.emitted + sum(m.parked.values())


def test_metrics_json_stable_keys():
    res = _run(identity_box(), [rec({"x": 1})], workers=2)
    doc = res.metrics.to_json()
    assert set(doc) >= {"nodes", "workers", "records", "instances", "recirculations"}
    assert set(doc["nodes"][0]) == {"node", "activations", "parked"}
    assert set(doc["workers"][0]) == {"worker", "busy_ns", "idle_ns"}
    assert set(doc["records"]) == {"injected", "produced", "absorbed", "emitted", "parked"}


def test_detailed_mode_tracks_peak_live():
    res = _run(
        box("fan", lambda r: [Record({"x": i}, {}) for i in range(5)],
            input=pattern("x"), outputs=[pattern("x")]),
        [rec({"x": 0})],
        detailed=True,
    )
    assert res.metrics.peak_live >= 1
    assert "peak_live" in res.metrics.to_json()
