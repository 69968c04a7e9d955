"""Property tests for the algebraic claims: matching monotonicity,
best-match maximality, merge associativity, serial associativity,
synchrocell conservation, and scheduling determinism."""

from collections import Counter

from hypothesis import given, settings
from hypothesis import strategies as st

from streamnet import (
    Record,
    SyncState,
    box,
    compile_network,
    parallel,
    pattern,
    run,
    serial,
    step_sync,
)
from streamnet.records import best_match, matches, merge_records

from conftest import as_multiset

_NAMES = ("a", "b", "c", "d", "e")

fieldsets = st.sets(st.sampled_from(_NAMES), max_size=4)
records = st.builds(
    lambda fs, ts, v: Record({f: v for f in fs}, {f"t{t}": t for t in ts}),
    fieldsets,
    st.sets(st.integers(0, 3), max_size=3),
    st.integers(-5, 5),
)
patterns = st.builds(
    lambda fs, ts: pattern(*fs, tags=[f"t{t}" for t in ts]),
    fieldsets,
    st.sets(st.integers(0, 3), max_size=2),
)


@given(records, patterns)
def test_matching_monotone(r, p):
    if matches(r, p):
        for f in p.required_fields:
            weaker = pattern(
                *(p.required_fields - {f}), tags=sorted(p.required_tags)
            )
            assert matches(r, weaker)


@given(records, st.lists(patterns, min_size=1, max_size=5))
def test_best_match_is_maximal(r, ps):
    idx = best_match(r, ps)
    matching = [i for i, p in enumerate(ps) if matches(r, p)]
    if idx is None:
        assert not matching
    else:
        assert idx in matching
        top = max(ps[i].arity for i in matching)
        assert ps[idx].arity == top
        assert idx == min(i for i in matching if ps[i].arity == top)


@given(records, records, records)
def test_merge_left_fold_associative(a, b, c):
    lhs = merge_records(merge_records(a, b), c)
    rhs = merge_records(a, merge_records(b, c))
    assert lhs.fields == rhs.fields and lhs.tags == rhs.tags


@given(records, records)
def test_merge_union_of_names(a, b):
    m = merge_records(a, b)
    assert m.names() == a.names() | b.names()
    for name, value in a.fields.items():
        assert m.fields[name] == value  # the first record always survives


# -- serial associativity over random pipelines ----------------------------


def _arith_box(name, spec):
    # spec: list of (mul, add) pairs, one output record per pair
    def kern(r):
        v = r.fields["x"]
        return [Record({"x": v * m + a}, {}) for m, a in spec]

    return box(name, kern, input=pattern("x"), outputs=[pattern("x")],
               lightweight=True)


box_specs = st.lists(
    st.tuples(st.integers(-2, 2), st.integers(-3, 3)), min_size=0, max_size=2
)


@settings(max_examples=40, deadline=None)
@given(box_specs, box_specs, box_specs, st.lists(st.integers(-4, 4), min_size=1, max_size=4))
def test_serial_associative(sa, sb, sc, xs):
    def net(shape):
        a, b, c = _arith_box("a", sa), _arith_box("b", sb), _arith_box("c", sc)
        return serial(serial(a, b), c) if shape else serial(a, serial(b, c))

    inputs = [Record({"x": v}, {}) for v in xs]
    left = run(compile_network(net(True)), inputs)
    right = run(compile_network(net(False)), inputs)
    assert as_multiset(left.outputs) == as_multiset(right.outputs)


# -- synchrocell conservation ----------------------------------------------


slot_lists = st.lists(patterns.filter(lambda p: p.arity > 0), min_size=2, max_size=3)


@settings(max_examples=60, deadline=None)
@given(slot_lists, st.booleans(), st.lists(records, max_size=25))
def test_sync_counts_conserve(slots, repeating, script):
    st_ = SyncState(slots, repeating)
    fed = forwarded = merged_in = 0
    for r in script:
        fed += 1
        out, parked = step_sync(st_, r)
        if parked:
            continue
        (emitted,) = out
        if emitted is r:
            forwarded += 1
        else:
            merged_in += len(slots)
    assert fed == forwarded + merged_in + st_.filled
    assert st_.fired_count * len(slots) == merged_in


# -- determinism across worker counts --------------------------------------


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=12), st.sampled_from([2, 4, 8]))
def test_network_determinism(values, workers):
    def build():
        evens = box(
            "evens",
            lambda r: [Record({"even": r.fields["x"] // 2}, {})],
            input=pattern("x", tags=("even",)),
            outputs=[pattern("even")],
        )
        odds = box(
            "odds",
            lambda r: [Record({"odd": r.fields["x"]}, {}), Record({"odd": -r.fields["x"]}, {})],
            input=pattern("x", tags=("odd",)),
            outputs=[pattern("odd")],
        )
        return parallel([evens, odds], name="route")

    inputs = [
        Record({"x": v}, {"even": 1} if v % 2 == 0 else {"odd": 1}) for v in values
    ]
    base = run(compile_network(build()), inputs, workers=1)
    other = run(compile_network(build()), inputs, workers=workers)
    assert as_multiset(base.outputs) == as_multiset(other.outputs)
