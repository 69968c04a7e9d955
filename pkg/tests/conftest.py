"""Shared helpers: tiny arithmetic boxes and multiset comparison."""

from collections import Counter

from streamnet import Record, box, pattern


def rec(fields=None, **tags):
    return Record(fields or {}, tags)


def as_multiset(records):
    """Records as a hashable multiset (fields and tags by value)."""
    return Counter(
        (frozenset(r.fields.items()), frozenset(r.tags.items())) for r in records
    )


def identity_box(name="ident", field="x"):
    return box(
        name,
        lambda r: [r],
        input=pattern(field),
        outputs=[pattern(field)],
        lightweight=True,
    )


def fn_box(name, fn, field="x"):
    """Box mapping {x: v} -> {x: fn(v)}; keeps any tags off the output."""
    return box(
        name,
        lambda r: [Record({field: fn(r.fields[field])}, {})],
        input=pattern(field),
        outputs=[pattern(field)],
        lightweight=True,
    )
