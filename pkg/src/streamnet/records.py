"""Records, type patterns and routing rules.

A record is the unit of stream communication: a set of named *fields*
(opaque payload handles the coordination layer never inspects) plus a set
of named integer *tags* (visible to routing).  Field and tag names live in
disjoint name spaces within one record, and records are immutable once
built, so they can be shared freely between workers.

A ``TypePattern`` names the fields and tags a record must carry to match;
matching is subset-based, so a record with extra names still matches.
Routing between alternatives picks the *best* match: the matching pattern
with the largest number of required names (ties go to the lowest index).
"""

from __future__ import annotations

from typing import Iterable, Mapping, Optional

_EMPTY: dict = {}


class Record:
    """An immutable set of named fields plus named integer tags."""

    __slots__ = ("fields", "tags")

    def __init__(self, fields: Optional[Mapping] = None, tags: Optional[Mapping] = None):
        f = dict(fields) if fields else _EMPTY
        t = dict(tags) if tags else _EMPTY
        if f and t:
            clash = f.keys() & t.keys()
            if clash:
                raise ValueError(f"field/tag name spaces overlap: {sorted(clash)}")
        if t:
            for name, value in t.items():
                if not isinstance(value, int):
                    raise TypeError(f"tag <{name}> must be an integer, got {type(value).__name__}")
        object.__setattr__(self, "fields", f)
        object.__setattr__(self, "tags", t)

    @classmethod
    def _make(cls, fields, tags):
        # Trusted constructor for runtime-internal paths: skips validation.
        rec = object.__new__(cls)
        object.__setattr__(rec, "fields", fields)
        object.__setattr__(rec, "tags", tags)
        return rec

    def __setattr__(self, name, value):
        raise AttributeError("records are immutable")

    def names(self):
        """All field and tag names carried by this record."""
        return self.fields.keys() | self.tags.keys()

    def __contains__(self, name):
        return name in self.fields or name in self.tags

    def __repr__(self):
        fs = ",".join(sorted(self.fields))
        ts = ",".join(f"<{k}={v}>" for k, v in sorted(self.tags.items()))
        return "{%s%s%s}" % (fs, "," if fs and ts else "", ts)


class TypePattern:
    """Names a record must carry to match; an empty pattern matches everything."""

    __slots__ = ("required_fields", "required_tags", "arity")

    def __init__(self, fields: Iterable[str] = (), tags: Iterable[str] = ()):
        rf = frozenset(fields)
        rt = frozenset(tags)
        clash = rf & rt
        if clash:
            raise ValueError(f"pattern field/tag name spaces overlap: {sorted(clash)}")
        object.__setattr__(self, "required_fields", rf)
        object.__setattr__(self, "required_tags", rt)
        object.__setattr__(self, "arity", len(rf) + len(rt))

    def __setattr__(self, name, value):
        raise AttributeError("patterns are immutable")

    def matches(self, rec: Record) -> bool:
        return self.required_fields <= rec.fields.keys() and self.required_tags <= rec.tags.keys()

    def __eq__(self, other):
        return (
            isinstance(other, TypePattern)
            and self.required_fields == other.required_fields
            and self.required_tags == other.required_tags
        )

    def __hash__(self):
        return hash((self.required_fields, self.required_tags))

    def __repr__(self):
        names = sorted(self.required_fields) + [f"<{t}>" for t in sorted(self.required_tags)]
        return "{%s}" % ",".join(names)


def pattern(*fields: str, tags: Iterable[str] = ()) -> TypePattern:
    """Shorthand: ``pattern("A", "L", tags=["k"])``."""
    return TypePattern(fields, tags)


class BoxSignature:
    """Declared input pattern and the set of output patterns a box may emit."""

    __slots__ = ("input", "outputs")

    def __init__(self, input: TypePattern, outputs: Iterable[TypePattern]):
        outs = tuple(outputs)
        if not outs:
            raise ValueError("box signature needs at least one output pattern")
        object.__setattr__(self, "input", input)
        object.__setattr__(self, "outputs", outs)

    def __setattr__(self, name, value):
        raise AttributeError("signatures are immutable")

    def __repr__(self):
        return f"{self.input!r} -> {' | '.join(repr(p) for p in self.outputs)}"


def matches(rec: Record, pat: TypePattern) -> bool:
    """Subset match: every required field and tag name is present in ``rec``."""
    return pat.matches(rec)


def best_match(rec: Record, patterns) -> Optional[int]:
    """Index of the matching pattern with the most required names.

    Ties break to the lowest index; ``None`` when nothing matches (the
    caller decides whether that is a routing error).
    """
    best = None
    best_arity = -1
    for i, pat in enumerate(patterns):
        if pat.arity > best_arity and pat.matches(rec):
            best = i
            best_arity = pat.arity
    return best


def merge_records(a: Record, b: Record) -> Record:
    """Union of two records; on a name collision the first record wins.

    The collision rule is deliberate and documented rather than inherited:
    when a synchrocell merges its slots, slot order determines which entry
    survives a duplicated name.  First-wins keeps the merge deterministic
    and associative when folded left to right.
    """
    if not b.fields and not b.tags:
        return a
    if not a.fields and not a.tags:
        return b
    fields = dict(a.fields)
    tags = dict(a.tags)
    for name, value in b.fields.items():
        if name not in fields and name not in tags:
            fields[name] = value
    for name, value in b.tags.items():
        if name not in tags and name not in fields:
            tags[name] = value
    return Record._make(fields, tags)
