"""The combinator algebra: network expressions and their validation.

Networks are built from single-input single-output pieces:

* ``box`` — a stateless component; one record in, zero or more out.
* ``serial(a, b)`` — output of ``a`` feeds the input of ``b``.
* ``parallel([a, b, ...])`` — records route to the operand whose declared
  input best matches their type.
* ``star(a, exit)`` — serial replication; records cycle through fresh
  copies of ``a`` until they match the exit pattern.
* ``split(a, tag)`` — parallel replication keyed by an integer tag; equal
  tag values always reach the same persistent branch.
* ``feedback(a, back)`` — outputs of ``a`` matching the back pattern
  re-enter its input.
* ``sync([p1, p2, ...])`` — the synchrocell, the only stateful primitive:
  parks one record per slot pattern and emits their merge once full.

Expressions are plain data; :func:`streamnet.engine.compile_network` turns a
validated expression into an executable graph.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

from .errors import ValidationError
from .records import BoxSignature, TypePattern

DEFAULT_REPLICATION_CAP = 10**6

_auto = itertools.count(1)


def _auto_name(kind):
    return f"{kind}{next(_auto)}"


class BoxExpr:
    __slots__ = ("name", "signature", "kernel", "pass_through", "lightweight")

    def __init__(self, name, signature, kernel, pass_through=False, lightweight=False):
        self.name = name
        self.signature = signature
        self.kernel = kernel
        self.pass_through = pass_through
        self.lightweight = lightweight


class SerialExpr:
    __slots__ = ("left", "right")

    def __init__(self, left, right):
        self.left = left
        self.right = right


class ParallelExpr:
    __slots__ = ("name", "operands")

    def __init__(self, operands, name):
        self.name = name
        self.operands = tuple(operands)


class StarExpr:
    __slots__ = ("name", "operand", "exit", "max_instances")

    def __init__(self, operand, exit, max_instances, name):
        self.name = name
        self.operand = operand
        self.exit = exit
        self.max_instances = max_instances


class SplitExpr:
    __slots__ = ("name", "operand", "tag")

    def __init__(self, operand, tag, name):
        self.name = name
        self.operand = operand
        self.tag = tag


class FeedbackExpr:
    __slots__ = ("name", "operand", "back", "max_recirculations")

    def __init__(self, operand, back, max_recirculations, name):
        self.name = name
        self.operand = operand
        self.back = back
        self.max_recirculations = max_recirculations


class SyncExpr:
    __slots__ = ("name", "patterns", "repeating", "expect_drained")

    def __init__(self, patterns, repeating, expect_drained, name):
        self.name = name
        self.patterns = tuple(patterns)
        self.repeating = repeating
        self.expect_drained = expect_drained


NetworkExpr = (BoxExpr, SerialExpr, ParallelExpr, StarExpr, SplitExpr, FeedbackExpr, SyncExpr)


def box(
    name: str,
    kernel: Callable,
    input: TypePattern,
    outputs: Sequence[TypePattern],
    pass_through: bool = False,
    lightweight: bool = False,
) -> BoxExpr:
    """A named box with a declared signature.

    ``kernel`` maps one record to an iterable of output records and must be
    pure.  ``pass_through`` re-attaches input names the signature did not
    consume onto every output.  ``lightweight`` marks plumbing boxes the
    scheduler may run inline instead of as separate tasks.
    """
    return BoxExpr(name, BoxSignature(input, outputs), kernel, pass_through, lightweight)


def serial(first, *rest) -> SerialExpr:
    expr = first
    for nxt in rest:
        expr = SerialExpr(expr, nxt)
    return expr


def parallel(operands: Iterable, name: Optional[str] = None) -> ParallelExpr:
    ops = tuple(operands)
    if len(ops) < 2:
        raise ValidationError("parallel needs at least two operands")
    return ParallelExpr(ops, name or _auto_name("par"))


def star(
    operand,
    exit: TypePattern,
    max_instances: int = DEFAULT_REPLICATION_CAP,
    name: Optional[str] = None,
) -> StarExpr:
    return StarExpr(operand, exit, max_instances, name or _auto_name("star"))


def split(operand, tag: str, name: Optional[str] = None) -> SplitExpr:
    return SplitExpr(operand, tag, name or _auto_name("split"))


def feedback(
    operand,
    back: TypePattern,
    max_recirculations: int = DEFAULT_REPLICATION_CAP,
    name: Optional[str] = None,
) -> FeedbackExpr:
    return FeedbackExpr(operand, back, max_recirculations, name or _auto_name("loop"))


def sync(
    patterns: Sequence[TypePattern],
    repeating: bool = False,
    expect_drained: bool = False,
    name: Optional[str] = None,
) -> SyncExpr:
    """A synchrocell with one slot per pattern.

    ``expect_drained`` marks join cells that must not hold records at
    quiescence; the engine turns leftovers into a deadlock report.
    """
    pats = tuple(patterns)
    if len(pats) < 2:
        raise ValidationError("sync needs at least two slot patterns")
    return SyncExpr(pats, repeating, expect_drained, name or _auto_name("sync"))


def entry_tags(expr) -> frozenset:
    """Tags every record entering ``expr`` is guaranteed to carry.

    Derived from declared signatures; used by the split-tag compile check.
    """
    if isinstance(expr, BoxExpr):
        return expr.signature.input.required_tags
    if isinstance(expr, SerialExpr):
        return entry_tags(expr.left)
    if isinstance(expr, ParallelExpr):
        sets = [entry_tags(op) for op in expr.operands]
        return frozenset.intersection(*sets)
    if isinstance(expr, StarExpr):
        return entry_tags(expr.operand) & expr.exit.required_tags
    if isinstance(expr, SplitExpr):
        return entry_tags(expr.operand)
    if isinstance(expr, FeedbackExpr):
        return entry_tags(expr.operand)
    if isinstance(expr, SyncExpr):
        # The advertised input of a synchrocell is its slots; forwarding of
        # unmatched records is a permissive extra.
        return frozenset.intersection(*(p.required_tags for p in expr.patterns))
    raise TypeError(f"not a network expression: {expr!r}")


def input_patterns(expr) -> tuple:
    """The patterns ``expr`` advertises to a parallel router."""
    if isinstance(expr, BoxExpr):
        return (expr.signature.input,)
    if isinstance(expr, SerialExpr):
        return input_patterns(expr.left)
    if isinstance(expr, ParallelExpr):
        return tuple(p for op in expr.operands for p in input_patterns(op))
    if isinstance(expr, StarExpr):
        return input_patterns(expr.operand) + (expr.exit,)
    if isinstance(expr, (SplitExpr, FeedbackExpr)):
        return input_patterns(expr.operand)
    if isinstance(expr, SyncExpr):
        return expr.patterns
    raise TypeError(f"not a network expression: {expr!r}")


def validate(expr) -> None:
    """Recursive compile-time checks; raises ValidationError naming the culprit."""
    if isinstance(expr, BoxExpr):
        return
    if isinstance(expr, SerialExpr):
        validate(expr.left)
        validate(expr.right)
        return
    if isinstance(expr, ParallelExpr):
        seen = {}
        for i, op in enumerate(expr.operands):
            validate(op)
            for pat in input_patterns(op):
                if pat in seen and seen[pat] != i:
                    raise ValidationError(
                        f"parallel {expr.name!r}: operands {seen[pat]} and {i} both "
                        f"accept {pat!r}; routing would be ambiguous"
                    )
                seen[pat] = i
        return
    if isinstance(expr, StarExpr):
        validate(expr.operand)
        return
    if isinstance(expr, SplitExpr):
        validate(expr.operand)
        if expr.tag not in entry_tags(expr.operand):
            raise ValidationError(
                f"split {expr.name!r} on <{expr.tag}>: operand input does not "
                f"require that tag (has {sorted(entry_tags(expr.operand))})"
            )
        return
    if isinstance(expr, FeedbackExpr):
        validate(expr.operand)
        return
    if isinstance(expr, SyncExpr):
        return
    raise TypeError(f"not a network expression: {expr!r}")
