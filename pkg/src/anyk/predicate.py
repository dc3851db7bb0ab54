"""Selection predicates: equality leaves combined with arbitrary AND/OR nesting.

A predicate of ``None`` means "no constraint" throughout the engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Leaf", "And", "Or", "leaves", "eval_records", "eval_leaf_values"]


@dataclass(frozen=True)
class Leaf:
    """Equality test ``attr = value`` against a dimension attribute."""

    attr: str
    value: str


@dataclass(frozen=True)
class And:
    children: tuple

    def __init__(self, *children):
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Or:
    children: tuple

    def __init__(self, *children):
        object.__setattr__(self, "children", tuple(children))


def leaves(pred) -> list[Leaf]:
    """All leaves of the tree in left-to-right order (duplicates kept)."""
    if pred is None:
        return []
    if isinstance(pred, Leaf):
        return [pred]
    out = []
    for child in pred.children:
        out.extend(leaves(child))
    return out


def eval_records(pred, block, schema) -> np.ndarray:
    """Boolean match mask over the records of a decoded block."""
    n = len(block)
    if pred is None:
        return np.ones(n, dtype=bool)
    if isinstance(pred, Leaf):
        code = schema.code_of(pred.attr, pred.value)
        return block[pred.attr] == code
    masks = [eval_records(c, block, schema) for c in pred.children]
    if isinstance(pred, And):
        out = masks[0]
        for m in masks[1:]:
            out = out & m
        return out
    out = masks[0]
    for m in masks[1:]:
        out = out | m
    return out


def eval_leaf_values(pred, values, clamp: bool = True):
    """Evaluate the density-combination algebra with leaves replaced by ``values``.

    ``values`` are consumed in :func:`leaves` order and may be scalars or
    arrays. AND multiplies child densities, OR adds them; with ``clamp`` the
    OR sum is capped at 1.0 so the result stays a fraction. Both forms are
    upper bounds on the true per-block match fraction under independence.
    """
    it = iter(values)
    return _eval(pred, it, clamp)


def _eval(pred, it, clamp):
    if pred is None:
        raise ValueError("cannot evaluate an empty predicate over leaf values")
    if isinstance(pred, Leaf):
        return next(it)
    vals = [_eval(c, it, clamp) for c in pred.children]
    if isinstance(pred, And):
        out = vals[0]
        for v in vals[1:]:
            out = out * v
        return out
    out = vals[0]
    for v in vals[1:]:
        out = out + v
    if clamp:
        out = np.minimum(out, 1.0) if isinstance(out, np.ndarray) else min(out, 1.0)
    return out
