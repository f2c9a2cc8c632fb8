"""Exact bit spaces: positions, position sets, cylinder functions and
conditional expectation under the fair-coin measure.

A bit array is indexed by ``Position(row, col)``.  The one-dimensional space
of bit sequences embeds as row 0 and the space of sequences of sequences uses
the row index as "time".
"""
from __future__ import annotations

import json
import math
import numbers
import operator
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Callable, Iterable, Mapping, NamedTuple

import numpy as np

DEFAULT_SUPPORT_CAP = 20
_SCAN_LIMIT = 1 << 20


class SupportCapError(ValueError):
    """Raised when a table would exceed the configured support cap."""


class Position(NamedTuple):
    """Index of a bit.  Tuple ordering is the lexicographic order."""

    row: int
    col: int


def as_position(p) -> Position:
    r, c = p
    if r < 0 or c < 0:
        raise ValueError(f"negative position {p!r}")
    return Position(int(r), int(c))


def check_cap(n: int, cap: int | None) -> None:
    cap = DEFAULT_SUPPORT_CAP if cap is None else cap
    if n > cap:
        raise SupportCapError(f"support of size {n} exceeds cap {cap}")


def to_rational(v) -> Fraction:
    if type(v) is Fraction:
        return v
    if isinstance(v, bool):
        return Fraction(int(v))
    if isinstance(v, (numbers.Rational, str)):
        return Fraction(v)
    raise TypeError(f"exact rational expected, got {type(v).__name__}: {v!r}")


# ---------------------------------------------------------------------------
# position sets


class PositionSet:
    """A decidable set of positions, the "past" for conditional expectation.

    Subclasses define membership and the relabeling used by :func:`concat`:
    ``complement_position(i, j)`` sends tail coordinate ``(i, j)`` to a
    position outside the set, ``complement_index`` is its inverse.
    """

    def __contains__(self, p) -> bool:
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError

    # Generic relabeling: every row of the complement is infinite, tail row i
    # goes to row i and tail columns fill the gaps left to right.
    def complement_position(self, i: int, j: int) -> Position:
        seen = 0
        for c in range(_SCAN_LIMIT):
            if Position(i, c) not in self:
                if seen == j:
                    return Position(i, c)
                seen += 1
        raise ValueError(f"row {i} of the complement is too sparse to relabel")

    def complement_index(self, p: Position) -> Position:
        if p in self:
            raise ValueError(f"{p} is not in the complement")
        return Position(p.row, sum(1 for c in range(p.col) if Position(p.row, c) not in self))

    def members_in(self, positions: Iterable[Position]) -> list[Position]:
        return [p for p in positions if p in self]


@dataclass(frozen=True)
class RowPrefix(PositionSet):
    """All positions in rows ``< n`` (the past at row time ``n``)."""

    n: int

    def __contains__(self, p) -> bool:
        return p[0] < self.n

    def complement_position(self, i, j):
        return Position(self.n + i, j)

    def complement_index(self, p):
        if p in self:
            raise ValueError(f"{p} is not in the complement")
        return Position(p.row - self.n, p.col)

    def to_json(self):
        return {"rows": self.n}


@dataclass(frozen=True)
class LexPrefix(PositionSet):
    """All positions lexicographically before ``(row, col)``."""

    row: int
    col: int

    @property
    def position(self) -> Position:
        return Position(self.row, self.col)

    def __contains__(self, p) -> bool:
        return tuple(p) < (self.row, self.col)

    def complement_position(self, i, j):
        if i == 0:
            return Position(self.row, self.col + j)
        return Position(self.row + i, j)

    def complement_index(self, p):
        if p in self:
            raise ValueError(f"{p} is not in the complement")
        if p.row == self.row:
            return Position(0, p.col - self.col)
        return Position(p.row - self.row, p.col)

    def to_json(self):
        return {"lex": [self.row, self.col]}


@dataclass(frozen=True)
class BelowFunction(PositionSet):
    """``A_f = {(m, n) : f(m) > n}``, or ``B_f = {(m, n) : f(m) <= n}`` when
    ``complemented``.  ``f`` is given by a finite table plus a default."""

    thresholds: tuple = ()
    default: int = 0
    complemented: bool = False

    def __post_init__(self):
        table = self.thresholds
        if isinstance(table, Mapping):
            table = table.items()
        object.__setattr__(self, "thresholds", tuple(sorted((int(m), int(t)) for m, t in table)))

    def f(self, m: int) -> int:
        return dict(self.thresholds).get(m, self.default)

    def __contains__(self, p) -> bool:
        above = self.f(p[0]) > p[1]
        return above != self.complemented

    def complement(self) -> "BelowFunction":
        return BelowFunction(self.thresholds, self.default, not self.complemented)

    def complement_position(self, i, j):
        if not self.complemented:
            return Position(i, self.f(i) + j)
        # complement is A_f, finite in every row: tail is a plain sequence
        if i != 0:
            raise ValueError("the complement of B_f is sequence-indexed; use row 0")
        seen = 0
        for m in range(_SCAN_LIMIT):
            width = self.f(m)
            if seen + width > j:
                return Position(m, j - seen)
            seen += width
            if m > max((r for r, _ in self.thresholds), default=0) and self.default == 0:
                break
        raise ValueError(f"A_f has fewer than {j + 1} positions")

    def complement_index(self, p):
        if p in self:
            raise ValueError(f"{p} is not in the complement")
        if not self.complemented:
            return Position(p.row, p.col - self.f(p.row))
        return Position(0, sum(self.f(m) for m in range(p.row)) + p.col)

    def rank(self, p: Position) -> int:
        """Number of members lexicographically before ``p`` (finite rows only)."""
        if self.complemented:
            raise ValueError("B_f has infinite rows; rank is undefined")
        return sum(self.f(m) for m in range(p.row)) + min(p.col, self.f(p.row))

    def to_json(self):
        return {
            "below": [list(t) for t in self.thresholds],
            "default": self.default,
            "complemented": self.complemented,
        }


@dataclass(frozen=True)
class Explicit(PositionSet):
    positions: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "positions", frozenset(as_position(p) for p in self.positions))

    def __contains__(self, p) -> bool:
        return Position(*p) in self.positions

    def rank(self, p: Position) -> int:
        return sum(1 for q in self.positions if q < p)

    def to_json(self):
        return {"explicit": [list(p) for p in sorted(self.positions)]}


@dataclass(frozen=True)
class Union(PositionSet):
    parts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def __contains__(self, p) -> bool:
        return any(p in s for s in self.parts)

    def to_json(self):
        return {"union": [s.to_json() for s in self.parts]}


def position_set_from_json(obj) -> PositionSet:
    if "rows" in obj:
        return RowPrefix(int(obj["rows"]))
    if "lex" in obj:
        return LexPrefix(*map(int, obj["lex"]))
    if "below" in obj:
        return BelowFunction(
            tuple(tuple(t) for t in obj["below"]),
            int(obj.get("default", 0)),
            bool(obj.get("complemented", False)),
        )
    if "explicit" in obj:
        return Explicit(frozenset(as_position(p) for p in obj["explicit"]))
    if "union" in obj:
        return Union(tuple(position_set_from_json(s) for s in obj["union"]))
    raise ValueError(f"unknown position set {obj!r}")


# ---------------------------------------------------------------------------
# bit assignments


def concat(prefix: Mapping, tail: Mapping, D: PositionSet) -> dict[Position, int]:
    """Concatenation ``prefix ⌢_D tail``.

    ``prefix`` holds bits at positions in ``D``; ``tail`` is indexed in its own
    coordinates and is relabeled into the complement of ``D`` (row by row, in
    lexicographic order).
    """
    out: dict[Position, int] = {}
    for p, bit in prefix.items():
        p = as_position(p)
        if p not in D:
            raise ValueError(f"prefix position {p} is not in {D}")
        out[p] = int(bit)
    for q, bit in tail.items():
        p = D.complement_position(*as_position(q))
        if p in out:
            raise ValueError(f"tail position {q} collides with prefix at {p}")
        out[p] = int(bit)
    return out


def split(omega: Mapping, D: PositionSet) -> tuple[dict[Position, int], dict[Position, int]]:
    """Inverse of :func:`concat`: ``(omega_D, omega_{D^c})`` in tail coordinates."""
    prefix, tail = {}, {}
    for p, bit in omega.items():
        p = as_position(p)
        if p in D:
            prefix[p] = int(bit)
        else:
            tail[D.complement_index(p)] = int(bit)
    return prefix, tail


# ---------------------------------------------------------------------------
# cylinder functions


def _object_array(values, shape) -> np.ndarray:
    flat = np.empty(len(values), dtype=object)
    flat[:] = list(values)
    return flat.reshape(shape)


def _axis_redundant(arr: np.ndarray, axis: int) -> bool:
    # stops at the first differing pair, which is usually the first one
    return all(map(operator.eq, arr.take([0], axis=axis).ravel(), arr.take([1], axis=axis).ravel()))


class CylinderFunction:
    """Rational-valued function of finitely many bits.

    ``values`` is an object array of shape ``(2,) * len(support)``; axis ``i``
    is the bit at ``support[i]``.  Support is kept sorted lexicographically and
    positions the value never depends on are pruned.
    """

    __slots__ = ("support", "values")

    def __init__(self, support: Iterable = (), values=None, *, cap: int | None = None):
        support = [as_position(p) for p in support]
        if len(set(support)) != len(support):
            raise ValueError("support has repeated positions")
        k = len(support)
        check_cap(k, cap)
        if values is None:
            raise ValueError("values required")
        flat = list(np.asarray(values, dtype=object).reshape(-1))
        if len(flat) != 2 ** k:
            raise ValueError(f"table has {len(flat)} entries, expected {2 ** k}")
        arr = _object_array([to_rational(v) for v in flat], (2,) * k)
        order = sorted(range(k), key=lambda i: support[i])
        if order != list(range(k)):
            arr = np.ascontiguousarray(arr.transpose(order))
            support = [support[i] for i in order]
        # an axis is redundant iff both of its slices agree; dropping several
        # redundant axes at once is safe
        drop = [a for a in range(k) if _axis_redundant(arr, a)]
        if drop:
            index = tuple(0 if a in drop else slice(None) for a in range(k))
            arr = np.ascontiguousarray(arr[index]) if len(drop) < k else np.array(arr[index], dtype=object)
        arr.flags.writeable = False
        self.support = tuple(p for a, p in enumerate(support) if a not in drop)
        self.values = arr

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, c) -> "CylinderFunction":
        return cls((), [c])

    @classmethod
    def bit(cls, p) -> "CylinderFunction":
        """The coordinate function ``omega -> omega_p`` as a 0/1 rational."""
        return cls([p], [0, 1])

    @classmethod
    def from_callable(cls, support: Iterable, fn: Callable[[dict], object], *, cap=None) -> "CylinderFunction":
        support = sorted(as_position(p) for p in support)
        check_cap(len(support), cap)
        vals = [fn(dict(zip(support, bits))) for bits in product((0, 1), repeat=len(support))]
        return cls(support, vals, cap=cap)

    @property
    def table(self) -> tuple:
        """Table entries in bit-pattern order (first support position = MSB)."""
        return tuple(self.values.reshape(-1))

    def evaluate(self, omega: Mapping) -> Fraction:
        idx = tuple(int(omega[p]) for p in self.support)
        return self.values[idx] if idx else self.values.item()

    __call__ = evaluate

    def is_constant(self) -> bool:
        return not self.support

    def max(self) -> Fraction:
        return max(self.table)

    def min(self) -> Fraction:
        return min(self.table)

    def sup_norm(self) -> Fraction:
        return max(abs(v) for v in self.table)

    def align(self, support: tuple) -> np.ndarray:
        """Values broadcast onto a sorted superset ``support``."""
        mine = set(self.support)
        if not mine <= set(support):
            raise ValueError("target support must contain this function's support")
        shape = tuple(2 if p in mine else 1 for p in support)
        arr = self.values.reshape(shape) if support else self.values
        return np.broadcast_to(arr, (2,) * len(support))

    def map(self, fn) -> "CylinderFunction":
        out = np.vectorize(fn, otypes=[object])(self.values) if self.support else [fn(self.values.item())]
        return CylinderFunction(self.support, out)

    # -- arithmetic ---------------------------------------------------------

    def _binary(self, other, op, cap=None):
        if not isinstance(other, CylinderFunction):
            other = CylinderFunction.constant(other)
        support = tuple(sorted(set(self.support) | set(other.support)))
        check_cap(len(support), cap)
        a = self.align(support)
        b = other.align(support)
        if support:
            out = np.empty((2,) * len(support), dtype=object)
            out[...] = op(a, b)
        else:
            out = [op(a.item(), b.item())]
        return CylinderFunction(support, out)

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda a, b: a / b)

    def __neg__(self):
        return self.map(lambda v: -v)

    def __abs__(self):
        return self.map(abs)

    def __eq__(self, other):
        if not isinstance(other, CylinderFunction):
            if isinstance(other, (numbers.Rational, str)):
                other = CylinderFunction.constant(other)
            else:
                return NotImplemented
        return equal_canonical(self, other)

    def __hash__(self):
        return hash((self.support, self.table))

    def __repr__(self):
        if not self.support:
            return f"CylinderFunction(const={self.values.item()})"
        return f"CylinderFunction(support={list(map(tuple, self.support))}, table={[str(v) for v in self.table]})"

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "support": [list(p) for p in self.support],
            "table": [f"{v.numerator}/{v.denominator}" for v in self.table],
        }

    @classmethod
    def from_json(cls, obj, *, cap=None) -> "CylinderFunction":
        support = [as_position(p) for p in obj["support"]]
        table = [Fraction(s) for s in obj["table"]]
        return cls(support, table, cap=cap)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _common_denominator(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Integer numerators over one shared denominator, so sums avoid a gcd
    per addition."""
    flat = values.ravel()
    den = math.lcm(*(v.denominator for v in flat))
    nums = np.fromiter((v.numerator * (den // v.denominator) for v in flat), dtype=object, count=len(flat))
    return nums.reshape(values.shape), den


def expectation(f: CylinderFunction) -> Fraction:
    """Exact mean under the uniform measure."""
    if not f.support:
        return f.values.item()
    nums, den = _common_denominator(f.values)
    return Fraction(int(nums.sum()), den << len(f.support))


def cond_expectation(f: CylinderFunction, D: PositionSet) -> CylinderFunction:
    """Average ``f`` over the bits outside ``D``; the result depends only on
    ``support(f) ∩ D``."""
    inside = [i for i, p in enumerate(f.support) if p in D]
    outside = tuple(i for i in range(len(f.support)) if i not in inside)
    if not outside:
        return f
    if not inside:
        return CylinderFunction.constant(expectation(f))
    nums, den = _common_denominator(f.values)
    den <<= len(outside)
    summed = nums.sum(axis=outside)
    out = _object_array([Fraction(int(n), den) for n in summed.ravel()], summed.shape)
    return CylinderFunction([f.support[i] for i in inside], out)


def equal_canonical(f: CylinderFunction, g: CylinderFunction) -> bool:
    """True iff ``f`` and ``g`` agree on every assignment."""
    return f.support == g.support and np.array_equal(f.values, g.values)


def enumerate_assignments(support: Iterable[Position]):
    support = list(support)
    for bits in product((0, 1), repeat=len(support)):
        yield dict(zip(support, bits))
