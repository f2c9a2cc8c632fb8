"""Martingales on bit arrays: exact verification and the constructive
transformations (repair, upcrossing, savings, row/array conversions and the
oracle-martingale conversion).

Stopping times live in ``N ∪ {∞}``; ``math.inf`` is the explicit infinity.
"""
from __future__ import annotations

import csv
import io
import json
import math
import numbers
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .bitspace import (
    CylinderFunction,
    Explicit,
    LexPrefix,
    Position,
    PositionSet,
    RowPrefix,
    Union,
    as_position,
    check_cap,
    cond_expectation,
    position_set_from_json,
    to_rational,
)

DEFAULT_HORIZON = 64
INF = math.inf


class SavingsError(ValueError):
    """Savings transform hit a zero capital at a doubling time."""


# ---------------------------------------------------------------------------
# time chains


@dataclass(frozen=True)
class TimeChain:
    """Increasing sequence of "past" sets indexing a martingale.

    ``rows``: time ``i`` is ``RowPrefix(i)``.  ``lex``: time ``i`` is
    ``LexPrefix(positions[i])``; positions are listed explicitly because rows
    are truncated at a finite width.  ``sets``: explicit position sets.
    """

    kind: str = "rows"
    positions: tuple = ()
    sets: tuple = ()

    def __post_init__(self):
        if self.kind not in ("rows", "lex", "sets"):
            raise ValueError(f"unknown chain kind {self.kind!r}")
        pos = tuple(as_position(p) for p in self.positions)
        if any(a >= b for a, b in zip(pos, pos[1:])):
            raise ValueError("lex positions must be strictly increasing")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "sets", tuple(self.sets))

    @classmethod
    def rows(cls) -> "TimeChain":
        return cls("rows")

    @classmethod
    def lex(cls, positions: Iterable) -> "TimeChain":
        return cls("lex", positions=tuple(positions))

    @classmethod
    def of_sets(cls, sets: Iterable[PositionSet]) -> "TimeChain":
        return cls("sets", sets=tuple(sets))

    def length(self) -> int | None:
        if self.kind == "rows":
            return None
        return len(self.positions) if self.kind == "lex" else len(self.sets)

    def time_set(self, i: int) -> PositionSet:
        if self.kind == "rows":
            return RowPrefix(i)
        if self.kind == "lex":
            return LexPrefix(*self.positions[i])
        return self.sets[i]

    def label(self, i: int):
        return tuple(self.positions[i]) if self.kind == "lex" else i

    def index_of(self, position) -> int:
        return self.positions.index(as_position(position))

    def to_json(self):
        if self.kind == "rows":
            return "rows"
        if self.kind == "lex":
            return {"lex": [list(p) for p in self.positions]}
        return {"sets": [s.to_json() for s in self.sets]}

    @classmethod
    def from_json(cls, obj) -> "TimeChain":
        if obj == "rows":
            return cls.rows()
        if isinstance(obj, dict) and "lex" in obj:
            return cls.lex(as_position(p) for p in obj["lex"])
        if isinstance(obj, dict) and "sets" in obj:
            return cls.of_sets(position_set_from_json(s) for s in obj["sets"])
        raise ValueError(f"cannot parse chain {obj!r}")


def _window(levels: Sequence[CylinderFunction]) -> list[Position]:
    """Finite box of positions covering every support, plus one margin."""
    pts = [p for f in levels for p in f.support]
    rows = max((p.row for p in pts), default=0) + 2
    cols = max((p.col for p in pts), default=0) + 2
    return [Position(r, c) for r in range(rows) for c in range(cols)]


# ---------------------------------------------------------------------------
# martingale specs


@dataclass(frozen=True)
class MartingaleSpec:
    chain: TimeChain
    levels: tuple
    nonneg: bool = False
    growth_bound: Mapping | None = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        n = self.chain.length()
        if n is not None and n != len(self.levels):
            raise ValueError(f"chain has {n} times but {len(self.levels)} levels")

    def __len__(self):
        return len(self.levels)

    @property
    def horizon(self) -> int:
        return len(self.levels) - 1

    def time_set(self, i: int) -> PositionSet:
        return self.chain.time_set(i)

    def path(self, omega: Mapping) -> list[Fraction]:
        """Capital values ``M_i(omega)`` for every materialized level."""
        return [f.evaluate(omega) for f in self.levels]

    def support(self) -> tuple:
        return tuple(sorted({p for f in self.levels for p in f.support}))

    def level_at(self, position) -> CylinderFunction:
        """Value at an arbitrary lexicographic time, implied by the tower
        property from the next listed level."""
        if self.chain.kind != "lex":
            raise ValueError("level_at needs a lex chain")
        p = as_position(position)
        for i, q in enumerate(self.chain.positions):
            if q == p:
                return self.levels[i]
            if q > p:
                return cond_expectation(self.levels[i], LexPrefix(*p))
        raise ValueError(f"{p} is beyond the materialized horizon")

    def sample_paths(self, bits: np.ndarray) -> np.ndarray:
        """Float capital paths for a batch of bit arrays ``(samples, rows, cols)``."""
        out = np.empty((bits.shape[0], len(self.levels)))
        for i, f in enumerate(self.levels):
            table = np.array([float(v) for v in f.table])
            idx = np.zeros(bits.shape[0], dtype=np.int64)
            for p in f.support:
                idx = (idx << 1) | bits[:, p.row, p.col]
            out[:, i] = table[idx]
        return out

    def to_json(self) -> dict:
        obj = {
            "chain": self.chain.to_json(),
            "levels": [f.to_json() for f in self.levels],
            "nonneg": self.nonneg,
        }
        if self.growth_bound is not None:
            obj["growth_bound"] = {str(k): f"{Fraction(v).numerator}/{Fraction(v).denominator}"
                                   for k, v in self.growth_bound.items()}
        return obj

    @classmethod
    def from_json(cls, obj, *, cap=None) -> "MartingaleSpec":
        bound = obj.get("growth_bound")
        if bound is not None:
            bound = {int(k): Fraction(v) for k, v in bound.items()}
        return cls(
            TimeChain.from_json(obj["chain"]),
            tuple(CylinderFunction.from_json(f, cap=cap) for f in obj["levels"]),
            bool(obj.get("nonneg", False)),
            bound,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def rows_spec(levels: Iterable, nonneg: bool = False) -> MartingaleSpec:
    return MartingaleSpec(TimeChain.rows(), tuple(_as_cf(f) for f in levels), nonneg)


def _as_cf(f) -> CylinderFunction:
    return f if isinstance(f, CylinderFunction) else CylinderFunction.constant(f)


# ---------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class Verdict:
    ok: bool
    index: int | None = None
    kind: str | None = None
    message: str = ""
    discrepancy: CylinderFunction | None = None

    def __bool__(self):
        return self.ok

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "index": self.index,
            "kind": self.kind,
            "message": self.message,
            "discrepancy": None if self.discrepancy is None else self.discrepancy.to_json(),
        }


def verify(M: MartingaleSpec, horizon: int | None = None, *, support_cap: int | None = None) -> Verdict:
    """Check adaptedness, sign, growth bound, chain monotonicity and the exact
    martingale identity ``E_{D_i}(M_{i+1}) = M_i`` on consecutive levels."""
    last = M.horizon if horizon is None else min(horizon, M.horizon)
    levels = M.levels[: last + 1]
    for f in levels:
        check_cap(len(f.support), support_cap)
    window = _window(levels)
    for i in range(last + 1):
        D = M.time_set(i)
        f = levels[i]
        outside = [p for p in f.support if p not in D]
        if outside:
            return Verdict(False, i, "adaptedness", f"level {i} reads {outside[0]} outside its past")
        if M.nonneg and f.min() < 0:
            return Verdict(False, i, "nonneg", f"level {i} takes value {f.min()}")
        if M.growth_bound is not None and i in M.growth_bound and f.sup_norm() > M.growth_bound[i]:
            return Verdict(False, i, "growth", f"level {i} exceeds bound {M.growth_bound[i]}")
        if i < last:
            Dn = M.time_set(i + 1)
            leak = [p for p in window if p in D and p not in Dn]
            if leak:
                return Verdict(False, i, "monotone", f"time set {i} is not contained in time set {i + 1}")
            diff = f - cond_expectation(levels[i + 1], D)
            if not diff.is_constant() or diff.values.item() != 0:
                return Verdict(False, i, "martingale", f"E_{i}(M_{i + 1}) differs from M_{i}", diff)
    return Verdict(True)


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Trajectory:
    values: tuple
    stops: Mapping = field(default_factory=dict)
    sample: Mapping | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))

    def __len__(self):
        return len(self.values)

    def to_csv(self) -> str:
        flags: dict[int, list[str]] = {}
        for name, times in self.stops.items():
            for k, t in enumerate(times):
                if t != INF:
                    flags.setdefault(int(t), []).append(f"{name}{k}")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "value", "stop_flags"])
        for n, v in enumerate(self.values):
            w.writerow([n, _fmt(v), ";".join(flags.get(n, []))])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}" if v.denominator != 1 else str(v.numerator)
    return repr(v)


# ---------------------------------------------------------------------------
# pathwise transforms


def upcrossing_times(values: Sequence, a, b) -> tuple[list, list]:
    """The recursions ``σ^up_0 = 0``, ``σ^down_k = inf{n > σ^up_k : M_n ≥ b}``,
    ``σ^up_{k+1} = inf{n > σ^down_k : M_n ≤ a}``.  The first unreached time is
    appended as ``INF``."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    up, down = [0], []
    looking_for_b = True
    for n in range(1, len(values)):
        if looking_for_b and values[n] >= b:
            down.append(n)
            looking_for_b = False
        elif not looking_for_b and values[n] <= a:
            up.append(n)
            looking_for_b = True
    if looking_for_b:
        down.append(INF)
    else:
        up.append(INF)
    return up, down


def upcrossing_path(values: Sequence, a, b) -> Trajectory:
    """Doob's upcrossing bet along one capital path: follow ``M`` on
    ``(σ^up_k, σ^down_k]`` and hold on ``(σ^down_k, σ^up_{k+1}]``."""
    values = _exact(values)
    up, down = upcrossing_times(values, a, b)
    out = [values[0]]
    rising = True
    anchor_m = anchor_n = values[0]
    for n in range(1, len(values)):
        if rising:
            out.append(values[n] - anchor_m + anchor_n)
            if values[n] >= b:
                rising = False
        else:
            out.append(out[-1])
            if values[n] <= a:
                rising = True
                anchor_m, anchor_n = values[n], out[-1]
    return Trajectory(out, {"up": tuple(up), "down": tuple(down)})


def _exact(values: Sequence) -> list:
    return [Fraction(v) if isinstance(v, numbers.Rational) else v for v in values]


def savings_times(values: Sequence) -> list:
    tau = [0]
    base = values[0]
    for n in range(1, len(values)):
        if values[n] >= 2 * base:
            tau.append(n)
            base = values[n]
    tau.append(INF)
    return tau


def savings_path(values: Sequence) -> Trajectory:
    """Bank half the capital at every doubling of ``M``:
    ``N_n = N_τ/2 + (N_τ/2) M_n / M_τ`` for ``n ∈ (τ_k, τ_{k+1}]``."""
    values = _exact(values)
    out = [values[0]]
    base_m = base_n = values[0]
    for n in range(1, len(values)):
        if base_m == 0:
            raise SavingsError(f"M is zero at the doubling time before step {n}; the ratio M_n/M_tau is undefined")
        half = base_n / 2
        out.append(half + half * values[n] / base_m)
        if values[n] >= 2 * base_m:
            base_m, base_n = values[n], out[-1]
    return Trajectory(out, {"tau": tuple(savings_times(values))})


def count_completed_upcrossings(values: Sequence, a, b) -> int:
    """Completed upcrossings: passages from a value ``<= a`` to a later value
    ``>= b``.  Unlike the transform's recursion, time 0 only starts an
    upcrossing if ``M_0 <= a``."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    below = values[0] <= a
    count = 0
    for v in values[1:]:
        if below and v >= b:
            count += 1
            below = False
        elif v <= a:
            below = True
    return count


# ---------------------------------------------------------------------------
# materialized transforms


def _assignments(support: Sequence[Position]) -> np.ndarray:
    k = len(support)
    idx = np.arange(2 ** k, dtype=np.int64)
    return ((idx[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.int64)


def _level_columns(M: MartingaleSpec, support, cap) -> list[list]:
    """Value of every level at every assignment of ``support`` (rows = assignments)."""
    check_cap(len(support), cap)
    bits = _assignments(support)
    col = {p: i for i, p in enumerate(support)}
    cols = []
    for f in M.levels:
        flat = f.table
        idx = np.zeros(len(bits), dtype=np.int64)
        for p in f.support:
            idx = (idx << 1) | bits[:, col[p]]
        cols.append([flat[i] for i in idx])
    return [list(row) for row in zip(*cols)]


def _pathwise_transform(M: MartingaleSpec, fn: Callable[[list], list], cap) -> MartingaleSpec:
    support = M.support()
    paths = _level_columns(M, support, cap)
    outs = [fn(p) for p in paths]
    levels = tuple(CylinderFunction(support, [o[n] for o in outs], cap=cap) for n in range(len(M.levels)))
    return MartingaleSpec(M.chain, levels, True, None)


def _require_nonneg(M: MartingaleSpec):
    for i, f in enumerate(M.levels):
        if f.min() < 0:
            raise ValueError(f"level {i} is negative ({f.min()}); a nonnegative martingale is required")


def upcrossing_transform(M: MartingaleSpec, a, b, *, support_cap=None) -> MartingaleSpec:
    a, b = to_rational(a), to_rational(b)
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    _require_nonneg(M)
    return _pathwise_transform(M, lambda p: list(upcrossing_path(p, a, b).values), support_cap)


def savings_transform(M: MartingaleSpec, *, support_cap=None) -> MartingaleSpec:
    _require_nonneg(M)
    return _pathwise_transform(M, lambda p: list(savings_path(p).values), support_cap)


@dataclass(frozen=True)
class RepairResult:
    spec: MartingaleSpec
    drift: tuple  # sup-norm ||L_n - N_n|| per level


def repair(levels: Sequence, chain: TimeChain | None = None, *, support_cap=None) -> RepairResult:
    """Turn an adapted sequence into a martingale via
    ``L_0 = N_0``, ``L_{n+1} = N_{n+1} - E_n(N_{n+1}) + L_n``."""
    chain = chain or TimeChain.rows()
    N = [_as_cf(f) for f in levels]
    for i, f in enumerate(N):
        check_cap(len(f.support), support_cap)
        D = chain.time_set(i)
        if any(p not in D for p in f.support):
            raise ValueError(f"input level {i} is not adapted")
    L = [N[0]]
    for n in range(len(N) - 1):
        L.append(N[n + 1] - cond_expectation(N[n + 1], chain.time_set(n)) + L[n])
    drift = tuple((l - x).sup_norm() for l, x in zip(L, N))
    return RepairResult(MartingaleSpec(chain, tuple(L)), drift)


def repair_spec(M: MartingaleSpec, *, support_cap=None) -> MartingaleSpec:
    """:func:`repair` on a spec.  The sign flag and growth bound carry over
    when the repaired levels still satisfy them; a spec that already is a
    martingale comes back unchanged."""
    L = repair(M.levels, M.chain, support_cap=support_cap).spec.levels
    nonneg = M.nonneg and all(f.min() >= 0 for f in L)
    bound = M.growth_bound
    if bound is not None and any(i in bound and f.sup_norm() > bound[i] for i, f in enumerate(L)):
        bound = None
    return MartingaleSpec(M.chain, L, nonneg, bound)


def repair_bound(n: int, k: int) -> Fraction:
    """``(2 - 2^-n) 2^-(k+1)``: the induction bound on ``||L_n - M_n||``."""
    return (2 - Fraction(1, 2 ** n)) * Fraction(1, 2 ** (k + 1))


# ---------------------------------------------------------------------------
# rows <-> arrays


def _row_width(f: CylinderFunction, row: int) -> int:
    """``1 + max column`` of ``f``'s support in ``row`` (0 if none)."""
    return max((p.col + 1 for p in f.support if p.row == row), default=0)


def extend_to_array(M: MartingaleSpec) -> MartingaleSpec:
    """``N_{m,n} = E_{m,n}(M_{m+1})``, listed for ``n < k(m)`` and ending at ``(H, 0)``."""
    if M.chain.kind != "rows":
        raise ValueError("extend_to_array needs a row-indexed martingale")
    H = M.horizon
    positions, levels = [], []
    for m in range(H):
        nxt = M.levels[m + 1]
        for n in range(max(_row_width(nxt, m), 1)):
            positions.append(Position(m, n))
            levels.append(cond_expectation(nxt, LexPrefix(m, n)))
    positions.append(Position(H, 0))
    levels.append(M.levels[H])
    return MartingaleSpec(TimeChain.lex(positions), tuple(levels), M.nonneg)


def restrict_rows(N: MartingaleSpec) -> MartingaleSpec:
    """``M_m = N_{m,0}`` for every row whose start lies within the horizon."""
    if N.chain.kind != "lex":
        raise ValueError("restrict_rows needs a lex-indexed martingale")
    last = N.chain.positions[-1]
    rows = last.row + 1 if last.col == 0 else last.row + 1
    levels = [N.level_at(Position(m, 0)) for m in range(rows) if Position(m, 0) <= last]
    return MartingaleSpec(TimeChain.rows(), tuple(levels), N.nonneg)


def stopping_row_bound(N: MartingaleSpec) -> dict[int, int]:
    """Least ``k(m)`` with ``N_{m,n} = N_{m+1,0}`` for ``n ≥ k(m)``, certified
    by exact comparison."""
    if N.chain.kind != "lex":
        raise ValueError("stopping_row_bound needs a lex-indexed martingale")
    out = {}
    last = N.chain.positions[-1]
    m = 0
    while Position(m + 1, 0) <= last:
        nxt = N.level_at(Position(m + 1, 0))
        k = _row_width(nxt, m)
        if N.level_at(Position(m, k)) != nxt:
            raise AssertionError(f"row {m} does not stabilize at column {k}")
        out[m] = k
        m += 1
    return out


def agree_on_common_times(A: MartingaleSpec, B: MartingaleSpec) -> bool:
    """Two lex martingales agree at every listed time both of them cover."""
    end = min(A.chain.positions[-1], B.chain.positions[-1])
    times = sorted({p for p in A.chain.positions + B.chain.positions if p <= end})
    return all(A.level_at(p) == B.level_at(p) for p in times)


# ---------------------------------------------------------------------------
# oracle martingales


@dataclass(frozen=True)
class OracleMartingale:
    """A family ``N^β_n`` betting on ``bets`` in order while reading oracle bits
    from ``oracle``.  ``levels[n]`` is the function ``ξ -> N^{ξ_A}_n(ξ_B)`` on
    the array, so it may read oracle positions and ``bets[:n]``."""

    oracle: PositionSet
    bets: tuple
    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "bets", tuple(as_position(p) for p in self.bets))
        object.__setattr__(self, "levels", tuple(_as_cf(f) for f in self.levels))

    def known(self, n: int) -> PositionSet:
        return Union((self.oracle, Explicit(frozenset(self.bets[:n]))))

    def dependency_bound(self) -> dict[int, int]:
        """``ℓ(n)``: how many leading oracle positions level ``n`` reads."""
        out = {}
        for n, f in enumerate(self.levels):
            used = [p for p in f.support if p in self.oracle]
            out[n] = self.oracle.rank(max(used)) + 1 if used else 0
        return out

    def check(self) -> None:
        bets = self.bets
        if any(x >= y for x, y in zip(bets, bets[1:])):
            raise ValueError("bet positions must be strictly increasing in lex order")
        if any(p in self.oracle for p in bets):
            raise ValueError("bet positions must lie outside the oracle set")
        if len(self.levels) > len(bets) + 1:
            raise ValueError(f"{len(self.levels)} levels need at least {len(self.levels) - 1} bet positions")
        for n, f in enumerate(self.levels):
            D = self.known(n)
            bad = [p for p in f.support if p not in D]
            if bad:
                raise ValueError(f"level {n} reads {bad[0]}, which is neither oracle nor among the first {n} bets")
        for n in range(len(self.levels) - 1):
            if cond_expectation(self.levels[n + 1], self.known(n)) != self.levels[n]:
                raise ValueError(f"levels {n} -> {n + 1} are not a martingale in the bet bits")

    def has_savings_property(self, *, support_cap=None) -> bool:
        """``N_n ≥ N_m / 2`` for all ``m ≤ n`` pointwise on materialized levels."""
        spec = MartingaleSpec(TimeChain.of_sets(self.known(n) for n in range(len(self.levels))), self.levels)
        for path in _level_columns(spec, spec.support(), support_cap):
            peak = path[0]
            for v in path:
                peak = max(peak, v)
                if v < peak / 2:
                    return False
        return True

    def to_json(self) -> dict:
        return {
            "oracle": self.oracle.to_json(),
            "bets": [list(p) for p in self.bets],
            "levels": [f.to_json() for f in self.levels],
        }

    @classmethod
    def from_json(cls, obj, *, cap=None) -> "OracleMartingale":
        return cls(
            position_set_from_json(obj["oracle"]),
            tuple(as_position(p) for p in obj["bets"]),
            tuple(CylinderFunction.from_json(f, cap=cap) for f in obj["levels"]),
        )


def convert_oracle_martingale(
    N: OracleMartingale,
    horizon: int | None = None,
    *,
    require_savings: bool = True,
    support_cap: int | None = None,
) -> MartingaleSpec:
    """Array martingale ``K_{m,n} = E_{m,n} L_k`` with ``k`` the first bet at or
    after ``(m, n)`` and ``L_k = M_{A ∪ B_k}`` the k-th level of ``N``.

    Times run from ``(0, 0)`` to just past the last materialized bet.  Each
    row is listed up to one column past anything read in it; beyond that the
    value is constant until the next row starts.
    """
    H = len(N.levels) - 1 if horizon is None else min(horizon, len(N.levels) - 1)
    if H < 1:
        raise ValueError("need at least one bet")
    N = OracleMartingale(N.oracle, N.bets[:H], N.levels[: H + 1])
    N.check()
    for f in N.levels:
        check_cap(len(f.support), support_cap)
    if require_savings and not N.has_savings_property(support_cap=support_cap):
        raise ValueError("oracle martingale lacks the savings property N_n >= N_m / 2")
    bets = N.bets
    end = Position(bets[-1].row, bets[-1].col + 1)
    touched = [p for f in N.levels for p in f.support] + list(bets)
    positions, levels = [], []
    k = 0
    for m in range(end.row + 1):
        width = 1 + max((p.col for p in touched if p.row == m), default=-1)
        last_col = end.col if m == end.row else max(width, 0)
        for n in range(last_col + 1):
            p = Position(m, n)
            while k < H and bets[k] < p:
                k += 1
            positions.append(p)
            levels.append(cond_expectation(N.levels[k], LexPrefix(m, n)))
    return MartingaleSpec(TimeChain.lex(positions), tuple(levels), all(f.min() >= 0 for f in N.levels))
