"""Discretized Brownian motion.

Paths are piecewise linear on a uniform grid.  This module covers sampling,
concatenation at a grid time, Monte Carlo conditional expectation ``E_t``
with Hoeffding intervals, a quantized Lévy midpoint map between bit arrays
and paths, exact hitting times on linear segments, continuous-time upcrossing
and savings transforms, and the numerics of the bounded-functional
counterexample.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

from .martingale import INF, SavingsError, Trajectory

DELTA = 0.05


def _rational(x) -> Fraction:
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"not a finite time: {x}")
        return Fraction(repr(x))
    return Fraction(x)


def _grid_index(t, dt: Fraction) -> int:
    q = _rational(t) / dt
    if q.denominator != 1:
        raise ValueError(f"time {t} is not on the grid of step {dt}")
    return int(q)


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class GridPath:
    """Real path sampled at ``0, dt, 2dt, ...`` and linear in between."""

    dt: Fraction
    values: np.ndarray
    origin_zero: bool = True
    # for a tail cut out of a longer path: (raw values, value at the cut),
    # so gluing it back at the same point restores the raw floats exactly
    _cut: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        dt = _rational(self.dt)
        if dt <= 0:
            raise ValueError("dt must be positive")
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) == 0:
            raise ValueError("values must be a non-empty 1-d sequence")
        if self.origin_zero and vals[0] != 0:
            raise ValueError("origin_zero path must start at 0")
        vals.setflags(write=False)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "values", vals)

    @property
    def steps(self) -> int:
        return len(self.values) - 1

    @property
    def T(self) -> Fraction:
        return self.steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) * float(self.dt)

    def index(self, t) -> int:
        k = _grid_index(t, self.dt)
        if not 0 <= k <= self.steps:
            raise ValueError(f"time {t} is outside [0, {self.T}]")
        return k

    def __call__(self, t) -> float:
        x = float(t) / float(self.dt)
        if not 0 <= x <= self.steps:
            raise ValueError(f"time {t} is outside [0, {self.T}]")
        i = min(int(math.floor(x)), self.steps - 1) if self.steps else 0
        if self.steps == 0:
            return float(self.values[0])
        w = x - i
        return float((1 - w) * self.values[i] + w * self.values[i + 1])

    def prefix(self, t) -> "GridPath":
        return GridPath(self.dt, self.values[: self.index(t) + 1], self.origin_zero)

    def __eq__(self, other):
        return (
            isinstance(other, GridPath)
            and self.dt == other.dt
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.dt, self.values.tobytes()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(self.times(), self.values):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()

    def rescaled(self) -> np.ndarray:
        """Values of ``u -> W_{T u}`` on ``[0, 1]`` (same samples, unit time)."""
        return self.values.copy()


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times ``s_0 < s_1 < ...``; ``unbounded`` records
    that the listed times are a finite window of an unbounded sequence."""

    times: tuple
    unbounded: bool = True

    def __post_init__(self):
        ts = tuple(_rational(t) for t in self.times)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("time grid must be strictly increasing")
        if ts and ts[0] < 0:
            raise ValueError("times must be nonnegative")
        object.__setattr__(self, "times", ts)

    def next_after(self, t) -> Fraction:
        t = _rational(t)
        for s in self.times:
            if s > t:
                return s
        raise ValueError(f"no grid time after {t} in the materialized window")

    def __contains__(self, t) -> bool:
        return _rational(t) in self.times


def _steps(T, dt) -> tuple[Fraction, int]:
    T, dt = _rational(T), _rational(dt)
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    n = T / dt
    if n.denominator != 1:
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    return dt, int(n)


def sample_paths(T, dt, n_paths: int, seed: int = 0) -> np.ndarray:
    """``(n_paths, steps + 1)`` Brownian values from ``default_rng(seed)``."""
    dt, steps = _steps(T, dt)
    rng = np.random.default_rng(seed)
    inc = rng.normal(0.0, math.sqrt(float(dt)), size=(n_paths, steps))
    out = np.zeros((n_paths, steps + 1))
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def sample_path(T, dt, seed: int = 0) -> GridPath:
    dt, _ = _steps(T, dt)
    return GridPath(dt, sample_paths(T, dt, 1, seed)[0])


def concat_paths(W: GridPath, s, V: GridPath) -> GridPath:
    """``W`` up to ``s`` followed by ``W_s + V_{t - s}``."""
    if not V.origin_zero:
        raise ValueError("the continuation must start at 0")
    if V.dt != W.dt:
        raise ValueError(f"grid mismatch: {W.dt} vs {V.dt}")
    k = W.index(s)
    if V._cut is not None and V._cut[1] == W.values[k]:
        rest = V._cut[0][1:]
    else:
        rest = W.values[k] + V.values[1:]
    return GridPath(W.dt, np.concatenate([W.values[: k + 1], rest]), W.origin_zero)


def split_path(W: GridPath, s) -> tuple[GridPath, GridPath]:
    """Inverse of :func:`concat_paths`: ``W_{≤s}`` and ``t -> W_{s+t} - W_s``."""
    k = W.index(s)
    raw = W.values[k:]
    tail = GridPath(W.dt, raw - raw[0], _cut=(raw, raw[0]))
    return GridPath(W.dt, W.values[: k + 1], W.origin_zero), tail


# ---------------------------------------------------------------------------
# conditional expectation


@dataclass(frozen=True)
class PathFunctional:
    """``fn(values, dt)`` maps a ``(samples, steps + 1)`` array of paths on
    ``[0, horizon]`` to one value per path; ``|fn| <= bound`` is required."""

    fn: Callable[[np.ndarray, Fraction], np.ndarray]
    bound: float | None
    horizon: Fraction

    def __post_init__(self):
        object.__setattr__(self, "horizon", _rational(self.horizon))


def hoeffding_half_width(bound: float, n: int, delta: float = DELTA) -> float:
    return bound * math.sqrt(2 * math.log(2 / delta) / n)


def cond_expectation_t(
    f: PathFunctional,
    t,
    prefix: GridPath,
    n_samples: int,
    seed: int = 0,
    delta: float = DELTA,
) -> tuple[float, float]:
    """Monte Carlo ``E_t(f)`` at the given prefix, with a Hoeffding
    half-width at confidence ``1 - delta``."""
    if f.bound is None or not math.isfinite(f.bound):
        raise ValueError("E_t is only estimated for bounded functionals; declare a finite bound")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    head = prefix.prefix(t)
    if _rational(t) > f.horizon:
        raise ValueError("t is beyond the functional's horizon")
    tail_steps = _grid_index(f.horizon - _rational(t), prefix.dt)
    rng = np.random.default_rng(seed)
    inc = rng.normal(0.0, math.sqrt(float(prefix.dt)), size=(n_samples, tail_steps))
    paths = np.empty((n_samples, head.steps + 1 + tail_steps))
    paths[:, : head.steps + 1] = head.values
    paths[:, head.steps + 1:] = head.values[-1] + np.cumsum(inc, axis=1)
    vals = np.asarray(f.fn(paths, prefix.dt), dtype=float)
    if np.any(np.abs(vals) > f.bound):
        raise ValueError(f"functional exceeded its declared bound {f.bound}")
    return float(vals.mean()), hoeffding_half_width(f.bound, n_samples, delta)


def clipped_value_at(time, C: float) -> PathFunctional:
    """``W -> max(min(W_time, C), -C)``."""

    def fn(paths, dt):
        return np.clip(paths[:, _grid_index(time, dt)], -C, C)

    return PathFunctional(fn, C, time)


# ---------------------------------------------------------------------------
# bit arrays <-> paths


def _check_q(q: int):
    if q < 2:
        raise ValueError("bits_per_coeff must be at least 2")
    if q > 40:
        raise ValueError("bits_per_coeff above 40 exceeds double precision")


def _schauder_levels(L: int):
    """(start index into coefficients, midpoint offsets, half step) per level."""
    n = 2 ** L
    idx = 1
    for j in range(L):
        step = n >> j
        mids = np.arange(step // 2, n, step)
        yield j, idx, mids, step // 2
        idx += 2 ** j


def bits_to_path(bits, depth: int, bits_per_coeff: int) -> GridPath:
    """Quantized Lévy midpoint construction, one row per unit of time.

    Row ``m`` supplies ``2^depth`` coefficients of ``q`` bits each (short rows
    are zero padded).  A ``q``-bit integer ``k`` becomes ``u = (k + 1/2)/2^q``
    and the Gaussian ``Φ^{-1}(u)``.  Coefficient 0 sets ``W_1``; the next
    ``2^j`` set the level-``j`` midpoints, each with standard deviation
    ``2^{-(j+2)/2}`` around the chord.  Rows are joined end to end.
    """
    L, q = depth, bits_per_coeff
    _check_q(q)
    n = 2 ** L
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    need = n * q
    if bits.shape[1] < need:
        bits = np.pad(bits, ((0, 0), (0, need - bits.shape[1])))
    bits = bits[:, :need].reshape(len(bits), n, q)
    weights = 1 << np.arange(q - 1, -1, -1, dtype=np.int64)
    k = bits.astype(np.int64) @ weights
    z = ndtri((k + 0.5) / 2 ** q)
    x = np.zeros((len(bits), n + 1))
    x[:, n] = z[:, 0]
    for j, start, mids, half in _schauder_levels(L):
        x[:, mids] = 0.5 * (x[:, mids - half] + x[:, mids + half]) + math.sqrt(2.0 ** -(j + 2)) * z[:, start:start + len(mids)]
    offsets = np.concatenate([[0.0], np.cumsum(x[:, n])[:-1]])
    vals = np.concatenate([[0.0], (x[:, 1:] + offsets[:, None]).ravel()])
    return GridPath(Fraction(1, n), vals)


def path_to_bits(W: GridPath, depth: int, bits_per_coeff: int) -> np.ndarray:
    """Left inverse of :func:`bits_to_path`: ``(rows, 2^depth * q)`` bits."""
    L, q = depth, bits_per_coeff
    _check_q(q)
    n = 2 ** L
    if W.dt != Fraction(1, n) or W.steps % n:
        raise ValueError(f"path grid (dt={W.dt}, steps={W.steps}) does not fit depth {L}")
    rows = W.steps // n
    seg = np.stack([W.values[r * n: (r + 1) * n + 1] for r in range(rows)]) if rows else np.zeros((0, n + 1))
    seg = seg - seg[:, :1]
    z = np.zeros((rows, n))
    z[:, 0] = seg[:, n]
    for j, start, mids, half in _schauder_levels(L):
        z[:, start:start + len(mids)] = (seg[:, mids] - 0.5 * (seg[:, mids - half] + seg[:, mids + half])) / math.sqrt(2.0 ** -(j + 2))
    k = np.clip(np.floor(ndtr(z) * 2 ** q), 0, 2 ** q - 1).astype(np.int64)
    shifts = np.arange(q - 1, -1, -1, dtype=np.int64)
    return ((k[..., None] >> shifts) & 1).astype(np.uint8).reshape(rows, n * q)


# ---------------------------------------------------------------------------
# hitting times and levels


def hitting_time(path: GridPath, start, level, direction: str | None = None) -> float:
    """First ``t >= start`` where the interpolated path equals ``level``.

    ``direction="up"`` asks for the first ``t`` with value ``>= level`` and
    ``"down"`` for ``<= level``; for a path starting on the other side these
    are the same time.  Returns ``INF`` when the level is not reached by the
    end of the path.
    """
    v, dt = path.values, float(path.dt)
    s = float(start)
    if not 0 <= s <= path.steps * dt:
        raise ValueError(f"start {start} is outside the path")
    x0 = path(s)

    def reached(x):
        if direction == "up":
            return x >= level
        if direction == "down":
            return x <= level
        return x == level

    if reached(x0):
        return s
    i0 = min(int(math.floor(s / dt)), path.steps)
    ts = np.concatenate([[s], np.arange(i0 + 1, path.steps + 1) * dt])
    xs = np.concatenate([[x0], v[i0 + 1:]])
    d = xs - level
    if direction == "up":
        hit = d >= 0
    elif direction == "down":
        hit = d <= 0
    else:
        hit = (d[:-1] * d[1:] <= 0)
        hit = np.concatenate([[False], hit])
    j = np.flatnonzero(hit)
    if not len(j):
        return INF
    j = int(j[0])
    a, b = xs[j - 1], xs[j]
    return float(ts[j - 1] + (ts[j] - ts[j - 1]) * (level - a) / (b - a))


def local_extrema(paths: np.ndarray) -> np.ndarray:
    """Values at interior grid points where the path turns."""
    paths = np.atleast_2d(paths)
    d = np.diff(paths, axis=1)
    turn = d[:, :-1] * d[:, 1:] < 0
    return paths[:, 1:-1][turn]


def select_nonatom_levels(samples: Sequence[float], lo: float, hi: float, count: int = 1) -> list[float]:
    """Levels in ``[lo, hi]`` that avoid every sample value, spread to keep
    the largest possible distance from the samples and from each other.

    Gaps between consecutive distinct samples (and the interval ends) are
    split at their midpoints, always taking the widest remaining gap.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    pts = np.asarray(samples, dtype=float)
    pts = np.unique(pts[(pts >= lo) & (pts <= hi)])
    edges = np.unique(np.concatenate([[lo, hi], pts]))
    atoms = set(pts.tolist())
    heap = [(-(b - a), a, b) for a, b in zip(edges, edges[1:])]
    heapq.heapify(heap)
    out = []
    while len(out) < count:
        if not heap:
            raise ValueError(f"no {count} atom-free levels fit in [{lo}, {hi}]")
        _, a, b = heapq.heappop(heap)
        mid = a + (b - a) / 2
        if not a < mid < b or mid in atoms:
            continue
        out.append(float(mid))
        heapq.heappush(heap, (-(mid - a), a, mid))
        heapq.heappush(heap, (-(b - mid), mid, b))
    return sorted(out)


# ---------------------------------------------------------------------------
# path martingales


@dataclass(frozen=True)
class PathMartingale:
    """``evaluator(prefix, t)`` gives ``M_t`` from the path up to ``t``.

    ``grid_evaluator(paths, dt)``, when given, returns ``M`` at every grid
    time of a batch of paths at once (it must only look backwards in time).
    ``bound(s)`` bounds ``|M_s|``.
    """

    evaluator: Callable[[GridPath, Fraction], float]
    time_grid: TimeGrid = field(default_factory=lambda: TimeGrid(()))
    bound: Callable[[Fraction], float] | None = None
    grid_evaluator: Callable[[np.ndarray, Fraction], np.ndarray] | None = None

    def at(self, W: GridPath, t) -> float:
        return float(self.evaluator(W.prefix(t), _rational(t)))

    def grid_values(self, paths: np.ndarray, dt) -> np.ndarray:
        dt = _rational(dt)
        paths = np.atleast_2d(paths)
        if self.grid_evaluator is not None:
            return np.asarray(self.grid_evaluator(paths, dt), dtype=float)
        out = np.empty_like(paths, dtype=float)
        for r, row in enumerate(paths):
            for i in range(len(row)):
                out[r, i] = self.evaluator(GridPath(dt, row[: i + 1], origin_zero=False), i * dt)
        return out

    def trajectory(self, W: GridPath) -> GridPath:
        """``M`` along the grid of ``W``, as a path (linear in between)."""
        return GridPath(W.dt, self.grid_values(W.values, W.dt)[0], origin_zero=False)


def from_grid_function(fn: Callable[[np.ndarray, Fraction], np.ndarray], time_grid=None, bound=None) -> PathMartingale:
    """PathMartingale from a vectorized adapted map ``paths -> M on the grid``."""

    def evaluator(prefix: GridPath, t):
        return float(fn(prefix.values[None, :], prefix.dt)[0, -1])

    return PathMartingale(evaluator, time_grid or TimeGrid(()), bound, fn)


def geometric_martingale(start: float = 1.0, sigma: float = 1.0) -> PathMartingale:
    """``start * exp(sigma W_t - sigma^2 t / 2)``."""

    def fn(paths, dt):
        t = np.arange(paths.shape[1]) * float(dt)
        return start * np.exp(sigma * paths - 0.5 * sigma ** 2 * t)

    return from_grid_function(fn)


def sign_probability_martingale(T, time_grid: TimeGrid | None = None) -> PathMartingale:
    """``M_t = P(W_T > 0 | W_{≤t}) = Φ(W_t / sqrt(T - t))``, bounded by 1."""
    T = _rational(T)

    def fn(paths, dt):
        t = np.arange(paths.shape[1]) * float(dt)
        rem = float(T) - t
        out = np.where(paths > 0, 1.0, np.where(paths < 0, 0.0, 0.5))
        live = rem > 0
        out[:, live] = ndtr(paths[:, live] / np.sqrt(rem[live]))
        return out

    return from_grid_function(fn, time_grid, bound=lambda s: 1.0)


# ---------------------------------------------------------------------------
# continuous transforms


def _upcross_grid(M: np.ndarray, a: float, b: float, hits: str = "grid") -> np.ndarray:
    """Upcrossing bet on a batch of grid trajectories.

    ``hits="grid"``: stop at the first grid time with ``M >= b`` (resp.
    ``<= a``), which is the discrete transform of the sampled martingale and
    keeps ``E N`` exact.  ``hits="exact"``: stop where the linear interpolant
    meets the level; this drops the overshoot at each hit, so at finite ``dt``
    the mean is biased low.
    """
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if hits not in ("grid", "exact"):
        raise ValueError(f"hits must be 'grid' or 'exact', not {hits!r}")
    exact = hits == "exact"
    M = np.atleast_2d(np.asarray(M, dtype=float))
    N = np.empty_like(M)
    N[:, 0] = M[:, 0]
    rising = M[:, 0] < b if exact else np.ones(len(M), dtype=bool)
    anchor_m = M[:, 0].copy()
    anchor_n = M[:, 0].copy()
    for i in range(1, M.shape[1]):
        m = M[:, i]
        top = rising & (m >= b)
        bottom = ~rising & (m <= a)
        stop_at = np.minimum(m, b) if exact else m
        restart_at = a if exact else m
        follow = anchor_n + stop_at - anchor_m
        N[:, i] = np.where(rising, follow, np.where(bottom, anchor_n + m - restart_at, anchor_n))
        anchor_n = np.where(top, follow, anchor_n)
        anchor_m = np.where(top, stop_at, np.where(bottom, restart_at, anchor_m))
        rising = (rising & ~top) | bottom
    return N


def _upcross_grid_reference(values: Sequence[float], a: float, b: float) -> list[float]:
    """Single-path version driven by :func:`hitting_time` (slow, for checks)."""
    path = GridPath(1, values, origin_zero=False)
    N = [float(values[0])]
    rising = True
    stop = hitting_time(path, 0, b, "up")
    base_m = base_n = float(values[0])
    for i in range(1, len(values)):
        while stop <= i:
            if rising:
                base_n = base_n + (path(stop) - base_m)
                base_m = path(stop)
                rising = False
                stop = hitting_time(path, stop, a, "down")
            else:
                base_m = path(stop)
                rising = True
                stop = hitting_time(path, stop, b, "up")
        N.append(base_n + (values[i] - base_m) if rising else base_n)
    return N


def continuous_upcrossing_times(path: GridPath, a, b) -> tuple[list, list]:
    """``σ^up``/``σ^down`` for a capital path, hits solved on segments."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    up, down = [0.0], []
    t = 0.0
    while True:
        t = hitting_time(path, t, b, "up")
        down.append(t)
        if t == INF:
            return up, down
        t = hitting_time(path, t, a, "down")
        up.append(t)
        if t == INF:
            return up, down


def _savings_grid(M: np.ndarray, hits: str = "grid") -> np.ndarray:
    """Savings bet on a batch of grid trajectories; ``hits`` as in
    :func:`_upcross_grid` (grid: the doubling level resets to the sampled
    value, exact: to twice the previous level)."""
    if hits not in ("grid", "exact"):
        raise ValueError(f"hits must be 'grid' or 'exact', not {hits!r}")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if np.any(M < 0):
        raise ValueError("savings transform needs a nonnegative martingale")
    if np.any(M[:, 0] == 0):
        raise SavingsError("M_0 is zero; the ratio M_t/M_tau is undefined")
    N = np.empty_like(M)
    N[:, 0] = M[:, 0]
    base_m = M[:, 0].copy()
    base_n = M[:, 0].copy()
    for i in range(1, M.shape[1]):
        m = M[:, i]
        if hits == "exact":
            while True:
                hit = m >= 2 * base_m
                if not hit.any():
                    break
                base_n = np.where(hit, 1.5 * base_n, base_n)
                base_m = np.where(hit, 2 * base_m, base_m)
            N[:, i] = base_n / 2 + base_n / 2 * m / base_m
        else:
            N[:, i] = base_n / 2 + base_n / 2 * m / base_m
            hit = m >= 2 * base_m
            base_n = np.where(hit, N[:, i], base_n)
            base_m = np.where(hit, m, base_m)
    return N


def continuous_savings_times(path: GridPath) -> list:
    v0 = float(path.values[0])
    if v0 <= 0:
        raise SavingsError("M_0 is zero; the ratio M_t/M_tau is undefined")
    tau, base, t = [0.0], v0, 0.0
    while True:
        t = hitting_time(path, t, 2 * base, "up")
        tau.append(t)
        if t == INF:
            return tau
        base *= 2


def _wrap(M: PathMartingale, transform: Callable[[np.ndarray], np.ndarray]) -> PathMartingale:
    def grid(paths, dt):
        return transform(M.grid_values(paths, dt))

    def evaluator(prefix: GridPath, t):
        return float(grid(prefix.values[None, :], prefix.dt)[0, -1])

    return PathMartingale(evaluator, M.time_grid, None, grid)


def continuous_upcrossing_transform(M: PathMartingale, a: float, b: float, hits: str = "grid") -> PathMartingale:
    """Follow ``M`` from each hit of ``a`` until the next hit of ``b``, hold
    from ``b`` until ``a``; ``σ^up_0 = 0``.  Choose ``a, b`` with
    :func:`select_nonatom_levels` so that hits are crossings."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    _upcross_grid(np.zeros((1, 1)), a, b, hits)
    return _wrap(M, lambda m: _upcross_grid(m, a, b, hits))


def continuous_savings_transform(M: PathMartingale, hits: str = "grid") -> PathMartingale:
    """Bank half the capital each time ``M`` doubles from the last doubling
    level: ``N_t = N_τ/2 + (N_τ/2) M_t / M_τ``."""
    return _wrap(M, lambda m: _savings_grid(m, hits))


def transformed_trajectory(M: PathMartingale, W: GridPath) -> Trajectory:
    vals = M.grid_values(W.values, W.dt)[0]
    return Trajectory([float(v) for v in vals])


# ---------------------------------------------------------------------------
# extension from a time grid


def extend_grid_martingale(
    M: PathMartingale,
    t,
    W: GridPath,
    n_samples: int,
    seed: int = 0,
    s=None,
    delta: float = DELTA,
) -> tuple[float, float]:
    """``N_t = E_t(M_s)`` for ``s`` the first grid time after ``t`` (or the
    given ``s > t`` on the grid), with the Hoeffding half-width for the
    declared bound ``d(s)``."""
    if M.bound is None:
        raise ValueError("extension needs a declared bound on |M_s|")
    t = _rational(t)
    s = M.time_grid.next_after(t) if s is None else _rational(s)
    if s <= t or s not in M.time_grid:
        raise ValueError(f"s={s} must be a grid time after t={t}")
    k = _grid_index(s, W.dt)

    def fn(paths, dt):
        return M.grid_values(paths[:, : k + 1], dt)[:, k]

    return cond_expectation_t(PathFunctional(fn, float(M.bound(s)), s), t, W, n_samples, seed, delta)


# ---------------------------------------------------------------------------
# the bounded-functional counterexample


class QuadratureError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3g})")
        self.residual = residual


@dataclass(frozen=True)
class CounterexampleReport:
    R: float
    total_integral: float
    inner_at_zero: float
    residual: float

    def to_json(self) -> dict:
        return {"R": self.R, "total_integral": self.total_integral, "inner_at_zero": self.inner_at_zero, "residual": self.residual}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def log_g(x, y, x_alpha=None):
    """``log g(x, y)`` for ``g = exp((-(x α(y))^2 + x^2 + y^2)/2)``, ``α(y) = exp(y^2/2)``.

    ``x_alpha`` may pass ``x α(y)`` directly when ``α(y)`` itself would overflow.
    """
    if x_alpha is None:
        x_alpha = x * np.exp(0.5 * y * y)
    return 0.5 * (-(x_alpha * x_alpha) + x * x + y * y)


def log_normal_density(x):
    return -0.5 * x * x - 0.5 * math.log(2 * math.pi)


def _quad(fn, lo, hi, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return integrate.quad(fn, lo, hi, **kw)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature on [{lo}, {hi}] did not converge: {exc}", math.inf) from exc


def counterexample_integrals(R: float, epsabs: float = 1e-12, epsrel: float = 1e-10, limit: int = 200) -> CounterexampleReport:
    """``∬_{[-R,R]^2} g(x,y) n(x) n(y)`` and ``∫_{-R}^{R} g(0,y) n(y)``.

    The integrand is evaluated as ``exp(log g + log n(x) + log n(y))`` since
    ``g`` alone overflows for moderate ``y``.  In ``x`` the mass sits in a
    window of width about ``1/α(y)``, so the inner integral is taken in the
    scaled variable ``u = x α(y)`` where it spans a fixed range.
    """
    R = float(R)
    if R <= 0:
        raise ValueError("R must be positive")
    residual = 0.0

    def inner(y):
        nonlocal residual
        alpha_log = 0.5 * y * y
        hi = min(R * math.exp(min(alpha_log, 700.0)), 40.0)

        def integrand(u):
            x = u * math.exp(-alpha_log)
            return math.exp(log_g(x, y, u) + log_normal_density(x) + log_normal_density(y) - alpha_log)

        val, err = _quad(integrand, -hi, hi, epsabs=epsabs, epsrel=epsrel, limit=limit, points=[0.0])
        residual += err
        return val

    # the y-mass sits near 0; breakpoints keep wide intervals from missing it
    cuts = [c for c in (-4.0, 0.0, 4.0) if -R < c < R]
    total, err_outer = _quad(inner, -R, R, epsabs=epsabs, epsrel=epsrel, limit=limit, points=cuts)
    at_zero, err_zero = _quad(
        lambda y: math.exp(log_g(0.0, y, 0.0) + log_normal_density(y)), -R, R, epsabs=epsabs, epsrel=epsrel, limit=limit
    )
    return CounterexampleReport(R, float(total), float(at_zero), float(err_outer + residual + err_zero))
