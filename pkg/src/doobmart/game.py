"""The row-by-row betting game on bit arrays, scenario sources and Monte Carlo
convergence diagnostics.

The gambler bets on ``ω[m, 0], ω[m, 1], ...`` in order, may move on to the
next row whenever she likes, and once in row ``m`` may read all of rows
``< m`` (including bits she never bet on).  A stake ``s`` backs bit 1 when
positive and bit 0 when negative, so capital moves by ``+|s|`` on a win and by
``-|s|`` on a loss.

Divergence is not decidable from a finite horizon, so the reports below give
oscillation and upcrossing diagnostics rather than a verdict.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .bitspace import CylinderFunction, Position, to_rational
from .martingale import MartingaleSpec, TimeChain, Trajectory, count_completed_upcrossings

DEFAULT_ROW_WIDTH = 64


# ---------------------------------------------------------------------------
# scenario sources


def read_bit_matrix(path) -> np.ndarray:
    """Row-major text of '0'/'1' characters, one row per line."""
    rows = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        raise ValueError(f"{path}: empty bit matrix")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width or set(r) - {"0", "1"}:
            raise ValueError(f"{path}:{i + 1}: expected {width} characters of 0/1")
    return np.array([[int(ch) for ch in r] for r in rows], dtype=np.uint8)


def write_bit_matrix(path, bits: np.ndarray) -> None:
    Path(path).write_text("".join("".join(str(int(b)) for b in row) + "\n" for row in bits))


@dataclass(frozen=True)
class ScenarioSource:
    """Where the bit arrays come from.

    ``uniform``: fair coins.  ``zero_first_row``: row 0 is all zeros.
    ``below_g``: fair coins in columns ``n < g(m)`` and zeros from ``g(m)`` on,
    so every row ends in zeros.  ``file``: one fixed matrix for every sample.

    Each sample owns the stream ``default_rng([seed, index])`` and rows are
    drawn in order at a fixed ``width``, so bits do not depend on how many
    rows are requested.
    """

    kind: str = "uniform"
    seed: int = 0
    g: Callable[[int], int] | None = None
    path: str | None = None
    width: int = DEFAULT_ROW_WIDTH

    def __post_init__(self):
        if self.kind not in ("uniform", "zero_first_row", "below_g", "file"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "below_g" and self.g is None:
            raise ValueError("below_g needs g")
        if self.kind == "file" and self.path is None:
            raise ValueError("file scenario needs a path")

    def _matrix(self) -> np.ndarray:
        return read_bit_matrix(self.path)

    def _shape(self, bits: np.ndarray) -> np.ndarray:
        if self.kind == "zero_first_row" and bits.shape[-2] > 0:
            bits[..., 0, :] = 0
        elif self.kind == "below_g":
            for m in range(bits.shape[-2]):
                bits[..., m, self.g(m):] = 0
        return bits

    def rows(self, index: int, n_rows: int) -> np.ndarray:
        """First ``n_rows`` rows of sample ``index`` as a ``(n_rows, width)`` array."""
        if self.kind == "file":
            mat = self._matrix()
            if n_rows > mat.shape[0]:
                raise IndexError(f"scenario file has only {mat.shape[0]} rows")
            return mat[:n_rows].copy()
        rng = np.random.default_rng([self.seed, index])
        bits = (rng.random((n_rows, self.width)) < 0.5).astype(np.uint8)
        return self._shape(bits)

    def batch(self, samples: int, n_rows: int, n_cols: int | None = None, start: int = 0) -> np.ndarray:
        n_cols = self.width if n_cols is None else n_cols
        if self.kind == "file":
            mat = self.rows(0, n_rows)[:, :n_cols]
            return np.broadcast_to(mat, (samples,) + mat.shape).copy()
        if n_cols > self.width:
            raise IndexError(f"requested {n_cols} columns but rows are {self.width} wide")
        out = np.empty((samples, n_rows, n_cols), dtype=np.uint8)
        for i in range(samples):
            out[i] = self.rows(start + i, n_rows)[:, :n_cols]
        return out

    def array(self, index: int = 0) -> "BitArray":
        return BitArray(self, index)


class BitArray:
    """Lazily materialized bit array for one sample."""

    def __init__(self, source: ScenarioSource, index: int):
        self.source = source
        self.index = index
        self._rows = np.zeros((0, source.width), dtype=np.uint8)

    def __getitem__(self, pos) -> int:
        m, n = pos
        if m >= len(self._rows):
            self._rows = self.source.rows(self.index, max(m + 1, 2 * len(self._rows)))
        if n >= self._rows.shape[1]:
            raise IndexError(f"column {n} is beyond the row width {self._rows.shape[1]}")
        return int(self._rows[m, n])


# ---------------------------------------------------------------------------
# strategies


@dataclass(frozen=True)
class GameView:
    """What the gambler sees before betting on ``(row, col)``."""

    row: int
    col: int
    step: int
    seen: tuple
    capital: Fraction
    oracle: Callable[[int, int], int]


@dataclass(frozen=True)
class BatchView:
    """Vectorized view across samples; ``seen`` is ``(samples, col)`` and
    ``oracle`` is ``(samples, row, width)``."""

    row: int
    col: int
    step: int
    seen: np.ndarray
    capital: np.ndarray
    oracle: np.ndarray


@dataclass(frozen=True)
class RowStrategy:
    """``bet_rule(view)`` returns a signed stake with ``|stake| <= capital``.

    ``progress_rule(view)`` returns True to move to the next row before
    betting on ``view.col``.  ``k_schedule(m)`` forces the move at column
    ``k(m)`` whatever the rules say.  ``batch_bet_rule`` is an optional
    vectorized copy of ``bet_rule`` used for Monte Carlo runs with a fixed
    schedule.
    """

    bet_rule: Callable[[GameView], object]
    progress_rule: Callable[[GameView], bool] | None = None
    k_schedule: Callable[[int], int] | None = None
    batch_bet_rule: Callable[[BatchView], np.ndarray] | None = None
    name: str = "strategy"

    def forced(self, m: int, n: int) -> bool:
        return self.k_schedule is not None and n >= self.k_schedule(m)


def _fixed_schedule(strategy: RowStrategy, steps: int) -> list[Position]:
    if strategy.k_schedule is None or strategy.progress_rule is not None:
        raise ValueError("batch play needs a fixed k_schedule and no progress_rule")
    out, m, idle = [], 0, 0
    while len(out) < steps:
        k = strategy.k_schedule(m)
        if k == 0:
            idle += 1
            if idle > 10_000:
                raise ValueError("k_schedule never schedules a bet")
        out.extend(Position(m, n) for n in range(min(k, steps - len(out))))
        m += 1
    return out


def run_game(
    strategy: RowStrategy,
    source: ScenarioSource | Mapping,
    steps: int,
    start_capital=1,
    sample_index: int = 0,
    *,
    max_rows: int | None = None,
) -> Trajectory:
    """Play ``steps`` bets on one sample and return the capital trajectory.

    ``source`` may also be a mapping ``Position -> bit`` (a fixed array).
    The trajectory's ``sample`` maps each bet position to its bit, and
    ``stops["advance"]`` lists the steps at which the gambler changed rows.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    bits = source.array(sample_index) if isinstance(source, ScenarioSource) else source
    capital = to_rational(start_capital)
    values, bets, advances = [capital], {}, []
    m = n = 0
    seen: list[int] = []
    idle = 0

    def oracle(r, c):
        if r >= m:
            raise PermissionError(f"row {r} is not yet available as oracle in row {m}")
        return bits[r, c]

    while len(values) <= steps:
        if max_rows is not None and m >= max_rows:
            break
        view = GameView(m, n, len(values) - 1, tuple(seen), capital, oracle)
        if strategy.forced(m, n) or (strategy.progress_rule is not None and strategy.progress_rule(view)):
            advances.append(len(values) - 1)
            m, n, seen = m + 1, 0, []
            idle += 1
            if idle > 10_000:
                raise ValueError("strategy keeps advancing without betting")
            continue
        idle = 0
        stake = to_rational(strategy.bet_rule(view))
        if abs(stake) > capital:
            raise ValueError(f"stake {stake} exceeds capital {capital} at {(m, n)}")
        bit = bits[m, n]
        capital = capital + stake if bit else capital - stake
        bets[Position(m, n)] = bit
        seen.append(bit)
        values.append(capital)
        n += 1
    return Trajectory(values, {"advance": tuple(advances)}, bets)


def run_game_batch(
    strategy: RowStrategy,
    source: ScenarioSource,
    steps: int,
    start_capital=1.0,
    samples: int = 1,
    first: int = 0,
    chunk: int = 4096,
) -> np.ndarray:
    """Float capital paths ``(samples, steps + 1)`` for a fixed-schedule
    strategy, using its vectorized rule."""
    if strategy.batch_bet_rule is None:
        raise ValueError(f"{strategy.name} has no vectorized rule")
    schedule = _fixed_schedule(strategy, steps)
    n_rows = schedule[-1].row + 1
    out = np.empty((samples, steps + 1))
    for lo in range(0, samples, chunk):
        size = min(chunk, samples - lo)
        bits = source.batch(size, n_rows, start=first + lo)
        cap = np.full(size, float(start_capital))
        out[lo:lo + size, 0] = cap
        for j, p in enumerate(schedule):
            view = BatchView(p.row, p.col, j, bits[:, p.row, :p.col], cap, bits[:, :p.row, :])
            stake = np.asarray(strategy.batch_bet_rule(view), dtype=float)
            if np.any(np.abs(stake) > cap * (1 + 1e-12) + 1e-300):
                raise ValueError(f"stake exceeds capital at {tuple(p)}")
            cap = np.where(bits[:, p.row, p.col] == 1, cap + stake, cap - stake)
            cap = np.maximum(cap, 0.0)
            out[lo:lo + size, j + 1] = cap
    return out


# ---------------------------------------------------------------------------
# game <-> martingale


def materialize_game(strategy: RowStrategy, rows: int, cols: int, start_capital=1) -> MartingaleSpec:
    """Capital as a lex-indexed martingale on a ``rows x cols`` array.

    The value at time ``(m, n)`` is the capital after every bet placed at
    positions before ``(m, n)``; the game is truncated to move on at column
    ``cols`` and to stop after the last row.
    """
    universe = [Position(r, c) for r in range(rows) for c in range(cols)]
    times = universe + [Position(rows, 0)]
    tables = {t: [] for t in times}
    for bits in product((0, 1), repeat=len(universe)):
        omega = dict(zip(universe, bits))
        cap = _capital_by_time(strategy, omega, rows, cols, to_rational(start_capital))
        for t in times:
            tables[t].append(cap[t])
    levels = tuple(CylinderFunction(universe, tables[t]) for t in times)
    return MartingaleSpec(TimeChain.lex(times), levels, True)


def _capital_by_time(strategy, omega, rows, cols, capital) -> dict:
    out = {}
    step = 0

    for m in range(rows):
        def oracle(r, c, _m=m):
            if r >= _m:
                raise PermissionError(f"row {r} is not yet available in row {_m}")
            return omega[Position(r, c)]

        seen: list[int] = []
        advanced = False
        for n in range(cols):
            out[Position(m, n)] = capital
            if advanced:
                continue
            view = GameView(m, n, step, tuple(seen), capital, oracle)
            if strategy.forced(m, n) or (strategy.progress_rule is not None and strategy.progress_rule(view)):
                advanced = True
                continue
            stake = to_rational(strategy.bet_rule(view))
            if abs(stake) > capital:
                raise ValueError(f"stake {stake} exceeds capital {capital}")
            bit = omega[Position(m, n)]
            capital = capital + stake if bit else capital - stake
            seen.append(bit)
            step += 1
    out[Position(rows, 0)] = capital
    return out


# ---------------------------------------------------------------------------
# upcrossings


def count_upcrossings(t: Trajectory | Sequence, a, b) -> int:
    """Completed upcrossings of ``[a, b]`` by the value sequence."""
    values = t.values if isinstance(t, Trajectory) else t
    return count_completed_upcrossings(values, a, b)


def count_upcrossings_batch(paths: np.ndarray, a: float, b: float) -> np.ndarray:
    """Vectorized completed-upcrossing counts, one per row of ``paths``."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    below = paths[:, 0] <= a
    counts = np.zeros(len(paths), dtype=np.int64)
    for j in range(1, paths.shape[1]):
        v = paths[:, j]
        done = below & (v >= b)
        counts += done
        below = np.where(done, False, below | (v <= a))
    return counts


# ---------------------------------------------------------------------------
# convergence report


def sample_paths(process, source: ScenarioSource, samples: int, horizon: int, start_capital=1.0) -> np.ndarray:
    """Float capital paths of a strategy or a materialized martingale."""
    if isinstance(process, RowStrategy):
        if process.batch_bet_rule is not None:
            return run_game_batch(process, source, horizon, start_capital, samples)
        return np.array([
            [float(v) for v in run_game(process, source, horizon, Fraction(start_capital).limit_denominator(), i).values]
            for i in range(samples)
        ])
    if isinstance(process, MartingaleSpec):
        if process.horizon < horizon:
            raise ValueError(f"martingale is materialized only to {process.horizon}")
        support = process.support()
        n_rows = max((p.row for p in support), default=0) + 1
        n_cols = max((p.col for p in support), default=0) + 1
        bits = source.batch(samples, n_rows, n_cols).astype(np.int64)
        return process.sample_paths(bits)[:, : horizon + 1]
    raise TypeError(f"cannot sample {type(process).__name__}")


@dataclass
class ConvergenceReport:
    samples: int
    horizons: tuple
    eps: float
    start_mean: float
    final_mean: dict
    final_se: dict
    osc_fraction: dict
    zero_fraction: dict
    ladder: tuple
    mean_upcrossings: dict
    oscillation: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "horizons": list(self.horizons),
            "eps": self.eps,
            "start_mean": self.start_mean,
            "final_mean": {str(h): v for h, v in self.final_mean.items()},
            "final_se": {str(h): v for h, v in self.final_se.items()},
            "osc_fraction": {str(h): v for h, v in self.osc_fraction.items()},
            "zero_fraction": {str(h): v for h, v in self.zero_fraction.items()},
            "ladder": [list(p) for p in self.ladder],
            "mean_upcrossings": {f"{a}:{b}": v for (a, b), v in self.mean_upcrossings.items()},
        }


def convergence_report(
    process,
    source: ScenarioSource,
    samples: int,
    horizons: Sequence[int] | int,
    eps: float = 0.1,
    ladder: Sequence[tuple] = ((0.5, 1.0), (1.0, 2.0), (2.0, 4.0)),
    start_capital=1.0,
) -> ConvergenceReport:
    """Oscillation (max - min over the last quarter of each horizon), the
    fraction of samples oscillating more than ``eps``, upcrossing counts on a
    ladder of intervals, and the mean/standard error of the final capital."""
    horizons = (horizons,) if isinstance(horizons, int) else tuple(sorted(horizons))
    paths = sample_paths(process, source, samples, max(horizons), start_capital)
    if np.any(paths < 0):
        raise ValueError("capital went negative; a nonnegative martingale is required")
    final_mean, final_se, osc_frac, zero_frac = {}, {}, {}, {}
    osc_last = None
    for h in horizons:
        tail = paths[:, h - h // 4: h + 1]
        osc = tail.max(axis=1) - tail.min(axis=1)
        final = paths[:, h]
        final_mean[h] = float(final.mean())
        final_se[h] = float(final.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.nan
        osc_frac[h] = float(np.mean(osc > eps))
        zero_frac[h] = float(np.mean(final == 0))
        osc_last = osc
    H = max(horizons)
    ups = {(a, b): float(count_upcrossings_batch(paths[:, : H + 1], a, b).mean()) for a, b in ladder}
    return ConvergenceReport(
        samples, horizons, eps, float(paths[:, 0].mean()), final_mean, final_se,
        osc_frac, zero_frac, tuple(ladder), ups, osc_last,
    )


# ---------------------------------------------------------------------------
# stock strategies (scalar rule plus an identical vectorized rule)


def zero_row_strategy(n: int) -> RowStrategy:
    """Stake everything on "the next bit of row 0 is 0" for ``n`` bets."""

    def bet(v):
        return -v.capital if v.row == 0 else 0

    def batch(v):
        return -v.capital if v.row == 0 else np.zeros_like(v.capital)

    return RowStrategy(bet, k_schedule=lambda m: n if m == 0 else 1, batch_bet_rule=batch, name="zero-row")


def decaying_fraction_strategy(per_row: int = 4) -> RowStrategy:
    """Back 1 with the fraction ``1/(step + 2)`` of current capital."""

    def bet(v):
        return v.capital * Fraction(1, v.step + 2)

    def batch(v):
        return v.capital / (v.step + 2)

    return RowStrategy(bet, k_schedule=lambda m: per_row, batch_bet_rule=batch, name="decaying-fraction")


def oracle_parity_strategy(per_row: int = 4) -> RowStrategy:
    """Back the parity of columns ``per_row .. 2*per_row - 1`` of the previous
    row, bits that were never bet on, staking ``1/(row + 2)`` of capital.
    Row 0 is not bet on.  Needs rows at least ``2 * per_row`` wide."""

    def bet(v):
        if v.row == 0:
            return 0
        parity = sum(v.oracle(v.row - 1, c) for c in range(per_row, 2 * per_row)) % 2
        sign = 1 if parity == 1 else -1
        return sign * v.capital * Fraction(1, v.row + 2)

    def batch(v):
        if v.row == 0:
            return np.zeros_like(v.capital)
        parity = v.oracle[:, v.row - 1, per_row:2 * per_row].sum(axis=1) % 2
        sign = np.where(parity == 1, 1.0, -1.0)
        return sign * v.capital / (v.row + 2)

    return RowStrategy(bet, k_schedule=lambda m: per_row, batch_bet_rule=batch, name="oracle-parity")


def shrinking_stake_strategy(per_row: int = 4, first=Fraction(1, 2), ratio=Fraction(15, 16)) -> RowStrategy:
    """Back 0 with the fixed amount ``first * ratio**step``, capped at capital."""
    first, ratio = Fraction(first), Fraction(ratio)

    def bet(v):
        return -min(v.capital, first * ratio ** v.step)

    def batch(v):
        return -np.minimum(v.capital, float(first) * float(ratio) ** v.step)

    return RowStrategy(bet, k_schedule=lambda m: per_row, batch_bet_rule=batch, name="shrinking-stake")


STOCK_STRATEGIES = {
    "zero-row": zero_row_strategy,
    "decaying-fraction": decaying_fraction_strategy,
    "oracle-parity": oracle_parity_strategy,
    "shrinking-stake": shrinking_stake_strategy,
}
