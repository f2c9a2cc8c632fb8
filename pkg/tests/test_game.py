import math
import random
from fractions import Fraction

import numpy as np
import pytest

from doobmart.bitspace import Position
from doobmart.game import (
    STOCK_STRATEGIES,
    RowStrategy,
    ScenarioSource,
    convergence_report,
    count_upcrossings,
    count_upcrossings_batch,
    decaying_fraction_strategy,
    materialize_game,
    read_bit_matrix,
    run_game,
    run_game_batch,
    sample_paths,
    write_bit_matrix,
    zero_row_strategy,
)
from doobmart.martingale import rows_spec, verify

from conftest import random_strategy


def test_zero_stake_keeps_capital():
    idle = RowStrategy(lambda v: 0, k_schedule=lambda m: 3)
    t = run_game(idle, ScenarioSource(seed=1), 12, Fraction(5, 2))
    assert set(t.values) == {Fraction(5, 2)}


@pytest.mark.parametrize("n", [1, 5, 10])
def test_zero_first_row_doubles(n):
    t = run_game(zero_row_strategy(n), ScenarioSource("zero_first_row", seed=3), n, 3)
    assert t.values[-1] == 3 * 2 ** n
    assert all(p.row == 0 for p in t.sample)


def test_zero_row_ruin_frequency():
    n, samples = 4, 20000
    paths = run_game_batch(zero_row_strategy(n), ScenarioSource(seed=11, width=8), n, 1.0, samples)
    ruined = np.mean(paths[:, -1] == 0)
    p = 1 - 2 ** -n
    assert abs(ruined - p) < 4 * math.sqrt(p * (1 - p) / samples)


def test_stake_above_capital_is_rejected():
    greedy = RowStrategy(lambda v: 2 * v.capital, k_schedule=lambda m: 2)
    with pytest.raises(ValueError):
        run_game(greedy, ScenarioSource(seed=0), 3)


def test_oracle_only_sees_earlier_rows():
    def peek(v):
        v.oracle(v.row, 0)
        return 0

    with pytest.raises(PermissionError):
        run_game(RowStrategy(peek, k_schedule=lambda m: 2), ScenarioSource(seed=0), 2)


def test_oracle_reads_unbet_bits():
    arr = {Position(r, c): (r + c) % 2 for r in range(4) for c in range(6)}
    seen = []

    def bet(v):
        if v.row:
            seen.append(v.oracle(v.row - 1, 5))
        return 0

    run_game(RowStrategy(bet, k_schedule=lambda m: 1), arr, 3)
    assert seen == [1, 0]  # column 5 of rows 0 and 1, never bet on


def test_k_schedule_forces_progress():
    t = run_game(RowStrategy(lambda v: 0, k_schedule=lambda m: m + 1), ScenarioSource(seed=0), 6)
    assert sorted(t.sample) == [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]


def test_adaptive_progress_rule():
    # move on after seeing a 1
    s = RowStrategy(lambda v: 0, progress_rule=lambda v: bool(v.seen) and v.seen[-1] == 1)
    arr = {Position(r, c): int(c == r) for r in range(5) for c in range(5)}
    t = run_game(s, arr, 6)
    assert sorted(t.sample) == [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]


def test_scenario_sources(tmp_path):
    z = ScenarioSource("zero_first_row", seed=2, width=10).rows(0, 4)
    assert not z[0].any() and z[1:].any()
    g = ScenarioSource("below_g", seed=2, g=lambda m: m + 1, width=6).rows(0, 4)
    for m in range(4):
        assert not g[m, m + 1:].any()
    u = ScenarioSource(seed=9, width=16)
    assert np.array_equal(u.rows(3, 2), u.rows(3, 5)[:2])  # prefixes agree
    assert not np.array_equal(u.rows(3, 2), u.rows(4, 2))
    path = tmp_path / "bits.txt"
    write_bit_matrix(path, u.rows(0, 3))
    f = ScenarioSource("file", path=str(path))
    assert np.array_equal(f.rows(0, 3), u.rows(0, 3))
    assert path.read_text().splitlines()[0] == "".join(map(str, u.rows(0, 1)[0]))


def test_bad_bit_matrix(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0101\n012\n")
    with pytest.raises(ValueError):
        read_bit_matrix(p)


@pytest.mark.parametrize("name", ["decaying-fraction", "oracle-parity", "shrinking-stake"])
def test_batch_matches_exact(name):
    strat = STOCK_STRATEGIES[name]()
    src = ScenarioSource(seed=5, width=8)
    batch = run_game_batch(strat, src, 24, 1.0, 6)
    for i in range(6):
        exact = [float(v) for v in run_game(strat, src, 24, 1, i).values]
        assert np.allclose(batch[i], exact, rtol=1e-12, atol=1e-15)


def test_materialized_game_is_a_martingale():
    r = random.Random(3)
    for _ in range(10):
        M = materialize_game(random_strategy(r), 3, 3)
        assert verify(M).ok


def test_materialized_game_matches_play():
    s = decaying_fraction_strategy(2)
    M = materialize_game(s, 2, 2)
    for i in range(16):
        bits = {Position(r, c): (i >> (2 * r + c)) & 1 for r in range(2) for c in range(2)}
        assert M.levels[-1].evaluate(bits) == run_game(s, bits, 4).values[-1]


def test_count_upcrossings_examples():
    assert count_upcrossings([1, 3, 1, 3, 1, 3], Fraction(3, 2), Fraction(5, 2)) == 3
    assert count_upcrossings([9, 7, 7, 4, 0], 1, 5) == 0
    with pytest.raises(ValueError):
        count_upcrossings([1, 2], 3, 3)


def test_count_upcrossings_batch_matches_scalar():
    r = np.random.default_rng(0)
    paths = r.integers(0, 7, size=(200, 15)).astype(float)
    got = count_upcrossings_batch(paths, 2.0, 4.0)
    assert list(got) == [count_upcrossings(list(p), 2.0, 4.0) for p in paths]


def test_count_upcrossings_monotone_in_b():
    r = random.Random(4)
    for _ in range(50):
        vals = [r.randint(0, 10) for _ in range(30)]
        counts = [count_upcrossings(vals, 2, b) for b in range(3, 11)]
        assert counts == sorted(counts, reverse=True)


def test_convergence_report_constant_martingale():
    M = rows_spec([2, 2, 2, 2, 2], nonneg=True)
    rep = convergence_report(M, ScenarioSource(seed=1, width=2), 50, [2, 4])
    assert rep.osc_fraction == {2: 0.0, 4: 0.0}
    assert not rep.oscillation.any()


def test_convergence_report_on_materialized_martingale():
    M = materialize_game(decaying_fraction_strategy(2), 2, 2)
    paths = sample_paths(M, ScenarioSource(seed=4, width=2), 4000, 4)
    assert paths.shape == (4000, 5)
    assert abs(paths[:, -1].mean() - 1) < 4 * paths[:, -1].std() / math.sqrt(4000)
