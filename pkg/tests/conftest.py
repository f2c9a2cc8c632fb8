import itertools
import random
from fractions import Fraction

import pytest

from doobmart.bitspace import CylinderFunction, Position
from doobmart.game import RowStrategy
from doobmart.martingale import MartingaleSpec, TimeChain
from doobmart.bitspace import LexPrefix, RowPrefix, cond_expectation


def random_rational(rng, lo=-8, hi=8, den=8):
    return Fraction(rng.randint(lo * den, hi * den), rng.randint(1, den))


def random_cf(rng, positions, lo=-8, hi=8):
    support = list(positions)
    return CylinderFunction(support, [random_rational(rng, lo, hi) for _ in range(2 ** len(support))])


def grid(rows, cols):
    return [Position(r, c) for r in range(rows) for c in range(cols)]


def brute_cond_expectation(f, D, universe):
    """Average of f over the bits outside D, by direct enumeration."""
    inside = [p for p in universe if p in D]
    outside = [p for p in universe if p not in D]
    table = []
    for head in itertools.product((0, 1), repeat=len(inside)):
        total = Fraction(0)
        for tail in itertools.product((0, 1), repeat=len(outside)):
            omega = dict(zip(inside, head)) | dict(zip(outside, tail))
            total += f.evaluate(omega)
        table.append(total / 2 ** len(outside))
    return CylinderFunction(inside, table)


def doob_rows_martingale(rng, rows, cols, nonneg=True):
    """M_n = E_n(F) for a random F on a rows x cols block."""
    F = random_cf(rng, grid(rows, cols), 0 if nonneg else -8, 8)
    levels = [cond_expectation(F, RowPrefix(n)) for n in range(rows + 1)]
    return MartingaleSpec(TimeChain.rows(), levels, nonneg)


def doob_lex_martingale(rng, rows, cols, nonneg=True):
    F = random_cf(rng, grid(rows, cols), 0 if nonneg else -8, 8)
    times = grid(rows, cols) + [Position(rows, 0)]
    levels = [cond_expectation(F, LexPrefix(*t)) for t in times]
    return MartingaleSpec(TimeChain.lex(times), levels, nonneg)


def random_strategy(r: random.Random):
    """Stake a random fraction of capital chosen from a table keyed by what is
    visible: the row, the bits seen in it and one oracle bit."""
    table = {}

    def key(v):
        return (v.row, v.seen, v.oracle(v.row - 1, 0) if v.row else None)

    def bet(v):
        k = key(v)
        if k not in table:
            table[k] = Fraction(r.randint(-4, 4), 4)
        return table[k] * v.capital

    if r.random() < 0.5:
        widths = [r.randint(0, 3) for _ in range(4)]
        return RowStrategy(bet, k_schedule=lambda m: widths[m])
    zeros = r.randint(1, 2)
    return RowStrategy(bet, progress_rule=lambda v: v.seen.count(0) >= zeros)


@pytest.fixture
def rng():
    return random.Random(20240611)
