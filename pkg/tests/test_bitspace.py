import itertools
import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from doobmart.bitspace import (
    BelowFunction,
    CylinderFunction,
    Explicit,
    LexPrefix,
    Position,
    RowPrefix,
    SupportCapError,
    Union,
    concat,
    cond_expectation,
    enumerate_assignments,
    equal_canonical,
    expectation,
    position_set_from_json,
    split,
)

from conftest import brute_cond_expectation, grid, random_cf


def test_position_order_is_lexicographic():
    ps = [Position(1, 0), Position(0, 5), Position(0, 2), Position(2, 0), Position(1, 3)]
    assert sorted(ps) == [(0, 2), (0, 5), (1, 0), (1, 3), (2, 0)]
    assert Position(0, 100) < Position(1, 0)


def test_expectation_examples():
    assert expectation(CylinderFunction.constant(5)) == 5
    f = CylinderFunction([(0, 0)], [1, 3])
    assert expectation(f) == 2


def test_expectation_matches_enumeration(rng):
    for _ in range(20):
        f = random_cf(rng, rng.sample(grid(3, 3), 3))
        brute = sum(f.evaluate(dict(zip(f.support, bits))) for bits in itertools.product((0, 1), repeat=len(f.support)))
        assert expectation(f) == Fraction(brute) / 2 ** len(f.support)


def test_cond_expectation_examples():
    f = CylinderFunction.bit((0, 0)) + CylinderFunction.bit((1, 0))
    g = cond_expectation(f, RowPrefix(1))
    assert g == CylinderFunction.bit((0, 0)) + Fraction(1, 2)
    assert cond_expectation(f, RowPrefix(0)) == 1
    assert cond_expectation(f, RowPrefix(2)) == f


def test_cond_expectation_matches_brute_force(rng):
    universe = grid(3, 3)
    sets = [RowPrefix(1), RowPrefix(2), LexPrefix(1, 1), LexPrefix(0, 2),
            BelowFunction({0: 2, 1: 1}), BelowFunction({0: 1}, 2, complemented=True),
            Explicit({(0, 1), (2, 2), (1, 0)})]
    for D in sets:
        for _ in range(5):
            f = random_cf(rng, rng.sample(universe, 5))
            assert cond_expectation(f, D) == brute_cond_expectation(f, D, universe)


def test_support_is_pruned_and_sorted():
    f = CylinderFunction([(1, 0), (0, 0)], [1, 1, 1, 1])
    assert f.support == ()
    assert f == 1
    g = CylinderFunction([(1, 0), (0, 0)], [0, 1, 0, 1])  # depends on (0,0) only
    assert g.support == (Position(0, 0),)
    assert g.table == (0, 1)
    h = CylinderFunction([(1, 0), (0, 0)], [0, 1, 2, 3])
    # reordered to (0,0), (1,0); the old pattern (b10, b00) maps to 2*b10 + b00
    assert h.support == (Position(0, 0), Position(1, 0))
    assert h.evaluate({(0, 0): 1, (1, 0): 0}) == 1
    assert h.evaluate({(0, 0): 0, (1, 0): 1}) == 2


def test_equal_canonical_examples():
    f = CylinderFunction.bit((0, 0))
    assert equal_canonical(f, f)
    assert equal_canonical(CylinderFunction([(0, 0)], [1, 1]), CylinderFunction.constant(1))
    assert not equal_canonical(f, 1 - f)


def test_floats_are_rejected():
    with pytest.raises(TypeError):
        CylinderFunction.constant(0.5)


def test_support_cap():
    with pytest.raises(SupportCapError):
        CylinderFunction(grid(2, 3), [0] * 64, cap=5)


def test_json_round_trip(rng):
    f = random_cf(rng, grid(2, 2))
    obj = json.loads(f.dumps())
    assert all(isinstance(v, str) and "." not in v for v in obj["table"])
    assert CylinderFunction.from_json(obj) == f


def test_position_set_json_round_trip():
    for D in [RowPrefix(2), LexPrefix(1, 3), BelowFunction({0: 2}, 1, True), Explicit({(0, 0)}),
              Union((RowPrefix(1), Explicit({(3, 3)})))]:
        E = position_set_from_json(json.loads(json.dumps(D.to_json())))
        assert all((p in D) == (p in E) for p in grid(5, 5))


def test_concat_examples():
    D = LexPrefix(1, 0)
    tail = {(0, 0): 1, (0, 1): 0, (1, 2): 1}
    assert concat({}, tail, D) == {(1, 0): 1, (1, 1): 0, (2, 2): 1}
    omega = {p: (p.row + p.col) % 2 for p in grid(3, 3)}
    assert concat(*split(omega, D), D) == omega


def test_concat_row_prefix_hand_cases():
    # omega_{<n} followed by xi: xi's row i becomes row n + i
    assert concat({(0, 0): 1}, {(0, 0): 0}, RowPrefix(1)) == {(0, 0): 1, (1, 0): 0}
    assert concat({(0, 1): 1, (1, 0): 1}, {(0, 3): 1, (2, 0): 0}, RowPrefix(2)) == {
        (0, 1): 1, (1, 0): 1, (2, 3): 1, (4, 0): 0}
    assert concat({}, {(0, 0): 1, (1, 1): 1}, RowPrefix(3)) == {(3, 0): 1, (4, 1): 1}


def test_concat_rejects_bad_prefix_and_collisions():
    with pytest.raises(ValueError):
        concat({(2, 0): 1}, {}, RowPrefix(1))


def test_concat_below_function():
    A = BelowFunction({0: 2, 1: 1})  # A_f: row 0 cols 0-1, row 1 col 0
    assert concat({}, {(0, 0): 1, (1, 0): 0}, A) == {(0, 2): 1, (1, 1): 0}
    B = A.complement()  # complement of B_f is A_f, listed as one sequence
    assert concat({}, {(0, 0): 1, (0, 1): 0, (0, 2): 1}, B) == {(0, 0): 1, (0, 1): 0, (1, 0): 1}


@pytest.mark.parametrize("D", [RowPrefix(1), LexPrefix(1, 2), BelowFunction({0: 1, 1: 3, 2: 0}),
                               BelowFunction({0: 1, 1: 2}, 0, True), Explicit({(0, 0), (1, 1), (2, 3)})])
def test_split_concat_round_trip(D):
    r = random.Random(7)
    for _ in range(20):
        omega = {p: r.randint(0, 1) for p in grid(3, 4)}
        prefix, tail = split(omega, D)
        assert concat(prefix, tail, D) == omega


def test_enumerate_assignments_order():
    got = [tuple(a.values()) for a in enumerate_assignments([(1, 0), (0, 0)])]
    assert got == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_arithmetic_aligns_supports():
    x, y = CylinderFunction.bit((0, 0)), CylinderFunction.bit((0, 1))
    f = 3 * x - y / 2 + 1
    for a, b in itertools.product((0, 1), repeat=2):
        assert f.evaluate({(0, 0): a, (0, 1): b}) == 3 * a - Fraction(b, 2) + 1
    assert (x * x) == x
    assert abs(x - y).max() == 1


# property checks ------------------------------------------------------------

positions = st.builds(Position, st.integers(0, 3), st.integers(0, 3))
rationals = st.fractions(min_value=-10, max_value=10, max_denominator=12)


@st.composite
def cylinder(draw, max_support=5):
    support = draw(st.lists(positions, min_size=0, max_size=max_support, unique=True))
    table = draw(st.lists(rationals, min_size=2 ** len(support), max_size=2 ** len(support)))
    return CylinderFunction(support, table)


past_sets = st.one_of(
    st.builds(RowPrefix, st.integers(0, 4)),
    st.builds(LexPrefix, st.integers(0, 3), st.integers(0, 4)),
    st.builds(lambda t: BelowFunction(dict(enumerate(t))), st.lists(st.integers(0, 4), max_size=4)),
)


@settings(max_examples=150, deadline=None)
@given(cylinder(), cylinder(), rationals, past_sets)
def test_linearity_and_mean(f, g, c, D):
    assert cond_expectation(c * f + g, D) == c * cond_expectation(f, D) + cond_expectation(g, D)
    assert expectation(cond_expectation(f, D)) == expectation(f)


@settings(max_examples=150, deadline=None)
@given(cylinder(), cylinder(), past_sets)
def test_taking_out_what_is_known(f, g, D):
    known = cond_expectation(f, D)  # any D-measurable factor
    assert cond_expectation(known * g, D) == known * cond_expectation(g, D)
    assert cond_expectation(known, D) == known


@settings(max_examples=150, deadline=None)
@given(cylinder(), st.integers(0, 3), st.integers(0, 4), st.integers(0, 3), st.integers(0, 4))
def test_tower_and_contraction(f, r1, c1, r2, c2):
    C, D = sorted([LexPrefix(r1, c1), LexPrefix(r2, c2)], key=lambda s: (s.row, s.col))
    assert cond_expectation(cond_expectation(f, D), C) == cond_expectation(f, C)
    assert cond_expectation(f, D).sup_norm() <= cond_expectation(abs(f), D).max()
    assert cond_expectation(f, D).sup_norm() <= f.sup_norm()
