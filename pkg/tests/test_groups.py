"""Normal-form arithmetic, metrics, and ball enumeration."""

import numpy as np
import pytest

from freewalk import (
    BudgetExceededError,
    FreeProductSpec,
    IDENTITY,
    ball,
    common_prefix_length,
    enumerate_ball,
    format_element,
    generators,
    inverse,
    multiply,
    normalize,
    parse,
    prefix,
    prefix_points,
    random_element,
    relative_length,
    word_length,
)
from freewalk.groups import lattice_ball_size


def _assert_normal(spec, a):
    for factor, vector in a:
        assert any(vector), f"zero syllable in {a}"
        assert len(vector) == spec.rank_of(factor)
    for s, t in zip(a, a[1:]):
        assert s[0] != t[0], f"adjacent syllables share a factor in {a}"


def test_normalize_merges_and_cancels(f2_spec):
    assert normalize([(1, (1,)), (1, (1,))]) == ((1, (2,)),)
    assert normalize([(1, (1,)), (1, (-1,))]) == IDENTITY
    # a full cascade: b^-1 a^-1 a b collapses from the middle outward
    word = [(2, (-1,)), (1, (-1,)), (1, (1,)), (2, (1,))]
    assert normalize(word) == IDENTITY
    assert normalize([(1, (0,)), (2, (3,))]) == ((2, (3,)),)


def test_group_laws_on_random_elements(z3z_spec):
    rng = np.random.default_rng(11)
    for _ in range(200):
        a = random_element(z3z_spec, rng)
        b = random_element(z3z_spec, rng)
        c = random_element(z3z_spec, rng)
        _assert_normal(z3z_spec, multiply(a, b))
        assert multiply(multiply(a, b), c) == multiply(a, multiply(b, c))
        assert multiply(a, inverse(a)) == IDENTITY
        assert multiply(a, IDENTITY) == a
        assert inverse(inverse(a)) == a


def test_word_length_is_a_metric(f2_spec):
    rng = np.random.default_rng(3)
    assert word_length(parse(f2_spec, "f1:(2).f2:(-1)")) == 3
    for _ in range(100):
        a = random_element(f2_spec, rng)
        b = random_element(f2_spec, rng)
        assert word_length(inverse(a)) == word_length(a)
        assert word_length(multiply(a, b)) <= word_length(a) + word_length(b)


def test_relative_length_counts_syllables(z3z_spec):
    g = parse(z3z_spec, "f1:(2,0,-1).f2:(4)")
    assert relative_length(g) == 2
    assert word_length(g) == 7


def test_prefixes(f2_spec):
    z = parse(f2_spec, "f1:(1).f2:(-2).f1:(1)")
    points = prefix_points(z)
    assert points[0] == IDENTITY and points[-1] == z
    for j, y in enumerate(points):
        assert prefix(z, j) == y
        assert common_prefix_length(y, z) == j
    with pytest.raises(ValueError):
        prefix(z, 4)


def test_parse_format_roundtrip(z3z_spec):
    rng = np.random.default_rng(5)
    assert parse(z3z_spec, "e") == IDENTITY
    assert format_element(IDENTITY) == "e"
    for _ in range(100):
        a = random_element(z3z_spec, rng)
        assert parse(z3z_spec, format_element(a)) == a


def test_parse_rejects_bad_input(f2_spec):
    with pytest.raises(ValueError, match="cannot parse"):
        parse(f2_spec, "f1:[1]")
    with pytest.raises(ValueError, match="rank"):
        parse(f2_spec, "f1:(1,2)")
    with pytest.raises(ValueError, match="normal form"):
        parse(f2_spec, "f1:(1).f1:(1)")
    with pytest.raises(ValueError):
        parse(f2_spec, "f3:(1)")


def test_generators(f2_spec, z3z_spec):
    gens2 = generators(f2_spec)
    assert len(gens2) == 4
    gens3 = generators(z3z_spec)
    assert len(gens3) == 8
    for g in gens2 + gens3:
        assert word_length(g) == 1
    assert len(set(gens3)) == 8


def test_ball_sizes_and_order(f2_spec, z3z_spec):
    # free group on two letters: sphere k has 4 * 3^(k-1) elements
    assert [len(ball(f2_spec, r)) for r in range(4)] == [1, 5, 17, 53]
    assert [len(ball(z3z_spec, r)) for r in range(4)] == [1, 9, 53, 285]
    b = ball(f2_spec, 3)
    assert b[0] == IDENTITY
    assert len(set(b)) == len(b)
    assert all(word_length(g) <= 3 for g in b)
    assert {inverse(g) for g in b} == set(b)
    # deterministic: two enumerations agree element for element
    assert list(enumerate_ball(f2_spec, 3)) == b


def test_lattice_ball_size_closed_form():
    for d, r in [(1, 4), (2, 3), (3, 2), (5, 3)]:
        grid = np.indices((2 * r + 1,) * d).reshape(d, -1) - r
        brute = int(np.sum(np.abs(grid).sum(axis=0) <= r))
        assert lattice_ball_size(d, r) == brute


def test_enumeration_budgets(f2_spec):
    with pytest.raises(BudgetExceededError) as info:
        list(enumerate_ball(f2_spec, 3, budget=10))
    assert info.value.partial_count == 10
    # relative-metric balls are infinite, so a budget is mandatory
    with pytest.raises(BudgetExceededError):
        list(enumerate_ball(f2_spec, 1, metric="relative"))
    got = []
    with pytest.raises(BudgetExceededError):
        for g in enumerate_ball(f2_spec, 1, metric="relative", budget=50):
            got.append(g)
    assert len(got) == 50
    assert all(relative_length(g) <= 1 for g in got)


def test_random_element_is_seeded_and_normal(z3z_spec):
    a = random_element(z3z_spec, np.random.default_rng(42), max_syllables=5)
    b = random_element(z3z_spec, np.random.default_rng(42), max_syllables=5)
    assert a == b
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = random_element(z3z_spec, rng, max_syllables=4, max_coord=3)
        _assert_normal(z3z_spec, g)
        assert relative_length(g) <= 4
