"""Measures on lattices and free products, and exact transition tables."""

from fractions import Fraction

import pytest

from freewalk import (
    AdaptedMeasure,
    BudgetExceededError,
    ConvolutionTable,
    FreeProductSpec,
    IDENTITY,
    ball,
    lazy_spectral_radius,
    parse,
)
from freewalk.measures import LatticeMeasure, validate


def test_lattice_measure_drops_zero_atoms():
    mu = LatticeMeasure(1, {(1,): Fraction(1, 4), (-1,): Fraction(1, 4),
                            (2,): 0})
    assert (2,) not in mu.atoms
    assert mu.total_mass() == Fraction(1, 2)
    assert not mu.is_probability()


def test_simple_walk_properties():
    mu = LatticeMeasure.simple_walk(2)
    assert len(mu.atoms) == 4
    assert mu.is_probability() and mu.is_symmetric() and mu.is_unit_step()
    assert mu.mass_at_zero() == 0.0
    assert mu.axis_weights() == [0.25, 0.25]
    cov = mu.covariance()
    assert cov[0][0] == cov[1][1] == 0.5
    assert cov[0][1] == 0.0


def test_lazy_mixture():
    mu = LatticeMeasure.simple_walk(1).lazy(Fraction(1, 4))
    assert mu.mass_at_zero() == 0.25
    assert mu.atoms[(1,)] == Fraction(3, 8)
    assert mu.is_probability()


def test_generates_lattice_detects_sublattices():
    even = LatticeMeasure(1, {(2,): Fraction(1, 2), (-2,): Fraction(1, 2)})
    assert not even.generates_lattice()
    coprime = LatticeMeasure(1, {(2,): Fraction(1, 4), (-2,): Fraction(1, 4),
                                 (3,): Fraction(1, 4), (-3,): Fraction(1, 4)})
    assert coprime.generates_lattice()
    assert LatticeMeasure.simple_walk(3).generates_lattice()


def test_lazy_spectral_radius_formula():
    r = 2.0 / 3.0 ** 0.5
    assert lazy_spectral_radius(r, 0.0) == pytest.approx(r)
    # one lazy quarter-step: 1/R' = 1/4 + (3/4) / R
    expected = 1.0 / (0.25 + 0.75 / r)
    assert lazy_spectral_radius(r, 0.25) == pytest.approx(expected)
    with pytest.raises(ValueError):
        lazy_spectral_radius(0.9, 0.25)
    with pytest.raises(ValueError):
        lazy_spectral_radius(r, 1.0)


def test_adapted_measure_weights(f2_spec):
    adapted = AdaptedMeasure.simple(f2_spec)
    assert adapted.weights == (0.5, 0.5)
    lifted = adapted.lift()
    assert len(lifted.atoms) == 4
    assert all(w == 0.25 for w in lifted.atoms.values())
    with pytest.raises(ValueError):
        AdaptedMeasure.simple(f2_spec, [0.7, 0.7])
    with pytest.raises(ValueError):
        AdaptedMeasure.simple(f2_spec, [1.2, -0.2])


def test_validation_flags_periodicity(f2_spec):
    adapted = AdaptedMeasure.simple(f2_spec)
    report = validate(adapted.lift())
    assert report.probability and report.symmetric and report.admissible
    assert report.aperiodic == "no" and report.period_hint == 2
    assert not report.ok_for_ratio_limits()
    lazy = validate(adapted.lazy(Fraction(1, 4)).lift())
    assert lazy.aperiodic == "yes"
    assert lazy.ok_for_ratio_limits()


def test_table_matches_direct_convolution_powers(f2_spec):
    adapted = AdaptedMeasure.simple(f2_spec)
    table = ConvolutionTable(adapted, radius=6)
    table.run(12)
    # independent route: convolution powers of the lifted measure
    mu = adapted.lift()
    mu2 = mu.convolve(mu)
    mu4 = mu2.convolve(mu2)
    mu6 = mu4.convolve(mu2)
    for n, direct in ((2, mu2), (4, mu4), (6, mu6)):
        assert table.pn_return[n] == pytest.approx(
            direct.atoms.get(IDENTITY, 0.0), abs=1e-15)
    assert table.pn_return[2] == pytest.approx(0.25)
    assert table.pn_return[4] == pytest.approx(7.0 / 64.0)


def test_table_exactness_horizon(f2_spec):
    # returns of length <= 2 * radius cannot leave the ball, so a bigger
    # table must agree exactly on them
    adapted = AdaptedMeasure.simple(f2_spec)
    small = ConvolutionTable(adapted, radius=6)
    small.run(16)
    big = ConvolutionTable(adapted, radius=10)
    big.run(16)
    for n in range(0, 13):
        assert small.pn_return[n] == big.pn_return[n]
    assert small.pn_return[14] < big.pn_return[14]
    deficits = [small.mass_deficit(n) for n in range(17)]
    assert deficits[6] == 0.0
    assert all(b >= a for a, b in zip(deficits, deficits[1:]))
    assert deficits[-1] > 0.0


def test_table_row_and_power_routes_agree(f2_spec):
    adapted = AdaptedMeasure.simple(f2_spec).lazy(Fraction(1, 4))
    y = parse(f2_spec, "f1:(1).f2:(1)")
    rows = ConvolutionTable(adapted, radius=6)
    rows.register_target(y)
    rows.run(10)
    powers = ConvolutionTable(adapted, radius=6, keep_powers=True)
    powers.run(10)
    for n in range(2, 11):
        assert rows.transition(IDENTITY, y, n) == pytest.approx(
            powers.transition(IDENTITY, y, n), abs=1e-16)
    # left translation by x: the row route cannot serve unregistered pairs
    x = parse(f2_spec, "f1:(1)")
    assert powers.transition(x, y, 4) == pytest.approx(
        powers.transition(IDENTITY, parse(f2_spec, "f2:(1)"), 4), abs=1e-16)


def test_table_error_paths(f2_spec):
    adapted = AdaptedMeasure.simple(f2_spec)
    table = ConvolutionTable(adapted, radius=4, index_radius=2)
    table.register_target(parse(f2_spec, "f1:(1)"))
    with pytest.raises(RuntimeError):
        table.transition(IDENTITY, parse(f2_spec, "f1:(1)"), 2)
    table.run(8)
    with pytest.raises(RuntimeError, match="before run"):
        table.register_target(parse(f2_spec, "f2:(1)"))
    with pytest.raises(KeyError, match="id index"):
        table.id_of(parse(f2_spec, "f1:(3)"))
    with pytest.raises(KeyError, match="neither a registered row"):
        table.transition(IDENTITY, parse(f2_spec, "f2:(1)"), 2)
    with pytest.raises(BudgetExceededError):
        table.transition(IDENTITY, parse(f2_spec, "f1:(1)"), 9)
