"""Limit extraction routines, checked against sequences with known limits."""

import math

import numpy as np
import pytest

from freewalk import (
    geometric_decay_fit,
    power_law_fit,
    ratio_limit_last3,
    richardson_limit,
)
from freewalk.extrapolate import (
    linear_fit_r2,
    log_abscissa,
    neville_table,
    sqrt_abscissa,
)


def test_richardson_recovers_polynomial_limits():
    xs = [0.4, 0.2, 0.1, 0.05]
    ys = [7.0 + 3.0 * x - 2.0 * x * x for x in xs]
    value, error = richardson_limit(xs, ys, max_level=2)
    assert abs(value - 7.0) < 1e-12
    # the error estimate is the last level gap: conservative, not tiny
    assert 1e-12 < error < 0.1
    ys = [7.0 + 3.0 * x for x in xs]
    value, error = richardson_limit(xs, ys, max_level=2)
    assert abs(value - 7.0) < 1e-12
    assert error < 1e-12
    # one point: the value itself, with no error claim
    value, error = richardson_limit([0.3], [5.0])
    assert value == 5.0 and math.isinf(error)


def test_neville_table_shape():
    xs = [0.4, 0.2, 0.1]
    ys = [1.0 + x for x in xs]
    rows = neville_table(xs, ys, 2)
    assert [len(r) for r in rows] == [3, 2, 1]
    assert abs(rows[1][-1] - 1.0) < 1e-12


def test_ratio_limit_last3_kills_two_correction_orders():
    ns = [10, 12, 14]
    ratios = [2.5 + 0.8 / n - 1.3 / n**2 for n in ns]
    value, error = ratio_limit_last3(ns, ratios)
    assert abs(value - 2.5) < 1e-12
    assert error < 1e-2


def test_abscissae_are_decreasing_toward_zero():
    rs = [0.5, 0.8, 0.95]
    sq = sqrt_abscissa(rs, 1.0)
    lg = log_abscissa(rs, 1.0)
    assert sq == [math.sqrt(1.0 - r) for r in rs]
    assert lg == [1.0 / math.log(1.0 / (1.0 - r)) for r in rs]
    assert sq[0] > sq[-1] > 0
    assert lg[0] > lg[-1] > 0


def test_power_law_fit_recovers_planted_exponent():
    ns = list(range(8, 41, 2))
    vals = [2.3 * 1.1 ** (-n) * n ** (-1.5) for n in ns]
    p, c, rms = power_law_fit(ns, vals, 1.1)
    assert abs(p - 1.5) < 1e-9
    assert abs(c - 2.3) < 1e-8
    assert rms < 1e-12
    # a 1/n correction lands in the fit basis up to its n^-3 remainder
    vals = [v * (1.0 + 0.7 / n) for v, n in zip(vals, ns)]
    p, _, _ = power_law_fit(ns, vals, 1.1)
    assert abs(p - 1.5) < 1e-3


def test_linear_fit_r2():
    xs = [1.0, 2.0, 3.0, 4.0]
    slope, intercept, r2 = linear_fit_r2(xs, [2.0 * x - 1.0 for x in xs])
    assert abs(slope - 2.0) < 1e-12
    assert abs(intercept + 1.0) < 1e-12
    assert abs(r2 - 1.0) < 1e-12
    rng = np.random.default_rng(0)
    noisy = [2.0 * x - 1.0 + 0.3 * rng.standard_normal() for x in xs]
    _, _, r2 = linear_fit_r2(xs, noisy)
    assert r2 < 1.0


def test_geometric_decay_fit_recovers_rate_and_excludes_zeros():
    depths = list(range(2, 9))
    devs = [0.3 * 0.6**n for n in depths]
    c, alpha, r2, kept = geometric_decay_fit(depths, devs)
    assert abs(alpha - 0.6) < 1e-12
    assert abs(c - 0.3) < 1e-12
    assert r2 > 0.999
    assert kept == depths

    # zeros are float residue of exact identities, not decay data
    mixed = [0.0, devs[1], 0.0, devs[3], devs[4], 0.0, devs[6]]
    _, alpha, _, kept = geometric_decay_fit(depths, mixed)
    assert abs(alpha - 0.6) < 1e-12
    assert kept == [3, 5, 6, 8]

    c, alpha, r2, kept = geometric_decay_fit(depths, [0.0] * 7)
    assert math.isnan(alpha) and math.isnan(c)
    assert r2 == 0.0 and kept == []
