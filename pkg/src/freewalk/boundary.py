"""Ratio-limit kernel experiments on the free product.

The central object is the kernel H(x,y), the limit of the transition
ratios P^n(x,y)/P^n(e,y).  Two independent routes approximate it: finite-n
ratios from a convolution table, extrapolated in 1/n, and ratios of
iterated Green sums on a radius grid approaching R, extrapolated in the
variable matching the singularity type.  All limits here are plain limits;
for the walk classes this package targets the ratio sequences converge
outright, so no generalized-limit bookkeeping is needed, and every
profile records the extrapolation variable it used.

On top of the kernels sit the derived diagnostics: harmonicity defects,
the comparison of H against the Martin kernel K_R along rays into the
boundary, boundary pseudometrics built from kernel differences, the scan
for the ratio-limit radical, and power-law fits of the local limit
exponent.  Everything is deterministic given its inputs; profiles export
as CSV rows and scans as JSON.
"""

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import islice
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .extrapolate import (
    log_abscissa,
    power_law_fit,
    ratio_limit_last3,
    richardson_limit,
    sqrt_abscissa,
)
from .groups import (
    IDENTITY,
    BudgetExceededError,
    Element,
    ball,
    enumerate_ball,
    format_element,
    multiply,
    relative_length,
)

__all__ = [
    "RegimeError",
    "KernelProfile",
    "RaySpec",
    "RayTrend",
    "MetricConfig",
    "RadicalScan",
    "LltFit",
    "h_finite_n",
    "h_via_sums",
    "h_many_via_sums",
    "harmonicity_residual",
    "hk_ratio_along_ray",
    "boundary_metric",
    "martin_kernel_fn",
    "finite_h_fn",
    "radical_scan",
    "llt_fit",
]


class RegimeError(ValueError):
    """A kernel route was requested outside the spectral regime it covers."""


@dataclass(frozen=True)
class RayTrend:
    """Trend statistics for a ratio-to-one profile along a ray."""

    last: float
    max_deviation: float
    decreasing: bool


@dataclass(frozen=True)
class KernelProfile:
    """A kernel approximant sequence together with its extrapolated limit.

    The abscissa holds the raw n or r values actually used; `variable`
    names the transformed variable the extrapolation ran in.  The error
    estimate is the difference of the last two extrapolation levels, the
    same convention as everywhere else in the package.
    """

    abscissa: Tuple[float, ...]
    values: Tuple[float, ...]
    extrapolated: float
    order: int
    error: float
    variable: str
    notes: Tuple[str, ...] = ()
    trend: Optional[RayTrend] = None

    def __post_init__(self):
        if len(self.abscissa) != len(self.values):
            raise ValueError("abscissa and values must have equal length")
        # raw values must be finite; skipping happens upstream, with a note
        for v in self.values:
            if not math.isfinite(v):
                raise ValueError(f"non-finite profile value {v}")

    def to_csv(self) -> str:
        """CSV rows (abscissa, value, extrapolant, error), newline terminated."""
        lines = ["abscissa,value,extrapolant,error"]
        for a, v in zip(self.abscissa, self.values):
            lines.append(f"{a!r},{v!r},{self.extrapolated!r},{self.error!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RaySpec:
    """A conical direction: truncations y_n = head * period^n.

    The period must start and end in different factors so that copies of
    it concatenate without merging, and the head must end outside the
    period's first factor.  Under those checks every truncation is already
    a normal form and a syllable prefix of the next one.
    """

    head: Element
    period: Element

    def __post_init__(self):
        if not self.period:
            raise ValueError("ray period must be nonempty")
        if self.period[0][0] == self.period[-1][0]:
            raise ValueError(
                "period starts and ends in the same factor; its powers would merge"
            )
        if self.head and self.head[-1][0] == self.period[0][0]:
            raise ValueError(
                "head ends in the period's first factor; truncations would merge"
            )
        for part in (self.head, self.period):
            for j in range(1, len(part)):
                if part[j][0] == part[j - 1][0]:
                    raise ValueError(f"{part} is not a normal form")
            for _, vector in part:
                if not any(vector):
                    raise ValueError(f"{part} contains an empty syllable")

    def depth(self, n: int) -> Element:
        """The truncation y_n; plain concatenation by the init checks."""
        if n < 0:
            raise ValueError(f"depth must be >= 0, got {n}")
        return self.head + self.period * n

    def relative_depth(self, n: int) -> int:
        return len(self.head) + n * len(self.period)

    def truncations(self, depths: Iterable[int]) -> List[Element]:
        return [self.depth(n) for n in depths]


def h_finite_n(x: Element, y: Element, table, n_list: Sequence[int]) -> KernelProfile:
    """H(x,y) from the ratios P^n(x,y)/P^n(e,y), extrapolated in 1/n.

    Steps with a vanishing denominator are skipped with a note (periodic
    walks leave holes; lazify the measure to fill them).  The limit is the
    quadratic through the last three surviving ratios in 1/n, the deepest
    extrapolant that stays stable at these horizons.
    """
    ns: List[int] = []
    ratios: List[float] = []
    notes: List[str] = []
    for n in n_list:
        den = table.transition(IDENTITY, y, n)
        if den <= 0.0:
            notes.append(f"n={n} skipped: P^n(e,y) = 0")
            continue
        ns.append(int(n))
        ratios.append(table.transition(x, y, n) / den)
    if not ns:
        raise ValueError("every requested n had a vanishing denominator")
    value, err = ratio_limit_last3(ns, ratios)
    return KernelProfile(
        abscissa=tuple(float(n) for n in ns),
        values=tuple(ratios),
        extrapolated=value,
        order=min(2, len(ns) - 1),
        error=err,
        variable="1/n",
        notes=tuple(notes),
    )


def _checked_sum_order(report, s: Optional[int]) -> int:
    """Validate the iterated-sum route for the walk's regime; return s.

    Valid for spectrally non-degenerate walks and for convergent
    degenerate ones.  Anywhere else, and for orders below the derivative
    order of a convergent walk, the ratio limit exists but is a different
    kernel (it fails (1/R)-harmonicity), so the request is refused.
    """
    if s is None:
        s = report.derivative_order
    if s < 1:
        raise ValueError(f"iterated-sum order must be >= 1, got {s}")
    if not (report.status == "non-degenerate" or report.convergent):
        raise RegimeError(
            f"the iterated-sum route needs a non-degenerate walk or a convergent "
            f"degenerate one; this walk is classified {report.status!r} "
            f"with convergent={report.convergent}"
        )
    if report.convergent and s < report.derivative_order:
        raise RegimeError(
            f"order-{s} sums do not recover the ratio-limit kernel on a "
            f"convergent walk: their ratio limit exists but is not "
            f"(1/R)-harmonic; use s >= {report.derivative_order}"
        )
    return s


def _checked_r_grid(r_grid: Sequence[float], R: float) -> List[float]:
    rs = [float(r) for r in r_grid]
    if len(rs) < 2:
        raise ValueError("need at least two grid radii to extrapolate")
    for a, b in zip(rs, rs[1:]):
        if b <= a:
            raise ValueError("r grid must be strictly increasing")
    if rs[-1] >= R:
        raise ValueError(f"grid must stay strictly below R = {R}")
    return rs


def _sums_abscissa(report, rs: Sequence[float], R: float) -> Tuple[List[float], str]:
    """sqrt(R-r) in the square-root regimes, reciprocal log in even rank."""
    if report.convergent and (report.degeneracy_rank or 0) % 2 == 0:
        return log_abscissa(rs, R), "1/log(1/(R-r))"
    return sqrt_abscissa(rs, R), "sqrt(R-r)"


def h_via_sums(
    x: Element,
    y: Element,
    s: Optional[int],
    r_grid: Sequence[float],
    system,
    report=None,
    ball_radius: int = 6,
    metric: str = "word",
    budget: int = 5_000_000,
) -> KernelProfile:
    """H(x,y) from iterated-sum ratios I^(s)(x,y|r)/I^(s)(e,y|r) as r -> R.

    The order s defaults to the walk's derivative order; the regime guard
    refuses walks the route does not cover.  Extrapolation runs in
    sqrt(R-r), except in even degenerate rank where the singularity is
    logarithmic and 1/log(1/(R-r)) is the right variable.
    """
    if report is None:
        report = system.spectral_report()
    s = _checked_sum_order(report, s)
    R = system.R
    rs = _checked_r_grid(r_grid, R)
    notes: List[str] = []
    vals: List[float] = []
    for r in rs:
        num, diag_n = system.iterated_sum(s, x, y, r, ball_radius, metric, budget)
        den, diag_d = system.iterated_sum(s, IDENTITY, y, r, ball_radius, metric, budget)
        if diag_n["budget_exceeded"] or diag_d["budget_exceeded"]:
            notes.append(f"r={r:.8g}: enumeration budget hit, ratio is partial")
        vals.append(num / den)
    xs, variable = _sums_abscissa(report, rs, R)
    value, err = richardson_limit(xs, vals, max_level=2)
    notes.append(f"order s={s}; regime {report.status}")
    return KernelProfile(
        abscissa=tuple(rs),
        values=tuple(vals),
        extrapolated=value,
        order=min(2, len(rs) - 1),
        error=err,
        variable=variable,
        notes=tuple(notes),
    )


def h_many_via_sums(
    xs: Sequence[Element],
    y: Element,
    s: Optional[int],
    r_grid: Sequence[float],
    system,
    report=None,
    ball_radius: int = 6,
    metric: str = "word",
    budget: int = 5_000_000,
) -> List[KernelProfile]:
    """h_via_sums for many x against one y, one profile per x.

    All x share the denominator and one matvec series per radius, so a
    whole ball of x costs barely more than a single one.  Every x must
    sit inside the tube around y (within ball_radius of the identity is
    always enough).
    """
    if report is None:
        report = system.spectral_report()
    s = _checked_sum_order(report, s)
    R = system.R
    rs = _checked_r_grid(r_grid, R)
    targets = list(xs) + [IDENTITY]
    notes: List[str] = []
    rows = []
    for r in rs:
        values, diag = system.iterated_sum_profile(
            s, targets, y, r, ball_radius, metric, budget
        )
        if diag["budget_exceeded"]:
            notes.append(f"r={r:.8g}: enumeration budget hit, ratios are partial")
        rows.append(values / values[-1])
    abscissa, variable = _sums_abscissa(report, rs, R)
    notes.append(f"order s={s}; regime {report.status}")
    profiles = []
    for j in range(len(xs)):
        vals = [float(row[j]) for row in rows]
        value, err = richardson_limit(abscissa, vals, max_level=2)
        profiles.append(
            KernelProfile(
                abscissa=tuple(rs),
                values=tuple(vals),
                extrapolated=value,
                order=min(2, len(rs) - 1),
                error=err,
                variable=variable,
                notes=tuple(notes),
            )
        )
    return profiles


def _value_lookup(u) -> Callable[[Element], float]:
    if callable(u):
        return u

    def lookup(g: Element) -> float:
        try:
            return u[g]
        except KeyError:
            raise KeyError(format_element(g)) from None

    return lookup


def harmonicity_residual(u, x: Element, mu, spectral_radius: float) -> float:
    """The defect |u(x)/R - sum_z mu(x^{-1}z) u(z)| at one site.

    u may be a mapping or a callable; mu a measure on the product (an
    adapted measure is lifted first).  A zero residual at every x is
    exactly (1/R)-harmonicity; the Green and ratio-limit kernels tested
    here are harmonic away from their pole, so pointwise residuals track
    how converged an approximant is.
    """
    if isinstance(mu, Mapping):
        atoms = mu
    elif hasattr(mu, "atoms"):
        atoms = mu.atoms
    elif hasattr(mu, "lift"):
        atoms = mu.lift().atoms
    else:
        raise TypeError(f"cannot read atoms from measure of type {type(mu).__name__}")
    lookup = _value_lookup(u)
    try:
        total = 0.0
        for w, weight in atoms.items():
            total += float(weight) * float(lookup(multiply(x, w)))
        ux = float(lookup(x))
    except KeyError as exc:
        raise ValueError(
            f"u is missing a value on the out-neighborhood of "
            f"{format_element(x)}: {exc}"
        ) from None
    return abs(ux / spectral_radius - total)


def hk_ratio_along_ray(
    x: Element,
    ray: RaySpec,
    depths: Sequence[int],
    method: str = "finite_n",
    *,
    system=None,
    table=None,
    n_list: Optional[Sequence[int]] = None,
    s: Optional[int] = None,
    report=None,
    r_grid: Optional[Sequence[float]] = None,
    ball_radius: int = 6,
    budget: int = 5_000_000,
) -> KernelProfile:
    """The ratio H(x,y_n)/K_R(x,y_n) along a ray, with trend statistics.

    K_R always comes from the product Green calculus at r = R; H comes
    from the route named by `method` ('finite_n' needs table and n_list,
    'sums' needs r_grid).  A budget or table-range failure at some depth
    truncates the profile there and leaves a note, so large-depth
    requests degrade to partial profiles instead of dying.
    """
    if system is None:
        raise ValueError("a Green system is required for the Martin kernel")
    if method == "finite_n":
        if table is None or n_list is None:
            raise ValueError("method 'finite_n' needs table= and n_list=")
    elif method == "sums":
        if r_grid is None:
            raise ValueError("method 'sums' needs r_grid=")
        if report is None:
            report = system.spectral_report()
    else:
        raise ValueError(f"unknown method {method!r}")
    R = system.R
    abscissa: List[float] = []
    ratios: List[float] = []
    notes: List[str] = []
    for n in depths:
        y = ray.depth(n)
        try:
            if method == "finite_n":
                h = h_finite_n(x, y, table, n_list).extrapolated
            else:
                h = h_via_sums(
                    x, y, s, r_grid, system,
                    report=report, ball_radius=ball_radius, budget=budget,
                ).extrapolated
        except (BudgetExceededError, KeyError) as exc:
            notes.append(f"stopped at depth {n}: {exc}")
            break
        k = system.martin_kernel(x, y, R)
        abscissa.append(float(relative_length(y)))
        ratios.append(h / k)
    if not ratios:
        raise ValueError(f"no depth could be computed: {notes}")
    deviations = [abs(v - 1.0) for v in ratios]
    trend = RayTrend(
        last=ratios[-1],
        max_deviation=max(deviations),
        decreasing=all(b <= a + 1e-12 for a, b in zip(deviations, deviations[1:])),
    )
    value, err = ratio_limit_last3([int(a) for a in abscissa], ratios)
    return KernelProfile(
        abscissa=tuple(abscissa),
        values=tuple(ratios),
        extrapolated=value,
        order=min(2, len(ratios) - 1),
        error=err,
        variable="1/n (relative depth)",
        notes=tuple(notes),
        trend=trend,
    )


@dataclass(frozen=True)
class MetricConfig:
    """Enumeration order and bound constants for the boundary metrics.

    phi(x) is the 1-based position of x in the deterministic length-lex
    enumeration, truncated after `truncation` elements.  Each bound
    D_x (= C_x) is the safety factor times the largest kernel value seen
    over the calibration ball, so the denominators 2^phi(x) D_x dominate
    every term the truncated sum actually meets.  Equal C and D keep the
    two metric families on the same scale, which the comparison tests use.
    """

    elements: Tuple[Element, ...]
    bounds: Tuple[float, ...]
    calibration_radius: int
    safety: float

    def __post_init__(self):
        if len(self.elements) != len(self.bounds):
            raise ValueError("need one bound per enumerated element")
        if any(b <= 0 for b in self.bounds):
            raise ValueError("bounds must be positive")

    @classmethod
    def calibrate(
        cls,
        spec,
        kernel: Callable[[Element, Element], float],
        truncation: int = 16,
        calibration_radius: int = 6,
        safety: float = 1.1,
    ) -> "MetricConfig":
        elements = tuple(islice(enumerate_ball(spec, truncation), truncation))
        calibration = ball(spec, calibration_radius)
        bounds = []
        for xelt in elements:
            peak = max(abs(float(kernel(xelt, yelt))) for yelt in calibration)
            bounds.append(safety * peak if peak > 0 else safety)
        return cls(elements, tuple(bounds), calibration_radius, float(safety))

    @property
    def truncation(self) -> int:
        return len(self.elements)

    @cached_property
    def _positions(self) -> Dict[Element, int]:
        return {g: j for j, g in enumerate(self.elements, start=1)}

    def phi(self, x: Element) -> int:
        try:
            return self._positions[x]
        except KeyError:
            raise KeyError(f"{format_element(x)} is beyond the truncation") from None

    def tail_bound(self) -> float:
        """Bound on the discarded tail: sum over phi(x) > T of 2^(1-phi)."""
        return 2.0 ** (1 - self.truncation)

    def dominates(self, kernel, ys: Iterable[Element]) -> bool:
        """Recheck that every bound covers the kernel on a given y set."""
        ys = list(ys)
        for xelt, bound in zip(self.elements, self.bounds):
            if any(abs(float(kernel(xelt, yelt))) > bound for yelt in ys):
                return False
        return True


def boundary_metric(y: Element, yp: Element, kernel, config: MetricConfig) -> float:
    """d(y,y') = sum_x (|k(x,y)-k(x,y')| + |1_y(x)-1_{y'}(x)|) / (2^phi(x) D_x).

    Pass a Martin kernel for the d_{K_r} family or an extrapolated ratio
    kernel for d_rho; the indicator term separates distinct group points
    even where the kernels agree.  The sum is truncated to the config's
    enumeration; config.tail_bound() bounds what was dropped.
    """
    total = 0.0
    for pos, (xelt, bound) in enumerate(zip(config.elements, config.bounds), start=1):
        diff = abs(float(kernel(xelt, y)) - float(kernel(xelt, yp)))
        indicator = abs((1.0 if xelt == y else 0.0) - (1.0 if xelt == yp else 0.0))
        total += (diff + indicator) / (2.0**pos * bound)
    return total


def martin_kernel_fn(system, r: float) -> Callable[[Element, Element], float]:
    """The kernel (x,y) -> K_r(x,y), for metrics and scans."""

    def kernel(xelt: Element, yelt: Element) -> float:
        return system.martin_kernel(xelt, yelt, r)

    return kernel


def finite_h_fn(table, n_list: Sequence[int]) -> Callable[[Element, Element], float]:
    """Memoized (x,y) -> extrapolated H(x,y) from finite-n table ratios."""
    cache: Dict[Tuple[Element, Element], float] = {}

    def kernel(xelt: Element, yelt: Element) -> float:
        key = (xelt, yelt)
        if key not in cache:
            cache[key] = h_finite_n(xelt, yelt, table, n_list).extrapolated
        return cache[key]

    return kernel


@dataclass(frozen=True)
class RadicalScan:
    """Per-element kernel deviations over a ball, and the candidate radical."""

    ball_radius: int
    test_radius: int
    method: str
    tol: float
    elements: Tuple[Element, ...]
    deviations: Tuple[float, ...]

    def deviation(self, g: Element) -> float:
        try:
            return self.deviations[self.elements.index(g)]
        except ValueError:
            raise KeyError(f"{format_element(g)} was not scanned") from None

    @property
    def candidates(self) -> Tuple[Element, ...]:
        return tuple(
            g for g, d in zip(self.elements, self.deviations) if d < self.tol
        )

    def to_json(self) -> str:
        payload = {
            "ball_radius": self.ball_radius,
            "test_radius": self.test_radius,
            "method": self.method,
            "tol": self.tol,
            "deviations": {
                format_element(g): d
                for g, d in zip(self.elements, self.deviations)
            },
            "candidates": [format_element(g) for g in self.candidates],
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def radical_scan(
    ball_radius: int,
    method: str = "finite_n",
    *,
    table=None,
    n_list: Optional[Sequence[int]] = None,
    system=None,
    r: Optional[float] = None,
    test_radius: int = 2,
    tol: float = 1e-2,
) -> RadicalScan:
    """Deviations dev(g) = max_x |H(x,g) - H(x,e)| over g in a ball.

    Elements with deviation below tol form the candidate radical: the set
    where translating the kernel's target is invisible to every tested x.
    For the free products here that should come out as {e} alone.  Method
    'finite_n' uses table ratios for H; 'martin' substitutes K_r (r
    defaults to R), a cheap proxy with the same invariance structure.
    """
    if method == "finite_n":
        if table is None or n_list is None:
            raise ValueError("method 'finite_n' needs table= and n_list=")
        spec = table.spec
        kernel = finite_h_fn(table, n_list)
    elif method == "martin":
        if system is None:
            raise ValueError("method 'martin' needs system=")
        spec = system.spec
        kernel = martin_kernel_fn(system, system.R if r is None else r)
    else:
        raise ValueError(f"unknown method {method!r}")
    gs = tuple(ball(spec, ball_radius))
    xs = tuple(ball(spec, test_radius))
    base = {xelt: kernel(xelt, IDENTITY) for xelt in xs}
    deviations = tuple(
        max(abs(kernel(xelt, g) - base[xelt]) for xelt in xs) for g in gs
    )
    return RadicalScan(ball_radius, test_radius, method, tol, gs, deviations)


class LltFit(NamedTuple):
    """Fitted local-limit read P^n(x,y) ~ coefficient * rate^-n * n^-exponent."""

    exponent: float
    coefficient: float
    rate_used: float
    residual: float
    n_used: Tuple[int, ...]


def llt_fit(table, x: Element, y: Element, n_range: Sequence[int],
            spectral_radius: float) -> LltFit:
    """Power-law fit of P^n(x,y) against rate^-n n^-p on a step window.

    Steps with zero probability (parity holes) are skipped.  The exponent
    estimates half the local dimension: 3/2 in the square-root regime,
    d/2 for a convergent walk of degenerate rank d.  Five points barely
    determine the correction basis, so short windows report an infinite
    residual rather than a deceptively exact one.
    """
    ns: List[int] = []
    vals: List[float] = []
    for n in n_range:
        p = table.transition(x, y, n)
        if p > 0.0:
            ns.append(int(n))
            vals.append(float(p))
    if len(ns) < 5:
        raise ValueError(f"need at least 5 usable steps, got {len(ns)}")
    exponent, coefficient, rms = power_law_fit(ns, vals, spectral_radius)
    residual = rms if len(ns) >= 6 else float("inf")
    return LltFit(exponent, coefficient, float(spectral_radius), residual, tuple(ns))
