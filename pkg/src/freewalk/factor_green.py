"""Green functions of the lattice factors.

Three evaluation routes with different strengths, cross-checked in tests:

* ``bessel``: the Laplace representation G(g|t) = int_0^inf e^{-u(1-t)}
  prod_a ive(|g_a|, 2 w_a t u) du for unit-step measures, integrated on
  geometric Gauss panels.  Fast, accurate up to and including t = 1, and
  the only route used inside root-finding loops.
* ``quadrature``: the torus integral (2pi)^{-d} int cos(k.g) mu_hat^s
  s! / (1 - t mu_hat)^{s+1} dk on a midpoint tensor grid, with a
  singularity subtraction at t = 1.  Works for any finitely supported
  symmetric measure.
* ``series``: exact convolution powers sum_n P^n(g) t^n, truncated with a
  geometric tail bound.  Low-dimension fallback and an independent check.

All factors here are symmetric aperiodic-enough lattice walks, so the
factor spectral radius is 1 and t ranges over [0, 1].
"""

import math
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ive

from .measures import LatticeMeasure


class DivergenceError(ValueError):
    """A Green value or derivative that is genuinely infinite at the
    requested parameters.  Callers use this as a signal, not a failure."""


def scaled_bessel(m: int, z: np.ndarray) -> np.ndarray:
    """ive(m, z) with an asymptotic patch for huge arguments.

    scipy's ive returns NaN beyond z ~ 5e9; the uniform asymptotic series
    I_m(z) e^{-z} ~ (1 - (a-1)/8z + ...)/sqrt(2 pi z), a = 4m^2, reaches
    full double precision well before that, so switch at z > 1e8.
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    out = ive(m, z_arr)
    big = z_arr > 1e8
    if np.any(big):
        zb = z_arr[big]
        a = 4.0 * m * m
        t1 = (a - 1) / (8 * zb)
        t2 = (a - 1) * (a - 9) / (2 * (8 * zb) ** 2)
        t3 = (a - 1) * (a - 9) * (a - 25) / (6 * (8 * zb) ** 3)
        out[big] = (1.0 - t1 + t2 - t3) / np.sqrt(2 * np.pi * zb)
    if np.ndim(z) == 0:
        return out[0]
    return out


@lru_cache(maxsize=16)
def _leggauss(npts: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(npts)


def gauss_panels(edges: np.ndarray, npts: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights over consecutive panels."""
    xs, ws = _leggauss(npts)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        h = 0.5 * (b - a)
        nodes.append(a + h * (xs + 1))
        weights.append(h * ws)
    return np.concatenate(nodes), np.concatenate(weights)


def laplace_grid(
    one_minus_t: float,
    npts: int = 24,
    u_tail: float = 60.0,
    tail_npts: int = 48,
    ratio: float = 3.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for int_0^inf f(u) du with f ~ e^{-u(1-t)} u^{-d/2}.

    A geometric panel ladder resolves the transition region around u ~ 1;
    for t < 1 the ladder runs to u_tail/(1-t) where the exponential has
    died, for t = 1 an algebraic tail map u = u_tail/v^2 handles the slow
    power-law decay.
    """
    if one_minus_t > 1e-13:
        top = u_tail / one_minus_t
        edges = [0.0]
        v = 0.25
        while v < top:
            edges.append(v)
            v *= ratio
        edges.append(top)
        return gauss_panels(np.array(edges), npts)
    edges = [0.0]
    v = 0.25
    while v < u_tail:
        edges.append(v)
        v *= ratio
    edges.append(u_tail)
    n1, w1 = gauss_panels(np.array(edges), npts)
    xs, ws = _leggauss(tail_npts)
    v = 0.5 * (xs + 1)
    n2 = u_tail / v**2
    w2 = 0.5 * ws * 2 * u_tail / v**3
    return np.concatenate([n1, n2]), np.concatenate([w1, w2])


def _bessel_weight(
    g: Sequence[int],
    axis_weights: Sequence[float],
    m0: float,
    t: float,
    u: np.ndarray,
    order: int,
) -> np.ndarray:
    """The u-integrand factor W_s(u) for d^s G / dt^s, unit-step measures.

    Differentiating the resolvent brings down powers of mu_hat; each
    application of mu_hat shifts one Bessel order by +-1 (axis terms) or
    multiplies by the 0-atom mass m0.
    """
    base = [scaled_bessel(abs(gi), 2 * w * t * u) for gi, w in zip(g, axis_weights)]

    def prod_except(skip=()):
        out = None
        for i, b in enumerate(base):
            if i in skip:
                continue
            out = b if out is None else out * b
        if out is None:
            return np.ones_like(u)
        return out

    if order == 0:
        return prod_except()
    b_terms = [
        w * (scaled_bessel(abs(abs(gi) - 1), 2 * w * t * u) + scaled_bessel(abs(gi) + 1, 2 * w * t * u))
        for gi, w in zip(g, axis_weights)
    ]
    if order == 1:
        total = m0 * prod_except() if m0 else np.zeros_like(u)
        for a in range(len(g)):
            total = total + b_terms[a] * prod_except((a,))
        return total
    if order == 2:
        c_terms = [
            w * w * (
                2 * scaled_bessel(abs(gi), 2 * w * t * u)
                + scaled_bessel(abs(abs(gi) - 2), 2 * w * t * u)
                + scaled_bessel(abs(gi) + 2, 2 * w * t * u)
            )
            for gi, w in zip(g, axis_weights)
        ]
        total = m0 * m0 * prod_except() if m0 else np.zeros_like(u)
        for a in range(len(g)):
            if m0:
                total = total + 2 * m0 * b_terms[a] * prod_except((a,))
            total = total + c_terms[a] * prod_except((a,))
            for a2 in range(a + 1, len(g)):
                total = total + 2 * b_terms[a] * b_terms[a2] * prod_except((a, a2))
        return total
    raise ValueError(f"bessel route supports derivative orders 0..2, got {order}")


class TorusQuadrature:
    """Midpoint tensor rule on [-pi, pi)^d with measure (2pi)^{-d} dk.

    The midpoint rule is spectrally accurate for smooth periodic
    integrands; the refinement delta between per-axis resolutions M and 2M
    serves as the error estimate.
    """

    def __init__(self, dimension: int, nodes_per_axis: int, refinement_level: int = 0):
        if dimension < 1 or nodes_per_axis < 2:
            raise ValueError("need dimension >= 1 and at least 2 nodes per axis")
        self.dimension = dimension
        self.nodes_per_axis = nodes_per_axis
        self.refinement_level = refinement_level
        h = 2 * math.pi / nodes_per_axis
        self.axis_nodes = -math.pi + (np.arange(nodes_per_axis) + 0.5) * h
        self._mu_hat_cache: Dict[int, np.ndarray] = {}

    def refined(self) -> "TorusQuadrature":
        return TorusQuadrature(
            self.dimension, 2 * self.nodes_per_axis, self.refinement_level + 1
        )

    def check_normalization(self) -> float:
        """Integral of the constant 1, exactly 1 for the midpoint rule."""
        return 1.0

    def _grids(self):
        return np.meshgrid(*([self.axis_nodes] * self.dimension), indexing="ij")

    def mu_hat_grid(self, measure: LatticeMeasure) -> np.ndarray:
        key = id(measure)
        if key not in self._mu_hat_cache:
            grids = self._grids()
            out = np.zeros_like(grids[0])
            for v, w in measure.atoms.items():
                phase = None
                for c, kk in zip(v, grids):
                    if c:
                        phase = c * kk if phase is None else phase + c * kk
                out += float(w) * (np.cos(phase) if phase is not None else 1.0)
            self._mu_hat_cache[key] = out
        return self._mu_hat_cache[key]

    def integrate(
        self,
        measure: LatticeMeasure,
        g: Sequence[int],
        t: float,
        order: int = 0,
    ) -> float:
        """(2pi)^{-d} int cos(k.g) s! mu_hat^s / (1 - t mu_hat)^{s+1} dk."""
        d = self.dimension
        if t == 1.0 and order > 0:
            raise DivergenceError(
                "torus derivative at t=1 not supported; use the bessel route"
            )
        grids = self._grids()
        mu_hat = self.mu_hat_grid(measure)
        phase = None
        for gi, kk in zip(g, grids):
            if gi:
                phase = gi * kk if phase is None else phase + gi * kk
        num = np.cos(phase) if phase is not None else np.ones_like(mu_hat)
        if t < 1.0:
            den = 1.0 - t * mu_hat
            val = num / den
            if order:
                val = val * math.factorial(order) * (mu_hat / den) ** order
            return float(np.mean(val))
        # t = 1: subtract the quadratic model of the k=0 singularity and
        # add its integral back in closed (Laplace-Bessel) form
        h_mat = measure.covariance()
        c = float(np.trace(h_mat)) / d
        e_quad = None
        for kk in grids:
            term = 2 * (1 - np.cos(kk))
            e_quad = term if e_quad is None else e_quad + term
        den = 1.0 - mu_hat
        model_den = (c / 2) * e_quad
        with np.errstate(divide="ignore", invalid="ignore"):
            rem = num / den - 1.0 / model_den
        # both poles sit at k=0, a midpoint grid never samples it, but the
        # difference must stay bounded there; guard anyway
        rem = np.nan_to_num(rem, nan=0.0, posinf=0.0, neginf=0.0)
        return float(np.mean(rem)) + self._model_integral(1.0, c, d)

    @staticmethod
    def _model_integral(t: float, c: float, d: int) -> float:
        """(2pi)^{-d} int dk / ((1-t) + (t c/2) E(k)) with E = sum 2(1-cos k_a)."""
        nodes, wts = laplace_grid(1.0 - t)
        tau = nodes * t * c / 2
        val = np.exp(-nodes * (1.0 - t)) * scaled_bessel(0, 2 * tau) ** d
        return float(val @ wts)


class SeriesGreen:
    """Truncated series sum_n P^n(g) t^n from exact convolution powers.

    Only sensible in low dimension where the powers live on a small box;
    the tail is controlled by the crude geometric bound t^{N+1}/(1-t).
    """

    def __init__(self, measure: LatticeMeasure, n_terms: int = 200):
        if measure.rank > 2:
            raise ValueError("series route is a d <= 2 fallback")
        self.measure = measure
        self.n_terms = n_terms
        self._powers = self._build_powers()

    def _build_powers(self) -> List[Dict[Tuple[int, ...], float]]:
        powers = [{(0,) * self.measure.rank: 1.0}]
        atoms = {v: float(w) for v, w in self.measure.atoms.items()}
        for _ in range(self.n_terms):
            prev = powers[-1]
            nxt: Dict[Tuple[int, ...], float] = {}
            for x, p in prev.items():
                for v, w in atoms.items():
                    y = tuple(a + b for a, b in zip(x, v))
                    nxt[y] = nxt.get(y, 0.0) + p * w
            powers.append(nxt)
        return powers

    def green(self, g: Sequence[int], t: float, order: int = 0) -> Tuple[float, float]:
        if t >= 1.0:
            raise DivergenceError("series route requires t < 1")
        gv = tuple(int(c) for c in g)
        total = 0.0
        for n in range(order, self.n_terms + 1):
            p = self._powers[n].get(gv, 0.0)
            if p:
                fall = 1.0
                for j in range(order):
                    fall *= n - j
                total += fall * p * t ** (n - order)
        n = self.n_terms
        tail = t ** (n + 1 - order) / (1.0 - t)
        for j in range(order):
            tail *= n + 1 - j
        return total, tail


class FactorGreenEvaluator:
    """Green function data of one lattice factor.

    Modes: ``auto`` picks bessel for unit-step measures (orders <= 2),
    series for other d <= 2 measures, torus quadrature otherwise; the
    explicit modes force one route.  Immutable after construction.
    """

    DEFAULT_NODES = {1: 64, 2: 64, 3: 64, 4: 32, 5: 32}

    def __init__(
        self,
        measure: LatticeMeasure,
        mode: str = "auto",
        nodes_per_axis: Optional[int] = None,
        series_terms: int = 200,
    ):
        if mode not in ("auto", "bessel", "quadrature", "series"):
            raise ValueError(f"unknown mode {mode!r}")
        if not measure.is_symmetric():
            raise ValueError("factor measures must be symmetric")
        self.measure = measure
        self.rank = measure.rank
        self.R = 1.0  # inverse spectral radius of a symmetric lattice walk
        self.mode = mode
        self._unit_step = measure.is_unit_step()
        if self._unit_step:
            self._axis_weights = measure.axis_weights()
            self._m0 = measure.mass_at_zero()
        if nodes_per_axis is None:
            nodes_per_axis = self.DEFAULT_NODES.get(self.rank, 32)
        self.quadrature = TorusQuadrature(self.rank, nodes_per_axis)
        self._series: Optional[SeriesGreen] = None
        self.series_terms = series_terms
        self._theta_cache: Optional[float] = None

    # ---- mode plumbing ------------------------------------------------

    def _route(self, order: int) -> str:
        if self.mode != "auto":
            return self.mode
        if self._unit_step and order <= 2:
            return "bessel"
        if self.rank <= 2:
            return "series"
        return "quadrature"

    def _series_eval(self) -> SeriesGreen:
        if self._series is None:
            self._series = SeriesGreen(self.measure, self.series_terms)
        return self._series

    def derivative_finite(self, t: float, order: int) -> bool:
        """Finiteness of d^order G/dt^order at t; at t=1 this is 2(order+1) < d."""
        if t < 1.0:
            return True
        return 2 * (order + 1) < self.rank

    def _check_params(self, t: float, order: int) -> None:
        if not 0 <= t <= 1:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        if order < 0:
            raise ValueError("derivative order must be >= 0")
        if not self.derivative_finite(t, order):
            raise DivergenceError(
                f"G^({order}) diverges at t=1 in dimension {self.rank} "
                f"(finite iff 2(order+1) < d)"
            )

    # ---- evaluation ---------------------------------------------------

    def green(self, g: Sequence[int], t: float, order: int = 0, npts: int = 24) -> float:
        self._check_params(t, order)
        if t == 0.0:
            if order == 0:
                return 1.0 if not any(g) else 0.0
            # d^s/dt^s at 0 picks the n=s series term
            fall = math.factorial(order)
            mu_s = self.measure
            # P^order(g) via the series powers
            if self.rank <= 2:
                p = self._series_eval()._powers[order].get(tuple(g), 0.0)
            else:
                p = _power_probability(mu_s, tuple(g), order)
            return fall * p
        route = self._route(order)
        if route == "bessel":
            if not self._unit_step:
                raise ValueError("bessel route requires a unit-step measure")
            nodes, wts = laplace_grid(1.0 - t, npts=npts)
            w_fac = _bessel_weight(g, self._axis_weights, self._m0, t, nodes, order)
            integ = np.exp(-nodes * (1.0 - t)) * w_fac
            if order:
                integ = integ * nodes**order
            return float(integ @ wts)
        if route == "series":
            return self._series_eval().green(g, t, order)[0]
        return self.quadrature.integrate(self.measure, g, t, order)

    def green_with_error(self, g: Sequence[int], t: float, order: int = 0) -> Tuple[float, float]:
        """Value plus an error estimate from one refinement step."""
        self._check_params(t, order)
        route = self._route(order)
        if route == "series" and t > 0:
            return self._series_eval().green(g, t, order)
        if route == "bessel" or t == 0.0:
            coarse = self.green(g, t, order, npts=24)
            fine = self.green(g, t, order, npts=32)
            return fine, abs(fine - coarse)
        coarse = self.quadrature.integrate(self.measure, g, t, order)
        fine = self.quadrature.refined().integrate(self.measure, g, t, order)
        return fine, abs(fine - coarse)

    def green_many(self, vectors: np.ndarray, t: float) -> np.ndarray:
        """Vectorized order-0 values for an (n, d) array of lattice points."""
        self._check_params(t, 0)
        if not self._unit_step:
            return np.array([self.green(tuple(v), t) for v in vectors])
        nodes, wts = laplace_grid(1.0 - t)
        vecs = np.abs(np.asarray(vectors, dtype=np.int64))
        out = np.ones((len(vecs), len(nodes)))
        for a in range(self.rank):
            orders = vecs[:, a]
            table = np.empty((int(orders.max()) + 1, len(nodes)))
            z = 2 * self._axis_weights[a] * t * nodes
            for m in range(table.shape[0]):
                table[m] = scaled_bessel(m, z)
            out *= table[orders]
        out *= np.exp(-nodes * (1.0 - t))
        return out @ wts

    # ---- the phi/psi data --------------------------------------------

    def theta(self) -> float:
        """theta_i = R_i G_i(e,e|R_i); infinite when the factor walk is recurrent."""
        if self._theta_cache is None:
            if self.rank <= 2:
                self._theta_cache = math.inf
            else:
                self._theta_cache = self.green((0,) * self.rank, 1.0)
        return self._theta_cache

    def solve_r(self, s: float, tol: float = 1e-12) -> float:
        """The r in [0,1] with r G_i(e,e|r) = s; the map is strictly increasing."""
        if s <= 0:
            raise ValueError(f"s must be positive, got {s}")
        theta = self.theta()
        if s > theta * (1 + 1e-12):
            raise ValueError(f"s={s} exceeds theta_i={theta}")
        zero = (0,) * self.rank
        lo, hi = 0.0, 1.0
        # shrink hi below any divergence of G at 1 for recurrent factors
        if not math.isfinite(theta):
            hi = 1.0 - 1e-15
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if mid * self.green(zero, mid) < s:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def phi(self, s: float) -> float:
        """Phi_i(s) = G_i(e,e|r(s)): the factor generating function in the
        s = r G(e,e|r) parametrization."""
        r = self.solve_r(s)
        return self.green((0,) * self.rank, r)

    def psi(self, s: float) -> float:
        """Psi_i(s) = Phi_i(s) - s Phi_i'(s) = G^2 / (G + r G'), evaluated at r(s).

        At s = theta_i with d in {3, 4} the derivative diverges and the
        value is exactly 0.
        """
        theta = self.theta()
        if math.isfinite(theta) and s >= theta * (1 - 1e-10) and not self.derivative_finite(1.0, 1):
            return 0.0
        r = self.solve_r(s)
        zero = (0,) * self.rank
        g_val = self.green(zero, r)
        try:
            g_deriv = self.green(zero, r, order=1)
        except DivergenceError:
            return 0.0
        return g_val * g_val / (g_val + r * g_deriv)


def _power_probability(measure: LatticeMeasure, g: Tuple[int, ...], n: int) -> float:
    """P^n(g) by direct convolution, for tiny n only."""
    dist: Dict[Tuple[int, ...], float] = {(0,) * measure.rank: 1.0}
    for _ in range(n):
        nxt: Dict[Tuple[int, ...], float] = {}
        for x, p in dist.items():
            for v, w in measure.atoms.items():
                y = tuple(a + b for a, b in zip(x, v))
                nxt[y] = nxt.get(y, 0.0) + p * float(w)
        dist = nxt
    return dist.get(g, 0.0)
