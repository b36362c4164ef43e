"""Green calculus on the free product.

The generating-function pair Phi/Psi assembled from the factors drives
everything: the inverse spectral radius R, the factor parameters
zeta_i(r), syllable-factorized Green functions G(x,y|r), Martin kernels,
iterated Green sums I^(s), the derivative recursion F_k, and a spectral
classification report (non-degenerate / degenerate / convergent).

Conventions: factor indices are 1-based to match element notation; the
walk is the adapted measure sum_i alpha_i mu_i with symmetric factor
measures, so factor spectral radii are 1 and r ranges over (0, R].
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .groups import (
    BudgetExceededError,
    Element,
    FreeProductSpec,
    IDENTITY,
    enumerate_ball,
    inverse,
    multiply,
    prefix_points,
    relative_length,
    word_length,
)
from .measures import AdaptedMeasure, ConvolutionTable, LatticeMeasure
from .factor_green import DivergenceError, FactorGreenEvaluator
from .extrapolate import richardson_limit


class PhiPsiSystem:
    """Phi(s) = sum_i Phi_i(alpha_i s) - (k-1), same shape for Psi.

    Holds one Green evaluator per factor plus the weights; immutable
    after construction, with per-r caches for the derived quantities.
    """

    def __init__(
        self,
        evaluators: Sequence[FactorGreenEvaluator],
        weights: Sequence[float],
    ):
        if len(evaluators) < 2:
            raise ValueError("a free product needs at least two factors")
        if len(evaluators) != len(weights):
            raise ValueError("one weight per factor required")
        if abs(sum(weights) - 1.0) > 1e-9 or any(w <= 0 for w in weights):
            raise ValueError("weights must be positive and sum to 1")
        self.evaluators = list(evaluators)
        self.weights = [float(w) for w in weights]
        self.num_factors = len(evaluators)
        self.spec = FreeProductSpec(tuple(ev.rank for ev in evaluators))
        self.theta_bar = min(
            ev.theta() / a for ev, a in zip(self.evaluators, self.weights)
        )
        self._R_data: Optional[Tuple[float, float, float]] = None
        self._r_cache: Dict[float, Dict] = {}

    @classmethod
    def from_adapted(cls, adapted: AdaptedMeasure, mode: str = "auto") -> "PhiPsiSystem":
        evs = [FactorGreenEvaluator(m, mode=mode) for m in adapted.factor_measures]
        return cls(evs, adapted.weights)

    # ---- the assembled pair ------------------------------------------

    def _check_s(self, s: float) -> None:
        if not 0 < s <= self.theta_bar * (1 + 1e-12):
            raise ValueError(f"s={s} outside (0, theta_bar={self.theta_bar}]")

    def phi(self, s: float) -> float:
        self._check_s(s)
        return sum(
            ev.phi(a * s) for ev, a in zip(self.evaluators, self.weights)
        ) - (self.num_factors - 1)

    def psi(self, s: float) -> float:
        self._check_s(s)
        return sum(
            ev.psi(a * s) for ev, a in zip(self.evaluators, self.weights)
        ) - (self.num_factors - 1)

    def psi_at_theta_bar(self) -> float:
        """Psi at the domain endpoint; the limit 1-k when theta_bar = inf."""
        if math.isinf(self.theta_bar):
            return 1.0 - self.num_factors
        return self.psi(self.theta_bar)

    # ---- spectral radius ---------------------------------------------

    def compute_R(self) -> Tuple[float, float, float]:
        """(R, theta, G(e,e|R)).

        r(s) = s/Phi(s) has derivative Psi/Phi^2, so it is maximized at
        the Psi root theta when one exists in (0, theta_bar], else at
        theta_bar itself.  R = theta/Phi(theta) and G(e,e|R) = Phi(theta).
        """
        if self._R_data is not None:
            return self._R_data
        if math.isinf(self.theta_bar):
            lo, hi = 1.0, 2.0
            while self.psi(hi) > 0:
                lo, hi = hi, hi * 2
                if hi > 2**80:
                    raise RuntimeError("no Psi root found on an expanding bracket")
            theta = brentq(self.psi, lo, hi, xtol=1e-13, rtol=1e-15)
        else:
            psi_tb = self.psi_at_theta_bar()
            if psi_tb <= 0:
                lo = self.theta_bar * 1e-8
                if self.psi(lo) <= 0:
                    raise RuntimeError(
                        f"Psi not positive near 0: bracket [{lo}, {self.theta_bar}] "
                        f"has values [{self.psi(lo)}, {psi_tb}]"
                    )
                theta = brentq(self.psi, lo, self.theta_bar, xtol=1e-13, rtol=1e-15)
            else:
                theta = self.theta_bar
        g_ee = self.phi(theta)
        self._R_data = (theta / g_ee, theta, g_ee)
        return self._R_data

    @property
    def R(self) -> float:
        return self.compute_R()[0]

    # ---- per-r derived data ------------------------------------------

    def _r_data(self, r: float) -> Dict:
        data = self._r_cache.get(r)
        if data is not None:
            return data
        R, theta, g_R = self.compute_R()
        if not 0 < r <= R * (1 + 1e-12):
            raise ValueError(f"r={r} outside (0, R={R}]")
        if abs(r - R) <= 1e-12 * R:
            s_r = theta
            gee = g_R
        else:
            s_r = brentq(
                lambda s: s / self.phi(s) - r, theta * 1e-10, theta,
                xtol=1e-14, rtol=1e-15,
            )
            gee = s_r / r
        zetas, g0 = [], []
        for ev, a in zip(self.evaluators, self.weights):
            z = ev.solve_r(a * r * gee)
            zetas.append(z)
            g0.append(ev.green((0,) * ev.rank, z))
        data = {"gee": gee, "s": s_r, "zetas": zetas, "g0": g0, "sigma": {}}
        self._r_cache[r] = data
        return data

    def green_ee(self, r: float) -> float:
        """G(e,e|r) via the defining identity G = Phi(r G)."""
        return self._r_data(r)["gee"]

    def zeta(self, i: int, r: float) -> float:
        """The factor parameter: zeta G_i(e,e|zeta) = alpha_i r G(e,e|r)."""
        if not 1 <= i <= self.num_factors:
            raise ValueError(f"factor index {i} out of range")
        return self._r_data(r)["zetas"][i - 1]

    def syllable_log_ratio(self, i: int, v: Tuple[int, ...], r: float) -> float:
        """log of G_i(v|zeta_i(r)) / G_i(0|zeta_i(r)) for one syllable."""
        data = self._r_data(r)
        key = (i, v)
        sig = data["sigma"].get(key)
        if sig is None:
            ev = self.evaluators[i - 1]
            g_v = ev.green(v, data["zetas"][i - 1])
            sig = math.log(g_v / data["g0"][i - 1])
            data["sigma"][key] = sig
            data["sigma"][(i, tuple(-c for c in v))] = sig
        return sig

    def product_green(self, x: Element, y: Element, r: float) -> float:
        """G(x,y|r) = G(e,e|r) * prod over syllables of x^{-1}y of the
        factor Green ratios at zeta_i(r)."""
        w = multiply(inverse(x), y)
        data = self._r_data(r)
        log_val = math.log(data["gee"])
        for i, v in w:
            log_val += self.syllable_log_ratio(i, v, r)
        return math.exp(log_val)

    def martin_kernel(self, x: Element, y: Element, r: float) -> float:
        """K_r(x,y) = G(x,y|r)/G(e,y|r)."""
        return self.product_green(x, y, r) / self.product_green(IDENTITY, y, r)

    # ---- iterated sums ------------------------------------------------

    def iterated_sum(
        self,
        s: int,
        x: Element,
        y: Element,
        r: float,
        ball_radius: int,
        metric: str = "word",
        budget: int = 5_000_000,
    ) -> Tuple[float, Dict]:
        """Truncation of I^(s)(x,y|r) = sum over s interior points of the
        product of s+1 Green factors.

        Interior points run over a tube: the union of balls of the given
        radius around the prefix points of x^{-1}y, closed under syllable
        prefixes so the Green matrix factorizes over a trie.  The value is
        monotone nondecreasing in ball_radius; diagnostics report the
        last-shell increment and any budget truncation.
        """
        if s < 1:
            raise ValueError("iterated sums need s >= 1")
        w = multiply(inverse(x), y)
        elements, exceeded = self._tube(w, ball_radius, metric, budget)
        value = self._iterated_on_set(s, w, r, elements)
        if ball_radius >= 1 and not exceeded:
            inner, _ = self._tube(w, ball_radius - 1, metric, budget)
            increment = value - self._iterated_on_set(s, w, r, inner)
        else:
            increment = math.nan
        diag = {
            "ball_radius": ball_radius,
            "metric": metric,
            "num_points": len(elements),
            "last_shell_increment": increment,
            "budget_exceeded": exceeded,
        }
        return value, diag

    def iterated_sum_profile(
        self,
        s: int,
        xs: Sequence[Element],
        y: Element,
        r: float,
        ball_radius: int,
        metric: str = "word",
        budget: int = 5_000_000,
    ) -> Tuple[np.ndarray, Dict]:
        """Truncated I^(s)(x,y|r) for many x against one y, sharing one tube.

        The Green matrix is symmetric, so I^(s)(x,y) is the x entry of
        M^(s+1) delta_y and one matvec series serves every x at once.  The
        truncation set is the tube around y with every requested x added
        as an extra ball center; without that, far-off x would see less
        of their own neighborhood than e does and the ratios I(x,y)/I(e,y)
        would pick up a systematic bias.
        """
        if s < 1:
            raise ValueError("iterated sums need s >= 1")
        centers = prefix_points(y)
        seen_centers = set(centers)
        centers += [x for x in xs if x not in seen_centers]
        elements, exceeded = self._tube_around(centers, ball_radius, metric, budget)
        trie = GreenTrie(self, elements, r)
        v = np.zeros(len(elements))
        v[trie.index[y]] = 1.0
        for _ in range(s + 1):
            v = trie.matvec(v)
        values = np.empty(len(xs))
        for j, x in enumerate(xs):
            try:
                values[j] = v[trie.index[x]]
            except KeyError:
                raise ValueError(
                    f"x = {x} lies outside the tube around y; "
                    f"increase ball_radius"
                ) from None
        diag = {
            "ball_radius": ball_radius,
            "metric": metric,
            "num_points": len(elements),
            "budget_exceeded": exceeded,
        }
        return values, diag

    def _tube(
        self, w: Element, radius: int, metric: str, budget: int
    ) -> Tuple[List[Element], bool]:
        return self._tube_around(prefix_points(w), radius, metric, budget)

    def _tube_around(
        self, centers: List[Element], radius: int, metric: str, budget: int
    ) -> Tuple[List[Element], bool]:
        exceeded = False
        seen = set()
        ball: List[Element] = []
        gen = enumerate_ball(self.spec, radius, metric=metric, budget=budget)
        try:
            for b in gen:
                ball.append(b)
        except BudgetExceededError:
            exceeded = True
        for c in centers:
            for b in ball:
                seen.add(multiply(c, b))
                if len(seen) > budget:
                    exceeded = True
                    break
            if exceeded:
                break
        # close under syllable prefixes so the trie factorization applies
        stack = list(seen)
        while stack:
            z = stack.pop()
            p = z[:-1]
            if z and p not in seen:
                seen.add(p)
                stack.append(p)
        ordered = sorted(seen, key=lambda z: (len(z), z))
        return ordered, exceeded

    def _iterated_on_set(
        self, s: int, w: Element, r: float, elements: List[Element]
    ) -> float:
        trie = GreenTrie(self, elements, r)
        v = np.zeros(len(elements))
        v[trie.index[w]] = 1.0
        for _ in range(s + 1):
            v = trie.matvec(v)
        return float(v[trie.index[IDENTITY]])

    # ---- derivative recursion ----------------------------------------

    def F_k(
        self,
        k: int,
        x: Element,
        y: Element,
        r_grid: Sequence[float],
    ) -> Tuple[np.ndarray, np.ndarray]:
        """F_1 = d/dr (r G(x,y|r)), F_k = d/dr (r^2 F_{k-1}); values and
        stencil error estimates on the grid.

        Computed with 5-point centered stencils, step picked by comparing
        h against h/2 (Richardson); k <= 3 as the recursion loses one
        order of smoothness margin per level.
        """
        if not 1 <= k <= 3:
            raise ValueError("F_k supports k in 1..3")
        R = self.R
        vals, errs = [], []
        for r in r_grid:
            if not 0 < r < R:
                raise ValueError(f"grid point {r} not interior to (0, R)")
            v, e = self._f_k_point(k, x, y, r)
            vals.append(v)
            errs.append(e)
        return np.asarray(vals), np.asarray(errs)

    def _f_k_point(self, k: int, x: Element, y: Element, r: float) -> Tuple[float, float]:
        if k == 1:
            f = lambda t: t * self.product_green(x, y, t)
        else:
            f = lambda t: t * t * self._f_k_point(k - 1, x, y, t)[0]
        R = self.R
        h0 = 0.02 * min(r, R - r) / (4 ** (k - 1))
        d_coarse = _stencil5(f, r, h0)
        d_fine = _stencil5(f, r, h0 / 2)
        return d_fine, abs(d_fine - d_coarse) / 15.0

    def F_1_series_check(self, table: ConvolutionTable, y: Element, r: float) -> float:
        """Independent F_1(e,y|r) = sum (n+1) P^n(e,y) r^n from a power table."""
        total = 0.0
        for n in range(table.n_max + 1):
            total += (n + 1) * table.transition(IDENTITY, y, n) * r**n
        return total

    # ---- classification -----------------------------------------------

    def spectral_report(
        self,
        zeta_tol: float = 1e-6,
        psi_tol: float = 1e-9,
    ) -> "SpectralReport":
        """Classify the walk through both available routes and cross-check.

        Route one is the sign of Psi(theta_bar); route two compares each
        zeta_i(R) against the factor spectral parameter R_i = 1.  The two
        must agree; disagreement is flagged rather than resolved.
        """
        R, theta, g_R = self.compute_R()
        psi_tb = self.psi_at_theta_bar()
        zeta_at_R = [self.zeta(i, R) for i in range(1, self.num_factors + 1)]
        r_i = [ev.R for ev in self.evaluators]
        degenerate = [
            abs(z - ri) <= zeta_tol * ri for z, ri in zip(zeta_at_R, r_i)
        ]
        if math.isinf(self.theta_bar):
            status = "non-degenerate"
        elif abs(psi_tb) <= psi_tol:
            status = "borderline"
        elif psi_tb < 0:
            status = "non-degenerate"
        else:
            status = "degenerate"
        convergent = status == "degenerate" and psi_tb > psi_tol
        if status == "non-degenerate":
            deg_rank = None
            order = 1
        elif status == "degenerate":
            deg_ranks = [
                ev.rank for ev, d in zip(self.evaluators, degenerate) if d
            ]
            deg_rank = min(deg_ranks) if deg_ranks else None
            order = max(1, math.ceil(deg_rank / 2) - 1) if deg_rank else 1
        else:
            deg_rank = None
            order = 1
        consistent = (status != "non-degenerate") == any(degenerate) or status == "borderline"
        return SpectralReport(
            R=R,
            theta=theta,
            theta_bar=self.theta_bar,
            psi_at_theta_bar=psi_tb,
            zeta_at_R=zeta_at_R,
            R_i=r_i,
            degenerate=degenerate,
            convergent=convergent,
            degeneracy_rank=deg_rank,
            derivative_order=order,
            status=status,
            diagnostics={
                "zeta_tol": zeta_tol,
                "psi_tol": psi_tol,
                "green_ee_at_R": g_R,
                "zeta_gaps": [ri - z for z, ri in zip(zeta_at_R, r_i)],
                "consistent": consistent,
            },
        )


@dataclass
class SpectralReport:
    R: float
    theta: float
    theta_bar: float
    psi_at_theta_bar: float
    zeta_at_R: List[float]
    R_i: List[float]
    degenerate: List[bool]
    convergent: bool
    degeneracy_rank: Optional[int]
    derivative_order: int
    status: str
    diagnostics: Dict = field(default_factory=dict)

    def as_dict(self) -> Dict:
        out = {
            "R": self.R,
            "theta": self.theta,
            "theta_bar": self.theta_bar if math.isfinite(self.theta_bar) else "inf",
            "psi_at_theta_bar": self.psi_at_theta_bar,
            "zeta_at_R": self.zeta_at_R,
            "R_i": self.R_i,
            "degenerate": self.degenerate,
            "convergent": self.convergent,
            "degeneracy_rank": self.degeneracy_rank,
            "derivative_order": self.derivative_order,
            "status": self.status,
            "diagnostics": self.diagnostics,
        }
        return out


class ZetaCurve:
    """zeta_i as a function of r, with a monotonicity probe."""

    def __init__(self, system: PhiPsiSystem, index: int):
        if not 1 <= index <= system.num_factors:
            raise ValueError(f"factor index {index} out of range")
        self.system = system
        self.index = index

    def __call__(self, r: float) -> float:
        return self.system.zeta(self.index, r)

    def is_increasing(self, r_grid: Sequence[float]) -> bool:
        vals = [self(r) for r in sorted(r_grid)]
        return all(b > a for a, b in zip(vals, vals[1:]))


class GreenTrie:
    """Syllable-prefix trie over a finite element set with the Green
    matrix M[u,w] = G(u,w|r) applied matrix-free.

    G(u,w) factorizes through the longest common syllable prefix p of u
    and w: away from the first divergent syllables a, b the log-Green is
    the separable sum S_u + S_w - 2 S_p plus a local correction at the
    divergence (a merged syllable if a, b share a factor, nothing
    otherwise).  Each matvec is O(N) plus pairwise work over siblings.
    """

    def __init__(self, system: PhiPsiSystem, elements: List[Element], r: float):
        self.system = system
        self.elements = elements
        self.r = r
        self.index = {z: i for i, z in enumerate(elements)}
        if IDENTITY not in self.index:
            raise ValueError("element set must contain the identity")
        n = len(elements)
        self.parent = np.full(n, -1, dtype=np.int64)
        self.sigma_last = np.zeros(n)
        s_vals = np.zeros(n)
        for i, z in enumerate(elements):
            if not z:
                continue
            p = self.index[z[:-1]]
            self.parent[i] = p
            fi, v = z[-1]
            self.sigma_last[i] = system.syllable_log_ratio(fi, v, r)
            s_vals[i] = s_vals[p] + self.sigma_last[i]
        self.S = s_vals
        self.expS = np.exp(s_vals)
        self.gee = system.green_ee(r)
        self.levels: List[np.ndarray] = []
        lens = np.array([len(z) for z in elements])
        for lev in range(int(lens.max()) + 1):
            self.levels.append(np.nonzero(lens == lev)[0])
        self.children: Dict[int, List[int]] = {}
        for i in range(n):
            p = int(self.parent[i])
            if p >= 0:
                self.children.setdefault(p, []).append(i)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        n = len(v)
        gee = self.gee
        # subtree sums T[u] = sum_{w under u, incl. u} e^{S_w} v[w]
        t_sum = self.expS * v
        for lev_ids in reversed(self.levels[1:]):
            np.add.at(t_sum, self.parent[lev_ids], t_sum[lev_ids])
        # strict-ancestor sums A[u] = sum_{w strict ancestor} e^{-S_w} v[w]
        a_sum = np.zeros(n)
        for lev_ids in self.levels[1:]:
            par = self.parent[lev_ids]
            a_sum[lev_ids] = a_sum[par] + v[par] / self.expS[par]
        # sibling rectangles: for u under child a of p, w under sibling b
        w_node = np.zeros(n)
        for p, kids in self.children.items():
            if len(kids) < 2:
                continue
            base = gee * math.exp(-2 * self.S[p])
            by_factor: Dict[int, List[int]] = {}
            for c in kids:
                by_factor.setdefault(self.elements[c][-1][0], []).append(c)
            tot_all = float(t_sum[kids].sum())
            for fac, group in by_factor.items():
                tot_fac = float(t_sum[group].sum())
                cross = tot_all - tot_fac
                for c in group:
                    w_node[c] += base * cross
                if len(group) > 1:
                    vecs = [self.elements[c][-1][1] for c in group]
                    sig = self.sigma_last
                    for j, cj in enumerate(group):
                        acc = 0.0
                        for l, cl in enumerate(group):
                            if l == j:
                                continue
                            dv = tuple(
                                bb - aa for aa, bb in zip(vecs[j], vecs[l])
                            )
                            corr = self.system.syllable_log_ratio(fac, dv, self.r)
                            acc += math.exp(corr - sig[cj] - sig[cl]) * t_sum[cl]
                        w_node[cj] += base * acc
        w_cum = np.zeros(n)
        for lev_ids in self.levels[1:]:
            w_cum[lev_ids] = w_cum[self.parent[lev_ids]] + w_node[lev_ids]
        out = (
            gee * v
            + gee * (t_sum - self.expS * v) / self.expS
            + gee * self.expS * a_sum
            + self.expS * w_cum
        )
        return out


def _stencil5(f, x: float, h: float) -> float:
    """5-point centered first derivative, O(h^4)."""
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)


# ---- module-level operations -----------------------------------------


@dataclass
class GerlEstimate:
    value: float
    error: float
    status: str  # ok | even-subsequence | inconclusive | insufficient
    corrected: List[Tuple[int, float]] = field(default_factory=list)


def gerl_R_estimate(
    table: ConvolutionTable,
    n_max: Optional[int] = None,
    handle_period: bool = True,
) -> GerlEstimate:
    """R from return-probability ratios with the n^{-3/2} correction.

    Corrected per-n estimates 1/(rho_n ((n+1)/n)^{3/2}) are extrapolated
    in 1/n (Neville, capped at level 2: the correction series is
    asymptotic and higher levels amplify noise).  Period-2 walks have no
    odd returns; with handle_period the even-step subsequence estimates
    R^2 instead, otherwise the result is inconclusive.
    """
    if table.n_max < 0:
        raise RuntimeError("table.run() must be called first")
    if n_max is None:
        n_max = table.n_max
    pn = table.pn_return[: n_max + 1]
    odd_zero = all(pn[n] == 0.0 for n in range(1, n_max + 1, 2))
    if odd_zero and not handle_period:
        return GerlEstimate(math.nan, math.inf, "inconclusive", [])
    step = 2 if odd_zero else 1
    ns, ests = [], []
    for n in range(step, n_max - step + 1, step):
        if pn[n] <= 0 or pn[n + step] <= 0:
            continue
        rho = pn[n + step] / pn[n]
        est = 1.0 / (rho * ((n + step) / n) ** 1.5)
        ns.append(n)
        ests.append(est**(1.0 / step))
    if len(ns) < 4:
        return GerlEstimate(math.nan, math.inf, "insufficient", list(zip(ns, ests)))
    keep = min(8, len(ns))
    xs = [1.0 / n for n in ns[-keep:]]
    ys = ests[-keep:]
    value, error = richardson_limit(xs, ys, max_level=2)
    status = "even-subsequence" if odd_zero else "ok"
    return GerlEstimate(value, error, status, list(zip(ns, ests)))


def direct_series_green(
    table: ConvolutionTable, y: Element, r: float, n_max: Optional[int] = None
) -> Tuple[float, float]:
    """sum_{n<=N} P^n(e,y) r^n with a geometric tail bound.

    The tail ratio comes from two-step return-probability ratios (their
    limit is 1/R^2), doubled as a safety factor.  Two-step ratios keep
    the bound meaningful for period-2 walks, where every other return
    probability vanishes; an infinite bound is reported rather than
    hidden when r sits at or beyond the ratio's radius.
    """
    if n_max is None:
        n_max = table.n_max
    total = 0.0
    p_tail = [0.0, 0.0]  # last two terms p_n r^n, both parities
    for n in range(n_max + 1):
        p_n = table.transition(IDENTITY, y, n)
        total += p_n * r**n
        p_tail = [p_tail[1], p_n * r**n]
    rhos = [
        table.pn_return[n] / table.pn_return[n - 2]
        for n in range(n_max, max(n_max - 8, 2) - 1, -1)
        if n >= 2 and table.pn_return[n - 2] > 0
    ]
    if not rhos:
        return total, math.inf
    q2 = max(rhos) * r * r
    if q2 >= 1:
        return total, math.inf
    tail = 2.0 * sum(p_tail) * q2 / (1 - q2)
    return total, tail


def homogeneous_dimension(ranks: Iterable[Tuple[int, int]]) -> int:
    """sum of k * rank over the graded ranks [(k, rank_k), ...]."""
    total = 0
    for k, rank in ranks:
        if k < 1 or rank < 0:
            raise ValueError(f"invalid graded rank entry ({k}, {rank})")
        total += k * rank
    return total


@dataclass
class TuneReport:
    best_weights: Tuple[float, ...]
    best_psi: float
    achieved: bool  # some grid point has Psi(theta_bar) < 0
    sign_change_brackets: List[Tuple[float, float]]
    grid_values: List[Tuple[float, float]]  # (alpha_1, Psi(theta_bar))


def tune_alpha(
    factor_measures: Sequence[LatticeMeasure],
    grid: Sequence[float],
    mode: str = "auto",
) -> TuneReport:
    """Scan weights for spectral non-degeneracy: minimize Psi(theta_bar).

    For two factors the grid is a list of alpha_1 values; Psi(theta_bar)
    < 0 certifies non-degeneracy at that weight, and consecutive grid
    points with a sign change bracket the transition.
    """
    if len(factor_measures) != 2:
        raise ValueError("weight tuning is implemented for two factors")
    evs = [FactorGreenEvaluator(m, mode=mode) for m in factor_measures]
    values: List[Tuple[float, float]] = []
    for a1 in grid:
        if not 0 < a1 < 1:
            raise ValueError(f"alpha_1 grid point {a1} outside (0,1)")
        system = PhiPsiSystem(evs, [a1, 1.0 - a1])
        values.append((float(a1), system.psi_at_theta_bar()))
    if not values:
        raise ValueError("empty weight grid")
    best_a, best_psi = min(values, key=lambda t: t[1])
    brackets = []
    for (a_lo, p_lo), (a_hi, p_hi) in zip(values, values[1:]):
        if (p_lo < 0) != (p_hi < 0):
            brackets.append((a_lo, a_hi))
    return TuneReport(
        best_weights=(best_a, 1.0 - best_a),
        best_psi=best_psi,
        achieved=any(p < 0 for _, p in values),
        sign_change_brackets=brackets,
        grid_values=values,
    )
