"""Symmetric finitely supported measures on lattice factors and their
adapted combination on the free product, plus radius-capped convolution
power tables for transition probabilities."""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .groups import (
    BudgetExceededError,
    Element,
    FreeProductSpec,
    IDENTITY,
    Vector,
    inverse,
    multiply,
    normalize,
    word_length,
)

Numeric = float  # Fraction also accepted wherever no numpy is involved


def _as_vector(v: Sequence[int]) -> Vector:
    return tuple(int(c) for c in v)


def _hermite_diag_product(rows: List[List[int]]) -> int:
    """Product of elementary divisors of the integer row span (0 if rank-deficient)."""
    mat = [list(r) for r in rows]
    if not mat:
        return 0
    d = len(mat[0])
    det = 1
    for col in range(d):
        pivot = None
        for i in range(col, len(mat)):
            if mat[i][col] != 0:
                pivot = i
                break
        if pivot is None:
            return 0
        mat[col], mat[pivot] = mat[pivot], mat[col]
        # euclidean elimination below the pivot
        changed = True
        while changed:
            changed = False
            for i in range(col + 1, len(mat)):
                if mat[i][col] == 0:
                    continue
                q = mat[i][col] // mat[col][col]
                mat[i] = [a - q * b for a, b in zip(mat[i], mat[col])]
                if mat[i][col] != 0:
                    mat[col], mat[i] = mat[i], mat[col]
                    changed = True
        det *= abs(mat[col][col])
    return det


class LatticeMeasure:
    """Finitely supported probability measure on Z^rank.

    Atoms map integer vectors to weights (floats, or Fractions when exact
    convolution oracles are wanted).  The standing assumptions of the rest
    of the package are symmetry and that the support generates the full
    lattice; both are checked on demand, not at construction.
    """

    def __init__(self, rank: int, atoms: Dict[Sequence[int], Numeric]):
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        self.rank = rank
        self.atoms: Dict[Vector, Numeric] = {}
        for v, w in atoms.items():
            vec = _as_vector(v)
            if len(vec) != rank:
                raise ValueError(f"atom {vec} has wrong dimension for Z^{rank}")
            if w < 0:
                raise ValueError(f"negative weight at {vec}")
            if w > 0:
                self.atoms[vec] = self.atoms.get(vec, 0) + w

    @classmethod
    def simple_walk(cls, rank: int) -> "LatticeMeasure":
        """Uniform measure on the 2*rank unit vectors."""
        w = Fraction(1, 2 * rank)
        atoms: Dict[Vector, Numeric] = {}
        for axis in range(rank):
            for sign in (1, -1):
                v = tuple(sign if i == axis else 0 for i in range(rank))
                atoms[v] = w
        return cls(rank, atoms)

    def total_mass(self) -> float:
        return float(sum(self.atoms.values()))

    def is_probability(self, tol: float = 1e-12) -> bool:
        return abs(self.total_mass() - 1.0) <= tol

    def is_symmetric(self) -> bool:
        for v, w in self.atoms.items():
            mv = tuple(-c for c in v)
            if not math.isclose(float(self.atoms.get(mv, 0)), float(w), rel_tol=1e-12, abs_tol=1e-15):
                return False
        return True

    def generates_lattice(self) -> bool:
        """True when the support spans Z^rank over the integers."""
        rows = [list(v) for v in self.atoms if any(v)]
        return _hermite_diag_product(rows) == 1

    def mass_at_zero(self) -> float:
        return float(self.atoms.get((0,) * self.rank, 0))

    def is_unit_step(self) -> bool:
        """Support inside {0, +-e_1, ..., +-e_rank} with symmetric axis weights."""
        for v in self.atoms:
            nonzero = [c for c in v if c]
            if len(nonzero) > 1 or (nonzero and abs(nonzero[0]) != 1):
                return False
        return self.is_symmetric()

    def axis_weights(self) -> List[float]:
        """Weight on +e_a for each axis (unit-step measures only)."""
        if not self.is_unit_step():
            raise ValueError("axis weights are defined for unit-step measures only")
        out = []
        for axis in range(self.rank):
            e = tuple(1 if i == axis else 0 for i in range(self.rank))
            out.append(float(self.atoms.get(e, 0)))
        return out

    def covariance(self) -> np.ndarray:
        """Second-moment matrix sum_v mu(v) v v^T."""
        h = np.zeros((self.rank, self.rank))
        for v, w in self.atoms.items():
            vec = np.asarray(v, dtype=float)
            h += float(w) * np.outer(vec, vec)
        return h

    def lazy(self, eps: float) -> "LatticeMeasure":
        """The transform mu <- eps delta_0 + (1-eps) mu."""
        if not 0 <= eps < 1:
            raise ValueError(f"laziness must be in [0,1), got {eps}")
        zero = (0,) * self.rank
        atoms: Dict[Vector, Numeric] = {v: w * (1 - eps) for v, w in self.atoms.items()}
        atoms[zero] = atoms.get(zero, 0) + eps
        return LatticeMeasure(self.rank, atoms)

    def char_function(self, k: Sequence[float]) -> float:
        """Fourier transform sum_v mu(v) cos(k . v); symmetric measures only."""
        if not self.is_symmetric():
            raise ValueError("char_function requires a symmetric measure")
        k_arr = np.asarray(k, dtype=float)
        total = 0.0
        for v, w in self.atoms.items():
            total += float(w) * math.cos(float(np.dot(k_arr, v)))
        return total

    def char_grid(self, axes: List[np.ndarray]) -> np.ndarray:
        """char_function on a tensor grid, returned as a dense array."""
        if not self.is_symmetric():
            raise ValueError("char_grid requires a symmetric measure")
        mesh = np.meshgrid(*axes, indexing="ij")
        out = np.zeros_like(mesh[0])
        for v, w in self.atoms.items():
            phase = sum(c * m for c, m in zip(v, mesh) if c)
            if isinstance(phase, np.ndarray):
                out += float(w) * np.cos(phase)
            else:
                out += float(w)
        return out

    def __repr__(self):
        return f"LatticeMeasure(Z^{self.rank}, {len(self.atoms)} atoms)"


def lazy_spectral_radius(R: float, eps: float) -> float:
    """Green radius of eps delta_e + (1-eps) mu given the radius R of mu.

    The lazy transition operator is eps I + (1-eps) P, so its norm is
    eps + (1-eps)/R and the radius is the reciprocal.
    """
    if not 0 <= eps < 1:
        raise ValueError(f"laziness must be in [0,1), got {eps}")
    if R < 1.0:
        raise ValueError(f"spectral radius parameter must be >= 1, got {R}")
    return 1.0 / (eps + (1.0 - eps) / R)


class AdaptedMeasure:
    """Convex combination sum_i alpha_i mu_i of factor measures."""

    def __init__(
        self,
        spec: FreeProductSpec,
        weights: Sequence[float],
        factor_measures: Sequence[LatticeMeasure],
    ):
        if len(weights) != spec.num_factors or len(factor_measures) != spec.num_factors:
            raise ValueError("need one weight and one measure per factor")
        total = float(sum(weights))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")
        for i, w in enumerate(weights):
            if w <= 0:
                raise ValueError(f"weight alpha_{i+1} must be positive for admissibility")
        for m, d in zip(factor_measures, spec.ranks):
            if m.rank != d:
                raise ValueError(f"measure rank {m.rank} does not match factor rank {d}")
        self.spec = spec
        # Fractions are kept as-is so lifted measures can stay exact
        self.weights = tuple(w if isinstance(w, Fraction) else float(w) for w in weights)
        self.factor_measures = tuple(factor_measures)

    @classmethod
    def simple(cls, spec: FreeProductSpec, weights: Optional[Sequence[float]] = None) -> "AdaptedMeasure":
        """Uniform simple walks on every factor; equal weights by default."""
        if weights is None:
            weights = [1.0 / spec.num_factors] * spec.num_factors
        measures = [LatticeMeasure.simple_walk(d) for d in spec.ranks]
        return cls(spec, weights, measures)

    def lazy(self, eps: float) -> "AdaptedMeasure":
        """Lazy walk with the same weights; each factor gains a 0-atom.

        eps delta_e + (1-eps) sum alpha_i mu_i = sum alpha_i (eps delta_0 + (1-eps) mu_i),
        so laziness is again adapted with unchanged alpha.
        """
        return AdaptedMeasure(
            self.spec, self.weights, [m.lazy(eps) for m in self.factor_measures]
        )

    def lift(self) -> "ProductMeasure":
        """The measure on the free product: alpha_i mu_i(v) at one-syllable (i, v)."""
        atoms: Dict[Element, Numeric] = {}
        for fac, alpha, m in zip(self.spec.factors, self.weights, self.factor_measures):
            for v, w in m.atoms.items():
                weight = alpha * w
                if not any(v):
                    atoms[IDENTITY] = atoms.get(IDENTITY, 0) + weight
                else:
                    g: Element = ((fac.index, v),)
                    atoms[g] = atoms.get(g, 0) + weight
        return ProductMeasure(atoms)

    def __repr__(self):
        return f"AdaptedMeasure({self.spec.ranks}, alpha={self.weights})"


class ProductMeasure:
    """Finitely supported measure on the free product."""

    def __init__(self, atoms: Dict[Element, Numeric]):
        self.atoms: Dict[Element, Numeric] = {}
        for g, w in atoms.items():
            if w < 0:
                raise ValueError(f"negative weight at {g}")
            if w > 0:
                self.atoms[g] = self.atoms.get(g, 0) + w

    def total_mass(self) -> float:
        return float(sum(self.atoms.values()))

    def is_symmetric(self) -> bool:
        for g, w in self.atoms.items():
            if not math.isclose(
                float(self.atoms.get(inverse(g), 0)), float(w), rel_tol=1e-12, abs_tol=1e-15
            ):
                return False
        return True

    def convolve(self, other: "ProductMeasure", budget: int = 2_000_000) -> "ProductMeasure":
        """(mu * nu)(g) = sum_h mu(h) nu(h^{-1} g), exact for Fraction weights."""
        out: Dict[Element, Numeric] = {}
        for h, wh in self.atoms.items():
            for g2, wg in other.atoms.items():
                g = multiply(h, g2)
                out[g] = out.get(g, 0) + wh * wg
                if len(out) > budget:
                    raise BudgetExceededError(
                        f"convolution support exceeded budget {budget}", len(out)
                    )
        return ProductMeasure(out)

    def power(self, n: int, budget: int = 2_000_000) -> "ProductMeasure":
        result = ProductMeasure({IDENTITY: _one_like(self)})
        for _ in range(n):
            result = result.convolve(self, budget)
        return result

    def __repr__(self):
        return f"ProductMeasure({len(self.atoms)} atoms, mass {self.total_mass():.6f})"


def _one_like(mu: ProductMeasure) -> Numeric:
    for w in mu.atoms.values():
        if isinstance(w, Fraction):
            return Fraction(1)
        break
    return 1.0


@dataclass
class ValidationReport:
    probability: bool
    symmetric: bool
    admissible: bool
    aperiodic: str  # "yes" | "no" | "inconclusive"
    period_hint: Optional[int]
    messages: List[str] = field(default_factory=list)

    def ok_for_ratio_limits(self) -> bool:
        return self.probability and self.symmetric and self.admissible and self.aperiodic == "yes"


def validate(mu: ProductMeasure, cap: int = 8) -> ValidationReport:
    """Flags: total mass, symmetry, semigroup admissibility, aperiodicity.

    Aperiodicity searches return times n <= cap and takes their gcd; a gcd
    of 1 with a filled window [n0, n0+3] counts as aperiodic, no returns by
    the cap is inconclusive rather than a failure.
    """
    messages: List[str] = []
    probability = abs(mu.total_mass() - 1.0) <= 1e-12
    if not probability:
        messages.append(f"total mass {mu.total_mass()} != 1")
    symmetric = mu.is_symmetric()
    if not symmetric:
        messages.append("measure is not symmetric")

    # admissibility: supports of mu^{*n} must eventually contain every generator
    support = {IDENTITY}
    needed = set()
    for g in mu.atoms:
        needed.add(g)
        needed.add(inverse(g))
    admissible = False
    reached: set = set()
    for _ in range(cap):
        reached = {multiply(h, g) for h in support for g in mu.atoms}
        support = support | reached
        if needed <= support and len(mu.atoms) > 0 and any(g != IDENTITY for g in mu.atoms):
            admissible = True
            break
    if not admissible:
        messages.append("support does not generate within the search cap")

    return_times = []
    power = ProductMeasure({IDENTITY: _one_like(mu)})
    for n in range(1, cap + 1):
        power = power.convolve(mu, budget=2_000_000)
        if float(power.atoms.get(IDENTITY, 0)) > 0:
            return_times.append(n)
    if not return_times:
        aperiodic = "inconclusive"
        period_hint = None
        messages.append(f"no return to e within {cap} steps")
    else:
        g = 0
        for n in return_times:
            g = math.gcd(g, n)
        period_hint = g
        if g == 1 and all(n in return_times for n in range(return_times[0], return_times[0] + 4)):
            aperiodic = "yes"
        elif g > 1:
            aperiodic = "no"
            messages.append(f"walk has period {g}")
        else:
            aperiodic = "inconclusive"
    return ValidationReport(probability, symmetric, admissible, aperiodic, period_hint, messages)


class ConvolutionTable:
    """Convolution powers of an adapted measure inside a word-metric ball.

    States are the normal forms of word length <= radius, enumerated
    breadth-first and addressed by dense integer ids (id 0 is e).  Each
    power advance moves mass along precomputed neighbor columns, one per
    atom of the lifted measure; pushes that would leave the ball are
    dropped and accounted in a per-step mass deficit.  Powers are refused,
    not silently truncated, when the state budget is exceeded.
    """

    def __init__(
        self,
        adapted: AdaptedMeasure,
        radius: int,
        budget: int = 50_000_000,
        keep_powers: bool = False,
        index_radius: Optional[int] = None,
    ):
        self.spec = adapted.spec
        self.adapted = adapted
        self.radius = int(radius)
        self.keep_powers = keep_powers
        lifted = adapted.lift()
        if any(len(g) > 1 for g in lifted.atoms):
            raise ValueError("convolution tables require one-syllable atom support")
        self.stay_weight = float(lifted.atoms.get(IDENTITY, 0.0))
        self.atom_elements: List[Element] = sorted(
            g for g in lifted.atoms if g != IDENTITY
        )
        self.atom_weights = np.array(
            [float(lifted.atoms[g]) for g in self.atom_elements]
        )
        self.index_radius = self.radius if index_radius is None else min(index_radius, self.radius)
        self._build(budget)
        self.pn_return: Optional[np.ndarray] = None
        self.pn_targets: Optional[np.ndarray] = None
        self.deficits: Optional[np.ndarray] = None
        self.powers: List[np.ndarray] = []
        self._targets: List[Element] = []
        self._target_ids: List[int] = []
        self.n_max = -1

    # ---- construction -------------------------------------------------

    def _build(self, budget: int) -> None:
        spec = self.spec
        key_to_id: Dict[Tuple, int] = {(): 0}
        anchors = [0]
        last_factor = [0]
        last_vec: List[Vector] = [()]
        frontier = [((), 0)]  # (key, id)
        moves = []
        for fac in spec.factors:
            for axis in range(fac.rank):
                for sign in (1, -1):
                    moves.append((fac.index, axis, sign))

        for _depth in range(self.radius):
            nxt = []
            for key, idx in frontier:
                if idx == 0:
                    factor, vec = 0, ()
                    anchor = 0
                else:
                    anchor, factor, vec = key
                for mf, axis, sign in moves:
                    if mf == factor:
                        new = list(vec)
                        new[axis] += sign
                        if sum(abs(c) for c in new) != sum(abs(c) for c in vec) + 1:
                            continue  # shrinking step, already enumerated
                        child_key = (anchor, mf, tuple(new))
                    else:
                        rank = spec.rank_of(mf)
                        unit = tuple(sign if i == axis else 0 for i in range(rank))
                        child_key = (idx, mf, unit)
                    if child_key in key_to_id:
                        continue
                    child_id = len(anchors)
                    if child_id >= budget:
                        raise BudgetExceededError(
                            f"state budget {budget} exceeded at radius step", child_id
                        )
                    key_to_id[child_key] = child_id
                    anchors.append(child_key[0])
                    last_factor.append(child_key[1])
                    last_vec.append(child_key[2])
                    nxt.append((child_key, child_id))
            frontier = nxt

        self.num_states = len(anchors)
        self.anchor = np.asarray(anchors, dtype=np.int64)
        self._last_factor = last_factor
        self._last_vec = last_vec

        # neighbor column per measure atom, via key walk in the full dict
        self.neighbor = np.full((self.num_states, len(self.atom_elements)), -1, dtype=np.int32)
        for a_idx, atom in enumerate(self.atom_elements):
            af, av = atom[0]
            col = self.neighbor[:, a_idx]
            for idx in range(self.num_states):
                if idx == 0:
                    key = (0, af, av)
                else:
                    factor, vec = last_factor[idx], last_vec[idx]
                    if factor == af:
                        merged = tuple(x + y for x, y in zip(vec, av))
                        if any(merged):
                            key = (anchors[idx], af, merged)
                        else:
                            col[idx] = anchors[idx]
                            continue
                    else:
                        key = (idx, af, av)
                target = key_to_id.get(key, -1)
                col[idx] = target

        # compact element index for lookups; BFS order is by word length, so
        # the scan can stop at the first element past the index radius
        self._index: Dict[Element, int] = {}
        for idx in range(self.num_states):
            element = self._element_of_internal(idx)
            if word_length(element) <= self.index_radius:
                self._index[element] = idx
            else:
                break

        # compact per-node syllable storage
        max_rank = max(spec.ranks)
        vec_arr = np.zeros((self.num_states, max_rank), dtype=np.int16)
        for idx, v in enumerate(last_vec):
            if v:
                vec_arr[idx, : len(v)] = v
        self._vec_arr = vec_arr
        self._factor_arr = np.asarray(last_factor, dtype=np.int8)
        self._last_factor = None
        self._last_vec = None

    def _element_of_internal(self, idx: int) -> Element:
        syllables = []
        while idx != 0:
            if self._last_factor is not None:
                f, v = self._last_factor[idx], self._last_vec[idx]
            else:
                f = int(self._factor_arr[idx])
                rank = self.spec.rank_of(f)
                v = tuple(int(c) for c in self._vec_arr[idx, :rank])
            syllables.append((f, v))
            idx = int(self.anchor[idx])
        return tuple(reversed(syllables))

    # ---- queries ------------------------------------------------------

    def id_of(self, element: Element) -> int:
        try:
            return self._index[element]
        except KeyError:
            raise KeyError(
                f"element at word length {word_length(element)} not in the id index "
                f"(index radius {self.index_radius})"
            )

    def element_of(self, idx: int) -> Element:
        return self._element_of_internal(idx)

    def register_target(self, element: Element) -> int:
        """Record P^n(e, element) rows during run(); returns the column."""
        if self.n_max >= 0:
            raise RuntimeError("targets must be registered before run()")
        idx = self.id_of(element)
        self._targets.append(element)
        self._target_ids.append(idx)
        return len(self._targets) - 1

    def run(self, n_max: int) -> None:
        """Advance the delta-at-e distribution n_max steps, recording rows."""
        cur = np.zeros(self.num_states)
        cur[0] = 1.0
        returns = [1.0]
        deficits = [0.0]
        t_ids = np.asarray(self._target_ids, dtype=np.int64)
        target_rows = [cur[t_ids].copy() if len(t_ids) else np.zeros(0)]
        if self.keep_powers:
            self.powers = [cur.copy()]
        lost = 0.0
        for _n in range(1, n_max + 1):
            nxt = cur * self.stay_weight if self.stay_weight else np.zeros_like(cur)
            for a_idx in range(len(self.atom_elements)):
                col = self.neighbor[:, a_idx]
                ok = col >= 0
                w = self.atom_weights[a_idx]
                # right translation by a fixed atom is injective, so no collisions
                nxt[col[ok]] += w * cur[ok]
                lost += w * float(cur[~ok].sum())
            cur = nxt
            returns.append(float(cur[0]))
            deficits.append(lost)
            if len(t_ids):
                target_rows.append(cur[t_ids].copy())
            else:
                target_rows.append(np.zeros(0))
            if self.keep_powers:
                self.powers.append(cur.copy())
        self.pn_return = np.asarray(returns)
        self.pn_targets = np.vstack(target_rows) if target_rows else None
        self.deficits = np.asarray(deficits)
        self.n_max = n_max

    def p_return(self, n: int) -> float:
        self._check_ran(n)
        return float(self.pn_return[n])

    def p_target(self, column: int, n: int) -> float:
        self._check_ran(n)
        return float(self.pn_targets[n, column])

    def transition(self, x: Element, y: Element, n: int) -> float:
        """Exact P^n(x, y) = mu^{*n}(x^{-1} y) from stored powers or rows."""
        self._check_ran(n)
        w = multiply(inverse(x), y)
        if self.keep_powers:
            return float(self.powers[n][self.id_of(w)])
        try:
            column = self._targets.index(w)
        except ValueError:
            raise KeyError(
                f"transition target {w} neither a registered row nor a stored power"
            )
        return float(self.pn_targets[n, column])

    def mass_deficit(self, n: int) -> float:
        """Total probability dropped at the ball boundary through step n."""
        self._check_ran(n)
        return float(self.deficits[n])

    def _check_ran(self, n: int) -> None:
        if self.n_max < 0:
            raise RuntimeError("run() has not been called")
        if n > self.n_max:
            raise BudgetExceededError(f"power {n} beyond computed horizon {self.n_max}", self.n_max)

    def __repr__(self):
        return (
            f"ConvolutionTable(radius={self.radius}, states={self.num_states}, "
            f"atoms={len(self.atom_elements)}, n_max={self.n_max})"
        )
