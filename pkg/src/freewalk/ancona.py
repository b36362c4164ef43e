"""Multiplicativity probes for the Green function along normal-form geodesics.

Every normal-form prefix point of x^{-1}z is a cut point of the Cayley
graph between x and z, so the Green function factors through it exactly:

    G(x,z|r) = G(x,y|r) G(y,z|r) / G(e,e|r).

The weak scan measures the ratio G(x,z|r)/(G(x,y|r)G(y,z|r)) over sampled
triples and a radius grid.  On prefix triples it must reproduce
1/G(e,e|r) to round-off; moving x off the geodesic by a bounded offset
breaks the identity but keeps the ratio bounded, and the scan reports the
empirical constant per radius.

The strong probe takes two pairs whose normal forms run through a shared
middle segment and measures the cross-ratio

    G(x,y) G(x',y') / (G(x,y') G(x',y)).

Shared-segment pairs factor through the first shared cut point on both
diagonals, so the cross-ratio is identically 1 and the deviations are
float residue; the decay fitter excludes such exact zeros rather than
fitting noise.  Genuinely nonzero cross-ratios need configurations whose
connecting words recombine inside a factor coset, which the one-room scan
produces on demand.
"""

import json
import math
import statistics
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .extrapolate import geometric_decay_fit
from .groups import (
    IDENTITY,
    Element,
    FreeProductSpec,
    ball,
    format_element,
    inverse,
    multiply,
    normalize,
    prefix,
    random_element,
)
from .product_green import PhiPsiSystem

__all__ = [
    "TripleSample",
    "AnconaReport",
    "DecayFit",
    "cross_ratio",
    "prefix_triple_sampler",
    "perturbed_triple_sampler",
    "shared_prefix_pair_sampler",
    "weak_ancona_scan",
    "strong_ancona_fit",
    "one_room_scan",
]

TripleSampler = Callable[[np.random.Generator], Tuple[Element, Element, Element]]
PairSampler = Callable[
    [np.random.Generator, int], Tuple[Element, Element, Element, Element]
]


@dataclass(frozen=True)
class TripleSample:
    """One evaluated triple: the ratio G(x,z|r)/(G(x,y|r)G(y,z|r))."""

    x: Element
    y: Element
    z: Element
    r: float
    ratio: float

    def __post_init__(self):
        if not (math.isfinite(self.ratio) and self.ratio > 0.0):
            raise ValueError(
                f"triple ratio must be finite and positive, got {self.ratio!r} "
                f"at x={format_element(self.x)} y={format_element(self.y)} "
                f"z={format_element(self.z)} r={self.r}"
            )


@dataclass(frozen=True)
class AnconaReport:
    """Per-radius distribution of the weak multiplicativity ratio."""

    r_values: Tuple[float, ...]
    max_ratios: Tuple[float, ...]
    median_ratios: Tuple[float, ...]
    min_ratios: Tuple[float, ...]
    count: int
    seed: int
    samples: Tuple[TripleSample, ...]
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.r_values)
        if not (len(self.max_ratios) == len(self.median_ratios) == len(self.min_ratios) == n):
            raise ValueError("per-radius stats must align with the radius grid")

    @property
    def c_hat(self) -> float:
        """Empirical constant: the sup of the ratio over samples and radii."""
        return max(self.max_ratios)

    @property
    def uniformity_factor(self) -> float:
        """Spread of the per-radius sup across the grid (1 = perfectly flat)."""
        return max(self.max_ratios) / min(self.max_ratios)

    def to_json(self) -> str:
        payload: Dict = {
            "count": self.count,
            "seed": self.seed,
            "c_hat": self.c_hat,
            "uniformity_factor": self.uniformity_factor,
            "per_r": [
                {"r": r, "max": mx, "median": md, "min": mn}
                for r, mx, md, mn in zip(
                    self.r_values, self.max_ratios, self.median_ratios, self.min_ratios
                )
            ],
            "notes": list(self.notes),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def samples_csv(self) -> str:
        lines = ["x,y,z,r,ratio"]
        for s in self.samples:
            lines.append(
                f"{format_element(s.x)},{format_element(s.y)},"
                f"{format_element(s.z)},{s.r!r},{s.ratio!r}"
            )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DecayFit:
    """Cross-ratio deviations per shared-prefix depth and their decay fit.

    deviations holds the per-depth sample medians.  The fit is
    log-linear on the depths whose median clears zero_floor; alpha and
    coefficient are NaN when fewer than two depths survive.
    """

    depths: Tuple[int, ...]
    deviations: Tuple[float, ...]
    coefficient: float
    alpha: float
    r_squared: float
    kept_depths: Tuple[int, ...]
    excluded: int
    note: str = ""

    def __post_init__(self):
        if len(self.depths) != len(self.deviations):
            raise ValueError("need one deviation per depth")
        if any(d < 0.0 for d in self.deviations):
            raise ValueError("cross-ratio deviations are absolute values, got a negative")

    def to_json(self) -> str:
        def clean(v: float) -> Optional[float]:
            return v if math.isfinite(v) else None

        payload = {
            "depths": list(self.depths),
            "deviations": list(self.deviations),
            "coefficient": clean(self.coefficient),
            "alpha": clean(self.alpha),
            "r_squared": clean(self.r_squared),
            "kept_depths": list(self.kept_depths),
            "excluded": self.excluded,
            "note": self.note,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def cross_ratio(
    system: PhiPsiSystem, x: Element, y: Element, xp: Element, yp: Element, r: float
) -> float:
    """G(x,y)G(x',y') / (G(x,y')G(x',y)) at radius r."""
    num = system.product_green(x, y, r) * system.product_green(xp, yp, r)
    den = system.product_green(x, yp, r) * system.product_green(xp, y, r)
    return num / den


# ---- samplers ---------------------------------------------------------


def _nontrivial(spec: FreeProductSpec, rng, max_syllables: int, max_coord: int) -> Element:
    while True:
        z = random_element(spec, rng, max_syllables=max_syllables, max_coord=max_coord)
        if z:
            return z


def prefix_triple_sampler(
    spec: FreeProductSpec, max_syllables: int = 4, max_coord: int = 2
) -> TripleSampler:
    """Triples (e, y, z) with y a normal-form prefix of z.

    Every prefix point is a cut point, so these triples realize the
    multiplicativity identity exactly; they calibrate the scan.
    """

    def sample(rng) -> Tuple[Element, Element, Element]:
        z = _nontrivial(spec, rng, max_syllables, max_coord)
        j = int(rng.integers(0, len(z) + 1))
        return IDENTITY, prefix(z, j), z

    return sample


def perturbed_triple_sampler(
    spec: FreeProductSpec,
    offset_radius: int = 2,
    max_syllables: int = 4,
    max_coord: int = 2,
) -> TripleSampler:
    """Prefix triples with x moved off the geodesic by a bounded offset.

    x ranges over the word-metric ball of offset_radius, so y stays within
    that distance of the geodesic [x, z] and the ratio stays bounded; the
    scan's job is to measure the bound.
    """
    offsets = ball(spec, offset_radius)

    def sample(rng) -> Tuple[Element, Element, Element]:
        z = _nontrivial(spec, rng, max_syllables, max_coord)
        j = int(rng.integers(0, len(z) + 1))
        x = offsets[int(rng.integers(0, len(offsets)))]
        return x, prefix(z, j), z

    return sample


def _random_syllable_word(
    spec: FreeProductSpec,
    rng,
    n: int,
    max_coord: int,
    first_not: int = 0,
    last_not: int = 0,
) -> Element:
    """Exactly n alternating syllables; first/last factor constraints keep
    concatenations with neighbours in normal form."""
    syllables = []
    last = first_not
    for i in range(n):
        choices = [f.index for f in spec.factors if f.index != last]
        if i == n - 1 and last_not in choices and len(choices) > 1:
            choices = [c for c in choices if c != last_not]
        factor = int(rng.choice(choices))
        rank = spec.rank_of(factor)
        vector = tuple(int(c) for c in rng.integers(-max_coord, max_coord + 1, rank))
        if not any(vector):
            vector = (1,) + (0,) * (rank - 1)
        syllables.append((factor, vector))
        last = factor
    return normalize(syllables)


def shared_prefix_pair_sampler(
    spec: FreeProductSpec, tail_syllables: int = 2, max_coord: int = 2
) -> PairSampler:
    """Pairs (x,y), (x',y') whose normal forms share a middle segment.

    The sampler draws a segment m of exactly `depth` syllables, heads
    w, w' and tails t, t' that concatenate without merging, and returns
    x = w^{-1}, y = m t, x' = w'^{-1}, y' = m t'.  Both geodesics then run
    e -> m through the same cut points, which is the shared-prefix reading
    of fellow-traveling for time `depth`.
    """
    if tail_syllables < 1:
        raise ValueError("tail_syllables must be >= 1")

    def sample(rng, depth: int) -> Tuple[Element, Element, Element, Element]:
        if depth < 1:
            raise ValueError(f"shared-prefix depth must be >= 1, got {depth}")
        m = _random_syllable_word(spec, rng, depth, max_coord)
        m_first = m[0][0]
        m_last = m[-1][0]

        def head() -> Element:
            n = int(rng.integers(1, tail_syllables + 1))
            # built backwards: the head's last syllable must not merge with m
            w = _random_syllable_word(spec, rng, n, max_coord, first_not=m_first)
            return tuple(reversed(w))

        def tail() -> Element:
            n = int(rng.integers(1, tail_syllables + 1))
            return _random_syllable_word(spec, rng, n, max_coord, first_not=m_last)

        w = head()
        wp = head()
        while wp == w:
            wp = head()
        t = tail()
        tp = tail()
        while tp == t:
            tp = tail()
        x = inverse(w)
        xp = inverse(wp)
        y = multiply(m, t)
        yp = multiply(m, tp)
        # merge-free by construction: the pairs differ only off the segment
        assert len(multiply(inverse(x), y)) == len(w) + depth + len(t)
        return x, y, xp, yp

    return sample


# ---- scans ------------------------------------------------------------


def _checked_grid(r_grid: Sequence[float], R: float) -> List[float]:
    rs = [float(r) for r in r_grid]
    if not rs:
        raise ValueError("radius grid is empty")
    for r in rs:
        if not 0.0 < r <= R * (1.0 + 1e-12):
            raise ValueError(f"radius {r} outside (0, R={R}]")
    return rs


def weak_ancona_scan(
    system: PhiPsiSystem,
    r_grid: Sequence[float],
    sampler: TripleSampler,
    count: int,
    seed: int = 0,
) -> AnconaReport:
    """Distribution of G(x,z|r)/(G(x,y|r)G(y,z|r)) over sampled triples.

    The same `count` triples are evaluated at every grid radius, so the
    per-radius rows are directly comparable; the report's c_hat is the sup
    over everything.
    """
    rs = _checked_grid(r_grid, system.R)
    if count < 1:
        raise ValueError(f"need at least one sample, got {count}")
    rng = np.random.default_rng(seed)
    triples = [sampler(rng) for _ in range(count)]

    samples: List[TripleSample] = []
    maxs: List[float] = []
    medians: List[float] = []
    mins: List[float] = []
    for r in rs:
        ratios = []
        for x, y, z in triples:
            gxz = system.product_green(x, z, r)
            gxy = system.product_green(x, y, r)
            gyz = system.product_green(y, z, r)
            ratio = gxz / (gxy * gyz)
            samples.append(TripleSample(x, y, z, r, ratio))
            ratios.append(ratio)
        maxs.append(max(ratios))
        medians.append(statistics.median(ratios))
        mins.append(min(ratios))
    return AnconaReport(
        r_values=tuple(rs),
        max_ratios=tuple(maxs),
        median_ratios=tuple(medians),
        min_ratios=tuple(mins),
        count=count,
        seed=seed,
        samples=tuple(samples),
    )


def strong_ancona_fit(
    system: PhiPsiSystem,
    depth_list: Sequence[int],
    sampler: PairSampler,
    count: int,
    r: Optional[float] = None,
    seed: int = 0,
    zero_floor: float = 1e-12,
) -> DecayFit:
    """Median cross-ratio deviation per shared depth, fitted to C*alpha^n.

    Depth medians at or below zero_floor are float residue of exact
    factorization through shared cut points; they are excluded from the
    log-linear fit and counted in the note.  On free products every
    shared-prefix pair factors exactly, so expect all depths excluded and
    a NaN fit: the deviation data, not this routine, carries that verdict.
    """
    depths = [int(n) for n in depth_list]
    if not depths:
        raise ValueError("depth list is empty")
    if any(b <= a for a, b in zip(depths, depths[1:])):
        raise ValueError(f"depths must be strictly increasing, got {depths}")
    if count < 1:
        raise ValueError(f"need at least one sample per depth, got {count}")
    r_val = system.R if r is None else float(r)
    _checked_grid([r_val], system.R)

    rng = np.random.default_rng(seed)
    medians: List[float] = []
    for depth in depths:
        devs = []
        for _ in range(count):
            x, y, xp, yp = sampler(rng, depth)
            devs.append(abs(cross_ratio(system, x, y, xp, yp, r_val) - 1.0))
        medians.append(statistics.median(devs))

    coeff, alpha, r2, kept = geometric_decay_fit(depths, medians, zero_floor)
    excluded = len(depths) - len(kept)
    parts = []
    if excluded:
        parts.append(
            f"{excluded} of {len(depths)} depth medians at or below "
            f"zero_floor={zero_floor:g} excluded as exact factorization"
        )
    if len(kept) < 2:
        parts.append("fewer than two nonzero depths, no decay rate to fit")
    return DecayFit(
        depths=tuple(depths),
        deviations=tuple(medians),
        coefficient=coeff,
        alpha=alpha,
        r_squared=r2,
        kept_depths=tuple(kept),
        excluded=excluded,
        note="; ".join(parts),
    )


def one_room_scan(
    system: PhiPsiSystem,
    k: int,
    v: Tuple[int, ...],
    vp: Tuple[int, ...],
    deltas: Sequence[Tuple[int, ...]],
    r: float,
) -> Tuple[float, ...]:
    """Cross-ratio deviations for pairs recombining inside one factor coset.

    x = f_k(delta), x' = e, y = f_k(v), y' = f_k(vp): all four connecting
    words live in the factor-k coset at e, so nothing factors through a
    cut point and the deviation |G(x,y)G(x',y')/(G(x,y')G(x',y)) - 1| can
    be genuinely nonzero.  It still vanishes whenever the four factor
    Green ratios cancel exactly: rank-one factors with all displacements
    on one side of the start, or offsets for which a lattice symmetry
    carries (v - delta, vp) to (vp - delta, v).
    """
    spec = system.spec
    rank = spec.rank_of(k)
    for name, vec in (("v", v), ("vp", vp)):
        if len(vec) != rank:
            raise ValueError(f"{name} must have rank {rank}, got {vec}")
    if tuple(v) == tuple(vp):
        raise ValueError("v and vp must differ, identical pairs give deviation 0")
    y = normalize([(k, tuple(v))])
    yp = normalize([(k, tuple(vp))])
    devs = []
    for delta in deltas:
        if len(delta) != rank:
            raise ValueError(f"offset must have rank {rank}, got {delta}")
        x = normalize([(k, tuple(delta))])
        devs.append(abs(cross_ratio(system, x, y, IDENTITY, yp, r) - 1.0))
    return tuple(devs)
