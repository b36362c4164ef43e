"""Normal-form arithmetic on free products of integer lattices.

Elements of Z^{d_1} * ... * Z^{d_k} are stored as tuples of syllables
((factor, vector), ...) with 1-based factor indices, nonzero integer
vectors, and adjacent syllables in distinct factors.  The empty tuple is
the identity.  All operations are pure and all values immutable.
"""

import re
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

Vector = Tuple[int, ...]
Syllable = Tuple[int, Vector]
Element = Tuple[Syllable, ...]

IDENTITY: Element = ()

# coordinates must stay inside int32 so convolution tables can pack them
_COORD_LIMIT = 2**31 - 1

_SYLLABLE_RE = re.compile(r"^f(\d+):\(([-0-9,]*)\)$")


class BudgetExceededError(Exception):
    """Raised when an enumeration would emit more elements than allowed."""

    def __init__(self, message: str, partial_count: int = 0):
        super().__init__(message)
        self.partial_count = partial_count


@dataclass(frozen=True)
class FactorSpec:
    """One lattice factor Z^rank, with a 1-based position in the product."""

    index: int
    rank: int
    label: str = ""

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"factor rank must be >= 1, got {self.rank}")
        if self.index < 1:
            raise ValueError(f"factor index must be >= 1, got {self.index}")


@dataclass(frozen=True)
class FreeProductSpec:
    """The group Z^{d_1} * ... * Z^{d_k} given by its factor ranks."""

    ranks: Tuple[int, ...]
    factors: Tuple[FactorSpec, ...] = field(init=False)

    def __init__(self, ranks: Sequence[int]):
        ranks = tuple(int(d) for d in ranks)
        if len(ranks) < 2:
            raise ValueError(f"free product needs >= 2 factors, got {len(ranks)}")
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(
            self,
            "factors",
            tuple(FactorSpec(i + 1, d, f"Z^{d}") for i, d in enumerate(ranks)),
        )

    @property
    def num_factors(self) -> int:
        return len(self.ranks)

    def rank_of(self, factor: int) -> int:
        if not 1 <= factor <= len(self.ranks):
            raise ValueError(f"factor index {factor} out of range 1..{len(self.ranks)}")
        return self.ranks[factor - 1]


def _check_syllable(factor: int, vector: Vector) -> None:
    if not any(vector):
        raise ValueError("syllable vector must be nonzero")
    if any(abs(c) > _COORD_LIMIT for c in vector):
        raise ValueError(f"coordinate overflow in syllable f{factor}:{vector}")


def normalize(syllables: Sequence[Syllable]) -> Element:
    """Reduce a syllable sequence to the unique normal form."""
    out: List[Syllable] = []
    for factor, vector in syllables:
        vector = tuple(int(c) for c in vector)
        if not any(vector):
            continue
        if out and out[-1][0] == factor:
            merged = tuple(a + b for a, b in zip(out[-1][1], vector))
            out.pop()
            if any(merged):
                out.append((factor, merged))
        else:
            out.append((factor, vector))
    for factor, vector in out:
        _check_syllable(factor, vector)
    return tuple(out)


def multiply(a: Element, b: Element) -> Element:
    """Product of two normal forms, again in normal form."""
    out = list(a)
    for syllable in b:
        if out and out[-1][0] == syllable[0]:
            merged = tuple(x + y for x, y in zip(out[-1][1], syllable[1]))
            out.pop()
            if any(merged):
                out.append((syllable[0], merged))
        else:
            out.append(syllable)
    return tuple(out)


def inverse(a: Element) -> Element:
    return tuple(
        (factor, tuple(-c for c in vector)) for factor, vector in reversed(a)
    )


def word_length(a: Element) -> int:
    """Distance to e for the generating set of unit vectors in every factor."""
    return sum(sum(abs(c) for c in vector) for _, vector in a)


def relative_length(a: Element) -> int:
    """Syllable count: the relative distance to e in the coned-off graph."""
    return len(a)


def prefix(a: Element, j: int) -> Element:
    if not 0 <= j <= len(a):
        raise ValueError(f"prefix index {j} out of range 0..{len(a)}")
    return a[:j]


def prefix_points(a: Element) -> List[Element]:
    """All normal-form prefixes e = y_0, y_1, ..., y_n = a."""
    return [a[:j] for j in range(len(a) + 1)]


def common_prefix_length(a: Element, b: Element) -> int:
    j = 0
    for sa, sb in zip(a, b):
        if sa != sb:
            break
        j += 1
    return j


def format_element(a: Element) -> str:
    """Canonical text form, e.g. 'f1:(2).f2:(-1)'; identity is 'e'."""
    if not a:
        return "e"
    return ".".join(
        f"f{factor}:({','.join(str(c) for c in vector)})" for factor, vector in a
    )


def parse(spec: FreeProductSpec, text: str) -> Element:
    """Inverse of format_element, validated against the product spec."""
    text = text.strip()
    if text == "e" or text == "":
        return IDENTITY
    syllables: List[Syllable] = []
    for chunk in text.split("."):
        m = _SYLLABLE_RE.match(chunk.strip())
        if m is None:
            raise ValueError(f"cannot parse syllable {chunk!r}")
        factor = int(m.group(1))
        rank = spec.rank_of(factor)
        coords = tuple(int(c) for c in m.group(2).split(",") if c != "")
        if len(coords) != rank:
            raise ValueError(
                f"syllable {chunk!r} has {len(coords)} coordinates, factor {factor} has rank {rank}"
            )
        syllables.append((factor, coords))
    element = normalize(syllables)
    if len(element) != len(syllables):
        raise ValueError(f"{text!r} is not in normal form")
    return element


def generators(spec: FreeProductSpec) -> List[Element]:
    """The +-unit-vector generators, in deterministic factor/axis order."""
    gens: List[Element] = []
    for factor in spec.factors:
        for axis in range(factor.rank):
            for sign in (1, -1):
                vector = tuple(
                    sign if i == axis else 0 for i in range(factor.rank)
                )
                gens.append(((factor.index, vector),))
    return gens


def enumerate_ball(
    spec: FreeProductSpec,
    radius: int,
    metric: str = "word",
    budget: Optional[int] = None,
) -> Iterator[Element]:
    """Stream the ball of the given radius in deterministic length-lex order.

    For the word metric the ball is finite and the stream terminates.  For
    the relative metric (syllable count) the ball is infinite as soon as
    radius >= 1, so a budget is required; once the emitted count would pass
    it, BudgetExceededError is raised with the partial count.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if metric not in ("word", "relative"):
        raise ValueError(f"unknown metric {metric!r}")
    if metric == "relative" and radius >= 1 and budget is None:
        raise BudgetExceededError(
            "relative-metric balls are infinite; a budget is required", 0
        )
    gens = generators(spec)
    emitted = 0
    sphere = [IDENTITY]
    seen = {IDENTITY}
    while sphere:
        for element in sphere:
            if budget is not None and emitted >= budget:
                raise BudgetExceededError(
                    f"ball enumeration exceeded budget {budget}", emitted
                )
            emitted += 1
            yield element
        if metric == "word" and word_length(sphere[0]) >= radius:
            return
        nxt = set()
        for element in sphere:
            for g in gens:
                candidate = multiply(element, g)
                if candidate in seen:
                    continue
                if word_length(candidate) != word_length(element) + 1:
                    continue
                if metric == "relative" and relative_length(candidate) > radius:
                    continue
                nxt.add(candidate)
        seen.update(nxt)
        sphere = sorted(nxt)


def ball(
    spec: FreeProductSpec,
    radius: int,
    metric: str = "word",
    budget: Optional[int] = None,
) -> List[Element]:
    """The ball as a list, in the enumerate_ball order."""
    return list(enumerate_ball(spec, radius, metric, budget))


def lattice_ball_size(d: int, r: int) -> int:
    """Number of lattice points of Z^d with l1 norm <= r (closed form)."""
    total = 0
    for k in range(min(d, r) + 1):
        total += 2**k * _binom(d, k) * _binom(r, k)
    return total


def _binom(n: int, k: int) -> int:
    if k < 0 or k > n:
        return 0
    out = 1
    for i in range(k):
        out = out * (n - i) // (i + 1)
    return out


def random_element(spec: FreeProductSpec, rng, max_syllables: int = 3,
                   max_coord: int = 2) -> Element:
    """Uniform-ish random normal form for property tests (seeded rng)."""
    n = int(rng.integers(0, max_syllables + 1))
    syllables: List[Syllable] = []
    last = 0
    for _ in range(n):
        choices = [f.index for f in spec.factors if f.index != last]
        factor = int(rng.choice(choices))
        rank = spec.rank_of(factor)
        vector = tuple(int(c) for c in rng.integers(-max_coord, max_coord + 1, rank))
        if not any(vector):
            vector = (1,) + (0,) * (rank - 1)
        syllables.append((factor, vector))
        last = factor
    return normalize(syllables)
