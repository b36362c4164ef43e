"""Session fixtures: the walks and transition tables shared across modules.

The heavy convolution tables are session-scoped because they dominate the
suite's runtime; every test that needs exact transition probabilities
draws from one of these.

    tab10   lazy F2 walk, radius 10, full power storage, n <= 40.
            Exact for P^n(x,y) whenever n <= 20 (escaping the ball and
            returning costs more steps than that).
    tab14   lazy F2 walk, radius 14, registered target rows, n <= 40.
            The accuracy table for kernel ratios at horizons 36-40.

Tables for the Green-series cross-checks are built inside their tests
instead: the Z^3 * Z one alone needs ~2 GB and must be freed promptly.
"""

from fractions import Fraction

import pytest

from freewalk import (
    AdaptedMeasure,
    ConvolutionTable,
    FreeProductSpec,
    PhiPsiSystem,
    ball,
    inverse,
    multiply,
    parse,
    word_length,
)

# Fixed kernel-route test pairs (x, y) on F2, word lengths |y| in 2..4.
ROUTE_PAIRS = [
    ("f1:(1)", "f1:(1).f2:(1)"),
    ("f2:(1)", "f1:(1).f2:(1)"),
    ("f1:(-1)", "f1:(1).f2:(1)"),
    ("f1:(1)", "f2:(1).f1:(1)"),
    ("f2:(1)", "f2:(1).f1:(1)"),
    ("f1:(1)", "f1:(2).f2:(1)"),
    ("f2:(-1)", "f2:(-1).f1:(1)"),
    ("f1:(1).f2:(1)", "f1:(1).f2:(1).f1:(1).f2:(1)"),
    ("f1:(1)", "f1:(1).f2:(1).f1:(1).f2:(1)"),
    ("f2:(-1).f1:(1)", "f1:(1).f2:(1).f1:(-1)"),
]

ACCURACY_N_LIST = (36, 38, 40)


@pytest.fixture(scope="session")
def f2_spec():
    return FreeProductSpec([1, 1])


@pytest.fixture(scope="session")
def f2_system(f2_spec):
    return PhiPsiSystem.from_adapted(AdaptedMeasure.simple(f2_spec))


@pytest.fixture(scope="session")
def f2_report(f2_system):
    return f2_system.spectral_report()


@pytest.fixture(scope="session")
def z3z_spec():
    return FreeProductSpec([3, 1])


@pytest.fixture(scope="session")
def z3z_system(z3z_spec):
    return PhiPsiSystem.from_adapted(AdaptedMeasure.simple(z3z_spec))


@pytest.fixture(scope="session")
def z5z_spec():
    return FreeProductSpec([5, 1])


@pytest.fixture(scope="session")
def z5z_system(z5z_spec):
    return PhiPsiSystem.from_adapted(
        AdaptedMeasure.simple(z5z_spec, [Fraction(4, 5), Fraction(1, 5)])
    )


@pytest.fixture(scope="session")
def z5z_report(z5z_system):
    return z5z_system.spectral_report()


@pytest.fixture(scope="session")
def tab10(f2_spec):
    adapted = AdaptedMeasure.simple(f2_spec).lazy(Fraction(1, 4))
    table = ConvolutionTable(adapted, radius=10, keep_powers=True)
    table.run(40)
    return table


def _route_targets(spec):
    targets = {parse(spec, "e")}
    for x_text, y_text in ROUTE_PAIRS:
        x, y = parse(spec, x_text), parse(spec, y_text)
        targets.add(y)
        targets.add(multiply(inverse(x), y))
    return sorted(targets, key=lambda g: (word_length(g), g))


@pytest.fixture(scope="session")
def tab14(f2_spec):
    adapted = AdaptedMeasure.simple(f2_spec).lazy(Fraction(1, 4))
    table = ConvolutionTable(adapted, radius=14, index_radius=8)
    for t in _route_targets(f2_spec):
        table.register_target(t)
    table.run(40)
    return table


def build_plain_table(spec, radius, targets, n_max=40, index_radius=None):
    """Non-lazy transition table with the given target rows filled."""
    table = ConvolutionTable(AdaptedMeasure.simple(spec), radius=radius,
                             index_radius=index_radius)
    for t in targets:
        table.register_target(t)
    table.run(n_max)
    return table
