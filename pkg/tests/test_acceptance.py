"""Acceptance battery: thirteen numbered checks, one verdict line each.

Every check prints `criterion NN: PASS/FAIL - detail` through
capsys.disabled() so the verdicts survive capture and appear in the
console log; the assertion that follows each print mirrors it exactly.

Two checks probe decay phenomena that exact cut-point factorization
rules out on free products: the kernel-ratio gap of criterion 10 sits at
a fixed depth-determined offset instead of shrinking below 0.05, and the
cross-ratio deviations of criterion 12 are identically zero, leaving no
decay rate to fit.  Both fail by construction; the printed detail and
the strong-fit note carry the measured evidence.
"""

import json
import math
import random
from fractions import Fraction

from conftest import ACCURACY_N_LIST, ROUTE_PAIRS, build_plain_table
from freewalk import (
    AdaptedMeasure,
    FactorGreenEvaluator,
    FreeProductSpec,
    IDENTITY,
    LatticeMeasure,
    PhiPsiSystem,
    RaySpec,
    ball,
    direct_series_green,
    format_element,
    gerl_R_estimate,
    h_finite_n,
    h_many_via_sums,
    h_via_sums,
    harmonicity_residual,
    inverse,
    lazy_spectral_radius,
    llt_fit,
    multiply,
    parse,
    prefix_triple_sampler,
    radical_scan,
    relative_length,
    shared_prefix_pair_sampler,
    strong_ancona_fit,
    weak_ancona_scan,
)
from freewalk.experiments import canned_config, parse_config_dict, run

R_EXACT = 2.0 / math.sqrt(3.0)
WATSON = 1.5163860591519780


def _verdict(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} - {detail}")


def _excursion_green(r):
    """Uniform-4 walk on Z*Z: first-return function U and G = 1/(1-U).

    A step leaves e with weight r; returning from distance 1 has the
    generating function F solving 3*r*F^2 - 4*F + r = 0, so
    U = r*F = (4 - sqrt(16 - 12 r^2))/6.  The discriminant is clamped:
    at the branch point r = 2/sqrt(3) it is 0 up to float roundoff.
    """
    u = (4.0 - math.sqrt(max(0.0, 16.0 - 12.0 * r * r))) / 6.0
    return 1.0 / (1.0 - u)


def test_criterion_01_f2_spectral_radius_and_green(capsys, f2_system, tab10):
    d_r = abs(f2_system.R - R_EXACT)
    g_at_r = f2_system.green_ee(f2_system.R)
    g_at_1 = f2_system.green_ee(1.0)
    d_gr = abs(g_at_r - 3.0)
    d_g1 = abs(g_at_1 - 1.5)
    # same values against the excursion oracle, not just the closed forms
    d_orc = max(abs(g_at_1 - _excursion_green(1.0)),
                abs(g_at_r - _excursion_green(R_EXACT)))
    est = gerl_R_estimate(tab10, n_max=14)
    lazy_r = lazy_spectral_radius(f2_system.R, 0.25)
    d_gerl = abs(est.value - lazy_r)
    ok = (d_r <= 1e-6 and d_gr <= 1e-6 and d_g1 <= 1e-6
          and d_orc <= 1e-6 and d_gerl <= 1e-2)
    _verdict(capsys, 1, ok,
             f"R delta {d_r:.2e}, G(R) delta {d_gr:.2e}, G(1) delta "
             f"{d_g1:.2e}, oracle delta {d_orc:.2e}, step-ratio delta "
             f"{d_gerl:.2e} ({est.status})")
    assert ok


def test_criterion_02_zeta_closed_form_and_classifier(capsys, f2_system,
                                                      f2_report):
    # t/sqrt(1-t^2) = a R G(R) has the closed solution t = s/sqrt(1+s^2)
    s = 0.5 * f2_system.R * f2_system.green_ee(f2_system.R)
    t_oracle = s / math.sqrt(1.0 + s * s)
    zetas = [f2_system.zeta(i, f2_system.R) for i in (1, 2)]
    d_closed = max(abs(z - math.sqrt(3.0) / 2.0) for z in zetas)
    d_oracle = max(abs(z - t_oracle) for z in zetas)
    nondeg = (f2_report.status == "non-degenerate"
              and f2_report.degenerate == [False, False])
    ok = d_closed <= 1e-8 and d_oracle <= 1e-8 and nondeg
    _verdict(capsys, 2, ok,
             f"zeta delta {d_closed:.2e} (oracle {d_oracle:.2e}), "
             f"classifier {f2_report.status!r} on both factors")
    assert ok


def test_criterion_03_z5z_weight_sweep(capsys, tmp_path):
    config = parse_config_dict(canned_config("z5z"))
    run(config, out_dir=tmp_path / "out", cache_dir=tmp_path / "cache", jobs=4)
    summary = json.loads((tmp_path / "out" / "z5z_summary.json").read_text())
    brackets = summary["sign_change_brackets"]
    widths = summary["bracket_widths"]
    grid = summary["alpha_grid"]
    lo = summary["endpoints"][repr(grid[0])]
    hi = summary["endpoints"][repr(grid[-1])]
    ok = (len(brackets) > 0 and min(widths) <= 0.05
          and lo["status"] == "non-degenerate"
          and hi["degenerate"][0] is True
          and hi["convergent"] is True
          and hi["degeneracy_rank"] == 5
          and hi["derivative_order"] == 2)
    _verdict(capsys, 3, ok,
             f"sign change in {brackets}, widths {widths}, endpoints "
             f"{lo['status']!r} -> {hi['status']!r} (rank "
             f"{hi['degeneracy_rank']}, order {hi['derivative_order']})")
    assert ok


def test_criterion_04_z2z_never_degenerate(capsys):
    spec = FreeProductSpec([2, 1])
    failures = []
    for k in range(1, 10):
        alpha = k / 10.0
        adapted = AdaptedMeasure.simple(spec, [alpha, 1.0 - alpha])
        report = PhiPsiSystem.from_adapted(adapted).spectral_report()
        if report.status != "non-degenerate" or any(report.degenerate):
            failures.append((alpha, report.status))
    ok = not failures
    _verdict(capsys, 4, ok,
             f"9-point weight grid on Z^2 * Z, failures: {failures or 'none'}")
    assert ok


def test_criterion_05_torus_quadrature_watson(capsys):
    ev = FactorGreenEvaluator(LatticeMeasure.simple_walk(3),
                              mode="quadrature", nodes_per_axis=64)
    value, err = ev.green_with_error((0, 0, 0), 1.0)
    d_pin = abs(value - 1.516386)
    ok = d_pin <= 5e-5 and err <= 5e-5 and abs(value - WATSON) <= 5e-5
    _verdict(capsys, 5, ok,
             f"G(0,0|1) = {value:.10f}, pinned delta {d_pin:.2e}, "
             f"refinement delta {err:.2e}")
    assert ok


def test_criterion_06_green_series_cross_validation(capsys, f2_spec,
                                                    f2_system, z3z_spec,
                                                    z3z_system):
    def worst_excess(system, table, sample):
        worst = 0.0
        for mult in (0.5, 0.8, 0.95):
            r = mult * system.R
            for y in sample:
                prod = system.product_green(IDENTITY, y, r)
                series, tail = direct_series_green(table, y, r)
                excess = max(0.0, abs(prod - series) - tail) / prod
                worst = max(worst, excess)
        return worst

    sample2 = ball(f2_spec, 4)
    w2 = worst_excess(f2_system, build_plain_table(f2_spec, 10, sample2),
                      sample2)
    # the rank-3 factor needs ~2 GB of table; built here so it frees on return
    sample3 = sorted(random.Random(7).sample(ball(z3z_spec, 4), 60))
    w3 = worst_excess(
        z3z_system,
        build_plain_table(z3z_spec, 9, sample3, index_radius=4),
        sample3,
    )
    ok = w2 <= 0.01 and w3 <= 0.01
    _verdict(capsys, 6, ok,
             f"worst series excess beyond tail: {w2:.2e} over {len(sample2)} "
             f"targets on Z*Z, {w3:.2e} over {len(sample3)} on Z^3 * Z")
    assert ok


def test_criterion_07_first_iterated_sum_identity(capsys, f2_system):
    r = 0.9 * f2_system.R
    ref = float(f2_system.F_k(1, IDENTITY, IDENTITY, [r])[0][0])
    discrepancies = []
    for radius in range(4, 9):
        val, _ = f2_system.iterated_sum(1, IDENTITY, IDENTITY, r,
                                        ball_radius=radius)
        discrepancies.append(abs(val - ref) / ref)
    decreasing = all(b < a for a, b in zip(discrepancies, discrepancies[1:]))
    ok = discrepancies[-1] <= 0.05 and decreasing
    _verdict(capsys, 7, ok,
             f"relative gap to G + rG' at radius 8: {discrepancies[-1]:.2e}, "
             f"radii 4..8 profile {['%.1e' % d for d in discrepancies]}")
    assert ok


def test_criterion_08_cocycle_identity(capsys, f2_spec, tab10):
    rng = random.Random(20260825)
    small, mid = ball(f2_spec, 2), ball(f2_spec, 3)

    def k_ratio(g, z, n):
        return tab10.transition(g, z, n) / tab10.transition(IDENTITY, z, n)

    worst = 0.0
    for _ in range(100):
        g, h = rng.choice(small), rng.choice(small)
        z = rng.choice(mid)
        n = rng.randrange(8, 21)
        lhs = k_ratio(multiply(g, h), z, n)
        rhs = k_ratio(g, z, n) * k_ratio(h, multiply(inverse(g), z), n)
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    ok = worst <= 1e-12
    _verdict(capsys, 8, ok,
             f"worst relative defect over 100 random (g,h,z,n): {worst:.2e}")
    assert ok


def test_criterion_09_route_consistency_and_harmonicity(capsys, f2_spec,
                                                        f2_system, f2_report,
                                                        tab10, tab14):
    r_grid = [m * f2_system.R for m in (0.90, 0.94, 0.97, 0.99)]
    worst_gap = 0.0
    for x_text, y_text in ROUTE_PAIRS:
        x, y = parse(f2_spec, x_text), parse(f2_spec, y_text)
        fin = h_finite_n(x, y, tab14, ACCURACY_N_LIST).extrapolated
        sums = h_via_sums(x, y, None, r_grid, f2_system,
                          report=f2_report).extrapolated
        worst_gap = max(worst_gap, abs(fin / sums - 1.0))

    def kernel_fn(n_list):
        memo = {}

        def u(g):
            if g not in memo:
                memo[g] = h_finite_n(g, IDENTITY, tab10, n_list).extrapolated
            return memo[g]

        return u

    # harmonicity of the radial kernel H(., e), probed on the unit ball
    # where the horizon-14 approximant has converged
    mu = AdaptedMeasure.simple(f2_spec).lazy(Fraction(1, 4))
    walk_r = lazy_spectral_radius(f2_system.R, 0.25)
    sites = ball(f2_spec, 1)
    res_short = [harmonicity_residual(kernel_fn([6, 8, 10]), x, mu, walk_r)
                 for x in sites]
    res_long = [harmonicity_residual(kernel_fn([10, 12, 14]), x, mu, walk_r)
                for x in sites]
    harmonic_ok = all(b < 1e-2 and b < a
                      for a, b in zip(res_short, res_long))
    ok = worst_gap <= 0.03 and harmonic_ok
    _verdict(capsys, 9, ok,
             f"worst route gap {worst_gap:.2%} over {len(ROUTE_PAIRS)} pairs; "
             f"residuals {['%.1e' % v for v in res_short]} -> "
             f"{['%.1e' % v for v in res_long]} as horizons 10 -> 14")
    assert ok


def test_criterion_10_ray_convergence(capsys, f2_spec, f2_system, f2_report,
                                      z5z_spec, z5z_system, z5z_report):
    def group_devs(spec, system, report, s, r_mults, radius):
        one = "(" + ",".join(["1"] + ["0"] * (spec.rank_of(1) - 1)) + ")"
        ray = RaySpec(IDENTITY, parse(spec, f"f1:{one}.f2:(1)"))
        xs = ball(spec, 2)
        grid = [m * system.R for m in r_mults]
        out = {}
        for reps in (2, 4):
            y = ray.depth(reps)
            assert relative_length(y) == 2 * reps
            profs = h_many_via_sums(xs, y, s, grid, system, report=report,
                                    ball_radius=radius)
            devs = []
            for x, prof in zip(xs, profs):
                k = system.martin_kernel(x, y, system.R)
                devs.append(abs(prof.extrapolated / k - 1.0))
            out[2 * reps] = devs
        return xs, out[4], out[8]

    xs2, dev4_2, dev8_2 = group_devs(f2_spec, f2_system, f2_report, None,
                                     (0.90, 0.94, 0.97, 0.99), 6)
    xs5, dev4_5, dev8_5 = group_devs(z5z_spec, z5z_system, z5z_report, 2,
                                     (0.90, 0.95, 0.99), 2)
    checks = []
    for xs, dev4, dev8 in ((xs2, dev4_2, dev8_2), (xs5, dev4_5, dev8_5)):
        checks.append(all(d8 < 0.05 and d8 < d4
                          for d4, d8 in zip(dev4, dev8)))
    ok = all(checks)
    _verdict(capsys, 10, ok,
             f"depth-8 kernel-ratio gap up to {max(dev8_2):.3f} on Z*Z and "
             f"{max(dev8_5):.3f} on Z^5 * Z (bound 0.05); cut-point "
             f"factorization pins the gap at a depth-set offset (the overlap "
             f"law j/(n+2) on Z*Z) instead of sending it to 0")
    assert ok


def test_criterion_11_llt_exponents(capsys, f2_system, tab14):
    lazy_r = lazy_spectral_radius(f2_system.R, 0.25)
    fit = llt_fit(tab14, IDENTITY, IDENTITY, range(8, 41), lazy_r)

    class BinomialTable:
        """P^n(0,0) of the simple walk on Z, exact via central binomials."""

        @staticmethod
        def transition(x, y, n):
            return math.comb(n, n // 2) / 2.0 ** n if n % 2 == 0 else 0.0

    base = llt_fit(BinomialTable(), IDENTITY, IDENTITY, range(8, 61), 1.0)
    ok = abs(fit.exponent - 1.5) <= 0.3 and abs(base.exponent - 0.5) <= 0.1
    _verdict(capsys, 11, ok,
             f"lazy free-group exponent {fit.exponent:.4f} (target 3/2), "
             f"Z baseline {base.exponent:.4f} (target 1/2)")
    assert ok


def test_criterion_12_multiplicativity_and_decay_fit(capsys, f2_spec,
                                                     f2_system):
    grid = [m * f2_system.R for m in (0.5, 0.8, 0.95, 1.0)]
    scan = weak_ancona_scan(f2_system, grid, prefix_triple_sampler(f2_spec),
                            count=100, seed=1)
    worst = 0.0
    for r, mx, mn in zip(scan.r_values, scan.max_ratios, scan.min_ratios):
        target = 1.0 / f2_system.green_ee(r)
        worst = max(worst, abs(mx - target), abs(mn - target))
    fit = strong_ancona_fit(f2_system, range(2, 9),
                            shared_prefix_pair_sampler(f2_spec),
                            count=40, r=f2_system.R, seed=2)
    decay_ok = 0.0 < fit.alpha < 1.0 and fit.r_squared > 0.9
    ok = worst <= 1e-10 and decay_ok
    _verdict(capsys, 12, ok,
             f"prefix-triple ratio defect {worst:.2e}; cross-ratio medians "
             f"{['%.1e' % d for d in fit.deviations]} at depths 2..8 leave "
             f"alpha = {fit.alpha}, R^2 = {fit.r_squared} ({fit.note})")
    assert ok


def test_criterion_13_radical_scan(capsys, tab10):
    scan = radical_scan(3, "finite_n", table=tab10,
                        n_list=list(ACCURACY_N_LIST), tol=1e-2)
    margin = min(d for g, d in zip(scan.elements, scan.deviations)
                 if g != IDENTITY)
    ok = set(scan.candidates) == {IDENTITY}
    _verdict(capsys, 13, ok,
             f"candidates {[format_element(g) for g in scan.candidates]}, "
             f"smallest non-identity deviation {margin:.3f} vs tol 1e-2")
    assert ok
