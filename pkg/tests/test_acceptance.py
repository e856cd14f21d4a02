"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated under "acceptance criteria" in the pytest summary.
"""

from pathlib import Path

import numpy as np
import pytest

from conftest import disc_points
from fracgreen import cli
from fracgreen import montecarlo as mc
from fracgreen.drift import DriftField, constant_field_modulus, is_kato, kato_modulus, probe_grid
from fracgreen.errors import ParameterError
from fracgreen.experiments import (
    gradient_bound_violations,
    gradient_fd_sweep,
    normalized_bump,
    poisson_mass,
    random_points,
    run_comparability_grid,
    run_mc_oracle,
)
from fracgreen.geometry import Ball
from fracgreen.kernels import riesz_constant, riesz_time_integral
from fracgreen.perturb import (
    SeriesConfig,
    _n_terms,
    contractive_ball,
    drifted_generator_residual,
    three_g_ratio,
    tilde_green_functional,
)
from fracgreen.quad import TestFunction, green_formula_residual, green_generator_residual

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# max of the 3G ratio over 2e5 uniform triples of the unit disc, seed 1 (recorded)
THREE_G_MAX = 3.491883074482319


def load(name, **overrides):
    cfg = cli.load_config(CONFIGS / name)
    cfg.update(overrides)
    return cfg


@pytest.fixture(scope="module")
def shrunk(params, ou):
    """The OU k=0.5 ball, halved from radius 1 until d * C1 <= 1/4."""
    ball, rep, history = contractive_ball(params, ou, (0.0, 0.0), 1.0, 0.25)
    return ball, rep, history


def test_c01_poisson_normalization(params, unit_ball, criterion):
    m = poisson_mass(params, unit_ball, np.array([0.3, 0.0]))
    assert criterion(1, "Poisson normalization", abs(m - 1) < 1e-4, f"|mass - 1| = {abs(m - 1):.3g}")


def test_c02_green_formula(params, unit_ball, criterion):
    rng = np.random.default_rng(2)
    res = []
    for _ in range(25):
        x, y = random_points(unit_ball, 2, rng, 0.9)
        res.append(abs(green_formula_residual(params, unit_ball, x, y)))
    worst = max(res)
    assert criterion(2, "Green formula residual", worst < 1e-3, f"max relative residual {worst:.3g} over 25 pairs")


def test_c03_riesz_identity(params, criterion):
    A = riesz_constant(params, params.alpha)
    errs = []
    for r in (0.5, 1.0, 2.0):
        v = riesz_time_integral(params, np.array([r, 0.0]))
        ref = A * r ** (params.alpha - params.d)
        errs.append(abs(v.value - ref) / ref)
    assert criterion(3, "Riesz identity", max(errs) < 1e-3, "relative errors " + ", ".join(f"{e:.2g}" for e in errs))


def test_c04_gradient_bound(params, unit_ball, criterion):
    bad, worst = gradient_bound_violations(params, unit_ball, 1000, np.random.default_rng(4))
    hs, errs = gradient_fd_sweep(params, unit_ball, (0.2, 0.0), (-0.3, 0.1))
    slope = float(np.polyfit(np.log(hs[:6]), np.log(errs[:6]), 1)[0])
    ok = bad == 0 and abs(slope - 2) < 0.2
    assert criterion(4, "gradient bound", ok, f"{bad} violations in 1000 pairs (worst ratio {worst:.3f}), FD order {slope:.3f}")


@pytest.fixture(scope="module")
def grid_outcome():
    return run_comparability_grid(load("comparability_grid.cfg"))


def test_c05_small_ball_comparability(grid_outcome, criterion):
    crit = {c["name"]: c for c in grid_outcome.criteria}
    ratios = [r["ratio"] for r in grid_outcome.rows]
    quad = max(r["quad_error"] / r["G"] for r in grid_outcome.rows)
    ok = crit["ratio band"]["passed"] and crit["quadrature error"]["passed"] and len(ratios) == 400
    detail = f"G~/G in [{min(ratios):.4f}, {max(ratios):.4f}] on 400 pairs, worst quadrature error {quad:.2g}; {crit['ratio band']['detail']}"
    assert criterion(5, "small-ball comparability", ok, detail)


def test_c06_series_majorant(grid_outcome, criterion):
    bad = 0
    for r in grid_outcome.rows:
        bad += sum(abs(r[f"g{n}"]) > r[f"bound{n}"] * (1 + 1e-12) + r["quad_error"] for n in (1, 2, 3))
    ok = bad == 0 and grid_outcome.criteria[1]["passed"]
    assert criterion(6, "series majorant", ok, f"{bad} violations for n = 1, 2, 3 on 400 pairs")


C7_CASES = [
    ((0.0, 0.0), (0.4, 0.2)),
    ((0.3, -0.2), (-0.3, 0.3)),
    ((-0.5, 0.0), (0.2, -0.4)),
    ((0.1, 0.5), (0.1, -0.3)),
    ((0.0, -0.4), (0.5, 0.3)),
]


@pytest.mark.slow
def test_c07_series_vs_euler(params, ou, shrunk, criterion):
    ball, rep, _ = shrunk
    cf = rep.contraction_factor
    n = _n_terms(cf, SeriesConfig())
    h = 4e-3 * ball.radius**params.alpha
    stream = mc.RandomStream(7)
    lines, ok = [], True
    for i, (xr, yr) in enumerate(C7_CASES):
        x = ball.c + ball.radius * np.array(xr)
        y = ball.c + ball.radius * np.array(yr)
        f = normalized_bump(y, 0.3 * ball.radius)
        ref = tilde_green_functional(params, ball, ou, x, f, majorant=rep)
        g0 = tilde_green_functional(params, ball, DriftField.zero(2), x, f)
        pair = mc.euler_richardson(params, ball, ou, x, f, mc.EulerConfig(h), 10**6, stream.child(i))
        remainder = cf ** (n + 1) / (1 - cf) * g0
        budget = 3 * pair.fine.stderr + pair.bias_estimate + remainder
        diff = abs(pair.fine.mean - ref)
        ok &= diff <= budget
        lines.append(
            f"case {i}: series {ref:.5f}, Euler h {pair.coarse.mean:.5f} / h/2 {pair.fine.mean:.5f}, "
            f"|diff| {diff:.2g} <= {budget:.2g}"
        )
    for t in lines:
        print(t)
    assert criterion(7, "series vs Euler", ok, f"5 configurations at 1e6 paths, h = {h:.3g}; " + "; ".join(lines))


@pytest.mark.slow
def test_c08_generator_identities(params, unit_ball, ou, shrunk, criterion):
    rng = np.random.default_rng(8)
    phi = TestFunction((0.1, -0.1), 0.4)
    free = max(abs(green_generator_residual(params, unit_ball, phi, x)) for x in disc_points(10, rng)) / phi.sup
    ball, rep, _ = shrunk
    psi = TestFunction(tuple(ball.c), 0.3 * ball.radius)
    drifted = max(
        abs(drifted_generator_residual(params, ball, ou, psi, x, majorant=rep)) for x in random_points(ball, 10, rng)
    ) / psi.sup
    ok = free < 1e-3 and drifted < 1e-2
    assert criterion(8, "generator identities", ok, f"driftless {free:.2g} < 1e-3, drifted {drifted:.2g} < 1e-2")


def test_c09_stable_sampler(criterion):
    out = run_mc_oracle(load("mc_stable_cf.cfg"))
    worst = max(abs(r["mean"] - r["reference"]) / r["stderr"] for r in out.rows)
    ok = out.passed and len(out.rows) == 20 and out.rows[0]["n_samples"] == 10**6
    assert criterion(9, "stable sampler", ok, f"20 frequencies at 1e6 draws, worst deviation {worst:.2f} se")


@pytest.mark.slow
def test_c10_exit_law_comparability(criterion):
    out = run_mc_oracle(load("mc_exit_law.cfg"))
    crit = {c["name"]: c for c in out.criteria}
    ok = out.passed and len([r for r in out.rows if r["estimator"] == "exact_driftless"]) == 10
    assert criterion(10, "exit-law comparability", ok, crit["comparability band"]["detail"])


def test_c11_kato_closed_form(params, criterion):
    probes = probe_grid(Ball((0.0, 0.0), 1.0), per_axis=6)
    b = DriftField.constant((0.6, 0.8))
    radii = [1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3]
    worst = max(abs(kato_modulus(params, b, r, probes) / constant_field_modulus(params, 1.0, r) - 1) for r in radii)
    try:
        DriftField.singular_power(-0.1, 1.5, 2)
        rejected = False
    except ParameterError:
        rejected = True
    loose = is_kato(params, DriftField.singular_power(-0.1, 1.5, 2, strict=False), Ball((0.0, 0.0), 1.0), radii=radii, per_axis=6)
    ok = worst < 1e-6 and rejected and loose.decision == "not in class"
    assert criterion(11, "Kato closed form", ok, f"worst relative error {worst:.2g}; eps < 0 rejected: {rejected}, {loose.decision}")


def test_c12_three_g_stability(params, unit_ball, criterion):
    rng = np.random.default_rng(1)
    x, y, z = (disc_points(200_000, rng, fill=1.0) for _ in range(3))
    r = three_g_ratio(params, unit_ball, x, y, z)
    half, full = float(r[:100_000].max()), float(r.max())
    change = full / half - 1
    ok = change < 0.05 and full == pytest.approx(THREE_G_MAX, rel=1e-9)
    assert criterion(12, "3G stability", ok, f"max {half:.4f} at 1e5 triples, {full:.4f} at 2e5 ({100 * change:.2f}% change)")


def test_c13_determinism(tmp_path, capsys, criterion):
    outs = []
    for tag in ("first", "second"):
        assert cli.main(["run", str(CONFIGS / "mc_wos.cfg"), "--out", str(tmp_path / tag)]) == 0
        outs.append([(tmp_path / tag / f"mc_wos.{ext}").read_bytes() for ext in ("csv", "json")])
    capsys.readouterr()
    assert criterion(13, "determinism", outs[0] == outs[1], "mc_wos.cfg run twice: CSV and JSON byte-identical")
