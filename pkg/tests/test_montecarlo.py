import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import betainc

from fracgreen import montecarlo as mc
from fracgreen.drift import DriftField
from fracgreen.errors import DomainError, ParameterError
from fracgreen.experiments import exit_sets
from fracgreen.geometry import Annulus, Ball
from fracgreen.kernels import StableParams, expected_exit_time, poisson_ball_values
from fracgreen.quad import TestFunction

ONE = lambda z: np.ones(len(z))  # noqa: E731


def cf_check(X, xi, ref, k=3.5):
    for q, r in zip(xi, ref):
        c = np.cos(X @ q)
        assert abs(c.mean() - r) <= k * c.std(ddof=1) / np.sqrt(c.size)


FREQS = np.array([[0.3, 0.0], [0.0, 0.8], [0.7, 0.7], [-1.2, 0.4], [1.5, -1.0], [0.1, 2.0]])


# --- stable sampling


def test_characteristic_function(params):
    X = mc.sample_isotropic_stable(params, 0.7, mc.RandomStream(3), size=200_000)
    cf_check(X, FREQS, np.exp(-0.7 * np.linalg.norm(FREQS, axis=1) ** 1.5))


def test_gaussian_limit():
    p = StableParams.relaxed(2, 2.0)
    X = mc.sample_isotropic_stable(p, 0.5, mc.RandomStream(4), size=200_000)
    cf_check(X, FREQS, np.exp(-0.5 * np.linalg.norm(FREQS, axis=1) ** 2))
    assert np.var(X[:, 0]) == pytest.approx(1.0, rel=0.02)


def test_time_scaling_is_exact(params):
    a = mc.sample_isotropic_stable(params, 1.0, mc.RandomStream(5), size=1000)
    b = mc.sample_isotropic_stable(params, 3.0, mc.RandomStream(5), size=1000)
    assert np.allclose(b, 3.0 ** (1 / 1.5) * a, rtol=1e-13, atol=0)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_positive_stable_laplace_transform(lam):
    s = mc.positive_stable(0.75, np.random.default_rng(6), 200_000)
    v = np.exp(-lam * s)
    assert abs(v.mean() - np.exp(-(lam**0.75))) <= 3.5 * v.std(ddof=1) / np.sqrt(v.size)


def test_stable_time_must_be_positive(params):
    with pytest.raises(ParameterError):
        mc.sample_isotropic_stable(params, 0.0, mc.RandomStream(1))


# --- exact ball exits


def test_exit_direction_uniform_from_center(params, unit_ball):
    y = mc.sample_ball_exit(params, unit_ball, np.zeros(2), mc.RandomStream(7), size=200_000)
    counts, _ = np.histogram(np.arctan2(y[:, 1], y[:, 0]), bins=32, range=(-np.pi, np.pi))
    assert stats.chisquare(counts).pvalue > 1e-3


def test_exit_sector_probabilities(params, unit_ball):
    x = np.array([0.3, 0.2])
    sets = exit_sets(unit_ball)
    est = mc.exact_exit_law_estimate(params, unit_ball, x, sets, 200_000, mc.RandomStream(8))
    for A, e in zip(sets, est):
        ref = A.integrate(lambda y: poisson_ball_values(params, unit_ball, x, y))
        assert abs(e.mean - ref) <= 3.5 * e.stderr


def test_exit_points_never_on_the_sphere(params, unit_ball):
    # the gap near the sphere has density ~ gap^{-alpha/2}, so tiny gaps do occur;
    # they must be strictly positive and as frequent as the exit-radius law says
    n, eps = 200_000, 1e-12
    y, gap = mc.sample_ball_exit(params, unit_ball, np.zeros(2), mc.RandomStream(9), size=n, return_gap=True)
    assert np.all(gap > 0)
    # the stored point can round a few ulps inside; the gap carries the exact exteriority
    assert np.all(np.linalg.norm(y, axis=1) >= 1.0 - 4 * np.finfo(float).eps)
    w = 1 - 1 / (1 + eps) ** 2
    p = betainc(0.25, 0.75, w)
    k = int(np.sum(gap < eps))
    assert abs(k - n * p) <= 4 * np.sqrt(n * p)


def test_exit_start_must_be_interior(params, unit_ball):
    with pytest.raises(DomainError):
        mc.sample_ball_exit(params, unit_ball, np.array([1.0, 0.0]), mc.RandomStream(1))


def test_occupation_sampler_mean_radius(params):
    # E|Y|^2 under G(0, y) dy / E tau, computed from the radial profile
    from scipy import integrate

    ball = Ball((0.0, 0.0), 1.0)
    Y = mc.sample_occupation(params, ball, mc.RandomStream(10), 200_000)
    dens = lambda s: s * betainc(0.75, 0.25, 1 - s * s) * s ** (1.5 - 2)
    z = integrate.quad(dens, 0, 1)[0]
    m2 = integrate.quad(lambda s: s * s * dens(s), 0, 1)[0] / z
    r2 = np.sum(Y**2, axis=1)
    assert abs(r2.mean() - m2) <= 3.5 * r2.std(ddof=1) / np.sqrt(r2.size)


# --- walk on spheres


@pytest.mark.parametrize("x", [(0.0, 0.0), (0.5, -0.3)])
def test_wos_exit_time(params, unit_ball, x):
    res = mc.wos_green_functional(params, unit_ball, np.array(x), ONE, 100_000, mc.RandomStream(11))
    assert abs(res.mean - expected_exit_time(params, unit_ball, np.array(x))) <= 3 * res.stderr
    assert res.discard_fraction < 1e-4


def test_wos_zero_functional(params, unit_ball):
    res = mc.wos_green_functional(params, unit_ball, np.zeros(2), lambda z: np.zeros(len(z)), 1000, mc.RandomStream(12))
    assert res.mean == 0.0 and res.stderr == 0.0


def test_wos_annulus_fraction_stable(params):
    ann = Annulus((0.0, 0.0), 0.3, 1.0)
    phi = TestFunction((0.6, 0.0), 0.2)
    x = np.array([-0.5, 0.3])
    a = mc.wos_green_functional(params, ann, x, phi, 100_000, mc.RandomStream(13), fraction=0.99)
    b = mc.wos_green_functional(params, ann, x, phi, 100_000, mc.RandomStream(14), fraction=0.9)
    assert a.overlaps(b)
    assert b.mean_steps > a.mean_steps > 1


def test_wos_rejects_outside_start(params, unit_ball):
    with pytest.raises(DomainError):
        mc.wos_green_functional(params, unit_ball, np.array([2.0, 0.0]), ONE, 10, mc.RandomStream(1))


# --- Euler scheme


def test_euler_without_drift_matches_wos(params, unit_ball):
    x = np.array([0.2, 0.1])
    pair = mc.euler_richardson(params, unit_ball, DriftField.zero(2), x, ONE, mc.EulerConfig(4e-3), 400_000, mc.RandomStream(15))
    ref = mc.wos_green_functional(params, unit_ball, x, ONE, 100_000, mc.RandomStream(16))
    assert abs(pair.fine.mean - ref.mean) <= 3 * np.hypot(pair.fine.stderr, ref.stderr) + pair.bias_estimate


def test_outward_ou_shortens_exit_time(params, unit_ball):
    cfg = mc.EulerConfig(4e-3)
    free = mc.euler_green_functional(params, unit_ball, DriftField.zero(2), np.zeros(2), ONE, cfg, 20_000, mc.RandomStream(17))
    ou = mc.euler_green_functional(params, unit_ball, DriftField.ornstein_uhlenbeck(1.0, 2), np.zeros(2), ONE, cfg, 20_000, mc.RandomStream(18))
    assert free.mean - ou.mean > 3 * np.hypot(free.stderr, ou.stderr)


def test_richardson_consistency(params, unit_ball):
    # successive step differences shrink: |E_h - E_{h/2}| < 4 |E_{h/2} - E_{h/4}| up to noise
    s = mc.RandomStream(19)
    est = [
        mc.euler_green_functional(params, unit_ball, DriftField.zero(2), np.zeros(2), ONE, mc.EulerConfig(h), 40_000, s.child(i))
        for i, h in enumerate([8e-3, 4e-3, 2e-3])
    ]
    d1 = abs(est[0].mean - est[1].mean)
    d2 = abs(est[1].mean - est[2].mean)
    noise = 3 * (np.hypot(est[0].stderr, est[1].stderr) + 4 * np.hypot(est[1].stderr, est[2].stderr))
    assert d1 < 4 * d2 + noise
    # the estimates approach the exact value from above
    exact = expected_exit_time(params, unit_ball, np.zeros(2))
    assert est[0].mean > est[1].mean > est[2].mean > exact - 3 * est[2].stderr


def test_singular_drift_excluded(params, unit_ball):
    b = DriftField.singular_power(0.25, 1.5, 2)
    with pytest.raises(ParameterError):
        mc.euler_green_functional(params, unit_ball, b, np.array([0.2, 0.0]), ONE, mc.EulerConfig(1e-3), 10, mc.RandomStream(1))


def test_euler_config():
    with pytest.raises(ParameterError):
        mc.EulerConfig(0.0)
    with pytest.raises(ParameterError):
        mc.EulerConfig(1e-3, boundary_rule="reflect")
    c = mc.EulerConfig(1e-3, 100).halved()
    assert c.h == 5e-4 and c.max_steps == 200


def test_discarded_paths_counted(params, unit_ball):
    res = mc.euler_green_functional(params, unit_ball, DriftField.zero(2), np.zeros(2), ONE, mc.EulerConfig(1e-3, max_steps=50), 2000, mc.RandomStream(20))
    assert res.n_discarded > 0 and res.n_samples + res.n_discarded == 2000


# --- survival


@pytest.mark.parametrize("b", [DriftField.zero(2), DriftField.ornstein_uhlenbeck(0.5, 2)], ids=["free", "ou"])
def test_survival_decays(params, unit_ball, b):
    t = np.linspace(0, 2.0, 9)
    surv = mc.survival_tail(params, unit_ball, b, np.zeros(2), t, mc.EulerConfig(4e-3), 20_000, mc.RandomStream(21))
    assert surv[0].mean == 1.0
    p = [s.mean for s in surv]
    assert all(b <= a for a, b in zip(p, p[1:]))
    assert mc.fit_decay_rate(t, surv).decays


def test_fit_decay_rate_synthetic():
    t = np.linspace(0, 3, 7)
    surv = [mc.EstimatorResult(float(np.exp(-1.3 * s)), 0.0, 10**6) for s in t]
    fit = mc.fit_decay_rate(t, surv)
    assert fit.slope == pytest.approx(-1.3, rel=1e-10)
    with pytest.raises(ParameterError):
        mc.fit_decay_rate(t[:1], surv[:1])


# --- bookkeeping


def test_reproducible_and_thread_independent(params, unit_ball):
    phi = TestFunction((0.2, 0.0), 0.3)
    run = lambda threads: mc.wos_green_functional(params, unit_ball, np.zeros(2), phi, 150_000, mc.RandomStream(22, 3), n_threads=threads)
    a, b, c = run(1), run(1), run(3)
    assert a.mean == b.mean == c.mean and a.stderr == b.stderr == c.stderr


def test_streams_differ():
    s = mc.RandomStream(1)
    draws = [g.random(4).tolist() for g in (s.generator(0), s.generator(1), s.child(0).generator(0), mc.RandomStream(2).generator(0))]
    assert len({tuple(d) for d in draws}) == 4
    assert s.generator(0).random(4).tolist() == draws[0]


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200), st.integers(1, 7))
@settings(max_examples=100, deadline=None)
def test_blockwise_moments(values, n_blocks):
    v = np.array(values)
    parts = [mc._Moments.of(c) for c in np.array_split(v, n_blocks)]
    res = mc._reduce(parts).result(None)
    assert res.n_samples == v.size
    assert res.mean == pytest.approx(v.mean(), abs=1e-9 * (1 + np.abs(v).max()))
    assert res.stderr == pytest.approx(v.std(ddof=1) / np.sqrt(v.size), rel=1e-7, abs=1e-9)


def test_estimate_needs_two_samples():
    with pytest.raises(ParameterError):
        mc._Moments.of([1.0]).result(None)


def test_comparability_band_min_count():
    mk = lambda p: mc.EstimatorResult(p, 0.0, 10_000)
    band = mc.comparability_band([mk(0.2), mk(0.001), mk(0.1)], [mk(0.25), mk(0.002), mk(0.08)], min_count=100)
    assert band.used == [0, 2]
    assert np.isnan(band.ratios[1])
    assert (band.lower, band.upper) == (0.8, 1.25)
    assert band.contains((0.5, 2.0)) and not band.contains((0.9, 2.0))


@given(st.integers(2, 30), st.floats(0.01, 0.5), st.integers(0, 5), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_harnack_envelope_monotone(n, s, k_max, seed):
    rng = np.random.default_rng(seed)
    env = mc.harnack_envelope(rng.uniform(-1, 1, (n, 2)), rng.uniform(0.1, 2, n), s, k_max)
    assert len(env) == k_max + 1
    assert all(b >= a for a, b in zip(env, env[1:]))
    assert all(e >= 1 or e == 1.0 for e in env)
