"""Green function of the drifted operator on small balls by the perturbation series.

For a fixed pole ``x`` the terms ``G_n(x, .)`` are tabulated on a polar grid
around ``x`` as ratios ``R_n = G_n(x, .) / G(x, .)``, which stay bounded up
to the boundary. Each level is one batched singular quadrature per grid node
using the closed-form ball Green function and its gradient; the final values
at requested targets are computed directly with the same rules.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import NonContractiveError, ParameterError, SingularityError
from .kernels import green_ball_gradient_values, green_ball_values, levy_density
from .quad import RuleSize, SingularIntegrand, ball_patch_rule, integrate_singular, _gauss01


@dataclass(frozen=True)
class SeriesConfig:
    n_max: int = 4
    quad_rel_error: float = 2e-2
    remainder_target: float = 1e-2
    contraction_threshold: float = 0.25
    grid_radial: int = 20
    grid_angular: int = 40
    rule_level: int = 1

    def __post_init__(self):
        if self.n_max < 1:
            raise ParameterError("n_max must be at least 1")
        if not 0 < self.contraction_threshold < 1:
            raise ParameterError("contraction_threshold must lie in (0, 1)")
        if not self.quad_rel_error > 0 or not self.remainder_target > 0:
            raise ParameterError("tolerances must be positive")


@dataclass
class SeriesResult:
    partial_sums: list
    remainder_bound: float
    ratio_to_G: float
    converged: bool
    green: float = 0.0
    terms: list = field(default_factory=list)
    quad_errors: list = field(default_factory=list)

    @property
    def value(self):
        return self.partial_sums[-1]

    @property
    def quad_error(self):
        return float(np.sum(self.quad_errors))


@dataclass(frozen=True)
class MajorantReport:
    kappa: float
    kappa_hat: float
    C1_estimate: float
    contraction_factor: float
    boundary_sensitivity: float = 0.0
    n_pairs: int = 0


def _require_2d(params):
    if params.d != 2:
        raise ParameterError("the series workspace is implemented for d = 2")


def _drift_points(b, ball):
    """Field centers that make the integrand singular, when inside the ball."""
    if b.kind == "singular" and ball.contains(b.c):
        return b.c[None, :], -b.power
    return None, None


# ---------------------------------------------------------------------------
# kappa, kappa_hat and the 3G ratio


def _kappa_integrand(params, ball, b, x, y, hat):
    gxy = float(green_ball_values(params, ball, x, y))
    dx = float(ball.delta(x))
    dxy = float(np.linalg.norm(x - y))

    def fn(z):
        num = b.magnitude(z) * green_ball_values(params, ball, x, z) * green_ball_values(params, ball, z, y)
        den = gxy * np.minimum(ball.delta(z), np.linalg.norm(z - y, axis=-1))
        val = num / den
        if hat:
            val = val * min(dx, dxy) / np.minimum(dx, np.linalg.norm(z - x, axis=-1))
        return np.where(ball.contains(z), val, 0.0)

    s = params.d - params.alpha
    pts = [x, y]
    expo = [s + (1 if hat else 0), s + 1]
    extra, e = _drift_points(b, ball)
    if extra is not None and not np.any(np.all(extra[0] == np.stack(pts), axis=1)):
        pts.append(extra[0])
        expo.append(e)
    return SingularIntegrand(fn, np.stack(pts), expo, params.alpha - 1)


def _check_pair(ball, x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.all(x == y):
        raise SingularityError("x and y must differ")
    if not (ball.contains(x) and ball.contains(y)):
        raise ParameterError("x and y must lie inside the ball")
    return x, y


def kappa(params, ball, b, x, y, rel_error=1e-3):
    """``int |b| G(x,z) G(z,y) / (G(x,y) (delta(z) ^ |y-z|)) dz``."""
    x, y = _check_pair(ball, x, y)
    if b.is_zero:
        return 0.0
    return integrate_singular(_kappa_integrand(params, ball, b, x, y, False), ball, rel_error).value


def kappa_hat(params, ball, b, x, y, rel_error=1e-3):
    """``kappa`` with the extra weight ``(delta(x) ^ |x-y|) / (delta(x) ^ |x-z|)``."""
    x, y = _check_pair(ball, x, y)
    if b.is_zero:
        return 0.0
    return integrate_singular(_kappa_integrand(params, ball, b, x, y, True), ball, rel_error).value


def three_g_ratio(params, ball, x, y, z):
    """``min(GG(x,z), GG(z,y)) / GG(x,y)`` with ``GG = G / (delta^{a/2} delta^{a/2})``; vectorised."""
    x, y, z = (np.asarray(v, float) for v in (x, y, z))
    if np.any(np.all(x == y, -1) | np.all(x == z, -1) | np.all(y == z, -1)):
        raise SingularityError("3G ratio needs pairwise distinct points")
    h = params.alpha / 2
    gx, gy, gz = (ball.delta(v) ** h for v in (x, y, z))
    gxz = green_ball_values(params, ball, x, z) / (gx * gz)
    gzy = green_ball_values(params, ball, z, y) / (gz * gy)
    gxy = green_ball_values(params, ball, x, y) / (gx * gy)
    return np.minimum(gxz, gzy) / gxy


def probe_points(ball, fractions=(0.0, 0.35, 0.65, 0.85, 0.95), n_angle=8):
    """Rings of points at the given fractions of the radius."""
    pts = []
    for i, f in enumerate(fractions):
        if f == 0:
            pts.append(ball.c)
            continue
        th = 2 * np.pi * (np.arange(n_angle) + 0.5 * (i % 2)) / n_angle
        pts.extend(ball.c + f * ball.radius * np.stack([np.cos(th), np.sin(th)], -1))
    return np.asarray(pts)


def _kappa_pairs(params, ball, b, X, Y, hat, level):
    """Batched kappa at a fixed rule level."""
    s = params.d - params.alpha
    pts = np.stack([X, Y], axis=1)
    z, w = ball_patch_rule(ball.c, ball.radius, pts, [s + (1 if hat else 0), s + 1], params.alpha - 1, RuleSize.level(level))
    xb, yb = X[:, None, :], Y[:, None, :]
    gxy = green_ball_values(params, ball, X, Y)[:, None]
    num = b.magnitude(z) * green_ball_values(params, ball, xb, z) * green_ball_values(params, ball, z, yb)
    val = num / (gxy * np.minimum(ball.delta(z), np.linalg.norm(z - yb, axis=-1)))
    if hat:
        dx = np.minimum(ball.delta(X), np.linalg.norm(X - Y, axis=-1))[:, None]
        val = val * dx / np.minimum(ball.delta(X)[:, None], np.linalg.norm(z - xb, axis=-1))
    return np.sum(w * val, axis=1)


def majorant_report(params, ball, b, probes=None, level=2):
    """Operational ``C_1``: the largest ``kappa`` over all ordered probe pairs."""
    _require_2d(params)
    if b.is_zero:
        return MajorantReport(0.0, 0.0, 0.0, 0.0)
    if b.kind == "singular":
        raise ParameterError("batched majorants need a locally bounded drift; use kappa() pointwise")
    P = probe_points(ball) if probes is None else np.asarray(probes, float)
    i, j = np.meshgrid(np.arange(len(P)), np.arange(len(P)), indexing="ij")
    keep = i != j
    X, Y = P[i[keep]], P[j[keep]]
    k = np.concatenate([_kappa_pairs(params, ball, b, X[s : s + 32], Y[s : s + 32], False, level) for s in range(0, len(X), 32)])
    kh = np.concatenate([_kappa_pairs(params, ball, b, X[s : s + 32], Y[s : s + 32], True, level) for s in range(0, len(X), 32)])
    c1 = float(np.max(k))
    # how much the outermost ring contributes to the supremum
    outer = np.linalg.norm(P - ball.c, axis=-1) >= 0.9 * ball.radius
    inner_pairs = ~(outer[i[keep]] | outer[j[keep]])
    c1_inner = float(np.max(k[inner_pairs])) if inner_pairs.any() else c1
    return MajorantReport(
        kappa=c1,
        kappa_hat=float(np.max(kh)),
        C1_estimate=c1,
        contraction_factor=params.d * c1,
        boundary_sensitivity=(c1 - c1_inner) / c1 if c1 > 0 else 0.0,
        n_pairs=int(len(X)),
    )


def contractive_ball(params, b, center, radius, threshold=0.25, shrink=0.5, max_steps=12):
    """Shrink ``B(center, radius)`` until ``d * C1_estimate <= threshold``.

    Returns ``(ball, report, history)``; ``history`` lists ``(radius, contraction_factor)``.
    """
    from .geometry import Ball

    history = []
    r = float(radius)
    for _ in range(max_steps):
        ball = Ball(center, r)
        rep = majorant_report(params, ball, b)
        history.append((r, rep.contraction_factor))
        if rep.contraction_factor <= threshold:
            return ball, rep, history
        r *= shrink
    raise NonContractiveError(f"no contractive radius found after {max_steps} reductions: {history}")


# ---------------------------------------------------------------------------
# Series workspace around a fixed pole


class SeriesWorkspace:
    """Tabulated ratios ``R_n = G_n(x, .) / G(x, .)`` on a polar grid around ``x``."""

    P_EXP = None  # radial exponent, set from alpha
    Q_EXP = 2.0

    def __init__(self, params, ball, b, x, config=SeriesConfig(), n_levels=None):
        _require_2d(params)
        if b.kind == "singular":
            raise ParameterError("the series workspace needs a locally bounded drift")
        self.params, self.ball, self.b, self.config = params, ball, b, config
        self.x = np.asarray(x, float)
        if not ball.contains(self.x):
            raise ParameterError("the pole must lie inside the ball")
        self.p = 1.0 / (params.alpha - 1)
        u, _ = _gauss01(config.grid_radial)
        self.u = u
        nt = config.grid_angular
        self.theta = 2 * np.pi * np.arange(nt) / nt
        self.nodes = self._grid_points(u, self.theta)  # (nu, nt, 2)
        self.g0_nodes = green_ball_values(params, ball, self.x, self.nodes)
        self.splines = []  # per level: (cubic, linear)
        self.grid_errors = []
        n_levels = config.n_max - 1 if n_levels is None else n_levels
        for _ in range(max(0, n_levels)):
            self._add_level()

    # geometry of the polar grid ------------------------------------------

    def _ray_length(self, theta):
        om = np.stack([np.cos(theta), np.sin(theta)], -1)
        pc = self.x - self.ball.c
        proj = om @ pc
        rem = self.ball.radius**2 - pc @ pc
        root = np.sqrt(proj**2 + rem)
        return np.where(proj < 0, root - proj, rem / (root + proj))

    def _psi(self, u):
        return 1 - (1 - u**self.p) ** self.Q_EXP

    def _grid_points(self, u, theta):
        T = self._ray_length(theta)
        t = T[None, :] * self._psi(u)[:, None]
        om = np.stack([np.cos(theta), np.sin(theta)], -1)
        return self.x + t[..., None] * om[None, :, :]

    def _coords(self, z):
        v = np.asarray(z, float) - self.x
        t = np.sqrt(np.einsum("...i,...i->...", v, v))
        th = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * np.pi)
        s = np.clip(t / self._ray_length(th), 0.0, 1.0)
        u = (-np.expm1(np.log1p(-np.minimum(s, 1 - 1e-16)) / self.Q_EXP)) ** (1 / self.p)
        return u, th

    # levels ----------------------------------------------------------------

    @property
    def n_levels(self):
        return len(self.splines)

    def ratio(self, n, z, linear=False):
        """``R_n(z)`` for ``n >= 1`` by spline interpolation (0 for ``n = 0`` is not used)."""
        u, th = self._coords(z)
        spl = self.splines[n - 1][1 if linear else 0]
        return spl.ev(u, th)

    def term_at(self, n, z, linear=False):
        """``G_n(x, z)`` from the table (``n = 0`` is exact)."""
        g = green_ball_values(self.params, self.ball, self.x, z)
        if n == 0:
            return g
        return g * self.ratio(n, z, linear)

    def tilde_at(self, z):
        """Interpolated partial sum ``sum_{n <= levels} G_n(x, z)``."""
        g = green_ball_values(self.params, self.ball, self.x, z)
        r = sum(self.ratio(n, z) for n in range(1, self.n_levels + 1))
        return g * (1 + r)

    def _fit(self, values):
        nt = len(self.theta)
        pad = 4
        th = np.concatenate([self.theta[-pad:] - 2 * np.pi, self.theta, self.theta[:pad] + 2 * np.pi])
        vals = np.concatenate([values[:, -pad:], values, values[:, :pad]], axis=1)
        assert vals.shape[1] == nt + 2 * pad
        cubic = RectBivariateSpline(self.u, th, vals, kx=3, ky=3)
        linear = RectBivariateSpline(self.u, th, vals, kx=1, ky=1)
        return cubic, linear

    def _next_values(self, targets, level_rule, linear=False):
        """``G_n(x, w)`` for the next level ``n = n_levels + 1`` at each target ``w``."""
        n = self.n_levels + 1
        d, a = self.params.d, self.params.alpha
        out = np.empty(len(targets))
        expo = [d - a, d - a + 1]
        size = RuleSize.level(level_rule)
        for s in range(0, len(targets), 32):
            w = targets[s : s + 32]
            pts = np.stack([np.broadcast_to(self.x, w.shape), w], axis=1)
            z, wt = ball_patch_rule(self.ball.c, self.ball.radius, pts, expo, a - 1, size)
            prev = self.term_at(n - 1, z, linear) if n > 1 else green_ball_values(self.params, self.ball, self.x, z)
            grad = green_ball_gradient_values(self.params, self.ball, z, w[:, None, :])
            flow = np.einsum("...i,...i->...", self.b(z), grad)
            out[s : s + 32] = np.sum(wt * prev * flow, axis=1)
        return out

    def _add_level(self):
        targets = self.nodes.reshape(-1, 2)
        vals = self._next_values(targets, self.config.rule_level).reshape(self.nodes.shape[:2])
        self.splines.append(self._fit(vals / self.g0_nodes))

    def terms(self, y, n_terms):
        """``G_n(x, y)`` for ``n = 0..n_terms`` with per-term error estimates.

        The error of a term combines the change between two rule sizes and
        the change between cubic and linear interpolation of the previous
        level; both are conservative.
        """
        y = np.atleast_2d(np.asarray(y, float))
        while self.n_levels < n_terms - 1:
            self._add_level()
        g0 = green_ball_values(self.params, self.ball, self.x, y)
        vals, errs = [g0], [np.zeros(len(y))]
        saved = self.splines
        for n in range(1, n_terms + 1):
            self.splines = saved[: n - 1]
            lvl = self.config.rule_level
            v = self._next_values(y, lvl + 1)
            e_rule = np.abs(v - self._next_values(y, lvl))
            e_int = np.abs(v - self._next_values(y, lvl + 1, linear=True)) if n > 1 else 0.0
            vals.append(v)
            errs.append(e_rule + e_int)
        self.splines = saved
        return np.asarray(vals), np.asarray(errs)


# ---------------------------------------------------------------------------
# public series operations


def _zero_result(g):
    return SeriesResult([float(g)], 0.0, 1.0, True, float(g), [float(g)], [0.0])


def g_n(params, ball, b, n, x, y, config=SeriesConfig()):
    """``G_n(x, y)`` by the recursion ``G_n = int G_{n-1}(x, z) b(z) . grad_z G(z, y) dz``."""
    x, y = _check_pair(ball, x, y)
    if n < 1:
        raise ParameterError("n must be at least 1")
    if b.is_zero:
        return 0.0
    ws = SeriesWorkspace(params, ball, b, x, config, n_levels=n - 1)
    vals, _ = ws.terms(y[None, :], n)
    return float(vals[n, 0])


def _series_from_terms(vals, errs, cf, config):
    g0 = float(vals[0])
    partial = list(np.cumsum(vals))
    if cf < 1:
        tail = cf ** len(vals) / (1 - cf) * g0
    else:
        tail = np.inf
    converged = tail <= config.remainder_target * g0
    budget_ok = all(e <= config.quad_rel_error / 2**n * g0 for n, e in enumerate(errs))
    return SeriesResult(
        partial_sums=[float(p) for p in partial],
        remainder_bound=float(tail),
        ratio_to_G=float(partial[-1] / g0),
        converged=bool(converged and budget_ok),
        green=g0,
        terms=[float(v) for v in vals],
        quad_errors=[float(e) for e in errs],
    )


def _n_terms(cf, config):
    """Smallest ``n`` whose geometric tail is below the target, capped at ``n_max``."""
    if cf <= 0:
        return 1
    for n in range(1, config.n_max + 1):
        if cf ** (n + 1) / (1 - cf) < config.remainder_target:
            return n
    return config.n_max


def _check_majorant(params, ball, b, config, majorant):
    if majorant is None:
        majorant = majorant_report(params, ball, b)
    if majorant.contraction_factor > config.contraction_threshold:
        raise NonContractiveError(
            f"d*C1 = {majorant.contraction_factor:.3g} exceeds {config.contraction_threshold}; use a smaller ball"
        )
    return majorant


def tilde_green(params, ball, b, x, y, config=SeriesConfig(), majorant=None):
    """Perturbation series for the drifted Green function at one pair."""
    return tilde_green_rows(params, ball, b, x, np.atleast_2d(y), config, majorant)[0]


def tilde_green_rows(params, ball, b, x, ys, config=SeriesConfig(), majorant=None, workspace=None, min_terms=1):
    """Series results for one pole ``x`` and many targets ``ys``.

    At least ``min_terms`` correction terms are computed even when fewer
    already meet the remainder target.
    """
    x = np.asarray(x, float)
    ys = np.atleast_2d(np.asarray(ys, float))
    for y in ys:
        _check_pair(ball, x, y)
    if b.is_zero:
        return [_zero_result(g) for g in green_ball_values(params, ball, x, ys)]
    majorant = _check_majorant(params, ball, b, config, majorant)
    n = max(min_terms, _n_terms(majorant.contraction_factor, config))
    ws = workspace or SeriesWorkspace(params, ball, b, x, config, n_levels=n - 1)
    vals, errs = ws.terms(ys, n)
    return [_series_from_terms(vals[:, k], errs[:, k], majorant.contraction_factor, config) for k in range(len(ys))]


def tilde_poisson(params, ball, b, x, y, config=SeriesConfig(), majorant=None, rel_error=1e-6, workspace=None):
    """``int_B G~(x, z) nu(y - z) dz`` with ``G~`` from the tabulated series."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if not ball.contains(x) or ball.dist_to_closure(y) <= 0:
        raise ParameterError("x must be inside and y outside the closed ball")
    if b.is_zero:
        gfun = lambda z: green_ball_values(params, ball, x, z)  # noqa: E731
    else:
        majorant = _check_majorant(params, ball, b, config, majorant)
        ws = workspace or SeriesWorkspace(params, ball, b, x, config, n_levels=_n_terms(majorant.contraction_factor, config))
        gfun = ws.tilde_at
    pts, expo = [x], [params.d - params.alpha]
    gap = float(ball.dist_to_closure(y))
    # a graded patch under a nearby exterior point resolves the peak of nu
    if gap < 0.5 * ball.radius:
        u = (y - ball.c) / np.linalg.norm(y - ball.c)
        p = ball.c + (ball.radius - gap) * u
        if np.linalg.norm(p - x) > 0.5 * gap:
            pts.append(p)
            expo.append(0.0)
    integrand = SingularIntegrand(lambda z: gfun(z) * levy_density(params, y - z), np.stack(pts), expo, params.alpha / 2)
    return integrate_singular(integrand, ball, rel_error, max_level=6).value


def drifted_generator_residual(params, ball, b, phi, x, config=SeriesConfig(), majorant=None, rel_error=1e-5, workspace=None):
    """``int G~(x, z) (Delta^{a/2} phi + b . grad phi)(z) dz + phi(x)``."""
    from .quad import green_generator_residual, integrate_against_bump_operator

    x = np.asarray(x, float)
    if b.is_zero:
        return green_generator_residual(params, ball, phi, x, rel_error)
    majorant = _check_majorant(params, ball, b, config, majorant)
    ws = workspace or SeriesWorkspace(params, ball, b, x, config, n_levels=_n_terms(majorant.contraction_factor, config))

    drive = lambda z: np.einsum("...i,...i->...", b(z), phi.gradient(z))
    res = integrate_against_bump_operator(params, ball, phi, x, ws.tilde_at, drive, rel_error, max_level=4)
    return res.value + float(phi(x))


def _green_row_function(params, ball, b, x, config, majorant, workspace):
    if b.is_zero:
        return lambda z: green_ball_values(params, ball, x, z)
    majorant = _check_majorant(params, ball, b, config, majorant)
    ws = workspace or SeriesWorkspace(params, ball, b, x, config, n_levels=_n_terms(majorant.contraction_factor, config))
    return ws.tilde_at


def tilde_green_functional(params, ball, b, x, phi, config=SeriesConfig(), majorant=None, rel_error=1e-6, workspace=None):
    """``int G~(x, z) phi(z) dz`` for a bump ``phi`` inside the ball."""
    from .quad import integrate_on_bump_rule

    x = np.asarray(x, float)
    row = _green_row_function(params, ball, b, x, config, majorant, workspace)
    return integrate_on_bump_rule(ball, phi, x, lambda z: row(z) * phi(z), None, rel_error).value


def tilde_exit_probability(params, ball, b, x, region, config=SeriesConfig(), majorant=None, rel_error=1e-6, workspace=None, n=48):
    """``P~^x(X_tau in A) = int_B G~(x, z) nu(A - z) dz`` for an exterior set ``A`` with a ``rule``.

    The Levy mass ``nu(A - z)`` is integrated once per node ``z``, so one
    ball integral serves the whole set.
    """
    x = np.asarray(x, float)
    ya, wa = region.rule(n)
    if np.any(ball.dist_to_closure(ya) <= 0):
        raise ParameterError("exit sets must lie outside the closed ball")
    row = _green_row_function(params, ball, b, x, config, majorant, workspace)

    def fn(z):
        flat = z.reshape(-1, z.shape[-1])
        mass = np.concatenate([levy_density(params, ya[None] - flat[i : i + 256, None]) @ wa for i in range(0, len(flat), 256)])
        return row(z) * mass.reshape(z.shape[:-1])

    integrand = SingularIntegrand(fn, x[None, :], params.d - params.alpha, params.alpha / 2)
    return integrate_singular(integrand, ball, rel_error, max_level=6).value
