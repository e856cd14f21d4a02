"""Deterministic quadrature for weakly singular integrands on balls.

The workhorse is a polar patch rule: a smooth partition of unity splits the
integrand into one piece per singular point, each piece is written in polar
coordinates around its point, and the radial variable is mapped so that both
the point singularity and the boundary layer become polynomial-like in the
quadrature variable. Rule sizes grow geometrically until two successive
levels agree.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, QuadratureError, SingularityError
from .geometry import Annulus, Ball, DisjointBallUnion
from .kernels import riesz_constant, sphere_area


@dataclass(frozen=True)
class SingularIntegrand:
    """Integrand ``f(z)`` that behaves like ``|z - p|^{-s}`` near each point ``p``.

    ``fn`` maps an array of points ``(..., d)`` to values ``(...)``.
    ``boundary_exponent`` describes the behaviour ``delta(z)^beta`` at the
    boundary of the integration region and only tunes node grading.
    """

    fn: object
    singular_points: object = field(default_factory=lambda: np.empty((0, 0)))
    singular_exponents: object = 0.0
    boundary_exponent: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.singular_points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 0)
        elif pts.ndim == 1:
            pts = pts[None, :]
        object.__setattr__(self, "singular_points", pts)
        s = np.broadcast_to(np.asarray(self.singular_exponents, dtype=float), (len(pts),)).copy()
        object.__setattr__(self, "singular_exponents", s)
        if pts.size and np.any(s >= pts.shape[1]):
            raise ParameterError(f"singular exponents must be below d={pts.shape[1]}, got {s}")
        if not self.boundary_exponent > -1:
            raise ParameterError("boundary exponent must exceed -1 for integrability")


@dataclass(frozen=True)
class QuadResult:
    value: float
    abs_error: float
    n_evals: int


@dataclass(frozen=True)
class TestFunction:
    """Bump ``amp * exp(-1 / (1 - |z - c|^2 / rho^2))`` supported in ``B(c, rho)``."""

    center: tuple
    radius: float
    amp: float = 1.0

    __test__ = False  # keep pytest from collecting the class

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise ParameterError("bump radius must be positive")

    @property
    def c(self):
        return np.asarray(self.center)

    @property
    def support(self):
        return Ball(self.center, self.radius)

    @property
    def sup(self):
        return abs(self.amp) * np.exp(-1.0)

    def __call__(self, z):
        q = _sqdist(z, self.c) / self.radius**2
        inside = q < 1
        qs = np.where(inside, q, 0.0)
        return np.where(inside, self.amp * np.exp(-1.0 / (1.0 - qs)), 0.0)

    def gradient(self, z):
        z = np.asarray(z, float)
        q = _sqdist(z, self.c) / self.radius**2
        inside = q < 1
        qs = np.where(inside, q, 0.0)
        val = np.where(inside, self.amp * np.exp(-1.0 / (1.0 - qs)), 0.0)
        coef = -2.0 * val / ((1.0 - qs) ** 2 * self.radius**2)
        return coef[..., None] * (z - self.c)

    def second_difference(self, x, y):
        """``(phi(x + y) + phi(x - y)) / 2 - phi(x)`` without cancellation for small ``y``."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        R2 = self.radius**2
        xc = x - self.c
        q0 = np.einsum("...i,...i->...", xc, xc) / R2
        lin = 2 * np.einsum("...i,...i->...", xc, y) / R2
        quad = np.einsum("...i,...i->...", y, y) / R2
        dp, dm = quad + lin, quad - lin
        qp, qm = q0 + dp, q0 + dm
        ok = (qp < 1) & (qm < 1) & (q0 < 1)
        # near the support edge the exponents are huge and the plain form is safe
        ok &= (np.abs(dp) + np.abs(dm)) < 0.1 * np.maximum(1 - np.maximum(qp, qm), 0) ** 2
        one0 = np.where(ok, 1 - q0, 1.0)
        onep = np.where(ok, 1 - qp, 1.0)
        onem = np.where(ok, 1 - qm, 1.0)
        # exponent differences g(q +- ) - g(q0) with g(q) = -1 / (1 - q)
        ep = -dp / (onep * one0)
        em = -dm / (onem * one0)
        mean = -((dp + dm) * one0 - 2 * dp * dm) / (2 * onep * onem * one0)
        half = 0.5 * (ep - em)
        stable = np.exp(-1.0 / one0) * self.amp * (np.expm1(mean) * np.cosh(half) + 2 * np.sinh(0.5 * half) ** 2)
        direct = 0.5 * (self(x + y) + self(x - y)) - self(x)
        return np.where(ok, stable, direct)

    def scaled(self, r):
        """The bump ``z -> phi(r z)``."""
        return TestFunction(tuple(self.c / r), self.radius / r, self.amp)

    def times(self, k):
        return TestFunction(self.center, self.radius, k * self.amp)

    def mass(self):
        """Integral of the bump, by a one-dimensional radial rule."""
        d = self.c.size
        u, w = _gauss01(64)
        rho = self.radius * u
        prof = self.amp * np.exp(-1.0 / (1.0 - u**2))
        return float(sphere_area(d) * np.sum(w * self.radius * prof * rho ** (d - 1)))


def _sqdist(z, c):
    diff = np.asarray(z, float) - c
    return np.einsum("...i,...i->...", diff, diff)


_GAUSS_CACHE = {}


def _grading_power(beta):
    # maps dist^beta near an endpoint to an integer power of the rule variable
    return max(1.0, np.ceil(1.0 + beta)) / (1.0 + beta)


def _gauss01(n):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if n not in _GAUSS_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GAUSS_CACHE[n] = (0.5 * (x + 1), 0.5 * w)
    return _GAUSS_CACHE[n]


def sphere_rule(d, n):
    """Directions and weights integrating over the unit sphere (weights sum to its area)."""
    if d == 2:
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(th), np.sin(th)], -1), np.full(n, 2 * np.pi / n)
    if d == 3:
        n_mu = max(2, n // 2)
        mu, wm = np.polynomial.legendre.leggauss(n_mu)
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        s = np.sqrt(1 - mu**2)
        om = np.stack(
            [
                (s[:, None] * np.cos(th)[None, :]).ravel(),
                (s[:, None] * np.sin(th)[None, :]).ravel(),
                np.repeat(mu, n),
            ],
            -1,
        )
        return om, (wm[:, None] * np.full(n, 2 * np.pi / n)[None, :]).ravel()
    raise ParameterError(f"quadrature over balls is implemented for d = 2 and 3, got d={d}")


# ---------------------------------------------------------------------------
# Polar patch rule


@dataclass(frozen=True)
class RuleSize:
    n_inner: int
    n_outer: int
    n_angle: int

    @classmethod
    def level(cls, k, base=(10, 16, 24)):
        f = 1.5**k
        return cls(*(int(round(b * f)) for b in base))


def ball_patch_rule(center, radius, points, exponents, boundary_exponent, size, power=None):
    """Nodes and weights of the patch rule on ``B(center, radius)``.

    ``points`` has shape ``(B, m, d)`` (a batch of ``B`` point sets). Returns
    ``nodes (B, N, d)`` and ``weights (B, N)`` such that ``sum w f(nodes)``
    approximates the integral of ``f``. ``power`` is the partition-of-unity
    exponent (defaults to ``d + 2``).
    """
    points = np.asarray(points, float)
    B, m, d = points.shape
    c = np.asarray(center, float)
    s = np.broadcast_to(np.asarray(exponents, float), (m,))
    q = d + 2 if power is None else power
    om, wa = sphere_rule(d, size.n_angle)
    K = len(om)
    ui, wi = _gauss01(size.n_inner)
    uo, wo = _gauss01(size.n_outer)
    qb = _grading_power(boundary_exponent)
    psi = 1 - (1 - uo) ** qb
    dpsi = qb * (1 - uo) ** (qb - 1)

    if m > 1:
        pd = np.sqrt(((points[:, :, None, :] - points[:, None, :, :]) ** 2).sum(-1))
        pd[:, np.arange(m), np.arange(m)] = np.inf
        near = pd.min(axis=2)
        if np.any(near == 0):
            raise SingularityError("coincident singular points in a patch rule")
    else:
        near = np.full((B, m), np.inf)

    nodes, weights = [], []
    for i in range(m):
        p = points[:, i, :]
        pc = p - c
        proj = pc @ om.T  # (B, K)
        rem = radius**2 - (pc**2).sum(-1)
        if np.any(rem <= 0):
            raise ParameterError("patch centers must lie strictly inside the ball")
        root = np.sqrt(proj**2 + rem[:, None])
        # cancellation-free distance to the sphere along each direction
        T = np.where(proj < 0, root - proj, rem[:, None] / (root + proj))
        a = np.minimum(0.5 * near[:, i][:, None], 0.5 * T)
        # u^expo turns t^{-s} t^{d-1} dt into an integer power of u
        expo = max(1.0, np.ceil(2 * (d - s[i]) - 1e-12)) / (d - s[i])
        t_in = a[..., None] * ui**expo
        j_in = a[..., None] * expo * ui ** (expo - 1) * wi
        ratio = np.log(T / a)
        t_out = a[..., None] * np.exp(ratio[..., None] * psi)
        j_out = t_out * ratio[..., None] * dpsi * wo
        t = np.concatenate([t_in, t_out], axis=-1)  # (B, K, n)
        jac = np.concatenate([j_in, j_out], axis=-1) * t ** (d - 1) * wa[None, :, None]
        z = p[:, None, None, :] + t[..., None] * om[None, :, None, :]
        if m > 1:
            acc = np.ones(t.shape)
            for j in range(m):
                if j == i:
                    continue
                dj = np.sqrt(((z - points[:, j, None, None, :]) ** 2).sum(-1))
                acc += (t / dj) ** q
            jac = jac / acc
        nodes.append(z.reshape(B, -1, d))
        weights.append(jac.reshape(B, -1))
    return np.concatenate(nodes, axis=1), np.concatenate(weights, axis=1)


def _ball_pieces(region):
    if isinstance(region, Ball):
        return [(region, 1.0)]
    if isinstance(region, DisjointBallUnion):
        return [(b, 1.0) for b in region.members]
    if isinstance(region, Annulus):
        # the integrand must extend smoothly across the hole
        return [(Ball(region.center, region.r_out), 1.0), (Ball(region.center, region.r_in), -1.0)]
    raise ParameterError(f"unsupported integration region {type(region).__name__}")


def _rule_for_region(integrand, region, size):
    nodes, weights = [], []
    pts = integrand.singular_points
    for ball, sign in _ball_pieces(region):
        if pts.size:
            inside = ball.contains(pts)
            p, s = pts[inside], integrand.singular_exponents[inside]
        else:
            p, s = np.empty((0, ball.dim)), np.empty(0)
        if len(p) == 0:
            p, s = ball.c[None, :], np.zeros(1)
        z, w = ball_patch_rule(ball.c, ball.radius, p[None], s, integrand.boundary_exponent, size)
        nodes.append(z[0])
        weights.append(sign * w[0])
    return np.concatenate(nodes), np.concatenate(weights)


def integrate_singular(integrand, region, target_rel_error=1e-8, max_level=7, min_level=1):
    """Integrate ``integrand`` over ``region`` with geometric rule refinement.

    The returned error is the difference between the last two levels, and a
    level is accepted once that difference is below ``target_rel_error``
    times the integral of ``|f|``. Raises :class:`QuadratureError` carrying
    the partial value when ``max_level`` is exhausted.
    """
    prev = None
    n_evals = 0
    for level in range(max_level + 1):
        z, w = _rule_for_region(integrand, region, RuleSize.level(level))
        f = np.asarray(integrand.fn(z), float)
        if not np.all(np.isfinite(f)):
            raise QuadratureError("integrand returned a non-finite value", context={"level": level})
        n_evals += f.size
        val = float(np.sum(w * f))
        scale = float(np.sum(np.abs(w * f)))
        if prev is not None and level >= min_level:
            err = abs(val - prev)
            if err <= target_rel_error * scale or err <= 1e-15 * scale:
                return QuadResult(val, err, n_evals)
        prev = val
    raise QuadratureError(
        f"singular quadrature did not reach relative error {target_rel_error}",
        value=val,
        abs_error=err,
        context={"level": max_level},
    )


# ---------------------------------------------------------------------------
# Exterior of a ball


def exterior_rule(center, radius, d, n_radial, n_angle, boundary_exponent, decay):
    """Rule for ``int_{|y - c| > radius} f`` with ``f ~ dist^beta`` at the sphere and ``|y|^{-decay}`` at infinity."""
    if decay <= d:
        raise ParameterError("exterior integrand must decay faster than |y|^{-d}")
    k = 2.0 / (decay - d)
    q = _grading_power(boundary_exponent)
    u, w = _gauss01(n_radial)
    gap = radius * np.expm1(-k * np.log1p(-(u**q)))
    drho = radius * k * q * u ** (q - 1) * (1 - u**q) ** (-k - 1)
    rho = radius + gap
    om, wa = sphere_rule(d, n_angle)
    y = np.asarray(center, float) + rho[:, None, None] * om[None, :, :]
    wt = (w * drho * rho ** (d - 1))[:, None] * wa[None, :]
    gaps = np.broadcast_to(gap[:, None], wt.shape)
    return y.reshape(-1, d), wt.ravel(), gaps.ravel()


def integrate_exterior(fn, ball, boundary_exponent, decay, target_rel_error=1e-8, max_level=7, uses_gap=False):
    """Integrate over ``|y - c| > r``; with ``uses_gap`` the integrand is called as ``fn(y, |y - c| - r)``.

    Passing the exact gap matters for integrands that blow up at the sphere,
    where recomputing it from ``y`` loses all relative precision.
    """
    prev = None
    for level in range(max_level + 1):
        f_ = 1.5**level
        y, w, gap = exterior_rule(ball.c, ball.radius, ball.dim, int(24 * f_), int(32 * f_), boundary_exponent, decay)
        vals = np.asarray(fn(y, gap) if uses_gap else fn(y), float)
        val = float(np.sum(w * vals))
        scale = float(np.sum(np.abs(w * vals)))
        if prev is not None:
            err = abs(val - prev)
            if err <= target_rel_error * scale:
                return QuadResult(val, err, y.shape[0])
        prev = val
    raise QuadratureError("exterior quadrature did not converge", value=val, abs_error=err)


@dataclass(frozen=True)
class ShellSector:
    """Exterior test set ``{r1 < |y - c| < r2, angle(y - c, axis) < half_angle}``."""

    center: tuple
    r1: float
    r2: float
    axis: tuple
    half_angle: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        a = np.asarray(self.axis, float)
        object.__setattr__(self, "axis", tuple(a / np.linalg.norm(a)))
        if not (0 < self.r1 < self.r2) or not (0 < self.half_angle <= np.pi):
            raise ParameterError("invalid shell sector")

    def contains(self, y):
        v = np.asarray(y, float) - np.asarray(self.center)
        r = np.sqrt(np.einsum("...i,...i->...", v, v))
        with np.errstate(invalid="ignore", divide="ignore"):
            cosang = (v @ np.asarray(self.axis)) / r
        return (r > self.r1) & (r < self.r2) & (cosang > np.cos(self.half_angle))

    def rule(self, n=48):
        d = len(self.center)
        u, wu = _gauss01(n)
        r = self.r1 + (self.r2 - self.r1) * u
        wr = (self.r2 - self.r1) * wu * r ** (d - 1)
        ax = np.asarray(self.axis)
        if d == 2:
            base = np.arctan2(ax[1], ax[0])
            th = base + self.half_angle * (2 * u - 1)
            wt = 2 * self.half_angle * wu
            om = np.stack([np.cos(th), np.sin(th)], -1)
        elif d == 3:
            ang = self.half_angle * u
            wt_ang = self.half_angle * wu * np.sin(ang)
            phi = 2 * np.pi * (np.arange(n) + 0.5) / n
            # orthonormal frame around the axis
            helper = np.array([1.0, 0, 0]) if abs(ax[0]) < 0.9 else np.array([0, 1.0, 0])
            e1 = np.cross(ax, helper)
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(ax, e1)
            om = (
                np.cos(ang)[:, None, None] * ax
                + (np.sin(ang)[:, None] * np.cos(phi)[None, :])[..., None] * e1
                + (np.sin(ang)[:, None] * np.sin(phi)[None, :])[..., None] * e2
            ).reshape(-1, 3)
            wt = (wt_ang[:, None] * np.full(n, 2 * np.pi / n)).ravel()
        else:
            raise ParameterError("shell sectors are implemented for d = 2 and 3")
        y = np.asarray(self.center) + r[:, None, None] * om[None, :, :]
        w = wr[:, None] * wt[None, :]
        return y.reshape(-1, d), w.ravel()

    def integrate(self, fn, n=48):
        y, w = self.rule(n)
        return float(np.sum(w * fn(y)))


# ---------------------------------------------------------------------------
# Fractional Laplacian of a bump


def frac_laplacian(params, phi, x, inner_cutoff=None, n_radial=48, n_angle=64):
    """Principal-value ``Delta^{alpha/2} phi(x)`` for a bump ``phi``; vectorised over ``x``.

    Inside the support, small jumps are symmetrised (``y`` paired with
    ``-y``) on a ball that stays inside the support, and larger jumps are
    integrated along each ray over its chord through the support, minus the
    explicit mass ``phi(x) * int_{|y| > eps} nu``. Outside the support no
    principal value is needed.
    """
    d, a = params.d, params.alpha
    x = np.asarray(x, float)
    shape = x.shape[:-1]
    xs = x.reshape(-1, d)
    eps = 0.25 * phi.radius if inner_cutoff is None else float(inner_cutoff)
    A = riesz_constant(params, -a)
    om, wa = sphere_rule(d, n_angle)
    u, wu = _gauss01(n_radial)
    out = np.empty(len(xs))
    gap_out = phi.support.dist_to_closure(xs)
    gap_in = phi.support.delta(xs)
    inside = np.flatnonzero(gap_in > 0)
    chord = np.flatnonzero((gap_in <= 0) & (gap_out <= 0.25 * phi.radius))
    away = np.flatnonzero(gap_out > 0.25 * phi.radius)
    chunk = max(1, 200_000 // (len(om) * n_radial))
    for s in range(0, len(inside), chunk):
        idx = inside[s : s + chunk]
        e = np.minimum(eps, 0.5 * gap_in[idx])
        out[idx] = _frac_lap_block(phi, xs[idx], e, A, a, d, om, wa, u, wu)
    # rays from just outside the support need a finer angular rule near tangency
    om4, wa4 = sphere_rule(d, 4 * n_angle)
    for s in range(0, len(chord), chunk // 4 or 1):
        idx = chord[s : s + (chunk // 4 or 1)]
        out[idx] = _frac_lap_block(phi, xs[idx], None, A, a, d, om4, wa4, u, wu)
    if away.size:
        z, w = _support_rule(phi, n_radial, n_angle)
        fz = w * phi(z)
        for s in range(0, len(away), chunk):
            idx = away[s : s + chunk]
            r2 = _sqdist(z[None, :, :], xs[idx][:, None, :])
            out[idx] = A * (r2 ** (-(d + a) / 2) @ fz)
    return out.reshape(shape) if shape else float(out[0])


def _support_rule(phi, n_radial, n_angle):
    d = phi.c.size
    u, wu = _gauss01(n_radial)
    om, wa = sphere_rule(d, n_angle)
    rho = phi.radius * u
    z = phi.c + rho[:, None, None] * om[None, :, :]
    w = (wu * phi.radius * rho ** (d - 1))[:, None] * wa[None, :]
    return z.reshape(-1, d), w.ravel()


def _frac_lap_block(phi, xb, eps, A, a, d, om, wa, u, wu):
    """``eps`` is an array of inner radii, or ``None`` for points outside the support."""
    xp = xb[:, None, None, :]
    if eps is None:
        inner = np.zeros(len(xb))
        fx = np.zeros(len(xb))
        # phi vanishes to infinite order at the support edge
        lo = np.full((len(xb), 1), 1e-12 * phi.radius)
    else:
        fx = phi(xb)
        # inner ball: rho = eps u^{1/(2-a)} makes the symmetrised integrand bounded
        ex = 1.0 / (2 - a)
        rho = eps[:, None] * u**ex
        drho = eps[:, None] * ex * u ** (ex - 1) * wu
        y = rho[:, None, :, None] * om[None, :, None, :]
        second = phi.second_difference(xp, y)
        inner = A * np.einsum("bkn,k,bn->b", second, wa, drho * rho ** (-1 - a))
        lo = eps[:, None]

    # far field: chord of each ray through the support, log-graded from its start
    xc = xb - phi.c
    proj = xc @ om.T  # (B, K)
    disc = proj**2 - (xc**2).sum(-1)[:, None] + phi.radius**2
    hit = disc > 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = np.maximum(-proj - sq, lo)
    t2 = -proj + sq
    hit &= t2 > t1
    t1 = np.where(hit, t1, 1.0)
    t2 = np.where(hit, t2, 2.0)
    ratio = np.log(t2 / t1)
    t = t1[..., None] * np.exp(ratio[..., None] * u)
    z = xp + t[..., None] * om[None, :, None, :]
    vals = phi(z) * t ** (-a) * ratio[..., None]
    far = A * np.einsum("bkn,k,n->b", np.where(hit[..., None], vals, 0.0), wa, wu)
    if eps is None:
        return far
    tail = fx * A * sphere_area(d) * eps ** (-a) / a
    return inner + far - tail


def green_generator_residual(params, ball, phi, x, target_rel_error=1e-7):
    """``int_B G_B(x, z) Delta^{alpha/2} phi(z) dz + phi(x)``."""
    from .kernels import green_ball_values

    x = np.asarray(x, float)
    if not ball.contains(x):
        return float(phi(x))
    if params.d != 2:
        # the radial bump rule is planar; a generic patch rule costs too much here
        raise ParameterError("the generator residual is implemented for d = 2")
    kernel = lambda z: green_ball_values(params, ball, x, z)
    res = integrate_against_bump_operator(params, ball, phi, x, kernel, None, target_rel_error, max_level=6)
    return res.value + float(phi(x))


# ---------------------------------------------------------------------------
# Polar rule around a radial bump (d = 2)


def _graded_nodes(a, b, n, left=False, right=False, q=3):
    """Gauss nodes on ``[a, b]`` clustered at the flagged ends."""
    u, w = _gauss01(n)
    if left and right:
        den = u**q + (1 - u) ** q
        v, dv = u**q / den, q * (u * (1 - u)) ** (q - 1) / den**2
    elif left:
        v, dv = u**q, q * u ** (q - 1)
    elif right:
        v, dv = 1 - (1 - u) ** q, q * (1 - u) ** (q - 1)
    else:
        v, dv = u, np.ones_like(u)
    return a + (b - a) * v, (b - a) * dv * w


def _sinh_nodes(length, eps, n):
    """Offsets in ``[0, length]`` resolving a near-singularity at distance ``eps`` from 0."""
    top = np.arcsinh(length / eps)
    u, w = _gauss01(n)
    return eps * np.sinh(top * u), eps * np.cosh(top * u) * top * w


def _arc_pieces(lo, hi, theta_x, eps, n):
    """Angles and weights on ``[lo, hi]``, graded towards ``theta_x`` and the arc ends."""
    bx = lo + np.mod(theta_x - lo, 2 * np.pi)
    if bx >= hi:
        return _graded_nodes(lo, hi, 2 * n, True, True)
    th, wt = [], []
    for end in (lo, hi):
        length = abs(end - bx)
        if length <= 0:
            continue
        sgn = np.sign(end - bx)
        off, w = _sinh_nodes(0.5 * length, eps, n)
        far, wf = _graded_nodes(0.5 * length, length, n, right=True)
        th += [bx + sgn * off, bx + sgn * far]
        wt += [w, wf]
    return np.concatenate(th), np.concatenate(wt)


def bump_polar_rule(ball, phi, x, level):
    """Rule on ``ball`` in polar coordinates about the center of a radial bump ``phi``.

    Every node lies on a circle ``|z - c| = t`` around the bump center, so
    any radial function of ``z - c`` needs one value per circle. Circles are
    split at the bump radius (where the bump's fractional Laplacian is steep),
    at ``|x - c|`` and where they start to leave the ball; along each circle
    nodes cluster towards the direction of ``x``. Returns ``t``, nodes,
    weights and, for each node, the index of its circle.
    """
    c = phi.c
    if c.size != 2:
        raise ParameterError("the bump polar rule is implemented for d = 2")
    R = ball.radius
    u_vec = c - ball.c
    e = float(np.linalg.norm(u_vec))
    if e + phi.radius >= R:
        raise ParameterError("the bump support must lie inside the ball")
    xc = np.asarray(x, float) - c
    t0 = float(np.hypot(*xc))
    theta_x = float(np.arctan2(xc[1], xc[0]))
    phi_u = float(np.arctan2(u_vec[1], u_vec[0]))
    t_end = R + e
    n_r = int(round(8 * 1.5**level))
    n_a = int(round(10 * 1.5**level))

    rho = phi.radius
    breaks = [0.0, t_end] + [f * rho for f in (0.5, 0.75, 0.9, 1.0, 1.1, 1.3, 1.7)]
    graded = [t_end]
    if t0 > 0:
        breaks.append(t0)
        graded.append(t0)
    else:
        graded.append(0.0)
    if e > 0:
        breaks.append(R - e)
        graded.append(R - e)
    breaks = np.unique([b for b in breaks if 0 <= b <= t_end])
    breaks = breaks[np.concatenate([[True], np.diff(breaks) > 1e-9 * t_end])]
    close = lambda p: any(abs(p - g) <= 1e-9 * t_end for g in graded)

    ts, wts = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        t, w = _graded_nodes(a, b, n_r, close(a), close(b))
        ts.append(t)
        wts.append(w)
    ts, wts = np.concatenate(ts), np.concatenate(wts)

    nodes, weights, owner = [], [], []
    for i, (t, wt) in enumerate(zip(ts, wts)):
        eps = abs(t - t0) / np.sqrt(t * t0) if t0 > 0 else 1e3
        eps = min(max(eps, 1e-300), 1e3)
        if t <= R - e:
            lo = theta_x - np.pi
            th, wa = _arc_pieces(lo, lo + 2 * np.pi, theta_x, eps, n_a)
        else:
            kappa = np.clip((R**2 - e**2 - t**2) / (2 * e * t), -1.0, 1.0)
            half = np.arccos(kappa)
            th, wa = _arc_pieces(phi_u + half, phi_u + 2 * np.pi - half, theta_x, eps, n_a)
        nodes.append(c + t * np.stack([np.cos(th), np.sin(th)], -1))
        weights.append(wt * t * wa)
        owner.append(np.full(th.size, i))
    return ts, np.concatenate(nodes), np.concatenate(weights), np.concatenate(owner)


def integrate_on_bump_rule(ball, phi, x, fn, radial=None, target_rel_error=1e-6, max_level=5):
    """``int_ball fn(z) radial(|z - c|) dz`` on the bump polar rule, refined until two levels agree.

    ``radial`` (optional) is evaluated once per circle, which is where the
    rule saves work for radial factors such as the bump's fractional Laplacian.
    """
    prev = None
    n_evals = 0
    for level in range(max_level + 1):
        t, z, w, owner = bump_polar_rule(ball, phi, x, level)
        f = w * fn(z)
        if radial is not None:
            f = f * radial(t)[owner]
        n_evals += z.shape[0]
        val, scale = float(np.sum(f)), float(np.sum(np.abs(f)))
        if prev is not None:
            err = abs(val - prev)
            if err <= target_rel_error * scale or err <= 1e-15 * scale:
                return QuadResult(val, err, n_evals)
        prev = val
    raise QuadratureError(
        f"bump quadrature did not reach relative error {target_rel_error}",
        value=val,
        abs_error=err,
        context={"level": max_level},
    )


def integrate_against_bump_operator(params, ball, phi, x, kernel, drive, target_rel_error=1e-6, max_level=5):
    """``int_ball kernel(z) (Delta^{alpha/2} phi + drive)(z) dz`` on the bump polar rule.

    ``kernel`` may be singular at ``x``; ``drive`` is an optional extra term
    (``None`` for none).
    """
    e1 = np.zeros(params.d)
    e1[0] = 1.0
    lap = lambda t: frac_laplacian(params, phi, phi.c + t[:, None] * e1)
    if drive is None:
        return integrate_on_bump_rule(ball, phi, x, kernel, lap, target_rel_error, max_level)
    # the radial part and the drive term need separate sums
    a = integrate_on_bump_rule(ball, phi, x, kernel, lap, target_rel_error, max_level)
    b = integrate_on_bump_rule(ball, phi, x, lambda z: kernel(z) * drive(z), None, target_rel_error, max_level)
    return QuadResult(a.value + b.value, a.abs_error + b.abs_error, a.n_evals + b.n_evals)


def green_formula_residual(params, ball, x, y, target_rel_error=1e-8):
    """Relative defect of ``G_B(x, y) + int_{B^c} A |y - z|^{a-d} P_B(x, z) dz = A |x - y|^{a-d}``."""
    from .kernels import green_ball_values, poisson_ball_values

    x = np.asarray(x, float)
    y = np.asarray(y, float)
    d, a = params.d, params.alpha
    A = riesz_constant(params, a)
    fn = lambda z, gap: A * np.linalg.norm(z - y, axis=-1) ** (a - d) * poisson_ball_values(params, ball, x, z, gap)
    harmonic = integrate_exterior(fn, ball, -a / 2, 2 * d, target_rel_error, uses_gap=True).value
    target = A * np.linalg.norm(x - y) ** (a - d)
    return float((green_ball_values(params, ball, x, y) + harmonic - target) / target)
