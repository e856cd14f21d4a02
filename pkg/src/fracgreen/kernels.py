"""Closed-form and semi-analytic kernels of the fractional Laplacian.

Every evaluator is a pure function of ``(params, geometry, points)``. Points
are arrays with last axis ``d``; leading axes broadcast. Diagonal
singularities are returned as ``+inf`` and never as NaN.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import DomainError, ParameterError, QuadratureError, SingularityError
from .geometry import Ball


@dataclass(frozen=True)
class StableParams:
    """Dimension ``d`` and stability index ``alpha``.

    The default constructor enforces ``d >= 2`` and ``1 < alpha < 2``.
    :meth:`relaxed` admits ``0 < alpha <= 2`` for the experiments that probe
    what happens outside that range.
    """

    d: int
    alpha: float
    strict: bool = True

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ParameterError(f"d must be an integer >= 2, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        a = float(self.alpha)
        if not np.isfinite(a):
            raise ParameterError(f"alpha must be finite, got {self.alpha}")
        if self.strict and not (1.0 < a < 2.0):
            raise ParameterError(f"alpha must lie in (1, 2), got {a}")
        if not self.strict and not (0.0 < a <= 2.0):
            raise ParameterError(f"alpha must lie in (0, 2], got {a}")
        object.__setattr__(self, "alpha", a)

    @classmethod
    def relaxed(cls, d, alpha):
        return cls(d, alpha, strict=False)


@dataclass(frozen=True)
class KernelValue:
    """Kernel value with an absolute error bound (zero for closed forms)."""

    value: object
    abs_error: object = 0.0

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class Constants:
    riesz: float
    levy: float
    green: float
    poisson: float


def riesz_constant(params, gamma):
    """``Gamma((d-g)/2) / (2^g pi^{d/2} |Gamma(g/2)|)``."""
    d = params.d
    gamma = float(gamma)
    if gamma == 0 or not abs(gamma) < d:
        raise ParameterError(f"riesz constant needs 0 < |gamma| < d, got gamma={gamma}, d={d}")
    if gamma < 0 and float(gamma / 2).is_integer():
        raise ParameterError(f"Gamma(gamma/2) has a pole at gamma={gamma}")
    return float(
        special.gamma((d - gamma) / 2) / (2**gamma * np.pi ** (d / 2) * abs(special.gamma(gamma / 2)))
    )


def green_constant(params):
    d, a = params.d, params.alpha
    return float(special.gamma(d / 2) / (2**a * np.pi ** (d / 2) * special.gamma(a / 2) ** 2))


def poisson_constant(params):
    d, a = params.d, params.alpha
    return float(special.gamma(d / 2) * np.pi ** (-1 - d / 2) * np.sin(np.pi * a / 2))


def constants(params):
    return Constants(
        riesz=riesz_constant(params, params.alpha),
        levy=riesz_constant(params, -params.alpha),
        green=green_constant(params),
        poisson=poisson_constant(params),
    )


def sphere_area(d):
    """Surface area of the unit sphere in R^d."""
    return float(2 * np.pi ** (d / 2) / special.gamma(d / 2))


def _norm(v):
    return np.sqrt(np.einsum("...i,...i->...", v, v))


# ---------------------------------------------------------------------------
# Levy density and Riesz kernel


def levy_density(params, y):
    y = np.asarray(y, dtype=float)
    r = _norm(y)
    if np.any(r == 0):
        raise SingularityError("Levy density is singular at the origin")
    return riesz_constant(params, -params.alpha) * r ** (-params.d - params.alpha)


def riesz_kernel(params, x, y):
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    r = _norm(x - y)
    with np.errstate(divide="ignore"):
        val = riesz_constant(params, params.alpha) * r ** (params.alpha - params.d)
    val = np.where(r == 0, np.inf, val)
    return KernelValue(val[()] if val.ndim == 0 else val, 0.0)


# ---------------------------------------------------------------------------
# Stable density p_t(x) by radial Fourier inversion

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _lambda_bessel(nu, z):
    """``z^{-nu} J_nu(z)``, entire in ``z``."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-6
    zs = np.where(small, 1.0, z)
    out = special.jv(nu, zs) / zs**nu
    lim = 1.0 / (2**nu * special.gamma(nu + 1))
    # two-term Taylor expansion below the cutoff
    out = np.where(small, lim * (1 - z**2 / (4 * (nu + 1))), out)
    return out


def _inversion_nodes(params, r):
    a = params.alpha
    smax = (45.0 + (params.d - 1) * 4.0) ** (1 / a)
    edges = [0.0] + list(2.0 ** np.arange(-30.0, 0.0))
    step = min(0.5, np.pi / (2 * max(r, 1e-12)))
    e = 1.0
    while e < smax:
        e = min(smax, e + step)
        edges.append(e)
    edges = np.asarray(edges)
    lo, hi = edges[:-1, None], edges[1:, None]
    s = (0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)).ravel()
    w = (0.5 * (hi - lo) * _GL_WEIGHTS).ravel()
    return s, w


def _p1_quadrature(params, r):
    d, a = params.d, params.alpha
    nu = d / 2 - 1
    out = np.empty_like(r)
    # group radii with similar oscillation so each gets an adequate panel width
    order = np.argsort(r)
    rs = r[order]
    vals = np.empty_like(rs)
    start = 0
    while start < rs.size:
        top = max(rs[start], 1e-12)
        stop = np.searchsorted(rs, 2 * top, side="right") if rs[start] > 0.5 else np.searchsorted(rs, 1.0, "right")
        stop = max(stop, start + 1)
        s, w = _inversion_nodes(params, rs[stop - 1])
        f = np.exp(-(s**a)) * s ** (d - 1)
        lam = _lambda_bessel(nu, s[None, :] * rs[start:stop, None])
        vals[start:stop] = (lam * (w * f)).sum(axis=1)
        start = stop
    out[order] = vals * (2 * np.pi) ** (-d / 2)
    return out


def _p1_asymptotic(params, r, max_terms=80):
    """Large-|x| expansion; returns values and a relative error proxy."""
    d, a = params.d, params.alpha
    r = np.asarray(r, dtype=float)
    total = np.zeros_like(r)
    prev = np.full_like(r, np.inf)
    err = np.full_like(r, np.inf)
    done = np.zeros(r.shape, dtype=bool)
    logr = np.log(r)
    for k in range(1, max_terms):
        lt = (
            k * a * np.log(2.0)
            + special.gammaln(a * k / 2 + 1)
            + special.gammaln((a * k + d) / 2)
            - special.gammaln(k + 1)
            - (a * k + d) * logr
        )
        mag = np.exp(lt) / np.pi ** (d / 2 + 1)
        term = (-1) ** (k + 1) * mag * np.sin(np.pi * a * k / 2)
        # stop at the smallest term: the expansion is asymptotic for alpha > 1
        growing = mag > prev
        done |= growing
        live = ~done
        total = np.where(live, total + term, total)
        err = np.where(live, mag, err)
        prev = np.where(live, mag, prev)
        if not live.any():
            break
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(err / total)
    return total, rel


def stable_density_unit(params, r):
    """Radial profile of ``p_1`` at radii ``r`` (vectorised)."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    far = r > 4.0
    if far.any():
        val, rel = _p1_asymptotic(params, r[far])
        ok = np.isfinite(rel) & (rel < 1e-13)
        tmp = np.empty(val.shape)
        tmp[ok] = val[ok]
        if (~ok).any():
            tmp[~ok] = _p1_quadrature(params, r[far][~ok])
        out[far] = tmp
    if (~far).any():
        out[~far] = _p1_quadrature(params, r[~far])
    return out


def stable_density(params, t, x):
    """``p_t(x)`` from ``p_1`` and the scaling ``t^{-d/a} p_1(t^{-1/a} x)``."""
    t = float(t)
    if not t > 0:
        raise ParameterError(f"time must be positive, got {t}")
    x = np.asarray(x, dtype=float)
    r = _norm(x)
    scale = t ** (-1 / params.alpha)
    val = t ** (-params.d / params.alpha) * stable_density_unit(params, np.ravel(r) * scale)
    val = val.reshape(r.shape)
    if np.any(~np.isfinite(val)) or np.any(val < -1e-14 * np.max(np.abs(val))):
        raise QuadratureError("stable density inversion produced an invalid value", value=val)
    return KernelValue(val[()] if val.ndim == 0 else val, 1e-12 * np.abs(val))


# ---------------------------------------------------------------------------
# Ball Green function, gradient and Poisson kernel


def _beta_parts(params):
    a = params.alpha / 2
    b = params.d / 2 - a
    return a, b, float(special.beta(a, b))


def green_inner_integral(params, w):
    """``int_0^w s^{a/2-1} (1+s)^{-d/2} ds`` through the incomplete beta function."""
    a, b, beta = _beta_parts(params)
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.isinf(w), 1.0, w / (1.0 + w))
    return beta * special.betainc(a, b, t)


def _ball_geometry(ball, x, v):
    c = ball.c
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    px = ball.radius**2 - np.einsum("...i,...i->...", x - c, x - c)
    pv = ball.radius**2 - np.einsum("...i,...i->...", v - c, v - c)
    diff = x - v
    dist2 = np.einsum("...i,...i->...", diff, diff)
    return px, pv, diff, dist2


def green_ball_values(params, ball, x, v):
    """Array-valued ball Green function (``inf`` on the diagonal, 0 outside)."""
    px, pv, _, dist2 = _ball_geometry(ball, x, v)
    inside = (px > 0) & (pv > 0)
    diag = inside & (dist2 == 0)
    safe = np.where(dist2 > 0, dist2, 1.0)
    # w is dimensionless; the r^2 normalisation makes G scale correctly with the radius
    w = np.where(inside, np.maximum(px, 0) * np.maximum(pv, 0) / (ball.radius**2 * safe), 0.0)
    inner = green_inner_integral(params, w)
    val = green_constant(params) * safe ** ((params.alpha - params.d) / 2) * inner
    val = np.where(inside, val, 0.0)
    return np.where(diag, np.inf, val)


def green_ball_gradient_values(params, ball, x, v):
    """Gradient in ``x`` of the ball Green function, vectorised; NaN-free off the diagonal."""
    d, alpha = params.d, params.alpha
    a = alpha / 2
    c = ball.c
    px, pv, diff, dist2 = _ball_geometry(ball, x, v)
    inside = (px > 0) & (pv > 0) & (dist2 > 0)
    safe = np.where(inside, dist2, 1.0)
    r2 = ball.radius**2
    w = np.where(inside, px * pv / (r2 * safe), 1.0)
    inner = green_inner_integral(params, w)
    dinner = w ** (a - 1) * (1 + w) ** (-d / 2)
    xc = np.asarray(x, float) - c
    grad_w = (-2 * xc * (pv / r2)[..., None] - 2 * w[..., None] * diff) / safe[..., None]
    coef = green_constant(params)
    g = coef * (
        (alpha - d) * (safe ** ((alpha - d - 2) / 2) * inner)[..., None] * diff
        + (safe ** ((alpha - d) / 2) * dinner)[..., None] * grad_w
    )
    return np.where(inside[..., None], g, 0.0)


def ball_green(params, ball, x, v):
    val = green_ball_values(params, ball, x, v)
    return KernelValue(val[()] if np.ndim(val) == 0 else val, 1e-13 * np.where(np.isfinite(val), np.abs(val), 0.0))


def ball_green_gradient(params, ball, x, v):
    """``grad_x G_B(x, v)`` by differentiating the closed form."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    if np.any(np.all(x == v, axis=-1)):
        raise SingularityError("Green gradient is singular on the diagonal")
    if not (np.all(ball.contains(x)) and np.all(ball.contains(v))):
        raise DomainError("both points must lie inside the ball")
    return green_ball_gradient_values(params, ball, x, v)


def poisson_ball_values(params, ball, x, y, gap=None):
    """Array-valued ball Poisson kernel; ``gap = |y - c| - r`` may be supplied exactly."""
    c = ball.c
    r = ball.radius
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    rx = _norm(x - c)
    if gap is None:
        gap = _norm(y - c) - r
    # factor the differences of squares so the bracket keeps full precision
    num = np.log(r - rx) + np.log(r + rx)
    den = np.log(gap) + np.log(gap + 2 * r)
    logp = np.log(poisson_constant(params)) + 0.5 * params.alpha * (num - den) - params.d * np.log(_norm(x - y))
    return np.exp(logp)


def ball_poisson(params, ball, x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if not np.all(ball.contains(x)):
        raise DomainError("x must lie in the open ball")
    if np.any(ball.dist_to_closure(y) <= 0):
        raise DomainError("y must lie outside the closed ball")
    with np.errstate(divide="ignore"):
        val = poisson_ball_values(params, ball, x, y)
    return KernelValue(val[()] if np.ndim(val) == 0 else val, 1e-13 * val)


# ---------------------------------------------------------------------------
# Sharp Green envelope and expected exit time


def green_envelope(params, domain, x, y):
    """``|x-y|^{a-d} dx^{a/2} dy^{a/2} / max(dx, |x-y|, dy)^a``."""
    a, d = params.alpha, params.d
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    dx = domain.delta(x)
    dy = domain.delta(y)
    r = _norm(x - y)
    m = np.maximum(np.maximum(dx, r), dy)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = r ** (a - d) * dx ** (a / 2) * dy ** (a / 2) / m**a
    val = np.where((dx > 0) & (dy > 0), val, 0.0)
    val = np.where((dx > 0) & (r == 0), np.inf, val)
    return val[()] if val.ndim == 0 else val


def green_estimate_form(params, domain, x, y):
    """The ``min(dx^{a/2} dy^{a/2} / |x-y|^a, 1)`` form of the Green estimate."""
    a, d = params.alpha, params.d
    dx = domain.delta(x)
    dy = domain.delta(y)
    r = _norm(np.asarray(x, float) - np.asarray(y, float))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = r ** (a - d) * np.minimum(dx ** (a / 2) * dy ** (a / 2) / r**a, 1.0)
    return np.where((dx > 0) & (dy > 0), val, 0.0)


def expected_exit_time(params, ball, x, rel_error=1e-9):
    """``E^x tau_B = int_B G_B(x, y) dy`` by singular quadrature around ``x``."""
    from .quad import SingularIntegrand, integrate_singular

    x = np.asarray(x, float)
    if not ball.contains(x):
        return 0.0
    integrand = SingularIntegrand(
        lambda z: green_ball_values(params, ball, x, z),
        singular_points=x[None, :],
        singular_exponents=[params.d - params.alpha],
        boundary_exponent=params.alpha / 2,
    )
    return integrate_singular(integrand, ball, rel_error).value


@lru_cache(maxsize=64)
def exit_time_constant(d, alpha):
    """Closed-form ``E^0 tau_{B(0,1)}``; used as an independent oracle."""
    return float(special.gamma(d / 2) / (2**alpha * special.gamma(1 + alpha / 2) * special.gamma((d + alpha) / 2)))


def riesz_time_integral(params, x, horizon=None, n_nodes=400):
    """``int_0^T p_t(x) dt`` plus the remaining time, bracketed by the density at the origin.

    With ``s = t^{-1/alpha} |x|`` the time integral over ``[0, T]`` becomes
    ``alpha |x|^{alpha-d} int_{s_T}^inf s^{d-alpha-1} p_1(s) ds``. The part
    beyond ``T`` is ``alpha |x|^{alpha-d} int_0^{s_T} s^{d-alpha-1} p_1(s) ds``;
    since ``p_1`` is radially decreasing it lies between the values obtained
    with ``p_1(s_T)`` and ``p_1(0)``. The returned value takes the midpoint and
    ``abs_error`` half the bracket.
    """
    d, a = params.d, params.alpha
    r = float(_norm(np.asarray(x, float)))
    if r == 0:
        return KernelValue(np.inf, 0.0)
    if horizon is None:
        horizon = 1e6 * r**a
    s_T = r * horizon ** (-1 / a)
    # [s_T, 1] on a log scale, then [1, inf) through s = u^(-1/alpha), which makes
    # every term of the large-s expansion an integer power of u
    u, w = np.polynomial.legendre.leggauss(n_nodes)
    u, w = 0.5 * (u + 1), 0.5 * w
    lo = np.log(s_T)
    s1 = np.exp(lo * (1 - u))
    w1 = -lo * w * s1
    p = 1.0 / a
    s2 = u ** (-p)
    w2 = w * p * u ** (-p - 1)
    s = np.concatenate([s1, s2])
    wt = np.concatenate([w1, w2])
    head = float(np.sum(wt * s ** (d - a - 1) * stable_density_unit(params, s)))
    p0, pT = stable_density_unit(params, np.array([0.0, s_T]))
    moment = s_T ** (d - a) / (d - a)
    scale = a * r ** (a - d)
    lo_tail, hi_tail = pT * moment, p0 * moment
    value = scale * (head + 0.5 * (lo_tail + hi_tail))
    return KernelValue(value, scale * 0.5 * (hi_tail - lo_tail) + 1e-10 * value)
