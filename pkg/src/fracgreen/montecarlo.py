"""Stochastic oracles for the stable process with and without drift.

Driftless functionals use exact samplers (subordinated Gaussian increments,
closed-form ball exit laws, walk on spheres). Drifted functionals use a
killed Euler scheme whose step-size bias is estimated from an ``h, h/2``
pair. All estimators split paths into fixed blocks, each with its own
substream, so results do not depend on the number of worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import DomainError, ParameterError
from .kernels import exit_time_constant

BLOCK = 1 << 16


@dataclass(frozen=True)
class RandomStream:
    """Seed plus substream id; block ``k`` of the stream has its own generator."""

    seed: int
    stream_id: int = 0

    def generator(self, block=0):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), int(block)))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, k):
        """An independent stream derived from this one."""
        return RandomStream(self.seed, self.stream_id * 1_000_003 + 1 + int(k))


def _rng(stream):
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RandomStream):
        return stream.generator()
    return np.random.default_rng(stream)


@dataclass
class EstimatorResult:
    mean: float
    stderr: float
    n_samples: int
    seed: object = None
    n_discarded: int = 0
    mean_steps: float = float("nan")

    @property
    def discard_fraction(self):
        total = self.n_samples + self.n_discarded
        return self.n_discarded / total if total else 0.0

    def overlaps(self, other, k=3.0):
        return abs(self.mean - other.mean) <= k * np.hypot(self.stderr, other.stderr)


@dataclass(frozen=True)
class EulerConfig:
    h: float
    max_steps: int = 1_000_000
    boundary_rule: str = "kill-on-first-exterior-position"

    def __post_init__(self):
        if not self.h > 0:
            raise ParameterError("Euler step must be positive")
        if self.boundary_rule != "kill-on-first-exterior-position":
            raise ParameterError(f"unknown boundary rule {self.boundary_rule!r}")

    def halved(self):
        return EulerConfig(self.h / 2, 2 * self.max_steps, self.boundary_rule)


# ---------------------------------------------------------------------------
# Block bookkeeping


@dataclass
class _Moments:
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    discarded: int = 0
    steps: float = 0.0

    @classmethod
    def of(cls, values, discarded=0, steps=0.0):
        values = np.asarray(values, float)
        if values.size == 0:
            return cls(0, 0.0, 0.0, discarded, steps)
        m = float(np.mean(values))
        return cls(values.size, m, float(np.sum((values - m) ** 2)), discarded, float(steps))

    def __add__(self, o):
        n = self.n + o.n
        if n == 0:
            return _Moments(0, 0.0, 0.0, self.discarded + o.discarded, self.steps + o.steps)
        delta = o.mean - self.mean
        mean = self.mean + delta * o.n / n
        m2 = self.m2 + o.m2 + delta**2 * self.n * o.n / n
        return _Moments(n, mean, m2, self.discarded + o.discarded, self.steps + o.steps)

    def result(self, seed):
        if self.n < 2:
            raise ParameterError("an estimate needs at least two accepted samples")
        sd = np.sqrt(self.m2 / (self.n - 1))
        return EstimatorResult(self.mean, sd / np.sqrt(self.n), self.n, seed, self.discarded, self.steps / max(self.n, 1))


def _blocks(n_paths):
    if n_paths < 2:
        raise ParameterError("need at least two paths")
    sizes = [BLOCK] * (n_paths // BLOCK)
    if n_paths % BLOCK:
        sizes.append(n_paths % BLOCK)
    return sizes


def _map_blocks(task, stream, n_paths, n_threads):
    """Run ``task(generator, size)`` per block; results come back in block order."""
    stream = stream if isinstance(stream, RandomStream) else RandomStream(int(stream))
    jobs = [(stream.generator(k), size) for k, size in enumerate(_blocks(n_paths))]
    if n_threads and n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            return list(pool.map(lambda j: task(*j), jobs)), stream
    return [task(*j) for j in jobs], stream


def _reduce(parts):
    # fixed-order pairwise reduction
    while len(parts) > 1:
        parts = [parts[i] + parts[i + 1] if i + 1 < len(parts) else parts[i] for i in range(0, len(parts), 2)]
    return parts[0]


def _provenance(stream):
    return {"seed": stream.seed, "stream_id": stream.stream_id}


# ---------------------------------------------------------------------------
# Exact samplers


def _open_uniform(gen, size):
    return (gen.integers(0, 2**53, size) + 0.5) / 2.0**53


def positive_stable(beta, gen, size):
    """Positive ``beta``-stable variables with Laplace transform ``exp(-lambda^beta)`` (Kanter)."""
    if beta == 1:
        return np.ones(size)
    u = np.pi * _open_uniform(gen, size)
    e = gen.standard_exponential(size)
    a = np.sin(beta * u) ** (beta / (1 - beta)) * np.sin((1 - beta) * u) / np.sin(u) ** (1 / (1 - beta))
    return (a / e) ** ((1 - beta) / beta)


def sample_isotropic_stable(params, t, stream, size=None):
    """Draws of ``X_t`` with characteristic function ``exp(-t |xi|^alpha)``.

    Uses ``X = t^{1/alpha} sqrt(2 S) Z`` with ``S`` positive ``alpha/2``-stable
    and ``Z`` standard Gaussian.
    """
    if not t > 0:
        raise ParameterError("time must be positive")
    gen = _rng(stream)
    n = 1 if size is None else int(size)
    s = positive_stable(params.alpha / 2, gen, n)
    z = gen.standard_normal((n, params.d))
    x = t ** (1 / params.alpha) * np.sqrt(2 * s)[:, None] * z
    return x[0] if size is None else x


def _uniform_directions(gen, n, d):
    z = gen.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _exit_from_center(params, radius, gen, n):
    """Exit radii gaps and directions from the center of a ball.

    With ``W ~ Beta(1 - alpha/2, alpha/2)`` the exit radius is
    ``r / sqrt(1 - W)``; the gap is formed from ``W`` directly so it keeps
    full relative precision next to the sphere.
    """
    a = params.alpha
    if a >= 2:
        raise ParameterError("exit sampling needs alpha < 2")
    w = gen.beta(1 - a / 2, a / 2, n)
    v = 1 - w
    sv = np.sqrt(v)
    gap = radius * w / (sv * (1 + sv))
    return gap, _uniform_directions(gen, n, params.d)


def sample_ball_exit(params, ball, x, stream, size=None, return_gap=False):
    """Exact draws of the exit position from ``ball`` started at ``x``.

    From the center the radius has a closed-form law. Elsewhere a center
    draw is accepted with probability
    ``((|y - c| / |x - y|) (r - |x - c|) / r)^d``, which is the ratio of the
    two exit densities divided by its maximum.
    """
    gen = _rng(stream)
    x = np.asarray(x, float)
    c, r = ball.c, ball.radius
    a = float(np.linalg.norm(x - c))
    if not a < r:
        raise DomainError("start point must lie strictly inside the ball")
    n = 1 if size is None else int(size)
    if a == 0:
        gap, om = _exit_from_center(params, r, gen, n)
    else:
        gap = np.empty(n)
        om = np.empty((n, params.d))
        filled = 0
        floor = ((r - a) / r) ** params.d
        while filled < n:
            m = max(64, int(1.2 * (n - filled) / max(floor, 1e-3)))
            g, o = _exit_from_center(params, r, gen, min(m, 4_000_000))
            y_off = (r + g)[:, None] * o
            dist = np.linalg.norm(y_off - (x - c), axis=1)
            acc = gen.random(g.size) < ((r + g) / dist * (r - a) / r) ** params.d
            take = np.flatnonzero(acc)[: n - filled]
            gap[filled : filled + take.size] = g[take]
            om[filled : filled + take.size] = o[take]
            filled += take.size
    y = c + (r + gap)[:, None] * om
    if size is None:
        y, gap = y[0], gap[0]
    return (y, gap) if return_gap else y


def _occupation_radius(params, gen, n):
    """Radii ``s`` in the unit ball with density proportional to ``|y|^{d-1} G(0, y)``."""
    a, b = params.alpha / 2, (params.d - params.alpha) / 2
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = 2 * (n - filled) + 16
        s = _open_uniform(gen, m) ** (1 / params.alpha)
        acc = gen.random(m) < betainc(a, b, 1 - s**2)
        take = s[acc][: n - filled]
        out[filled : filled + take.size] = take
        filled += take.size
    return out


def sample_occupation(params, ball, stream, size):
    """Positions distributed as ``G_B(c, y) dy / E tau`` with ``c`` the ball center."""
    gen = _rng(stream)
    s = _occupation_radius(params, gen, size)
    return ball.c + (ball.radius * s)[:, None] * _uniform_directions(gen, size, params.d)


# ---------------------------------------------------------------------------
# Walk on spheres


def _wos_block(params, domain, x, f, max_steps, fraction, gen, n):
    d = params.d
    pos = np.broadcast_to(np.asarray(x, float), (n, d)).copy()
    acc = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    done = np.zeros(n, bool)
    const = exit_time_constant(d, params.alpha)
    while alive.size:
        p = pos[alive]
        r = fraction * domain.delta(p)
        m = alive.size
        # occupation inside the ball: mean exit time times f at an occupation draw
        s = _occupation_radius(params, gen, m)
        z = p + (r * s)[:, None] * _uniform_directions(gen, m, d)
        acc[alive] += const * r**params.alpha * f(z)
        gap, om = _exit_from_center(params, 1.0, gen, m)
        pos[alive] = p + (r * (1 + gap))[:, None] * om
        steps[alive] += 1
        out = ~domain.contains(pos[alive])
        done[alive[out]] = True
        alive = alive[~out & (steps[alive] < max_steps)]
    ok = done
    return _Moments.of(acc[ok], int(np.sum(~ok)), float(np.sum(steps[ok])))


def wos_green_functional(params, domain, x, f, n_paths, stream, max_steps=10_000, fraction=0.99, n_threads=1):
    """Walk-on-spheres estimate of ``E^x int_0^tau f(X_t) dt`` for the driftless process.

    Each step jumps from the center of the ball ``B(x_k, fraction * delta(x_k))``
    to an exact exit draw and adds ``E tau_B f(Y)`` with ``Y`` an exact draw
    of the normalised occupation density of that ball, so every step is
    unbiased. Paths exceeding ``max_steps`` are discarded and counted.
    """
    x = np.asarray(x, float)
    if not domain.contains(x[None])[0]:
        raise DomainError("start point must lie in the domain")
    task = lambda gen, n: _wos_block(params, domain, x, f, max_steps, fraction, gen, n)
    parts, stream = _map_blocks(task, stream, n_paths, n_threads)
    return _reduce(parts).result(_provenance(stream))


# ---------------------------------------------------------------------------
# Killed Euler scheme for the drifted process


def _check_drift(b):
    if not b.locally_bounded:
        raise ParameterError("Euler paths need a locally bounded drift; singular fields are excluded")


@dataclass
class _EulerBlock:
    occupation: np.ndarray
    exit_points: np.ndarray
    exit_steps: np.ndarray
    completed: np.ndarray


def _euler_block(params, domain, b, x, f, h, max_steps, gen, n):
    d, alpha = params.d, params.alpha
    pos = np.broadcast_to(np.asarray(x, float), (n, d)).copy()
    occ = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, bool)
    alive = np.arange(n)
    scale = h ** (1 / alpha)
    zero_drift = b.is_zero
    while alive.size:
        p = pos[alive]
        if f is not None:
            occ[alive] += h * f(p)
        m = alive.size
        jump = scale * np.sqrt(2 * positive_stable(alpha / 2, gen, m))[:, None] * gen.standard_normal((m, d))
        nxt = p + jump if zero_drift else p + h * b(p) + jump
        pos[alive] = nxt
        steps[alive] += 1
        out = ~domain.contains(nxt)
        done[alive[out]] = True
        alive = alive[~out & (steps[alive] < max_steps)]
    return _EulerBlock(occ, pos, steps, done)


def _euler_blocks(params, domain, b, x, f, config, n_paths, stream, n_threads):
    _check_drift(b)
    x = np.asarray(x, float)
    if not domain.contains(x[None])[0]:
        raise DomainError("start point must lie in the domain")
    task = lambda gen, n: _euler_block(params, domain, b, x, f, config.h, config.max_steps, gen, n)
    return _map_blocks(task, stream, n_paths, n_threads)


def euler_green_functional(params, domain, b, x, f, config, n_paths, stream, n_threads=1):
    """Killed Euler estimate of ``E^x int_0^tau f(X_t) dt`` under the drift ``b``.

    The path is ``X_{k+1} = X_k + b(X_k) h + (stable increment over h)`` and
    is killed at the first position outside the domain; ``f`` is summed
    over the positions visited before that.
    """
    blocks, stream = _euler_blocks(params, domain, b, x, f, config, n_paths, stream, n_threads)
    parts = [
        _Moments.of(bl.occupation[bl.completed], int(np.sum(~bl.completed)), float(np.sum(bl.exit_steps[bl.completed])))
        for bl in blocks
    ]
    return _reduce(parts).result(_provenance(stream))


@dataclass
class RichardsonPair:
    """Estimates at ``h`` and ``h/2`` with a step-size bias estimate for the finer one."""

    coarse: EstimatorResult
    fine: EstimatorResult
    rate: float

    @property
    def bias_estimate(self):
        # E_{h/2} - E_0 ~ (E_h - E_{h/2}) / (2^rate - 1) for error ~ h^rate
        return abs(self.coarse.mean - self.fine.mean) / (2**self.rate - 1)

    @property
    def extrapolated(self):
        return self.fine.mean + (self.fine.mean - self.coarse.mean) / (2**self.rate - 1)


def euler_richardson(params, domain, b, x, f, config, n_paths, stream, rate=0.5, n_threads=1):
    """Run the Euler estimator at ``h`` and ``h/2`` on independent substreams."""
    stream = stream if isinstance(stream, RandomStream) else RandomStream(int(stream))
    coarse = euler_green_functional(params, domain, b, x, f, config, n_paths, stream.child(0), n_threads)
    fine = euler_green_functional(params, domain, b, x, f, config.halved(), n_paths, stream.child(1), n_threads)
    return RichardsonPair(coarse, fine, rate)


def default_step(params, domain, factor=1e-3):
    """``factor * (r0 / diam) * r0^alpha``, the time scale of a ball of radius ``r0``."""
    return factor * (domain.r0 / domain.diam) * domain.r0**params.alpha


def exit_law_estimate(params, domain, b, x, test_sets, config, n_paths, stream, n_threads=1):
    """Exit frequencies ``P^x(X_tau in A)`` for each set ``A`` (anything with ``contains``)."""
    blocks, stream = _euler_blocks(params, domain, b, x, None, config, n_paths, stream, n_threads)
    out = []
    for A in test_sets:
        parts = [
            _Moments.of(A.contains(bl.exit_points[bl.completed]).astype(float), int(np.sum(~bl.completed)))
            for bl in blocks
        ]
        out.append(_reduce(parts).result(_provenance(stream)))
    return out


def exact_exit_law_estimate(params, ball, x, test_sets, n_paths, stream, n_threads=1):
    """Driftless exit frequencies from a ball with the exact exit sampler."""
    task = lambda gen, n: sample_ball_exit(params, ball, x, gen, size=n)
    ys, stream = _map_blocks(task, stream, n_paths, n_threads)
    out = []
    for A in test_sets:
        parts = [_Moments.of(A.contains(y).astype(float)) for y in ys]
        out.append(_reduce(parts).result(_provenance(stream)))
    return out


@dataclass
class ComparabilityBand:
    """Ratios of drifted to driftless exit frequencies on sets with enough hits."""

    ratios: list
    used: list
    lower: float
    upper: float

    def contains(self, band):
        lo, hi = band
        return lo <= self.lower and self.upper <= hi


def comparability_band(drifted, driftless, min_count=100):
    """Ratio envelope, skipping sets where either estimate has fewer than ``min_count`` hits."""
    ratios, used = [], []
    for i, (a, b) in enumerate(zip(drifted, driftless)):
        if a.mean * a.n_samples < min_count or b.mean * b.n_samples < min_count:
            ratios.append(float("nan"))
            continue
        ratios.append(a.mean / b.mean)
        used.append(i)
    vals = [ratios[i] for i in used]
    if not vals:
        return ComparabilityBand(ratios, used, float("nan"), float("nan"))
    return ComparabilityBand(ratios, used, min(vals), max(vals))


@dataclass
class SurvivalFit:
    times: np.ndarray
    survival: list
    slope: float
    slope_stderr: float

    @property
    def decays(self):
        return self.slope + 3 * self.slope_stderr < 0


def survival_tail(params, domain, b, x, t_grid, config, n_paths, stream, n_threads=1):
    """``P^x(tau > t)`` on ``t_grid`` from killed Euler exit steps (exit time ``k h``)."""
    t_grid = np.asarray(t_grid, float)
    blocks, stream = _euler_blocks(params, domain, b, x, None, config, n_paths, stream, n_threads)
    out = []
    for t in t_grid:
        parts = []
        for bl in blocks:
            # discarded paths are still alive at max_steps * h
            tau = np.where(bl.completed, bl.exit_steps * config.h, np.inf)
            parts.append(_Moments.of((tau > t).astype(float)))
        out.append(_reduce(parts).result(_provenance(stream)))
    return out


def fit_decay_rate(t_grid, survival, min_count=30):
    """Weighted least-squares slope of ``log P(tau > t)`` against ``t``."""
    t = np.asarray(t_grid, float)
    p = np.array([s.mean for s in survival])
    n = np.array([s.n_samples for s in survival])
    keep = (p * n >= min_count) & (t > 0)
    if keep.sum() < 2:
        raise ParameterError("too few survival points with enough counts to fit a rate")
    t, p, n = t[keep], p[keep], n[keep]
    # var(log p_hat) ~ (1 - p) / (n p)
    w = n * p / np.maximum(1 - p, 1.0 / n)
    A = np.stack([np.ones_like(t), t], -1)
    cov = np.linalg.inv(A.T @ (w[:, None] * A))
    coef = cov @ (A.T @ (w * np.log(p)))
    return SurvivalFit(t_grid, survival, float(coef[1]), float(np.sqrt(cov[1, 1])))


def harnack_envelope(points, values, s, k_max):
    """``max u(x) / u(y)`` over pairs with ``|x - y| <= 2^k s`` for ``k = 0..k_max``.

    The sets of pairs grow with ``k``, so the envelope is nondecreasing.
    """
    points = np.asarray(points, float)
    values = np.asarray(values, float)
    if np.any(values <= 0):
        raise ParameterError("Harnack ratios need positive values")
    dist = np.linalg.norm(points[:, None] - points[None], axis=-1)
    ratio = values[:, None] / values[None, :]
    np.fill_diagonal(dist, np.inf)
    env = []
    for k in range(k_max + 1):
        mask = dist <= 2.0**k * s
        env.append(float(ratio[mask].max()) if mask.any() else 1.0)
    return env
