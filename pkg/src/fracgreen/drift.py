"""Drift fields and their Kato-class moduli."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, QuadratureError
from .quad import RuleSize, ball_patch_rule


@dataclass(frozen=True)
class DriftField:
    """Vector field ``b`` of one of four kinds.

    * ``zero``: ``b = 0``
    * ``constant``: ``b = vector``
    * ``ou``: ``b(z) = k (z - center)``
    * ``singular``: ``b(z) = scale |z - c|^{p - 1} (z - c)`` with
      ``p = 1 - alpha + eps``, so ``|b| = scale |z - c|^p``
    """

    kind: str
    d: int
    vector: tuple = ()
    k: float = 0.0
    eps: float = 0.0
    alpha: float = 1.5
    scale: float = 1.0
    center: tuple = ()

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "ou", "singular"):
            raise ParameterError(f"unknown drift kind {self.kind!r}")
        c = tuple(float(v) for v in self.center) if len(self.center) else (0.0,) * self.d
        if len(c) != self.d:
            raise ParameterError("drift center has the wrong dimension")
        object.__setattr__(self, "center", c)
        if self.kind == "constant":
            v = tuple(float(t) for t in self.vector)
            if len(v) != self.d:
                raise ParameterError("constant drift vector has the wrong dimension")
            object.__setattr__(self, "vector", v)

    # constructors -----------------------------------------------------------

    @classmethod
    def zero(cls, d):
        return cls("zero", d)

    @classmethod
    def constant(cls, vector):
        return cls("constant", len(vector), vector=tuple(vector))

    @classmethod
    def ornstein_uhlenbeck(cls, k, d, center=()):
        return cls("ou", d, k=float(k), center=tuple(center))

    @classmethod
    def singular_power(cls, eps, alpha, d, center=(), scale=1.0, strict=True):
        """``|b(z)| = scale |z - c|^{1 - alpha + eps}``.

        With ``strict`` the exponent must satisfy ``0 < eps < alpha - 1``;
        ``strict=False`` admits any ``eps < alpha - 1`` for negative examples.
        """
        if not eps < alpha - 1 or (strict and not eps > 0):
            raise ParameterError(f"singular drift needs 0 < eps < alpha - 1, got eps={eps}")
        return cls("singular", d, eps=float(eps), alpha=float(alpha), scale=float(scale), center=tuple(center))

    # evaluation -------------------------------------------------------------

    @property
    def c(self):
        return np.asarray(self.center)

    @property
    def power(self):
        return 1.0 - self.alpha + self.eps

    @property
    def is_zero(self):
        return (
            self.kind == "zero"
            or (self.kind == "constant" and not any(self.vector))
            or (self.kind == "ou" and self.k == 0)
            or (self.kind == "singular" and self.scale == 0)
        )

    @property
    def locally_bounded(self):
        return self.kind != "singular"

    def __call__(self, z):
        z = np.asarray(z, float)
        if self.kind == "zero":
            return np.zeros(z.shape)
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(self.vector), z.shape).copy()
        if self.kind == "ou":
            return self.k * (z - self.c)
        diff = z - self.c
        r = np.sqrt(np.einsum("...i,...i->...", diff, diff))
        with np.errstate(divide="ignore", invalid="ignore"):
            f = self.scale * r ** (self.power - 1)
        return f[..., None] * diff

    def magnitude(self, z):
        z = np.asarray(z, float)
        if self.kind == "singular":
            diff = z - self.c
            r = np.sqrt(np.einsum("...i,...i->...", diff, diff))
            with np.errstate(divide="ignore"):
                return abs(self.scale) * r**self.power
        b = self(z)
        return np.sqrt(np.einsum("...i,...i->...", b, b))

    def sup_on(self, domain):
        """Supremum of ``|b|`` over ``domain`` (``inf`` for singular fields with the center inside)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return float(np.linalg.norm(self.vector))
        far = max(float(np.linalg.norm(b.c - self.c)) + b.radius for b in domain.balls())
        if self.kind == "ou":
            return abs(self.k) * far
        return np.inf

    def candidate_points(self):
        """Points where the field is worst, to be added to any probe set."""
        if self.kind == "singular":
            return self.c[None, :]
        return np.empty((0, self.d))

    def describe(self):
        if self.kind == "zero":
            return "zero"
        if self.kind == "constant":
            return "constant(" + ",".join(f"{v:g}" for v in self.vector) + ")"
        if self.kind == "ou":
            return f"ou(k={self.k:g})"
        return f"singular(eps={self.eps:g},scale={self.scale:g})"


# ---------------------------------------------------------------------------
# Kato moduli


def _moduli(params, b, probes, r, gamma, level):
    """Singular moments ``int_{B(x, r)} |b(y)| |x - y|^{gamma - d} dy`` for each probe."""
    d = params.d
    s0 = d - gamma
    probes = np.atleast_2d(np.asarray(probes, float))
    out = np.empty(len(probes))
    size = RuleSize.level(level)
    groups = {}
    # |b| is singular (or has a cone point) at the field center
    feature = -b.power if b.kind == "singular" else -1.0
    if b.kind in ("singular", "ou"):
        dist = np.linalg.norm(probes - b.c, axis=-1)
        at_center = dist <= 1e-12 * r
        near = (~at_center) & (dist < r * (1 - 1e-9))
        groups["center"] = np.flatnonzero(at_center)
        groups["near"] = np.flatnonzero(near)
        groups["plain"] = np.flatnonzero(~at_center & ~near)
    else:
        groups["plain"] = np.arange(len(probes))
    for name, idx in groups.items():
        if idx.size == 0:
            continue
        for start in range(0, idx.size, 64):
            sel = idx[start : start + 64]
            x = probes[sel]
            if name == "center":
                s = s0 + feature
                if s >= d:
                    out[sel] = np.inf
                    continue
                pts, expo = x[:, None, :], [s]
            elif name == "near":
                pts = np.stack([x, np.broadcast_to(b.c, x.shape)], axis=1)
                expo = [s0, feature]
            else:
                pts, expo = x[:, None, :], [s0]
            # offsets from the probe keep full precision near the singularity
            off, w = ball_patch_rule(np.zeros(d), r, pts - x[:, None, :], expo, 0.0, size)
            z = off + x[:, None, :]
            vals = b.magnitude(z) * np.linalg.norm(off, axis=-1) ** (gamma - d)
            out[sel] = np.sum(w * vals, axis=1)
    return out


def kato_modulus(params, b, r, probe_points, exponent=None, rel_error=1e-4, max_level=6):
    """``max_x int_{B(x, r)} |b(y)| |x - y|^{gamma - d} dy`` over probes plus the field's worst points.

    ``exponent`` is ``gamma`` and defaults to ``alpha - 1``.
    """
    if not r > 0:
        raise ParameterError("radius must be positive")
    gamma = params.alpha - 1 if exponent is None else float(exponent)
    if b.is_zero:
        return 0.0
    probes = np.atleast_2d(np.asarray(probe_points, float))
    if probes.size == 0:
        raise ParameterError("probe set must be nonempty")
    probes = np.concatenate([probes, b.candidate_points()])
    prev = _moduli(params, b, probes, r, gamma, 1)
    for level in range(2, max_level + 1):
        cur = _moduli(params, b, probes, r, gamma, level)
        top = np.max(cur)
        if not np.isfinite(top):
            return float(top)
        # only probes that can carry the supremum need to be resolved
        err = np.where(cur >= 0.5 * top, np.abs(cur - prev), 0.0)
        if np.max(err) <= rel_error * top:
            return float(top)
        prev = cur
    worst = int(np.argmax(err))
    raise QuadratureError(
        "Kato modulus quadrature did not converge",
        value=float(top),
        abs_error=float(err[worst]),
        context={"probe": probes[worst].tolist(), "radius": r},
    )


def constant_field_modulus(params, magnitude, r, exponent=None):
    """Closed form ``sigma_{d-1} |b| r^gamma / gamma`` for a constant field."""
    from .kernels import sphere_area

    gamma = params.alpha - 1 if exponent is None else float(exponent)
    return sphere_area(params.d) * magnitude * r**gamma / gamma


@dataclass
class KatoReport:
    radii: list
    moduli: list
    extrapolated_limit: float
    decision: str  # "in class", "not in class" or "inconclusive"
    slope: float
    probe_sensitivity: list = field(default_factory=list)

    @property
    def in_class(self):
        return self.decision == "in class"


def probe_grid(domain, per_axis=16, cap=4096, n_boundary=32):
    """Grid points inside ``domain`` plus boundary samples, capped in count."""
    d = domain.dim
    per_axis = max(2, min(per_axis, int(cap ** (1.0 / d))))
    lo = np.min([b.c - b.radius for b in domain.balls()], axis=0)
    hi = np.max([b.c + b.radius for b in domain.balls()], axis=0)
    axes = [np.linspace(lo[i], hi[i], per_axis + 2)[1:-1] for i in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    grid = grid[domain.contains(grid)]
    bnd, _ = domain.boundary_samples(n_boundary)
    return np.concatenate([grid, bnd])[:cap]


def is_kato(params, b, domain, tolerance=1e-2, radii=None, per_axis=16, exponent=None):
    """Evaluate ``K_r`` on a geometric radius sequence and classify the trend.

    The limit is extrapolated from the last three radii by Aitken's formula;
    the field is declared in class when the limit is below ``tolerance``
    times the largest modulus and the moduli decrease with ``r``.
    """
    if radii is None:
        radii = domain.diam / 2 * 0.5 ** np.arange(0, 10)
    radii = sorted((float(r) for r in radii), reverse=True)
    probes = probe_grid(domain, per_axis)
    coarse = probe_grid(domain, max(2, per_axis // 2))
    moduli, sens = [], []
    for r in radii:
        k = kato_modulus(params, b, r, probes, exponent)
        kc = kato_modulus(params, b, r, coarse, exponent)
        moduli.append(k)
        sens.append(0.0 if k == kc else abs(k - kc) / abs(k) if np.isfinite(k) and k > 0 else np.inf)
    m = np.asarray(moduli)
    if b.is_zero:
        return KatoReport(radii, moduli, 0.0, "in class", np.inf, sens)
    if not np.all(np.isfinite(m)):
        return KatoReport(radii, moduli, np.inf, "not in class", np.nan, sens)
    k1, k2, k3 = m[-3:]
    denom = k1 + k3 - 2 * k2
    limit = (k1 * k3 - k2**2) / denom if denom != 0 else k3
    limit = max(limit, 0.0) if denom > 0 else np.inf
    lr = np.log(np.asarray(radii[-4:]))
    slope = float(np.polyfit(lr, np.log(m[-4:]), 1)[0])
    monotone = np.all(np.diff(m) <= 1e-9 * m[:-1])
    if monotone and slope > 0 and limit <= tolerance * m[0]:
        decision = "in class"
    elif slope <= 0 or limit > tolerance * m[0] and not monotone:
        decision = "not in class"
    else:
        decision = "inconclusive"
    return KatoReport(radii, moduli, float(limit), decision, slope, sens)
