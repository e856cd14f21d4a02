"""Domains with closed-form distance to the complement.

Only shapes whose boundary distance, tangent-ball radius and diameter are
known exactly are provided: balls, finite unions of well separated balls and
annuli. Points are arrays whose last axis has length ``d``; every method
broadcasts over leading axes.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ParameterError


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ParameterError(f"points must have last dimension {d}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Ball:
    """Open ball ``B(center, radius)``."""

    center: tuple
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        object.__setattr__(self, "center", c)
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise ParameterError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return len(self.center)

    @property
    def c(self):
        return np.asarray(self.center)

    @property
    def r0(self):
        return self.radius

    @property
    def diam(self):
        return 2.0 * self.radius

    def delta(self, x):
        x = _as_points(x, self.dim)
        return np.maximum(self.radius - np.linalg.norm(x - self.c, axis=-1), 0.0)

    def dist_to_closure(self, x):
        x = _as_points(x, self.dim)
        return np.maximum(np.linalg.norm(x - self.c, axis=-1) - self.radius, 0.0)

    def contains(self, x):
        x = _as_points(x, self.dim)
        return np.linalg.norm(x - self.c, axis=-1) < self.radius

    def boundary_samples(self, n):
        q, normal = _sphere_points(self.dim, n)
        return self.c + self.radius * q, normal

    def balls(self):
        return [self]

    def scaled(self, factor):
        return Ball(tuple(factor * np.asarray(self.center)), factor * self.radius)


@dataclass(frozen=True)
class DisjointBallUnion:
    """Finite union of balls whose closures are pairwise disjoint."""

    members: tuple = field(default_factory=tuple)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ParameterError("a ball union needs at least one ball")
        d = members[0].dim
        for b in members:
            if b.dim != d:
                raise ParameterError("all balls in a union must share the dimension")
        for a, b in combinations(members, 2):
            if self._gap(a, b) <= 0:
                raise ParameterError("balls in a union must have disjoint closures")
        object.__setattr__(self, "members", members)

    @staticmethod
    def _gap(a, b):
        return float(np.linalg.norm(a.c - b.c)) - a.radius - b.radius

    @property
    def dim(self):
        return self.members[0].dim

    @property
    def r0(self):
        r = min(b.radius for b in self.members)
        gaps = [self._gap(a, b) for a, b in combinations(self.members, 2)]
        if gaps:
            r = min(r, 0.5 * min(gaps))
        return r

    @property
    def diam(self):
        best = max(b.diam for b in self.members)
        for a, b in combinations(self.members, 2):
            best = max(best, float(np.linalg.norm(a.c - b.c)) + a.radius + b.radius)
        return best

    def delta(self, x):
        return np.max([b.delta(x) for b in self.members], axis=0)

    def dist_to_closure(self, x):
        return np.min([b.dist_to_closure(x) for b in self.members], axis=0)

    def contains(self, x):
        return np.any([b.contains(x) for b in self.members], axis=0)

    def boundary_samples(self, n):
        per = max(1, n // len(self.members))
        pts, normals = zip(*(b.boundary_samples(per) for b in self.members))
        return np.concatenate(pts), np.concatenate(normals)

    def balls(self):
        return list(self.members)


@dataclass(frozen=True)
class Annulus:
    """Open annulus ``r_in < |x - center| < r_out``."""

    center: tuple
    r_in: float
    r_out: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        if not (0 < self.r_in < self.r_out):
            raise ParameterError(f"annulus needs 0 < r_in < r_out, got {self.r_in}, {self.r_out}")
        object.__setattr__(self, "r_in", float(self.r_in))
        object.__setattr__(self, "r_out", float(self.r_out))

    @property
    def dim(self):
        return len(self.center)

    @property
    def c(self):
        return np.asarray(self.center)

    @property
    def r0(self):
        return min(self.r_in, 0.5 * (self.r_out - self.r_in))

    @property
    def diam(self):
        return 2.0 * self.r_out

    def delta(self, x):
        x = _as_points(x, self.dim)
        rho = np.linalg.norm(x - self.c, axis=-1)
        return np.maximum(np.minimum(rho - self.r_in, self.r_out - rho), 0.0)

    def dist_to_closure(self, x):
        x = _as_points(x, self.dim)
        rho = np.linalg.norm(x - self.c, axis=-1)
        return np.maximum(np.maximum(self.r_in - rho, rho - self.r_out), 0.0)

    def contains(self, x):
        x = _as_points(x, self.dim)
        rho = np.linalg.norm(x - self.c, axis=-1)
        return (rho > self.r_in) & (rho < self.r_out)

    def boundary_samples(self, n):
        q, normal = _sphere_points(self.dim, max(1, n // 2))
        outer = self.c + self.r_out * q
        inner = self.c + self.r_in * q
        # outward normal of the annulus points toward the center on the inner sphere
        return np.concatenate([outer, inner]), np.concatenate([normal, -normal])

    def balls(self):
        return [Ball(self.center, self.r_out)]


Domain = Ball | DisjointBallUnion | Annulus


def _sphere_points(d, n):
    """Deterministic, roughly uniform points on the unit sphere."""
    if d == 2:
        theta = 2 * np.pi * (np.arange(n) + 0.5) / n
        q = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        # Fibonacci lattice on S^2, Gaussian normalisation otherwise
        if d == 3:
            i = np.arange(n) + 0.5
            phi = np.arccos(1 - 2 * i / n)
            theta = np.pi * (1 + 5**0.5) * i
            q = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1)
        else:
            g = np.random.default_rng(12345).standard_normal((n, d))
            q = g / np.linalg.norm(g, axis=-1, keepdims=True)
    return q, q.copy()


def delta(domain, x):
    """Distance from ``x`` to the complement of ``domain`` (zero outside)."""
    return domain.delta(x)


def distortion(domain):
    """Ratio ``diam / r0``; at least 2 for every supported domain."""
    return domain.diam / domain.r0


def c11_check(domain, r, n_boundary_samples=256, margin=-1e-12):
    """Check numerically that ``domain`` is C^{1,1} at scale ``r``.

    At each sampled boundary point Q the inner ball ``B(Q - r n, r)`` must lie
    in the domain and the outer ball ``B(Q + r n, r)`` in its complement.
    Returns ``(ok, witness)`` where ``witness`` is the worst boundary point
    (``None`` when the check passes).
    """
    if r <= 0:
        raise ParameterError("tangent-ball radius must be positive")
    q, normal = domain.boundary_samples(n_boundary_samples)
    inner_c = q - r * normal
    outer_c = q + r * normal
    inner_slack = domain.delta(inner_c) - r
    outer_slack = domain.dist_to_closure(outer_c) - r
    # a far-side component could still intrude; the distance functions are exact
    slack = np.minimum(inner_slack, outer_slack)
    worst = int(np.argmin(slack))
    if slack[worst] >= margin:
        return True, None
    return False, q[worst]
