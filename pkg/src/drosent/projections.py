"""Euclidean projections onto the scaled simplex, Lp balls and their intersections.

All kernels are pure functions of their inputs and return fresh arrays.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from drosent.errors import InvalidInputError, InvalidSpecError, NumericalFailureError

SIMPLEX = "simplex"
LP_BALL = "lp"

LP_OUTER_TOL = 1e-10
LP_INNER_TOL = 1e-12


@dataclass(frozen=True)
class ProjectionSpec:
    """Which convex set to project onto.

    ``kind`` is ``"simplex"`` for the scaled simplex ``{w >= 0, sum(w) = radius}``
    or ``"lp"`` for the ball ``{x : ||x||_p <= radius}``.  ``p`` is ignored for
    the simplex.
    """

    kind: str
    radius: float
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in (SIMPLEX, LP_BALL):
            raise InvalidSpecError(f"unknown set kind {self.kind!r}")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise InvalidSpecError(f"radius must be finite and > 0, got {self.radius!r}")
        if not (math.isfinite(self.p) and self.p >= 1):
            raise InvalidSpecError(f"p must be finite and >= 1, got {self.p!r}")

    @classmethod
    def simplex(cls, radius=1.0):
        return cls(SIMPLEX, float(radius))

    @classmethod
    def lp_ball(cls, p, radius):
        return cls(LP_BALL, float(radius), float(p))

    @classmethod
    def from_name(cls, name, radius):
        """Build a spec from a short name: ``simplex``, ``l1``, ``l2``, ``l4`` or ``l<p>``."""
        key = name.strip().lower()
        if key == SIMPLEX:
            return cls.simplex(radius)
        if key.startswith("l"):
            try:
                p = float(key[1:])
            except ValueError:
                p = None
            if p is not None and np.isfinite(p) and p >= 1:
                return cls.lp_ball(p, radius)
        raise InvalidSpecError(f"unknown set name {name!r} (expected simplex, l1, l2, l4 or l<p>)")

    @property
    def name(self):
        if self.kind == SIMPLEX:
            return SIMPLEX
        return f"l{self.p:g}"

    def with_radius(self, radius):
        return ProjectionSpec(self.kind, float(radius), self.p)

    def violation(self, x, center=None):
        """How far ``x`` is from satisfying the set constraint (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        if center is not None:
            x = x - center
        if self.kind == SIMPLEX:
            return max(abs(x.sum() - self.radius), float(np.max(-x, initial=0.0)))
        return max(lp_norm(x, self.p) - self.radius, 0.0)

    def contains(self, x, tol=1e-8, center=None):
        return self.violation(x, center) <= tol


def lp_norm(x, p):
    x = np.abs(np.asarray(x, dtype=float))
    if x.size == 0:
        return 0.0
    if p == 1:
        return float(x.sum())
    if p == 2:
        return float(np.linalg.norm(x))
    scale = x.max()
    if scale == 0:
        return 0.0
    return float(scale * np.sum((x / scale) ** p) ** (1.0 / p))


def _as_vector(v):
    v = np.array(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector has non-finite components")
    return v


def _check_radius(radius):
    if not (math.isfinite(radius) and radius > 0):
        raise InvalidSpecError(f"radius must be finite and > 0, got {radius!r}")


def project_simplex(v, radius=1.0):
    """Project ``v`` onto ``{w : w >= 0, sum(w) = radius}`` by sort-and-threshold."""
    v = _as_vector(v)
    _check_radius(radius)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - radius
    k = np.arange(1, v.size + 1)
    # ">=" keeps components equal to the threshold in the support.
    support = np.nonzero(u - css / k >= 0)[0]
    rho = support[-1] + 1
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def project_l1_ball(v, radius):
    v = _as_vector(v)
    _check_radius(radius)
    a = np.abs(v)
    if a.sum() <= radius:
        return v
    return np.sign(v) * project_simplex(a, radius)


def project_l2_ball(v, radius):
    v = _as_vector(v)
    _check_radius(radius)
    norm = np.linalg.norm(v)
    if norm <= radius:
        return v
    return v * (radius / norm)


def _solve_coordinates(a, lam, p, max_inner):
    """Solve ``t + lam*p*t**(p-1) = a`` for every coordinate, with ``0 <= t <= a``.

    The left side is increasing in ``t``, so each root is bracketed by
    ``[0, a]``; Newton steps that leave the bracket fall back to bisection.
    """
    lo = np.zeros_like(a)
    hi = a.copy()
    t = a.copy()
    if lam > 0:
        # (a/(lam*p))**(1/(p-1)) also bounds the root from above
        t = np.minimum(t, (a / (lam * p)) ** (1.0 / (p - 1)))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(max_inner):
            f = t + lam * p * t ** (p - 1) - a
            hi = np.where(f > 0, t, hi)
            lo = np.where(f < 0, t, lo)
            slope = 1.0 + lam * p * (p - 1) * t ** (p - 2)
            t_new = t - f / slope
            bad = ~np.isfinite(t_new) | (t_new < lo) | (t_new > hi)
            t_new = np.where(bad, 0.5 * (lo + hi), t_new)
            step = np.max(np.abs(t_new - t))
            t = t_new
            if step <= LP_INNER_TOL:
                return t
    raise NumericalFailureError("Lp coordinate solve did not converge", residual=float(step))


def project_lp_ball(v, p, radius, max_outer=200, max_inner=100):
    """Project ``v`` onto ``{x : ||x||_p <= radius}`` for any ``p >= 1``.

    Outside the ball the projection satisfies
    ``x_i + lam*p*sign(x_i)*|x_i|**(p-1) = v_i`` for a multiplier ``lam > 0``;
    the per-coordinate equations are solved for fixed ``lam`` and ``lam`` is
    found by bracketed root finding on ``||x(lam)||_p = radius``.
    """
    v = _as_vector(v)
    _check_radius(radius)
    if not (math.isfinite(p) and p >= 1):
        raise InvalidSpecError(f"p must be >= 1, got {p!r}")
    if p == 1:
        return project_l1_ball(v, radius)
    if lp_norm(v, p) <= radius:
        return v

    # the problem is scale covariant: solve with max|v| = 1
    scale = np.max(np.abs(v))
    a = np.abs(v) / scale
    r = radius / scale

    def gap(lam):
        return lp_norm(_solve_coordinates(a, lam, p, max_inner), p) - r

    # at this multiplier every coordinate is below (a/(lam*p))**(1/(p-1)), whose norm is r
    hi = (lp_norm(a ** (1.0 / (p - 1)), p) / r) ** (p - 1) / p
    for _ in range(max_outer):
        if gap(hi) <= 0:
            break
        hi *= 2.0
    else:
        raise NumericalFailureError("could not bracket the Lp multiplier", residual=gap(hi))

    lam, info = brentq(gap, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                       maxiter=max_outer, full_output=True, disp=False)
    t = _solve_coordinates(a, lam, p, max_inner)
    norm = lp_norm(t, p)
    if not info.converged or abs(norm - r) > LP_OUTER_TOL:
        raise NumericalFailureError("Lp multiplier search did not converge", residual=abs(norm - r))
    if norm > r:
        t *= r / norm
    return np.sign(v) * t * scale


def project(v, spec, center=None):
    """Project onto the set described by ``spec``, optionally translated to ``center``."""
    v = _as_vector(v)
    if center is not None:
        center = np.asarray(center, dtype=float)
        return project(v - center, spec) + center
    if spec.kind == SIMPLEX:
        return project_simplex(v, spec.radius)
    if spec.p == 1:
        return project_l1_ball(v, spec.radius)
    if spec.p == 2:
        return project_l2_ball(v, spec.radius)
    return project_lp_ball(v, spec.p, spec.radius)


def project_intersection(v, a, b, center_b=None, tol=1e-9, max_iter=10_000):
    """Project onto ``a`` intersected with ``b`` (translated to ``center_b``) by Dykstra's method.

    The caller guarantees the intersection is nonempty.
    """
    x = _as_vector(v)
    corr_a = np.zeros_like(x)
    corr_b = np.zeros_like(x)
    residual = np.inf
    for _ in range(max_iter):
        y = project(x + corr_a, a)
        corr_a = x + corr_a - y
        x_new = project(y + corr_b, b, center_b)
        corr_b = y + corr_b - x_new
        residual = max(np.linalg.norm(x_new - x), np.linalg.norm(x_new - y))
        x = x_new
        if residual <= tol:
            return x
    raise NumericalFailureError("Dykstra projection did not converge", residual=float(residual))


# -- brute-force oracle -------------------------------------------------------

MAX_GRID_DIM = 3
MAX_ORACLE_DIM = 64


def _best(candidates, v):
    d = np.sum((candidates - v) ** 2, axis=1)
    i = int(np.argmin(d))
    return candidates[i]


def _grid_simplex(v, radius, resolution):
    n = v.size
    if n == 1:
        return np.array([radius])
    steps = 20
    h = radius / steps
    axes = [np.arange(steps + 1) * h] * (n - 1)
    best = None
    while True:
        head = np.array(list(itertools.product(*axes)))
        last = radius - head.sum(axis=1)
        keep = (last >= -1e-12) & np.all(head >= 0, axis=1)
        cand = np.column_stack([head[keep], np.maximum(last[keep], 0.0)])
        best = _best(cand, v)
        if h <= resolution:
            return best
        h /= 4
        offsets = np.arange(-12, 13) * h
        axes = [best[i] + offsets for i in range(n - 1)]


def _sphere_directions(angles, n):
    if n == 2:
        (th,) = angles
        return np.column_stack([np.cos(th), np.sin(th)])
    th, ph = angles
    return np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def _grid_lp_boundary(v, p, radius, resolution):
    n = v.size
    if n == 1:
        return _best(np.array([[radius], [-radius]]), v)
    steps = 72
    spans = [(0.0, 2 * np.pi)] if n == 2 else [(0.0, np.pi), (0.0, 2 * np.pi)]
    axes = [np.linspace(lo, hi, steps, endpoint=False) for lo, hi in spans]
    h = 2 * np.pi / steps
    while True:
        grid = np.array(list(itertools.product(*axes)))
        d = _sphere_directions(grid.T, n)
        norms = np.sum(np.abs(d) ** p, axis=1) ** (1.0 / p)
        cand = radius * d / norms[:, None]
        i = int(np.argmin(np.sum((cand - v) ** 2, axis=1)))
        if h * radius <= resolution:
            return cand[i]
        h /= 4
        offsets = np.arange(-12, 13) * h
        axes = [grid[i, j] + offsets for j in range(grid.shape[1])]


def _linear_minimizer(g, spec):
    """Point of the set minimizing ``g . s``."""
    if spec.kind == SIMPLEX:
        s = np.zeros_like(g)
        s[np.argmin(g)] = spec.radius
        return s
    if not np.any(g):
        return np.zeros_like(g)
    if spec.p == 1:
        s = np.zeros_like(g)
        j = np.argmax(np.abs(g))
        s[j] = -spec.radius * np.sign(g[j])
        return s
    q = spec.p / (spec.p - 1)
    w = np.sign(g) * np.abs(g / np.max(np.abs(g))) ** (q - 1)
    return -spec.radius * w / lp_norm(w, spec.p)


def _frank_wolfe(v, spec, iterations=50_000):
    x = _linear_minimizer(-v, spec)
    for _ in range(iterations):
        g = x - v
        d = _linear_minimizer(g, spec) - x
        denom = d @ d
        if denom == 0:
            break
        step = min(max(-(g @ d) / denom, 0.0), 1.0)
        if step == 0:
            break
        x = x + step * d
    return x


def brute_force_project(v, spec, grid_resolution=1e-4):
    """Oracle projection that never calls the exact kernels above.

    Up to three dimensions this is a coarse-to-fine grid search over the set
    (the boundary surface for balls); up to 64 dimensions it falls back to a
    long Frank-Wolfe run, which only needs linear minimization over the set.
    """
    v = _as_vector(v)
    n = v.size
    if n > MAX_ORACLE_DIM:
        raise InvalidInputError(f"brute-force oracle limited to n <= {MAX_ORACLE_DIM}, got {n}")
    if n > MAX_GRID_DIM:
        if spec.kind == LP_BALL and lp_norm(v, spec.p) <= spec.radius:
            return v
        return _frank_wolfe(v, spec)
    if spec.kind == SIMPLEX:
        return _grid_simplex(v, spec.radius, grid_resolution)
    if lp_norm(v, spec.p) <= spec.radius:
        return v
    return _grid_lp_boundary(v, spec.p, spec.radius, grid_resolution)
