"""Worst-case reweighting of a batch of per-example losses.

The adversary picks sample weights ``q`` from the probability simplex,
optionally restricted to an Lp ball of radius ``R_w`` around the uniform
weights, and the robust loss is ``max_q q . losses``.  By Danskin's theorem
the gradient of the robust loss is the per-example gradients weighted by
the maximizing ``q``.

Two solvers are provided.  ``"ascent"`` is projected ascent from uniform
weights with Dykstra projections onto the intersection; it is simple but
slow for non-Euclidean balls.  ``"dual"`` (the default) solves the
Lagrangian conditions directly: one multiplier for the ball, one for the
simplex sum, and a closed form per coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from drosent.errors import InvalidInputError, InvalidSpecError, NumericalFailureError
from drosent.projections import LP_BALL, ProjectionSpec, lp_norm, project_intersection

PROBABILITY_SIMPLEX = ProjectionSpec.simplex(1.0)
_RTOL = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class UncertaintySet:
    """Simplex over batch indices, intersected with ``ball`` centred at uniform when given."""

    ball: ProjectionSpec | None = None

    def __post_init__(self):
        if self.ball is not None and self.ball.kind != LP_BALL:
            raise InvalidSpecError("the uncertainty ball must be an Lp ball")

    @classmethod
    def from_spec(cls, spec):
        """A simplex spec adds no constraint beyond the base simplex."""
        if spec is None or spec.kind != LP_BALL:
            return cls(None)
        return cls(spec)

    def covers_simplex(self, n):
        """True when every simplex point lies in the ball (vertices are the farthest points)."""
        if self.ball is None:
            return True
        vertex = np.full(n, -1.0 / n)
        vertex[0] += 1.0
        return lp_norm(vertex, self.ball.p) <= self.ball.radius

    def contains(self, q, tol=1e-8):
        q = np.asarray(q, dtype=float)
        if not PROBABILITY_SIMPLEX.contains(q, tol):
            return False
        if self.ball is None:
            return True
        return self.ball.contains(q, tol, center=np.full(q.size, 1.0 / q.size))


def _check_losses(losses):
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or losses.size == 0:
        raise InvalidInputError("worst-case weights need a non-empty 1-D loss vector")
    if not np.all(np.isfinite(losses)):
        raise InvalidInputError("losses must be finite")
    return losses


def _top_vertex(losses):
    top = losses == losses.max()
    return top / top.sum()


def _ascent(losses, ball, tol, max_iter):
    n = losses.size
    uniform = np.full(n, 1.0 / n)
    step = 1.0 / (1.0 + np.linalg.norm(losses))
    q = uniform
    moved = np.inf
    for _ in range(max_iter):
        q_new = project_intersection(q + step * losses, PROBABILITY_SIMPLEX, ball,
                                     center_b=uniform, tol=tol * 1e-3)
        moved = np.linalg.norm(q_new - q)
        q = q_new
        if moved <= tol:
            return q
    raise NumericalFailureError("worst-case weight ascent did not converge", residual=float(moved))


def _l1_transfer(losses, radius):
    """Move up to ``radius/2`` of mass from the smallest losses onto the largest.

    Tied groups share their transfer equally, matching the symmetric limit
    of the ascent from uniform.
    """
    n = losses.size
    q = np.full(n, 1.0 / n)
    top = losses == losses.max()
    budget = min(radius / 2.0, (n - top.sum()) / n)
    moved = 0.0
    for value in np.unique(losses[~top]):
        if budget - moved <= 0:
            break
        group = losses == value
        take = min(budget - moved, group.sum() / n)
        q[group] -= take / group.sum()
        moved += take
    q[top] += moved / top.sum()
    return np.maximum(q, 0.0)


def _lp_dual(losses, ball):
    """Ball-active maximizer for ``p > 1``.

    For multipliers ``mu`` (ball) and ``tau`` (sum) the maximizer is
    ``q_i = max(0, u_i + phi((losses_i - tau) / mu))`` with
    ``phi(z) = sign(z)*|z|**(1/(p-1))``.  ``tau`` makes the weights sum to
    one and ``mu`` puts them on the ball boundary; both are monotone 1-D roots.
    """
    n = losses.size
    p = ball.p
    u = 1.0 / n
    lo_l, hi_l = losses.min(), losses.max()
    span = hi_l - lo_l
    expo = 1.0 / (p - 1.0)

    def weights(log_mu):
        mu = np.exp(log_mu)

        def excess(tau):
            z = (losses - tau) / mu
            return np.maximum(0.0, u + np.sign(z) * np.abs(z) ** expo).sum() - 1.0

        tau = brentq(excess, lo_l - span, hi_l, xtol=1e-300, rtol=_RTOL, maxiter=500)
        z = (losses - tau) / mu
        q = np.maximum(0.0, u + np.sign(z) * np.abs(z) ** expo)
        return q / q.sum()

    def gap(log_mu):
        return lp_norm(weights(log_mu) - u, p) - ball.radius

    lo, hi = np.log(span) - 1.0, np.log(span) + 1.0
    for _ in range(200):
        if gap(lo) > 0:
            break
        lo -= 2.0
    for _ in range(200):
        if gap(hi) < 0:
            break
        hi += 2.0
    log_mu = brentq(gap, lo, hi, xtol=1e-14, rtol=_RTOL, maxiter=500)
    q = weights(log_mu)
    # Near a support change the weights have unbounded slope in mu, so the
    # root can overshoot the boundary slightly; pull it back toward uniform,
    # which keeps the weights on the simplex.
    norm = lp_norm(q - u, p)
    if norm > ball.radius:
        q = u + (q - u) * (ball.radius / norm)
    residual = lp_norm(q - u, p) - ball.radius
    if residual > 1e-9:
        raise NumericalFailureError("dual worst-case solve left the ball", residual=residual)
    return q


def worst_case_weights(losses, uncertainty=UncertaintySet(), tol=1e-9, max_iter=10_000,
                       method="dual"):
    """Maximize ``q . losses`` over the uncertainty set.

    Non-unique maximizers resolve to the limit of projected ascent started at
    uniform weights: uniform for constant losses, uniform over the largest
    losses on the full simplex.  ``method="ascent"`` runs that ascent
    literally; ``"dual"`` reaches the same point directly.
    """
    losses = _check_losses(losses)
    n = losses.size
    if np.ptp(losses) == 0:
        return np.full(n, 1.0 / n)
    if uncertainty.covers_simplex(n):
        return _top_vertex(losses)
    if method == "ascent":
        return _ascent(losses, uncertainty.ball, tol, max_iter)
    if method != "dual":
        raise InvalidSpecError(f"unknown worst-case solver {method!r}")
    ball = uncertainty.ball
    vertex = _top_vertex(losses)
    if ball.contains(vertex, 0.0, center=np.full(n, 1.0 / n)):
        return vertex
    if ball.p == 1:
        return _l1_transfer(losses, ball.radius)
    return _lp_dual(losses, ball)


def robust_loss(losses, uncertainty=UncertaintySet(), **kwargs):
    losses = _check_losses(losses)
    return float(worst_case_weights(losses, uncertainty, **kwargs) @ losses)


def robust_loss_weights_for_backward(losses, uncertainty=UncertaintySet(), **kwargs):
    """Per-example gradient weights of the robust loss: the maximizing ``q`` itself."""
    return worst_case_weights(losses, uncertainty, **kwargs)
