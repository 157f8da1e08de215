"""Shared test utilities: random feasible points and finite differences."""

import numpy as np

from drosent.projections import SIMPLEX, ProjectionSpec, lp_norm

SPECS = {
    "simplex": lambda r: ProjectionSpec.simplex(r),
    "l1": lambda r: ProjectionSpec.lp_ball(1, r),
    "l2": lambda r: ProjectionSpec.lp_ball(2, r),
    "l4": lambda r: ProjectionSpec.lp_ball(4, r),
}


def random_feasible(spec, n, rng, count):
    """``count`` random points of the set, rows of a (count, n) array."""
    if spec.kind == SIMPLEX:
        return spec.radius * rng.dirichlet(np.ones(n), size=count)
    d = rng.standard_normal((count, n))
    norms = np.array([lp_norm(row, spec.p) for row in d])
    return d / norms[:, None] * spec.radius * rng.random((count, 1))


def random_vector(rng, n):
    """Mix of scales so both interior and exterior points occur."""
    return rng.standard_normal(n) * rng.choice([0.1, 1.0, 5.0, 20.0])


def central_difference(f, x, step):
    """Gradient of scalar ``f`` at array ``x`` by central differences (``x`` restored afterwards)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        plus = f()
        flat[i] = old - step
        minus = f()
        flat[i] = old
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def projection_margin(h, spec):
    """Distance of ``h`` from the points where the projection onto ``spec`` is not differentiable."""
    from drosent.projections import project

    if spec is None:
        return np.inf
    if spec.kind == SIMPLEX:
        out = project(h, spec)
        s = out > 0
        tau = float(np.mean(h[s] - out[s]))
        return float(np.min(np.abs(h - tau)))
    if spec.p == 1:
        a = np.abs(h)
        gap = abs(a.sum() - spec.radius)
        if a.sum() <= spec.radius:
            return float(gap)
        out = np.abs(project(h, spec))
        s = out > 0
        tau = float(np.mean(a[s] - out[s]))
        return float(min(gap, np.min(np.abs(a - tau)), np.min(a)))
    return abs(lp_norm(h, spec.p) - spec.radius)


def gradient_check(encoder, mode, spec, seed, step=1e-5, floor=1e-6, batch=2, d_in=3, d_h=2):
    """Max relative error between backprop and central differences of the batch objective.

    The batch is redrawn until every representation sits at least 1e-3 from a
    non-differentiable point of the projection layer.
    """
    from drosent.dro import UncertaintySet
    from drosent.netcore import encode, init_params
    from drosent.pipeline import DRO_REPR, DRO_WEIGHTS, batch_objective_and_grads

    rng = np.random.default_rng(seed)
    params = init_params(encoder, d_in, d_h, 0.1, spec if mode == DRO_REPR else None, seed)
    for _ in range(100):
        feats = [rng.standard_normal((int(rng.integers(1, 5)), d_in)) for _ in range(batch)]
        if all(projection_margin(encode(f, params), params.projection) >= 1e-3 for f in feats):
            break
    else:
        raise RuntimeError("no batch away from the projection boundary")
    labels = rng.integers(0, 2, batch).astype(float)
    states = rng.integers(0, 2**63, batch)
    uncertainty = UncertaintySet.from_spec(spec) if mode == DRO_WEIGHTS else None

    def objective():
        return batch_objective_and_grads(params, feats, labels, mode, uncertainty, states)[0]

    _, grads, _ = batch_objective_and_grads(params, feats, labels, mode, uncertainty, states)
    worst = 0.0
    for key, w in params.weights.items():
        numeric = central_difference(objective, w, step)
        err = np.abs(grads[key] - numeric) / np.maximum(np.maximum(np.abs(grads[key]), np.abs(numeric)), floor)
        worst = max(worst, float(err.max()))
    return worst


def _simplex_lattice(n, steps):
    """All points of the probability simplex with coordinates in multiples of 1/steps."""
    if n == 1:
        return np.ones((1, 1))
    grids = np.meshgrid(*[np.arange(steps + 1)] * (n - 1), indexing="ij")
    head = np.stack([g.ravel() for g in grids], axis=1)
    head = head[head.sum(axis=1) <= steps]
    return np.column_stack([head, steps - head.sum(axis=1)]) / steps


def grid_worst_case(losses, p, radius, coarse=120, fine=1e-3, box=0.03):
    """Best objective over a lattice of the feasible weights: coarse pass, then a 1e-3 pass nearby."""
    losses = np.asarray(losses, dtype=float)
    n = losses.size
    u = np.full(n, 1.0 / n)

    def feasible(q):
        d = np.abs(q - u)
        norms = d.max(axis=1) if np.isinf(p) else (d ** p).sum(axis=1) ** (1.0 / p)
        return q[(norms <= radius + 1e-12) & (q.min(axis=1) >= -1e-12)]

    q = feasible(_simplex_lattice(n, coarse))
    best = q[np.argmax(q @ losses)]
    if n == 1:
        return float(best @ losses)
    offsets = np.arange(-box, box + fine / 2, fine)
    grids = np.meshgrid(*[offsets] * (n - 1), indexing="ij")
    head = best[:-1] + np.stack([g.ravel() for g in grids], axis=1)
    local = feasible(np.column_stack([head, 1.0 - head.sum(axis=1)]))
    return float(max((local @ losses).max(), best @ losses))
