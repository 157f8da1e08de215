"""Numpy sequence classifier with hand-written backward passes.

Pipeline for one example::

    features (T, d_in) -> encoder (mean pool | 2-layer biLSTM)
        -> optional projection onto a convex set -> dropout
        -> linear head -> sigmoid

Backward passes are exact.  The general-p projection layer is
differentiated implicitly through its stationarity conditions; a central
difference Jacobian is available for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from drosent.errors import (
    InvalidConfigError,
    InvalidInputError,
    InvalidLabelError,
    ShapeError,
    UsageError,
)
from drosent.projections import LP_BALL, SIMPLEX, ProjectionSpec, lp_norm, project

MEAN_POOL = "meanpool"
BILSTM2 = "bilstm2"
ENCODERS = (MEAN_POOL, BILSTM2)
DIRECTIONS = ("fwd", "bwd")

PROB_CLAMP = 1e-12
JACOBIAN_FD_STEP = 1e-6


@dataclass
class ModelParams:
    encoder: str
    input_dim: int
    hidden_dim: int
    dropout_rate: float = 0.1
    projection: ProjectionSpec | None = None
    seed: int = 0
    weights: dict = field(default_factory=dict)

    @property
    def classifier_dim(self):
        return 2 * self.hidden_dim if self.encoder == BILSTM2 else self.input_dim

    def copy(self):
        return replace(self, weights={k: v.copy() for k, v in self.weights.items()})

    def with_projection(self, spec):
        return replace(self, projection=spec, weights={k: v.copy() for k, v in self.weights.items()})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.weights.items()}


def lstm_key(layer, direction, name):
    return f"lstm.{layer}.{direction}.{name}"


def init_params(encoder, input_dim, hidden_dim=64, dropout_rate=0.1, projection=None, seed=0):
    """Uniform(-1/sqrt(fan), 1/sqrt(fan)) initialization, a deterministic function of ``seed``."""
    if encoder not in ENCODERS:
        raise InvalidConfigError(f"unknown encoder {encoder!r}; expected one of {ENCODERS}")
    if input_dim < 1 or hidden_dim < 1:
        raise InvalidConfigError("input_dim and hidden_dim must be >= 1")
    if not 0 <= dropout_rate < 1:
        raise InvalidConfigError(f"dropout rate must be in [0, 1), got {dropout_rate}")
    rng = np.random.default_rng(seed)
    params = ModelParams(encoder, int(input_dim), int(hidden_dim), float(dropout_rate), projection, seed)
    if encoder == BILSTM2:
        bound = 1.0 / np.sqrt(hidden_dim)
        for layer in (0, 1):
            in_dim = input_dim if layer == 0 else 2 * hidden_dim
            for d in DIRECTIONS:
                params.weights[lstm_key(layer, d, "W")] = rng.uniform(
                    -bound, bound, (4 * hidden_dim, in_dim + hidden_dim))
                params.weights[lstm_key(layer, d, "b")] = rng.uniform(-bound, bound, 4 * hidden_dim)
    k = params.classifier_dim
    bound = 1.0 / np.sqrt(k)
    params.weights["head.w"] = rng.uniform(-bound, bound, (k, 1))
    params.weights["head.b"] = np.array(rng.uniform(-bound, bound))
    return params


# -- elementwise pieces -------------------------------------------------------

def sigmoid(y_prime):
    """Logistic function, overflow safe for any finite input."""
    return expit(np.asarray(y_prime, dtype=float))


def linear_forward(x, w, b):
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.ndim != 2 or w.ndim != 2 or w.shape[1] != 1 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear_forward: x{x.shape} @ w{w.shape} is not [batch,k] @ [k,1]")
    return x @ w + float(b)


def _check_labels(y):
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidLabelError(f"labels must be 0 or 1, got {np.unique(y)}")
    return y


def bce_loss(y_hat, y):
    """Per-example binary cross-entropy and its batch mean."""
    y = _check_labels(y)
    p = np.clip(np.asarray(y_hat, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    if p.shape != y.shape:
        raise ShapeError(f"bce_loss: predictions {p.shape} vs labels {y.shape}")
    losses = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return losses, float(np.mean(losses))


def bce_grad(y_hat, y):
    """Derivative of each example's loss with respect to its own prediction."""
    y = _check_labels(y)
    y_hat = np.asarray(y_hat, dtype=float)
    p = np.clip(y_hat, PROB_CLAMP, 1 - PROB_CLAMP)
    g = -(y / p) + (1 - y) / (1 - p)
    return np.where(p == y_hat, g, 0.0)


def mean_pool(seq):
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise InvalidInputError(f"mean_pool needs a non-empty [T, d] sequence, got shape {seq.shape}")
    return seq.mean(axis=0)


def dropout_mask(size, rate, rng_state):
    if not 0 <= rate < 1:
        raise InvalidConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(size)
    rng = rng_state if isinstance(rng_state, np.random.Generator) else np.random.default_rng(rng_state)
    return (rng.random(size) >= rate) / (1.0 - rate)


def dropout(h, rate, mode="train", rng_state=None):
    """Inverted dropout; the identity in eval mode."""
    h = np.asarray(h, dtype=float)
    if not 0 <= rate < 1:
        raise InvalidConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0:
        return h.copy()
    return h * dropout_mask(h.shape, rate, rng_state)


# -- LSTM ---------------------------------------------------------------------

def _lstm_direction(x, W, b, reverse):
    """Run one LSTM direction over ``x`` (T, in).  Hidden states are returned in input order."""
    T = x.shape[0]
    hd = b.shape[0] // 4
    h = np.zeros(hd)
    c = np.zeros(hd)
    hs = np.zeros((T, hd))
    steps = []
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        xh = np.concatenate([x[t], h])
        z = W @ xh + b
        i = expit(z[:hd])
        f = expit(z[hd:2 * hd])
        o = expit(z[2 * hd:3 * hd])
        g = np.tanh(z[3 * hd:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        steps.append((t, xh, i, f, o, g, c_prev, tc))
    return hs, steps


def _lstm_direction_backward(d_hs, W, steps, in_dim):
    hd = W.shape[0] // 4
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0])
    dx = np.zeros((d_hs.shape[0], in_dim))
    dh_next = np.zeros(hd)
    dc_next = np.zeros(hd)
    for t, xh, i, f, o, g, c_prev, tc in reversed(steps):
        dh = d_hs[t] + dh_next
        dc = dc_next + dh * o * (1 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1 - i),
            dc * c_prev * f * (1 - f),
            dh * tc * o * (1 - o),
            dc * i * (1 - g * g),
        ])
        dW += np.outer(dz, xh)
        db += dz
        dxh = W.T @ dz
        dx[t] = dxh[:in_dim]
        dh_next = dxh[in_dim:]
        dc_next = dc * f
    return dW, db, dx


def bilstm_forward(seq, params, return_cache=False):
    """Two stacked bidirectional layers; returns ``[h_fwd(T) ; h_bwd(1)]`` of the top layer."""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise InvalidInputError(f"bilstm_forward needs a non-empty [T, d] sequence, got shape {seq.shape}")
    if seq.shape[1] != params.input_dim:
        raise ShapeError(f"sequence width {seq.shape[1]} != input_dim {params.input_dim}")
    cache = []
    layer_in = seq
    for layer in (0, 1):
        outs = []
        for d in DIRECTIONS:
            W = params.weights[lstm_key(layer, d, "W")]
            b = params.weights[lstm_key(layer, d, "b")]
            hs, steps = _lstm_direction(layer_in, W, b, reverse=(d == "bwd"))
            outs.append(hs)
            cache.append((layer, d, layer_in.shape[1], steps))
        layer_in = np.concatenate(outs, axis=1)
    hd = params.hidden_dim
    out = np.concatenate([layer_in[-1, :hd], layer_in[0, hd:]])
    if return_cache:
        return out, (seq.shape[0], cache)
    return out


def bilstm_backward(d_out, params, bilstm_cache, grads):
    """Accumulate biLSTM parameter gradients into ``grads``; returns d(seq)."""
    T, cache = bilstm_cache
    hd = params.hidden_dim
    d_top = np.zeros((T, 2 * hd))
    d_top[-1, :hd] = d_out[:hd]
    d_top[0, hd:] = d_out[hd:]
    d_layer_out = d_top
    for layer in (1, 0):
        d_in = None
        for d_idx, d in enumerate(DIRECTIONS):
            _, _, in_dim, steps = cache[2 * layer + d_idx]
            W = params.weights[lstm_key(layer, d, "W")]
            dW, db, dx = _lstm_direction_backward(
                d_layer_out[:, d_idx * hd:(d_idx + 1) * hd], W, steps, in_dim)
            grads[lstm_key(layer, d, "W")] += dW
            grads[lstm_key(layer, d, "b")] += db
            d_in = dx if d_in is None else d_in + dx
        d_layer_out = d_in
    return d_layer_out


# -- projection layer -----------------------------------------------------------

def representation_project(h, spec):
    """Stage (d): Euclidean projection of the encoder output; identity when ``spec`` is None."""
    if spec is None:
        return np.asarray(h, dtype=float).copy()
    return project(h, spec)


def _lp_ball_vjp(h, out, p, g):
    """Implicit-function VJP for the general-p ball projection outside the ball.

    Stationarity ``x + lam*n(x) = h`` with ``n = p*sign(x)*|x|**(p-1)`` and the
    active constraint ``||x||_p = R`` give
    ``J = D^-1 - (D^-1 n)(D^-1 n)^T / (n^T D^-1 n)``,
    ``D = diag(1 + lam*p*(p-1)*|x|**(p-2))``.
    """
    ax = np.abs(out)
    n = p * np.sign(out) * ax ** (p - 1)
    lam = float((h - out) @ n / (n @ n))
    with np.errstate(divide="ignore"):
        d_inv = 1.0 / (1.0 + lam * p * (p - 1) * ax ** (p - 2))
    dn = d_inv * n
    return d_inv * g - dn * (dn @ g) / (n @ dn)


def _fd_jacobian(h, spec):
    jac = np.empty((h.size, h.size))
    for j in range(h.size):
        e = np.zeros_like(h)
        e[j] = JACOBIAN_FD_STEP
        jac[:, j] = (project(h + e, spec) - project(h - e, spec)) / (2 * JACOBIAN_FD_STEP)
    return jac


def projection_vjp(h, out, spec, g, lp_jacobian="implicit"):
    """``J^T g`` for the projection ``out = P(h)``.  Projection Jacobians are symmetric.

    For general p the Jacobian comes from implicit differentiation, or from
    central differences when ``lp_jacobian="fd"``.
    """
    if spec is None:
        return g
    if spec.kind == SIMPLEX:
        s = out > 0
        return np.where(s, g - g[s].mean(), 0.0)
    p = spec.p
    if p == 1:
        if np.abs(h).sum() <= spec.radius:
            return g
        s = out != 0
        sg = np.sign(h)
        return np.where(s, g - sg * (sg[s] @ g[s]) / s.sum(), 0.0)
    if p == 2:
        n = np.linalg.norm(h)
        if n <= spec.radius:
            return g
        return (spec.radius / n) * (g - h * (h @ g) / (n * n))
    if lp_norm(h, p) <= spec.radius:
        return g
    if lp_jacobian == "fd":
        return _fd_jacobian(h, spec).T @ g
    return _lp_ball_vjp(h, out, p, g)


# -- full model -----------------------------------------------------------------

def encode(features, params, return_cache=False):
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[None, :]
    if params.encoder == MEAN_POOL:
        if features.ndim != 2 or features.shape[1] != params.input_dim:
            raise ShapeError(f"features {features.shape} do not match input_dim {params.input_dim}")
        h = mean_pool(features)
        return (h, ("meanpool", features.shape[0])) if return_cache else h
    h, cache = bilstm_forward(features, params, return_cache=True)
    return (h, ("bilstm", cache)) if return_cache else h


def model_forward(features, params, mode="eval", rng_state=None):
    """Probability of the positive class for one example, plus the backward cache.

    ``features`` is a (T, d_in) sequence or a single d_in vector.  Dropout is
    applied only in ``"train"`` mode, with its mask drawn from ``rng_state``.
    """
    h, enc_cache = encode(features, params, return_cache=True)
    h_proj = representation_project(h, params.projection)
    if mode == "train":
        mask = dropout_mask(h_proj.shape, params.dropout_rate, rng_state)
    elif mode == "eval":
        mask = np.ones_like(h_proj)
    else:
        raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
    h_drop = h_proj * mask
    logit = linear_forward(h_drop[None, :], params.weights["head.w"], params.weights["head.b"])[0, 0]
    y_hat = float(sigmoid(logit))
    cache = {"enc": enc_cache, "h": h, "h_proj": h_proj, "mask": mask, "h_drop": h_drop,
             "y_hat": y_hat, "params": params}
    return y_hat, cache


def model_backward(cache, upstream, grads=None):
    """Gradients of ``upstream * y_hat`` with respect to every parameter.

    ``upstream`` is dL/dy_hat for the example.  Gradients are accumulated into
    ``grads`` when given (a dict shaped like ``params.weights``), else into a
    fresh zero dict, which is returned.
    """
    if cache is None:
        raise UsageError("model_backward needs the cache returned by model_forward")
    params = cache["params"]
    if grads is None:
        grads = params.zeros_like()
    y_hat = cache["y_hat"]
    d_logit = upstream * y_hat * (1.0 - y_hat)
    if d_logit == 0:
        return grads
    w = params.weights["head.w"][:, 0]
    grads["head.w"][:, 0] += d_logit * cache["h_drop"]
    grads["head.b"] += d_logit
    d_h_proj = d_logit * w * cache["mask"]
    d_h = projection_vjp(cache["h"], cache["h_proj"], params.projection, d_h_proj)
    kind, enc_cache = cache["enc"]
    if kind == "bilstm":
        bilstm_backward(d_h, params, enc_cache, grads)
    return grads


def predict_proba(params, dataset):
    return np.array([model_forward(x, params, "eval")[0] for x in dataset])
