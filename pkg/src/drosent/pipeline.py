"""Training (ERM and both robust modes), evaluation and the radius sweep."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from drosent.data import FeatureSource, batch_indices, featurize
from drosent.dro import UncertaintySet, robust_loss_weights_for_backward
from drosent.errors import DroError, InvalidConfigError, InvalidInputError, NumericalFailureError
from drosent.netcore import (
    BILSTM2,
    ENCODERS,
    MEAN_POOL,
    bce_grad,
    bce_loss,
    init_params,
    model_backward,
    model_forward,
)
from drosent.projections import ProjectionSpec

log = logging.getLogger(__name__)

ERM = "erm"
DRO_WEIGHTS = "dro-weights"
DRO_REPR = "dro-repr"
MODES = (ERM, DRO_WEIGHTS, DRO_REPR)

DEFAULT_RADII = (1.0, 2.0, 5.0, 10.0, 15.0)
DEFAULT_KINDS = ("simplex", "l1", "l2", "l4")
DEFAULT_LEARNING_RATES = {MEAN_POOL: 0.1, BILSTM2: 0.01}


@dataclass
class Dataset:
    """Featurized examples: ``features[i]`` is (T_i, d) and ``labels[i]`` is 0 or 1."""

    features: list
    labels: np.ndarray

    def __post_init__(self):
        self.features = [np.atleast_2d(np.asarray(f, dtype=float)) for f in self.features]
        self.labels = np.asarray(self.labels, dtype=float)
        if len(self.features) != len(self.labels):
            raise InvalidInputError("features and labels differ in length")

    def __len__(self):
        return len(self.labels)

    @property
    def input_dim(self):
        return self.features[0].shape[1]

    def subset(self, idx):
        return Dataset([self.features[i] for i in idx], self.labels[list(idx)])

    @classmethod
    def from_examples(cls, examples, source):
        return cls([featurize(e, source) for e in examples], [e.label for e in examples])

    @classmethod
    def from_arrays(cls, x, y):
        return cls(list(np.asarray(x, dtype=float)), y)


@dataclass
class TrainConfig:
    mode: str = ERM
    projection: ProjectionSpec | None = None
    learning_rate: float | None = None
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    encoder: str = MEAN_POOL
    hidden_dim: int = 64
    dropout_rate: float = 0.1
    features: FeatureSource = field(default_factory=FeatureSource.hashed)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.encoder not in ENCODERS:
            raise InvalidConfigError(f"unknown encoder {self.encoder!r}; expected one of {ENCODERS}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise InvalidConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def lr(self):
        return self.learning_rate if self.learning_rate is not None else DEFAULT_LEARNING_RATES[self.encoder]

    def to_dict(self):
        spec = self.projection
        return {
            "mode": self.mode,
            "projection": None if spec is None else {"kind": spec.kind, "p": spec.p, "radius": spec.radius},
            "learning_rate": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "encoder": self.encoder,
            "hidden_dim": self.hidden_dim,
            "dropout_rate": self.dropout_rate,
            "features": self.features.describe(),
        }

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def batch_objective_and_grads(params, features, labels, mode=ERM, uncertainty=None, rng_states=None):
    """Batch training objective, its parameter gradients and the example weights.

    ERM and representation-projection training weight examples uniformly;
    weight-space DRO uses the worst-case weights over ``uncertainty``.
    """
    train = rng_states is not None
    y_hat = np.empty(len(features))
    caches = []
    for i, x in enumerate(features):
        y_hat[i], cache = model_forward(x, params, "train" if train else "eval",
                                        rng_states[i] if train else None)
        caches.append(cache)
    labels = np.asarray(labels, dtype=float)
    losses, _ = bce_loss(y_hat, labels)
    if not np.all(np.isfinite(losses)):
        raise NumericalFailureError("non-finite training loss; lower the learning rate")
    if mode == DRO_WEIGHTS:
        weights = robust_loss_weights_for_backward(losses, uncertainty)
    else:
        weights = np.full(len(losses), 1.0 / len(losses))
    upstream = weights * bce_grad(y_hat, labels)
    grads = params.zeros_like()
    for cache, g in zip(caches, upstream):
        model_backward(cache, g, grads)
    return float(weights @ losses), grads, weights


def _init_for(config, input_dim, seed=None):
    projection = config.projection if config.mode == DRO_REPR else None
    return init_params(config.encoder, input_dim, config.hidden_dim, config.dropout_rate, projection,
                       config.seed if seed is None else seed)


def train(config, train_set):
    """Plain SGD; returns ``(params, history)`` with the mean batch objective per epoch."""
    if len(train_set) == 0:
        raise InvalidInputError("training set is empty")
    if config.mode != ERM and config.projection is None:
        raise InvalidConfigError(f"mode {config.mode} needs a projection set")
    params = _init_for(config, train_set.input_dim)
    uncertainty = UncertaintySet.from_spec(config.projection) if config.mode == DRO_WEIGHTS else None
    lengths = [f.shape[0] for f in train_set.features]
    history = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        batches = batch_indices(lengths, config.batch_size, rng)
        total = 0.0
        for idx in batches:
            states = rng.integers(0, 2**63, size=len(idx))
            objective, grads, _ = batch_objective_and_grads(
                params, [train_set.features[i] for i in idx], train_set.labels[idx],
                config.mode, uncertainty, states)
            for key, g in grads.items():
                params.weights[key] -= config.lr * g
            total += objective * len(idx)
        history.append(total / len(train_set))
        if not np.isfinite(history[-1]):
            raise NumericalFailureError(f"training diverged at epoch {epoch + 1}")
        log.debug("epoch %d objective %.6f", epoch + 1, history[-1])
    return params, history


def predict_proba(params, dataset):
    return np.array([model_forward(x, params, "eval")[0] for x in dataset.features])


def training_loss(params, dataset):
    return bce_loss(predict_proba(params, dataset), dataset.labels)[1]


def evaluate(params, test_set):
    """Accuracy with the rule ``y_hat > 0.5`` predicts 1 (exactly 0.5 predicts 0)."""
    if len(test_set) == 0:
        raise InvalidInputError("test set is empty")
    pred = predict_proba(params, test_set) > 0.5
    return float(np.mean(pred == (test_set.labels == 1)))


def holdout_split(dataset, fraction=0.1, seed=0):
    """Seeded split into ``(train, held_out)``; held-out gets ``ceil(fraction * n)`` examples."""
    n = len(dataset)
    n_held = int(np.ceil(fraction * n))
    if not 0 < n_held < n:
        raise InvalidInputError(f"cannot hold out {fraction:.0%} of {n} examples")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[n_held:])), dataset.subset(np.sort(order[:n_held]))


# -- sweep ----------------------------------------------------------------------

@dataclass
class SweepRow:
    set_kind: str
    radius: float
    in_dist_acc: float
    ood_acc: float
    in_dist_std: float | None = None
    ood_std: float | None = None
    error: str | None = None


@dataclass
class SweepReport:
    rows: list
    metadata: dict = field(default_factory=dict)


def _run_cell(args):
    config, replicates, train_set, in_dist_test, shifted_test = args
    spec = config.projection
    in_acc, ood_acc = [], []
    try:
        for rep in range(replicates):
            params, _ = train(replace(config, seed=config.seed + rep), train_set)
            in_acc.append(evaluate(params, in_dist_test))
            ood_acc.append(evaluate(params, shifted_test))
    except DroError as exc:
        log.warning("sweep cell %s R=%g failed: %s", spec.name, spec.radius, exc)
        return SweepRow(spec.name, spec.radius, float("nan"), float("nan"), error=str(exc))
    row = SweepRow(spec.name, spec.radius, float(np.mean(in_acc)), float(np.mean(ood_acc)))
    if replicates > 1:
        row.in_dist_std = float(np.std(in_acc))
        row.ood_std = float(np.std(ood_acc))
    return row


def radius_sweep(base_config, kinds=DEFAULT_KINDS, radii=DEFAULT_RADII, train_set=None,
                 in_dist_test=None, shifted_test=None, replicates=1, jobs=1):
    """Train one model per (kind, radius) and record both test accuracies.

    Rows come out in ``kinds`` x ``radii`` order.  A cell that fails
    numerically is recorded with NaN accuracies and its error message.
    An ERM base config is swept in representation-projection mode.
    """
    for name, ds in (("train", train_set), ("in-distribution test", in_dist_test),
                     ("shifted test", shifted_test)):
        if ds is None or len(ds) == 0:
            raise InvalidInputError(f"{name} set is empty")
    if replicates < 1:
        raise InvalidConfigError(f"replicates must be >= 1, got {replicates}")
    if base_config.mode == ERM:
        base_config = replace(base_config, mode=DRO_REPR)
    cells = []
    for kind in kinds:
        for radius in radii:
            config = replace(base_config, projection=ProjectionSpec.from_name(kind, radius))
            cells.append((config, replicates, train_set, in_dist_test, shifted_test))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(cell) for cell in cells]
    metadata = {"mode": base_config.mode, "seed": base_config.seed, "replicates": replicates,
                "config_digest": replace(base_config, projection=None, mode=ERM).digest()}
    return SweepReport(rows, metadata)


@dataclass
class BaselineComparison:
    best_radius: dict
    deltas: list
    best_kind: str
    mean_ood: dict


def compare_to_baseline(report, erm_in, erm_ood):
    """Per-kind best radius (by shifted accuracy), deltas against ERM, and the best kind overall.

    ``deltas`` holds ``(kind, radius, in_dist_delta, ood_delta)`` per valid row;
    the best kind has the highest mean shifted accuracy across its radii.
    """
    rows = [r for r in report.rows if r.error is None]
    if not rows:
        raise InvalidInputError("report has no successful rows")
    best_radius, mean_ood, by_kind = {}, {}, {}
    for r in rows:
        by_kind.setdefault(r.set_kind, []).append(r)
    for kind, kind_rows in by_kind.items():
        best = max(kind_rows, key=lambda r: r.ood_acc)
        best_radius[kind] = best.radius
        mean_ood[kind] = float(np.mean([r.ood_acc for r in kind_rows]))
    deltas = [(r.set_kind, r.radius, r.in_dist_acc - erm_in, r.ood_acc - erm_ood) for r in rows]
    best_kind = max(mean_ood, key=mean_ood.get)
    return BaselineComparison(best_radius, deltas, best_kind, mean_ood)
