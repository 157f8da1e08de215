"""Network pieces: forward contracts, projection-layer Jacobians and gradient checks."""

import warnings

import numpy as np
import pytest

from drosent.errors import InvalidConfigError, InvalidInputError, InvalidLabelError, ShapeError, UsageError
from drosent.netcore import (
    BILSTM2,
    MEAN_POOL,
    _fd_jacobian,
    bce_grad,
    bce_loss,
    bilstm_forward,
    dropout,
    dropout_mask,
    init_params,
    linear_forward,
    lstm_key,
    mean_pool,
    model_backward,
    model_forward,
    projection_vjp,
    representation_project,
    sigmoid,
)
from drosent.pipeline import DRO_REPR, DRO_WEIGHTS, ERM
from drosent.projections import ProjectionSpec, project
from helpers import gradient_check, projection_margin


class TestElementwise:
    def test_linear_forward(self):
        np.testing.assert_array_equal(linear_forward([[1, 2]], [[0], [0]], 0), [[0]])
        np.testing.assert_array_equal(linear_forward([[1, 2]], [[1], [1]], 1), [[4]])
        np.testing.assert_array_equal(linear_forward([[5]], [[1]], 0), [[5]])

    def test_linear_shape_error(self):
        with pytest.raises(ShapeError):
            linear_forward([[1, 2, 3]], [[1], [1]], 0)

    def test_sigmoid(self):
        assert sigmoid(0.0) == 0.5
        x = np.linspace(-30, 30, 101)
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)
        assert np.all(np.diff(sigmoid(x)) >= 0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert 1.0 - sigmoid(100.0) < 1e-40 or sigmoid(-100.0) < 1e-40
            assert np.isfinite(sigmoid(np.array([-1e3, 1e3]))).all()

    def test_bce(self):
        losses, mean = bce_loss(np.array([0.5]), np.array([1]))
        assert losses[0] == pytest.approx(np.log(2), abs=1e-15)
        losses, _ = bce_loss(np.array([1 - 1e-12]), np.array([1]))
        assert losses[0] == pytest.approx(1e-12, rel=1e-3)
        _, mean = bce_loss(np.array([0.5, 0.5]), np.array([1, 0]))
        assert mean == pytest.approx(np.log(2))

    def test_bce_clamps_and_is_nonnegative(self):
        losses, _ = bce_loss(np.array([0.0, 1.0, 1.0, 0.0]), np.array([1, 0, 1, 0]))
        assert np.all(np.isfinite(losses)) and np.all(losses >= 0)
        assert losses[0] == pytest.approx(-np.log(1e-12))

    def test_bce_grad_matches_derivative(self):
        y_hat, y = np.array([0.2, 0.7]), np.array([1.0, 0.0])
        step = 1e-7
        numeric = (bce_loss(y_hat + step, y)[0] - bce_loss(y_hat - step, y)[0]) / (2 * step)
        np.testing.assert_allclose(bce_grad(y_hat, y), numeric, rtol=1e-6)

    def test_bad_labels(self):
        with pytest.raises(InvalidLabelError):
            bce_loss(np.array([0.5]), np.array([2]))


class TestEncoders:
    def test_mean_pool(self):
        v = np.array([1.0, -2.0])
        np.testing.assert_array_equal(mean_pool(v[None, :]), v)
        np.testing.assert_array_equal(mean_pool(np.stack([v, -v])), [0, 0])
        np.testing.assert_array_equal(mean_pool([[1, 3], [3, 1]]), [2, 2])

    @pytest.mark.parametrize("fn", [mean_pool, lambda s: bilstm_forward(s, init_params(BILSTM2, 2, 3))])
    def test_empty_sequence(self, fn):
        with pytest.raises(InvalidInputError):
            fn(np.zeros((0, 2)))

    def test_zero_params_give_zero_output(self):
        params = init_params(BILSTM2, 3, 4, seed=1)
        params.weights = {k: np.zeros_like(v) for k, v in params.weights.items()}
        seq = np.random.default_rng(0).standard_normal((5, 3))
        np.testing.assert_array_equal(bilstm_forward(seq, params), np.zeros(8))

    def test_deterministic(self):
        params = init_params(BILSTM2, 3, 4, seed=1)
        seq = np.random.default_rng(0).standard_normal((1, 3))
        assert bilstm_forward(seq, params).tobytes() == bilstm_forward(seq.copy(), params).tobytes()

    def test_direction_swap(self):
        """Reversing the input and swapping the direction weights swaps the output halves."""
        hd, d_in = 3, 2
        params = init_params(BILSTM2, d_in, hd, seed=4)
        swapped = params.copy()
        for layer in (0, 1):
            for a, b in (("fwd", "bwd"), ("bwd", "fwd")):
                W = params.weights[lstm_key(layer, b, "W")].copy()
                if layer == 1:
                    # the layer-1 input is [fwd ; bwd] of layer 0, which also swaps
                    W = np.concatenate([W[:, hd:2 * hd], W[:, :hd], W[:, 2 * hd:]], axis=1)
                swapped.weights[lstm_key(layer, a, "W")] = W
                swapped.weights[lstm_key(layer, a, "b")] = params.weights[lstm_key(layer, b, "b")].copy()
        seq = np.random.default_rng(5).standard_normal((6, d_in))
        out = bilstm_forward(seq, params)
        out_swapped = bilstm_forward(seq[::-1], swapped)
        np.testing.assert_allclose(out_swapped, np.concatenate([out[hd:], out[:hd]]), atol=1e-14)

    def test_init_is_seeded(self):
        a, b = init_params(BILSTM2, 3, 2, seed=9), init_params(BILSTM2, 3, 2, seed=9)
        assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
        assert init_params(MEAN_POOL, 7).classifier_dim == 7
        assert init_params(BILSTM2, 7, 5).classifier_dim == 10


class TestProjectionLayer:
    def test_examples(self):
        h = np.random.default_rng(0).standard_normal(16) * 10
        np.testing.assert_array_equal(representation_project(h, ProjectionSpec.lp_ball(2, 1e6)), h)
        np.testing.assert_allclose(representation_project([6, 8], ProjectionSpec.lp_ball(2, 5)), [3, 4])
        np.testing.assert_allclose(representation_project([2, 0], ProjectionSpec.simplex(1)), [1, 0])

    @pytest.mark.parametrize("name,radius", [("simplex", 1.0), ("l1", 0.8), ("l2", 0.7), ("l4", 0.6),
                                             ("l3", 0.6), ("l1.5", 0.9)])
    def test_vjp_matches_fd_jacobian(self, name, radius):
        spec = ProjectionSpec.from_name(name, radius)
        rng = np.random.default_rng(3)
        for _ in range(20):
            h = rng.standard_normal(6)
            if projection_margin(h, spec) < 1e-3:
                continue
            g = rng.standard_normal(6)
            out = project(h, spec)
            np.testing.assert_allclose(projection_vjp(h, out, spec, g), _fd_jacobian(h, spec).T @ g,
                                       atol=1e-6)

    def test_interior_is_identity(self):
        g = np.array([0.3, -1.0, 2.0])
        h = np.array([0.1, 0.1, -0.1])
        for name in ("l1", "l2", "l4"):
            spec = ProjectionSpec.from_name(name, 5.0)
            np.testing.assert_array_equal(projection_vjp(h, project(h, spec), spec, g), g)


class TestDropout:
    def test_identity_cases(self):
        h = np.arange(5.0)
        np.testing.assert_array_equal(dropout(h, 0.0, "train", 1), h)
        np.testing.assert_array_equal(dropout(h, 0.0, "eval"), h)
        np.testing.assert_array_equal(dropout(h, 0.5, "eval"), h)

    def test_expectation_monte_carlo(self):
        h = np.linspace(0.5, 2.0, 8)
        masks = dropout_mask((100_000, h.size), 0.5, 1234)
        np.testing.assert_allclose((masks * h).mean(axis=0), h, rtol=0.02)

    def test_seeded(self):
        np.testing.assert_array_equal(dropout(np.ones(50), 0.3, "train", 7), dropout(np.ones(50), 0.3, "train", 7))

    def test_rate_one_rejected(self):
        with pytest.raises(InvalidConfigError):
            dropout(np.ones(3), 1.0)


class TestModel:
    def test_zero_params_give_half(self):
        params = init_params(MEAN_POOL, 4)
        params.weights = {k: np.zeros_like(v) for k, v in params.weights.items()}
        for x in np.random.default_rng(0).standard_normal((5, 3, 4)):
            assert model_forward(x, params)[0] == 0.5

    @pytest.mark.parametrize("encoder", [MEAN_POOL, BILSTM2])
    def test_large_ball_is_exact_identity(self, encoder):
        params = init_params(encoder, 4, 3, seed=2)
        big = params.with_projection(ProjectionSpec.lp_ball(2, 1e6))
        rng = np.random.default_rng(1)
        for _ in range(10):
            x = rng.standard_normal((int(rng.integers(1, 6)), 4))
            assert model_forward(x, params, "train", 5)[0] == model_forward(x, big, "train", 5)[0]
            assert model_forward(x, params)[0] == model_forward(x, big)[0]

    def test_probability_contract(self):
        params = init_params(BILSTM2, 3, 2, seed=0)
        params.weights["head.w"] *= 1e4
        for x in np.random.default_rng(1).standard_normal((10, 2, 3)):
            y, _ = model_forward(x, params)
            assert 0 <= y <= 1

    def test_zero_upstream_gives_zero_gradients(self):
        params = init_params(BILSTM2, 3, 2, seed=0)
        _, cache = model_forward(np.ones((2, 3)), params, "train", 1)
        assert all(not g.any() for g in model_backward(cache, 0.0).values())

    def test_missing_cache(self):
        with pytest.raises(UsageError):
            model_backward(None, 1.0)

    def test_bad_mode(self):
        with pytest.raises(UsageError):
            model_forward(np.ones((1, 3)), init_params(MEAN_POOL, 3), mode="test")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            model_forward(np.ones((2, 5)), init_params(MEAN_POOL, 3))


SMALL_CASES = [
    (ERM, None),
    (DRO_WEIGHTS, ProjectionSpec.lp_ball(2, 0.1)),
    (DRO_REPR, ProjectionSpec.lp_ball(2, 0.3)),
    (DRO_REPR, ProjectionSpec.simplex(1.0)),
    (DRO_REPR, ProjectionSpec.lp_ball(1, 0.5)),
    (DRO_REPR, ProjectionSpec.lp_ball(4, 0.3)),
]


@pytest.mark.parametrize("encoder", [MEAN_POOL, BILSTM2])
@pytest.mark.parametrize("mode,spec", SMALL_CASES, ids=lambda x: getattr(x, "name", x))
def test_gradient_check(encoder, mode, spec):
    for seed in range(3):
        assert gradient_check(encoder, mode, spec, seed) < 1e-4
