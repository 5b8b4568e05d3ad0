"""Autodiff, modules, optimizer and projection tests"""

import math

import numpy as np
import pytest

from errors import ConfigurationError, DegenerateInputError, NumericError, UsageError
from nn_core import (AdamOptimizer, Dense, MlpParams, Mlp, RmsNorm, Tensor, adam_step, build_mlp, clip_gradients,
                     compute_gradients, concat, finite_difference_check, global_norm, hypersphere_project,
                     init_adam_state, minimum, no_grad, stack)


class TestGradients:
    def test_product_rule(self):
        a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        b = Tensor(np.array([4.0, 5.0, 6.0]), requires_grad=True)
        ga, gb = compute_gradients((a * b).sum(), [a, b])
        np.testing.assert_array_equal(ga, b.data)
        np.testing.assert_array_equal(gb, a.data)

    def test_broadcast_gradient_is_summed(self):
        x = Tensor(np.ones((4, 3)), requires_grad=True)
        bias = Tensor(np.zeros(3), requires_grad=True)
        (gb,) = compute_gradients((x + bias).sum(), [bias])
        np.testing.assert_array_equal(gb, np.full(3, 4.0))

    def test_reused_node_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        (g,) = compute_gradients(x * x + x, [x])
        assert float(g) == pytest.approx(7.0)

    def test_unused_parameter_gets_zeros(self):
        x = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones((2, 2)), requires_grad=True)
        _, g = compute_gradients(x.sum(), [x, unused])
        np.testing.assert_array_equal(g, np.zeros((2, 2)))

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            compute_gradients(x * 2.0, [x])

    def test_cumsum_backward_is_reverse_cumsum(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        w = np.array([1.0, 2.0, 3.0, 4.0])
        (g,) = compute_gradients((x.cumsum(axis=0) * w).sum(), [x])
        np.testing.assert_array_equal(g, np.array([10.0, 9.0, 7.0, 4.0]))

    def test_fancy_index_repeats_accumulate(self):
        x = Tensor(np.arange(3.0), requires_grad=True)
        (g,) = compute_gradients(x[np.array([0, 0, 2])].sum(), [x])
        np.testing.assert_array_equal(g, np.array([2.0, 0.0, 1.0]))

    def test_slice_backward(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        (g,) = compute_gradients(x[..., 1:].sum(), [x])
        np.testing.assert_array_equal(g, np.array([[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]]))

    def test_concat_and_stack_split_gradient(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        ga, gb = compute_gradients((concat([a, b]) * np.arange(5.0)).sum(), [a, b])
        np.testing.assert_array_equal(ga, [0.0, 1.0])
        np.testing.assert_array_equal(gb, [2.0, 3.0, 4.0])
        c = Tensor(np.ones(2), requires_grad=True)
        gc, ga2 = compute_gradients((stack([c, a]) * np.array([[1.0, 2.0], [3.0, 4.0]])).sum(), [c, a])
        np.testing.assert_array_equal(gc, [1.0, 2.0])
        np.testing.assert_array_equal(ga2, [3.0, 4.0])

    def test_minimum_routes_ties_to_first(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([1.0, 0.0]), requires_grad=True)
        ga, gb = compute_gradients(minimum(a, b).sum(), [a, b])
        np.testing.assert_array_equal(ga, [1.0, 0.0])
        np.testing.assert_array_equal(gb, [0.0, 1.0])

    def test_long_chain_does_not_recurse(self):
        x = Tensor(np.array(1.0), requires_grad=True)
        y = x
        for _ in range(20000):
            y = y * 1.0
        (g,) = compute_gradients(y, [x])
        assert float(g) == 1.0

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            y = (x * 3.0).sum()
        assert not y.requires_grad
        (g,) = compute_gradients(y, [x])
        np.testing.assert_array_equal(g, np.zeros(2))

    def test_non_finite_gradient_raises(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        with pytest.raises(NumericError):
            compute_gradients(x.sqrt().sum(), [x])

    def test_ndarray_on_left_defers_to_tensor(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = np.arange(3.0) * x
        assert isinstance(y, Tensor)
        (g,) = compute_gradients(y.sum(), [x])
        np.testing.assert_array_equal(g, np.arange(3.0))


class TestFiniteDifferences:
    @pytest.mark.parametrize("activation", ["tanh", "gelu", "softplus", "identity"])
    def test_dense_layer_matches(self, rng, activation):
        layer = Dense(3, 4, activation, rng)
        layer.b.data = rng.normal(size=4)
        x = Tensor(rng.normal(size=(5, 3)))
        w = rng.normal(size=(5, 4))
        assert finite_difference_check(lambda: (layer(x) * w).sum(), layer.parameters()) <= 1e-4

    def test_softmax_and_rms_norm_match(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        norm = RmsNorm(4)
        w = rng.normal(size=(3, 4))
        assert finite_difference_check(lambda: (norm(x).softmax(axis=-1) * w).sum(), [x, norm.gain]) <= 1e-4

    def test_eps_out_of_range(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(UsageError):
            finite_difference_check(lambda: x.sum(), [x], eps=0.1)


class TestProjection:
    def test_norm_is_scale(self, rng):
        v = Tensor(rng.normal(size=(6, 16)))
        psi = Tensor(rng.normal(size=16))
        out = hypersphere_project(v, psi).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=-1), math.sqrt(16), rtol=1e-12)

    def test_explicit_scale(self, rng):
        out = hypersphere_project(Tensor(rng.normal(size=5)), Tensor(np.zeros(5)), scale=2.0).data
        assert np.linalg.norm(out) == pytest.approx(2.0)

    def test_zero_vector_with_offset_returns_offset_direction(self):
        psi = np.array([0.0, 3.0, 4.0])
        out = hypersphere_project(Tensor(np.zeros(3)), Tensor(psi), scale=1.0).data
        np.testing.assert_allclose(out, psi / 5.0)

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateInputError):
            hypersphere_project(Tensor(np.array([1.0, -1.0])), Tensor(np.array([-1.0, 1.0])))

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            hypersphere_project(Tensor(np.ones(3)), Tensor(np.ones(4)))


class TestModules:
    def test_mlp_params_validate(self):
        with pytest.raises(ConfigurationError):
            MlpParams([3, 4], ["relu", "relu"])
        with pytest.raises(ConfigurationError):
            MlpParams([3, 4], ["swish"])

    def test_build_mlp_shapes(self, rng):
        mlp = build_mlp(3, [8, 8], 2, rng=rng)
        assert [layer.A.shape for layer in mlp.layers] == [(8, 3), (8, 8), (2, 8)]
        assert mlp(Tensor(rng.normal(size=(5, 3)))).shape == (5, 2)
        assert mlp.parameter_count() == 3 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2

    def test_dense_rejects_wrong_width(self, rng):
        with pytest.raises(ConfigurationError):
            Dense(3, 2, rng=rng)(Tensor(np.ones((1, 4))))

    def test_named_parameters_are_stable(self, rng):
        mlp = Mlp(MlpParams([2, 3, 1], ["tanh", "identity"]), rng=rng)
        assert [name for name, _ in mlp.named_parameters("q/")] == ["q/0/A", "q/0/b", "q/1/A", "q/1/b"]


class TestOptimizer:
    def test_first_adam_step_moves_by_lr(self):
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        state = init_adam_state([p])
        adam_step(state, [p], [np.array([0.5, -2.0])], lr=0.1)
        # bias-corrected first step is lr * sign(g)
        np.testing.assert_allclose(p.data, [0.9, -0.9], rtol=1e-6)
        assert state.step == 1

    def test_shape_mismatch(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(UsageError):
            adam_step(init_adam_state([p]), [p], [np.ones(3)], lr=0.1)

    def test_non_positive_lr(self):
        p = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(UsageError):
            adam_step(init_adam_state([p]), [p], [np.ones(2)], lr=0.0)

    def test_clip_preserves_direction(self):
        grads = [np.array([3.0, 0.0]), np.array([[4.0]])]
        clipped = clip_gradients(grads, 1.0)
        assert global_norm(clipped) == pytest.approx(1.0)
        np.testing.assert_allclose(clipped[0], [0.6, 0.0])

    def test_clip_leaves_small_gradients(self):
        grads = [np.array([0.1, 0.1])]
        assert clip_gradients(grads, 1.0)[0] is grads[0]

    def test_optimizer_reports_pre_clip_norm(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        optimizer = AdamOptimizer([p], lr=0.01, grad_clip=0.5)
        assert optimizer.step([np.array([3.0, 4.0])]) == pytest.approx(5.0)
