"""MLP forward conventions, parameter counting, gradients, grid fitting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mono.gridfn import GridFunction, GridSpec
from mono.net import (Mlp, MlpSpec, TrainBudget, fit_function, gradient,
                      init_mlp, param_count, stored_param_count)


def _zero_mlp(spec):
    d = spec.widths
    return Mlp(spec,
               [np.zeros((d[j + 1], d[j])) for j in range(spec.depth)],
               [np.zeros(d[j + 1]) for j in range(spec.depth)],
               np.zeros(d[-1]))


class TestForward:
    def test_zero_net_outputs_shift(self):
        spec = MlpSpec((2, 3, 1), activation="tanh")
        net = _zero_mlp(spec)
        net.shift[:] = 3.0
        assert net.forward(np.array([0.7, -0.2])) == pytest.approx([3.0])

    def test_relu_sign_split(self):
        spec = MlpSpec((2, 2), activation="relu")
        net = Mlp(spec, [np.eye(2)], [np.zeros(2)], np.zeros(2))
        assert np.allclose(net.forward(np.array([1.0, -1.0])), [1.0, 0.0])

    def test_tanh_scalar(self):
        spec = MlpSpec((1, 1), activation="tanh")
        net = Mlp(spec, [np.array([[2.0]])], [np.zeros(1)], np.zeros(1))
        assert net.forward(np.array([0.5]))[0] == pytest.approx(np.tanh(1.0),
                                                                abs=1e-9)

    def test_activation_applied_before_final_shift(self):
        # the last recursion step is squashed too, so outputs live in c +- 1
        spec = MlpSpec((1, 1), activation="tanh")
        net = Mlp(spec, [np.array([[100.0]])], [np.zeros(1)], np.array([5.0]))
        assert net.forward(np.array([1.0]))[0] == pytest.approx(6.0, abs=1e-9)

    def test_linear_head_variant(self):
        spec = MlpSpec((1, 1), activation="tanh")
        net = Mlp(spec, [np.array([[100.0]])], [np.zeros(1)], np.array([5.0]))
        assert net.forward(np.array([1.0]), head="linear")[0] == \
            pytest.approx(105.0)

    def test_batched_matches_single(self):
        net = init_mlp(MlpSpec((3, 5, 2), activation="tanh"), seed=0)
        xs = np.random.default_rng(1).standard_normal((7, 3))
        batched = net.forward(xs)
        for i, x in enumerate(xs):
            assert np.allclose(batched[i], net.forward(x), atol=1e-14)


class TestParamCount:
    def test_hand_values(self):
        assert param_count(MlpSpec((1, 1))) == 4
        assert param_count(MlpSpec((2, 3, 1))) == 20

    def test_unit_width_closed_form(self):
        for layers in (1, 2, 5, 9):
            spec = MlpSpec(tuple([1] * (layers + 1)))
            assert param_count(spec) == 3 * layers + 1

    @given(st.lists(st.integers(1, 7), min_size=2, max_size=5))
    @settings(max_examples=50, deadline=None)
    def test_stored_count_matches_storage(self, widths):
        spec = MlpSpec(tuple(widths))
        net = init_mlp(spec, seed=0)
        stored = sum(p.size for p in net.parameters())
        assert stored == stored_param_count(spec)
        # the declared formula is neither below nor above storage in
        # general; pin its exact offset instead
        d = spec.widths
        offset = 2 * d[0] + sum(d[1:-1]) - d[-1]
        assert param_count(spec) - stored == offset


class TestGradient:
    def test_zero_upstream(self):
        net = init_mlp(MlpSpec((2, 4, 2)), seed=0)
        grads, gx = gradient(net, np.array([0.3, -0.8]), np.zeros(2))
        assert all(np.allclose(g, 0.0) for g in grads)
        assert np.allclose(gx, 0.0)

    def test_weight_gradient_at_zero_preactivation(self):
        # with A = 0, b = 0 the tanh slope is 1, so dOut/dA = upstream x^T
        spec = MlpSpec((3, 2), activation="tanh")
        net = _zero_mlp(spec)
        x = np.array([0.5, -1.0, 2.0])
        upstream = np.array([1.0, -2.0])
        grads, _ = gradient(net, x, upstream)
        assert np.allclose(grads[0], np.outer(upstream, x), atol=1e-9)

    def test_against_central_differences(self):
        rng = np.random.default_rng(7)
        for trial in range(6):
            spec = MlpSpec((2, 4, 3), activation="tanh")
            net = init_mlp(spec, seed=trial)
            x = rng.standard_normal(2)
            upstream = rng.standard_normal(3)
            grads, gx = gradient(net, x, upstream)
            params = net.parameters()
            h = 1e-6

            def loss_with(pidx, delta):
                plist = [p.copy() for p in params]
                plist[pidx] = plist[pidx] + delta
                nb = len(net.weights)
                trial_net = Mlp(spec, plist[:nb], plist[nb:2 * nb], plist[-1])
                return float(np.dot(trial_net.forward(x), upstream))

            for pidx, p in enumerate(params):
                flat = rng.choice(p.size, size=min(3, p.size), replace=False)
                for k in flat:
                    delta = np.zeros_like(p).reshape(-1)
                    delta[k] = h
                    delta = delta.reshape(p.shape)
                    fd = (loss_with(pidx, delta) - loss_with(pidx, -delta)) / (2 * h)
                    assert grads[pidx].reshape(-1)[k] == \
                        pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_relu_gradient_away_from_kinks(self):
        rng = np.random.default_rng(9)
        spec = MlpSpec((2, 5, 1), activation="relu")
        net = init_mlp(spec, seed=3)
        x = rng.standard_normal(2) + 0.5
        upstream = np.ones(1)
        grads, _ = gradient(net, x, upstream)
        h = 1e-6
        flatw = net.weights[0]
        for k in range(3):
            delta = np.zeros_like(flatw)
            delta[k % delta.shape[0], k % delta.shape[1]] = h
            plus = Mlp(spec, [flatw + delta, net.weights[1]], net.biases,
                       net.shift)
            minus = Mlp(spec, [flatw - delta, net.weights[1]], net.biases,
                        net.shift)
            fd = (plus.forward(x)[0] - minus.forward(x)[0]) / (2 * h)
            assert grads[0][k % delta.shape[0], k % delta.shape[1]] == \
                pytest.approx(fd, rel=1e-4, abs=1e-7)


class TestLipschitz:
    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_unit_spectral_norm_contracts(self, activation):
        rng = np.random.default_rng(11)
        spec = MlpSpec((3, 3, 3), activation=activation)
        net = init_mlp(spec, seed=5)
        weights = []
        for w in net.weights:
            s = np.linalg.norm(w, 2)
            weights.append(w / max(s, 1.0))
        net = Mlp(spec, weights, net.biases, net.shift)
        for _ in range(50):
            x, y = rng.standard_normal((2, 3))
            dist_out = np.linalg.norm(net.forward(x) - net.forward(y))
            assert dist_out <= np.linalg.norm(x - y) * (1 + 1e-12)


class TestFitFunction:
    def test_constant_target(self):
        grid = GridSpec(1, 65)
        target = GridFunction.constant(grid, 0.7)
        fit = fit_function(target, MlpSpec((1, 1), activation="relu"),
                           TrainBudget(epochs=800, learning_rate=5e-2, seed=0))
        assert fit.sup_error < 1e-3

    def test_relu_kink_target_exactly_representable(self):
        grid = GridSpec(1, 129)
        target = GridFunction.from_callable(
            grid, lambda x: np.maximum(x[:, 0] - 0.5, 0.0))
        fit = fit_function(target, MlpSpec((1, 1, 1), activation="relu"),
                           TrainBudget(epochs=6000, learning_rate=2e-2,
                                       seed=1, lr_decay=1e-3))
        assert fit.sup_error < 1e-4

    def test_depth_growth_never_hurts(self):
        # warm-starting a deeper net with identity layers preserves the
        # shallow solution, so the best achieved error is non-increasing
        from mono.basis import Fourier, build_basis
        from mono.gridfn import SobolevBallSpec, sample_sobolev_ball
        grid = GridSpec(1, 65)
        basis = build_basis(grid, Fourier(), 16)
        target = sample_sobolev_ball(
            SobolevBallSpec(smoothness=3.0, radius=1.0), basis, seed=3)
        width = 27  # the counting lemma's width at s=3, d=1
        budget = TrainBudget(epochs=500, learning_rate=1e-2, seed=0)
        errors = []
        prev = None
        for hidden_layers in (1, 2, 4):
            spec = MlpSpec((1,) + (width,) * hidden_layers + (1,),
                           activation="relu")
            init = None
            if prev is not None:
                # extend the previous net with identity blocks (non-negative
                # activations pass through relu unchanged)
                extra = hidden_layers - (len(prev.spec.widths) - 2)
                weights = prev.weights[:-1] \
                    + [np.eye(width)] * extra + [prev.weights[-1]]
                biases = prev.biases[:-1] \
                    + [np.zeros(width)] * extra + [prev.biases[-1]]
                init = Mlp(spec, weights, biases, prev.shift)
            fit = fit_function(target, spec, budget, init=init)
            errors.append(fit.sup_error)
            prev = fit.mlp
        assert errors[1] <= errors[0] + 1e-12
        assert errors[2] <= errors[1] + 1e-12

    def test_shape_validation(self):
        grid = GridSpec(2, 9)
        target = GridFunction.constant(grid, 1.0)
        with pytest.raises(ValueError):
            fit_function(target, MlpSpec((1, 1)), TrainBudget(epochs=1))
