import math

import numpy as np
import pytest

from equivar_act.activations import ActivationSpec
from equivar_act.harness import grad_check_model
from equivar_act.linalg import DomainError, apply_unitary, haar_unitary, random_stream, random_vector
from equivar_act.net import LayerParams, ModelParams, init_model, model_forward
from equivar_act.training import (
    DivergenceError,
    Gradient,
    MomentumState,
    NumericError,
    Task,
    TrainConfig,
    backward,
    dataset_loss,
    get_task,
    grad_check,
    loss,
    loss_and_grad,
    make_dataset,
    sgd_step,
    train,
)

ONE = ActivationSpec.generalized("identity")
SIGMOID = ActivationSpec.generalized("sigmoid")


def data(seed, samples, m, n, scale=1.0):
    return random_vector(random_stream(seed, "train-test"), (samples, m, n), scale=scale / math.sqrt(n))


def fd_gradient(m, x, t, h=1e-5):
    """Five-point central differences of the dataset loss, per parameter."""
    gw, gk = [], []
    for li, p in enumerate(m.layers):
        for attr, out in (("weights", gw), ("kappas", gk)):
            arr = getattr(p, attr)
            g = np.zeros_like(arr, dtype=float)
            for idx in np.ndindex(arr.shape):
                vals = []
                for step in (2, 1, -1, -2):
                    mm = m.copy()
                    getattr(mm.layers[li], attr)[idx] += step * h
                    vals.append(dataset_loss(mm, x, t))
                g[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            out.append(g)
    return gw, gk


class TestLoss:
    def test_equal(self):
        x = data(0, 1, 2, 3)[0]
        assert loss(x, x) == 0.0

    def test_unit_distance(self):
        assert loss([[1 + 0j]], [[0j]]) == 1.0

    def test_unitary_invariance(self):
        rng = random_stream(1, "loss")
        pred, target = random_vector(rng, (3, 8)), random_vector(rng, (3, 8))
        U = haar_unitary(8, 1)
        base = loss(pred, target)
        assert abs(loss(apply_unitary(U, pred), apply_unitary(U, target)) - base) <= 1e-12 * base

    def test_batch_mean(self):
        rng = random_stream(2, "loss")
        p, t = random_vector(rng, (5, 2, 3)), random_vector(rng, (5, 2, 3))
        assert loss(p, t) == pytest.approx(np.mean([loss(p[i], t[i]) for i in range(5)]), rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestBackward:
    def test_linear_model_closed_form(self):
        # f = 1 everywhere: y = W x, dL/dW_ij = 2/S sum_s Re<W x_s - t_s, x_sj>
        m = init_model([3, 2], 4, ONE, seed=3)
        x, t = data(3, 6, 3, 4), data(4, 6, 2, 4)
        W = m.layers[0].weights
        expected = np.zeros_like(W)
        for s in range(6):
            resid = [sum(W[i, j] * x[s, j] for j in range(3)) - t[s, i] for i in range(2)]
            for i in range(2):
                for j in range(3):
                    expected[i, j] += 2.0 / 6 * float(np.sum(resid[i].real * x[s, j].real + resid[i].imag * x[s, j].imag))
        g = backward(m, x, t)
        np.testing.assert_allclose(g.weights[0], expected, rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(g.kappas[0], 0.0)

    def test_zero_signal_at_target(self):
        m = grad_check_model(0, 2)[0]
        x = grad_check_model(0, 2)[1]
        g = backward(m, x, model_forward(m, x))
        assert g.max_abs() <= 1e-12

    # every fifth model has complex weights; those go through grad_check instead
    @pytest.mark.parametrize("index", [i for i in range(12) if i % 5 != 4])
    def test_matches_five_point_stencil(self, index):
        m, x, t = grad_check_model(11, index)
        analytic = backward(m, x, t)
        gw, gk = fd_gradient(m, x, t)
        for a, b in zip(analytic.weights + analytic.kappas, gw + gk):
            np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-8)

    def test_seeded_two_layer_n4(self):
        m = init_model([2, 3, 2], 4, [SIGMOID, ActivationSpec.generalized("tanh")], seed=8)
        m.layers[0].kappas[:] = [0.2, -0.3, 0.5]
        x, t = data(8, 5, 2, 4), data(9, 5, 2, 4, 0.5)
        rep = grad_check(m, x, t)
        assert rep.passed and not rep.flagged
        assert rep.max_error <= 1e-5

    def test_non_finite_reports_layer(self):
        m = ModelParams([LayerParams([[1.0]], [0.0], ONE), LayerParams([[1e300]], [0.0], SIGMOID)], 2)
        with pytest.raises(NumericError, match="layer 1, node 0"):
            backward(m, np.full((1, 1, 2), 1e10 + 0j), np.zeros((1, 1, 2)))


class TestSGD:
    def _scalar_model(self, w=1.0, kappa=0.0):
        return ModelParams([LayerParams([[w]], [kappa], SIGMOID)], 1)

    def test_zero_gradient(self):
        m = init_model([2, 3], 2, SIGMOID, seed=0)
        out = sgd_step(m, Gradient.zeros_like(m), TrainConfig(learning_rate=0.1, momentum=0.5))
        for p, q in zip(m.layers, out.layers):
            np.testing.assert_array_equal(p.weights, q.weights)
            np.testing.assert_array_equal(p.kappas, q.kappas)

    def test_weight_update(self):
        m = self._scalar_model(w=1.0)
        out = sgd_step(m, Gradient([np.array([[2.0]])], [np.array([0.0])]), TrainConfig(learning_rate=0.1, momentum=0.0))
        assert out.layers[0].weights[0, 0] == pytest.approx(0.8, abs=1e-15)
        assert m.layers[0].weights[0, 0] == 1.0  # input untouched

    def test_kappa_update(self):
        m = self._scalar_model(kappa=0.0)
        out = sgd_step(m, Gradient([np.array([[0.0]])], [np.array([1.0])]), TrainConfig(learning_rate=0.1, momentum=0.0))
        assert out.layers[0].kappas[0] == pytest.approx(-0.1, abs=1e-15)

    def test_momentum_accumulates(self):
        m = self._scalar_model(w=1.0)
        g = Gradient([np.array([[1.0]])], [np.array([0.0])])
        cfg = TrainConfig(learning_rate=0.1, momentum=0.5)
        state = MomentumState()
        m = sgd_step(m, g, cfg, state)
        m = sgd_step(m, g, cfg, state)
        # velocities 1 then 1.5
        assert m.layers[0].weights[0, 0] == pytest.approx(1.0 - 0.1 - 0.15, abs=1e-15)

    @pytest.mark.parametrize("kw", [{"learning_rate": -1}, {"momentum": 1.0}, {"steps": -1}, {"batch_size": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(DomainError):
            TrainConfig(**kw)


class TestTrain:
    def test_zero_lr_constant_history(self):
        _, h = train(TrainConfig(learning_rate=0.0, steps=20), "identity-fit")
        assert len(h) == 21
        assert np.all(h == h[0])

    def test_zero_steps(self):
        m, h = train(TrainConfig(steps=0), "identity-fit")
        assert len(h) == 1

    def test_deterministic(self):
        cfg = TrainConfig(steps=200, seed=5)
        m1, h1 = train(cfg, "teacher-student")
        m2, h2 = train(cfg, "teacher-student")
        np.testing.assert_array_equal(h1, h2)
        np.testing.assert_array_equal(m1.layers[0].weights, m2.layers[0].weights)

    def test_kappa_moves(self):
        m, _ = train(TrainConfig(steps=100), "identity-fit")
        assert np.any(m.layers[0].kappas != 0)

    def test_identity_fit_short(self):
        _, h = train(TrainConfig(steps=500), "identity-fit")
        assert h[-1] < 0.1 * h[0]
        # decreasing on average: each block of 50 steps ends lower than it started
        blocks = h[::50]
        assert np.all(np.diff(blocks) < 0)

    def test_divergence_aborts(self):
        with pytest.raises(DivergenceError, match="step"):
            train(TrainConfig(learning_rate=50.0, steps=50), "identity-fit")

    def test_minibatch_deterministic(self):
        cfg = TrainConfig(steps=100, batch_size=8, seed=2)
        _, h1 = train(cfg, "identity-fit")
        _, h2 = train(cfg, "identity-fit")
        np.testing.assert_array_equal(h1, h2)
        assert h1[-1] < h1[0]

    def test_custom_task(self):
        task = Task("teacher-student", widths=(1, 2, 1), vector_dim=3, activation=ActivationSpec.generalized("tanh"))
        x, t = make_dataset(task, 0)
        assert x.shape == (32, 1, 3) and t.shape == (32, 1, 3)
        _, h = train(TrainConfig(steps=50), task)
        assert h[-1] < h[0]

    def test_unknown_task(self):
        with pytest.raises(DomainError):
            get_task("xor")


class TestGradCheck:
    def test_identity_profile_model(self):
        m = init_model([2, 3, 2], 3, ONE, seed=1)
        x, t = data(1, 4, 2, 3), data(2, 4, 2, 3)
        rep = grad_check(m, x, t)
        assert rep.passed and rep.max_error <= 1e-7

    def test_sigmoid_model(self):
        m = init_model([3, 2], 4, SIGMOID, seed=4)
        m.layers[0].kappas[:] = [0.3, -0.2]
        rep = grad_check(m, data(4, 4, 3, 4), data(5, 4, 2, 4))
        assert rep.passed and rep.max_error <= 1e-5

    def test_leaky_kink_is_flagged(self):
        m = ModelParams([LayerParams([[1.0], [0.3]], [0.0, 0.0], ActivationSpec.leaky(0.1, 1.0))], 2)
        x = np.array([[[1.0 + 0j, 0.0]]])  # node 0 sits exactly on ||u|| = c
        t = np.array([[[0.2, 0.1j], [0.5, 0.0]]])
        rep = grad_check(m, x, t)
        flagged = {(e.name, e.index) for e in rep.flagged}
        assert flagged == {("weight", (0, 0)), ("kappa", (0,))}
        assert all(e.index[0] == 1 for e in rep.checked)
        assert rep.passed

    def test_complex_weights(self):
        m, x, t = grad_check_model(0, 4)
        assert m.complex_weights
        rep = grad_check(m, x, t)
        assert any(e.name == "weight_imag" for e in rep.entries)
        assert rep.passed

    def test_worst_ordering(self):
        m, x, t = grad_check_model(0, 0)
        worst = grad_check(m, x, t).worst(3)
        assert worst[0].error >= worst[-1].error


def test_loss_and_grad_value_matches_dataset_loss():
    m, x, t = grad_check_model(3, 1)
    value, _ = loss_and_grad(m, x, t)
    assert value == dataset_loss(m, x, t)
