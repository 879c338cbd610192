import numpy as np
import pytest

from deepcolloc import autodiff
from deepcolloc.autodiff import (
    HESS_PAIRS,
    Tape,
    backward_params,
    check_gradient,
    expand_hessian,
    fold_hessian,
    forward_order2,
    use_fused_kernels,
)
from deepcolloc.errors import EmptyTape
from deepcolloc.network import NetworkArch, flatten, forward, init_params, unflatten

from oracles import net_jets_ld


def _random_params(widths, seed, bias=0.5):
    p = init_params(NetworkArch(widths), seed)
    rng = np.random.default_rng(seed + 1000)
    for b in p.biases:
        b[:] = rng.uniform(-bias, bias, b.shape)
    return p


@pytest.fixture(params=[True, False], ids=["fused", "numpy"])
def kernels(request):
    prev = use_fused_kernels(request.param)
    yield request.param
    use_fused_kernels(prev)


class TestForwardJets:
    def test_zero_network(self, kernels):
        arch = NetworkArch((3, 6, 3))
        jet = forward_order2(unflatten(arch, np.zeros(arch.n_params)), np.ones((4, 3)))
        assert not jet.value.any() and not jet.jacobian.any() and not jet.hessian.any()

    def test_one_hidden_layer_closed_form(self, kernels):
        p = _random_params((3, 5, 3), 1)
        X = np.array([0.2, -0.4, 0.9])
        W1, W2 = p.weights
        t = np.tanh(W1 @ X + p.biases[0])
        f1 = 1 - t**2
        f2 = -2 * t * f1
        jet = forward_order2(p, X)
        np.testing.assert_allclose(jet.jacobian, W2 @ (f1[:, None] * W1), rtol=1e-13, atol=1e-15)
        H = np.einsum("ih,h,hj,hk->ijk", W2, f2, W1, W1)
        np.testing.assert_allclose(jet.hessian, H, rtol=1e-13, atol=1e-15)

    @pytest.mark.parametrize("widths", [(3, 8, 3), (3, 8, 8, 3), (3, 12, 7, 5, 3)])
    def test_against_long_double(self, widths, kernels):
        p = _random_params(widths, 3)
        X = np.random.default_rng(3).uniform(0, 2, (25, 3))
        jet = forward_order2(p, X)
        v, J, H = net_jets_ld(p.weights, p.biases, X)
        np.testing.assert_allclose(jet.value, v.astype(float), rtol=1e-13, atol=1e-14)
        np.testing.assert_allclose(jet.jacobian, J.astype(float), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(jet.hessian, H.astype(float), rtol=1e-11, atol=1e-13)

    def test_finite_difference(self):
        p = _random_params((3, 8, 3), 5)
        X = np.random.default_rng(5).uniform(0, 1, (10, 3))
        h = 1e-5
        jet = forward_order2(p, X)
        for d in range(3):
            e = np.zeros(3)
            e[d] = h
            fd = (forward(p, X + e) - forward(p, X - e)) / (2 * h)
            np.testing.assert_allclose(jet.jacobian[:, :, d], fd, rtol=1e-6, atol=1e-9)
            fdh = (forward_order2(p, X + e, order=1).jacobian - forward_order2(p, X - e, order=1).jacobian) / (2 * h)
            np.testing.assert_allclose(jet.hessian[:, :, :, d], fdh, rtol=1e-6, atol=1e-9)

    @pytest.mark.parametrize("widths", [(3, 1, 3), (3, 8, 3), (3, 60, 60, 60, 60, 3), (3, 4, 9, 2, 3)])
    def test_value_bit_identical_to_forward(self, widths, kernels):
        p = _random_params(widths, 7)
        X = np.random.default_rng(7).normal(size=(33, 3))
        for order in (0, 1, 2):
            assert forward_order2(p, X, order=order).value.tobytes() == forward(p, X).tobytes()

    def test_hessian_symmetric(self, kernels):
        p = _random_params((3, 10, 10, 3), 9)
        H = forward_order2(p, np.random.default_rng(9).uniform(size=(40, 3))).hessian
        np.testing.assert_array_equal(H, np.swapaxes(H, -1, -2))

    def test_single_point_shapes(self):
        jet = forward_order2(_random_params((3, 4, 3), 0), np.zeros(3))
        assert jet.value.shape == (3,) and jet.jacobian.shape == (3, 3) and jet.hessian.shape == (3, 3, 3)

    def test_fold_is_adjoint_of_expand(self):
        rng = np.random.default_rng(0)
        hs = rng.normal(size=(5, 3, 6))
        hb = rng.normal(size=(5, 3, 3, 3))
        assert np.sum(expand_hessian(hs) * hb) == pytest.approx(np.sum(hs * fold_hessian(hb)), rel=1e-13)
        assert len(HESS_PAIRS) == 6


class TestBackward:
    def test_empty_tape(self):
        with pytest.raises(EmptyTape):
            backward_params(Tape())

    def test_constant_root(self):
        p = _random_params((3, 6, 3), 0)
        tape = Tape()
        forward_order2(p, np.ones((3, 3)), tape)
        tape.set_root(4.2)
        g = backward_params(tape)
        assert g.shape == (p.arch.n_params,) and not g.any()

    def test_half_squared_output(self, kernels):
        # L = 1/2 sum |u|^2: dL/dW_out = sum_n u a_hidden^T, dL/db_out = sum_n u
        p = _random_params((3, 5, 3), 2)
        X = np.random.default_rng(2).uniform(size=(7, 3))
        tape = Tape()
        jet = forward_order2(p, X, tape, order=0)
        tape.seed(jet, value=jet.value)
        tape.set_root(0.5 * np.sum(jet.value**2))
        g = unflatten(p.arch, backward_params(tape))
        a = np.tanh(X @ p.weights[0].T + p.biases[0])
        np.testing.assert_allclose(g.weights[1], jet.value.T @ a, rtol=1e-13)
        np.testing.assert_allclose(g.biases[1], jet.value.sum(axis=0), rtol=1e-13)

    def test_linearity_in_seeds(self, kernels):
        p = _random_params((3, 6, 6, 3), 4)
        X = np.random.default_rng(4).uniform(size=(9, 3))
        rng = np.random.default_rng(44)
        seeds1 = [rng.normal(size=s) for s in ((9, 3), (9, 3, 3), (9, 3, 3, 3))]
        seeds2 = [rng.normal(size=s) for s in ((9, 3), (9, 3, 3), (9, 3, 3, 3))]

        def grad(seeds):
            tape = Tape()
            jet = forward_order2(p, X, tape)
            tape.seed(jet, *seeds)
            tape.set_root(0.0)
            return backward_params(tape)

        combo = grad([2.0 * a - 0.5 * b for a, b in zip(seeds1, seeds2)])
        np.testing.assert_allclose(combo, 2.0 * grad(seeds1) - 0.5 * grad(seeds2), rtol=1e-11, atol=1e-12)

    def test_jet_functional_matches_finite_differences(self, kernels):
        # a scalar using value, Jacobian and Hessian
        arch = NetworkArch((3, 7, 5, 3))
        p0 = _random_params(arch.layer_widths, 6)
        X = np.random.default_rng(6).uniform(size=(6, 3))
        c = np.random.default_rng(66)
        A, B, Cw = c.normal(size=(6, 3)), c.normal(size=(6, 3, 3)), c.normal(size=(6, 3, 3, 3))

        def f(flat):
            p = unflatten(arch, flat)
            tape = Tape()
            jet = forward_order2(p, X, tape)
            val = np.sum(A * jet.value**2) + np.sum(B * jet.jacobian) + np.sum(Cw * jet.hessian**2)
            tape.seed(jet, value=2 * A * jet.value, jacobian=B, hessian=2 * Cw * jet.hessian)
            tape.set_root(val)
            return val, backward_params(tape)

        assert check_gradient(f, flatten(p0), step=1e-6, floor=1e-8) < 1e-6

    def test_fused_matches_numpy(self):
        p = _random_params((3, 16, 16, 3), 8)
        X = np.random.default_rng(8).uniform(size=(50, 3))
        seeds = [np.random.default_rng(80).normal(size=s) for s in ((50, 3), (50, 3, 3), (50, 3, 3, 3))]
        out = []
        for flag in (True, False):
            prev = use_fused_kernels(flag)
            try:
                tape = Tape()
                jet = forward_order2(p, X, tape)
                tape.seed(jet, *seeds)
                tape.set_root(0.0)
                out.append((jet.jacobian, jet.hessian, backward_params(tape)))
            finally:
                use_fused_kernels(prev)
        for a, b in zip(*out):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)

    def test_seed_foreign_jet(self):
        p = _random_params((3, 4, 3), 0)
        jet = forward_order2(p, np.ones((2, 3)), Tape())
        with pytest.raises(ValueError):
            Tape().seed(jet, value=np.ones((2, 3)))


class TestCheckGradient:
    def test_quadratic(self):
        Q = np.array([[3.0, 1.0], [1.0, 2.0]])
        f = lambda x: (0.5 * x @ Q @ x, Q @ x)
        assert check_gradient(f, np.array([0.7, -1.3])) < 1e-9

    def test_detects_corruption(self):
        def f(x):
            g = 2 * x
            g = g.copy()
            g[1] *= 2.0
            return float(x @ x), g

        assert check_gradient(f, np.array([1.0, 2.0, 3.0])) == pytest.approx(0.5, abs=1e-6)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            check_gradient(lambda x: (0.0, x), np.ones(2), step=0.0)


def test_module_exports_kernel_switch():
    prev = use_fused_kernels(False)
    assert autodiff._FUSED is False
    use_fused_kernels(prev)
