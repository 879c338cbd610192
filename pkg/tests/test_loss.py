import numpy as np
import pytest

from deepcolloc.autodiff import Jet2, check_gradient
from deepcolloc.errors import EmptySet, NonPositiveJacobian
from deepcolloc.geometry import BoxDomain, build_collocation_set, cantilever_bcs
from deepcolloc.loss import CollocationLoss, LossBreakdown, PenaltyWeights, assemble_loss, interior_residual
from deepcolloc.materials import MaterialConstants, PlasticPointState, make_model
from deepcolloc.network import NetworkArch, flatten, init_params, unflatten

from oracles import central_difference_gradient, elastic_loss_ld, max_relative_error

UNIT = MaterialConstants(lam=1.0, mu=1.0)
ARCH = NetworkArch((3, 8, 8, 3))


def _colloc(n=(30, 20, 24), seed=0, C=0.2):
    return build_collocation_set(BoxDomain(), cantilever_bcs(C), *n, seed)


def _params(seed, scale=0.5):
    p = init_params(ARCH, seed)
    rng = np.random.default_rng(seed)
    for b in p.biases:
        b[:] = rng.uniform(-0.3, 0.3, b.shape)
    return unflatten(ARCH, flatten(p) * scale)


class TestInteriorResidual:
    def test_zero_field(self):
        jet = Jet2(np.zeros((4, 3)), np.zeros((4, 3, 3)), np.zeros((4, 3, 3, 3)))
        for kind in ("elastic", "neohookean"):
            assert not interior_residual(jet, make_model(kind, UNIT)).any()

    def test_affine_field(self):
        A = np.random.default_rng(0).normal(scale=0.1, size=(3, 3))
        jet = Jet2(np.zeros((5, 3)), np.broadcast_to(A, (5, 3, 3)).copy(), np.zeros((5, 3, 3, 3)))
        for kind in ("elastic", "neohookean"):
            np.testing.assert_allclose(interior_residual(jet, make_model(kind, UNIT)), 0.0, atol=1e-15)

    def test_quadratic_field(self):
        # u = (x^2, 0, 0) at x = 0.3
        G = np.zeros((1, 3, 3))
        G[0, 0, 0] = 0.6
        H = np.zeros((1, 3, 3, 3))
        H[0, 0, 0, 0] = 2.0
        r = interior_residual(Jet2(np.zeros((1, 3)), G, H), make_model("elastic", UNIT))
        np.testing.assert_allclose(r, [[6.0, 0.0, 0.0]], atol=1e-15)

    def test_body_force(self):
        jet = Jet2(np.zeros((2, 3)), np.zeros((2, 3, 3)), np.zeros((2, 3, 3, 3)))
        r = interior_residual(jet, make_model("elastic", UNIT), body_force=lambda X: X + 1.0, X=np.ones((2, 3)))
        np.testing.assert_array_equal(r, np.full((2, 3), 2.0))

    def test_inverted_raises(self):
        G = np.zeros((1, 3, 3))
        G[0, 0, 0] = -1.5
        jet = Jet2(np.zeros((1, 3)), G, np.zeros((1, 3, 3, 3)))
        with pytest.raises(NonPositiveJacobian):
            interior_residual(jet, make_model("neohookean", UNIT))


class TestAssembly:
    def test_exact_solution_zero_loss(self):
        col = _colloc(C=0.0)
        zero = unflatten(ARCH, np.zeros(ARCH.n_params))
        for kind in ("elastic", "neohookean"):
            br, g = assemble_loss(zero, col, make_model(kind, UNIT))
            assert br.total == 0.0 and not g.any()

    def test_total_from_parts(self):
        br = LossBreakdown(0.5, 0.25, 0.125, PenaltyWeights(2.0, 4.0))
        assert br.total == 0.5 + 2.0 * 0.25 + 4.0 * 0.125

    def test_weight_linearity(self):
        col = _colloc()
        p = _params(1)
        model = make_model("elastic", UNIT)
        b1, _ = assemble_loss(p, col, model, PenaltyWeights(1.0, 1.0))
        b2, _ = assemble_loss(p, col, model, PenaltyWeights(2.0, 1.0))
        assert b2.mse_g == b1.mse_g and b2.mse_t == b1.mse_t and b2.mse_u == b1.mse_u
        assert b2.total - b1.total == pytest.approx(b1.mse_u, rel=1e-12)

    def test_masked_components_ignored(self):
        col = _colloc()
        p = _params(2)
        model = make_model("elastic", UNIT)
        ref, _ = assemble_loss(p, col, model)
        col.essential_targets[col.essential_masks == 0] = 123.0
        br, _ = assemble_loss(p, col, model)
        assert br.mse_u == ref.mse_u

    def test_nonnegative(self):
        for seed in range(5):
            br, _ = assemble_loss(_params(seed), _colloc(seed=seed), make_model("elastic", UNIT))
            assert br.mse_g >= 0 and br.mse_u >= 0 and br.mse_t >= 0

    @pytest.mark.parametrize("kind", ["elastic", "neohookean", "j2plastic"])
    def test_permutation_bit_invariance(self, kind):
        mats = MaterialConstants.from_young(1.0, 0.3, sigma_y=0.02, K=0.1, H=0.1)
        col = _colloc((300, 200, 240), seed=3)
        perm = col.permuted(5)
        p = _params(3)
        states = (PlasticPointState.virgin(300), PlasticPointState.virgin(240)) if kind == "j2plastic" else None
        model = make_model(kind, mats, states[0] if states else None)
        a, ga = assemble_loss(p, col, model, states=states, chunk_size=64)
        b, gb = assemble_loss(p, perm, model, states=states, chunk_size=64)
        assert (a.mse_g, a.mse_u, a.mse_t) == (b.mse_g, b.mse_u, b.mse_t)
        np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-14)

    def test_chunking_and_threads(self):
        col = _colloc((500, 300, 300), seed=4)
        p = _params(4)
        model = make_model("elastic", UNIT)
        ref, gref = assemble_loss(p, col, model)
        small, gsmall = assemble_loss(p, col, model, chunk_size=37)
        assert (ref.mse_g, ref.mse_u, ref.mse_t) == (small.mse_g, small.mse_u, small.mse_t)
        np.testing.assert_allclose(gsmall, gref, rtol=1e-11, atol=1e-15)
        one, g1 = assemble_loss(p, col, model, chunk_size=37, threads=1)
        four, g4 = assemble_loss(p, col, model, chunk_size=37, threads=4)
        assert one.total == four.total and g1.tobytes() == g4.tobytes()

    def test_empty_class(self):
        col = _colloc()
        col.traction_points = col.traction_points[:0]
        with pytest.raises(EmptySet):
            CollocationLoss(ARCH, col, make_model("elastic", UNIT))

    def test_plastic_needs_states(self):
        mats = MaterialConstants.from_young(1.0, 0.3, sigma_y=0.02)
        with pytest.raises(ValueError):
            CollocationLoss(ARCH, _colloc(), make_model("j2plastic", mats, PlasticPointState.virgin(30)))

    def test_scale_is_a_change_of_units(self):
        # loss of N with scale s == plain loss of s*N divided by s^2
        col = _colloc()
        p = _params(6)
        s = 0.05
        model = make_model("elastic", UNIT)
        q = p.copy()
        q.weights[-1] = q.weights[-1] * s
        q.biases[-1] = q.biases[-1] * s
        scaled, _ = assemble_loss(p, col, model, scale=s)
        plain, _ = assemble_loss(q, col, model)
        assert scaled.total == pytest.approx(plain.total / s**2, rel=1e-12)

    def test_neohookean_barrier(self):
        col = _colloc((40, 20, 24), seed=1)
        p = _params(8, scale=1.0)
        p.weights[-1] *= 8.0
        loss = CollocationLoss(ARCH, col, make_model("neohookean", UNIT), barrier=10.0)
        br, g = loss.evaluate(p)
        assert br.n_inverted > 0
        assert np.all(np.isfinite(g))
        assert br.total >= 100.0 / 40


class TestGradient:
    @pytest.mark.parametrize("seed", range(3))
    def test_against_long_double_oracle(self, seed):
        col = _colloc((10, 8, 12), seed=seed)
        weights = PenaltyWeights(1.5, 0.7)
        x = flatten(_params(seed))
        loss = CollocationLoss(ARCH, col, make_model("elastic", UNIT), weights)
        f, g = loss(x)

        def f_ld(v):
            return elastic_loss_ld(
                ARCH.layer_widths, v, 1.0, 1.0, col.interior, col.essential_points, col.essential_targets,
                col.essential_masks, col.traction_points, col.traction_normals, col.traction_targets, 1.5, 0.7,
            )

        assert f == pytest.approx(float(f_ld(x)), rel=1e-12)
        assert max_relative_error(g, central_difference_gradient(f_ld, x, 1e-6)) < 1e-6

    @pytest.mark.parametrize("kind", ["neohookean", "j2plastic"])
    def test_finite_differences(self, kind):
        mats = MaterialConstants.from_young(1.0, 0.3, sigma_y=0.02, K=0.1, H=0.1)
        col = _colloc((20, 12, 16), seed=2)
        rng = np.random.default_rng(0)
        states = None
        if kind == "j2plastic":
            def random_state(n):
                e = rng.normal(scale=0.02, size=(n, 3, 3))
                e = 0.5 * (e + np.swapaxes(e, 1, 2))
                e -= np.trace(e, axis1=1, axis2=2)[:, None, None] * np.eye(3) / 3
                return PlasticPointState(e, 0.1 * e, np.abs(rng.normal(scale=0.01, size=n)))

            states = (random_state(20), random_state(16))
        model = make_model(kind, mats, states[0] if states else None)
        loss = CollocationLoss(ARCH, col, model, states=states, scale=0.2)
        x = flatten(_params(5))
        gmax = np.abs(loss(x)[1]).max()
        assert check_gradient(loss, x, step=1e-6, floor=1e-4 * gmax) < 1e-6
