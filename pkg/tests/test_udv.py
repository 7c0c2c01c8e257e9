import numpy as np
import pytest

from udufact import udv


def fd_param_grads(params, Xb, Yb, h=1e-6):
    """Central finite differences of batch_loss in all parameters."""
    def loss_at(U, V, w):
        return udv.batch_loss(udv.UdvParams(U, V, w, params.variant), Xb, Yb)

    dU = np.zeros_like(params.U)
    for idx in np.ndindex(params.U.shape):
        E = np.zeros_like(params.U)
        E[idx] = h
        dU[idx] = (
            loss_at(params.U + E, params.V, params.w)
            - loss_at(params.U - E, params.V, params.w)
        ) / (2 * h)
    dV = np.zeros_like(params.V)
    for idx in np.ndindex(params.V.shape):
        E = np.zeros_like(params.V)
        E[idx] = h
        dV[idx] = (
            loss_at(params.U, params.V + E, params.w)
            - loss_at(params.U, params.V - E, params.w)
        ) / (2 * h)
    dw = None
    if params.w is not None:
        dw = np.zeros_like(params.w)
        for j in range(params.w.size):
            e = np.zeros_like(params.w)
            e[j] = h
            dw[j] = (
                loss_at(params.U, params.V, params.w + e)
                - loss_at(params.U, params.V, params.w - e)
            ) / (2 * h)
    return dU, dw, dV


def random_params(rng, variant, d=6, c=3, m=4):
    U = rng.standard_normal((d, m)) * 0.3
    V = rng.standard_normal((c, m)) * 0.3
    w = None if variant == udv.UV else np.abs(rng.standard_normal(m)) + 0.1
    return udv.UdvParams(U, V, w, variant)


class TestParams:
    def test_uv_drops_w(self):
        p = udv.UdvParams(np.eye(3), np.eye(3), np.ones(3), udv.UV)
        assert p.w is None

    def test_constrained_variants_require_w(self):
        with pytest.raises(ValueError):
            udv.UdvParams(np.eye(3), np.eye(3), None, udv.UDV)

    def test_product_and_middle(self):
        U = np.array([[1.0, 0.0], [0.0, 2.0]])
        V = np.array([[1.0, 1.0]])
        w = np.array([3.0, 4.0])
        p = udv.UdvParams(U, V, w, udv.UDV)
        np.testing.assert_allclose(p.middle(), U * w)
        np.testing.assert_allclose(p.product(), (V * w) @ U.T)

    def test_json_roundtrip(self):
        rng = np.random.default_rng(0)
        for variant in udv.VARIANTS:
            p = random_params(rng, variant)
            p2 = udv.UdvParams.from_json(p.to_json())
            np.testing.assert_array_equal(p2.U, p.U)
            np.testing.assert_array_equal(p2.V, p.V)
            if p.w is None:
                assert p2.w is None
            else:
                np.testing.assert_array_equal(p2.w, p.w)
            assert p2.variant == variant


class TestForward:
    def test_single_matches_batch(self):
        rng = np.random.default_rng(1)
        p = random_params(rng, udv.UDV)
        X = rng.standard_normal((5, 6))
        batch = udv.batch_forward(p, X)
        for i in range(5):
            np.testing.assert_allclose(udv.forward(p, X[i]), batch[i], rtol=1e-12)

    def test_loss_is_mean_of_halved_squares(self):
        rng = np.random.default_rng(2)
        p = random_params(rng, udv.UV)
        X = rng.standard_normal((4, 6))
        Y = rng.standard_normal((4, 3))
        R = udv.batch_forward(p, X) - Y
        expected = 0.5 * np.sum(R**2) / 4
        assert udv.batch_loss(p, X, Y) == pytest.approx(expected)

    def test_empty_batch_rejected(self):
        p = random_params(np.random.default_rng(3), udv.UV)
        with pytest.raises(ValueError):
            udv.batch_loss(p, np.zeros((0, 6)), np.zeros((0, 3)))


class TestGrads:
    @pytest.mark.parametrize("variant", udv.VARIANTS)
    def test_matches_finite_differences(self, variant):
        rng = np.random.default_rng(4)
        p = random_params(rng, variant)
        X = rng.standard_normal((7, 6))
        Y = rng.standard_normal((7, 3))
        dU, dw, dV = udv.param_grads(p, X, Y)
        fU, fw, fV = fd_param_grads(p, X, Y)
        np.testing.assert_allclose(dU, fU, atol=1e-7)
        np.testing.assert_allclose(dV, fV, atol=1e-7)
        if p.w is None:
            assert dw is None
        else:
            np.testing.assert_allclose(dw, fw, atol=1e-7)


class TestConstraints:
    def test_fro_ball_variants(self):
        rng = np.random.default_rng(5)
        p = udv.UdvParams(
            rng.standard_normal((6, 4)) * 10,
            rng.standard_normal((3, 4)) * 10,
            rng.standard_normal(4),
            udv.UDV,
        )
        out = udv.apply_constraints(p)
        assert np.linalg.norm(out.U) <= 1 + 1e-12
        assert np.linalg.norm(out.V) <= 1 + 1e-12
        assert np.all(out.w >= 0)
        udv.check_constraints(out)

    def test_signed_variant_keeps_negative_w(self):
        p = udv.UdvParams(np.eye(3), np.eye(3), np.array([-1.0, 1.0, 2.0]), udv.UDV_S)
        out = udv.apply_constraints(p)
        assert out.w[0] == -1.0
        udv.check_constraints(out)

    def test_per_column_variants(self):
        rng = np.random.default_rng(6)
        p = udv.UdvParams(
            rng.standard_normal((6, 4)) * 5,
            rng.standard_normal((3, 4)) * 5,
            rng.standard_normal(4),
            udv.UDV_V1,
        )
        out = udv.apply_constraints(p)
        assert np.all(np.linalg.norm(out.U, axis=0) <= 1 + 1e-12)
        assert np.all(np.linalg.norm(out.V, axis=0) <= 1 + 1e-12)
        assert np.all(out.w >= 0)
        udv.check_constraints(out)

    def test_per_column_small_columns_untouched(self):
        U = np.array([[0.5, 2.0], [0.0, 0.0]])
        p = udv.UdvParams(U, np.zeros((1, 2)), np.ones(2), udv.UDV_V2)
        out = udv.apply_constraints(p)
        assert out.U[0, 0] == 0.5
        assert abs(np.linalg.norm(out.U[:, 1]) - 1.0) < 1e-12

    def test_uv_unconstrained(self):
        p = udv.UdvParams(np.eye(3) * 100, np.eye(3) * 100, None, udv.UV)
        out = udv.apply_constraints(p)
        np.testing.assert_array_equal(out.U, p.U)
        udv.check_constraints(out)

    def test_check_raises_on_violation(self):
        p = udv.UdvParams(np.eye(3) * 2, np.eye(3), np.ones(3), udv.UDV)
        with pytest.raises(AssertionError):
            udv.check_constraints(p)


class TestInit:
    def test_truncated_normal_bounds(self):
        rng = np.random.default_rng(7)
        out = udv._truncated_normal(rng, (100, 100), 0.02)
        assert np.max(np.abs(out)) <= 2 * 0.02

    def test_init_shapes_and_w(self):
        rng = np.random.default_rng(8)
        p = udv.init_params(6, 3, 4, udv.UDV, rng)
        assert p.U.shape == (6, 4)
        assert p.V.shape == (3, 4)
        np.testing.assert_array_equal(p.w, np.ones(4))
        p = udv.init_params(6, 3, 4, udv.UV, rng)
        assert p.w is None

    def test_hidden_width_positive(self):
        assert udv.hidden_width(40, 5) >= 1


class TestTrain:
    def test_zero_epochs_returns_init(self):
        ds = udv.make_regression(6, 3, 50, 2, seed=0)
        cfg = udv.TrainConfig(lr=0.05, epochs=0, seed=0)
        params, trace = udv.train(ds, cfg, m=4)
        assert trace == []
        rng = np.random.default_rng(0)
        expected = udv.init_params(6, 3, 4, udv.UDV, rng)
        np.testing.assert_array_equal(params.U, expected.U)

    def test_loss_decreases(self):
        ds = udv.make_regression(8, 3, 200, 2, seed=1)
        cfg = udv.TrainConfig(lr=0.05, epochs=20, seed=1)
        params, trace = udv.train(ds, cfg)
        init_loss = udv.batch_loss(
            udv.init_params(8, 3, params.hidden_width, udv.UDV, np.random.default_rng(1)),
            ds.X_train,
            ds.Y_train,
        )
        assert trace[-1].train_loss < init_loss

    def test_deterministic(self):
        ds = udv.make_regression(6, 2, 80, 1, seed=2)
        cfg = udv.TrainConfig(lr=0.05, epochs=5, seed=3)
        p1, t1 = udv.train(ds, cfg, m=4)
        p2, t2 = udv.train(ds, cfg, m=4)
        np.testing.assert_array_equal(p1.U, p2.U)
        assert [r.train_loss for r in t1] == [r.train_loss for r in t2]

    def test_trace_records_svals_of_middle(self):
        ds = udv.make_regression(6, 2, 80, 1, seed=4)
        cfg = udv.TrainConfig(lr=0.05, epochs=2, seed=4)
        params, trace = udv.train(ds, cfg, m=4)
        np.testing.assert_allclose(
            trace[-1].svals, np.linalg.svd(params.middle(), compute_uv=False)
        )

    def test_validation(self):
        ds = udv.make_regression(6, 2, 80, 1, seed=5)
        with pytest.raises(ValueError):
            udv.train(ds, udv.TrainConfig(lr=-1.0))
        with pytest.raises(ValueError):
            udv.train(ds, udv.TrainConfig(lr=0.1, momentum=1.0))
        with pytest.raises(ValueError):
            udv.train(ds, udv.TrainConfig(lr=0.1, variant="deep"))


class TestPrune:
    def test_keep_rank_preserves_product_when_full(self):
        rng = np.random.default_rng(9)
        p = random_params(rng, udv.UDV)
        pruned = udv.svd_prune(p, keep_rank=p.hidden_width)
        np.testing.assert_allclose(pruned.product(), p.product(), atol=1e-12)

    def test_keep_rank_truncates_width(self):
        rng = np.random.default_rng(10)
        p = random_params(rng, udv.UDV)
        pruned = udv.svd_prune(p, keep_rank=2)
        assert pruned.hidden_width == 2
        assert pruned.U.shape == (6, 2)
        assert pruned.V.shape == (3, 2)
        assert pruned.w.shape == (2,)

    def test_truncation_is_best_rank_r(self):
        rng = np.random.default_rng(11)
        p = random_params(rng, udv.UDV)
        pruned = udv.svd_prune(p, keep_rank=2)
        # middle of the pruned net equals the best rank-2 approximation of the
        # original middle up to the dropped tail energy
        M = p.middle()
        S = np.linalg.svd(M, compute_uv=False)
        approx = (pruned.U * pruned.w) @ np.linalg.svd(M, full_matrices=False)[2][:2]
        assert np.linalg.norm(M - approx) == pytest.approx(
            np.sqrt(np.sum(S[2:] ** 2)), rel=1e-9
        )

    def test_keep_energy_exact_low_rank(self):
        # a middle of exact rank 2 keeps width 2 at any energy threshold < 1
        U = np.zeros((5, 4))
        U[0, 0] = 3.0
        U[1, 1] = 1.0
        p = udv.UdvParams(U, np.ones((2, 4)) * 0.1, np.ones(4), udv.UDV)
        pruned = udv.svd_prune(p, keep_energy=0.999)
        assert pruned.hidden_width == 2

    def test_uv_prune_folds_singular_values(self):
        rng = np.random.default_rng(12)
        p = random_params(rng, udv.UV)
        pruned = udv.svd_prune(p, keep_rank=p.hidden_width)
        assert pruned.w is None
        np.testing.assert_allclose(pruned.product(), p.product(), atol=1e-12)

    def test_exactly_one_mode(self):
        p = random_params(np.random.default_rng(13), udv.UDV)
        with pytest.raises(ValueError):
            udv.svd_prune(p)
        with pytest.raises(ValueError):
            udv.svd_prune(p, keep_rank=1, keep_energy=0.9)
        with pytest.raises(ValueError):
            udv.svd_prune(p, keep_rank=99)
        with pytest.raises(ValueError):
            udv.svd_prune(p, keep_energy=1.5)


class TestMakeRegression:
    def test_shapes_and_split(self):
        ds = udv.make_regression(10, 4, 100, 2, seed=0)
        assert ds.X.shape == (100, 10)
        assert ds.Y.shape == (100, 4)
        assert len(ds.train_idx) == 80
        assert len(ds.test_idx) == 20
        assert set(ds.train_idx) | set(ds.test_idx) == set(range(100))
        assert not set(ds.train_idx) & set(ds.test_idx)

    def test_noiseless_targets_have_generating_rank(self):
        ds = udv.make_regression(10, 4, 100, 2, noise=0.0, seed=1)
        W, *_ = np.linalg.lstsq(ds.X, ds.Y, rcond=None)
        assert np.linalg.matrix_rank(W, tol=1e-8) == 2

    def test_r_gen_validated(self):
        with pytest.raises(ValueError):
            udv.make_regression(10, 4, 100, 5, seed=0)
