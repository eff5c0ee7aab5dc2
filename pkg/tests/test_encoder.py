import numpy as np
import pytest

from predin.encoder import (
    EncoderParams,
    EncoderSpec,
    TrainBatch,
    encoder_backward,
    encoder_forward,
    finite_diff_check,
    init_encoder,
    init_optimizer,
    load_encoder,
    lr_schedule,
    save_encoder,
    sgd_step,
)

from oracles import mlp_forward_scalar

SPEC = EncoderSpec(input_dim=5, hidden_dims=(7,), output_dim=4, activation="relu")


class TestInit:
    def test_deterministic(self):
        a = init_encoder(SPEC, seed=3)
        b = init_encoder(SPEC, seed=3)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_distinct_seeds_differ(self):
        a = init_encoder(SPEC, seed=1)
        b = init_encoder(SPEC, seed=2)
        assert any(not np.array_equal(wa, wb) for wa, wb in zip(a.weights, b.weights))

    def test_shapes(self):
        spec = EncoderSpec(input_dim=64, hidden_dims=(), output_dim=128)
        params = init_encoder(spec, seed=0)
        assert params.weights[0].shape == (128, 64)
        assert params.biases[0].shape == (128,)

    def test_biases_zero_weights_scaled(self):
        params = init_encoder(EncoderSpec(1000, (), 1000), seed=0)
        assert not params.biases[0].any()
        # He scale sqrt(2/1000)
        assert params.weights[0].std() == pytest.approx(np.sqrt(2.0 / 1000), rel=0.05)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            EncoderSpec(input_dim=0, hidden_dims=(4,), output_dim=2)
        with pytest.raises(ValueError):
            EncoderSpec(input_dim=4, hidden_dims=(4,), output_dim=2, activation="swish")


class TestForward:
    def test_zero_params_zero_output(self):
        params = init_encoder(SPEC, seed=0)
        for w in params.weights:
            w[:] = 0.0
        emb, _ = encoder_forward(params, np.ones((3, 5)))
        np.testing.assert_array_equal(emb, np.zeros((3, 4)))

    def test_single_linear_layer_identity(self):
        spec = EncoderSpec(input_dim=4, hidden_dims=(), output_dim=4)
        params = init_encoder(spec, seed=0)
        params.weights[0][:] = np.eye(4)
        x = np.random.default_rng(0).standard_normal((6, 4))
        emb, _ = encoder_forward(params, x)
        np.testing.assert_array_equal(emb, x)

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_matches_scalar_reference(self, activation):
        spec = EncoderSpec(input_dim=5, hidden_dims=(7, 6), output_dim=4, activation=activation)
        params = init_encoder(spec, seed=9)
        x = np.random.default_rng(1).standard_normal((2, 5))
        emb, _ = encoder_forward(params, x)
        for i in range(2):
            ref = mlp_forward_scalar(params.weights, params.biases, activation, x[i])
            np.testing.assert_allclose(emb[i], ref, atol=1e-12)

    def test_dimension_mismatch(self):
        params = init_encoder(SPEC, seed=0)
        with pytest.raises(ValueError, match="inputs must be"):
            encoder_forward(params, np.zeros((3, 6)))

    def test_batch_order_equivariant(self):
        params = init_encoder(SPEC, seed=4)
        x = np.random.default_rng(2).standard_normal((8, 5))
        perm = np.random.default_rng(3).permutation(8)
        emb, _ = encoder_forward(params, x)
        emb_perm, _ = encoder_forward(params, x[perm])
        np.testing.assert_array_equal(emb[perm], emb_perm)


class TestBackward:
    def test_zero_grad_in_zero_grad_out(self):
        params = init_encoder(SPEC, seed=0)
        _, cache = encoder_forward(params, np.ones((3, 5)))
        grads = encoder_backward(cache, np.zeros((3, 4)))
        for g in grads.arrays():
            assert not g.any()

    def test_single_layer_sum_loss(self):
        # loss = sum of outputs of a single linear layer: dW[j,i] = sum_m x[m,i]
        spec = EncoderSpec(input_dim=3, hidden_dims=(), output_dim=2)
        params = init_encoder(spec, seed=0)
        x = np.random.default_rng(5).standard_normal((4, 3))
        _, cache = encoder_forward(params, x)
        grads = encoder_backward(cache, np.ones((4, 2)))
        np.testing.assert_allclose(grads.dweights[0], np.tile(x.sum(axis=0), (2, 1)))
        np.testing.assert_allclose(grads.dbiases[0], [4.0, 4.0])

    def test_matches_finite_differences(self):
        params = init_encoder(SPEC, seed=7)
        x = np.random.default_rng(6).standard_normal((5, 5))
        target = np.random.default_rng(7).standard_normal((5, 4))

        def loss_fn(arrays):
            p = EncoderParams(
                spec=SPEC, weights=[arrays[0], arrays[2]], biases=[arrays[1], arrays[3]],
                init_seed=0,
            )
            emb, _ = encoder_forward(p, x)
            return 0.5 * ((emb - target) ** 2).sum()

        emb, cache = encoder_forward(params, x)
        grads = encoder_backward(cache, emb - target)
        report = finite_diff_check(params.arrays(), loss_fn, grads.arrays(), n_coords=60, seed=1)
        assert report.max_rel_error < 1e-4

    def test_mismatched_grad_shape(self):
        params = init_encoder(SPEC, seed=0)
        _, cache = encoder_forward(params, np.ones((3, 5)))
        with pytest.raises(RuntimeError, match="stale or mismatched"):
            encoder_backward(cache, np.zeros((2, 4)))


class TestSgd:
    def test_zero_grad_zero_velocity_unchanged(self):
        a = np.ones((2, 2))
        opt = init_optimizer([a], learning_rate=0.01)
        sgd_step([a], [np.zeros((2, 2))], opt)
        np.testing.assert_array_equal(a, np.ones((2, 2)))

    def test_vanilla_step(self):
        a = np.full((2,), 1.0)
        g = np.full((2,), 3.0)
        opt = init_optimizer([a], learning_rate=0.01, momentum=0.0)
        sgd_step([a], [g], opt)
        np.testing.assert_allclose(a, 1.0 - 0.01 * 3.0)

    def test_two_momentum_steps(self):
        # v1 = g, v2 = 0.9 g + g; total displacement lr*(g + 1.9 g)
        a = np.zeros(1)
        g = np.array([2.0])
        opt = init_optimizer([a], learning_rate=0.01, momentum=0.9)
        sgd_step([a], [g], opt)
        sgd_step([a], [g], opt)
        np.testing.assert_allclose(a, -(0.01 * 2.0 + 0.01 * 1.9 * 2.0))

    def test_lr_zero_bitwise_unchanged(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((3, 3))
        before = a.copy()
        opt = init_optimizer([a], learning_rate=0.0)
        sgd_step([a], [rng.standard_normal((3, 3))], opt)
        assert a.tobytes() == before.tobytes()

    def test_non_finite_grad_rejected(self):
        a = np.ones(2)
        opt = init_optimizer([a], learning_rate=0.01)
        with pytest.raises(ValueError, match="non-finite"):
            sgd_step([a], [np.array([np.nan, 0.0])], opt)


class TestLrSchedule:
    @pytest.mark.parametrize(
        "epoch,expected",
        [(0, 0.01), (59, 0.01), (60, 0.001), (79, 0.001), (80, 0.0001), (99, 0.0001)],
    )
    def test_decades(self, epoch, expected):
        assert lr_schedule(epoch, 0.01) == pytest.approx(expected)

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            lr_schedule(-1, 0.01)


class TestFiniteDiff:
    def test_quadratic_is_near_exact(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((4, 3))

        def loss_fn(arrays):
            return float((arrays[0] ** 2).sum())

        report = finite_diff_check([a], loss_fn, [2.0 * a], n_coords=12, seed=0)
        assert report.max_rel_error < 1e-8

    def test_detects_wrong_gradient(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal(6)

        def loss_fn(arrays):
            return float((arrays[0] ** 2).sum())

        report = finite_diff_check([a], loss_fn, [3.0 * a], n_coords=6, seed=0)
        assert report.max_rel_error > 0.1


class TestBatch:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainBatch(np.zeros((0, 3)), np.zeros(0, dtype=int))
        with pytest.raises(ValueError):
            TrainBatch(np.zeros((2, 3)), np.array([1, 0]))
        b = TrainBatch(np.zeros((2, 3)), np.array([1, 2]))
        assert b.size == 2


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        params = init_encoder(EncoderSpec(6, (5, 4), 3, activation="tanh"), seed=13)
        path = tmp_path / "enc.npz"
        save_encoder(path, params)
        loaded = load_encoder(path)
        assert loaded.spec == params.spec
        assert loaded.init_seed == 13
        for wa, wb in zip(params.weights, loaded.weights):
            assert wa.tobytes() == wb.tobytes()
        for ba, bb in zip(params.biases, loaded.biases):
            assert ba.tobytes() == bb.tobytes()
