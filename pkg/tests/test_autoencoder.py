import time

import numpy as np
import pytest

from conftest import BENIGN, SYN_FLOOD, benign_matrix, factor_data
from core.autoencoder import (
    AdamState,
    Architecture,
    Gradients,
    StopReason,
    TrainConfig,
    _forward_pass,
    adam_step,
    adam_update,
    backward,
    batch_loss,
    forward,
    init_params,
    profile_errors,
    reconstruction_error,
    reconstruction_errors,
    train,
)
from core.boundary import Verdict, calibrate_naive, classify
from core.errors import DataError, NumericError
from core.feature_pipeline import FeatureMatrix, fit_standardizer, standardize


def random_params(arch: Architecture, rng: np.random.Generator):
    """Random weights and non-zero biases so no unit sits exactly on the ReLU kink."""
    params = init_params(arch, int(rng.integers(1 << 30)))
    arrays = [rng.normal(0, 0.5, size=a.shape) for a in params.arrays()]
    return params.with_arrays(arrays)


class TestArchitecture:
    def test_layer_dims(self):
        assert Architecture(12, 8, 3).layer_dims == [(12, 8), (8, 3), (3, 8), (8, 12)]

    @pytest.mark.parametrize("dims", [(10, 12, 3), (10, 5, 6), (10, 5, 0)])
    def test_invalid_sizes(self, dims):
        with pytest.raises(DataError):
            Architecture(*dims)

    def test_glorot_init_is_seeded(self):
        arch = Architecture(10, 6, 2)
        a, b = init_params(arch, 3), init_params(arch, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
        limit = np.sqrt(6.0 / (10 + 6))
        assert np.all(np.abs(a.weights[0]) <= limit)
        assert all(np.all(bias == 0) for bias in a.biases)

    def test_weight_means_center_on_zero(self):
        arch = Architecture(151, 80, 41)
        for seed in range(10):
            params = init_params(arch, seed)
            assert all(abs(float(w.mean())) < 0.05 for w in params.weights)


class TestForward:
    def test_zero_network_outputs_zero(self):
        params = init_params(Architecture(6, 4, 2), 0)
        params = params.with_arrays([np.zeros_like(a) for a in params.arrays()])
        x = np.random.default_rng(3).normal(size=(4, 6))
        assert np.array_equal(forward(params, x), np.zeros((4, 6)))

    def test_identity_weights_reproduce_positive_input(self):
        params = init_params(Architecture(2, 2, 2), 0)
        params = params.with_arrays([np.eye(2)] * 4 + [np.zeros(2)] * 4)
        assert np.array_equal(forward(params, np.array([1.0, 2.0])), np.array([1.0, 2.0]))
        assert reconstruction_error(params, np.array([1.0, 2.0])) == 0.0

    def test_output_is_nonnegative_with_relu_output(self):
        rng = np.random.default_rng(0)
        params = random_params(Architecture(6, 4, 2), rng)
        assert np.all(forward(params, rng.normal(size=(10, 6))) >= 0)

    def test_single_sample_and_batch_agree(self):
        rng = np.random.default_rng(1)
        params = random_params(Architecture(6, 4, 2), rng)
        batch = rng.normal(size=(5, 6))
        assert np.array_equal(forward(params, batch[2]), forward(params, batch)[2])

    def test_width_mismatch(self):
        params = init_params(Architecture(6, 4, 2), 0)
        with pytest.raises(DataError):
            forward(params, np.zeros(5))

    def test_reconstruction_error_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for case in range(100):
            d = int(rng.integers(2, 9))
            h = int(rng.integers(1, d + 1))
            l = int(rng.integers(1, h + 1))
            params = random_params(Architecture(d, h, l, linear_output=bool(case % 2)), rng)
            x = rng.normal(size=d)

            # layer by layer with python loops
            a = list(x)
            for k, (w, b) in enumerate(zip(params.weights, params.biases)):
                z = [sum(a[i] * w[i, j] for i in range(len(a))) + b[j] for j in range(w.shape[1])]
                last = k == len(params.weights) - 1
                a = z if (last and params.architecture.linear_output) else [max(v, 0.0) for v in z]
            expected = sum((x[i] - a[i]) ** 2 for i in range(d)) / d

            assert abs(reconstruction_error(params, x) - expected) < 1e-9

    def test_non_finite_activation_names_layer(self):
        params = init_params(Architecture(3, 2, 1), 0)
        params = params.with_arrays([np.full(a.shape, 1e200) for a in params.weights] + list(params.biases))
        with np.errstate(all="ignore"):
            with pytest.raises(NumericError) as info:
                forward(params, np.full(3, 1e200))
        assert info.value.layer == "encoder_hidden"


class TestGradients:
    def test_zero_network_has_dead_gradients(self):
        params = init_params(Architecture(5, 4, 2), 0)
        params = params.with_arrays([np.zeros_like(a) for a in params.arrays()])
        batch = np.random.default_rng(6).normal(size=(3, 5))
        assert all(np.all(g == 0) for g in backward(params, batch).arrays())

    def test_zero_network_with_linear_output(self):
        params = init_params(Architecture(5, 4, 2, linear_output=True), 0)
        params = params.with_arrays([np.zeros_like(a) for a in params.arrays()])
        batch = np.random.default_rng(6).normal(size=(3, 5))
        grads = backward(params, batch)
        assert np.allclose(grads.biases[3], -(2.0 / 5) * batch.mean(axis=0), atol=1e-15)
        assert all(np.all(g == 0) for g in grads.arrays()[:7])

    def test_matches_central_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-5
        start = time.time()
        for case in range(20):
            d = int(rng.integers(2, 11))
            hidden = int(rng.integers(1, min(6, d) + 1))
            latent = int(rng.integers(1, min(4, hidden) + 1))
            arch = Architecture(d, hidden, latent, linear_output=bool(case % 2))
            while True:
                params = random_params(arch, rng)
                batch = rng.normal(size=(int(rng.integers(1, 6)), d))
                pre, _ = _forward_pass(params, batch)
                if min(np.abs(z).min() for z in pre) > 1e-3:
                    break

            analytic = backward(params, batch).arrays()
            arrays = params.arrays()
            for k, array in enumerate(arrays):
                for index in np.ndindex(array.shape):
                    plus = [a.copy() for a in arrays]
                    minus = [a.copy() for a in arrays]
                    plus[k][index] += h
                    minus[k][index] -= h
                    numeric = (batch_loss(params.with_arrays(plus), batch)
                               - batch_loss(params.with_arrays(minus), batch)) / (2 * h)
                    a = analytic[k][index]
                    assert abs(a - numeric) / max(1e-6, abs(a) + abs(numeric)) < 1e-4
        assert time.time() - start < 5


class TestAdam:
    def test_step_updates_params_like_arrays(self):
        rng = np.random.default_rng(4)
        params = random_params(Architecture(6, 4, 2), rng)
        grads = backward(params, rng.normal(size=(3, 6)))
        config = TrainConfig(learning_rate=0.01)
        state = AdamState.zeros_like(params.arrays())

        stepped, new_state = adam_step(params, grads, state, 1, config)
        expected, expected_state = adam_update(params.arrays(), grads.arrays(), state, 1, config)
        assert stepped.architecture == params.architecture
        assert all(np.array_equal(a, b) for a, b in zip(stepped.arrays(), expected))
        assert all(np.array_equal(a, b) for a, b in zip(new_state.second_moment, expected_state.second_moment))

    def test_zero_gradient_leaves_params_unchanged(self):
        params = init_params(Architecture(6, 4, 2), 1)
        zero = Gradients(tuple(np.zeros_like(w) for w in params.weights),
                         tuple(np.zeros_like(b) for b in params.biases))
        stepped, _ = adam_step(params, zero, AdamState.zeros_like(params.arrays()), 1, TrainConfig())
        assert all(np.array_equal(a, b) for a, b in zip(stepped.arrays(), params.arrays()))

    def test_matches_scalar_reference(self):
        config = TrainConfig(learning_rate=0.1)
        w = np.array([1.5])
        state = AdamState.zeros_like([w])
        ref_w, m, v = 1.5, 0.0, 0.0
        for t in range(1, 30):
            g = 2 * ref_w
            m = 0.9 * m + (1 - 0.9) * g
            v = 0.999 * v + (1 - 0.999) * g * g
            ref_w -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)

            (w,), state = adam_update([w], [2 * w], state, t, config)
            assert w[0] == pytest.approx(ref_w, rel=1e-12, abs=1e-15)
        assert abs(w[0]) < 1.5

    def test_step_index_starts_at_one(self):
        with pytest.raises(DataError):
            adam_update([np.zeros(1)], [np.zeros(1)], AdamState.zeros_like([np.zeros(1)]), 0, TrainConfig())

    def test_non_finite_gradient(self):
        with pytest.raises(NumericError):
            adam_update([np.zeros(1)], [np.array([np.nan])], AdamState.zeros_like([np.zeros(1)]), 1,
                        TrainConfig())


class TestTraining:
    @pytest.fixture
    def matrix(self):
        rows = np.abs(factor_data(64, 8, 2, seed=5)) + 0.5
        return benign_matrix(rows)

    def test_loss_goes_down(self, matrix):
        config = TrainConfig(max_epochs=60, learning_rate=0.01, batch_size=16, early_stop_patience=60)
        _, history = train(matrix, Architecture(8, 6, 2), config)
        assert history.losses[-1] < history.losses[0]
        assert history.stopped_epoch == len(history.losses) == 60
        assert history.stop_reason == StopReason.MAX_EPOCHS
        assert history.losses[history.best_epoch - 1] == min(history.losses)

    def test_deterministic_under_seed(self, matrix):
        config = TrainConfig(max_epochs=5, learning_rate=0.01, seed=4)
        p1, h1 = train(matrix, Architecture(8, 6, 2), config)
        p2, h2 = train(matrix, Architecture(8, 6, 2), config)
        assert h1 == h2
        assert all(np.array_equal(a, b) for a, b in zip(p1.arrays(), p2.arrays()))

    def test_early_stop(self, matrix):
        config = TrainConfig(max_epochs=500, learning_rate=1e-9, early_stop_patience=3, early_stop_min_delta=1.0)
        _, history = train(matrix, Architecture(8, 6, 2), config)
        assert history.stop_reason == StopReason.EARLY_STOP
        assert history.stopped_epoch == 4

    def test_batch_larger_than_data(self, matrix):
        config = TrainConfig(max_epochs=2, batch_size=1000)
        _, history = train(matrix, Architecture(8, 6, 2), config)
        assert len(history.losses) == 2

    def test_rejects_malicious_rows(self, matrix):
        labels = list(matrix.labels)
        labels[3] = SYN_FLOOD
        tainted = FeatureMatrix(matrix.rows, matrix.feature_names, tuple(labels), matrix.flow_ids)
        with pytest.raises(DataError):
            train(tainted, Architecture(8, 6, 2), TrainConfig(max_epochs=1))

    def test_divergence_is_numeric_error(self, matrix):
        config = TrainConfig(max_epochs=5, learning_rate=1e300)
        with np.errstate(all="ignore"):
            with pytest.raises(NumericError) as info:
                train(matrix, Architecture(8, 6, 2), config)
        assert info.value.epoch is not None


@pytest.mark.parametrize("linear_output, headroom", [(True, 1.2), (False, 2.0)])
def test_separation_of_shifted_flows(linear_output, headroom):
    """
    Benign training flows stay below tau; strongly shifted flows land above it.
    A ReLU output cannot reach the negative half of standardized features, so
    its benign error floor is higher and tau gets more headroom.
    """
    start = time.time()
    rng = np.random.default_rng(21)
    d = 20
    mixing = rng.normal(size=(4, d))
    benign = rng.normal(size=(100, 4)) @ mixing + 0.3 * rng.uniform(-1, 1, size=(100, d))
    sigma = benign.std(axis=0)
    malicious = rng.normal(size=(200, 4)) @ mixing + 0.3 * rng.uniform(-1, 1, size=(200, d))
    malicious[:, :10] += 5 * sigma[:10]

    train_raw, test_raw = benign[:80], benign[80:]
    params_std = fit_standardizer(benign_matrix(train_raw))
    train_matrix = standardize(params_std, benign_matrix(train_raw))
    test_matrix = standardize(params_std, benign_matrix(test_raw))
    attack_matrix = standardize(params_std, FeatureMatrix(
        malicious, train_matrix.feature_names, tuple(SYN_FLOOD for _ in range(200))))

    config = TrainConfig(max_epochs=300, learning_rate=0.005, batch_size=16, early_stop_patience=30, seed=2)
    params, _ = train(train_matrix, Architecture(d, 12, 6, linear_output=linear_output), config)

    tau = headroom * float(reconstruction_errors(params, train_matrix.rows).max())
    boundary = calibrate_naive(tau)
    profile = profile_errors(params, [("train", train_matrix), ("test", test_matrix), ("malicious", attack_matrix)])

    assert all(classify(boundary, e) == Verdict.MALICIOUS for e in profile.errors("malicious"))
    assert all(classify(boundary, e) == Verdict.BENIGN for e in profile.errors("test"))
    assert time.time() - start < 30


def test_profile_summaries():
    rng = np.random.default_rng(8)
    params = random_params(Architecture(5, 4, 2), rng)
    seen = benign_matrix(rng.normal(size=(10, 5)))
    unseen = benign_matrix(rng.normal(size=(4, 5)))
    profile = profile_errors(params, [("train", seen), ("test", unseen)])

    assert [e.tag for e in profile.entries] == ["train"] * 10 + ["test"] * 4
    assert profile.summaries["train"].count == 10
    assert profile.summaries["test"].max == pytest.approx(profile.errors("test").max())
    assert profile.entries[0].label == BENIGN
    assert np.array_equal(profile.errors("train"), reconstruction_errors(params, seen.rows))
    assert list(profile.to_frame()["tag"]) == ["train"] * 10 + ["test"] * 4

    with pytest.raises(DataError):
        profile_errors(params, [("bad", benign_matrix(np.zeros((2, 3))))])
