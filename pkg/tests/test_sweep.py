import time
from dataclasses import replace

import numpy as np
import pytest

import services.sweep as sweep_module
from conftest import BENIGN, benign_matrix, factor_data, make_flow
from core.autoencoder import TrainConfig
from core.errors import DataError
from core.feature_pipeline import apply_encoding, fit_standardizer, standardize
from services import labeling_service
from services.sweep import (
    SweepConfig,
    TrialResult,
    holdout_split,
    load_summary_csv,
    rolling_average,
    run_sweep,
    write_summary_csv,
    write_sweep_csv,
)

QUICK = TrainConfig(max_epochs=3, learning_rate=0.01, batch_size=16)


def standardized(n, d, rank, seed):
    matrix = benign_matrix(factor_data(n, d, rank, seed=seed))
    return standardize(fit_standardizer(matrix), matrix)


class TestRollingAverage:
    def test_truncated_window(self):
        assert rolling_average([1, 2, 3, 4, 5], 3) == pytest.approx([1.5, 2.0, 3.0, 4.0, 4.5])

    def test_window_one_is_identity(self):
        assert rolling_average([3.0, 1.0, 2.0], 1) == [3.0, 1.0, 2.0]

    def test_constant_sequence(self):
        assert rolling_average([0.25] * 7, 5) == pytest.approx([0.25] * 7)

    def test_empty(self):
        assert rolling_average([], 5) == []

    def test_invalid_window(self):
        with pytest.raises(DataError):
            rolling_average([1.0], 0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            values = list(rng.normal(size=int(rng.integers(1, 30))))
            window = int(rng.choice([1, 3, 5, 7, 9]))
            half = window // 2
            expected = []
            for i in range(len(values)):
                chunk = values[max(0, i - half):i + half + 1]
                expected.append(sum(chunk) / len(chunk))
            result = rolling_average(values, window)
            assert len(result) == len(values)
            assert all(abs(a - b) < 1e-9 for a, b in zip(result, expected))

    def test_stays_within_range(self):
        rng = np.random.default_rng(8)
        for window in range(1, 9):
            values = list(rng.uniform(-5, 5, size=20))
            result = rolling_average(values, window)
            assert min(result) >= min(values) - 1e-12
            assert max(result) <= max(values) + 1e-12


class TestSweepConfig:
    def test_trial_seeds_are_offsets(self):
        config = SweepConfig(seed=5)
        assert config.trial_seed(2, 1) == 2006
        assert len({config.trial_seed(d, t) for d in range(1, 50) for t in range(5)}) == 49 * 5

    @pytest.mark.parametrize("kwargs", [
        {"latent_range": (0, 3)},
        {"latent_range": (4, 3)},
        {"trials_per_dim": 0},
        {"rolling_window": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(DataError):
            SweepConfig(**kwargs)


class TestRunSweep:
    def test_single_dim(self):
        config = SweepConfig(latent_range=(7, 7), trials_per_dim=1, train_config=QUICK, hidden_dim=8)
        report = run_sweep(standardized(40, 12, 3, seed=1), config)
        assert report.recommended_dim == 7
        assert report.dims == [7]
        assert report.grand_mean == report.summaries[0].mean

    def test_dims_beyond_hidden_are_skipped(self):
        config = SweepConfig(latent_range=(3, 5), trials_per_dim=1, train_config=QUICK, hidden_dim=4)
        report = run_sweep(standardized(40, 12, 3, seed=1), config)
        assert report.dims == [3, 4]
        assert len(report.warnings) == 1 and "5" in report.warnings[0]
        assert report.recommended_dim in (3, 4)

    def test_nothing_fits(self):
        config = SweepConfig(latent_range=(5, 6), train_config=QUICK, hidden_dim=4)
        with pytest.raises(DataError):
            run_sweep(standardized(40, 12, 3, seed=1), config)

    def test_deterministic(self):
        config = SweepConfig(latent_range=(1, 3), trials_per_dim=2, train_config=QUICK, hidden_dim=6, seed=3)
        matrix = standardized(40, 12, 3, seed=2)
        first, second = run_sweep(matrix, config), run_sweep(matrix, config)
        assert first == second
        assert len(first.trials) == 6
        assert [t.seed for t in first.trials[:2]] == [1003, 1004]
        assert len([s.rolling_mean for s in first.summaries]) == 3

    def test_process_pool_matches_serial(self):
        config = SweepConfig(latent_range=(1, 3), trials_per_dim=2, train_config=QUICK, hidden_dim=6, seed=3)
        matrix = standardized(40, 12, 3, seed=2)
        pooled = run_sweep(matrix, replace(config, workers=2))
        assert pooled == run_sweep(matrix, config)

    def test_ties_go_to_smaller_dim(self, monkeypatch):
        fake = {1: 3.0, 2: 1.0, 3: 1.0, 4: 2.0}

        def fake_trial(job):
            _, _, _, train_config, dim, trial = job
            return TrialResult(dim, trial, train_config.seed, fake[dim])

        monkeypatch.setattr(sweep_module, "_run_trial", fake_trial)
        config = SweepConfig(latent_range=(1, 4), trials_per_dim=2, rolling_window=3, hidden_dim=6)
        report = run_sweep(standardized(20, 6, 2, seed=0), config)
        assert report.recommended_dim == 2
        assert report.grand_mean == pytest.approx(7.0 / 4)
        assert [s.std for s in report.summaries] == [0.0] * 4
        assert [s.rolling_mean for s in report.summaries] == pytest.approx([2.0, 5.0 / 3, 4.0 / 3, 1.5])

    def test_csv_outputs(self, tmp_path, monkeypatch):
        monkeypatch.setattr(sweep_module, "_run_trial",
                            lambda job: TrialResult(job[4], job[5], job[3].seed, 1.0 / (job[4] + job[5] + 1)))
        config = SweepConfig(latent_range=(1, 3), trials_per_dim=2, hidden_dim=6)
        report = run_sweep(standardized(20, 6, 2, seed=0), config)

        summary_path = write_summary_csv(str(tmp_path / "summary.csv"), report)
        assert load_summary_csv(summary_path) == list(report.summaries)

        trials_path = write_sweep_csv(str(tmp_path / "sweep.csv"), report)
        with open(trials_path) as f:
            assert f.readline().strip() == "latent_dim,trial,seed,mean_error"
            assert len(f.readlines()) == 6


def test_sweep_finds_intrinsic_dimension():
    """Rank-3 data: error falls through three latent units, then levels off."""
    start = time.time()
    config = SweepConfig(
        latent_range=(1, 8),
        trials_per_dim=3,
        train_config=TrainConfig(max_epochs=150, learning_rate=0.01, batch_size=32, early_stop_patience=20),
        hidden_dim=10,
        linear_output=True,
        seed=11,
    )
    report = run_sweep(standardized(200, 12, 3, seed=4), config)
    means = {s.latent_dim: s.mean for s in report.summaries}

    assert means[1] > means[2] > means[3]
    assert np.mean([means[d] for d in range(4, 9)]) / means[3] < 1.2
    assert report.recommended_dim >= 3
    assert time.time() - start < 180


def test_sweep_preprocessing_ignores_holdout_rows(rng):
    flows = [(make_flow(f"s{i}", rng), BENIGN) for i in range(20)]
    config = SweepConfig(hidden_dim=4, seed=3)
    pipeline, benign = labeling_service.fit_sweep_pipeline(flows, config)
    fit_idx, holdout_idx = holdout_split(len(benign), config)
    assert len(holdout_idx) == 4

    shifted = list(flows)
    for i in holdout_idx:
        flow, label = flows[i]
        shifted[i] = (replace(flow, bytes_fwd=flow.bytes_fwd + 10 ** 6), label)
    moved, _ = labeling_service.fit_sweep_pipeline(shifted, config)
    assert np.array_equal(moved.standardizer.mean, pipeline.standardizer.mean)
    assert np.array_equal(moved.standardizer.scale, pipeline.standardizer.scale)

    fit_rows = apply_encoding(pipeline.encoding, [flows[i][0] for i in fit_idx]).rows
    assert np.allclose(pipeline.standardizer.mean, fit_rows.mean(axis=0))
