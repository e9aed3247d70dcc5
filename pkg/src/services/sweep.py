"""
Latent-dimension sweep: repeated trainings per latent size, scored on a
fixed held-out benign subset, smoothed with a centered rolling average.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from config import (
    DEFAULT_HIDDEN_DIM,
    DEFAULT_LATENT_RANGE,
    DEFAULT_ROLLING_WINDOW,
    DEFAULT_TEST_FRACTION,
    DEFAULT_TRIALS_PER_DIM,
)
from core.autoencoder import Architecture, TrainConfig, reconstruction_errors, train
from core.errors import DataError
from core.feature_pipeline import FeatureMatrix, SplitConfig, split_indices

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepConfig:
    latent_range: Tuple[int, int] = DEFAULT_LATENT_RANGE
    trials_per_dim: int = DEFAULT_TRIALS_PER_DIM
    rolling_window: int = DEFAULT_ROLLING_WINDOW
    train_config: TrainConfig = field(default_factory=TrainConfig)
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    linear_output: bool = False
    holdout_fraction: float = DEFAULT_TEST_FRACTION
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        lo, hi = self.latent_range
        if not 1 <= lo <= hi:
            raise DataError(f"latent_range must satisfy 1 <= lo <= hi, got {self.latent_range}")
        if self.trials_per_dim < 1:
            raise DataError("trials_per_dim must be at least 1")
        if self.rolling_window < 1:
            raise DataError("rolling_window must be at least 1")
        if self.workers < 1:
            raise DataError("workers must be at least 1")

    def trial_seed(self, latent_dim: int, trial: int) -> int:
        return self.seed + 1000 * latent_dim + trial


def holdout_split(n: int, config: SweepConfig) -> Tuple[List[int], List[int]]:
    """(fit, holdout) row indices shared by every trial of a sweep."""
    return split_indices(n, SplitConfig(config.holdout_fraction, config.seed))


@dataclass(frozen=True)
class TrialResult:
    latent_dim: int
    trial: int
    seed: int
    mean_error: float


@dataclass(frozen=True)
class DimSummary:
    latent_dim: int
    mean: float
    min: float
    max: float
    std: float
    rolling_mean: float


@dataclass(frozen=True)
class SweepReport:
    trials: Tuple[TrialResult, ...]
    summaries: Tuple[DimSummary, ...]
    rolling_window: int
    grand_mean: float
    recommended_dim: int
    warnings: Tuple[str, ...] = ()

    @property
    def dims(self) -> List[int]:
        return [s.latent_dim for s in self.summaries]


def rolling_average(values: Sequence[float], window: int) -> List[float]:
    """
    Centered rolling mean; windows are truncated at both ends.

    Examples:
        rolling_average([1, 2, 3, 4, 5], 3) -> [1.5, 2.0, 3.0, 4.0, 4.5]
    """
    if window < 1:
        raise DataError(f"Rolling window must be at least 1, got {window}")
    if len(values) == 0:
        return []
    series = pd.Series(np.asarray(values, dtype=float))
    return [float(v) for v in series.rolling(window, center=True, min_periods=1).mean()]


def _run_trial(job) -> TrialResult:
    fit, holdout, architecture, train_config, latent_dim, trial = job
    params, _ = train(fit, architecture, train_config)
    mean_error = float(np.mean(reconstruction_errors(params, holdout.rows)))
    logger.debug("latent %d trial %d: mean held-out error %.6f", latent_dim, trial, mean_error)
    return TrialResult(latent_dim, trial, train_config.seed, mean_error)


def run_sweep(matrix: FeatureMatrix, config: SweepConfig) -> SweepReport:
    """
    Train `trials_per_dim` models for every latent size in the configured range.

    Args:
        matrix: Benign rows, standardized with parameters fitted on the fit rows of holdout_split
        config: Sweep settings

    Returns:
        SweepReport with per-trial errors, per-dimension summaries and the recommended dimension
    """
    fit_idx, holdout_idx = holdout_split(matrix.n, config)
    fit, holdout = matrix.take(fit_idx), matrix.take(holdout_idx)

    lo, hi = config.latent_range
    warnings = []
    dims = []
    for dim in range(lo, hi + 1):
        if dim > config.hidden_dim:
            warnings.append(f"latent dim {dim} exceeds hidden dim {config.hidden_dim}; skipped")
        else:
            dims.append(dim)
    for message in warnings:
        logger.warning(message)
    if not dims:
        raise DataError(f"No latent dimension in {config.latent_range} fits hidden dim {config.hidden_dim}")

    jobs = []
    for dim in dims:
        architecture = Architecture(matrix.d, config.hidden_dim, dim, config.linear_output)
        for trial in range(config.trials_per_dim):
            trial_config = TrainConfig(**{**config.train_config.to_dict(), "seed": config.trial_seed(dim, trial)})
            jobs.append((fit, holdout, architecture, trial_config, dim, trial))

    logger.info("Sweeping %d latent dims x %d trials (%d trainings, %d workers)",
                len(dims), config.trials_per_dim, len(jobs), config.workers)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(job) for job in jobs]

    means, summaries_raw = [], []
    for dim in dims:
        errors = np.array([r.mean_error for r in results if r.latent_dim == dim])
        means.append(float(errors.mean()))
        summaries_raw.append((dim, float(errors.mean()), float(errors.min()), float(errors.max()), float(errors.std())))
    rolling = rolling_average(means, config.rolling_window)

    # strict comparison keeps the smaller dim on ties
    best = 0
    for i, value in enumerate(means):
        if value < means[best]:
            best = i

    summaries = tuple(DimSummary(dim, mean, mn, mx, std, roll)
                      for (dim, mean, mn, mx, std), roll in zip(summaries_raw, rolling))
    report = SweepReport(
        trials=tuple(results),
        summaries=summaries,
        rolling_window=config.rolling_window,
        grand_mean=float(np.mean(means)),
        recommended_dim=dims[best],
        warnings=tuple(warnings),
    )
    logger.info("Recommended latent dim %d (mean error %.6f, grand mean %.6f)",
                report.recommended_dim, means[best], report.grand_mean)
    return report


SWEEP_COLUMNS = ["latent_dim", "trial", "seed", "mean_error"]
SUMMARY_COLUMNS = ["latent_dim", "mean", "min", "max", "std", "rolling_mean"]


def write_sweep_csv(path: str, report: SweepReport) -> str:
    pd.DataFrame([r.__dict__ for r in report.trials], columns=SWEEP_COLUMNS).to_csv(path, index=False)
    return path


def write_summary_csv(path: str, report: SweepReport) -> str:
    pd.DataFrame([s.__dict__ for s in report.summaries], columns=SUMMARY_COLUMNS).to_csv(path, index=False)
    return path


def load_summary_csv(path: str) -> List[DimSummary]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Sweep summary CSV file '{path}' not found.")
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in SUMMARY_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"Sweep summary '{path}' is missing columns: {missing}")
    return [
        DimSummary(int(row["latent_dim"]), float(row["mean"]), float(row["min"]), float(row["max"]),
                   float(row["std"]), float(row["rolling_mean"]))
        for row in df.to_dict("records")
    ]
