"""
Dense autoencoder d -> H -> L -> H -> d with ReLU after every layer,
trained with ADAM on mean squared reconstruction error over benign flows.
Everything is plain numpy so a (data, config, seed) triple fixes the result bit for bit.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_EPSILON,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_LATENT_DIM,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_MIN_DELTA,
    DEFAULT_PATIENCE,
)
from core.errors import DataError, NumericError
from core.feature_pipeline import FeatureMatrix
from core.flow_ingest import ScenarioLabel

logger = logging.getLogger(__name__)

LAYER_NAMES = ("encoder_hidden", "latent", "decoder_hidden", "output")
PROFILE_COLUMNS = ["tag", "flow_id", "index", "label_class", "label_attack", "label_state", "error"]


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    latent_dim: int = DEFAULT_LATENT_DIM
    # Off by default: every layer, the output included, is ReLU
    linear_output: bool = False

    def __post_init__(self):
        if not 1 <= self.latent_dim <= self.hidden_dim <= self.input_dim:
            raise DataError(
                f"Architecture must satisfy 1 <= latent ({self.latent_dim}) <= hidden ({self.hidden_dim}) "
                f"<= input ({self.input_dim})"
            )

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        d, h, l = self.input_dim, self.hidden_dim, self.latent_dim
        return [(d, h), (h, l), (l, h), (h, d)]

    def to_dict(self) -> Dict:
        return {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim,
                "latent_dim": self.latent_dim, "linear_output": self.linear_output}

    @classmethod
    def from_dict(cls, data: Dict) -> "Architecture":
        return cls(**data)


@dataclass(frozen=True)
class AutoencoderParams:
    """Weights (fan_in x fan_out) and biases of the four affine layers."""
    architecture: Architecture
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        for (fan_in, fan_out), w, b, name in zip(self.architecture.layer_dims, self.weights, self.biases, LAYER_NAMES):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise DataError(f"Layer {name} has shapes {w.shape}/{b.shape}, expected ({fan_in}, {fan_out})")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"Layer {name} holds non-finite parameters", layer=name)

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "AutoencoderParams":
        return AutoencoderParams(self.architecture, tuple(arrays[:4]), tuple(arrays[4:]))


@dataclass(frozen=True)
class Gradients:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = DEFAULT_MAX_EPOCHS
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPSILON
    early_stop_patience: int = DEFAULT_PATIENCE
    early_stop_min_delta: float = DEFAULT_MIN_DELTA
    seed: int = 0

    def __post_init__(self):
        for name in ("max_epochs", "learning_rate", "batch_size", "epsilon", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise DataError(f"TrainConfig.{name} must be positive, got {getattr(self, name)}")
        if self.early_stop_min_delta < 0:
            raise DataError("TrainConfig.early_stop_min_delta must not be negative")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise DataError(f"TrainConfig.{name} must lie in (0, 1)")

    def to_dict(self) -> Dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        return cls(**data)


class StopReason(str, Enum):
    MAX_EPOCHS = "MaxEpochs"
    EARLY_STOP = "EarlyStop"


@dataclass(frozen=True)
class TrainingHistory:
    losses: Tuple[float, ...]
    stopped_epoch: int
    stop_reason: StopReason
    best_epoch: int

    def to_dict(self) -> Dict:
        return {"losses": list(self.losses), "stopped_epoch": self.stopped_epoch,
                "stop_reason": self.stop_reason.value, "best_epoch": self.best_epoch}

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainingHistory":
        return cls(tuple(data["losses"]), data["stopped_epoch"], StopReason(data["stop_reason"]), data["best_epoch"])


@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def init_params(arch: Architecture, seed: int) -> AutoencoderParams:
    """Glorot-uniform weights from a seeded generator, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_dims:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AutoencoderParams(arch, tuple(weights), tuple(biases))


def _as_batch(params: AutoencoderParams, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x.reshape(1, -1) if single else x
    if batch.ndim != 2 or batch.shape[1] != params.architecture.input_dim:
        raise DataError(f"Input width {batch.shape[-1]} does not match model input dim {params.architecture.input_dim}")
    return batch, single


def _forward_pass(params: AutoencoderParams, batch: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Pre-activations z and activations a per layer; activations[0] is the input."""
    pre, act = [], [batch]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = act[-1] @ w + b
        a = z if (i == last and params.architecture.linear_output) else np.maximum(z, 0.0)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"Non-finite activations in layer {LAYER_NAMES[i]}", layer=LAYER_NAMES[i])
        pre.append(z)
        act.append(a)
    return pre, act


def forward(params: AutoencoderParams, x) -> np.ndarray:
    """Reconstruct x (a length-d vector or an n x d batch)."""
    batch, single = _as_batch(params, x)
    if not np.all(np.isfinite(batch)):
        raise DataError("Input contains non-finite values")
    _, act = _forward_pass(params, batch)
    return act[-1][0] if single else act[-1]


def reconstruction_errors(params: AutoencoderParams, x) -> np.ndarray:
    """Per-sample mean over features of the squared reconstruction error."""
    batch, _ = _as_batch(params, x)
    return np.mean((batch - forward(params, batch)) ** 2, axis=1)


def reconstruction_error(params: AutoencoderParams, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("reconstruction_error scores a single sample; use reconstruction_errors for batches")
    return float(reconstruction_errors(params, x)[0])


def batch_loss(params: AutoencoderParams, batch) -> float:
    """Batch-mean MSE, the training objective."""
    return float(np.mean(reconstruction_errors(params, batch)))


def backward(params: AutoencoderParams, batch) -> Gradients:
    """
    Exact gradient of the batch-mean MSE with respect to every weight and bias.
    The ReLU derivative at 0 is taken as 0.
    """
    batch, _ = _as_batch(params, batch)
    if batch.shape[0] == 0:
        raise DataError("backward needs a non-empty batch")
    pre, act = _forward_pass(params, batch)
    n, d = batch.shape
    last = len(params.weights) - 1

    delta = 2.0 * (act[-1] - batch) / (n * d)
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for i in range(last, -1, -1):
        if not (i == last and params.architecture.linear_output):
            delta = delta * (pre[i] > 0)
        grad_w[i] = act[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if not (np.all(np.isfinite(grad_w[i])) and np.all(np.isfinite(grad_b[i]))):
            raise NumericError(f"Non-finite gradient in layer {LAYER_NAMES[i]}", layer=LAYER_NAMES[i])
        if i > 0:
            delta = delta @ params.weights[i].T
    return Gradients(tuple(grad_w), tuple(grad_b))


def adam_update(
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    t: int,
    config: TrainConfig,
) -> Tuple[List[np.ndarray], AdamState]:
    """Bias-corrected ADAM step over a list of parameter arrays. Inputs are not modified."""
    if t < 1:
        raise DataError(f"ADAM step index starts at 1, got {t}")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("Non-finite gradient passed to ADAM")
    b1, b2 = config.beta1, config.beta2
    new_arrays, m_new, v_new = [], [], []
    for p, g, m, v in zip(arrays, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_arrays.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon))
        m_new.append(m)
        v_new.append(v)
    return new_arrays, AdamState(m_new, v_new)


def adam_step(
    params: AutoencoderParams,
    gradients: Gradients,
    state: AdamState,
    t: int,
    config: TrainConfig,
) -> Tuple[AutoencoderParams, AdamState]:
    arrays, state = adam_update(params.arrays(), gradients.arrays(), state, t, config)
    return params.with_arrays(arrays), state


def train(
    matrix: FeatureMatrix,
    architecture: Architecture,
    config: TrainConfig,
) -> Tuple[AutoencoderParams, TrainingHistory]:
    """
    Train on benign flows only.

    Each epoch shuffles the rows with the seeded generator and runs mini-batch
    ADAM. The loss recorded per epoch is the full-batch MSE after the epoch.
    Training stops early when the best loss has not improved by min_delta for
    `patience` epochs; the parameters of the lowest-loss epoch are returned.

    Args:
        matrix: Benign training rows
        architecture: Layer sizes; input_dim must equal the matrix width
        config: Optimizer and stopping settings

    Returns:
        Tuple of (best parameters, training history)
    """
    if matrix.n < 1:
        raise DataError("Training needs at least one row")
    if matrix.d != architecture.input_dim:
        raise DataError(f"Matrix width {matrix.d} does not match architecture input dim {architecture.input_dim}")
    offending = [fid for fid, label in zip(matrix.flow_ids, matrix.labels)
                 if label is None or not label.is_benign]
    if offending:
        raise DataError(
            f"Training data must be benign only; {len(offending)} rows are not "
            f"(first: {offending[:5]})"
        )

    rng = np.random.default_rng(config.seed)
    params = init_params(architecture, config.seed)
    state = AdamState.zeros_like(params.arrays())
    batch_size = min(config.batch_size, matrix.n)
    data = matrix.rows

    losses: List[float] = []
    best_params, best_loss, best_epoch = params, np.inf, 0
    plateau_best, wait = np.inf, 0
    stop_reason = StopReason.MAX_EPOCHS
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(matrix.n)
        try:
            for start in range(0, matrix.n, batch_size):
                batch = data[order[start:start + batch_size]]
                step += 1
                params, state = adam_step(params, backward(params, batch), state, step, config)
            loss = batch_loss(params, data)
        except NumericError as e:
            raise NumericError(f"Training diverged at epoch {epoch}: {e}", layer=e.layer, epoch=epoch)
        if not np.isfinite(loss):
            raise NumericError(f"Training diverged at epoch {epoch}: loss is {loss}", epoch=epoch)
        losses.append(loss)
        logger.debug("epoch %d loss %.6f", epoch, loss)

        if loss < best_loss:
            best_params, best_loss, best_epoch = params, loss, epoch
        if loss < plateau_best - config.early_stop_min_delta:
            plateau_best, wait = loss, 0
        else:
            wait += 1
            if wait >= config.early_stop_patience:
                stop_reason = StopReason.EARLY_STOP
                break

    history = TrainingHistory(tuple(losses), len(losses), stop_reason, best_epoch)
    logger.info("Training stopped at epoch %d (%s); best epoch %d with loss %.6f",
                history.stopped_epoch, stop_reason.value, best_epoch, best_loss)
    return best_params, history


@dataclass(frozen=True)
class ProfileEntry:
    tag: str
    index: int
    flow_id: str
    label: Optional[ScenarioLabel]
    error: float


@dataclass(frozen=True)
class ErrorSummary:
    count: int
    min: float
    mean: float
    max: float
    p50: float
    p90: float
    p95: float
    p99: float


@dataclass(frozen=True)
class ErrorProfile:
    """Per-sample reconstruction errors tagged by split, with per-tag summaries."""
    entries: Tuple[ProfileEntry, ...]
    summaries: Dict[str, ErrorSummary] = field(default_factory=dict)

    def errors(self, tag: str = None) -> np.ndarray:
        return np.array([e.error for e in self.entries if tag is None or e.tag == tag], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        """Plot-ready table: one row per sample."""
        return pd.DataFrame([{
            "tag": e.tag,
            "flow_id": e.flow_id,
            "index": e.index,
            "label_class": e.label.traffic_class.value if e.label else "",
            "label_attack": e.label.attack_name if e.label else "",
            "label_state": e.label.charging_state.value if e.label else "",
            "error": e.error,
        } for e in self.entries], columns=PROFILE_COLUMNS)


def summarize_errors(errors: np.ndarray) -> ErrorSummary:
    p50, p90, p95, p99 = np.percentile(errors, [50, 90, 95, 99])
    return ErrorSummary(
        count=int(errors.size), min=float(errors.min()), mean=float(errors.mean()), max=float(errors.max()),
        p50=float(p50), p90=float(p90), p95=float(p95), p99=float(p99),
    )


def profile_errors(params: AutoencoderParams, datasets: Sequence[Tuple[str, FeatureMatrix]]) -> ErrorProfile:
    """
    Score every sample of every tagged dataset.

    Args:
        params: Trained parameters
        datasets: (tag, matrix) pairs, e.g. ("train", seen benign), ("test", unseen benign)

    Returns:
        ErrorProfile with one entry per sample and summary statistics per tag
    """
    entries: List[ProfileEntry] = []
    for tag, matrix in datasets:
        if matrix.d != params.architecture.input_dim:
            raise DataError(f"Dataset '{tag}' has width {matrix.d}, model expects {params.architecture.input_dim}")
        if matrix.n == 0:
            continue
        errors = reconstruction_errors(params, matrix.rows)
        entries.extend(
            ProfileEntry(tag=tag, index=i, flow_id=matrix.flow_ids[i], label=matrix.labels[i], error=float(err))
            for i, err in enumerate(errors)
        )
    tags = list(dict.fromkeys(entry.tag for entry in entries))
    summaries = {tag: summarize_errors(np.array([e.error for e in entries if e.tag == tag])) for tag in tags}
    return ErrorProfile(tuple(entries), summaries)
