"""
Feature pipeline: turns labeled flows into a standardized numeric matrix.
IPv4 columns become four octet features, text columns are one-hot encoded,
numeric columns pass through; z-score standardization and a seeded
train/test split complete the preparation for the autoencoder.
"""
import ipaddress
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULT_TEST_FRACTION
from core.errors import DataError
from core.flow_ingest import CORE_NUMERIC_COLUMNS, IP_COLUMNS, FlowRecord, ScenarioLabel

logger = logging.getLogger(__name__)


def flow_columns(flow: FlowRecord) -> Dict[str, object]:
    """Flatten a flow into named column values (core columns first, then extras)."""
    row = {name: getattr(flow, name) for name in IP_COLUMNS}
    for name in CORE_NUMERIC_COLUMNS:
        row[name] = getattr(flow, name)
    row.update(flow.extra_features)
    return row


def _is_number(value) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool)


def _is_ipv4(value) -> bool:
    try:
        ipaddress.IPv4Address(value)
        return True
    except (ipaddress.AddressValueError, ValueError):
        return False


def _octets(value: str, column: str) -> List[float]:
    try:
        return [float(b) for b in ipaddress.IPv4Address(value).packed]
    except (ipaddress.AddressValueError, ValueError):
        raise DataError(f"Column '{column}' holds a value that is not an IPv4 address: {value!r}")


@dataclass(frozen=True)
class EncodingSpec:
    """How each retained column becomes features. Column sets are disjoint."""
    ip_columns: Tuple[str, ...]
    categorical_columns: Dict[str, Tuple[str, ...]]
    passthrough_columns: Tuple[str, ...]

    def __post_init__(self):
        groups = [set(self.ip_columns), set(self.categorical_columns), set(self.passthrough_columns)]
        if sum(len(g) for g in groups) != len(set().union(*groups)):
            raise DataError("Encoding column sets must be disjoint")

    @property
    def feature_names(self) -> List[str]:
        names = [f"{column}_octet{k}" for column in self.ip_columns for k in range(1, 5)]
        for column, vocabulary in self.categorical_columns.items():
            names.extend(f"{column}={value}" for value in vocabulary)
        names.extend(self.passthrough_columns)
        return names

    @property
    def feature_count(self) -> int:
        return (4 * len(self.ip_columns)
                + sum(len(v) for v in self.categorical_columns.values())
                + len(self.passthrough_columns))

    def to_dict(self) -> Dict:
        return {
            "ip_columns": list(self.ip_columns),
            "categorical_columns": {k: list(v) for k, v in self.categorical_columns.items()},
            "passthrough_columns": list(self.passthrough_columns),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "EncodingSpec":
        return cls(
            ip_columns=tuple(data["ip_columns"]),
            categorical_columns={k: tuple(v) for k, v in data["categorical_columns"].items()},
            passthrough_columns=tuple(data["passthrough_columns"]),
        )


@dataclass(frozen=True)
class FeatureMatrix:
    """Encoded samples (n x d) with their feature names, labels and flow ids."""
    rows: np.ndarray
    feature_names: Tuple[str, ...]
    labels: Tuple[Optional[ScenarioLabel], ...]
    flow_ids: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            rows = rows.reshape(len(self.labels), len(self.feature_names))
        object.__setattr__(self, "rows", rows)
        if not self.flow_ids:
            object.__setattr__(self, "flow_ids", tuple(str(i) for i in range(rows.shape[0])))
        if rows.shape[1] != len(self.feature_names):
            raise DataError(f"Matrix has {rows.shape[1]} columns but {len(self.feature_names)} feature names")
        if rows.shape[0] != len(self.labels) or rows.shape[0] != len(self.flow_ids):
            raise DataError("Matrix rows, labels and flow ids differ in length")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("Feature names must be unique")
        if not np.all(np.isfinite(rows)):
            raise DataError("Feature matrix contains NaN or infinite values")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def take(self, indices: Sequence[int]) -> "FeatureMatrix":
        indices = list(indices)
        return FeatureMatrix(
            rows=self.rows[indices].reshape(len(indices), self.d),
            feature_names=self.feature_names,
            labels=tuple(self.labels[i] for i in indices),
            flow_ids=tuple(self.flow_ids[i] for i in indices),
        )


@dataclass(frozen=True)
class StandardizerParams:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0):
            raise DataError("Standardizer scale must be positive in every column")

    def to_dict(self) -> Dict:
        return {"mean": [float(v) for v in self.mean], "scale": [float(v) for v in self.scale],
                "std_convention": "population"}

    @classmethod
    def from_dict(cls, data: Dict) -> "StandardizerParams":
        return cls(mean=np.array(data["mean"], dtype=float), scale=np.array(data["scale"], dtype=float))


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = DEFAULT_TEST_FRACTION
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise DataError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")


def fit_encoding(flows: Sequence[FlowRecord], exclude: Sequence[str] = ()) -> EncodingSpec:
    """
    Decide how every retained column is encoded.

    Core IP columns, and text columns whose values are all IPv4 addresses, are
    split into octets. Other text columns are one-hot encoded with their
    vocabulary sorted lexicographically. Numeric columns pass through.

    Args:
        flows: Fitting flows (non-empty)
        exclude: Column names to leave out of the encoding

    Returns:
        EncodingSpec covering every retained column exactly once
    """
    if not flows:
        raise DataError("Cannot fit an encoding on an empty flow list")
    excluded = set(exclude)

    values: Dict[str, List] = {}
    for flow in flows:
        for column, value in flow_columns(flow).items():
            if column not in excluded:
                values.setdefault(column, []).append(value)

    core_order = [c for c in list(IP_COLUMNS) + list(CORE_NUMERIC_COLUMNS) if c in values]
    extra_order = sorted(c for c in values if c not in core_order)

    ip_columns, categorical, passthrough = [], {}, []
    for column in core_order + extra_order:
        column_values = values[column]
        if len(column_values) != len(flows):
            raise DataError(f"Column '{column}' is missing from some flows")
        numeric = [_is_number(v) for v in column_values]
        if all(numeric):
            passthrough.append(column)
        elif any(numeric):
            raise DataError(f"Column '{column}' mixes numeric and text values")
        elif column in IP_COLUMNS or all(_is_ipv4(v) for v in column_values):
            ip_columns.append(column)
        else:
            categorical[column] = tuple(sorted({str(v) for v in column_values}))

    spec = EncodingSpec(
        ip_columns=tuple(ip_columns),
        categorical_columns=categorical,
        passthrough_columns=tuple(passthrough),
    )
    logger.info("Encoding fitted: %d ip, %d categorical, %d numeric columns -> %d features",
                len(ip_columns), len(categorical), len(passthrough), spec.feature_count)
    return spec


def apply_encoding(
    spec: EncodingSpec,
    flows: Sequence[FlowRecord],
    labels: Optional[Sequence[Optional[ScenarioLabel]]] = None,
) -> FeatureMatrix:
    """
    Encode flows into a feature matrix, preserving row order.
    Categories outside the fitted vocabulary give an all-zero one-hot block.
    """
    vocab_index = {column: {value: i for i, value in enumerate(vocabulary)}
                   for column, vocabulary in spec.categorical_columns.items()}
    rows = np.zeros((len(flows), spec.feature_count), dtype=float)
    for i, flow in enumerate(flows):
        columns = flow_columns(flow)
        offset = 0
        for column in spec.ip_columns:
            if column not in columns:
                raise DataError(f"Flow {flow.flow_id} lacks column '{column}'")
            rows[i, offset:offset + 4] = _octets(columns[column], column)
            offset += 4
        for column, vocabulary in spec.categorical_columns.items():
            if column not in columns:
                raise DataError(f"Flow {flow.flow_id} lacks column '{column}'")
            position = vocab_index[column].get(str(columns[column]))
            if position is not None:
                rows[i, offset + position] = 1.0
            offset += len(vocabulary)
        for column in spec.passthrough_columns:
            if column not in columns:
                raise DataError(f"Flow {flow.flow_id} lacks column '{column}'")
            value = columns[column]
            if not _is_number(value):
                raise DataError(f"Column '{column}' holds non-numeric value {value!r}")
            rows[i, offset] = float(value)
            offset += 1

    if labels is None:
        labels = [None] * len(flows)
    return FeatureMatrix(
        rows=rows.reshape(len(flows), spec.feature_count),
        feature_names=tuple(spec.feature_names),
        labels=tuple(labels),
        flow_ids=tuple(flow.flow_id for flow in flows),
    )


def fit_standardizer(matrix: FeatureMatrix) -> StandardizerParams:
    """
    Fit per-column mean and population standard deviation.
    Constant columns get scale 1.
    """
    if matrix.n == 0:
        raise DataError("Cannot fit a standardizer on an empty matrix")
    if matrix.n < 2:
        raise DataError(f"Standardizer needs at least 2 rows, got {matrix.n}")
    mean = matrix.rows.mean(axis=0)
    scale = np.sqrt(((matrix.rows - mean) ** 2).mean(axis=0))
    constant = np.ptp(matrix.rows, axis=0) == 0
    scale = np.where(constant | (scale == 0), 1.0, scale)
    return StandardizerParams(mean=mean, scale=scale)


def standardize(params: StandardizerParams, matrix: FeatureMatrix) -> FeatureMatrix:
    """Apply z-score standardization: (x - mean) / scale."""
    if matrix.d != len(params.mean):
        raise DataError(f"Matrix width {matrix.d} does not match standardizer width {len(params.mean)}")
    return FeatureMatrix(
        rows=(matrix.rows - params.mean) / params.scale,
        feature_names=matrix.feature_names,
        labels=matrix.labels,
        flow_ids=matrix.flow_ids,
    )


def split_indices(n: int, config: SplitConfig) -> Tuple[List[int], List[int]]:
    """
    Seeded uniform shuffle into (train, test) row indices, each in ascending order.
    The test share is n * test_fraction rounded half up, kept within [1, n - 1].
    """
    if n < 2:
        raise DataError(f"Need at least 2 rows to split, got {n}")
    n_test = min(n - 1, max(1, int(np.floor(n * config.test_fraction + 0.5))))
    order = np.random.default_rng(config.seed).permutation(n)
    test = sorted(int(i) for i in order[:n_test])
    train = sorted(int(i) for i in order[n_test:])
    return train, test


def split_train_test(matrix: FeatureMatrix, config: SplitConfig) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Split a matrix into disjoint train and test parts."""
    train, test = split_indices(matrix.n, config)
    return matrix.take(train), matrix.take(test)


@dataclass(frozen=True)
class FeaturePipeline:
    """Fitted encoding plus standardizer, applied to new flows in one call."""
    encoding: EncodingSpec
    standardizer: StandardizerParams

    @property
    def feature_count(self) -> int:
        return self.encoding.feature_count

    def transform(
        self,
        flows: Sequence[FlowRecord],
        labels: Optional[Sequence[Optional[ScenarioLabel]]] = None,
    ) -> FeatureMatrix:
        return standardize(self.standardizer, apply_encoding(self.encoding, flows, labels))
