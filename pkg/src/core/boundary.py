"""
Decision boundaries over reconstruction error.

A boundary is a sorted list of closed benign intervals. The naive boundary is
the single interval [0, tau]; the refined one adds intervals carved around
tight clusters of benign training errors lying above tau.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import DEFAULT_GAP, DEFAULT_MARGIN, DEFAULT_MAX_WIDTH, DEFAULT_TAU
from core.autoencoder import ErrorProfile
from core.errors import DataError
from core.flow_ingest import ScenarioLabel

logger = logging.getLogger(__name__)


class BoundaryKind(str, Enum):
    NAIVE = "Naive"
    REFINED = "Refined"


class Verdict(str, Enum):
    BENIGN = "Benign"
    MALICIOUS = "Malicious"

    @classmethod
    def parse(cls, text: str) -> "Verdict":
        for member in cls:
            if member.value.lower() == str(text).strip().lower():
                return member
        raise DataError(f"Unknown verdict '{text}' (expected Benign or Malicious)")

    @classmethod
    def of_label(cls, label: ScenarioLabel) -> "Verdict":
        return cls.BENIGN if label.is_benign else cls.MALICIOUS


Interval = Tuple[float, float]


@dataclass(frozen=True)
class DecisionBoundary:
    """Closed benign intervals, sorted and pairwise disjoint."""
    intervals: Tuple[Interval, ...]
    kind: BoundaryKind
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        intervals = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        object.__setattr__(self, "intervals", intervals)
        if not intervals:
            raise DataError("A decision boundary needs at least one benign interval")
        for lo, hi in intervals:
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise DataError(f"Interval [{lo}, {hi}] is not finite")
            if lo < 0 or lo > hi:
                raise DataError(f"Interval [{lo}, {hi}] must satisfy 0 <= lo <= hi")
        for (_, prev_hi), (lo, _) in zip(intervals, intervals[1:]):
            if lo <= prev_hi:
                raise DataError("Benign intervals must be sorted and disjoint")
        if self.kind == BoundaryKind.NAIVE and (len(intervals) != 1 or intervals[0][0] != 0.0):
            raise DataError("A naive boundary is exactly one interval [0, tau]")

    def contains(self, error: float) -> bool:
        return any(lo <= error <= hi for lo, hi in self.intervals)

    @property
    def carved(self) -> Tuple[Interval, ...]:
        return self.intervals[1:]

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "intervals": [[lo, hi] for lo, hi in self.intervals],
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "DecisionBoundary":
        try:
            return cls(
                intervals=tuple((lo, hi) for lo, hi in data["intervals"]),
                kind=BoundaryKind(data["kind"]),
                params=dict(data.get("params", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, DataError):
                raise
            raise DataError(f"Malformed boundary: {e}")


@dataclass(frozen=True)
class LabelOutcome:
    flow_index: int
    flow_id: str
    error: float
    predicted: Verdict
    truth: Optional[ScenarioLabel] = None
    tag: str = ""


@dataclass(frozen=True)
class MetricsReport:
    """Labeling metrics with Malicious as the positive class."""
    total: int
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    false_positive_rate: float
    benign_accuracy: Optional[float]
    benign_accuracy_by_tag: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def calibrate_naive(tau: float = DEFAULT_TAU) -> DecisionBoundary:
    """Single benign interval [0, tau]; an error equal to tau is benign."""
    if not np.isfinite(tau) or tau <= 0:
        raise DataError(f"tau must be a positive finite number, got {tau}")
    return DecisionBoundary(((0.0, float(tau)),), BoundaryKind.NAIVE, {"tau": float(tau)})


def _single_linkage(values: np.ndarray, gap: float) -> List[Tuple[float, float]]:
    """Group sorted values; neighbours at most `gap` apart share a cluster."""
    clusters = []
    start = prev = values[0]
    for value in values[1:]:
        if value - prev > gap:
            clusters.append((start, prev))
            start = value
        prev = value
    clusters.append((start, prev))
    return clusters


def _merge(intervals: Sequence[Interval]) -> List[Interval]:
    merged: List[Interval] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def calibrate_refined(
    errors: Sequence[float],
    tau: float = DEFAULT_TAU,
    gap: float = DEFAULT_GAP,
    margin: float = DEFAULT_MARGIN,
    max_width: float = DEFAULT_MAX_WIDTH,
    labels: Optional[Sequence[Optional[ScenarioLabel]]] = None,
    malicious_errors: Optional[Sequence[float]] = None,
) -> DecisionBoundary:
    """
    Carve benign intervals around tight clusters of benign training errors above tau.

    Args:
        errors: Reconstruction errors of benign training flows
        tau: Upper end of the base interval [0, tau]
        gap: Single-linkage threshold between neighbouring sorted errors
        margin: Padding added on both sides of each carved cluster
        max_width: Clusters wider than this are left malicious
        labels: Optional labels of `errors`; any non-benign label is rejected
        malicious_errors: Optional known malicious errors. Carved intervals
            that would admit one of them are dropped.

    Returns:
        Refined DecisionBoundary containing the naive region
    """
    base = calibrate_naive(tau)
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise DataError("Refined calibration needs at least one benign training error")
    if not np.all(np.isfinite(errors)) or np.any(errors < 0):
        raise DataError("Training errors must be finite and non-negative")
    if gap <= 0 or margin <= 0:
        raise DataError(f"gap and margin must be positive, got gap={gap} margin={margin}")
    if max_width < 0:
        raise DataError(f"max_width must not be negative, got {max_width}")
    if labels is not None:
        if len(labels) != errors.size:
            raise DataError("labels and errors differ in length")
        malicious = sum(1 for label in labels if label is None or not label.is_benign)
        if malicious:
            raise DataError(f"Refined calibration uses benign training errors only; got {malicious} other rows")

    params = {"tau": float(tau), "gap": float(gap), "margin": float(margin), "max_width": float(max_width)}
    above = np.sort(errors[errors > tau])
    carved: List[Interval] = []
    if above.size:
        for cmin, cmax in _single_linkage(above, gap):
            if cmax - cmin > max_width:
                logger.info("Cluster [%.4f, %.4f] is wider than %.4f; left malicious", cmin, cmax, max_width)
                continue
            carved.append((max(0.0, float(cmin) - margin), float(cmax) + margin))

    if malicious_errors is not None and len(malicious_errors):
        known = np.asarray(malicious_errors, dtype=float)
        safe = []
        for lo, hi in carved:
            if np.any((known >= lo) & (known <= hi)):
                logger.warning("Carved interval [%.4f, %.4f] admits a known malicious error; dropped", lo, hi)
            else:
                safe.append((lo, hi))
        carved = safe

    intervals = _merge(list(base.intervals) + carved)
    logger.info("Refined boundary: %d benign intervals (%d carved above tau=%.4f)",
                len(intervals), len(carved), tau)
    return DecisionBoundary(tuple(intervals), BoundaryKind.REFINED, params)


def _check_error(error: float) -> float:
    error = float(error)
    if not np.isfinite(error) or error < 0:
        raise DataError(f"Reconstruction error must be finite and non-negative, got {error}")
    return error


def classify(boundary: DecisionBoundary, error: float) -> Verdict:
    """Benign iff the error lies in some benign interval (both ends closed)."""
    return Verdict.BENIGN if boundary.contains(_check_error(error)) else Verdict.MALICIOUS


def label_profile(boundary: DecisionBoundary, profile: ErrorProfile) -> List[LabelOutcome]:
    """Classify every entry of an error profile, keeping its order."""
    return [
        LabelOutcome(
            flow_index=entry.index,
            flow_id=entry.flow_id,
            error=entry.error,
            predicted=classify(boundary, entry.error),
            truth=entry.label,
            tag=entry.tag,
        )
        for entry in profile.entries
    ]


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def metrics_from_outcomes(outcomes: Sequence[LabelOutcome]) -> MetricsReport:
    """
    Confusion counts and rates of labeled outcomes.

    Precision, recall and false-positive rate are 0.0 when their denominator is 0.
    Benign accuracy per tag is reported for tags holding benign flows only.
    """
    if not outcomes:
        raise DataError("Cannot evaluate an empty set of outcomes")
    unlabeled = [o.flow_id for o in outcomes if o.truth is None]
    if unlabeled:
        raise DataError(f"{len(unlabeled)} outcomes carry no truth label (first: {unlabeled[:5]})")

    tp = fp = tn = fn = 0
    by_tag: Dict[str, List[bool]] = {}
    mixed_tags = set()
    for outcome in outcomes:
        flagged = outcome.predicted == Verdict.MALICIOUS
        if outcome.truth.is_benign:
            fp += flagged
            tn += not flagged
            by_tag.setdefault(outcome.tag, []).append(not flagged)
        else:
            tp += flagged
            fn += not flagged
            mixed_tags.add(outcome.tag)

    total = len(outcomes)
    return MetricsReport(
        total=total,
        tp=tp, fp=fp, tn=tn, fn=fn,
        accuracy=(tp + tn) / total,
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        false_positive_rate=_ratio(fp, fp + tn),
        benign_accuracy=tn / (tn + fp) if tn + fp else None,
        benign_accuracy_by_tag={
            tag: sum(hits) / len(hits) for tag, hits in by_tag.items() if tag not in mixed_tags
        },
    )


def evaluate(boundary: DecisionBoundary, profile: ErrorProfile) -> MetricsReport:
    if not profile.entries:
        raise DataError("Cannot evaluate an empty error profile")
    return metrics_from_outcomes(label_profile(boundary, profile))


def save_boundary(path: str, boundary: DecisionBoundary) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(boundary.to_dict(), f, indent=2)
    return path


def load_boundary(path: str) -> DecisionBoundary:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Boundary file '{path}' not found.")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"Boundary file '{path}' is not valid JSON: {e}")
    return DecisionBoundary.from_dict(data)


LABEL_CSV_COLUMNS = ["flow_id", "error", "predicted", "truth"]


def format_truth(label: Optional[ScenarioLabel]) -> str:
    """Truth cell text: `class/attack/state`, empty when unknown."""
    if label is None:
        return ""
    return f"{label.traffic_class.value}/{label.attack_name}/{label.charging_state.value}"


def parse_truth(text: str) -> Optional[ScenarioLabel]:
    text = str(text).strip()
    if not text:
        return None
    parts = text.split("/")
    if len(parts) != 3:
        raise DataError(f"Truth cell '{text}' is not of the form class/attack/state")
    return ScenarioLabel.parse(*parts)


def write_labels_csv(path: str, outcomes: Sequence[LabelOutcome]) -> str:
    pd.DataFrame(
        [{
            "flow_id": o.flow_id,
            "error": o.error,
            "predicted": o.predicted.value,
            "truth": format_truth(o.truth),
        } for o in outcomes],
        columns=LABEL_CSV_COLUMNS,
    ).to_csv(path, index=False)
    return path


def read_labels_csv(path: str) -> List[LabelOutcome]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Labels CSV file '{path}' not found.")
    df = pd.read_csv(path, dtype={"flow_id": str, "predicted": str, "truth": str},
                     keep_default_na=False, float_precision="round_trip")
    missing = [c for c in LABEL_CSV_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"Labels CSV '{path}' is missing columns: {missing}")
    return [
        LabelOutcome(
            flow_index=i,
            flow_id=row["flow_id"],
            error=float(row["error"]),
            predicted=Verdict.parse(row["predicted"]),
            truth=parse_truth(row["truth"]),
        )
        for i, row in enumerate(df.to_dict("records"))
    ]
