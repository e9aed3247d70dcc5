"""
Labeling service: the ingest -> train -> profile -> calibrate -> label steps
behind the command line, working on flow tables and model files.
"""
import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import MALICIOUS_TAG, TEST_TAG, TRAIN_TAG
from core.autoencoder import (
    Architecture,
    ErrorProfile,
    TrainConfig,
    profile_errors,
    reconstruction_errors,
    train,
)
from core.boundary import (
    DecisionBoundary,
    LabelOutcome,
    MetricsReport,
    calibrate_naive,
    calibrate_refined,
    classify,
    metrics_from_outcomes,
)
from core.errors import DataError
from core.feature_pipeline import (
    FeaturePipeline,
    SplitConfig,
    apply_encoding,
    fit_encoding,
    fit_standardizer,
    split_indices,
)
from core.flow_ingest import (
    FileCounts,
    FlowRecord,
    ScenarioLabel,
    aggregate_packets_report,
    drop_unusable_columns,
    load_flows_report,
    load_manifest,
    read_packet_csv,
)
from core.model_io import ModelBundle
from services.sweep import SweepConfig, SweepReport, holdout_split, run_sweep

logger = logging.getLogger(__name__)

UNLABELED_TAG = "unlabeled"

LabeledFlows = List[Tuple[FlowRecord, Optional[ScenarioLabel]]]


def derive_seed(seed: int, purpose: str) -> int:
    """Independent 32-bit seed for one purpose, derived from the run seed."""
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


@dataclass(frozen=True)
class IngestResult:
    flows: LabeledFlows
    counts: List[FileCounts]


def ingest_manifest(manifest_file: str, drop: Sequence[str] = (), workers: int = 1) -> IngestResult:
    """Load and label every file of a dataset manifest, then drop unusable columns."""
    manifest = load_manifest(manifest_file)
    labeled, counts = load_flows_report(manifest, workers=workers)
    flows = drop_unusable_columns([flow for flow, _ in labeled], drop)
    return IngestResult(list(zip(flows, [label for _, label in labeled])), counts)


def ingest_packets(
    packet_files: Sequence[str],
    idle_timeout: float,
    drop: Sequence[str] = (),
    label: Optional[ScenarioLabel] = None,
) -> IngestResult:
    """
    Aggregate one or more packet CSVs into flows.
    Packets of all files are pooled, so a flow may span captures.
    """
    packets, counts = [], []
    for packet_file in packet_files:
        records, rejected = read_packet_csv(packet_file)
        packets.extend(records)
        counts.append(FileCounts(path=packet_file, accepted=len(records), rejected=rejected))
        logger.info("%s: %d packets read, %d rejected", packet_file, len(records), rejected)
    result = aggregate_packets_report(packets, idle_timeout)
    logger.info("Aggregated %d packets into %d flows", result.accepted, len(result.flows))
    flows = drop_unusable_columns(result.flows, drop)
    return IngestResult([(flow, label) for flow in flows], counts)


@dataclass(frozen=True)
class TrainingRun:
    bundle: ModelBundle
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]


def _benign(flows: LabeledFlows) -> LabeledFlows:
    return [(flow, label) for flow, label in flows if label is not None and label.is_benign]


def train_model(
    flows: LabeledFlows,
    architecture: Dict,
    train_config: TrainConfig,
    benign_only: bool = True,
    test_fraction: float = 0.2,
    seed: int = 0,
) -> TrainingRun:
    """
    Fit the feature pipeline and the autoencoder on benign flows.

    Args:
        flows: Labeled flows from a flow table
        architecture: hidden_dim, latent_dim and linear_output; input_dim comes from the pipeline
        train_config: Optimizer settings; its seed is replaced by a derived one
        benign_only: Keep only benign rows. When False, any other row is an error.
        test_fraction: Share of benign flows held out as unseen benign data
        seed: Run seed

    Returns:
        TrainingRun with the model bundle and the split flow ids
    """
    if benign_only:
        kept = _benign(flows)
        logger.info("Kept %d benign of %d flows for training", len(kept), len(flows))
    else:
        kept = list(flows)
    if len(kept) < 2:
        raise DataError(f"Training needs at least 2 benign flows, got {len(kept)}")

    train_idx, test_idx = split_indices(len(kept), SplitConfig(test_fraction, derive_seed(seed, "split")))
    train_flows = [kept[i][0] for i in train_idx]
    train_labels = [kept[i][1] for i in train_idx]

    encoding = fit_encoding(train_flows)
    encoded = apply_encoding(encoding, train_flows, train_labels)
    pipeline = FeaturePipeline(encoding, fit_standardizer(encoded))
    matrix = pipeline.transform(train_flows, train_labels)

    arch = Architecture(input_dim=matrix.d, **architecture)
    config = TrainConfig(**{**train_config.to_dict(), "seed": derive_seed(seed, "train")})
    params, history = train(matrix, arch, config)

    train_ids = tuple(flow.flow_id for flow in train_flows)
    test_ids = tuple(kept[i][0].flow_id for i in test_idx)
    bundle = ModelBundle(
        params=params,
        pipeline=pipeline,
        train_config=config,
        history=history,
        metadata={"run_seed": seed, "train_flow_ids": list(train_ids), "test_flow_ids": list(test_ids)},
    )
    return TrainingRun(bundle, train_ids, test_ids)


def _tag(flow: FlowRecord, label: Optional[ScenarioLabel], train_ids: set) -> str:
    if label is None:
        return UNLABELED_TAG
    if not label.is_benign:
        return MALICIOUS_TAG
    return TRAIN_TAG if flow.flow_id in train_ids else TEST_TAG


def _train_ids(bundle: ModelBundle) -> set:
    return set(bundle.metadata.get("train_flow_ids", []))


def profile_model(bundle: ModelBundle, flows: LabeledFlows) -> ErrorProfile:
    """
    Score flows grouped as seen benign (train), unseen benign (test),
    malicious and unlabeled, in that order.
    """
    if not flows:
        raise DataError("No flows to profile")
    train_ids = _train_ids(bundle)
    groups: Dict[str, LabeledFlows] = {tag: [] for tag in (TRAIN_TAG, TEST_TAG, MALICIOUS_TAG, UNLABELED_TAG)}
    for flow, label in flows:
        groups[_tag(flow, label, train_ids)].append((flow, label))
    datasets = [
        (tag, bundle.pipeline.transform([f for f, _ in group], [l for _, l in group]))
        for tag, group in groups.items() if group
    ]
    return profile_errors(bundle.params, datasets)


def score_flows(bundle: ModelBundle, flows: LabeledFlows) -> np.ndarray:
    matrix = bundle.pipeline.transform([f for f, _ in flows], [l for _, l in flows])
    return reconstruction_errors(bundle.params, matrix.rows)


def calibrate(
    mode: str,
    tau: float,
    gap: float = 0.3,
    margin: float = 0.05,
    max_width: float = 0.5,
    bundle: Optional[ModelBundle] = None,
    flows: Optional[LabeledFlows] = None,
    safety_check: bool = False,
) -> DecisionBoundary:
    """
    Build a naive or refined boundary. Refined calibration scores the model's
    benign training flows found in `flows`; the safety check also scores the
    malicious ones.
    """
    if mode == "naive":
        return calibrate_naive(tau)
    if mode != "refined":
        raise DataError(f"Unknown calibration mode '{mode}' (expected naive or refined)")
    if bundle is None or not flows:
        raise DataError("Refined calibration needs a model and its training flows")

    train_ids = _train_ids(bundle)
    if train_ids:
        training = [(f, l) for f, l in flows if f.flow_id in train_ids]
    else:
        training = _benign(flows)
    if not training:
        raise DataError("None of the given flows belongs to the model's benign training set")
    if len(training) < len(train_ids):
        logger.warning("Only %d of %d training flows of the model were found", len(training), len(train_ids))

    malicious_errors = None
    if safety_check:
        malicious = [(f, l) for f, l in flows if l is not None and not l.is_benign]
        malicious_errors = score_flows(bundle, malicious) if malicious else []
    return calibrate_refined(
        score_flows(bundle, training),
        tau=tau, gap=gap, margin=margin, max_width=max_width,
        labels=[l for _, l in training],
        malicious_errors=malicious_errors,
    )


def label_flows(
    bundle: ModelBundle,
    boundary: DecisionBoundary,
    flows: LabeledFlows,
) -> Tuple[List[LabelOutcome], Optional[MetricsReport]]:
    """
    Label every flow in input order.

    Returns:
        Tuple of (one outcome per flow, metrics when every flow carries a truth label)
    """
    if not flows:
        raise DataError("No flows to label")
    errors = score_flows(bundle, flows)
    train_ids = _train_ids(bundle)
    outcomes = [
        LabelOutcome(
            flow_index=i,
            flow_id=flow.flow_id,
            error=float(error),
            predicted=classify(boundary, error),
            truth=label,
            tag=_tag(flow, label, train_ids),
        )
        for i, ((flow, label), error) in enumerate(zip(flows, errors))
    ]
    metrics = None
    if all(o.truth is not None for o in outcomes):
        metrics = metrics_from_outcomes(outcomes)
    return outcomes, metrics


def fit_sweep_pipeline(flows: LabeledFlows, config: SweepConfig) -> Tuple[FeaturePipeline, LabeledFlows]:
    """
    Fit the encoding and standardizer on the fit rows of the sweep's split.
    Held-out rows never reach the fitted parameters.

    Returns:
        Tuple of (pipeline, benign flows in sweep row order)
    """
    benign = _benign(flows)
    if len(benign) < 3:
        raise DataError(f"The sweep needs at least 3 benign flows, got {len(benign)}")
    fit_idx, _ = holdout_split(len(benign), config)
    fit_flows = [benign[i][0] for i in fit_idx]
    fit_labels = [benign[i][1] for i in fit_idx]
    encoding = fit_encoding(fit_flows)
    encoded = apply_encoding(encoding, fit_flows, fit_labels)
    return FeaturePipeline(encoding, fit_standardizer(encoded)), benign


def sweep_latent(flows: LabeledFlows, config: SweepConfig) -> SweepReport:
    """Standardize the benign flows and run the latent-dimension sweep over them."""
    pipeline, benign = fit_sweep_pipeline(flows, config)
    return run_sweep(pipeline.transform([f for f, _ in benign], [l for _, l in benign]), config)
