"""
Model file and plot-ready CSV artifacts of the autoencoder.
"""
import json
import os
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from core.autoencoder import (
    LAYER_NAMES,
    PROFILE_COLUMNS,
    Architecture,
    AutoencoderParams,
    ErrorProfile,
    ProfileEntry,
    TrainConfig,
    TrainingHistory,
    summarize_errors,
)
from core.errors import DataError
from core.feature_pipeline import EncodingSpec, FeaturePipeline, StandardizerParams
from core.flow_ingest import ScenarioLabel

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelBundle:
    """Everything needed to score new flows: pipeline, parameters and provenance."""
    params: AutoencoderParams
    pipeline: FeaturePipeline
    train_config: TrainConfig
    history: TrainingHistory
    metadata: Dict = field(default_factory=dict)

    @property
    def feature_count(self) -> int:
        return self.params.architecture.input_dim


def save_model(path: str, bundle: ModelBundle) -> str:
    """Write the model JSON. Floats are stored as shortest round-trip decimals."""
    metadata = dict(bundle.metadata)
    metadata.setdefault("created", datetime.now().isoformat(timespec="seconds"))
    metadata["feature_count"] = bundle.feature_count
    metadata["seed"] = bundle.train_config.seed
    document = {
        "format_version": MODEL_FORMAT_VERSION,
        "architecture": bundle.params.architecture.to_dict(),
        "train_config": bundle.train_config.to_dict(),
        "encoding_spec": bundle.pipeline.encoding.to_dict(),
        "standardizer": bundle.pipeline.standardizer.to_dict(),
        "weights": [
            {"layer": name, "weight": w.tolist(), "bias": b.tolist()}
            for name, w, b in zip(LAYER_NAMES, bundle.params.weights, bundle.params.biases)
        ],
        "history": bundle.history.to_dict(),
        "metadata": metadata,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=1)
    return path


def load_model(path: str, expected_feature_count: Optional[int] = None) -> ModelBundle:
    """
    Load a model JSON.

    Args:
        path: Model file
        expected_feature_count: Width of the live pipeline; a different model width is an error

    Returns:
        ModelBundle
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Model file '{path}' not found.")
    with open(path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"Model file '{path}' is not valid JSON: {e}")
    try:
        architecture = Architecture.from_dict(document["architecture"])
        layers = document["weights"]
        params = AutoencoderParams(
            architecture=architecture,
            weights=tuple(np.array(layer["weight"], dtype=float).reshape(shape)
                          for layer, shape in zip(layers, architecture.layer_dims)),
            biases=tuple(np.array(layer["bias"], dtype=float) for layer in layers),
        )
        pipeline = FeaturePipeline(
            encoding=EncodingSpec.from_dict(document["encoding_spec"]),
            standardizer=StandardizerParams.from_dict(document["standardizer"]),
        )
        bundle = ModelBundle(
            params=params,
            pipeline=pipeline,
            train_config=TrainConfig.from_dict(document["train_config"]),
            history=TrainingHistory.from_dict(document["history"]),
            metadata=document.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, DataError):
            raise
        raise DataError(f"Model file '{path}' is malformed: {e}")

    if pipeline.feature_count != architecture.input_dim:
        raise DataError(
            f"Model file '{path}' encodes {pipeline.feature_count} features but its network expects "
            f"{architecture.input_dim}"
        )
    if expected_feature_count is not None and expected_feature_count != architecture.input_dim:
        raise DataError(
            f"Model '{path}' was built for d={architecture.input_dim} features, "
            f"the pipeline produces d={expected_feature_count}"
        )
    return bundle


def write_history_csv(path: str, history: TrainingHistory) -> str:
    """Training curve: one row per epoch."""
    pd.DataFrame({
        "epoch": range(1, len(history.losses) + 1),
        "loss": list(history.losses),
    }).to_csv(path, index=False)
    return path


def read_history_csv(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"History CSV file '{path}' not found.")
    return pd.read_csv(path, float_precision="round_trip")


def write_profile_csv(path: str, profile: ErrorProfile) -> str:
    profile.to_frame().to_csv(path, index=False)
    return path


def read_profile_csv(path: str) -> ErrorProfile:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Profile CSV file '{path}' not found.")
    df = pd.read_csv(path, keep_default_na=False, float_precision="round_trip",
                     dtype={"tag": str, "flow_id": str})
    missing = [c for c in PROFILE_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"Profile CSV '{path}' is missing columns: {missing}")
    entries: List[ProfileEntry] = []
    for row in df.to_dict("records"):
        label = None
        if str(row["label_class"]).strip():
            label = ScenarioLabel.parse(row["label_class"], row["label_attack"], row["label_state"])
        entries.append(ProfileEntry(tag=row["tag"], index=int(row["index"]), flow_id=row["flow_id"],
                                    label=label, error=float(row["error"])))
    tags = list(dict.fromkeys(e.tag for e in entries))
    summaries = {tag: summarize_errors(np.array([e.error for e in entries if e.tag == tag])) for tag in tags}
    return ErrorProfile(tuple(entries), summaries)
