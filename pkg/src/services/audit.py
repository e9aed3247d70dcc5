"""
Audit of an inline IDS against full-flow labels.
The IDS decided with partial flow visibility; the full-flow label is the reference.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from core.boundary import LabelOutcome, Verdict
from core.errors import DataError

logger = logging.getLogger(__name__)

IDS_LOG_COLUMNS = ("flow_id", "verdict", "decision_time")


@dataclass(frozen=True)
class IdsDecision:
    flow_id: str
    verdict: Verdict
    decision_time: float
    packets_seen: Optional[int] = None


@dataclass(frozen=True)
class IdsDecisionLog:
    entries: Tuple[IdsDecision, ...]

    def __post_init__(self):
        seen, duplicates = set(), set()
        for entry in self.entries:
            if entry.flow_id in seen:
                duplicates.add(entry.flow_id)
            seen.add(entry.flow_id)
        if duplicates:
            raise DataError(f"IDS log repeats flow ids: {sorted(duplicates)[:5]}")

    def __len__(self) -> int:
        return len(self.entries)


def load_ids_log(csv_file: str) -> IdsDecisionLog:
    """
    Load an IDS decision log CSV (flow_id, verdict, decision_time[, packets_seen]).
    Rows with an unreadable verdict or time are skipped with a warning.
    """
    if not os.path.exists(csv_file):
        raise FileNotFoundError(f"IDS log file '{csv_file}' not found.")
    df = pd.read_csv(csv_file, dtype=str, keep_default_na=False)
    df.columns = [c.strip().lower() for c in df.columns]
    missing = [c for c in IDS_LOG_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"IDS log '{csv_file}' is missing columns: {missing}")

    has_packets = "packets_seen" in df.columns
    entries, rejected = [], 0
    for position, row in enumerate(df.to_dict("records")):
        try:
            packets = row["packets_seen"].strip() if has_packets else ""
            entries.append(IdsDecision(
                flow_id=row["flow_id"].strip(),
                verdict=Verdict.parse(row["verdict"]),
                decision_time=float(row["decision_time"]),
                packets_seen=int(packets) if packets else None,
            ))
        except ValueError as e:
            rejected += 1
            logger.warning("IDS log %s row %d skipped: %s", csv_file, position + 1, e)
    logger.info("Loaded %d IDS decisions from %s (%d rejected)", len(entries), csv_file, rejected)
    return IdsDecisionLog(tuple(entries))


@dataclass(frozen=True)
class AuditReport:
    """IDS verdicts against reference labels; Malicious is the positive class."""
    joined: int
    agreement: float
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int
    ids_precision: float
    ids_recall: float
    ids_false_positive_rate: float
    false_positive_ids: Tuple[str, ...] = ()
    false_negative_ids: Tuple[str, ...] = ()
    unmatched_ids: Tuple[str, ...] = ()
    unmatched_labels: Tuple[str, ...] = ()

    @property
    def confusion(self) -> Dict[str, Dict[str, int]]:
        """ids verdict -> reference verdict -> count."""
        return {
            Verdict.MALICIOUS.value: {Verdict.MALICIOUS.value: self.true_positives,
                                      Verdict.BENIGN.value: self.false_positives},
            Verdict.BENIGN.value: {Verdict.MALICIOUS.value: self.false_negatives,
                                   Verdict.BENIGN.value: self.true_negatives},
        }

    def to_dict(self) -> Dict:
        data = {key: list(value) if isinstance(value, tuple) else value for key, value in self.__dict__.items()}
        data["confusion"] = self.confusion
        return data


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def audit(ids_log: IdsDecisionLog, falcon_labels: Sequence[LabelOutcome]) -> AuditReport:
    """
    Inner-join the IDS log with the reference labels on flow_id and count agreement.

    Args:
        ids_log: IDS decisions
        falcon_labels: Reference labels; their predicted verdict is the truth

    Returns:
        AuditReport with confusion counts and the flow ids of every disagreement
    """
    reference: Dict[str, Verdict] = {}
    for outcome in falcon_labels:
        if outcome.flow_id in reference:
            raise DataError(f"Reference labels repeat flow id '{outcome.flow_id}'")
        reference[outcome.flow_id] = outcome.predicted

    counts = {(ids, ref): 0 for ids in Verdict for ref in Verdict}
    false_positive_ids: List[str] = []
    false_negative_ids: List[str] = []
    unmatched_ids: List[str] = []
    for decision in ids_log.entries:
        truth = reference.get(decision.flow_id)
        if truth is None:
            unmatched_ids.append(decision.flow_id)
            continue
        counts[(decision.verdict, truth)] += 1
        if decision.verdict != truth:
            target = false_positive_ids if decision.verdict == Verdict.MALICIOUS else false_negative_ids
            target.append(decision.flow_id)

    joined = len(ids_log) - len(unmatched_ids)
    if joined == 0:
        raise DataError("No IDS decision matches a labeled flow id; check the join key")
    logged = {decision.flow_id for decision in ids_log.entries}
    unmatched_labels = sorted(fid for fid in reference if fid not in logged)

    tp = counts[(Verdict.MALICIOUS, Verdict.MALICIOUS)]
    fp = counts[(Verdict.MALICIOUS, Verdict.BENIGN)]
    tn = counts[(Verdict.BENIGN, Verdict.BENIGN)]
    fn = counts[(Verdict.BENIGN, Verdict.MALICIOUS)]
    report = AuditReport(
        joined=joined,
        agreement=(tp + tn) / joined,
        true_positives=tp,
        false_positives=fp,
        true_negatives=tn,
        false_negatives=fn,
        ids_precision=_ratio(tp, tp + fp),
        ids_recall=_ratio(tp, tp + fn),
        ids_false_positive_rate=_ratio(fp, fp + tn),
        false_positive_ids=tuple(sorted(false_positive_ids)),
        false_negative_ids=tuple(sorted(false_negative_ids)),
        unmatched_ids=tuple(sorted(unmatched_ids)),
        unmatched_labels=tuple(unmatched_labels),
    )
    logger.info("Audit joined %d flows: agreement %.4f, %d unmatched IDS rows, %d unmatched labels",
                joined, report.agreement, len(unmatched_ids), len(unmatched_labels))
    return report


def write_audit_json(path: str, report: AuditReport) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    return path
