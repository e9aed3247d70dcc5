"""
Flow ingest for EV charging network captures.
Aggregates packet records into bidirectional flows, loads labeled flow tables
listed in a dataset manifest, and prunes columns that are unsuitable for learning.
"""
import ipaddress
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from config import DEFAULT_IDLE_TIMEOUT
from core.errors import DataError

logger = logging.getLogger(__name__)

FeatureValue = Union[float, str]


class TrafficClass(str, Enum):
    BENIGN = "Benign"
    RECON = "Recon"
    DOS = "DoS"

    @classmethod
    def parse(cls, text: str) -> "TrafficClass":
        for member in cls:
            if member.value.lower() == str(text).strip().lower():
                return member
        raise DataError(f"Unknown traffic class '{text}'. Expected one of {[m.value for m in cls]}")


class ChargingState(str, Enum):
    CHARGING = "Charging"
    IDLE = "Idle"

    @classmethod
    def parse(cls, text: str) -> "ChargingState":
        for member in cls:
            if member.value.lower() == str(text).strip().lower():
                return member
        raise DataError(f"Unknown charging state '{text}'. Expected one of {[m.value for m in cls]}")


class Testbed(str, Enum):
    EVSE_A = "EVSE_A"
    EVSE_B = "EVSE_B"


# Attack taxonomy of the EV charging dataset, keyed by normalized slug
ATTACK_CLASSES = {
    "tcp-port-scan": TrafficClass.RECON,
    "service-version-detection": TrafficClass.RECON,
    "os-fingerprinting": TrafficClass.RECON,
    "aggressive-scan": TrafficClass.RECON,
    "syn-stealth-scan": TrafficClass.RECON,
    "vulnerability-scan": TrafficClass.RECON,
    "udp-flood": TrafficClass.DOS,
    "icmp-flood": TrafficClass.DOS,
    "pshack-flood": TrafficClass.DOS,
    "icmp-fragmentation": TrafficClass.DOS,
    "tcp-flood": TrafficClass.DOS,
    "syn-flood": TrafficClass.DOS,
    "synonymousip-flood": TrafficClass.DOS,
    "slowloris-scan": TrafficClass.DOS,
}
NO_ATTACK = "none"


def normalize_attack(name: str) -> str:
    """Normalize an attack name to its slug ("UDP Flood" -> "udp-flood")."""
    return re.sub(r"[\s_]+", "-", str(name).strip().lower())


@dataclass(frozen=True)
class ScenarioLabel:
    """Scenario label attached to every flow of a dataset file."""
    traffic_class: TrafficClass
    attack_name: str
    charging_state: ChargingState

    def __post_init__(self):
        is_benign = self.traffic_class == TrafficClass.BENIGN
        if is_benign != (self.attack_name == NO_ATTACK):
            raise DataError(
                f"Label mismatch: class {self.traffic_class.value} with attack '{self.attack_name}'. "
                f"Benign flows carry attack '{NO_ATTACK}' and only benign flows do."
            )
        if not is_benign:
            expected = ATTACK_CLASSES.get(self.attack_name)
            if expected is None:
                raise DataError(f"Unknown attack '{self.attack_name}'")
            if expected != self.traffic_class:
                raise DataError(
                    f"Attack '{self.attack_name}' belongs to class {expected.value}, "
                    f"not {self.traffic_class.value}"
                )

    @classmethod
    def parse(cls, traffic_class: str, attack: str, state: str) -> "ScenarioLabel":
        return cls(
            traffic_class=TrafficClass.parse(traffic_class),
            attack_name=normalize_attack(attack),
            charging_state=ChargingState.parse(state),
        )

    @property
    def is_benign(self) -> bool:
        return self.traffic_class == TrafficClass.BENIGN


@dataclass(frozen=True)
class PacketRecord:
    """A single captured packet, as read from a packet table."""
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int
    length: int
    tcp_flags: int = 0

    def validate(self) -> None:
        """Raise DataError when the record cannot take part in aggregation."""
        for name in ("src_ip", "dst_ip"):
            try:
                ipaddress.IPv4Address(getattr(self, name))
            except (ipaddress.AddressValueError, ValueError):
                raise DataError(f"Malformed IPv4 address in {name}: {getattr(self, name)!r}")
        for name in ("src_port", "dst_port"):
            if not 0 <= getattr(self, name) <= 65535:
                raise DataError(f"{name} out of range: {getattr(self, name)}")
        if self.length < 0:
            raise DataError(f"Negative packet length: {self.length}")
        if not 0 <= self.tcp_flags <= 0xFF:
            raise DataError(f"tcp_flags is not an 8-bit mask: {self.tcp_flags}")
        if self.timestamp != self.timestamp or self.timestamp in (float("inf"), float("-inf")):
            raise DataError(f"Non-finite timestamp: {self.timestamp}")


@dataclass(frozen=True, order=True)
class FlowKey:
    """Bidirectional 5-tuple with the lower (ip, port) endpoint first."""
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int

    @classmethod
    def canonical(cls, src_ip: str, dst_ip: str, src_port: int, dst_port: int, protocol: int) -> "FlowKey":
        a = (int(ipaddress.IPv4Address(src_ip)), int(src_port))
        b = (int(ipaddress.IPv4Address(dst_ip)), int(dst_port))
        if b < a:
            a, b = b, a
        return cls(
            src_ip=str(ipaddress.IPv4Address(a[0])),
            dst_ip=str(ipaddress.IPv4Address(b[0])),
            src_port=a[1],
            dst_port=b[1],
            protocol=int(protocol),
        )


# TCP flag bits in the order they are counted
TCP_FLAG_BITS = {"fin": 0x01, "syn": 0x02, "rst": 0x04, "psh": 0x08, "ack": 0x10, "urg": 0x20}


@dataclass(frozen=True)
class FlowRecord:
    """
    One bidirectional flow. The endpoint that sent the first packet is the
    source, and its packets are counted as forward.
    """
    flow_id: str
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    protocol: int
    start_time: float
    end_time: float
    packets_fwd: int = 0
    packets_bwd: int = 0
    bytes_fwd: int = 0
    bytes_bwd: int = 0
    min_ps_fwd: float = 0.0
    mean_ps_fwd: float = 0.0
    max_ps_fwd: float = 0.0
    min_ps_bwd: float = 0.0
    mean_ps_bwd: float = 0.0
    max_ps_bwd: float = 0.0
    syn_count: int = 0
    ack_count: int = 0
    psh_count: int = 0
    rst_count: int = 0
    fin_count: int = 0
    urg_count: int = 0
    extra_features: Dict[str, FeatureValue] = field(default_factory=dict)

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise DataError(f"Flow {self.flow_id}: end_time {self.end_time} before start_time {self.start_time}")
        for name in COUNT_COLUMNS:
            if getattr(self, name) < 0:
                raise DataError(f"Flow {self.flow_id}: negative {name}")
        for direction in ("fwd", "bwd"):
            if getattr(self, f"packets_{direction}") > 0:
                low = getattr(self, f"min_ps_{direction}")
                mid = getattr(self, f"mean_ps_{direction}")
                high = getattr(self, f"max_ps_{direction}")
                if not (low <= mid + 1e-9 and mid <= high + 1e-9):
                    raise DataError(f"Flow {self.flow_id}: {direction} packet sizes violate min <= mean <= max")

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    @property
    def key(self) -> FlowKey:
        return FlowKey.canonical(self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.protocol)

    @property
    def tcp_flag_counts(self) -> Dict[str, int]:
        return {flag: getattr(self, f"{flag}_count") for flag in ("syn", "ack", "psh", "rst", "fin", "urg")}

    def canonical_counters(self) -> Tuple[int, int]:
        """Packet counts sent by the key's first and second endpoint."""
        key = self.key
        if (self.src_ip, self.src_port) == (key.src_ip, key.src_port):
            return self.packets_fwd, self.packets_bwd
        return self.packets_bwd, self.packets_fwd


# Native flow table layout. Everything that is not a core column rides in extra_features.
IP_COLUMNS = ("src_ip", "dst_ip")
COUNT_COLUMNS = (
    "packets_fwd", "packets_bwd", "bytes_fwd", "bytes_bwd",
    "syn_count", "ack_count", "psh_count", "rst_count", "fin_count", "urg_count",
)
INT_COLUMNS = ("src_port", "dst_port", "protocol") + COUNT_COLUMNS
CORE_COLUMNS = (
    "flow_id", "src_ip", "src_port", "dst_ip", "dst_port", "protocol",
    "start_time", "end_time", "duration",
    "packets_fwd", "packets_bwd", "bytes_fwd", "bytes_bwd",
    "min_ps_fwd", "mean_ps_fwd", "max_ps_fwd", "min_ps_bwd", "mean_ps_bwd", "max_ps_bwd",
    "syn_count", "ack_count", "psh_count", "rst_count", "fin_count", "urg_count",
)
CORE_NUMERIC_COLUMNS = tuple(c for c in CORE_COLUMNS if c not in ("flow_id",) + IP_COLUMNS)
REQUIRED_COLUMNS = ("src_ip", "dst_ip", "src_port", "dst_port", "protocol", "start_time", "end_time")
LABEL_COLUMNS = ("label_class", "label_attack", "label_state")

# NFStream column names mapped to core columns, with a unit scale
NFSTREAM_ALIASES = {
    "bidirectional_first_seen_ms": ("start_time", 1e-3),
    "bidirectional_last_seen_ms": ("end_time", 1e-3),
    "bidirectional_duration_ms": ("duration", 1e-3),
    "src2dst_packets": ("packets_fwd", 1.0),
    "dst2src_packets": ("packets_bwd", 1.0),
    "src2dst_bytes": ("bytes_fwd", 1.0),
    "dst2src_bytes": ("bytes_bwd", 1.0),
    "src2dst_min_ps": ("min_ps_fwd", 1.0),
    "src2dst_mean_ps": ("mean_ps_fwd", 1.0),
    "src2dst_max_ps": ("max_ps_fwd", 1.0),
    "dst2src_min_ps": ("min_ps_bwd", 1.0),
    "dst2src_mean_ps": ("mean_ps_bwd", 1.0),
    "dst2src_max_ps": ("max_ps_bwd", 1.0),
    "bidirectional_syn_packets": ("syn_count", 1.0),
    "bidirectional_ack_packets": ("ack_count", 1.0),
    "bidirectional_psh_packets": ("psh_count", 1.0),
    "bidirectional_rst_packets": ("rst_count", 1.0),
    "bidirectional_fin_packets": ("fin_count", 1.0),
    "bidirectional_urg_packets": ("urg_count", 1.0),
}

_FLOW_FIELDS = {f.name for f in fields(FlowRecord)}


@dataclass(frozen=True)
class FileCounts:
    path: str
    accepted: int
    rejected: int


@dataclass(frozen=True)
class AggregationResult:
    flows: List[FlowRecord]
    accepted: int
    rejected: int


class _FlowBuilder:
    """Accumulates the packets of one flow until it expires."""

    def __init__(self, first: PacketRecord):
        self.src = (first.src_ip, first.src_port)
        self.dst = (first.dst_ip, first.dst_port)
        self.protocol = first.protocol
        self.start_time = first.timestamp
        self.last_time = first.timestamp
        self.lengths = {"fwd": [], "bwd": []}
        self.flags = {flag: 0 for flag in TCP_FLAG_BITS}
        self.add(first)

    def add(self, packet: PacketRecord) -> None:
        direction = "fwd" if (packet.src_ip, packet.src_port) == self.src else "bwd"
        self.lengths[direction].append(packet.length)
        for flag, bit in TCP_FLAG_BITS.items():
            if packet.tcp_flags & bit:
                self.flags[flag] += 1
        self.last_time = packet.timestamp

    def build(self, flow_id: str) -> FlowRecord:
        stats = {}
        for direction, lengths in self.lengths.items():
            stats[f"packets_{direction}"] = len(lengths)
            stats[f"bytes_{direction}"] = int(sum(lengths))
            stats[f"min_ps_{direction}"] = float(min(lengths)) if lengths else 0.0
            stats[f"max_ps_{direction}"] = float(max(lengths)) if lengths else 0.0
            stats[f"mean_ps_{direction}"] = float(sum(lengths)) / len(lengths) if lengths else 0.0
        return FlowRecord(
            flow_id=flow_id,
            src_ip=self.src[0],
            src_port=self.src[1],
            dst_ip=self.dst[0],
            dst_port=self.dst[1],
            protocol=self.protocol,
            start_time=self.start_time,
            end_time=self.last_time,
            **stats,
            **{f"{flag}_count": count for flag, count in self.flags.items()},
        )


def _normalize_packet(packet: PacketRecord) -> PacketRecord:
    return replace(
        packet,
        src_ip=str(ipaddress.IPv4Address(packet.src_ip)),
        dst_ip=str(ipaddress.IPv4Address(packet.dst_ip)),
    )


def aggregate_packets_report(
    packets: Sequence[PacketRecord],
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
    id_prefix: str = "flow",
) -> AggregationResult:
    """
    Group packets into bidirectional flows on their canonical 5-tuple.

    A flow is closed and a new one started when the gap since its last packet
    exceeds idle_timeout. Malformed records are rejected and counted.

    Args:
        packets: Packet records in any order
        idle_timeout: Maximum inter-packet gap in seconds inside one flow
        id_prefix: Prefix of the generated flow ids

    Returns:
        AggregationResult with flows ordered by start time
    """
    if idle_timeout <= 0:
        raise DataError(f"idle_timeout must be positive, got {idle_timeout}")

    accepted = []
    rejected = 0
    for packet in packets:
        try:
            packet.validate()
        except DataError as e:
            rejected += 1
            logger.debug("Rejected packet: %s", e)
            continue
        accepted.append(_normalize_packet(packet))
    if rejected:
        logger.warning("Rejected %d of %d packet records", rejected, len(packets))

    # Full-record sort key so equal timestamps cannot make the result order dependent
    accepted.sort(key=lambda p: (p.timestamp, p.src_ip, p.dst_ip, p.src_port, p.dst_port,
                                 p.protocol, p.length, p.tcp_flags))

    active: Dict[FlowKey, _FlowBuilder] = {}
    finished: List[_FlowBuilder] = []
    for packet in accepted:
        key = FlowKey.canonical(packet.src_ip, packet.dst_ip, packet.src_port, packet.dst_port, packet.protocol)
        builder = active.get(key)
        if builder is not None and packet.timestamp - builder.last_time > idle_timeout:
            finished.append(builder)
            builder = None
        if builder is None:
            active[key] = _FlowBuilder(packet)
        else:
            builder.add(packet)
    finished.extend(active.values())

    finished.sort(key=lambda b: (b.start_time, b.src, b.dst, b.protocol))
    flows = [builder.build(f"{id_prefix}-{i}") for i, builder in enumerate(finished)]
    return AggregationResult(flows=flows, accepted=len(accepted), rejected=rejected)


def aggregate_packets(
    packets: Sequence[PacketRecord],
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
    id_prefix: str = "flow",
) -> List[FlowRecord]:
    """Aggregate packets into flows; see aggregate_packets_report."""
    return aggregate_packets_report(packets, idle_timeout, id_prefix).flows


PACKET_COLUMNS = ("timestamp", "src_ip", "dst_ip", "src_port", "dst_port", "protocol", "length", "tcp_flags")


def read_packet_csv(csv_file: str) -> Tuple[List[PacketRecord], int]:
    """
    Load a packet table.

    Returns:
        Tuple of (packet records, number of rows rejected for unparseable numbers)
    """
    if not os.path.exists(csv_file):
        raise FileNotFoundError(f"Packet CSV file '{csv_file}' not found.")
    try:
        df = pd.read_csv(csv_file, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return [], 0
    df.columns = [str(c).strip().lower() for c in df.columns]
    missing = [c for c in PACKET_COLUMNS if c not in df.columns and c != "tcp_flags"]
    if missing:
        raise DataError(f"Packet CSV '{csv_file}' is missing columns: {missing}. Found columns: {list(df.columns)}")
    if "tcp_flags" not in df.columns:
        df["tcp_flags"] = "0"

    numeric = {}
    for name in ("timestamp", "src_port", "dst_port", "protocol", "length", "tcp_flags"):
        numeric[name] = pd.to_numeric(df[name].str.strip(), errors="coerce")
    bad = pd.Series(False, index=df.index)
    for name, values in numeric.items():
        bad |= values.isna()
        if name != "timestamp":
            bad |= values.notna() & (values != values.round())

    packets = []
    for i in df.index[~bad]:
        packets.append(PacketRecord(
            timestamp=float(numeric["timestamp"][i]),
            src_ip=df.at[i, "src_ip"].strip(),
            dst_ip=df.at[i, "dst_ip"].strip(),
            src_port=int(numeric["src_port"][i]),
            dst_port=int(numeric["dst_port"][i]),
            protocol=int(numeric["protocol"][i]),
            length=int(numeric["length"][i]),
            tcp_flags=int(numeric["tcp_flags"][i]),
        ))
    rejected = int(bad.sum())
    if rejected:
        logger.warning("%s: rejected %d packet rows with unparseable numbers", csv_file, rejected)
    return packets, rejected


# ---------------------------------------------------------------------------
# Flow tables
# ---------------------------------------------------------------------------

def _read_table(csv_file: str) -> pd.DataFrame:
    if not os.path.exists(csv_file):
        raise FileNotFoundError(f"Flow CSV file '{csv_file}' not found.")
    try:
        df = pd.read_csv(csv_file, keep_default_na=False, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    df.columns = [str(c).strip().lower() for c in df.columns]
    return df


def _resolve_aliases(df: pd.DataFrame) -> pd.DataFrame:
    """Rename NFStream columns onto core columns, scaling units to seconds."""
    df = df.copy()
    for alias, (core, scale) in NFSTREAM_ALIASES.items():
        if alias in df.columns and core not in df.columns:
            values = pd.to_numeric(df[alias], errors="coerce")
            df[core] = values * scale if scale != 1.0 else values
            df = df.drop(columns=[alias])
    return df


def _is_numeric_column(values: pd.Series, column: str) -> bool:
    """
    Numeric when every non-empty cell parses as a number, text when none does.
    Blank cells do not vote. A column mixing numbers and text raises DataError.
    """
    if values.dtype.kind in "iufb":
        return True
    text = values.astype(str).str.strip()
    nonempty = text[text != ""]
    if nonempty.empty:
        return False
    parsed = pd.to_numeric(nonempty, errors="coerce").notna()
    if parsed.all():
        return True
    if parsed.any():
        raise DataError(f"Column '{column}' mixes numbers and text "
                        f"(e.g. {nonempty[parsed].iloc[0]!r} and {nonempty[~parsed].iloc[0]!r})")
    return False


def _extra_columns(df: pd.DataFrame) -> List[str]:
    return [c for c in df.columns if c not in CORE_COLUMNS and c not in LABEL_COLUMNS]


def _numeric_extras(frames: Sequence[pd.DataFrame]) -> List[str]:
    """Extra columns that are numeric over the union of the given tables."""
    frames = [_resolve_aliases(df) for df in frames if not df.empty]
    if not frames:
        return []
    combined = pd.concat(frames, ignore_index=True)
    return [c for c in _extra_columns(combined) if _is_numeric_column(combined[c], c)]


def _frame_to_flows(
    df: pd.DataFrame,
    source: str,
    numeric_extras: Optional[Sequence[str]] = None,
) -> Tuple[List[Tuple[FlowRecord, Optional[ScenarioLabel]]], int]:
    """
    Convert a flow table to records. Rows with unparseable or blank numeric
    cells are rejected. `numeric_extras` fixes which extra columns are numeric;
    by default the table decides on its own.
    """
    if df.empty:
        return [], 0
    df = _resolve_aliases(df)
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"Flow table '{source}' is missing columns: {missing}. Found columns: {list(df.columns)}")

    stem = os.path.splitext(os.path.basename(source))[0]
    extras = _extra_columns(df)
    if numeric_extras is None:
        numeric_extras = _numeric_extras([df])
    numeric_columns = [c for c in CORE_NUMERIC_COLUMNS if c in df.columns and c != "duration"]
    numeric_columns += [c for c in extras if c in set(numeric_extras)]

    parsed = {}
    bad = pd.Series(False, index=df.index)
    for column in numeric_columns:
        if df[column].dtype.kind in "iufb":
            values = df[column].astype(float)
        else:
            values = pd.to_numeric(df[column].astype(str).str.strip(), errors="coerce")
        bad |= values.isna()
        if column in INT_COLUMNS:
            bad |= values.notna() & (values != values.round())
        parsed[column] = values.tolist()
    bad = bad.tolist()
    text_extras = [c for c in extras if c not in parsed]

    records = []
    rejected = int(sum(bad))
    for position, row in enumerate(df.to_dict("records")):
        if bad[position]:
            continue
        core = {c: int(parsed[c][position]) if c in INT_COLUMNS else float(parsed[c][position])
                for c in CORE_NUMERIC_COLUMNS if c in parsed}
        extra = {c: float(parsed[c][position]) for c in extras if c in parsed}
        extra.update({c: str(row[c]).strip() for c in text_extras})
        extra = {c: extra[c] for c in extras}
        flow_id = str(row["flow_id"]) if "flow_id" in row else f"{stem}-{position}"
        try:
            flow = FlowRecord(
                flow_id=flow_id,
                src_ip=str(row["src_ip"]).strip(),
                dst_ip=str(row["dst_ip"]).strip(),
                extra_features=extra,
                **core,
            )
            label = None
            if all(c in row for c in LABEL_COLUMNS) and str(row["label_class"]).strip():
                label = ScenarioLabel.parse(row["label_class"], row["label_attack"], row["label_state"])
        except DataError as e:
            rejected += 1
            logger.debug("%s row %d rejected: %s", source, position, e)
            continue
        records.append((flow, label))
    if rejected:
        logger.warning("%s: rejected %d of %d rows", source, rejected, len(df))
    return records, rejected


def read_flow_table(csv_file: str) -> List[Tuple[FlowRecord, Optional[ScenarioLabel]]]:
    """
    Load a flow table written by write_flow_table (or a raw NFStream export).

    Returns:
        List of (flow, label) pairs; label is None for unlabeled rows
    """
    records, _ = _frame_to_flows(_read_table(csv_file), csv_file)
    return records


def write_flow_table(csv_file: str, flows: Sequence[Tuple[FlowRecord, Optional[ScenarioLabel]]]) -> str:
    """
    Save labeled flows as a flow table: flow_id, label columns, core columns,
    then the extra feature columns in lexicographic order.
    """
    extra_columns = sorted({name for flow, _ in flows for name in flow.extra_features})
    rows = []
    for flow, label in flows:
        row = {"flow_id": flow.flow_id}
        row["label_class"] = label.traffic_class.value if label else ""
        row["label_attack"] = label.attack_name if label else ""
        row["label_state"] = label.charging_state.value if label else ""
        for column in CORE_COLUMNS[1:]:
            row[column] = getattr(flow, column)
        for column in extra_columns:
            row[column] = flow.extra_features.get(column, "")
        rows.append(row)
    columns = ["flow_id", *LABEL_COLUMNS, *CORE_COLUMNS[1:], *extra_columns]
    pd.DataFrame(rows, columns=columns).to_csv(csv_file, index=False)
    return csv_file


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: ScenarioLabel


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[ManifestEntry, ...]
    testbed: Testbed = Testbed.EVSE_A

    def __post_init__(self):
        paths = [entry.path for entry in self.entries]
        duplicates = sorted({p for p in paths if paths.count(p) > 1})
        if duplicates:
            raise DataError(f"Manifest lists files more than once: {duplicates}")


def load_manifest(manifest_file: str) -> DatasetManifest:
    """
    Load a manifest: a JSON array of {"path", "class", "attack", "state"} or an
    object {"testbed", "entries": [...]}. Relative paths resolve against the
    manifest's directory.
    """
    if not os.path.exists(manifest_file):
        raise FileNotFoundError(f"Manifest file '{manifest_file}' not found.")
    with open(manifest_file, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"Manifest '{manifest_file}' is not valid JSON: {e}")

    testbed = Testbed.EVSE_A
    if isinstance(raw, dict):
        testbed = Testbed(raw.get("testbed", Testbed.EVSE_A.value))
        raw = raw.get("entries", [])
    if not isinstance(raw, list):
        raise DataError(f"Manifest '{manifest_file}' must hold a list of entries")

    base_dir = os.path.dirname(os.path.abspath(manifest_file))
    entries = []
    for i, item in enumerate(raw):
        try:
            path = item["path"]
            label = ScenarioLabel.parse(item["class"], item.get("attack", NO_ATTACK), item["state"])
        except (KeyError, TypeError) as e:
            raise DataError(f"Manifest entry {i} is incomplete: {e}")
        if not os.path.isabs(path):
            path = os.path.normpath(os.path.join(base_dir, path))
        entries.append(ManifestEntry(path=path, label=label))
    return DatasetManifest(entries=tuple(entries), testbed=testbed)


def _load_entry(entry: ManifestEntry) -> Tuple[pd.DataFrame, ManifestEntry]:
    return _read_table(entry.path), entry


def load_flows_report(
    manifest: DatasetManifest,
    workers: int = 1,
) -> Tuple[List[Tuple[FlowRecord, ScenarioLabel]], List[FileCounts]]:
    """
    Load every file of a manifest and attach the manifest's label to its rows.

    Args:
        manifest: Dataset manifest
        workers: Number of files read concurrently

    Returns:
        Tuple of (labeled flows in manifest order, per-file row counts)
    """
    for entry in manifest.entries:
        if not os.path.exists(entry.path):
            raise FileNotFoundError(f"Flow CSV file '{entry.path}' not found.")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        tables = list(pool.map(_load_entry, manifest.entries))

    header = None
    flows = []
    counts = []
    for df, entry in tables:
        if not df.empty:
            if header is None:
                header = list(df.columns)
            elif list(df.columns) != header:
                raise DataError(f"'{entry.path}' does not share the header row of the other manifest files")

    # column kinds are decided over every file so the written table reads back the same way
    numeric_extras = _numeric_extras([df for df, _ in tables])
    for df, entry in tables:
        records, rejected = _frame_to_flows(df, entry.path, numeric_extras)
        flows.extend((flow, entry.label) for flow, _ in records)
        counts.append(FileCounts(path=entry.path, accepted=len(records), rejected=rejected))
        logger.info("%s: %d flows loaded, %d rejected (%s)",
                    entry.path, len(records), rejected, entry.label.traffic_class.value)
    return flows, counts


def load_flows(manifest: DatasetManifest, workers: int = 1) -> List[Tuple[FlowRecord, ScenarioLabel]]:
    """Load the labeled flows of a manifest; see load_flows_report."""
    flows, _ = load_flows_report(manifest, workers)
    return flows


def drop_unusable_columns(flows: Sequence[FlowRecord], drop_list: Sequence[str]) -> List[FlowRecord]:
    """
    Remove the named columns from every flow's extra features.

    Core flow fields cannot be dropped. Names that match no column only warn.
    """
    names = [str(name).strip().lower() for name in drop_list]
    core = set(CORE_COLUMNS) | set(NFSTREAM_ALIASES) | _FLOW_FIELDS
    forbidden = [name for name in names if name in core]
    if forbidden:
        raise DataError(f"Core flow fields cannot be dropped: {forbidden}")
    if not names:
        return list(flows)

    present = {name for flow in flows for name in flow.extra_features}
    for name in names:
        if name not in present:
            logger.warning("Drop list column '%s' not found in the flow data", name)
    to_drop = set(names) & present
    if not to_drop:
        return list(flows)
    return [
        replace(flow, extra_features={k: v for k, v in flow.extra_features.items() if k not in to_drop})
        for flow in flows
    ]
