import json

import numpy as np
import pytest

from core.feature_pipeline import FeatureMatrix
from core.flow_ingest import FlowRecord, PacketRecord, ScenarioLabel, write_flow_table

BENIGN = ScenarioLabel.parse("Benign", "none", "Charging")
BENIGN_IDLE = ScenarioLabel.parse("Benign", "none", "Idle")
SYN_FLOOD = ScenarioLabel.parse("DoS", "syn-flood", "Charging")
PORT_SCAN = ScenarioLabel.parse("Recon", "tcp-port-scan", "Idle")


def make_flow(flow_id: str, rng: np.random.Generator, malicious: bool = False, **extra) -> FlowRecord:
    """A plausible OCPP-like flow; malicious ones are short SYN-heavy bursts."""
    start = float(rng.uniform(0, 1000))
    if malicious:
        packets_fwd, packets_bwd = int(rng.integers(200, 400)), int(rng.integers(0, 3))
        sizes_fwd = (60.0, 60.0, 60.0)
        syn = packets_fwd
        duration = float(rng.uniform(0.1, 0.5))
        dst_port = int(rng.integers(1, 1024))
    else:
        packets_fwd, packets_bwd = int(rng.integers(8, 20)), int(rng.integers(8, 20))
        low = float(rng.uniform(60, 80))
        sizes_fwd = (low, low + float(rng.uniform(50, 150)), low + float(rng.uniform(200, 400)))
        syn = 1
        duration = float(rng.uniform(20, 60))
        dst_port = 9000
    return FlowRecord(
        flow_id=flow_id,
        src_ip=f"192.168.1.{int(rng.integers(2, 40))}",
        src_port=int(rng.integers(30000, 60000)),
        dst_ip="10.0.0.5",
        dst_port=dst_port,
        protocol=6,
        start_time=start,
        end_time=start + duration,
        packets_fwd=packets_fwd,
        packets_bwd=packets_bwd,
        bytes_fwd=int(packets_fwd * sizes_fwd[1]),
        bytes_bwd=int(packets_bwd * 90),
        min_ps_fwd=sizes_fwd[0],
        mean_ps_fwd=sizes_fwd[1],
        max_ps_fwd=sizes_fwd[2],
        min_ps_bwd=60.0 if packets_bwd else 0.0,
        mean_ps_bwd=90.0 if packets_bwd else 0.0,
        max_ps_bwd=120.0 if packets_bwd else 0.0,
        syn_count=syn,
        ack_count=0 if malicious else packets_fwd + packets_bwd - 1,
        psh_count=0 if malicious else packets_fwd // 2,
        fin_count=0 if malicious else 2,
        extra_features=dict(extra),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def labeled_flows(rng):
    """40 benign and 10 SYN-flood flows with their labels."""
    flows = [(make_flow(f"benign-{i}", rng), BENIGN) for i in range(40)]
    flows += [(make_flow(f"dos-{i}", rng, malicious=True), SYN_FLOOD) for i in range(10)]
    return flows


@pytest.fixture
def dataset_dir(tmp_path, rng):
    """Two raw flow CSVs and a manifest labeling them benign and DoS."""
    benign = [(make_flow(f"x{i}", rng), None) for i in range(40)]
    dos = [(make_flow(f"y{i}", rng, malicious=True), None) for i in range(12)]
    write_flow_table(str(tmp_path / "benign_charging.csv"), benign)
    write_flow_table(str(tmp_path / "syn_flood.csv"), dos)
    manifest = {
        "testbed": "EVSE_A",
        "entries": [
            {"path": "benign_charging.csv", "class": "Benign", "attack": "none", "state": "Charging"},
            {"path": "syn_flood.csv", "class": "DoS", "attack": "SYN Flood", "state": "Charging"},
        ],
    }
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    return tmp_path


@pytest.fixture
def packet_session():
    """A TCP session in both directions plus a UDP exchange, in capture order."""
    client, server = "192.168.1.10", "10.0.0.5"
    return [
        PacketRecord(0.0, client, server, 40000, 9000, 6, 74, 0x02),
        PacketRecord(0.1, server, client, 9000, 40000, 6, 74, 0x12),
        PacketRecord(0.2, client, server, 40000, 9000, 6, 66, 0x10),
        PacketRecord(1.0, client, server, 40000, 9000, 6, 300, 0x18),
        PacketRecord(1.5, server, client, 9000, 40000, 6, 120, 0x18),
        PacketRecord(2.0, client, server, 40000, 9000, 6, 66, 0x11),
        PacketRecord(0.5, client, "10.0.0.53", 5353, 53, 17, 80),
        PacketRecord(0.6, "10.0.0.53", client, 53, 5353, 17, 160),
    ]


def factor_data(n: int, d: int, rank: int, seed: int, noise: float = 0.05) -> np.ndarray:
    """Rows of `rank` Gaussian factors linearly mixed into `d` features, plus noise."""
    rng = np.random.default_rng(seed)
    scales = np.linspace(3.0, 1.5, rank)
    factors = rng.normal(size=(n, rank)) * scales
    mixing = rng.normal(size=(rank, d))
    return factors @ mixing + noise * rng.normal(size=(n, d))


def benign_matrix(rows: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix(
        rows=rows,
        feature_names=tuple(f"f{j}" for j in range(rows.shape[1])),
        labels=tuple(BENIGN for _ in range(rows.shape[0])),
        flow_ids=tuple(f"b{i}" for i in range(rows.shape[0])),
    )
