import json

import pytest
from hypothesis import HealthCheck, settings

from xflow.flow_model import Direction, FlowRecord, Label, Protocol
from xflow.isolate import GranularityMap, isolate
from xflow.standardize import NetProfileConfig, standardize_dataset
from xflow.synth import CommKind, CommTemplate, NetIdProfile, corpus_from_layout, generate_corpus

settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def flow(**kw) -> FlowRecord:
    base = dict(
        src_ip="10.0.0.5", dst_ip="8.8.8.8", src_port=50000, dst_port=443, timestamp=1000.0,
        duration=8.0, protocol=Protocol.TCP, in_bytes=1200, out_bytes=300, in_packets=4,
        out_packets=3, direction=Direction.OUT, label=Label.benign(),
    )
    base.update(kw)
    return FlowRecord(**base)


# Shapes used across tests. "exfil" is benign-like on every field the origin's
# attacks differ on, and large where they are small.
TEMPLATES = {
    "botnet": CommTemplate(CommKind.BOTNET_BEACON, "botnet"),
    "dos": CommTemplate(CommKind.DOS_FLOOD, "dos"),
    "portscan": CommTemplate(CommKind.SCAN_OTHER, "portscan"),
    "scan": CommTemplate(CommKind.SCAN_OTHER, "scan"),
    "exfil": CommTemplate(
        CommKind.SCAN_OTHER, "exfil",
        params=dict(src_side="internal", dst_side="external", dst_port="https",
                    out_bytes=(5e7, 0.2), in_bytes=(2e4, 0.3), pkt_size=1400.0, idle_s=(30.0, 0.2)),
    ),
}


def build_corpus(layout, benign, attack_count=100, seed=0, granularity=None, netids=None):
    specs = corpus_from_layout(layout, TEMPLATES, benign, attack_count, netids=netids)
    raw = generate_corpus(specs, seed)
    std = [standardize_dataset(r, NetProfileConfig(d)) for r, d in raw]
    return isolate(std, granularity or GranularityMap())


SPARSE_ORDER = GranularityMap(class_order=("botnet", "portscan", "dos"))


@pytest.fixture(scope="session")
def sparse_corpus():
    """D1 benign only; D2 botnet + portscan; D3 benign + botnet + DoS."""
    return build_corpus({1: [], 2: ["botnet", "portscan"], 3: ["botnet", "dos"]}, {1: 300, 3: 300},
                        attack_count=60, seed=11, granularity=SPARSE_ORDER)


@pytest.fixture(scope="session")
def two_net_corpus():
    """Origin 1 with botnet/dos; network 2 with dos and an exfiltration class unseen at 1."""
    return build_corpus({1: ["botnet", "dos"], 2: ["dos", "exfil"]}, {1: 1200, 2: 1200}, attack_count=150,
                        seed=5, netids={2: NetIdProfile(bandwidth_mbps=10, internal_subnets=("172.16.0.0/12",))})


def write_run_config(root, layout, benign, attack_count=60, seed=0, **extra):
    """Write a synthetic corpus under ``root`` plus a run config pointing at it."""
    from xflow.synth import write_corpus

    specs = corpus_from_layout(layout, TEMPLATES, benign, attack_count)
    write_corpus(root / "data", specs, seed)
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    config = {
        "datasets": [{"path": f"data/{d['path']}", "descriptor": d["descriptor"]} for d in manifest["datasets"]],
        "hyperparams": {"n_trees": 10},
        "repetitions": 2,
        "seed": 3,
        **extra,
    }
    if "contexts" not in config and "workflow" not in config:
        config["workflow"] = {"kind": "baseline"}
    path = root / "config.json"
    path.write_text(json.dumps(config))
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
