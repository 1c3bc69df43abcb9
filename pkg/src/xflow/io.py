"""CSV readers/writers for raw flows and standardized samples."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .flow_model import (
    STANDARD_CSV_COLUMNS,
    Direction,
    Family,
    FlowRecord,
    Label,
    Protocol,
    StandardSample,
)

INGEST_COLUMNS = (
    "src_ip", "dst_ip", "src_port", "dst_port", "timestamp", "duration", "protocol",
    "in_bytes", "out_bytes", "in_packets", "out_packets", "direction", "label", "attack_class",
)


def _int(value: str) -> Optional[int]:
    try:
        f = float(value)
    except (TypeError, ValueError):
        return None
    return int(f) if f.is_integer() else None


def _float(value: str) -> Optional[float]:
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def _label(row: Mapping[str, str], families: Mapping[str, str]) -> Optional[Label]:
    kind = (row.get("label") or "").strip().lower()
    if kind == "benign":
        return Label.benign()
    if kind == "malicious":
        cls = (row.get("attack_class") or "").strip()
        if not cls:
            return None
        family = (row.get("family") or "").strip() or families.get(cls, Family.OTHER.value)
        try:
            return Label.malicious(cls, family)
        except ValueError:
            return None
    return None


def parse_flow_row(row: Mapping[str, str], families: Mapping[str, str] = {}) -> FlowRecord:
    """Parse one ingestion row; unparseable fields become ``None``."""

    def text(name):
        value = row.get(name)
        return value.strip() if value and value.strip() else None

    direction = text("direction")
    try:
        direction = Direction(direction.lower()) if direction else None
    except ValueError:
        direction = None
    protocol = text("protocol")
    return FlowRecord(
        src_ip=text("src_ip"),
        dst_ip=text("dst_ip"),
        src_port=_int(text("src_port")),
        dst_port=_int(text("dst_port")),
        timestamp=_float(text("timestamp")),
        duration=_float(text("duration")),
        protocol=Protocol.parse(protocol) if protocol else None,
        in_bytes=_int(text("in_bytes")),
        out_bytes=_int(text("out_bytes")),
        in_packets=_int(text("in_packets")),
        out_packets=_int(text("out_packets")),
        direction=direction,
        label=_label(row, families),
    )


def read_flows(path, families: Mapping[str, str] = {}) -> list[FlowRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in INGEST_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return [parse_flow_row(row, families) for row in reader]


def flow_to_row(r: FlowRecord) -> dict[str, str]:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    label = r.label
    return {
        "src_ip": fmt(r.src_ip),
        "dst_ip": fmt(r.dst_ip),
        "src_port": fmt(r.src_port),
        "dst_port": fmt(r.dst_port),
        "timestamp": fmt(r.timestamp),
        "duration": fmt(r.duration),
        "protocol": r.protocol.value if r.protocol else "",
        "in_bytes": fmt(r.in_bytes),
        "out_bytes": fmt(r.out_bytes),
        "in_packets": fmt(r.in_packets),
        "out_packets": fmt(r.out_packets),
        "direction": r.direction.value if r.direction else "",
        "label": "" if label is None else ("malicious" if label.is_malicious else "benign"),
        "attack_class": (label.attack_class or "") if label else "",
        "family": (label.family.value if label and label.family else ""),
    }


def write_flows(path, records: Iterable[FlowRecord]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=INGEST_COLUMNS + ("family",), lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(flow_to_row(r))


def write_standard_samples(path, samples: Sequence[StandardSample]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=STANDARD_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for s in samples:
            writer.writerow(s.to_row())


def read_standard_samples(path) -> list[StandardSample]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [StandardSample.from_row(row) for row in csv.DictReader(fh)]
