"""Flow records, labels, dataset descriptors and the common 12-feature schema."""

from __future__ import annotations

import ipaddress
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Optional, Sequence

import numpy as np


class Protocol(str, Enum):
    TCP = "TCP"
    UDP = "UDP"
    ICMP = "ICMP"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, value: str) -> "Protocol":
        v = str(value).strip().upper()
        if v in ("6",):
            return cls.TCP
        if v in ("17",):
            return cls.UDP
        if v in ("1", "58", "ICMPV6"):
            return cls.ICMP
        try:
            return cls(v)
        except ValueError:
            return cls.OTHER


class Direction(str, Enum):
    IN = "in"
    OUT = "out"
    BIDIRECTIONAL = "bidirectional"


class LabelKind(str, Enum):
    BENIGN = "Benign"
    MALICIOUS = "Malicious"


class Family(str, Enum):
    BOTNET = "Botnet"
    DOS = "DoS"
    OTHER = "Other"

    @classmethod
    def parse(cls, value: str) -> "Family":
        lowered = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == lowered:
                return member
        raise ValueError(f"unknown attack family {value!r}")


class PortCategory(IntEnum):
    WELL_KNOWN = 0
    REGISTERED = 1
    DYNAMIC = 2


class DurationUnit(str, Enum):
    SECONDS = "seconds"
    MILLISECONDS = "milliseconds"


@dataclass(frozen=True)
class Label:
    kind: LabelKind
    attack_class: Optional[str] = None
    family: Optional[Family] = None

    def __post_init__(self):
        if self.kind is LabelKind.BENIGN:
            if self.attack_class is not None or self.family is not None:
                raise ValueError("benign labels carry no attack class or family")
        else:
            if not self.attack_class:
                raise ValueError("malicious labels need exactly one attack class")
            if self.family is None:
                raise ValueError("malicious labels need a family")

    @property
    def is_malicious(self) -> bool:
        return self.kind is LabelKind.MALICIOUS

    @classmethod
    def benign(cls) -> "Label":
        return cls(LabelKind.BENIGN)

    @classmethod
    def malicious(cls, attack_class: str, family: Family | str = Family.OTHER) -> "Label":
        if not isinstance(family, Family):
            family = Family.parse(family)
        return cls(LabelKind.MALICIOUS, attack_class, family)


@dataclass(frozen=True)
class FlowRecord:
    """One raw flow as ingested. Fields are optional so that incomplete
    rows can be represented and then rejected by :func:`validate_record`."""

    src_ip: Optional[str]
    dst_ip: Optional[str]
    src_port: Optional[int]
    dst_port: Optional[int]
    timestamp: Optional[float]
    duration: Optional[float]
    protocol: Optional[Protocol]
    in_bytes: Optional[int]
    out_bytes: Optional[int]
    in_packets: Optional[int]
    out_packets: Optional[int]
    direction: Optional[Direction]
    label: Optional[Label]
    # duration before a threshold policy clamped it (seconds)
    original_duration: Optional[float] = None


REQUIRED_FIELDS = (
    "src_ip", "dst_ip", "src_port", "dst_port", "timestamp", "duration", "protocol",
    "in_bytes", "out_bytes", "in_packets", "out_packets", "direction", "label",
)


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def _is_number(value) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool)


def validate_record(r: FlowRecord) -> ValidationResult:
    violations = []
    for name in REQUIRED_FIELDS:
        value = getattr(r, name)
        if value is None or (isinstance(value, float) and math.isnan(value)):
            violations.append(f"missing field: {name}")
    if violations:
        return ValidationResult(tuple(violations))

    for name in ("src_ip", "dst_ip"):
        try:
            ipaddress.ip_address(getattr(r, name))
        except ValueError:
            violations.append(f"malformed address: {name}")
    for name in ("src_port", "dst_port"):
        port = getattr(r, name)
        if not _is_number(port) or int(port) != port or not 0 <= port <= 65535:
            violations.append(f"port out of range: {name}={port}")
    if not _is_number(r.duration) or not math.isfinite(r.duration) or r.duration < 0:
        violations.append(f"negative or non-finite duration: {r.duration}")
    if not _is_number(r.timestamp) or not math.isfinite(r.timestamp):
        violations.append("non-finite timestamp")
    for name in ("in_bytes", "out_bytes", "in_packets", "out_packets"):
        count = getattr(r, name)
        if not _is_number(count) or int(count) != count or count < 0:
            violations.append(f"negative or non-integer count: {name}={count}")
    if not isinstance(r.protocol, Protocol):
        violations.append("unknown protocol")
    if not isinstance(r.direction, Direction):
        violations.append("unknown direction")
    if not isinstance(r.label, Label):
        violations.append("malformed label")
    return ValidationResult(tuple(violations))


@dataclass(frozen=True)
class DatasetDescriptor:
    network_id: int
    name: str
    internal_subnets: tuple[str, ...] = ()
    duration_unit: DurationUnit = DurationUnit.SECONDS
    d_max: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "internal_subnets", tuple(self.internal_subnets))
        object.__setattr__(self, "duration_unit", DurationUnit(self.duration_unit))
        if self.network_id < 1:
            raise ValueError("network_id must be >= 1")
        if self.d_max is not None and self.d_max <= 0:
            raise ValueError("d_max must be positive")

    def to_dict(self) -> dict:
        return {
            "network_id": self.network_id,
            "name": self.name,
            "internal_subnets": list(self.internal_subnets),
            "duration_unit": self.duration_unit.value,
            "d_max": self.d_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetDescriptor":
        return cls(
            network_id=int(d["network_id"]),
            name=d.get("name", f"net{d['network_id']}"),
            internal_subnets=tuple(d.get("internal_subnets", ())),
            duration_unit=DurationUnit(d.get("duration_unit", "seconds")),
            d_max=d.get("d_max"),
        )


# --- common feature schema -------------------------------------------------


class FeatureType(str, Enum):
    BOOL = "Bool"
    CAT = "Cat"
    NUM = "Num"


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    type: FeatureType
    column: str


_SCHEMA: tuple[FeatureDescriptor, ...] = (
    FeatureDescriptor("Source IP address internal", FeatureType.BOOL, "src_internal"),
    FeatureDescriptor("Destination IP address internal", FeatureType.BOOL, "dst_internal"),
    FeatureDescriptor("Source port type", FeatureType.CAT, "src_port_cat"),
    FeatureDescriptor("Destination port type", FeatureType.CAT, "dst_port_cat"),
    FeatureDescriptor("Flow Duration [s]", FeatureType.NUM, "duration_s"),
    FeatureDescriptor("Flow Direction", FeatureType.BOOL, "direction"),
    FeatureDescriptor("Incoming Bytes", FeatureType.NUM, "in_bytes"),
    FeatureDescriptor("Outgoing Bytes", FeatureType.NUM, "out_bytes"),
    FeatureDescriptor("Total Bytes", FeatureType.NUM, "tot_bytes"),
    FeatureDescriptor("Incoming Packets", FeatureType.NUM, "in_packets"),
    FeatureDescriptor("Outgoing Packets", FeatureType.NUM, "out_packets"),
    FeatureDescriptor("Total Packets", FeatureType.NUM, "tot_packets"),
)

FEATURE_COLUMNS: tuple[str, ...] = tuple(d.column for d in _SCHEMA)
N_FEATURES = len(_SCHEMA)


def feature_schema() -> tuple[FeatureDescriptor, ...]:
    """The ordered, immutable list of the 12 predictive features."""
    return _SCHEMA


@dataclass(frozen=True)
class StandardSample:
    src_internal: bool
    dst_internal: bool
    src_port_cat: PortCategory
    dst_port_cat: PortCategory
    duration_s: float
    direction: bool
    in_bytes: int
    out_bytes: int
    tot_bytes: int
    in_packets: int
    out_packets: int
    tot_packets: int
    label: Label
    origin_network: int
    sample_id: int = -1
    # pre-clamp duration when a threshold policy shortened the flow
    original_duration: Optional[float] = None

    def __post_init__(self):
        if self.tot_bytes != self.in_bytes + self.out_bytes:
            raise ValueError("tot_bytes must equal in_bytes + out_bytes")
        if self.tot_packets != self.in_packets + self.out_packets:
            raise ValueError("tot_packets must equal in_packets + out_packets")

    def features(self) -> tuple[float, ...]:
        return (
            float(self.src_internal), float(self.dst_internal),
            float(int(self.src_port_cat)), float(int(self.dst_port_cat)),
            float(self.duration_s), float(self.direction),
            float(self.in_bytes), float(self.out_bytes), float(self.tot_bytes),
            float(self.in_packets), float(self.out_packets), float(self.tot_packets),
        )

    def to_row(self) -> dict[str, str]:
        row = {
            "src_internal": str(int(self.src_internal)),
            "dst_internal": str(int(self.dst_internal)),
            "src_port_cat": str(int(self.src_port_cat)),
            "dst_port_cat": str(int(self.dst_port_cat)),
            "duration_s": repr(float(self.duration_s)),
            "direction": str(int(self.direction)),
        }
        for name in ("in_bytes", "out_bytes", "tot_bytes", "in_packets", "out_packets", "tot_packets"):
            row[name] = str(int(getattr(self, name)))
        row["label"] = "malicious" if self.label.is_malicious else "benign"
        row["attack_class"] = self.label.attack_class or ""
        row["family"] = self.label.family.value if self.label.family else ""
        row["origin_network"] = str(self.origin_network)
        row["sample_id"] = str(self.sample_id)
        row["original_duration"] = "" if self.original_duration is None else repr(float(self.original_duration))
        return row

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "StandardSample":
        if row["label"].strip().lower() == "malicious":
            label = Label.malicious(row["attack_class"], row.get("family") or Family.OTHER)
        else:
            label = Label.benign()
        orig = row.get("original_duration") or ""
        return cls(
            src_internal=bool(int(row["src_internal"])),
            dst_internal=bool(int(row["dst_internal"])),
            src_port_cat=PortCategory(int(row["src_port_cat"])),
            dst_port_cat=PortCategory(int(row["dst_port_cat"])),
            duration_s=float(row["duration_s"]),
            direction=bool(int(row["direction"])),
            in_bytes=int(row["in_bytes"]),
            out_bytes=int(row["out_bytes"]),
            tot_bytes=int(row["tot_bytes"]),
            in_packets=int(row["in_packets"]),
            out_packets=int(row["out_packets"]),
            tot_packets=int(row["tot_packets"]),
            label=label,
            origin_network=int(row["origin_network"]),
            sample_id=int(row.get("sample_id", -1) or -1),
            original_duration=float(orig) if orig else None,
        )


STANDARD_CSV_COLUMNS = FEATURE_COLUMNS + (
    "label", "attack_class", "family", "origin_network", "sample_id", "original_duration",
)


@dataclass(frozen=True)
class SampleTable:
    """Column-oriented view of a collection of standardized samples.

    ``X`` has one row per sample in schema order; ``ids`` are corpus-unique.
    """

    X: np.ndarray
    ids: np.ndarray
    malicious: np.ndarray
    attack_class: np.ndarray
    origin: np.ndarray
    family_of: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def empty(cls) -> "SampleTable":
        return cls(
            X=np.zeros((0, N_FEATURES)),
            ids=np.zeros(0, dtype=np.int64),
            malicious=np.zeros(0, dtype=bool),
            attack_class=np.zeros(0, dtype=object),
            origin=np.zeros(0, dtype=np.int64),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[StandardSample]) -> "SampleTable":
        if not samples:
            return cls.empty()
        family_of = {}
        for s in samples:
            if s.label.is_malicious:
                family_of.setdefault(s.label.attack_class, s.label.family)
        return cls(
            X=np.array([s.features() for s in samples], dtype=np.float64),
            ids=np.array([s.sample_id for s in samples], dtype=np.int64),
            malicious=np.array([s.label.is_malicious for s in samples], dtype=bool),
            attack_class=np.array([s.label.attack_class or "" for s in samples], dtype=object),
            origin=np.array([s.origin_network for s in samples], dtype=np.int64),
            family_of=family_of,
        )

    def take(self, index) -> "SampleTable":
        index = np.asarray(index)
        return SampleTable(
            self.X[index], self.ids[index], self.malicious[index],
            self.attack_class[index], self.origin[index], self.family_of,
        )

    def relabel(self, attack_class: np.ndarray, family_of: dict) -> "SampleTable":
        return SampleTable(self.X, self.ids, self.malicious, attack_class, self.origin, family_of)

    @staticmethod
    def concat(tables: Iterable["SampleTable"]) -> "SampleTable":
        tables = [t for t in tables if len(t)]
        if not tables:
            return SampleTable.empty()
        family_of = {}
        for t in tables:
            family_of.update(t.family_of)
        return SampleTable(
            X=np.concatenate([t.X for t in tables]),
            ids=np.concatenate([t.ids for t in tables]),
            malicious=np.concatenate([t.malicious for t in tables]),
            attack_class=np.concatenate([t.attack_class for t in tables]),
            origin=np.concatenate([t.origin for t in tables]),
            family_of=family_of,
        )
