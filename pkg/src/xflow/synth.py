"""Synthetic flow corpora with known ground truth.

A flow is produced in two steps. A communication (endpoints, payload, packet
counts, idle time) is drawn from a :class:`CommTemplate`; the environment then
turns it into records: the network's bandwidth sets the transfer time, its
subnets and port map pick addresses and ports, and the exporter configuration
fixes the duration unit, the direction convention and the maximum record
duration (longer transfers are emitted as several records).

Labels come from the template alone, so changing a network or exporter profile
never changes ground truth.
"""

from __future__ import annotations

import dataclasses
import ipaddress
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .flow_model import DatasetDescriptor, Direction, DurationUnit, Family, FlowRecord, Label, Protocol
from .io import write_flows
from .standardize import ConfigError, split_flow

MANIFEST_VERSION = 1

DEFAULT_PORTS = {"http": 80, "https": 443, "dns": 53, "ssh": 22, "smb": 445}
# RFC 2544 benchmarking range, never inside a generated internal subnet
EXTERNAL_NET = ipaddress.ip_network("198.18.0.0/15")
BEACON_JITTER = 0.1


class CommKind(str, Enum):
    BENIGN_WEB = "BenignWeb"
    BENIGN_TRANSFER = "BenignTransfer"
    DOS_FLOOD = "DoSFlood"
    BOTNET_BEACON = "BotnetBeacon"
    SCAN_OTHER = "ScanOther"

    @property
    def is_attack(self) -> bool:
        return self not in (CommKind.BENIGN_WEB, CommKind.BENIGN_TRANSFER)


class DirectionConvention(str, Enum):
    ENDPOINT = "endpoint"  # out when the source is internal, else in
    BIDIRECTIONAL = "bidirectional"


@dataclass(frozen=True)
class NetIdProfile:
    bandwidth_mbps: float = 100.0
    internal_subnets: tuple[str, ...] = ("10.0.0.0/16",)
    service_port_map: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_PORTS))
    benign_rate: float = 3600.0  # flows per simulated hour

    def __post_init__(self):
        if not self.bandwidth_mbps > 0:
            raise ConfigError("bandwidth must be positive")
        object.__setattr__(self, "bandwidth_mbps", float(self.bandwidth_mbps))
        if not self.benign_rate > 0:
            raise ConfigError("benign_rate must be positive")
        subnets = tuple(self.internal_subnets)
        if not subnets:
            raise ConfigError("at least one internal subnet is required")
        for s in subnets:
            try:
                net = ipaddress.ip_network(s, strict=False)
            except ValueError as exc:
                raise ConfigError(f"malformed CIDR {s!r}: {exc}") from None
            if net.overlaps(EXTERNAL_NET):
                raise ConfigError(f"internal subnet {s} overlaps the synthetic external range {EXTERNAL_NET}")
        object.__setattr__(self, "internal_subnets", subnets)
        ports = {**DEFAULT_PORTS, **dict(self.service_port_map)}
        for name, p in ports.items():
            if not 0 <= int(p) <= 65535:
                raise ConfigError(f"service port {name}={p} outside [0, 65535]")
        object.__setattr__(self, "service_port_map", ports)

    def to_dict(self) -> dict:
        return {
            "bandwidth_mbps": self.bandwidth_mbps,
            "internal_subnets": list(self.internal_subnets),
            "service_port_map": dict(sorted(self.service_port_map.items())),
            "benign_rate": self.benign_rate,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetIdProfile":
        return cls(
            bandwidth_mbps=float(d.get("bandwidth_mbps", 100.0)),
            internal_subnets=tuple(d.get("internal_subnets", ("10.0.0.0/16",))),
            service_port_map=dict(d.get("service_port_map", {})),
            benign_rate=float(d.get("benign_rate", 3600.0)),
        )


@dataclass(frozen=True)
class ConfProfile:
    d_max: float = 120.0
    duration_unit: DurationUnit = DurationUnit.SECONDS
    direction_convention: DirectionConvention = DirectionConvention.ENDPOINT

    def __post_init__(self):
        if not self.d_max > 0:
            raise ConfigError("d_max must be positive")
        object.__setattr__(self, "d_max", float(self.d_max))
        object.__setattr__(self, "duration_unit", DurationUnit(self.duration_unit))
        object.__setattr__(self, "direction_convention", DirectionConvention(self.direction_convention))

    def to_dict(self) -> dict:
        return {
            "d_max": self.d_max,
            "duration_unit": self.duration_unit.value,
            "direction_convention": self.direction_convention.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConfProfile":
        return cls(
            d_max=float(d.get("d_max", 120.0)),
            duration_unit=d.get("duration_unit", "seconds"),
            direction_convention=d.get("direction_convention", "endpoint"),
        )


# Per-kind communication shape. Sizes are (median, log-sigma) of a log-normal;
# a zero median means the side never sends anything. Ports are a service name
# from the port map, an IANA category name or a literal port number.
_SHAPES: dict[CommKind, dict] = {
    CommKind.BENIGN_WEB: dict(
        protocol="TCP", src_side="internal", dst_side="external", src_port="dynamic", dst_port="https",
        out_bytes=(800.0, 0.6), in_bytes=(30000.0, 1.0), pkt_size=1000.0, idle_s=(1.5, 0.8),
        interarrival_s=None, period_s=None,
    ),
    CommKind.BENIGN_TRANSFER: dict(
        protocol="TCP", src_side="internal", dst_side="external", src_port="dynamic", dst_port="ssh",
        out_bytes=(2e6, 1.0), in_bytes=(5e4, 0.5), pkt_size=1400.0, idle_s=(0.5, 0.5),
        interarrival_s=None, period_s=None,
    ),
    CommKind.DOS_FLOOD: dict(
        protocol="TCP", src_side="external", dst_side="internal", src_port="dynamic", dst_port="http",
        out_bytes=(60.0, 0.1), in_bytes=(0.0, 0.0), pkt_size=60.0, idle_s=(0.0, 0.0),
        interarrival_s=0.01, period_s=None,
    ),
    CommKind.BOTNET_BEACON: dict(
        protocol="TCP", src_side="internal", dst_side="external", src_port="dynamic", dst_port="registered",
        out_bytes=(300.0, 0.1), in_bytes=(500.0, 0.1), pkt_size=300.0, idle_s=(0.05, 0.2),
        interarrival_s=None, period_s=60.0,
    ),
    CommKind.SCAN_OTHER: dict(
        protocol="TCP", src_side="external", dst_side="internal", src_port="dynamic", dst_port="registered",
        out_bytes=(44.0, 0.05), in_bytes=(40.0, 0.05), pkt_size=44.0, idle_s=(0.0, 0.0),
        interarrival_s=0.1, period_s=None,
    ),
}
_CATEGORICAL = ("protocol", "src_side", "dst_side", "src_port", "dst_port")
_SIZES = ("out_bytes", "in_bytes", "idle_s")


@dataclass(frozen=True)
class CommTemplate:
    """What a communication looks like, independent of where it is observed.

    ``detectability`` in [0, 1] moves an attack's shape away from benign web
    traffic: at 0 the attack is drawn from the benign distribution, at 1 from
    its own. Sizes interpolate geometrically; each categorical field takes the
    attack value with probability ``detectability``. ``params`` overrides
    individual shape entries and ``payload_bytes`` fixes the outbound payload
    (no response, no idle time).
    """

    kind: CommKind
    attack_class: Optional[str] = None
    family: Optional[Family] = None
    detectability: float = 1.0
    params: Mapping[str, object] = field(default_factory=dict)
    payload_bytes: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CommKind(self.kind))
        if self.family is not None and not isinstance(self.family, Family):
            object.__setattr__(self, "family", Family.parse(self.family))
        if self.kind.is_attack:
            if not self.attack_class:
                raise ConfigError(f"{self.kind.value} templates need an attack class")
            if self.family is None:
                default = {CommKind.DOS_FLOOD: Family.DOS, CommKind.BOTNET_BEACON: Family.BOTNET}
                object.__setattr__(self, "family", default.get(self.kind, Family.OTHER))
        elif self.attack_class is not None or self.family is not None:
            raise ConfigError("benign templates carry no attack class or family")
        if not 0.0 <= self.detectability <= 1.0:
            raise ConfigError("detectability must lie in [0, 1]")
        unknown = set(self.params) - set(_SHAPES[CommKind.BENIGN_WEB])
        if unknown:
            raise ConfigError(f"unknown template parameters: {sorted(unknown)}")
        # JSON gives lists where shapes hold (median, sigma) tuples
        object.__setattr__(self, "params", {k: tuple(v) if isinstance(v, list) else v
                                            for k, v in self.params.items()})
        if self.payload_bytes is not None and self.payload_bytes < 0:
            raise ConfigError("payload_bytes must be >= 0")

    @property
    def label(self) -> Label:
        if self.kind.is_attack:
            return Label.malicious(self.attack_class, self.family)
        return Label.benign()

    def shape(self) -> dict:
        s = dict(_SHAPES[self.kind])
        s.update(self.params)
        return s

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "detectability": self.detectability}
        if self.attack_class is not None:
            d["attack_class"] = self.attack_class
            d["family"] = self.family.value
        if self.params:
            d["params"] = {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.params.items())}
        if self.payload_bytes is not None:
            d["payload_bytes"] = self.payload_bytes
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CommTemplate":
        return cls(
            kind=d["kind"],
            attack_class=d.get("attack_class"),
            family=d.get("family"),
            detectability=float(d.get("detectability", 1.0)),
            params=dict(d.get("params", {})),
            payload_bytes=d.get("payload_bytes"),
        )


def transfer_seconds(n_bytes: float, bandwidth_mbps: float) -> float:
    """Time to push ``n_bytes`` through a ``bandwidth_mbps`` link."""
    return n_bytes * 8 / (bandwidth_mbps * 1e6)


# --- communication draws (environment-free) --------------------------------------


@dataclass(frozen=True)
class Comm:
    protocol: str
    src_side: str
    dst_side: str
    src_port: str
    dst_port: str
    out_bytes: int
    in_bytes: int
    out_packets: int
    in_packets: int
    idle_s: float
    start: float
    label: Label


def _lognormal(rng, median: float, sigma: float) -> float:
    if median <= 0:
        return 0.0
    return float(median * math.exp(sigma * rng.standard_normal())) if sigma > 0 else float(median)


def _packets(n_bytes: int, pkt_size: float) -> int:
    return max(1, math.ceil(n_bytes / max(pkt_size, 1.0))) if n_bytes > 0 else 0


def _draw_comms(t: CommTemplate, count: int, rng: np.random.Generator, benign_interarrival: float) -> list[Comm]:
    attack = t.shape()
    base = _SHAPES[CommKind.BENIGN_WEB]
    d = t.detectability if t.kind.is_attack else 1.0

    def blended(key):
        (am, asg), (bm, bsg) = attack[key], base[key]
        if am <= 0 or bm <= 0:
            # presence is categorical
            return (am, asg) if rng.random() < d else (bm, bsg)
        return math.exp(math.log(bm) + d * (math.log(am) - math.log(bm))), bsg + d * (asg - bsg)

    pkt_size = math.exp(math.log(base["pkt_size"]) + d * (math.log(attack["pkt_size"]) - math.log(base["pkt_size"])))
    period = attack["period_s"]
    mean_gap = attack["interarrival_s"] or benign_interarrival

    out = []
    clock = float(rng.uniform(0, mean_gap if period is None else period))
    for _ in range(count):
        cats = {k: attack[k] if (d >= 1.0 or rng.random() < d) else base[k] for k in _CATEGORICAL}
        if t.payload_bytes is not None:
            ob, ib, idle = int(t.payload_bytes), 0, 0.0
        else:
            ob = int(round(_lognormal(rng, *blended("out_bytes"))))
            ib = int(round(_lognormal(rng, *blended("in_bytes"))))
            idle = _lognormal(rng, *blended("idle_s"))
        out.append(Comm(
            out_bytes=ob, in_bytes=ib, out_packets=_packets(ob, pkt_size), in_packets=_packets(ib, pkt_size),
            idle_s=idle, start=clock, label=t.label, **cats,
        ))
        if period is not None:
            clock += period * (1 + BEACON_JITTER * rng.uniform(-1, 1))
        else:
            clock += float(rng.exponential(mean_gap))
    return out


# --- environment ------------------------------------------------------------------


def _host(rng, net) -> str:
    n_hosts = net.num_addresses - 2 if net.num_addresses > 2 else net.num_addresses
    offset = 1 + int(rng.integers(0, max(n_hosts, 1))) if net.num_addresses > 2 else 0
    return str(net.network_address + offset)


def _port(rng, spec, port_map) -> int:
    if isinstance(spec, (int, np.integer)) or str(spec).isdigit():
        return int(spec)
    if spec in port_map:
        return int(port_map[spec])
    ranges = {"well_known": (1, 1023), "registered": (1024, 49151), "dynamic": (49152, 65535)}
    if spec not in ranges:
        raise ConfigError(f"unknown port spec {spec!r}")
    lo, hi = ranges[spec]
    return int(rng.integers(lo, hi + 1))


def _realize(c: Comm, netid: NetIdProfile, conf: ConfProfile, rng, internal) -> list[FlowRecord]:
    src = _host(rng, internal[int(rng.integers(len(internal)))] if c.src_side == "internal" else EXTERNAL_NET)
    dst = _host(rng, internal[int(rng.integers(len(internal)))] if c.dst_side == "internal" else EXTERNAL_NET)
    if conf.direction_convention is DirectionConvention.BIDIRECTIONAL:
        direction = Direction.BIDIRECTIONAL
    else:
        direction = Direction.OUT if c.src_side == "internal" else Direction.IN
    duration = c.idle_s + transfer_seconds(c.out_bytes + c.in_bytes, netid.bandwidth_mbps)
    record = FlowRecord(
        src_ip=src, dst_ip=dst,
        src_port=_port(rng, c.src_port, netid.service_port_map),
        dst_port=_port(rng, c.dst_port, netid.service_port_map),
        timestamp=c.start, duration=duration, protocol=Protocol(c.protocol),
        # counters are seen from the internal side: "in" is what reaches the network
        in_bytes=c.in_bytes if c.src_side == "internal" else c.out_bytes,
        out_bytes=c.out_bytes if c.src_side == "internal" else c.in_bytes,
        in_packets=c.in_packets if c.src_side == "internal" else c.out_packets,
        out_packets=c.out_packets if c.src_side == "internal" else c.in_packets,
        direction=direction, label=c.label,
    )
    chunks = split_flow(record, conf.d_max) if duration > conf.d_max else [record]
    if conf.duration_unit is DurationUnit.MILLISECONDS:
        chunks = [dataclasses.replace(r, duration=r.duration * 1000) for r in chunks]
    return chunks


def generate_network(
    netid: NetIdProfile,
    conf: ConfProfile,
    templates: Sequence[tuple[CommTemplate, int]],
    seed: int,
    network_id: int = 1,
    name: Optional[str] = None,
) -> tuple[list[FlowRecord], DatasetDescriptor]:
    """Records for one network, sorted by timestamp, plus its descriptor.

    Template ``i`` draws from its own stream ``(seed, network_id, i, 0)`` and
    is placed in the environment with stream ``(seed, network_id, i, 1)``.
    """
    internal = [ipaddress.ip_network(s, strict=False) for s in netid.internal_subnets]
    benign_gap = 3600.0 / netid.benign_rate
    records = []
    for i, (t, count) in enumerate(templates):
        if count <= 0:
            raise ConfigError(f"template {i} ({t.kind.value}) needs a positive count")
        comms = _draw_comms(t, count, np.random.default_rng([seed, network_id, i, 0]), benign_gap)
        env_rng = np.random.default_rng([seed, network_id, i, 1])
        for c in comms:
            records.extend(_realize(c, netid, conf, env_rng, internal))
    records.sort(key=lambda r: r.timestamp)
    desc = DatasetDescriptor(
        network_id=network_id,
        name=name or f"net{network_id}",
        internal_subnets=netid.internal_subnets,
        duration_unit=conf.duration_unit,
        d_max=conf.d_max,
    )
    return records, desc


# --- corpora ----------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkSpec:
    network_id: int
    templates: tuple[tuple[CommTemplate, int], ...]
    netid: NetIdProfile = field(default_factory=NetIdProfile)
    conf: ConfProfile = field(default_factory=ConfProfile)
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple((t, int(n)) for t, n in self.templates))

    @property
    def has_benign(self) -> bool:
        return any(not t.kind.is_attack for t, _ in self.templates)

    @property
    def attack_classes(self) -> list[str]:
        return sorted({t.attack_class for t, _ in self.templates if t.kind.is_attack})

    def to_dict(self) -> dict:
        return {
            "network_id": self.network_id,
            "name": self.name or f"net{self.network_id}",
            "netid": self.netid.to_dict(),
            "conf": self.conf.to_dict(),
            "templates": [{"template": t.to_dict(), "count": n} for t, n in self.templates],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(
            network_id=int(d["network_id"]),
            name=d.get("name"),
            netid=NetIdProfile.from_dict(d.get("netid", {})),
            conf=ConfProfile.from_dict(d.get("conf", {})),
            templates=tuple((CommTemplate.from_dict(e["template"]), int(e["count"])) for e in d["templates"]),
        )


def check_layout(specs: Sequence[NetworkSpec]) -> None:
    if len(specs) < 2:
        raise ConfigError("a corpus needs at least 2 networks")
    ids = [s.network_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate network ids in {ids}")
    if not any(s.has_benign for s in specs):
        raise ConfigError("no network carries benign traffic")
    if not any(s.attack_classes for s in specs):
        raise ConfigError("no network carries malicious traffic")
    families: dict[str, Family] = {}
    for s in specs:
        for t, _ in s.templates:
            if t.kind.is_attack and families.setdefault(t.attack_class, t.family) is not t.family:
                raise ConfigError(f"attack class {t.attack_class!r} is declared with two families")


def generate_corpus(specs: Sequence[NetworkSpec], seed: int) -> list[tuple[list[FlowRecord], DatasetDescriptor]]:
    check_layout(specs)
    return [generate_network(s.netid, s.conf, s.templates, seed, s.network_id, s.name) for s in specs]


def corpus_from_layout(
    layout: Mapping[int, Sequence[str]],
    class_templates: Mapping[str, CommTemplate],
    benign_counts: Mapping[int, int],
    attack_count: int | Mapping[str, int] = 200,
    netids: Optional[Mapping[int, NetIdProfile]] = None,
    confs: Optional[Mapping[int, ConfProfile]] = None,
    benign_templates: Sequence[tuple[CommTemplate, float]] = (
        (CommTemplate(CommKind.BENIGN_WEB), 0.8),
        (CommTemplate(CommKind.BENIGN_TRANSFER), 0.2),
    ),
) -> list[NetworkSpec]:
    """Network specs whose malicious grid matches ``layout`` exactly.

    ``layout`` maps each network id to the attack classes it carries (possibly
    none); the same template is reused wherever a class appears.
    """
    netids = netids or {}
    confs = confs or {}
    specs = []
    for net in sorted(set(layout) | set(benign_counts)):
        entries = []
        n_benign = int(benign_counts.get(net, 0))
        if n_benign:
            shares = [math.floor(n_benign * w) for _, w in benign_templates[:-1]]
            shares.append(n_benign - sum(shares))
            entries += [(t, n) for (t, _), n in zip(benign_templates, shares) if n > 0]
        for cls in layout.get(net, ()):
            if cls not in class_templates:
                raise ConfigError(f"no template for attack class {cls!r}")
            n = attack_count[cls] if isinstance(attack_count, Mapping) else attack_count
            entries.append((class_templates[cls], int(n)))
        default_netid = NetIdProfile(internal_subnets=(f"10.{net % 256}.0.0/16",))
        specs.append(NetworkSpec(net, tuple(entries), netids.get(net, default_netid),
                                 confs.get(net, ConfProfile()), f"D{net}"))
    return specs


# --- manifests --------------------------------------------------------------------


def manifest_dict(specs: Sequence[NetworkSpec], seed: int) -> dict:
    return {"manifest_version": MANIFEST_VERSION, "seed": seed, "networks": [s.to_dict() for s in specs]}


def read_manifest(d: Mapping) -> tuple[list[NetworkSpec], int]:
    if d.get("manifest_version", MANIFEST_VERSION) != MANIFEST_VERSION:
        raise ConfigError(f"unsupported manifest version {d.get('manifest_version')}")
    try:
        specs = [NetworkSpec.from_dict(n) for n in d["networks"]]
        seed = int(d.get("seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed manifest: {exc}") from None
    return specs, seed


def write_corpus(out_dir, specs: Sequence[NetworkSpec], seed: int) -> list[Path]:
    """Write one ingestion CSV per network and a manifest that regenerates them."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    descriptors = []
    for records, desc in generate_corpus(specs, seed):
        p = out / f"{desc.name}.csv"
        write_flows(p, records)
        paths.append(p)
        descriptors.append({"path": p.name, "descriptor": desc.to_dict()})
    manifest = manifest_dict(specs, seed)
    manifest["datasets"] = descriptors
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths
