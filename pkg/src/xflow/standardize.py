"""Bring heterogeneous flow datasets into the common schema.

Removes the network-specific artifacts that would otherwise let a detector
learn the environment instead of the attack: raw addresses become an
internal/external flag, ports become IANA categories, and durations share one
unit and one upper bound.
"""

from __future__ import annotations

import dataclasses
import ipaddress
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional, Sequence

from .flow_model import (
    DatasetDescriptor,
    Direction,
    DurationUnit,
    FlowRecord,
    PortCategory,
    Protocol,
    StandardSample,
    validate_record,
)

log = logging.getLogger(__name__)

SAMPLE_ID_STRIDE = 10**9
DEFAULT_D_CAP = 150.0


class ConfigError(ValueError):
    """Invalid standardization configuration (raised at load time)."""


class DurationMode(str, Enum):
    OUTLIER_REMOVAL = "outlier_removal"
    THRESHOLD_SETTING = "threshold_setting"
    FLOW_SPLITTING = "flow_splitting"


@dataclass(frozen=True)
class DurationPolicy:
    mode: DurationMode = DurationMode.OUTLIER_REMOVAL
    d_cap: float = DEFAULT_D_CAP

    def __post_init__(self):
        object.__setattr__(self, "mode", DurationMode(self.mode))
        if not self.d_cap > 0:
            raise ConfigError("d_cap must be positive")


@dataclass(frozen=True)
class NetProfileConfig:
    descriptor: DatasetDescriptor
    protocol_filter: Optional[frozenset] = None
    duration_policy: DurationPolicy = field(default_factory=DurationPolicy)

    def __post_init__(self):
        if self.protocol_filter is not None:
            protocols = frozenset(Protocol(p) for p in self.protocol_filter)
            if not protocols:
                raise ConfigError("protocol_filter, when given, must be non-empty")
            object.__setattr__(self, "protocol_filter", protocols)
        # fail fast on malformed CIDRs
        compile_subnets(self.descriptor.internal_subnets)


def corpus_duration_cap(descriptors: Iterable[DatasetDescriptor], default: float = DEFAULT_D_CAP) -> float:
    """Smallest declared maximum flow duration across the corpus."""
    caps = [d.d_max for d in descriptors if d.d_max is not None]
    return min(caps) if caps else default


# --- ports and endpoints ------------------------------------------------------


def classify_port(port: int) -> PortCategory:
    if not 0 <= port <= 65535:
        raise ValueError(f"port {port} outside [0, 65535]")
    if port <= 1023:
        return PortCategory.WELL_KNOWN
    if port <= 49151:
        return PortCategory.REGISTERED
    return PortCategory.DYNAMIC


def compile_subnets(subnets: Sequence) -> tuple:
    nets = []
    for s in subnets:
        if isinstance(s, (ipaddress.IPv4Network, ipaddress.IPv6Network)):
            nets.append(s)
            continue
        try:
            nets.append(ipaddress.ip_network(s, strict=False))
        except ValueError as exc:
            raise ConfigError(f"malformed CIDR {s!r}: {exc}") from None
    return tuple(nets)


@lru_cache(maxsize=1 << 16)
def _parse_ip(ip: str):
    return ipaddress.ip_address(ip)


def classify_endpoint(ip, subnets: Sequence) -> bool:
    """True iff ``ip`` falls in one of ``subnets`` (checked in order)."""
    addr = _parse_ip(ip) if isinstance(ip, str) else ipaddress.ip_address(ip)
    if subnets and isinstance(subnets[0], str):
        subnets = compile_subnets(subnets)
    for net in subnets:
        if addr.version == net.version and addr in net:
            return True
    return False


# --- durations ----------------------------------------------------------------


def normalize_duration(d: float, unit: DurationUnit | str) -> float:
    if d < 0:
        raise ValueError(f"negative duration {d}")
    unit = DurationUnit(unit)
    if unit is DurationUnit.MILLISECONDS:
        return d / 1000
    return float(d)


def _apportion(total: int, weights: Sequence[Fraction]) -> list[int]:
    # floor per fragment, residual to the last one
    parts = [math.floor(total * w) for w in weights[:-1]]
    parts.append(total - sum(parts))
    return parts


def split_flow(f: FlowRecord, d_cap: float) -> list[FlowRecord]:
    """Cut a flow longer than ``d_cap`` into consecutive fragments.

    Fragment durations are ``d_cap, ..., d_cap, remainder`` with the remainder in
    ``(0, d_cap]``. Byte and packet counters are split proportionally to
    fragment duration; integer residue goes to the last fragment so totals are
    conserved exactly. Fragment ``k`` starts at ``timestamp + k * d_cap``.
    """
    if not d_cap > 0:
        raise ValueError("d_cap must be positive")
    duration = f.duration
    if duration <= d_cap:
        return [f]
    k = math.ceil(duration / d_cap)
    if (k - 1) * d_cap >= duration:
        k -= 1
    durations = [d_cap] * (k - 1) + [duration - (k - 1) * d_cap]
    exact_total = Fraction(duration)
    weights = [Fraction(d) / exact_total for d in durations]
    counters = {
        name: _apportion(int(getattr(f, name)), weights)
        for name in ("in_bytes", "out_bytes", "in_packets", "out_packets")
    }
    return [
        dataclasses.replace(
            f,
            duration=durations[i],
            timestamp=f.timestamp + i * d_cap,
            **{name: values[i] for name, values in counters.items()},
        )
        for i in range(k)
    ]


def apply_duration_policy(flows: Sequence[FlowRecord], policy: DurationPolicy) -> list[FlowRecord]:
    cap = policy.d_cap
    if policy.mode is DurationMode.OUTLIER_REMOVAL:
        return [f for f in flows if f.duration <= cap]
    if policy.mode is DurationMode.THRESHOLD_SETTING:
        return [
            dataclasses.replace(f, duration=cap, original_duration=f.duration) if f.duration > cap else f
            for f in flows
        ]
    out = []
    for f in flows:
        out.extend(split_flow(f, cap))
    return out


# --- whole dataset --------------------------------------------------------------


@dataclass
class StandardizedDataset:
    descriptor: DatasetDescriptor
    samples: list[StandardSample]
    counters: dict[str, int]
    warnings: list[str] = field(default_factory=list)

    @property
    def network_id(self) -> int:
        return self.descriptor.network_id


def _to_sample(f: FlowRecord, subnets: tuple, origin: int, sample_id: int) -> StandardSample:
    in_b, out_b = int(f.in_bytes), int(f.out_bytes)
    in_p, out_p = int(f.in_packets), int(f.out_packets)
    return StandardSample(
        src_internal=classify_endpoint(f.src_ip, subnets),
        dst_internal=classify_endpoint(f.dst_ip, subnets),
        src_port_cat=classify_port(int(f.src_port)),
        dst_port_cat=classify_port(int(f.dst_port)),
        duration_s=float(f.duration),
        # bidirectional collapses to "out"
        direction=f.direction is not Direction.IN,
        in_bytes=in_b,
        out_bytes=out_b,
        tot_bytes=in_b + out_b,
        in_packets=in_p,
        out_packets=out_p,
        tot_packets=in_p + out_p,
        label=f.label,
        origin_network=origin,
        sample_id=sample_id,
        original_duration=f.original_duration,
    )


def standardize_dataset(raw: Sequence[FlowRecord], cfg: NetProfileConfig) -> StandardizedDataset:
    desc = cfg.descriptor
    subnets = compile_subnets(desc.internal_subnets)
    counters = dict(input=len(raw), dropped_invalid=0, dropped_filter=0, dropped_outlier=0, split_added=0)

    kept = []
    for r in raw:
        if not validate_record(r):
            counters["dropped_invalid"] += 1
            continue
        if cfg.protocol_filter is not None and r.protocol not in cfg.protocol_filter:
            counters["dropped_filter"] += 1
            continue
        kept.append(dataclasses.replace(r, duration=normalize_duration(r.duration, desc.duration_unit)))

    policy = cfg.duration_policy
    policed = apply_duration_policy(kept, policy)
    if policy.mode is DurationMode.OUTLIER_REMOVAL:
        counters["dropped_outlier"] = len(kept) - len(policed)
    elif policy.mode is DurationMode.FLOW_SPLITTING:
        counters["split_added"] = len(policed) - len(kept)

    base = desc.network_id * SAMPLE_ID_STRIDE
    samples = [_to_sample(f, subnets, desc.network_id, base + i) for i, f in enumerate(policed)]
    warnings = []
    if not samples:
        msg = f"dataset {desc.name!r} produced no samples after standardization"
        log.warning(msg)
        warnings.append(msg)
    return StandardizedDataset(desc, samples, counters, warnings)
