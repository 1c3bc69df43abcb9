"""Run configuration: JSON schema, validating loader and resolved form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .contextualize import DEFAULT_SPLIT, ContextSpec
from .detect import DEFAULT_RESERVE_FRAC
from .evaluate import WorkflowKind
from .flow_model import DatasetDescriptor
from .forest import HyperParams
from .isolate import GranularityMap
from .standardize import ConfigError, DurationMode, DurationPolicy, NetProfileConfig

_split = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
          "minItems": 2, "maxItems": 2}
_classes = {"type": "array", "items": {"type": ["integer", "string"]}}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "xflow run configuration",
    "type": "object",
    "required": ["datasets"],
    "additionalProperties": False,
    "properties": {
        "datasets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["path", "descriptor"],
                "additionalProperties": False,
                "properties": {
                    "path": {"type": "string"},
                    "descriptor": {
                        "type": "object",
                        "required": ["network_id"],
                        "additionalProperties": False,
                        "properties": {
                            "network_id": {"type": "integer", "minimum": 1},
                            "name": {"type": "string"},
                            "internal_subnets": {"type": "array", "items": {"type": "string"}},
                            "duration_unit": {"enum": ["seconds", "milliseconds"]},
                            "d_max": {"type": ["number", "null"], "exclusiveMinimum": 0},
                        },
                    },
                    "protocol_filter": {
                        "type": ["array", "null"],
                        "items": {"enum": ["TCP", "UDP", "ICMP", "OTHER"]},
                        "minItems": 1,
                    },
                    "families": {"type": "object", "additionalProperties": {"enum": ["Botnet", "DoS", "Other"]}},
                },
            },
        },
        "duration_policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": [m.value for m in DurationMode]},
                "d_cap": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "granularity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "merges": {"type": "object", "additionalProperties": {"type": "string"}},
                "drop_below": {"type": "integer", "minimum": 0},
                "class_order": {"type": "array", "items": {"type": "string"}},
            },
        },
        "contexts": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["o", "t", "tau", "e", "eps"],
                "additionalProperties": False,
                "properties": {
                    "o": {"type": ["integer", "array"], "items": {"type": "integer"}},
                    "t": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                    "tau": _classes,
                    "e": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                    "eps": _classes,
                    "split_n": _split,
                    "split_m": _split,
                    "seed": {"type": "integer", "minimum": 0},
                },
            },
        },
        "exploratory": {"type": "boolean"},
        "workflow": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {
                    "oneOf": [
                        {"enum": [k.value for k in WorkflowKind]},
                        {"type": "array", "minItems": 1, "items": {"enum": [k.value for k in WorkflowKind]}},
                    ]
                },
                "origins": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "split_n": _split,
                "split_m": _split,
            },
        },
        "reserve_frac": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "repetitions": {"type": "integer", "minimum": 1},
        "hyperparams": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_trees": {"type": "integer", "minimum": 1},
                "max_depth": {"type": ["integer", "null"], "minimum": 0},
                "min_samples_split": {"type": "integer", "minimum": 2},
                "max_features": {"oneOf": [{"enum": ["sqrt", "all"]}, {"type": "integer", "minimum": 1}]},
                "bootstrap": {"type": "boolean"},
            },
        },
        "save_detectors": {"type": "boolean"},
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
    "oneOf": [{"required": ["contexts"]}, {"required": ["workflow"]}],
}


@dataclass
class DatasetEntry:
    path: Path
    profile: NetProfileConfig
    families: dict[str, str] = field(default_factory=dict)


@dataclass
class RunConfig:
    datasets: list[DatasetEntry]
    granularity: GranularityMap
    hyperparams: HyperParams
    output: Path
    seed: int
    repetitions: int
    reserve_frac: float
    exploratory: bool
    save_detectors: bool
    contexts: Optional[list[dict]] = None
    workflow_kinds: Optional[list[WorkflowKind]] = None
    origins: Optional[list[int]] = None
    split_n: tuple[float, float] = DEFAULT_SPLIT
    split_m: tuple[float, float] = DEFAULT_SPLIT
    raw: dict = field(default_factory=dict)

    def context_specs(self, matrix) -> list[ContextSpec]:
        return [ContextSpec.from_dict(c, matrix) for c in self.contexts or ()]


def validate_config(data) -> None:
    """Raise ConfigError listing every schema violation."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msg = e.message
            if e.validator == "oneOf" and not e.absolute_path:
                msg = "exactly one of 'contexts' or 'workflow' must be given"
            lines.append(f"{where}: {msg}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read, apply CLI overrides, validate, and resolve relative paths.

    ``overrides`` may set ``seed``, ``repetitions``, ``output`` and
    ``workflow`` (a kind name replacing the configured workflow kinds).
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    return resolve_config(data, path.parent, overrides)


def resolve_config(data: dict, base: Path, overrides: Optional[dict] = None) -> RunConfig:
    data = json.loads(json.dumps(data))
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key in ("seed", "repetitions", "output"):
        if key in overrides:
            data[key] = overrides[key]
    if "workflow" in overrides:
        if "contexts" in data:
            raise ConfigError("--workflow cannot be combined with a config that lists contexts")
        data.setdefault("workflow", {})["kind"] = overrides["workflow"]
    validate_config(data)

    entries = []
    descriptors = []
    for d in data["datasets"]:
        p = Path(d["path"])
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise ConfigError(f"dataset file not found: {p}")
        desc = DatasetDescriptor.from_dict(d["descriptor"])
        descriptors.append(desc)
        entries.append((p, desc, d.get("protocol_filter"), d.get("families", {})))
    ids = [d.network_id for d in descriptors]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate network ids: {ids}")

    pol = data.get("duration_policy", {})
    if "d_cap" not in pol:
        caps = [d.d_max for d in descriptors if d.d_max is not None]
        if caps:
            pol = {**pol, "d_cap": min(caps)}
    policy = DurationPolicy(**pol)
    datasets = [
        DatasetEntry(p, NetProfileConfig(desc, frozenset(pf) if pf else None, policy), fams)
        for p, desc, pf, fams in entries
    ]

    g = data.get("granularity", {})
    granularity = GranularityMap(g.get("merges", {}), g.get("drop_below", 0), tuple(g.get("class_order", ())))
    try:
        hp = HyperParams(**data.get("hyperparams", {}))
    except ValueError as exc:
        raise ConfigError(f"hyperparams: {exc}") from None

    out = Path(data.get("output", "xflow-out"))
    wf = data.get("workflow")
    kinds = None
    if wf is not None:
        kinds = wf["kind"] if isinstance(wf["kind"], list) else [wf["kind"]]
        kinds = [WorkflowKind(k) for k in kinds]

    return RunConfig(
        datasets=datasets,
        granularity=granularity,
        hyperparams=hp,
        output=out if out.is_absolute() else base / out,
        seed=int(data.get("seed", 0)),
        repetitions=int(data.get("repetitions", 5)),
        reserve_frac=float(data.get("reserve_frac", DEFAULT_RESERVE_FRAC)),
        exploratory=bool(data.get("exploratory", True)),
        save_detectors=bool(data.get("save_detectors", False)),
        contexts=data.get("contexts"),
        workflow_kinds=kinds,
        origins=(wf or {}).get("origins"),
        split_n=tuple((wf or {}).get("split_n", DEFAULT_SPLIT)),
        split_m=tuple((wf or {}).get("split_m", DEFAULT_SPLIT)),
        raw=data,
    )
