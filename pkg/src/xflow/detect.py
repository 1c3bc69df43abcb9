"""Per-attack detectors, ensembles, exploratory routing and importance reports."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .contextualize import SampleSet
from .flow_model import FEATURE_COLUMNS, N_FEATURES, SampleTable
from .forest import HyperParams, RandomForest, TrainingError, train_forest
from .metrics import confusion, f1
from .seeding import derive_seed

log = logging.getLogger(__name__)

DetectorId = tuple  # (network, class column)

DETECTOR_SCHEMA_VERSION = 1
DEFAULT_RESERVE_FRAC = 0.1
BENIGN_PROBE_FRAC = 0.2


class SelectionError(ValueError):
    pass


def fmt_id(det_id: DetectorId) -> str:
    return f"{det_id[0]}:{det_id[1]}"


@dataclass
class Detector:
    id: DetectorId
    class_name: str
    origin: int
    model: RandomForest
    train_provenance: str

    @property
    def label(self) -> str:
        return f"o{self.origin}/n{self.id[0]}/{self.class_name}"

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict(X)

    def to_dict(self) -> dict:
        return {
            "schema_version": DETECTOR_SCHEMA_VERSION,
            "id": list(self.id),
            "class_name": self.class_name,
            "origin": self.origin,
            "train_provenance": self.train_provenance,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Detector":
        if d.get("schema_version") != DETECTOR_SCHEMA_VERSION:
            raise ValueError(f"unsupported detector schema version {d.get('schema_version')}")
        return cls(
            id=tuple(d["id"]),
            class_name=d["class_name"],
            origin=int(d["origin"]),
            model=RandomForest.from_dict(d["model"]),
            train_provenance=d["train_provenance"],
        )

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")))

    @classmethod
    def load(cls, path) -> "Detector":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DetectorEnsemble:
    origin: int
    detectors: list[Detector]
    routing: dict[str, DetectorId] = field(default_factory=dict)
    status: dict[DetectorId, str] = field(default_factory=dict)

    def __post_init__(self):
        self.detectors = sorted(self.detectors, key=lambda d: d.id)
        if not self.routing:
            for d in self.detectors:
                self.routing.setdefault(d.class_name, d.id)

    @property
    def ids(self) -> list[DetectorId]:
        return [d.id for d in self.detectors]

    def get(self, det_id: DetectorId) -> Detector:
        for d in self.detectors:
            if d.id == det_id:
                return d
        raise KeyError(det_id)

    def route(self, cell: tuple[int, int], class_name: str) -> Optional[DetectorId]:
        """The detector trained on exactly this cell, else the class's routed one."""
        for d in self.detectors:
            if d.id == tuple(cell):
                return d.id
        return self.routing.get(class_name)

    def subset(self, ids) -> "DetectorEnsemble":
        keep = set(map(tuple, ids))
        return DetectorEnsemble(self.origin, [d for d in self.detectors if d.id in keep])


def detector_provenance(T: SampleSet, cell) -> str:
    return json.dumps(
        {"o": T.o, "cell": list(cell), "split_n": list(T.split_n),
         "split_m": list(T.split_m), "seed": T.seed},
        sort_keys=True, separators=(",", ":"),
    )


def train_detector(benign: SampleTable, malicious: SampleTable, hp: HyperParams, seed: int) -> RandomForest:
    X = np.concatenate([benign.X, malicious.X])
    y = np.concatenate([np.zeros(len(benign), dtype=np.int64), np.ones(len(malicious), dtype=np.int64)])
    return train_forest(X, y, hp, seed)


def train_ensemble(
    T: SampleSet,
    hp: HyperParams = HyperParams(),
    seed: int = 0,
    cache: Optional[dict] = None,
) -> DetectorEnsemble:
    """One detector per malicious cell of ``T``, each against ``T``'s benign part.

    ``cache`` maps (provenance, detector seed, hyperparams) to trained models so
    identical detectors are shared across contexts instead of retrained.
    """
    detectors, status = [], {}
    for cell in T.cells:
        det_seed = derive_seed(seed, *cell)
        prov = detector_provenance(T, cell)
        key = (prov, det_seed, json.dumps(hp.to_dict(), sort_keys=True))
        try:
            if cache is not None and key in cache:
                model = cache[key]
            else:
                model = train_detector(T.benign, T.malicious[cell], hp, det_seed)
                if cache is not None:
                    cache[key] = model
        except TrainingError as exc:
            log.warning("detector %s failed: %s", fmt_id(cell), exc)
            status[tuple(cell)] = f"error: {exc}"
            continue
        status[tuple(cell)] = "ok"
        detectors.append(Detector(tuple(cell), T.class_names.get(cell[1], str(cell[1])), T.o, model, prov))
    return DetectorEnsemble(T.o, detectors, status=status)


def select_detector_exploratory(
    ens: DetectorEnsemble,
    unknown_cell: SampleTable,
    benign_eval: SampleTable,
    reserve_frac: float = DEFAULT_RESERVE_FRAC,
    seed: int = 0,
) -> tuple[DetectorId, np.ndarray]:
    """Pick the detector that scores best on a reserved slice of an unrouted class.

    Returns the chosen id and the ids of the reserved malicious samples, which
    must be kept out of the evaluation set afterwards. Ties go to the lowest id.
    """
    if not ens.detectors:
        raise SelectionError("ensemble has no detectors")
    n = len(unknown_cell)
    n_reserve = math.ceil(reserve_frac * n) if reserve_frac > 0 else 0
    if n_reserve == 0:
        raise SelectionError("reserve is empty: use a larger cell or reserve fraction")
    rng = np.random.default_rng([seed, 0])
    reserved = np.sort(rng.permutation(n)[:n_reserve])
    n_probe = math.ceil(BENIGN_PROBE_FRAC * len(benign_eval))
    probe = np.sort(np.random.default_rng([seed, 1]).permutation(len(benign_eval))[:n_probe])

    X = np.concatenate([unknown_cell.X[reserved], benign_eval.X[probe]])
    truth = np.concatenate([np.ones(n_reserve, dtype=bool), np.zeros(n_probe, dtype=bool)])
    best_id, best_score = None, -1.0
    for d in ens.detectors:
        score = f1(confusion(d.predict(X), truth))
        score = -1.0 if score is None else score
        if score > best_score:
            best_id, best_score = d.id, score
    return best_id, unknown_cell.ids[reserved]


@dataclass
class ImportanceTable:
    labels: list[str]
    values: np.ndarray  # (n_detectors, 12)

    @property
    def spread(self) -> np.ndarray:
        if len(self.values) == 0:
            return np.zeros(N_FEATURES)
        return self.values.max(axis=0) - self.values.min(axis=0)

    def top_k(self, k: int = 6) -> list[tuple[str, list[str]]]:
        """(label, k most important features) per detector; ties keep schema order."""
        out = []
        for label, row in zip(self.labels, self.values):
            order = sorted(range(N_FEATURES), key=lambda j: (-row[j], j))[:k]
            out.append((label, [FEATURE_COLUMNS[j] for j in order]))
        return out

    def agreement(self, k: int = 6) -> dict[str, int]:
        """How many detectors rank each feature in their top ``k``."""
        counts = {c: 0 for c in FEATURE_COLUMNS}
        for _, feats in self.top_k(k):
            for f in feats:
                counts[f] += 1
        return counts


def feature_importance_report(detectors: Sequence[Detector]) -> ImportanceTable:
    values = np.array([d.model.importances for d in detectors], dtype=np.float64).reshape(-1, N_FEATURES)
    return ImportanceTable([d.label for d in detectors], values)
