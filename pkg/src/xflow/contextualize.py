"""Context algebra and training/evaluation set composition.

A context is the tuple ``(o, t, e, tau, eps)``: the benign origin network, the
(network, class) cells used for training and those used for evaluation. Its
type C1..C10 depends only on four set equalities.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .flow_model import SampleTable
from .isolate import BenignSet, MaliciousMatrix

log = logging.getLogger(__name__)

DEFAULT_SPLIT = (0.8, 0.2)

# split-rng stream tags
_BENIGN_STREAM = 1
_CELL_STREAM = 2


class ContextError(ValueError):
    pass


class InconsistentContext(ContextError):
    """An equality pattern that no assignment of sets can produce."""


class Relation(str, Enum):
    EQUAL = "equal"
    SUPERSET = "superset_of_right"
    SUBSET = "subset_of_right"
    DISJOINT = "disjoint"
    OVERLAPPING = "overlapping"


def relation(left: frozenset, right: frozenset) -> Relation:
    if left == right:
        return Relation.EQUAL
    if left > right:
        return Relation.SUPERSET
    if left < right:
        return Relation.SUBSET
    if not left & right:
        return Relation.DISJOINT
    return Relation.OVERLAPPING


# (o == t, o == e, t == e, tau == eps) -> code
CONTEXT_TABLE: dict[tuple[bool, bool, bool, bool], int] = {
    (True, True, True, True): 1,
    (True, True, True, False): 2,
    (True, False, False, True): 3,
    (True, False, False, False): 4,
    (False, True, False, True): 5,
    (False, True, False, False): 6,
    (False, False, True, True): 7,
    (False, False, True, False): 8,
    (False, False, False, True): 9,
    (False, False, False, False): 10,
}


def context_code(o_eq_t: bool, o_eq_e: bool, t_eq_e: bool, tau_eq_eps: bool) -> int:
    try:
        return CONTEXT_TABLE[(o_eq_t, o_eq_e, t_eq_e, tau_eq_eps)]
    except KeyError:
        raise InconsistentContext(
            f"equality pattern o=t:{o_eq_t} o=e:{o_eq_e} t=e:{t_eq_e} is not transitive"
        ) from None


@dataclass(frozen=True)
class ContextType:
    code: int
    relations: Mapping[str, Relation]

    @property
    def name(self) -> str:
        return f"C{self.code}"

    def to_dict(self) -> dict:
        return {"code": self.name, "relations": {k: v.value for k, v in self.relations.items()}}


def _check_split(split, what) -> tuple[float, float]:
    train, ev = (float(x) for x in split)
    if not (0 < train < 1 and 0 < ev < 1) or train + ev > 1 + 1e-12:
        raise ContextError(f"{what} fractions must lie in (0, 1) and sum to <= 1, got {split}")
    return train, ev


@dataclass(frozen=True)
class ContextSpec:
    o: int
    t: tuple[int, ...]
    tau: tuple[int, ...]
    e: tuple[int, ...]
    eps: tuple[int, ...]
    split_n: tuple[float, float] = DEFAULT_SPLIT
    split_m: tuple[float, float] = DEFAULT_SPLIT
    seed: int = 0

    def __post_init__(self):
        for name in ("t", "tau", "e", "eps"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        object.__setattr__(self, "split_n", _check_split(self.split_n, "split_n"))
        object.__setattr__(self, "split_m", _check_split(self.split_m, "split_m"))
        if not (self.t and self.e):
            raise ContextError("t and e must be non-empty")
        if len(self.t) != len(self.tau) or len(self.e) != len(self.eps):
            raise ContextError("|t| must equal |tau| and |e| must equal |eps|")
        if self.seed < 0:
            raise ContextError("seed must be non-negative")

    @property
    def train_cells(self) -> list[tuple[int, int]]:
        return sorted(set(zip(self.t, self.tau)))

    @property
    def eval_cells(self) -> list[tuple[int, int]]:
        return sorted(set(zip(self.e, self.eps)))

    def train_key(self) -> str:
        return json.dumps(
            {"o": self.o, "cells": self.train_cells, "split_n": self.split_n,
             "split_m": self.split_m, "seed": self.seed},
            sort_keys=True, separators=(",", ":"),
        )

    def eval_key(self) -> str:
        return json.dumps(
            {"o": self.o, "cells": self.eval_cells, "split_n": self.split_n,
             "split_m": self.split_m, "seed": self.seed},
            sort_keys=True, separators=(",", ":"),
        )

    def to_dict(self) -> dict:
        return {
            "o": [self.o], "t": list(self.t), "tau": list(self.tau), "e": list(self.e),
            "eps": list(self.eps), "split_n": list(self.split_n), "split_m": list(self.split_m),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping, matrix: Optional[MaliciousMatrix] = None) -> "ContextSpec":
        """Build a spec from config JSON. Classes may be 1-based columns or names."""

        def classes(values):
            out = []
            for v in values:
                if isinstance(v, str):
                    if matrix is None:
                        raise ContextError(f"class name {v!r} needs a malicious matrix to resolve")
                    out.append(matrix.column(v))
                else:
                    out.append(int(v))
            return out

        o = d["o"]
        if isinstance(o, (list, tuple)):
            if len(o) != 1:
                raise ContextError("o must be a unary array")
            o = o[0]
        return cls(
            o=int(o), t=tuple(d["t"]), tau=tuple(classes(d["tau"])),
            e=tuple(d["e"]), eps=tuple(classes(d["eps"])),
            split_n=tuple(d.get("split_n", DEFAULT_SPLIT)),
            split_m=tuple(d.get("split_m", DEFAULT_SPLIT)),
            seed=int(d.get("seed", 0)),
        )


def classify_context(spec: ContextSpec) -> ContextType:
    o = frozenset([spec.o])
    t, e = frozenset(spec.t), frozenset(spec.e)
    tau, eps = frozenset(spec.tau), frozenset(spec.eps)
    rels = {
        "o_t": relation(o, t),
        "o_e": relation(o, e),
        "t_e": relation(t, e),
        "tau_eps": relation(tau, eps),
    }
    code = context_code(*(r is Relation.EQUAL for r in rels.values()))
    return ContextType(code, rels)


# --- composition ----------------------------------------------------------------


@dataclass
class SampleSet:
    """Benign part plus one malicious part per (network, class) cell.

    The part keys double as provenance tags.
    """

    o: int
    benign: SampleTable
    malicious: dict[tuple[int, int], SampleTable]
    key: str = ""
    class_names: dict[int, str] = field(default_factory=dict)
    split_n: tuple[float, float] = DEFAULT_SPLIT
    split_m: tuple[float, float] = DEFAULT_SPLIT
    seed: int = 0

    @property
    def cells(self) -> list[tuple[int, int]]:
        return sorted(self.malicious)

    def all_ids(self) -> np.ndarray:
        return np.concatenate([self.benign.ids] + [m.ids for m in self.malicious.values()])

    def provenance(self) -> dict[int, tuple]:
        tags = {int(i): ("N", self.o) for i in self.benign.ids}
        for cell, table in self.malicious.items():
            tags.update({int(i): ("M",) + cell for i in table.ids})
        return tags

    def table(self) -> SampleTable:
        return SampleTable.concat([self.benign] + [self.malicious[c] for c in self.cells])

    def __len__(self) -> int:
        return len(self.benign) + sum(len(m) for m in self.malicious.values())


@dataclass
class TrainEvalPair:
    T: SampleSet
    E: SampleSet
    spec: ContextSpec
    type: ContextType


def _partition(n: int, split: tuple[float, float], stream: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    train, ev = split
    n_train = math.floor(train * n + 1e-9)
    n_eval = n - n_train if abs(train + ev - 1) < 1e-9 else math.floor(ev * n + 1e-9)
    perm = np.random.default_rng(list(stream)).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_eval])


def split_benign(N: BenignSet, o: int, split, seed: int) -> tuple[SampleTable, SampleTable]:
    pool = N.pools.get(o)
    if pool is None or len(pool) == 0:
        raise ContextError(f"benign pool N_{o} is empty")
    tr, ev = _partition(len(pool), split, (seed, _BENIGN_STREAM, o))
    return pool.take(tr), pool.take(ev)


def split_cell(M: MaliciousMatrix, cell: tuple[int, int], split, seed: int) -> tuple[SampleTable, SampleTable]:
    """One partition per cell and seed, so a cell used on both sides never leaks."""
    table = M.grid.get(cell)
    if table is None or len(table) == 0:
        net, col = cell
        name = M.class_name(col) if 1 <= col <= M.mu else "?"
        raise ContextError(f"malicious cell M_{net}^{col} ({name}) is empty")
    tr, ev = _partition(len(table), split, (seed, _CELL_STREAM) + tuple(cell))
    return table.take(tr), table.take(ev)


def _sample_set(spec, M, benign, mal, key) -> SampleSet:
    names = {col: M.class_name(col) for (_, col) in mal}
    return SampleSet(spec.o, benign, mal, key, names, spec.split_n, spec.split_m, spec.seed)


def compose_train(N: BenignSet, M: MaliciousMatrix, spec: ContextSpec) -> SampleSet:
    benign, _ = split_benign(N, spec.o, spec.split_n, spec.seed)
    mal = {cell: split_cell(M, cell, spec.split_m, spec.seed)[0] for cell in spec.train_cells}
    return _sample_set(spec, M, benign, mal, spec.train_key())


def compose_eval(N: BenignSet, M: MaliciousMatrix, spec: ContextSpec) -> SampleSet:
    _, benign = split_benign(N, spec.o, spec.split_n, spec.seed)
    mal = {cell: split_cell(M, cell, spec.split_m, spec.seed)[1] for cell in spec.eval_cells}
    return _sample_set(spec, M, benign, mal, spec.eval_key())


def compose(N: BenignSet, M: MaliciousMatrix, spec: ContextSpec) -> TrainEvalPair:
    ctype = classify_context(spec)
    return TrainEvalPair(compose_train(N, M, spec), compose_eval(N, M, spec), spec, ctype)


@dataclass
class Collections:
    train: dict[str, SampleSet] = field(default_factory=dict)
    evals: dict[int, SampleSet] = field(default_factory=dict)
    train_key: dict[int, str] = field(default_factory=dict)
    types: dict[int, ContextType] = field(default_factory=dict)
    status: list[str] = field(default_factory=list)


def build_collections(N: BenignSet, M: MaliciousMatrix, specs: Sequence[ContextSpec]) -> Collections:
    """Compose every spec; identical training definitions share one entry.

    A failing spec is recorded in ``status`` and does not stop the others.
    """
    out = Collections()
    for i, spec in enumerate(specs):
        try:
            ctype = classify_context(spec)
            key = spec.train_key()
            if key not in out.train:
                out.train[key] = compose_train(N, M, spec)
            out.evals[i] = compose_eval(N, M, spec)
            out.train_key[i] = key
            out.types[i] = ctype
            out.status.append("ok")
        except ContextError as exc:
            log.warning("context %d failed: %s", i, exc)
            out.status.append(f"error: {exc}")
    return out
