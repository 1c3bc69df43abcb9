"""Split standardized datasets into benign pools and the network x class grid."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .flow_model import Family, SampleTable
from .standardize import ConfigError, StandardizedDataset

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """The corpus cannot support any cross-evaluation."""


@dataclass(frozen=True)
class GranularityMap:
    merges: Mapping[str, str] = field(default_factory=dict)
    drop_below: int = 0
    # preferred column order; classes not listed follow in lexicographic order
    class_order: tuple[str, ...] = ()

    def __post_init__(self):
        if self.drop_below < 0:
            raise ConfigError("drop_below must be >= 0")
        chained = set(self.merges.values()) & {k for k, v in self.merges.items() if k != v}
        if chained:
            # a target that is also merged away would make resolve() non-idempotent
            raise ConfigError(f"merge targets are themselves merged: {sorted(chained)}")
        object.__setattr__(self, "class_order", tuple(self.class_order))
        if len(set(self.class_order)) != len(self.class_order):
            raise ConfigError("class_order lists a class twice")

    def resolve(self, attack_class: str) -> str:
        return self.merges.get(attack_class, attack_class)

    def check_against(self, classes) -> None:
        unmerged = {c for c in classes if c not in self.merges}
        # identity entries like {"dos": "dos"} are allowed
        clash = unmerged & set(self.merges.values())
        if clash:
            raise ConfigError(f"merge targets collide with unmerged classes: {sorted(clash)}")

    def to_dict(self) -> dict:
        return {"merges": dict(self.merges), "drop_below": self.drop_below,
                "class_order": list(self.class_order)}

    def column_order(self, classes) -> list[str]:
        classes = set(classes)
        head = [c for c in self.class_order if c in classes]
        return head + sorted(classes - set(head))


@dataclass
class BenignSet:
    pools: dict[int, SampleTable]

    @property
    def networks(self) -> list[int]:
        return sorted(self.pools)

    def __getitem__(self, network: int) -> SampleTable:
        return self.pools[network]

    def total(self) -> int:
        return sum(len(p) for p in self.pools.values())


@dataclass
class MaliciousMatrix:
    """``grid[(network, column)]`` with 1-based class columns in ``class_index`` order."""

    grid: dict[tuple[int, int], SampleTable]
    class_index: list[str]
    family_of: dict[str, Family]
    networks: list[int]
    dropped: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def mu(self) -> int:
        return len(self.class_index)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.networks), self.mu

    def column(self, attack_class: str) -> int:
        try:
            return self.class_index.index(attack_class) + 1
        except ValueError:
            raise KeyError(f"unknown attack class {attack_class!r}") from None

    def class_name(self, column: int) -> str:
        return self.class_index[column - 1]

    def cell(self, network: int, column: int) -> SampleTable:
        return self.grid[(network, column)]

    def non_empty_cells(self) -> list[tuple[int, int]]:
        return sorted(k for k, v in self.grid.items() if len(v))

    def classes_of(self, network: int) -> list[int]:
        return [c for (n, c) in self.non_empty_cells() if n == network]

    def occupancy(self) -> np.ndarray:
        counts = np.zeros(self.shape, dtype=np.int64)
        for i, net in enumerate(self.networks):
            for j in range(self.mu):
                counts[i, j] = len(self.grid[(net, j + 1)])
        return counts

    def total(self) -> int:
        return sum(len(v) for v in self.grid.values())


def isolate(
    datasets: Sequence[StandardizedDataset],
    g: Optional[GranularityMap] = None,
) -> tuple[BenignSet, MaliciousMatrix]:
    g = g or GranularityMap()
    tables = {}
    for ds in datasets:
        if ds.network_id in tables:
            raise CorpusError(f"duplicate network id {ds.network_id}")
        tables[ds.network_id] = SampleTable.from_samples(ds.samples)
    networks = sorted(tables)

    original = set()
    for t in tables.values():
        original.update(t.attack_class[t.malicious])
    g.check_against(original)

    family_of: dict[str, Family] = {}
    family_votes: dict[str, Counter] = {}
    for net in networks:
        t = tables[net]
        for cls, fam in t.family_of.items():
            family_votes.setdefault(g.resolve(cls), Counter())[fam] += 1
    for cls, votes in family_votes.items():
        fams = set(votes)
        # merged classes of mixed family fall back to Other
        family_of[cls] = fams.pop() if len(fams) == 1 else Family.OTHER

    class_index = g.column_order(family_of)

    pools = {}
    grid = {}
    dropped = {}
    for net in networks:
        t = tables[net]
        resolved = np.array([g.resolve(c) if m else "" for c, m in zip(t.attack_class, t.malicious)], dtype=object)
        t = t.relabel(resolved, family_of)
        pools[net] = t.take(np.flatnonzero(~t.malicious))
        for col, cls in enumerate(class_index, start=1):
            cell = t.take(np.flatnonzero(t.malicious & (t.attack_class == cls)))
            if g.drop_below and 0 < len(cell) < g.drop_below:
                log.info("dropping cell (%d, %s): %d samples < %d", net, cls, len(cell), g.drop_below)
                dropped[(net, col)] = len(cell)
                cell = cell.take(np.zeros(0, dtype=np.int64))
            grid[(net, col)] = cell

    benign = BenignSet(pools)
    matrix = MaliciousMatrix(grid, class_index, family_of, networks, dropped)
    if benign.total() == 0 or matrix.total() == 0:
        raise CorpusError("corpus needs at least one non-empty benign pool and one non-empty malicious cell")
    return benign, matrix


def dump_grid_csv(path, matrix: MaliciousMatrix, benign: Optional[BenignSet] = None) -> None:
    """Rows are networks, columns are attack classes, values are sample counts."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    counts = matrix.occupancy()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["network"] + (["benign"] if benign is not None else []) + matrix.class_index
        w.writerow(header)
        for i, net in enumerate(matrix.networks):
            row = [net] + ([len(benign[net])] if benign is not None else []) + counts[i].tolist()
            w.writerow(row)
