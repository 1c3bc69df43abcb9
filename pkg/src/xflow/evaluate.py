"""Cross-evaluation of detector ensembles and the four standard workflows."""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .contextualize import (
    DEFAULT_SPLIT,
    ContextError,
    ContextSpec,
    SampleSet,
    classify_context,
    compose_eval,
    compose_train,
)
from .detect import (
    DEFAULT_RESERVE_FRAC,
    DetectorEnsemble,
    DetectorId,
    SelectionError,
    fmt_id,
    select_detector_exploratory,
    train_ensemble,
)
from .flow_model import Family
from .forest import HyperParams
from .isolate import BenignSet, MaliciousMatrix
from .metrics import ConfusionMatrix, confusion, f1, fpr
from .seeding import DETECTOR_STREAM, EXPLORE_STREAM, SPLIT_STREAM, derive_seed

log = logging.getLogger(__name__)

FAMILIES = (Family.BOTNET.value, Family.DOS.value, Family.OTHER.value)

SURROGATE_CAVEAT = (
    "Surrogate detectors never saw malicious traffic from the origin network. "
    "Near-perfect scores can come from environment artifacts that separate the "
    "foreign attack samples from origin benign traffic, i.e. overfitting; compare "
    "feature importances across networks before trusting them."
)


class EvaluationError(ValueError):
    pass


def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return statistics.fmean(values) if values else None


@dataclass
class CellEvaluation:
    cell: tuple[int, int]
    class_name: str
    family: str
    detector: DetectorId
    routed_by: str  # "native" or "exploratory"
    confusion: ConfusionMatrix
    f1: Optional[float]
    fpr: Optional[float]
    n_reserved: int = 0

    def to_dict(self) -> dict:
        return {
            "cell": list(self.cell),
            "class": self.class_name,
            "family": self.family,
            "detector": fmt_id(self.detector),
            "routed_by": self.routed_by,
            "confusion": self.confusion.to_dict(),
            "f1": self.f1,
            "fpr": self.fpr,
            "n_reserved": self.n_reserved,
        }


@dataclass
class EvaluationReport:
    origin: int
    evaluations: list[CellEvaluation]
    per_detector: dict[str, dict]
    per_family: dict[str, float]
    per_family_foreign: dict[str, float]
    avg_fpr: Optional[float]
    ensemble_fpr: Optional[float]
    context: dict = field(default_factory=dict)
    repetition: int = 0
    reserved_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    caveats: list[str] = field(default_factory=list)

    def cell_f1(self) -> dict[tuple[int, int], Optional[float]]:
        return {ev.cell: ev.f1 for ev in self.evaluations}

    def to_dict(self) -> dict:
        return {
            "origin": self.origin,
            "repetition": self.repetition,
            "context": self.context,
            "evaluations": [ev.to_dict() for ev in self.evaluations],
            "per_detector": self.per_detector,
            "per_family": self.per_family,
            "per_family_foreign": self.per_family_foreign,
            "avg_fpr": self.avg_fpr,
            # union of alarms over all scoring detectors; not a per-detector figure
            "ensemble_fpr_union": self.ensemble_fpr,
            "n_reserved": int(len(self.reserved_ids)),
            "caveats": list(self.caveats),
        }


def _family_means(evals: Sequence[CellEvaluation]) -> dict[str, float]:
    out = {}
    for fam in FAMILIES:
        m = _mean([ev.f1 for ev in evals if ev.family == fam])
        if m is not None:
            out[fam] = m
    return out


def evaluate_context(
    ens: DetectorEnsemble,
    E: SampleSet,
    exploratory: bool = False,
    reserve_frac: float = DEFAULT_RESERVE_FRAC,
    seed: int = 0,
    families: Optional[dict] = None,
) -> EvaluationReport:
    """Score every malicious cell of ``E`` with its routed detector.

    Each cell is evaluated on its own malicious samples plus the whole benign
    evaluation partition. Cells whose class has no detector go through
    exploratory selection when ``exploratory`` is set; their reserved samples
    are removed before scoring.
    """
    if len(E.benign) == 0 and not E.malicious:
        raise EvaluationError("evaluation set is empty")
    families = families or E.benign.family_of or {}

    routes = {}
    unroutable = []
    for cell in E.cells:
        name = E.class_names.get(cell[1], str(cell[1]))
        det = ens.route(cell, name)
        if det is None:
            unroutable.append((cell, name))
        routes[cell] = det
    if unroutable and not exploratory:
        raise EvaluationError("no detector for classes: " + ", ".join(f"{n} (network {c[0]})" for c, n in unroutable))

    benign_pred = {}

    def on_benign(det_id):
        if det_id not in benign_pred:
            benign_pred[det_id] = ens.get(det_id).predict(E.benign.X).astype(bool)
        return benign_pred[det_id]

    evaluations = []
    reserved_all = []
    for cell in E.cells:
        name = E.class_names.get(cell[1], str(cell[1]))
        table = E.malicious[cell]
        det_id, routed_by, n_reserved = routes[cell], "native", 0
        if det_id is None:
            try:
                det_id, reserved = select_detector_exploratory(
                    ens, table, E.benign, reserve_frac, derive_seed(seed, *cell))
            except SelectionError as exc:
                raise EvaluationError(f"exploratory selection failed for {name}: {exc}") from None
            routed_by, n_reserved = "exploratory", len(reserved)
            reserved_all.append(reserved)
            table = table.take(np.flatnonzero(~np.isin(table.ids, reserved)))
        mal_pred = ens.get(det_id).predict(table.X).astype(bool)
        b_pred = on_benign(det_id)
        cm = confusion(np.concatenate([mal_pred, b_pred]),
                       np.concatenate([np.ones(len(mal_pred), bool), np.zeros(len(b_pred), bool)]))
        fam = families.get(name, Family.OTHER)
        fam = fam.value if isinstance(fam, Family) else str(fam)
        evaluations.append(CellEvaluation(cell, name, fam, det_id, routed_by, cm, f1(cm), fpr(cm), n_reserved))

    per_detector = {}
    for det_id in sorted({ev.detector for ev in evaluations}):
        mine = [ev for ev in evaluations if ev.detector == det_id]
        b = benign_pred[det_id]
        cm = ConfusionMatrix(
            tp=sum(ev.confusion.tp for ev in mine),
            fn=sum(ev.confusion.fn for ev in mine),
            fp=int(b.sum()),
            tn=int((~b).sum()),
        )
        per_detector[fmt_id(det_id)] = {"confusion": cm.to_dict(), "f1": f1(cm), "fpr": fpr(cm)}

    avg_fpr = _mean([d["fpr"] for d in per_detector.values()])
    if benign_pred and len(E.benign):
        union = np.logical_or.reduce(list(benign_pred.values()))
        ensemble_fpr = float(union.mean())
    else:
        ensemble_fpr = None

    return EvaluationReport(
        origin=E.o,
        evaluations=evaluations,
        per_detector=per_detector,
        per_family=_family_means(evaluations),
        per_family_foreign=_family_means([ev for ev in evaluations if ev.cell[0] != E.o]),
        avg_fpr=avg_fpr,
        ensemble_fpr=ensemble_fpr,
        reserved_ids=np.concatenate(reserved_all) if reserved_all else np.zeros(0, dtype=np.int64),
    )


# --- repetitions ------------------------------------------------------------------


def _stats(values) -> Optional[dict]:
    values = [v for v in values if v is not None]
    if not values:
        return None
    lo, hi = min(values), max(values)
    # constant inputs average to themselves exactly, without rounding drift
    mean = lo if lo == hi else statistics.fmean(values)
    return {"mean": mean, "min": lo, "max": hi}


@dataclass
class AveragedReport:
    origin: int
    repetitions: int
    cells: dict[tuple[int, int], dict]
    per_family: dict[str, dict]
    per_family_foreign: dict[str, dict]
    avg_fpr: Optional[dict]
    ensemble_fpr: Optional[dict]

    def family_mean(self, fam: str, foreign: bool = False) -> Optional[float]:
        src = self.per_family_foreign if foreign else self.per_family
        return src[fam]["mean"] if fam in src else None

    def mean_f1(self, cells) -> Optional[float]:
        return _mean([self.cells[c]["f1"]["mean"] if self.cells[c]["f1"] else None for c in cells])

    def to_dict(self) -> dict:
        return {
            "origin": self.origin,
            "repetitions": self.repetitions,
            "cells": [dict(cell=list(k), **v) for k, v in sorted(self.cells.items())],
            "per_family": self.per_family,
            "per_family_foreign": self.per_family_foreign,
            "avg_fpr": self.avg_fpr,
            "ensemble_fpr_union": self.ensemble_fpr,
        }


def repeat_and_average(reports: Sequence[EvaluationReport]) -> AveragedReport:
    """Mean, min and max of every metric across structurally identical reports."""
    if not reports:
        raise EvaluationError("no reports to average")
    layout = [ev.cell for ev in reports[0].evaluations]
    for r in reports[1:]:
        if [ev.cell for ev in r.evaluations] != layout or r.origin != reports[0].origin:
            raise EvaluationError("reports differ in structure and cannot be averaged")

    cells = {}
    for i, cell in enumerate(layout):
        evs = [r.evaluations[i] for r in reports]
        cells[cell] = {
            "class": evs[0].class_name,
            "family": evs[0].family,
            "f1": _stats([e.f1 for e in evs]),
            "fpr": _stats([e.fpr for e in evs]),
        }

    def fam_stats(attr):
        out = {}
        for fam in FAMILIES:
            s = _stats([getattr(r, attr).get(fam) for r in reports])
            if s is not None:
                out[fam] = s
        return out

    return AveragedReport(
        origin=reports[0].origin,
        repetitions=len(reports),
        cells=cells,
        per_family=fam_stats("per_family"),
        per_family_foreign=fam_stats("per_family_foreign"),
        avg_fpr=_stats([r.avg_fpr for r in reports]),
        ensemble_fpr=_stats([r.ensemble_fpr for r in reports]),
    )


# --- workflows ------------------------------------------------------------------------


class WorkflowKind(str, Enum):
    BASELINE = "baseline"
    GENERALIZATION = "generalization"
    EXTENSION = "extension"
    SURROGATION = "surrogation"


@dataclass(frozen=True)
class WorkflowPlan:
    kind: WorkflowKind
    origin: int
    hyperparams: HyperParams = HyperParams()
    repetitions: int = 5
    seed: int = 0
    split_n: tuple[float, float] = DEFAULT_SPLIT
    split_m: tuple[float, float] = DEFAULT_SPLIT
    reserve_frac: float = DEFAULT_RESERVE_FRAC

    def __post_init__(self):
        object.__setattr__(self, "kind", WorkflowKind(self.kind))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class WorkflowResult:
    plan: WorkflowPlan
    reports: list[EvaluationReport]
    average: Optional[AveragedReport]
    status: list[str]
    context_type: Optional[str] = None
    n_detectors: int = 0
    ensembles: list[DetectorEnsemble] = field(default_factory=list, repr=False)
    caveats: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(s == "ok" for s in self.status)

    def to_dict(self) -> dict:
        return {
            "kind": self.plan.kind.value,
            "origin": self.plan.origin,
            "repetitions": self.plan.repetitions,
            "seed": self.plan.seed,
            "context_type": self.context_type,
            "n_detectors": self.n_detectors,
            "status": self.status,
            "caveats": self.caveats,
            "average": self.average.to_dict() if self.average else None,
            "per_repetition": [r.to_dict() for r in self.reports],
        }


def workflow_cells(kind: WorkflowKind, origin: int, M: MaliciousMatrix):
    """(train cells, eval cells) for a workflow seen from ``origin``."""
    own = [(origin, c) for c in M.classes_of(origin)]
    foreign = [(n, c) for n in M.networks if n != origin for c in M.classes_of(n)]
    kind = WorkflowKind(kind)
    if kind is WorkflowKind.BASELINE:
        return own, own
    if kind is WorkflowKind.GENERALIZATION:
        return own, own + foreign
    if kind is WorkflowKind.EXTENSION:
        return own + foreign, own + foreign
    return foreign, foreign


def workflow_spec(plan: WorkflowPlan, M: MaliciousMatrix, repetition: int) -> ContextSpec:
    train, ev = workflow_cells(plan.kind, plan.origin, M)
    if not train or not ev:
        raise ContextError(f"{plan.kind.value} from network {plan.origin} has no malicious cells to use")
    return ContextSpec(
        o=plan.origin,
        t=[c[0] for c in train], tau=[c[1] for c in train],
        e=[c[0] for c in ev], eps=[c[1] for c in ev],
        split_n=plan.split_n, split_m=plan.split_m,
        seed=derive_seed(plan.seed, repetition, SPLIT_STREAM),
    )


def run_workflow(
    plan: WorkflowPlan,
    N: BenignSet,
    M: MaliciousMatrix,
    cache: Optional[dict] = None,
) -> WorkflowResult:
    """Run one workflow ``plan.repetitions`` times with derived seeds.

    Repetition ``r`` uses ``derive_seed(plan.seed, r, stream)`` for its splits,
    detector training and exploratory selection, so repetition ``r`` is the
    same whatever the total number of repetitions. Detector seeds do not depend
    on the workflow kind: with a shared ``cache``, baseline detectors are reused
    verbatim by the generalization and extension workflows.
    """
    cache = {} if cache is None else cache
    reports, status, ensembles = [], [], []
    ctype, n_det = None, 0
    for r in range(plan.repetitions):
        try:
            spec = workflow_spec(plan, M, r)
            ctype = classify_context(spec).name
            T = compose_train(N, M, spec)
            E = compose_eval(N, M, spec)
            ens = train_ensemble(T, plan.hyperparams, derive_seed(plan.seed, r, DETECTOR_STREAM), cache)
            n_det = len(ens.detectors)
            failed = [fmt_id(k) for k, v in ens.status.items() if v != "ok"]
            report = evaluate_context(
                ens, E,
                exploratory=plan.kind is WorkflowKind.GENERALIZATION,
                reserve_frac=plan.reserve_frac,
                seed=derive_seed(plan.seed, r, EXPLORE_STREAM),
                families=M.family_of,
            )
        except (ContextError, EvaluationError, ValueError) as exc:
            log.warning("%s repetition %d failed: %s", plan.kind.value, r, exc)
            status.append(f"error: {exc}")
            continue
        report.repetition = r
        report.context = {"type": ctype, "spec": spec.to_dict()}
        if plan.kind is WorkflowKind.SURROGATION:
            report.caveats.append(SURROGATE_CAVEAT)
        reports.append(report)
        ensembles.append(ens)
        status.append("ok" if not failed else f"partial: detectors failed {failed}")

    average = repeat_and_average(reports) if reports else None
    caveats = [SURROGATE_CAVEAT] if plan.kind is WorkflowKind.SURROGATION else []
    return WorkflowResult(plan, reports, average, status, ctype, n_det, ensembles, caveats)
