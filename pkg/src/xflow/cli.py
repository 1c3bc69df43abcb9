"""Command-line entry point.

Exit codes: 0 success, 1 pipeline failure, 2 configuration failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import RunConfig, load_config
from .contextualize import ContextError, ContextSpec, build_collections
from .detect import Detector, feature_importance_report, fmt_id, train_ensemble
from .evaluate import (
    FAMILIES,
    EvaluationError,
    WorkflowKind,
    WorkflowPlan,
    repeat_and_average,
    run_workflow,
    evaluate_context,
)
from .flow_model import FEATURE_COLUMNS
from .io import read_flows
from .isolate import CorpusError, dump_grid_csv, isolate
from .seeding import DETECTOR_STREAM, EXPLORE_STREAM, SPLIT_STREAM, derive_seed
from .standardize import ConfigError, standardize_dataset
from .synth import check_layout, read_manifest, write_corpus

log = logging.getLogger("xflow")

EXIT_OK, EXIT_PIPELINE, EXIT_CONFIG = 0, 1, 2
REPORT_SCHEMA_VERSION = 1


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    yield
    timings[name] = round(time.perf_counter() - t0, 6)
    log.info("stage %s: %.3fs", name, timings[name])


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_table(path: Path, rows: list[tuple[int, dict, Optional[float]]]) -> None:
    """One row per origin network: per-family mean F1 and mean FPR."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", *FAMILIES, "avg_fpr"])
        for origin, fams, avg_fpr in rows:
            w.writerow([origin, *(_fmt(fams.get(f)) for f in FAMILIES), _fmt(avg_fpr)])


def _load_corpus(cfg: RunConfig, report: dict, timings: dict):
    with _stage("ingest", timings):
        raw = [read_flows(d.path, d.families) for d in cfg.datasets]
    with _stage("standardize", timings):
        std = [standardize_dataset(r, d.profile) for r, d in zip(raw, cfg.datasets)]
    report["counters"] = {str(s.network_id): s.counters for s in std}
    report["warnings"] = [w for s in std for w in s.warnings]
    with _stage("isolate", timings):
        N, M = isolate(std, cfg.granularity)
    report["grid"] = {
        "classes": M.class_index,
        "networks": M.networks,
        "benign": {str(n): len(N.pools[n]) for n in M.networks},
        "malicious": M.occupancy().tolist(),
        "dropped": {fmt_id(k): v for k, v in sorted(M.dropped.items())},
    }
    return N, M


def _save_ensemble(root: Path, ens, tag: str) -> None:
    for d in ens.detectors:
        d.save(root / tag / f"n{d.id[0]}_c{d.id[1]}.json")


def _run_workflows(cfg: RunConfig, N, M, report: dict, out: Path) -> bool:
    origins = cfg.origins or [n for n in M.networks if len(N.pools[n])]
    cache: dict = {}
    ok = True
    report["workflows"] = []
    for kind in cfg.workflow_kinds:
        rows = []
        for o in origins:
            plan = WorkflowPlan(kind, o, cfg.hyperparams, cfg.repetitions, cfg.seed,
                                cfg.split_n, cfg.split_m, cfg.reserve_frac)
            if o not in N.pools or len(N.pools[o]) == 0:
                report["workflows"].append({"kind": kind.value, "origin": o,
                                            "status": [f"error: benign pool of network {o} is empty"]})
                ok = False
                continue
            res = run_workflow(plan, N, M, cache)
            ok &= res.ok
            report["workflows"].append(res.to_dict())
            if res.average is not None:
                foreign = kind is WorkflowKind.GENERALIZATION
                fams = {f: res.average.family_mean(f, foreign) for f in FAMILIES}
                fams = {f: v for f, v in fams.items() if v is not None}
                rows.append((o, fams, res.average.avg_fpr["mean"] if res.average.avg_fpr else None))
            if cfg.save_detectors and res.ensembles:
                _save_ensemble(out / "detectors", res.ensembles[0], f"{kind.value}_o{o}")
        write_table(out / f"table_{kind.value}.csv", rows)
    return ok


def _run_contexts(cfg: RunConfig, N, M, report: dict, out: Path) -> bool:
    try:
        base_specs = cfg.context_specs(M)
    except (ContextError, KeyError) as exc:
        raise ConfigError(f"contexts: {exc}") from None
    given_seed = [("seed" in c) for c in cfg.contexts]
    cache: dict = {}
    ok = True
    results = [{"index": i, "spec": s.to_dict(), "status": [], "per_repetition": []} for i, s in enumerate(base_specs)]
    for r in range(cfg.repetitions):
        specs = []
        for s, has_seed in zip(base_specs, given_seed):
            root = s.seed if has_seed else cfg.seed
            specs.append(ContextSpec(s.o, s.t, s.tau, s.e, s.eps, s.split_n, s.split_m,
                                     derive_seed(root, r, SPLIT_STREAM)))
        col = build_collections(N, M, specs)
        ensembles = {}
        for i, spec in enumerate(specs):
            entry = results[i]
            if col.status[i] != "ok":
                entry["status"].append(col.status[i])
                ok = False
                continue
            entry["type"] = col.types[i].to_dict()
            key = col.train_key[i]
            if key not in ensembles:
                ensembles[key] = train_ensemble(col.train[key], cfg.hyperparams,
                                                derive_seed(cfg.seed, r, DETECTOR_STREAM), cache)
                if cfg.save_detectors and r == 0:
                    _save_ensemble(out / "detectors", ensembles[key], f"context{i}")
            try:
                rep = evaluate_context(ensembles[key], col.evals[i], cfg.exploratory, cfg.reserve_frac,
                                       derive_seed(cfg.seed, r, EXPLORE_STREAM), M.family_of)
            except EvaluationError as exc:
                entry["status"].append(f"error: {exc}")
                ok = False
                continue
            rep.repetition = r
            rep.context = {"type": entry["type"]["code"], "spec": spec.to_dict()}
            entry["status"].append("ok")
            entry["per_repetition"].append(rep)

    rows = []
    for entry in results:
        reps = entry.pop("per_repetition")
        if reps:
            try:
                avg = repeat_and_average(reps)
                entry["average"] = avg.to_dict()
                rows.append((entry["spec"]["o"][0], {f: avg.per_family[f]["mean"] for f in avg.per_family},
                             avg.avg_fpr["mean"] if avg.avg_fpr else None))
            except EvaluationError as exc:
                entry["status"].append(f"error: {exc}")
                ok = False
        entry["per_repetition"] = [r.to_dict() for r in reps]
    report["contexts"] = results
    write_table(out / "table_contexts.csv", rows)
    return ok


def cmd_run(config: str, out: Optional[str] = None, seed: Optional[int] = None,
            repetitions: Optional[int] = None, workflow: Optional[str] = None,
            normalize_timestamps: bool = False) -> int:
    try:
        cfg = load_config(config, {"seed": seed, "repetitions": repetitions, "workflow": workflow})
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    target = Path(out) if out else cfg.output
    target.mkdir(parents=True, exist_ok=True)

    embedded = {k: v for k, v in cfg.raw.items() if k != "output"}
    report: dict = {"schema_version": REPORT_SCHEMA_VERSION, "xflow_version": __version__, "config": embedded}
    timings: dict = {}
    ok = True
    try:
        N, M = _load_corpus(cfg, report, timings)
        dump_grid_csv(target / "grid.csv", M, N)
        with _stage("evaluate", timings):
            if cfg.workflow_kinds:
                ok = _run_workflows(cfg, N, M, report, target)
            else:
                ok = _run_contexts(cfg, N, M, report, target)
        report["status"] = "ok" if ok else "error"
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (CorpusError, ContextError, EvaluationError, ValueError, OSError) as exc:
        log.error("pipeline failed: %s", exc)
        report["status"] = f"error: {exc}"
        ok = False

    if not normalize_timestamps:
        report["generated_at"] = datetime.now(timezone.utc).isoformat()
        report["timings_s"] = timings
    _dump_json(target / "report.json", report)
    if "counters" in report:
        with open(target / "counters.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            names = sorted(next(iter(report["counters"].values())))
            w.writerow(["network", *names])
            for net, c in sorted(report["counters"].items(), key=lambda kv: int(kv[0])):
                w.writerow([net, *(c[n] for n in names)])
    return EXIT_OK if ok else EXIT_PIPELINE


def cmd_synth(manifest: str, out: str) -> int:
    try:
        data = json.loads(Path(manifest).read_text())
        specs, seed = read_manifest(data)
        check_layout(specs)
    except FileNotFoundError:
        log.error("manifest not found: %s", manifest)
        return EXIT_CONFIG
    except (json.JSONDecodeError, ConfigError, ValueError) as exc:
        log.error("invalid manifest: %s", exc)
        return EXIT_CONFIG
    try:
        paths = write_corpus(out, specs, seed)
    except OSError as exc:
        log.error("writing corpus failed: %s", exc)
        return EXIT_PIPELINE
    log.info("wrote %d datasets to %s", len(paths), out)
    return EXIT_OK


def cmd_importance(models: Sequence[str], out: str, k: int = 6) -> int:
    if not models:
        log.error("at least one detector file is required")
        return EXIT_CONFIG
    detectors = []
    for m in models:
        try:
            detectors.append(Detector.load(m))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            log.error("cannot read detector %s: %s", m, exc)
            return EXIT_PIPELINE
    table = feature_importance_report(detectors)
    target = Path(out)
    target.mkdir(parents=True, exist_ok=True)
    with open(target / "importance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["detector", *FEATURE_COLUMNS])
        for label, row in zip(table.labels, table.values):
            w.writerow([label, *(repr(float(v)) for v in row)])
    agreement = table.agreement(k)
    with open(target / "agreement.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "spread", f"in_top{k}"])
        for name, spread in zip(FEATURE_COLUMNS, table.spread):
            w.writerow([name, repr(float(spread)), agreement[name]])
    _dump_json(target / "topk.json", {"k": k, "detectors": [
        {"detector": label, "top": feats} for label, feats in table.top_k(k)]})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="standardize, isolate, cross-evaluate and report")
    run.add_argument("--config", required=True, metavar="PATH")
    run.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, help="master seed (overrides the config)")
    run.add_argument("--repetitions", type=int)
    run.add_argument("--workflow", choices=[k.value for k in WorkflowKind])
    run.add_argument("--normalize-timestamps", action="store_true",
                     help="omit wall-clock fields so identical runs give identical reports")

    syn = sub.add_parser("synth", help="generate a synthetic corpus from a manifest")
    syn.add_argument("manifest", metavar="MANIFEST")
    syn.add_argument("--out", required=True, metavar="DIR")

    imp = sub.add_parser("importance", help="feature-importance comparison across detectors")
    imp.add_argument("models", nargs="+", metavar="MODEL")
    imp.add_argument("--out", required=True, metavar="DIR")
    imp.add_argument("-k", type=int, default=6, help="features listed per detector")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed, args.repetitions, args.workflow,
                       args.normalize_timestamps)
    if args.command == "synth":
        return cmd_synth(args.manifest, args.out)
    return cmd_importance(args.models, args.out, args.k)
