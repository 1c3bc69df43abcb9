import csv
import json
from pathlib import Path

import pytest

from conftest import TEMPLATES, write_run_config
from xflow.cli import EXIT_CONFIG, EXIT_OK, EXIT_PIPELINE, main
from xflow.config import CONFIG_SCHEMA
from xflow.synth import corpus_from_layout, manifest_dict

ROOT = Path(__file__).resolve().parents[1]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_published_schema_matches_loader():
    assert json.loads((ROOT / "docs" / "config.schema.json").read_text()) == CONFIG_SCHEMA


def test_run_happy_path(tmp_path):
    cfg = write_run_config(tmp_path, {1: ["botnet", "dos"], 2: ["dos", "scan"]}, {1: 200, 2: 200},
                           workflow={"kind": ["baseline", "extension"]}, save_detectors=True)
    out = tmp_path / "out"
    assert main(["--quiet", "run", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "ok" and "timings_s" in report
    assert {"grid.csv", "counters.csv", "table_baseline.csv", "table_extension.csv"} <= {p.name for p in out.iterdir()}
    header, *rows = _rows(out / "table_baseline.csv")
    assert header == ["origin", "Botnet", "DoS", "Other", "avg_fpr"] and len(rows) == 2
    assert (out / "detectors").is_dir()


def test_run_with_explicit_contexts(tmp_path):
    ctx = [{"o": 1, "t": [1], "tau": ["dos"], "e": [1, 2], "eps": ["dos", "dos"]}]
    cfg = write_run_config(tmp_path, {1: ["dos"], 2: ["dos"]}, {1: 100, 2: 100}, contexts=ctx)
    assert main(["--quiet", "run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["contexts"][0]["type"]["code"] == "C3"


def test_contexts_and_workflow_together_is_config_error(tmp_path):
    ctx = [{"o": 1, "t": [1], "tau": [1], "e": [1], "eps": [1]}]
    cfg = write_run_config(tmp_path, {1: ["dos"], 2: []}, {1: 50, 2: 50}, contexts=ctx,
                           workflow={"kind": "baseline"})
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG


def test_missing_csv_is_config_error(tmp_path, caplog):
    cfg = write_run_config(tmp_path, {1: ["dos"], 2: []}, {1: 50, 2: 50})
    (tmp_path / "data" / "D2.csv").unlink()
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "D2.csv" in caplog.text


def test_pipeline_failure_exit_code(tmp_path):
    # network 2 carries nothing malicious, so a baseline from it has no cells
    cfg = write_run_config(tmp_path, {1: ["dos"], 2: []}, {1: 50, 2: 50},
                           workflow={"kind": "baseline", "origins": [2]})
    out = tmp_path / "o"
    assert main(["--quiet", "run", "--config", str(cfg), "--out", str(out)]) == EXIT_PIPELINE
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "error"


def test_bad_arguments_exit_2():
    assert main(["run"]) == EXIT_CONFIG
    assert main(["nonsense"]) == EXIT_CONFIG


def _sparse_manifest(path, n_networks=3):
    layout = {1: [], 2: ["botnet", "portscan"], 3: ["botnet", "dos"]}
    specs = corpus_from_layout(layout, TEMPLATES, {1: 40, 3: 40}, 20)[:n_networks]
    path.write_text(json.dumps(manifest_dict(specs, 7)))
    return path


def test_synth_sparse_manifest(tmp_path):
    m = _sparse_manifest(tmp_path / "m.json")
    assert main(["--quiet", "synth", str(m), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["--quiet", "synth", str(m), "--out", str(tmp_path / "b")]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert names == ["D1.csv", "D2.csv", "D3.csv"]
    for n in names + ["manifest.json"]:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_synth_invalid_manifests(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"manifest_version": 1, "seed": 0, "networks": []}))
    assert main(["synth", str(empty), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["synth", str(tmp_path / "absent.json"), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    single = _sparse_manifest(tmp_path / "one.json", n_networks=1)
    assert main(["synth", str(single), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


@pytest.fixture(scope="module")
def saved_detectors(tmp_path_factory):
    root = tmp_path_factory.mktemp("imp")
    cfg = write_run_config(root, {1: ["dos"], 2: ["dos"], 3: ["dos"], 4: ["dos"]},
                           {n: 80 for n in range(1, 5)}, repetitions=1,
                           workflow={"kind": "extension", "origins": [1]}, save_detectors=True)
    assert main(["--quiet", "run", "--config", str(cfg), "--out", str(root / "out")]) == EXIT_OK
    return sorted((root / "out" / "detectors").rglob("*.json"))


def test_importance_four_detectors(tmp_path, saved_detectors):
    assert len(saved_detectors) == 4
    assert main(["importance", *map(str, saved_detectors), "--out", str(tmp_path), "-k", "6"]) == EXIT_OK
    header, *rows = _rows(tmp_path / "importance.csv")
    assert len(header) == 13 and len(rows) == 4
    for r in rows:
        assert sum(float(v) for v in r[1:]) == pytest.approx(1.0, abs=1e-9)
    topk = json.loads((tmp_path / "topk.json").read_text())
    assert topk["k"] == 6 and all(len(d["top"]) == 6 for d in topk["detectors"])


def test_importance_single_detector(tmp_path, saved_detectors):
    assert main(["importance", str(saved_detectors[0]), "--out", str(tmp_path)]) == EXIT_OK
    assert len(_rows(tmp_path / "importance.csv")) == 2
    header, *rows = _rows(tmp_path / "agreement.csv")
    assert header == ["feature", "spread", "in_top6"] and len(rows) == 12
    assert all(float(r[1]) == 0.0 for r in rows)


def test_importance_unreadable_model(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["importance", str(bad), "--out", str(tmp_path / "o")]) == EXIT_PIPELINE
