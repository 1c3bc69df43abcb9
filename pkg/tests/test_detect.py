import numpy as np
import pytest

import xflow.detect as detect
from conftest import build_corpus
from xflow.contextualize import ContextSpec, compose
from xflow.detect import (
    Detector,
    DetectorEnsemble,
    SelectionError,
    feature_importance_report,
    select_detector_exploratory,
    train_ensemble,
)
from xflow.flow_model import FEATURE_COLUMNS, SampleTable
from xflow.forest import HyperParams, TrainingError, train_forest

HP = HyperParams(n_trees=15)


@pytest.fixture(scope="module")
def shared_botnet():
    return build_corpus({1: ["botnet", "dos"], 2: ["botnet", "scan"]}, {1: 400, 2: 100}, attack_count=80, seed=3)


def test_one_detector_per_training_cell(shared_botnet):
    N, M = shared_botnet
    b = M.column("botnet")
    pair = compose(N, M, ContextSpec(1, (1, 2), (b, b), (1,), (b,)))
    ens = train_ensemble(pair.T, HP, seed=1)
    assert ens.ids == [(1, b), (2, b)]
    assert ens.routing == {"botnet": (1, b)}
    assert all(ens.status[i] == "ok" for i in ens.ids)
    for d in ens.detectors:
        assert d.origin == 1 and '"cell":[%d,%d]' % d.id in d.train_provenance


def test_routing_prefers_exact_cell(shared_botnet):
    N, M = shared_botnet
    b = M.column("botnet")
    ens = train_ensemble(compose(N, M, ContextSpec(1, (1, 2), (b, b), (1,), (b,))).T, HP, seed=1)
    assert ens.route((2, b), "botnet") == (2, b)
    assert ens.route((3, b), "botnet") == (1, b)
    assert ens.route((2, 9), "unknown") is None


def test_failed_detector_does_not_stop_siblings(shared_botnet, monkeypatch):
    N, M = shared_botnet
    b, d = M.column("botnet"), M.column("dos")
    T = compose(N, M, ContextSpec(1, (1, 1), (b, d), (1,), (b,))).T
    real = detect.train_detector

    def flaky(benign, malicious, hp, seed):
        if (malicious.attack_class == "dos").all():
            raise TrainingError("boom")
        return real(benign, malicious, hp, seed)

    monkeypatch.setattr(detect, "train_detector", flaky)
    ens = train_ensemble(T, HP, seed=0)
    assert ens.ids == [(1, b)]
    assert ens.status[(1, d)].startswith("error")


def test_cache_shares_models(shared_botnet):
    N, M = shared_botnet
    b = M.column("botnet")
    T = compose(N, M, ContextSpec(1, (1,), (b,), (1,), (b,), seed=2)).T
    cache = {}
    a = train_ensemble(T, HP, 7, cache)
    again = train_ensemble(T, HP, 7, cache)
    assert a.detectors[0].model is again.detectors[0].model
    assert len(cache) == 1


def _ensemble(shared_botnet, cells):
    N, M = shared_botnet
    spec = ContextSpec(1, [c[0] for c in cells], [c[1] for c in cells], (1,), (cells[0][1],))
    pair = compose(N, M, spec)
    return pair, train_ensemble(pair.T, HP, seed=4)


def _table(X, malicious, cls="", base=0):
    n = len(X)
    return SampleTable(X=X, ids=np.arange(base, base + n, dtype=np.int64),
                       malicious=np.full(n, malicious), attack_class=np.full(n, cls, dtype=object),
                       origin=np.ones(n, dtype=np.int64))


def _spiky(rng, n, col):
    X = rng.uniform(0, 10, size=(n, 12))
    if col is not None:
        X[:, col] += 100
    return X


def test_exploratory_picks_matching_detector():
    rng = np.random.default_rng(0)
    benign = _table(_spiky(rng, 200, None), False)
    a = detect.train_detector(benign, _table(_spiky(rng, 100, 0), True, "a"), HP, 1)
    b = detect.train_detector(benign, _table(_spiky(rng, 100, 1), True, "b"), HP, 2)
    ens = DetectorEnsemble(1, [Detector((1, 1), "a", 1, a, ""), Detector((1, 2), "b", 1, b, "")])
    # unseen class that only shares the spike learned by the second detector
    unknown = _table(_spiky(rng, 50, 1), True, "new", base=1000)
    probe = _table(_spiky(rng, 100, None), False, base=2000)
    chosen, reserved = select_detector_exploratory(ens, unknown, probe, 0.2, seed=1)
    assert chosen == (1, 2)
    assert len(reserved) == 10 and set(reserved.tolist()) <= set(unknown.ids.tolist())


def test_single_detector_is_selected(shared_botnet):
    pair, ens = _ensemble(shared_botnet, [(1, 1)])
    chosen, _ = select_detector_exploratory(ens, pair.E.malicious[(1, 1)], pair.E.benign)
    assert chosen == ens.ids[0]


def test_tie_goes_to_lowest_id(shared_botnet):
    pair, ens = _ensemble(shared_botnet, [(1, 1)])
    d = ens.detectors[0]
    twin = DetectorEnsemble(1, [Detector((2, 5), "x", 1, d.model, "p"), Detector((2, 3), "y", 1, d.model, "p")])
    chosen, _ = select_detector_exploratory(twin, pair.E.malicious[(1, 1)], pair.E.benign)
    assert chosen == (2, 3)


def test_empty_reserve_rejected(shared_botnet):
    pair, ens = _ensemble(shared_botnet, [(1, 1)])
    with pytest.raises(SelectionError, match="larger"):
        select_detector_exploratory(ens, pair.E.malicious[(1, 1)], pair.E.benign, reserve_frac=0.0)
    with pytest.raises(SelectionError):
        select_detector_exploratory(ens, SampleTable.empty(), pair.E.benign)


def test_detector_file_round_trip(tmp_path, shared_botnet):
    _, ens = _ensemble(shared_botnet, [(1, 1)])
    d = ens.detectors[0]
    d.save(tmp_path / "d.json")
    back = Detector.load(tmp_path / "d.json")
    assert back.id == d.id and back.label == d.label
    assert back.model.dumps() == d.model.dumps()


def _planted(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 100, size=(300, 12))
    y = (X[:, 8] > 50).astype(int)
    return train_forest(X, y, HyperParams(n_trees=20), seed)


def test_importance_report_shapes():
    m = _planted(0)
    one = feature_importance_report([Detector((1, 1), "a", 1, m, "")])
    assert one.values.shape == (1, 12) and (one.spread == 0).all()
    two = feature_importance_report([Detector((1, 1), "a", 1, m, ""), Detector((2, 1), "a", 1, _planted(0), "")])
    assert (two.values[0] == two.values[1]).all()
    assert len(two.top_k(6)) == 2 and all(len(f) == 6 for _, f in two.top_k(6))


def test_planted_feature_ranks_first():
    dets = [Detector((i, 1), "a", 1, _planted(i), "") for i in range(1, 5)]
    table = feature_importance_report(dets)
    assert (table.values.argmax(axis=1) == FEATURE_COLUMNS.index("tot_bytes")).all()
    assert table.agreement(1)["tot_bytes"] == 4
