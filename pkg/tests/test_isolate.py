import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xflow.flow_model import DatasetDescriptor, Family, Label, PortCategory, StandardSample
from xflow.isolate import CorpusError, GranularityMap, dump_grid_csv, isolate
from xflow.standardize import ConfigError, StandardizedDataset


def std(net, labels):
    samples = [
        StandardSample(True, False, PortCategory.DYNAMIC, PortCategory.WELL_KNOWN, 1.0, True,
                       i, 0, i, 1, 0, 1, lab, net, sample_id=net * 10**9 + i)
        for i, lab in enumerate(labels)
    ]
    return StandardizedDataset(DatasetDescriptor(net, f"n{net}"), samples, {})


B = Label.benign()


def mal(cls, fam="Other"):
    return Label.malicious(cls, fam)


def test_sparse_layout(sparse_corpus):
    N, M = sparse_corpus
    assert M.class_index == ["botnet", "portscan", "dos"]
    assert M.shape == (3, 3)
    assert len(N[1]) > 0 and len(N[2]) == 0 and len(N[3]) > 0
    assert M.non_empty_cells() == [(2, 1), (2, 2), (3, 1), (3, 3)]
    assert all(len(M.cell(1, c)) == 0 for c in (1, 2, 3))


def test_default_columns_are_lexicographic():
    _, M = isolate([std(1, [B, mal("zeta"), mal("alpha")]), std(2, [mal("mid")])])
    assert M.class_index == ["alpha", "mid", "zeta"]
    assert M.column("mid") == 2 and M.class_name(3) == "zeta"


def test_all_benign_corpus_rejected():
    with pytest.raises(CorpusError):
        isolate([std(1, [B] * 5)])


def test_no_benign_anywhere_rejected():
    with pytest.raises(CorpusError):
        isolate([std(1, [mal("a")]), std(2, [mal("b")])])


def test_duplicate_network_rejected():
    with pytest.raises(CorpusError):
        isolate([std(1, [B, mal("a")]), std(1, [B])])


def test_benign_only_plus_malicious_only_is_valid():
    N, M = isolate([std(1, [B] * 3), std(2, [mal("a")] * 2)])
    assert len(N[1]) == 3 and len(M.cell(2, 1)) == 2


def _toy():
    labels1 = [B] * 6 + [mal("syn", "DoS")] * 3 + [mal("udp", "DoS")] * 2 + [mal("rbot", "Botnet")] * 2
    labels2 = [B] * 2 + [mal("syn", "DoS")] * 3 + [mal("udp", "DoS")] * 2
    return [std(1, labels1), std(2, labels2)]  # 20 samples


def test_merge_reduces_mu_and_sums_cells():
    data = _toy()
    _, plain = isolate(data)
    g = GranularityMap({"syn": "flood", "udp": "flood"})
    _, merged = isolate(data, g)
    assert merged.mu == plain.mu - 1
    for net in (1, 2):
        expected = len(plain.cell(net, plain.column("syn"))) + len(plain.cell(net, plain.column("udp")))
        assert len(merged.cell(net, merged.column("flood"))) == expected
    assert merged.family_of["flood"] is Family.DOS


def test_merging_mixed_families_falls_back_to_other():
    _, M = isolate(_toy(), GranularityMap({"syn": "any", "rbot": "any"}))
    assert M.family_of["any"] is Family.OTHER


def test_merge_target_colliding_with_unmerged_class_rejected():
    with pytest.raises(ConfigError):
        isolate(_toy(), GranularityMap({"syn": "udp"}))


def test_drop_below_empties_small_cells():
    N, M = isolate(_toy(), GranularityMap(drop_below=3))
    assert len(M.cell(1, M.column("rbot"))) == 0
    assert M.dropped == {(1, M.column("rbot")): 2, (1, M.column("udp")): 2, (2, M.column("udp")): 2}
    total = N.total() + M.total() + sum(M.dropped.values())
    assert total == 20


@given(st.dictionaries(st.sampled_from("abcdef"), st.sampled_from("abcdefxy"), max_size=6))
def test_merge_resolution_is_idempotent(merges):
    try:
        g = GranularityMap(merges)
    except ConfigError:
        # only chained maps are rejected
        assert set(merges.values()) & {k for k, v in merges.items() if k != v}
        return
    for c in "abcdefxyz":
        assert g.resolve(g.resolve(c)) == g.resolve(c)


def test_isolating_twice_with_same_map_is_stable():
    g = GranularityMap({"syn": "flood", "udp": "flood"})
    _, a = isolate(_toy(), g)
    _, b = isolate(_toy(), g)
    assert a.class_index == b.class_index and (a.occupancy() == b.occupancy()).all()


@given(st.lists(st.lists(st.sampled_from(["b", "x", "y", "z"]), min_size=1, max_size=15), min_size=1, max_size=4))
def test_partition_property(nets):
    data = [std(i + 1, [B if c == "b" else mal(c) for c in labels]) for i, labels in enumerate(nets)]
    flat = [c for labels in nets for c in labels]
    if "b" not in flat or not set(flat) - {"b"}:
        with pytest.raises(CorpusError):
            isolate(data)
        return
    N, M = isolate(data)
    assert M.shape == (len(nets), len(set(flat) - {"b"}))
    assert N.total() + M.total() == len(flat)
    ids = np.concatenate([p.ids for p in N.pools.values()] + [t.ids for t in M.grid.values()])
    assert len(set(ids.tolist())) == len(flat)
    for (net, col), t in M.grid.items():
        assert (t.origin == net).all() and (t.attack_class == M.class_name(col)).all()
    for net, pool in N.pools.items():
        assert (~pool.malicious).all() and (pool.origin == net).all()


def test_grid_dump(tmp_path, sparse_corpus):
    N, M = sparse_corpus
    p = tmp_path / "grid.csv"
    dump_grid_csv(p, M, N)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["network", "benign", "botnet", "portscan", "dos"]
    assert rows[2][0] == "2" and rows[2][1] == "0" and rows[2][4] == "0"


def test_class_order_rejects_duplicates():
    with pytest.raises(ConfigError):
        GranularityMap(class_order=("a", "a"))
