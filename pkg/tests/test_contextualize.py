import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xflow.contextualize import (
    ContextError,
    ContextSpec,
    InconsistentContext,
    Relation,
    build_collections,
    classify_context,
    compose,
    context_code,
)

# Condition rows copied from the context table: (o=t, o=e, t=e, tau=eps) -> type
TABLE_ROWS = {
    "C1": (True, True, True, True),
    "C2": (True, True, True, False),
    "C3": (True, False, False, True),
    "C4": (True, False, False, False),
    "C5": (False, True, False, True),
    "C6": (False, True, False, False),
    "C7": (False, False, True, True),
    "C8": (False, False, True, False),
    "C9": (False, False, False, True),
    "C10": (False, False, False, False),
}


def _pad(a, b):
    """Two equal-length arrays whose element sets are exactly ``a`` and ``b``."""
    a, b = sorted(a), sorted(b)
    n = max(len(a), len(b))
    return [a[i % len(a)] for i in range(n)], [b[i % len(b)] for i in range(n)]


def spec_from_sets(o, t, e, tau, eps, **kw):
    t_arr, tau_arr = _pad(t, tau)
    e_arr, eps_arr = _pad(e, eps)
    return ContextSpec(o, t_arr, tau_arr, e_arr, eps_arr, **kw)


def test_two_network_training_example_is_c5():
    ct = classify_context(ContextSpec(3, (2, 3), (1, 1), (3,), (1,)))
    assert ct.name == "C5"
    assert ct.relations["t_e"] is Relation.SUPERSET


def test_all_equal_is_c1():
    assert classify_context(ContextSpec(1, (1,), (1,), (1,), (1,))).name == "C1"


@pytest.mark.parametrize("code, row", TABLE_ROWS.items())
def test_table_rows(code, row):
    o_t, o_e, t_e, tau_eps = row
    t = {1} if o_t else {2}
    e = {1} if o_e else (set(t) if t_e else {3})
    tau, eps = {1}, ({1} if tau_eps else {2})
    assert classify_context(spec_from_sets(1, t, e, tau, eps)).name == code


def test_impossible_patterns_rejected():
    rejected = 0
    for pattern in itertools.product([True, False], repeat=4):
        if pattern in TABLE_ROWS.values():
            assert f"C{context_code(*pattern)}" == [k for k, v in TABLE_ROWS.items() if v == pattern][0]
        else:
            with pytest.raises(InconsistentContext):
                context_code(*pattern)
            rejected += 1
    assert rejected == 6


def _subsets(universe):
    return [set(c) for r in range(1, len(universe) + 1) for c in itertools.combinations(universe, r)]


def test_brute_force_enumeration():
    oracle = {v: k for k, v in TABLE_ROWS.items()}
    seen = set()
    for size in (1, 2, 3):
        universe = range(1, size + 1)
        subsets = _subsets(universe)
        for o in universe:
            for t in subsets:
                for e in subsets:
                    for tau in subsets:
                        for eps in subsets:
                            pattern = ({o} == t, {o} == e, t == e, tau == eps)
                            assert pattern in oracle
                            got = classify_context(spec_from_sets(o, t, e, tau, eps)).name
                            assert got == oracle[pattern]
                            seen.add(got)
    assert seen == set(TABLE_ROWS)


cells = st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=6)


@given(o=st.integers(1, 4), train=cells, ev=cells, data=st.data())
def test_classification_ignores_order_and_duplicates(o, train, ev, data):
    base = ContextSpec(o, [c[0] for c in train], [c[1] for c in train], [c[0] for c in ev], [c[1] for c in ev])
    shuffled = data.draw(st.permutations(train)) + [data.draw(st.sampled_from(train))]
    other = ContextSpec(o, [c[0] for c in shuffled], [c[1] for c in shuffled], base.e, base.eps)
    assert classify_context(base).code == classify_context(other).code
    assert base.train_key() == other.train_key()


@pytest.mark.parametrize("kw", [
    dict(t=(), tau=()), dict(t=(1, 2), tau=(1,)), dict(split_n=(0.9, 0.2)),
    dict(split_m=(0, 1)), dict(seed=-1),
])
def test_spec_validation(kw):
    args = dict(o=1, t=(1,), tau=(1,), e=(1,), eps=(1,))
    args.update(kw)
    with pytest.raises(ContextError):
        ContextSpec(**args)


def test_split_sizes_example(sparse_corpus):
    N, M = sparse_corpus
    spec = ContextSpec(1, (2,), (1,), (3,), (1,), split_n=(0.8, 0.2), split_m=(0.7, 0.3), seed=4)
    pair = compose(N, M, spec)
    assert len(pair.T.benign) == 240 and len(pair.E.benign) == 60
    assert pair.T.cells == [(2, 1)] and len(pair.T.malicious[(2, 1)]) == 42
    assert pair.E.cells == [(3, 1)] and len(pair.E.malicious[(3, 1)]) == 18
    assert pair.type.name == "C9"
    assert (pair.T.benign.origin == 1).all() and (pair.E.benign.origin == 1).all()


def test_shared_cell_is_partitioned_once(sparse_corpus):
    N, M = sparse_corpus
    # 60 samples in M3^1; the cell sits on both sides
    spec = ContextSpec(3, (3,), (1,), (3,), (1,), seed=9)
    pair = compose(N, M, spec)
    t_ids = set(pair.T.malicious[(3, 1)].ids.tolist())
    e_ids = set(pair.E.malicious[(3, 1)].ids.tolist())
    assert not t_ids & e_ids
    assert len(t_ids) + len(e_ids) == len(M.cell(3, 1))
    assert not set(pair.T.all_ids().tolist()) & set(pair.E.all_ids().tolist())


def test_c1_over_hundred_sample_cell():
    from conftest import build_corpus
    N, M = build_corpus({1: ["dos"], 2: []}, {1: 50, 2: 10}, attack_count=100, seed=2)
    pair = compose(N, M, ContextSpec(1, (1,), (1,), (1,), (1,), seed=1))
    t, e = pair.T.malicious[(1, 1)], pair.E.malicious[(1, 1)]
    assert not set(t.ids.tolist()) & set(e.ids.tolist())
    assert len(t) + len(e) == 100 and len(t) == 80


def test_empty_cell_is_named(sparse_corpus):
    N, M = sparse_corpus
    with pytest.raises(ContextError, match=r"M_2\^3"):
        compose(N, M, ContextSpec(1, (2,), (3,), (2,), (3,)))


def test_empty_benign_origin(sparse_corpus):
    N, M = sparse_corpus
    with pytest.raises(ContextError, match="N_2"):
        compose(N, M, ContextSpec(2, (2,), (1,), (2,), (1,)))


def test_compose_is_deterministic(sparse_corpus):
    N, M = sparse_corpus
    spec = ContextSpec(3, (2, 3), (1, 1), (3,), (3,), seed=17)
    a, b = compose(N, M, spec), compose(N, M, spec)
    assert np.array_equal(a.T.all_ids(), b.T.all_ids())
    assert np.array_equal(a.E.all_ids(), b.E.all_ids())
    c = compose(N, M, ContextSpec(3, (2, 3), (1, 1), (3,), (3,), seed=18))
    assert not np.array_equal(a.T.all_ids(), c.T.all_ids())


def test_provenance_tags(sparse_corpus):
    N, M = sparse_corpus
    pair = compose(N, M, ContextSpec(3, (2, 3), (1, 1), (2,), (2,), seed=1))
    tags = pair.T.provenance()
    assert {tag for tag in tags.values() if tag[0] == "N"} == {("N", 3)}
    assert {tag for tag in tags.values() if tag[0] == "M"} == {("M", 2, 1), ("M", 3, 1)}


def test_build_collections_dedupes_training_sets(sparse_corpus):
    N, M = sparse_corpus
    s1 = ContextSpec(3, (3,), (1,), (3,), (1,), seed=3)
    s2 = ContextSpec(3, (3,), (1,), (2,), (1,), seed=3)
    s3 = ContextSpec(3, (3, 3), (1, 3), (3,), (3,), seed=3)
    col = build_collections(N, M, [s1, s2, s3])
    assert len(col.train) == 2 and len(col.evals) == 3
    assert col.train_key[0] == col.train_key[1]
    assert build_collections(N, M, []).train == {}


def test_build_collections_continues_after_error(sparse_corpus):
    N, M = sparse_corpus
    good = ContextSpec(3, (3,), (1,), (3,), (1,))
    bad = ContextSpec(3, (2,), (3,), (2,), (3,))
    col = build_collections(N, M, [bad, good])
    assert col.status[0].startswith("error") and col.status[1] == "ok"
    assert list(col.evals) == [1]


def test_from_dict_accepts_class_names(sparse_corpus):
    _, M = sparse_corpus
    spec = ContextSpec.from_dict({"o": [3], "t": [2, 3], "tau": ["botnet", "dos"], "e": [3], "eps": [1]}, M)
    assert spec.tau == (1, 3)
    assert ContextSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ContextError):
        ContextSpec.from_dict({"o": [1, 2], "t": [1], "tau": [1], "e": [1], "eps": [1]})
