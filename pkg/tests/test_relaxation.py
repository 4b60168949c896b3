import numpy as np
import pytest

from conftest import all_labelings, random_model
from partialopt.energy import EnergyModel, evaluate
from partialopt.errors import InvalidInputError
from partialopt.relaxation import (IndexSet, build_constraints, build_spec, check_feasible, embed,
                                   export_triplets, restrict)


def triple():
    return EnergyModel.from_terms([2, 2, 2], {(0, 1, 2): np.arange(8.0)})


def test_pairwise_blp_equals_flp():
    f = EnergyModel.from_terms([2, 3, 2], {(0, 1): np.zeros(6), (1, 2): np.ones(6)})
    blp, flp = build_spec(f, "blp"), build_spec(f, "flp")
    assert set(blp.pairs) == set(flp.pairs)
    assert blp.model.hyperedges == flp.model.hyperedges


def test_blp_triple_couplings():
    rel = build_spec(triple(), "blp")
    norms = [(D, C) for D, C in rel.pairs if D == ()]
    order1 = [(D, C) for D, C in rel.pairs if len(D) == 1]
    assert sorted(norms) == sorted([((), (0,)), ((), (1,)), ((), (2,)), ((), (0, 1, 2))])
    assert sorted(order1) == [((0,), (0, 1, 2)), ((1,), (0, 1, 2)), ((2,), (0, 1, 2))]
    assert len(rel.pairs) == 7
    assert rel.has_order1


def test_flp_triple_closure():
    f = triple()
    rel = build_spec(f, "flp")
    for C in [(0, 1), (0, 2), (1, 2)]:
        assert rel.model.has(C) and np.all(rel.model.table(C) == 0)
        assert not f.has(C)
    # every proper subset pair: 7 non-empty sets, sum over C of (2^|C| - 1)
    assert len(rel.pairs) == 3 * 1 + 3 * 3 + 7
    for D, C in rel.pairs:
        assert set(D) < set(C)


def test_two_node_row_count():
    f = EnergyModel.from_terms([2, 2], {(0, 1): np.zeros(4)})
    cm = build_constraints(build_spec(f, "blp"))
    assert cm.shape[0] == 7
    assert cm.shape[1] == 1 + 2 + 2 + 4


def test_row_structure():
    rng = np.random.default_rng(0)
    f = random_model(rng, 4, 3, n_terms=3)
    rel = build_spec(f, "flp")
    cm = rel.constraints
    idx = rel.index
    A = cm.A.tocsr()
    for r, (D, C, xD) in enumerate(cm.rows):
        row = A.getrow(r)
        width = int(np.prod([f.label_counts[s] for s in C if s not in D]))
        assert row.nnz == width + 1
        assert row[0, idx.coord(D, xD)] == -1
        ones = [j for j, v in zip(row.indices, row.data) if v == 1]
        for j in ones:
            C2, xC = idx.entry(j)
            assert C2 == C
            assert tuple(xC[C.index(s)] for s in D) == tuple(xD)


def test_embed_one_node():
    f = EnergyModel.from_terms([2], {})
    assert list(embed([0], IndexSet.of(f))) == [1, 1, 0]


def test_embed_matches_energy_and_rows():
    rng = np.random.default_rng(1)
    f = random_model(rng, 4, 3, n_terms=4)
    for kind in ("blp", "flp"):
        rel = build_spec(f, kind)
        c = rel.costs(rel.align(f))
        for _ in range(20):
            x = rng.integers(0, 3, size=4)
            mu = embed(x, rel.index)
            assert c @ mu == pytest.approx(evaluate(f, x))
            assert np.all(rel.constraints.A @ mu == 0)
            assert check_feasible(mu, rel.constraints) == (True, 0.0)
            for C in rel.index.hyperedges:
                assert mu[rel.index.block(C)].sum() == 1


def test_embed_rejects_bad_labeling():
    idx = IndexSet.of(EnergyModel.from_terms([2, 2], {}))
    with pytest.raises(InvalidInputError):
        embed([0, 2], idx)
    with pytest.raises(InvalidInputError):
        embed([0], idx)


def test_feasibility_examples():
    rng = np.random.default_rng(2)
    f = random_model(rng, 3, 3)
    rel = build_spec(f, "flp")
    idx = rel.index
    mu = np.zeros(idx.size)
    for C in idx.hyperedges:
        blk = idx.block(C)
        mu[blk] = 1.0 / (blk.stop - blk.start)
    ok, res = check_feasible(mu, rel.constraints)
    assert ok and res < 1e-12
    half = mu.copy()
    half[0] = 0.5
    assert not check_feasible(half, rel.constraints)[0]
    neg = mu.copy()
    neg[1] = -1e-3
    assert not check_feasible(neg, rel.constraints)[0]


def test_mixtures_feasible_and_nested():
    rng = np.random.default_rng(3)
    f = random_model(rng, 4, 2, max_order=3, n_terms=4)
    flp = build_spec(f, "flp")
    blp = build_spec(f, "blp")
    X = all_labelings(f.label_counts)
    for _ in range(20):
        w = rng.dirichlet(np.ones(5))
        pts = rng.choice(len(X), size=5)
        mu = sum(wi * embed(X[i], flp.index) for wi, i in zip(w, pts))
        assert check_feasible(mu, flp.constraints)[0]
        assert check_feasible(restrict(mu, flp.index, blp.index), blp.constraints)[0]


def test_flp_feasible_implies_blp_feasible_on_lp_vertices():
    # vertices of the FLP polytope from random objectives
    from partialopt import lp
    rng = np.random.default_rng(4)
    f = random_model(rng, 4, 2, n_terms=4)
    flp = build_spec(f, "flp")
    blp = build_spec(f, "blp")
    for _ in range(10):
        sol = lp.solve(flp.problem(rng.normal(size=flp.index.size)))
        assert sol.optimal
        assert check_feasible(restrict(sol.x, flp.index, blp.index), blp.constraints, 1e-7)[0]


def test_index_roundtrip():
    rng = np.random.default_rng(5)
    f = random_model(rng, 3, 3)
    idx = build_spec(f, "flp").index
    seen = set()
    for i, (C, xC) in enumerate(idx.entries()):
        assert idx.coord(C, xC) == i
        assert idx.entry(i) == (C, xC)
        seen.add(i)
    assert seen == set(range(idx.size))
    assert idx.entry(0) == ((), ())


def test_export(tmp_path):
    f = EnergyModel.from_terms([2, 2], {(0, 1): np.zeros(4)})
    cm = build_constraints(build_spec(f, "blp"))
    path = tmp_path / "A.txt"
    export_triplets(cm, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"7 9 {cm.A.nnz}"
    assert len(lines) == 1 + cm.A.nnz
    meta = (tmp_path / "A.txt.rows").read_text().splitlines()
    assert len(meta) == 7 and meta[0].startswith("0 D=[]")
