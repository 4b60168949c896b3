import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import all_labelings, brute_energy, random_model
from partialopt.energy import (EnergyModel, InstanceSeedSpec, dumps, energies, evaluate,
                               generate, load, loads, posiform_windows, reparametrize, save)
from partialopt.errors import HEMParseError, InvalidInputError
from partialopt.relaxation import build_spec


def test_constant_only():
    f = EnergyModel.from_terms([2, 3], {(): 5.0})
    assert evaluate(f, [1, 2]) == 5.0
    assert evaluate(f, [0, 0]) == 5.0


def test_additive_unaries():
    f = EnergyModel.from_terms([2, 2], {(0,): [0, 1], (1,): [0, 2], (0, 1): np.zeros(4)})
    assert evaluate(f, [1, 1]) == 3.0


def test_evaluate_matches_loop_summation():
    rng = np.random.default_rng(3)
    for _ in range(5):
        f = random_model(rng, 3, 2, max_order=3, integer=False)
        for x in all_labelings(f.label_counts):
            assert evaluate(f, x) == pytest.approx(brute_energy(f, x), abs=1e-12)


def test_vectorized_energies_agree():
    rng = np.random.default_rng(4)
    f = random_model(rng, 4, 3)
    X = np.array(all_labelings(f.label_counts))
    assert np.allclose(energies(f, X), [evaluate(f, x) for x in X])


def test_canonical_layout():
    f = EnergyModel.from_terms([2, 3], {(0, 1): np.arange(6)})
    assert f.hyperedges == ((), (0,), (1,), (0, 1))
    # last node's label varies fastest
    assert f.table((0, 1))[1, 0] == 3.0
    assert evaluate(f, [1, 2]) == 5.0


@pytest.mark.parametrize("x", [[0], [0, 0, 0], [2, 0], [-1, 0], [0.5, 0]])
def test_bad_labeling(x):
    f = EnergyModel.from_terms([2, 2], {})
    with pytest.raises(InvalidInputError):
        evaluate(f, x)


def test_invalid_models():
    with pytest.raises(InvalidInputError):
        EnergyModel.from_terms([2, 2], {(1, 0): np.zeros(4)})
    with pytest.raises(InvalidInputError):
        EnergyModel.from_terms([2, 2], {(0, 1): np.zeros(3)})
    with pytest.raises(InvalidInputError):
        EnergyModel.from_terms([2, 2], {(0, 2): np.zeros(4)})
    with pytest.raises(InvalidInputError):
        EnergyModel.from_terms([2], {(0,): [0.0, np.inf]})
    with pytest.raises(InvalidInputError):
        EnergyModel.from_terms([0], {})


def test_tables_read_only():
    f = EnergyModel.from_terms([2], {(0,): [1, 2]})
    with pytest.raises(ValueError):
        f.table((0,))[0] = 7


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10 ** 6))
def test_evaluate_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    f = random_model(rng, 3, 2, integer=False)
    g = EnergyModel.from_terms(f.label_counts, {C: rng.normal(size=t.shape)
                                                for C, t in f.terms().items()})
    h = EnergyModel.from_terms(f.label_counts, {C: a * f.table(C) + b * g.table(C)
                                                for C in f.hyperedges})
    for x in all_labelings(f.label_counts):
        assert evaluate(h, x) == pytest.approx(a * evaluate(f, x) + b * evaluate(g, x),
                                               abs=1e-9)


# reparametrization ----------------------------------------------------

def test_reparam_zero_multipliers():
    rng = np.random.default_rng(5)
    f = random_model(rng, 3, 3)
    rel = build_spec(f, "flp")
    g = reparametrize(f, {}, rel)
    assert g == rel.align(f)


def test_reparam_single_multiplier_two_nodes():
    f = EnergyModel.from_terms([2, 2], {(0,): [1, 4], (1,): [2, 0], (0, 1): [0, 3, 5, 1]})
    rel = build_spec(f, "blp")
    c = 2.5
    phi = {((0,), (0, 1)): np.array([c, 0.0])}
    g = reparametrize(f, phi, rel)
    # f_s(0) gains c, f_st(0, .) loses c
    assert g.table((0,))[0] == 1 + c
    assert np.allclose(g.table((0, 1))[0], [0 - c, 3 - c])
    assert np.allclose(g.table((0, 1))[1], [5, 1])
    for x in all_labelings([2, 2]):
        assert evaluate(g, x) == pytest.approx(evaluate(f, x))


def test_reparam_random_labelings():
    rng = np.random.default_rng(6)
    for kind in ("blp", "flp"):
        f = random_model(rng, 6, 3, n_terms=6, integer=False)
        rel = build_spec(f, kind)
        phi = {(D, C): rng.normal(size=tuple(f.label_counts[s] for s in D))
               for D, C in rel.pairs}
        g = reparametrize(f, phi, rel)
        scale = 1 + f.max_abs()
        for _ in range(100):
            x = rng.integers(0, 3, size=6)
            assert abs(evaluate(g, x) - evaluate(f, x)) <= 1e-9 * scale


def test_reparam_equals_matrix_form():
    rng = np.random.default_rng(7)
    f = random_model(rng, 4, 2, n_terms=3)
    rel = build_spec(f, "flp")
    A = rel.constraints
    phi_flat = rng.normal(size=A.shape[0])
    g = reparametrize(f, A.dual_dict(phi_flat), rel)
    expect = rel.costs(rel.align(f)) - A.A.T @ phi_flat
    assert np.allclose(rel.costs(g), expect)


def test_reparam_rejects_foreign_pair():
    f = EnergyModel.from_terms([2, 2], {(0, 1): np.zeros(4)})
    rel = build_spec(f, "blp")
    with pytest.raises(InvalidInputError):
        reparametrize(f, {((0,), (1,)): [1.0, 0.0]}, rel)
    with pytest.raises(InvalidInputError):
        reparametrize(f, {((0,), (0, 1)): [1.0, 0.0, 3.0]}, rel)


# generators -----------------------------------------------------------

def test_generate_deterministic():
    spec = InstanceSeedSpec("potts", rows=2, cols=2, labels=2, seed=42)
    assert dumps(generate(spec)) == dumps(generate(spec))
    other = generate(InstanceSeedSpec("potts", rows=2, cols=2, labels=2, seed=43))
    assert dumps(other) != dumps(generate(spec))


def test_potts_structure():
    f = generate(InstanceSeedSpec("potts", rows=3, cols=3, labels=3, seed=1))
    pairs = [C for C in f.hyperedges if len(C) == 2]
    assert len(pairs) == 12
    for C in pairs:
        t = f.table(C)
        assert np.all(t[~np.eye(3, dtype=bool)] == 0)
        assert np.all((-np.diag(t) >= 0) & (-np.diag(t) <= 50))
    for s in range(9):
        assert np.all((f.table((s,)) >= 0) & (f.table((s,)) <= 100))
    assert f.is_integral()


def test_full_costs_in_range():
    f = generate(InstanceSeedSpec("full", nodes=10, labels=3, seed=0))
    pairs = [C for C in f.hyperedges if len(C) == 2]
    assert pairs
    for C in pairs:
        t = f.table(C)
        assert t.min() >= 0 and t.max() <= 100


def test_posiform_degree4_windows():
    f = generate(InstanceSeedSpec("posiform-grid", rows=3, cols=3, degree=4, seed=0))
    big = [C for C in f.hyperedges if len(C) == 4]
    idx = lambda i, j: 3 * i + j
    expect = sorted(tuple(sorted((idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1))))
                    for i in range(2) for j in range(2))
    assert sorted(big) == expect
    assert f.is_binary


def test_posiform_degree3_windows():
    assert posiform_windows(2, 2, 3) == [(0, 1, 2)]
    with pytest.raises(InvalidInputError):
        posiform_windows(2, 2, 5)


def test_poly_generator():
    f = generate(InstanceSeedSpec("poly", nodes=15, degree=3, terms=20, seed=3))
    assert f.n_nodes == 15 and f.is_binary and f.order == 3
    for C in f.hyperedges:
        if len(C) >= 1:
            t = f.table(C).ravel()
            assert np.all(t[:-1] == 0)  # only the all-ones entry is set


def test_bad_generator_spec():
    with pytest.raises(InvalidInputError):
        InstanceSeedSpec("nope")
    with pytest.raises(InvalidInputError):
        InstanceSeedSpec("potts", rows=0, cols=2)


# file format ----------------------------------------------------------

def test_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    f = random_model(rng, 5, 3, integer=False)
    path = tmp_path / "m.hem"
    save(f, path)
    g = load(path)
    assert g == f


def test_round_trip_keeps_seed():
    f = generate(InstanceSeedSpec("full", rows=2, cols=2, labels=2, seed=99))
    assert loads(dumps(f)).seed == 99


def test_duplicate_hyperedge_reported_with_line():
    text = "HEM 1\nnodes 2\nlabels 2 2\nterms 2\n1 0 1 2\n1 0 3 4\n"
    with pytest.raises(HEMParseError) as exc:
        loads(text)
    assert exc.value.line == 6


def test_missing_singleton_inserted():
    text = "HEM 1\n# a comment\nnodes 3\nlabels 2 2 2\nterms 2\n0 1.5\n2 0 1 0 1 2 3 # edge\n"
    f = loads(text)
    assert f.has((2,)) and np.all(f.table((2,)) == 0)
    for x in all_labelings([2, 2, 2]):
        assert evaluate(f, x) == 1.5 + x[0] * 2 + x[1]


@pytest.mark.parametrize("text,line", [
    ("HEM 2\nnodes 1\nlabels 2\nterms 0\n", 1),
    ("HEM 1\nnodes 1\nlabels 2 2\nterms 0\n", 3),
    ("HEM 1\nnodes 2\nlabels 2 2\nterms 1\n2 1 0 1 2 3 4\n", 5),
    ("HEM 1\nnodes 2\nlabels 2 2\nterms 1\n2 0 1 1 2 3\n", 5),
    ("HEM 1\nnodes 2\nlabels 2 2\nterms 1\n1 0 x 2\n", 5),
    ("HEM 1\nnodes 2\nlabels 2 2\nterms 1\n1 5 1 2\n", 5),
    ("HEM 1\nnodes 2\nlabels 2 2\nterms 1\n1 0 1 2\n1 1 1 2\n", 6),
    ("HEM 1\nnodes 2\nlabels 2 2\nterms 2\n1 0 1 2\n", None),
    ("HEM 1\nlabels 2 2\n", 2),
])
def test_malformed_files(text, line):
    with pytest.raises(HEMParseError) as exc:
        loads(text)
    assert exc.value.line == line
