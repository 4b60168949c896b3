import itertools

import numpy as np
import pytest

from conftest import all_labelings, brute_energy, random_model
from partialopt import oracle
from partialopt.energy import EnergyModel
from partialopt.errors import InvalidInputError, OracleCapError
from partialopt.mapping import NodewiseMap


def loop_improving(f, p, strict=False):
    for x in all_labelings(f.label_counts):
        px = np.array([p.arrays[s][x[s]] for s in range(len(x))])
        ex, ep = brute_energy(f, x), brute_energy(f, px)
        if ep > ex:
            return False
        if strict and not np.array_equal(px, x) and ep >= ex:
            return False
    return True


def test_zero_energy_all_optimal():
    f = EnergyModel.from_terms([2, 3], {})
    m, X = oracle.all_optima(f)
    assert m == 0 and len(X) == 6


def test_unary_only_product_of_argmins():
    f = EnergyModel.from_terms([3, 2], {(0,): [1, 0, 0], (1,): [2, 2]})
    m, X = oracle.all_optima(f)
    assert m == 2
    assert sorted(map(tuple, X)) == [(1, 0), (1, 1), (2, 0), (2, 1)]


def test_cap():
    f = EnergyModel.from_terms([2] * 12, {})
    with pytest.raises(OracleCapError):
        oracle.all_optima(f, cap=1000)
    with pytest.raises(OracleCapError):
        oracle.check_improving(f, NodewiseMap.identity(f.label_counts), cap=1000)


def test_identity_and_map_to_optimum():
    rng = np.random.default_rng(0)
    for _ in range(10):
        f = random_model(rng, 3, 3)
        ident = NodewiseMap.identity(f.label_counts)
        assert oracle.check_improving(f, ident) and oracle.check_strict_improving(f, ident)
        _, X = oracle.all_optima(f)
        to_opt = NodewiseMap(tuple(np.full(3, v) for v in X[0]))
        assert oracle.check_improving(f, to_opt)


def test_improving_agrees_with_loop_reimplementation():
    rng = np.random.default_rng(1)
    agree = {True: 0, False: 0}
    for _ in range(200):
        f = random_model(rng, 3, 2, n_terms=2)
        p = NodewiseMap(tuple(rng.integers(0, 2, size=2) for _ in range(3)))
        a = oracle.check_improving(f, p)
        assert a == loop_improving(f, p)
        assert oracle.check_strict_improving(f, p) == loop_improving(f, p, strict=True)
        agree[a] += 1
    assert agree[True] > 0 and agree[False] > 0


def test_check_persistency_modes():
    f = EnergyModel.from_terms([2], {(0,): [0, 0]})
    p = NodewiseMap(([0, 0],))
    assert oracle.check_persistency(f, p, "weak").valid
    v = oracle.check_persistency(f, p, "strict")
    assert not v.valid and list(v.violating) == [1] and v.n_optima == 2
    with pytest.raises(InvalidInputError):
        oracle.check_persistency(f, p, "both")


def test_full_assignment_on_unique_optimum():
    f = EnergyModel.from_terms([2, 2], {(0,): [0, 1], (1,): [1, 0]})
    good = NodewiseMap(([0, 0], [1, 1]))
    bad = NodewiseMap(([1, 1], [1, 1]))
    assert oracle.check_persistency(f, good, "strict").valid
    assert not oracle.check_persistency(f, bad, "weak").valid


def test_energies_match_loops():
    rng = np.random.default_rng(2)
    f = random_model(rng, 4, 3, integer=False)
    E = oracle.all_energies(f)
    X = oracle.labelings(f.label_counts)
    for i in range(0, len(X), 5):
        assert E[i] == pytest.approx(brute_energy(f, X[i]), abs=1e-12)


def test_tie_tolerance():
    assert oracle.tie_tolerance(EnergyModel.from_terms([2], {(0,): [1, 2]})) == 0.0
    assert oracle.tie_tolerance(EnergyModel.from_terms([2], {(0,): [1.5, 2]})) == pytest.approx(3e-9)


# lifted polytope -----------------------------------------------------------

def test_vertices_are_members():
    for k in (1, 2, 3):
        for bits in itertools.product((0, 1), repeat=k):
            z = oracle.lifted_vertex(bits)
            assert oracle.zeta_in_polytope(k, z)
            assert oracle.zeta_hull_check(k, z)


def test_midpoint_member():
    a = oracle.lifted_vertex((1, 0, 1))
    b = oracle.lifted_vertex((0, 1, 1))
    z = {D: 0.5 * (a[D] + b[D]) for D in a}
    assert oracle.zeta_in_polytope(3, z) and oracle.zeta_hull_check(3, z)


def test_non_member_pair():
    # zeta_s = zeta_t = 1, zeta_st = 0: the B = {} row is 1 - 1 - 1 + 0 = -1
    z = {(0,): 1.0, (1,): 1.0, (0, 1): 0.0}
    vals = oracle.zeta_inequalities(2, z)
    assert vals[0] == -1.0
    assert not oracle.zeta_in_polytope(2, z)
    assert not oracle.zeta_hull_check(2, z)


def test_multilinear_examples():
    assert oracle.multilinear_minima(2, {(): 1.0}) == (pytest.approx(1.0), 1.0)
    lp_min, brute = oracle.multilinear_minima(2, {(0, 1): 1.0, (0,): -1.0})
    assert brute == -1.0 and lp_min == pytest.approx(-1.0, abs=1e-9)
    assert oracle.multilinear_min_check(2, {(0, 1): 1.0, (0,): -1.0})


def test_hull_size_guard():
    with pytest.raises(InvalidInputError):
        oracle.zeta_hull_check(4, {})
