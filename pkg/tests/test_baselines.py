import numpy as np
import pytest

from conftest import frustrated_cycle
from partialopt import oracle, persistency as ps
from partialopt.baselines import auxiliary_energy, dee1, dee2, iterative_pruning, roof_dual_persistency
from partialopt.energy import EnergyModel, InstanceSeedSpec, evaluate, generate
from partialopt.errors import InvalidInputError


def suite(kind, n, K=3, rows=3, cols=3):
    return [generate(InstanceSeedSpec(kind, rows=rows, cols=cols, labels=K, seed=s)) for s in range(n)]


# DEE ---------------------------------------------------------------------

def test_dee1_unary_dominance():
    f = EnergyModel.from_terms([2], {(0,): [0, 10]})
    res = dee1(f)
    assert res.eliminated == [(0, 1)]
    assert res.completeness == 100.0


def test_dee1_tie_policies():
    f = EnergyModel.from_terms([2], {(0,): [0, 0]})
    assert dee1(f, "strict").eliminated == []
    weak = dee1(f, "weak")
    # >= drops one of the tied labels, which keeps some optimum
    assert len(weak.eliminated) == 1
    assert oracle.check_persistency(f, weak.map, "weak").valid
    assert not oracle.check_persistency(f, weak.map, "strict").valid
    with pytest.raises(InvalidInputError):
        dee1(f, "lenient")


def test_dee1_by_hand_two_nodes():
    # label 1 of node 0 costs 5 more in the unary and at most 3 less in the edge
    f = EnergyModel.from_terms([2, 2], {(0,): [0, 5], (1,): [0, 0], (0, 1): [3, 0, 0, 1]})
    res = dee1(f, "strict")
    # margin for (0: 1 -> 0) is 5 + min(0 - 3, 1 - 0) = 2 > 0
    assert (0, 1) in res.eliminated


def test_dee_requires_pairwise():
    f = EnergyModel.from_terms([2, 2, 2], {(0, 1, 2): np.zeros(8)})
    for fn in (dee1, dee2, iterative_pruning):
        with pytest.raises(InvalidInputError):
            fn(f)


def test_dee2_pair_condition_toy():
    # no single label is dominated, but every pair with x_0 = 0 loses to (1, 1)
    f = EnergyModel.from_terms([2, 2], {(0, 1): [[0, 9], [1, 1]], (0,): [0, 0], (1,): [5, 0]})
    d1 = dee1(f, "strict")
    d2 = dee2(f, "strict")
    assert d1.eliminated == []
    assert d2.eliminated == [(0, 0), (1, 0)]
    assert oracle.check_persistency(f, d2.map, "strict").valid


def test_dee_soundness_and_nesting():
    for f in suite("potts", 15) + suite("full", 15):
        r1, r2 = dee1(f), dee2(f)
        assert set(r1.eliminated) <= set(r2.eliminated)
        assert oracle.check_persistency(f, r1.map, "weak").valid
        assert oracle.check_persistency(f, r2.map, "weak").valid
        assert oracle.check_improving(f, r1.map)
        s1 = dee1(f, "strict")
        assert oracle.check_persistency(f, s1.map, "strict").valid


def test_dee1_is_flp_improving():
    for f in suite("potts", 10) + suite("full", 10):
        v = ps.verify_weak_improving(f, dee1(f).map, "flp")
        assert v.objective >= -1e-7 * f.scale()


# iterative pruning ---------------------------------------------------------

def test_auxiliary_energy_boundary():
    t = np.array([[1.0, 4.0], [2.0, -3.0]])
    f = EnergyModel.from_terms([2, 2], {(0,): [1, 2], (1,): [7, 8], (0, 1): t})
    g = auxiliary_energy(f, [0], (1, 0))
    assert np.array_equal(g.table((0,)), [1, 2])
    assert np.array_equal(g.table((1,)), [0, 0])
    # y_0 = 1: row 1 takes the max, row 0 the min
    assert np.array_equal(g.table((0, 1)), [[1, 1], [2, 2]])


def test_pruning_tight_instance_full():
    rng = np.random.default_rng(0)
    terms = {(s,): rng.normal(size=3) for s in range(4)}
    for s in range(3):
        terms[(s, s + 1)] = rng.normal(size=(3, 3))
    f = EnergyModel.from_terms([3] * 4, terms)
    res = iterative_pruning(f)
    assert res.completeness == 100.0
    assert res.diagnostics["iterations"] == 1
    assert oracle.check_persistency(f, res.map, "weak").valid


def test_pruning_fractional_is_identity():
    res = iterative_pruning(frustrated_cycle())
    assert res.eliminated == [] and res.diagnostics["pruned_nodes"] == []


def test_pruning_sound_and_improving():
    for f in suite("potts", 10) + suite("full", 10):
        res = iterative_pruning(f)
        assert oracle.check_persistency(f, res.map, "weak").valid
        assert ps.verify_weak_improving(f, res.map, "flp").objective >= -1e-7 * f.scale()
        assert res.subset_map.in_p1y()


# roof dual ------------------------------------------------------------------

def test_roof_dual_submodular_recovers_optimum():
    rng = np.random.default_rng(1)
    for _ in range(5):
        terms = {(s,): rng.normal(size=2) for s in range(5)}
        for s, t in [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]:
            w = rng.random()
            terms[(s, t)] = [[0, w], [w, 0]]
        f = EnergyModel.from_terms([2] * 5, terms)
        opt, X = oracle.all_optima(f)
        for mode in ("strict", "weak"):
            res = roof_dual_persistency(f, mode)
            assert res.completeness == 100.0
            assert np.array_equal(res.map(np.zeros(5, dtype=int)), X[0])


def test_roof_dual_frustrated_cycle():
    for mode in ("strict", "weak"):
        assert roof_dual_persistency(frustrated_cycle(), mode).eliminated == []


def test_roof_dual_weak_vs_strong():
    # two tied optima (0,0) and (1,1): strong fixes nothing, weak picks one
    f = EnergyModel.from_terms([2, 2], {(0, 1): [[0, 1], [1, 0]]})
    assert roof_dual_persistency(f, "strict").eliminated == []
    weak = roof_dual_persistency(f, "weak")
    assert weak.completeness == 100.0
    assert oracle.check_persistency(f, weak.map, "weak").valid
    assert evaluate(f, weak.map(np.zeros(2, dtype=int))) == 0


def test_roof_dual_soundness_random():
    for f in suite("full", 20, K=2):
        strong = roof_dual_persistency(f, "strict")
        weak = roof_dual_persistency(f, "weak")
        assert set(strong.eliminated) <= set(weak.eliminated)
        assert oracle.check_persistency(f, strong.map, "strict").valid
        assert oracle.check_persistency(f, weak.map, "weak").valid


def test_roof_dual_input_checks():
    with pytest.raises(InvalidInputError):
        roof_dual_persistency(EnergyModel.from_terms([3], {}))
    with pytest.raises(InvalidInputError):
        roof_dual_persistency(EnergyModel.from_terms([2, 2, 2], {(0, 1, 2): np.zeros(8)}))
    with pytest.raises(InvalidInputError):
        roof_dual_persistency(EnergyModel.from_terms([2], {}), "both")
