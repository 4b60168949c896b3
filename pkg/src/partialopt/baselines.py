"""Reference persistency methods used for comparison.

* ``dee1`` / ``dee2``: dead-end elimination with the single-label and the
  pair condition.
* ``iterative_pruning``: shrink a candidate set of nodes until the
  auxiliary energy built around the test labeling is tight.
* ``roof_dual_persistency``: read fixed variables of a binary pairwise
  model off the optimal face of its relaxation.
"""
from __future__ import annotations

import time

import numpy as np

from . import lp
from .energy import EnergyModel
from .errors import InvalidInputError
from .mapping import NodewiseMap, SubsetToOneMap
from .persistency import (STRICT, WEAK, PersistencyResult, completeness, solve_relaxation,
                          test_labeling)
from .relaxation import RelaxationSpec, build_spec

INTEGRAL_TOL = 1e-6


def _require_pairwise(f: EnergyModel):
    if not f.is_pairwise:
        raise InvalidInputError("method needs a pairwise model")


def _neighbors(f: EnergyModel):
    """``nbrs[s] = [(t, F)]`` with ``F[x_s, x_t]`` the pair table seen from ``s``."""
    nbrs = [[] for _ in range(f.n_nodes)]
    for C, t in zip(f.hyperedges, f.tables):
        if len(C) == 2:
            s, u = C
            nbrs[s].append((u, np.asarray(t)))
            nbrs[u].append((s, np.asarray(t).T))
    return nbrs


def _result(method, f, p: NodewiseMap, mode, rel, t0, clk=None, diag=None, subset=None, y=None,
            map_class=None):
    elim = p.eliminated()
    return PersistencyResult(
        method=method, map=p, eliminated=elim, mode=mode, relaxation=rel,
        completeness=completeness(elim, f.label_counts), map_class=map_class, y=y,
        subset_map=subset, diagnostics=diag or {},
        lp_time=clk.elapsed if clk else 0.0, total_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------
# dead-end elimination

class _DEEState:
    def __init__(self, f, policy):
        if policy not in (WEAK, STRICT):
            raise InvalidInputError(f"unknown tie policy {policy!r}")
        self.f = f
        self.unary = [np.asarray(f.table((s,))) for s in range(f.n_nodes)]
        self.nbrs = _neighbors(f)
        self.alive = [np.ones(k, dtype=bool) for k in f.label_counts]
        self.target = [np.arange(k) for k in f.label_counts]
        self.tol = 1e-9 * f.scale()
        self.strict = policy == STRICT

    def passes(self, v):
        return v > self.tol if self.strict else v >= -self.tol

    def margin(self, s, a, b, skip=None):
        v = self.unary[s][a] - self.unary[s][b]
        for t, F in self.nbrs[s]:
            if t == skip:
                continue
            v += float(np.min((F[a] - F[b])[self.alive[t]]))
        return v

    def single_sweep(self):
        changed = False
        for s in range(self.f.n_nodes):
            for a in range(self.alive[s].size):
                if not self.alive[s][a]:
                    continue
                for b in range(self.alive[s].size):
                    if b == a or not self.alive[s][b]:
                        continue
                    if self.passes(self.margin(s, a, b)):
                        self.alive[s][a] = False
                        self.target[s][a] = b
                        changed = True
                        break
        return changed

    def pair_dead(self, s, t, F, a_s, a_t):
        """Some alive ``(b_s, b_t)`` with ``b_s != a_s`` dominates ``(a_s, a_t)``."""
        for b_s in np.flatnonzero(self.alive[s]):
            if b_s == a_s:
                continue
            base_s = self.unary[s][a_s] - self.unary[s][b_s] + self._rest(s, a_s, b_s, t)
            for b_t in np.flatnonzero(self.alive[t]):
                v = (base_s + self.unary[t][a_t] - self.unary[t][b_t]
                     + F[a_s, a_t] - F[b_s, b_t] + self._rest(t, a_t, b_t, s))
                if self.passes(v):
                    return int(b_s)
        return None

    def _rest(self, s, a, b, skip):
        if a == b:
            return 0.0
        v = 0.0
        for u, G in self.nbrs[s]:
            if u != skip:
                v += float(np.min((G[a] - G[b])[self.alive[u]]))
        return v

    def pair_sweep(self):
        changed = False
        for s in range(self.f.n_nodes):
            for t, F in self.nbrs[s]:
                for a_s in np.flatnonzero(self.alive[s]):
                    if self.alive[s].sum() < 2:
                        break
                    targets = []
                    for a_t in np.flatnonzero(self.alive[t]):
                        b = self.pair_dead(s, t, F, a_s, a_t)
                        if b is None:
                            break
                        targets.append(b)
                    else:
                        self.alive[s][a_s] = False
                        self.target[s][a_s] = targets[0]
                        changed = True
        return changed

    def composed(self) -> NodewiseMap:
        out = []
        for s in range(self.f.n_nodes):
            a = np.arange(self.alive[s].size)
            for i in range(a.size):
                j = i
                while not self.alive[s][j]:
                    j = self.target[s][j]
                a[i] = j
            out.append(a)
        return NodewiseMap(tuple(out))


def dee1(f: EnergyModel, policy: str = WEAK) -> PersistencyResult:
    """Single-label dead-end elimination iterated to a fixpoint.

    Label ``a`` of node ``s`` is dropped in favour of an alive ``b`` when
    ``f_s(a) - f_s(b) + sum_t min_{alive x_t} [f_st(a, x_t) - f_st(b, x_t)]``
    is ``>= 0`` (``policy="weak"``) or ``> 0`` (``policy="strict"``). Nodes
    are swept in ascending order and label pairs lexicographically; the
    returned map follows each dropped label to the alive label it was
    dropped for.
    """
    t0 = time.perf_counter()
    _require_pairwise(f)
    st = _DEEState(f, policy)
    while st.single_sweep():
        pass
    return _result("dee1", f, st.composed(), policy, None, t0)


def dee2(f: EnergyModel, policy: str = WEAK) -> PersistencyResult:
    """``dee1`` plus the pair condition.

    After the ``dee1`` fixpoint, label ``a_s`` is also dropped when for
    some neighbour ``t`` every alive ``a_t`` has an alive pair
    ``(b_s, b_t)``, ``b_s != a_s``, whose switch does not increase the
    energy. Both conditions are re-run until nothing changes. The result
    is a set of dropped labels; the map sends each of them to an alive
    label and is not claimed to be relaxed-improving.
    """
    t0 = time.perf_counter()
    _require_pairwise(f)
    st = _DEEState(f, policy)
    while st.single_sweep():
        pass
    while True:
        changed = st.pair_sweep()
        changed = st.single_sweep() or changed
        if not changed:
            break
    return _result("dee2", f, st.composed(), policy, None, t0)


# ---------------------------------------------------------------------
# iterative pruning

def auxiliary_energy(f: EnergyModel, A, y) -> EnergyModel:
    """Energy that keeps ``f`` inside ``A`` and bounds the boundary terms.

    For a pair ``s in A``, ``t`` outside: ``g_st(i, .) = max_j f_st(i, j)``
    if ``i = y_s`` and ``min_j f_st(i, j)`` otherwise. Everything else
    outside ``A`` is zero.
    """
    A = set(int(s) for s in A)
    terms = {}
    for C, t in zip(f.hyperedges, f.tables):
        if not C:
            continue
        if len(C) == 1:
            terms[C] = np.array(t) if C[0] in A else np.zeros_like(t)
            continue
        s, u = C
        t = np.asarray(t)
        if s in A and u in A:
            g = np.array(t)
        elif s in A:
            row = np.where(np.arange(t.shape[0]) == y[s], t.max(axis=1), t.min(axis=1))
            g = np.repeat(row[:, None], t.shape[1], axis=1)
        elif u in A:
            col = np.where(np.arange(t.shape[1]) == y[u], t.max(axis=0), t.min(axis=0))
            g = np.repeat(col[None, :], t.shape[0], axis=0)
        else:
            g = np.zeros_like(t)
        terms[C] = g
    return EnergyModel.from_terms(f.label_counts, terms, f.seed)


def _integral_nodes(mu, idx, y=None):
    out = []
    for s in range(len(idx.label_counts)):
        v = mu[idx.block((s,))]
        i = int(np.argmax(v))
        if v[i] >= 1.0 - INTEGRAL_TOL and (y is None or i == y[s]):
            out.append(s)
    return out


def iterative_pruning(f: EnergyModel, rel="flp", phase1: lp.LPSolution | None = None,
                      tol: float = 1e-7) -> PersistencyResult:
    """Shrink ``A`` until the auxiliary energy is tight at ``y`` on ``A``.

    ``A`` and ``y`` start from the integral nodes of the relaxed solution of
    ``f``. The output sends every label of a node in ``A`` to ``y_s`` and
    is the identity elsewhere.
    """
    t0 = time.perf_counter()
    _require_pairwise(f)
    spec = rel if isinstance(rel, RelaxationSpec) else build_spec(f, rel)
    with lp.lp_clock() as clk:
        if phase1 is None:
            phase1 = solve_relaxation(f, spec)
        idx = spec.index
        y = test_labeling(phase1.x, idx)
        A = _integral_nodes(phase1.x, idx)
        iters = 0
        tight = False
        while A and iters <= f.n_nodes:
            iters += 1
            g = auxiliary_energy(f, A, y)
            gspec = build_spec(g, spec.kind)
            sol = solve_relaxation(g, gspec)
            if g.evaluate(y) <= sol.objective + tol * g.scale():
                tight = True
                break
            A2 = [s for s in _integral_nodes(sol.x, gspec.index, y) if s in A]
            if len(A2) == len(A):
                break
            A = A2
        if not tight:
            A = []
        keep = tuple(np.full(k, s not in A) for s, k in enumerate(f.label_counts))
        m = SubsetToOneMap(y, keep)
    diag = dict(iterations=iters, pruned_nodes=sorted(A))
    return _result("pruning", f, m.to_nodewise(), WEAK, spec.kind, t0, clk, diag, m, y, "p1y")


# ---------------------------------------------------------------------
# roof duality

def _require_binary_pairwise(f):
    if not f.is_binary or not f.is_pairwise:
        raise InvalidInputError("roof-dual persistency needs a binary pairwise model")


def roof_dual_persistency(f: EnergyModel, mode: str = STRICT, tol: float = 1e-9
                          ) -> PersistencyResult:
    """Fix variables whose relaxed marginals are integral.

    ``mode="strict"`` (strong persistency) fixes ``s`` when only one label
    of ``s`` can be positive on the optimal face. ``mode="weak"`` finds one
    optimal relaxed solution with an inclusion-maximal set of integral
    nodes by forcing nodes one at a time (ascending) and fixes those.
    """
    t0 = time.perf_counter()
    _require_binary_pairwise(f)
    mode = mode.lower()
    spec = build_spec(f, "flp")
    idx = spec.index
    with lp.lp_clock() as clk:
        prob = spec.problem(spec.costs(spec.align(f)))
        sol = lp.solve(prob).require_optimal("relaxation")
        fixed = {}
        if mode == STRICT:
            coords = [idx.unary(s, i) for s in range(f.n_nodes) for i in (0, 1)]
            sup = lp.optimal_support(prob, sol, coords, tol=tol).reshape(-1, 2)
            for s in range(f.n_nodes):
                if sup[s].sum() == 1:
                    fixed[s] = int(np.flatnonzero(sup[s])[0])
        elif mode == WEAK:
            face = prob.with_ge_row(-prob.c, -(sol.objective + tol * prob.scale))
            face = face.with_objective(np.zeros(prob.n))
            lo = face.lower.copy()
            x = sol.x
            for s in range(f.n_nodes):
                v = x[idx.block((s,))]
                if v.max() >= 1.0 - INTEGRAL_TOL:
                    i = int(np.argmax(v))
                    lo[idx.unary(s, i)] = 1.0
                    fixed[s] = i
                    continue
                for i in (0, 1):
                    trial = lo.copy()
                    trial[idx.unary(s, i)] = 1.0
                    r = lp.solve(face.with_bounds(lower=trial))
                    if r.optimal:
                        lo, x = trial, r.x
                        fixed[s] = i
                        break
        else:
            raise InvalidInputError(f"unknown mode {mode!r}")
    arrays = tuple(np.full(2, fixed[s]) if s in fixed else np.arange(2)
                   for s in range(f.n_nodes))
    diag = dict(relaxation_objective=sol.objective, fixed=fixed)
    return _result("roofdual", f, NodewiseMap(arrays), mode, "flp", t0, clk, diag)
