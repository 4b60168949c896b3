"""Relaxed-improving maps and the maximum-persistency LP.

A map ``p`` is relaxed-improving for a relaxation polytope when the
verification LP ``min_mu <(I - P^T) f, mu>`` over it is non-negative; then
some optimal labeling lies in ``p(X)`` (weak persistency). If in addition
every optimal ``mu`` is supported inside ``p(X)``, the map is strictly
improving and all optima lie in ``p(X)``.

The L1 program searches subset-to-one maps for a fixed test labeling
``y``: it minimizes the number of kept labels over the lifted variables
``zeta`` and the multipliers ``phi`` subject to
``(I - P_zeta^T) f - A^T phi >= 0`` and the lifted polytope rows.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import lp
from .energy import EnergyModel, dumps
from .errors import InvalidInputError, NumericIntegralityError
from .mapping import (LinearMapAction, NodewiseMap, SubsetToOneMap, ZetaIndex, ZetaVector,
                      expansions, map_from_zeta, round_zeta, zeta_constraints)
from .relaxation import RelaxationSpec, build_spec

WEAK = "weak"
STRICT = "strict"
P1Y = "p1y"
P2Y = "p2y"

VERIFY_TOL = 1e-7
INTEGRALITY_TOL = 1e-6
EPS_HALVINGS = 6


@dataclass
class ImprovingVerdict:
    """Outcome of the verification LP."""

    is_weak_improving: bool
    is_strict_improving: bool | None
    objective: float
    witness: np.ndarray | None = None
    support: dict | None = None
    solution: lp.LPSolution | None = None


@dataclass
class PersistencyResult:
    """Output of a persistency method.

    ``completeness`` is ``100 * n_elim / sum_s (|X_s| - 1)``.
    """

    method: str
    map: NodewiseMap
    eliminated: list
    mode: str
    relaxation: str | None
    completeness: float
    map_class: str | None = None
    y: tuple | None = None
    subset_map: SubsetToOneMap | None = None
    zeta: ZetaVector | None = None
    eps_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    lp_time: float = 0.0
    total_time: float = 0.0

    @property
    def n_elim(self) -> int:
        return len(self.eliminated)


def completeness(eliminated, label_counts) -> float:
    total = sum(k - 1 for k in label_counts)
    return 100.0 * len(eliminated) / total if total else 100.0


def _as_action(P):
    if isinstance(P, LinearMapAction):
        return P
    if isinstance(P, ZetaVector):
        return LinearMapAction(zeta=P)
    if isinstance(P, SubsetToOneMap):
        return LinearMapAction(p=P.to_nodewise())
    if isinstance(P, NodewiseMap):
        return LinearMapAction(p=P)
    raise InvalidInputError(f"cannot use {type(P).__name__} as a map")


def _spec(f, rel):
    if isinstance(rel, RelaxationSpec):
        return rel
    return build_spec(f, rel)


# ---------------------------------------------------------------------
# verification

def verification_problem(f: EnergyModel, P, rel: RelaxationSpec) -> lp.LPProblem:
    """Verification LP with objective ``(I - P^T) f``."""
    c = rel.costs(rel.align(f))
    g = c - _as_action(P).adjoint(c, rel.index)
    return rel.problem(g)


def verify_weak_improving(f: EnergyModel, P, rel, tol: float = VERIFY_TOL) -> ImprovingVerdict:
    """Weakly relaxed-improving iff the verification optimum is at least
    ``-tol * (1 + max|f|)``."""
    rel = _spec(f, rel)
    prob = verification_problem(f, P, rel)
    sol = lp.solve(prob).require_optimal("verification LP")
    weak = sol.objective >= -tol * f.scale()
    return ImprovingVerdict(weak, None, sol.objective, None if weak else sol.x, None, sol)


def verify_strict_improving(f: EnergyModel, p, rel, tol: float = VERIFY_TOL) -> ImprovingVerdict:
    """Strict check: the optimal face of the verification LP must stay
    inside ``p(X)``.

    With order-1 couplings it suffices to look at unary blocks: a moved
    label ``(s, i)`` must have zero weight in every optimal solution.
    """
    rel = _spec(f, rel)
    if isinstance(p, SubsetToOneMap):
        p = p.to_nodewise()
    if not isinstance(p, NodewiseMap):
        raise InvalidInputError("strict verification needs a node-wise map")
    if not p.is_idempotent():
        raise InvalidInputError("map must be idempotent")
    v = verify_weak_improving(f, p, rel, tol)
    if not v.is_weak_improving:
        v.is_strict_improving = False
        return v
    idx = rel.index
    if rel.has_order1:
        moved = [(C, (i,)) for (s, i) in p.eliminated() for C in [(s,)]]
    else:
        moved = []
        for C in idx.hyperedges:
            img = p.block_image(C)
            for flat in np.flatnonzero(img != np.arange(img.size)):
                moved.append((C, tuple(int(a) for a in np.unravel_index(flat, idx.shapes[C]))))
    if not moved:
        v.is_strict_improving = True
        v.support = {}
        return v
    prob = verification_problem(f, p, rel)
    coords = [idx.coord(C, xC) for C, xC in moved]
    sup = lp.optimal_support(prob, v.solution, coords)
    v.support = {m: bool(b) for m, b in zip(moved, sup)}
    v.is_strict_improving = not bool(np.any(sup))
    if not v.is_strict_improving:
        v.witness = v.solution.x
    return v


# ---------------------------------------------------------------------
# perturbation

def default_eps(f: EnergyModel) -> float:
    return 1e-3 * f.scale() / max(1, f.n_nodes)


def perturbation_tables(f: EnergyModel, y) -> dict:
    """``g_C(x_C) = #{s in C : x_s = y_s}`` for every nonempty hyperedge."""
    y = np.asarray(y, dtype=np.int64)
    out = {}
    for C in f.hyperedges:
        if not C:
            continue
        shape = tuple(f.label_counts[s] for s in C)
        grid = np.indices(shape)
        out[C] = sum((grid[a] == y[s]).astype(float) for a, s in enumerate(C))
    return out


def perturb(f: EnergyModel, y, eps: float, rel=None) -> EnergyModel:
    """Penalize the test labeling by ``eps``.

    With order-1 couplings only ``f_s(y_s)`` grows by ``eps``; otherwise
    ``eps * g`` is added on every hyperedge.
    """
    if eps < 0:
        raise InvalidInputError("eps must be non-negative")
    if eps == 0:
        return f
    y = np.asarray(y, dtype=np.int64)
    if rel is not None and _spec(f, rel).has_order1:
        upd = {}
        for s in range(f.n_nodes):
            t = np.array(f.table((s,)))
            t[y[s]] += eps
            upd[(s,)] = t
        return f.with_tables(upd)
    g = perturbation_tables(f, y)
    return f.with_tables({C: f.table(C) + eps * g[C] for C in g})


# ---------------------------------------------------------------------
# L1

@dataclass
class L1Program:
    """L1 LP over ``(zeta, phi)``; zeta comes first."""

    problem: lp.LPProblem
    zindex: ZetaIndex
    rel: RelaxationSpec
    f: EnergyModel
    y: tuple
    map_class: str
    eps: float = 0.0

    @property
    def n_zeta(self) -> int:
        return self.zindex.size


def test_labeling(mu, idx) -> tuple:
    """``y_s = argmax_i mu_s(i)``, ties to the lowest label."""
    y = []
    for s, k in enumerate(idx.label_counts):
        v = np.asarray(mu[idx.block((s,))])
        y.append(int(np.flatnonzero(v >= v.max() - 1e-9)[0]))
    return tuple(y)


def build_L1(f: EnergyModel, rel, y, map_class: str = P2Y, perturbed: bool = False,
             eps: float = 0.0) -> L1Program:
    """Assemble the L1 LP for test labeling ``y``.

    One row per coordinate ``(C, x'_C)`` of the index set::

        -sum_D M_C(D; x') zeta_D - (A^T phi)_C(x') >= f_C(y_C) - f_C(x')

    where ``M_C(D; x')`` is the signed sum of ``f_C`` over the assignments
    mixing ``x'`` on a subset of ``D`` with ``y`` elsewhere. The lifted
    polytope rows follow, then (for ``p1y``) equalities tying the
    indicators within each node.
    """
    rel = _spec(f, rel)
    if rel.kind not in ("blp", "flp"):
        raise InvalidInputError("L1 needs a local relaxation")
    map_class = map_class.lower()
    if map_class not in (P1Y, P2Y):
        raise InvalidInputError(f"unknown map class {map_class!r}")
    fa = rel.align(f)
    y = tuple(int(v) for v in y)
    if perturbed and eps > 0:
        fa = perturb(fa, y, eps, rel)
    else:
        eps = 0.0
    idx = rel.index
    zindex = ZetaIndex(fa.label_counts, fa.hyperedges, y)
    nz = zindex.size
    A = rel.constraints.A
    m = A.shape[0]
    exp = expansions(zindex)
    zblocks, rhs = [], np.zeros(idx.size)
    for C, t in zip(fa.hyperedges, fa.tables):
        blk = idx.block(C)
        if not C:
            zblocks.append(sp.csr_matrix((1, nz)))
            continue
        const, lin = exp[C].cost_coefficients(t)
        n = blk.stop - blk.start
        zblocks.append(sp.csr_matrix((lin.data, (lin.row, lin.col)), shape=(n, nz)))
        rhs[blk] = const - t.ravel()
    Zwi = -sp.vstack(zblocks).tocsr()
    wi = sp.hstack([Zwi, -A.T]).tocsr()
    G, g0 = zeta_constraints(zindex)
    zrows = sp.hstack([G, sp.csr_matrix((G.shape[0], m))]).tocsr()
    A_ge = sp.vstack([wi, zrows]).tocsr()
    b_ge = np.concatenate([rhs, -g0])
    eq_r, eq_c, eq_v = [], [], []
    if map_class == P1Y:
        r = 0
        for s, k in enumerate(fa.label_counts):
            labels = [i for i in range(k) if i != y[s]]
            for a, b in zip(labels, labels[1:]):
                eq_r += [r, r]
                eq_c += [zindex.pos[((s,), (a,))], zindex.pos[((s,), (b,))]]
                eq_v += [1.0, -1.0]
                r += 1
        A_eq = sp.csr_matrix((eq_v, (eq_r, eq_c)), shape=(r, nz + m))
    else:
        A_eq = sp.csr_matrix((0, nz + m))
    c = np.zeros(nz + m)
    c[zindex.unary_positions()] = 1.0
    lo = np.concatenate([np.zeros(nz), np.full(m, -np.inf)])
    hi = np.concatenate([np.ones(nz), np.full(m, np.inf)])
    prob = lp.LPProblem(c=c, A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]), A_ge=A_ge, b_ge=b_ge,
                        lower=lo, upper=hi)
    return L1Program(prob, zindex, rel, fa, y, map_class, eps)


def solve_L1(prog: L1Program):
    """Solve L1 and return ``(map, zeta, phi, diagnostics)``.

    The optimum is integral in exact arithmetic. If the solver returns a
    component farther than ``1e-6`` from ``{0, 1}``, the vector is rounded
    to ``[zeta >= 1 - 1e-6]`` and the resulting map is re-verified.
    """
    sol = lp.solve(prog.problem).require_optimal("L1")
    nz = prog.n_zeta
    z = ZetaVector(prog.zindex, np.clip(sol.x[:nz], 0.0, 1.0))
    phi = prog.rel.constraints.dual_dict(sol.x[nz:])
    gap_u = z.integrality_gap(unary_only=True)
    gap_all = z.integrality_gap(unary_only=False)
    diag = dict(integrality_gap=gap_u, integrality_gap_all=gap_all, rounded=False,
                objective=sol.objective, lp_status=sol.status)
    if gap_u <= INTEGRALITY_TOL:
        zr = ZetaVector(prog.zindex, np.round(z.values))
        m = map_from_zeta(zr, tol=0.5)
        return m, zr, phi, diag
    zr = round_zeta(z)
    m = map_from_zeta(zr, tol=0.5)
    diag["rounded"] = True
    v = verify_weak_improving(prog.f, m, prog.rel)
    diag["rounded_verification"] = v.objective
    if not v.is_weak_improving:
        raise NumericIntegralityError(
            f"rounded L1 map fails verification (objective {v.objective:.3g})", raw=z, rounded=zr)
    return m, zr, phi, diag


def _result_from_map(method, m: SubsetToOneMap, mode, rel, map_class, y, zeta, diag,
                     eps_trace, clk, t0):
    elim = m.eliminated()
    return PersistencyResult(
        method=method, map=m.to_nodewise(), eliminated=elim, mode=mode, relaxation=rel.kind,
        completeness=completeness(elim, m.label_counts), map_class=map_class, y=tuple(y),
        subset_map=m, zeta=zeta, eps_trace=eps_trace, diagnostics=diag,
        lp_time=clk.elapsed, total_time=time.perf_counter() - t0)


def solve_relaxation(f: EnergyModel, rel) -> lp.LPSolution:
    rel = _spec(f, rel)
    return lp.solve(rel.problem(rel.costs(rel.align(f)))).require_optimal("relaxation")


def two_phase(f: EnergyModel, rel="flp", map_class: str = P2Y, mode: str = WEAK,
              eps_policy="auto", y=None, phase1: lp.LPSolution | None = None,
              verify: bool = True) -> PersistencyResult:
    """Relax, read a test labeling, then solve L1.

    ``y`` overrides the test labeling read from the relaxed solution.
    In strict mode the cost is perturbed before L1 and the result is
    certified strictly improving on the unperturbed ``f``; when
    certification fails ``eps`` is halved (at most six times) and finally
    the run falls back to weak mode, noting it in the diagnostics.
    """
    t0 = time.perf_counter()
    rel = _spec(f, rel)
    mode = mode.lower()
    if mode not in (WEAK, STRICT):
        raise InvalidInputError(f"unknown mode {mode!r}")
    with lp.lp_clock() as clk:
        if y is None:
            if phase1 is None:
                phase1 = solve_relaxation(f, rel)
            y = test_labeling(phase1.x, rel.index)
        y = tuple(int(v) for v in y)
        diag = {}
        if phase1 is not None:
            diag["relaxation_objective"] = phase1.objective
        trace = []
        if mode == STRICT:
            eps = default_eps(f) if eps_policy in (None, "auto") else float(eps_policy)
            certified = None
            for _ in range(EPS_HALVINGS + 1):
                prog = build_L1(f, rel, y, map_class, perturbed=True, eps=eps)
                m, z, _, d = solve_L1(prog)
                v = verify_strict_improving(f, m, rel)
                trace.append(dict(eps=eps, n_elim=len(m.eliminated()),
                                  strict=bool(v.is_strict_improving)))
                if v.is_strict_improving:
                    certified = (m, z, d, v)
                    break
                eps /= 2.0
            if certified is not None:
                m, z, d, v = certified
                diag.update(d)
                diag["verification_objective"] = v.objective
                return _result_from_map("l1", m, STRICT, rel, map_class, y, z, diag, trace,
                                        clk, t0)
            diag["strict_certification_failed"] = True
            mode = WEAK
        prog = build_L1(f, rel, y, map_class)
        m, z, _, d = solve_L1(prog)
        diag.update(d)
        if verify:
            v = verify_weak_improving(f, m, rel)
            diag["verification_objective"] = v.objective
        return _result_from_map("l1", m, mode, rel, map_class, y, z, diag, trace, clk, t0)


# ---------------------------------------------------------------------
# pseudo-Boolean specialization

def multilinear_coefficients(f: EnergyModel) -> dict:
    """Binary model as ``{D: eta_D}`` with ``E(x) = sum_D eta_D prod_{s in D} x_s``."""
    if not f.is_binary:
        raise InvalidInputError("multilinear form needs binary variables")
    eta = {}
    for C, t in zip(f.hyperedges, f.tables):
        for r in range(len(C) + 1):
            for Dloc in itertools.combinations(range(len(C)), r):
                val = 0.0
                for k in range(len(Dloc) + 1):
                    for S in itertools.combinations(Dloc, k):
                        x = tuple(1 if a in S else 0 for a in range(len(C)))
                        val += (-1) ** (len(Dloc) - len(S)) * float(t[x])
                D = tuple(C[a] for a in Dloc)
                eta[D] = eta.get(D, 0.0) + val
    return eta


def multilinear_model(f: EnergyModel) -> EnergyModel:
    """Equivalent model whose tables are ``eta_C [x_C = 1_C]``."""
    eta = multilinear_coefficients(f)
    terms = {}
    for D, v in eta.items():
        t = np.zeros((2,) * len(D))
        t[(1,) * len(D)] = v
        terms[D] = t
    return EnergyModel.from_terms(f.label_counts, terms, f.seed)


def flip(f: EnergyModel, mask) -> EnergyModel:
    """Relabel ``x_s -> 1 - x_s`` on the nodes where ``mask`` is set."""
    mask = np.asarray(mask, dtype=bool)
    terms = {}
    for C, t in zip(f.hyperedges, f.tables):
        axes = tuple(a for a, s in enumerate(C) if mask[s])
        terms[C] = np.flip(t, axis=axes) if axes else t
    return EnergyModel.from_terms(f.label_counts, terms, f.seed)


def pseudo_boolean_L1(f: EnergyModel, rel="flp", y=None) -> PersistencyResult:
    """Weak L1 specialized to binary variables with ``y = 0``.

    Nodes with ``y_s = 1`` are flipped first. The flipped model is put in
    multilinear form and the program has one variable per hyperedge of its
    closure. The relaxation is built on the multilinear model; under FLP
    this is equivalent to the input model.
    """
    t0 = time.perf_counter()
    if not f.is_binary:
        raise InvalidInputError("pseudo-Boolean L1 needs binary variables")
    kind = rel.kind if isinstance(rel, RelaxationSpec) else rel
    with lp.lp_clock() as clk:
        if y is None:
            y = test_labeling(solve_relaxation(f, kind).x, _spec(f, kind).index)
        y = tuple(int(v) for v in y)
        g = multilinear_model(flip(f, y))
        spec = build_spec(g, kind)
        gm = spec.align(g)
        idx = spec.index
        edges = [C for C in gm.hyperedges if C]
        zpos = {C: k for k, C in enumerate(edges)}
        nz = len(edges)
        A = spec.constraints.A
        m = A.shape[0]
        zr, zc, zv = [], [], []
        rhs = np.zeros(idx.size)
        for C in edges:
            eta = float(gm.table(C)[(1,) * len(C)])
            r = idx.coord(C, (1,) * len(C))
            zr.append(r)
            zc.append(zpos[C])
            zv.append(-eta)
            rhs[r] = -eta
        wi = sp.hstack([sp.csr_matrix((zv, (zr, zc)), shape=(idx.size, nz)), -A.T])
        rows = {}
        for C in edges:
            for B in itertools.chain.from_iterable(
                    itertools.combinations(C, r) for r in range(len(C) + 1)):
                rest = [s for s in C if s not in B]
                const, terms = 0.0, {}
                for r in range(len(rest) + 1):
                    for D in itertools.combinations(rest, r):
                        U = tuple(sorted(D + B))
                        sgn = -1.0 if r % 2 else 1.0
                        if U:
                            terms[zpos[U]] = terms.get(zpos[U], 0.0) + sgn
                        else:
                            const += sgn
                rows.setdefault((const, tuple(sorted(terms.items()))), None)
        gr, gc, gv, g0 = [], [], [], []
        for r, (const, items) in enumerate(rows):
            g0.append(const)
            for c_, v in items:
                gr.append(r)
                gc.append(c_)
                gv.append(v)
        G = sp.csr_matrix((gv, (gr, gc)), shape=(len(g0), nz + m))
        prob = lp.LPProblem(
            c=np.array([1.0 if len(C) == 1 else 0.0 for C in edges] + [0.0] * m),
            A_ge=sp.vstack([wi, G]).tocsr(), b_ge=np.concatenate([rhs, -np.array(g0)]),
            lower=np.concatenate([np.zeros(nz), np.full(m, -np.inf)]),
            upper=np.concatenate([np.ones(nz), np.full(m, np.inf)]))
        sol = lp.solve(prob).require_optimal("pseudo-Boolean L1")
        zeta = sol.x[:nz]
        keep = []
        for s in range(f.n_nodes):
            k = np.zeros(2, dtype=bool)
            k[1 - y[s]] = zeta[zpos[(s,)]] > 0.5
            keep.append(k)
        mp = SubsetToOneMap(y, tuple(keep))
        un = np.array([zeta[zpos[(s,)]] for s in range(f.n_nodes)])
        diag = dict(integrality_gap=float(np.max(np.minimum(un, 1 - un))) if un.size else 0.0,
                    objective=sol.objective)
        return _result_from_map("l1-pb", mp, WEAK, spec, P2Y, y, None, diag, [], clk, t0)


# ---------------------------------------------------------------------
# result records

def instance_hash(f: EnergyModel) -> str:
    return hashlib.sha256(dumps(f).encode()).hexdigest()


def result_record(f: EnergyModel, res: PersistencyResult, extra=None) -> dict:
    """JSON-serializable summary of a run."""
    rec = dict(
        instance_hash=instance_hash(f), seed=f.seed, method=res.method,
        relaxation=res.relaxation, map_class=res.map_class, mode=res.mode,
        y=list(res.y) if res.y is not None else None,
        eps_trace=res.eps_trace,
        eliminated=[list(e) for e in res.eliminated], n_elim=res.n_elim,
        completeness=res.completeness,
        map=[a.tolist() for a in res.map.arrays],
        keep=[k.astype(int).tolist() for k in res.subset_map.keep] if res.subset_map else None,
        verification={k: _jsonable(v) for k, v in res.diagnostics.items()},
        lp_time_ms=1000.0 * res.lp_time, wall_time_ms=1000.0 * res.total_time,
    )
    if extra:
        rec.update(extra)
    return rec


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    return json.loads(json.dumps(v, default=str))


def map_from_record(rec: dict) -> NodewiseMap:
    """Rebuild the map stored in a record. ``keep`` wins over ``map``."""
    if rec.get("keep") is not None and rec.get("y") is not None:
        return SubsetToOneMap(rec["y"], tuple(np.array(k, dtype=bool) for k in rec["keep"])).to_nodewise()
    return NodewiseMap(tuple(np.array(a) for a in rec["map"]))

