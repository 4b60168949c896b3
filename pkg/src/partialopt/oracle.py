"""Brute-force ground truth on small instances.

Everything here enumerates labelings explicitly and shares no code with
the LP machinery beyond the model container, so it can serve as an
independent check.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .energy import EnergyModel
from .errors import InvalidInputError, OracleCapError

DEFAULT_CAP = 2 ** 20
_CHUNK = 1 << 16


def _check_cap(f, cap):
    n = f.n_labelings
    if n > cap:
        raise OracleCapError(n, cap)


def labelings(label_counts, start=0, stop=None) -> np.ndarray:
    """Rows ``start..stop`` of the lexicographic labeling enumeration."""
    total = int(np.prod(label_counts, dtype=np.int64)) if label_counts else 1
    stop = total if stop is None else min(stop, total)
    flat = np.arange(start, stop, dtype=np.int64)
    if not label_counts:
        return np.zeros((flat.size, 0), dtype=np.int64)
    return np.stack(np.unravel_index(flat, tuple(label_counts)), axis=1).astype(np.int64)


def _energies(f: EnergyModel, X: np.ndarray) -> np.ndarray:
    # direct table lookups, independent of energy.energies
    out = np.full(X.shape[0], 0.0)
    for C in f.hyperedges:
        t = f.table(C)
        if not C:
            out = out + float(t)
            continue
        out = out + t[tuple(X[:, s] for s in C)]
    return out


def all_energies(f: EnergyModel, cap: int = DEFAULT_CAP) -> np.ndarray:
    _check_cap(f, cap)
    n = f.n_labelings
    parts = [_energies(f, labelings(f.label_counts, a, a + _CHUNK)) for a in range(0, n, _CHUNK)]
    return np.concatenate(parts) if parts else np.zeros(1)


def tie_tolerance(f: EnergyModel) -> float:
    """Zero for integer costs, ``1e-9 * (1 + max|f|)`` otherwise."""
    return 0.0 if f.is_integral() else 1e-9 * f.scale()


def all_optima(f: EnergyModel, cap: int = DEFAULT_CAP):
    """Return ``(minimum, optima)`` with optima in lexicographic order."""
    E = all_energies(f, cap)
    best = float(E.min())
    tol = tie_tolerance(f)
    hits = np.flatnonzero(E <= best + tol)
    X = labelings(f.label_counts, 0, f.n_labelings)[hits] if hits.size else np.zeros((0, f.n_nodes))
    return best, X


def _map_rows(p, X):
    return np.stack([np.asarray(p.arrays[s])[X[:, s]] for s in range(X.shape[1])], axis=1) \
        if X.shape[1] else X


def check_improving(f: EnergyModel, p, cap: int = DEFAULT_CAP) -> bool:
    """``E(p(x)) <= E(x)`` for every labeling."""
    _check_cap(f, cap)
    tol = tie_tolerance(f)
    for a in range(0, f.n_labelings, _CHUNK):
        X = labelings(f.label_counts, a, a + _CHUNK)
        if np.any(_energies(f, _map_rows(p, X)) > _energies(f, X) + tol):
            return False
    return True


def check_strict_improving(f: EnergyModel, p, cap: int = DEFAULT_CAP) -> bool:
    """Improving, and strictly so wherever ``p(x) != x``."""
    _check_cap(f, cap)
    tol = tie_tolerance(f)
    for a in range(0, f.n_labelings, _CHUNK):
        X = labelings(f.label_counts, a, a + _CHUNK)
        Y = _map_rows(p, X)
        ex, ey = _energies(f, X), _energies(f, Y)
        moved = np.any(X != Y, axis=1)
        if np.any(ey > ex + tol) or np.any(moved & (ey >= ex - tol)):
            return False
    return True


@dataclass
class PersistencyVerdict:
    valid: bool
    mode: str
    violating: np.ndarray | None = None
    n_optima: int = 0


def in_image(p, X) -> np.ndarray:
    """Rows of ``X`` fixed by ``p`` (for idempotent ``p`` that is ``p(X)``)."""
    return np.all(_map_rows(p, X) == X, axis=1)


def check_persistency(f: EnergyModel, p, mode: str = "weak",
                      cap: int = DEFAULT_CAP) -> PersistencyVerdict:
    """Weak: some optimum lies in ``p(X)``. Strict: all optima do.

    ``p`` is a node-wise map or anything with a ``map`` attribute holding one.
    """
    p = getattr(p, "map", p)
    _, X = all_optima(f, cap)
    inside = in_image(p, X)
    if mode == "weak":
        if inside.any():
            return PersistencyVerdict(True, mode, None, len(X))
        return PersistencyVerdict(False, mode, X[0], len(X))
    if mode == "strict":
        if inside.all():
            return PersistencyVerdict(True, mode, None, len(X))
        return PersistencyVerdict(False, mode, X[np.flatnonzero(~inside)[0]], len(X))
    raise InvalidInputError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------
# small-clique lifted polytope checks

def _nonempty_subsets(k):
    return [D for r in range(1, k + 1) for D in itertools.combinations(range(k), r)]


def lifted_vertex(bits) -> dict:
    """``zeta_D = prod_{s in D} z_s`` for a 0/1 vector ``bits``."""
    k = len(bits)
    return {D: float(all(bits[s] for s in D)) for D in _nonempty_subsets(k)}


def zeta_inequalities(k, z: dict) -> np.ndarray:
    """Values of ``sum_{D ⊆ C\\B} (-1)^|D| zeta_{D ∪ B}`` for all ``B``."""
    vals = []
    full = tuple(range(k))
    for r in range(k + 1):
        for B in itertools.combinations(full, r):
            rest = [s for s in full if s not in B]
            v = 0.0
            for q in range(len(rest) + 1):
                for D in itertools.combinations(rest, q):
                    U = tuple(sorted(D + B))
                    v += (-1) ** q * (1.0 if not U else z[U])
            vals.append(v)
    return np.array(vals)


def zeta_in_polytope(k, z: dict, tol: float = 1e-9) -> bool:
    return bool(np.all(zeta_inequalities(k, z) >= -tol))


def zeta_hull_check(k: int, z: dict, tol: float = 1e-9) -> bool:
    """Is ``z`` a convex combination of lifted 0/1 vertices (LP test)?"""
    if k > 3:
        raise InvalidInputError("hull check limited to cliques of size 3")
    subs = _nonempty_subsets(k)
    verts = [lifted_vertex(b) for b in itertools.product((0, 1), repeat=k)]
    V = np.array([[v[D] for D in subs] for v in verts]).T
    A_eq = np.vstack([V, np.ones((1, len(verts)))])
    b_eq = np.concatenate([[z[D] for D in subs], [1.0]])
    # minimize the total violation of A_eq w = b_eq with split slacks
    m, n = A_eq.shape
    A = np.hstack([A_eq, np.eye(m), -np.eye(m)])
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    res = linprog(c, A_eq=A, b_eq=b_eq, bounds=(0, None), method="highs")
    return bool(res.status == 0 and res.fun <= tol * m)


def multilinear_minima(k: int, coeffs: dict):
    """``(LP minimum over the lifted polytope, 0/1 minimum)`` of
    ``g(z) = coeffs[()] + sum_D coeffs[D] prod_{s in D} z_s``."""
    if k > 3:
        raise InvalidInputError("limited to cliques of size 3")
    subs = _nonempty_subsets(k)
    const = float(coeffs.get((), 0.0))
    brute = min(const + sum(float(coeffs.get(D, 0.0)) * all(b[s] for s in D) for D in subs)
                for b in itertools.product((0, 1), repeat=k))
    rows = []
    full = tuple(range(k))
    rhs = []
    for r in range(k + 1):
        for B in itertools.combinations(full, r):
            rest = [s for s in full if s not in B]
            row = np.zeros(len(subs))
            c0 = 0.0
            for q in range(len(rest) + 1):
                for D in itertools.combinations(rest, q):
                    U = tuple(sorted(D + B))
                    if U:
                        row[subs.index(U)] += (-1) ** q
                    else:
                        c0 += 1.0
            rows.append(-row)
            rhs.append(c0)
    c = np.array([float(coeffs.get(D, 0.0)) for D in subs])
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=(None, None), method="highs")
    if res.status != 0:
        raise RuntimeError(res.message)
    return const + float(res.fun), float(brute)


def multilinear_min_check(k: int, coeffs: dict, tol: float = 1e-8) -> bool:
    lp_min, brute = multilinear_minima(k, coeffs)
    return abs(lp_min - brute) <= tol
