"""Linear programming with primal and dual certificates.

Problems have the form::

    min  c.x   s.t.  A_eq x = b_eq,  A_ge x >= b_ge,  lower <= x <= upper

Two backends are available: ``"highs"`` (scipy's HiGHS wrapper, the
default) and ``"simplex"``, a small dense revised simplex with Bland's
rule meant for cross-checking on small problems. Every solution a backend
reports as optimal is re-checked here for primal feasibility, dual sign
conditions and the duality gap; a failed check turns the status into
``numeric-failure``.

Dual convention: ``reduced = c - A_eq^T y_eq - A_ge^T y_ge`` with
``y_ge >= 0``; ``reduced[j] >= 0`` at a lower bound and ``<= 0`` at an
upper bound.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import InvalidInputError, SolverError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERIC_FAILURE = "numeric-failure"

DEFAULT_TOL = 1e-8
# acceptance threshold for backend certificates; HiGHS works to 1e-7
CHECK_TOL = 1e-6


def _as_csr(A, n):
    if A is None:
        return sp.csr_matrix((0, n))
    return sp.csr_matrix(A, dtype=float)


@dataclass(frozen=True, eq=False)
class LPProblem:
    """Immutable LP data. Coordinates with ``lower == upper`` are fixed."""

    c: np.ndarray
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    A_ge: sp.csr_matrix | None = None
    b_ge: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        if n == 0:
            raise InvalidInputError("LP needs at least one coordinate")
        A_eq = _as_csr(self.A_eq, n)
        A_ge = _as_csr(self.A_ge, n)
        b_eq = np.zeros(A_eq.shape[0]) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        b_ge = np.zeros(A_ge.shape[0]) if self.b_ge is None else np.asarray(self.b_ge, float).ravel()
        lo = np.zeros(n) if self.lower is None else np.asarray(self.lower, float).ravel()
        hi = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float).ravel()
        if A_eq.shape[1] != n or A_ge.shape[1] != n:
            raise InvalidInputError("row width differs from the number of coordinates")
        if b_eq.size != A_eq.shape[0] or b_ge.size != A_ge.shape[0]:
            raise InvalidInputError("right-hand side length mismatch")
        if lo.size != n or hi.size != n:
            raise InvalidInputError("bound length mismatch")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b_eq)) and np.all(np.isfinite(b_ge))):
            raise InvalidInputError("LP data must be finite")
        if np.any(lo > hi):
            raise InvalidInputError("lower bound exceeds upper bound")
        for name, v in dict(c=c, A_eq=A_eq, b_eq=b_eq, A_ge=A_ge, b_ge=b_ge,
                            lower=lo, upper=hi).items():
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def scale(self) -> float:
        return 1.0 + float(np.max(np.abs(self.c)))

    def with_objective(self, c) -> "LPProblem":
        return LPProblem(c, self.A_eq, self.b_eq, self.A_ge, self.b_ge, self.lower, self.upper)

    def with_ge_row(self, row, rhs) -> "LPProblem":
        row = sp.csr_matrix(np.asarray(row, dtype=float).reshape(1, -1))
        return LPProblem(self.c, self.A_eq, self.b_eq, sp.vstack([self.A_ge, row]).tocsr(),
                         np.append(self.b_ge, rhs), self.lower, self.upper)

    def with_bounds(self, lower=None, upper=None) -> "LPProblem":
        return LPProblem(self.c, self.A_eq, self.b_eq, self.A_ge, self.b_ge,
                         self.lower if lower is None else lower,
                         self.upper if upper is None else upper)

    def dumps(self) -> str:
        """Plain-text listing of objective, rows and bounds."""
        lines = ["minimize"]
        lines.append("  " + " ".join(f"{v:+g} x{j}" for j, v in enumerate(self.c) if v))
        lines.append("subject to")
        for tag, A, b, op in (("e", self.A_eq, self.b_eq, "="), ("g", self.A_ge, self.b_ge, ">=")):
            for r in range(A.shape[0]):
                row = A.getrow(r)
                terms = " ".join(f"{v:+g} x{j}" for j, v in zip(row.indices, row.data))
                lines.append(f"  {tag}{r}: {terms or '0'} {op} {b[r]:g}")
        lines.append("bounds")
        for j in range(self.n):
            lines.append(f"  {self.lower[j]:g} <= x{j} <= {self.upper[j]:g}")
        lines.append("end")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class LPSolution:
    """Primal-dual result.

    ``psi`` is the reduced cost of coordinate 0, which in a relaxation LP is
    the fixed ``mu_()`` and in that case equals the dual objective.
    """

    status: str
    x: np.ndarray | None = None
    y_eq: np.ndarray | None = None
    y_ge: np.ndarray | None = None
    reduced: np.ndarray | None = None
    objective: float = float("nan")
    dual_objective: float = float("nan")
    time: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def psi(self) -> float:
        return float(self.reduced[0])

    def require_optimal(self, what="LP") -> "LPSolution":
        if not self.optimal:
            raise SolverError(f"{what} returned status {self.status}", self.status)
        return self


# ---------------------------------------------------------------------
# timing

_clocks: list = []


class LPClock:
    """Accumulates wall time spent inside :func:`solve`."""

    def __init__(self):
        self.elapsed = 0.0
        self.count = 0


@contextlib.contextmanager
def lp_clock():
    clk = LPClock()
    _clocks.append(clk)
    try:
        yield clk
    finally:
        _clocks.remove(clk)


# ---------------------------------------------------------------------
# certificates

def dual_objective(p: LPProblem, y_eq, y_ge, reduced) -> float:
    val = float(p.b_eq @ y_eq) + float(p.b_ge @ y_ge)
    pos = (reduced > 0) & np.isfinite(p.lower)
    neg = (reduced < 0) & np.isfinite(p.upper)
    with np.errstate(invalid="ignore"):
        val += float(np.sum(np.where(pos, p.lower * reduced, 0.0)))
        val += float(np.sum(np.where(neg, p.upper * reduced, 0.0)))
    return val


def certificate_residuals(p: LPProblem, sol: LPSolution) -> dict:
    """Primal infeasibility, dual sign violation, gap and complementarity."""
    x = sol.x
    prim = [0.0]
    if p.A_eq.shape[0]:
        prim.append(float(np.max(np.abs(p.A_eq @ x - p.b_eq))))
    if p.A_ge.shape[0]:
        prim.append(float(np.max(np.maximum(p.b_ge - p.A_ge @ x, 0.0))))
    prim.append(float(np.max(np.maximum(p.lower - x, 0.0))))
    prim.append(float(np.max(np.maximum(x - p.upper, 0.0))))
    d = sol.reduced
    dual = [0.0]
    if sol.y_ge.size:
        dual.append(float(np.max(np.maximum(-sol.y_ge, 0.0))))
    # a positive reduced cost needs a finite lower bound, a negative one a finite upper
    dual.append(float(np.max(np.where(np.isinf(p.lower), np.maximum(d, 0.0), 0.0))))
    dual.append(float(np.max(np.where(np.isinf(p.upper), np.maximum(-d, 0.0), 0.0))))
    comp = [0.0]
    with np.errstate(invalid="ignore"):
        lo_gap = np.where(np.isfinite(p.lower), x - p.lower, 0.0)
        hi_gap = np.where(np.isfinite(p.upper), p.upper - x, 0.0)
    comp.append(float(np.max(np.abs(np.maximum(d, 0.0) * lo_gap))))
    comp.append(float(np.max(np.abs(np.maximum(-d, 0.0) * hi_gap))))
    if p.A_ge.shape[0]:
        comp.append(float(np.max(np.abs(sol.y_ge * (p.A_ge @ x - p.b_ge)))))
    return dict(primal=max(prim), dual=max(dual),
                gap=abs(sol.objective - sol.dual_objective), complementarity=max(comp))


def _finish(p, status, x, y_eq, y_ge, t0, info, check_tol):
    if status != OPTIMAL:
        return LPSolution(status, time=time.perf_counter() - t0, info=info)
    x = np.asarray(x, dtype=float)
    y_eq = np.asarray(y_eq, dtype=float)
    y_ge = np.asarray(y_ge, dtype=float)
    reduced = p.c - p.A_eq.T @ y_eq - p.A_ge.T @ y_ge
    # fixed coordinates carry any reduced cost
    obj = float(p.c @ x)
    dobj = dual_objective(p, y_eq, y_ge, reduced)
    sol = LPSolution(OPTIMAL, x, y_eq, y_ge, np.asarray(reduced), obj, dobj, 0.0, info)
    res = certificate_residuals(p, sol)
    info = dict(info, residuals=res)
    sc = 1.0 + abs(obj)
    ok = (res["primal"] <= check_tol * p.scale and res["dual"] <= check_tol * p.scale
          and res["gap"] <= check_tol * sc * p.scale)
    return LPSolution(OPTIMAL if ok else NUMERIC_FAILURE, x, y_eq, y_ge, np.asarray(reduced),
                      obj, dobj, time.perf_counter() - t0, info)


# ---------------------------------------------------------------------
# backends

def _solve_highs(p: LPProblem, tol: float, check_tol: float) -> LPSolution:
    t0 = time.perf_counter()
    bounds = np.column_stack([np.where(np.isinf(p.lower), None, p.lower),
                              np.where(np.isinf(p.upper), None, p.upper)])
    opts = dict(primal_feasibility_tolerance=max(tol, 1e-10),
                dual_feasibility_tolerance=max(tol, 1e-10))
    res = linprog(p.c,
                  A_ub=-p.A_ge if p.A_ge.shape[0] else None,
                  b_ub=-p.b_ge if p.A_ge.shape[0] else None,
                  A_eq=p.A_eq if p.A_eq.shape[0] else None,
                  b_eq=p.b_eq if p.A_eq.shape[0] else None,
                  bounds=bounds, method="highs", options=opts)
    info = dict(backend="highs", message=res.message, iterations=getattr(res, "nit", None))
    status = {0: OPTIMAL, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, NUMERIC_FAILURE)
    if status != OPTIMAL:
        return _finish(p, status, None, None, None, t0, info, check_tol)
    y_eq = res.eqlin.marginals if p.A_eq.shape[0] else np.zeros(0)
    y_ge = -res.ineqlin.marginals if p.A_ge.shape[0] else np.zeros(0)
    return _finish(p, OPTIMAL, res.x, y_eq, y_ge, t0, info, check_tol)


def _bland(M, r, cost, basis, allowed, tol, max_iter):
    """Revised simplex with Bland's rule on ``M z = r, z >= 0``.

    ``allowed`` marks columns that may enter. Basic columns that may not
    enter (artificials) are driven out whenever the entering column touches
    their row, so they stay at zero. Returns ``(status, basis, iterations)``.
    """
    m, n = M.shape
    basis = list(basis)
    blocked = ~allowed
    for it in range(max_iter):
        B = M[:, basis]
        try:
            xB = np.linalg.solve(B, r)
            y = np.linalg.solve(B.T, cost[basis])
        except np.linalg.LinAlgError:
            return NUMERIC_FAILURE, basis, it
        d = cost - M.T @ y
        d[basis] = 0.0
        cand = np.flatnonzero((d < -tol) & allowed)
        if cand.size == 0:
            return OPTIMAL, basis, it
        j = int(cand[0])
        col = np.linalg.solve(B, M[:, j])
        best = None
        for k in range(m):
            if blocked[basis[k]] and xB[k] <= tol and abs(col[k]) > tol:
                ratio = 0.0
            elif col[k] > tol:
                ratio = max(xB[k], 0.0) / col[k]
            else:
                continue
            key = (ratio, basis[k])
            if best is None or key[0] < best[0] - 1e-12 or (
                    abs(key[0] - best[0]) <= 1e-12 and key[1] < best[1]):
                best = (key[0], basis[k], k)
        if best is None:
            return UNBOUNDED, basis, it
        basis[best[2]] = j
    return NUMERIC_FAILURE, basis, max_iter


def _solve_simplex(p: LPProblem, tol: float, check_tol: float, max_iter=20000) -> LPSolution:
    t0 = time.perf_counter()
    n = p.n
    Aeq = p.A_eq.toarray()
    Age = p.A_ge.toarray()
    # x = shift + T z, z >= 0; columns of T per original variable
    cols = []          # (orig index, sign)
    shift = np.zeros(n)
    ub_rows = []       # (z column, width)
    for j in range(n):
        lo, hi = p.lower[j], p.upper[j]
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                ub_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nz = len(cols)
    T = np.zeros((n, nz))
    for k, (j, sgn) in enumerate(cols):
        T[j, k] = sgn
    m_eq, m_ge, m_ub = Aeq.shape[0], Age.shape[0], len(ub_rows)
    m = m_eq + m_ge + m_ub
    nslack = m_ge + m_ub
    M = np.zeros((m, nz + nslack))
    r = np.zeros(m)
    M[:m_eq, :nz] = Aeq @ T
    r[:m_eq] = p.b_eq - Aeq @ shift
    M[m_eq:m_eq + m_ge, :nz] = Age @ T
    M[m_eq:m_eq + m_ge, nz:nz + m_ge] = -np.eye(m_ge)
    r[m_eq:m_eq + m_ge] = p.b_ge - Age @ shift
    for i, (k, w) in enumerate(ub_rows):
        M[m_eq + m_ge + i, k] = 1.0
        M[m_eq + m_ge + i, nz + m_ge + i] = 1.0
        r[m_eq + m_ge + i] = w
    cost = np.concatenate([T.T @ p.c, np.zeros(nslack)])
    sign = np.where(r < 0, -1.0, 1.0)
    M *= sign[:, None]
    r *= sign
    info = dict(backend="simplex")
    if m == 0:
        if np.any(cost < -tol):
            return _finish(p, UNBOUNDED, None, None, None, t0, info, check_tol)
        return _finish(p, OPTIMAL, shift.copy(), np.zeros(0), np.zeros(0), t0, info, check_tol)
    ntot = M.shape[1]
    M1 = np.hstack([M, np.eye(m)])
    allowed = np.concatenate([np.ones(ntot, bool), np.zeros(m, bool)])
    c1 = np.concatenate([np.zeros(ntot), np.ones(m)])
    # phase 1: artificials may leave but never re-enter
    st, basis, it1 = _bland(M1, r, c1, list(range(ntot, ntot + m)), allowed, tol, max_iter)
    if st != OPTIMAL:
        return _finish(p, NUMERIC_FAILURE, None, None, None, t0, info, check_tol)
    xB = np.linalg.solve(M1[:, basis], r)
    if float(c1[basis] @ xB) > 1e-7 * (1.0 + float(np.max(np.abs(r)))):
        return _finish(p, INFEASIBLE, None, None, None, t0, info, check_tol)
    c2 = np.concatenate([cost, np.zeros(m)])
    st, basis, it2 = _bland(M1, r, c2, basis, allowed, tol, max_iter)
    info["iterations"] = it1 + it2
    if st != OPTIMAL:
        return _finish(p, st, None, None, None, t0, info, check_tol)
    B = M1[:, basis]
    zfull = np.zeros(M1.shape[1])
    zfull[basis] = np.linalg.solve(B, r)
    ystd = np.linalg.solve(B.T, c2[basis]) * sign
    x = shift + T @ zfull[:nz]
    return _finish(p, OPTIMAL, x, ystd[:m_eq], ystd[m_eq:m_eq + m_ge], t0, info, check_tol)


BACKENDS: dict[str, Callable] = {"highs": _solve_highs, "simplex": _solve_simplex}
_default_backend = ["highs"]


def set_default_backend(name: str) -> None:
    if name not in BACKENDS:
        raise InvalidInputError(f"unknown LP backend {name!r}")
    _default_backend[0] = name


def solve(p: LPProblem, tol: float = DEFAULT_TOL, backend: str | None = None,
          check_tol: float = CHECK_TOL) -> LPSolution:
    """Solve ``p``; never reports optimal without valid certificates."""
    name = backend or _default_backend[0]
    try:
        fn = BACKENDS[name]
    except KeyError:
        raise InvalidInputError(f"unknown LP backend {name!r}") from None
    t0 = time.perf_counter()
    sol = fn(p, tol, check_tol)
    dt = time.perf_counter() - t0
    for clk in _clocks:
        clk.elapsed += dt
        clk.count += 1
    return sol


# ---------------------------------------------------------------------
# optimal face

SUPPORT_THRESHOLD = 1e-5


def optimal_support(p: LPProblem, base: LPSolution, coords, tol: float = 1e-9,
                    threshold: float = SUPPORT_THRESHOLD, backend=None) -> np.ndarray:
    """Which coordinates can be positive on the optimal face.

    The face is relaxed to ``c.x <= opt + tol * scale``; coordinate ``i``
    is reported when ``max x_i`` over it exceeds ``threshold``. The slack
    and the threshold are separate because a coordinate whose cost rises at
    rate ``r`` off the face reaches ``slack / r`` inside the relaxed face.

    A first auxiliary LP maximizes the sum of the open coordinates and
    marks every coordinate it makes positive; this repeats until the sum
    drops below the threshold. Any coordinate still undecided after a round
    that marks nothing gets its own LP.
    """
    base.require_optimal("base LP")
    coords = np.asarray(list(coords), dtype=np.int64)
    out = np.zeros(coords.size, dtype=bool)
    if coords.size == 0:
        return out
    face = p.with_ge_row(-p.c, -(base.objective + tol * p.scale))
    open_ = np.ones(coords.size, dtype=bool)
    # the base point already shows some of the support
    hit = base.x[coords] > threshold
    out |= hit
    open_ &= ~hit

    def maximize(sel):
        c = np.zeros(p.n)
        np.add.at(c, coords[sel], -1.0)
        sol = solve(face.with_objective(c), tol=min(tol, 1e-9), backend=backend)
        if sol.status == UNBOUNDED:
            return None
        return sol.require_optimal("support LP")

    while open_.any():
        sol = maximize(open_)
        if sol is None:
            out[open_] = True
            break
        vals = sol.x[coords]
        if float(vals[open_].sum()) <= threshold:
            break
        hit = open_ & (vals > threshold)
        if hit.any():
            out |= hit
            open_ &= ~hit
            continue
        for k in np.flatnonzero(open_):
            sel = np.zeros(coords.size, dtype=bool)
            sel[k] = True
            s = maximize(sel)
            out[k] = s is None or s.x[coords[k]] > threshold
            open_[k] = False
    return out
