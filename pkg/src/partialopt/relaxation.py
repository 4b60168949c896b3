"""Local LP relaxations: index sets, coupling structures and the
marginalization matrix ``A``.

A relaxed labeling ``mu`` lives on the flat index set
``I = {(C, x_C)}`` and belongs to the local polytope when ``A mu = 0``,
``mu >= 0`` and ``mu_() = 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .energy import EnergyModel
from .errors import InvalidInputError

BLP = "blp"
FLP = "flp"
KINDS = (BLP, FLP)


class IndexSet:
    """Flat coordinates for ``(C, x_C)`` pairs.

    Blocks follow the model's hyperedge order and, inside a block, the
    C-order flattening of the table. The constant hyperedge comes first so
    coordinate 0 is ``mu_()``.
    """

    def __init__(self, label_counts, hyperedges):
        self.label_counts = tuple(label_counts)
        self.hyperedges = tuple(hyperedges)
        if not self.hyperedges or self.hyperedges[0] != ():
            raise InvalidInputError("the constant hyperedge must come first")
        self.shapes = {}
        self.offsets = {}
        pos = 0
        for C in self.hyperedges:
            shape = tuple(self.label_counts[s] for s in C)
            self.shapes[C] = shape
            self.offsets[C] = pos
            pos += math.prod(shape)
        self.size = pos

    @classmethod
    def of(cls, f: EnergyModel) -> "IndexSet":
        return cls(f.label_counts, f.hyperedges)

    def block(self, C) -> slice:
        C = tuple(C)
        start = self.offsets[C]
        return slice(start, start + math.prod(self.shapes[C]))

    def coord(self, C, xC) -> int:
        C = tuple(C)
        shape = self.shapes[C]
        return self.offsets[C] + (int(np.ravel_multi_index(tuple(xC), shape)) if C else 0)

    def entry(self, i: int):
        """Inverse of :meth:`coord`."""
        for C in reversed(self.hyperedges):
            if self.offsets[C] <= i:
                xC = np.unravel_index(i - self.offsets[C], self.shapes[C]) if C else ()
                return C, tuple(int(v) for v in xC)
        raise IndexError(i)

    def entries(self):
        for C in self.hyperedges:
            for xC in itertools.product(*(range(k) for k in self.shapes[C])):
                yield C, xC

    def unary(self, s, i) -> int:
        return self.offsets[(s,)] + i

    def cost_vector(self, f: EnergyModel) -> np.ndarray:
        """Cost tables of ``f`` laid out over this index set (missing
        hyperedges contribute zeros)."""
        if f.label_counts != self.label_counts:
            raise InvalidInputError("label counts differ")
        c = np.zeros(self.size)
        for C, t in zip(f.hyperedges, f.tables):
            if C not in self.offsets:
                raise InvalidInputError(f"hyperedge {C} is not in the index set")
            c[self.block(C)] = t.ravel()
        return c

    def split(self, v) -> dict:
        """Vector over this index set as ``{C: shaped block}``."""
        return {C: np.asarray(v[self.block(C)]).reshape(self.shapes[C])
                for C in self.hyperedges}


@dataclass(frozen=True)
class ConstraintMatrix:
    """Sparse marginalization equalities ``A mu = 0``.

    ``rows[r] = (D, C, x_D)``: the row sums ``mu_C`` over assignments
    consistent with ``x_D`` and subtracts ``mu_D(x_D)``.
    """

    A: sp.csr_matrix
    rows: tuple
    index: IndexSet

    @property
    def shape(self):
        return self.A.shape

    def dual_dict(self, phi) -> dict:
        """Flat row multipliers as ``{(D, C): array over X_D}``."""
        out = {}
        start = 0
        for D, C, _ in self.rows:
            if (D, C) in out:
                continue
            n = math.prod(self.index.shapes[D])
            out[(D, C)] = np.asarray(phi[start:start + n]).reshape(self.index.shapes[D])
            start += n
        return out

    def dual_flat(self, phi: dict) -> np.ndarray:
        out = np.zeros(self.A.shape[0])
        start = 0
        done = set()
        for D, C, _ in self.rows:
            if (D, C) in done:
                continue
            done.add((D, C))
            n = math.prod(self.index.shapes[D])
            if (D, C) in phi:
                out[start:start + n] = np.asarray(phi[(D, C)]).ravel()
            start += n
        return out


@dataclass(frozen=True, eq=False)
class RelaxationSpec:
    """Coupling structure of a local relaxation.

    ``model`` is the energy the relaxation is built on: the input model for
    BLP, and a copy closed under subsets for FLP.
    """

    kind: str
    model: EnergyModel
    pairs: tuple

    @cached_property
    def index(self) -> IndexSet:
        return IndexSet.of(self.model)

    @cached_property
    def constraints(self) -> ConstraintMatrix:
        return _build_matrix(self.index, self.pairs)

    @property
    def has_order1(self) -> bool:
        need = {((s,), C) for C in self.model.hyperedges if len(C) > 1 for s in C}
        return need <= set(self.pairs)

    def costs(self, f: EnergyModel) -> np.ndarray:
        """Flat cost vector of ``f`` aligned with this relaxation."""
        return self.index.cost_vector(f)

    def align(self, f: EnergyModel) -> EnergyModel:
        """``f`` extended with zero tables to this relaxation's hyperedges."""
        return f.extended_to(self.model.hyperedges)

    def problem(self, c):
        """LP ``min <c, mu>`` over the relaxation polytope."""
        from .lp import LPProblem
        n = self.index.size
        lo = np.zeros(n)
        hi = np.full(n, np.inf)
        lo[0] = hi[0] = 1.0
        A = self.constraints.A
        return LPProblem(c=np.asarray(c, dtype=float), A_eq=A, b_eq=np.zeros(A.shape[0]),
                         lower=lo, upper=hi)


def build_spec(f: EnergyModel, kind: str = FLP) -> RelaxationSpec:
    """Coupling structure for BLP or FLP."""
    kind = kind.lower()
    if kind == BLP:
        pairs = [((), C) for C in f.hyperedges if C]
        pairs += [((s,), C) for C in f.hyperedges if len(C) > 1 for s in C]
        return RelaxationSpec(BLP, f, tuple(pairs))
    if kind == FLP:
        g = f.closed()
        edges = set(g.hyperedges)
        pairs = []
        for C in g.hyperedges:
            for r in range(len(C)):
                for D in itertools.combinations(C, r):
                    if D in edges:
                        pairs.append((D, C))
        return RelaxationSpec(FLP, g, tuple(pairs))
    raise InvalidInputError(f"unknown relaxation {kind!r}")


def _sub_index(shape_C, axes):
    """Flat index of ``x_D`` for every flat ``x_C``, D given by axes of C."""
    if not shape_C:
        return np.zeros(1, dtype=np.int64)
    grid = np.indices(shape_C).reshape(len(shape_C), -1)
    if not axes:
        return np.zeros(grid.shape[1], dtype=np.int64)
    return np.ravel_multi_index(tuple(grid[a] for a in axes),
                                tuple(shape_C[a] for a in axes))


def _build_matrix(idx: IndexSet, pairs) -> ConstraintMatrix:
    rows_meta = []
    ri, ci, vals = [], [], []
    r0 = 0
    for D, C in pairs:
        shape_D = idx.shapes[D]
        nD = math.prod(shape_D)
        axes = [C.index(s) for s in D]
        sub = _sub_index(idx.shapes[C], axes)
        nC = sub.size
        ri.append(r0 + sub)
        ci.append(idx.offsets[C] + np.arange(nC))
        vals.append(np.ones(nC))
        ri.append(r0 + np.arange(nD))
        ci.append(idx.offsets[D] + np.arange(nD))
        vals.append(-np.ones(nD))
        for xD in itertools.product(*(range(k) for k in shape_D)):
            rows_meta.append((D, C, xD))
        r0 += nD
    if ri:
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(ri), np.concatenate(ci))),
                          shape=(r0, idx.size))
    else:
        A = sp.csr_matrix((0, idx.size))
    return ConstraintMatrix(A, tuple(rows_meta), idx)


def build_constraints(spec: RelaxationSpec) -> ConstraintMatrix:
    return spec.constraints


def embed(x, idx: IndexSet) -> np.ndarray:
    """Indicator vector ``delta(x)``."""
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (len(idx.label_counts),):
        raise InvalidInputError("labeling has the wrong length")
    if np.any(x < 0) or np.any(x >= np.asarray(idx.label_counts)):
        raise InvalidInputError("label out of range")
    mu = np.zeros(idx.size)
    for C in idx.hyperedges:
        mu[idx.coord(C, x[list(C)])] = 1.0
    return mu


def check_feasible(mu, A, tol: float = 1e-8):
    """Return ``(feasible, max_residual)`` for the local polytope."""
    A = A.A if isinstance(A, ConstraintMatrix) else A
    mu = np.asarray(mu, dtype=float)
    res = [max(0.0, -float(mu.min())) if mu.size else 0.0, abs(float(mu[0]) - 1.0)]
    if A.shape[0]:
        res.append(float(np.max(np.abs(A @ mu))))
    r = max(res)
    return r <= tol, r


def restrict(mu, src: IndexSet, dst: IndexSet) -> np.ndarray:
    """Drop the blocks of ``mu`` whose hyperedges ``dst`` lacks."""
    out = np.zeros(dst.size)
    for C in dst.hyperedges:
        out[dst.block(C)] = mu[src.block(C)]
    return out


def export_triplets(cm: ConstraintMatrix, path, meta_path=None) -> None:
    """Write ``A`` as ``row col value`` lines plus a row-metadata sidecar."""
    coo = cm.A.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in sorted(zip(coo.row, coo.col, coo.data)):
            fh.write(f"{r} {c} {v:g}\n")
    meta_path = meta_path or f"{path}.rows"
    with open(meta_path, "w", encoding="utf-8") as fh:
        for r, (D, C, xD) in enumerate(cm.rows):
            fh.write(f"{r} D={list(D)} C={list(C)} x_D={list(xD)}\n")
