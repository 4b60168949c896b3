"""Node-wise maps, subset-to-one maps and the lifted zeta machinery.

A subset-to-one map with test labeling ``y`` keeps a subset of labels in
every node and sends the others to ``y_s``. It is encoded by indicators
``zeta[s, i]`` (1 = label stays) with ``zeta[s, y_s] = 0`` by convention.
The lifted vector has one component per ``(D, x_D)`` with ``D`` a nonempty
subset of some hyperedge and every ``x_s != y_s``; for integral maps it is
the product of the node indicators. Components touching ``y`` are zero and
are not stored; ``zeta_() = 1`` is implicit.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError

MAX_CLIQUE = 8
ROUND_TOL = 1e-6


def _subsets(items):
    items = tuple(items)
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


# ---------------------------------------------------------------------
# node-wise maps

@dataclass(frozen=True, eq=False)
class NodewiseMap:
    """Per-node label maps ``p_s``."""

    arrays: tuple

    def __post_init__(self):
        arrs = []
        for a in self.arrays:
            a = np.array(a, dtype=np.int64).ravel()
            if a.size == 0 or np.any(a < 0) or np.any(a >= a.size):
                raise InvalidInputError("map values must be labels of the same node")
            a.setflags(write=False)
            arrs.append(a)
        object.__setattr__(self, "arrays", tuple(arrs))

    @classmethod
    def identity(cls, label_counts) -> "NodewiseMap":
        return cls(tuple(np.arange(k) for k in label_counts))

    @property
    def label_counts(self):
        return tuple(a.size for a in self.arrays)

    def __call__(self, x):
        return apply_map(self, x)

    def __eq__(self, other):
        return isinstance(other, NodewiseMap) and len(self.arrays) == len(other.arrays) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays, other.arrays))

    __hash__ = None

    def is_idempotent(self) -> bool:
        return all(np.array_equal(a[a], a) for a in self.arrays)

    def compose(self, other: "NodewiseMap") -> "NodewiseMap":
        """``self o other`` (apply ``other`` first)."""
        return NodewiseMap(tuple(a[b] for a, b in zip(self.arrays, other.arrays)))

    def eliminated(self):
        """Labels moved by the map, as sorted ``(s, i)`` pairs."""
        return [(s, int(i)) for s, a in enumerate(self.arrays)
                for i in np.flatnonzero(a != np.arange(a.size))]

    def image(self, s):
        return np.unique(self.arrays[s])

    def block_image(self, shape_axes):
        """Flat image index of every ``x_C`` for the nodes ``shape_axes``."""
        nodes = shape_axes
        shape = tuple(self.arrays[s].size for s in nodes)
        if not nodes:
            return np.zeros(1, dtype=np.int64)
        grid = np.indices(shape).reshape(len(shape), -1)
        mapped = tuple(self.arrays[s][grid[k]] for k, s in enumerate(nodes))
        return np.ravel_multi_index(mapped, shape)


def apply_map(p: NodewiseMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (len(p.arrays),):
        raise InvalidInputError("labeling length differs from the map")
    return np.array([p.arrays[s][x[s]] for s in range(x.size)], dtype=np.int64)


def _power(a, k):
    out = np.arange(a.size)
    base = a.copy()
    while k:
        if k & 1:
            out = base[out]
        base = base[base]
        k >>= 1
    return out


def idempotent_power(p: NodewiseMap) -> NodewiseMap:
    """Smallest power ``p^k`` that is idempotent (same ``k`` for all nodes)."""
    L, tail = 1, 0
    for a in p.arrays:
        for start in range(a.size):
            seen = {}
            v, step = start, 0
            while v not in seen:
                seen[v] = step
                v = int(a[v])
                step += 1
            L = math.lcm(L, step - seen[v])
            tail = max(tail, seen[v])
    k = L * max(1, -(-tail // L))
    return NodewiseMap(tuple(_power(a, k) for a in p.arrays))


def extend_apply(p: NodewiseMap, mu, idx) -> np.ndarray:
    """Linear extension ``[p] mu``: block-wise push-forward of ``mu``."""
    mu = np.asarray(mu, dtype=float)
    out = np.zeros_like(mu)
    for C in idx.hyperedges:
        blk = idx.block(C)
        img = p.block_image(C)
        np.add.at(out[blk], img, mu[blk])
    return out


# ---------------------------------------------------------------------
# subset-to-one maps and the lifted index

@dataclass(frozen=True, eq=False)
class SubsetToOneMap:
    """``p_s(i) = i`` if ``keep[s][i]`` else ``y_s``; ``keep[s][y_s]`` is False."""

    y: tuple
    keep: tuple

    def __post_init__(self):
        y = tuple(int(v) for v in self.y)
        keep = []
        for s, k in enumerate(self.keep):
            k = np.array(k, dtype=bool).ravel()
            if not 0 <= y[s] < k.size:
                raise InvalidInputError("test label out of range")
            k[y[s]] = False
            k.setflags(write=False)
            keep.append(k)
        if len(keep) != len(y):
            raise InvalidInputError("one keep mask per node")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "keep", tuple(keep))

    @classmethod
    def identity(cls, y, label_counts) -> "SubsetToOneMap":
        return cls(y, tuple(np.ones(k, dtype=bool) for k in label_counts))

    @classmethod
    def all_to(cls, y, label_counts) -> "SubsetToOneMap":
        return cls(y, tuple(np.zeros(k, dtype=bool) for k in label_counts))

    @property
    def label_counts(self):
        return tuple(k.size for k in self.keep)

    def to_nodewise(self) -> NodewiseMap:
        return NodewiseMap(tuple(np.where(k, np.arange(k.size), y)
                                 for k, y in zip(self.keep, self.y)))

    def eliminated(self):
        return [(s, int(i)) for s, k in enumerate(self.keep)
                for i in np.flatnonzero(~k) if i != self.y[s]]

    def in_p1y(self) -> bool:
        """All non-test labels of each node share one indicator."""
        return all(len({bool(k[i]) for i in range(k.size) if i != y}) <= 1
                   for k, y in zip(self.keep, self.y))


class ZetaIndex:
    """Canonical coordinates of the lifted vector for a fixed ``y``.

    Keys ``(D, x_D)`` are ordered by ``(len(D), D)`` and then ``x_D``
    lexicographically; ``D`` ranges over nonempty subsets of hyperedges.
    """

    def __init__(self, label_counts, hyperedges, y):
        self.label_counts = tuple(int(k) for k in label_counts)
        self.y = tuple(int(v) for v in y)
        if len(self.y) != len(self.label_counts):
            raise InvalidInputError("y has the wrong length")
        if any(not 0 <= v < k for v, k in zip(self.y, self.label_counts)):
            raise InvalidInputError("y out of range")
        subsets = set()
        self.hyperedges = tuple(C for C in hyperedges if C)
        for C in self.hyperedges:
            if len(C) > MAX_CLIQUE:
                raise InvalidInputError(f"hyperedge of size {len(C)} exceeds {MAX_CLIQUE}")
            for D in _subsets(C):
                if D:
                    subsets.add(D)
        self.subsets = tuple(sorted(subsets, key=lambda D: (len(D), D)))
        keys = []
        for D in self.subsets:
            ranges = [[i for i in range(self.label_counts[s]) if i != self.y[s]] for s in D]
            keys.extend((D, xD) for xD in itertools.product(*ranges))
        self.keys = tuple(keys)
        self.pos = {k: i for i, k in enumerate(keys)}
        self.size = len(keys)

    @classmethod
    def of(cls, f, y) -> "ZetaIndex":
        return cls(f.label_counts, f.hyperedges, y)

    def unary_positions(self):
        """Positions of the ``(s, i)`` components, ``i != y_s``."""
        return [self.pos[((s,), (i,))] for s in range(len(self.label_counts))
                for i in range(self.label_counts[s]) if i != self.y[s]]

    def lookup(self, D, xD):
        """Position of ``(D, x_D)``; ``-1`` for ``D = ()``, ``None`` if the
        component touches ``y`` and is structurally zero."""
        if not D:
            return -1
        return self.pos.get((tuple(D), tuple(xD)))


@dataclass(frozen=True, eq=False)
class ZetaVector:
    """Lifted variables over a :class:`ZetaIndex`."""

    index: ZetaIndex
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.index.size:
            raise InvalidInputError("zeta vector has the wrong length")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def y(self):
        return self.index.y

    def get(self, D, xD) -> float:
        k = self.index.lookup(D, xD)
        if k is None:
            return 0.0
        return 1.0 if k < 0 else float(self.values[k])

    def unary(self):
        return self.values[self.index.unary_positions()]

    def integrality_gap(self, unary_only=True) -> float:
        v = self.unary() if unary_only else self.values
        if v.size == 0:
            return 0.0
        return float(np.max(np.minimum(np.abs(v), np.abs(1.0 - v))))


def zeta_from_map(m: SubsetToOneMap, zindex: ZetaIndex) -> ZetaVector:
    """Integral lift: ``zeta_{D,x_D} = prod_s zeta_{s,x_s}``."""
    if tuple(m.y) != zindex.y:
        raise InvalidInputError("map and index use different test labelings")
    vals = np.array([all(m.keep[s][i] for s, i in zip(D, xD)) for D, xD in zindex.keys],
                    dtype=float)
    return ZetaVector(zindex, vals)


def map_from_zeta(z: ZetaVector, tol: float = ROUND_TOL) -> SubsetToOneMap:
    """Inverse of :func:`zeta_from_map` on (near-)integral vectors."""
    if z.values.size and np.max(np.minimum(np.abs(z.values), np.abs(1 - z.values))) > tol:
        raise InvalidInputError("zeta is not integral")
    idx = z.index
    keep = [np.zeros(k, dtype=bool) for k in idx.label_counts]
    for s, k in enumerate(idx.label_counts):
        for i in range(k):
            if i != idx.y[s]:
                keep[s][i] = z.get((s,), (i,)) > 0.5
    return SubsetToOneMap(idx.y, tuple(keep))


def zeta_square(z: ZetaVector) -> ZetaVector:
    return ZetaVector(z.index, z.values ** 2)


def round_zeta(z: ZetaVector, tol: float = ROUND_TOL) -> ZetaVector:
    """Limit of repeated squaring: ``[zeta = 1]`` with tolerance."""
    return ZetaVector(z.index, (z.values >= 1.0 - tol).astype(float))


# ---------------------------------------------------------------------
# linearized map P_zeta

@lru_cache(maxsize=4096)
def _expansion(shape, yC):
    """Polynomial expansion of ``P_zeta`` on one hyperedge.

    Returns arrays ``(col, d, row, sign)`` and the list of local subsets:
    input assignment ``col`` contributes ``sign * zeta_{D_d, x'_{D_d}}`` to
    output assignment ``row``; ``d = -1`` stands for the constant ``zeta_()``.
    Each term comes from a subset ``S`` of ``D`` of the coordinates that keep
    their input label, the rest taking the test label.
    """
    m = len(shape)
    local = list(_subsets(range(m)))
    dpos = {D: k for k, D in enumerate(local)}
    cols, ds, rows, signs = [], [], [], []
    for col, xp in enumerate(itertools.product(*(range(k) for k in shape))):
        active = tuple(a for a in range(m) if xp[a] != yC[a])
        for D in _subsets(active):
            for S in _subsets(D):
                x = tuple(xp[a] if a in S else yC[a] for a in range(m))
                cols.append(col)
                ds.append(dpos[D] if D else -1)
                rows.append(int(np.ravel_multi_index(x, shape)) if m else 0)
                signs.append(-1.0 if (len(D) - len(S)) % 2 else 1.0)
    return (np.array(cols, dtype=np.int64), np.array(ds, dtype=np.int64),
            np.array(rows, dtype=np.int64), np.array(signs)), tuple(local)


def _zeta_columns(C, zindex, cols, ds, local, shape):
    """Global zeta positions for each expansion term (-1 for the constant)."""
    out = np.full(ds.size, -1, dtype=np.int64)
    if not C:
        return out
    xps = np.array(list(itertools.product(*(range(k) for k in shape))), dtype=np.int64)
    for t in np.flatnonzero(ds >= 0):
        D = local[ds[t]]
        key = (tuple(C[a] for a in D), tuple(int(xps[cols[t], a]) for a in D))
        out[t] = zindex.pos[key]
    return out


class _CliqueExpansion:
    """Expansion of one hyperedge with zeta positions resolved."""

    def __init__(self, C, zindex: ZetaIndex):
        self.C = C
        self.shape = tuple(zindex.label_counts[s] for s in C)
        yC = tuple(zindex.y[s] for s in C)
        (self.cols, ds, self.rows, self.signs), local = _expansion(self.shape, yC)
        self.zpos = _zeta_columns(C, zindex, self.cols, ds, local, self.shape)
        self.n = math.prod(self.shape)

    def matrix(self, z: ZetaVector) -> np.ndarray:
        vals = np.where(self.zpos >= 0, z.values[np.maximum(self.zpos, 0)], 1.0)
        P = np.zeros((self.n, self.n))
        np.add.at(P, (self.rows, self.cols), self.signs * vals)
        return P

    def cost_coefficients(self, fC: np.ndarray):
        """Coefficients of ``(P_zeta^T f)_C(x')`` as ``(const, sparse)``.

        ``const[x']`` is the constant part; ``lin`` maps
        ``(x', zeta position)`` to the coefficient.
        """
        f = np.asarray(fC, dtype=float).ravel()
        w = self.signs * f[self.rows]
        const = np.zeros(self.n)
        m0 = self.zpos < 0
        np.add.at(const, self.cols[m0], w[m0])
        lin = sp.coo_matrix((w[~m0], (self.cols[~m0], self.zpos[~m0])))
        return const, lin


class _Expansions(dict):
    def __init__(self, zindex):
        super().__init__()
        self.zindex = zindex

    def __missing__(self, C):
        e = _CliqueExpansion(C, self.zindex)
        self[C] = e
        return e


def expansions(zindex: ZetaIndex) -> _Expansions:
    """Lazy per-hyperedge expansion cache for ``zindex``."""
    return _Expansions(zindex)


def p_zeta_block(z: ZetaVector, C) -> np.ndarray:
    """Dense ``(P_zeta)_C`` with rows = output, columns = input assignment."""
    return _CliqueExpansion(tuple(C), z.index).matrix(z)


def apply_P_zeta(z: ZetaVector, mu, idx) -> np.ndarray:
    """``P_zeta mu`` block by block."""
    mu = np.asarray(mu, dtype=float)
    out = np.zeros_like(mu)
    out[0] = mu[0]
    for C in idx.hyperedges:
        if not C:
            continue
        blk = idx.block(C)
        out[blk] = p_zeta_block(z, C) @ mu[blk]
    return out


class LinearMapAction:
    """Linear operator on relaxed labelings induced by a map.

    Wraps either a :class:`NodewiseMap` (``[p]``) or a :class:`ZetaVector`
    (``P_zeta``; the test labeling comes from its index).
    """

    def __init__(self, p: NodewiseMap | None = None, zeta: ZetaVector | None = None):
        if (p is None) == (zeta is None):
            raise InvalidInputError("give exactly one of a map or a zeta vector")
        if isinstance(p, SubsetToOneMap):
            p = p.to_nodewise()
        self.p = p
        self.zeta = zeta

    def block(self, C) -> np.ndarray:
        C = tuple(C)
        if self.zeta is not None:
            return p_zeta_block(self.zeta, C) if C else np.ones((1, 1))
        img = self.p.block_image(C)
        P = np.zeros((img.size, img.size))
        P[img, np.arange(img.size)] = 1.0
        return P

    def apply(self, mu, idx) -> np.ndarray:
        if self.p is not None:
            return extend_apply(self.p, mu, idx)
        return apply_P_zeta(self.zeta, mu, idx)

    def adjoint(self, c, idx) -> np.ndarray:
        """``P^T c`` for a vector over ``idx``."""
        c = np.asarray(c, dtype=float)
        out = np.zeros_like(c)
        for C in idx.hyperedges:
            blk = idx.block(C)
            if self.p is not None:
                # (P^T c)_C(x) = c_C(p(x))
                out[blk] = c[blk][self.p.block_image(C)]
            else:
                out[blk] = self.block(C).T @ c[blk]
        return out


# ---------------------------------------------------------------------
# polytope Z

def zeta_constraints(zindex: ZetaIndex, hyperedges=None):
    """Identity-inequality rows of the lifted polytope.

    For every hyperedge ``C``, every ``x' in X~_C`` and every ``B ⊆ C``::

        sum_{D ⊆ C \\ B} (-1)^|D| zeta_{D ∪ B, x'_{D ∪ B}} >= 0

    Returns ``(G, g0)`` meaning ``G @ zeta + g0 >= 0``; identical rows are
    merged.
    """
    hyperedges = zindex.hyperedges if hyperedges is None else tuple(C for C in hyperedges if C)
    seen = {}
    k, y = zindex.label_counts, zindex.y
    for C in hyperedges:
        ranges = [[i for i in range(k[s]) if i != y[s]] for s in C]
        for xp in itertools.product(*ranges):
            xmap = dict(zip(C, xp))
            for B in _subsets(C):
                rest = tuple(s for s in C if s not in B)
                const = 0.0
                terms = {}
                for D in _subsets(rest):
                    U = tuple(sorted(D + B))
                    sgn = -1.0 if len(D) % 2 else 1.0
                    if not U:
                        const += sgn
                    else:
                        pos = zindex.pos[(U, tuple(xmap[s] for s in U))]
                        terms[pos] = terms.get(pos, 0.0) + sgn
                key = (const, tuple(sorted(terms.items())))
                seen.setdefault(key, None)
    rows, cols, vals, g0 = [], [], [], []
    for r, (const, items) in enumerate(seen):
        g0.append(const)
        for pos, v in items:
            rows.append(r)
            cols.append(pos)
            vals.append(v)
    G = sp.csr_matrix((vals, (rows, cols)), shape=(len(g0), zindex.size))
    return G, np.array(g0)


def zeta_feasible(z: ZetaVector, tol: float = 1e-9) -> bool:
    G, g0 = zeta_constraints(z.index)
    return bool(np.all(G @ z.values + g0 >= -tol))
