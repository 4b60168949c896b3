"""Energy functions over hypergraphs.

An energy is ``E_f(x) = sum_C f_C(x_C)`` where ``C`` ranges over the
hyperedges of the model, including the empty hyperedge (a constant) and
every singleton. Each table ``f_C`` is a dense array whose axes follow the
node order of ``C``, so its C-order flattening is lexicographic with the
last node's label varying fastest.
"""
from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import HEMParseError, InvalidInputError

Hyperedge = tuple


def _edge_key(C):
    return (len(C), C)


def _freeze(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Immutable hypergraph energy.

    Use :meth:`from_terms` to build one; it inserts the constant and the
    unary tables that are missing and sorts the hyperedges canonically
    (by size, then lexicographically), so the empty hyperedge is first.

    Attributes
    ----------
    label_counts : tuple of int
        ``|X_s|`` for every node ``s``.
    hyperedges : tuple of tuple of int
        Strictly increasing node tuples, canonically ordered.
    tables : tuple of ndarray
        One read-only table per hyperedge with shape
        ``tuple(label_counts[s] for s in C)``.
    seed : int or None
        Generator seed, if the model came from :func:`generate`.
    """

    label_counts: tuple
    hyperedges: tuple
    tables: tuple
    seed: int | None = None

    def __post_init__(self):
        if any(int(k) < 1 for k in self.label_counts):
            raise InvalidInputError("label counts must be positive")
        n = len(self.label_counts)
        if len(self.hyperedges) != len(self.tables):
            raise InvalidInputError("one table per hyperedge required")
        seen = set()
        for C, t in zip(self.hyperedges, self.tables):
            if C in seen:
                raise InvalidInputError(f"duplicate hyperedge {C}")
            seen.add(C)
            if any(b <= a for a, b in zip(C, C[1:])):
                raise InvalidInputError(f"hyperedge {C} is not strictly increasing")
            if any(s < 0 or s >= n for s in C):
                raise InvalidInputError(f"hyperedge {C} references an unknown node")
            if t.shape != tuple(self.label_counts[s] for s in C):
                raise InvalidInputError(f"table for {C} has shape {t.shape}")
            if not np.all(np.isfinite(t)):
                raise InvalidInputError(f"table for {C} has non-finite costs")
        if () not in seen or any((s,) not in seen for s in range(n)):
            raise InvalidInputError("constant and unary hyperedges must be present")
        object.__setattr__(self, "_pos", {C: i for i, C in enumerate(self.hyperedges)})

    # construction -----------------------------------------------------

    @classmethod
    def from_terms(cls, label_counts: Sequence[int], terms: Mapping, seed=None):
        """Build a model from ``{hyperedge: table}``.

        Tables may be flat (lexicographic order) or already shaped. Missing
        constant and unary tables are added as zeros.
        """
        label_counts = tuple(int(k) for k in label_counts)
        n = len(label_counts)
        tabs = {}
        for C, t in terms.items():
            C = tuple(int(s) for s in C)
            if any(b <= a for a, b in zip(C, C[1:])):
                raise InvalidInputError(f"hyperedge {C} is not strictly increasing")
            if any(s < 0 or s >= n for s in C):
                raise InvalidInputError(f"hyperedge {C} references an unknown node")
            if C in tabs:
                raise InvalidInputError(f"duplicate hyperedge {C}")
            shape = tuple(label_counts[s] for s in C)
            arr = np.asarray(t, dtype=np.float64)
            if arr.size != math.prod(shape):
                raise InvalidInputError(
                    f"table for {C} has {arr.size} entries, expected {math.prod(shape)}")
            tabs[C] = arr.reshape(shape)
        tabs.setdefault((), np.zeros(()))
        for s in range(n):
            tabs.setdefault((s,), np.zeros(label_counts[s]))
        order = sorted(tabs, key=_edge_key)
        return cls(label_counts, tuple(order), tuple(_freeze(tabs[C]) for C in order), seed)

    # accessors --------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.label_counts)

    @property
    def n_labelings(self) -> int:
        return math.prod(self.label_counts)

    @property
    def order(self) -> int:
        return max(len(C) for C in self.hyperedges)

    @property
    def is_binary(self) -> bool:
        return all(k == 2 for k in self.label_counts)

    @property
    def is_pairwise(self) -> bool:
        return self.order <= 2

    def has(self, C) -> bool:
        return tuple(C) in self._pos

    def table(self, C) -> np.ndarray:
        try:
            return self.tables[self._pos[tuple(C)]]
        except KeyError:
            raise InvalidInputError(f"no hyperedge {tuple(C)}") from None

    def terms(self) -> dict:
        return dict(zip(self.hyperedges, self.tables))

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(t))) if t.size else 0.0) for t in self.tables)

    def scale(self) -> float:
        return 1.0 + self.max_abs()

    def is_integral(self) -> bool:
        return all(np.all(t == np.round(t)) for t in self.tables)

    def evaluate(self, x) -> float:
        return evaluate(self, x)

    # derived models ---------------------------------------------------

    def with_tables(self, updates: Mapping) -> "EnergyModel":
        """Return a copy with some tables replaced or added."""
        terms = self.terms()
        for C, t in updates.items():
            terms[tuple(C)] = t
        return EnergyModel.from_terms(self.label_counts, terms, self.seed)

    def closed(self) -> "EnergyModel":
        """Copy closed under subsets; added hyperedges carry zero tables."""
        terms = self.terms()
        for C in self.hyperedges:
            for r in range(1, len(C)):
                for D in itertools.combinations(C, r):
                    if D not in terms:
                        terms[D] = np.zeros(tuple(self.label_counts[s] for s in D))
        if len(terms) == len(self.hyperedges):
            return self
        return EnergyModel.from_terms(self.label_counts, terms, self.seed)

    def extended_to(self, hyperedges) -> "EnergyModel":
        """Copy that also contains every hyperedge in ``hyperedges``."""
        missing = {tuple(C): np.zeros(tuple(self.label_counts[s] for s in C))
                   for C in hyperedges if tuple(C) not in self._pos}
        if not missing:
            return self
        return self.with_tables(missing)

    def same_structure(self, other: "EnergyModel") -> bool:
        return (self.label_counts == other.label_counts
                and self.hyperedges == other.hyperedges)

    def __eq__(self, other):
        if not isinstance(other, EnergyModel):
            return NotImplemented
        return self.same_structure(other) and all(
            np.array_equal(a, b) for a, b in zip(self.tables, other.tables))

    __hash__ = None


def check_labeling(f: EnergyModel, x) -> np.ndarray:
    """Validate ``x`` against ``f`` and return it as an int array."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != f.n_nodes:
        raise InvalidInputError(
            f"labeling has shape {x.shape}, model has {f.n_nodes} nodes")
    if x.size and not np.issubdtype(x.dtype, np.integer):
        if not np.all(x == np.round(x)):
            raise InvalidInputError("labels must be integers")
    x = x.astype(np.int64)
    k = np.asarray(f.label_counts)
    if np.any(x < 0) or np.any(x >= k):
        raise InvalidInputError("label out of range")
    return x


def evaluate(f: EnergyModel, x) -> float:
    """Energy of labeling ``x``, constant term included."""
    x = check_labeling(f, x)
    return float(sum(t[tuple(x[list(C)])] for C, t in zip(f.hyperedges, f.tables)))


def energies(f: EnergyModel, X: np.ndarray) -> np.ndarray:
    """Vectorized energies of the rows of ``X`` (shape ``(M, N)``)."""
    X = np.asarray(X, dtype=np.int64)
    out = np.zeros(X.shape[0])
    for C, t in zip(f.hyperedges, f.tables):
        if C:
            out += t[tuple(X[:, s] for s in C)]
        else:
            out += float(t)
    return out


def reparametrize(f: EnergyModel, phi: Mapping, coupling) -> EnergyModel:
    """Equivalent transformation ``f - A^T phi``.

    Parameters
    ----------
    f : EnergyModel
    phi : mapping
        ``{(D, C): array over X_D}``; keys must be coupling pairs. For
        ``D = ()`` the value is a scalar.
    coupling : RelaxationSpec
        Anything with a ``pairs`` attribute listing ``(D, C)``.

    Returns
    -------
    EnergyModel
        Model over ``f``'s hyperedges plus any coupling targets it lacked.
        ``f_C`` loses ``phi_{D,C}(x_D)`` for every lower coupling and gains
        ``phi_{C,H}(x_C)`` for every upper coupling.
    """
    pairs = set(coupling.pairs)
    edges = {C for pair in pairs for C in pair}
    g = f.extended_to(sorted(edges, key=_edge_key))
    k = g.label_counts
    new = {C: np.array(t, dtype=np.float64) for C, t in g.terms().items()}
    for key, val in phi.items():
        D, C = tuple(key[0]), tuple(key[1])
        if (D, C) not in pairs:
            raise InvalidInputError(f"({D}, {C}) is not a coupling pair")
        val = np.asarray(val, dtype=np.float64)
        shape = tuple(k[s] for s in D)
        if val.size != math.prod(shape):
            raise InvalidInputError(f"multiplier for ({D}, {C}) has wrong size")
        val = val.reshape(shape)
        # broadcast phi over the axes of C that are not in D
        bshape = tuple(k[s] if s in D else 1 for s in C)
        new[C] -= val.reshape(bshape)
        new[D] += val
    return EnergyModel.from_terms(k, new, f.seed)


# ---------------------------------------------------------------------
# instance generation

@dataclass(frozen=True)
class InstanceSeedSpec:
    """Parameters of a random instance.

    ``kind`` is one of ``potts``, ``full``, ``poly``, ``posiform-grid``.
    Grid kinds use ``rows`` x ``cols``; ``potts`` and ``full`` fall back to
    a chain of ``nodes`` when no grid is given.
    """

    kind: str
    rows: int | None = None
    cols: int | None = None
    nodes: int | None = None
    labels: int = 2
    degree: int = 3
    terms: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise InvalidInputError(f"unknown generator {self.kind!r}")
        for name in ("rows", "cols", "nodes"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise InvalidInputError(f"{name} must be at least 1")
        if self.labels < 1 or self.degree < 1 or self.terms < 0:
            raise InvalidInputError("labels and degree must be at least 1")


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def grid_edges(rows, cols):
    """4-connected grid edges, nodes numbered row-major."""
    idx = lambda i, j: i * cols + j
    edges = []
    for i in range(rows):
        for j in range(cols):
            if j + 1 < cols:
                edges.append((idx(i, j), idx(i, j + 1)))
            if i + 1 < rows:
                edges.append((idx(i, j), idx(i + 1, j)))
    return sorted(edges)


def _layout(spec):
    if spec.rows is not None and spec.cols is not None:
        return spec.rows * spec.cols, grid_edges(spec.rows, spec.cols)
    if spec.nodes is None:
        raise InvalidInputError("need rows and cols, or nodes")
    n = spec.nodes
    return n, [(s, s + 1) for s in range(n - 1)]


def _gen_potts(spec):
    rng = _rng(spec.seed)
    n, edges = _layout(spec)
    K = spec.labels
    terms = {(s,): rng.integers(0, 101, size=K).astype(float) for s in range(n)}
    for e in edges:
        gamma = rng.integers(0, 51, size=K).astype(float)
        terms[e] = -np.diag(gamma)
    return terms, n, K


def _gen_full(spec):
    rng = _rng(spec.seed)
    n, edges = _layout(spec)
    K = spec.labels
    terms = {(s,): rng.integers(0, 101, size=K).astype(float) for s in range(n)}
    for e in edges:
        terms[e] = rng.integers(0, 101, size=(K, K)).astype(float)
    return terms, n, K


def _gen_poly(spec):
    # multilinear pseudo-Boolean polynomial: random unary terms plus
    # spec.terms monomials of size spec.degree with integer coefficients
    rng = _rng(spec.seed)
    n = spec.nodes if spec.nodes is not None else (spec.rows or 1) * (spec.cols or 1)
    d = min(spec.degree, n)
    terms = {}
    for s in range(n):
        t = np.zeros(2)
        t[1] = rng.integers(-100, 101)
        terms[(s,)] = t
    for _ in range(spec.terms):
        C = tuple(sorted(int(s) for s in rng.choice(n, size=d, replace=False)))
        t = terms.get(C, np.zeros((2,) * d))
        t[(1,) * d] += rng.integers(-100, 101)
        terms[C] = t
    return terms, n, 2


def posiform_windows(rows, cols, degree):
    """Hyperedges of a grid posiform of degree 3 or 4."""
    idx = lambda i, j: i * cols + j
    out = []
    for i in range(rows - 1):
        for j in range(cols - 1):
            if degree == 3:
                C = (idx(i, j), idx(i + 1, j), idx(i, j + 1))
            elif degree == 4:
                C = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1))
            else:
                raise InvalidInputError("posiform-grid supports degree 3 or 4")
            out.append(tuple(sorted(C)))
    return out


def _gen_posiform(spec):
    rng = _rng(spec.seed)
    if spec.rows is None or spec.cols is None:
        raise InvalidInputError("posiform-grid needs rows and cols")
    n = spec.rows * spec.cols
    terms = {}
    for C in posiform_windows(spec.rows, spec.cols, spec.degree):
        terms[C] = rng.integers(0, 101, size=(2,) * len(C)).astype(float)
    return terms, n, 2


GENERATORS = {
    "potts": _gen_potts,
    "full": _gen_full,
    "poly": _gen_poly,
    "posiform-grid": _gen_posiform,
}


def generate(spec: InstanceSeedSpec) -> EnergyModel:
    """Deterministic random instance for ``spec``."""
    terms, n, K = GENERATORS[spec.kind](spec)
    return EnergyModel.from_terms([K] * n, terms, seed=spec.seed)


# ---------------------------------------------------------------------
# HEM 1 text format

def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def dumps(f: EnergyModel, comment: str | None = None) -> str:
    buf = io.StringIO()
    buf.write("HEM 1\n")
    if f.seed is not None:
        buf.write(f"# seed {f.seed}\n")
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    buf.write(f"nodes {f.n_nodes}\n")
    buf.write("labels " + " ".join(str(k) for k in f.label_counts) + "\n")
    buf.write(f"terms {len(f.hyperedges)}\n")
    for C, t in zip(f.hyperedges, f.tables):
        fields = [str(len(C))] + [str(s) for s in C] + [_fmt(v) for v in t.ravel()]
        buf.write(" ".join(fields) + "\n")
    return buf.getvalue()


def loads(text: str) -> EnergyModel:
    """Parse HEM 1 text. Errors carry the offending line number."""
    lines = []
    seed = None
    for no, raw in enumerate(text.splitlines(), start=1):
        body, hash_, rest = raw.partition("#")
        if hash_:
            words = rest.split()
            if len(words) >= 2 and words[0] == "seed":
                try:
                    seed = int(words[1])
                except ValueError:
                    pass
        toks = body.split()
        if toks:
            lines.append((no, toks))
    it = iter(lines)

    def expect(keyword, count=None):
        try:
            no, toks = next(it)
        except StopIteration:
            raise HEMParseError(f"unexpected end of file, expected '{keyword}'") from None
        if toks[0] != keyword:
            raise HEMParseError(f"expected '{keyword}', found '{toks[0]}'", no)
        if count is not None and len(toks) != count + 1:
            raise HEMParseError(f"'{keyword}' expects {count} values", no)
        try:
            return no, [int(v) for v in toks[1:]]
        except ValueError:
            raise HEMParseError(f"non-integer value after '{keyword}'", no) from None

    no, ver = expect("HEM", 1)
    if ver != [1]:
        raise HEMParseError(f"unsupported version {ver[0]}", no)
    no, (n,) = expect("nodes", 1)
    if n < 0:
        raise HEMParseError("negative node count", no)
    no, k = expect("labels", n)
    if any(v < 1 for v in k):
        raise HEMParseError("label counts must be positive", no)
    no, (T,) = expect("terms", 1)
    terms = {}
    for _ in range(T):
        try:
            no, toks = next(it)
        except StopIteration:
            raise HEMParseError(f"expected {T} terms, found {len(terms)}") from None
        try:
            m = int(toks[0])
            C = tuple(int(s) for s in toks[1:1 + m])
        except ValueError:
            raise HEMParseError("bad hyperedge header", no) from None
        if m < 0 or len(C) != m:
            raise HEMParseError("bad hyperedge arity", no)
        if any(s < 0 or s >= n for s in C):
            raise HEMParseError(f"node id out of range in {C}", no)
        if any(b <= a for a, b in zip(C, C[1:])):
            raise HEMParseError(f"node ids not strictly increasing in {C}", no)
        if C in terms:
            raise HEMParseError(f"duplicate hyperedge {C}", no)
        L = math.prod(k[s] for s in C)
        vals = toks[1 + m:]
        if len(vals) != L:
            raise HEMParseError(f"hyperedge {C} needs {L} values, found {len(vals)}", no)
        try:
            arr = np.array([float(v) for v in vals])
        except ValueError:
            raise HEMParseError("non-numeric cost value", no) from None
        if not np.all(np.isfinite(arr)):
            raise HEMParseError("non-finite cost value", no)
        terms[C] = arr
    extra = next(it, None)
    if extra is not None:
        raise HEMParseError("trailing content after the declared terms", extra[0])
    return EnergyModel.from_terms(k, terms, seed=seed)


def save(f: EnergyModel, path, comment=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(f, comment))


def load(path) -> EnergyModel:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
