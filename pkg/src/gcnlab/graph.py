"""Undirected graphs and the normalized sparse operators built from them."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Invalid graph construction input."""


class OperatorError(ValueError):
    """Operator cannot be built for the requested kind/graph."""


class OpKind(str, enum.Enum):
    SYM_RENORM = "sym_renorm"
    RW_RENORM = "rw_renorm"
    SYM_PLAIN = "sym_plain"
    LAPLACIAN = "laplacian"
    ETA = "eta"


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """CSR matrix: sorted column indices per row, no stored zeros, float64 values."""

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(
            rows=m.shape[0],
            cols=m.shape[1],
            indptr=m.indptr.astype(np.int64),
            indices=m.indices.astype(np.int64),
            data=m.data.astype(np.float64),
        )

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    def get(self, i: int, j: int) -> float:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        k = np.searchsorted(self.indices[lo:hi], j)
        if k < hi - lo and self.indices[lo + k] == j:
            return float(self.data[lo + k])
        return 0.0

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr_t)


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph. ``edges`` holds each pair once with i < j, sorted."""

    n: int
    edges: np.ndarray
    degree: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def adjacency(self) -> SparseMatrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        ones = np.ones(2 * self.num_edges)
        a = sp.coo_matrix(
            (ones, (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(self.n, self.n),
        )
        return SparseMatrix.from_scipy(a)

    def has_isolated_nodes(self) -> bool:
        return bool(np.any(self.degree == 0))

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]]


def build_graph(n: int, edges: Iterable[tuple[int, int]]) -> Graph:
    """Deduplicate and symmetrize an edge list into a :class:`Graph`.

    Pairs may be given in either orientation and may repeat. Self-loops and
    out-of-range indices raise :class:`GraphError`.
    """
    if n < 0:
        raise GraphError(f"node count must be non-negative, got {n}")
    pairs = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) has an index outside [0, {n})")
        if i == j:
            raise GraphError(f"edge ({i}, {j}) is a self-loop")
        pairs.add((i, j) if i < j else (j, i))
    arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    degree = np.bincount(arr.ravel(), minlength=n).astype(np.int64)
    return Graph(n=n, edges=arr, degree=degree)


@dataclass(frozen=True, eq=False)
class ConvOperator:
    kind: OpKind
    matrix: SparseMatrix
    # d_i + 1 for the renormalized kinds, None otherwise
    degrees_with_loops: Optional[np.ndarray] = None
    weight: Optional[float] = None
    degree: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.matrix.rows

    @property
    def symmetric(self) -> bool:
        return self.kind is not OpKind.RW_RENORM

    def dominant_direction(self) -> np.ndarray:
        """Unnormalized eigenvector of the largest eigenvalue (eigenvalue 1)."""
        if self.kind is OpKind.RW_RENORM:
            return np.ones(self.n)
        if self.kind is OpKind.SYM_RENORM:
            return np.sqrt(self.degrees_with_loops)
        if self.kind is OpKind.ETA:
            return np.sqrt(1.0 + self.weight * self.degree)
        if self.kind is OpKind.SYM_PLAIN:
            return np.sqrt(self.degree.astype(np.float64))
        raise OperatorError("the Laplacian has no dominant smoothing direction")


def make_operator(g: Graph, kind: OpKind | str, w: Optional[float] = None) -> ConvOperator:
    """Build one of the normalized convolution operators of ``g``.

    SYM_RENORM  D~^-1/2 (I + A) D~^-1/2        with D~ = D + I
    RW_RENORM   D~^-1 (I + A)
    SYM_PLAIN   I + D^-1/2 A D^-1/2
    LAPLACIAN   I - D^-1/2 A D^-1/2
    ETA         D^^-1/2 (I + wA) D^^-1/2        with D^ = I + wD
    """
    kind = OpKind(kind)
    if kind is OpKind.ETA:
        if w is None:
            raise OperatorError("ETA operator requires a weight w")
        if not np.isfinite(w) or w < 0:
            raise OperatorError(f"ETA weight must be finite and >= 0, got {w}")
    elif w is not None:
        raise OperatorError(f"weight w is only accepted for ETA, not {kind.value}")

    n = g.n
    i, j = g.edges[:, 0], g.edges[:, 1]
    diag = np.arange(n)
    deg = g.degree.astype(np.float64)

    if kind in (OpKind.SYM_PLAIN, OpKind.LAPLACIAN) and g.has_isolated_nodes():
        bad = np.flatnonzero(g.degree == 0)[:5].tolist()
        raise OperatorError(
            f"nodes {bad} are isolated, so D^-1/2 is singular for {kind.value}; "
            "use a renormalized kind (sym_renorm, rw_renorm, eta) instead"
        )

    dtilde = None
    if kind is OpKind.SYM_RENORM:
        dtilde = deg + 1.0
        s = 1.0 / np.sqrt(dtilde)
        off = s[i] * s[j]
        diag_vals = s * s
        return _sym_operator(kind, n, i, j, off, diag_vals, dtilde=dtilde, degree=g.degree)
    if kind is OpKind.RW_RENORM:
        dtilde = deg + 1.0
        inv = 1.0 / dtilde
        rows = np.concatenate([i, j, diag])
        cols = np.concatenate([j, i, diag])
        vals = np.concatenate([inv[i], inv[j], inv])
        m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        return ConvOperator(kind, SparseMatrix.from_scipy(m), dtilde, None, g.degree)
    if kind is OpKind.SYM_PLAIN:
        s = 1.0 / np.sqrt(deg)
        return _sym_operator(kind, n, i, j, s[i] * s[j], np.ones(n), degree=g.degree)
    if kind is OpKind.LAPLACIAN:
        s = 1.0 / np.sqrt(deg)
        return _sym_operator(kind, n, i, j, -(s[i] * s[j]), np.ones(n), degree=g.degree)

    w = float(w)
    dhat = 1.0 + w * deg
    s = 1.0 / np.sqrt(dhat)
    return _sym_operator(kind, n, i, j, w * (s[i] * s[j]), s * s, weight=w, degree=g.degree)


def _sym_operator(kind, n, i, j, off, diag_vals, dtilde=None, weight=None, degree=None):
    diag = np.arange(n)
    rows = np.concatenate([i, j, diag])
    cols = np.concatenate([j, i, diag])
    vals = np.concatenate([off, off, diag_vals])
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    return ConvOperator(kind, SparseMatrix.from_scipy(m), dtilde, weight, degree)


def spmm(op: ConvOperator | SparseMatrix, X: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``op @ X`` (X may be a vector or a matrix)."""
    m = op.matrix if isinstance(op, ConvOperator) else op
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != m.cols:
        raise ValueError(f"operator has {m.cols} columns but X has {X.shape[0]} rows")
    return np.asarray(m.csr @ X)


def spmm_t(op: ConvOperator | SparseMatrix, X: np.ndarray) -> np.ndarray:
    """Transposed product ``op.T @ X``."""
    m = op.matrix if isinstance(op, ConvOperator) else op
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != m.rows:
        raise ValueError(f"operator has {m.rows} rows but X has {X.shape[0]} rows")
    if isinstance(op, ConvOperator) and op.symmetric:
        return np.asarray(m.csr @ X)
    return np.asarray(m.csr_t @ X)
