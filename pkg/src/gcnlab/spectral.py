"""Dirichlet energy, Rayleigh-quotient descent, power iteration and Fiedler vectors.

Conventions: the energy of X is E(X) = 0.5 Tr(X^T L X) with L the normalized
Laplacian, and the Rayleigh quotient is R(X) = E(X) / Tr(X^T X). Several
formulas below are written in terms of the unhalved ratio
``ratio = Tr(X^T L X) / Tr(X^T X) = 2 R(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import ConvOperator, Graph, OpKind, spmm


def _require_laplacian(lap: ConvOperator):
    if lap.kind is not OpKind.LAPLACIAN:
        raise ValueError(f"expected a LAPLACIAN operator, got {lap.kind.value}")


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(-1, 1) if X.ndim == 1 else X


def dirichlet_energy(X, lap: ConvOperator) -> float:
    """0.5 * Tr(X^T L X)."""
    _require_laplacian(lap)
    X = _as_2d(X)
    return 0.5 * float(np.sum(X * spmm(lap, X)))


def dirichlet_energy_pairwise(X, g: Graph) -> float:
    """Edge-sum form: 0.5 * sum over undirected edges of |x_i/sqrt(d_i) - x_j/sqrt(d_j)|^2.

    Equal to :func:`dirichlet_energy`; kept as an independent reference.
    """
    X = _as_2d(X)
    if X.shape[0] != g.n:
        raise ValueError(f"X has {X.shape[0]} rows, graph has {g.n} nodes")
    s = 1.0 / np.sqrt(g.degree.astype(np.float64))
    i, j = g.edges[:, 0], g.edges[:, 1]
    diff = X[i] * s[i, None] - X[j] * s[j, None]
    return 0.5 * float(np.sum(diff * diff))


@dataclass(frozen=True)
class RQState:
    X: np.ndarray
    energy: float
    norm_sq: float
    rq: float

    @property
    def ratio(self) -> float:
        return 2.0 * self.rq

    @classmethod
    def of(cls, X, lap: ConvOperator) -> "RQState":
        X = _as_2d(X)
        norm_sq = float(np.sum(X * X))
        if norm_sq == 0.0:
            raise ValueError("Rayleigh quotient is undefined at X = 0")
        energy = dirichlet_energy(X, lap)
        return cls(X, energy, norm_sq, energy / norm_sq)

    @classmethod
    def constrained(cls, X, lap: ConvOperator, c1: Optional[float] = None) -> "RQState":
        """State for X rescaled to |X|_F^2 = c1 (default n*d)."""
        X = _as_2d(X)
        if c1 is None:
            c1 = float(X.size)
        norm_sq = float(np.sum(X * X))
        if norm_sq == 0.0:
            raise ValueError("Rayleigh quotient is undefined at X = 0")
        return cls.of(X * np.sqrt(c1 / norm_sq), lap)


def rayleigh_quotient(X, lap: ConvOperator) -> float:
    return RQState.of(X, lap).rq


def rq_gradient(X, lap: ConvOperator) -> np.ndarray:
    """dR/dX = (L X - ratio * X) / Tr(X^T X)."""
    _require_laplacian(lap)
    X = _as_2d(X)
    norm_sq = float(np.sum(X * X))
    if norm_sq == 0.0:
        raise ValueError("Rayleigh quotient is undefined at X = 0")
    LX = spmm(lap, X)
    ratio = float(np.sum(X * LX)) / norm_sq
    return (LX - ratio * X) / norm_sq


def rq_descent_step(state: RQState, lap: ConvOperator) -> RQState:
    """One gradient step with eta = Tr(X^T X) / (2 - ratio), then rescale to the old norm.

    The step reduces to X_mid = (2I - L) X / (2 - ratio); R never increases.
    """
    _require_laplacian(lap)
    X = state.X
    if state.norm_sq == 0.0:
        raise ValueError("Rayleigh quotient is undefined at X = 0")
    X_mid = (2.0 * X - spmm(lap, X)) / (2.0 - state.ratio)
    mid_sq = float(np.sum(X_mid * X_mid))
    if mid_sq == 0.0:
        # X lies entirely in the eigenvalue-2 eigenspace; it is stationary
        return state
    return RQState.of(X_mid * np.sqrt(state.norm_sq / mid_sq), lap)


def power_iteration(op: ConvOperator, x0, k: int, normalize_each_step: bool = True) -> np.ndarray:
    """Apply ``op`` k times to x0; with normalization the result is a unit vector."""
    x = np.asarray(x0, dtype=np.float64).copy()
    if op.matrix.rows != op.matrix.cols:
        raise ValueError("power iteration needs a square operator")
    nrm = np.linalg.norm(x)
    if nrm == 0.0:
        raise ValueError("power iteration needs a nonzero start vector")
    if normalize_each_step:
        x /= nrm
    for _ in range(k):
        x = spmm(op, x)
        if normalize_each_step:
            nrm = np.linalg.norm(x)
            if nrm == 0.0:
                raise ValueError("iterate vanished: start vector lies in the null space")
            x /= nrm
    return x


def deflate_dominant(x, op: ConvOperator) -> np.ndarray:
    """Mean-subtraction matched to the operator: x - w * mean(x / w), w the dominant direction.

    For RW_RENORM w = 1 (plain mean); for SYM_RENORM w = sqrt(d~).
    """
    x = np.asarray(x, dtype=np.float64)
    w = op.dominant_direction()
    if x.ndim == 2:
        w = w[:, None]
    return x - w * np.mean(x / w, axis=0)


def fiedler_approx(op: ConvOperator, k: int = 500, seed: int = 0, tol: float = 1e-12) -> np.ndarray:
    """Unit vector along the second dominant eigenvector of a renormalized operator.

    Runs power iteration with mean-subtraction after every step. Mean
    subtraction is an oblique projection, so its fixed direction still
    carries a component along the dominant eigenvector; a final projection,
    orthogonal for SYM_RENORM and D~-weighted for RW_RENORM, removes it. That
    projection commutes with the iteration, so the result equals deflated
    power iteration of the same length.
    """
    if op.kind not in (OpKind.SYM_RENORM, OpKind.RW_RENORM):
        raise ValueError(f"fiedler_approx supports sym_renorm and rw_renorm, not {op.kind.value}")
    rng = np.random.default_rng(seed)
    x = deflate_dominant(rng.standard_normal(op.n), op)
    x /= np.linalg.norm(x)
    for _ in range(k):
        y = deflate_dominant(spmm(op, x), op)
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            break
        y /= nrm
        done = abs(float(y @ x)) > 1.0 - tol
        x = y
        if done:
            break
    dt = op.degrees_with_loops
    if op.kind is OpKind.SYM_RENORM:
        u = np.sqrt(dt)
        x = x - u * (u @ x) / (u @ u)
    else:
        x = x - (dt @ x) / dt.sum()
    return x / np.linalg.norm(x)


def canonical_eta(ratio: float, norm_sq: float) -> float:
    """eta = Tr(X^T X) / (2 - ratio), the step size that yields w(eta) = 1."""
    return norm_sq / (2.0 - ratio)


def weight_of_eta(eta: float, ratio: float, norm_sq: float) -> float:
    """Neighbor-aggregation weight w = 1 / (ratio - 1 + Tr(X^T X) / eta).

    ``ratio`` is Tr(X^T L X) / Tr(X^T X). Valid for eta >= 0, and when
    ratio < 1 only below Tr(X^T X) / (1 - ratio).
    """
    if norm_sq <= 0:
        raise ValueError("norm_sq must be positive")
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    if ratio < 1.0:
        bound = norm_sq / (1.0 - ratio)
        if eta >= bound:
            raise ValueError(f"eta = {eta} outside the valid domain eta < {bound}")
    if eta == 0:
        return 0.0
    return 1.0 / (ratio - 1.0 + norm_sq / eta)


def eta_of_weight(w: float, ratio: float, norm_sq: float) -> float:
    """Inverse of :func:`weight_of_eta` on its valid domain."""
    if w < 0:
        raise ValueError(f"w must be >= 0, got {w}")
    if w == 0:
        return 0.0
    return norm_sq / (1.0 / w - ratio + 1.0)
