"""MLP / GCN / SGC / eta-GCN model builders with per-layer normalization tricks."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, NonFiniteError, Tape, Tensor
from .graph import ConvOperator, OpKind, spmm


class Family(str, enum.Enum):
    MLP = "mlp"
    GCN = "gcn"
    SGC = "sgc"


class Trick(str, enum.Enum):
    NONE = "none"
    MEAN_SUB = "mean_sub"
    PAIR_NORM = "pair_norm"
    BATCH_NORM = "batch_norm"


BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class ModelSpec:
    depth: int
    in_dim: int
    hidden_dim: int
    out_dim: int
    family: Family = Family.GCN
    operator: OpKind = OpKind.SYM_RENORM
    eta_weight: Optional[float] = None
    trick: Trick = Trick.NONE
    pair_norm_scale: float = 1.0
    # None means "on when depth > 3"
    skip: Optional[bool] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "operator", OpKind(self.operator))
        object.__setattr__(self, "trick", Trick(self.trick))
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        for name in ("in_dim", "hidden_dim", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.operator is OpKind.ETA and self.eta_weight is None:
            raise ValueError("eta operator needs eta_weight")
        if self.operator is OpKind.LAPLACIAN:
            raise ValueError("the Laplacian is not a propagation operator")
        if self.family is Family.SGC:
            if self.trick is not Trick.NONE:
                raise ValueError("SGC is linear; per-layer tricks are not allowed")
            if self.skip:
                raise ValueError("SGC has no hidden layers to skip over")
        if self.pair_norm_scale <= 0:
            raise ValueError("pair_norm_scale must be > 0")

    @property
    def use_skip(self) -> bool:
        if self.family is Family.SGC:
            return False
        return self.depth > 3 if self.skip is None else bool(self.skip)

    def layer_dims(self) -> list[tuple[int, int]]:
        if self.family is Family.SGC:
            return [(self.in_dim, self.out_dim)]
        if self.depth == 1:
            return [(self.in_dim, self.out_dim)]
        dims = [(self.in_dim, self.hidden_dim)]
        dims += [(self.hidden_dim, self.hidden_dim)] * (self.depth - 2)
        dims.append((self.hidden_dim, self.out_dim))
        return dims

    def trick_widths(self) -> list[int]:
        """Widths of the hidden inputs (layers 2..L) that receive the trick."""
        if self.family is Family.SGC or self.trick is Trick.NONE:
            return []
        return [fan_in for fan_in, _ in self.layer_dims()[1:]]


@dataclass
class ModelParams:
    weights: list[np.ndarray]
    gammas: list[np.ndarray] = field(default_factory=list)
    betas: list[np.ndarray] = field(default_factory=list)
    bn_state: list[BatchNormState] = field(default_factory=list)

    def trainable(self) -> list[np.ndarray]:
        """Flat view, in a fixed order: weights, then gammas, then betas."""
        return [*self.weights, *self.gammas, *self.betas]

    def copy(self) -> "ModelParams":
        return ModelParams(
            [w.copy() for w in self.weights],
            [g.copy() for g in self.gammas],
            [b.copy() for b in self.betas],
            [BatchNormState(s.mean.copy(), s.var.copy()) for s in self.bn_state],
        )


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(spec: ModelSpec) -> ModelParams:
    """Glorot-uniform weights; BatchNorm gamma = 1, beta = 0."""
    rng = np.random.default_rng(spec.seed)
    weights = []
    for fan_in, fan_out in spec.layer_dims():
        b = glorot_bound(fan_in, fan_out)
        weights.append(rng.uniform(-b, b, size=(fan_in, fan_out)))
    params = ModelParams(weights)
    if spec.trick is Trick.BATCH_NORM:
        for d in spec.trick_widths():
            params.gammas.append(np.ones((1, d)))
            params.betas.append(np.zeros((1, d)))
            params.bn_state.append(BatchNormState(np.zeros((1, d)), np.ones((1, d))))
    return params


def _mean_sub_weights(op: Optional[ConvOperator]) -> Optional[np.ndarray]:
    if op is None or op.kind is OpKind.RW_RENORM:
        return None
    return op.dominant_direction()


def _trick(h: Tensor, spec: ModelSpec, op, k: int, leaves, params: ModelParams, training: bool) -> Tensor:
    if spec.trick is Trick.MEAN_SUB:
        return ad.col_mean_subtract(h, _mean_sub_weights(op))
    if spec.trick is Trick.PAIR_NORM:
        return ad.row_l2_rescale(ad.col_mean_subtract(h), spec.pair_norm_scale)
    if spec.trick is Trick.BATCH_NORM:
        gamma, beta = leaves
        return ad.batch_norm(
            h, gamma, beta, BN_EPS, params.bn_state[k], training=training, momentum=BN_MOMENTUM
        )
    return h


def apply_trick(
    X,
    trick: Trick | str,
    op: Optional[ConvOperator] = None,
    pair_norm_scale: float = 1.0,
    gamma=None,
    beta=None,
) -> np.ndarray:
    """Array version of the per-layer transformation.

    MEAN_SUB removes the operator's dominant direction: the plain column mean
    for RW_RENORM (or no operator), the sqrt(d~)-weighted form for symmetric
    operators. PAIR_NORM is plain mean subtraction followed by a global
    rescale. BATCH_NORM standardizes columns (gamma = 1, beta = 0 by default).
    """
    trick = Trick(trick)
    X = np.asarray(X, dtype=np.float64)
    if trick is Trick.MEAN_SUB:
        return ad.col_mean_subtract(X, _mean_sub_weights(op)).value
    if trick is Trick.PAIR_NORM:
        return ad.row_l2_rescale(ad.col_mean_subtract(X), pair_norm_scale).value
    if trick is Trick.BATCH_NORM:
        d = X.shape[1]
        gamma = np.ones((1, d)) if gamma is None else gamma
        beta = np.zeros((1, d)) if beta is None else beta
        return ad.batch_norm(X, gamma, beta, BN_EPS, training=True).value
    raise ValueError("apply_trick needs a trick other than NONE")


@dataclass
class ForwardResult:
    logits: Tensor
    # per-layer outputs X^(1..L); the last entry is the logits
    activations: list[np.ndarray]
    # parameter leaves in ModelParams.trainable() order (empty without a tape)
    leaves: list[Tensor]


def propagate(op: ConvOperator, X, k: int) -> np.ndarray:
    """op^k X."""
    X = np.asarray(X, dtype=np.float64)
    for _ in range(k):
        X = spmm(op, X)
    return X


def _check_operator(spec: ModelSpec, op: Optional[ConvOperator]):
    if spec.family is Family.MLP:
        return
    if op is None:
        raise ValueError(f"{spec.family.value} needs a convolution operator")
    if op.kind is not spec.operator:
        raise ValueError(f"model expects {spec.operator.value}, got {op.kind.value}")
    if op.kind is OpKind.ETA and op.weight != float(spec.eta_weight):
        raise ValueError(f"model expects eta weight {spec.eta_weight}, got {op.weight}")


def forward(
    spec: ModelSpec,
    params: ModelParams,
    X0,
    op: Optional[ConvOperator],
    tape: Optional[Tape] = None,
    training: bool = False,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    sgc_features: Optional[np.ndarray] = None,
) -> ForwardResult:
    """Run the model; records on ``tape`` when given.

    GCN layer l: h <- trick(h) (hidden inputs only), dropout, h W, propagate,
    ReLU except on the last layer. With skip connections the post-ReLU
    output of hidden layer l is added to that of layer l + 2. MLP is the same
    without propagation. SGC computes op^L X0 W with a single W.
    """
    _check_operator(spec, op)
    X0 = np.asarray(X0, dtype=np.float64)
    if X0.shape[1] != spec.in_dim:
        raise ValueError(f"features have {X0.shape[1]} columns, model expects {spec.in_dim}")
    if dropout > 0 and rng is None:
        raise ValueError("dropout needs an rng")

    if tape is not None:
        leaves = [tape.leaf(p) for p in params.trainable()]
    else:
        leaves = [ad.constant(p) for p in params.trainable()]
    L = len(params.weights)
    W = leaves[:L]
    n_bn = len(params.gammas)
    gammas, betas = leaves[L : L + n_bn], leaves[L + n_bn :]

    if spec.family is Family.SGC:
        feats = propagate(op, X0, spec.depth) if sgc_features is None else sgc_features
        h = ad.dropout(ad.constant(feats), dropout, rng) if training else ad.constant(feats)
        logits = ad.matmul(h, W[0])
        # intermediate depths through the same W, computed on the small n x m product
        acts = []
        z = X0 @ params.weights[0]
        for _ in range(spec.depth - 1):
            z = spmm(op, z)
            acts.append(z)
        acts.append(logits.value)
        return ForwardResult(logits, acts, leaves)

    h = ad.constant(X0)
    acts: list[np.ndarray] = []
    skip_from: Optional[Tensor] = None
    for l in range(L):
        try:
            if l > 0 and spec.trick is not Trick.NONE:
                bn = (gammas[l - 1], betas[l - 1]) if spec.trick is Trick.BATCH_NORM else None
                h = _trick(h, spec, op, l - 1, bn, params, training)
            if training and dropout > 0:
                h = ad.dropout(h, dropout, rng)
            z = ad.matmul(h, W[l])
            if spec.family is Family.GCN:
                z = ad.spmm_op(op, z)
            if l < L - 1:
                z = ad.relu(z)
                if spec.use_skip and l % 2 == 0:
                    if skip_from is not None:
                        z = ad.add(z, skip_from)
                    skip_from = z
        except NonFiniteError as exc:
            raise NonFiniteError(f"layer {l + 1}: {exc}") from exc
        acts.append(z.value)
        h = z
    return ForwardResult(h, acts, leaves)
