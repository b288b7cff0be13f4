"""Losses, Adam, the full-batch training loop and smoothing diagnostics."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, Tensor
from .graph import ConvOperator, Graph, OpKind, make_operator
from .models import Family, ModelParams, ModelSpec, Trick, forward, init_params, propagate
from .spectral import dirichlet_energy

UNLABELED = -1


@dataclass(eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    name: str = ""

    def __post_init__(self):
        n = self.graph.n
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        for attr in ("train_mask", "val_mask", "test_mask"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=bool))
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(f"features must be {n} x d, got {self.features.shape}")
        for attr in ("labels", "train_mask", "val_mask", "test_mask"):
            if getattr(self, attr).shape != (n,):
                raise ValueError(f"{attr} must have length {n}")
        if not self.train_mask.any():
            raise ValueError("train mask is empty")
        overlap = (
            (self.train_mask & self.val_mask)
            | (self.train_mask & self.test_mask)
            | (self.val_mask & self.test_mask)
        )
        if overlap.any():
            raise ValueError(f"masks overlap at nodes {np.flatnonzero(overlap)[:5].tolist()}")
        split = self.train_mask | self.val_mask | self.test_mask
        if np.any(self.labels[split] < 0):
            raise ValueError("every node in a split must be labeled")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.graph.n == other.graph.n
            and np.array_equal(self.graph.edges, other.graph.edges)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.train_mask, other.train_mask)
            and np.array_equal(self.val_mask, other.val_mask)
            and np.array_equal(self.test_mask, other.test_mask)
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    lr: float = 0.01
    optimizer: str = "adam"
    weight_decay: float = 5e-4
    gamma: float = 0.0
    dropout: float = 0.0
    eval_every: int = 1
    seed: int = 0
    # node-wise smoothing uses at most this many (seeded, uniform) nodes
    smoothing_sample: int = 1000
    smoothing: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss_l0: float
    loss_lreg: float
    acc_train: float
    acc_val: float
    acc_test: float
    smooth_feat: Optional[list[float]]
    smooth_node: Optional[list[float]]
    ms: float


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, reason: str = ""):
        super().__init__(f"training diverged at epoch {epoch}" + (f": {reason}" if reason else ""))
        self.epoch = epoch


def masked_cross_entropy(logits, labels, mask) -> Tensor:
    """Mean negative log-softmax at the true class over masked rows."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("masked_cross_entropy: empty mask")
    return ad.masked_nll(ad.log_softmax_rows(logits), labels, mask)


def combined_loss(logits, final_repr, labels, mask, lap: ConvOperator, gamma: float) -> Tensor:
    """L0 + gamma * L_reg, with L_reg the Dirichlet energy of ``final_repr``."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    l0 = masked_cross_entropy(logits, labels, mask)
    if gamma == 0:
        return l0
    if lap.kind is not OpKind.LAPLACIAN:
        raise ValueError("combined_loss needs the normalized Laplacian")
    return ad.add(l0, ad.scale(ad.trace_quadratic(final_repr, lap), gamma))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update, in place. Weight decay enters as grad += wd * param."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if weight_decay:
            g = g + weight_decay * p
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def _sgd_step(params, grads, lr, weight_decay):
    for p, g in zip(params, grads):
        p -= lr * (g + weight_decay * p)


def _abs_cos_mean(V: np.ndarray) -> float:
    norms = np.linalg.norm(V, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = V / safe[:, None]
    C = np.abs(U @ U.T)
    return float(min(1.0, C.mean()))


def smoothing_scores(X, node_idx: Optional[np.ndarray] = None) -> tuple[float, float]:
    """(feature-wise, node-wise) mean absolute pairwise cosine, diagonal included.

    Zero rows/columns contribute cosine 0. ``node_idx`` restricts the
    node-wise score to a subset of rows.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    feat = _abs_cos_mean(X.T)
    node = _abs_cos_mean(X if node_idx is None else X[node_idx])
    return feat, node


def accuracy(logits, labels, mask) -> float:
    """Argmax accuracy over ``mask``; ties go to the lowest class index."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("accuracy: empty mask")
    values = logits.value if isinstance(logits, Tensor) else np.asarray(logits)
    pred = np.argmax(values[mask], axis=1)
    return float(np.mean(pred == np.asarray(labels)[mask]))


def model_operator(spec: ModelSpec, graph: Graph) -> Optional[ConvOperator]:
    if spec.family is Family.MLP:
        return None
    w = spec.eta_weight if spec.operator is OpKind.ETA else None
    return make_operator(graph, spec.operator, w)


def laplacian_or_none(graph: Graph) -> Optional[ConvOperator]:
    if graph.has_isolated_nodes():
        return None
    return make_operator(graph, OpKind.LAPLACIAN)


def evaluate(params: ModelParams, spec: ModelSpec, dataset: Dataset, mask, op=None) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("evaluate: empty mask")
    op = model_operator(spec, dataset.graph) if op is None else op
    out = forward(spec, params, dataset.features, op, training=False)
    return accuracy(out.logits, dataset.labels, mask)


def _safe_acc(logits, labels, mask) -> float:
    return accuracy(logits, labels, mask) if np.any(mask) else math.nan


@dataclass
class TrainResult:
    records: list[EpochRecord]
    params: ModelParams
    initial_params: ModelParams = field(repr=False, default=None)


def train(
    dataset: Dataset,
    spec: ModelSpec,
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Full-batch training on L0 (plus gamma * L_reg when gamma > 0).

    Record ``e`` describes the model at the start of epoch ``e``: the loss
    that epoch's update descends, and evaluation-mode accuracies and
    smoothing scores of the same parameters. ``epochs = 0`` returns no
    records and the initial parameters.
    """
    if dataset.num_features != spec.in_dim:
        raise ValueError(f"dataset has {dataset.num_features} features, model expects {spec.in_dim}")
    if dataset.num_classes > spec.out_dim:
        raise ValueError(f"dataset has {dataset.num_classes} classes, model outputs {spec.out_dim}")
    graph = dataset.graph
    op = model_operator(spec, graph)
    lap = laplacian_or_none(graph)
    if config.gamma > 0 and lap is None:
        raise ValueError("L_reg needs the normalized Laplacian, which is undefined with isolated nodes")

    params = init_params(spec)
    initial = params.copy()
    trainable = params.trainable()
    adam = AdamState.zeros_like(trainable)
    rng = np.random.default_rng([config.seed, 1])
    sgc_features = propagate(op, dataset.features, spec.depth) if spec.family is Family.SGC else None

    node_idx = None
    if dataset.n > config.smoothing_sample:
        pick = np.random.default_rng([config.seed, 2]).choice(dataset.n, config.smoothing_sample, replace=False)
        node_idx = np.sort(pick)
    # evaluation reuses the training forward pass when the two would coincide
    same_eval = config.dropout == 0 and spec.trick is not Trick.BATCH_NORM

    X0, y = dataset.features, dataset.labels
    records = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        try:
            tape = Tape()
            fw = forward(spec, params, X0, op, tape, training=True, dropout=config.dropout, rng=rng, sgc_features=sgc_features)
            l0 = masked_cross_entropy(fw.logits, y, dataset.train_mask)
            loss = l0
            if config.gamma > 0:
                loss = ad.add(l0, ad.scale(ad.trace_quadratic(fw.logits, lap), config.gamma))
            grads = ad.backward(tape, loss)
        except NonFiniteError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc
        lreg = dirichlet_energy(fw.logits.value, lap) if lap is not None else math.nan

        acc = (math.nan, math.nan, math.nan)
        feat = node = None
        if epoch % config.eval_every == 0 or epoch == config.epochs - 1:
            ev = fw if same_eval else forward(spec, params, X0, op, training=False, sgc_features=sgc_features)
            acc = tuple(_safe_acc(ev.logits, y, m) for m in (dataset.train_mask, dataset.val_mask, dataset.test_mask))
            if config.smoothing:
                scores = [smoothing_scores(a, node_idx) for a in ev.activations]
                feat = [s[0] for s in scores]
                node = [s[1] for s in scores]

        g = [grads[leaf.id] for leaf in fw.leaves]
        if config.optimizer == "adam":
            adam_step(trainable, g, adam, config.lr, config.weight_decay)
        else:
            _sgd_step(trainable, g, config.lr, config.weight_decay)
        if not all(np.all(np.isfinite(p)) for p in trainable):
            raise TrainingDiverged(epoch, "non-finite parameters after update")

        rec = EpochRecord(
            epoch=epoch,
            loss_l0=l0.item(),
            loss_lreg=lreg,
            acc_train=acc[0],
            acc_val=acc[1],
            acc_test=acc[2],
            smooth_feat=feat,
            smooth_node=node,
            ms=(time.perf_counter() - t0) * 1000.0,
        )
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(records, params, initial)
