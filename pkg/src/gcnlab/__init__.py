"""Graph convolutional networks and Laplacian-smoothing diagnostics on NumPy."""

from .autodiff import NonFiniteError, Tape, Tensor, backward, grad_check
from .data import BundleError, load_bundle, load_karate, write_bundle
from .graph import ConvOperator, Graph, GraphError, OperatorError, OpKind, build_graph, make_operator, spmm
from .models import Family, ModelParams, ModelSpec, Trick, apply_trick, forward, init_params
from .spectral import (
    dirichlet_energy,
    fiedler_approx,
    power_iteration,
    rayleigh_quotient,
    rq_descent_step,
    weight_of_eta,
)
from .training import Dataset, EpochRecord, TrainConfig, TrainingDiverged, evaluate, smoothing_scores, train

__all__ = [
    "BundleError", "ConvOperator", "Dataset", "EpochRecord", "Family", "Graph", "GraphError",
    "ModelParams", "ModelSpec", "NonFiniteError", "OpKind", "OperatorError", "Tape", "Tensor",
    "TrainConfig", "TrainingDiverged", "Trick", "apply_trick", "backward", "build_graph",
    "dirichlet_energy", "evaluate", "fiedler_approx", "forward", "grad_check", "init_params",
    "load_bundle", "load_karate", "make_operator", "power_iteration", "rayleigh_quotient",
    "rq_descent_step", "smoothing_scores", "spmm", "train", "weight_of_eta", "write_bundle",
]
