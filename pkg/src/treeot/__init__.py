"""Tree-Wasserstein distance and tree-regularized label distribution learning.

The closed form on a tree (:func:`tree_wasserstein`) is the core; the exact
LP and log-domain Sinkhorn routes are kept next to it as oracle and
baseline. Training, synthetic data, metrics and the benchmark harness build
on those.
"""

__version__ = "0.1.0"

from .exceptions import (
    BudgetExceededError,
    CycleError,
    DimensionError,
    DisconnectedError,
    DuplicateEdgeError,
    InvalidNodeError,
    MultipleParentsError,
    NegativeWeightError,
    NumericalError,
    TreeStructureError,
)
from .tree import RootedTree, attach_root, build_tree, load_tree, save_tree
from .transport import (
    SinkhornResult,
    exact_wasserstein,
    sinkhorn_log,
    sinkhorn_wasserstein,
    tree_wasserstein,
    uniform_offdiag_cost,
)
from .objective import (
    LossConfig,
    RegularizerKind,
    combined_loss,
    combined_loss_grad_logits,
    kl_loss,
    tw_regularizer,
    tw_regularizer_grad,
)
from .datagen import (
    Dataset,
    ExponentSign,
    SynthConfig,
    f_dist,
    generate,
    generate_splits,
    load_dataset,
    random_tree,
    save_dataset,
)
from .metrics import MetricReport, distribution_report
from .model import (
    LinearSoftmaxModel,
    TrainConfig,
    TrainingTrace,
    TreeWassersteinLDL,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .bench import BenchResult, run_bench, scaling_fit

__all__ = [
    "BenchResult",
    "BudgetExceededError",
    "CycleError",
    "Dataset",
    "DimensionError",
    "DisconnectedError",
    "DuplicateEdgeError",
    "ExponentSign",
    "InvalidNodeError",
    "LinearSoftmaxModel",
    "LossConfig",
    "MetricReport",
    "MultipleParentsError",
    "NegativeWeightError",
    "NumericalError",
    "RegularizerKind",
    "RootedTree",
    "SinkhornResult",
    "SynthConfig",
    "TrainConfig",
    "TrainingTrace",
    "TreeStructureError",
    "TreeWassersteinLDL",
    "attach_root",
    "build_tree",
    "combined_loss",
    "combined_loss_grad_logits",
    "distribution_report",
    "evaluate",
    "exact_wasserstein",
    "f_dist",
    "generate",
    "generate_splits",
    "kl_loss",
    "load_checkpoint",
    "load_dataset",
    "load_tree",
    "random_tree",
    "run_bench",
    "save_checkpoint",
    "save_dataset",
    "save_tree",
    "scaling_fit",
    "sinkhorn_log",
    "sinkhorn_wasserstein",
    "train",
    "tree_wasserstein",
    "tw_regularizer",
    "tw_regularizer_grad",
    "uniform_offdiag_cost",
]
