"""Linear-softmax label-distribution model trained with Adam.

:func:`train` is the functional entry point; :class:`TreeWassersteinLDL`
wraps it as a scikit-learn estimator so it can sit in pipelines and grid
searches.
"""

from dataclasses import dataclass, field, asdict
import json
import math
import os
import struct

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_finite, check_length
from .exceptions import DimensionError, NumericalError
from .metrics import distribution_report
from .objective import (
    KL_EPSILON,
    LossConfig,
    RegularizerKind,
    loss_and_grad_logits,
)
from .transport import SINKHORN_ITERATIONS, SINKHORN_REG

INIT_SCALE = 0.05
CHECKPOINT_MAGIC = b"TWLDLCK\x00"
CHECKPOINT_VERSION = 1
EXACT_LP_MAX_NODES = 500


@dataclass
class LinearSoftmaxModel:
    """``softmax(weights @ x + biases)``; weights has one row per label."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise DimensionError("weights must be (L, d) and biases (L,)")

    @property
    def n_labels(self):
        return self.weights.shape[0]

    @property
    def n_features(self):
        return self.weights.shape[1]

    @classmethod
    def initialize(cls, n_labels, n_features, rng, scale=INIT_SCALE):
        w = rng.uniform(-scale, scale, size=(n_labels, n_features))
        b = rng.uniform(-scale, scale, size=n_labels)
        return cls(w, b)

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        check_length(x, self.n_features, "x")
        check_finite(x, "x")
        return x @ self.weights.T + self.biases

    def predict(self, x):
        """Label distribution for one sample (1-D ``x``) or a batch (2-D)."""
        return softmax(self.logits(x), axis=-1)

    def copy(self):
        return LinearSoftmaxModel(self.weights.copy(), self.biases.copy())


def predict(model, x):
    return model.predict(x)


class Adam:
    """Adam with bias-corrected moments, updating arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.epsilon)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["loss"] = LossConfig(**d.get("loss", {}))
        return cls(**d)


@dataclass
class TrainingTrace:
    """Per-epoch training losses, averaged per sample over the epoch's minibatches.

    Each minibatch contributes the loss at the parameters it was
    differentiated at, i.e. before its own update.
    """

    total: list = field(default_factory=list)
    kl_part: list = field(default_factory=list)
    reg_part: list = field(default_factory=list)

    def append(self, total, kl, reg):
        self.total.append(total)
        self.kl_part.append(kl)
        self.reg_part.append(reg)

    def to_csv(self):
        lines = ["epoch,total,kl_part,reg_part"]
        for i, (t, k, r) in enumerate(zip(self.total, self.kl_part, self.reg_part)):
            lines.append(f"{i},{t!r},{k!r},{r!r}")
        return "\n".join(lines) + "\n"


def train(dataset, tree, cfg, init=None):
    """Fit a :class:`LinearSoftmaxModel` by minibatch Adam.

    Each epoch draws a fresh permutation from the seeded generator and walks
    it in ``cfg.batch_size`` chunks (the last one may be short). Gradients
    are summed over the batch.

    Returns
    -------
    model : LinearSoftmaxModel
    trace : TrainingTrace
        One entry per epoch.

    Raises
    ------
    NumericalError
        If a loss or gradient becomes non-finite; ``context`` names the
        epoch and batch.
    """
    X, Y = dataset.features, dataset.targets
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if Y.shape[1] != tree.node_count:
        raise DimensionError("targets do not match the tree")
    rng = np.random.default_rng(cfg.seed)
    model = init.copy() if init is not None else LinearSoftmaxModel.initialize(
        tree.node_count, X.shape[1], rng
    )
    opt = Adam(
        [model.weights, model.biases],
        lr=cfg.learning_rate,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        epsilon=cfg.adam_epsilon,
    )
    trace = TrainingTrace()
    n = len(X)
    lam = cfg.loss.lam
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        kl_sum = 0.0
        reg_sum = 0.0
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            # non-finite values are caught just below, with their location
            with np.errstate(over="ignore", invalid="ignore"):
                kl, reg, g_logits = loss_and_grad_logits(tree, model.logits(xb), Y[idx], cfg.loss)
            kl_b, reg_b = float(kl.sum()), float(reg.sum())
            if not (math.isfinite(kl_b) and math.isfinite(reg_b) and np.all(np.isfinite(g_logits))):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {batch}", epoch=epoch, batch=batch
                )
            kl_sum += kl_b
            reg_sum += reg_b
            opt.step([g_logits.T @ xb, g_logits.sum(axis=0)])
        trace.append((kl_sum + lam * reg_sum) / n, kl_sum / n, reg_sum / n)
    return model, trace


def evaluate(model, dataset, tree=None, exact_method="auto"):
    """Mean metrics of ``model`` on ``dataset``.

    The Wasserstein column uses unit edge weights. ``exact_method="auto"``
    solves the transport LP when the tree has at most 500 nodes and uses the
    closed form (which is equal) above that.
    """
    tree = dataset.tree if tree is None else tree
    if dataset.n_features != model.n_features or tree.node_count != model.n_labels:
        raise DimensionError(
            f"model is (L={model.n_labels}, d={model.n_features}), data is "
            f"(L={tree.node_count}, d={dataset.n_features})"
        )
    if exact_method == "auto":
        exact_method = "lp" if tree.node_count <= EXACT_LP_MAX_NODES else "tree"
    pred = model.predict(dataset.features)
    return distribution_report(tree.with_unit_weights(), pred, dataset.targets, exact_method)


# -- checkpoints ---------------------------------------------------------------------


def save_checkpoint(model, path, train_config=None):
    """Little-endian binary checkpoint plus a ``.json`` sidecar with the config.

    Layout: magic (8 bytes), version (u32), L (u64), d (u64), weights
    row-major (f64), biases (f64).
    """
    L, d = model.weights.shape
    header = CHECKPOINT_MAGIC + struct.pack("<IQQ", CHECKPOINT_VERSION, L, d)
    payload = (
        header
        + model.weights.astype("<f8").tobytes(order="C")
        + model.biases.astype("<f8").tobytes()
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
    sidecar = {"format_version": CHECKPOINT_VERSION, "n_labels": L, "n_features": d}
    if train_config is not None:
        sidecar["train_config"] = train_config.to_dict()
    with open(f"{path}.json.tmp", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(f"{path}.json.tmp", f"{path}.json")


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    head = len(CHECKPOINT_MAGIC)
    if blob[:head] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, L, d = struct.unpack_from("<IQQ", blob, head)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = head + struct.calcsize("<IQQ")
    expected = offset + 8 * (L * d + L)
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated or oversized checkpoint")
    w = np.frombuffer(blob, dtype="<f8", count=L * d, offset=offset).reshape(L, d)
    b = np.frombuffer(blob, dtype="<f8", count=L, offset=offset + 8 * L * d)
    return LinearSoftmaxModel(w.astype(np.float64), b.astype(np.float64))


# -- scikit-learn estimator ------------------------------------------------------


class TreeWassersteinLDL(BaseEstimator):
    """Label distribution learning with a tree-Wasserstein penalty.

    Minimizes ``sum_i KL(y_i || h(x_i)) + lam * R(h(x_i), y_i)`` over a
    linear-softmax model ``h`` with Adam.

    Parameters
    ----------
    tree : RootedTree
        Label hierarchy; column ``l`` of the targets is node ``l``.
    lam : float, default=1.0
        Weight of the regularizer. ``0`` gives plain KL training.
    regularizer : {"tree_wasserstein", "sinkhorn", "none"}, default="tree_wasserstein"
    epochs : int, default=500
    batch_size : int, default=10
    learning_rate : float, default=1e-3
    random_state : int, default=0
    sinkhorn_iterations : int, default=10
    sinkhorn_reg : float, default=50.0
    sinkhorn_convention : {"inverse", "epsilon"}, default="inverse"
    kl_epsilon : float, default=1e-12

    Attributes
    ----------
    coef_ : ndarray of shape (n_labels, n_features)
    intercept_ : ndarray of shape (n_labels,)
    trace_ : TrainingTrace
    n_features_in_ : int
    """

    def __init__(
        self,
        tree=None,
        lam=1.0,
        regularizer="tree_wasserstein",
        epochs=500,
        batch_size=10,
        learning_rate=1e-3,
        random_state=0,
        sinkhorn_iterations=SINKHORN_ITERATIONS,
        sinkhorn_reg=SINKHORN_REG,
        sinkhorn_convention="inverse",
        kl_epsilon=KL_EPSILON,
    ):
        self.tree = tree
        self.lam = lam
        self.regularizer = regularizer
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.sinkhorn_iterations = sinkhorn_iterations
        self.sinkhorn_reg = sinkhorn_reg
        self.sinkhorn_convention = sinkhorn_convention
        self.kl_epsilon = kl_epsilon

    def _train_config(self):
        loss = LossConfig(
            lam=self.lam,
            regularizer=RegularizerKind.parse(self.regularizer),
            sinkhorn_iterations=self.sinkhorn_iterations,
            sinkhorn_reg=self.sinkhorn_reg,
            sinkhorn_convention=self.sinkhorn_convention,
            kl_epsilon=self.kl_epsilon,
        )
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.random_state,
            loss=loss,
        )

    def fit(self, X, Y):
        """Fit on features ``X`` (n, d) and target distributions ``Y`` (n, L).

        Rows of ``Y`` that are label indicators are normalized to sum to 1.
        """
        from .datagen import Dataset
        from ._validation import normalize_labels

        if self.tree is None:
            raise ValueError("TreeWassersteinLDL needs a tree")
        X = check_array(X, dtype=np.float64)
        Y = normalize_labels(check_array(Y, dtype=np.float64))
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different numbers of rows")
        cfg = self._train_config()
        model, trace = train(Dataset(X, Y, self.tree), self.tree, cfg)
        self.model_ = model
        self.coef_ = model.weights
        self.intercept_ = model.biases
        self.trace_ = trace
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.predict(X)

    def predict(self, X):
        """Most probable label per row (ties to the lower id)."""
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, Y):
        """Negative mean tree-Wasserstein distance (higher is better)."""
        from .transport import tree_wasserstein
        from ._validation import normalize_labels

        Y = normalize_labels(check_array(Y, dtype=np.float64))
        return -float(np.mean(tree_wasserstein(self.tree, self.predict_proba(X), Y)))
