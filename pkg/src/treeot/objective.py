"""Training losses and their gradients.

The objective for one sample is ``KL(target || pred) + lam * R(pred, target)``
where ``R`` is the tree-Wasserstein distance, a Sinkhorn estimate of the
Wasserstein distance on the tree metric, or nothing. Minibatch losses are
sums over rows, never means.
"""

from dataclasses import dataclass, asdict
import enum

import numpy as np
from scipy.special import softmax, xlogy

from ._validation import as_float_array, check_length, check_same_shape
from .transport import SINKHORN_ITERATIONS, SINKHORN_REG, sinkhorn_log, tree_wasserstein

KL_EPSILON = 1e-12


class RegularizerKind(str, enum.Enum):
    NONE = "none"
    TREE_WASSERSTEIN = "tree_wasserstein"
    SINKHORN = "sinkhorn"

    @classmethod
    def parse(cls, value):
        aliases = {"tw": cls.TREE_WASSERSTEIN, "w1": cls.SINKHORN}
        if isinstance(value, cls):
            return value
        return aliases.get(value) or cls(value)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    regularizer: RegularizerKind = RegularizerKind.TREE_WASSERSTEIN
    sinkhorn_iterations: int = SINKHORN_ITERATIONS
    sinkhorn_reg: float = SINKHORN_REG
    sinkhorn_convention: str = "inverse"
    kl_epsilon: float = KL_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "regularizer", RegularizerKind.parse(self.regularizer))
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not self.kl_epsilon > 0:
            raise ValueError("kl_epsilon must be positive")
        if int(self.sinkhorn_iterations) < 1:
            raise ValueError("sinkhorn_iterations must be positive")
        if not self.sinkhorn_reg > 0:
            raise ValueError("sinkhorn_reg must be positive")

    def to_dict(self):
        d = asdict(self)
        d["regularizer"] = self.regularizer.value
        return d


@dataclass(frozen=True)
class LossValue:
    total: float
    kl_part: float
    reg_part: float


def kl_loss(pred, target, kl_epsilon=KL_EPSILON):
    """``sum_l target_l * log(target_l / pred_l)`` with ``0 log 0 = 0``.

    ``pred`` is floored at ``kl_epsilon`` inside the logarithm only. Works
    row-wise on 2-D input.
    """
    pred = as_float_array(pred, "pred")
    target = as_float_array(target, "target")
    check_same_shape(pred, target, ("pred", "target"))
    out = np.sum(xlogy(target, target) - xlogy(target, np.maximum(pred, kl_epsilon)), axis=-1)
    return float(out) if out.ndim == 0 else out


def tw_regularizer(tree, pred, target):
    """Tree-Wasserstein distance between prediction and target."""
    return tree_wasserstein(tree, pred, target)


def tw_regularizer_grad(tree, pred, target):
    """Minimum-norm subgradient of :func:`tw_regularizer` in ``pred``.

    ``g[u] = sum over non-root v on the root path of u of
    edge_weight[v] * sign(pred(subtree v) - target(subtree v))``, with
    ``sign(0) = 0``.
    """
    pred = as_float_array(pred, "pred")
    target = as_float_array(target, "target")
    check_same_shape(pred, target, ("pred", "target"))
    check_length(pred, tree.node_count, "pred")
    signs = np.sign(tree.subtree_masses(pred) - tree.subtree_masses(target))
    return tree.root_path_sums(signs * tree.edge_weight)


def softmax_vjp(pred, v):
    """``J_softmax(z)^T v`` given ``pred = softmax(z)``."""
    return pred * (v - np.sum(pred * v, axis=-1, keepdims=True))


def _sinkhorn(tree, pred, target, cfg):
    return sinkhorn_log(
        tree.distance_matrix(),
        pred,
        target,
        iterations=cfg.sinkhorn_iterations,
        reg=cfg.sinkhorn_reg,
        convention=cfg.sinkhorn_convention,
        track_violation=False,
    )


def _reg_values(tree, pred, target, cfg):
    kind = cfg.regularizer
    if kind is RegularizerKind.NONE or cfg.lam == 0:
        return np.zeros(pred.shape[:-1])
    if kind is RegularizerKind.TREE_WASSERSTEIN:
        return np.asarray(tw_regularizer(tree, pred, target))
    return np.asarray(_sinkhorn(tree, pred, target, cfg).value)


def combined_loss(tree, pred, target, cfg):
    """Objective value; 2-D input is summed over rows."""
    pred = as_float_array(pred, "pred")
    target = as_float_array(target, "target")
    check_same_shape(pred, target, ("pred", "target"))
    check_length(pred, tree.node_count, "pred")
    kl = float(np.sum(kl_loss(pred, target, cfg.kl_epsilon)))
    reg = float(np.sum(_reg_values(tree, pred, target, cfg)))
    return LossValue(total=kl + cfg.lam * reg, kl_part=kl, reg_part=reg)


def combined_loss_grad_logits(tree, pred_logits, target, cfg):
    """Gradient of :func:`combined_loss` at ``softmax(pred_logits)`` w.r.t. the logits.

    Row-wise for 2-D input. The KL part uses ``pred - target`` (exact while
    no prediction falls below ``kl_epsilon``); the tree part pulls the
    subgradient back through the softmax; the Sinkhorn part uses the dual
    potential of the prediction marginal (envelope gradient).
    """
    return loss_and_grad_logits(tree, pred_logits, target, cfg)[2]


def loss_and_grad_logits(tree, pred_logits, target, cfg):
    """Per-row KL values, per-row regularizer values and the logit gradient.

    Shares one Sinkhorn solve between value and gradient.
    """
    pred_logits = as_float_array(pred_logits, "pred_logits")
    target = as_float_array(target, "target")
    check_same_shape(pred_logits, target, ("pred_logits", "target"))
    check_length(pred_logits, tree.node_count, "pred_logits")
    pred = softmax(pred_logits, axis=-1)
    kl = np.asarray(kl_loss(pred, target, cfg.kl_epsilon))
    grad = pred * np.sum(target, axis=-1, keepdims=True) - target
    kind = cfg.regularizer
    if cfg.lam == 0 or kind is RegularizerKind.NONE:
        return kl, np.zeros_like(kl), grad
    if kind is RegularizerKind.TREE_WASSERSTEIN:
        reg = np.asarray(tw_regularizer(tree, pred, target))
        dpred = tw_regularizer_grad(tree, pred, target)
    else:
        res = _sinkhorn(tree, pred, target, cfg)
        reg = np.asarray(res.value)
        # an underflowed prediction has a -inf potential and zero weight in the VJP
        dpred = np.where(np.isfinite(res.f), res.f, 0.0)
    return kl, reg, grad + cfg.lam * softmax_vjp(pred, dpred)
