"""Evaluation metrics for predicted label distributions.

Distribution metrics take ``pred`` and ``target`` of shape ``(..., L)`` and
reduce the last axis. Ranking metrics take one score vector and a set of
ground-truth labels. Score ties are always broken toward the lower label id.
"""

from dataclasses import dataclass, field
import csv
import io
import json
import math

import numpy as np

from ._validation import as_float_array, check_same_shape
from .objective import KL_EPSILON, kl_loss
from .transport import exact_wasserstein, tree_wasserstein

DISTRIBUTION_METRICS = (
    "wasserstein",
    "kl",
    "chebyshev",
    "clark",
    "canberra",
    "cosine",
    "intersection",
)
RANKING_METRICS = ("pseudo_recall", "top_k_cost", "roc_auc")


def _pair(pred, target):
    pred = as_float_array(pred, "pred")
    target = as_float_array(target, "target")
    check_same_shape(pred, target, ("pred", "target"))
    return pred, target


def _ratio_terms(num, den):
    # 0/0 coordinates contribute nothing
    out = np.zeros(np.broadcast_shapes(num.shape, den.shape))
    np.divide(num, den, out=out, where=den > 0)
    return out


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def canberra(pred, target):
    pred, target = _pair(pred, target)
    return _scalar(np.sum(_ratio_terms(np.abs(pred - target), pred + target), axis=-1))


def chebyshev(pred, target):
    pred, target = _pair(pred, target)
    return _scalar(np.max(np.abs(pred - target), axis=-1))


def clark(pred, target):
    pred, target = _pair(pred, target)
    terms = _ratio_terms((pred - target) ** 2, (pred + target) ** 2)
    return _scalar(np.sqrt(np.sum(terms, axis=-1)))


def cosine(pred, target):
    pred, target = _pair(pred, target)
    num = np.sum(pred * target, axis=-1)
    den = np.linalg.norm(pred, axis=-1) * np.linalg.norm(target, axis=-1)
    return _scalar(_ratio_terms(num, den))


def intersection(pred, target):
    pred, target = _pair(pred, target)
    return _scalar(np.sum(np.minimum(pred, target), axis=-1))


def kl_metric(pred, target, kl_epsilon=KL_EPSILON):
    """KL(target || pred); the same function as the training loss."""
    return kl_loss(pred, target, kl_epsilon)


def wasserstein_metric(tree, pred, target, method="tree", solver="network_simplex"):
    """Exact 1-Wasserstein distance on the tree metric.

    ``method="tree"`` uses the closed form; ``method="lp"`` solves the
    transport LP on the dense distance matrix, row by row.
    """
    pred, target = _pair(pred, target)
    if method == "tree":
        return tree_wasserstein(tree, pred, target)
    if method != "lp":
        raise ValueError(f"unknown method {method!r}")
    cost = tree.distance_matrix()
    if pred.ndim == 1:
        return exact_wasserstein(cost, pred, target, solver=solver)[0]
    flat_p = pred.reshape(-1, pred.shape[-1])
    flat_t = target.reshape(-1, target.shape[-1])
    vals = [exact_wasserstein(cost, p, t, solver=solver)[0] for p, t in zip(flat_p, flat_t)]
    return np.asarray(vals).reshape(pred.shape[:-1])


# -- ranking metrics ---------------------------------------------------------------


def rank_labels(scores):
    """Label ids by descending score, ties to the lower id."""
    scores = as_float_array(scores, "scores")
    return np.argsort(-scores, kind="stable")


def _truth_ids(truth, L):
    ids = np.unique(np.asarray(list(truth), dtype=np.int64))
    if ids.size == 0:
        raise ValueError("truth label set is empty")
    if ids.min() < 0 or ids.max() >= L:
        raise ValueError("truth label outside 0..L-1")
    return ids


def pseudo_recall(scores, truth):
    """Fraction of ``truth`` found among the top-``|truth|`` scored labels."""
    scores = as_float_array(scores, "scores")
    ids = _truth_ids(truth, scores.size)
    top = rank_labels(scores)[: ids.size]
    return np.intersect1d(top, ids).size / ids.size


def top_k_cost(tree, scores, truth, k=5):
    """Mean tree distance from each of the top-``k`` labels to its nearest true label."""
    scores = as_float_array(scores, "scores")
    if int(k) < 1:
        raise ValueError("k must be positive")
    ids = _truth_ids(truth, scores.size)
    top = rank_labels(scores)[: int(k)]
    nearest = np.min(np.stack([tree.distances_from(t) for t in ids]), axis=0)
    return float(np.mean(nearest[top]))


def roc_auc(scores, truth):
    """Mann-Whitney AUC of ``scores`` against a binary relevance vector.

    Returns ``nan`` when ``truth`` is all-positive or all-negative.
    """
    scores = as_float_array(scores, "scores")
    truth = np.asarray(truth).astype(bool)
    if truth.shape != scores.shape:
        raise ValueError("truth must be a binary vector aligned with scores")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    from scipy.stats import rankdata

    ranks = rankdata(scores)  # average ranks count ties as one half
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- reports -------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-sample metric values with summary statistics."""

    per_sample: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(next(iter(self.per_sample.values()))) if self.per_sample else 0

    def mean(self, name):
        return float(np.nanmean(self.per_sample[name]))

    def std(self, name):
        return float(np.nanstd(self.per_sample[name]))

    @property
    def means(self):
        return {k: self.mean(k) for k in self.per_sample}

    def __getitem__(self, name):
        return self.mean(name)

    def summary(self):
        return {
            k: {"mean": self.mean(k), "std": self.std(k), "n": int(np.sum(~np.isnan(v)))}
            for k, v in self.per_sample.items()
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        names = list(self.per_sample)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sample"] + names)
        for i in range(self.n):
            writer.writerow([i] + [repr(float(self.per_sample[k][i])) for k in names])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        names = rows[0][1:]
        values = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).reshape(-1, len(names))
        return cls({k: values[:, j] for j, k in enumerate(names)})


def distribution_report(tree, pred, target, wasserstein_method="tree", kl_epsilon=KL_EPSILON):
    """All distribution metrics for row-aligned ``pred`` and ``target``."""
    pred = np.atleast_2d(as_float_array(pred, "pred"))
    target = np.atleast_2d(as_float_array(target, "target"))
    check_same_shape(pred, target, ("pred", "target"))
    per = {
        "wasserstein": np.asarray(wasserstein_metric(tree, pred, target, method=wasserstein_method)),
        "kl": np.asarray(kl_metric(pred, target, kl_epsilon)),
        "chebyshev": np.asarray(chebyshev(pred, target)),
        "clark": np.asarray(clark(pred, target)),
        "canberra": np.asarray(canberra(pred, target)),
        "cosine": np.asarray(cosine(pred, target)),
        "intersection": np.asarray(intersection(pred, target)),
    }
    return MetricReport(per)


def add_ranking_metrics(report, tree, scores, truth_sets, k=5):
    """Attach pseudo-recall, top-k cost and ROC-AUC given true label sets."""
    scores = np.atleast_2d(as_float_array(scores, "scores"))
    if len(truth_sets) != scores.shape[0]:
        raise ValueError("need one truth set per sample")
    L = scores.shape[1]
    pr, tk, auc = [], [], []
    for s, truth in zip(scores, truth_sets):
        pr.append(pseudo_recall(s, truth))
        tk.append(top_k_cost(tree, s, truth, k))
        mask = np.zeros(L, dtype=bool)
        mask[_truth_ids(truth, L)] = True
        auc.append(roc_auc(s, mask))
    report.per_sample["pseudo_recall"] = np.asarray(pr)
    report.per_sample["top_k_cost"] = np.asarray(tk)
    report.per_sample["roc_auc"] = np.asarray(auc)
    return report
