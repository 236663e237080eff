"""The five-configuration loss comparison on synthetic tree data."""

from dataclasses import dataclass
import concurrent.futures as cf
import os

import numpy as np

from .datagen import SynthConfig, generate_splits
from .metrics import DISTRIBUTION_METRICS
from .model import TrainConfig, evaluate, train
from .objective import LossConfig, RegularizerKind

# (row label, lambda, regularizer)
LOSS_CONFIGS = (
    ("KL", 0.0, RegularizerKind.NONE),
    ("KL + 1/2 W1", 0.5, RegularizerKind.SINKHORN),
    ("KL + W1", 1.0, RegularizerKind.SINKHORN),
    ("KL + 1/2 TW", 0.5, RegularizerKind.TREE_WASSERSTEIN),
    ("KL + TW", 1.0, RegularizerKind.TREE_WASSERSTEIN),
)

# metric -> True when larger is better
METRIC_DIRECTION = {
    "wasserstein": False,
    "kl": False,
    "chebyshev": False,
    "clark": False,
    "canberra": False,
    "cosine": True,
    "intersection": True,
}


@dataclass
class SweepResult:
    """``scores[config][metric]`` is a list with one test mean per seed."""

    scores: dict
    seeds: list

    def mean(self, config, metric):
        return float(np.mean(self.scores[config][metric]))

    def std(self, config, metric):
        return float(np.std(self.scores[config][metric]))

    def to_markdown(self):
        header = "| Loss | " + " | ".join(
            f"{m} {'↑' if METRIC_DIRECTION[m] else '↓'}" for m in DISTRIBUTION_METRICS
        ) + " |"
        lines = [header, "|" + "---|" * (len(DISTRIBUTION_METRICS) + 1)]
        for name in self.scores:
            cells = []
            for m in DISTRIBUTION_METRICS:
                means = {c: self.mean(c, m) for c in self.scores}
                best = (max if METRIC_DIRECTION[m] else min)(means, key=means.get)
                cell = f"{self.mean(name, m):.3f} ± ({self.std(name, m):.3f})"
                cells.append(f"**{cell}**" if best == name else cell)
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def run_cell(synth, n_train, n_test, label, lam, kind, epochs, batch_size, learning_rate, seed):
    train_ds, test_ds = generate_splits(synth, [n_train, n_test])
    cfg = TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        seed=seed,
        loss=LossConfig(lam=lam, regularizer=kind),
    )
    model, _ = train(train_ds, train_ds.tree, cfg)
    return label, evaluate(model, test_ds).means


def run_sweep(
    num_nodes=100,
    n_train=500,
    n_test=500,
    seeds=(0, 1, 2, 3, 4),
    epochs=100,
    batch_size=10,
    learning_rate=1e-3,
    feature_dim=10,
    hidden_dim=10,
    sign="negated",
    configs=LOSS_CONFIGS,
    workers=None,
):
    """Train every loss configuration for every seed and score it on the test split.

    The seed drives both the synthetic dataset and the model initialization.
    ``workers`` defaults to ``$TREEOT_THREADS`` (or 1); cells are independent
    and each is deterministic, so the result does not depend on it.
    """
    if workers is None:
        workers = int(os.environ.get("TREEOT_THREADS", "1"))
    jobs = []
    for seed in seeds:
        synth = SynthConfig(
            num_nodes=num_nodes,
            feature_dim=feature_dim,
            hidden_dim=hidden_dim,
            num_samples=n_train,
            seed=seed,
            exponent_sign=sign,
        )
        for label, lam, kind in configs:
            jobs.append((synth, n_train, n_test, label, lam, kind, epochs, batch_size,
                         learning_rate, seed))
    scores = {label: {m: [] for m in DISTRIBUTION_METRICS} for label, _, _ in configs}
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, *zip(*jobs)))
    else:
        results = [run_cell(*job) for job in jobs]
    for label, means in results:
        for m in DISTRIBUTION_METRICS:
            scores[label][m].append(means[m])
    return SweepResult(scores, list(seeds))
