"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``PASS`` / ``FAIL`` line (visible with ``-s``) and
records it for the terminal summary, which lists all of them after the run.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from _gradcheck import (
    gradient_relative_error,
    min_active_gap,
    random_kink_case,
    random_smooth_case,
    subgradient_lower_bound_holds,
)
from _oracles import trapezoid_auc
from conftest import random_distribution, random_weighted_tree
from treeot.bench import run_bench, scaling_fit
from treeot.experiment import run_sweep
from treeot.metrics import (
    canberra,
    chebyshev,
    clark,
    cosine,
    intersection,
    kl_metric,
    roc_auc,
    wasserstein_metric,
)
from treeot.transport import exact_wasserstein, sinkhorn_wasserstein, tree_wasserstein

pytestmark = pytest.mark.slow

RESULTS = []


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def exactness_cases(n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        L = int(rng.integers(2, 201))
        tree = random_weighted_tree(rng, L, max_weight=5.0, zero_prob=0.05)
        mu = random_distribution(rng, L, sparse=bool(rng.integers(0, 2)))
        nu = random_distribution(rng, L, sparse=bool(rng.integers(0, 2)))
        yield tree, mu, nu


def test_criterion_1_tree_exactness():
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for tree, mu, nu in exactness_cases(1000, seed=2024):
        exact, _ = exact_wasserstein(tree.distance_matrix(), mu, nu)
        worst = max(worst, abs(tree_wasserstein(tree, mu, nu) - exact))
        n += 1
    elapsed = time.perf_counter() - t0
    report(1, n >= 1000 and worst <= 1e-8 and elapsed < 120,
           f"{n} cases, max |TW - exact| = {worst:.2e}, {elapsed:.1f} s")


def test_criterion_2_scaling():
    results = run_bench([100, 1000, 10000], repeats=3, seed=0)
    slopes = scaling_fit(results)
    by = {(r.support_size, r.method): r for r in results}
    speedup = by[10000, "sinkhorn"].wall_time_seconds / by[10000, "tw"].wall_time_seconds
    # an L x L float64 array is 800 MB at this size; the allocator peak must stay far below one
    tw_alloc = by[10000, "tw"].alloc_bytes
    report(2, slopes["tw"] <= 1.4 and slopes["sinkhorn"] >= 1.7 and speedup >= 10
           and tw_alloc < 10000 ** 2,
           f"slopes tw={slopes['tw']:.2f} sinkhorn={slopes['sinkhorn']:.2f}, "
           f"speedup at 1e4 = {speedup:.0f}x, TW peak allocation {tw_alloc} B")


def test_criterion_3_large_support():
    (tw,) = run_bench([100000], repeats=3, methods=["tw"])
    (sk,) = run_bench([100000], repeats=1, methods=["sinkhorn"], memory_budget=4 * 10 ** 9)
    report(3, tw.ok and tw.wall_time_seconds < 60 and tw.peak_bytes < 500 * 10 ** 6
           and tw.alloc_bytes < 500 * 10 ** 6 and sk.status == "budget_exceeded",
           f"TW {tw.wall_time_seconds:.4f} s, peak RSS {tw.peak_bytes / 1e6:.1f} MB, "
           f"allocated {tw.alloc_bytes / 1e6:.1f} MB; Sinkhorn {sk.status} "
           f"(needs {sk.required_bytes / 1e9:.1f} GB)")


def test_criterion_4_gradients():
    rng = np.random.default_rng(4)
    errors = []
    for _ in range(500):
        tree, z, target, cfg = random_smooth_case(rng)
        errors.append(gradient_relative_error(tree, z, target, cfg))
    kinks, held = 0, 0
    for _ in range(100):
        tree, pred, target = random_kink_case(rng)
        kinks += min_active_gap(tree, pred, target) == 0.0
        held += subgradient_lower_bound_holds(tree, pred, target, rng)
    report(4, max(errors) <= 1e-4 and kinks == 100 and held == 100,
           f"{len(errors)} smooth cases, max relative error {max(errors):.2e}; "
           f"lower bound held at {held}/{kinks} kink cases")


def test_criterion_5_table_trend():
    t0 = time.perf_counter()
    res = run_sweep(num_nodes=100, n_train=500, n_test=500, seeds=(0, 1, 2, 3, 4), epochs=100,
                    sign="negated")
    elapsed = time.perf_counter() - t0
    print(res.to_markdown())
    w_tw, w_kl = res.mean("KL + TW", "wasserstein"), res.mean("KL", "wasserstein")
    kl_means = {c: res.mean(c, "kl") for c in res.scores}
    best_kl = min(kl_means, key=kl_means.get)
    report(5, w_tw < w_kl and best_kl == "KL" and elapsed < 1200,
           f"Wasserstein KL+TW {w_tw:.3f} vs KL {w_kl:.3f}; lowest KL: {best_kl} "
           f"({kl_means[best_kl]:.3f}); {elapsed:.0f} s")


def test_criterion_6_metric_identities():
    rng = np.random.default_rng(6)
    ok = True
    for _ in range(100):
        L = int(rng.integers(2, 30))
        p = random_distribution(rng, L, sparse=True)
        i, j = rng.choice(L, size=2, replace=False)
        a, b = np.eye(L)[i], np.eye(L)[j]
        ok &= canberra(p, p) == 0 and chebyshev(p, p) == 0 and clark(p, p) == 0
        ok &= kl_metric(p, p) == 0 and abs(cosine(p, p) - 1) <= 1e-15
        ok &= abs(intersection(p, p) - 1) <= 1e-15
        ok &= cosine(a, b) == 0 and intersection(a, b) == 0 and chebyshev(a, b) == 1
    auc_err = 0.0
    for _ in range(100):
        L = int(rng.integers(4, 80))
        truth = np.zeros(L, dtype=bool)
        truth[rng.choice(L, size=int(rng.integers(1, L)), replace=False)] = True
        scores = np.round(rng.random(L), 2)
        auc_err = max(auc_err, abs(roc_auc(scores, truth) - trapezoid_auc(scores, truth)))
    w_err = 0.0
    for tree, mu, nu in exactness_cases(300, seed=66):
        w_err = max(w_err, abs(wasserstein_metric(tree, mu, nu)
                               - wasserstein_metric(tree, mu, nu, method="lp")))
    report(6, bool(ok) and auc_err <= 1e-10 and w_err <= 1e-8,
           f"identity cases {'exact' if ok else 'violated'}, max AUC gap {auc_err:.1e}, "
           f"max Wasserstein gap vs LP {w_err:.1e}")


def _pipeline(cwd):
    env = dict(os.environ, PYTHONHASHSEED="0")
    steps = [
        ["gen", "--nodes", "40", "--samples", "60", "--test-samples", "30", "--seed", "5",
         "--sign", "negated", "--out", "data"],
        ["train", "--data", "data", "--lambda", "0.5", "--reg", "tw", "--epochs", "5",
         "--seed", "3", "--out", "run"],
        ["train", "--data", "data", "--lambda", "1", "--reg", "sinkhorn", "--epochs", "2",
         "--seed", "3", "--out", "run_sk"],
        ["eval", "--model", "run/model.ckpt", "--data", "data", "--split", "test"],
    ]
    for argv in steps:
        proc = subprocess.run([sys.executable, "-m", "treeot", *argv], cwd=cwd, env=env,
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    out = {}
    for root, _, files in os.walk(cwd):
        for name in files:
            if name.startswith("manifest."):
                continue
            path = os.path.join(root, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, cwd)] = fh.read()
    return out


def test_criterion_7_determinism(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    first.mkdir()
    second.mkdir()
    a, b = _pipeline(first), _pipeline(second)
    expected = {"data/tree.tsv", "data/train.jsonl", "data/test.jsonl", "run/model.ckpt",
                "run/model.ckpt.json", "run/trace.csv", "run/report.test.json",
                "run/report.test.csv", "run_sk/model.ckpt"}
    differing = sorted(k for k in a if a[k] != b.get(k))
    report(7, expected <= set(a) and set(a) == set(b) and not differing,
           f"{len(a)} artifacts compared byte for byte, {len(differing)} differ {differing}")


def test_criterion_8_sinkhorn_convergence():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        tree = random_weighted_tree(rng, 16)
        cost = np.asarray(tree.distance_matrix())
        cost = cost / cost.max()
        mu, nu = random_distribution(rng, 16), random_distribution(rng, 16)
        exact, _ = exact_wasserstein(cost, mu, nu)
        approx = sinkhorn_wasserstein(cost, mu, nu, iterations=2000, reg=200.0)
        worst = max(worst, abs(approx - exact))
    report(8, worst <= 1e-3, f"50 instances at L=16, max |Sinkhorn - exact| = {worst:.2e}")
