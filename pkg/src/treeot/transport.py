"""Distances between probability vectors.

Three interchangeable routes:

* :func:`tree_wasserstein` -- closed form on a tree metric, O(L).
* :func:`exact_wasserstein` -- the transport LP, solved by network simplex
  (POT) or by HiGHS; the reference oracle.
* :func:`sinkhorn_wasserstein` -- entropic regularization, log-domain
  Sinkhorn-Knopp iterations.
"""

from dataclasses import dataclass, field
import os

import math

import numba
import numpy as np

from ._validation import (
    as_float_array,
    check_cost_matrix,
    check_length,
    check_same_shape,
)
from .exceptions import DimensionError, NumericalError

SINKHORN_ITERATIONS = 10
SINKHORN_REG = 50.0

# Terms more than this many temperature units below a log-sum-exp's maximum
# are skipped: each is < 2e-22 of the largest, so even 1e5 of them stay
# under float64 resolution of the sum.
LSE_CUTOFF = 50.0


def tree_wasserstein(tree, mu, nu):
    """1-Wasserstein distance under the tree metric of ``tree``.

    ``sum_v edge_weight[v] * |mu(subtree(v)) - nu(subtree(v))|`` over
    non-root nodes. Leading batch axes are allowed and give one distance
    per row. Never builds an ``L x L`` array.
    """
    mu = as_float_array(mu, "mu")
    nu = as_float_array(nu, "nu")
    check_same_shape(mu, nu, ("mu", "nu"))
    check_length(mu, tree.node_count, "mu")
    diff = tree.subtree_masses(mu) - tree.subtree_masses(nu)
    # edge_weight[root] is 0, so the root term drops out
    out = np.abs(diff) @ tree.edge_weight
    return float(out) if out.ndim == 0 else out


def uniform_offdiag_cost(L):
    """``ones((L, L)) - eye(L)``: every move between distinct points costs 1."""
    if int(L) < 1:
        raise ValueError("L must be positive")
    cost = np.ones((int(L), int(L)))
    np.fill_diagonal(cost, 0.0)
    return cost


# -- exact LP ------------------------------------------------------------------


def _import_pot():
    # POT probes every array backend on import; the CPU numpy path needs none
    for name in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


def exact_wasserstein(cost, a, b, solver="network_simplex", max_iter=10_000_000):
    """Optimal value and plan of ``min <cost, P>`` over couplings of ``a``, ``b``.

    Parameters
    ----------
    cost : (n, m) array
    a, b : probability vectors of length n and m
    solver : {"network_simplex", "highs"}
        ``network_simplex`` uses POT's exact solver; ``highs`` solves the
        same LP with scipy's dual simplex.

    Returns
    -------
    value : float
    plan : (n, m) ndarray
    """
    a = as_float_array(a, "a")
    b = as_float_array(b, "b")
    if a.ndim != 1 or b.ndim != 1:
        raise DimensionError("a and b must be 1-D")
    cost = check_cost_matrix(cost, a.size, b.size)
    if abs(a.sum() - b.sum()) > 1e-9:
        raise ValueError("marginals carry different total mass; the LP is infeasible")

    if solver == "network_simplex":
        ot = _import_pot()
        # POT requires exactly equal totals
        b_adj = b * (a.sum() / b.sum())
        plan, log = ot.emd(a, b_adj, cost, numItermax=max_iter, log=True)
        if log.get("warning"):
            raise RuntimeError(f"network simplex did not converge: {log['warning']}")
        plan = np.asarray(plan)
    elif solver == "highs":
        plan = _solve_highs(cost, a, b)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return float(np.sum(cost * plan)), plan


def _solve_highs(cost, a, b):
    from scipy import sparse
    from scipy.optimize import linprog

    n, m = cost.shape
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A_eq = sparse.vstack([rows, cols]).tocsr()
    res = linprog(
        cost.ravel(),
        A_eq=A_eq,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return np.maximum(res.x.reshape(n, m), 0.0)


# -- Sinkhorn --------------------------------------------------------------------


def sinkhorn_epsilon(reg, convention="inverse"):
    """Entropic temperature implied by ``reg``.

    ``"inverse"``: the kernel is ``exp(-reg * cost)``, so larger ``reg`` is
    sharper (temperature ``1/reg``). ``"epsilon"``: the kernel is
    ``exp(-cost / reg)``.
    """
    if not reg > 0:
        raise ValueError("reg must be positive")
    if convention == "inverse":
        return 1.0 / reg
    if convention == "epsilon":
        return float(reg)
    raise ValueError(f"unknown convention {convention!r}")


@dataclass
class SinkhornResult:
    """Outcome of :func:`sinkhorn_log`.

    ``f`` and ``g`` are the dual potentials in cost units (``-inf`` where
    the marginal is zero). ``marginal_violation[..., k]`` is the L1
    row-marginal error after iteration ``k + 1``; column marginals are exact
    after each full iteration. Without violation tracking only the final
    iteration is recorded.
    """

    value: np.ndarray
    f: np.ndarray
    g: np.ndarray
    epsilon: float
    iterations: int
    marginal_violation: np.ndarray = field(repr=False)

    @property
    def final_violation(self):
        return self.marginal_violation[..., -1]


def sinkhorn_log(cost, a, b, iterations=SINKHORN_ITERATIONS, reg=SINKHORN_REG,
                 convention="inverse", track_violation=True):
    """Log-domain Sinkhorn-Knopp with max-shifted log-sum-exp.

    ``a`` and ``b`` may be 1-D or share a leading batch axis against one
    cost matrix. No array larger than ``cost`` is allocated; the kernels
    stream over it row by row.

    Returns a :class:`SinkhornResult` whose ``value`` is ``<cost, P>`` for
    the plan after the last iteration (transport part only, no entropy).
    ``track_violation=False`` skips the per-iteration marginal check, which
    saves one pass over the cost per iteration.
    """
    a = as_float_array(a, "a")
    b = as_float_array(b, "b")
    if a.ndim > 2 or b.ndim != a.ndim or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError("a and b must be 1-D or share one batch axis")
    cost = np.ascontiguousarray(check_cost_matrix(cost, a.shape[-1], b.shape[-1]))
    iterations = int(iterations)
    if iterations < 1:
        raise ValueError("iterations must be positive")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginals must be nonnegative")
    eps = sinkhorn_epsilon(reg, convention)
    inv_eps = 1.0 / eps

    squeeze = a.ndim == 1
    A = np.ascontiguousarray(np.atleast_2d(a))
    B = np.ascontiguousarray(np.atleast_2d(b))
    with np.errstate(divide="ignore"):
        log_a = np.log(A)
        log_b = np.log(B)
    f = np.zeros_like(A)
    g = np.zeros_like(B)
    lse_f = np.empty_like(A)
    lse_g = np.empty_like(B)
    value = np.empty(A.shape[0])
    row_err = np.empty(A.shape[0])
    violation = []
    for it in range(iterations):
        _lse_over_cols(cost, g, inv_eps, lse_f)
        f = eps * (log_a - lse_f)
        f[np.isneginf(log_a)] = -np.inf
        _lse_over_rows(cost, f, inv_eps, lse_g)
        g = eps * (log_b - lse_g)
        g[np.isneginf(log_b)] = -np.inf
        if np.isnan(f).any() or np.isnan(g).any() or np.isposinf(f).any() or np.isposinf(g).any():
            raise NumericalError(
                "non-finite Sinkhorn potential; reg is too small for the cost scale",
                iteration=it,
            )
        if track_violation and it < iterations - 1:
            _plan_stats(cost, f, g, inv_eps, A, value, row_err)
            violation.append(row_err.copy())
    _plan_stats(cost, f, g, inv_eps, A, value, row_err)
    violation.append(row_err.copy())
    if not np.all(np.isfinite(value)):
        raise NumericalError("non-finite Sinkhorn value", iteration=iterations)
    violation = np.stack(violation, axis=-1)
    if squeeze:
        return SinkhornResult(value[0], f[0], g[0], eps, iterations, violation[0])
    return SinkhornResult(value, f, g, eps, iterations, violation)


def sinkhorn_wasserstein(cost, a, b, iterations=SINKHORN_ITERATIONS, reg=SINKHORN_REG,
                         convention="inverse"):
    """``<cost, P>`` after ``iterations`` log-domain Sinkhorn updates.

    Use :func:`sinkhorn_log` to also get potentials and marginal errors.
    """
    res = sinkhorn_log(cost, a, b, iterations=iterations, reg=reg, convention=convention,
                       track_violation=False)
    return float(res.value) if np.ndim(res.value) == 0 else res.value


@numba.njit(cache=True)
def _lse_over_cols(cost, g, inv_eps, out):
    # out[k, i] = logsumexp_j (g[k, j] - cost[i, j]) * inv_eps
    n, m = cost.shape
    for k in range(g.shape[0]):
        for i in range(n):
            peak = -np.inf
            for j in range(m):
                z = g[k, j] - cost[i, j]
                if z > peak:
                    peak = z
            if peak == -np.inf:
                out[k, i] = -np.inf
                continue
            acc = 0.0
            for j in range(m):
                z = (g[k, j] - cost[i, j] - peak) * inv_eps
                if z > -LSE_CUTOFF:
                    acc += math.exp(z)
            out[k, i] = peak * inv_eps + math.log(acc)


@numba.njit(cache=True)
def _lse_over_rows(cost, f, inv_eps, out):
    # out[k, j] = logsumexp_i (f[k, i] - cost[i, j]) * inv_eps
    n, m = cost.shape
    peak = np.empty(m)
    acc = np.empty(m)
    for k in range(f.shape[0]):
        peak[:] = -np.inf
        acc[:] = 0.0
        for i in range(n):
            fi = f[k, i]
            if fi == -np.inf:
                continue
            for j in range(m):
                z = fi - cost[i, j]
                if z > peak[j]:
                    peak[j] = z
        for i in range(n):
            fi = f[k, i]
            if fi == -np.inf:
                continue
            for j in range(m):
                z = (fi - cost[i, j] - peak[j]) * inv_eps
                if z > -LSE_CUTOFF:
                    acc[j] += math.exp(z)
        for j in range(m):
            if peak[j] == -np.inf:
                out[k, j] = -np.inf
            else:
                out[k, j] = peak[j] * inv_eps + math.log(acc[j])


@numba.njit(cache=True)
def _plan_stats(cost, f, g, inv_eps, a, value, row_err):
    # <cost, P> and sum_i |P_i. - a_i| for P = exp((f_i + g_j - cost_ij) * inv_eps)
    n, m = cost.shape
    for k in range(f.shape[0]):
        total = 0.0
        err = 0.0
        for i in range(n):
            fi = f[k, i]
            row = 0.0
            if fi != -np.inf:
                for j in range(m):
                    z = (fi + g[k, j] - cost[i, j]) * inv_eps
                    if z > -LSE_CUTOFF:
                        p = math.exp(z)
                        row += p
                        total += p * cost[i, j]
            err += abs(row - a[k, i])
        value[k] = total
        row_err[k] = err


def sinkhorn_memory_estimate(L, batch=1):
    """Bytes Sinkhorn needs at support size ``L``: the dense cost plus vectors."""
    return 8 * L * L + 8 * 12 * batch * L
