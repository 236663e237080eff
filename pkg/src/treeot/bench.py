"""Time and memory of the tree closed form against Sinkhorn across support sizes.

Every (size, method) cell runs in a forked child so its resident-memory
high-water mark is its own. Inside the child the inputs are built first and
excluded; then the timed repeats run, and one further untimed pass runs
under ``tracemalloc`` for the allocator peak. Peak RSS is the resident
high-water mark over the timed repeats minus the RSS just before them; the
mark is reset first where Linux allows it, else ``ru_maxrss`` is used.

The Sinkhorn cost matrix ``ones - eye`` is always built inside the measured
region for memory. It enters the timings only with ``charge_cost_matrix``.
"""

from dataclasses import dataclass, asdict
import io
import math
import multiprocessing as mp
import resource
import statistics
import time
import tracemalloc

import numpy as np
import psutil

from .datagen import random_tree
from .transport import (
    SINKHORN_ITERATIONS,
    SINKHORN_REG,
    sinkhorn_memory_estimate,
    sinkhorn_wasserstein,
    tree_wasserstein,
    uniform_offdiag_cost,
)

METHODS = ("tw", "sinkhorn")
DEFAULT_SIZES = (100, 1000, 10000)
DEFAULT_MEMORY_BUDGET = 4 * 1024 ** 3
STATUS_OK = "ok"
STATUS_BUDGET = "budget_exceeded"
CSV_HEADER = "L,method,time_s_median,time_s_min,peak_bytes,alloc_bytes,repeats"


@dataclass
class BenchResult:
    """One cell of the benchmark table.

    For ``status == "budget_exceeded"`` the timing and byte fields are
    ``None`` and ``required_bytes`` holds the estimate that was refused.
    """

    support_size: int
    method: str
    wall_time_seconds: float
    time_min: float
    peak_bytes: int
    alloc_bytes: int
    repeats: int
    value: float = None
    status: str = STATUS_OK
    required_bytes: int = None

    @property
    def ok(self):
        return self.status == STATUS_OK

    def to_dict(self):
        return asdict(self)


def tw_memory_estimate(L):
    """Bytes the closed form needs beyond its inputs: a few length-L vectors."""
    return 8 * 16 * L


def _estimate(method, L):
    return tw_memory_estimate(L) if method == "tw" else sinkhorn_memory_estimate(L)


def _inputs(L, seed):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(L),)))
    mu = rng.random(L)
    nu = rng.random(L)
    return mu / mu.sum(), nu / nu.sum(), rng


def _rss():
    return psutil.Process().memory_info().rss


def _reset_peak_rss():
    """Reset the kernel's resident high-water mark (Linux >= 4.0); False if unsupported."""
    try:
        with open("/proc/self/clear_refs", "w") as fh:
            fh.write("5")
        return True
    except OSError:
        return False


def _peak_rss(reset_ok):
    if reset_ok:
        with open("/proc/self/status") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) * 1024
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def _measure(method, L, repeats, seed, charge_cost_matrix, iterations, reg):
    mu, nu, rng = _inputs(L, seed)
    if method == "tw":
        tree = random_tree(L, rng)

        def run():
            return tree_wasserstein(tree, mu, nu)

        setup = None
        # page in library code on a tiny tree so it is not counted, without pre-growing the heap
        small = random_tree(3, 0)
        tree_wasserstein(small, [0.2, 0.3, 0.5], [0.5, 0.3, 0.2])
    else:
        tiny = uniform_offdiag_cost(2)
        sinkhorn_wasserstein(tiny, [0.5, 0.5], [0.5, 0.5], iterations=1, reg=reg)  # load kernels
        holder = {}

        def setup():
            holder["cost"] = uniform_offdiag_cost(L)

        def run():
            return sinkhorn_wasserstein(holder["cost"], mu, nu, iterations=iterations, reg=reg)

    reset_ok = _reset_peak_rss()
    rss0 = _rss()
    if setup is not None:
        setup()
    times = []
    for _ in range(repeats):
        if setup is not None and charge_cost_matrix:
            holder.clear()
            t0 = time.perf_counter()
            setup()
            value = run()
        else:
            t0 = time.perf_counter()
            value = run()
        times.append(time.perf_counter() - t0)
    peak = _peak_rss(reset_ok) - rss0

    # allocator peak last, so tracemalloc's own bookkeeping stays out of the RSS figure
    if setup is not None:
        holder.clear()
    tracemalloc.start()
    if setup is not None:
        setup()
    run()
    alloc = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    return {
        "times": times,
        "peak": max(int(peak), 0),
        "alloc": int(alloc),
        "value": float(value),
    }


def _child(conn, args):
    try:
        conn.send(("ok", _measure(*args)))
    except BaseException as exc:  # reported to the parent, re-raised there
        conn.send(("error", f"{type(exc).__name__}: {exc}"))
    finally:
        conn.close()


def _measure_isolated(*args):
    ctx = mp.get_context("fork")
    parent, child = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=_child, args=(child, args))
    proc.start()
    child.close()
    try:
        status, payload = parent.recv()
    except EOFError:
        proc.join()
        raise RuntimeError(f"benchmark child died with exit code {proc.exitcode}") from None
    proc.join()
    if status != "ok":
        raise RuntimeError(f"benchmark cell failed: {payload}")
    return payload


def run_bench(
    sizes=DEFAULT_SIZES,
    repeats=3,
    seed=0,
    methods=METHODS,
    memory_budget=DEFAULT_MEMORY_BUDGET,
    charge_cost_matrix=False,
    iterations=SINKHORN_ITERATIONS,
    reg=SINKHORN_REG,
):
    """Benchmark each method at each support size, cells run one after another.

    Parameters
    ----------
    sizes : sequence of int
        Support sizes ``L``; must be nonempty.
    repeats : int
        Timed repetitions per cell; the median is reported.
    memory_budget : int or None
        Cells whose estimated working memory exceeds this many bytes are
        not run and come back with ``status="budget_exceeded"``. ``None``
        disables the check.

    Returns
    -------
    list of BenchResult
        Ordered by size, then by ``methods``.
    """
    sizes = [int(L) for L in sizes]
    if not sizes:
        raise ValueError("sizes must be nonempty")
    if any(L < 2 for L in sizes):
        raise ValueError("support sizes must be at least 2")
    if int(repeats) < 1:
        raise ValueError("repeats must be positive")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    results = []
    for L in sizes:
        for method in methods:
            need = _estimate(method, L)
            if memory_budget is not None and need > memory_budget:
                results.append(BenchResult(L, method, None, None, None, None, int(repeats),
                                           status=STATUS_BUDGET, required_bytes=need))
                continue
            out = _measure_isolated(method, L, int(repeats), seed, charge_cost_matrix,
                                    iterations, reg)
            results.append(BenchResult(
                support_size=L,
                method=method,
                wall_time_seconds=statistics.median(out["times"]),
                time_min=min(out["times"]),
                peak_bytes=out["peak"],
                alloc_bytes=out["alloc"],
                repeats=int(repeats),
                value=out["value"],
                required_bytes=need,
            ))
    return results


def scaling_fit(results):
    """Least-squares slope of ``log(time)`` on ``log(L)`` for each method.

    Accepts :class:`BenchResult` objects or ``(L, method, time)`` triples.
    Methods with fewer than two distinct completed sizes are omitted.
    """
    points = {}
    for r in results:
        if isinstance(r, BenchResult):
            if not r.ok:
                continue
            r = (r.support_size, r.method, r.wall_time_seconds)
        L, method, t = r
        points.setdefault(method, []).append((float(L), float(t)))
    slopes = {}
    for method, pts in points.items():
        if len({L for L, _ in pts}) < 2:
            continue
        x = np.log([L for L, _ in pts])
        y = np.log([t for _, t in pts])
        slopes[method] = float(np.polyfit(x, y, 1)[0])
    return slopes


def _cell(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def to_csv(results):
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in results:
        row = [r.support_size, r.method, r.wall_time_seconds, r.time_min,
               r.peak_bytes, r.alloc_bytes, r.repeats]
        buf.write(",".join(_cell(v) for v in row) + "\n")
    return buf.getvalue()


def _human_bytes(n):
    if n < 1024 ** 3:
        return f"{n / 1024 ** 2:.2f} MB"
    return f"{n / 1024 ** 3:.2f} GB"


def _power_of_ten(L):
    k = math.log10(L)
    return f"10^{int(round(k))}" if abs(k - round(k)) < 1e-12 else str(L)


def to_markdown(results):
    """Table with one row per cell; refused cells show ``-`` and the estimate in parentheses."""
    names = {"tw": "TW", "sinkhorn": "W1 (Sinkhorn, CPU)"}
    lines = ["| L | Loss | Time (s) | Peak RSS | Allocated |", "|---|---|---|---|---|"]
    last = None
    for r in results:
        size = _power_of_ten(r.support_size) if r.support_size != last else ""
        last = r.support_size
        if r.ok:
            cells = [f"{r.wall_time_seconds:.4f}", _human_bytes(r.peak_bytes),
                     _human_bytes(r.alloc_bytes)]
        else:
            cells = ["-", f"({_human_bytes(r.required_bytes)})", "-"]
        lines.append(f"| {size} | {names.get(r.method, r.method)} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
