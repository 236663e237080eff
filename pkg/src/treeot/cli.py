"""``treeot`` command line: generate data, train, evaluate, benchmark, compare distances.

Exit codes are 0 on success, 2 for usage errors, 3 for data errors (missing
or malformed files, shape mismatches) and 4 for numerical failures. Every
command that writes files also writes a JSON manifest next to them.
"""

import argparse
import datetime as _dt
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


class RunManifest:
    """What a command was asked to do and what it wrote.

    Everything except ``started_at`` / ``finished_at`` is a function of
    the inputs, so two runs with the same flags give the same manifest
    modulo those two fields.
    """

    def __init__(self, command, argv, config, seed=None):
        from . import __version__

        self.command = command
        self.argv = list(argv)
        self.config = config
        self.seed = seed
        self.paths = {}
        self.version = __version__
        self.started_at = _now()
        self.finished_at = None

    def to_dict(self):
        return {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seed": self.seed,
            "paths": self.paths,
            "version": self.version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    def write(self, out_dir):
        self.finished_at = _now()
        path = os.path.join(out_dir, f"manifest.{self.command}.json")
        _write_atomic(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise DataError(f"output directory {path} is not writable")


# -- gen -----------------------------------------------------------------------------


def cmd_gen(args, argv):
    from .datagen import SynthConfig, write_synthetic

    try:
        cfg = SynthConfig(
            num_nodes=args.nodes,
            feature_dim=args.feature_dim,
            hidden_dim=args.hidden_dim,
            num_samples=args.samples,
            seed=args.seed,
            exponent_sign=args.sign,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _ensure_dir(args.out)
    manifest = RunManifest("gen", argv, dict(_config(args), synth=cfg.to_dict()), seed=args.seed)
    manifest.paths = write_synthetic(cfg, args.out, test_samples=args.test_samples)
    manifest.write(args.out)
    print(f"wrote {', '.join(sorted(manifest.paths.values()))}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------------


def _split_path(data_dir, split):
    path = os.path.join(data_dir, f"{split}.jsonl")
    if not os.path.isfile(path):
        raise DataError(f"no {split} split at {path}")
    return path


def cmd_train(args, argv):
    from .datagen import load_dataset
    from .model import TrainConfig, save_checkpoint, train
    from .objective import LossConfig

    if args.lam < 0:
        raise UsageError(f"--lambda must be nonnegative, got {args.lam}")
    try:
        loss = LossConfig(
            lam=args.lam,
            regularizer=args.reg,
            sinkhorn_iterations=args.sinkhorn_iters,
            sinkhorn_reg=args.sinkhorn_reg,
        )
        cfg = TrainConfig(
            epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr, seed=args.seed,
            loss=loss,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    dataset, _ = load_dataset(_split_path(args.data, "train"))
    _ensure_dir(args.out)
    manifest = RunManifest("train", argv, dict(_config(args), train=cfg.to_dict()), seed=args.seed)
    model, trace = train(dataset, dataset.tree, cfg)
    ckpt = os.path.join(args.out, "model.ckpt")
    trace_path = os.path.join(args.out, "trace.csv")
    save_checkpoint(model, ckpt, cfg)
    _write_atomic(trace_path, trace.to_csv())
    manifest.paths = {"checkpoint": ckpt, "checkpoint_meta": f"{ckpt}.json", "trace": trace_path}
    manifest.write(args.out)
    if trace.total:
        print(f"final epoch loss {trace.total[-1]:.6g} (kl {trace.kl_part[-1]:.6g}, "
              f"reg {trace.reg_part[-1]:.6g})")
    print(f"wrote {ckpt}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------


def _load_truth(path, n):
    try:
        with open(path, encoding="utf-8") as fh:
            sets = [json.loads(line) for line in fh if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read truth sets from {path}: {exc}") from exc
    if len(sets) != n:
        raise DataError(f"{path}: {len(sets)} truth sets for {n} samples")
    return sets


def cmd_eval(args, argv):
    from .datagen import load_dataset
    from .exceptions import DimensionError
    from .metrics import add_ranking_metrics
    from .model import evaluate, load_checkpoint

    if args.top_k < 1:
        raise UsageError("--top-k must be positive")
    if not os.path.isfile(args.model):
        raise DataError(f"no checkpoint at {args.model}")
    model = load_checkpoint(args.model)
    dataset, _ = load_dataset(_split_path(args.data, args.split))
    try:
        report = evaluate(model, dataset)
    except DimensionError as exc:
        raise DataError(str(exc)) from exc
    if args.truth:
        truth = _load_truth(args.truth, len(dataset))
        add_ranking_metrics(report, dataset.tree, model.predict(dataset.features), truth, args.top_k)
    out = args.out or os.path.dirname(os.path.abspath(args.model))
    _ensure_dir(out)
    manifest = RunManifest("eval", argv, _config(args))
    json_path = os.path.join(out, f"report.{args.split}.json")
    csv_path = os.path.join(out, f"report.{args.split}.csv")
    _write_atomic(json_path, report.to_json() + "\n")
    _write_atomic(csv_path, report.to_csv())
    manifest.paths = {"report": json_path, "per_sample": csv_path}
    manifest.write(out)
    for name, stats in report.summary().items():
        print(f"{name:>14s}  {stats['mean']:.6f} +- {stats['std']:.6f}")
    return EXIT_OK


# -- bench ---------------------------------------------------------------------------


def _parse_sizes(text):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if not parts:
        raise UsageError("--sizes must list at least one support size")
    try:
        sizes = [int(float(p)) for p in parts]
    except ValueError as exc:
        raise UsageError(f"--sizes: {exc}") from exc
    if any(s < 2 for s in sizes):
        raise UsageError("--sizes entries must be at least 2")
    return sizes


def _parse_budget(text):
    if text is None or text.lower() in ("none", "off"):
        return None
    try:
        value = int(float(text))
    except ValueError as exc:
        raise UsageError(f"--memory-budget: {exc}") from exc
    if value <= 0:
        raise UsageError("--memory-budget must be positive")
    return value


def cmd_bench(args, argv):
    from .bench import DEFAULT_MEMORY_BUDGET, run_bench, scaling_fit, to_csv, to_markdown

    sizes = _parse_sizes(args.sizes)
    budget = DEFAULT_MEMORY_BUDGET if args.memory_budget is None else _parse_budget(args.memory_budget)
    if args.repeats < 1:
        raise UsageError("--repeats must be positive")
    results = run_bench(sizes, repeats=args.repeats, seed=args.seed, memory_budget=budget,
                        charge_cost_matrix=args.charge_cost_matrix)
    table = to_markdown(results)
    print(table, end="")
    slopes = scaling_fit(results)
    for method, slope in sorted(slopes.items()):
        print(f"scaling exponent {method}: {slope:.3f}")
    if args.out:
        _ensure_dir(args.out)
        manifest = RunManifest("bench", argv, dict(_config(args), memory_budget=budget),
                               seed=args.seed)
        csv_path = os.path.join(args.out, "bench.csv")
        md_path = os.path.join(args.out, "bench.md")
        values_path = os.path.join(args.out, "bench_values.json")
        _write_atomic(csv_path, to_csv(results))
        _write_atomic(md_path, table)
        values = [{"L": r.support_size, "method": r.method, "status": r.status, "value": r.value}
                  for r in results]
        _write_atomic(values_path, json.dumps({"values": values, "slopes": slopes},
                                              indent=2, sort_keys=True) + "\n")
        manifest.paths = {"csv": csv_path, "markdown": md_path, "values": values_path}
        manifest.write(args.out)
    return EXIT_OK


# -- dist ----------------------------------------------------------------------------


def load_vector(path):
    """Read a vector from ``.npy`` or from text (numbers split by whitespace or commas)."""
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    try:
        if path.endswith(".npy"):
            v = np.load(path, allow_pickle=False)
        else:
            with open(path, encoding="utf-8") as fh:
                v = np.array([float(t) for t in fh.read().replace(",", " ").split()])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DataError(f"{path}: expected a 1-D vector, got shape {v.shape}")
    return v


def cmd_dist(args, argv):
    from ._validation import check_prob_vector
    from .tree import load_tree
    from .transport import exact_wasserstein, sinkhorn_wasserstein, tree_wasserstein

    if not os.path.isfile(args.tree):
        raise DataError(f"no such file: {args.tree}")
    tree = load_tree(args.tree)
    mu = load_vector(args.mu)
    nu = load_vector(args.nu)
    for name, v in (("mu", mu), ("nu", nu)):
        if v.size != tree.node_count:
            raise DataError(f"{name} has {v.size} entries, tree has {tree.node_count} nodes")
        check_prob_vector(v, name)
    if args.method == "tw":
        value = tree_wasserstein(tree, mu, nu)
    elif args.method == "exact":
        value, _ = exact_wasserstein(tree.distance_matrix(), mu, nu)
    else:
        value = sinkhorn_wasserstein(tree.distance_matrix(), mu, nu,
                                     iterations=args.sinkhorn_iters, reg=args.sinkhorn_reg)
    print(f"{value:.12g}")
    return EXIT_OK


# -- repro ---------------------------------------------------------------------------


def cmd_repro(args, argv):
    from .experiment import run_sweep

    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    result = run_sweep(
        num_nodes=args.nodes,
        n_train=args.train_samples,
        n_test=args.test_samples,
        seeds=tuple(range(args.seed, args.seed + args.seeds)),
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        feature_dim=args.feature_dim,
        hidden_dim=args.hidden_dim,
        sign=args.sign,
        workers=args.workers,
    )
    table = result.to_markdown()
    print(table, end="")
    if args.out:
        _ensure_dir(args.out)
        manifest = RunManifest("repro", argv, _config(args), seed=args.seed)
        md_path = os.path.join(args.out, "table.md")
        json_path = os.path.join(args.out, "scores.json")
        _write_atomic(md_path, table)
        _write_atomic(json_path, json.dumps({"seeds": result.seeds, "scores": result.scores},
                                            indent=2, sort_keys=True) + "\n")
        manifest.paths = {"markdown": md_path, "scores": json_path}
        manifest.write(args.out)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def _sign(text):
    from .datagen import ExponentSign

    try:
        return ExponentSign.parse(text).value
    except ValueError:
        raise argparse.ArgumentTypeError("expected as-written or negated") from None


def build_parser():
    from .transport import SINKHORN_ITERATIONS, SINKHORN_REG

    parser = argparse.ArgumentParser(prog="treeot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic tree dataset")
    p.add_argument("--nodes", type=int, default=1000)
    p.add_argument("--samples", type=int, default=1000, help="training samples")
    p.add_argument("--test-samples", type=int, default=None, help="default: same as --samples")
    p.add_argument("--feature-dim", type=int, default=10)
    p.add_argument("--hidden-dim", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sign", type=_sign, default="as_written_positive",
                   help="as-written (growing with distance) or negated (decaying)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a linear-softmax model")
    p.add_argument("--data", required=True, help="directory holding train.jsonl")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--reg", choices=("tw", "sinkhorn", "none"), default="tw")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sinkhorn-iters", type=int, default=SINKHORN_ITERATIONS)
    p.add_argument("--sinkhorn-reg", type=float, default=SINKHORN_REG)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--truth", default=None, help="JSON lines, one list of true label ids per sample")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", default=None, help="default: the checkpoint's directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time and memory of TW against Sinkhorn")
    p.add_argument("--sizes", default="100,1000,10000")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--charge-cost-matrix", action="store_true",
                   help="include building the Sinkhorn cost matrix in its timings")
    p.add_argument("--memory-budget", default=None,
                   help="bytes, or 'none'; default 4 GiB")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dist", help="distance between two distributions on a tree")
    p.add_argument("--tree", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--nu", required=True)
    p.add_argument("--method", choices=("tw", "sinkhorn", "exact"), default="tw")
    p.add_argument("--sinkhorn-iters", type=int, default=SINKHORN_ITERATIONS)
    p.add_argument("--sinkhorn-reg", type=float, default=SINKHORN_REG)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("repro", help="the five-loss comparison sweep, as a Markdown table")
    p.add_argument("--nodes", type=int, default=100)
    p.add_argument("--train-samples", type=int, default=500)
    p.add_argument("--test-samples", type=int, default=500)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--feature-dim", type=int, default=10)
    p.add_argument("--hidden-dim", type=int, default=10)
    p.add_argument("--sign", type=_sign, default="negated")
    p.add_argument("--workers", type=int, default=None, help="default: $TREEOT_THREADS or 1")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None):
    from .exceptions import NumericalError, TreeStructureError

    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"treeot {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        where = ", ".join(f"{k}={v}" for k, v in exc.context.items())
        print(f"treeot {args.command}: numerical failure: {exc}" + (f" ({where})" if where else ""),
              file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, TreeStructureError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"treeot {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
