"""Synthetic label-distribution data on a random tree.

Each sample pairs a Gaussian feature vector with a target distribution over
the tree's nodes. The feature is pushed through two fixed random sigmoid
layers; the last hidden output sets a bandwidth and the arg-max / arg-min
of the rest pick two anchor nodes, and the target mixes two
distance-decaying (or, as written, distance-growing) bumps around them.
"""

from dataclasses import dataclass, asdict
import enum
import heapq
import json
import os

import numpy as np
from scipy.special import expit, logsumexp

from ._validation import check_prob_vector
from .tree import build_tree, load_tree, save_tree

DATASET_FORMAT_VERSION = 1


class ExponentSign(str, enum.Enum):
    AS_WRITTEN_POSITIVE = "as_written_positive"
    NEGATED = "negated"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"as-written": cls.AS_WRITTEN_POSITIVE, "positive": cls.AS_WRITTEN_POSITIVE}
        return aliases.get(value) or cls(value.replace("-", "_"))


@dataclass(frozen=True)
class SynthConfig:
    num_nodes: int = 1000
    feature_dim: int = 10
    hidden_dim: int = 10
    num_samples: int = 1000
    seed: int = 0
    exponent_sign: ExponentSign = ExponentSign.AS_WRITTEN_POSITIVE

    def __post_init__(self):
        object.__setattr__(self, "exponent_sign", ExponentSign.parse(self.exponent_sign))
        if self.num_nodes < 2:
            raise ValueError("num_nodes must be at least 2")
        if self.feature_dim < 1 or self.hidden_dim < 1:
            raise ValueError("feature_dim and hidden_dim must be positive")
        if self.num_samples < 0:
            raise ValueError("num_samples must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["exponent_sign"] = self.exponent_sign.value
        return d


@dataclass
class Dataset:
    """Row-aligned features and target distributions, with their tree."""

    features: np.ndarray
    targets: np.ndarray
    tree: object

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2 or self.targets.ndim != 2:
            raise ValueError("features and targets must be 2-D")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("features and targets have different sample counts")
        if self.targets.shape[1] != self.tree.node_count:
            raise ValueError("targets do not match the tree's node count")
        if len(self.targets):
            check_prob_vector(self.targets, "targets")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]


def prufer_to_edges(seq, n):
    """Decode a Prüfer sequence over ``0..n-1`` into ``n - 1`` undirected edges."""
    seq = [int(s) for s in seq]
    if len(seq) != max(n - 2, 0):
        raise ValueError("Prüfer sequence must have n - 2 entries")
    degree = [1] * n
    for s in seq:
        degree[s] += 1
    leaves = [v for v in range(n) if degree[v] == 1]
    heapq.heapify(leaves)
    edges = []
    for s in seq:
        leaf = heapq.heappop(leaves)
        edges.append((s, leaf))
        degree[s] -= 1
        if degree[s] == 1:
            heapq.heappush(leaves, s)
    if n >= 2:
        u, v = heapq.heappop(leaves), heapq.heappop(leaves)
        edges.append((u, v))
    return edges


def random_tree(l, seed=None):
    """Uniform random labelled tree on ``l`` nodes, rooted at 0, unit weights."""
    l = int(l)
    if l < 1:
        raise ValueError("l must be positive")
    rng = np.random.default_rng(seed)
    seq = rng.integers(0, l, size=max(l - 2, 0)) if l > 2 else []
    undirected = prufer_to_edges(seq, l) if l > 1 else []
    adj = [[] for _ in range(l)]
    for u, v in undirected:
        adj[u].append(v)
        adj[v].append(u)
    edges = []
    seen = [False] * l
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                edges.append((u, v, 1.0))
                stack.append(v)
    return build_tree(edges, root=0, node_count=l)


def f_dist(tree, v, u, sigma, sign=ExponentSign.AS_WRITTEN_POSITIVE, dist_v=None, dist_u=None):
    """Two-anchor distribution ``(exp(s d(v,.)/sigma^2) + exp(s d(u,.)/sigma^2)) / C``.

    ``s = +1`` for ``as_written_positive`` and ``-1`` for ``negated``. The
    normalizer is taken in log space, so small ``sigma`` cannot overflow.
    Precomputed distance rows may be passed as ``dist_v`` / ``dist_u``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    sign = ExponentSign.parse(sign)
    s = 1.0 if sign is ExponentSign.AS_WRITTEN_POSITIVE else -1.0
    dv = tree.distances_from(v) if dist_v is None else dist_v
    du = tree.distances_from(u) if dist_u is None else dist_u
    scale = s / sigma ** 2
    log_score = np.logaddexp(scale * dv, scale * du)
    out = np.exp(log_score - logsumexp(log_score))
    return out / out.sum()


class _Pipeline:
    """The fixed random map shared by every split of one dataset."""

    def __init__(self, cfg):
        tree_ss = np.random.SeedSequence(cfg.seed, spawn_key=(0,))
        weight_ss = np.random.SeedSequence(cfg.seed, spawn_key=(1,))
        self.cfg = cfg
        self.tree = random_tree(cfg.num_nodes, np.random.default_rng(tree_ss))
        wrng = np.random.default_rng(weight_ss)
        # applied as linear maps R^n -> R^m -> R^(l+1)
        self.W1 = wrng.standard_normal((cfg.hidden_dim, cfg.feature_dim))
        self.W2 = wrng.standard_normal((cfg.num_nodes + 1, cfg.hidden_dim))
        self._dist = None

    def distances(self):
        if self._dist is None:
            self._dist = self.tree.distance_matrix()
        return self._dist

    def split_rng(self, index):
        return np.random.default_rng(np.random.SeedSequence(self.cfg.seed, spawn_key=(2, index)))

    def sample(self, n, rng):
        cfg = self.cfg
        l = cfg.num_nodes
        x = rng.standard_normal((n, cfg.feature_dim))
        h = expit(x @ self.W1.T)
        h = expit(h @ self.W2.T)
        sigma = 10.0 * h[:, l]
        v = np.argmax(h[:, :l], axis=1)  # first maximum on ties
        u = np.argmin(h[:, :l], axis=1)
        targets = np.empty((n, l))
        if n:
            dist = self.distances()
            for i in range(n):
                targets[i] = f_dist(
                    self.tree, int(v[i]), int(u[i]), float(sigma[i]), cfg.exponent_sign,
                    dist_v=dist[v[i]], dist_u=dist[u[i]],
                )
        return x, targets


def generate(cfg):
    """One dataset of ``cfg.num_samples`` rows."""
    return generate_splits(cfg, [cfg.num_samples])[0]


def generate_splits(cfg, sizes):
    """Datasets sharing one tree and random map, from disjoint sample streams."""
    pipe = _Pipeline(cfg)
    out = []
    for index, n in enumerate(sizes):
        x, p = pipe.sample(int(n), pipe.split_rng(index))
        out.append(Dataset(x, p, pipe.tree))
    return out


# -- files ---------------------------------------------------------------------------


def _fmt(values):
    return "[" + ",".join(format(float(v), ".17g") for v in values) + "]"


def save_dataset(dataset, path, tree_file, meta=None):
    """Write the JSON-lines dataset format.

    The header line records ``version, N, n, l, tree_file`` plus ``meta``
    (seed, sign, ...). The tree itself is written next to it by the caller
    or via :func:`save_tree`.
    """
    header = {
        "version": DATASET_FORMAT_VERSION,
        "N": len(dataset),
        "n": dataset.n_features,
        "l": dataset.tree.node_count,
        "tree_file": os.path.basename(tree_file),
    }
    header.update(meta or {})
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for x, p in zip(dataset.features, dataset.targets):
            fh.write('{"x":' + _fmt(x) + ',"p":' + _fmt(p) + "}\n")
    os.replace(tmp, path)


def load_dataset(path, tree=None):
    """Read a dataset file; the tree is loaded from ``tree_file`` if not given."""
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    if header.get("version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {header.get('version')}")
    if tree is None:
        tree = load_tree(os.path.join(os.path.dirname(os.path.abspath(path)), header["tree_file"]))
    n, l = int(header["n"]), int(header["l"])
    x = np.array([r["x"] for r in rows], dtype=np.float64).reshape(-1, n)
    p = np.array([r["p"] for r in rows], dtype=np.float64).reshape(-1, l)
    if x.shape[0] != int(header["N"]):
        raise ValueError(f"{path}: header says N={header['N']}, found {x.shape[0]} rows")
    return Dataset(x, p, tree), header


def write_synthetic(cfg, out_dir, test_samples=None):
    """Generate train/test splits and write ``tree.tsv``, ``train.jsonl``, ``test.jsonl``."""
    os.makedirs(out_dir, exist_ok=True)
    n_test = cfg.num_samples if test_samples is None else int(test_samples)
    train, test = generate_splits(cfg, [cfg.num_samples, n_test])
    tree_path = os.path.join(out_dir, "tree.tsv")
    save_tree(train.tree, tree_path)
    meta = {
        "seed": cfg.seed,
        "sign": cfg.exponent_sign.value,
        "hidden_dim": cfg.hidden_dim,
        "entries": "standard_normal",
    }
    paths = {"tree": tree_path}
    for name, ds in (("train", train), ("test", test)):
        paths[name] = os.path.join(out_dir, f"{name}.jsonl")
        save_dataset(ds, paths[name], tree_path, dict(meta, split=name))
    return paths
