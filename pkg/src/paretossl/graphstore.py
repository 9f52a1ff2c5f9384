"""Graph storage, synthetic generation, on-disk format, subgraph sampling,
augmentations, edge splitting, and partition-label generation.

Graphs are undirected, unweighted, self-loop-free, and immutable once
built. Every sampling or augmentation routine is a pure function of its
inputs plus an explicit seed or numpy Generator, so replay equality holds
bit-exactly.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, SamplingError
from .numcore import SparseAdjacency


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@dataclass(frozen=True)
class Graph:
    n: int
    adjacency: SparseAdjacency
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.adjacency.n != self.n:
            raise ConfigError("adjacency size does not match node count")
        if self.features.shape[0] != self.n:
            raise ConfigError("feature rows do not match node count")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("non-finite feature entries")
        if self.labels is not None and len(self.labels) != self.n:
            raise ConfigError("label count does not match node count")
        for u in range(self.n):
            if self.adjacency.has_edge(u, u):
                raise ConfigError(f"self-loop stored at node {u}")

    @property
    def num_edges(self):
        return self.adjacency.num_edges

    @property
    def feat_dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class SubgraphSample:
    node_ids: np.ndarray
    adjacency: SparseAdjacency
    features: np.ndarray
    seed_ids: np.ndarray

    @property
    def n(self):
        return int(self.node_ids.shape[0])


@dataclass(frozen=True)
class AugmentationSpec:
    """Knobs for one pretext task's subgraph pipeline.

    seed_count is an int, or "full" for the whole graph. With an integer
    seed_count, hop_order >= 1 grows a k-hop ball around the seeds and
    hop_order 0 keeps just the seeds' induced subgraph.
    """

    feature_mask_ratio: float = 0.0
    edge_drop_ratio: float = 0.0
    hop_order: int = 0
    seed_count: int | str = "full"

    def __post_init__(self):
        if not 0.0 <= self.feature_mask_ratio < 1.0:
            raise ConfigError(f"feature_mask_ratio out of range: {self.feature_mask_ratio}")
        if not 0.0 <= self.edge_drop_ratio < 1.0:
            raise ConfigError(f"edge_drop_ratio out of range: {self.edge_drop_ratio}")
        if self.hop_order < 0:
            raise ConfigError(f"hop_order must be >= 0: {self.hop_order}")
        if self.seed_count != "full" and int(self.seed_count) < 1:
            raise ConfigError(f"seed_count must be >= 1 or 'full': {self.seed_count}")


@dataclass(frozen=True)
class EdgeSplit:
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    train_graph: Graph


def generate_sbm(seed, blocks, nodes, p_intra, p_inter, feat_dim, feat_noise):
    """Stochastic block model with round-robin block labels.

    Features are the block's unit basis vector e_{b mod D} plus N(0, sigma)
    noise. Edges are drawn first, then features, so both replay exactly
    from the seed.
    """
    if blocks < 2:
        raise ConfigError("need at least 2 blocks")
    if nodes < blocks:
        raise ConfigError("need at least one node per block")
    for p in (p_intra, p_inter):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"probability out of range: {p}")
    if feat_dim < 1 or feat_noise < 0:
        raise ConfigError("bad feature parameters")
    rng = np.random.default_rng(seed)
    labels = np.arange(nodes, dtype=np.int64) % blocks
    iu, iv = np.triu_indices(nodes, k=1)
    p = np.where(labels[iu] == labels[iv], p_intra, p_inter)
    hit = rng.random(iu.shape[0]) < p
    pairs = np.stack([iu[hit], iv[hit]], axis=1)
    means = np.zeros((blocks, feat_dim))
    means[np.arange(blocks), np.arange(blocks) % feat_dim] = 1.0
    feats = means[labels] + feat_noise * rng.standard_normal((nodes, feat_dim))
    return Graph(nodes, SparseAdjacency.from_edges(nodes, pairs, check=False),
                 feats, labels)


# ---------------------------------------------------------------------------
# on-disk format


def save_graph(graph, directory):
    os.makedirs(directory, exist_ok=True)
    has_labels = int(graph.labels is not None)
    with open(os.path.join(directory, "meta.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(f"n={graph.n}\nd={graph.feat_dim}\nhas_labels={has_labels}\n")
    with open(os.path.join(directory, "edges.tsv"), "w", encoding="utf-8", newline="\n") as f:
        for u, v in graph.adjacency.edge_pairs():
            f.write(f"{u}\t{v}\n")
    with open(os.path.join(directory, "features.tsv"), "w", encoding="utf-8", newline="\n") as f:
        for row in graph.features:
            f.write("\t".join("%.17g" % x for x in row) + "\n")
    if has_labels:
        with open(os.path.join(directory, "labels.tsv"), "w", encoding="utf-8", newline="\n") as f:
            for y in graph.labels:
                f.write(f"{int(y)}\n")


def _read_lines(directory, name, required=True):
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        if required:
            raise FormatError(f"missing file: {path}")
        return None
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def load_graph(directory):
    meta = _read_lines(directory, "meta.txt")
    fields = {}
    for i, line in enumerate(meta, start=1):
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"meta.txt line {i}: expected key=value")
        k, v = line.split("=", 1)
        fields[k] = v
    try:
        n = int(fields["n"])
        d = int(fields["d"])
        has_labels = int(fields["has_labels"])
    except (KeyError, ValueError) as e:
        raise FormatError(f"meta.txt: bad or missing field ({e})") from e

    pairs = []
    seen = set()
    for i, line in enumerate(_read_lines(directory, "edges.tsv"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"edges.tsv line {i}: expected u<TAB>v")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as e:
            raise FormatError(f"edges.tsv line {i}: non-integer endpoint") from e
        if not (0 <= u < n and 0 <= v < n):
            raise FormatError(f"edges.tsv line {i}: node id out of range")
        if u >= v:
            raise FormatError(f"edges.tsv line {i}: requires u < v")
        if (u, v) in seen:
            raise FormatError(f"edges.tsv line {i}: duplicate edge")
        seen.add((u, v))
        pairs.append((u, v))

    feat_lines = [l for l in _read_lines(directory, "features.tsv") if l]
    if len(feat_lines) != n:
        raise FormatError(f"features.tsv: expected {n} rows, found {len(feat_lines)}")
    feats = np.empty((n, d))
    for i, line in enumerate(feat_lines):
        parts = line.split("\t")
        if len(parts) != d:
            raise FormatError(f"features.tsv line {i + 1}: expected {d} values")
        try:
            feats[i] = [float(x) for x in parts]
        except ValueError as e:
            raise FormatError(f"features.tsv line {i + 1}: bad float") from e

    labels = None
    if has_labels:
        label_lines = [l for l in _read_lines(directory, "labels.tsv") if l]
        if len(label_lines) != n:
            raise FormatError(f"labels.tsv: expected {n} rows, found {len(label_lines)}")
        try:
            labels = np.array([int(x) for x in label_lines], dtype=np.int64)
        except ValueError as e:
            raise FormatError("labels.tsv: non-integer label") from e

    return Graph(n, SparseAdjacency.from_edges(n, pairs, check=False), feats, labels)


# ---------------------------------------------------------------------------
# sampling and augmentation


def _induced(graph, nodes, seeds):
    nodes = np.asarray(sorted(set(int(x) for x in nodes)), dtype=np.int64)
    csr = graph.adjacency.to_scipy()[nodes][:, nodes].tocoo()
    mask = csr.row < csr.col
    pairs = np.stack([csr.row[mask], csr.col[mask]], axis=1)
    adj = SparseAdjacency.from_edges(nodes.shape[0], pairs, check=False)
    return SubgraphSample(nodes, adj, graph.features[nodes].copy(),
                          np.asarray(sorted(set(int(x) for x in seeds)), dtype=np.int64))


def whole_graph_sample(graph, seeds=None):
    nodes = np.arange(graph.n)
    return _induced(graph, nodes, nodes if seeds is None else seeds)


def k_hop_sample(graph, seeds, k):
    """All nodes within distance k of any seed, with the induced subgraph.

    k=0 is the whole-graph escape hatch (pairs with seed_count="full").
    """
    seeds = np.asarray(list(seeds), dtype=np.int64)
    if seeds.size == 0:
        raise ValueError("seed set must not be empty")
    if seeds.min() < 0 or seeds.max() >= graph.n:
        raise ValueError("seed node id out of range")
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return whole_graph_sample(graph, seeds)
    visited = np.zeros(graph.n, dtype=bool)
    visited[seeds] = True
    frontier = np.unique(seeds)
    for _ in range(k):
        nxt = []
        for u in frontier:
            nbrs = graph.adjacency.neighbors(u)
            nxt.append(nbrs[~visited[nbrs]])
        if not nxt:
            break
        frontier = np.unique(np.concatenate(nxt)) if nxt else np.zeros(0, np.int64)
        if frontier.size == 0:
            break
        visited[frontier] = True
    return _induced(graph, np.flatnonzero(visited), seeds)


def uniform_node_sample(graph, count, seed):
    """`count` nodes drawn uniformly without replacement, induced subgraph."""
    if not 1 <= count <= graph.n:
        raise ValueError(f"count must be in [1, {graph.n}], got {count}")
    rng = _rng(seed)
    nodes = rng.choice(graph.n, size=count, replace=False)
    return _induced(graph, nodes, nodes)


def drop_edges(sample, ratio, rng):
    """Independently remove each undirected edge with probability `ratio`."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must be in [0,1), got {ratio}")
    pairs = sample.adjacency.edge_pairs()
    if ratio == 0.0 or pairs.shape[0] == 0:
        return sample
    keep = _rng(rng).random(pairs.shape[0]) >= ratio
    adj = SparseAdjacency.from_edges(sample.n, pairs[keep], check=False)
    return SubgraphSample(sample.node_ids, adj, sample.features, sample.seed_ids)


def mask_features(sample, ratio, rng):
    """Zero the feature rows of floor(ratio*n) nodes (at least 1 if ratio>0).

    Returns the masked sample and the boolean row mask.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must be in [0,1), got {ratio}")
    m = sample.n
    count = int(np.floor(ratio * m))
    if ratio > 0.0 and count == 0:
        count = 1
    mask = np.zeros(m, dtype=bool)
    if count:
        rows = _rng(rng).choice(m, size=count, replace=False)
        mask[rows] = True
    feats = sample.features.copy()
    feats[mask] = 0.0
    out = SubgraphSample(sample.node_ids, sample.adjacency, feats, sample.seed_ids)
    return out, mask


def shuffle_features(sample, rng):
    """Permute feature rows uniformly; adjacency untouched."""
    perm = _rng(rng).permutation(sample.n)
    return SubgraphSample(sample.node_ids, sample.adjacency,
                          sample.features[perm].copy(), sample.seed_ids)


def base_sample(graph, spec, rng):
    """The pre-augmentation sample for a task's spec.

    seed_count="full" takes the whole graph; hop_order >= 1 takes a k-hop
    ball around uniformly drawn seeds; hop_order 0 with an integer
    seed_count is a uniform node-induced sample.
    """
    rng = _rng(rng)
    if spec.seed_count == "full":
        return whole_graph_sample(graph)
    count = min(int(spec.seed_count), graph.n)
    if spec.hop_order == 0:
        return uniform_node_sample(graph, count, rng)
    seeds = rng.choice(graph.n, size=count, replace=False)
    return k_hop_sample(graph, seeds, spec.hop_order)


def augment_sample(sample, spec, rng):
    """Drop edges then mask features, in that order.

    Returns (sample, mask_rows).
    """
    rng = _rng(rng)
    if spec.edge_drop_ratio > 0.0:
        sample = drop_edges(sample, spec.edge_drop_ratio, rng)
    mask = np.zeros(sample.n, dtype=bool)
    if spec.feature_mask_ratio > 0.0:
        sample, mask = mask_features(sample, spec.feature_mask_ratio, rng)
    return sample, mask


def apply_augmentation(graph, spec, rng):
    """Sample per `spec` then augment. Draw order is fixed: seeds, edge
    drop, feature mask. Returns (sample, mask_rows)."""
    rng = _rng(rng)
    return augment_sample(base_sample(graph, spec, rng), spec, rng)


# ---------------------------------------------------------------------------
# edge split and partitioning


def split_edges(graph, ratios, seed):
    """70/10/20-style positive split with one uniform non-edge negative per
    positive; negatives are disjoint across splits. Also builds the
    train-edge-only message-passing graph."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be 3 nonnegative values summing to 1: {ratios}")
    rng = np.random.default_rng(seed)
    pairs = graph.adjacency.edge_pairs()
    m = pairs.shape[0]
    perm = rng.permutation(m)
    n_train = int(round(ratios[0] * m))
    n_val = int(round(ratios[1] * m))
    n_val = min(n_val, m - n_train)
    train_pos = pairs[perm[:n_train]]
    val_pos = pairs[perm[n_train:n_train + n_val]]
    test_pos = pairs[perm[n_train + n_val:]]

    existing = set(map(tuple, pairs))
    negatives = []
    taken = set()
    budget = 100 * max(m, 1)
    while len(negatives) < m:
        if budget == 0:
            raise SamplingError("could not find enough non-edges "
                                f"({len(negatives)}/{m} after 100*|E| trials)")
        budget -= 1
        u, v = rng.integers(0, graph.n, size=2)
        if u == v:
            continue
        e = (min(int(u), int(v)), max(int(u), int(v)))
        if e in existing or e in taken:
            continue
        taken.add(e)
        negatives.append(e)
    negatives = np.array(negatives, dtype=np.int64).reshape(-1, 2)

    train_graph = Graph(
        graph.n,
        SparseAdjacency.from_edges(graph.n, train_pos, check=False),
        graph.features,
        graph.labels,
    )
    return EdgeSplit(
        train_pos, val_pos, test_pos,
        negatives[:n_train], negatives[n_train:n_train + n_val],
        negatives[n_train + n_val:],
        train_graph,
    )


def greedy_partition(graph, parts, seed):
    """Streaming greedy partition labels in BFS order.

    Each node joins the part maximizing
    (neighbors already in part) - lambda * part_size * parts / n
    with lambda = max(1, mean degree); ties go to the lowest part index.
    Empty parts are back-filled from the largest parts, so every part is
    non-empty. Deterministic given the seed (which picks the BFS root).
    """
    if parts < 2:
        raise ValueError("need at least 2 parts")
    if parts > graph.n:
        raise ValueError(f"parts={parts} exceeds node count {graph.n}")
    n = graph.n
    lam = max(1.0, 2.0 * graph.num_edges / n)
    penalty = lam * parts / n
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, n))

    labels = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(parts, dtype=np.int64)
    order_of = np.full(n, -1, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    queue = deque([start])
    visited[start] = True
    placed = 0
    next_unvisited = 0
    while placed < n:
        if not queue:
            while visited[next_unvisited]:
                next_unvisited += 1
            queue.append(next_unvisited)
            visited[next_unvisited] = True
        u = queue.popleft()
        nbr_labels = labels[graph.adjacency.neighbors(u)]
        gain = np.bincount(nbr_labels[nbr_labels >= 0], minlength=parts)
        score = gain - penalty * sizes
        p = int(np.argmax(score))
        labels[u] = p
        sizes[p] += 1
        order_of[u] = placed
        placed += 1
        for w in graph.adjacency.neighbors(u):
            if not visited[w]:
                visited[w] = True
                queue.append(w)

    for p in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))
        members = np.flatnonzero(labels == donor)
        mover = members[np.argmax(order_of[members])]
        labels[mover] = p
        sizes[donor] -= 1
        sizes[p] += 1
    return labels
