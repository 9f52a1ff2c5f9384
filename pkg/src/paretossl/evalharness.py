"""Frozen-encoder evaluation: probes, metrics, and rank aggregation.

Embeddings are scored on four downstream tasks — node classification
(linear probe), clustering (k-means + NMI), link prediction (Hadamard
edge features + AUC), and partition prediction — and runs are compared
by per-task dense ranks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata
from sklearn.cluster import KMeans

from .encoder import encode
from .errors import ReportError, SplitError
from .graphstore import whole_graph_sample

PROBE_ITERS = 500
PROBE_LR = 0.1
PROBE_L2 = 1e-4

DOWNSTREAM_TASKS = ("classification", "clustering", "link", "partition")


@dataclass(frozen=True)
class EmbeddingTable:
    """Frozen node representations plus where they came from."""

    matrix: np.ndarray
    checkpoint_id: str = ""
    graph_id: str = ""

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ValueError(f"embeddings must be a matrix, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("non-finite embedding entries")


def node_embeddings(graph, params):
    """Whole-graph representations from a frozen encoder."""
    return encode(whole_graph_sample(graph), params)


# ---------------------------------------------------------------------------
# linear probe


def probe_split(n, seed):
    """10/10/80 train/val/test indices from a seeded shuffle."""
    order = np.random.default_rng(seed).permutation(n)
    cut = max(1, n // 10)
    return order[:cut], order[cut:2 * cut], order[2 * cut:]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_logistic(x, y, n_classes, iters=PROBE_ITERS, lr=PROBE_LR, l2=PROBE_L2):
    """Full-batch gradient descent on multinomial cross-entropy.

    L2 applies to the weights only; the zero init makes the fit
    deterministic with no randomness of its own.
    """
    m, d = x.shape
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), y] = 1.0
    for _ in range(iters):
        p = _softmax(x @ w + b)
        err = (p - onehot) / m
        w -= lr * (x.T @ err + l2 * w)
        b -= lr * err.sum(axis=0)
    return w, b


def logistic_probe(emb, labels, seed, return_details=False):
    """Accuracy of a linear classifier trained on a 10% split."""
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape[0] != emb.shape[0]:
        raise ValueError("label count does not match embedding rows")
    classes, encoded = np.unique(labels, return_inverse=True)
    train, val, test = probe_split(emb.shape[0], seed)
    if np.unique(encoded[train]).size < 2:
        raise SplitError("train split holds a single class")
    w, b = fit_logistic(emb[train], encoded[train], classes.size)
    pred = np.argmax(emb[test] @ w + b, axis=1)
    accuracy = float(np.mean(pred == encoded[test]))
    if return_details:
        return accuracy, {"train": train, "val": val, "test": test,
                          "weights": w, "bias": b}
    return accuracy


def partition_probe(emb, parts, seed):
    """Linear probe with partition ids as the labels."""
    return logistic_probe(emb, parts, seed)


# ---------------------------------------------------------------------------
# clustering


def kmeans_nmi(emb, labels, k, seed):
    """Best-of-10 k-means clustering scored by NMI against the labels."""
    emb = np.asarray(emb, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > emb.shape[0]:
        raise ValueError(f"k={k} exceeds {emb.shape[0]} points")
    model = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed)
    pred = model.fit_predict(emb)
    return normalized_mutual_information(pred, np.asarray(labels))


def normalized_mutual_information(a, b):
    """I(A;B) normalized by the arithmetic mean of the entropies.

    Mutual information is accumulated as p*(log n_ab - log n_a - log n_b
    + log N) so a label-identical clustering reproduces the entropy terms
    bit for bit and the ratio is exactly 1.0.
    """
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("clusterings must have equal length")
    n = a.shape[0]
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(joint, (ai, bi), 1)
    rows = joint.sum(axis=1)
    cols = joint.sum(axis=0)
    log_n = np.log(float(n))

    def entropy(counts):
        total = 0.0
        for c in counts:
            if c:
                total += (c / n) * (log_n - np.log(float(c)))
        return total

    h_a, h_b = entropy(rows), entropy(cols)
    if h_a == 0.0 or h_b == 0.0:
        return 0.0
    info = 0.0
    for i in range(joint.shape[0]):
        for j in range(joint.shape[1]):
            c = joint[i, j]
            if c:
                info += (c / n) * (np.log(float(c)) - np.log(float(rows[i]))
                                   - np.log(float(cols[j])) + log_n)
    return float(info / (0.5 * (h_a + h_b)))


# ---------------------------------------------------------------------------
# link prediction


def auc_scores(pos_scores, neg_scores):
    """Exact rank-statistic AUC; tied scores count one half."""
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    r_pos = ranks[: pos.size].sum()
    return float((r_pos - pos.size * (pos.size + 1) / 2.0)
                 / (pos.size * neg.size))


def _edge_features(emb, pairs):
    return emb[pairs[:, 0]] * emb[pairs[:, 1]]


def link_pred_auc(emb_trainonly, split, seed):
    """AUC of a logistic scorer over Hadamard edge features.

    The embeddings must come from the train-edge-only encoder; the seed
    is part of the metric interface although the zero-init full-batch fit
    consumes no randomness.
    """
    del seed
    emb = np.asarray(emb_trainonly, dtype=np.float64)
    if split.test_pos.shape[0] == 0 or split.test_neg.shape[0] == 0:
        raise SplitError("empty test split")
    x = np.vstack([_edge_features(emb, split.train_pos),
                   _edge_features(emb, split.train_neg)])
    y = np.concatenate([np.ones(split.train_pos.shape[0], dtype=np.int64),
                        np.zeros(split.train_neg.shape[0], dtype=np.int64)])
    w, b = fit_logistic(x, y, 2)
    score = w[:, 1] - w[:, 0]
    shift = b[1] - b[0]
    pos = _edge_features(emb, split.test_pos) @ score + shift
    neg = _edge_features(emb, split.test_neg) @ score + shift
    return auc_scores(pos, neg)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class MetricReport:
    """Per-task mean/std over runs plus the overall average."""

    per_task: dict
    average: float


def summarize_runs(rows):
    """Mean and std (population) per task over per-seed metric dicts."""
    if not rows:
        raise ReportError("no runs to summarize")
    tasks = list(rows[0])
    for row in rows:
        if list(row) != tasks:
            raise ReportError("runs disagree on task set")
    per_task = {
        t: {"mean": float(np.mean([r[t] for r in rows])),
            "std": float(np.std([r[t] for r in rows]))}
        for t in tasks
    }
    average = float(np.mean([per_task[t]["mean"] for t in tasks]))
    return MetricReport(per_task, average)


def dense_ranks(values):
    """1 = best (highest); ties share the better rank; next distinct +1."""
    order = sorted(set(values), reverse=True)
    lookup = {v: i + 1 for i, v in enumerate(order)}
    return [lookup[v] for v in values]


def aggregate_report(per_method):
    """Cross-method comparison: per-task dense ranks and the averages.

    `per_method` maps method name -> task -> metric value; every method
    must cover the same tasks.
    """
    if len(per_method) < 2:
        raise ReportError("need at least two methods to rank")
    methods = list(per_method)
    tasks = list(per_method[methods[0]])
    for m in methods:
        missing = [t for t in tasks if t not in per_method[m]]
        extra = [t for t in per_method[m] if t not in tasks]
        if missing or extra:
            raise ReportError(f"method '{m}' task set mismatch")
    ranks = {m: {} for m in methods}
    for t in tasks:
        for m, r in zip(methods, dense_ranks([per_method[m][t] for m in methods])):
            ranks[m][t] = r
    average_metric = {m: float(np.mean([per_method[m][t] for t in tasks]))
                      for m in methods}
    average_rank = {m: float(np.mean([ranks[m][t] for t in tasks]))
                    for m in methods}
    return {"ranks": ranks, "average_metric": average_metric,
            "average_rank": average_rank}


def downstream_metrics(graph, emb, emb_trainonly, edge_split, parts, seed):
    """All four frozen-encoder metrics for one run."""
    if graph.labels is None:
        raise ValueError("graph has no labels")
    k = int(np.unique(graph.labels).size)
    return {
        "classification": logistic_probe(emb, graph.labels, seed),
        "clustering": kmeans_nmi(emb, graph.labels, k, seed),
        "link": link_pred_auc(emb_trainonly, edge_split, seed),
        "partition": partition_probe(emb, parts, seed),
    }
