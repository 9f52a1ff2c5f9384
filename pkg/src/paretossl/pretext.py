"""The five self-supervised losses over sampled subgraphs.

Each task maps (subgraph sample(s), encoder params, task heads, rng) to a
scalar loss on a tape, then one backward pass yields the flattened
shared-encoder gradient plus any head gradients. Batch preparation (all
randomness) is split from loss evaluation (deterministic) so a frozen
batch can be re-evaluated at probed parameters.

Task ids: featrec, toporec, repdecor, ming, minsg.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import encode_on_tape, flatten, propagation_operator
from .errors import DegenerateTargetError, SamplingError
from .graphstore import (
    AugmentationSpec,
    augment_sample,
    apply_augmentation,
    base_sample,
    mask_features,
    shuffle_features,
    whole_graph_sample,
)
from .numcore import Tape, backward, forward_eval

TASK_IDS = ("featrec", "toporec", "repdecor", "ming", "minsg")

HEAD_OF_TASK = {
    "featrec": "feat_decoder",
    "toporec": "topo_scorer",
    "ming": "ming_scorer",
}


@dataclass
class TaskHeads:
    """Task-specific parameters tied to encoder output dim d and feature
    dim D: feat decoder (d x D), topo scorer (d x 1), mi-ng scorer (2d x 1)."""

    feat_decoder: np.ndarray
    topo_scorer: np.ndarray
    ming_scorer: np.ndarray

    def __post_init__(self):
        d, dfeat = self.feat_decoder.shape
        if self.topo_scorer.shape != (d, 1):
            raise ValueError(f"topo scorer must be ({d}, 1), got {self.topo_scorer.shape}")
        if self.ming_scorer.shape != (2 * d, 1):
            raise ValueError(f"mi-ng scorer must be ({2*d}, 1), got {self.ming_scorer.shape}")

    def bind(self):
        return {
            "feat_decoder": self.feat_decoder,
            "topo_scorer": self.topo_scorer,
            "ming_scorer": self.ming_scorer,
        }

    def copy(self):
        return TaskHeads(self.feat_decoder.copy(), self.topo_scorer.copy(),
                         self.ming_scorer.copy())


def init_heads(rep_dim, feat_dim, seed):
    rng = np.random.default_rng(seed)

    def glorot(din, dout):
        lim = np.sqrt(6.0 / (din + dout))
        return rng.uniform(-lim, lim, size=(din, dout))

    return TaskHeads(glorot(rep_dim, feat_dim), glorot(rep_dim, 1),
                     glorot(2 * rep_dim, 1))


@dataclass(frozen=True)
class TaskConfig:
    """Per-task augmentation specs plus the scalar loss knobs."""

    augmentations: dict = field(default_factory=dict)
    topo_batch: int = 256
    infonce_temperature: float = 0.1
    decor_balance: float = 1e-3
    adjacency_mode: str = "sym_norm"

    def __post_init__(self):
        if self.topo_batch < 1:
            raise ValueError("topo_batch must be >= 1")
        if self.infonce_temperature <= 0:
            raise ValueError("infonce_temperature must be positive")
        if self.decor_balance < 0:
            raise ValueError("decor_balance must be >= 0")

    def spec(self, task):
        return self.augmentations.get(task, AugmentationSpec())


def default_task_config(n, hop_order=2):
    """Desk-scale defaults: FeatRec masks half the nodes of the full graph
    and drops a third of its edges; the others work on half-graph samples."""
    half = max(1, n // 2)
    return TaskConfig(augmentations={
        "featrec": AugmentationSpec(0.5, 0.35, 0, "full"),
        "toporec": AugmentationSpec(0.0, 0.0, hop_order, half),
        "repdecor": AugmentationSpec(0.2, 0.2, 0, half),
        "ming": AugmentationSpec(0.0, 0.0, hop_order, half),
        "minsg": AugmentationSpec(0.2, 0.2, hop_order, half),
    })


@dataclass
class TaskLossResult:
    loss: float
    shared_grad: np.ndarray
    head_grads: dict


@dataclass
class TaskBatch:
    """All randomness of one task evaluation, frozen."""

    task: str
    sample: object
    sample2: object = None
    mask: np.ndarray = None
    target_features: np.ndarray = None
    pos_pairs: np.ndarray = None
    neg_pairs: np.ndarray = None


# ---------------------------------------------------------------------------
# batch preparation


def _sample_topo_pairs(sample, batch_size, rng):
    pairs = sample.adjacency.edge_pairs()
    m = pairs.shape[0]
    n = sample.n
    if m == 0:
        raise SamplingError("topo batch needs at least one edge")
    if m == n * (n - 1) // 2:
        raise SamplingError("topo batch needs at least one non-edge")
    if m >= batch_size:
        idx = rng.choice(m, size=batch_size, replace=False)
    else:
        idx = rng.choice(m, size=batch_size, replace=True)
    pos = pairs[idx]
    neg = []
    budget = 100 * batch_size
    while len(neg) < batch_size:
        if budget == 0:
            raise SamplingError("could not sample enough non-edges for topo batch")
        budget -= 1
        u, v = rng.integers(0, n, size=2)
        if u != v and not sample.adjacency.has_edge(u, v):
            neg.append((int(u), int(v)))
    return pos, np.array(neg, dtype=np.int64)


def prepare_batch(task, graph, cfg, rng):
    """Draw the sample(s), masks, and pair batches for one task step."""
    if task not in TASK_IDS:
        raise ValueError(f"unknown task '{task}'")
    spec = cfg.spec(task)
    if task == "featrec":
        if spec.feature_mask_ratio <= 0.0:
            raise ValueError("featrec needs a positive feature_mask_ratio")
        sample, mask = apply_augmentation(graph, spec, rng)
        target = graph.features[sample.node_ids]
        return TaskBatch(task, sample, mask=mask, target_features=target)
    if task == "toporec":
        sample, _ = apply_augmentation(graph, spec, rng)
        pos, neg = _sample_topo_pairs(sample, cfg.topo_batch, rng)
        return TaskBatch(task, sample, pos_pairs=pos, neg_pairs=neg)
    if task == "ming":
        sample, _ = apply_augmentation(graph, spec, rng)
        return TaskBatch(task, sample, sample2=shuffle_features(sample, rng))
    # repdecor and minsg: two independent augmentations of one base sample
    base = base_sample(graph, spec, rng)
    v1, _ = augment_sample(base, spec, rng)
    v2, _ = augment_sample(base, spec, rng)
    return TaskBatch(task, v1, sample2=v2)


# ---------------------------------------------------------------------------
# tape builders


def _ones(tape, rows):
    return tape.constant(np.ones((rows, 1)))


def _sum_rows(tape, node, rows):
    """(rows, 1) -> (1, 1) via multiplication with a ones vector."""
    return tape.matmul(node, _ones(tape, rows), transpose_a=True)


def _build_featrec(batch, params, heads, cfg):
    sample, mask = batch.sample, batch.mask
    if mask is None or not mask.any():
        raise ValueError("featrec batch carries no masked rows")
    masked_idx = np.flatnonzero(mask)
    target_rows = batch.target_features[masked_idx]
    denom = float(np.sqrt((target_rows * target_rows).sum()))
    if denom == 0.0:
        raise DegenerateTargetError("masked feature rows are identically zero")
    prop = propagation_operator(sample.adjacency, cfg.adjacency_mode)
    d = params.dims[-1]
    keep = np.repeat((~mask).astype(np.float64)[:, None], d, axis=1)

    tape = Tape()
    x = tape.input("x")
    h = encode_on_tape(tape, prop, x, params.n_layers)
    h_remasked = tape.hadamard(h, tape.constant(keep))
    xhat = tape.matmul(tape.spmm(prop, h_remasked), tape.input("feat_decoder"))
    diff = tape.sub(tape.gather_rows(xhat, masked_idx), tape.constant(target_rows))
    tape.affine(tape.frobenius(diff), 1.0 / denom)
    inputs = {"x": sample.features, "feat_decoder": heads.feat_decoder,
              **params.bind()}
    return tape, inputs, ["feat_decoder"]


def _build_toporec(batch, params, heads, cfg):
    sample = batch.sample
    prop = propagation_operator(sample.adjacency, cfg.adjacency_mode)
    b = batch.pos_pairs.shape[0]

    tape = Tape()
    x = tape.input("x")
    h = encode_on_tape(tape, prop, x, params.n_layers)
    w = tape.input("topo_scorer")

    def logits(pairs):
        hi = tape.gather_rows(h, pairs[:, 0])
        hj = tape.gather_rows(h, pairs[:, 1])
        return tape.matmul(tape.hadamard(hi, hj), w)

    pos_ll = tape.log(tape.sigmoid(logits(batch.pos_pairs)))
    neg_ll = tape.log(tape.sigmoid(tape.affine(logits(batch.neg_pairs), -1.0)))
    total = tape.add(_sum_rows(tape, pos_ll, b), _sum_rows(tape, neg_ll, b))
    tape.affine(total, -1.0 / (2.0 * b))
    inputs = {"x": sample.features, "topo_scorer": heads.topo_scorer,
              **params.bind()}
    return tape, inputs, ["topo_scorer"]


def _check_shared_nodes(s1, s2):
    if not np.array_equal(s1.node_ids, s2.node_ids):
        raise ValueError("the two views must cover the same node set")


def _build_repdecor(batch, params, heads, cfg):
    s1, s2 = batch.sample, batch.sample2
    _check_shared_nodes(s1, s2)
    n = s1.n
    d = params.dims[-1]
    p1 = propagation_operator(s1.adjacency, cfg.adjacency_mode)
    p2 = propagation_operator(s2.adjacency, cfg.adjacency_mode)

    tape = Tape()
    wn = [tape.input(f"w{layer}") for layer in range(params.n_layers)]
    z1 = tape.affine(tape.standardize_cols(
        encode_on_tape(tape, p1, tape.input("x1"), params.n_layers, weight_nodes=wn)),
        1.0 / np.sqrt(n))
    z2 = tape.affine(tape.standardize_cols(
        encode_on_tape(tape, p2, tape.input("x2"), params.n_layers, weight_nodes=wn)),
        1.0 / np.sqrt(n))
    invariance = tape.frobenius(tape.sub(z1, z2))
    cross = tape.matmul(z1, z2, transpose_a=True)
    decor = tape.frobenius(tape.sub(cross, tape.constant(np.eye(d))))
    tape.add(invariance, tape.affine(decor, cfg.decor_balance))
    inputs = {"x1": s1.features, "x2": s2.features, **params.bind()}
    return tape, inputs, []


def _build_ming(batch, params, heads, cfg):
    clean, corrupt = batch.sample, batch.sample2
    n = clean.n
    if n < 2:
        raise ValueError("mi-ng needs at least two nodes")
    prop = propagation_operator(clean.adjacency, cfg.adjacency_mode)

    tape = Tape()
    wn = [tape.input(f"w{layer}") for layer in range(params.n_layers)]
    h = encode_on_tape(tape, prop, tape.input("x"), params.n_layers, weight_nodes=wn)
    hc = encode_on_tape(tape, prop, tape.input("x_corrupt"), params.n_layers,
                        weight_nodes=wn)
    hg = tape.mean_rows(h)
    w = tape.input("ming_scorer")
    clean_logit = tape.matmul(tape.concat_cols(h, hg), w)
    corrupt_logit = tape.matmul(tape.concat_cols(hc, hg), w)
    s_clean = _sum_rows(tape, tape.log(tape.sigmoid(clean_logit)), n)
    s_corrupt = _sum_rows(tape, tape.log(tape.sigmoid(
        tape.affine(corrupt_logit, -1.0))), n)
    tape.affine(tape.add(s_clean, s_corrupt), -1.0 / (2.0 * n))
    inputs = {"x": clean.features, "x_corrupt": corrupt.features,
              "ming_scorer": heads.ming_scorer, **params.bind()}
    return tape, inputs, ["ming_scorer"]


def _build_minsg(batch, params, heads, cfg):
    s1, s2 = batch.sample, batch.sample2
    _check_shared_nodes(s1, s2)
    n = s1.n
    if n < 2:
        raise ValueError("mi-nsg needs at least two nodes")
    tau = cfg.infonce_temperature
    p1 = propagation_operator(s1.adjacency, cfg.adjacency_mode)
    p2 = propagation_operator(s2.adjacency, cfg.adjacency_mode)

    tape = Tape()
    wn = [tape.input(f"w{layer}") for layer in range(params.n_layers)]
    z1 = tape.l2norm_rows(
        encode_on_tape(tape, p1, tape.input("x1"), params.n_layers, weight_nodes=wn))
    z2 = tape.l2norm_rows(
        encode_on_tape(tape, p2, tape.input("x2"), params.n_layers, weight_nodes=wn))
    eye = tape.constant(np.eye(n))
    hollow = tape.constant(1.0 - np.eye(n))
    e_intra = tape.exp(tape.affine(tape.matmul(z1, z1, transpose_b=True), 1.0 / tau))
    e_cross = tape.exp(tape.affine(tape.matmul(z1, z2, transpose_b=True), 1.0 / tau))
    ones = _ones(tape, n)
    intra = tape.matmul(tape.hadamard(e_intra, hollow), ones)
    cross = tape.matmul(e_cross, ones)
    numer = tape.matmul(tape.hadamard(e_cross, eye), ones)
    per_anchor = tape.sub(tape.log(tape.add(intra, cross)), tape.log(numer))
    tape.mean_rows(per_anchor)
    inputs = {"x1": s1.features, "x2": s2.features, **params.bind()}
    return tape, inputs, []


_BUILDERS = {
    "featrec": _build_featrec,
    "toporec": _build_toporec,
    "repdecor": _build_repdecor,
    "ming": _build_ming,
    "minsg": _build_minsg,
}


# ---------------------------------------------------------------------------
# evaluation


def build_task_tape(batch, params, heads, cfg):
    """The complete tape for one frozen batch.

    Returns (tape, inputs, head input names); the root is the scalar loss.
    """
    return _BUILDERS[batch.task](batch, params, heads, cfg)


def task_loss(batch, params, heads, cfg):
    """Evaluate one frozen batch: scalar loss, flat shared grad, head grads."""
    tape, inputs, head_names = build_task_tape(batch, params, heads, cfg)
    loss = forward_eval(tape, inputs).item()
    weight_names = [f"w{layer}" for layer in range(params.n_layers)]
    grads = backward(tape, weight_names + head_names)
    shared = flatten([grads[w] for w in weight_names])
    return TaskLossResult(loss, shared, {h: grads[h] for h in head_names})


def run_task(task, graph, params, heads, cfg, rng):
    """Sample per the task's spec, then evaluate."""
    return task_loss(prepare_batch(task, graph, cfg, rng), params, heads, cfg)


# per-task entry points over already-sampled subgraphs


def _as_sample(g):
    return g if hasattr(g, "node_ids") else whole_graph_sample(g)


def feat_rec_loss(g, params, heads, cfg, rng):
    g = _as_sample(g)
    ratio = cfg.spec("featrec").feature_mask_ratio
    if ratio <= 0.0:
        raise ValueError("featrec needs a positive feature_mask_ratio")
    masked, mask = mask_features(g, ratio, np.random.default_rng(rng))
    batch = TaskBatch("featrec", masked, mask=mask, target_features=g.features)
    return task_loss(batch, params, heads, cfg)


def topo_rec_loss(g, params, heads, cfg, rng):
    g = _as_sample(g)
    pos, neg = _sample_topo_pairs(g, cfg.topo_batch, np.random.default_rng(rng))
    return task_loss(TaskBatch("toporec", g, pos_pairs=pos, neg_pairs=neg),
                     params, heads, cfg)


def rep_decor_loss(g1, g2, params, cfg):
    return task_loss(TaskBatch("repdecor", _as_sample(g1), sample2=_as_sample(g2)),
                     params, None, cfg)


def mi_ng_loss(g, params, heads, cfg, rng):
    g = _as_sample(g)
    return task_loss(TaskBatch("ming", g, sample2=shuffle_features(g, rng)),
                     params, heads, cfg)


def mi_nsg_loss(g1, g2, params, cfg):
    return task_loss(TaskBatch("minsg", _as_sample(g1), sample2=_as_sample(g2)),
                     params, None, cfg)
