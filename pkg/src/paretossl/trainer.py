"""Multi-task training loop: evaluate tasks, weight, apply one AdamW step.

Per step each active task draws a fresh sample and contributes a shared
gradient; the weights come from the min-norm solver (pareto), a constant
1/K (uniform), or a one-hot vector (single). Shared parameters move along
the combined direction; each task head moves along its own gradient,
scaled by its weight. Wall time is recorded only on request so CSV output
stays byte-identical across reruns.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .encoder import (
    EncoderParams,
    flatten,
    glorot_init,
    read_params,
    unflatten,
    write_params,
)
from .errors import ConfigError, NumericError
from .pareto import (
    DEFAULT_GAMMA,
    DEFAULT_XI,
    combined_direction,
    frank_wolfe_min_norm,
    normalize_rows,
    saddle_point_residual,
)
from .pretext import (
    HEAD_OF_TASK,
    TASK_IDS,
    TaskConfig,
    TaskHeads,
    default_task_config,
    init_heads,
    prepare_batch,
    task_loss,
)

TASK_INDEX = {task: i for i, task in enumerate(TASK_IDS)}
MODES = ("pareto", "uniform", "single")

# seed-stream tags so every random draw has its own deterministic lane
_STREAM_PARAMS = 0
_STREAM_HEADS = 1
_STREAM_BATCH = 2
_STREAM_PROBE = 3


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "pareto"
    single_task: str | None = None
    tasks: tuple = TASK_IDS
    steps: int = 1000
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    solver_cap: int = DEFAULT_GAMMA
    solver_tol: float = DEFAULT_XI
    encoder_dims: tuple = (64, 32)
    task_config: TaskConfig | None = None
    seed: int = 0
    log_every: int = 1
    scale_head_grads: bool = True
    normalize_gradients: bool = False
    record_wall_time: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.mode == "single":
            if self.single_task not in TASK_IDS:
                raise ConfigError(
                    f"single mode needs single_task in {TASK_IDS}, "
                    f"got {self.single_task!r}")
        if not self.tasks or any(t not in TASK_IDS for t in self.tasks):
            raise ConfigError(f"tasks must be a non-empty subset of {TASK_IDS}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if len(self.encoder_dims) < 1:
            raise ConfigError("encoder_dims needs at least one layer width")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    def active_tasks(self):
        if self.mode == "single":
            return (self.single_task,)
        return tuple(self.tasks)


@dataclass
class StepRecord:
    step: int
    task_losses: dict
    alpha: np.ndarray
    grad_norm: float
    solver_iters: int
    ms: float


class AdamW:
    """Bias-corrected Adam with decoupled weight decay, one slot per tensor."""

    def __init__(self, lr, weight_decay=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.slots = {}

    def update(self, name, value, grad):
        m, v, t = self.slots.get(name, (0.0, 0.0, 0))
        t += 1
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self.slots[name] = (m, v, t)
        mhat = m / (1.0 - self.beta1 ** t)
        vhat = v / (1.0 - self.beta2 ** t)
        return value - self.lr * (mhat / (np.sqrt(vhat) + self.eps)
                                  + self.weight_decay * value)


@dataclass
class TrainState:
    params: EncoderParams
    heads: object
    optimizer: AdamW
    step: int = 0


def _stream(config, *tags):
    return np.random.default_rng(np.random.SeedSequence((config.seed,) + tags))


def init_state(graph, config):
    dims = [graph.feat_dim] + list(config.encoder_dims)
    params = glorot_init(dims, np.random.SeedSequence((config.seed, _STREAM_PARAMS)))
    heads = init_heads(dims[-1], graph.feat_dim,
                       np.random.SeedSequence((config.seed, _STREAM_HEADS)))
    opt = AdamW(config.learning_rate, config.weight_decay)
    return TrainState(params, heads, opt)


def _cfg_tasks(config, n):
    return config.task_config if config.task_config is not None \
        else default_task_config(n)


def evaluate_tasks(state, graph, config):
    """One fresh sample and loss/gradient evaluation per active task."""
    cfg = _cfg_tasks(config, graph.n)
    results = {}
    for task in config.active_tasks():
        rng = _stream(config, _STREAM_BATCH, TASK_INDEX[task], state.step)
        batch = prepare_batch(task, graph, cfg, rng)
        try:
            res = task_loss(batch, state.params, state.heads, cfg)
        except NumericError as exc:
            raise NumericError(
                f"task '{task}' aborted step {state.step}: {exc}") from exc
        if not np.isfinite(res.loss):
            raise NumericError(
                f"task '{task}' produced a non-finite loss at step {state.step}")
        results[task] = res
    return results


def task_weights(results, config):
    """(active-task weights, solver iteration count) for this step's grads.

    With normalize_gradients the solver sees unit-norm rows (the weights
    stay scale-free) but the update still combines the raw gradients.
    """
    active = config.active_tasks()
    if config.mode == "uniform":
        return np.full(len(active), 1.0 / len(active)), 0
    if config.mode == "single":
        return np.array([1.0]), 0
    g = np.stack([results[t].shared_grad for t in active])
    if config.normalize_gradients:
        g = normalize_rows(g)
    alpha, trace = frank_wolfe_min_norm(g, gamma=config.solver_cap,
                                        xi=config.solver_tol)
    return alpha, trace.iterations


def apply_update(state, results, alpha, config):
    """AdamW on shared weights (along alpha-combined grad) and active heads."""
    active = config.active_tasks()
    g = np.stack([results[t].shared_grad for t in active])
    direction = combined_direction(g, alpha)
    opt = state.optimizer
    per_layer = unflatten(direction, state.params)
    new_weights = [opt.update(f"w{i}", w, gw)
                   for i, (w, gw) in enumerate(zip(state.params.weights, per_layer))]
    params = EncoderParams(new_weights, state.params.prelu_slope)
    heads = state.heads.copy()
    for k, task in enumerate(active):
        head = HEAD_OF_TASK.get(task)
        if head is None:
            continue
        scale = alpha[k] if config.scale_head_grads else 1.0
        grad = scale * results[task].head_grads[head]
        setattr(heads, head, opt.update(head, getattr(heads, head), grad))
    return TrainState(params, heads, opt, state.step + 1), float(
        np.linalg.norm(direction))


def full_alpha(alpha, config):
    """Spread the active-task weights into the canonical five-task order."""
    out = np.zeros(len(TASK_IDS))
    for k, task in enumerate(config.active_tasks()):
        out[TASK_INDEX[task]] = alpha[k]
    return out


def train_step(state, graph, config):
    start = time.perf_counter() if config.record_wall_time else None
    results = evaluate_tasks(state, graph, config)
    alpha, iters = task_weights(results, config)
    new_state, grad_norm = apply_update(state, results, alpha, config)
    ms = (time.perf_counter() - start) * 1e3 if start is not None else 0.0
    record = StepRecord(state.step,
                        {t: results[t].loss for t in config.active_tasks()},
                        full_alpha(alpha, config), grad_norm, iters, ms)
    return new_state, record


def train_run(graph, config, checkpoint_path=None):
    """Run the configured number of steps; records kept at the log cadence."""
    state = init_state(graph, config)
    records = []
    for _ in range(config.steps):
        state, record = train_step(state, graph, config)
        if record.step % config.log_every == 0:
            records.append(record)
    if checkpoint_path is not None:
        write_checkpoint(checkpoint_path, state.params, state.heads)
    return state.params, state.heads, records


@dataclass
class DescentReport:
    """Per-task loss change along the normalized combined descent direction."""

    before: dict
    after: dict
    alpha: np.ndarray
    grad_norm: float
    residual: float
    eps: float

    def deltas(self):
        return {t: self.after[t] - self.before[t] for t in self.before}


def first_order_descent_check(state, graph, config, eps=1e-4):
    """Probe shared params along -eps * alpha G / |alpha G| on frozen samples.

    The solver runs tightened (it is a diagnostic, not a training step) and
    the report carries the saddle-point residual alongside the deltas.
    """
    cfg = _cfg_tasks(config, graph.n)
    active = config.active_tasks()
    batches, before, grads = {}, {}, []
    for task in active:
        rng = _stream(config, _STREAM_PROBE, TASK_INDEX[task], state.step)
        batches[task] = prepare_batch(task, graph, cfg, rng)
        res = task_loss(batches[task], state.params, state.heads, cfg)
        before[task] = res.loss
        grads.append(res.shared_grad)
    g = np.stack(grads)
    alpha, _ = frank_wolfe_min_norm(g, gamma=max(config.solver_cap, 2000),
                                    xi=1e-12)
    direction = combined_direction(g, alpha)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return DescentReport(before, dict(before), alpha, 0.0, 0.0, eps)
    probe_flat = flatten(state.params.weights) - eps * direction / norm
    probed = EncoderParams(unflatten(probe_flat, state.params),
                           state.params.prelu_slope)
    after = {task: task_loss(batches[task], probed, state.heads, cfg).loss
             for task in active}
    residual = saddle_point_residual(g, alpha)
    return DescentReport(before, after, alpha, norm, residual, eps)


# ---------------------------------------------------------------------------
# artifacts: step CSV and checkpoint with a heads section


def _fmt(x):
    return "%.17g" % x


def records_to_csv(records, config):
    active = config.active_tasks()
    header = (["step"] + [f"loss_{t}" for t in active]
              + [f"alpha_{t}" for t in TASK_IDS]
              + ["grad_norm", "solver_iters", "ms"])
    lines = [",".join(header)]
    for r in records:
        row = ([str(r.step)] + [_fmt(r.task_losses[t]) for t in active]
               + [_fmt(a) for a in r.alpha]
               + [_fmt(r.grad_norm), str(r.solver_iters), _fmt(r.ms)])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_checkpoint(path, params, heads):
    with open(path, "wb") as f:
        write_params(f, params)
        f.write(b"heads\n")
        for mat in (heads.feat_decoder, heads.topo_scorer, heads.ming_scorer):
            f.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def read_checkpoint(path):
    with open(path, "rb") as f:
        params = read_params(f)
        marker = f.read(6)
        if marker != b"heads\n":
            raise ValueError(f"bad heads marker: {marker!r}")
        d = params.dims[-1]
        feat_dim = params.dims[0]
        mats = []
        for shape in ((d, feat_dim), (d, 1), (2 * d, 1)):
            count = shape[0] * shape[1]
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError("truncated checkpoint: heads payload short")
            mats.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        if f.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    return params, TaskHeads(*mats)
