"""Shared GCN encoder with flatten/unflatten plumbing for the solver.

Forward rule per layer: H' = PReLU(A_hat . H . W), where A_hat is either
the symmetrically normalized adjacency with self-loops (default) or the
raw adjacency. The encoder always evaluates through the tape so the same
code path serves both plain encoding and gradient computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .numcore import Tape, forward_eval

PRELU_SLOPE = 0.25
ADJACENCY_MODES = ("raw", "sym_norm")


@dataclass
class EncoderParams:
    """Ordered layer weights; dims chain is implied by the shapes."""

    weights: list = field(default_factory=list)
    prelu_slope: float = PRELU_SLOPE

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        if not self.weights:
            raise ValueError("encoder needs at least one layer")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError(
                    f"layer {i} output dim {self.weights[i].shape[1]} does not "
                    f"chain into layer {i + 1} input {self.weights[i + 1].shape[0]}"
                )
        for i, w in enumerate(self.weights):
            if not np.all(np.isfinite(w)):
                raise ValueError(f"non-finite weight in layer {i}")

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def census(self):
        """Total shared-parameter count P."""
        return sum(w.size for w in self.weights)

    def bind(self, prefix="w"):
        return {f"{prefix}{i}": w for i, w in enumerate(self.weights)}

    def copy(self):
        return EncoderParams([w.copy() for w in self.weights], self.prelu_slope)


def glorot_init(dims, seed):
    """Uniform init in +-sqrt(6/(fan_in+fan_out)), one matrix per layer."""
    if len(dims) < 2:
        raise ValueError("dims needs at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights = []
    for din, dout in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (din + dout))
        weights.append(rng.uniform(-lim, lim, size=(din, dout)))
    return EncoderParams(weights)


def propagation_operator(adj, mode="sym_norm"):
    """The sparse propagation matrix for one message-passing round."""
    if mode not in ADJACENCY_MODES:
        raise ValueError(f"adjacency_mode must be one of {ADJACENCY_MODES}")
    a = adj.to_scipy()
    if mode == "raw":
        return a
    a_hat = (a + sp.identity(adj.n, format="csr")).tocsr()
    dinv = 1.0 / np.sqrt(np.asarray(a_hat.sum(axis=1)).reshape(-1))
    d = sp.diags(dinv)
    return (d @ a_hat @ d).tocsr()


def encode_on_tape(tape, prop, x_node, n_layers, slope=PRELU_SLOPE, prefix="w",
                   weight_nodes=None):
    """Append the L-layer encoder to a tape.

    Weights become named inputs unless existing weight node ids are passed
    in (as when two views share one set of weights on a single tape).
    """
    if weight_nodes is None:
        weight_nodes = [tape.input(f"{prefix}{layer}") for layer in range(n_layers)]
    h = x_node
    for layer in range(n_layers):
        h = tape.prelu(tape.matmul(tape.spmm(prop, h), weight_nodes[layer]),
                       slope=slope)
    return h


def encode(sample, params, adjacency_mode="sym_norm"):
    """Node representations (N' x d_L) for one subgraph sample."""
    if sample.features.shape[1] != params.dims[0]:
        raise ValueError(
            f"feature dim {sample.features.shape[1]} does not match "
            f"encoder input dim {params.dims[0]}"
        )
    prop = propagation_operator(sample.adjacency, adjacency_mode)
    tape = Tape()
    x = tape.input("x")
    encode_on_tape(tape, prop, x, params.n_layers, slope=params.prelu_slope)
    return forward_eval(tape, {"x": sample.features, **params.bind()})


def flatten(per_layer_grads):
    """Concatenate per-layer gradients row-major in layer order."""
    return np.concatenate([np.asarray(g, dtype=np.float64).ravel()
                           for g in per_layer_grads])


def unflatten(flat, params):
    """Inverse of flatten against a parameter census."""
    flat = np.asarray(flat, dtype=np.float64).reshape(-1)
    if flat.shape[0] != params.census:
        raise ValueError(
            f"flat gradient length {flat.shape[0]} does not match census {params.census}"
        )
    out = []
    at = 0
    for w in params.weights:
        out.append(flat[at:at + w.size].reshape(w.shape))
        at += w.size
    return out


def grads_from_tape(tape, params, prefix="w"):
    """Collect this encoder's per-layer adjoints after a backward pass."""
    from .numcore import backward

    named = backward(tape, [f"{prefix}{i}" for i in range(params.n_layers)])
    return [named[f"{prefix}{i}"] for i in range(params.n_layers)]


# ---------------------------------------------------------------------------
# checkpoint bytes: text dims header, then raw little-endian float64


def write_params(f, params):
    f.write(("dims " + " ".join(str(d) for d in params.dims) + "\n").encode("ascii"))
    f.write(flatten(params.weights).astype("<f8").tobytes())


def read_params(f):
    header = bytearray()
    while True:
        c = f.read(1)
        if not c:
            raise ValueError("truncated checkpoint: no dims header")
        if c == b"\n":
            break
        header.extend(c)
    parts = header.decode("ascii").split()
    if not parts or parts[0] != "dims" or len(parts) < 3:
        raise ValueError(f"bad checkpoint header: {header!r}")
    dims = [int(p) for p in parts[1:]]
    count = sum(a * b for a, b in zip(dims[:-1], dims[1:]))
    raw = f.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated checkpoint: parameter payload short")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    weights = []
    at = 0
    for din, dout in zip(dims[:-1], dims[1:]):
        weights.append(flat[at:at + din * dout].reshape(din, dout).copy())
        at += din * dout
    return EncoderParams(weights)
