"""Dense/sparse linear algebra and a reverse-mode tape for matrix programs.

Everything runs in float64. Dense matrices are plain 2-D numpy arrays, sparse
adjacency is CSR. A :class:`Tape` records a fixed set of matrix primitives;
one forward pass evaluates the program against named inputs, one backward
pass accumulates adjoints for every input marked as a parameter. Tapes are
single-use, single-threaded objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import NumericError, ShapeError

EPS_STANDARDIZE = 1e-8
EPS_ROWNORM = 1e-8


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D float64 array; 1-D input becomes a row vector."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class SparseAdjacency:
    """Undirected adjacency in CSR form. Immutable after construction."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @classmethod
    def from_edges(cls, n, pairs, check=True):
        """Build from an iterable of (u, v) pairs with u < v; both directions stored."""
        pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if pairs.size:
            src = np.concatenate([pairs[:, 0], pairs[:, 1]])
            dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        else:
            src = dst = np.zeros(0, dtype=np.int64)
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        counts = np.bincount(src, minlength=n)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        adj = cls(n, offsets, dst, np.ones(dst.shape[0], dtype=np.float64))
        if check:
            adj.validate()
        return adj

    def validate(self):
        if self.row_offsets.shape[0] != self.n + 1:
            raise ShapeError("row_offsets must have n+1 entries")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ShapeError("row_offsets must be nondecreasing")
        if self.col_indices.size and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.n
        ):
            raise ShapeError("col_indices out of range")
        for u in range(self.n):
            row = self.col_indices[self.row_offsets[u] : self.row_offsets[u + 1]]
            if np.unique(row).size != row.size:
                raise ShapeError(f"duplicate column in row {u}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("non-finite edge weight")
        # structural symmetry
        m = self.to_scipy()
        if (m != m.T).nnz != 0:
            raise ShapeError("adjacency is not structurally symmetric")

    @property
    def nnz(self):
        return int(self.col_indices.shape[0])

    @property
    def num_edges(self):
        """Undirected edge count (no self-loops assumed)."""
        return self.nnz // 2

    def degrees(self):
        return np.diff(self.row_offsets)

    def neighbors(self, u):
        return self.col_indices[self.row_offsets[u] : self.row_offsets[u + 1]]

    def has_edge(self, u, v):
        row = self.neighbors(u)
        i = np.searchsorted(row, v)
        return bool(i < row.size and row[i] == v)

    def edge_pairs(self):
        """All undirected edges as an (m, 2) array with u < v."""
        src = np.repeat(np.arange(self.n), self.degrees())
        mask = src < self.col_indices
        return np.stack([src[mask], self.col_indices[mask]], axis=1)

    def to_scipy(self):
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=(self.n, self.n)
        )

    def to_dense(self):
        return np.asarray(self.to_scipy().todense(), dtype=np.float64)


class _Node:
    __slots__ = ("op", "args", "aux", "name")

    def __init__(self, op, args=(), aux=None, name=None):
        self.op = op
        self.args = args
        self.aux = aux
        self.name = name


class Tape:
    """Wengert list of matrix primitives. The root is the last node added."""

    def __init__(self):
        self.nodes = []
        self.values = None
        self.adjoints = None
        self._inputs = {}

    def _push(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1

    # -- leaves ----------------------------------------------------------

    def input(self, name):
        if name in self._inputs:
            raise ValueError(f"duplicate input name '{name}'")
        nid = self._push(_Node("input", name=name))
        self._inputs[name] = nid
        return nid

    def constant(self, value):
        return self._push(_Node("constant", aux=as_matrix(value)))

    # -- primitives ------------------------------------------------------

    def matmul(self, a, b, transpose_a=False, transpose_b=False):
        return self._push(_Node("matmul", (a, b), aux=(transpose_a, transpose_b)))

    def spmm(self, adj, x):
        """Sparse @ dense with a constant sparse operand."""
        if isinstance(adj, SparseAdjacency):
            adj = adj.to_scipy()
        csr = sp.csr_matrix(adj)
        return self._push(_Node("spmm", (x,), aux=(csr, csr.T.tocsr())))

    def add(self, a, b):
        return self._push(_Node("add", (a, b)))

    def sub(self, a, b):
        return self._push(_Node("sub", (a, b)))

    def hadamard(self, a, b):
        return self._push(_Node("hadamard", (a, b)))

    def prelu(self, x, slope=0.25):
        return self._push(_Node("prelu", (x,), aux=float(slope)))

    def sigmoid(self, x):
        return self._push(_Node("sigmoid", (x,)))

    def log(self, x):
        return self._push(_Node("log", (x,)))

    def exp(self, x):
        return self._push(_Node("exp", (x,)))

    def gather_rows(self, x, indices):
        idx = np.asarray(indices, dtype=np.intp).reshape(-1)
        return self._push(_Node("gather_rows", (x,), aux=idx))

    def mean_rows(self, x):
        """Column-wise mean over rows: (n, d) -> (1, d)."""
        return self._push(_Node("mean_rows", (x,)))

    def l2norm_rows(self, x, eps=EPS_ROWNORM):
        return self._push(_Node("l2norm_rows", (x,), aux=float(eps)))

    def standardize_cols(self, x, eps=EPS_STANDARDIZE):
        return self._push(_Node("standardize_cols", (x,), aux=float(eps)))

    def frobenius(self, x):
        """Frobenius norm: (n, d) -> (1, 1)."""
        return self._push(_Node("frobenius", (x,)))

    def concat_cols(self, a, b):
        """Horizontal concat; a single-row b is broadcast down a's rows."""
        return self._push(_Node("concat_cols", (a, b)))

    def affine(self, x, scale=1.0, shift=0.0):
        """Elementwise scale * x + shift with constant coefficients."""
        return self._push(_Node("affine", (x,), aux=(float(scale), float(shift))))

    @property
    def root(self):
        if not self.nodes:
            raise ValueError("empty tape")
        return len(self.nodes) - 1


def _eval(node, vals):
    op = node.op
    a = vals[node.args[0]] if node.args else None
    b = vals[node.args[1]] if len(node.args) > 1 else None
    if op == "constant":
        return node.aux
    if op == "matmul":
        ta, tb = node.aux
        left = a.T if ta else a
        right = b.T if tb else b
        if left.shape[1] != right.shape[0]:
            raise ShapeError(f"matmul {left.shape} x {right.shape}")
        return left @ right
    if op == "spmm":
        csr, _ = node.aux
        if csr.shape[1] != a.shape[0]:
            raise ShapeError(f"spmm {csr.shape} x {a.shape}")
        return np.asarray(csr @ a)
    if op in ("add", "sub", "hadamard"):
        if a.shape != b.shape:
            raise ShapeError(f"{op} {a.shape} vs {b.shape}")
        return a + b if op == "add" else (a - b if op == "sub" else a * b)
    if op == "prelu":
        return np.where(a > 0.0, a, node.aux * a)
    if op == "sigmoid":
        return expit(a)
    if op == "log":
        return np.log(a)
    if op == "exp":
        return np.exp(a)
    if op == "gather_rows":
        idx = node.aux
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
            raise ShapeError("gather_rows index out of range")
        return a[idx]
    if op == "mean_rows":
        return a.mean(axis=0, keepdims=True)
    if op == "l2norm_rows":
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        return a / np.maximum(norms, node.aux)
    if op == "standardize_cols":
        mu = a.mean(axis=0, keepdims=True)
        var = a.var(axis=0, keepdims=True)
        return (a - mu) / np.sqrt(var + node.aux)
    if op == "frobenius":
        return np.array([[np.sqrt((a * a).sum())]])
    if op == "concat_cols":
        bb = np.broadcast_to(b, (a.shape[0], b.shape[1])) if b.shape[0] == 1 else b
        if bb.shape[0] != a.shape[0]:
            raise ShapeError(f"concat_cols {a.shape} vs {b.shape}")
        return np.concatenate([a, bb], axis=1)
    if op == "affine":
        s, t = node.aux
        return s * a + t
    raise ValueError(f"unknown op '{op}'")


def forward_eval(tape, inputs):
    """Evaluate the tape against named inputs and return the root value.

    Raises ShapeError on inconsistent operand shapes and NumericError the
    moment any primitive yields a non-finite entry, naming that primitive.
    """
    vals = [None] * len(tape.nodes)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for i, node in enumerate(tape.nodes):
            if node.op == "input":
                if node.name not in inputs:
                    raise ValueError(f"unbound input '{node.name}'")
                vals[i] = as_matrix(inputs[node.name])
            else:
                vals[i] = _eval(node, vals)
            if not np.all(np.isfinite(vals[i])):
                where = node.name or node.op
                raise NumericError(f"non-finite value produced by '{where}' (node {i})")
    tape.values = vals
    return vals[tape.root]


def _backward_node(node, g, vals, out):
    op = node.op
    a = vals[node.args[0]] if node.args else None
    b = vals[node.args[1]] if len(node.args) > 1 else None
    if op == "matmul":
        ta, tb = node.aux
        left = a.T if ta else a
        right = b.T if tb else b
        da = g @ right.T
        db = left.T @ g
        if ta:
            da = da.T
        if tb:
            db = db.T
        return (da, db)
    if op == "spmm":
        _, csr_t = node.aux
        return (np.asarray(csr_t @ g),)
    if op == "add":
        return (g, g)
    if op == "sub":
        return (g, -g)
    if op == "hadamard":
        return (g * b, g * a)
    if op == "prelu":
        return (g * np.where(a > 0.0, 1.0, node.aux),)
    if op == "sigmoid":
        return (g * out * (1.0 - out),)
    if op == "log":
        return (g / a,)
    if op == "exp":
        return (g * out,)
    if op == "gather_rows":
        da = np.zeros_like(a)
        np.add.at(da, node.aux, g)
        return (da,)
    if op == "mean_rows":
        n = a.shape[0]
        return (np.repeat(g / n, n, axis=0),)
    if op == "l2norm_rows":
        eps = node.aux
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        floor = np.maximum(norms, eps)
        dots = (out * g).sum(axis=1, keepdims=True)
        da = np.where(norms > eps, (g - out * dots) / floor, g / floor)
        return (da,)
    if op == "standardize_cols":
        n = a.shape[0]
        sigma = np.sqrt(a.var(axis=0, keepdims=True) + node.aux)
        gm = g.mean(axis=0, keepdims=True)
        gz = (g * out).mean(axis=0, keepdims=True)
        return ((g - gm - out * gz) / sigma,)
    if op == "frobenius":
        f = out[0, 0]
        if f <= 1e-300:
            return (np.zeros_like(a),)
        return (a * (g[0, 0] / f),)
    if op == "concat_cols":
        k = a.shape[1]
        da = g[:, :k]
        db = g[:, k:]
        if b.shape[0] == 1 and a.shape[0] != 1:
            db = db.sum(axis=0, keepdims=True)
        return (da, db)
    if op == "affine":
        return (g * node.aux[0],)
    raise ValueError(f"unknown op '{op}'")


def backward(tape, parameter_names):
    """Accumulate adjoints from a scalar root; return name -> gradient.

    Parameters that never influence the root get zero gradients of their
    bound shape.
    """
    if tape.values is None:
        raise ValueError("forward_eval must run before backward")
    root_val = tape.values[tape.root]
    if root_val.size != 1:
        raise ValueError(f"root must be scalar, got shape {root_val.shape}")
    adj = [None] * len(tape.nodes)
    adj[tape.root] = np.ones_like(root_val)
    for i in range(tape.root, -1, -1):
        node = tape.nodes[i]
        g = adj[i]
        if g is None or not node.args:
            continue
        contribs = _backward_node(node, g, tape.values, tape.values[i])
        for arg, contrib in zip(node.args, contribs):
            if adj[arg] is None:
                adj[arg] = contrib.copy()
            else:
                adj[arg] += contrib
    tape.adjoints = adj
    grads = {}
    for name in parameter_names:
        if name not in tape._inputs:
            raise ValueError(f"unknown parameter '{name}'")
        nid = tape._inputs[name]
        g = adj[nid]
        grads[name] = np.zeros_like(tape.values[nid]) if g is None else g
    return grads


def finite_diff_check(tape, inputs, parameter=None, h=1e-5):
    """Max relative error between backward() and central differences.

    Error per entry is |analytic - central| / max(1, |central|), maximized
    over all entries of `parameter`. With a single-input tape the parameter
    may be omitted. The root must be scalar.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if parameter is None:
        if len(tape._inputs) != 1:
            raise ValueError("parameter required when tape has several inputs")
        parameter = next(iter(tape._inputs))
    forward_eval(tape, inputs)
    analytic = backward(tape, [parameter])[parameter]
    base = as_matrix(inputs[parameter]).copy()
    probe = {k: v for k, v in inputs.items()}
    worst = 0.0
    for idx in np.ndindex(base.shape):
        for sign, store in ((1.0, "hi"), (-1.0, "lo")):
            pert = base.copy()
            pert[idx] += sign * h
            probe[parameter] = pert
            val = forward_eval(tape, probe).item()
            if store == "hi":
                hi = val
            else:
                lo = val
        central = (hi - lo) / (2.0 * h)
        err = abs(analytic[idx] - central) / max(1.0, abs(central))
        worst = max(worst, err)
    probe[parameter] = base
    forward_eval(tape, probe)
    return worst
