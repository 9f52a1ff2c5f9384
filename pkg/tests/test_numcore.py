import numpy as np
import pytest
import scipy.sparse as sp

from paretossl.errors import NumericError, ShapeError
from paretossl.numcore import (
    SparseAdjacency,
    Tape,
    backward,
    finite_diff_check,
    forward_eval,
)


def test_dot_product():
    t = Tape()
    x = t.input("x")
    y = t.input("y")
    t.matmul(x, y, transpose_b=True)
    out = forward_eval(t, {"x": [1.0, 2.0], "y": [3.0, 4.0]})
    assert out.shape == (1, 1)
    assert out[0, 0] == 11.0


def test_prelu_values():
    t = Tape()
    x = t.input("x")
    t.prelu(x)
    out = forward_eval(t, {"x": [-4.0, 2.0]})
    assert np.array_equal(out, [[-1.0, 2.0]])


def test_sigmoid_at_zero():
    t = Tape()
    t.sigmoid(t.input("x"))
    out = forward_eval(t, {"x": [0.0]})
    assert out[0, 0] == 0.5


def test_grad_of_quadratic_is_2x():
    t = Tape()
    x = t.input("x")
    t.matmul(x, x, transpose_b=True)
    xv = np.array([[1.0, -2.0, 3.0]])
    forward_eval(t, {"x": xv})
    g = backward(t, ["x"])["x"]
    assert np.allclose(g, 2.0 * xv, atol=1e-14)


def test_sigmoid_grad_at_zero():
    t = Tape()
    t.sigmoid(t.input("x"))
    forward_eval(t, {"x": [0.0]})
    g = backward(t, ["x"])["x"]
    assert abs(g[0, 0] - 0.25) < 1e-15


def test_linear_tape_finite_diff():
    rng = np.random.default_rng(0)
    t = Tape()
    w = t.input("w")
    x = t.input("x")
    y = t.matmul(x, w)
    t.frobenius(y)
    inputs = {"w": rng.uniform(-2, 2, (4, 3)), "x": rng.uniform(-2, 2, (5, 4))}
    assert finite_diff_check(t, inputs, "w") < 1e-10


UNARY_CASES = [
    ("prelu", lambda t, x: t.prelu(x), (4, 3), (-2.0, 2.0)),
    ("sigmoid", lambda t, x: t.sigmoid(x), (4, 3), (-2.0, 2.0)),
    ("log", lambda t, x: t.log(x), (4, 3), (0.5, 2.0)),
    ("exp", lambda t, x: t.exp(x), (4, 3), (-1.0, 1.0)),
    ("mean_rows", lambda t, x: t.mean_rows(x), (5, 3), (-2.0, 2.0)),
    ("l2norm_rows", lambda t, x: t.l2norm_rows(x), (5, 3), (-2.0, 2.0)),
    ("standardize_cols", lambda t, x: t.standardize_cols(x), (6, 3), (-2.0, 2.0)),
    ("gather_rows", lambda t, x: t.gather_rows(x, [3, 0, 0, 2]), (5, 3), (-2.0, 2.0)),
    ("affine", lambda t, x: t.affine(x, 1.7, -0.3), (4, 3), (-2.0, 2.0)),
]


@pytest.mark.parametrize("name,build,shape,rng_range", UNARY_CASES)
def test_unary_finite_diff(name, build, shape, rng_range):
    rng = np.random.default_rng(hash(name) % 2**32)
    t = Tape()
    x = t.input("x")
    t.frobenius(build(t, x))
    xv = rng.uniform(rng_range[0], rng_range[1], shape)
    if name == "prelu":
        # keep entries away from the kink where the derivative jumps
        xv = np.where(np.abs(xv) < 0.1, 0.5, xv)
    assert finite_diff_check(t, {"x": xv}) < 1e-4, name


BINARY_CASES = [
    ("add", lambda t, a, b: t.add(a, b), (4, 3), (4, 3)),
    ("sub", lambda t, a, b: t.sub(a, b), (4, 3), (4, 3)),
    ("hadamard", lambda t, a, b: t.hadamard(a, b), (4, 3), (4, 3)),
    ("matmul", lambda t, a, b: t.matmul(a, b), (4, 3), (3, 5)),
    ("matmul_tt", lambda t, a, b: t.matmul(a, b, True, True), (3, 4), (5, 3)),
    ("concat", lambda t, a, b: t.concat_cols(a, b), (4, 3), (4, 2)),
    ("concat_bcast", lambda t, a, b: t.concat_cols(a, b), (4, 3), (1, 2)),
]


@pytest.mark.parametrize("name,build,sa,sb", BINARY_CASES)
@pytest.mark.parametrize("which", ["a", "b"])
def test_binary_finite_diff(name, build, sa, sb, which):
    rng = np.random.default_rng(hash(name) % 2**32 + (which == "b"))
    t = Tape()
    a = t.input("a")
    b = t.input("b")
    t.frobenius(build(t, a, b))
    inputs = {"a": rng.uniform(-2, 2, sa), "b": rng.uniform(-2, 2, sb)}
    assert finite_diff_check(t, inputs, which) < 1e-4, (name, which)


def test_frobenius_grad():
    rng = np.random.default_rng(3)
    t = Tape()
    t.frobenius(t.input("x"))
    assert finite_diff_check(t, {"x": rng.uniform(-2, 2, (4, 4))}) < 1e-4


def test_spmm_matches_dense_and_grad():
    rng = np.random.default_rng(11)
    n = 40
    pairs = set()
    while len(pairs) < 120:
        u, v = rng.integers(0, n, 2)
        if u != v:
            pairs.add((min(u, v), max(u, v)))
    adj = SparseAdjacency.from_edges(n, sorted(pairs))
    x = rng.uniform(-2, 2, (n, 5))

    t = Tape()
    xarg = t.input("x")
    t.spmm(adj, xarg)
    out = forward_eval(t, {"x": x})
    assert np.allclose(out, adj.to_dense() @ x, atol=1e-12)

    t2 = Tape()
    xarg = t2.input("x")
    t2.frobenius(t2.spmm(adj, xarg))
    assert finite_diff_check(t2, {"x": x}) < 1e-4


def test_spmm_accepts_scipy_and_nonsymmetric():
    rng = np.random.default_rng(4)
    m = sp.random(6, 6, density=0.4, random_state=7, format="csr")
    x = rng.uniform(-1, 1, (6, 3))
    t = Tape()
    t.spmm(m, t.input("x"))
    out = forward_eval(t, {"x": x})
    assert np.allclose(out, m.toarray() @ x, atol=1e-12)
    t2 = Tape()
    t2.frobenius(t2.spmm(m, t2.input("x")))
    assert finite_diff_check(t2, {"x": x}) < 1e-4


def test_l2norm_floor_branch():
    # rows below the epsilon floor divide by eps, and the gradient follows
    t = Tape()
    x = t.input("x")
    t.frobenius(t.l2norm_rows(x, eps=1e-2))
    xv = np.array([[1e-3, -2e-3, 0.0], [1.0, 2.0, -1.0]])
    out = forward_eval(t, {"x": xv})
    assert np.isfinite(out).all()
    assert finite_diff_check(t, {"x": xv}) < 1e-4


def test_shape_error_on_bad_matmul():
    t = Tape()
    a = t.input("a")
    b = t.input("b")
    t.matmul(a, b)
    with pytest.raises(ShapeError):
        forward_eval(t, {"a": np.ones((2, 3)), "b": np.ones((2, 3))})


def test_numeric_error_names_primitive():
    t = Tape()
    t.log(t.input("x"))
    with pytest.raises(NumericError, match="log"):
        forward_eval(t, {"x": [-1.0]})


def test_backward_requires_scalar_root():
    t = Tape()
    t.add(t.input("a"), t.input("a2"))
    forward_eval(t, {"a": np.ones((2, 2)), "a2": np.ones((2, 2))})
    with pytest.raises(ValueError):
        backward(t, ["a"])


def test_unused_parameter_gets_zero_grad():
    t = Tape()
    t.input("unused")
    x = t.input("x")
    t.frobenius(x)
    forward_eval(t, {"x": np.ones((2, 2)), "unused": np.ones((3, 1))})
    g = backward(t, ["unused"])["unused"]
    assert g.shape == (3, 1)
    assert np.all(g == 0.0)


def test_unbound_input_raises():
    t = Tape()
    t.input("x")
    with pytest.raises(ValueError, match="unbound"):
        forward_eval(t, {})


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    t = Tape()
    x = t.input("x")
    w = t.input("w")
    h = t.prelu(t.matmul(x, w))
    t.frobenius(t.standardize_cols(h))
    inputs = {"x": rng.uniform(-2, 2, (8, 4)), "w": rng.uniform(-2, 2, (4, 3))}
    a = forward_eval(t, inputs).copy()
    b = forward_eval(t, inputs).copy()
    assert np.array_equal(a, b)
    g1 = backward(t, ["w"])["w"].copy()
    forward_eval(t, inputs)
    g2 = backward(t, ["w"])["w"]
    assert np.array_equal(g1, g2)


def test_gather_repeated_rows_accumulates():
    t = Tape()
    x = t.input("x")
    t.frobenius(t.gather_rows(x, [0, 0, 1]))
    xv = np.array([[3.0, 4.0], [0.0, 5.0]])
    forward_eval(t, {"x": xv})
    g = backward(t, ["x"])["x"]
    # row 0 appears twice, so its adjoint is doubled
    f = np.sqrt(2 * 25.0 + 25.0)
    assert np.allclose(g[0], 2.0 * xv[0] / f, atol=1e-12)
    assert np.allclose(g[1], xv[1] / f, atol=1e-12)


def test_adjacency_roundtrip_and_queries():
    pairs = [(0, 1), (1, 2), (0, 3)]
    adj = SparseAdjacency.from_edges(4, pairs)
    assert adj.num_edges == 3
    assert adj.has_edge(1, 0) and adj.has_edge(2, 1)
    assert not adj.has_edge(0, 2)
    assert np.array_equal(adj.degrees(), [2, 2, 1, 1])
    assert np.array_equal(adj.edge_pairs(), np.array(pairs)[np.lexsort(
        (np.array(pairs)[:, 1], np.array(pairs)[:, 0]))])
    dense = adj.to_dense()
    assert np.array_equal(dense, dense.T)
    assert dense[0, 1] == 1.0 and dense[0, 2] == 0.0


def test_adjacency_rejects_asymmetry():
    bad = SparseAdjacency(
        2,
        np.array([0, 1, 1]),
        np.array([1]),
        np.array([1.0]),
    )
    with pytest.raises(ShapeError):
        bad.validate()
