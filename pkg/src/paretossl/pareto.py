"""Minimum-norm point in the convex hull of task gradients.

Given a stack of per-task gradients G (one row per task, all over the same
shared parameters), find simplex weights alpha minimizing
phi(alpha) = ||alpha G||^2. K=2 has a closed form; K>2 uses Frank-Wolfe
with exact 1-D line search. A brute-force lattice search doubles as the
verification oracle, and diagnostics cover the O(1/t) convergence bound
and the variational-inequality residual at the solution.

All objective math goes through the Gram matrix M = G G^T, so cost per
iteration is O(K^2) regardless of the parameter count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

DEFAULT_XI = 1e-5
DEFAULT_GAMMA = 100
POWER_ITER_CAP = 10_000


def _check_gradient_matrix(G):
    G = np.asarray(G, dtype=np.float64)
    if G.ndim == 1:
        G = G.reshape(1, -1)
    if G.ndim != 2 or G.shape[0] < 1:
        raise ValueError(f"gradient matrix must be (K, P) with K >= 1, got {G.shape}")
    if not np.all(np.isfinite(G)):
        raise NumericError("gradient matrix has non-finite entries")
    return G


def check_simplex(alpha, tol=1e-8):
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if np.any(alpha < -tol) or abs(alpha.sum() - 1.0) > tol:
        raise ValueError(f"weights not on the simplex: {alpha}")
    return alpha


def _clamp01(x):
    return min(1.0, max(0.0, x))


@dataclass
class SolverTrace:
    """Per-iteration record of the Frank-Wolfe loop."""

    chosen: list = field(default_factory=list)
    etas: list = field(default_factory=list)
    phis: list = field(default_factory=list)
    phi_start: float = 0.0
    termination: str = "eta"

    @property
    def iterations(self):
        return len(self.chosen)


def solve_two_task(g1, g2):
    """Closed-form min-norm combination of two gradients.

    alpha_1 = clamp_[0,1] of g2.(g2-g1) / ||g2-g1||^2; identical gradients
    give (0.5, 0.5).
    """
    g1 = _check_gradient_matrix(g1).reshape(-1)
    g2 = _check_gradient_matrix(g2).reshape(-1)
    if g1.shape != g2.shape:
        raise ValueError(f"gradient lengths differ: {g1.shape} vs {g2.shape}")
    diff = g2 - g1
    denom = float(diff @ diff)
    if denom == 0.0:
        return np.array([0.5, 0.5])
    a1 = _clamp01(float(g2 @ diff) / denom)
    return np.array([a1, 1.0 - a1])


def combined_direction(G, alpha):
    """The weighted gradient alpha G, a length-P vector."""
    G = _check_gradient_matrix(G)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if alpha.shape[0] != G.shape[0]:
        raise ValueError(f"{alpha.shape[0]} weights for {G.shape[0]} tasks")
    return alpha @ G


def frank_wolfe_min_norm(G, gamma=DEFAULT_GAMMA, xi=DEFAULT_XI):
    """Frank-Wolfe iteration for the min-norm point over the simplex.

    Starts uniform. Each step picks the task whose gradient correlates
    least with the current combined direction (ties break to the lowest
    index), takes the exact line-search step
    eta = clamp_[0,1] of (aG).(aG - g_t) / ||aG - g_t||^2,
    and stops when eta < xi or after `gamma` iterations.
    """
    G = _check_gradient_matrix(G)
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if xi <= 0:
        raise ValueError("xi must be positive")
    K = G.shape[0]
    M = G @ G.T
    alpha = np.full(K, 1.0 / K)
    trace = SolverTrace(phi_start=float(alpha @ M @ alpha))
    if K == 1:
        return np.array([1.0]), trace
    for _ in range(gamma):
        v = M @ alpha
        phi = float(alpha @ v)
        t = int(np.argmin(v))
        # ||aG - g_t||^2 via the Gram matrix
        denom = phi - 2.0 * float(v[t]) + float(M[t, t])
        if denom <= 0.0:
            # combined direction already sits on g_t: optimal along this axis
            trace.chosen.append(t)
            trace.etas.append(0.0)
            trace.phis.append(phi)
            trace.termination = "eta"
            break
        eta = _clamp01((phi - float(v[t])) / denom)
        alpha = (1.0 - eta) * alpha
        alpha[t] += eta
        trace.chosen.append(t)
        trace.etas.append(eta)
        trace.phis.append(float(alpha @ M @ alpha))
        if eta < xi:
            trace.termination = "eta"
            break
    else:
        trace.termination = "cap"
    alpha = np.clip(alpha, 0.0, None)
    alpha /= alpha.sum()
    return alpha, trace


def _phi_lattice(M, *coords):
    """phi at integer lattice coordinates (unnormalized); vectorized."""
    out = 0.0
    for i, ci in enumerate(coords):
        out = out + M[i, i] * ci * ci
        for j in range(i + 1, len(coords)):
            out = out + 2.0 * M[i, j] * ci * coords[j]
    return np.asarray(out)


def _inner_candidates(star, s):
    """Candidate integer minimizers of a 1-D convex quadratic on [0, s]."""
    lo = np.floor(star)
    return [np.zeros_like(s), np.clip(lo, 0, s), np.clip(lo + 1, 0, s), s]


def brute_force_min_norm(G, resolution=1e-3):
    """Exhaustive lattice search over the simplex, K <= 4 only.

    Evaluates phi on every integer composition at the given resolution;
    exact-phi ties resolve to the lexicographically smallest alpha. The
    innermost coordinate is minimized analytically (phi restricted to it
    is a quadratic), so only the outer coordinates are scanned.
    """
    G = _check_gradient_matrix(G)
    K = G.shape[0]
    if K > 4:
        raise ValueError("brute force supports K <= 4")
    R = int(round(1.0 / resolution))
    if R < 1:
        raise ValueError("resolution must be <= 1")
    M = G @ G.T
    if K == 1:
        return np.array([1.0])

    if K == 2:
        a = np.arange(R + 1, dtype=np.float64)
        phi = _phi_lattice(M, a, R - a)
        # argmin returns the first index on ties, i.e. the smallest a,
        # which is the lexicographically smallest alpha
        i = int(np.argmin(phi))
        return np.array([a[i], R - a[i]]) / R

    if K == 3:
        # scan a; phi is a quadratic in b with c = R - a - b
        a = np.arange(R + 1, dtype=np.float64)
        s = R - a
        A = M[1, 1] + M[2, 2] - 2.0 * M[1, 2]
        if A > 0.0:
            bstar = -(a * (M[0, 1] - M[0, 2]) + s * (M[1, 2] - M[2, 2])) / A
        else:
            bstar = np.zeros_like(a)
        cands = _inner_candidates(bstar, s)
        phis = np.stack([_phi_lattice(M, a, b, s - b) for b in cands])
        m = phis.min()
        best = None
        for q, j in np.argwhere(phis == m):
            here = (a[j], cands[q][j], s[j] - cands[q][j])
            if best is None or here < best:
                best = here
        return np.array(best) / R

    # K == 4: scan all (a, b) pairs at once; phi is a quadratic in c with
    # d = R - a - b - c
    A = M[2, 2] + M[3, 3] - 2.0 * M[2, 3]
    counts = np.arange(R + 1, 0, -1)
    a = np.repeat(np.arange(R + 1, dtype=np.float64), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    b = np.arange(a.shape[0], dtype=np.float64) - np.repeat(starts, counts)
    s = R - a - b
    if A > 0.0:
        cstar = -(
            a * (M[0, 2] - M[0, 3])
            + b * (M[1, 2] - M[1, 3])
            + s * (M[2, 3] - M[3, 3])
        ) / A
    else:
        cstar = np.zeros_like(b)
    cands = _inner_candidates(cstar, s)
    phis = np.stack([_phi_lattice(M, a, b, c, s - c) for c in cands])
    m = phis.min()
    best = None
    for q, j in np.argwhere(phis == m):
        here = (a[j], b[j], cands[q][j], s[j] - cands[q][j])
        if best is None or here < best:
            best = here
    return np.array(best) / R


def power_iteration_lmax(M, tol=1e-10, cap=POWER_ITER_CAP):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(cap):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return 0.0
        v = w / norm
        lam_new = float(v @ M @ v)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    raise NumericError(f"power iteration did not converge in {cap} steps")


@dataclass
class BoundCheck:
    iteration: int
    delta: float
    bound: float
    holds: bool


def smoothness_and_gap(G, trace):
    """Smoothness constant beta = 2 lmax(G G^T) and the O(1/t) bound check.

    For every recorded iteration i >= 2 verifies
    phi(alpha_i) - phi(alpha*) <= 4 beta / (i + 1), with phi(alpha*) taken
    from the brute-force oracle when K <= 4 and otherwise from the final
    Frank-Wolfe value less the stopping slack.
    """
    G = _check_gradient_matrix(G)
    K = G.shape[0]
    M = G @ G.T
    beta = 2.0 * power_iteration_lmax(M)
    if K == 1 or not trace.phis:
        phi_star = 0.0 if K == 1 else trace.phi_start
    elif K <= 4:
        a_star = brute_force_min_norm(G)
        phi_star = float(a_star @ M @ a_star)
    else:
        phi_star = trace.phis[-1] - DEFAULT_XI
    checks = []
    for i, phi in enumerate(trace.phis, start=1):
        if i < 2:
            continue
        delta = phi - phi_star
        bound = 4.0 * beta / (i + 1.0)
        checks.append(BoundCheck(i, delta, bound, delta <= bound))
    return beta, checks


def saddle_point_residual(G, alpha):
    """Violation of the min-norm optimality condition (aG).g_k >= ||aG||^2.

    Zero at the optimum; positive when some task's gradient still
    correlates less with the combined direction than the direction's own
    squared norm.
    """
    G = _check_gradient_matrix(G)
    alpha = check_simplex(alpha)
    if alpha.shape[0] != G.shape[0]:
        raise ValueError(f"{alpha.shape[0]} weights for {G.shape[0]} tasks")
    d = alpha @ G
    phi = float(d @ d)
    corr = G @ d
    return max(0.0, float((phi - corr).max()))


def normalize_rows(G):
    """Per-task L2 normalization of the gradient matrix (off by default
    upstream; zero rows pass through unchanged)."""
    G = _check_gradient_matrix(G)
    norms = np.linalg.norm(G, axis=1, keepdims=True)
    return np.where(norms > 0.0, G / np.maximum(norms, 1e-300), G)
