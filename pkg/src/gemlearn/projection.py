"""Gradient projection onto the cone of updates that do not hurt past tasks.

Given the proposed gradient ``g`` and the memory gradients ``g_1 .. g_k``
(stacked as the rows of ``G``), the projected gradient solves::

    minimize_z  1/2 ||g - z||^2    subject to  G z >= 0

Its dual is a nonnegativity-constrained QP in only ``k`` variables::

    minimize_v  1/2 v^T (G G^T) v + (G g)^T v    subject to  v >= 0

and the primal optimum is recovered as ``z = G^T v + g``.
"""

import numpy as np

from .exceptions import ConvergenceError, ShapeError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
DEFAULT_RIDGE = 1e-6
_NOISE_FLOOR = 64 * np.finfo(np.float64).eps


def _stack(past, p):
    if len(past) == 0:
        return np.zeros((0, p))
    G = np.vstack([np.asarray(gk, dtype=np.float64).reshape(1, -1) for gk in past])
    if G.shape[1] != p:
        raise ShapeError(f"memory gradients have length {G.shape[1]}, expected {p}")
    return G


def violations(g, past):
    """Flag every memory gradient whose inner product with ``g`` is negative."""
    g = np.asarray(g, dtype=np.float64)
    G = _stack(past, g.shape[0])
    return [bool(d < 0) for d in G @ g]


def kkt_residual(H, q, v):
    """Largest violation of the KKT conditions of ``min 1/2 v'Hv + q'v, v >= 0``.

    Combines primal infeasibility (negative ``v``), dual infeasibility
    (negative gradient at ``v = 0``) and complementarity (nonzero gradient at
    ``v > 0``).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    grad = H @ v + q
    res = np.where(v > 0, np.abs(grad), np.maximum(-grad, 0.0))
    return float(max(res.max(), np.maximum(-v, 0.0).max()))


def dual_objective(H, q, v):
    return float(0.5 * v @ H @ v + q @ v)


def _polish(H, q, v, threshold):
    """Finish an approximate solution with a warm-started active-set method.

    Lawson-Hanson iterations written in terms of ``H`` and ``q``: solve the
    stationarity equations exactly on the current support, back off along
    the segment when a coordinate would turn negative, and free the bound
    coordinate with the most negative gradient until none is below
    ``-threshold``. When the sweeps already found the right support this is
    a single linear solve.
    """
    k = len(q)
    x = np.where(v > 0, v, 0.0)
    free = x > 0
    for _ in range(3 * k + 3):
        for _ in range(k + 1):
            z = np.zeros(k)
            if free.any():
                z[free] = np.linalg.lstsq(H[np.ix_(free, free)], -q[free], rcond=None)[0]
            neg = free & (z <= 0)
            if not neg.any():
                x = z
                break
            # a newly freed coordinate has x = 0, so alpha = 0 just drops it again
            alpha = np.min(x[neg] / np.maximum(x[neg] - z[neg], np.finfo(np.float64).tiny))
            x = x + alpha * (z - x)
            free &= x > 0
            x[~free] = 0.0
        grad = H @ x + q
        bound = np.where(free, np.inf, grad)
        j = int(np.argmin(bound))
        if bound[j] >= -threshold:
            break
        free[j] = True
    return x


def solve_dual(H, q, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, ridge=0.0):
    """Minimise ``1/2 v'Hv + q'v`` subject to ``v >= 0``.

    Cyclic coordinate descent (Hildreth's method): each coordinate is set to
    its exact constrained minimiser ``max(0, v_i - (Hv + q)_i / H_ii)`` while
    the others are held fixed. The result is then polished by an active-set
    refinement against the unregularised system, which removes the slow tail
    of coordinate descent on ill-conditioned or singular ``H``.

    Parameters
    ----------
    H : ndarray of shape (k, k)
        Symmetric positive semidefinite matrix.
    q : ndarray of shape (k,)
    tol : float
        Stopping threshold on the KKT residual, relative to ``max|q|``.
    max_iter : int
        Maximum number of full sweeps.
    ridge : float
        Relative Tikhonov term: coordinate descent runs on
        ``H + ridge * trace(H) / k * I``. Helps with exactly parallel rows.

    Returns
    -------
    v : ndarray of shape (k,)

    Raises
    ------
    ConvergenceError
        If the residual is still above tolerance after ``max_iter`` sweeps.
    """
    H = np.asarray(H, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64).ravel()
    k = q.shape[0]
    if H.shape != (k, k):
        raise ShapeError(f"H has shape {H.shape}, expected ({k}, {k})")
    if not np.allclose(H, H.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(H).max(initial=0.0))):
        raise ShapeError("H must be symmetric")
    v = np.zeros(k)
    if k == 0 or np.all(q >= 0):
        return v
    scale = float(np.abs(q).max())
    threshold = tol * scale
    Hr = H
    if ridge > 0:
        Hr = H + ridge * np.trace(H) / k * np.eye(k)
    diag = np.diag(Hr).copy()
    grad = q.copy()  # Hr @ v + q with v = 0
    for sweep in range(1, max_iter + 1):
        for i in range(k):
            if diag[i] <= 0:
                continue
            new = max(0.0, v[i] - grad[i] / diag[i])
            delta = new - v[i]
            if delta != 0.0:
                v[i] = new
                grad += delta * Hr[:, i]
        if kkt_residual(Hr, q, v) <= threshold:
            break
    polished = _polish(H, q, v, threshold)
    if kkt_residual(H, q, polished) <= kkt_residual(H, q, v):
        v = polished
    residual = kkt_residual(H, q, v)
    if residual > threshold and kkt_residual(Hr, q, v) > threshold:
        raise ConvergenceError(
            f"dual QP did not converge in {max_iter} sweeps (KKT residual {residual:.3e})",
            residual=residual,
            iterations=sweep,
        )
    return v


def project(g, past, gamma=0.0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, ridge=DEFAULT_RIDGE):
    """Project ``g`` so that it has a nonnegative inner product with every row of ``past``.

    When no constraint is violated, ``g`` is returned unchanged and no QP is
    solved (``gamma`` only biases steps that actually need a projection).
    Otherwise the dual solution ``v`` is shifted by ``gamma`` before the
    update ``G^T (v + gamma) + g`` is recovered; ``gamma > 0`` pushes the step
    towards directions that also reduce the memory losses.

    Parameters
    ----------
    g : ndarray of shape (p,)
        Proposed gradient.
    past : sequence of ndarray of shape (p,)
        Memory gradients of previous tasks.
    gamma : float
        Nonnegative bias added to every dual coordinate.

    Returns
    -------
    ndarray of shape (p,)
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    g = np.asarray(g, dtype=np.float64)
    G = _stack(past, g.shape[0])
    if not np.any(G @ g < 0):
        return g
    H = G @ G.T
    q = G @ g
    v = solve_dual(H, q, tol=tol, max_iter=max_iter, ridge=ridge)
    correction = G.T @ v
    out = correction + g
    # cancellation residue when the feasible cone collapses to {0}
    if np.linalg.norm(out) <= _NOISE_FLOOR * (np.linalg.norm(g) + np.linalg.norm(correction)):
        out = np.zeros_like(g)
    if gamma:
        out += gamma * G.sum(axis=0)
    return out


def sgd_step(model, direction, lr):
    """In-place update ``theta <- theta - lr * direction`` on a model with flat params."""
    theta = model.get_flat_params()
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != theta.shape:
        raise ShapeError(f"step direction has shape {direction.shape}, parameters {theta.shape}")
    model.set_flat_params(theta - lr * direction)
