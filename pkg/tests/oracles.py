"""Independent reference computations used to freeze expected values in tests.

Nothing here calls into the code paths being checked.
"""

import itertools

import numpy as np


def central_diff(f, theta, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at ``theta``."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2 * h)
    return grad


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def halfspace_projection(g, gk):
    """Closed-form projection of ``g`` onto ``{z : <z, gk> >= 0}``."""
    return g - min(0.0, g @ gk) / (gk @ gk) * gk


def active_set_projection(g, past, tol=1e-10):
    """Projection onto ``{z : <z, g_k> >= 0 for all k}`` by enumerating active sets.

    For every subset S of constraints, project ``g`` onto the subspace
    ``{z : <z, g_k> = 0, k in S}``; keep the feasible candidate closest to ``g``.
    """
    G = np.asarray(past, dtype=np.float64)
    best, best_dist = None, np.inf
    for r in range(len(G) + 1):
        for S in itertools.combinations(range(len(G)), r):
            if S:
                A = G[list(S)]
                z = g - A.T @ np.linalg.lstsq(A @ A.T, A @ g, rcond=None)[0]
            else:
                z = g.copy()
            scale = np.linalg.norm(z) * np.linalg.norm(G, axis=1)
            if np.all(G @ z >= -tol * np.maximum(scale, 1.0)):
                d = np.linalg.norm(z - g)
                if d < best_dist:
                    best, best_dist = z, d
    return best


def grid_min_dual(H, q, upper=3.0, step=0.01):
    """Brute-force minimum of ``1/2 v'Hv + q'v`` over a 3-D grid on ``[0, upper]^3``."""
    axis = np.arange(0.0, upper + step / 2, step)
    b, c = np.meshgrid(axis, axis, indexing="ij")
    # objective split as quad(b, c) + a * lin(b, c) + 1/2 H00 a^2 + q0 a
    quad = 0.5 * (H[1, 1] * b * b + 2 * H[1, 2] * b * c + H[2, 2] * c * c) + q[1] * b + q[2] * c
    lin = H[0, 1] * b + H[0, 2] * c
    best_val, best_v = np.inf, None
    for a in axis:
        vals = quad + a * lin + (0.5 * H[0, 0] * a * a + q[0] * a)
        i = np.unravel_index(int(vals.argmin()), vals.shape)
        if vals[i] < best_val:
            best_val, best_v = float(vals[i]), np.array([a, b[i], c[i]])
    return best_val, best_v


def random_psd(rng, k, rank=None):
    A = rng.standard_normal((k, rank or k))
    return A @ A.T
