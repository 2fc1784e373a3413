"""Shared test oracles: dense simplex-grid search for tiny problems.

The grid objectives are computed by brute force, independent of the
solver code paths they check.  Problem generators take explicit
coefficient scales; the grid resolution bounds how close a grid point
can get to the true optimum, so the admissible scale for a given
tolerance follows from that resolution (see the acceptance suite).
"""

import numpy as np

from satforest.optim import TrainingProblem, project_simplex


def random_simplex(rng, T):
    return project_simplex(rng.normal(size=T))


def random_problem(rng, T, n, coef_scale, resid_scale):
    """Random affine problem whose optimum sits near an interior point."""
    coef_w = coef_scale * rng.uniform(-1.0, 1.0, size=(n, T))
    coef_v = coef_scale * rng.uniform(-1.0, 1.0, size=(n, T))
    const = rng.normal(size=n)
    w0 = random_simplex(rng, T)
    v0 = random_simplex(rng, T)
    y = const + coef_w @ w0 + coef_v @ v0 + resid_scale * rng.uniform(-1.0, 1.0, size=n)
    return TrainingProblem(const=const, coef_w=coef_w, coef_v=coef_v, y=y)


def _axis(step):
    return np.linspace(0.0, 1.0, round(1.0 / step) + 1)


def grid_min_t2(problem, step, loss):
    """Exhaustive search over w1, v1 in {0, step, ..., 1} for T = 2."""
    e = problem.y - problem.const
    H, G = problem.coef_w, problem.coef_v
    a = e - H[:, 1] - G[:, 1]
    b = H[:, 0] - H[:, 1]
    c = G[:, 0] - G[:, 1]
    g = _axis(step)
    best = np.inf
    block = 64
    for lo in range(0, len(g), block):
        w1 = g[lo : lo + block]
        resid = (
            a[None, None, :]
            - w1[:, None, None] * b[None, None, :]
            - g[None, :, None] * c[None, None, :]
        )
        vals = np.abs(resid).sum(-1) if loss == "l1" else (resid**2).sum(-1)
        best = min(best, float(vals.min()))
    return best


def _simplex_grid(step):
    """All grid points of the 2-simplex embedded in 3 coordinates."""
    g = _axis(step)
    pts = []
    for i, w1 in enumerate(g):
        for w2 in g[: len(g) - i]:
            pts.append((w1, w2, 1.0 - w1 - w2))
    return np.asarray(pts)


def grid_min_t3(problem, step, loss):
    """Exhaustive search over both 2-simplices for T = 3."""
    e = problem.y - problem.const
    W = _simplex_grid(step)
    HW = problem.coef_w @ W.T  # (n, P)
    GV = problem.coef_v @ W.T
    if loss == "l2":
        lin_w = (HW**2).sum(0) - 2.0 * e @ HW
        lin_v = (GV**2).sum(0) - 2.0 * e @ GV
        cross = 2.0 * HW.T @ GV
        obj = float(e @ e) + lin_w[:, None] + lin_v[None, :] + cross
        return float(obj.min())
    best = np.inf
    block = 64
    for lo in range(0, HW.shape[1], block):
        resid = e[None, None, :] - HW[:, lo : lo + block].T[:, None, :] - GV.T[None, :, :]
        best = min(best, float(np.abs(resid).sum(-1).min()))
    return best


def grid_min(problem, step, loss):
    if problem.n_trees == 2:
        return grid_min_t2(problem, step, loss)
    if problem.n_trees == 3:
        return grid_min_t3(problem, step, loss)
    raise ValueError("grid oracle only supports T in {2, 3}")
