"""Exact training of the two simplex weight vectors.

The prediction for training example s is affine in the stacked weights
z = (w, v), so the squared loss is a convex quadratic minimized by
projected gradient descent over the product of two probability
simplices, and the absolute loss is a linear program with one slack
variable per training example.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .attention import AttentionConfig, SatRfModel, coefficients_batch
from .data import Dataset
from .forest import Forest

QP_TOL = 1e-8
QP_MAX_ITER = 50_000


@dataclass(frozen=True)
class TrainingProblem:
    """Affine prediction coefficients for every training example."""

    const: np.ndarray  # (n,)
    coef_w: np.ndarray  # (n, T)
    coef_v: np.ndarray  # (n, T)
    y: np.ndarray  # (n,)

    def __post_init__(self):
        n, T = self.coef_w.shape
        if self.coef_v.shape != (n, T) or self.const.shape != (n,) or self.y.shape != (n,):
            raise ValueError("inconsistent coefficient shapes")
        for arr in (self.const, self.coef_w, self.coef_v, self.y):
            if not np.all(np.isfinite(arr)):
                raise ValueError("coefficients must be finite")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_trees(self) -> int:
        return self.coef_w.shape[1]

    def residuals(self, w: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.y - self.const - self.coef_w @ w - self.coef_v @ v

    def loss(self, w: np.ndarray, v: np.ndarray, loss: str = "l2") -> float:
        r = self.residuals(w, v)
        return float(r @ r) if loss == "l2" else float(np.abs(r).sum())


@dataclass
class SolverReport:
    objective: float
    iterations: int
    kkt_residual: float
    converged: bool
    trace: list[float] | None = None


def project_simplex(z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = 1} (sort-based)."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("cannot project non-finite vector")
    s = np.sort(z)[::-1]
    cums = np.cumsum(s) - 1.0
    j = np.arange(1, len(z) + 1)
    rho = np.max(np.flatnonzero(s - cums / j > 0.0)) + 1
    theta = cums[rho - 1] / rho
    return np.maximum(z - theta, 0.0)


def _project_pair(z: np.ndarray, T: int) -> np.ndarray:
    return np.concatenate([project_simplex(z[:T]), project_simplex(z[T:])])


def _normalize_simplex(z: np.ndarray) -> np.ndarray:
    z = np.maximum(z, 0.0)
    total = z.sum()
    if total <= 0.0:
        return np.full(len(z), 1.0 / len(z))
    return z / total


def _lipschitz(M: np.ndarray) -> float:
    """Upper bound on 2 * largest squared singular value (power iteration)."""
    d = M.shape[1]
    u = np.full(d, 1.0 / np.sqrt(d))
    est = 0.0
    for _ in range(60):
        u = M.T @ (M @ u)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        u /= nrm
        est = nrm
    return 2.0 * 1.05 * est


def solve_qp(
    problem: TrainingProblem,
    tol: float = QP_TOL,
    max_iter: int = QP_MAX_ITER,
    keep_trace: bool = False,
) -> tuple[np.ndarray, np.ndarray, SolverReport]:
    """Minimize the squared training loss over the two simplices.

    Projected gradient with Armijo backtracking; the line search starts
    from a Barzilai-Borwein guess after the first (Lipschitz-based) step.
    The stationarity residual is measured with the fixed reference step
    1/L, so convergence is well defined for every problem scale.
    """
    T = problem.n_trees
    M = np.hstack([problem.coef_w, problem.coef_v])
    e = problem.y - problem.const
    z = np.full(2 * T, 1.0 / T)

    def objective(zz):
        r = e - M @ zz
        return float(r @ r)

    def gradient(zz):
        return -2.0 * (M.T @ (e - M @ zz))

    L = _lipschitz(M)
    if L == 0.0:
        # constant objective: every feasible point is optimal
        report = SolverReport(objective(z), 0, 0.0, True, [objective(z)] if keep_trace else None)
        return z[:T], z[T:], report

    ref_step = 1.0 / L
    f = objective(z)
    g = gradient(z)
    trace = [f] if keep_trace else None
    step = ref_step
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        residual = float(np.linalg.norm(z - _project_pair(z - ref_step * g, T)))
        if residual <= tol:
            break
        s = step
        for _ in range(60):
            z_new = _project_pair(z - s * g, T)
            d = z_new - z
            f_new = objective(z_new)
            if f_new <= f + g @ d + (d @ d) / (2.0 * s):
                break
            s *= 0.5
        g_new = gradient(z_new)
        # BB1 step for the next iteration, kept within sane bounds
        dg = g_new - g
        dd = float(d @ d)
        dgd = float(d @ dg)
        step = min(max(dd / dgd, 0.01 * ref_step), 1e4 * ref_step) if dgd > 0 else ref_step
        assert f_new <= f + 1e-9 * (1.0 + abs(f)), "objective increased"
        z, f, g = z_new, f_new, g_new
        if trace is not None:
            trace.append(f)
    converged = residual <= tol
    if not converged:
        warnings.warn(
            f"projected gradient stopped at {max_iter} iterations "
            f"(residual {residual:.3e} > {tol:.0e})",
            RuntimeWarning,
            stacklevel=2,
        )
    w = _normalize_simplex(z[:T])
    v = _normalize_simplex(z[T:])
    return w, v, SolverReport(objective(np.concatenate([w, v])), it, residual, converged, trace)


def solve_lp(
    problem: TrainingProblem, tol: float = 1e-9
) -> tuple[np.ndarray, np.ndarray, SolverReport]:
    """Minimize the absolute training loss via its linear program.

    Variables are (w, v, q) with one slack q_s bounding |residual_s|
    from above; minimizing sum(q) makes each slack tight at the optimum.
    """
    n, T = problem.n, problem.n_trees
    M = np.hstack([problem.coef_w, problem.coef_v])
    e = problem.y - problem.const
    cost = np.concatenate([np.zeros(2 * T), np.ones(n)])
    eye = sp.eye(n, format="csr")
    Msp = sp.csr_matrix(M)
    # q + M z >= e  and  q - M z >= -e, rewritten as <= constraints
    a_ub = sp.vstack([sp.hstack([-Msp, -eye]), sp.hstack([Msp, -eye])], format="csr")
    b_ub = np.concatenate([-e, e])
    a_eq = sp.csr_matrix(
        (
            np.ones(2 * T),
            (np.repeat([0, 1], T), np.arange(2 * T)),
        ),
        shape=(2, 2 * T + n),
    )
    b_eq = np.array([1.0, 1.0])
    bounds = [(0.0, None)] * (2 * T + n)
    res = linprog(
        cost,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    if res.status == 2:
        raise RuntimeError(
            "absolute-loss LP reported infeasible; this cannot happen for a "
            "well-formed problem and signals an implementation bug"
        )
    if not res.success:
        warnings.warn(
            f"LP solver did not converge cleanly: {res.message}",
            RuntimeWarning,
            stacklevel=2,
        )
        w = np.full(T, 1.0 / T)
        v = np.full(T, 1.0 / T)
        return w, v, SolverReport(problem.loss(w, v, "l1"), 0, np.inf, False)
    w = _normalize_simplex(res.x[:T])
    v = _normalize_simplex(res.x[T : 2 * T])
    objective = problem.loss(w, v, "l1")
    return w, v, SolverReport(
        objective,
        int(getattr(res, "nit", 0) or 0),
        abs(float(res.fun) - objective),
        True,
    )


def build_problem(forest: Forest, ds: Dataset, cfg: AttentionConfig) -> TrainingProblem:
    A, Y = forest.leaf_stats(ds.features)
    const, coef_w, coef_v = coefficients_batch(ds.features, A, Y, cfg)
    return TrainingProblem(const=const, coef_w=coef_w, coef_v=coef_v, y=ds.targets)


def train(
    forest: Forest,
    ds: Dataset,
    cfg: AttentionConfig,
    tol: float = QP_TOL,
    max_iter: int = QP_MAX_ITER,
) -> SatRfModel:
    """Fit the two weight vectors exactly for the configured loss."""
    problem = build_problem(forest, ds, cfg)
    if cfg.loss == "l1":
        w, v, report = solve_lp(problem)
    else:
        w, v, report = solve_qp(problem, tol=tol, max_iter=max_iter)
    if not report.converged:
        warnings.warn(
            "training solver did not reach tolerance; using best iterate",
            RuntimeWarning,
            stacklevel=2,
        )
    return SatRfModel(forest=forest, config=cfg, w=w, v=v)
