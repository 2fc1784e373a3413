"""Metrics, cross-validated grid search, baselines, and benchmark tables."""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
from scipy import stats

from .attention import (
    AttentionConfig,
    attention_scores,
    predict_batch,
    softmax_baseline,
    stable_softmax,
    _self_score_matrix,
)
from .data import Dataset, FoldPlan, make_folds, split_train_test
from .forest import fit_forest
from .multihead import HeadSpec, multihead_predict
from .optim import TrainingProblem, solve_lp, solve_qp, train

DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
SCALE_GRID = (0.01, 0.1, 0.5, 1.0, 5.0, 10.0)


def r2(y: np.ndarray, yhat: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1 or len(y) < 2:
        raise ValueError("need two equal-length vectors with >= 2 entries")
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("r2 undefined for a constant target")
    ss_res = float(((y - yhat) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def mae(y: np.ndarray, yhat: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1 or len(y) < 1:
        raise ValueError("need two equal-length vectors")
    return float(np.abs(y - yhat).mean())


def paired_t_test(diffs) -> tuple[float, float, tuple[float, float]]:
    """One-sample t-test of the mean difference against zero.

    Returns (t, two-sided p, 95% confidence interval for the mean).
    Zero spread degenerates to p=1 for zero mean and p=0 otherwise.
    """
    d = np.asarray(diffs, dtype=np.float64)
    if d.ndim != 1 or len(d) < 2:
        raise ValueError("need at least two differences")
    n = len(d)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0, (0.0, 0.0)
        return float(np.copysign(np.inf, mean)), 0.0, (mean, mean)
    se = sd / np.sqrt(n)
    t = mean / se
    p = 2.0 * float(stats.t.sf(abs(t), n - 1))
    half = float(stats.t.ppf(0.975, n - 1)) * se
    return t, p, (mean - half, mean + half)


class _FoldCache:
    """Per-fold precomputation shared by every grid cell.

    Softmax scores depend only on (tau, kappa, variant), so the mixing
    rates can be applied per cell as cheap scalar scalings.
    """

    def __init__(self, forest, train_ds, val_ds, variant, tau, kappa):
        self.y_train = train_ds.targets
        self.y_val = val_ds.targets
        self.parts = []
        for ds in (train_ds, val_ds):
            A, Y = forest.leaf_stats(ds.features)
            p_att = stable_softmax(-attention_scores(ds.features, A) / tau)
            scores = _self_score_matrix(A, Y, variant, kappa)
            p_self_y = np.einsum("sik,sk->si", stable_softmax(scores), Y)
            self.parts.append((p_att, p_self_y, Y))

    def problem(self, split: int, eps: float, gamma: float, y: np.ndarray):
        p_att, p_self_y, Y = self.parts[split]
        mixed = (1.0 - gamma) * p_self_y
        const = (1.0 - eps) * np.einsum("si,si->s", p_att, mixed)
        coef_w = eps * mixed
        coef_v = gamma * ((1.0 - eps) * p_att.sum(axis=1) + eps)[:, None] * Y
        return TrainingProblem(const=const, coef_w=coef_w, coef_v=coef_v, y=y)

    def val_scores(self, eps, gamma, w, v):
        problem = self.problem(1, eps, gamma, self.y_val)
        pred = problem.y - problem.residuals(w, v)
        return pred


def grid_search(
    ds_train: Dataset,
    forest_params: dict,
    variant: str,
    loss: str,
    grid_eps=DEFAULT_GRID,
    grid_gamma=DEFAULT_GRID,
    fold_plan: FoldPlan | None = None,
    tau: float = 1.0,
    kappa: float = 1.0,
    seed: int = 0,
    forest_hook=None,
) -> tuple[AttentionConfig, list[dict]]:
    """Pick (epsilon, gamma) by repeated k-fold validation R^2.

    The forest is refit per fold (shared across all grid cells); ties
    break toward the smaller epsilon, then the smaller gamma.
    forest_hook, if given, maps each fold's fitted forest to the forest
    actually evaluated (test seam for corruption studies).
    """
    grid_eps = sorted(set(float(e) for e in grid_eps))
    grid_gamma = sorted(set(float(g) for g in grid_gamma))
    if not grid_eps or not grid_gamma:
        raise ValueError("grids must be nonempty")
    if fold_plan is None:
        fold_plan = make_folds(ds_train.n, 3, 1, seed)
    sums = np.zeros((len(grid_eps), len(grid_gamma)))
    counts = np.zeros_like(sums)
    for rep in range(fold_plan.repeats):
        for fold in range(fold_plan.k):
            tr_idx, val_idx = fold_plan.fold_indices(rep, fold)
            val_y = ds_train.targets[val_idx]
            if np.all(val_y == val_y[0]):
                warnings.warn(
                    f"skipping degenerate fold {fold} (constant validation target)",
                    RuntimeWarning,
                    stacklevel=2,
                )
                continue
            fold_seed = int(
                np.random.SeedSequence([seed, rep, fold]).generate_state(1)[0]
            )
            forest = fit_forest(
                ds_train.subset(tr_idx), seed=fold_seed, **forest_params
            )
            if forest_hook is not None:
                forest = forest_hook(forest)
            cache = _FoldCache(
                forest,
                ds_train.subset(tr_idx),
                ds_train.subset(val_idx),
                variant,
                tau,
                kappa,
            )
            for i, eps in enumerate(grid_eps):
                for j, gamma in enumerate(grid_gamma):
                    problem = cache.problem(0, eps, gamma, cache.y_train)
                    if loss == "l1":
                        w, v, _ = solve_lp(problem)
                    else:
                        w, v, _ = solve_qp(problem)
                    pred = cache.val_scores(eps, gamma, w, v)
                    sums[i, j] += r2(val_y, pred)
                    counts[i, j] += 1.0
    if not counts.any():
        raise ValueError("all folds were degenerate; cannot grid-search")
    means = sums / counts
    best_i, best_j = 0, 0
    for i in range(len(grid_eps)):
        for j in range(len(grid_gamma)):
            if means[i, j] > means[best_i, best_j]:
                best_i, best_j = i, j
    table = [
        {
            "epsilon": grid_eps[i],
            "gamma": grid_gamma[j],
            "cv_r2": float(means[i, j]),
            "folds": int(counts[i, j]),
        }
        for i in range(len(grid_eps))
        for j in range(len(grid_gamma))
    ]
    best = AttentionConfig(
        epsilon=grid_eps[best_i],
        gamma=grid_gamma[best_j],
        tau=tau,
        kappa=kappa,
        variant=variant,
        loss=loss,
    )
    return best, table


def _random_heads(n_heads: int, v: np.ndarray, seed: int) -> list[HeadSpec]:
    """Heads drawn from a seeded grid of mixing rates and kernel widths."""
    rng = np.random.default_rng(seed)
    gammas = rng.choice([0.25, 0.5, 0.75], size=n_heads)
    kappas = rng.choice([0.5, 1.0, 5.0], size=n_heads)
    return [HeadSpec(float(g), float(k), v) for g, k in zip(gammas, kappas)]


def _benchmark_task(payload: tuple) -> dict:
    (ds, kind, variant, loss, seed, grid_eps, grid_gamma, folds, repeats,
     forest_params, tau, kappa, n_heads, standardize) = payload
    train_ds, test_ds = split_train_test(ds, seed)
    y_loc, y_scale = 0.0, 1.0
    if standardize:
        # z-score features and targets on the training split so the
        # unit kernel widths are comparable across datasets; metrics
        # are computed back in original units
        x_loc = train_ds.features.mean(axis=0)
        x_scale = train_ds.features.std(axis=0)
        x_scale[x_scale == 0.0] = 1.0
        y_loc = float(train_ds.targets.mean())
        y_scale = float(train_ds.targets.std()) or 1.0
        train_ds = Dataset(
            (train_ds.features - x_loc) / x_scale,
            (train_ds.targets - y_loc) / y_scale,
            list(train_ds.feature_names),
            train_ds.name,
        )
        test_ds = Dataset(
            (test_ds.features - x_loc) / x_scale,
            test_ds.targets,
            list(test_ds.feature_names),
            test_ds.name,
        )
    plan = make_folds(train_ds.n, folds, repeats, seed + 1)
    best_cfg, table = grid_search(
        train_ds,
        forest_params | {"kind": kind},
        variant,
        loss,
        grid_eps,
        grid_gamma,
        plan,
        tau=tau,
        kappa=kappa,
        seed=seed + 2,
    )
    forest = fit_forest(train_ds, kind=kind, seed=seed + 3, **forest_params)
    model = train(forest, train_ds, best_cfg)
    baseline = softmax_baseline(forest, best_cfg)

    base_pred = y_loc + y_scale * forest.predict_mean(test_ds.features)
    soft_pred = y_loc + y_scale * predict_batch(baseline, test_ds.features)
    sat_pred = y_loc + y_scale * predict_batch(model, test_ds.features)

    soft_train_loss = _training_loss(baseline, train_ds)
    sat_train_loss = _training_loss(model, train_ds)
    if sat_train_loss > soft_train_loss + 1e-9 * (1.0 + soft_train_loss):
        warnings.warn(
            f"{ds.name}: tuned training loss {sat_train_loss:.6g} exceeds the "
            f"softmax baseline {soft_train_loss:.6g}; the cross-validated "
            "(epsilon, gamma) cell does not dominate on the training split",
            RuntimeWarning,
            stacklevel=2,
        )

    row = {
        "dataset": ds.name,
        "kind": kind,
        "variant": variant,
        "epsilon_opt": best_cfg.epsilon,
        "gamma_opt": best_cfg.gamma,
        "r2_base": r2(test_ds.targets, base_pred),
        "r2_softmax": r2(test_ds.targets, soft_pred),
        "r2_satrf": r2(test_ds.targets, sat_pred),
        "mae_base": mae(test_ds.targets, base_pred),
        "mae_softmax": mae(test_ds.targets, soft_pred),
        "mae_satrf": mae(test_ds.targets, sat_pred),
    }
    if n_heads > 0:
        heads = _random_heads(n_heads, model.v, seed + 4)
        mh_pred = y_loc + y_scale * np.array(
            [
                multihead_predict(
                    forest, x, model.w, heads, best_cfg.epsilon, best_cfg.tau
                )
                for x in test_ds.features
            ]
        )
        row["r2_multihead"] = r2(test_ds.targets, mh_pred)
        row["mae_multihead"] = mae(test_ds.targets, mh_pred)
    return row


def _training_loss(model, ds) -> float:
    pred = predict_batch(model, ds.features)
    res = ds.targets - pred
    if model.config.loss == "l1":
        return float(np.abs(res).sum())
    return float(res @ res)


def benchmark(
    datasets: list[Dataset],
    variants=("y",),
    base_kinds=("rf",),
    seed: int = 0,
    grid_eps=DEFAULT_GRID,
    grid_gamma=DEFAULT_GRID,
    folds: int = 3,
    repeats: int = 10,
    n_trees: int = 100,
    min_leaf: int = 10,
    loss: str = "l2",
    tau: float = 1.0,
    kappa: float = 1.0,
    n_heads: int = 0,
    standardize: bool = False,
    jobs: int = 1,
) -> list[dict]:
    """Run the full comparison protocol and return one row per cell.

    Each row compares the plain ensemble, the untrained softmax model,
    and the tuned model on a held-out test split, with (epsilon, gamma)
    selected by repeated k-fold grid search on the training split.
    standardize z-scores features and targets on each training split
    (metrics stay in original units), which keeps the unit kernel
    widths meaningful across datasets of very different scales.
    Failures are recorded per dataset without aborting the run.
    """
    forest_params = {"n_trees": n_trees, "min_leaf": min_leaf}
    payloads = []
    for i, ds in enumerate(datasets):
        for j, kind in enumerate(base_kinds):
            for k, variant in enumerate(variants):
                task_seed = int(
                    np.random.SeedSequence([seed, i, j, k]).generate_state(1)[0]
                ) % (2**31)
                payloads.append(
                    (ds, kind, variant, loss, task_seed, tuple(grid_eps),
                     tuple(grid_gamma), folds, repeats, forest_params, tau,
                     kappa, n_heads, standardize)
                )
    rows = []
    results = _parallel_map(_benchmark_task, payloads, jobs)
    for payload, outcome in zip(payloads, results):
        if isinstance(outcome, Exception):
            warnings.warn(
                f"benchmark cell {payload[0].name}/{payload[1]}/{payload[2]} "
                f"failed: {outcome}",
                RuntimeWarning,
                stacklevel=2,
            )
            rows.append(
                {
                    "dataset": payload[0].name,
                    "kind": payload[1],
                    "variant": payload[2],
                    "error": str(outcome),
                }
            )
        else:
            rows.append(outcome)
    return rows


def _parallel_map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        results = []
        for item in items:
            try:
                results.append(fn(item))
            except Exception as exc:  # noqa: BLE001 - reported per item
                results.append(exc)
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, item) for item in items]
        results = []
        for fut in futures:
            try:
                results.append(fut.result())
            except Exception as exc:  # noqa: BLE001
                results.append(exc)
        return results


def sweep(
    ds_train: Dataset,
    kind: str,
    variant: str,
    loss: str,
    which: str,
    seed: int = 0,
    grid=DEFAULT_GRID,
    scale_grid=SCALE_GRID,
    fixed_eps: float = 0.0,
    fixed_gamma: float = 0.0,
    folds: int = 3,
    repeats: int = 3,
    n_trees: int = 100,
    min_leaf: int = 10,
) -> list[dict]:
    """Surface data for the kernel-width studies, in long TSV form.

    which="attention" sweeps (tau, epsilon) at fixed (kappa, gamma);
    which="selfattention" sweeps (kappa, gamma) at fixed (tau, epsilon).
    """
    if which not in ("attention", "selfattention"):
        raise ValueError("which must be 'attention' or 'selfattention'")
    plan = make_folds(ds_train.n, folds, repeats, seed)
    rows = []
    forest_params = {"kind": kind, "n_trees": n_trees, "min_leaf": min_leaf}
    for scale in scale_grid:
        if which == "attention":
            tau, kappa = float(scale), 1.0
            grid_eps, grid_gamma = grid, (fixed_gamma,)
        else:
            tau, kappa = 1.0, float(scale)
            grid_eps, grid_gamma = (fixed_eps,), grid
        _, table = grid_search(
            ds_train, forest_params, variant, loss, grid_eps, grid_gamma,
            plan, tau=tau, kappa=kappa, seed=seed,
        )
        for cell in table:
            rows.append(
                {
                    "tau": tau,
                    "epsilon": cell["epsilon"],
                    "kappa": kappa,
                    "gamma": cell["gamma"],
                    "r2": cell["cv_r2"],
                }
            )
    return rows


def rows_to_tsv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    lines = ["\t".join(cols)]
    for row in rows:
        lines.append("\t".join(_fmt(row.get(c, "")) for c in cols))
    return "\n".join(lines) + "\n"


def rows_to_markdown(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    widths = {
        c: max(len(c), *(len(_fmt(row.get(c, ""))) for row in rows)) for c in cols
    }
    header = "| " + " | ".join(c.ljust(widths[c]) for c in cols) + " |"
    sep = "|" + "|".join("-" * (widths[c] + 2) for c in cols) + "|"
    lines = [header, sep]
    for row in rows:
        lines.append(
            "| " + " | ".join(_fmt(row.get(c, "")).ljust(widths[c]) for c in cols) + " |"
        )
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)
