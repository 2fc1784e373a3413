"""Attention-weighted tree aggregation with a trainable contamination mix.

Per example, every tree k contributes its leaf mean target.  The weight
of tree k mixes a fixed softmax over negative scaled squared distances
with a trainable simplex vector, controlled by a mixing rate:

    weight_i = (1 - epsilon) * softmax_i(-dist(x, leaf_mean_i)^2 / tau)
               + epsilon * w_i

A second, tree-to-tree layer re-expresses each tree's prediction as a
weighted average over all trees (denoising anomalous trees), mixed the
same way with rate gamma and trainable vector v.  The combined
prediction is affine in (w, v):

    prediction = const + <coef_w, w> + <coef_v, v>

which is what makes exact one-shot training (QP or LP) possible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .forest import Forest, LeafAssignment, assign

VARIANTS = ("y", "x", "yx")
LOSSES = ("l2", "l1")

# floor for the pairwise leaf-mean distance in the "yx" score denominator
MIN_SQ_DIST = 1e-8

_CHUNK_CELLS = 4_000_000  # soft cap on chunk * T * T floats in batch ops


@dataclass(frozen=True)
class AttentionConfig:
    epsilon: float = 0.0
    gamma: float = 0.0
    tau: float = 1.0
    kappa: float = 1.0
    variant: str = "y"
    loss: str = "l2"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if not self.kappa > 0.0:
            raise ValueError("kappa must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")


@dataclass(frozen=True)
class CoefficientBundle:
    """Everything that makes one example's prediction affine in (w, v)."""

    att_fixed: np.ndarray  # (T,) fixed part of the tree weights, sums to 1-eps
    self_fixed: np.ndarray  # (T, T) fixed tree-to-tree rows, each sums to 1-gamma
    const: float  # prediction term independent of (w, v)
    coef_w: np.ndarray  # (T,) multiplies w
    coef_v: np.ndarray  # (T,) multiplies v


@dataclass
class SatRfModel:
    forest: Forest
    config: AttentionConfig
    w: np.ndarray
    v: np.ndarray
    feature_loc: np.ndarray | None = None  # z-score shift, optional
    feature_scale: np.ndarray | None = None

    def __post_init__(self):
        for name, vec in (("w", self.w), ("v", self.v)):
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.forest.n_trees,):
                raise ValueError(f"{name} must have one entry per tree")
            if (vec < 0).any() or abs(vec.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a probability vector")
            setattr(self, name, vec)

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.feature_loc is None:
            return X
        return (X - self.feature_loc) / self.feature_scale


def stable_softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax computed after subtracting the max score.

    -inf entries are allowed and get weight zero; at least one entry per
    slice must be finite.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any() or np.isposinf(scores).any():
        raise ValueError("scores must be finite or -inf")
    hi = np.max(scores, axis=axis, keepdims=True)
    if np.isneginf(hi).any():
        raise ValueError("softmax undefined: all scores are -inf")
    e = np.exp(scores - hi)
    return e / e.sum(axis=axis, keepdims=True)


def attention_scores(X: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Squared distances from each example to its per-tree leaf means.

    X is (n, m), A is (n, T, m); returns (n, T).
    """
    d = X[:, None, :] - A
    return np.einsum("stm,stm->st", d, d)


def attention_fixed(sq_dist: np.ndarray, cfg: AttentionConfig) -> np.ndarray:
    """Fixed softmax part of the tree weights, scaled by (1 - epsilon)."""
    return (1.0 - cfg.epsilon) * stable_softmax(-sq_dist / cfg.tau)


def attention_row(
    x: np.ndarray, la: LeafAssignment, cfg: AttentionConfig, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Full tree-weight row for one example: fixed part plus epsilon * w."""
    x = np.asarray(x, dtype=np.float64)
    sq = attention_scores(x[None, :], la.mean_x[None])[0]
    fixed = attention_fixed(sq, cfg)
    return fixed + cfg.epsilon * np.asarray(w, dtype=np.float64), fixed


def _self_score_matrix(
    A: np.ndarray, y: np.ndarray, variant: str, kappa: float
) -> np.ndarray:
    """Raw tree-to-tree scores for a batch: (n, T, T), diagonal is 0."""
    dy2 = (y[:, :, None] - y[:, None, :]) ** 2
    if variant == "y":
        return -dy2 / kappa
    # squared pairwise distances between leaf means, via the Gram trick
    sq_norm = np.einsum("stm,stm->st", A, A)
    gram = np.einsum("stm,sum->stu", A, A)
    dx2 = sq_norm[:, :, None] + sq_norm[:, None, :] - 2.0 * gram
    np.maximum(dx2, 0.0, out=dx2)
    ii = np.arange(dx2.shape[1])
    dx2[:, ii, ii] = 0.0
    if variant == "x":
        return -dx2 / (2.0 * kappa)
    if variant == "yx":
        return -dy2 / (2.0 * kappa * np.maximum(dx2, MIN_SQ_DIST))
    raise ValueError(f"unknown variant {variant!r}")


def self_fixed_batch(
    A: np.ndarray, y: np.ndarray, cfg: AttentionConfig
) -> np.ndarray:
    """Fixed tree-to-tree rows for a batch, each row summing to 1 - gamma."""
    n, T = y.shape
    out = np.empty((n, T, T))
    step = max(1, _CHUNK_CELLS // (T * T))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        scores = _self_score_matrix(A[lo:hi], y[lo:hi], cfg.variant, cfg.kappa)
        out[lo:hi] = (1.0 - cfg.gamma) * stable_softmax(scores)
    return out


def self_attention_matrix(la: LeafAssignment, cfg: AttentionConfig) -> np.ndarray:
    """Fixed tree-to-tree matrix for one example.

    The full mixing row for tree i is row i of this matrix plus gamma * v.
    """
    return self_fixed_batch(la.mean_x[None], la.tree_pred[None], cfg)[0]


def assemble_coefficients(
    la: LeafAssignment, att_fixed: np.ndarray, self_fixed: np.ndarray,
    cfg: AttentionConfig,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Collapse the double sum over trees into affine coefficients.

    Returns (const, coef_w, coef_v) such that for simplex (w, v) the
    prediction equals const + coef_w . w + coef_v . v.
    """
    y = la.tree_pred
    mixed = self_fixed @ y  # (T,) fixed self-attention value per tree
    const = float(att_fixed @ mixed)
    coef_w = cfg.epsilon * mixed
    coef_v = cfg.gamma * (float(att_fixed.sum()) + cfg.epsilon) * y
    return const, coef_w, coef_v


def coefficient_bundle(
    x: np.ndarray, la: LeafAssignment, cfg: AttentionConfig
) -> CoefficientBundle:
    x = np.asarray(x, dtype=np.float64)
    sq = attention_scores(x[None, :], la.mean_x[None])[0]
    att = attention_fixed(sq, cfg)
    self_fixed = self_attention_matrix(la, cfg)
    const, coef_w, coef_v = assemble_coefficients(la, att, self_fixed, cfg)
    return CoefficientBundle(att, self_fixed, const, coef_w, coef_v)


def coefficients_batch(
    X: np.ndarray, A: np.ndarray, Y: np.ndarray, cfg: AttentionConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(const, coef_w, coef_v) rows for a batch of examples.

    X is (n, m); A, Y are the leaf statistics from Forest.leaf_stats.
    """
    att = attention_fixed(attention_scores(X, A), cfg)
    n, T = Y.shape
    const = np.empty(n)
    coef_w = np.empty((n, T))
    step = max(1, _CHUNK_CELLS // (T * T))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        scores = _self_score_matrix(A[lo:hi], Y[lo:hi], cfg.variant, cfg.kappa)
        fixed = (1.0 - cfg.gamma) * stable_softmax(scores)
        mixed = np.einsum("sik,sk->si", fixed, Y[lo:hi])
        const[lo:hi] = np.einsum("si,si->s", att[lo:hi], mixed)
        coef_w[lo:hi] = cfg.epsilon * mixed
    coef_v = cfg.gamma * (att.sum(axis=1) + cfg.epsilon)[:, None] * Y
    return const, coef_w, coef_v


def predict_batch(model: SatRfModel, X: np.ndarray) -> np.ndarray:
    """Model predictions for each row of X via the affine decomposition."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xt = model.transform(X)
    A, Y = model.forest.leaf_stats(Xt)
    const, coef_w, coef_v = coefficients_batch(Xt, A, Y, model.config)
    return const + coef_w @ model.w + coef_v @ model.v


def predict(model: SatRfModel, x: np.ndarray) -> float:
    """Prediction for a single input vector."""
    return float(predict_batch(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def softmax_baseline(model_or_forest, cfg: AttentionConfig) -> SatRfModel:
    """The untrained reference model: both mixing rates forced to zero."""
    forest = getattr(model_or_forest, "forest", model_or_forest)
    T = forest.n_trees
    uniform = np.full(T, 1.0 / T)
    return SatRfModel(
        forest=forest,
        config=replace(cfg, epsilon=0.0, gamma=0.0),
        w=uniform,
        v=uniform.copy(),
    )
