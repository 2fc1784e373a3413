"""Chained multi-head tree-to-tree mixing, forward pass only.

Each head owns its own (gamma, kappa, v) and re-mixes the vector of
per-tree values produced by the previous head; the input weights are the
usual distance-softmax row mixed with w.  Training the heads jointly is
out of scope; this module evaluates the chain and numerically verifies
that the prediction is affine in each head's weight vector separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (
    AttentionConfig,
    attention_fixed,
    attention_scores,
    stable_softmax,
)
from .forest import Forest, assign

CHAIN_MODES = ("chained", "anchored")


@dataclass(frozen=True)
class HeadSpec:
    gamma: float
    kappa: float
    v: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not self.kappa > 0.0:
            raise ValueError("kappa must be positive")
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64))


def head_matrix(tree_pred: np.ndarray, head: HeadSpec) -> np.ndarray:
    """Full T-by-T mixing matrix of one head (rows sum to one)."""
    dy2 = (tree_pred[:, None] - tree_pred[None, :]) ** 2
    fixed = (1.0 - head.gamma) * stable_softmax(-dy2 / head.kappa)
    return fixed + head.gamma * head.v[None, :]


def chain_values(
    tree_pred: np.ndarray, heads: list[HeadSpec], mode: str = "chained"
) -> np.ndarray:
    """Per-tree values after applying all heads; dot with the input
    weights to get the prediction."""
    if not heads:
        raise ValueError("need at least one head")
    if mode not in CHAIN_MODES:
        raise ValueError(f"mode must be one of {CHAIN_MODES}")
    if mode == "chained":
        u = tree_pred
        for head in reversed(heads):
            u = head_matrix(tree_pred, head) @ u
        return u
    # anchored: every head keys on the input-weight index; heads before
    # the last contribute only their row sums
    u = head_matrix(tree_pred, heads[-1]) @ tree_pred
    for head in heads[:-1]:
        u = u * head_matrix(tree_pred, head).sum(axis=1)
    return u


def multihead_predict(
    forest: Forest,
    x: np.ndarray,
    w: np.ndarray,
    heads: list[HeadSpec],
    eps: float,
    tau: float,
    mode: str = "chained",
) -> float:
    """Evaluate the multi-head chain for one input."""
    la = assign(forest, x)
    for head in heads:
        if head.v.shape != (la.n_trees,):
            raise ValueError("head weight length must equal the tree count")
    x = np.asarray(x, dtype=np.float64)
    sq = attention_scores(x[None, :], la.mean_x[None])[0]
    alpha = attention_fixed(sq, AttentionConfig(epsilon=eps, tau=tau)) + eps * np.asarray(
        w, dtype=np.float64
    )
    return float(alpha @ chain_values(la.tree_pred, heads, mode))


@dataclass(frozen=True)
class LinearityReport:
    second_diff: float
    scale: float
    passed: bool


def verify_linearity(
    forest: Forest,
    x: np.ndarray,
    w: np.ndarray,
    heads: list[HeadSpec],
    eps: float,
    tau: float,
    probe_index: int,
    seed: int = 0,
    h: float = 0.05,
    rel_tol: float = 1e-9,
    mode: str = "chained",
) -> LinearityReport:
    """Check that the prediction is affine in one head's weight vector.

    Probes along a random simplex-tangent direction (components summing
    to zero): the second difference of an affine function is exactly
    zero, so anything above round-off fails.
    """
    rng = np.random.default_rng(seed)
    base = heads[probe_index].v
    d = rng.standard_normal(base.shape[0])
    d -= d.mean()

    def eval_at(shift: float) -> float:
        probed = list(heads)
        probed[probe_index] = HeadSpec(
            heads[probe_index].gamma, heads[probe_index].kappa, base + shift * d
        )
        return multihead_predict(forest, x, w, probed, eps, tau, mode)

    f0, f1, f2 = eval_at(0.0), eval_at(h), eval_at(2.0 * h)
    second = f2 - 2.0 * f1 + f0
    la = assign(forest, x)
    scale = float(np.max(np.abs(la.tree_pred))) or 1.0
    return LinearityReport(second, scale, abs(second) <= rel_tol * scale)
