"""General fusion module: a single d x d linear map that accumulates
cross-task general knowledge through change-rate-gated parameter fusion.

At every task boundary the per-entry relative change rate between the
pre-task snapshot and the freshly trained parameters is computed, an adaptive
threshold picks out the most volatile entries, and stable entries are blended
while volatile ones revert to the snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .linalg import quantile_nearest_rank

__all__ = [
    "GfmState",
    "gfm_init",
    "gfm_forward",
    "sparsity_loss",
    "relative_change",
    "adaptive_threshold",
    "fuse_parameters",
    "end_task_fusion",
]


@dataclass
class GfmState:
    """Fusion-module parameters plus the snapshot taken at the last boundary.

    c is the stabilization constant added to the normalized change rate
    (valid range [0.5, 0.7]), q the threshold percentile, beta the sparsity
    penalty weight.
    """

    theta: np.ndarray
    theta_old: np.ndarray
    c: float = 0.6
    q: float = 0.9
    beta: float = 0.0005

    def __post_init__(self):
        if self.theta.shape != self.theta_old.shape:
            raise ValueError(
                f"theta {self.theta.shape} and snapshot {self.theta_old.shape} differ"
            )
        if not 0.5 <= self.c <= 0.7:
            raise ValueError(f"c={self.c} outside [0.5, 0.7]")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q={self.q} outside (0, 1]")
        if self.beta < 0.0:
            raise ValueError(f"beta={self.beta} negative")


def gfm_init(d: int, seed, c: float = 0.6, q: float = 0.9, beta: float = 0.0005) -> GfmState:
    """Fresh square map with uniform(-1/sqrt(d), 1/sqrt(d)) entries.

    The initial parameters double as the first boundary snapshot, so fusion is
    well defined already after the first task.
    """
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    theta = rng.uniform(-bound, bound, size=(d, d))
    return GfmState(theta=theta, theta_old=theta.copy(), c=c, q=q, beta=beta)


def gfm_forward(state: GfmState, x: np.ndarray) -> np.ndarray:
    """Apply the linear map: theta @ x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != state.theta.shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} != {state.theta.shape[1]}")
    return x @ state.theta.T if x.ndim > 1 else state.theta @ x

def sparsity_loss(state: GfmState) -> float:
    """Elementwise L1 penalty: beta * sum(|theta|)."""
    return state.beta * float(np.abs(state.theta).sum())


def relative_change(theta_old: np.ndarray, theta_new: np.ndarray, c: float) -> np.ndarray:
    """Per-entry relative change rate in [c, 1+c].

    Gamma = |new - old| / max|new - old| + c; when the parameters did not move
    at all the rate degenerates to c everywhere.
    """
    if theta_old.shape != theta_new.shape:
        raise ValueError(f"shape mismatch: {theta_old.shape} vs {theta_new.shape}")
    diff = np.abs(theta_new - theta_old)
    peak = float(diff.max()) if diff.size else 0.0
    if peak == 0.0:
        return np.full_like(theta_old, c)
    return diff / peak + c


def adaptive_threshold(gamma: np.ndarray, q: float) -> float:
    """Nearest-rank q-quantile of the flattened change rates."""
    return quantile_nearest_rank(np.ravel(gamma), q)


def fuse_parameters(
    theta_old: np.ndarray,
    theta_new: np.ndarray,
    gamma: np.ndarray,
    tau: float,
) -> np.ndarray:
    """Blend stable entries, reject volatile ones.

    For Gamma_j <= tau the result is the convex mix
    (1 - min(1, Gamma_j)) * old + min(1, Gamma_j) * new; entries above the
    threshold keep the old value.
    """
    if not theta_old.shape == theta_new.shape == gamma.shape:
        raise ValueError(
            f"shape mismatch: {theta_old.shape}, {theta_new.shape}, {gamma.shape}"
        )
    w = np.minimum(1.0, gamma)
    blended = (1.0 - w) * theta_old + w * theta_new
    return np.where(gamma <= tau, blended, theta_old)


def end_task_fusion(state: GfmState) -> GfmState:
    """Run the full boundary fusion and advance the snapshot.

    state.theta is read as the post-training parameters and state.theta_old
    as the previous boundary snapshot; the returned state holds the fused map
    in both slots.
    """
    gamma = relative_change(state.theta_old, state.theta, state.c)
    tau = adaptive_threshold(gamma, state.q)
    fused = fuse_parameters(state.theta_old, state.theta, gamma, tau)
    return replace(state, theta=fused, theta_old=fused.copy())
