"""Exemplar-free memory: per-class Gaussian statistics and pseudo-feature
synthesis. Footprint is O(C * d^2) regardless of dataset size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import gaussian_sample

__all__ = ["ClassStats", "fit_class_stats", "sample_pseudo_features"]


@dataclass
class ClassStats:
    """Sample mean and unbiased covariance of one class's raw features."""

    class_id: int
    mu: np.ndarray
    cov: np.ndarray
    sample_count: int


def fit_class_stats(
    features: np.ndarray,
    labels: np.ndarray,
    diagonal_only: bool = False,
) -> dict[int, ClassStats]:
    """Per-class mean and unbiased covariance (zero matrix when n = 1).

    diagonal_only keeps just the variance diagonal, for large d.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise ValueError("no samples to fit")
    if features.shape[0] != labels.shape[0]:
        raise ValueError(f"{features.shape[0]} features vs {labels.shape[0]} labels")
    d = features.shape[1]
    stats: dict[int, ClassStats] = {}
    for cid in sorted(int(c) for c in np.unique(labels)):
        rows = features[labels == cid]
        mu = rows.mean(axis=0)
        if rows.shape[0] == 1:
            cov = np.zeros((d, d))
        else:
            centered = rows - mu
            cov = centered.T @ centered / (rows.shape[0] - 1)
            cov = (cov + cov.T) / 2.0  # exact symmetry for the sampler
        if diagonal_only:
            cov = np.diag(np.diag(cov))
        stats[cid] = ClassStats(class_id=cid, mu=mu, cov=cov, sample_count=rows.shape[0])
    return stats


def sample_pseudo_features(
    stats: dict[int, ClassStats],
    classes: list[int],
    n_total: int,
    seed,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n_total labeled pseudo-features, split as evenly as possible.

    The remainder goes to the lowest class ids. Each class draws from its own
    generator keyed by (seed, class_id), so the output is independent of map
    iteration order. ``seed`` may be an int or a sequence of ints.
    """
    if n_total < 0:
        raise ValueError(f"negative sample count {n_total}")
    missing = [c for c in classes if c not in stats]
    if missing:
        raise ValueError(f"no stats for classes {missing}")
    ordered = sorted(int(c) for c in classes)
    entropy = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]

    base, rem = divmod(n_total, len(ordered))
    feats = []
    labs = []
    for rank, cid in enumerate(ordered):
        n_c = base + (1 if rank < rem else 0)
        if n_c == 0:
            continue
        st = stats[cid]
        sub = np.random.SeedSequence(entropy + [cid])
        feats.append(gaussian_sample(st.mu, st.cov, n_c, sub))
        labs.append(np.full(n_c, cid, dtype=np.int64))
    d = next(iter(stats.values())).mu.shape[0]
    if not feats:
        return np.zeros((0, d)), np.zeros(0, dtype=np.int64)
    return np.concatenate(feats), np.concatenate(labs)
