"""Metrics (Avg/Last, forgetting) and the update-subspace interference
diagnostic. All computations are pure reductions over immutable inputs;
accuracies reduce by integer counts so results are order independent."""

from __future__ import annotations

import numpy as np

from .datastream import TaskStream
from .learner import LearnerState, class_logits, modulate
from .linalg import subspace_overlap, thin_svd

__all__ = [
    "evaluate_tasks",
    "evaluate_seen",
    "avg_last",
    "forgetting",
    "update_overlap_matrix",
]


def _predict(state: LearnerState, x: np.ndarray) -> np.ndarray:
    adapter = state.inference_adapter()
    x_h = x @ adapter.T
    feats = modulate(x, state.gfm, x_h, state.fmm)
    logits = class_logits(feats, state.anchors, state.fmm.temperature)
    rows = np.argmax(logits, axis=1)
    return state.anchors.class_ids[rows]


def evaluate_tasks(state: LearnerState, stream: TaskStream, upto: int) -> list[tuple[int, int]]:
    """Per-task (correct, total) over the test sets of tasks 1..upto."""
    if upto > len(stream.tasks):
        raise ValueError(f"upto={upto} exceeds {len(stream.tasks)} tasks")
    out = []
    for _, test in stream.tasks[:upto]:
        pred = _predict(state, test.features)
        out.append((int((pred == test.labels).sum()), int(test.labels.shape[0])))
    return out


def evaluate_seen(state: LearnerState, stream: TaskStream, upto: int) -> float:
    """Accuracy over the union of all test sets seen through task ``upto``."""
    counts = evaluate_tasks(state, stream, upto)
    correct = sum(c for c, _ in counts)
    total = sum(t for _, t in counts)
    return correct / total


def avg_last(curve: list[float] | np.ndarray) -> tuple[float, float]:
    """Mean of the per-step seen-class accuracies, and the final one."""
    curve = list(curve)
    if not curve:
        raise ValueError("empty accuracy curve")
    return float(np.mean(curve)), float(curve[-1])


def forgetting(acc_matrix: np.ndarray) -> float:
    """Mean over tasks of (best prior accuracy - final accuracy).

    acc_matrix[t, j] is the accuracy on task j+1's test set after step t+1;
    entries with t < j are NaN. Zero for a single task.
    """
    acc_matrix = np.asarray(acc_matrix, dtype=np.float64)
    n = acc_matrix.shape[0]
    if n <= 1:
        return 0.0
    drops = []
    for j in range(n - 1):
        col = acc_matrix[j:, j]
        drops.append(float(np.nanmax(col) - col[-1]))
    return float(np.mean(drops))


def update_overlap_matrix(task_updates: list[np.ndarray], k: int = 1) -> np.ndarray:
    """Pairwise overlap of the top-k left singular subspaces of the updates.

    Entry (i, j) is the mean squared principal cosine between update i's and
    update j's dominant left subspaces; the diagonal is 1. Updates that are
    exactly zero have no defined subspace, so their rows and columns carry
    NaN sentinels instead of 0.
    """
    if len(task_updates) < 2:
        raise ValueError("need at least two task updates")
    bases = []
    for upd in task_updates:
        if k > min(upd.shape):
            raise ValueError(f"k={k} exceeds update shape {upd.shape}")
        if not upd.any():
            bases.append(None)
        else:
            bases.append(thin_svd(upd, k).u)
    n = len(bases)
    out = np.full((n, n), np.nan)
    for i in range(n):
        if bases[i] is None:
            continue
        out[i, i] = 1.0
        for j in range(i + 1, n):
            if bases[j] is None:
                continue
            val = subspace_overlap(bases[i], bases[j])
            out[i, j] = val
            out[j, i] = val
    return out
