"""Hierarchical learning module: one rank-1 singular component of a shared
d x d weight per task, trained under exponential scaling and merged back.

The stored weight lives in canonical thin-SVD form (U, sigma, V). Task i owns
the i-th largest component of the initial decomposition; training happens on
a temporary copy scaled by s_i = 10^-i, and the merge re-factorizes the
aggregate and verifies, via greedy singular-vector matching, that each task
still maps to its original component index. A mismatch is the ordering-drift
event the evaluation harness counts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import thin_svd

__all__ = [
    "OrderingDriftWarning",
    "RankCollapseWarning",
    "SubspaceState",
    "TaskTrainContext",
    "init_decomposition",
    "stored_weight",
    "component",
    "begin_task",
    "hlm_train_forward",
    "merge_task",
    "test_reconstruction",
    "hierarchical_loss",
]


class OrderingDriftWarning(UserWarning):
    """Post-merge component matching disagreed with the identity permutation."""


class RankCollapseWarning(UserWarning):
    """Two singular values nearly coincide; association fell back to order."""


@dataclass
class SubspaceState:
    """Canonical factors of the shared weight plus task bookkeeping.

    scales[i] holds s_{i+1} = 10^-(i+1) once task i+1 has begun (NaN before).
    task_order[t] is the 0-based component index currently associated with
    task t+1; drift_events lists the tasks whose merge broke the identity
    association.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    scales: np.ndarray
    trained_upto: int = 0
    task_order: list[int] = field(default_factory=list)
    drift_events: list[int] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.u.shape[0]

    @property
    def n_components(self) -> int:
        return self.sigma.shape[0]


@dataclass
class TaskTrainContext:
    """Per-task training view: a trainable scaled component and frozen prior.

    temp starts at s_i * (component i) and is the only tensor training may
    touch; frozen aggregates the already-trained components at their recorded
    scales and stays bitwise constant for the task's duration.
    """

    task_index: int
    temp: np.ndarray
    frozen: np.ndarray
    scale: float


def init_decomposition(d: int, n: int, seed) -> SubspaceState:
    """Factorized random init: W0 = B @ A with uniform(-1/sqrt(d), 1/sqrt(d))
    entries, stored as the canonical thin SVD of the composed map."""
    if n < 1:
        raise ValueError(f"need at least one component, got {n}")
    if d < n:
        raise ValueError(f"d={d} smaller than component count {n}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    a = rng.uniform(-bound, bound, size=(n, d))
    b = rng.uniform(-bound, bound, size=(d, n))
    res = thin_svd(b @ a, n)
    return SubspaceState(
        u=res.u,
        sigma=res.sigma.copy(),
        v=res.v,
        scales=np.full(n, np.nan),
        trained_upto=0,
        task_order=list(range(n)),
    )


def stored_weight(state: SubspaceState) -> np.ndarray:
    """The full (unscaled) weight U diag(sigma) V^T."""
    return (state.u * state.sigma) @ state.v.T


def component(state: SubspaceState, i: int) -> np.ndarray:
    """Rank-1 component sigma_i u_i v_i^T for 1-based index i."""
    if not 1 <= i <= state.n_components:
        raise ValueError(f"component index {i} outside 1..{state.n_components}")
    j = i - 1
    return state.sigma[j] * np.outer(state.u[:, j], state.v[:, j])


def begin_task(state: SubspaceState, i: int) -> TaskTrainContext:
    """Open task i (strictly sequential): record s_i and build the context."""
    if i != state.trained_upto + 1:
        raise ValueError(
            f"task {i} out of order; next trainable task is {state.trained_upto + 1}"
        )
    if i > state.n_components:
        raise ValueError(f"no component left for task {i} (capacity {state.n_components})")
    s_i = 10.0 ** (-i)
    state.scales[i - 1] = s_i
    frozen = np.zeros((state.d, state.d))
    for j in range(1, i):
        frozen += state.scales[j - 1] * component(state, j)
    return TaskTrainContext(
        task_index=i,
        temp=s_i * component(state, i),
        frozen=frozen,
        scale=s_i,
    )


def hlm_train_forward(ctx: TaskTrainContext, x: np.ndarray) -> np.ndarray:
    """Training-time forward: (frozen + temp) @ x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != ctx.temp.shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} != {ctx.temp.shape[1]}")
    m = ctx.frozen + ctx.temp
    return x @ m.T if x.ndim > 1 else m @ x


def _greedy_match(
    u_old: np.ndarray, v_old: np.ndarray, u_new: np.ndarray, v_new: np.ndarray
) -> list[int]:
    # Old components (already in descending sigma order) each claim the best
    # unclaimed new component by |u.u'| * |v.v'|.
    n = u_old.shape[1]
    affinity = np.abs(u_old.T @ u_new) * np.abs(v_old.T @ v_new)
    match: list[int] = []
    claimed = np.zeros(n, dtype=bool)
    for k in range(n):
        row = np.where(claimed, -1.0, affinity[k])
        j = int(np.argmax(row))
        match.append(j)
        claimed[j] = True
    return match


def merge_task(state: SubspaceState, ctx: TaskTrainContext) -> SubspaceState:
    """Inverse-scale the trained component, aggregate, and re-canonicalize.

    The re-SVD restores canonical form; the greedy matching then re-associates
    every old component with a new one and emits an OrderingDriftWarning when
    the association is not the identity permutation. Nearly equal singular
    values trigger a RankCollapseWarning and association by order instead.
    """
    i = ctx.task_index
    if i != state.trained_upto + 1:
        raise ValueError(f"context for task {i} does not follow task {state.trained_upto}")
    n = state.n_components
    w_new = stored_weight(state) - component(state, i) + ctx.temp / ctx.scale
    res = thin_svd(w_new, n)

    gaps = np.abs(np.diff(res.sigma))
    if n > 1 and float(gaps.min()) < 1e-12:
        warnings.warn(
            f"rank collapse at task {i}: nearly equal singular values, "
            "associating components by order",
            RankCollapseWarning,
            stacklevel=2,
        )
        match = list(range(n))
    else:
        match = _greedy_match(state.u, state.v, res.u, res.v)

    drift_events = list(state.drift_events)
    if match != list(range(n)):
        drift_events.append(i)
        warnings.warn(
            f"ordering drift at task {i}: component association {match} "
            "is not the identity",
            OrderingDriftWarning,
            stacklevel=2,
        )

    return SubspaceState(
        u=res.u,
        sigma=res.sigma.copy(),
        v=res.v,
        scales=state.scales.copy(),
        trained_upto=i,
        task_order=[match[k] for k in state.task_order],
        drift_events=drift_events,
    )


def test_reconstruction(state: SubspaceState, upto: int) -> np.ndarray:
    """Inference-time weight: components 1..upto scaled by their s_j.

    Returns U[:, :upto] diag(s_j sigma_j) V[:, :upto]^T, the hierarchically
    weighted aggregate of the trained components; zero when upto = 0.
    """
    if upto > state.trained_upto:
        raise ValueError(f"upto={upto} exceeds trained tasks {state.trained_upto}")
    if upto == 0:
        return np.zeros((state.d, state.d))
    weights = state.scales[:upto] * state.sigma[:upto]
    return (state.u[:, :upto] * weights) @ state.v[:, :upto].T


def hierarchical_loss(
    features: np.ndarray,
    labels: np.ndarray,
    centroids: dict[int, np.ndarray],
    counts: dict[int, int],
    xi: float,
) -> float:
    """Centroid-pull loss: (xi / 2n) * sum_i ||f_i - c_{y_i}||^2 / C_{y_i}."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    total = 0.0
    for f, y in zip(features, labels):
        y = int(y)
        if y not in centroids:
            raise ValueError(f"no centroid for class {y}")
        diff = f - centroids[y]
        total += float(diff @ diff) / counts[y]
    return xi / (2.0 * n) * total
