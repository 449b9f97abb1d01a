"""Feature modulation, classification head, composite objective, analytic
gradients, the adaptive-moment optimizer, and the per-task training loop.

The modulated feature is a1*x + a2*(theta x) + a3*x_H; logits are
temperature-scaled cosines against fixed unit-norm class anchors. The
composite objective weighs an L1 sparsity penalty on the fusion map, a
centroid-pull term, and softmax cross-entropy. Gradients are exact
reverse-mode derivations of that objective with respect to theta and the
task-local trainable matrix only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gfm as gfm_mod
from . import hlm as hlm_mod
from .gfm import GfmState, end_task_fusion, sparsity_loss
from .hlm import SubspaceState, TaskTrainContext, begin_task, merge_task
from .replay import ClassStats, fit_class_stats, sample_pseudo_features

__all__ = [
    "FmmConfig",
    "ClassAnchors",
    "AdamState",
    "ScheduleConfig",
    "LearnerState",
    "EpochRecord",
    "modulate",
    "class_logits",
    "total_loss",
    "grad_total_loss",
    "optimizer_step",
    "schedule_lr",
    "seeded_anchor",
    "train_task",
]

# Tags keeping the keyed RNG streams of one run disjoint.
_RNG_EPOCH = 101
_RNG_REPLAY = 102


@dataclass
class FmmConfig:
    """Feature-modulation weights and loss coefficients."""

    alpha: tuple[float, float, float] = (1.0, 0.5, 0.5)
    lam: tuple[float, float, float] = (0.01, 0.1, 1.0)
    xi: float = 0.2
    temperature: float = 100.0

    def __post_init__(self):
        if any(a < 0 for a in self.alpha) or any(l < 0 for l in self.lam):
            raise ValueError("alpha and lambda weights must be non-negative")
        if self.xi < 0 or self.temperature < 0:
            raise ValueError("xi and temperature must be non-negative")


@dataclass
class ClassAnchors:
    """Fixed unit-norm anchor directions, one row per seen class."""

    anchors: np.ndarray  # (C, d)
    class_ids: np.ndarray  # (C,) int64

    def __post_init__(self):
        if self.anchors.shape[0] != self.class_ids.shape[0]:
            raise ValueError("one anchor row per class id required")
        if self.anchors.size:
            norms = np.linalg.norm(self.anchors, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-10):
                raise ValueError("anchor rows must be unit-norm within 1e-10")

    def row_of(self) -> dict[int, int]:
        return {int(c): i for i, c in enumerate(self.class_ids)}


@dataclass
class AdamState:
    """First/second moment buffers for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


@dataclass
class ScheduleConfig:
    """Per-task epoch counts, per-module learning rates, milestone decay."""

    epochs_per_task: int = 25
    epoch_growth: int = 2
    lr_gfm: float = 0.001
    lr_hlm: float = 0.01
    milestones: tuple[int, ...] = (4, 10)
    decay: float = 0.1
    batch_size: int = 32
    replay_per_epoch: int = 2000

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay={self.decay} outside (0, 1]")
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must be ascending")
        if self.batch_size <= 0 or self.epochs_per_task <= 0:
            raise ValueError("batch size and epochs must be positive")

    def epochs_for_task(self, task_index: int) -> int:
        return self.epochs_per_task + self.epoch_growth * (task_index - 1)


def schedule_lr(base: float, epoch: int, milestones: tuple[int, ...], decay: float) -> float:
    """MultiStep schedule: decay once per passed milestone (1-based epochs)."""
    passed = sum(1 for m in milestones if epoch >= m)
    return base * decay**passed


def modulate(x: np.ndarray, gfm: GfmState, x_h: np.ndarray, cfg: FmmConfig) -> np.ndarray:
    """Combine residual, fusion-map output and subspace output."""
    a1, a2, a3 = cfg.alpha
    x = np.asarray(x, dtype=np.float64)
    x_h = np.asarray(x_h, dtype=np.float64)
    if x.shape != x_h.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs x_h {x_h.shape}")
    return a1 * x + a2 * gfm_mod.gfm_forward(gfm, x) + a3 * x_h


def class_logits(x_feature: np.ndarray, anchors: ClassAnchors, temperature: float) -> np.ndarray:
    """Temperature-scaled cosine similarity to every anchor.

    The cosine of the zero vector is defined as 0, giving a uniform softmax.
    """
    if anchors.anchors.shape[0] == 0:
        raise ValueError("no anchors registered")
    x_feature = np.asarray(x_feature, dtype=np.float64)
    single = x_feature.ndim == 1
    xf = x_feature[None, :] if single else x_feature
    norms = np.linalg.norm(xf, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    cos = (xf / safe[:, None]) @ anchors.anchors.T
    cos[norms == 0.0] = 0.0
    logits = temperature * cos
    return logits[0] if single else logits


def _batch_forward(
    x: np.ndarray, gfm: GfmState, adapter: np.ndarray, cfg: FmmConfig
) -> np.ndarray:
    a1, a2, a3 = cfg.alpha
    return a1 * x + a2 * (x @ gfm.theta.T) + a3 * (x @ adapter.T)


def _ce_terms(
    feats: np.ndarray, anchors: ClassAnchors, labels: np.ndarray, temperature: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # Returns (per-sample CE, softmax, unit features, norms).
    norms = np.linalg.norm(feats, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = feats / safe[:, None]
    unit[norms == 0.0] = 0.0
    logits = temperature * (unit @ anchors.anchors.T)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    row_of = anchors.row_of()
    rows = np.array([row_of[int(y)] for y in labels])
    ce = logsumexp - logits[np.arange(len(labels)), rows]
    probs = np.exp(logits - logsumexp[:, None])
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), rows] = 1.0
    return ce, probs - onehot, unit, norms


def _centroid_arrays(
    labels: np.ndarray, centroids: dict[int, np.ndarray], counts: dict[int, int], d: int
) -> tuple[np.ndarray, np.ndarray]:
    cent = np.empty((len(labels), d))
    cnt = np.empty(len(labels))
    for i, y in enumerate(labels):
        y = int(y)
        if y not in centroids:
            raise ValueError(f"no centroid for class {y}")
        cent[i] = centroids[y]
        cnt[i] = counts[y]
    return cent, cnt


def _loss_and_grad(
    batch: tuple[np.ndarray, np.ndarray],
    gfm: GfmState,
    hlm_ctx: TaskTrainContext,
    anchors: ClassAnchors,
    centroids: dict[int, np.ndarray],
    cfg: FmmConfig,
    want_grad: bool,
) -> tuple[tuple[float, float, float, float], np.ndarray | None, np.ndarray | None]:
    x, labels = batch
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    a1, a2, a3 = cfg.alpha
    l1, l2, l3 = cfg.lam

    adapter = hlm_ctx.frozen + hlm_ctx.temp
    feats = _batch_forward(x, gfm, adapter, cfg)
    ce, dlogits, unit, norms = _ce_terms(feats, anchors, labels, cfg.temperature)
    counts = {int(c): int(m) for c, m in zip(*np.unique(labels, return_counts=True))}
    cent, cnt = _centroid_arrays(labels, centroids, counts, x.shape[1])

    l_sp = sparsity_loss(gfm)
    diff = feats - cent
    l_h = cfg.xi / (2.0 * n) * float((np.einsum("ij,ij->i", diff, diff) / cnt).sum())
    l_ce = float(ce.mean())
    losses = (l1 * l_sp + l2 * l_h + l3 * l_ce, l_sp, l_h, l_ce)
    if not want_grad:
        return losses, None, None

    # CE path: d cos/d f = (I - u u^T) / ||f||, zero rows stay zero.
    g_unit = cfg.temperature * (dlogits @ anchors.anchors)
    radial = np.einsum("ij,ij->i", unit, g_unit)
    safe = np.where(norms > 0.0, norms, 1.0)
    g_feat = (g_unit - radial[:, None] * unit) / safe[:, None]
    g_feat[norms == 0.0] = 0.0
    g_feat *= l3 / n
    g_feat += (l2 * cfg.xi / n) * diff / cnt[:, None]

    shared = g_feat.T @ x
    grad_theta = a2 * shared + l1 * gfm.beta * np.sign(gfm.theta)
    grad_temp = a3 * shared
    return losses, grad_theta, grad_temp


def total_loss(
    batch: tuple[np.ndarray, np.ndarray],
    gfm: GfmState,
    hlm_ctx: TaskTrainContext,
    anchors: ClassAnchors,
    centroids: dict[int, np.ndarray],
    cfg: FmmConfig,
) -> float:
    """Composite objective lam1*L_sparse + lam2*L_H + lam3*L_ce (batch mean CE)."""
    losses, _, _ = _loss_and_grad(batch, gfm, hlm_ctx, anchors, centroids, cfg, False)
    return losses[0]


def grad_total_loss(
    batch: tuple[np.ndarray, np.ndarray],
    gfm: GfmState,
    hlm_ctx: TaskTrainContext,
    anchors: ClassAnchors,
    centroids: dict[int, np.ndarray],
    cfg: FmmConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of total_loss w.r.t. theta and the trainable temp.

    Anchors, the frozen prior components and the stored factor snapshots
    receive no gradient; the L1 term contributes beta * sign(theta) with
    subgradient 0 at exact zeros.
    """
    _, grad_theta, grad_temp = _loss_and_grad(
        batch, gfm, hlm_ctx, anchors, centroids, cfg, True
    )
    return grad_theta, grad_temp


def optimizer_step(
    param: np.ndarray,
    grad: np.ndarray,
    opt: AdamState,
    lr: float,
    name: str = "param",
) -> np.ndarray:
    """One bias-corrected adaptive-moment update; returns the new parameters.

    Moment buffers are updated in place; a non-finite gradient raises with
    the offending parameter name.
    """
    if param.shape != grad.shape:
        raise ValueError(f"{name}: gradient shape {grad.shape} != {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError(f"non-finite gradient for {name}")
    opt.step_count += 1
    opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grad
    opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grad**2
    m_hat = opt.m / (1.0 - opt.beta1**opt.step_count)
    v_hat = opt.v / (1.0 - opt.beta2**opt.step_count)
    return param - lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def seeded_anchor(seed: int, class_id: int, d: int) -> np.ndarray:
    """Unit anchor drawn from the seeded spherical distribution."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7, class_id]))
    vec = rng.standard_normal(d)
    return vec / np.linalg.norm(vec)


@dataclass
class EpochRecord:
    """One per-epoch log row."""

    task: int
    epoch: int
    loss_total: float
    loss_sparse: float
    loss_hier: float
    loss_ce: float
    lr_gfm: float
    lr_hlm: float
    drift_total: int


@dataclass
class LearnerState:
    """Full trainable state of one experiment.

    variant selects the subspace module ("subspace") or the sequential
    fine-tuning stand-in with a dense unconstrained adapter ("seq-dense").
    The train_* switches and fuse flag implement the single-component
    ablations; hlm_forward picks the training-time composition.
    """

    fmm: FmmConfig
    gfm: GfmState
    hlm: SubspaceState | None
    dense: np.ndarray | None
    anchors: ClassAnchors
    stats: dict[int, ClassStats] = field(default_factory=dict)
    anchor_seed: int = 0
    anchor_table: tuple[np.ndarray, np.ndarray] | None = None  # (ids, rows)
    tasks_done: int = 0
    variant: str = "subspace"
    hlm_forward: str = "cumulative"
    hlm_lr_scale: str = "quadratic"
    train_gfm: bool = True
    train_adapter: bool = True
    fuse_gfm: bool = True
    fuse_first_task: bool = False
    replay_diagonal: bool = False
    last_opt_gfm: AdamState | None = None
    last_opt_hlm: AdamState | None = None
    step_log: list[dict] = field(default_factory=list)

    def inference_adapter(self) -> np.ndarray:
        """The matrix behind x_H at evaluation time."""
        if self.variant == "seq-dense":
            return self.dense
        if self.hlm is None or not self.train_adapter:
            d = self.gfm.theta.shape[0]
            return np.zeros((d, d))
        return hlm_mod.test_reconstruction(self.hlm, self.tasks_done)


def _append_anchors(state: LearnerState, class_ids: list[int]) -> None:
    known = set(int(c) for c in state.anchors.class_ids)
    fresh = [c for c in class_ids if c not in known]
    if not fresh:
        return
    d = state.gfm.theta.shape[0]
    if state.anchor_table is not None:
        ids, rows = state.anchor_table
        lookup = {int(c): rows[i] for i, c in enumerate(ids)}
        missing = [c for c in fresh if c not in lookup]
        if missing:
            raise ValueError(f"anchor table has no rows for classes {missing}")
        new_rows = np.stack([lookup[c] for c in fresh])
    else:
        new_rows = np.stack([seeded_anchor(state.anchor_seed, c, d) for c in fresh])
    state.anchors = ClassAnchors(
        anchors=np.concatenate([state.anchors.anchors, new_rows])
        if state.anchors.anchors.size
        else new_rows,
        class_ids=np.concatenate(
            [state.anchors.class_ids, np.asarray(fresh, dtype=np.int64)]
        )
        if state.anchors.class_ids.size
        else np.asarray(fresh, dtype=np.int64),
    )


def _batch_centroids(
    x: np.ndarray,
    labels: np.ndarray,
    current_classes: set[int],
    stats: dict[int, ClassStats],
    gfm: GfmState,
    ctx: TaskTrainContext,
    cfg: FmmConfig,
) -> dict[int, np.ndarray]:
    """Class prototypes in the modulated-feature space.

    The prototype source is the stored replay mean for earlier classes and
    the running batch mean for classes of the current task; modulation is
    linear, so mapping the mean equals the mean of mapped features. The
    prototypes are constants for the batch step (no gradient flows back
    through them).
    """
    raw: dict[int, np.ndarray] = {}
    for cid in np.unique(labels):
        cid = int(cid)
        if cid in current_classes or cid not in stats:
            raw[cid] = x[labels == cid].mean(axis=0)
        else:
            raw[cid] = stats[cid].mu
    ids = sorted(raw)
    stacked = np.stack([raw[c] for c in ids])
    adapter = ctx.frozen + ctx.temp
    mapped = _batch_forward(stacked, gfm, adapter, cfg)
    return {c: mapped[k] for k, c in enumerate(ids)}


def train_task(
    state: LearnerState,
    task_data: tuple[np.ndarray, np.ndarray],
    replay_stats: dict[int, ClassStats],
    schedule: ScheduleConfig,
    seed: int,
) -> tuple[LearnerState, list[EpochRecord]]:
    """Train the next task in sequence and advance all module state.

    Runs the per-epoch loop (shuffled real features interleaved with replay
    draws), then merges the trained component, fuses the general map, fits
    replay statistics for the new classes, and registers their anchors.
    Input feature arrays are never written to.
    """
    x_real, y_real = task_data
    x_real = np.asarray(x_real, dtype=np.float64)
    y_real = np.asarray(y_real, dtype=np.int64)
    if x_real.shape[0] == 0:
        raise ValueError("empty task data")
    i = state.tasks_done + 1
    d = x_real.shape[1]
    current_classes = set(int(c) for c in np.unique(y_real))
    seen_classes = sorted(replay_stats)

    _append_anchors(state, sorted(current_classes))

    # Task-local trainable view; the dense variant trains its adapter under
    # scale 1 with no frozen part.
    if state.variant == "seq-dense":
        ctx = TaskTrainContext(
            task_index=i, temp=state.dense.copy(), frozen=np.zeros((d, d)), scale=1.0
        )
    elif state.train_adapter:
        ctx = begin_task(state.hlm, i)
        if state.hlm_forward == "isolated":
            ctx = TaskTrainContext(
                task_index=i, temp=ctx.temp, frozen=np.zeros((d, d)), scale=ctx.scale
            )
    else:
        ctx = TaskTrainContext(
            task_index=i, temp=np.zeros((d, d)), frozen=np.zeros((d, d)), scale=1.0
        )

    opt_gfm = AdamState.like(state.gfm.theta)
    opt_hlm = AdamState.like(ctx.temp)
    # Step scaling on the trainable component: "linear" keeps the raw step
    # proportional to s_i; "quadratic" additionally absorbs the inverse
    # scaling applied at merge time, so the shift of the stored component
    # stays proportional to s_i and component ordering survives re-SVD.
    if state.variant != "subspace" or state.hlm_lr_scale == "plain":
        temp_lr_factor = 1.0
    elif state.hlm_lr_scale == "linear":
        temp_lr_factor = ctx.scale
    else:
        temp_lr_factor = ctx.scale**2

    epochs = schedule.epochs_for_task(i)
    records: list[EpochRecord] = []
    temp_init = ctx.temp.copy()
    max_step_norm = 0.0
    steps_taken = 0

    for epoch in range(1, epochs + 1):
        lr_g = schedule_lr(schedule.lr_gfm, epoch, schedule.milestones, schedule.decay)
        lr_h = schedule_lr(schedule.lr_hlm, epoch, schedule.milestones, schedule.decay)
        rng = np.random.default_rng(np.random.SeedSequence([seed, _RNG_EPOCH, i, epoch]))

        perm = rng.permutation(x_real.shape[0])
        x_epoch = x_real[perm]
        y_epoch = y_real[perm]
        if seen_classes:
            x_pseudo, y_pseudo = sample_pseudo_features(
                replay_stats,
                seen_classes,
                schedule.replay_per_epoch,
                [seed, _RNG_REPLAY, i, epoch],
            )
            x_epoch = np.concatenate([x_epoch, x_pseudo])
            y_epoch = np.concatenate([y_epoch, y_pseudo])
            mix = rng.permutation(x_epoch.shape[0])
            x_epoch = x_epoch[mix]
            y_epoch = y_epoch[mix]

        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, x_epoch.shape[0], schedule.batch_size):
            xb = x_epoch[start : start + schedule.batch_size]
            yb = y_epoch[start : start + schedule.batch_size]
            centroids = _batch_centroids(
                xb, yb, current_classes, replay_stats, state.gfm, ctx, state.fmm
            )

            losses, grad_theta, grad_temp = _loss_and_grad(
                (xb, yb), state.gfm, ctx, state.anchors, centroids, state.fmm, True
            )
            sums += losses
            n_batches += 1

            if state.train_gfm:
                state.gfm.theta = optimizer_step(
                    state.gfm.theta, grad_theta, opt_gfm, lr_g, name="gfm.theta"
                )
            if state.train_adapter or state.variant == "seq-dense":
                new_temp = optimizer_step(
                    ctx.temp, grad_temp, opt_hlm, lr_h * temp_lr_factor, name="hlm.temp"
                )
                step_norm = float(np.linalg.norm(new_temp - ctx.temp))
                max_step_norm = max(max_step_norm, step_norm)
                steps_taken += 1
                ctx.temp = new_temp

        drift_total = len(state.hlm.drift_events) if state.hlm is not None else 0
        means = sums / max(n_batches, 1)
        records.append(
            EpochRecord(
                task=i,
                epoch=epoch,
                loss_total=float(means[0]),
                loss_sparse=float(means[1]),
                loss_hier=float(means[2]),
                loss_ce=float(means[3]),
                lr_gfm=lr_g,
                lr_hlm=lr_h,
                drift_total=drift_total,
            )
        )

    if state.variant == "seq-dense":
        state.dense = ctx.temp
    elif state.train_adapter:
        # the inverse-scaled net movement is the stored-component shift the
        # scaling analysis bounds by steps * max_step_norm / s_i
        stored_delta = float(np.linalg.norm(ctx.temp - temp_init)) / ctx.scale
        state.hlm = merge_task(state.hlm, ctx)
        state.step_log.append(
            {
                "task": i,
                "steps": steps_taken,
                "max_step_norm": max_step_norm,
                "scale": ctx.scale,
                "stored_delta": stored_delta,
            }
        )
    elif state.hlm is not None:
        # untouched module still advances the task counter for bookkeeping
        state.hlm.trained_upto = i
        state.hlm.scales[i - 1] = 10.0 ** (-i)

    if state.train_gfm and state.fuse_gfm and (i > 1 or state.fuse_first_task):
        state.gfm = end_task_fusion(state.gfm)

    state.stats.update(
        fit_class_stats(x_real, y_real, diagonal_only=state.replay_diagonal)
    )
    state.tasks_done = i
    state.last_opt_gfm = opt_gfm
    state.last_opt_hlm = opt_hlm
    return state, records
