import math

import numpy as np
import pytest

from subspacecil.gfm import GfmState, gfm_init
from subspacecil.hlm import TaskTrainContext
from subspacecil.learner import (
    AdamState,
    ClassAnchors,
    FmmConfig,
    LearnerState,
    ScheduleConfig,
    class_logits,
    grad_total_loss,
    modulate,
    optimizer_step,
    schedule_lr,
    seeded_anchor,
    total_loss,
    train_task,
)
from subspacecil.replay import fit_class_stats


def make_setup(d=6, n_classes=4, n=8, seed=0, lam=(0.01, 0.1, 1.0)):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-1 / np.sqrt(d), 1 / np.sqrt(d), (d, d))
    gfm = GfmState(theta=theta, theta_old=theta.copy())
    frozen = 0.05 * rng.standard_normal((d, d))
    temp = 0.1 * rng.standard_normal((d, d))
    ctx = TaskTrainContext(task_index=1, temp=temp, frozen=frozen, scale=0.1)
    anchors_rows = rng.standard_normal((n_classes, d))
    anchors_rows /= np.linalg.norm(anchors_rows, axis=1, keepdims=True)
    anchors = ClassAnchors(anchors=anchors_rows, class_ids=np.arange(n_classes, dtype=np.int64))
    x = 3.0 * rng.standard_normal((n, d))
    labels = rng.integers(0, n_classes, n).astype(np.int64)
    centroids = {c: rng.standard_normal(d) for c in range(n_classes)}
    cfg = FmmConfig(lam=lam)
    return (x, labels), gfm, ctx, anchors, centroids, cfg


def test_modulate_weight_selection():
    d = 4
    rng = np.random.default_rng(1)
    theta = rng.standard_normal((d, d))
    gfm = GfmState(theta=theta, theta_old=theta.copy())
    x = rng.standard_normal(d)
    x_h = rng.standard_normal(d)
    pure = modulate(x, gfm, x_h, FmmConfig(alpha=(1.0, 0.0, 0.0)))
    assert np.array_equal(pure, x)
    zeroed = GfmState(theta=np.zeros((d, d)), theta_old=np.zeros((d, d)))
    res = modulate(x, zeroed, np.zeros(d), FmmConfig())
    assert np.array_equal(res, x)


def test_modulate_example():
    d = 3
    gfm = GfmState(theta=np.eye(d), theta_old=np.eye(d))
    e1 = np.eye(d)[0]
    out = modulate(e1, gfm, e1, FmmConfig())
    assert np.allclose(out, 2.0 * e1)


def test_class_logits_alignment_and_zero():
    d = 5
    rng = np.random.default_rng(2)
    rows = rng.standard_normal((3, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    anchors = ClassAnchors(anchors=rows, class_ids=np.arange(3, dtype=np.int64))
    logits = class_logits(2.5 * rows[1], anchors, temperature=100.0)
    assert logits[1] == pytest.approx(100.0, rel=1e-12)
    assert logits[1] == max(logits)
    assert np.array_equal(class_logits(np.zeros(d), anchors, 100.0), np.zeros(3))
    scaled = class_logits(7.0 * rows[1], anchors, 100.0)
    assert np.allclose(scaled, logits, atol=1e-10)


def test_logits_permutation_equivariance():
    d = 6
    rng = np.random.default_rng(3)
    rows = rng.standard_normal((5, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    anchors = ClassAnchors(anchors=rows, class_ids=np.arange(5, dtype=np.int64))
    perm = rng.permutation(5)
    shuffled = ClassAnchors(anchors=rows[perm], class_ids=np.arange(5, dtype=np.int64)[perm])
    x = rng.standard_normal(d)
    assert np.allclose(class_logits(x, anchors, 100.0)[perm], class_logits(x, shuffled, 100.0))


def straight_line_loss(batch, gfm, ctx, anchors, centroids, cfg):
    # independent re-implementation: per-sample loops, no shared helpers
    x, labels = batch
    a1, a2, a3 = cfg.alpha
    l1, l2, l3 = cfg.lam
    n = x.shape[0]

    l_sp = gfm.beta * sum(abs(v) for v in gfm.theta.ravel())

    counts = {}
    for y in labels:
        counts[int(y)] = counts.get(int(y), 0) + 1

    l_h = 0.0
    l_ce = 0.0
    for k in range(n):
        f = a1 * x[k] + a2 * (gfm.theta @ x[k]) + a3 * ((ctx.frozen + ctx.temp) @ x[k])
        diff = f - centroids[int(labels[k])]
        l_h += float(diff @ diff) / counts[int(labels[k])]
        norm = math.sqrt(float(f @ f))
        if norm == 0.0:
            logits = [0.0] * anchors.anchors.shape[0]
        else:
            logits = [cfg.temperature * float(a @ f) / norm for a in anchors.anchors]
        row = {int(c): idx for idx, c in enumerate(anchors.class_ids)}[int(labels[k])]
        m = max(logits)
        l_ce += m + math.log(sum(math.exp(z - m) for z in logits)) - logits[row]
    l_h *= cfg.xi / (2.0 * n)
    l_ce /= n
    return l1 * l_sp + l2 * l_h + l3 * l_ce


def test_total_loss_matches_straight_line_oracle():
    for seed in range(5):
        batch, gfm, ctx, anchors, centroids, cfg = make_setup(seed=seed)
        mine = total_loss(batch, gfm, ctx, anchors, centroids, cfg)
        oracle = straight_line_loss(batch, gfm, ctx, anchors, centroids, cfg)
        assert mine == pytest.approx(oracle, abs=1e-12, rel=1e-12)


def test_total_loss_pure_ce_uniform():
    batch, gfm, ctx, anchors, centroids, cfg = make_setup(
        d=4, n_classes=2, n=3, lam=(0.0, 0.0, 1.0)
    )
    x, labels = batch
    zero_gfm = GfmState(theta=np.zeros((4, 4)), theta_old=np.zeros((4, 4)))
    zero_ctx = TaskTrainContext(1, np.zeros((4, 4)), np.zeros((4, 4)), 1.0)
    loss = total_loss(
        (np.zeros((3, 4)), labels),
        zero_gfm,
        zero_ctx,
        anchors,
        centroids,
        FmmConfig(alpha=(1.0, 0.0, 0.0), lam=(0.0, 0.0, 1.0)),
    )
    assert loss == pytest.approx(math.log(2), rel=1e-12)


def test_grad_pure_sparsity():
    batch, gfm, ctx, anchors, centroids, _ = make_setup()
    cfg = FmmConfig(lam=(1.0, 0.0, 0.0))
    g_theta, g_temp = grad_total_loss(batch, gfm, ctx, anchors, centroids, cfg)
    assert np.array_equal(g_theta, gfm.beta * np.sign(gfm.theta))
    assert np.array_equal(g_temp, np.zeros_like(g_temp))


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(42)
    h = 1e-5
    for seed in range(5):
        batch, gfm, ctx, anchors, centroids, cfg = make_setup(seed=seed)
        g_theta, g_temp = grad_total_loss(batch, gfm, ctx, anchors, centroids, cfg)
        for which, grad, mat in (("theta", g_theta, gfm.theta), ("temp", g_temp, ctx.temp)):
            for trial in range(10):
                i, j = rng.integers(0, mat.shape[0]), rng.integers(0, mat.shape[1])
                if abs(mat[i, j]) < 10 * h or abs(grad[i, j]) < 1e-6:
                    continue
                mat[i, j] += h
                up = total_loss(batch, gfm, ctx, anchors, centroids, cfg)
                mat[i, j] -= 2 * h
                down = total_loss(batch, gfm, ctx, anchors, centroids, cfg)
                mat[i, j] += h
                fd = (up - down) / (2 * h)
                assert fd == pytest.approx(grad[i, j], rel=1e-5)


def test_grad_batch_duplication_invariance():
    # mean-reduction invariance: exact for the CE and sparsity parts; the
    # centroid term rescales because the per-batch class counts double
    batch, gfm, ctx, anchors, centroids, _ = make_setup(lam=(0.01, 0.0, 1.0))
    x, labels = batch
    cfg = FmmConfig(lam=(0.01, 0.0, 1.0))
    doubled = (np.concatenate([x, x]), np.concatenate([labels, labels]))
    g1 = grad_total_loss(batch, gfm, ctx, anchors, centroids, cfg)
    g2 = grad_total_loss(doubled, gfm, ctx, anchors, centroids, cfg)
    assert np.allclose(g1[0], g2[0], atol=1e-12)
    assert np.allclose(g1[1], g2[1], atol=1e-12)


def test_grad_isolation_from_stored_state():
    # perturbing non-trainable tensors leaves the loss untouched
    batch, gfm, ctx, anchors, centroids, cfg = make_setup()
    base = total_loss(batch, gfm, ctx, anchors, centroids, cfg)
    frozen_view = ctx.frozen.copy()
    loss_again = total_loss(batch, gfm, ctx, anchors, centroids, cfg)
    assert loss_again == base
    assert np.array_equal(ctx.frozen, frozen_view)


def adam_reference(params, grads, lr, steps):
    # straight-line published update rule
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    p = params.copy()
    for t in range(1, steps + 1):
        g = grads[t - 1]
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1 - 0.9**t)
        v_hat = v / (1 - 0.999**t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
    return p


def test_optimizer_matches_reference():
    rng = np.random.default_rng(11)
    p = rng.standard_normal((4, 4))
    grads = [rng.standard_normal((4, 4)) for _ in range(100)]
    opt = AdamState.like(p)
    mine = p.copy()
    for g in grads:
        mine = optimizer_step(mine, g, opt, lr=0.01)
    assert np.max(np.abs(mine - adam_reference(p, grads, 0.01, 100))) < 1e-12


def test_optimizer_zero_gradient_fixed_point():
    p = np.ones((3, 3))
    opt = AdamState.like(p)
    out = optimizer_step(p, np.zeros_like(p), opt, lr=0.1)
    assert np.array_equal(out, p)
    for _ in range(5):
        out = optimizer_step(out, np.zeros_like(p), opt, lr=0.1)
    assert np.array_equal(out, p)
    assert np.all(opt.m == 0) and np.all(opt.v == 0)


def test_optimizer_first_step_magnitude():
    p = np.zeros((2, 2))
    g = np.array([[10.0, -5.0], [2.0, -8.0]])
    opt = AdamState.like(p)
    out = optimizer_step(p, g, opt, lr=0.01)
    assert np.allclose(np.abs(out), 0.01, rtol=1e-6)
    assert np.array_equal(np.sign(out), -np.sign(g))


def test_optimizer_rejects_non_finite():
    p = np.ones(3)
    opt = AdamState.like(p)
    with pytest.raises(ValueError, match="bad_param"):
        optimizer_step(p, np.array([1.0, np.nan, 0.0]), opt, lr=0.1, name="bad_param")


def test_schedule_lr_milestones():
    assert schedule_lr(0.01, 11, (4, 10), 0.1) == pytest.approx(0.0001)
    assert schedule_lr(0.01, 3, (4, 10), 0.1) == pytest.approx(0.01)
    assert schedule_lr(0.01, 4, (4, 10), 0.1) == pytest.approx(0.001)


def test_schedule_epoch_growth():
    sched = ScheduleConfig(epochs_per_task=25, epoch_growth=2)
    assert sched.epochs_for_task(1) == 25
    assert sched.epochs_for_task(4) == 31
    flat = ScheduleConfig(epochs_per_task=15, epoch_growth=0)
    assert flat.epochs_for_task(7) == 15


def micro_learner(d=8, n_classes=2, seed=0, **flags):
    from subspacecil.hlm import init_decomposition

    gfm = gfm_init(d, np.random.SeedSequence([seed, 11]))
    hlm = init_decomposition(d, 2, np.random.SeedSequence([seed, 12]))
    return LearnerState(
        fmm=FmmConfig(),
        gfm=gfm,
        hlm=hlm,
        dense=None,
        anchors=ClassAnchors(np.zeros((0, d)), np.zeros(0, dtype=np.int64)),
        anchor_seed=seed,
        **flags,
    )


def micro_task(d=8, seed=0, n_per=30, sep=4.0):
    rng = np.random.default_rng(seed)
    mu0, mu1 = rng.standard_normal(d), rng.standard_normal(d)
    mu0 *= sep / np.linalg.norm(mu0)
    mu1 *= -sep / np.linalg.norm(mu1)
    x = np.concatenate(
        [mu0 + 0.3 * rng.standard_normal((n_per, d)), mu1 + 0.3 * rng.standard_normal((n_per, d))]
    )
    y = np.concatenate([np.zeros(n_per, dtype=np.int64), np.ones(n_per, dtype=np.int64)])
    return x, y


def test_loss_decreases_on_separable_micro_problem():
    sched = ScheduleConfig(epochs_per_task=50, epoch_growth=0, milestones=(), batch_size=16)
    for seed in range(10):
        state = micro_learner(seed=seed)
        x, y = micro_task(seed=seed)
        state, records = train_task(state, (x, y), {}, sched, seed)
        assert records[-1].loss_total < records[0].loss_total


def test_train_task_first_task_no_replay_and_determinism():
    sched = ScheduleConfig(epochs_per_task=3, epoch_growth=0, batch_size=16)
    runs = []
    for _ in range(2):
        state = micro_learner(seed=5)
        x, y = micro_task(seed=5)
        state, records = train_task(state, (x, y), {}, sched, seed=5)
        runs.append(state)
        assert len(records) == 3
        assert state.tasks_done == 1
        assert sorted(state.stats) == [0, 1]
    assert np.array_equal(runs[0].gfm.theta, runs[1].gfm.theta)
    assert np.array_equal(runs[0].hlm.u, runs[1].hlm.u)
    assert np.array_equal(runs[0].anchors.anchors, runs[1].anchors.anchors)


def test_train_task_inputs_never_written():
    sched = ScheduleConfig(epochs_per_task=2, epoch_growth=0, batch_size=16)
    state = micro_learner(seed=6)
    x, y = micro_task(seed=6)
    x.setflags(write=False)
    y.setflags(write=False)
    snapshot = x.copy()
    train_task(state, (x, y), {}, sched, seed=6)
    assert np.array_equal(x, snapshot)


def test_train_task_respects_stats_for_replay():
    sched = ScheduleConfig(epochs_per_task=2, epoch_growth=0, batch_size=16, replay_per_epoch=40)
    state = micro_learner(seed=7)
    x1, y1 = micro_task(seed=7)
    state, _ = train_task(state, (x1, y1), {}, sched, seed=7)
    x2, y2 = micro_task(seed=8)
    y2 = y2 + 2
    state, _ = train_task(state, (x2, y2), dict(state.stats), sched, seed=7)
    assert state.tasks_done == 2
    assert sorted(state.stats) == [0, 1, 2, 3]
    assert sorted(int(c) for c in state.anchors.class_ids) == [0, 1, 2, 3]


def test_seeded_anchor_unit_and_stable():
    a = seeded_anchor(3, 17, 32)
    b = seeded_anchor(3, 17, 32)
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    assert not np.allclose(a, seeded_anchor(3, 18, 32))
