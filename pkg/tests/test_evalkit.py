import numpy as np
import pytest

from subspacecil.config import resolve_config
from subspacecil.evalkit import (
    avg_last,
    evaluate_seen,
    evaluate_tasks,
    forgetting,
    update_overlap_matrix,
)
from subspacecil.learner import _append_anchors
from subspacecil.runner import build_learner, build_stream


def test_avg_last_examples():
    assert avg_last([0.9, 0.8]) == (pytest.approx(0.85), 0.8)
    assert avg_last([0.7, 0.7, 0.7]) == (pytest.approx(0.7), 0.7)
    assert avg_last([0.42]) == (pytest.approx(0.42), 0.42)
    with pytest.raises(ValueError):
        avg_last([])


def test_avg_last_permutation():
    curve = [0.5, 0.9, 0.7]
    permuted = [0.9, 0.7, 0.5]
    assert avg_last(curve)[0] == pytest.approx(avg_last(permuted)[0])
    assert avg_last(curve)[1] == 0.7
    assert avg_last(permuted)[1] == 0.5


def test_forgetting():
    acc = np.array([[0.9, np.nan], [0.6, 0.95]])
    assert forgetting(acc) == pytest.approx(0.3)
    assert forgetting(np.array([[0.8]])) == 0.0


def small_cfg(seed=0, classes=10, tasks=2):
    return resolve_config(
        overrides={
            "data.d": "16",
            "data.classes_per_task": str(classes),
            "data.num_tasks": str(tasks),
            "data.train_per_class": "10",
            "data.test_per_class": "40",
            "run.seed": str(seed),
        }
    )


def test_converged_single_task_zero_noise():
    # separable (zero-spread) single task trained to convergence
    cfg = resolve_config(
        overrides={
            "data.num_tasks": "1",
            "data.spread": "0.0",
            "schedule.epochs_per_task": "60",
            "schedule.epoch_growth": "0",
            "schedule.milestones": "",
            "schedule.batch_size": "16",
            "run.seed": "0",
        }
    )
    from subspacecil.runner import run_experiment

    result = run_experiment(cfg)
    assert result.last >= 0.99


def test_untrained_learner_at_chance():
    # predictions of an untrained model correlate within a class cluster, so
    # the binomial operates at cluster level: n = number of classes
    cfg = small_cfg(classes=10, tasks=5)
    stream = build_stream(cfg)
    state = build_learner(cfg, stream)
    _append_anchors(state, list(range(50)))
    acc = evaluate_seen(state, stream, 5)
    p = 1.0 / 50
    sigma = np.sqrt(p * (1 - p) / 50)
    assert abs(acc - p) < 3 * sigma + 1e-9


def test_evaluation_pure_and_repeatable():
    cfg = small_cfg(classes=5)
    stream = build_stream(cfg)
    state = build_learner(cfg, stream)
    _append_anchors(state, list(range(10)))
    a = evaluate_tasks(state, stream, 2)
    b = evaluate_tasks(state, stream, 2)
    assert a == b
    union = evaluate_seen(state, stream, 2)
    assert union == sum(c for c, _ in a) / sum(t for _, t in a)


def test_overlap_identical_updates():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((8, 8))
    out = update_overlap_matrix([w, w.copy()], k=1)
    assert out[0, 1] == pytest.approx(1.0, abs=1e-10)
    assert out[0, 0] == 1.0


def test_overlap_disjoint_rank1():
    e = np.eye(10)
    updates = [np.outer(e[:, i], e[:, i + 5]) for i in range(4)]
    out = update_overlap_matrix(updates, k=1)
    off = out[~np.eye(4, dtype=bool)]
    assert np.max(np.abs(off)) < 1e-8
    assert np.all(np.diag(out) == 1.0)


def test_overlap_zero_update_sentinel():
    rng = np.random.default_rng(1)
    updates = [rng.standard_normal((6, 6)), np.zeros((6, 6)), rng.standard_normal((6, 6))]
    out = update_overlap_matrix(updates, k=1)
    assert np.isnan(out[1, 1])
    assert np.isnan(out[0, 1]) and np.isnan(out[1, 2])
    assert np.isfinite(out[0, 2])


def test_overlap_symmetric_unit_diag():
    rng = np.random.default_rng(2)
    updates = [rng.standard_normal((7, 7)) for _ in range(5)]
    out = update_overlap_matrix(updates, k=2)
    assert np.allclose(out, out.T, equal_nan=True)
    assert np.all(np.diag(out) == 1.0)


def test_overlap_validation():
    with pytest.raises(ValueError):
        update_overlap_matrix([np.eye(3)], k=1)
    with pytest.raises(ValueError):
        update_overlap_matrix([np.eye(3), np.eye(3)], k=4)
