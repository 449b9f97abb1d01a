"""Experiment orchestration: builds the task stream, drives training task by
task, evaluates after every boundary, and writes the run artifacts (per-epoch
log CSV, accuracy-curve CSV, overlap-matrix CSV, checkpoint, summary record).

Every artifact is written atomically (temp file + rename) and every random
stream is keyed by (seed, purpose, position), so a rerun with the same seed
or a resume from a boundary checkpoint reproduces the artifacts byte for
byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .config import ExperimentConfig
from .datastream import (
    SynthConfig,
    TaskStream,
    load_anchor_file,
    load_feature_file,
    split_tasks,
    synth_stream,
)
from .evalkit import avg_last, evaluate_tasks, forgetting, update_overlap_matrix
from .gfm import GfmState, gfm_init
from .hlm import component, init_decomposition
from .learner import (
    AdamState,
    ClassAnchors,
    EpochRecord,
    FmmConfig,
    LearnerState,
    ScheduleConfig,
    train_task,
)
from .replay import ClassStats

__all__ = ["RunResult", "build_stream", "build_learner", "run_experiment", "resume_experiment"]

CHECKPOINT_NAME = "checkpoint.bin"
SUMMARY_NAME = "summary.json"
EPOCH_LOG_NAME = "epoch_log.csv"
CURVE_NAME = "accuracy_curve.csv"
OVERLAP_NAME = "overlap_matrix.csv"


@dataclass
class RunResult:
    """Outcome of one experiment."""

    avg: float
    last: float
    forgetting: float
    drift_warnings: int
    drift_tasks: list[int]
    curve: list[float]
    acc_matrix: np.ndarray
    overlap: np.ndarray | None
    task_updates: list[np.ndarray] = field(repr=False, default_factory=list)
    step_log: list[dict] = field(repr=False, default_factory=list)
    summary: dict = field(repr=False, default_factory=dict)


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def build_stream(cfg: ExperimentConfig) -> TaskStream:
    if cfg["data.source"] == "synthetic":
        return synth_stream(
            SynthConfig(
                d=cfg["data.d"],
                classes_per_task=cfg["data.classes_per_task"],
                num_tasks=cfg["data.num_tasks"],
                train_per_class=cfg["data.train_per_class"],
                test_per_class=cfg["data.test_per_class"],
                inter_class_separation=cfg["data.separation"],
                cluster_spread=cfg["data.spread"],
                seed=cfg["data.seed"],
                shuffle_classes=cfg["data.shuffle_classes"],
            )
        )
    train = load_feature_file(cfg["data.train_file"])
    test = load_feature_file(cfg["data.test_file"])
    return split_tasks(train, test, base=cfg["data.base_classes"], inc=cfg["data.inc_classes"])


def _fmm_config(cfg: ExperimentConfig) -> FmmConfig:
    ablate = cfg["run.ablate"]
    a2 = 0.0 if ablate == "no-gfm" else cfg["fmm.alpha2"]
    a3 = 0.0 if ablate == "no-hlm" else cfg["fmm.alpha3"]
    l1 = 0.0 if ablate in ("no-gfm", "no-sparse") else cfg["fmm.lambda1"]
    l2 = 0.0 if ablate in ("no-hlm", "no-lh") else cfg["fmm.lambda2"]
    return FmmConfig(
        alpha=(cfg["fmm.alpha1"], a2, a3),
        lam=(l1, l2, cfg["fmm.lambda3"]),
        xi=cfg["fmm.xi"],
        temperature=cfg["fmm.temperature"],
    )


def build_learner(cfg: ExperimentConfig, stream: TaskStream) -> LearnerState:
    d = stream.d
    ablate = cfg["run.ablate"]
    variant = cfg["model.variant"]
    model_seed = cfg["model.seed"]

    gfm = gfm_init(
        d,
        np.random.SeedSequence([model_seed, 11]),
        c=cfg["gfm.c"],
        q=cfg["gfm.q"],
        beta=cfg["gfm.beta"],
    )
    hlm = None
    dense = None
    if variant == "seq-dense":
        rng = np.random.default_rng(np.random.SeedSequence([model_seed, 12]))
        bound = 1.0 / np.sqrt(d)
        n = stream.num_tasks
        dense = rng.uniform(-bound, bound, (d, n)) @ rng.uniform(-bound, bound, (n, d))
    else:
        hlm = init_decomposition(d, stream.num_tasks, np.random.SeedSequence([model_seed, 12]))

    anchor_table = None
    if cfg["data.source"] == "file" and cfg["data.anchors_file"]:
        ids, rows, _ = load_anchor_file(cfg["data.anchors_file"])
        # file rows are unit within 1e-6 (f32 payload); the in-memory type
        # demands 1e-10, so renormalize in float64
        rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        anchor_table = (ids, rows)

    return LearnerState(
        fmm=_fmm_config(cfg),
        gfm=gfm,
        hlm=hlm,
        dense=dense,
        anchors=ClassAnchors(np.zeros((0, d)), np.zeros(0, dtype=np.int64)),
        anchor_seed=model_seed,
        anchor_table=anchor_table,
        variant=variant,
        hlm_forward=cfg["model.hlm_forward"],
        hlm_lr_scale=cfg["model.hlm_lr_scale"],
        train_gfm=ablate != "no-gfm",
        train_adapter=ablate != "no-hlm",
        fuse_gfm=cfg["gfm.fuse"] and ablate != "no-gfm",
        fuse_first_task=cfg["gfm.fuse_first_task"],
        replay_diagonal=cfg["replay.diagonal_only"],
    )


def _schedule(cfg: ExperimentConfig) -> ScheduleConfig:
    return ScheduleConfig(
        epochs_per_task=cfg["schedule.epochs_per_task"],
        epoch_growth=cfg["schedule.epoch_growth"],
        lr_gfm=cfg["schedule.lr_gfm"],
        lr_hlm=cfg["schedule.lr_hlm"],
        milestones=tuple(cfg["schedule.milestones"]),
        decay=cfg["schedule.decay"],
        batch_size=cfg["schedule.batch_size"],
        replay_per_epoch=cfg["replay.per_epoch"],
    )


def _epoch_rows(records: list[EpochRecord]) -> list[str]:
    rows = []
    for r in records:
        rows.append(
            f"{r.task},{r.epoch},{r.loss_total!r},{r.loss_sparse!r},"
            f"{r.loss_hier!r},{r.loss_ce!r},{r.lr_gfm!r},{r.lr_hlm!r},{r.drift_total}"
        )
    return rows


def _write_artifacts(
    out_dir: str,
    cfg: ExperimentConfig,
    state: LearnerState,
    epoch_rows: list[str],
    acc_matrix: np.ndarray,
    curve: list[float],
    task_updates: list[np.ndarray],
    overlap_k: int,
) -> RunResult:
    avg, last = avg_last(curve)
    forg = forgetting(acc_matrix)
    drift_tasks = list(state.hlm.drift_events) if state.hlm is not None else []
    drift = len(drift_tasks)

    os.makedirs(out_dir, exist_ok=True)
    header = "task,epoch,loss_total,loss_sparse,loss_hier,loss_ce,lr_gfm,lr_hlm,drift_total"
    _atomic_write_text(os.path.join(out_dir, EPOCH_LOG_NAME), "\n".join([header] + epoch_rows) + "\n")

    n = len(curve)
    curve_lines = ["step,acc_seen," + ",".join(f"acc_task{j + 1}" for j in range(n))]
    for t in range(n):
        per_task = [
            f"{acc_matrix[t, j]!r}" if t >= j else "" for j in range(n)
        ]
        curve_lines.append(f"{t + 1},{curve[t]!r}," + ",".join(per_task))
    _atomic_write_text(os.path.join(out_dir, CURVE_NAME), "\n".join(curve_lines) + "\n")

    overlap = None
    if len(task_updates) >= 2:
        overlap = update_overlap_matrix(task_updates, k=overlap_k)
        lines = ["i,j,overlap"]
        for i in range(overlap.shape[0]):
            for j in range(overlap.shape[1]):
                lines.append(f"{i + 1},{j + 1},{overlap[i, j]!r}")
        _atomic_write_text(os.path.join(out_dir, OVERLAP_NAME), "\n".join(lines) + "\n")

    summary = {
        "avg": avg,
        "last": last,
        "forgetting": forg,
        "drift_warnings": drift,
        "drift_tasks": drift_tasks,
        "tasks": n,
        "curve": curve,
        "config": cfg.echo(),
    }
    _atomic_write_text(
        os.path.join(out_dir, SUMMARY_NAME),
        json.dumps(summary, sort_keys=True, indent=2) + "\n",
    )
    return RunResult(
        avg=avg,
        last=last,
        forgetting=forg,
        drift_warnings=drift,
        drift_tasks=drift_tasks,
        curve=curve,
        acc_matrix=acc_matrix,
        overlap=overlap,
        task_updates=task_updates,
        step_log=list(state.step_log),
        summary=summary,
    )


def _state_sections(
    cfg: ExperimentConfig,
    state: LearnerState,
    epoch_rows: list[str],
    acc_rows: list[list[float]],
    curve: list[float],
    task_updates: list[np.ndarray],
) -> dict[str, object]:
    gfm = state.gfm
    sections: dict[str, object] = {
        "meta": {
            "format": "subspacecil-run",
            "d": int(gfm.theta.shape[0]),
            "tasks_done": state.tasks_done,
            "config": cfg.echo(),
        },
        "gfm": {
            "theta": gfm.theta,
            "theta_old": gfm.theta_old,
            "c": gfm.c,
            "q": gfm.q,
            "beta": gfm.beta,
        },
        "anchors": {
            "rows": state.anchors.anchors,
            "class_ids": state.anchors.class_ids,
        },
        "stats": {
            str(cid): {
                "mu": st.mu,
                "cov": st.cov,
                "count": st.sample_count,
            }
            for cid, st in state.stats.items()
        },
        "progress": {
            "epoch_rows": epoch_rows,
            "acc_rows": [list(map(float, row)) for row in acc_rows],
            "curve": [float(a) for a in curve],
            "task_updates": list(task_updates),
            "step_log": state.step_log,
        },
        "rng": {
            "scheme": "keyed-streams",
            "run_seed": cfg["run.seed"],
            "model_seed": cfg["model.seed"],
            "data_seed": cfg["data.seed"],
        },
        "optimizers": {
            "gfm": _opt_section(state.last_opt_gfm),
            "hlm": _opt_section(state.last_opt_hlm),
        },
    }
    if state.hlm is not None:
        sections["hlm"] = {
            "u": state.hlm.u,
            "sigma": state.hlm.sigma,
            "v": state.hlm.v,
            "scales": state.hlm.scales,
            "trained_upto": state.hlm.trained_upto,
            "task_order": list(state.hlm.task_order),
            "drift_events": list(state.hlm.drift_events),
        }
    if state.dense is not None:
        sections["dense"] = {"w": state.dense}
    return sections


def _opt_section(opt: AdamState | None):
    if opt is None:
        return None
    return {"m": opt.m, "v": opt.v, "step_count": opt.step_count}


def _restore_state(cfg: ExperimentConfig, stream: TaskStream, sections: dict) -> LearnerState:
    meta = sections["meta"]
    if meta.get("d") != stream.d:
        raise ckpt.CheckpointError(
            f"checkpoint dimension {meta.get('d')} does not match stream dimension {stream.d}"
        )
    state = build_learner(cfg, stream)
    g = sections["gfm"]
    state.gfm = GfmState(
        theta=g["theta"], theta_old=g["theta_old"], c=g["c"], q=g["q"], beta=g["beta"]
    )
    a = sections["anchors"]
    state.anchors = ClassAnchors(anchors=a["rows"], class_ids=a["class_ids"].astype(np.int64))
    state.stats = {
        int(cid): ClassStats(
            class_id=int(cid), mu=st["mu"], cov=st["cov"], sample_count=int(st["count"])
        )
        for cid, st in sections["stats"].items()
    }
    if "hlm" in sections and state.hlm is not None:
        h = sections["hlm"]
        state.hlm.u = h["u"]
        state.hlm.sigma = h["sigma"]
        state.hlm.v = h["v"]
        state.hlm.scales = h["scales"]
        state.hlm.trained_upto = int(h["trained_upto"])
        state.hlm.task_order = [int(t) for t in h["task_order"]]
        state.hlm.drift_events = [int(t) for t in h["drift_events"]]
    if "dense" in sections:
        state.dense = sections["dense"]["w"]
    state.tasks_done = int(meta["tasks_done"])
    state.step_log = list(sections["progress"]["step_log"])
    return state


def _task_update(state: LearnerState, task: int, adapter_before: np.ndarray) -> np.ndarray:
    """The parameter change task ``task`` contributed at inference scale.

    For the subspace module this is the newly activated scaled component
    (its assigned rank-1 share of the inference weight); re-factorization
    jitter on earlier components is not this task's update. For the dense
    adapter the whole interval delta is the task's update.
    """
    if state.variant == "subspace" and state.hlm is not None and state.train_adapter:
        comp_idx = state.hlm.task_order[task - 1] + 1
        return state.hlm.scales[task - 1] * component(state.hlm, comp_idx)
    return state.inference_adapter() - adapter_before


def _run_tasks(
    cfg: ExperimentConfig,
    stream: TaskStream,
    state: LearnerState,
    out_dir: str | None,
    epoch_rows: list[str],
    acc_rows: list[list[float]],
    curve: list[float],
    task_updates: list[np.ndarray],
) -> RunResult:
    schedule = _schedule(cfg)
    seed = cfg["run.seed"]
    stop_after = cfg["run.stop_after_task"] or stream.num_tasks
    n_total = stream.num_tasks

    for i in range(state.tasks_done + 1, min(stop_after, n_total) + 1):
        train_set, _ = stream.tasks[i - 1]
        before = state.inference_adapter()
        state, records = train_task(
            state,
            (train_set.features, train_set.labels),
            dict(state.stats),
            schedule,
            seed,
        )
        task_updates.append(_task_update(state, i, before))
        epoch_rows.extend(_epoch_rows(records))

        counts = evaluate_tasks(state, stream, state.tasks_done)
        row = [c / t for c, t in counts]
        acc_rows.append(row)
        curve.append(sum(c for c, _ in counts) / sum(t for _, t in counts))

        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            ckpt.save_sections(
                os.path.join(out_dir, CHECKPOINT_NAME),
                _state_sections(cfg, state, epoch_rows, acc_rows, curve, task_updates),
            )

    n_done = state.tasks_done
    acc_matrix = np.full((n_done, n_done), np.nan)
    for t, row in enumerate(acc_rows):
        acc_matrix[t, : len(row)] = row

    if out_dir is not None:
        return _write_artifacts(
            out_dir, cfg, state, epoch_rows, acc_matrix, curve, task_updates,
            cfg["eval.overlap_k"],
        )
    avg, last = avg_last(curve)
    drift_tasks = list(state.hlm.drift_events) if state.hlm is not None else []
    return RunResult(
        avg=avg,
        last=last,
        forgetting=forgetting(acc_matrix),
        drift_warnings=len(drift_tasks),
        drift_tasks=drift_tasks,
        curve=curve,
        acc_matrix=acc_matrix,
        overlap=update_overlap_matrix(task_updates, k=cfg["eval.overlap_k"])
        if len(task_updates) >= 2
        else None,
        task_updates=task_updates,
        step_log=list(state.step_log),
    )


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> RunResult:
    """Run a full experiment from scratch."""
    stream = build_stream(cfg)
    state = build_learner(cfg, stream)
    return _run_tasks(cfg, stream, state, out_dir, [], [], [], [])


def resume_experiment(cfg: ExperimentConfig, checkpoint_path: str, out_dir: str | None = None) -> RunResult:
    """Continue a run from a boundary checkpoint; byte-identical to an
    uninterrupted run with the same configuration."""
    sections = ckpt.load_sections(checkpoint_path)
    stream = build_stream(cfg)
    state = _restore_state(cfg, stream, sections)
    progress = sections["progress"]
    return _run_tasks(
        cfg,
        stream,
        state,
        out_dir,
        list(progress["epoch_rows"]),
        [list(r) for r in progress["acc_rows"]],
        [float(a) for a in progress["curve"]],
        [np.asarray(u) for u in progress["task_updates"]],
    )
