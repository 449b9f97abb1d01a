"""Command-line front door: run, sweep, ablate, diagnose-overlap and
export-summary subcommands.

Every configuration key doubles as a flag (``--schedule.lr_gfm 0.01``), on
top of a config file given with --config. Invalid configuration exits with
status 2, runtime failures with 1. The environment variable
SUBSPACECIL_THREADS caps worker parallelism for sweep cells.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import SCHEMA, ConfigError, ExperimentConfig, parse_config_file, resolve_config
from .runner import SUMMARY_NAME, resume_experiment, run_experiment

__all__ = ["main"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file (key = value lines)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--profile", choices=("imagenet-style", "cifar-style"))
    parser.add_argument("--seed", type=int, help="alias for --run.seed")
    parser.add_argument("--hlm-forward", choices=("cumulative", "isolated"),
                        help="alias for --model.hlm_forward")
    parser.add_argument("--ablate", choices=("no-gfm", "no-hlm", "no-sparse", "no-lh"),
                        help="alias for --run.ablate")
    for key, spec in SCHEMA.items():
        parser.add_argument(f"--{key}", dest=f"cfg:{key}", metavar="V",
                            help=spec.help or argparse.SUPPRESS)


def _gather(args: argparse.Namespace) -> tuple[dict[str, str], str | None]:
    overrides: dict[str, str] = {}
    for name, value in vars(args).items():
        if name.startswith("cfg:") and value is not None:
            overrides[name[4:]] = value
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "hlm_forward", None):
        overrides["model.hlm_forward"] = args.hlm_forward
    if getattr(args, "ablate", None):
        overrides["run.ablate"] = args.ablate
    return overrides, args.profile


def _resolve(args: argparse.Namespace, extra: dict[str, str] | None = None) -> ExperimentConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides, profile = _gather(args)
    if extra:
        overrides.update(extra)
    return resolve_config(file_values, overrides, profile)


def _threads() -> int:
    raw = os.environ.get("SUBSPACECIL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    if args.resume:
        result = resume_experiment(cfg, args.resume, out_dir=args.out)
    else:
        result = run_experiment(cfg, out_dir=args.out)
    print(
        f"run complete: avg={result.avg:.4f} last={result.last:.4f} "
        f"forgetting={result.forgetting:.4f} drift={result.drift_warnings}"
    )
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    cells = [
        (q, seed)
        for q in cfg["sweep.q_grid"]
        for seed in cfg["sweep.seeds"]
    ]

    def one(cell):
        q, seed = cell
        sub = _resolve(args, {"gfm.q": str(q), "run.seed": str(seed)})
        out = os.path.join(args.out, f"q{q:g}_s{seed}")
        res = run_experiment(sub, out_dir=out)
        return q, seed, res.avg, res.last

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, cells))
    else:
        rows = [one(c) for c in cells]
    rows.sort(key=lambda r: (r[0], r[1]))

    os.makedirs(args.out, exist_ok=True)
    lines = ["q,seed,avg,last"] + [f"{q:g},{s},{a!r},{l!r}" for q, s, a, l in rows]
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"sweep complete: {len(rows)} cells -> {path}")
    return 0


_ABLATIONS = ("none", "no-gfm", "no-hlm", "no-sparse", "no-lh")


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    rows = []
    for ablate in _ABLATIONS:
        for seed in cfg["sweep.seeds"]:
            sub = _resolve(args, {"run.ablate": ablate, "run.seed": str(seed)})
            out = os.path.join(args.out, f"{ablate}_s{seed}")
            res = run_experiment(sub, out_dir=out)
            rows.append((ablate, seed, res.avg, res.last))
    os.makedirs(args.out, exist_ok=True)
    lines = ["ablation,seed,avg,last"] + [f"{a},{s},{av!r},{l!r}" for a, s, av, l in rows]
    path = os.path.join(args.out, "ablation.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"ablation complete: {len(rows)} runs -> {path}")
    return 0


def _cmd_diagnose_overlap(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    rows = []
    for variant in ("subspace", "seq-dense"):
        for seed in cfg["sweep.seeds"]:
            sub = _resolve(args, {"model.variant": variant, "run.seed": str(seed)})
            out = os.path.join(args.out, f"{variant}_s{seed}")
            res = run_experiment(sub, out_dir=out)
            if res.overlap is None:
                continue
            off = res.overlap[~np.eye(res.overlap.shape[0], dtype=bool)]
            mean_off = float(np.nanmean(off))
            rows.append((variant, seed, mean_off))
    os.makedirs(args.out, exist_ok=True)
    lines = ["variant,seed,mean_offdiag"] + [f"{v},{s},{m!r}" for v, s, m in rows]
    path = os.path.join(args.out, "overlap_summary.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"overlap diagnostic complete -> {path}")
    return 0


def _cmd_export_summary(args: argparse.Namespace) -> int:
    records = []
    for run_dir in args.runs:
        for path in sorted(glob.glob(os.path.join(run_dir, "**", SUMMARY_NAME), recursive=True)):
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            records.append((path, data))
    if not records:
        print("no summary records found", file=sys.stderr)
        return 1
    lines = ["path,avg,last,forgetting,drift_warnings,tasks"]
    for path, data in records:
        lines.append(
            f"{path},{data['avg']!r},{data['last']!r},{data['forgetting']!r},"
            f"{data['drift_warnings']},{data['tasks']}"
        )
    text = "\n".join(lines) + "\n"
    if args.out_file:
        with open(args.out_file, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {len(records)} records -> {args.out_file}")
    else:
        print(text, end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="subspacecil",
        description="Continual-learning engine: runs, sweeps, ablations, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single experiment")
    _add_common(p_run)
    p_run.add_argument("--resume", help="boundary checkpoint to continue from")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="threshold sweep over sweep.q_grid x sweep.seeds")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_abl = sub.add_parser("ablate", help="full model plus single-component ablations")
    _add_common(p_abl)
    p_abl.set_defaults(func=_cmd_ablate)

    p_diag = sub.add_parser("diagnose-overlap", help="update-subspace interference diagnostic")
    _add_common(p_diag)
    p_diag.set_defaults(func=_cmd_diagnose_overlap)

    p_exp = sub.add_parser("export-summary", help="collect summary records into one CSV")
    p_exp.add_argument("runs", nargs="+", help="run directories to scan")
    p_exp.add_argument("--out-file", help="write CSV here instead of stdout")
    p_exp.set_defaults(func=_cmd_export_summary)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract: exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
