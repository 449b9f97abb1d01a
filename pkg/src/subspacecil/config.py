"""Experiment configuration: a flat dotted-key schema, a diff-friendly
key = value file format, and command-line overrides for every key.

Precedence is defaults < profile < config file < command-line flags. Unknown
keys are rejected before any training starts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

__all__ = ["ConfigError", "SCHEMA", "PROFILES", "ExperimentConfig", "resolve_config"]


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(p) for p in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(p) for p in text.split(","))


@dataclass(frozen=True)
class _Key:
    parse: Any
    default: Any
    choices: tuple | None = None
    help: str = ""


# One entry per configurable key. The CLI registers a flag of the same name
# for each, so everything in a config file is overridable on the command line.
SCHEMA: dict[str, _Key] = {
    "data.source": _Key(str, "synthetic", ("synthetic", "file"), "where features come from"),
    "data.d": _Key(int, 64, None, "feature dimension (synthetic)"),
    "data.classes_per_task": _Key(int, 10),
    "data.num_tasks": _Key(int, 10),
    "data.train_per_class": _Key(int, 100),
    "data.test_per_class": _Key(int, 20),
    "data.separation": _Key(float, 10.0, None, "radius of the class-mean sphere"),
    "data.spread": _Key(float, 1.0, None, "max cluster standard deviation"),
    "data.seed": _Key(int, 0, None, "stream generation seed"),
    "data.shuffle_classes": _Key(_bool, False),
    "data.train_file": _Key(str, "", None, "feature file (data.source = file)"),
    "data.test_file": _Key(str, ""),
    "data.anchors_file": _Key(str, "", None, "optional anchor table"),
    "data.base_classes": _Key(int, 0),
    "data.inc_classes": _Key(int, 10),
    "model.seed": _Key(int, 0, None, "module init and anchor seed"),
    "model.variant": _Key(str, "subspace", ("subspace", "seq-dense")),
    "model.hlm_forward": _Key(str, "cumulative", ("cumulative", "isolated")),
    "model.hlm_lr_scale": _Key(str, "quadratic", ("quadratic", "linear", "plain"),
                               "power of s_i applied to the component step"),
    "fmm.alpha1": _Key(float, 1.0),
    "fmm.alpha2": _Key(float, 0.5),
    "fmm.alpha3": _Key(float, 0.5),
    "fmm.lambda1": _Key(float, 0.01),
    "fmm.lambda2": _Key(float, 0.1),
    "fmm.lambda3": _Key(float, 1.0),
    "fmm.xi": _Key(float, 0.2),
    "fmm.temperature": _Key(float, 100.0),
    "gfm.c": _Key(float, 0.6),
    "gfm.q": _Key(float, 0.9),
    "gfm.beta": _Key(float, 0.0005),
    "gfm.fuse": _Key(_bool, True),
    "gfm.fuse_first_task": _Key(_bool, False),
    "schedule.epochs_per_task": _Key(int, 25),
    "schedule.epoch_growth": _Key(int, 2),
    "schedule.lr_gfm": _Key(float, 0.001),
    "schedule.lr_hlm": _Key(float, 0.01),
    "schedule.milestones": _Key(_int_list, (4, 10)),
    "schedule.decay": _Key(float, 0.1),
    "schedule.batch_size": _Key(int, 32),
    "replay.per_epoch": _Key(int, 2000),
    "replay.diagonal_only": _Key(_bool, False),
    "eval.overlap_k": _Key(int, 1),
    "run.seed": _Key(int, 0, None, "training seed"),
    "run.ablate": _Key(str, "none", ("none", "no-gfm", "no-hlm", "no-sparse", "no-lh")),
    "run.stop_after_task": _Key(int, 0, None, "stop early after N tasks (0 = all)"),
    "sweep.seeds": _Key(_int_list, (0, 1, 2)),
    "sweep.q_grid": _Key(_float_list, (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)),
}

PROFILES = {
    "imagenet-style": {"schedule.epochs_per_task": 15, "schedule.epoch_growth": 0},
    "cifar-style": {"schedule.epochs_per_task": 25, "schedule.epoch_growth": 2},
}


@dataclass
class ExperimentConfig:
    """Resolved, validated configuration."""

    values: dict[str, Any]

    def __getitem__(self, key: str):
        return self.values[key]

    def echo(self) -> dict[str, Any]:
        """The exact resolved configuration, for embedding in summaries."""
        out = {}
        for key in sorted(self.values):
            val = self.values[key]
            out[key] = list(val) if isinstance(val, tuple) else val
        return out


def parse_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment."""
    raw: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = stripped.partition("=")
            raw[key.strip()] = value.strip()
    return raw


def resolve_config(
    file_values: dict[str, str] | None = None,
    overrides: dict[str, str] | None = None,
    profile: str | None = None,
) -> ExperimentConfig:
    """Apply precedence, parse types, validate choices and invariants."""
    values = {key: spec.default for key, spec in SCHEMA.items()}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        values.update(PROFILES[profile])

    for source_name, source in (("config file", file_values), ("override", overrides)):
        if not source:
            continue
        for key, text in source.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r} in {source_name}")
            spec = SCHEMA[key]
            try:
                value = spec.parse(text) if isinstance(text, str) else text
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
            values[key] = value

    for key, spec in SCHEMA.items():
        if spec.choices is not None and values[key] not in spec.choices:
            raise ConfigError(
                f"{key} must be one of {spec.choices}, got {values[key]!r}"
            )

    if values["data.source"] == "file":
        if not values["data.train_file"] or not values["data.test_file"]:
            raise ConfigError("data.source = file requires train_file and test_file")
    if not 0.0 < values["gfm.q"] <= 1.0:
        raise ConfigError(f"gfm.q={values['gfm.q']} outside (0, 1]")
    if not 0.5 <= values["gfm.c"] <= 0.7:
        raise ConfigError(f"gfm.c={values['gfm.c']} outside [0.5, 0.7]")
    if any(not 0.0 < q <= 1.0 for q in values["sweep.q_grid"]):
        raise ConfigError("sweep.q_grid entries must lie in (0, 1]")
    if values["schedule.decay"] <= 0 or values["schedule.decay"] > 1:
        raise ConfigError("schedule.decay must lie in (0, 1]")
    return ExperimentConfig(values=values)
