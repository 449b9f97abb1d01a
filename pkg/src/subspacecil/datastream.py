"""Task-sequence construction: synthetic class-incremental streams, base /
increment splitting, and the binary/CSV feature-file formats.

Binary layout (little-endian): magic "FCIL", u32 version = 1, u32 d, u64 n,
then n records of (u32 class_id, d * f32 features), then an optional trailing
class-name table: u32 count, each entry (u32 class_id, u16 len, UTF-8 bytes).
The CSV alternative expects the header ``class_id,f0,...,f{d-1}``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import gaussian_sample

__all__ = [
    "FeatureFileError",
    "FeatureSet",
    "TaskStream",
    "SynthConfig",
    "synth_stream",
    "split_tasks",
    "load_feature_file",
    "save_feature_file",
    "load_anchor_file",
    "save_anchor_file",
]

_MAGIC = b"FCIL"
_VERSION = 1


class FeatureFileError(ValueError):
    """Feature-file rejection with a machine-readable code.

    Codes: bad-magic, bad-version, truncated, trailing-bytes, non-finite,
    bad-header, bad-dim.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass
class FeatureSet:
    """Labeled d-dimensional feature vectors."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    class_names: dict[int, str] | None = None

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))


@dataclass
class TaskStream:
    """Ordered (train, test) pairs with disjoint class groups."""

    tasks: list[tuple[FeatureSet, FeatureSet]]
    base_classes: int
    inc_classes: int
    class_names: dict[int, str] | None = None

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def d(self) -> int:
        return self.tasks[0][0].d

    def classes_upto(self, upto: int) -> list[int]:
        out: list[int] = []
        for train, _ in self.tasks[:upto]:
            out.extend(train.classes())
        return out


@dataclass
class SynthConfig:
    """Desk-scale synthetic stream settings.

    Per class, a mean is drawn uniformly on the sphere of radius
    ``inter_class_separation`` and an anisotropic covariance with spectral
    norm at most cluster_spread^2; train and test sets are sampled i.i.d.
    """

    d: int = 64
    classes_per_task: int = 10
    num_tasks: int = 10
    train_per_class: int = 100
    test_per_class: int = 20
    inter_class_separation: float = 10.0
    cluster_spread: float = 1.0
    seed: int = 0
    shuffle_classes: bool = False

    def __post_init__(self):
        for name in ("d", "classes_per_task", "num_tasks", "train_per_class", "test_per_class"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.inter_class_separation <= 0:
            raise ValueError("inter_class_separation must be positive")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be non-negative")


def _class_distribution(cfg: SynthConfig, cid: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, cid]))
    direction = rng.standard_normal(cfg.d)
    direction /= np.linalg.norm(direction)
    mean = cfg.inter_class_separation * direction
    if cfg.cluster_spread == 0.0:
        return mean, np.zeros((cfg.d, cfg.d))
    q, _ = np.linalg.qr(rng.standard_normal((cfg.d, cfg.d)))
    eigs = cfg.cluster_spread**2 * rng.uniform(0.2, 1.0, cfg.d)
    cov = (q * eigs) @ q.T
    return mean, (cov + cov.T) / 2.0


def synth_stream(cfg: SynthConfig) -> TaskStream:
    """Generate a deterministic synthetic stream and split it into tasks."""
    n_classes = cfg.classes_per_task * cfg.num_tasks
    order = np.arange(n_classes)
    if cfg.shuffle_classes:
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 0])
        ).permutation(n_classes)

    train_feats, train_labs, test_feats, test_labs = [], [], [], []
    for slot, cid in enumerate(order):
        mean, cov = _class_distribution(cfg, int(cid))
        train = gaussian_sample(
            mean, cov, cfg.train_per_class, np.random.SeedSequence([cfg.seed, 2, int(cid)])
        )
        test = gaussian_sample(
            mean, cov, cfg.test_per_class, np.random.SeedSequence([cfg.seed, 3, int(cid)])
        )
        # slot index becomes the public class id so a shuffled stream still
        # splits in ascending order
        train_feats.append(train)
        train_labs.append(np.full(cfg.train_per_class, slot, dtype=np.int64))
        test_feats.append(test)
        test_labs.append(np.full(cfg.test_per_class, slot, dtype=np.int64))

    train_set = FeatureSet(np.concatenate(train_feats), np.concatenate(train_labs))
    test_set = FeatureSet(np.concatenate(test_feats), np.concatenate(test_labs))
    return split_tasks(train_set, test_set, base=0, inc=cfg.classes_per_task)


def split_tasks(train: FeatureSet, test: FeatureSet, base: int, inc: int) -> TaskStream:
    """Partition by ascending class id: ``base`` classes first (or ``inc``
    when base = 0), then ``inc`` per incremental task."""
    classes = train.classes()
    total = len(classes)
    first = base if base > 0 else inc
    if first > total or inc <= 0:
        raise ValueError(f"cannot split {total} classes as base={base} inc={inc}")
    if (total - first) % inc != 0:
        raise ValueError(
            f"non-divisible remainder: {total} classes with base={base} inc={inc}"
        )

    groups = [classes[:first]]
    for start in range(first, total, inc):
        groups.append(classes[start : start + inc])

    tasks = []
    for group in groups:
        gset = set(group)
        tr_mask = np.array([int(l) in gset for l in train.labels])
        te_mask = np.array([int(l) in gset for l in test.labels])
        if not tr_mask.any() or not te_mask.any():
            raise ValueError(f"empty task for classes {group}")
        tasks.append(
            (
                FeatureSet(train.features[tr_mask], train.labels[tr_mask]),
                FeatureSet(test.features[te_mask], test.labels[te_mask]),
            )
        )
    names = train.class_names or test.class_names
    return TaskStream(tasks=tasks, base_classes=base, inc_classes=inc, class_names=names)


def _read_exact(buf: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise FeatureFileError("truncated", f"payload ends inside {what}")
    return buf[offset : offset + count], offset + count


def load_feature_file(path: str) -> FeatureSet:
    """Load the binary (or .csv) feature format; rejects non-finite values."""
    if str(path).endswith(".csv"):
        return _load_csv(path)
    with open(path, "rb") as fh:
        buf = fh.read()

    raw, off = _read_exact(buf, 0, 4, "magic")
    if raw != _MAGIC:
        raise FeatureFileError("bad-magic", f"expected {_MAGIC!r}, got {raw!r}")
    raw, off = _read_exact(buf, off, 4, "version")
    version = struct.unpack("<I", raw)[0]
    if version != _VERSION:
        raise FeatureFileError("bad-version", f"unsupported version {version}")
    raw, off = _read_exact(buf, off, 4, "dimension")
    d = struct.unpack("<I", raw)[0]
    if d == 0:
        raise FeatureFileError("bad-dim", "zero feature dimension")
    raw, off = _read_exact(buf, off, 8, "record count")
    n = struct.unpack("<Q", raw)[0]

    record = 4 + 4 * d
    raw, off = _read_exact(buf, off, n * record, "records")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(n, record)
    labels = rows[:, :4].copy().view("<u4").ravel().astype(np.int64)
    features = rows[:, 4:].copy().view("<f4").astype(np.float64)

    names: dict[int, str] | None = None
    if off < len(buf):
        raw, off = _read_exact(buf, off, 4, "name table header")
        count = struct.unpack("<I", raw)[0]
        names = {}
        for _ in range(count):
            raw, off = _read_exact(buf, off, 6, "name entry header")
            cid, length = struct.unpack("<IH", raw)
            raw, off = _read_exact(buf, off, length, "name entry")
            names[cid] = raw.decode("utf-8")
    if off != len(buf):
        raise FeatureFileError("trailing-bytes", f"{len(buf) - off} unexpected bytes")
    if not np.all(np.isfinite(features)):
        raise FeatureFileError("non-finite", "features contain NaN or Inf")
    return FeatureSet(features=features, labels=labels, class_names=names)


def _load_csv(path: str) -> FeatureSet:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if cols[0] != "class_id" or any(
            c != f"f{i}" for i, c in enumerate(cols[1:])
        ):
            raise FeatureFileError("bad-header", f"unexpected header {header!r}")
        d = len(cols) - 1
        if d == 0:
            raise FeatureFileError("bad-dim", "no feature columns")
        labels = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 1:
                raise FeatureFileError(
                    "truncated", f"line {lineno} has {len(parts)} columns, expected {d + 1}"
                )
            labels.append(int(parts[0]))
            rows.append([float(p) for p in parts[1:]])
    features = np.asarray(rows, dtype=np.float64).reshape(len(rows), d)
    if not np.all(np.isfinite(features)):
        raise FeatureFileError("non-finite", "features contain NaN or Inf")
    return FeatureSet(features=features, labels=np.asarray(labels, dtype=np.int64))


def save_feature_file(
    path: str,
    features: np.ndarray,
    labels: np.ndarray,
    class_names: dict[int, str] | None = None,
) -> None:
    """Write the binary format (features stored as f32)."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    n, d = features.shape
    parts = [_MAGIC, struct.pack("<IIQ", _VERSION, d, n)]
    body = np.empty((n, 4 + 4 * d), dtype=np.uint8)
    body[:, :4] = labels.astype("<u4").view(np.uint8).reshape(n, 4)
    body[:, 4:] = features.astype("<f4").view(np.uint8).reshape(n, 4 * d)
    parts.append(body.tobytes())
    if class_names is not None:
        parts.append(struct.pack("<I", len(class_names)))
        for cid in sorted(class_names):
            encoded = class_names[cid].encode("utf-8")
            parts.append(struct.pack("<IH", cid, len(encoded)))
            parts.append(encoded)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_anchor_file(path: str) -> tuple[np.ndarray, np.ndarray, dict[int, str] | None]:
    """Anchor table in the feature format: one unit-norm row per class.

    Returns (class_ids, anchors, names); rows must be unit within 1e-6.
    """
    fs = load_feature_file(path)
    ids, counts = np.unique(fs.labels, return_counts=True)
    if np.any(counts > 1):
        raise FeatureFileError("bad-header", "duplicate class id in anchor table")
    norms = np.linalg.norm(fs.features, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise FeatureFileError("bad-header", f"anchor rows not unit-norm (dev {worst:.2e})")
    order = np.argsort(fs.labels)
    return fs.labels[order], fs.features[order], fs.class_names


def save_anchor_file(
    path: str,
    class_ids: np.ndarray,
    anchors: np.ndarray,
    class_names: dict[int, str] | None = None,
) -> None:
    save_feature_file(path, anchors, class_ids, class_names)
