"""Domain types, configuration, dataset I/O, synthetic data, minibatching.

Matrices are plain C-order float64 numpy arrays throughout; rows are
instances. Augmented pairs ride in a 2M-row matrix with the two views of
original row ``i`` interleaved at rows ``2i`` and ``2i+1``, so the
positive-pair partner of row ``r`` is always ``r ^ 1``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path

import numpy as np

from . import augment
from .errors import (
    ConfigError,
    ContractError,
    DimensionMismatchError,
    ParseError,
    SchemaError,
)


class Mode(str, Enum):
    JOINT = "joint"
    INSTANCE_ONLY = "instance_only"
    CLUSTER_ONLY = "cluster_only"
    SEQUENTIAL = "sequential"


class ClusterLossVariant(str, Enum):
    ORIGINAL = "original"
    ANCHOR_SWAP = "anchor_swap"
    ORIGINAL_ANCHOR = "original_anchor"


@dataclass(frozen=True)
class TrainConfig:
    """All knobs of the joint objective plus optimizer and schedule settings.

    Defaults follow the standard recipe for this family of models:
    temperature 0.5, Student's-t degree of freedom 1, clustering weight 10,
    batch size 400, backbone/head learning rates 5e-6 / 5e-4, 128-d
    contrastive projections.
    """

    n_clusters: int
    embed_dim: int
    contrast_dim: int = 128
    temperature: float = 0.5
    alpha: float = 1.0
    eta: float = 10.0
    batch_size: int = 400
    lr_backbone: float = 5e-6
    lr_heads: float = 5e-4
    max_iters: int = 1000
    seed: int = 0
    mode: Mode = Mode.JOINT
    cluster_loss_variant: ClusterLossVariant = ClusterLossVariant.ORIGINAL
    encoder_depth: int = 1
    eta_on: str = "cluster"  # which loss term eta multiplies; "instance" flips it
    phase_split: int | None = None  # sequential mode boundary; default max_iters // 2
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(
            self, "cluster_loss_variant", ClusterLossVariant(self.cluster_loss_variant)
        )
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.n_clusters < 2:
            raise ConfigError(f"n_clusters must be >= 2, got {self.n_clusters}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.embed_dim < 1 or self.contrast_dim < 1:
            raise ConfigError("embed_dim and contrast_dim must be positive")
        if self.encoder_depth not in (0, 1, 2):
            raise ConfigError(f"encoder_depth must be 0, 1 or 2, got {self.encoder_depth}")
        if self.eta_on not in ("cluster", "instance"):
            raise ConfigError(f"eta_on must be 'cluster' or 'instance', got {self.eta_on!r}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")
        if self.phase_split is not None and not 0 <= self.phase_split <= self.max_iters:
            raise ConfigError("phase_split must lie in [0, max_iters]")

    def resolved_phase_split(self) -> int:
        return self.max_iters // 2 if self.phase_split is None else self.phase_split

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["cluster_loss_variant"] = self.cluster_loss_variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"n_clusters", "embed_dim"} - set(d)
        if missing:
            raise ConfigError(f"missing required config keys: {sorted(missing)}")
        return cls(**d)


def ensure_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-order float64 2-D array and reject non-finite entries."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got ndim={out.ndim}")
    if not np.all(np.isfinite(out)):
        raise ContractError(f"{name} contains non-finite entries")
    return out


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared euclidean distances between rows of ``a`` and rows of ``b``.

    Uses exact per-pair differences when the broadcast tensor is small
    (better cancellation behavior than the gram expansion); falls back to
    the gram expansion with clipping for large problems.
    """
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    if a.shape[0] * b.shape[0] * a.shape[1] <= 20_000_000:
        diff = a[:, None, :] - b[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


@dataclass
class Dataset:
    """Original instances with optional precomputed augmentation pairs and
    optional ground-truth labels."""

    vectors: np.ndarray
    aug1: np.ndarray | None = None
    aug2: np.ndarray | None = None
    labels: np.ndarray | None = None
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = ensure_matrix(self.vectors, "vectors")
        n, d = self.vectors.shape
        for name in ("aug1", "aug2"):
            a = getattr(self, name)
            if a is not None:
                a = ensure_matrix(a, name)
                if a.shape != (n, d):
                    raise DimensionMismatchError(
                        f"{name} shape {a.shape} != vectors shape {(n, d)}"
                    )
                setattr(self, name, a)
        if (self.aug1 is None) != (self.aug2 is None):
            raise SchemaError("aug1 and aug2 must be present together")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DimensionMismatchError("labels length must equal row count")
            if self.labels.size and self.labels.min() < 0:
                raise SchemaError("labels must be non-negative class indices")
        if not self.ids:
            self.ids = [str(i) for i in range(n)]
        elif len(self.ids) != n:
            raise DimensionMismatchError("ids length must equal row count")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def has_augmentations(self) -> bool:
        return self.aug1 is not None


@dataclass
class Minibatch:
    """One sampled batch: M original rows plus the 2M-row interleaved
    augmented batch (absent when the consumer never touches augmentations)."""

    orig: np.ndarray
    aug: np.ndarray | None
    orig_indices: np.ndarray

    def __post_init__(self):
        self.orig = ensure_matrix(self.orig, "orig")
        if self.aug is not None:
            self.aug = ensure_matrix(self.aug, "aug")
            if self.aug.shape[0] != 2 * self.orig.shape[0]:
                raise ContractError("aug row count must be twice orig row count")
        self.orig_indices = np.asarray(self.orig_indices, dtype=np.int64)
        if self.orig_indices.shape != (self.orig.shape[0],):
            raise ContractError("orig_indices length must equal orig row count")


@dataclass
class TraceRecord:
    """Per-logged-iteration snapshot; metric fields are None when the
    dataset has no labels (and loss fields when the mode never computes
    that term)."""

    iter: int
    loss_total: float | None = None
    loss_cluster: float | None = None
    loss_instance: float | None = None
    acc: float | None = None
    nmi: float | None = None
    intra_true: float | None = None
    inter_true: float | None = None
    intra_pred: float | None = None
    inter_pred: float | None = None


TRACE_COLUMNS = (
    "iter",
    "loss_total",
    "loss_cluster",
    "loss_instance",
    "acc",
    "nmi",
    "intra_true",
    "inter_true",
    "intra_pred",
    "inter_pred",
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_trace_csv(trace: list[TraceRecord], path: str | Path) -> None:
    lines = [",".join(TRACE_COLUMNS)]
    for rec in trace:
        lines.append(",".join(_cell(getattr(rec, col)) for col in TRACE_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace_csv(path: str | Path) -> list[TraceRecord]:
    rows = Path(path).read_text().strip().split("\n")
    if rows[0] != ",".join(TRACE_COLUMNS):
        raise SchemaError("unexpected trace CSV header")
    out = []
    for row in rows[1:]:
        cells = row.split(",")
        kwargs = {}
        for col, cell in zip(TRACE_COLUMNS, cells):
            if cell == "":
                kwargs[col] = None
            elif col == "iter":
                kwargs[col] = int(cell)
            else:
                kwargs[col] = float(cell)
        out.append(TraceRecord(**kwargs))
    return out


# ---------------------------------------------------------------------------
# Dataset file formats
# ---------------------------------------------------------------------------

def _finite_vector(raw, what: str, lineno: int) -> list[float]:
    try:
        vec = [float(v) for v in raw]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: {what} is not a number list") from exc
    if not all(math.isfinite(v) for v in vec):
        raise ParseError(f"line {lineno}: {what} contains non-finite values")
    return vec


def _load_jsonl(path: Path) -> Dataset:
    ids: list[str] = []
    vecs: list[list[float]] = []
    aug1: list[list[float] | None] = []
    aug2: list[list[float] | None] = []
    labels: list[int | None] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON") from exc
            if "vec" not in rec:
                raise SchemaError(f"line {lineno}: missing 'vec'")
            ids.append(str(rec.get("id", len(ids))))
            vecs.append(_finite_vector(rec["vec"], "vec", lineno))
            aug1.append(_finite_vector(rec["aug1"], "aug1", lineno) if "aug1" in rec else None)
            aug2.append(_finite_vector(rec["aug2"], "aug2", lineno) if "aug2" in rec else None)
            labels.append(int(rec["label"]) if "label" in rec and rec["label"] is not None else None)
    if not vecs:
        raise SchemaError(f"{path}: no records")
    dim = len(vecs[0])
    for i, v in enumerate(vecs):
        if len(v) != dim:
            raise DimensionMismatchError(f"record {i}: vec length {len(v)} != {dim}")
    n_aug = sum(1 for a, b in zip(aug1, aug2) if a is not None and b is not None)
    n_any = sum(1 for a, b in zip(aug1, aug2) if a is not None or b is not None)
    if n_any not in (0, len(vecs)) or n_aug != n_any:
        raise SchemaError("augmentations must cover every record (both aug1 and aug2) or none")
    if n_aug:
        for i, (a, b) in enumerate(zip(aug1, aug2)):
            if len(a) != dim or len(b) != dim:
                raise DimensionMismatchError(f"record {i}: augmentation length != {dim}")
    n_lab = sum(1 for l in labels if l is not None)
    if n_lab not in (0, len(vecs)):
        raise SchemaError("labels must cover every record or none")
    return Dataset(
        vectors=np.array(vecs, dtype=np.float64),
        aug1=np.array(aug1, dtype=np.float64) if n_aug else None,
        aug2=np.array(aug2, dtype=np.float64) if n_aug else None,
        labels=np.array(labels, dtype=np.int64) if n_lab else None,
        ids=ids,
    )


def _load_csv(path: Path) -> Dataset:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "label":
            raise SchemaError("CSV header must be id,label,v0..v{D-1}")
        dim = len(header) - 2
        if header[2:] != [f"v{i}" for i in range(dim)]:
            raise SchemaError("CSV vector columns must be named v0..v{D-1}")
        ids, vecs, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise DimensionMismatchError(f"line {lineno}: expected {dim + 2} cells")
            ids.append(row[0])
            labels.append(int(row[1]) if row[1] != "" else None)
            vecs.append(_finite_vector(row[2:], "vector", lineno))
    if not vecs:
        raise SchemaError(f"{path}: no records")
    n_lab = sum(1 for l in labels if l is not None)
    if n_lab not in (0, len(vecs)):
        raise SchemaError("labels must cover every record or none")
    return Dataset(
        vectors=np.array(vecs, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64) if n_lab else None,
        ids=ids,
    )


def load_dataset(path: str | Path, format: str | None = None) -> Dataset:
    """Load a dataset from JSONL or CSV (format inferred from the suffix
    when not given)."""
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        return _load_jsonl(path)
    if fmt == "csv":
        return _load_csv(path)
    raise ConfigError(f"unknown dataset format {fmt!r}")


def write_dataset(dataset: Dataset, path: str | Path, format: str | None = None) -> None:
    """Write a dataset; floats are serialized with full round-trip precision.
    CSV carries no augmentation columns, so writing an augmented dataset as
    CSV is refused rather than silently dropping data."""
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        with path.open("w") as fh:
            for i in range(dataset.n):
                rec: dict = {"id": dataset.ids[i], "vec": dataset.vectors[i].tolist()}
                if dataset.aug1 is not None:
                    rec["aug1"] = dataset.aug1[i].tolist()
                    rec["aug2"] = dataset.aug2[i].tolist()
                if dataset.labels is not None:
                    rec["label"] = int(dataset.labels[i])
                fh.write(json.dumps(rec) + "\n")
    elif fmt == "csv":
        if dataset.has_augmentations:
            raise SchemaError("CSV format has no augmentation columns; write JSONL instead")
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "label"] + [f"v{i}" for i in range(dataset.dim)])
            for i in range(dataset.n):
                label = "" if dataset.labels is None else int(dataset.labels[i])
                writer.writerow(
                    [dataset.ids[i], label] + [repr(v) for v in dataset.vectors[i].tolist()]
                )
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def geometric_sizes(k: int, n_per_cluster: int, imbalance_ratio: float) -> list[int]:
    """Cluster sizes interpolated geometrically between smallest and largest
    so that largest/smallest == imbalance_ratio and the total stays at
    k * n_per_cluster. Returned largest-first."""
    if imbalance_ratio < 1:
        raise ValueError(f"imbalance_ratio must be >= 1, got {imbalance_ratio}")
    total = k * n_per_cluster
    raw = np.array([imbalance_ratio ** (i / (k - 1)) for i in range(k)], dtype=np.float64)
    scaled = total * raw / raw.sum()
    sizes = np.floor(scaled).astype(int)
    remainder = scaled - sizes
    for i in np.argsort(-remainder)[: total - sizes.sum()]:
        sizes[i] += 1
    sizes = np.maximum(sizes, 1)
    while sizes.sum() > total:
        sizes[np.argmax(sizes)] -= 1
    return sorted(sizes.tolist(), reverse=True)


def synthetic_centroids(k: int, dim: int, separation: float, seed: int) -> np.ndarray:
    """The exact centroids :func:`make_synthetic` places for this seed:
    random unit directions rescaled so the minimum pairwise distance equals
    ``separation``."""
    rng = np.random.default_rng(seed)
    return _draw_centroids(k, dim, separation, rng)


def _draw_centroids(k, dim, separation, rng) -> np.ndarray:
    dirs = rng.normal(size=(k, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if separation == 0:
        return np.zeros((k, dim))
    diffs = dirs[:, None, :] - dirs[None, :, :]
    dists = np.linalg.norm(diffs, axis=2)
    min_dist = dists[~np.eye(k, dtype=bool)].min()
    while min_dist < 1e-6:  # astronomically unlikely direction collision
        dirs = rng.normal(size=(k, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dists = np.linalg.norm(dirs[:, None, :] - dirs[None, :, :], axis=2)
        min_dist = dists[~np.eye(k, dtype=bool)].min()
    return dirs * (separation / min_dist)


def make_synthetic(
    k: int,
    n_per_cluster: int,
    dim: int,
    separation: float,
    noise_sigma: float,
    imbalance_ratio: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Gaussian blobs with labels and precomputed augmentation pairs.

    Centroid geometry is controlled by ``separation`` (minimum pairwise
    centroid distance); cluster sizes follow :func:`geometric_sizes`; the
    augmented pairs come from the default vector-space augmenter. Output is
    deterministic for a fixed seed.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 clusters, got {k}")
    if dim < 2:
        raise ValueError(f"need dim >= 2, got {dim}")
    if n_per_cluster < 1:
        raise ValueError(f"n_per_cluster must be >= 1, got {n_per_cluster}")
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    if noise_sigma <= 0:
        raise ValueError(f"noise_sigma must be > 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    centroids = _draw_centroids(k, dim, separation, rng)
    sizes = geometric_sizes(k, n_per_cluster, imbalance_ratio)
    labels = np.repeat(np.arange(k), sizes)
    points = centroids[labels] + rng.normal(0.0, noise_sigma, size=(labels.size, dim))
    spec = augment.default_vector_spec(noise_sigma)
    aug1, aug2 = augment.augment_matrix_pairs(points, spec, rng)
    perm = rng.permutation(labels.size)
    return Dataset(
        vectors=points[perm],
        aug1=aug1[perm],
        aug2=aug2[perm],
        labels=labels[perm],
        ids=[str(i) for i in range(labels.size)],
    )


# ---------------------------------------------------------------------------
# Minibatch sampling
# ---------------------------------------------------------------------------

class EpochSampler:
    """Without-replacement index sampler: each epoch is one shuffled pass
    over the dataset, so batches within an epoch are disjoint. The final
    batch of an epoch may be short when batch_size does not divide N."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise ContractError("cannot sample from an empty dataset")
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        self.n = n
        self.batch_size = min(batch_size, n)
        self._rng = rng
        self._perm = rng.permutation(n)
        self._pos = 0

    def next_indices(self) -> np.ndarray:
        if self._pos >= self.n:
            self._perm = self._rng.permutation(self.n)
            self._pos = 0
        take = min(self.batch_size, self.n - self._pos)
        idx = self._perm[self._pos : self._pos + take].copy()
        self._pos += take
        return idx


def interleave_pairs(a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    out = np.empty((2 * a1.shape[0], a1.shape[1]), dtype=np.float64)
    out[0::2] = a1
    out[1::2] = a2
    return out


def sample_minibatch(
    dataset: Dataset,
    sampler: EpochSampler,
    augmenter: augment.AugmentSpec | None = None,
    aug_rng: np.random.Generator | None = None,
    need_aug: bool = True,
) -> Minibatch:
    """Draw the next batch. Augmented rows come from the dataset's
    precomputed pairs unless an augmenter spec is given, in which case
    fresh pairs are drawn (regenerated every time the row is visited)."""
    idx = sampler.next_indices()
    orig = dataset.vectors[idx]
    aug = None
    if need_aug:
        if augmenter is not None:
            if aug_rng is None:
                raise ContractError("an augmenter spec requires an explicit rng")
            a1, a2 = augment.augment_matrix_pairs(orig, augmenter, aug_rng)
            aug = interleave_pairs(a1, a2)
        elif dataset.has_augmentations:
            aug = interleave_pairs(dataset.aug1[idx], dataset.aug2[idx])
        else:
            raise ContractError(
                "dataset has no precomputed augmentations and no augmenter was configured"
            )
    return Minibatch(orig=orig, aug=aug, orig_indices=idx)
