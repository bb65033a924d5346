"""Stochastic augmentation generators producing paired views of an instance.

Two families share one spec type:

* vector kinds (``gaussian_noise``, ``feature_dropout``) perturb a float
  vector in place of model-based text augmenters;
* token kinds (``token_substitute``, ``char_swap``) rewrite a token
  sequence, which :func:`hashing_featurize` then maps back into the
  vector pipeline.

``strength`` is always the fraction of coordinates / tokens affected by
one draw; the affected count is exact (``round(strength * size)``), so
``strength=0`` is the identity for every kind.
"""

from __future__ import annotations

import hashlib
import math
import statistics
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DegenerateVectorError


class AugmentKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    FEATURE_DROPOUT = "feature_dropout"
    TOKEN_SUBSTITUTE = "token_substitute"
    CHAR_SWAP = "char_swap"
    COMPOSE = "compose"


VECTOR_KINDS = frozenset({AugmentKind.GAUSSIAN_NOISE, AugmentKind.FEATURE_DROPOUT})
TOKEN_KINDS = frozenset({AugmentKind.TOKEN_SUBSTITUTE, AugmentKind.CHAR_SWAP})


@dataclass(frozen=True)
class AugmentSpec:
    """One augmentation distribution.

    ``noise_sigma`` applies to ``gaussian_noise`` only; ``vocab`` is the
    substitution pool for ``token_substitute``; ``stages`` is the ordered
    stage list for ``compose`` (applied sequentially, stage n+1 consuming
    stage n's output).
    """

    kind: AugmentKind
    strength: float = 0.2
    noise_sigma: float = 0.1
    vocab: tuple[str, ...] | None = None
    stages: tuple["AugmentSpec", ...] = field(default=())

    def __post_init__(self):
        if not isinstance(self.kind, AugmentKind):
            object.__setattr__(self, "kind", AugmentKind(self.kind))
        if not 0.0 <= self.strength <= 1.0:
            raise ConfigError(f"strength must be in [0, 1], got {self.strength}")
        if self.kind is AugmentKind.GAUSSIAN_NOISE and self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.kind is AugmentKind.COMPOSE and not self.stages:
            raise ConfigError("compose requires a nonempty stage list")
        if self.vocab is not None:
            object.__setattr__(self, "vocab", tuple(self.vocab))
        if self.stages:
            object.__setattr__(self, "stages", tuple(self.stages))

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "strength": self.strength}
        if self.kind is AugmentKind.GAUSSIAN_NOISE:
            d["noise_sigma"] = self.noise_sigma
        if self.vocab is not None:
            d["vocab"] = list(self.vocab)
        if self.stages:
            d["stages"] = [s.to_dict() for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        stages = tuple(cls.from_dict(s) for s in d.get("stages", []))
        vocab = d.get("vocab")
        return cls(
            kind=AugmentKind(d["kind"]),
            strength=float(d.get("strength", 0.2)),
            noise_sigma=float(d.get("noise_sigma", 0.1)),
            vocab=tuple(vocab) if vocab is not None else None,
            stages=stages,
        )


def default_vector_spec(noise_sigma: float) -> AugmentSpec:
    """Default vector-space augmenter: full-width Gaussian jitter at half
    the generating noise scale. Used when a dataset is built synthetically
    and no explicit spec is given."""
    return AugmentSpec(
        kind=AugmentKind.GAUSSIAN_NOISE, strength=1.0, noise_sigma=0.5 * noise_sigma
    )


def _affected_count(strength: float, size: int) -> int:
    return int(round(strength * size))


def _pick_indices(rng: np.random.Generator, size: int, count: int) -> np.ndarray:
    if count == 0:
        return np.empty(0, dtype=int)
    return rng.choice(size, size=count, replace=False)


def _is_token_sequence(x) -> bool:
    return isinstance(x, (list, tuple)) and all(isinstance(t, str) for t in x)


def augment_one(x, spec: AugmentSpec, rng: np.random.Generator):
    """Draw one augmented view of ``x`` (a 1-D float vector for vector
    kinds, a token sequence for token kinds)."""
    if spec.kind is AugmentKind.COMPOSE:
        out = x
        for stage in spec.stages:
            out = augment_one(out, stage, rng)
        return out

    if spec.kind in VECTOR_KINDS:
        if _is_token_sequence(x):
            raise ContractError(f"{spec.kind.value} cannot be applied to a token sequence")
        vec = np.asarray(x, dtype=np.float64)
        if vec.ndim != 1:
            raise ContractError(f"vector augmenters expect a 1-D vector, got ndim={vec.ndim}")
        out = vec.copy()
        idx = _pick_indices(rng, out.size, _affected_count(spec.strength, out.size))
        if spec.kind is AugmentKind.GAUSSIAN_NOISE:
            out[idx] += rng.normal(0.0, spec.noise_sigma, size=idx.size)
        else:
            out[idx] = 0.0
        return out

    if not _is_token_sequence(x):
        raise ContractError(f"{spec.kind.value} expects a token sequence, got {type(x).__name__}")
    tokens = list(x)
    idx = _pick_indices(rng, len(tokens), _affected_count(spec.strength, len(tokens)))
    if spec.kind is AugmentKind.TOKEN_SUBSTITUTE:
        if spec.vocab is None or len(spec.vocab) == 0:
            raise ConfigError("token_substitute requires a vocabulary")
        for i in idx:
            tokens[i] = spec.vocab[rng.integers(len(spec.vocab))]
    else:  # CHAR_SWAP: one adjacent-character swap inside each selected token
        for i in idx:
            t = tokens[i]
            if len(t) < 2:
                continue
            j = int(rng.integers(len(t) - 1))
            tokens[i] = t[:j] + t[j + 1] + t[j] + t[j + 2 :]
    return tokens


def augment_pair(x, spec: AugmentSpec, rng: np.random.Generator):
    """Two independent draws from the augmentation distribution of ``x``."""
    return augment_one(x, spec, rng), augment_one(x, spec, rng)


def augment_matrix_pairs(
    vectors: np.ndarray, spec: AugmentSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`augment_pair` over a matrix; returns (aug1, aug2)."""
    a1 = np.empty_like(vectors)
    a2 = np.empty_like(vectors)
    for i in range(vectors.shape[0]):
        a1[i], a2[i] = augment_pair(vectors[i], spec, rng)
    return a1, a2


# ---------------------------------------------------------------------------
# Hashing featurizer: token sequences -> unit vectors
# ---------------------------------------------------------------------------

def _token_hash(token: str, salt: bytes) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=salt).digest()
    return int.from_bytes(digest, "big")


def hashing_featurize(tokens: Sequence[str], dim: int) -> np.ndarray:
    """Signed bag-of-buckets embedding: each token is hashed to a bucket
    and a sign, counts are accumulated and the result L2-normalized.
    Deterministic across processes (keyed blake2, not the builtin hash)."""
    if dim < 16:
        raise ConfigError(f"featurizer dim must be >= 16, got {dim}")
    if len(tokens) == 0:
        raise DegenerateVectorError("cannot featurize an empty token sequence")
    out = np.zeros(dim, dtype=np.float64)
    for t in tokens:
        bucket = _token_hash(t, b"bucket") % dim
        sign = 1.0 if _token_hash(t, b"sign") % 2 == 0 else -1.0
        out[bucket] += sign
    norm = float(np.linalg.norm(out))
    if norm == 0.0:
        # signs cancelled exactly; fall back to unsigned counts
        for t in tokens:
            out[_token_hash(t, b"bucket") % dim] += 1.0
        norm = float(np.linalg.norm(out))
    return out / norm


def featurize_corpus(docs: Sequence[Sequence[str]], dim: int) -> np.ndarray:
    return np.stack([hashing_featurize(d, dim) for d in docs])


def make_synthetic_corpus(
    n_docs: int,
    doc_len: int,
    vocab_size: int,
    n_topics: int,
    seed: int,
    shared_fraction: float = 0.2,
) -> tuple[list[list[str]], np.ndarray, list[str]]:
    """Topic-structured random token corpus.

    The vocabulary is split into ``n_topics`` disjoint topic pools plus a
    shared pool; each document draws ``1 - shared_fraction`` of its tokens
    from its topic pool and the rest from the shared pool. Returns
    ``(docs, topic_labels, vocab)``.
    """
    if vocab_size < 2 * n_topics:
        raise ConfigError("vocab_size too small for the requested topic count")
    rng = np.random.default_rng(seed)
    letters = "abcdefghijklmnopqrstuvwxyz"
    vocab: list[str] = []
    seen = set()
    while len(vocab) < vocab_size:
        w = "".join(letters[i] for i in rng.integers(0, 26, size=int(rng.integers(3, 9))))
        if w not in seen:
            seen.add(w)
            vocab.append(w)
    n_shared = max(1, int(round(shared_fraction * vocab_size)))
    shared = vocab[:n_shared]
    topical = vocab[n_shared:]
    pools = [topical[i::n_topics] for i in range(n_topics)]
    docs: list[list[str]] = []
    labels = np.empty(n_docs, dtype=np.int64)
    for i in range(n_docs):
        topic = int(rng.integers(n_topics))
        labels[i] = topic
        doc = []
        for _ in range(doc_len):
            if rng.random() < shared_fraction:
                doc.append(shared[rng.integers(len(shared))])
            else:
                pool = pools[topic]
                doc.append(pool[rng.integers(len(pool))])
        docs.append(doc)
    return docs, labels, vocab


# ---------------------------------------------------------------------------
# Strength sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    strength: float
    acc_mean: float
    acc_sd: float
    nmi_mean: float
    nmi_sd: float
    n_seeds: int


def _mean_sd(values: list[float]) -> tuple[float, float]:
    if len(values) == 1:
        return values[0], 0.0
    return statistics.fmean(values), statistics.stdev(values)


def strength_sweep(
    dataset,
    kind: AugmentKind,
    strengths: Sequence[float],
    config,
    n_seeds: int = 1,
    noise_sigma: float = 0.1,
    docs: Sequence[Sequence[str]] | None = None,
) -> list[SweepRow]:
    """Run full training once per (strength, seed) and tabulate the
    post-training k-means ACC/NMI means.

    Vector kinds regenerate augmented pairs on the fly during training.
    Token kinds require ``docs`` (the token corpus behind ``dataset``);
    pairs are drawn per strength, featurized, and baked into the dataset.
    """
    from . import trainer as _trainer  # local import: sweep sits above the training loop

    kind = AugmentKind(kind)
    if dataset.labels is None:
        raise ContractError("strength_sweep requires ground-truth labels")
    if kind in TOKEN_KINDS and docs is None:
        raise ContractError(f"{kind.value} sweep requires the token corpus (docs=...)")

    rows: list[SweepRow] = []
    for strength in strengths:
        accs: list[float] = []
        nmis: list[float] = []
        for s in range(n_seeds):
            run_config = replace(config, seed=config.seed + s)
            if kind in VECTOR_KINDS:
                spec = AugmentSpec(kind=kind, strength=strength, noise_sigma=noise_sigma)
                params, _ = _trainer.train(dataset, run_config, augmenter=spec)
                eval_ds = dataset
            else:
                vocab = tuple(sorted({t for d in docs for t in d}))
                spec = AugmentSpec(kind=kind, strength=strength, vocab=vocab)
                rng = np.random.default_rng(np.random.SeedSequence([run_config.seed, 97]))
                dim = dataset.dim
                a1_docs, a2_docs = [], []
                for d in docs:
                    v1, v2 = augment_pair(list(d), spec, rng)
                    a1_docs.append(v1)
                    a2_docs.append(v2)
                eval_ds = replace_dataset_augs(
                    dataset,
                    featurize_corpus(a1_docs, dim),
                    featurize_corpus(a2_docs, dim),
                )
                params, _ = _trainer.train(eval_ds, run_config)
            report = _trainer.evaluate_params(params, eval_ds, run_config, seed=run_config.seed)
            accs.append(report["acc"])
            nmis.append(report["nmi"])
        acc_mean, acc_sd = _mean_sd(accs)
        nmi_mean, nmi_sd = _mean_sd(nmis)
        rows.append(SweepRow(float(strength), acc_mean, acc_sd, nmi_mean, nmi_sd, n_seeds))
    return rows


def replace_dataset_augs(dataset, aug1: np.ndarray, aug2: np.ndarray):
    from .core import Dataset  # local import to keep this module below core

    return Dataset(
        vectors=dataset.vectors,
        aug1=aug1,
        aug2=aug2,
        labels=dataset.labels,
        ids=dataset.ids,
    )
