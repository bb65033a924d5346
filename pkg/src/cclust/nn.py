"""Encoder and heads with hand-derived reverse-mode gradients.

The model is small and fixed: an encoder of 0-2 affine layers with ReLU
between them (depth 0 is the identity), a projection head of one hidden
ReLU layer feeding the contrastive loss, and a centroid matrix consumed
by the clustering loss. Gradients are written out explicitly for this
architecture; there is no autodiff tape.

Parameter tensors are addressed by name ("encoder.0.w", "g_hidden.b",
"centroids", ...) so the optimizer and checkpoints stay generic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import TrainConfig, ensure_matrix
from .errors import ConfigError, ContractError, DimensionMismatchError, SchemaError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_VERSION = 1


@dataclass
class Affine:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)


@dataclass
class ModelParams:
    """Weights of the encoder, the projection head (g_hidden -> ReLU ->
    g_out) and the cluster centroids (one row per cluster)."""

    input_dim: int
    encoder: list[Affine]
    g_hidden: Affine
    g_out: Affine
    centroids: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        """Live (non-copied) views of every parameter tensor, by name."""
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.encoder):
            out[f"encoder.{i}.w"] = layer.w
            out[f"encoder.{i}.b"] = layer.b
        out["g_hidden.w"] = self.g_hidden.w
        out["g_hidden.b"] = self.g_hidden.b
        out["g_out.w"] = self.g_out.w
        out["g_out.b"] = self.g_out.b
        out["centroids"] = self.centroids
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            input_dim=self.input_dim,
            encoder=[Affine(l.w.copy(), l.b.copy()) for l in self.encoder],
            g_hidden=Affine(self.g_hidden.w.copy(), self.g_hidden.b.copy()),
            g_out=Affine(self.g_out.w.copy(), self.g_out.b.copy()),
            centroids=self.centroids.copy(),
        )

    @property
    def embed_dim(self) -> int:
        return self.centroids.shape[1]


ParamGrads = dict[str, np.ndarray]


def zero_grads(params: ModelParams) -> ParamGrads:
    return {name: np.zeros_like(t) for name, t in params.tensors().items()}


def _glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> Affine:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Affine(
        w=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
        b=np.zeros(fan_out),
    )


def init_params(config: TrainConfig, input_dim: int, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform affine weights, zero biases, zero centroids (the
    trainer overwrites centroids via k-means before they are used)."""
    if input_dim < 1:
        raise ConfigError(f"input_dim must be positive, got {input_dim}")
    if config.encoder_depth == 0 and input_dim != config.embed_dim:
        raise ConfigError(
            f"identity encoder requires input_dim == embed_dim "
            f"({input_dim} != {config.embed_dim})"
        )
    encoder = []
    if config.encoder_depth == 1:
        encoder = [_glorot(input_dim, config.embed_dim, rng)]
    elif config.encoder_depth == 2:
        encoder = [
            _glorot(input_dim, config.embed_dim, rng),
            _glorot(config.embed_dim, config.embed_dim, rng),
        ]
    return ModelParams(
        input_dim=input_dim,
        encoder=encoder,
        g_hidden=_glorot(config.embed_dim, config.embed_dim, rng),
        g_out=_glorot(config.embed_dim, config.contrast_dim, rng),
        centroids=np.zeros((config.n_clusters, config.embed_dim)),
    )


@dataclass
class EncodeCache:
    """Inputs and pre-activations of each encoder layer, kept for backward."""

    x: np.ndarray
    inputs: list[np.ndarray]
    pre: list[np.ndarray]


@dataclass
class ProjectCache:
    e: np.ndarray
    hidden_pre: np.ndarray


def encode(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, EncodeCache]:
    """Map inputs through the encoder; depth 0 is the identity."""
    x = ensure_matrix(x, "x")
    if x.shape[1] != params.input_dim:
        raise DimensionMismatchError(
            f"input has {x.shape[1]} columns, encoder expects {params.input_dim}"
        )
    h = x
    inputs: list[np.ndarray] = []
    pre: list[np.ndarray] = []
    last = len(params.encoder) - 1
    for i, layer in enumerate(params.encoder):
        inputs.append(h)
        p = h @ layer.w + layer.b
        pre.append(p)
        h = p if i == last else np.maximum(p, 0.0)
    return h, EncodeCache(x=x, inputs=inputs, pre=pre)


def project(params: ModelParams, e: np.ndarray) -> tuple[np.ndarray, ProjectCache]:
    """Projection head g: affine -> ReLU -> affine."""
    e = ensure_matrix(e, "e")
    if e.shape[1] != params.g_hidden.w.shape[0]:
        raise DimensionMismatchError(
            f"embedding has {e.shape[1]} columns, head expects {params.g_hidden.w.shape[0]}"
        )
    hidden_pre = e @ params.g_hidden.w + params.g_hidden.b
    z = np.maximum(hidden_pre, 0.0) @ params.g_out.w + params.g_out.b
    return z, ProjectCache(e=e, hidden_pre=hidden_pre)


def encode_backward(
    params: ModelParams, cache: EncodeCache, grad_e: np.ndarray, grads: ParamGrads
) -> np.ndarray:
    """Accumulate encoder gradients into ``grads``; returns grad w.r.t. x."""
    if len(cache.pre) != len(params.encoder):
        raise ContractError("encode cache does not match encoder depth")
    if grad_e.shape[0] != cache.x.shape[0]:
        raise ContractError("gradient row count does not match the cached batch")
    g = grad_e
    last = len(params.encoder) - 1
    for i in range(last, -1, -1):
        gp = g if i == last else g * (cache.pre[i] > 0.0)
        grads[f"encoder.{i}.w"] += cache.inputs[i].T @ gp
        grads[f"encoder.{i}.b"] += gp.sum(axis=0)
        g = gp @ params.encoder[i].w.T
    return g


def project_backward(
    params: ModelParams, cache: ProjectCache, grad_z: np.ndarray, grads: ParamGrads
) -> np.ndarray:
    """Accumulate head gradients into ``grads``; returns grad w.r.t. e."""
    if grad_z.shape != (cache.e.shape[0], params.g_out.w.shape[1]):
        raise ContractError("grad_z shape does not match the cached projection")
    hidden = np.maximum(cache.hidden_pre, 0.0)
    grads["g_out.w"] += hidden.T @ grad_z
    grads["g_out.b"] += grad_z.sum(axis=0)
    gh = (grad_z @ params.g_out.w.T) * (cache.hidden_pre > 0.0)
    grads["g_hidden.w"] += cache.e.T @ gh
    grads["g_hidden.b"] += gh.sum(axis=0)
    return gh @ params.g_hidden.w.T


@dataclass
class ForwardCaches:
    """Caches from one forward pass over a minibatch: the original-batch
    encode (clustering path), the augmented-batch encode, and the
    projection of the augmented embeddings (contrastive path)."""

    orig_encode: EncodeCache | None = None
    aug_encode: EncodeCache | None = None
    project: ProjectCache | None = None


def backward(
    params: ModelParams,
    caches: ForwardCaches,
    grad_e_orig: np.ndarray | None = None,
    grad_z: np.ndarray | None = None,
    grad_e_aug: np.ndarray | None = None,
) -> ParamGrads:
    """Gradient of the scalar loss w.r.t. every parameter tensor.

    Encoder gradients accumulate from every path that was used: the
    original-batch embeddings (``grad_e_orig``), the projected augmented
    batch (``grad_z``, routed through the head), and any direct gradient
    on the augmented embeddings (``grad_e_aug``, used by the alternative
    clustering losses). Centroid gradients are produced by the clustering
    loss itself and enter as zeros here.
    """
    grads = zero_grads(params)
    if grad_z is not None or grad_e_aug is not None:
        if caches.aug_encode is None:
            raise ContractError("augmented-path gradient without an augmented encode cache")
        ge_aug = np.zeros((caches.aug_encode.x.shape[0], params.embed_dim))
        if grad_z is not None:
            if caches.project is None:
                raise ContractError("grad_z without a projection cache")
            ge_aug += project_backward(params, caches.project, grad_z, grads)
        if grad_e_aug is not None:
            ge_aug += grad_e_aug
        encode_backward(params, caches.aug_encode, ge_aug, grads)
    if grad_e_orig is not None:
        if caches.orig_encode is None:
            raise ContractError("grad_e_orig without an original encode cache")
        encode_backward(params, caches.orig_encode, grad_e_orig, grads)
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={n: np.zeros_like(t) for n, t in params.tensors().items()},
            v={n: np.zeros_like(t) for n, t in params.tensors().items()},
        )


def adam_step(
    params: ModelParams,
    grads: ParamGrads,
    state: AdamState,
    lr_backbone: float,
    lr_heads: float,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, in place. Encoder tensors use
    ``lr_backbone``; head and centroid tensors use ``lr_heads``."""
    state.step += 1
    t = state.step
    for name, p in params.tensors().items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * np.square(g)
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        lr = lr_backbone if name.startswith("encoder.") else lr_heads
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params, state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, params: ModelParams, config: TrainConfig) -> None:
    """JSON checkpoint: named tensors plus a config echo (which carries the
    run seed). Floats keep full round-trip precision."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "input_dim": params.input_dim,
        "tensors": {name: t.tolist() for name, t in params.tensors().items()},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, TrainConfig]:
    raw = json.loads(Path(path).read_text())
    if raw.get("format_version") != CHECKPOINT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {raw.get('format_version')!r}")
    config = TrainConfig.from_dict(raw["config"])
    tensors = {name: np.asarray(t, dtype=np.float64) for name, t in raw["tensors"].items()}
    encoder = []
    for i in range(config.encoder_depth):
        encoder.append(Affine(tensors[f"encoder.{i}.w"], tensors[f"encoder.{i}.b"]))
    params = ModelParams(
        input_dim=int(raw["input_dim"]),
        encoder=encoder,
        g_hidden=Affine(tensors["g_hidden.w"], tensors["g_hidden.b"]),
        g_out=Affine(tensors["g_out.w"], tensors["g_out.b"]),
        centroids=ensure_matrix(tensors["centroids"], "centroids"),
    )
    if params.centroids.shape != (config.n_clusters, config.embed_dim):
        raise SchemaError("checkpoint centroids do not match the config echo")
    return params, config
