"""Small convolutional encoder with a projection head and hand-written backward pass.

Activations are kept channels-last, ``(B, F, T, C)``, so that the patch
matrix from :func:`kernels.im2col` multiplies directly against weights of
shape ``(k * k * C_in, C_out)``.

Each conv stage is conv -> batch norm -> activation. In training mode batch
norm uses the statistics of the current batch; in inference mode it uses
running estimates, which start at mean 0 / variance 1 so a freshly
initialised encoder behaves as if batch norm were absent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

CHECKPOINT_MAGIC = b"SSLB"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "softplus")
INPUT_NORMS = ("none", "instance", "affine")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class StaleCacheError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ConvStage:
    out_channels: int
    kernel: int
    stride: int


def _parse_stages(text: str) -> tuple:
    stages = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise ValueError(f"conv stage {item!r} is not out_channels:kernel:stride")
        stages.append(ConvStage(*(int(p) for p in parts)))
    return tuple(stages)


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class EncoderConfig:
    stages: tuple = (ConvStage(16, 3, 2), ConvStage(32, 3, 2), ConvStage(64, 3, 2))
    embedding_dim: int = 64
    projector_dims: tuple = (64, 64)
    activation: str = "relu"
    batch_norm: bool = True
    input_norm: str = "none"
    input_shift: float = 0.0
    input_scale: float = 1.0

    def __post_init__(self):
        stages = self.stages
        if isinstance(stages, str):
            stages = _parse_stages(stages)
        stages = tuple(s if isinstance(s, ConvStage) else ConvStage(*s) for s in stages)
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "projector_dims", tuple(int(d) for d in self.projector_dims))
        if not stages:
            raise ValueError("encoder needs at least one conv stage")
        for s in stages:
            if min(s.out_channels, s.kernel, s.stride) < 1:
                raise ValueError(f"invalid conv stage {s}")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be at least 2")
        if any(d < 1 for d in self.projector_dims):
            raise ValueError("projector dims must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.input_norm not in INPUT_NORMS:
            raise ValueError(f"input_norm must be one of {INPUT_NORMS}")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be positive")

    def to_text(self) -> str:
        stages = ",".join(f"{s.out_channels}:{s.kernel}:{s.stride}" for s in self.stages)
        return (f"stages={stages}\n"
                f"embedding_dim={self.embedding_dim}\n"
                f"projector_dims={','.join(str(d) for d in self.projector_dims)}\n"
                f"activation={self.activation}\n"
                f"batch_norm={str(self.batch_norm).lower()}\n"
                f"input_norm={self.input_norm}\n"
                f"input_shift={self.input_shift!r}\n"
                f"input_scale={self.input_scale!r}\n")

    @classmethod
    def from_text(cls, text: str) -> "EncoderConfig":
        fields = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
        return cls(
            stages=_parse_stages(fields["stages"]),
            embedding_dim=int(fields["embedding_dim"]),
            projector_dims=tuple(int(d) for d in fields["projector_dims"].split(",") if d),
            activation=fields["activation"],
            batch_norm=_parse_bool(fields["batch_norm"]),
            input_norm=fields["input_norm"],
            input_shift=float(fields["input_shift"]),
            input_scale=float(fields["input_scale"]),
        )

    def tensor_shapes(self) -> dict:
        """Every stored tensor (trainable or running statistic) in declaration order."""
        shapes = {}
        c_in = 1
        for i, s in enumerate(self.stages):
            shapes[f"conv{i}.w"] = (s.kernel, s.kernel, c_in, s.out_channels)
            if self.batch_norm:
                shapes[f"bn{i}.gamma"] = (s.out_channels,)
                shapes[f"bn{i}.beta"] = (s.out_channels,)
                shapes[f"bn{i}.mean"] = (s.out_channels,)
                shapes[f"bn{i}.var"] = (s.out_channels,)
            else:
                shapes[f"conv{i}.b"] = (s.out_channels,)
            c_in = s.out_channels
        shapes["embed.w"] = (c_in, self.embedding_dim)
        shapes["embed.b"] = (self.embedding_dim,)
        d_in = self.embedding_dim
        for i, d in enumerate(self.projector_dims):
            shapes[f"proj{i}.w"] = (d_in, d)
            shapes[f"proj{i}.b"] = (d,)
            d_in = d
        return shapes

    def param_shapes(self) -> dict:
        """Trainable parameters only."""
        return {k: v for k, v in self.tensor_shapes().items() if not _is_buffer(k)}


def _is_buffer(name: str) -> bool:
    return name.endswith(".mean") or name.endswith(".var")


def _act(name, x):
    if name == "relu":
        return np.maximum(x, 0)
    if name == "tanh":
        return np.tanh(x)
    return np.logaddexp(0, x)


def _act_grad(name, pre, post, grad):
    if name == "relu":
        return grad * (pre > 0)
    if name == "tanh":
        return grad * (1 - post * post)
    return grad * 0.5 * (1 + np.tanh(0.5 * pre))


@dataclass
class ForwardCache:
    version: int
    training: bool
    layers: list = field(default_factory=list)
    batch_stats: dict = field(default_factory=dict)
    pooled_hw: tuple = ()
    embedding: np.ndarray = None
    projection: np.ndarray = None


class Encoder:
    """Conv stages -> global average pool -> linear embedding -> optional MLP projector."""

    def __init__(self, config: EncoderConfig, tensors: dict, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        shapes = config.tensor_shapes()
        missing = [k for k in shapes if k not in tensors and not _is_buffer(k)]
        if missing or any(k not in shapes for k in tensors):
            raise ValueError("tensor names do not match the encoder config")
        self.params = {}
        self.buffers = {}
        for name, shape in shapes.items():
            if name in tensors:
                value = np.asarray(tensors[name], dtype=self.dtype)
            elif name.endswith(".mean"):
                value = np.zeros(shape, dtype=self.dtype)
            else:
                value = np.ones(shape, dtype=self.dtype)
            if value.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {value.shape}")
            (self.buffers if _is_buffer(name) else self.params)[name] = value
        self.version = 0

    @classmethod
    def init(cls, config: EncoderConfig, seed: int = 0, dtype=np.float32) -> "Encoder":
        """He-normal weights (LeCun for tanh), zero biases, unit BN scale."""
        rng = np.random.default_rng(seed)
        gain = 1.0 if config.activation == "tanh" else 2.0
        params = {}
        for name, shape in config.param_shapes().items():
            if name.endswith(".gamma"):
                params[name] = np.ones(shape)
            elif name.endswith(".b") or name.endswith(".beta"):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[:-1]))
                params[name] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
        return cls(config, params, dtype)

    def state(self) -> dict:
        """All tensors in declaration order."""
        merged = {**self.params, **self.buffers}
        return {k: merged[k] for k in self.config.tensor_shapes()}

    def set_params(self, params: dict):
        self.params = {k: np.asarray(params[k], dtype=self.dtype) for k in self.params}
        self.version += 1

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _normalize_input(self, x):
        cfg = self.config
        if cfg.input_norm == "instance":
            mean = x.mean(axis=(1, 2), keepdims=True)
            std = x.std(axis=(1, 2), keepdims=True)
            return (x - mean) / np.maximum(std, 1e-5)
        if cfg.input_norm == "affine":
            return (x + cfg.input_shift) * (1.0 / cfg.input_scale)
        return x

    def forward(self, specs, project: bool = True, training: bool = False):
        """Embed a batch of spectrograms ``(B, F, T)``.

        Returns ``(embedding, projection, cache)``; ``projection`` equals
        ``embedding`` when there is no projector or ``project`` is False.
        Training mode normalises with batch statistics but does not touch
        the running estimates; see :meth:`commit_batch_stats`.
        """
        x = np.asarray(specs, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise ValueError(f"expected (B, F, T) spectrograms, got shape {x.shape}")
        cfg = self.config
        act = cfg.activation
        cache = ForwardCache(self.version, training)
        h = self._normalize_input(x)[..., None]
        for i, s in enumerate(cfg.stages):
            b, hh, ww, _ = h.shape
            pad = s.kernel // 2
            ho = kernels.conv_out_size(hh, s.kernel, s.stride, pad)
            wo = kernels.conv_out_size(ww, s.kernel, s.stride, pad)
            if ho < 1 or wo < 1:
                raise ValueError(f"input {x.shape[1:]} too small for conv stage {i}")
            cols = kernels.im2col(h, s.kernel, s.stride, pad)
            conv = cols @ self.params[f"conv{i}.w"].reshape(-1, s.out_channels)
            bn = None
            if cfg.batch_norm:
                if training:
                    mean = conv.mean(axis=0)
                    var = conv.var(axis=0)
                    cache.batch_stats[i] = (mean, var, conv.shape[0])
                else:
                    mean, var = self.buffers[f"bn{i}.mean"], self.buffers[f"bn{i}.var"]
                std = np.sqrt(var + BN_EPS)
                xhat = (conv - mean) / std
                pre = xhat * self.params[f"bn{i}.gamma"] + self.params[f"bn{i}.beta"]
                bn = (xhat, std)
            else:
                pre = conv + self.params[f"conv{i}.b"]
            pre = pre.reshape(b, ho, wo, s.out_channels)
            post = _act(act, pre)
            cache.layers.append((h.shape, cols, bn, pre, post))
            h = post
        cache.pooled_hw = h.shape[1:3]
        pooled = h.mean(axis=(1, 2))
        emb = pooled @ self.params["embed.w"] + self.params["embed.b"]
        cache.layers.append((pooled,))
        cache.embedding = emb
        z = emb
        if project:
            n_proj = len(cfg.projector_dims)
            for i in range(n_proj):
                pre = z @ self.params[f"proj{i}.w"] + self.params[f"proj{i}.b"]
                post = _act(act, pre) if i < n_proj - 1 else pre
                cache.layers.append((z, pre, post))
                z = post
        cache.projection = z
        return emb, z, cache

    def commit_batch_stats(self, cache: ForwardCache, momentum: float = BN_MOMENTUM):
        """Fold a training-mode forward pass's batch statistics into the running estimates."""
        for i, (mean, var, count) in cache.batch_stats.items():
            unbiased = var * (count / max(count - 1, 1))
            self.buffers[f"bn{i}.mean"] = ((1 - momentum) * self.buffers[f"bn{i}.mean"]
                                           + momentum * mean).astype(self.dtype)
            self.buffers[f"bn{i}.var"] = ((1 - momentum) * self.buffers[f"bn{i}.var"]
                                          + momentum * unbiased).astype(self.dtype)

    def embed(self, specs, batch_size: int = 32) -> np.ndarray:
        """Inference-mode backbone embeddings (no projector), in slices to bound memory."""
        specs = np.asarray(specs)
        if specs.ndim == 2:
            specs = specs[None]
        parts = [self.forward(specs[i:i + batch_size], project=False)[0]
                 for i in range(0, len(specs), batch_size)]
        return np.concatenate(parts)

    def backward(self, cache: ForwardCache, grad_embedding=None, grad_projection=None) -> dict:
        """Reverse-mode gradients of all trainable parameters for the given output cotangents."""
        if cache.version != self.version:
            raise StaleCacheError("forward cache predates the current parameters")
        cfg = self.config
        act = cfg.activation
        grads = {}
        n_stages = len(cfg.stages)
        proj_layers = cache.layers[n_stages + 1:]
        g = None
        if grad_projection is not None:
            g = np.asarray(grad_projection, dtype=self.dtype)
            for i in reversed(range(len(proj_layers))):
                z_in, pre, post = proj_layers[i]
                if i < len(proj_layers) - 1:
                    g = _act_grad(act, pre, post, g)
                grads[f"proj{i}.w"] = z_in.T @ g
                grads[f"proj{i}.b"] = g.sum(axis=0)
                g = g @ self.params[f"proj{i}.w"].T
        if grad_embedding is not None:
            ge = np.asarray(grad_embedding, dtype=self.dtype)
            g = ge if g is None else g + ge
        if g is None:
            g = np.zeros_like(cache.embedding)

        (pooled,) = cache.layers[n_stages]
        grads["embed.w"] = pooled.T @ g
        grads["embed.b"] = g.sum(axis=0)
        g = g @ self.params["embed.w"].T
        ho, wo = cache.pooled_hw
        g = np.broadcast_to(g[:, None, None, :] / (ho * wo), cache.layers[n_stages - 1][4].shape)

        for i in reversed(range(n_stages)):
            s = cfg.stages[i]
            in_shape, cols, bn, pre, post = cache.layers[i]
            g = _act_grad(act, pre, post, g).reshape(-1, s.out_channels)
            if bn is not None:
                xhat, std = bn
                grads[f"bn{i}.gamma"] = np.sum(g * xhat, axis=0)
                grads[f"bn{i}.beta"] = g.sum(axis=0)
                g = g * self.params[f"bn{i}.gamma"]
                if cache.training:
                    g = (g - g.mean(axis=0) - xhat * np.mean(g * xhat, axis=0)) / std
                else:
                    g = g / std
            else:
                grads[f"conv{i}.b"] = g.sum(axis=0)
            grads[f"conv{i}.w"] = (cols.T @ g).reshape(self.params[f"conv{i}.w"].shape)
            if i > 0:
                gcols = g @ self.params[f"conv{i}.w"].reshape(-1, s.out_channels).T
                g = kernels.col2im(gcols, in_shape, s.kernel, s.stride, s.kernel // 2)
        return {name: grads[name] if name in grads else np.zeros_like(value)
                for name, value in self.params.items()}


def encoder_forward(spec, encoder: Encoder):
    """Single-spectrogram inference: returns (D-vector, cache)."""
    emb, _, cache = encoder.forward(np.asarray(spec)[None], project=False)
    return emb[0], cache


def encoder_backward(grad_embedding, cache: ForwardCache, encoder: Encoder) -> dict:
    return encoder.backward(cache, grad_embedding=np.atleast_2d(grad_embedding))


def save_checkpoint(path, encoder: Encoder):
    blob = encoder.config.to_text().encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob]
    for value in encoder.state().values():
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, dtype=np.float32) -> Encoder:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: missing SSLB magic")
    try:
        version, blob_len = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        config = EncoderConfig.from_text(raw[pos:pos + blob_len].decode("utf-8"))
        pos += blob_len
        tensors = {}
        for name, shape in config.tensor_shapes().items():
            (rank,) = struct.unpack_from("<I", raw, pos)
            dims = struct.unpack_from(f"<{rank}I", raw, pos + 4)
            pos += 4 + 4 * rank
            if tuple(dims) != shape:
                raise CheckpointError(f"{path}: tensor {name} has shape {dims}, expected {shape}")
            count = int(np.prod(dims))
            if pos + 4 * count > len(raw):
                raise CheckpointError(f"{path}: truncated data for tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
    except CheckpointError:
        raise
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes after last tensor")
    return Encoder(config, tensors, dtype)
