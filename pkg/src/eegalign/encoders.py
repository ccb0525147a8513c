"""Trainable EEG encoders, frozen image feature sources, and view fusion.

Two EEG encoder families are provided: a temporal-then-spatial convolution
stack ("tsconv") and a flatten-MLP ("mlp"). The image leg is frozen by
contract: either a fixed-seed random convolutional reference encoder (no
pretrained weights needed anywhere in this package) or verbatim embedding
rows loaded from per-view containers. No image-source parameter ever
participates in the gradient tape.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import ImageData
from .errors import ContractError, DimensionError, LoadError
from .seeding import DOMAIN_INIT, derive_rng
from .tensor import Tensor


@dataclass(frozen=True)
class EEGEncoderConfig:
    kind: str = "tsconv"              # "tsconv" | "mlp"
    output_dim: int = 64
    dropout: float = 0.0
    temporal_kernel: int = 13
    feature_channels: int = 16
    spatial_channels: int = 16
    pool_width: int = 5
    hidden_sizes: tuple = (256,)

    def __post_init__(self):
        if self.kind not in ("tsconv", "mlp"):
            raise ContractError(f"unknown EEG encoder kind {self.kind!r}")
        if self.output_dim < 1:
            raise ContractError("output_dim must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")


def _init(rng, shape, fan_in, dtype):
    return Tensor((rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype),
                  requires_grad=True)


class EEGEncoder:
    """f_E: (B, C_E, T) trials -> (B, D) embeddings, trainable end to end."""

    def __init__(self, config: EEGEncoderConfig, in_channels: int, in_samples: int,
                 seed: int = 0, dtype=np.float32):
        self.config = config
        self.in_channels = in_channels
        self.in_samples = in_samples
        self.dtype = np.dtype(dtype)
        rng = derive_rng(seed, DOMAIN_INIT, 1)
        p: dict[str, Tensor] = {}
        if config.kind == "tsconv":
            if in_samples < config.temporal_kernel:
                raise ContractError(
                    f"trial length {in_samples} shorter than temporal kernel "
                    f"{config.temporal_kernel}"
                )
            f1, f2, k = config.feature_channels, config.spatial_channels, config.temporal_kernel
            t1 = in_samples - k + 1
            t2 = (t1 - config.pool_width) // config.pool_width + 1
            if t2 < 1:
                raise ContractError("pool width leaves no temporal samples")
            p["conv_t.w"] = _init(rng, (f1, 1, 1, k), k, dtype)
            p["conv_t.b"] = T.zeros((f1,), dtype=dtype, requires_grad=True)
            p["conv_s.w"] = _init(rng, (f2, f1, in_channels, 1), f1 * in_channels, dtype)
            p["conv_s.b"] = T.zeros((f2,), dtype=dtype, requires_grad=True)
            flat = f2 * t2
            p["head.w"] = _init(rng, (flat, config.output_dim), flat, dtype)
            p["head.b"] = T.zeros((config.output_dim,), dtype=dtype, requires_grad=True)
            self._flat_t = t2
        else:
            sizes = [in_channels * in_samples, *config.hidden_sizes, config.output_dim]
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
                p[f"fc{i}.w"] = _init(rng, (a, b), a, dtype)
                p[f"fc{i}.b"] = T.zeros((b,), dtype=dtype, requires_grad=True)
            self._n_layers = len(sizes) - 1
        self.params = p

    def forward(self, x: np.ndarray, train: bool = False, dropout_seed: int = 0) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.in_channels or x.shape[2] != self.in_samples:
            raise DimensionError(
                f"expected (B, {self.in_channels}, {self.in_samples}), got {x.shape}"
            )
        cfg = self.config
        h = Tensor(np.ascontiguousarray(x, dtype=self.dtype))
        if cfg.kind == "tsconv":
            b = x.shape[0]
            h = T.reshape(h, (b, 1, self.in_channels, self.in_samples))
            h = T.elu(T.conv2d(h, self.params["conv_t.w"], self.params["conv_t.b"]))
            h = T.avg_pool(h, cfg.pool_width)
            h = T.elu(T.conv2d(h, self.params["conv_s.w"], self.params["conv_s.b"]))
            if train and cfg.dropout > 0:
                h = T.dropout(h, cfg.dropout, dropout_seed)
            h = T.reshape(h, (b, cfg.spatial_channels * self._flat_t))
            return T.add(T.matmul(h, self.params["head.w"]), self.params["head.b"])
        h = T.reshape(h, (x.shape[0], self.in_channels * self.in_samples))
        for i in range(self._n_layers):
            h = T.add(T.matmul(h, self.params[f"fc{i}.w"]), self.params[f"fc{i}.b"])
            if i < self._n_layers - 1:
                h = T.gelu(h)
                if train and cfg.dropout > 0:
                    h = T.dropout(h, cfg.dropout, dropout_seed + i)
        return h


@dataclass(frozen=True)
class ImageSourceConfig:
    kind: str = "reference_encoder"   # "reference_encoder" | "embedding_files"
    seed: int = 7
    conv_channels: tuple = (16, 32)
    output_dim: int = 128

    def __post_init__(self):
        if self.kind not in ("reference_encoder", "embedding_files"):
            raise ContractError(f"unknown image source kind {self.kind!r}")


class ReferenceImageEncoder:
    """Frozen fixed-seed random conv features; a pretrained-free stand-in f_I.

    conv(3x3, stride 2) -> ELU -> conv(3x3, stride 2) -> ELU -> global average
    pool -> fixed random projection. Deterministic by construction; no
    parameter requires grad.
    """

    def __init__(self, config: ImageSourceConfig, in_channels: int = 3,
                 dtype=np.float32):
        self.config = config
        self.in_channels = in_channels
        self.dtype = np.dtype(dtype)
        rng = derive_rng(config.seed, DOMAIN_INIT, 2)
        c1, c2 = config.conv_channels
        self.params: dict[str, Tensor] = {
            "conv1.w": Tensor((rng.standard_normal((c1, in_channels, 3, 3))
                               / np.sqrt(in_channels * 9)).astype(dtype)),
            "conv2.w": Tensor((rng.standard_normal((c2, c1, 3, 3))
                               / np.sqrt(c1 * 9)).astype(dtype)),
            "proj.w": Tensor((rng.standard_normal((c2, config.output_dim))
                              / np.sqrt(c2)).astype(dtype)),
        }

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def encode(self, images: np.ndarray) -> np.ndarray:
        """(B, C, H, W) pixels in [0, 1] -> (B, D) features, no gradient tape."""
        if images.ndim != 4 or images.shape[1] != self.in_channels:
            raise DimensionError(
                f"expected (B, {self.in_channels}, H, W), got {images.shape}"
            )
        h = Tensor(np.ascontiguousarray(images, dtype=self.dtype))
        h = T.elu(T.conv2d(h, self.params["conv1.w"], stride=2, padding=1))
        h = T.elu(T.conv2d(h, self.params["conv2.w"], stride=2, padding=1))
        h = T.tmean(h, axis=(2, 3))
        out = T.matmul(h, self.params["proj.w"])
        assert not out.requires_grad
        return out.data

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()


class EmbeddingFileSource:
    """Image features read verbatim from per-view embedding containers."""

    def __init__(self, image_data: ImageData):
        if image_data.mode != "embedding_files":
            raise ContractError("EmbeddingFileSource needs embedding_files image data")
        image_data.validate()
        self.views = image_data.views
        self.clean = image_data.clean

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def output_dim(self) -> int:
        arr = self.views[0] if self.views else self.clean
        return arr.shape[1]

    def view_rows(self, view_index: int, sample_indices) -> np.ndarray:
        if view_index >= len(self.views):
            raise LoadError(f"no embedding container for view index {view_index}")
        return self.views[view_index][np.asarray(sample_indices)]

    def clean_rows(self, sample_indices) -> np.ndarray:
        if self.clean is not None:
            return self.clean[np.asarray(sample_indices)]
        idx = np.asarray(sample_indices)
        stack = np.stack([v[idx] for v in self.views])
        return stack.mean(axis=0)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for v in self.views:
            digest.update(v.tobytes())
        if self.clean is not None:
            digest.update(self.clean.tobytes())
        return digest.hexdigest()


def fuse_views(views: list) -> Tensor:
    """Arithmetic mean over K view feature batches (the semantic aggregation step)."""
    if len(views) == 0:
        raise ContractError("fuse_views needs K >= 1 views")
    ts = [v if isinstance(v, Tensor) else Tensor(v) for v in views]
    acc = ts[0]
    for v in ts[1:]:
        acc = T.add(acc, v)
    return T.scale(acc, 1.0 / len(ts))
