"""Shared semantic projection and the modality-aware contrastive loss.

Both modalities are projected into one space of dimension Z. The loss is a
symmetric InfoNCE over the in-batch similarity matrix, averaged over both
retrieval directions. Which side is unit-normalized before the dot product
is the loss variant:

    plain     neither side
    sym       both sides
    inv_asym  EEG only
    asym      image only (default)

Denominators include the positive pair (standard InfoNCE); a strict mode
that excludes it exists behind ``strict_negatives`` for comparison, since
the exclusive form is unbounded below.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .seeding import DOMAIN_INIT, derive_rng
from .tensor import Tensor

VARIANTS = ("plain", "sym", "inv_asym", "asym")
_NORM_IMAGE = {"sym": True, "asym": True, "plain": False, "inv_asym": False}
_NORM_EEG = {"sym": True, "asym": False, "plain": False, "inv_asym": True}

NORM_EPS = 1e-12
_DIAG_MASK = -1e30  # additive mask removing the positive from a denominator


@dataclass(frozen=True)
class ProjectorConfig:
    kind: str = "linear"          # "linear" | "mlp"
    image_dim: int = 128
    eeg_dim: int = 64
    output_dim: int = 128
    hidden: int = 256

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ContractError(f"unknown projector kind {self.kind!r}")
        if min(self.image_dim, self.eeg_dim, self.output_dim) < 1:
            raise ContractError("projector dims must be positive")


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    variant: str = "asym"
    learnable_tau: bool = False
    strict_negatives: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ContractError(f"temperature must be finite and positive, got {self.temperature}")
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


class Projectors:
    """p_I and p_E mapping both feature legs into the shared space."""

    def __init__(self, config: ProjectorConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        rng = derive_rng(seed, DOMAIN_INIT, 3)
        p: dict[str, Tensor] = {}

        def linear(prefix, d_in, d_out):
            p[f"{prefix}.w"] = Tensor(
                (rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)).astype(dtype),
                requires_grad=True)
            p[f"{prefix}.b"] = T.zeros((d_out,), dtype=dtype, requires_grad=True)

        if config.kind == "linear":
            linear("img", config.image_dim, config.output_dim)
            linear("eeg", config.eeg_dim, config.output_dim)
        else:
            linear("img0", config.image_dim, config.hidden)
            linear("img1", config.hidden, config.output_dim)
            linear("eeg0", config.eeg_dim, config.hidden)
            linear("eeg1", config.hidden, config.output_dim)
        self.params = p

    def _apply(self, side: str, h: Tensor) -> Tensor:
        if self.config.kind == "linear":
            return T.add(T.matmul(h, self.params[f"{side}.w"]), self.params[f"{side}.b"])
        h = T.add(T.matmul(h, self.params[f"{side}0.w"]), self.params[f"{side}0.b"])
        h = T.gelu(h)
        return T.add(T.matmul(h, self.params[f"{side}1.w"]), self.params[f"{side}1.b"])

    def project_image(self, h: Tensor) -> Tensor:
        return self._apply("img", h)

    def project_eeg(self, h: Tensor) -> Tensor:
        return self._apply("eeg", h)


def project(projectors: Projectors, loss_config: LossConfig,
            h_image: Tensor, h_eeg: Tensor) -> tuple[Tensor, Tensor]:
    """Project both legs and normalize the sides the variant selects."""
    if h_image.shape[-1] != projectors.config.image_dim:
        raise DimensionError(
            f"image features dim {h_image.shape[-1]} != configured {projectors.config.image_dim}")
    if h_eeg.shape[-1] != projectors.config.eeg_dim:
        raise DimensionError(
            f"EEG features dim {h_eeg.shape[-1]} != configured {projectors.config.eeg_dim}")
    z_i = projectors.project_image(h_image)
    z_e = projectors.project_eeg(h_eeg)
    if _NORM_IMAGE[loss_config.variant]:
        z_i = T.l2_normalize(z_i, axis=1, eps=NORM_EPS)
    if _NORM_EEG[loss_config.variant]:
        z_e = T.l2_normalize(z_e, axis=1, eps=NORM_EPS)
    return z_i, z_e


def _warn_if_zero_rows(z: Tensor, side: str):
    norms = np.linalg.norm(z.data, axis=1)
    if np.any(norms < 1e-6):
        warnings.warn(
            f"near-zero {side} embedding row before normalization; "
            "epsilon guard applied", RuntimeWarning)


def similarity_matrix(z_image: Tensor, z_eeg: Tensor, variant: str = "asym") -> Tensor:
    """S[i, j] = <n_I(z_I_i), n_E(z_E_j)> with per-variant unit normalization."""
    if variant not in VARIANTS:
        raise ContractError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if z_image.shape[-1] != z_eeg.shape[-1]:
        raise DimensionError(
            f"embedding dims differ: {z_image.shape[-1]} vs {z_eeg.shape[-1]}")
    zi, ze = z_image, z_eeg
    if _NORM_IMAGE[variant]:
        _warn_if_zero_rows(zi, "image")
        zi = T.l2_normalize(zi, axis=1, eps=NORM_EPS)
    if _NORM_EEG[variant]:
        _warn_if_zero_rows(ze, "EEG")
        ze = T.l2_normalize(ze, axis=1, eps=NORM_EPS)
    return T.matmul(zi, T.transpose(ze))


def contrastive_loss(s: Tensor, tau, strict_negatives: bool = False) -> Tensor:
    """Dual-direction InfoNCE over a square similarity matrix.

    ``tau`` may be a float or a scalar Tensor (learnable temperature). The
    mean runs over all 2N direction terms.
    """
    if s.data.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {tuple(s.shape)}")
    b = s.shape[0]
    if b < 2:
        raise ContractError(f"contrastive loss needs a batch of >= 2 pairs, got {b}")
    if isinstance(tau, Tensor):
        # 1/tau as exp(-log tau): differentiable and positive by construction.
        logits = T.scale_by(s, T.texp(T.scale(T.tlog(tau), -1.0)))
    else:
        if not (np.isfinite(tau) and tau > 0):
            raise ContractError(f"temperature must be finite and positive, got {tau}")
        logits = T.scale(s, 1.0 / float(tau))
    pos = T.diagonal(logits)
    if strict_negatives:
        mask = np.full((b, b), 0.0, dtype=s.data.dtype)
        np.fill_diagonal(mask, _DIAG_MASK)
        denom_src = T.add(logits, Tensor(mask))
    else:
        denom_src = logits
    lse_rows = T.logsumexp(denom_src, axis=1)   # image -> EEG direction
    lse_cols = T.logsumexp(denom_src, axis=0)   # EEG -> image direction
    total = T.add(T.tsum(T.add(lse_rows, T.scale(pos, -1.0))),
                  T.tsum(T.add(lse_cols, T.scale(pos, -1.0))))
    return T.scale(total, 1.0 / (2.0 * b))


class TemperatureParam:
    """Fixed or learnable temperature; learnable mode stores log(tau)."""

    def __init__(self, config: LossConfig, dtype=np.float32):
        self.learnable = config.learnable_tau
        if self.learnable:
            self.log_tau = Tensor(
                np.array([np.log(config.temperature)], dtype=dtype), requires_grad=True)
        else:
            self._value = float(config.temperature)

    def tau(self):
        """Current temperature: a float (fixed) or a positive scalar Tensor."""
        if self.learnable:
            return T.texp(self.log_tau)
        return self._value

    def value(self) -> float:
        return float(np.exp(self.log_tau.data[0])) if self.learnable else self._value

    @property
    def params(self) -> dict[str, Tensor]:
        return {"loss.log_tau": self.log_tau} if self.learnable else {}
