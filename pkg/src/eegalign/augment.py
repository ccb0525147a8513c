"""Seeded, modality-specific augmentation bank.

Images get an ordered list of K transforms (one per view); EEG gets a single
transform. Per-sample randomness is keyed by (master seed, epoch, sample
index, view index), never by a shared stream, so augmenting one sample can
never perturb another and any execution order gives identical results.

Every transform at its identity parameter point returns the input bitwise.
All transforms preserve shape and dtype; image outputs stay in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.ndimage import convolve1d

from .errors import ContractError
from .seeding import DOMAIN_EEG_AUG, DOMAIN_IMAGE_VIEW, derive_rng, derive_seed

IMAGE_DEFAULTS: dict[str, dict[str, float]] = {
    "gaussian_blur": {"sigma": 1.0},
    "gaussian_noise": {"sigma": 0.05},
    "low_resolution": {"factor": 4},
    "mosaic": {"cell": 8},
    "color_jitter": {"brightness": 0.2, "contrast": 0.2},
    "grayscale": {},
    "random_crop": {"fraction": 0.8},
}
# Fixed order; truncating to the first K gives the fusion-count ablation axis.
IMAGE_KIND_ORDER = list(IMAGE_DEFAULTS)

EEG_DEFAULTS: dict[str, dict[str, float]] = {
    "channel_dropout": {"p": 0.1},
    "noise_addition": {"sigma": 0.1},
    "smoothing": {"window": 5},
    "temporal_shift": {"max_shift": 10},
}


@dataclass(frozen=True)
class ImageTransformSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in IMAGE_DEFAULTS:
            raise ContractError(f"unknown image transform {self.kind!r}")
        merged = {**IMAGE_DEFAULTS[self.kind], **self.params}
        unknown = set(self.params) - set(IMAGE_DEFAULTS[self.kind])
        if unknown:
            raise ContractError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        _validate_image_params(self.kind, merged)
        object.__setattr__(self, "params", merged)


@dataclass(frozen=True)
class EEGTransformSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EEG_DEFAULTS:
            raise ContractError(f"unknown EEG transform {self.kind!r}")
        merged = {**EEG_DEFAULTS[self.kind], **self.params}
        unknown = set(self.params) - set(EEG_DEFAULTS[self.kind])
        if unknown:
            raise ContractError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        _validate_eeg_params(self.kind, merged)
        object.__setattr__(self, "params", merged)


def _validate_image_params(kind: str, p: dict):
    if kind in ("gaussian_blur", "gaussian_noise") and p["sigma"] < 0:
        raise ContractError(f"{kind}: sigma must be >= 0, got {p['sigma']}")
    if kind == "low_resolution" and (int(p["factor"]) != p["factor"] or p["factor"] < 1):
        raise ContractError(f"low_resolution: factor must be an integer >= 1")
    if kind == "mosaic" and (int(p["cell"]) != p["cell"] or p["cell"] < 1):
        raise ContractError("mosaic: cell must be an integer >= 1")
    if kind == "color_jitter":
        if not (0 <= p["brightness"] <= 1) or not (0 <= p["contrast"] < 1):
            raise ContractError("color_jitter: brightness in [0,1], contrast in [0,1)")
    if kind == "random_crop" and not (0 < p["fraction"] <= 1):
        raise ContractError(f"random_crop: fraction must be in (0, 1], got {p['fraction']}")


def _validate_eeg_params(kind: str, p: dict):
    if kind == "channel_dropout" and not (0 <= p["p"] <= 1):
        raise ContractError(f"channel_dropout: p must be in [0, 1], got {p['p']}")
    if kind == "noise_addition" and p["sigma"] < 0:
        raise ContractError(f"noise_addition: sigma must be >= 0")
    if kind == "smoothing":
        w = p["window"]
        if int(w) != w or w < 1 or int(w) % 2 == 0:
            raise ContractError(f"smoothing: window must be odd and >= 1, got {w}")
    if kind == "temporal_shift" and (int(p["max_shift"]) != p["max_shift"] or p["max_shift"] < 0):
        raise ContractError("temporal_shift: max_shift must be an integer >= 0")


@dataclass
class AugmentationPipeline:
    image_specs: list[ImageTransformSpec]
    eeg_spec: EEGTransformSpec | None
    master_seed: int

    def __post_init__(self):
        if len(self.image_specs) < 1:
            raise ContractError("pipeline needs at least one image transform (K >= 1)")

    @property
    def n_views(self) -> int:
        return len(self.image_specs)


def default_pipeline(master_seed: int, k: int = 4,
                     eeg_kind: str = "smoothing") -> AugmentationPipeline:
    """The default bank: first K image transforms in fixed order + one EEG transform."""
    if not (1 <= k <= len(IMAGE_KIND_ORDER)):
        raise ContractError(f"k must be in [1, {len(IMAGE_KIND_ORDER)}], got {k}")
    specs = [ImageTransformSpec(kind) for kind in IMAGE_KIND_ORDER[:k]]
    eeg = EEGTransformSpec(eeg_kind) if eeg_kind else None
    return AugmentationPipeline(specs, eeg, master_seed)


# -- image transforms ---------------------------------------------------------


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0:
        return img.copy()
    radius = int(np.ceil(2 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    out = convolve1d(img.astype(np.float64), kernel, axis=1, mode="reflect")
    out = convolve1d(out, kernel, axis=2, mode="reflect")
    return out.astype(img.dtype)


def _low_resolution(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img.copy()
    c, h, w = img.shape
    sh, sw = max(1, h // factor), max(1, w // factor)
    small = img[:, : sh * factor, : sw * factor]
    small = small.reshape(c, sh, factor, sw, factor).mean(axis=(2, 4))
    ih = np.minimum(np.arange(h) // factor, sh - 1)
    iw = np.minimum(np.arange(w) // factor, sw - 1)
    return small[:, ih][:, :, iw].astype(img.dtype)


def _mosaic(img: np.ndarray, cell: int) -> np.ndarray:
    if cell == 1:
        return img.copy()
    c, h, w = img.shape
    out = np.empty_like(img)
    for top in range(0, h, cell):
        for left in range(0, w, cell):
            block = img[:, top:top + cell, left:left + cell]
            out[:, top:top + cell, left:left + cell] = block.mean(
                axis=(1, 2), keepdims=True
            )
    return out


def _grayscale(img: np.ndarray) -> np.ndarray:
    if img.shape[0] == 3:
        luma = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    else:
        luma = img.mean(axis=0)
    return np.broadcast_to(luma, img.shape).astype(img.dtype, copy=True)


def apply_image(spec: ImageTransformSpec, image: np.ndarray, derived_seed: int
                ) -> np.ndarray:
    """One transform on one (C, H, W) image in [0, 1]; deterministic given the seed."""
    if image.ndim != 3:
        raise ContractError(f"image must be (C, H, W), got shape {image.shape}")
    rng = derive_rng(derived_seed)
    p = spec.params
    kind = spec.kind
    if kind == "gaussian_blur":
        out = _blur(image, p["sigma"])
    elif kind == "gaussian_noise":
        if p["sigma"] == 0:
            out = image.copy()
        else:
            out = image + rng.normal(0.0, p["sigma"], image.shape).astype(image.dtype)
    elif kind == "low_resolution":
        out = _low_resolution(image, int(p["factor"]))
    elif kind == "mosaic":
        out = _mosaic(image, int(p["cell"]))
    elif kind == "color_jitter":
        b = rng.uniform(-p["brightness"], p["brightness"])
        c = rng.uniform(1.0 - p["contrast"], 1.0 + p["contrast"])
        mean = image.mean()
        out = ((image - mean) * c + mean + b).astype(image.dtype)
    elif kind == "grayscale":
        out = _grayscale(image)
    elif kind == "random_crop":
        _, h, w = image.shape
        h2 = max(1, int(round(h * p["fraction"])))
        w2 = max(1, int(round(w * p["fraction"])))
        top = int(rng.integers(0, h - h2 + 1))
        left = int(rng.integers(0, w - w2 + 1))
        crop = image[:, top:top + h2, left:left + w2]
        ih = np.minimum((np.arange(h) * h2) // h, h2 - 1)
        iw = np.minimum((np.arange(w) * w2) // w, w2 - 1)
        out = crop[:, ih][:, :, iw].astype(image.dtype)
    else:  # pragma: no cover - spec validation rules this out
        raise ContractError(f"unknown image transform {kind!r}")
    return np.clip(out, 0.0, 1.0)


# -- EEG transforms -----------------------------------------------------------


def apply_eeg(spec: EEGTransformSpec, trial: np.ndarray, derived_seed: int
              ) -> np.ndarray:
    """One transform on one (C, T) trial; deterministic given the seed."""
    if trial.ndim != 2:
        raise ContractError(f"trial must be (C, T), got shape {trial.shape}")
    rng = derive_rng(derived_seed)
    p = spec.params
    kind = spec.kind
    c, t = trial.shape
    if kind == "channel_dropout":
        if p["p"] == 0:
            return trial.copy()
        keep = (rng.random(c) >= p["p"]).astype(trial.dtype)
        return trial * keep[:, None]
    if kind == "noise_addition":
        if p["sigma"] == 0:
            return trial.copy()
        std = trial.std(axis=1, keepdims=True)
        return (trial + rng.standard_normal(trial.shape) * (p["sigma"] * std)).astype(trial.dtype)
    if kind == "smoothing":
        w = int(p["window"])
        if w > t:
            raise ContractError(f"smoothing window {w} exceeds trial length {t}")
        if w == 1:
            return trial.copy()
        kernel = np.full(w, 1.0 / w)
        return convolve1d(trial.astype(np.float64), kernel, axis=1,
                          mode="reflect").astype(trial.dtype)
    if kind == "temporal_shift":
        m = int(p["max_shift"])
        if m >= t:
            raise ContractError(f"max_shift {m} must be < trial length {t}")
        s = int(rng.integers(-m, m + 1))
        if s == 0:
            return trial.copy()
        out = np.zeros_like(trial)
        if s > 0:
            out[:, s:] = trial[:, : t - s]
        else:
            out[:, :s] = trial[:, -s:]
        return out
    raise ContractError(f"unknown EEG transform {kind!r}")  # pragma: no cover


# -- batched view construction --------------------------------------------------


def make_views(pipeline: AugmentationPipeline, images: np.ndarray | None,
               eeg: np.ndarray | None, epoch: int, sample_indices
               ) -> tuple[list[np.ndarray], np.ndarray | None]:
    """K augmented image view batches plus a single augmented EEG batch.

    ``sample_indices`` are dataset-global indices so the per-sample streams do
    not depend on batch composition.
    """
    idx = np.asarray(sample_indices)
    image_views: list[np.ndarray] = []
    if images is not None:
        if images.shape[0] != idx.shape[0]:
            raise ContractError("image batch and sample_indices are misaligned")
        for k, spec in enumerate(pipeline.image_specs):
            view = np.empty_like(images)
            for row, sample in enumerate(idx):
                seed = derive_seed(pipeline.master_seed, DOMAIN_IMAGE_VIEW,
                                   epoch, int(sample), k)
                view[row] = apply_image(spec, images[row], seed)
            image_views.append(view)
    eeg_out = None
    if eeg is not None:
        if eeg.shape[0] != idx.shape[0]:
            raise ContractError("EEG batch and sample_indices are misaligned")
        if pipeline.eeg_spec is None:
            eeg_out = eeg.copy()
        else:
            eeg_out = np.empty_like(eeg)
            for row, sample in enumerate(idx):
                seed = derive_seed(pipeline.master_seed, DOMAIN_EEG_AUG,
                                   epoch, int(sample))
                eeg_out[row] = apply_eeg(pipeline.eeg_spec, eeg[row], seed)
    return image_views, eeg_out


# -- pipeline spec strings and previews ------------------------------------------


def parse_transform_string(text: str, modality: str):
    """Parse ``kind:key=val,key=val|kind...`` into transform specs."""
    specs = []
    for part in text.split("|"):
        part = part.strip()
        if not part:
            continue
        kind, _, args = part.partition(":")
        kind = kind.strip()
        params = {}
        if args:
            for kv in args.split(","):
                key, _, val = kv.partition("=")
                if not _:
                    raise ContractError(f"malformed transform parameter {kv!r}")
                params[key.strip()] = float(val)
        if modality == "image":
            specs.append(ImageTransformSpec(kind, params))
        else:
            specs.append(EEGTransformSpec(kind, params))
    if not specs:
        raise ContractError(f"empty transform string {text!r}")
    return specs


def save_image_png(path, image: np.ndarray) -> None:
    """Write a (C, H, W) float image in [0, 1] as PNG."""
    arr = np.clip(image, 0.0, 1.0)
    arr = (arr * 255.0).round().astype(np.uint8)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
