"""Paired EEG/image datasets: manifests, zero-shot splits, synthetic generation.

A dataset couples one EEG trial per pair with one image reference per pair.
Image references come in two modes:

* ``pixels``          one container of (N, C, H, W) images in [0, 1]
* ``embedding_files`` K containers of per-view embedding rows (N, D), one
                      per augmentation view, plus an optional clean row set

The train/test concept partition is disjoint by contract (zero-shot); it is
validated on construction and again at load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import ContractError, FormatError, ZeroShotViolation
from .seeding import DOMAIN_SYNTH, derive_rng

MANIFEST_NAME = "manifest.json"


@dataclass
class ImageData:
    mode: str                                  # "pixels" | "embedding_files"
    pixels: np.ndarray | None = None           # (N, C, H, W)
    views: list[np.ndarray] = field(default_factory=list)   # K x (N, D)
    clean: np.ndarray | None = None            # (N, D)

    def n_pairs(self) -> int:
        if self.mode == "pixels":
            return self.pixels.shape[0]
        return self.views[0].shape[0] if self.views else self.clean.shape[0]

    def validate(self):
        if self.mode == "pixels":
            if self.pixels is None or self.pixels.ndim != 4:
                raise ContractError("pixels mode requires a (N, C, H, W) array")
        elif self.mode == "embedding_files":
            if not self.views and self.clean is None:
                raise ContractError("embedding_files mode requires view or clean rows")
            dims = {v.shape[1] for v in self.views}
            if self.clean is not None:
                dims.add(self.clean.shape[1])
            if len(dims) > 1:
                raise ContractError(f"embedding dims differ across views: {sorted(dims)}")
            counts = {v.shape[0] for v in self.views}
            if self.clean is not None:
                counts.add(self.clean.shape[0])
            if len(counts) > 1:
                raise ContractError(f"row counts differ across views: {sorted(counts)}")
        else:
            raise ContractError(f"unknown image mode {self.mode!r}")


@dataclass
class PairedDataset:
    eeg: np.ndarray                  # (N, C_E, T)
    images: ImageData
    concept_ids: np.ndarray          # (N,) ints
    train_concepts: np.ndarray       # sorted unique ints
    test_concepts: np.ndarray
    latents: np.ndarray | None = None   # ground truth, synthetic data only

    def __post_init__(self):
        self.concept_ids = np.asarray(self.concept_ids, dtype=np.int64)
        self.train_concepts = np.unique(np.asarray(self.train_concepts, dtype=np.int64))
        self.test_concepts = np.unique(np.asarray(self.test_concepts, dtype=np.int64))
        self.images.validate()
        n = self.eeg.shape[0]
        if self.images.n_pairs() != n or self.concept_ids.shape[0] != n:
            raise ContractError(
                f"pair mismatch: {n} EEG trials, {self.images.n_pairs()} image refs, "
                f"{self.concept_ids.shape[0]} concept ids"
            )
        overlap = np.intersect1d(self.train_concepts, self.test_concepts)
        if overlap.size:
            raise ZeroShotViolation(
                f"train/test concepts overlap: {overlap[:8].tolist()}"
            )

    @property
    def n_pairs(self) -> int:
        return self.eeg.shape[0]

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(np.isin(self.concept_ids, self.train_concepts))

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(np.isin(self.concept_ids, self.test_concepts))


def save_dataset(dataset: PairedDataset, out_dir) -> Path:
    """Write containers plus manifest.json; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_container(out / "eeg.nbtf", dataset.eeg)
    images: dict = {"mode": dataset.images.mode}
    if dataset.images.mode == "pixels":
        write_container(out / "images.nbtf", dataset.images.pixels)
        images["container"] = "images.nbtf"
    else:
        names = []
        for k, v in enumerate(dataset.images.views):
            name = f"image_view{k}.nbtf"
            write_container(out / name, v)
            names.append(name)
        images["views"] = names
        if dataset.images.clean is not None:
            write_container(out / "image_clean.nbtf", dataset.images.clean)
            images["clean"] = "image_clean.nbtf"
    manifest = {
        "version": 1,
        "eeg": "eeg.nbtf",
        "images": images,
        "concept_ids": dataset.concept_ids.tolist(),
        "train_concepts": dataset.train_concepts.tolist(),
        "test_concepts": dataset.test_concepts.tolist(),
    }
    if dataset.latents is not None:
        write_container(out / "latents.nbtf", dataset.latents)
        manifest["latents"] = "latents.nbtf"
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_manifest(path) -> PairedDataset:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    base = path.parent
    for key in ("eeg", "images", "concept_ids", "train_concepts", "test_concepts"):
        if key not in manifest:
            raise FormatError(f"manifest missing required key {key!r}")
    im = manifest["images"]
    if im["mode"] == "pixels":
        images = ImageData(mode="pixels", pixels=read_container(base / im["container"]))
    else:
        images = ImageData(
            mode="embedding_files",
            views=[read_container(base / v) for v in im.get("views", [])],
            clean=read_container(base / im["clean"]) if im.get("clean") else None,
        )
    latents = read_container(base / manifest["latents"]) if manifest.get("latents") else None
    return PairedDataset(
        eeg=read_container(base / manifest["eeg"]),
        images=images,
        concept_ids=np.asarray(manifest["concept_ids"]),
        train_concepts=np.asarray(manifest["train_concepts"]),
        test_concepts=np.asarray(manifest["test_concepts"]),
        latents=latents,
    )


# -- synthetic generation -----------------------------------------------------


@dataclass(frozen=True)
class SynthNoise:
    eeg: float = 0.05          # channel-correlated EEG noise scale
    image_embed: float = 0.02  # noise on clean image embeddings
    view: float = 0.0          # independent per-view embedding noise
    pixel: float = 0.0         # pixel noise on rendered images


def synthesize_dataset(
    n_concepts: int,
    images_per_concept: int,
    eeg_channels: int,
    eeg_samples: int,
    latent_dim: int,
    noise: SynthNoise = SynthNoise(),
    seed: int = 0,
    *,
    n_test_concepts: int = 20,
    image_mode: str = "pixels",
    image_channels: int = 3,
    image_size: int = 32,
    embed_dim: int = 128,
    n_views: int = 4,
    include_clean: bool = True,
    concept_spread: float = 0.15,
    identity_maps: bool = False,
) -> PairedDataset:
    """Latent-linear paired data with a disjoint held-out concept set.

    Every pair owns a latent (concept latent plus a small per-image offset).
    Image embeddings are a fixed random linear map of the latent; EEG trials
    a different fixed linear-temporal map plus channel-correlated noise. With
    zero noise and identity maps the latent is exactly recoverable from the
    EEG, which puts an analytic ceiling on retrieval quality.
    """
    if n_concepts < 2:
        raise ContractError(f"need at least 2 concepts, got {n_concepts}")
    if not (0 < n_test_concepts < n_concepts):
        raise ContractError(
            f"n_test_concepts must be in (0, {n_concepts}), got {n_test_concepts}"
        )
    if identity_maps:
        if eeg_channels * eeg_samples != latent_dim:
            raise ContractError("identity maps require C_E * T == latent_dim")
        if embed_dim != latent_dim:
            raise ContractError("identity maps require embed_dim == latent_dim")

    rng_c = derive_rng(seed, DOMAIN_SYNTH, 1)
    concept_latents = rng_c.standard_normal((n_concepts, latent_dim))
    train_concepts = np.arange(n_concepts - n_test_concepts)
    test_concepts = np.arange(n_concepts - n_test_concepts, n_concepts)

    pair_concepts: list[int] = []
    for c in train_concepts:
        pair_concepts += [int(c)] * images_per_concept
    pair_concepts += [int(c) for c in test_concepts]  # one image per held-out concept
    n_pairs = len(pair_concepts)

    rng_p = derive_rng(seed, DOMAIN_SYNTH, 2)
    latents = np.empty((n_pairs, latent_dim))
    for i, c in enumerate(pair_concepts):
        latents[i] = concept_latents[c] + concept_spread * rng_p.standard_normal(latent_dim)

    # EEG leg: fixed linear-temporal map of the latent + correlated channel noise.
    rng_e = derive_rng(seed, DOMAIN_SYNTH, 3)
    if identity_maps:
        eeg_clean = latents.reshape(n_pairs, eeg_channels, eeg_samples)
    else:
        w_eeg = rng_e.standard_normal((eeg_channels * eeg_samples, latent_dim))
        w_eeg /= np.sqrt(latent_dim)
        eeg_clean = (latents @ w_eeg.T).reshape(n_pairs, eeg_channels, eeg_samples)
    mix = rng_e.standard_normal((eeg_channels, eeg_channels)) / np.sqrt(eeg_channels)
    eeg_noise = np.einsum(
        "ij,njt->nit", mix, rng_e.standard_normal((n_pairs, eeg_channels, eeg_samples))
    )
    eeg = (eeg_clean + noise.eeg * eeg_noise).astype(np.float32)

    # Image leg: embeddings always derive from the latent; pixels are a render.
    rng_i = derive_rng(seed, DOMAIN_SYNTH, 4)
    if identity_maps:
        a_img = np.eye(embed_dim)
    else:
        a_img = rng_i.standard_normal((embed_dim, latent_dim)) / np.sqrt(latent_dim)
    clean = latents @ a_img.T + noise.image_embed * rng_i.standard_normal((n_pairs, embed_dim))
    clean = clean.astype(np.float32)

    if image_mode == "pixels":
        rng_x = derive_rng(seed, DOMAIN_SYNTH, 5)
        p_map = rng_x.standard_normal(
            (image_channels * image_size * image_size, latent_dim)
        ) / np.sqrt(latent_dim)
        raw = latents @ p_map.T
        if noise.pixel > 0:
            raw = raw + noise.pixel * rng_x.standard_normal(raw.shape)
        pixels = np.clip(0.5 + 0.25 * raw, 0.0, 1.0).astype(np.float32)
        images = ImageData(
            mode="pixels",
            pixels=pixels.reshape(n_pairs, image_channels, image_size, image_size),
        )
    elif image_mode == "embedding_files":
        views = []
        for k in range(n_views):
            rng_v = derive_rng(seed, DOMAIN_SYNTH, 6, k)
            views.append(
                (clean + noise.view * rng_v.standard_normal(clean.shape)).astype(np.float32)
            )
        images = ImageData(mode="embedding_files", views=views,
                           clean=clean if include_clean else None)
    else:
        raise ContractError(f"unknown image_mode {image_mode!r}")

    return PairedDataset(
        eeg=eeg,
        images=images,
        concept_ids=np.asarray(pair_concepts),
        train_concepts=train_concepts,
        test_concepts=test_concepts,
        latents=latents.astype(np.float32),
    )
