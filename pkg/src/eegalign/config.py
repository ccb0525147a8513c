"""Experiment configuration: JSON file in, dataclasses out.

One JSON document describes a full run. Flags override file values via
dotted paths (e.g. ``loss.variant=sym``); flags win. Every knob has a
deterministic default so an empty config is a valid experiment.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .align import LossConfig, ProjectorConfig
from .augment import (AugmentationPipeline, EEGTransformSpec, ImageTransformSpec,
                      default_pipeline)
from .encoders import EEGEncoderConfig, ImageSourceConfig
from .errors import ConfigError

DEFAULTS: dict = {
    "seed": 42,
    "train": {
        "batch_size": 64,
        "epochs": 200,
        "lr": 1e-4,
        "weight_decay": 1e-4,
        "eval_every": 0,
        "checkpoint_every": 0,
        "log_timing": True,
        "eval_n_way": 0,
        "eval_repeats": 1,
    },
    "pipeline": {
        "k": 4,
        "image": None,        # explicit spec list overrides k
        "eeg": {"kind": "smoothing", "window": 5},
    },
    "encoder": {
        "kind": "tsconv",
        "output_dim": 64,
        "dropout": 0.0,
        "temporal_kernel": 13,
        "feature_channels": 16,
        "spatial_channels": 16,
        "pool_width": 5,
        "hidden_sizes": [256],
    },
    "image_source": {
        "kind": "reference_encoder",
        "seed": 7,
        "conv_channels": [16, 32],
        "output_dim": 128,
    },
    "projector": {
        "kind": "linear",
        "output_dim": 0,      # 0: min(512, image feature dim)
        "hidden": 256,
    },
    "loss": {
        "variant": "asym",
        "temperature": 0.07,
        "learnable_tau": False,
        "strict_negatives": False,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("null", "none"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if text.startswith("[") or text.startswith("{"):
        return json.loads(text)
    return text


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings onto a nested config dict."""
    out = copy.deepcopy(cfg)
    for item in overrides:
        path, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        node = out
        keys = path.strip().split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-object value")
        node[keys[-1]] = _coerce(value.strip())
    return out


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    """Resolved config dict: defaults <- file <- overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must contain a JSON object")
        unknown = set(file_cfg) - set(DEFAULTS) - {"data"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = _deep_merge(cfg, file_cfg)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


@dataclass
class Experiment:
    """Typed view of one resolved config dict."""

    raw: dict
    seed: int
    encoder: EEGEncoderConfig
    image_source: ImageSourceConfig
    loss: LossConfig
    pipeline: AugmentationPipeline
    train: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.raw)

    def projector_config(self, image_dim: int, eeg_dim: int) -> ProjectorConfig:
        """Resolve projector dims against the actual feature dims."""
        p = self.raw["projector"]
        out = int(p.get("output_dim", 0)) or min(512, image_dim)
        return ProjectorConfig(kind=p["kind"], image_dim=image_dim,
                               eeg_dim=eeg_dim, output_dim=out,
                               hidden=int(p.get("hidden", 256)))


def build_experiment(cfg: dict) -> Experiment:
    try:
        enc = EEGEncoderConfig(
            kind=cfg["encoder"]["kind"],
            output_dim=int(cfg["encoder"]["output_dim"]),
            dropout=float(cfg["encoder"]["dropout"]),
            temporal_kernel=int(cfg["encoder"]["temporal_kernel"]),
            feature_channels=int(cfg["encoder"]["feature_channels"]),
            spatial_channels=int(cfg["encoder"]["spatial_channels"]),
            pool_width=int(cfg["encoder"]["pool_width"]),
            hidden_sizes=tuple(cfg["encoder"]["hidden_sizes"]),
        )
        src = ImageSourceConfig(
            kind=cfg["image_source"]["kind"],
            seed=int(cfg["image_source"]["seed"]),
            conv_channels=tuple(cfg["image_source"]["conv_channels"]),
            output_dim=int(cfg["image_source"]["output_dim"]),
        )
        loss = LossConfig(
            temperature=float(cfg["loss"]["temperature"]),
            variant=cfg["loss"]["variant"],
            learnable_tau=bool(cfg["loss"]["learnable_tau"]),
            strict_negatives=bool(cfg["loss"]["strict_negatives"]),
        )
        pcfg = cfg["pipeline"]
        seed = int(cfg["seed"])
        if pcfg.get("image"):
            image_specs = [ImageTransformSpec(s["kind"],
                                              {k: v for k, v in s.items() if k != "kind"})
                           for s in pcfg["image"]]
            eeg_spec = None
            if pcfg.get("eeg"):
                e = pcfg["eeg"]
                eeg_spec = EEGTransformSpec(e["kind"],
                                            {k: v for k, v in e.items() if k != "kind"})
            pipeline = AugmentationPipeline(image_specs, eeg_spec, seed)
        else:
            pipeline = default_pipeline(seed, k=int(pcfg.get("k", 4)))
            if pcfg.get("eeg"):
                e = pcfg["eeg"]
                pipeline.eeg_spec = EEGTransformSpec(e["kind"],
                                                     {k: v for k, v in e.items() if k != "kind"})
            else:
                pipeline.eeg_spec = None
        if cfg["projector"]["kind"] not in ("linear", "mlp"):
            raise ConfigError(f"unknown projector kind {cfg['projector']['kind']!r}")
    except KeyError as exc:
        raise ConfigError(f"missing config key: {exc}") from exc
    return Experiment(raw=cfg, seed=seed, encoder=enc, image_source=src,
                      loss=loss, pipeline=pipeline, train=dict(cfg["train"]))
