"""End-to-end training: batching, augmentation, encoding, fusion, projection,
contrastive loss, optimizer step, checkpointing, CSV run logging.

Only the EEG encoder, the two projectors, and (optionally)ergonomically the
log-temperature are updated; the image feature source is frozen and audited
by checksum every epoch. Given one seed, two runs produce byte-identical
run logs and checkpoints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evalkit, figures
from . import tensor as T
from .align import (LossConfig, Projectors, TemperatureParam, contrastive_loss,
                    project, similarity_matrix)
from .augment import make_views
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Experiment, build_experiment
from .dataset import PairedDataset
from .encoders import (EEGEncoder, EmbeddingFileSource, ReferenceImageEncoder,
                       fuse_views)
from .errors import ConfigError, ContractError, NumericError
from .optim import AdamW
from .seeding import DOMAIN_DROPOUT, DOMAIN_SHUFFLE, derive_rng, derive_seed
from .tensor import Tensor

RUNLOG_HEADER = "epoch,loss,tau,top1,top5,seconds"


def shuffle_batches(n_or_indices, batch_size: int, epoch: int, seed: int
                    ) -> list[np.ndarray]:
    """Seeded per-epoch permutation, chunked; a trailing chunk of < 2 is dropped."""
    if batch_size < 2:
        raise ContractError(f"batch_size must be >= 2, got {batch_size}")
    indices = (np.arange(n_or_indices) if np.isscalar(n_or_indices)
               else np.asarray(n_or_indices))
    perm = derive_rng(seed, DOMAIN_SHUFFLE, epoch).permutation(indices.shape[0])
    order = indices[perm]
    batches = [order[i:i + batch_size] for i in range(0, order.shape[0], batch_size)]
    if batches and batches[-1].shape[0] < 2:
        batches.pop()
    return batches


class Model:
    """One experiment's trainable pieces plus its frozen image source."""

    def __init__(self, experiment: Experiment, dataset: PairedDataset):
        self.experiment = experiment
        self.loss_config: LossConfig = experiment.loss
        self.pipeline = experiment.pipeline
        self.seed = experiment.seed

        c_e, t = dataset.eeg.shape[1], dataset.eeg.shape[2]
        self.eeg_encoder = EEGEncoder(experiment.encoder, c_e, t, seed=experiment.seed)

        mode = dataset.images.mode
        if mode == "pixels":
            if experiment.image_source.kind != "reference_encoder":
                raise ConfigError(
                    "pixel-mode datasets need image_source.kind = reference_encoder"
                )
            self.image_source = ReferenceImageEncoder(
                experiment.image_source, in_channels=dataset.images.pixels.shape[1])
            image_dim = experiment.image_source.output_dim
        else:
            self.image_source = EmbeddingFileSource(dataset.images)
            image_dim = self.image_source.output_dim
            if self.pipeline.n_views > self.image_source.n_views:
                raise ContractError(
                    f"pipeline needs {self.pipeline.n_views} views but only "
                    f"{self.image_source.n_views} embedding containers exist"
                )
        self.image_mode = mode
        self.image_dim = image_dim
        self.projectors = Projectors(
            experiment.projector_config(image_dim, experiment.encoder.output_dim),
            seed=experiment.seed)
        self.temperature = TemperatureParam(experiment.loss)

    # -- parameters ------------------------------------------------------------

    def trainable_params(self) -> dict[str, Tensor]:
        out = {f"enc.{k}": v for k, v in self.eeg_encoder.params.items()}
        out.update({f"proj.{k}": v for k, v in self.projectors.params.items()})
        out.update(self.temperature.params)
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.trainable_params().items()}

    def load_state(self, state: dict[str, np.ndarray]):
        params = self.trainable_params()
        missing = set(params) - set(state)
        if missing:
            raise ContractError(f"checkpoint is missing tensors: {sorted(missing)}")
        for name, p in params.items():
            arr = state[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ContractError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"expected {tuple(p.shape)}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def frozen_checksum(self) -> str:
        return self.image_source.checksum()

    # -- forward paths -----------------------------------------------------------

    def _train_image_features(self, dataset: PairedDataset, batch: np.ndarray,
                              epoch: int) -> Tensor:
        if self.image_mode == "pixels":
            views, _ = make_views(self.pipeline, dataset.images.pixels[batch],
                                  None, epoch, batch)
            encoded = [Tensor(self.image_source.encode(v)) for v in views]
        else:
            encoded = [Tensor(self.image_source.view_rows(k, batch))
                       for k in range(self.pipeline.n_views)]
        return fuse_views(encoded)

    def step_loss(self, dataset: PairedDataset, batch: np.ndarray, epoch: int,
                  step: int, train: bool = True) -> T.Tensor:
        """Loss of one batch, rebuilt from scratch; no hidden state."""
        h_img = self._train_image_features(dataset, batch, epoch)
        _, eeg_aug = make_views(self.pipeline, None, dataset.eeg[batch], epoch, batch)
        dropout_seed = derive_seed(self.seed, DOMAIN_DROPOUT, epoch, step)
        h_eeg = self.eeg_encoder.forward(eeg_aug, train=train,
                                         dropout_seed=dropout_seed)
        z_i, z_e = project(self.projectors, self.loss_config, h_img, h_eeg)
        s = similarity_matrix(z_i, z_e, self.loss_config.variant)
        return contrastive_loss(s, self.temperature.tau(),
                                self.loss_config.strict_negatives)

    def clean_embeddings(self, dataset: PairedDataset, indices: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray]:
        """(image, EEG) shared-space embeddings for evaluation; no dropout.

        Pixel candidates are encoded un-augmented. Embedding-file candidates
        use the clean rows when the manifest carries them, otherwise the mean
        of the same K views used in training (the fused representation is the
        image representation). Normalization follows the trained loss variant.
        """
        idx = np.asarray(indices)
        if self.image_mode == "pixels":
            feats = self.image_source.encode(dataset.images.pixels[idx])
        elif self.image_source.clean is not None:
            feats = self.image_source.clean_rows(idx)
        else:
            stack = np.stack([self.image_source.view_rows(k, idx)
                              for k in range(self.pipeline.n_views)])
            feats = stack.mean(axis=0)
        z_i, z_e = project(self.projectors, self.loss_config,
                           Tensor(feats), self.eeg_encoder.forward(dataset.eeg[idx]))
        return z_i.data.copy(), z_e.data.copy()


def model_from_checkpoint(path, dataset: PairedDataset) -> Model:
    state, config, meta = load_checkpoint(path)
    model = Model(build_experiment(config), dataset)
    if meta:
        if (meta.get("eeg_channels") != dataset.eeg.shape[1]
                or meta.get("eeg_samples") != dataset.eeg.shape[2]):
            raise ContractError(
                f"checkpoint was trained on EEG {meta.get('eeg_channels')}x"
                f"{meta.get('eeg_samples')}, dataset is "
                f"{dataset.eeg.shape[1]}x{dataset.eeg.shape[2]}")
    model.load_state(state)
    return model


@dataclass
class TrainResult:
    model: Model
    rows: list[dict]
    runlog_path: Path
    checkpoint_path: Path
    final_top1: float | None
    final_top5: float | None


def _format_row(row: dict) -> str:
    top1 = "" if row["top1"] is None else f"{row['top1']:.4f}"
    top5 = "" if row["top5"] is None else f"{row['top5']:.4f}"
    return (f"{row['epoch']},{row['loss']:.6f},{row['tau']:.6f},"
            f"{top1},{top5},{row['seconds']:.3f}")


def write_runlog(rows: list[dict], path) -> None:
    lines = [RUNLOG_HEADER] + [_format_row(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def train(experiment: Experiment, dataset: PairedDataset, out_dir) -> TrainResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = experiment.train
    batch_size = int(tcfg["batch_size"])
    epochs = int(tcfg["epochs"])
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    eval_every = int(tcfg.get("eval_every", 0))
    ckpt_every = int(tcfg.get("checkpoint_every", 0))
    log_timing = bool(tcfg.get("log_timing", True))

    model = Model(experiment, dataset)
    optimizer = AdamW(model.trainable_params(), lr=float(tcfg["lr"]),
                      weight_decay=float(tcfg["weight_decay"]))
    freeze_ref = model.frozen_checksum()
    train_idx = dataset.train_indices
    if train_idx.shape[0] < 2:
        raise ContractError("training split has fewer than 2 pairs")

    meta = {
        "eeg_channels": int(dataset.eeg.shape[1]),
        "eeg_samples": int(dataset.eeg.shape[2]),
        "image_mode": dataset.images.mode,
        "image_dim": int(model.image_dim),
    }
    ckpt_path = out / "checkpoint.nbck"
    rows: list[dict] = []
    last_good = model.state()

    for epoch in range(1, epochs + 1):
        t_start = time.perf_counter()
        batches = shuffle_batches(train_idx, batch_size, epoch, experiment.seed)
        if not batches:
            raise ContractError("no usable batches; dataset smaller than 2 pairs")
        epoch_losses = []
        for step, batch in enumerate(batches):
            loss = model.step_loss(dataset, batch, epoch, step, train=True)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                save_checkpoint(ckpt_path, last_good, experiment.raw, meta)
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}; "
                    f"last-good checkpoint written to {ckpt_path}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(loss_val)
        if model.frozen_checksum() != freeze_ref:
            raise ContractError("frozen image source changed during training")
        last_good = model.state()

        top1 = top5 = None
        do_eval = (eval_every > 0 and epoch % eval_every == 0) or epoch == epochs
        if do_eval and dataset.test_indices.shape[0] >= 2:
            report = evalkit.evaluate(
                model, dataset, n_way=0, top_k=(1, 5),
                repeats=int(tcfg.get("eval_repeats", 1)), seed=experiment.seed)
            top1 = report.accuracies.get(1)
            top5 = report.accuracies.get(5)
        seconds = (time.perf_counter() - t_start) if log_timing else 0.0
        rows.append({
            "epoch": epoch,
            "loss": float(np.mean(epoch_losses)),
            "tau": model.temperature.value(),
            "top1": top1,
            "top5": top5,
            "seconds": seconds,
        })
        if ckpt_every > 0 and epoch % ckpt_every == 0 and epoch != epochs:
            save_checkpoint(out / f"checkpoint_epoch{epoch}.nbck",
                            model.state(), experiment.raw, meta)

    save_checkpoint(ckpt_path, model.state(), experiment.raw, meta)
    runlog_path = out / "runlog.csv"
    write_runlog(rows, runlog_path)
    figures.loss_curve(rows, out / "loss_curve.svg")
    return TrainResult(model=model, rows=rows, runlog_path=runlog_path,
                       checkpoint_path=ckpt_path,
                       final_top1=rows[-1]["top1"], final_top5=rows[-1]["top5"])
