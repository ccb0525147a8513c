"""EEG trial preprocessing: baseline correction, block-mean downsampling,
multivariate noise normalization (whitening), repetition averaging.

All functions are pure and operate on plain numpy arrays; per-trial ops
are order-stable so preprocess(concat(A, B)) == concat(preprocess(A),
preprocess(B)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError


@dataclass(frozen=True)
class PreprocessConfig:
    baseline_window: int = 0          # samples taken from the pre-stimulus segment
    downsample_factor: int = 1
    mvnn_enabled: bool = True
    mvnn_shrinkage: float = 0.1       # lambda in [0, 1]
    repetitions: int = 1

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ContractError(f"downsample_factor must be >= 1, got {self.downsample_factor}")
        if not (0.0 <= self.mvnn_shrinkage <= 1.0):
            raise ContractError(f"mvnn_shrinkage must be in [0, 1], got {self.mvnn_shrinkage}")
        if self.repetitions < 1:
            raise ContractError(f"repetitions must be >= 1, got {self.repetitions}")


def baseline_correct(trial: np.ndarray, baseline_window: int,
                     n_pre: int | None = None) -> np.ndarray:
    """Subtract the per-channel mean of the pre-stimulus window, drop the pre segment.

    ``trial`` is (C, n_pre + T). The window is the last ``baseline_window``
    samples of the pre-stimulus segment; by default the whole pre segment is
    the window (n_pre == baseline_window).
    """
    if trial.ndim != 2:
        raise ContractError(f"trial must be (C, T), got shape {trial.shape}")
    if n_pre is None:
        n_pre = baseline_window
    if baseline_window > n_pre:
        raise ContractError(
            f"baseline window ({baseline_window}) exceeds pre-stimulus length ({n_pre})"
        )
    if n_pre >= trial.shape[1]:
        raise ContractError("pre-stimulus segment leaves no post-stimulus samples")
    base = trial[:, n_pre - baseline_window:n_pre]
    mean = base.mean(axis=1, keepdims=True) if baseline_window > 0 else 0.0
    return trial[:, n_pre:] - mean


def downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean decimation along the last axis; trailing remainder dropped."""
    if factor <= 0:
        raise ContractError(f"downsample factor must be positive, got {factor}")
    if factor == 1:
        return x.copy()
    t = x.shape[-1]
    n_blocks = t // factor
    trimmed = x[..., : n_blocks * factor]
    return trimmed.reshape(x.shape[:-1] + (n_blocks, factor)).mean(axis=-1)


def mvnn_whiten(trials: np.ndarray, shrinkage: float = 0.0
                ) -> tuple[np.ndarray, np.ndarray]:
    """Whiten channels by the inverse square root of the shrunk channel covariance.

    The covariance is pooled over every (trial, time) sample with per-channel
    mean removal, shrunk as (1 - lambda) * Sigma + lambda * diag(Sigma), and
    inverted via symmetric eigendecomposition. Returns (whitened trials,
    whitening matrix W) with whitened[n] = W @ trials[n].
    """
    if trials.ndim != 3:
        raise ContractError(f"trials must be (N, C, T), got shape {trials.shape}")
    n, c, t = trials.shape
    if n * t <= c:
        raise ContractError(f"covariance not estimable: N*T = {n * t} <= C = {c}")
    if not (0.0 <= shrinkage <= 1.0):
        raise ContractError(f"shrinkage must be in [0, 1], got {shrinkage}")
    flat = trials.transpose(1, 0, 2).reshape(c, n * t).astype(np.float64)
    flat = flat - flat.mean(axis=1, keepdims=True)
    sigma = (flat @ flat.T) / (n * t)
    shrunk = (1.0 - shrinkage) * sigma + shrinkage * np.diag(np.diag(sigma))
    evals, evecs = np.linalg.eigh(shrunk)
    if np.any(evals <= 0):
        raise NumericError(
            "shrunk channel covariance is not positive definite; "
            "increase mvnn_shrinkage"
        )
    w = (evecs * (evals ** -0.5)) @ evecs.T
    whitened = np.einsum("ij,njt->nit", w, trials.astype(np.float64))
    return whitened.astype(trials.dtype), w


def average_repetitions(trials: np.ndarray, stimulus_ids, repetitions: int
                        ) -> tuple[np.ndarray, list]:
    """Mean over each stimulus group of exactly ``repetitions`` trials.

    Group order follows first appearance. Returns (averaged trials, group ids).
    """
    ids = list(stimulus_ids)
    if len(ids) != trials.shape[0]:
        raise ContractError(
            f"{len(ids)} stimulus ids for {trials.shape[0]} trials"
        )
    order: list = []
    groups: dict = {}
    for i, sid in enumerate(ids):
        if sid not in groups:
            groups[sid] = []
            order.append(sid)
        groups[sid].append(i)
    ragged = [sid for sid in order if len(groups[sid]) != repetitions]
    if ragged:
        raise ContractError(
            f"stimulus groups with != {repetitions} repetitions: {ragged[:8]}"
        )
    out = np.stack([trials[groups[sid]].mean(axis=0) for sid in order])
    return out, order


def preprocess_trials(trials: np.ndarray, config: PreprocessConfig,
                      stimulus_ids=None, mvnn_fit_mask: np.ndarray | None = None
                      ) -> tuple[np.ndarray, list | None]:
    """Full pipeline: baseline -> downsample -> whiten -> average repetitions.

    ``mvnn_fit_mask`` restricts covariance estimation (e.g. to the training
    split); the whitening matrix is applied to all trials.
    """
    out = trials
    if config.baseline_window > 0:
        out = np.stack([baseline_correct(tr, config.baseline_window) for tr in out])
    if config.downsample_factor > 1:
        out = downsample(out, config.downsample_factor)
    if config.mvnn_enabled:
        fit = out if mvnn_fit_mask is None else out[mvnn_fit_mask]
        _, w = mvnn_whiten(fit, config.mvnn_shrinkage)
        out = np.einsum("ij,njt->nit", w, out.astype(np.float64)).astype(out.dtype)
    ids = None
    if config.repetitions > 1:
        if stimulus_ids is None:
            raise ContractError("repetition averaging requires stimulus ids")
        out, ids = average_repetitions(out, stimulus_ids, config.repetitions)
    return out, ids
