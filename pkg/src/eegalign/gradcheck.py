"""Central finite-difference gradient verification.

The checker is deliberately independent of the autodiff engine: it only
calls the supplied forward function on perturbed copies of plain numpy
arrays. Checks must run in f64; step size is relative per element.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .seeding import derive_rng
from . import tensor as T


def finite_difference(f: Callable[[Sequence[np.ndarray]], float],
                      arrays: list[np.ndarray], index: int,
                      step: float = 1e-6) -> np.ndarray:
    """d f / d arrays[index] by central differences, element by element."""
    x = arrays[index]
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f(arrays)
        flat[i] = orig - h
        fm = f(arrays)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, floor)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_scalar_fn(build: Callable[[list[T.Tensor]], T.Tensor],
                    shapes: list[tuple], seed: int = 0,
                    step: float = 1e-6) -> float:
    """Compare autodiff grads of a scalar-valued graph against finite differences.

    ``build`` maps a list of f64 leaf tensors to a scalar Tensor. Returns the
    max relative error over all inputs.
    """
    rng = derive_rng(seed, 0xFD)
    arrays = [rng.standard_normal(s).astype(np.float64) for s in shapes]

    leaves = [T.Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build(leaves)
    if loss.data.size != 1:
        raise ContractError("gradcheck target must be scalar")
    loss.backward()

    def f(arrs):
        ts = [T.Tensor(a, dtype=np.float64) for a in arrs]
        return float(build(ts).data.reshape(()))

    worst = 0.0
    for i, leaf in enumerate(leaves):
        fd = finite_difference(f, [a.copy() for a in arrays], i, step=step)
        ad = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, relative_error(ad, fd))
    return worst


def weighted_sum(out: T.Tensor, seed: int = 1) -> T.Tensor:
    """Reduce an op output to a scalar through fixed random weights.

    Exercises every output element so the check cannot pass by accident on
    a single reduced direction.
    """
    rng = derive_rng(seed, 0x5EED)
    w = T.Tensor(rng.standard_normal(out.shape).astype(out.data.dtype))
    return T.tsum(T.mul(out, w))


def op_suite(seed: int = 0) -> dict[str, float]:
    """Max relative error per differentiable op, each checked in f64."""
    results: dict[str, float] = {}

    results["matmul"] = check_scalar_fn(
        lambda ts: weighted_sum(T.matmul(ts[0], ts[1]), seed),
        [(3, 4), (4, 2)], seed=seed)
    results["conv2d"] = check_scalar_fn(
        lambda ts: weighted_sum(
            T.conv2d(ts[0], ts[1], bias=ts[2], stride=1, padding=1), seed),
        [(2, 2, 5, 6), (3, 2, 3, 3), (3,)], seed=seed + 1)
    results["add"] = check_scalar_fn(
        lambda ts: weighted_sum(T.add(ts[0], ts[1]), seed), [(4, 3), (4, 3)], seed=seed + 2)
    results["add_bias"] = check_scalar_fn(
        lambda ts: weighted_sum(T.add(ts[0], ts[1]), seed), [(4, 3), (3,)], seed=seed + 3)
    results["mul"] = check_scalar_fn(
        lambda ts: weighted_sum(T.mul(ts[0], ts[1]), seed), [(2, 5), (2, 5)], seed=seed + 4)
    results["scale"] = check_scalar_fn(
        lambda ts: weighted_sum(T.scale(ts[0], -1.7), seed), [(3, 3)], seed=seed + 5)
    results["scale_by"] = check_scalar_fn(
        lambda ts: weighted_sum(T.scale_by(ts[0], ts[1]), seed), [(3, 3), (1,)], seed=seed + 6)
    results["elu"] = check_scalar_fn(
        lambda ts: weighted_sum(T.elu(ts[0]), seed), [(4, 4)], seed=seed + 7)
    results["gelu"] = check_scalar_fn(
        lambda ts: weighted_sum(T.gelu(ts[0]), seed), [(5,)], seed=seed + 8)
    results["exp"] = check_scalar_fn(
        lambda ts: weighted_sum(T.texp(ts[0]), seed), [(3, 4)], seed=seed + 9)
    results["log"] = check_scalar_fn(
        lambda ts: weighted_sum(T.tlog(T.texp(ts[0])), seed), [(3, 4)], seed=seed + 10)
    results["sum_axis"] = check_scalar_fn(
        lambda ts: weighted_sum(T.tsum(ts[0], axis=1), seed), [(3, 5)], seed=seed + 11)
    results["mean"] = check_scalar_fn(
        lambda ts: T.tmean(T.mul(ts[0], ts[0])), [(4, 2)], seed=seed + 12)
    results["avg_pool"] = check_scalar_fn(
        lambda ts: weighted_sum(T.avg_pool(ts[0], 3, stride=2), seed),
        [(2, 3, 2, 9)], seed=seed + 13)
    results["dropout"] = check_scalar_fn(
        lambda ts: weighted_sum(T.dropout(ts[0], 0.4, seed=123), seed),
        [(6, 6)], seed=seed + 14)
    results["l2_normalize"] = check_scalar_fn(
        lambda ts: weighted_sum(T.l2_normalize(ts[0], axis=1), seed),
        [(4, 6)], seed=seed + 15)
    results["logsumexp_rows"] = check_scalar_fn(
        lambda ts: weighted_sum(T.logsumexp(ts[0], axis=1), seed), [(4, 4)], seed=seed + 16)
    results["logsumexp_cols"] = check_scalar_fn(
        lambda ts: weighted_sum(T.logsumexp(ts[0], axis=0), seed), [(4, 4)], seed=seed + 17)
    results["diagonal"] = check_scalar_fn(
        lambda ts: weighted_sum(T.diagonal(ts[0]), seed), [(5, 5)], seed=seed + 18)
    results["transpose"] = check_scalar_fn(
        lambda ts: weighted_sum(T.transpose(ts[0]), seed), [(3, 4)], seed=seed + 19)
    results["reshape"] = check_scalar_fn(
        lambda ts: weighted_sum(T.reshape(ts[0], (6, 2)), seed), [(3, 4)], seed=seed + 20)
    return results
