"""Finite-difference verification of the analytic backward pass."""

from __future__ import annotations

import numpy as np

from .model import FlexModel, RowBatch, backward, forward, masked_mse


def _loss(model: FlexModel, batch: RowBatch, noise, drop):
    mode = "train" if (noise is not None or drop is not None) else "eval"
    trace = forward(model, batch, mode, noise=noise, drop=drop)
    return masked_mse(batch.y, trace.q, batch.mask).mmse


def _cast_batch(batch: RowBatch, dtype) -> RowBatch:
    return RowBatch(batch.x.astype(dtype), batch.y.astype(dtype), batch.mask.astype(dtype))


def grad_check(
    net: FlexModel,
    batch: RowBatch,
    eps: float = 3e-4,
    *,
    noise: np.ndarray | None = None,
    drop: np.ndarray | None = None,
    reference_dtype=np.longdouble,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The analytic gradients come from ``backward`` at the network's own
    precision. The reference is a fourth-order central difference, with each
    parameter perturbed by ``±eps`` and ``±2 eps``, evaluated on a copy of the
    network held in ``reference_dtype``. The extra width keeps the reference
    accurate for gradient entries near zero, where the ``1e-8`` floor of the
    relative error leaves no room for double-precision rounding in the loss.
    The relative error is ``|a - cd| / max(|a|, |cd|, 1e-8)``.

    Corruption is off unless fixed ``noise``/``drop`` masks are supplied.
    """
    mode = "train" if (noise is not None or drop is not None) else "eval"
    trace = forward(net, batch, mode, noise=noise, drop=drop)
    analytic = backward(net, trace, batch)

    ref = net.astype(reference_dtype)
    ref_batch = _cast_batch(batch, reference_dtype)
    ref_noise = None if noise is None else np.asarray(noise).astype(reference_dtype)
    ref_drop = None if drop is None else np.asarray(drop).astype(reference_dtype)
    h = np.asarray(eps, dtype=reference_dtype)

    worst = 0.0
    for name, param in ref.parameters().items():
        flat = param.reshape(-1)
        gflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            loss = {}
            for step in (2, 1, -1, -2):
                flat[i] = orig + step * h
                loss[step] = _loss(ref, ref_batch, ref_noise, ref_drop)
            flat[i] = orig
            # paired differences so a parameter the loss ignores gives exactly 0
            cd = float((8 * (loss[1] - loss[-1]) - (loss[2] - loss[-2])) / (12 * h))
            a = float(gflat[i])
            err = abs(a - cd) / max(abs(a), abs(cd), 1e-8)
            worst = max(worst, err)
    return worst
