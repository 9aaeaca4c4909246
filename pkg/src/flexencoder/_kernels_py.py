"""Pure numpy versions of the hot kernels.

Same signatures and in-place semantics as the compiled ``_kernels`` module;
used when the extension is not built or ``FLEXENCODER_PURE_PYTHON=1``.
"""

import numpy as np

from .nn import Activation, activate, activate_grad

ACTIVATIONS = tuple(Activation)


def sgd_step(w, g, lr, wd):
    if wd:
        g = g + wd * w
    w -= lr * g


def adam_step(w, g, m, v, lr, wd, beta1, beta2, eps, bc1, bc2):
    if wd:
        g = g + wd * w
    m *= beta1
    m += (1 - beta1) * g
    v *= beta2
    v += (1 - beta2) * (g * g)
    w -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def adagrad_step(w, g, acc, lr, wd, eps):
    if wd:
        g = g + wd * w
    acc += g * g
    w -= lr * g / (np.sqrt(acc) + eps)


def rmsprop_step(w, g, acc, lr, wd, rho, eps):
    if wd:
        g = g + wd * w
    acc *= rho
    acc += (1 - rho) * (g * g)
    w -= lr * g / (np.sqrt(acc) + eps)


def _flush(a):
    # subnormals to zero, matching the compiled kernels
    a[np.abs(a) < np.finfo(a.dtype).tiny] = 0


def act_forward_into(code, z, out):
    out[...] = activate(ACTIVATIONS[code], z)
    _flush(out)


def act_backward(code, z, delta):
    delta *= activate_grad(ACTIVATIONS[code], z).astype(delta.dtype, copy=False)
    _flush(delta)


def masked_sq_sum(y, q, mask):
    diff = y - q
    sq = np.where(mask != 0, mask * diff * diff, 0)
    # accumulate in at least double precision; wider inputs keep their width
    acc = np.result_type(sq.dtype, np.float64)
    return acc.type(np.sum(sq, dtype=acc)), acc.type(mask.sum(dtype=acc))
