"""Backend selection for the hot elementwise kernels.

The compiled Cython module is used when it is importable; otherwise, or when
``FLEXENCODER_PURE_PYTHON=1`` is set, the numpy versions take over. Both
backends share one calling convention, so callers never branch on it.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _kernels_py
from .nn import Activation

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_ACT_CODES = {a: i for i, a in enumerate(Activation)}


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


def _select(name: str | None):
    if name is None:
        forced = os.environ.get("FLEXENCODER_PURE_PYTHON", "").strip() not in ("", "0")
        name = "python" if forced or _compiled is None else "cython"
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; reinstall with a C compiler")
        return name, _compiled
    if name == "python":
        return name, _kernels_py
    raise ValueError(f"unknown backend {name!r}")


BACKEND, _impl = _select(None)


def set_backend(name: str) -> None:
    global BACKEND, _impl
    BACKEND, _impl = _select(name)


@contextlib.contextmanager
def backend(name: str):
    previous = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


@contextlib.contextmanager
def flush_subnormals():
    """Run the block with subnormal floats flushed to zero in this thread.

    Saturated layers drive products inside matrix multiplies into the
    subnormal range, where the CPU slows down by two orders of magnitude.
    Only the compiled backend can switch the mode; with the numpy backend
    this is a no-op. The previous mode is restored on exit.
    """
    if _impl is not _compiled:
        yield
        return
    old = _compiled.enter_flush_mode()
    try:
        yield
    finally:
        _compiled.restore_fp_mode(old)


def _inplace(a: np.ndarray) -> np.ndarray:
    if not a.flags.c_contiguous:
        raise ValueError("in-place kernel arguments must be C-contiguous")
    return a.reshape(-1)


def _readonly(a, dtype) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=dtype).reshape(-1)


_NATIVE = (np.dtype(np.float32), np.dtype(np.float64))


def _for(dtype):
    # compiled kernels only cover float32/float64; anything else (e.g. longdouble) uses numpy
    return _impl if np.dtype(dtype) in _NATIVE else _kernels_py


def sgd_step(w, g, lr, wd=0.0):
    _for(w.dtype).sgd_step(_inplace(w), _readonly(g, w.dtype), float(lr), float(wd))


def adam_step(w, g, m, v, lr, wd, beta1, beta2, eps, bc1, bc2):
    _for(w.dtype).adam_step(
        _inplace(w), _readonly(g, w.dtype), _inplace(m), _inplace(v),
        float(lr), float(wd), float(beta1), float(beta2), float(eps), float(bc1), float(bc2),
    )


def adagrad_step(w, g, acc, lr, wd, eps):
    _for(w.dtype).adagrad_step(_inplace(w), _readonly(g, w.dtype), _inplace(acc), float(lr), float(wd), float(eps))


def rmsprop_step(w, g, acc, lr, wd, rho, eps):
    _for(w.dtype).rmsprop_step(
        _inplace(w), _readonly(g, w.dtype), _inplace(acc), float(lr), float(wd), float(rho), float(eps)
    )


# numpy's SIMD tanh beats the scalar libm call in the compiled loop by ~15x,
# so TANH stays on numpy under either backend (see benchmarks/bench_kernels.py)
_NUMPY_ACTIVATIONS = frozenset({Activation.TANH})


def _for_act(act: Activation, dtype):
    return _kernels_py if act in _NUMPY_ACTIVATIONS else _for(dtype)


def act_forward(act: Activation, z: np.ndarray) -> np.ndarray:
    z = np.ascontiguousarray(z)
    out = np.empty_like(z)
    _for_act(act, z.dtype).act_forward_into(_ACT_CODES[act], z.reshape(-1), out.reshape(-1))
    return out


def act_backward(act: Activation, z: np.ndarray, delta: np.ndarray) -> None:
    """``delta *= activate_grad(act, z)`` in place."""
    _for_act(act, delta.dtype).act_backward(_ACT_CODES[act], _readonly(z, delta.dtype), _inplace(delta))


def masked_sq_sum(y, q, mask) -> tuple[float, float]:
    """(sum of mask * (y - q)**2 over mask != 0, sum of mask)."""
    dtype = np.result_type(y, q, mask)
    return _for(dtype).masked_sq_sum(_readonly(y, dtype), _readonly(q, dtype), _readonly(mask, dtype))
