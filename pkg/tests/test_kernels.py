"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from flexencoder import kernels
from flexencoder.nn import Activation, activate, activate_grad

pytestmark = pytest.mark.skipif(
    "cython" not in kernels.available_backends(), reason="compiled kernels not built"
)

DTYPES = [np.float64, np.float32]
TOL = {np.float64: 1e-12, np.float32: 1e-6}


def run_both(fn):
    out = {}
    for name in ("python", "cython"):
        with kernels.backend(name):
            out[name] = fn()
    return out["python"], out["cython"]


def arrays(dtype, shape=(7, 33), seed=0):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(shape).astype(dtype) for _ in range(2)]


@pytest.mark.parametrize("dtype", DTYPES)
@pytest.mark.parametrize("kind", ["sgd", "adam", "adagrad", "rmsprop"])
def test_optimizer_kernels_agree(kind, dtype):
    def go():
        w, g = arrays(dtype)
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        for t in range(1, 4):
            if kind == "sgd":
                kernels.sgd_step(w, g, 0.1, 0.01)
            elif kind == "adam":
                kernels.adam_step(w, g, m, v, 0.1, 0.01, 0.9, 0.999, 1e-8, 1 - 0.9**t, 1 - 0.999**t)
            elif kind == "adagrad":
                kernels.adagrad_step(w, g, v, 0.1, 0.01, 1e-8)
            else:
                kernels.rmsprop_step(w, g, v, 0.1, 0.01, 0.9, 1e-8)
        return w

    a, b = run_both(go)
    np.testing.assert_allclose(a, b, rtol=TOL[dtype], atol=TOL[dtype])


@pytest.mark.parametrize("dtype", DTYPES)
@pytest.mark.parametrize("act", list(Activation))
def test_activation_kernels_agree(act, dtype):
    z = (np.random.default_rng(1).standard_normal((5, 40)) * 4).astype(dtype)
    z[0, :3] = [0.0, 6.0, -0.0]

    def go():
        delta = np.full_like(z, 0.5)
        kernels.act_backward(act, z, delta)
        return kernels.act_forward(act, z), delta

    (fa, da), (fb, db) = run_both(go)
    np.testing.assert_allclose(fa, fb, rtol=TOL[dtype], atol=TOL[dtype])
    np.testing.assert_allclose(da, db, rtol=TOL[dtype], atol=TOL[dtype])
    np.testing.assert_allclose(fb, activate(act, z.astype(np.float64)), rtol=TOL[dtype], atol=TOL[dtype])
    np.testing.assert_allclose(db, 0.5 * activate_grad(act, z.astype(np.float64)), rtol=TOL[dtype], atol=TOL[dtype])


@pytest.mark.parametrize("dtype", DTYPES)
def test_masked_sq_sum_agrees(dtype):
    y, q = arrays(dtype)
    mask = (np.random.default_rng(2).random(y.shape) < 0.3).astype(dtype)
    (sa, ca), (sb, cb) = run_both(lambda: kernels.masked_sq_sum(y, q, mask))
    assert ca == cb == mask.sum()
    assert sa == pytest.approx(sb, rel=TOL[dtype])


def test_masked_sq_sum_ignores_nan_at_masked_out():
    y = np.array([1.0, np.nan, 3.0])
    q = np.array([0.0, 1.0, 3.0])
    mask = np.array([1.0, 0.0, 1.0])
    for name in ("python", "cython"):
        with kernels.backend(name):
            assert kernels.masked_sq_sum(y, q, mask) == (1.0, 2.0)


def test_inplace_requires_contiguous():
    w = np.zeros((4, 4))[:, ::2]
    with pytest.raises(ValueError, match="contiguous"):
        kernels.sgd_step(w, np.ones_like(w), 0.1)


def test_backend_switch_restores():
    before = kernels.BACKEND
    with kernels.backend("python"):
        assert kernels.BACKEND == "python"
    assert kernels.BACKEND == before
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


@pytest.mark.parametrize("dtype", DTYPES)
def test_activation_kernels_flush_subnormals(dtype):
    tiny = np.finfo(dtype).tiny
    z = np.array([-1000.0, -80.0, 0.0, 3.0], dtype=dtype)

    def go():
        out = kernels.act_forward(Activation.SIGMOID, z)
        delta = np.array([tiny / 4, tiny * 4, tiny / 8, 1.0], dtype=dtype)
        kernels.act_backward(Activation.RELU, np.ones_like(z), delta)
        return out, delta

    for out, delta in run_both(go):
        assert not np.any((out != 0) & (np.abs(out) < tiny))
        assert delta.tolist() == [0.0, tiny * 4, 0.0, 1.0]


def _subnormal_product():
    a = np.array([1e-20], dtype=np.float32)
    return float((a * a)[0])


def test_flush_mode_is_scoped():
    assert _subnormal_product() > 0  # 1e-40 is representable as a subnormal
    with kernels.flush_subnormals():
        assert _subnormal_product() == 0.0
    assert _subnormal_product() > 0
    with kernels.backend("python"), kernels.flush_subnormals():
        assert _subnormal_product() > 0
