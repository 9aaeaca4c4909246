# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused elementwise kernels for training.

Each optimizer update touches every weight once, with no temporaries, and
activation derivatives are multiplied into the incoming delta in place.
Everything is computed in the array's own precision, as in the numpy
fallback.
"""

from cython cimport floating
from libc.float cimport DBL_MIN, FLT_MIN
from libc.math cimport exp, expf, expm1, expm1f, sqrt, tanh, tanhf

cdef extern from *:
    """
    #if defined(__SSE2__) || defined(__x86_64__) || defined(_M_X64)
    #include <xmmintrin.h>
    static unsigned int fp_mode_get(void) { return _mm_getcsr(); }
    static void fp_mode_set(unsigned int mode) { _mm_setcsr(mode); }
    static const unsigned int FP_FLUSH_BITS = 0x8040;  /* FTZ | DAZ */
    #else
    static unsigned int fp_mode_get(void) { return 0; }
    static void fp_mode_set(unsigned int mode) { (void)mode; }
    static const unsigned int FP_FLUSH_BITS = 0;
    #endif
    """
    unsigned int fp_mode_get() nogil
    void fp_mode_set(unsigned int mode) nogil
    const unsigned int FP_FLUSH_BITS

# C constants rather than module globals, so they fold into the loops
cdef extern from *:
    """
    static const double SELU_LAMBDA = 1.0507009873554805;
    static const double SELU_ALPHA = 1.6732632423543772;
    static const double ELU_ALPHA = 1.0;
    static const double LRELU_SLOPE = 0.01;
    """
    const double SELU_LAMBDA
    const double SELU_ALPHA
    const double ELU_ALPHA
    const double LRELU_SLOPE

# codes follow the declaration order of nn.Activation
cdef enum:
    SELU = 0
    RELU = 1
    RELU6 = 2
    ELU = 3
    LRELU = 4
    SIGMOID = 5
    TANH = 6
    SWISH = 7


cdef inline floating _exp(floating x) noexcept nogil:
    if floating is float:
        return expf(x)
    return exp(x)


cdef inline floating _expm1(floating x) noexcept nogil:
    if floating is float:
        return expm1f(x)
    return expm1(x)


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return tanhf(x)
    return tanh(x)


cdef inline floating _abs(floating x) noexcept nogil:
    return x if x >= 0 else -x


# Bodies are branch-free: exp is taken of min(x, 0) or -|x| and the result is
# selected, so random-sign inputs cost no mispredictions. Same formulas as the
# numpy fallback.

cdef inline floating _neg(floating x) noexcept nogil:
    return x if x < 0 else 0


cdef inline floating _sigmoid(floating x) noexcept nogil:
    cdef floating e = _exp(-_abs(x))
    return (1 if x >= 0 else e) / (1 + e)


cdef inline floating _act(int code, floating x) noexcept nogil:
    cdef floating t
    if code == RELU:
        return x if x > 0 else 0
    if code == RELU6:
        return 0 if x < 0 else (6 if x > 6 else x)
    if code == ELU:
        t = <floating>ELU_ALPHA * _expm1(_neg(x))
        return x if x > 0 else t
    if code == SELU:
        t = <floating>SELU_ALPHA * _expm1(_neg(x))
        return <floating>SELU_LAMBDA * (x if x > 0 else t)
    if code == LRELU:
        return x if x > 0 else <floating>LRELU_SLOPE * x
    if code == SIGMOID:
        return _sigmoid(x)
    if code == TANH:
        return _tanh(x)
    return x * _sigmoid(x)


cdef inline floating _act_grad(int code, floating x) noexcept nogil:
    cdef floating t
    if code == RELU:
        return 1 if x >= 0 else 0
    if code == RELU6:
        return 1 if (x >= 0 and x < 6) else 0
    if code == ELU:
        t = <floating>ELU_ALPHA * _exp(_neg(x))
        return 1 if x >= 0 else t
    if code == SELU:
        t = <floating>SELU_ALPHA * _exp(_neg(x))
        return <floating>SELU_LAMBDA * (1 if x >= 0 else t)
    if code == LRELU:
        return 1 if x >= 0 else <floating>LRELU_SLOPE
    if code == SIGMOID:
        t = _sigmoid(x)
        return t * (1 - t)
    if code == TANH:
        t = _tanh(x)
        return 1 - t * t
    t = _sigmoid(x)
    return t + x * t * (1 - t)


# Subnormal results are flushed to zero. Saturated SIGMOID/TANH/SELU layers
# otherwise fill activations and deltas with subnormals, and BLAS runs two
# orders of magnitude slower on them.
cdef inline floating _ftz(floating x) noexcept nogil:
    cdef floating tiny = FLT_MIN if floating is float else DBL_MIN
    return x if _abs(x) >= tiny else 0


# float32 loops stay in float so they vectorize and use the float libm calls.

def sgd_step(floating[::1] w, floating[::1] g, double lr, double wd):
    cdef Py_ssize_t i
    cdef floating lr_ = lr, wd_ = wd
    with nogil:
        for i in range(w.shape[0]):
            w[i] = w[i] - lr_ * (g[i] + wd_ * w[i])


def adam_step(floating[::1] w, floating[::1] g, floating[::1] m, floating[::1] v,
              double lr, double wd, double beta1, double beta2, double eps,
              double bc1, double bc2):
    cdef Py_ssize_t i
    cdef floating gi, mi, vi
    cdef floating wd_ = wd, b1 = beta1, b2 = beta2, eps_ = eps
    cdef floating c1 = 1.0 - beta1, c2 = 1.0 - beta2
    cdef floating step = lr / bc1, inv_bc2 = 1.0 / bc2
    with nogil:
        for i in range(w.shape[0]):
            gi = g[i] + wd_ * w[i]
            mi = b1 * m[i] + c1 * gi
            vi = b2 * v[i] + c2 * gi * gi
            m[i] = mi
            v[i] = vi
            w[i] = w[i] - step * mi / (sqrt(vi * inv_bc2) + eps_)


def adagrad_step(floating[::1] w, floating[::1] g, floating[::1] acc,
                 double lr, double wd, double eps):
    cdef Py_ssize_t i
    cdef floating gi, ai
    cdef floating lr_ = lr, wd_ = wd, eps_ = eps
    with nogil:
        for i in range(w.shape[0]):
            gi = g[i] + wd_ * w[i]
            ai = acc[i] + gi * gi
            acc[i] = ai
            w[i] = w[i] - lr_ * gi / (sqrt(ai) + eps_)


def rmsprop_step(floating[::1] w, floating[::1] g, floating[::1] acc,
                 double lr, double wd, double rho, double eps):
    cdef Py_ssize_t i
    cdef floating gi, ai
    cdef floating lr_ = lr, wd_ = wd, rho_ = rho, eps_ = eps
    cdef floating c = 1.0 - rho
    with nogil:
        for i in range(w.shape[0]):
            gi = g[i] + wd_ * w[i]
            ai = rho_ * acc[i] + c * gi * gi
            acc[i] = ai
            w[i] = w[i] - lr_ * gi / (sqrt(ai) + eps_)


# One loop per activation with a literal code: after inlining, each body is
# straight-line code instead of a per-element dispatch.

def act_forward_into(int code, floating[::1] z, floating[::1] out):
    cdef Py_ssize_t i, n = z.shape[0]
    with nogil:
        if code == SELU:
            for i in range(n):
                out[i] = _ftz(_act(SELU, z[i]))
        elif code == RELU:
            for i in range(n):
                out[i] = _ftz(_act(RELU, z[i]))
        elif code == RELU6:
            for i in range(n):
                out[i] = _ftz(_act(RELU6, z[i]))
        elif code == ELU:
            for i in range(n):
                out[i] = _ftz(_act(ELU, z[i]))
        elif code == LRELU:
            for i in range(n):
                out[i] = _ftz(_act(LRELU, z[i]))
        elif code == SIGMOID:
            for i in range(n):
                out[i] = _ftz(_act(SIGMOID, z[i]))
        elif code == TANH:
            for i in range(n):
                out[i] = _ftz(_act(TANH, z[i]))
        elif code == SWISH:
            for i in range(n):
                out[i] = _ftz(_act(SWISH, z[i]))


def act_backward(int code, floating[::1] z, floating[::1] delta):
    cdef Py_ssize_t i, n = z.shape[0]
    with nogil:
        if code == SELU:
            for i in range(n):
                delta[i] = _ftz(delta[i] * _act_grad(SELU, z[i]))
        elif code == RELU:
            for i in range(n):
                delta[i] = _ftz(delta[i] * _act_grad(RELU, z[i]))
        elif code == RELU6:
            for i in range(n):
                delta[i] = _ftz(delta[i] * _act_grad(RELU6, z[i]))
        elif code == ELU:
            for i in range(n):
                delta[i] = _ftz(delta[i] * _act_grad(ELU, z[i]))
        elif code == LRELU:
            for i in range(n):
                delta[i] = _ftz(delta[i] * _act_grad(LRELU, z[i]))
        elif code == SIGMOID:
            for i in range(n):
                delta[i] = _ftz(delta[i] * _act_grad(SIGMOID, z[i]))
        elif code == TANH:
            for i in range(n):
                delta[i] = _ftz(delta[i] * _act_grad(TANH, z[i]))
        elif code == SWISH:
            for i in range(n):
                delta[i] = _ftz(delta[i] * _act_grad(SWISH, z[i]))


def masked_sq_sum(floating[::1] y, floating[::1] q, floating[::1] mask):
    cdef Py_ssize_t i
    cdef double sq = 0.0, count = 0.0, d
    with nogil:
        for i in range(y.shape[0]):
            if mask[i] != 0:
                d = <double>y[i] - <double>q[i]
                sq += mask[i] * d * d
                count += mask[i]
    return sq, count


def enter_flush_mode():
    """Turn on flush-to-zero and denormals-are-zero for this thread; returns the old mode."""
    cdef unsigned int old = fp_mode_get()
    fp_mode_set(old | FP_FLUSH_BITS)
    return old


def restore_fp_mode(unsigned int mode):
    fp_mode_set(mode)
