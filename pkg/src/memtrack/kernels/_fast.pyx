# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled forward kernels.

Each function mirrors its counterpart in `reference.py`; the parity test
suite asserts agreement to 1e-12 relative. Loops are written with a fixed
nesting order so repeated calls are bit-reproducible for a given build.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p, sqrt

cnp.import_array()

BACKEND = "cython"


def softmax_rows(object x):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa
    cdef object orig_shape = None
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        orig_shape = arr.shape
        # note: no negative tuple indexing here (wraparound is off)
        arr = arr.reshape(-1, arr.shape[arr.ndim - 1])
    xa = np.ascontiguousarray(arr)
    cdef Py_ssize_t m = xa.shape[0], n = xa.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty((m, n))
    cdef double mx, s, v
    for i in range(m):
        mx = xa[i, 0]
        for j in range(1, n):
            if xa[i, j] > mx:
                mx = xa[i, j]
        s = 0.0
        for j in range(n):
            v = exp(xa[i, j] - mx)
            y[i, j] = v
            s += v
        for j in range(n):
            y[i, j] /= s
    if orig_shape is not None:
        return np.asarray(y).reshape(orig_shape)
    return np.asarray(y)


def rms_norm(object x, object gain, double eps):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0], d = xa.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty((n, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] inv = np.empty((n, 1))
    cdef double s, r
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += xa[i, j] * xa[i, j]
        r = 1.0 / sqrt(s / d + eps)
        inv[i, 0] = r
        for j in range(d):
            y[i, j] = xa[i, j] * r * g[j]
    return np.asarray(y), np.asarray(inv)


cdef inline double _sigmoid(double v) nogil:
    cdef double e
    if v >= 0.0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


def sigmoid(object x):
    arr = np.asarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] f = np.ascontiguousarray(arr.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(f.shape[0])
    cdef Py_ssize_t i
    for i in range(f.shape[0]):
        y[i] = _sigmoid(f[i])
    return np.asarray(y).reshape(arr.shape)


def silu(object x):
    arr = np.asarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] f = np.ascontiguousarray(arr.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(f.shape[0])
    cdef Py_ssize_t i
    for i in range(f.shape[0]):
        y[i] = f[i] * _sigmoid(f[i])
    return np.asarray(y).reshape(arr.shape)


def softplus(object x):
    arr = np.asarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] f = np.ascontiguousarray(arr.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(f.shape[0])
    cdef Py_ssize_t i
    for i in range(f.shape[0]):
        if f[i] > 30.0:
            y[i] = f[i]
        else:
            y[i] = log1p(exp(f[i]))
    return np.asarray(y).reshape(arr.shape)


def depthwise_conv1d(object x, object kernel):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] k = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0], d = xa.shape[1], w = k.shape[0], i, j, c
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.zeros((n, d))
    cdef Py_ssize_t src
    # accumulation order matches reference.py: tap-major, then position
    for j in range(w):
        for i in range(w - 1 - j, n):
            src = i - (w - 1 - j)
            for c in range(d):
                y[i, c] += k[j, c] * xa[src, c]
    return np.asarray(y)


def ssm_step(object s1, object dt, object b, object c, object a, object d, object h_prev):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s1a = np.ascontiguousarray(s1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dta = np.ascontiguousarray(dt, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ba = np.ascontiguousarray(b, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ca = np.ascontiguousarray(c, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] aa = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] da = np.ascontiguousarray(d, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] hp = np.ascontiguousarray(h_prev, dtype=np.float64)
    cdef Py_ssize_t n = s1a.shape[0], ds = s1a.shape[1], e = ba.shape[1], i, j, k
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.empty((n, ds))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] h = np.empty((n, ds, e))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] abar = np.empty((n, ds, e))
    cdef double acc, ab, u, dtv
    for i in range(n):
        for j in range(ds):
            dtv = dta[i, j]
            u = s1a[i, j]
            acc = 0.0
            for k in range(e):
                ab = exp(dtv * aa[j, k])
                abar[i, j, k] = ab
                h[i, j, k] = ab * hp[i, j, k] + dtv * ba[i, k] * u
                acc += h[i, j, k] * ca[i, k]
            s[i, j] = acc + da[j] * u
    return np.asarray(s), np.asarray(h), np.asarray(abar)
