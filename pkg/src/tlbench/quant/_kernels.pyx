# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled quantization kernels.

Fused single-pass loops for the hot operations behind PTQ calibration and
fake-quantization. Semantics match ``_kernels_py``: rint (round half to
even under the default FP environment), saturating clamp, float64 math.
"""

from libc.math cimport rint

COMPILED = True


def minmax(const double[::1] x):
    # four independent accumulators so the loop is not serialized on one
    # compare chain
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double lo0 = x[0], lo1 = x[0], lo2 = x[0], lo3 = x[0]
    cdef double hi0 = x[0], hi1 = x[0], hi2 = x[0], hi3 = x[0]
    cdef Py_ssize_t m = n - (n % 4)
    for i in range(0, m, 4):
        if x[i] < lo0: lo0 = x[i]
        if x[i] > hi0: hi0 = x[i]
        if x[i + 1] < lo1: lo1 = x[i + 1]
        if x[i + 1] > hi1: hi1 = x[i + 1]
        if x[i + 2] < lo2: lo2 = x[i + 2]
        if x[i + 2] > hi2: hi2 = x[i + 2]
        if x[i + 3] < lo3: lo3 = x[i + 3]
        if x[i + 3] > hi3: hi3 = x[i + 3]
    for i in range(m, n):
        if x[i] < lo0: lo0 = x[i]
        if x[i] > hi0: hi0 = x[i]
    if lo1 < lo0: lo0 = lo1
    if lo2 < lo0: lo0 = lo2
    if lo3 < lo0: lo0 = lo3
    if hi1 > hi0: hi0 = hi1
    if hi2 > hi0: hi0 = hi2
    if hi3 > hi0: hi0 = hi3
    return lo0, hi0


def quantize_i32(const double[::1] x, double scale, long zero_point,
                 long qmin, long qmax, int[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double q
    for i in range(n):
        q = rint(x[i] / scale) + zero_point
        if q < qmin:
            q = qmin
        elif q > qmax:
            q = qmax
        out[i] = <int> q


def dequantize_f64(const int[::1] q, double scale, long zero_point,
                   double[::1] out):
    cdef Py_ssize_t i, n = q.shape[0]
    for i in range(n):
        out[i] = (q[i] - zero_point) * scale


def fake_quant_f64(const double[::1] x, double scale, long zero_point,
                   long qmin, long qmax, double[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double q
    for i in range(n):
        q = rint(x[i] / scale) + zero_point
        if q < qmin:
            q = qmin
        elif q > qmax:
            q = qmax
        out[i] = (q - zero_point) * scale
