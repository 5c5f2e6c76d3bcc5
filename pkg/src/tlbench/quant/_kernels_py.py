"""Pure-numpy quantization kernels.

Fallback implementation with semantics identical to the compiled Cython
kernels in ``_kernels.pyx``: round-half-to-even, saturating clamp, float64
accumulation. All functions take 1-D contiguous float64 (or int32) arrays.
"""

import numpy as np

COMPILED = False


def minmax(x):
    """Return (min, max) of a 1-D float64 array in a single pass."""
    return float(x.min()), float(x.max())


def quantize_i32(x, scale, zero_point, qmin, qmax, out):
    """out[i] = clamp(rint(x[i]/scale) + zp, qmin, qmax), int32."""
    q = np.rint(x / scale) + zero_point
    np.clip(q, qmin, qmax, out=q)
    out[:] = q.astype(np.int32)


def dequantize_f64(q, scale, zero_point, out):
    """out[i] = (q[i] - zp) * scale."""
    np.multiply(q.astype(np.float64) - zero_point, scale, out=out)


def fake_quant_f64(x, scale, zero_point, qmin, qmax, out):
    """Fused quantize-dequantize round trip."""
    q = np.rint(x / scale) + zero_point
    np.clip(q, qmin, qmax, out=q)
    np.multiply(q - zero_point, scale, out=out)
