"""Precision-optimization simulation.

Int8 affine quantization with min/max calibration (PTQ), fake quantization
for QAT, FP16 casting, and quantization-error diagnostics. Accelerator
toolchains are out of scope; schemes are simulated by value-precision
transforms only, so tensor shapes never change.

The element-wise kernels have two interchangeable implementations: a
compiled Cython extension and a pure-numpy fallback. The compiled one is
used when available unless ``TLBENCH_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

if os.environ.get("TLBENCH_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

HAVE_COMPILED_KERNELS = bool(getattr(_impl, "COMPILED", False))

__all__ = [
    "QuantParams",
    "CalibrationStats",
    "PrecisionScheme",
    "calibrate_minmax",
    "quantize",
    "dequantize",
    "fake_quant",
    "cast_fp16",
    "quant_error_report",
    "QuantErrorReport",
    "HAVE_COMPILED_KERNELS",
]


class PrecisionScheme(enum.Enum):
    """The four evaluated precision schemes."""

    BASELINE_FP32 = "baseline_fp32"
    PTQ_INT8 = "ptq_int8"
    QAT_INT8 = "qat_int8"
    FP16 = "fp16"


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor affine quantization parameters.

    Real values map to integers via q = round(x / scale) + zero_point with
    q clamped to the representable range.
    """

    scale: float
    zero_point: int
    bits: int = 8
    signed: bool = True

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not self.qmin <= self.zero_point <= self.qmax:
            raise ValueError(
                f"zero_point {self.zero_point} outside quantized range "
                f"[{self.qmin}, {self.qmax}]"
            )

    @property
    def qmin(self) -> int:
        return -(1 << (self.bits - 1)) if self.signed else 0

    @property
    def qmax(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.signed else (1 << self.bits) - 1

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "zero_point": self.zero_point,
            "bits": self.bits,
            "signed": self.signed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(**d)


class CalibrationStats:
    """Running per-tensor min/max over a calibration sample set.

    Merging two stats objects is associative and commutative, so partial
    calibrations may be combined in any order.
    """

    def __init__(self):
        self.min: float | None = None
        self.max: float | None = None

    def update(self, x) -> None:
        x = np.ascontiguousarray(x, dtype=np.float64).ravel()
        if x.size == 0:
            return
        lo, hi = _impl.minmax(x)
        self.min = lo if self.min is None else min(self.min, lo)
        self.max = hi if self.max is None else max(self.max, hi)

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        merged = CalibrationStats()
        for s in (self, other):
            if s.min is not None:
                merged.min = s.min if merged.min is None else min(merged.min, s.min)
                merged.max = s.max if merged.max is None else max(merged.max, s.max)
        return merged

    def to_qparams(self, bits: int = 8, signed: bool = True) -> QuantParams:
        if self.min is None:
            raise ValueError("no values observed during calibration")
        return _qparams_from_range(self.min, self.max, bits=bits, signed=signed)


def _qparams_from_range(lo: float, hi: float, bits: int = 8, signed: bool = True) -> QuantParams:
    if lo > hi:
        raise ValueError(f"invalid range [{lo}, {hi}]")
    if lo == hi:
        # Constant tensor: declared degenerate rule.
        return QuantParams(scale=1.0, zero_point=0, bits=bits, signed=signed)
    qmin = -(1 << (bits - 1)) if signed else 0
    qmax = (1 << (bits - 1)) - 1 if signed else (1 << bits) - 1
    # Extend the range to include zero so the zero point is always
    # representable (deployment-toolchain convention). This keeps the
    # round-trip bound |x - fq(x)| <= scale/2 valid on the whole
    # calibrated range even when it does not span zero.
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    scale = (hi - lo) / (qmax - qmin)
    zero_point = int(min(max(qmin - np.rint(lo / scale), qmin), qmax))
    return QuantParams(scale=scale, zero_point=zero_point, bits=bits, signed=signed)


def calibrate_minmax(samples, bits: int = 8, signed: bool = True) -> QuantParams:
    """Derive QuantParams from the min/max observed over `samples`.

    `samples` is a sequence of array-likes (all pooled into one per-tensor
    range). Raises ValueError on an empty sample set.
    """
    stats = CalibrationStats()
    count = 0
    for s in samples:
        stats.update(s)
        count += 1
    if count == 0 or stats.min is None:
        raise ValueError("calibration sample set is empty")
    return stats.to_qparams(bits=bits, signed=signed)


def _as_f64(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr, np.ascontiguousarray(arr).ravel()


def quantize(x, qp: QuantParams):
    """Quantize to integers: clamp(round(x/scale) + zp, qmin, qmax).

    Rounding is half-to-even. Returns int8/uint8 for 8-bit params, int32
    otherwise, with the input's shape.
    """
    arr, flat = _as_f64(x)
    out = np.empty(flat.shape, dtype=np.int32)
    _impl.quantize_i32(flat, qp.scale, qp.zero_point, qp.qmin, qp.qmax, out)
    if qp.bits == 8:
        out = out.astype(np.int8 if qp.signed else np.uint8)
    return out.reshape(arr.shape)


def dequantize(q, qp: QuantParams):
    """Map integers back to reals: (q - zp) * scale. Returns float64."""
    arr = np.asarray(q)
    flat = np.ascontiguousarray(arr, dtype=np.int32).ravel()
    out = np.empty(flat.shape, dtype=np.float64)
    _impl.dequantize_f64(flat, qp.scale, qp.zero_point, out)
    return out.reshape(arr.shape)


def fake_quant(x, qp: QuantParams):
    """Quantize-dequantize round trip (one fused pass). Returns float64.

    Idempotent: fake_quant(fake_quant(x)) == fake_quant(x) exactly.
    """
    arr, flat = _as_f64(x)
    out = np.empty(flat.shape, dtype=np.float64)
    _impl.fake_quant_f64(flat, qp.scale, qp.zero_point, qp.qmin, qp.qmax, out)
    return out.reshape(arr.shape)


def cast_fp16(x):
    """Round values to the nearest representable binary16.

    Round-to-nearest-even; magnitudes above 65504 become infinite. The
    result is returned as float32 so downstream math stays in float.
    """
    arr = np.asarray(x)
    with np.errstate(over="ignore"):
        return arr.astype(np.float16).astype(np.float32)


@dataclass(frozen=True)
class QuantErrorReport:
    max_abs: float
    mean_abs: float
    sqnr_db: float | None


def quant_error_report(x, qp: QuantParams) -> QuantErrorReport:
    """Element-wise error statistics of fake_quant(x) against x.

    sqnr_db = 10*log10(signal power / error power); None when the signal
    power is zero, +inf when the error is exactly zero.
    """
    arr, _ = _as_f64(x)
    err = fake_quant(arr, qp) - arr
    max_abs = float(np.abs(err).max()) if err.size else 0.0
    mean_abs = float(np.abs(err).mean()) if err.size else 0.0
    signal_power = float(np.mean(arr**2)) if arr.size else 0.0
    error_power = float(np.mean(err**2)) if err.size else 0.0
    if signal_power == 0.0:
        sqnr = None
    elif error_power == 0.0:
        sqnr = math.inf
    else:
        sqnr = 10.0 * math.log10(signal_power / error_power)
    return QuantErrorReport(max_abs=max_abs, mean_abs=mean_abs, sqnr_db=sqnr)
