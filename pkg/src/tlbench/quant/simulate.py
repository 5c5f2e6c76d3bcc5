"""Precision-scheme simulation threaded through model forward passes.

One simulator object covers all four schemes. Int8 simulation fake-
quantizes weights from their own min/max and activations from observed
calibration statistics; FP16 casts values through binary16. Tensor shapes
are never altered.

Modes for int8:
  calibrate - observe activation ranges, pass values through unchanged
  train     - observe ranges and fake-quantize with STE gradients (QAT)
  eval      - fake-quantize with frozen parameters
"""

from __future__ import annotations

import torch

from . import CalibrationStats, PrecisionScheme, QuantParams
from .ste import fake_quant_ste

__all__ = ["PrecisionSim"]


def _tensor_qparams(t: torch.Tensor) -> QuantParams:
    lo = float(t.detach().min())
    hi = float(t.detach().max())
    stats = CalibrationStats()
    stats.min, stats.max = lo, hi
    return stats.to_qparams()


class PrecisionSim:
    def __init__(self, scheme: PrecisionScheme, mode: str = "eval"):
        self.scheme = scheme
        self.mode = mode
        self.act_stats: dict[str, CalibrationStats] = {}
        self.frozen_acts: dict[str, QuantParams] = {}

    def set_mode(self, mode: str) -> None:
        if mode not in ("calibrate", "train", "eval"):
            raise ValueError(f"unknown sim mode {mode!r}")
        self.mode = mode

    def freeze(self) -> None:
        """Fix activation quantization parameters from the observed stats."""
        self.frozen_acts = {name: s.to_qparams() for name, s in self.act_stats.items()}
        self.mode = "eval"

    def weight(self, name: str, w: torch.Tensor) -> torch.Tensor:
        if self.scheme is PrecisionScheme.BASELINE_FP32:
            return w
        if self.scheme is PrecisionScheme.FP16:
            return w.half().float()
        if self.mode == "calibrate":
            return w
        return fake_quant_ste(w, _tensor_qparams(w))

    def activation(self, name: str, x: torch.Tensor) -> torch.Tensor:
        if self.scheme is PrecisionScheme.BASELINE_FP32:
            return x
        if self.scheme is PrecisionScheme.FP16:
            return x.half().float()
        if self.mode in ("calibrate", "train"):
            stats = self.act_stats.setdefault(name, CalibrationStats())
            stats.update(x.detach().cpu().numpy())
            if self.mode == "calibrate":
                return x
            return fake_quant_ste(x, stats.to_qparams())
        qp = self.frozen_acts.get(name)
        if qp is None:
            # Site never seen during calibration: fall back to dynamic range.
            qp = _tensor_qparams(x)
        return fake_quant_ste(x, qp)

    def describe(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "activations": {name: qp.to_dict() for name, qp in self.frozen_acts.items()},
        }
