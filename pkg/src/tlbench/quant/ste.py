"""Straight-through fake quantization for QAT simulation (torch side).

Forward applies the affine quantize-dequantize round trip; backward passes
gradients through unchanged where the value fell inside the unclamped
range and zeroes them where it was clamped.
"""

import torch

from . import QuantParams


class _FakeQuantSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, scale, zero_point, qmin, qmax):
        q = torch.round(x / scale) + zero_point
        inside = (q >= qmin) & (q <= qmax)
        ctx.save_for_backward(inside)
        q = q.clamp(qmin, qmax)
        return (q - zero_point) * scale

    @staticmethod
    def backward(ctx, grad_output):
        (inside,) = ctx.saved_tensors
        return grad_output * inside, None, None, None, None


def fake_quant_ste(x: torch.Tensor, qp: QuantParams) -> torch.Tensor:
    """Differentiable fake quantization with the straight-through estimator."""
    return _FakeQuantSTE.apply(x, qp.scale, qp.zero_point, qp.qmin, qp.qmax)


def observe_and_fake_quant(x: torch.Tensor, stats) -> torch.Tensor:
    """Update running min/max from `x`, then fake-quantize with the
    parameters implied by the stats so far. Used inside QAT training."""
    stats.update(x.detach().cpu().numpy())
    return fake_quant_ste(x, stats.to_qparams())
