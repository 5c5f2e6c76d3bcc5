"""Probability-gated image augmentation operators and the two policies.

Images are uint8 HxWxC (C = 1 or 3) numpy arrays. A pipeline first resizes
to its target, then applies each operator independently with its gate
probability, drawing all randomness from one explicit counter-based
stream, so results are a pure function of (image, pipeline, stream state).
Geometric ops use bilinear interpolation with reflected borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

__all__ = [
    "AugOp",
    "AugPipeline",
    "OP_KINDS",
    "apply_op",
    "apply_pipeline",
    "norm_aug_policy",
    "extra_aug_policy",
    "resize",
]

OP_KINDS = (
    "rotate",
    "flip_h",
    "flip_v",
    "random_crop",
    "gaussian_blur",
    "motion_blur",
    "median_blur",
    "grid_distortion",
    "optical_distortion",
    "sharpen",
    "coarse_dropout",
    "affine",
)

_BORDER = cv2.BORDER_REFLECT_101
_INTERP = cv2.INTER_LINEAR


@dataclass(frozen=True)
class AugOp:
    kind: str
    p: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"probability must be in [0,1], got {self.p}")


@dataclass(frozen=True)
class AugPipeline:
    resize_target: tuple
    ops: tuple
    seed: int = 0

    def __post_init__(self):
        h, w = self.resize_target
        if h < 1 or w < 1:
            raise ValueError(f"resize target must be positive, got {self.resize_target}")

    def stream_for(self, sample_index: int) -> np.random.Generator:
        """Counter-based per-sample stream (shareable across workers)."""
        return np.random.Generator(np.random.Philox(key=self.seed, counter=sample_index))

    def op_kinds(self) -> set:
        return {op.kind for op in self.ops}

    def to_dict(self) -> dict:
        return {
            "resize_target": list(self.resize_target),
            "seed": self.seed,
            "ops": [{"kind": op.kind, "p": op.p, "params": dict(op.params)} for op in self.ops],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugPipeline":
        ops = tuple(AugOp(kind=o["kind"], p=o["p"], params=dict(o.get("params", {}))) for o in d["ops"])
        return cls(resize_target=tuple(d["resize_target"]), ops=ops, seed=int(d.get("seed", 0)))


def _check_image(image) -> np.ndarray:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected HxWxC image with 1 or 3 channels, got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return img


def resize(image, target) -> np.ndarray:
    img = _check_image(image)
    h, w = target
    if img.shape[:2] == (h, w):
        return img.copy()
    out = cv2.resize(img, (w, h), interpolation=_INTERP)
    if out.ndim == 2:
        out = out[:, :, None]
    return out


def _keep_channels(image, out) -> np.ndarray:
    if out.ndim == 2 and image.ndim == 3:
        return out[:, :, None]
    return out


def _rotate(img, stream, params):
    limit = params.get("limit", 30.0)
    angle = stream.uniform(-limit, limit)
    h, w = img.shape[:2]
    m = cv2.getRotationMatrix2D((w / 2 - 0.5, h / 2 - 0.5), angle, 1.0)
    out = cv2.warpAffine(img, m, (w, h), flags=_INTERP, borderMode=_BORDER)
    return _keep_channels(img, out)


def _random_crop(img, stream, params):
    lo, hi = params.get("scale", (0.8, 1.0))
    h, w = img.shape[:2]
    s = stream.uniform(lo, hi)
    ch = max(1, int(round(s * h)))
    cw = max(1, int(round(s * w)))
    top = int(stream.integers(0, h - ch + 1))
    left = int(stream.integers(0, w - cw + 1))
    crop = img[top : top + ch, left : left + cw]
    return resize(crop, (h, w))


def _gaussian_blur(img, stream, params):
    lo, hi = params.get("kernel", (3, 7))
    k = int(stream.integers(lo // 2, hi // 2 + 1)) * 2 + 1
    out = cv2.GaussianBlur(img, (k, k), 0, borderType=_BORDER)
    return _keep_channels(img, out)


def _motion_blur(img, stream, params):
    lo, hi = params.get("kernel", (3, 7))
    k = int(stream.integers(lo, hi + 1))
    kernel = np.zeros((k, k), dtype=np.float32)
    if stream.uniform() < 0.5:
        kernel[k // 2, :] = 1.0
    else:
        kernel[:, k // 2] = 1.0
    kernel /= kernel.sum()
    out = cv2.filter2D(img, -1, kernel, borderType=_BORDER)
    return _keep_channels(img, out)


def _median_blur(img, stream, params):
    lo, hi = params.get("kernel", (3, 5))
    k = int(stream.integers(lo // 2, hi // 2 + 1)) * 2 + 1
    out = cv2.medianBlur(img, k)
    return _keep_channels(img, out)


def _grid_distortion(img, stream, params):
    steps = params.get("steps", 5)
    limit = params.get("limit", 0.3)
    h, w = img.shape[:2]
    # Perturb the width of each grid cell, then map pixels piecewise-linearly.
    xs = _distorted_axis(w, steps, limit, stream)
    ys = _distorted_axis(h, steps, limit, stream)
    map_x = np.tile(xs, (h, 1)).astype(np.float32)
    map_y = np.tile(ys[:, None], (1, w)).astype(np.float32)
    out = cv2.remap(img, map_x, map_y, interpolation=_INTERP, borderMode=_BORDER)
    return _keep_channels(img, out)


def _distorted_axis(size, steps, limit, stream):
    step = size // steps
    factors = 1.0 + stream.uniform(-limit, limit, size=steps + 1)
    xx = np.zeros(size, dtype=np.float64)
    prev = 0.0
    idx = 0
    for i in range(steps + 1):
        start = i * step
        end = min((i + 1) * step, size)
        if start >= size:
            break
        cur = prev + step * factors[i]
        xx[start:end] = np.linspace(prev, cur, end - start, endpoint=False)
        prev = cur
        idx = end
    if idx < size:
        xx[idx:] = prev
    # Normalize back into the source coordinate range.
    scale = (size - 1) / max(xx[-1], 1e-9)
    return xx * scale


def _optical_distortion(img, stream, params):
    limit = params.get("limit", 0.3)
    k = stream.uniform(-limit, limit)
    h, w = img.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    x = (np.arange(w, dtype=np.float64) - cx) / max(cx, 1e-9)
    y = (np.arange(h, dtype=np.float64) - cy) / max(cy, 1e-9)
    xv, yv = np.meshgrid(x, y)
    r2 = xv**2 + yv**2
    factor = 1.0 + k * r2
    map_x = (xv * factor * max(cx, 1e-9) + cx).astype(np.float32)
    map_y = (yv * factor * max(cy, 1e-9) + cy).astype(np.float32)
    out = cv2.remap(img, map_x, map_y, interpolation=_INTERP, borderMode=_BORDER)
    return _keep_channels(img, out)


def _sharpen(img, stream, params):
    lo, hi = params.get("alpha", (0.2, 0.5))
    alpha = stream.uniform(lo, hi)
    kernel = np.array([[0, -1, 0], [-1, 5, -1], [0, -1, 0]], dtype=np.float32)
    sharp = cv2.filter2D(img, -1, kernel, borderType=_BORDER)
    out = cv2.addWeighted(sharp, alpha, img, 1.0 - alpha, 0.0)
    return _keep_channels(img, out)


def _coarse_dropout(img, stream, params):
    max_holes = params.get("max_holes", 8)
    frac = params.get("max_size_frac", 0.1)
    fill = params.get("fill", 0)
    h, w = img.shape[:2]
    out = img.copy()
    n = int(stream.integers(1, max_holes + 1))
    max_hh = max(1, int(h * frac))
    max_ww = max(1, int(w * frac))
    for _ in range(n):
        hh = int(stream.integers(1, max_hh + 1))
        ww = int(stream.integers(1, max_ww + 1))
        top = int(stream.integers(0, max(h - hh, 0) + 1))
        left = int(stream.integers(0, max(w - ww, 0) + 1))
        out[top : top + hh, left : left + ww] = fill
    return out


def _affine(img, stream, params):
    translate = params.get("translate", 0.1)
    shear_deg = params.get("shear", 10.0)
    h, w = img.shape[:2]
    tx = stream.uniform(-translate, translate) * w
    ty = stream.uniform(-translate, translate) * h
    shear = np.tan(np.deg2rad(stream.uniform(-shear_deg, shear_deg)))
    m = np.array([[1.0, shear, tx], [0.0, 1.0, ty]], dtype=np.float64)
    out = cv2.warpAffine(img, m, (w, h), flags=_INTERP, borderMode=_BORDER)
    return _keep_channels(img, out)


_KERNELS = {
    "rotate": _rotate,
    "flip_h": lambda img, stream, params: img[:, ::-1].copy(),
    "flip_v": lambda img, stream, params: img[::-1, :].copy(),
    "random_crop": _random_crop,
    "gaussian_blur": _gaussian_blur,
    "motion_blur": _motion_blur,
    "median_blur": _median_blur,
    "grid_distortion": _grid_distortion,
    "optical_distortion": _optical_distortion,
    "sharpen": _sharpen,
    "coarse_dropout": _coarse_dropout,
    "affine": _affine,
}


def apply_op(image, op: AugOp, stream: np.random.Generator) -> np.ndarray:
    """Apply one operator unconditionally (no probability gate)."""
    img = _check_image(image)
    return _KERNELS[op.kind](img, stream, op.params)


def apply_pipeline(image, pipeline: AugPipeline, stream: np.random.Generator) -> np.ndarray:
    """Resize to the pipeline target, then gate each op on p in order."""
    img = resize(_check_image(image), pipeline.resize_target)
    for op in pipeline.ops:
        if stream.uniform() < op.p:
            img = apply_op(img, op, stream)
    return img


def norm_aug_policy(img_h: int, img_w: int, seed: int = 0) -> AugPipeline:
    """The standard policy: crop, rotation, flips, gaussian blur."""
    ops = (
        AugOp("random_crop", p=0.5, params={"scale": (0.8, 1.0)}),
        AugOp("rotate", p=0.5, params={"limit": 30.0}),
        AugOp("flip_h", p=0.5),
        AugOp("flip_v", p=0.5),
        AugOp("gaussian_blur", p=0.3, params={"kernel": (3, 7)}),
    )
    return AugPipeline(resize_target=(img_h, img_w), ops=ops, seed=seed)


def extra_aug_policy(img_h: int, img_w: int, seed: int = 0) -> AugPipeline:
    """The aggressive policy: the standard ops plus extra blur variants,
    distortions, sharpening, coarse dropout and affine transforms."""
    base = norm_aug_policy(img_h, img_w, seed=seed)
    extra = (
        AugOp("motion_blur", p=0.2, params={"kernel": (3, 7)}),
        AugOp("median_blur", p=0.2, params={"kernel": (3, 5)}),
        AugOp("grid_distortion", p=0.3, params={"steps": 5, "limit": 0.3}),
        AugOp("optical_distortion", p=0.3, params={"limit": 0.3}),
        AugOp("sharpen", p=0.3, params={"alpha": (0.2, 0.5)}),
        AugOp("coarse_dropout", p=0.3, params={"max_holes": 8, "max_size_frac": 0.1, "fill": 0}),
        AugOp("affine", p=0.3, params={"translate": 0.1, "shear": 10.0}),
    )
    return AugPipeline(resize_target=(img_h, img_w), ops=base.ops + extra, seed=seed)
