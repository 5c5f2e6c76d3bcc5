"""Inference timing protocol and parameter/FLOP accounting.

The timing loop is strictly single-threaded: untimed warm-up rounds, then
repeated full-batch calls timed with the monotonic clock. Image loading
and preprocessing happen before the loop; only the runner call is timed.
Throughput is batch_size / mean elapsed seconds.
"""

from __future__ import annotations

import csv
import os
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

__all__ = [
    "ModelRunner",
    "TimingResult",
    "LayerSpec",
    "run_benchmark",
    "count_params",
    "estimate_flops",
    "write_timing_csv",
]


@dataclass
class ModelRunner:
    """Callable wrapper: batch of preprocessed images -> predictions."""

    fn: callable
    name: str
    scheme: str = "baseline_fp32"
    input_shape: tuple = ()

    def __call__(self, batch):
        return self.fn(batch)


@dataclass(frozen=True)
class TimingResult:
    runner_name: str
    scheme: str
    batch_size: int
    warmup_rounds: int
    repeats: int
    elapsed_per_run: tuple
    load_before: float | None = None
    load_after: float | None = None

    @property
    def elapsed_mean(self) -> float:
        return sum(self.elapsed_per_run) / len(self.elapsed_per_run)

    @property
    def elapsed_std(self) -> float:
        if len(self.elapsed_per_run) < 2:
            return 0.0
        return statistics.stdev(self.elapsed_per_run)

    @property
    def elapsed_min(self) -> float:
        return min(self.elapsed_per_run)

    @property
    def throughput(self) -> float:
        return self.batch_size / self.elapsed_mean


def _loadavg():
    try:
        return os.getloadavg()[0]
    except (OSError, AttributeError):
        return None


def run_benchmark(
    runner,
    images,
    warmup_rounds: int = 10,
    repeats: int = 10,
    per_image: bool = False,
) -> TimingResult:
    """Time `repeats` full-batch runner calls after untimed warm-up.

    ``per_image=True`` times one call per image instead of one batch call
    (sensitivity mode); the reported batch size stays the full batch.
    A runner failure aborts the benchmark and discards partial timings.
    """
    batch_size = len(images)
    if batch_size == 0:
        raise ValueError("benchmark batch must be non-empty")
    if warmup_rounds < 0 or repeats < 1:
        raise ValueError("need warmup_rounds >= 0 and repeats >= 1")

    load_before = _loadavg()
    for _ in range(warmup_rounds):
        runner(images)

    elapsed = []
    for _ in range(repeats):
        if per_image:
            start = time.perf_counter_ns()
            for img in images:
                runner(img[None] if hasattr(img, "ndim") else [img])
            stop = time.perf_counter_ns()
        else:
            start = time.perf_counter_ns()
            runner(images)
            stop = time.perf_counter_ns()
        elapsed.append((stop - start) / 1e9)

    return TimingResult(
        runner_name=getattr(runner, "name", repr(runner)),
        scheme=getattr(runner, "scheme", "baseline_fp32"),
        batch_size=batch_size,
        warmup_rounds=warmup_rounds,
        repeats=repeats,
        elapsed_per_run=tuple(elapsed),
        load_before=load_before,
        load_after=_loadavg(),
    )


def write_timing_csv(results, dest, dataset_names=None) -> Path:
    """One CSV row per (runner, dataset): elapsed mean/std and throughput."""
    path = Path(dest)
    path.parent.mkdir(parents=True, exist_ok=True)
    datasets = dataset_names or ["-"] * len(results)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["model", "scheme", "dataset", "batch_size", "warmup", "repeats",
             "elapsed_mean_s", "elapsed_std_s", "throughput_ips"]
        )
        for res, ds in zip(results, datasets):
            writer.writerow(
                [res.runner_name, res.scheme, ds, res.batch_size, res.warmup_rounds,
                 res.repeats, f"{res.elapsed_mean:.6f}", f"{res.elapsed_std:.6f}",
                 f"{res.throughput:.4f}"]
            )
    return path


@dataclass(frozen=True)
class LayerSpec:
    """Shape description of one layer for parameter/FLOP accounting.

    Spatial dims propagate through a stack: give ``input_hw`` on the first
    layer; later layers may omit it. Convolutions assume 'same' padding,
    so the output side is ceil(side / stride).
    """

    kind: str
    kernel: tuple = ()
    cin: int = 0
    cout: int = 0
    stride: int = 1
    input_hw: tuple = ()

    KINDS = ("conv2d", "depthwise_conv2d", "dense", "pooling", "activation")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "depthwise_conv2d") and (
            len(self.kernel) != 2 or min(self.kernel) < 1 or self.cin < 1
        ):
            raise ValueError(f"{self.kind} needs a positive 2-D kernel and cin")
        if self.kind == "conv2d" and self.cout < 1:
            raise ValueError("conv2d needs positive cout")
        if self.kind == "dense" and (self.cin < 1 or self.cout < 1):
            raise ValueError("dense needs positive cin and cout")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


def count_params(layers) -> int:
    """Weight + bias parameter count.

    conv2d: kh*kw*cin*cout + cout; depthwise: kh*kw*cin + cin;
    dense: cin*cout + cout; pooling/activation contribute nothing.
    Additive over concatenation.
    """
    total = 0
    for layer in layers:
        if layer.kind == "conv2d":
            kh, kw = layer.kernel
            total += kh * kw * layer.cin * layer.cout + layer.cout
        elif layer.kind == "depthwise_conv2d":
            kh, kw = layer.kernel
            total += kh * kw * layer.cin + layer.cin
        elif layer.kind == "dense":
            total += layer.cin * layer.cout + layer.cout
    return total


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def estimate_flops(layers) -> int:
    """FLOP estimate with the 1 MAC = 2 FLOPs convention.

    conv2d: 2*kh*kw*cin*cout*Hout*Wout; depthwise: 2*kh*kw*cin*Hout*Wout;
    dense: 2*cin*cout; pooling/activation contribute nothing. Spatial dims
    must be resolvable by propagation from the first layer.
    """
    total = 0
    hw = None
    for layer in layers:
        if layer.input_hw:
            hw = tuple(layer.input_hw)
        if layer.kind in ("conv2d", "depthwise_conv2d"):
            if hw is None:
                raise ValueError(f"cannot resolve spatial dims for {layer}")
            hout = _ceil_div(hw[0], layer.stride)
            wout = _ceil_div(hw[1], layer.stride)
            kh, kw = layer.kernel
            if layer.kind == "conv2d":
                total += 2 * kh * kw * layer.cin * layer.cout * hout * wout
            else:
                total += 2 * kh * kw * layer.cin * hout * wout
            hw = (hout, wout)
        elif layer.kind == "dense":
            total += 2 * layer.cin * layer.cout
        elif layer.kind == "pooling":
            if hw is not None:
                hw = (_ceil_div(hw[0], layer.stride), _ceil_div(hw[1], layer.stride))
    return total
