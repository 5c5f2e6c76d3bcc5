"""Backbone adapters and the attachable classifier head (torch).

Backbones are consumed as opaque pre-trained feature extractors behind a
small adapter contract: named parameter groups with contiguous block
indices, a feature forward pass, and snapshot/load of all values. The
built-in ``tiny`` adapter is a three-block convnet with fixed seeded
weights standing in for zoo weights, sized so a full strategy grid trains
in minutes on a CPU. Real zoo adapters plug in through the registry.

Forward passes thread an optional precision simulator through every
weight use and activation site, so PTQ/QAT/FP16 evaluation reuses one
code path.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .strategy import HEAD_GROUP, HeadSpec, ParameterGroup

__all__ = [
    "TinyConvBackbone",
    "ClassifierHead",
    "ClassifierModel",
    "register_adapter",
    "create_adapter",
    "available_adapters",
]


def _seeded_tensor(rng: np.random.Generator, shape, fan_in: int) -> torch.Tensor:
    scale = float(np.sqrt(2.0 / max(fan_in, 1)))
    return torch.from_numpy(rng.normal(0.0, scale, size=shape).astype(np.float32))


class TinyConvBackbone(nn.Module):
    """Three conv blocks (3x3, relu, 2x2 pool) with deterministic weights."""

    def __init__(self, channels=(8, 16, 32), in_channels: int = 3, weights_seed: int = 7):
        super().__init__()
        self.name = "tiny"
        self.channels = tuple(channels)
        rng = np.random.default_rng(weights_seed)
        cin = in_channels
        for bi, cout in enumerate(self.channels):
            w = _seeded_tensor(rng, (cout, cin, 3, 3), fan_in=cin * 9)
            b = torch.zeros(cout)
            self.register_parameter(f"block{bi}_w", nn.Parameter(w))
            self.register_parameter(f"block{bi}_b", nn.Parameter(b))
            cin = cout
        self.feature_dim = self.channels[-1]
        self.num_blocks = len(self.channels)

    def parameter_groups(self) -> list[ParameterGroup]:
        groups = []
        for bi in range(self.num_blocks):
            for suffix in ("w", "b"):
                name = f"block{bi}_{suffix}"
                p = getattr(self, name)
                groups.append(
                    ParameterGroup(name=name, shape=tuple(p.shape), block=bi, trainable=p.requires_grad)
                )
        return groups

    def forward_features(self, x: torch.Tensor, sim=None) -> torch.Tensor:
        for bi in range(self.num_blocks):
            w = getattr(self, f"block{bi}_w")
            b = getattr(self, f"block{bi}_b")
            if sim is not None:
                w = sim.weight(f"block{bi}_w", w)
            x = F.conv2d(x, w, b, padding=1)
            x = F.relu(x)
            if x.shape[-1] >= 2 and x.shape[-2] >= 2:
                x = F.max_pool2d(x, 2)
            if sim is not None:
                x = sim.activation(f"block{bi}_out", x)
        return x

    def snapshot(self) -> dict:
        return {
            name: p.detach().cpu().numpy().copy()
            for name, p in self.named_parameters()
        }

    def load(self, values: dict) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                arr = values[name]
                if tuple(arr.shape) != tuple(p.shape):
                    raise ValueError(f"snapshot shape mismatch for {name!r}")
                p.copy_(torch.from_numpy(np.asarray(arr, dtype=np.float32)))

    @staticmethod
    def preprocess(images: np.ndarray) -> torch.Tensor:
        """uint8 NHWC -> float32 NCHW in [-1, 1]."""
        x = np.asarray(images, dtype=np.float32) / 127.5 - 1.0
        if x.ndim == 3:
            x = x[None]
        return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))


class ClassifierHead(nn.Module):
    """Pool, hidden dense + relu + dropout, output dense (softmax via loss)."""

    def __init__(self, spec: HeadSpec, init_seed: int = 0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(init_seed)
        self.fc1_w = nn.Parameter(
            _seeded_tensor(rng, (spec.hidden_units, spec.feature_dim), fan_in=spec.feature_dim)
        )
        self.fc1_b = nn.Parameter(torch.zeros(spec.hidden_units))
        self.fc2_w = nn.Parameter(
            _seeded_tensor(rng, (spec.output_units, spec.hidden_units), fan_in=spec.hidden_units)
        )
        self.fc2_b = nn.Parameter(torch.zeros(spec.output_units))

    def forward(self, features: torch.Tensor, training: bool = False, sim=None) -> torch.Tensor:
        x = features.mean(dim=(2, 3))  # global average pool
        w1, w2 = self.fc1_w, self.fc2_w
        if sim is not None:
            w1 = sim.weight("head_fc1_w", w1)
            w2 = sim.weight("head_fc2_w", w2)
        x = F.relu(F.linear(x, w1, self.fc1_b))
        if sim is not None:
            x = sim.activation("head_hidden", x)
        if training and self.spec.dropout_rate > 0:
            x = F.dropout(x, p=self.spec.dropout_rate, training=True)
        return F.linear(x, w2, self.fc2_b)

    def l2_term(self) -> torch.Tensor:
        return self.spec.hidden_weight_penalty * (self.fc1_w**2).sum()


class ClassifierModel(nn.Module):
    """Backbone plus head, with group-level freezing."""

    def __init__(self, backbone, head: ClassifierHead):
        super().__init__()
        self.backbone = backbone
        self.head = head

    def forward(self, x: torch.Tensor, training: bool = False, sim=None) -> torch.Tensor:
        if sim is not None:
            x = sim.activation("input", x)
        feats = self.backbone.forward_features(x, sim=sim)
        return self.head(feats, training=training, sim=sim)

    def set_trainable(self, group_names: frozenset) -> None:
        for name, p in self.backbone.named_parameters():
            p.requires_grad_(name in group_names)
        head_on = HEAD_GROUP in group_names
        for p in self.head.parameters():
            p.requires_grad_(head_on)

    def backbone_params(self) -> dict:
        return dict(self.backbone.named_parameters())

    def predict_labels(self, images: np.ndarray, classes, sim=None, batch_size: int = 64):
        """Class names for a uint8 NHWC image batch."""
        out = []
        with torch.no_grad():
            for i in range(0, len(images), batch_size):
                x = self.backbone.preprocess(images[i : i + batch_size])
                logits = self.forward(x, training=False, sim=sim)
                out.extend(int(j) for j in logits.argmax(dim=1))
        return [classes[j] for j in out]


_ADAPTERS: dict = {}


def register_adapter(name: str, factory) -> None:
    _ADAPTERS[name] = factory


def create_adapter(name: str, **kwargs):
    if name not in _ADAPTERS:
        raise KeyError(
            f"unknown adapter {name!r}; registered: {sorted(_ADAPTERS)}"
        )
    return _ADAPTERS[name](**kwargs)


def available_adapters() -> list[str]:
    return sorted(_ADAPTERS)


register_adapter("tiny", TinyConvBackbone)
