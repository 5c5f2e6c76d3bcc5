"""Experiment configuration: the factor lists plus every tunable default.

Configs are plain YAML mappings of the fields below; every value is
overridable and the effective config is echoed into run metadata so any
row is auditable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import yaml

APPROACHES = ("l2sp", "fine_tuning")
POLICIES = ("norm_aug", "extra_aug")
SCHEMES = ("baseline_fp32", "ptq_int8", "qat_int8", "fp16")
PROTOCOLS = ("standard", "idol")


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple = ()
    architectures: tuple = ("tiny",)
    approaches: tuple = APPROACHES
    policies: tuple = POLICIES
    schemes: tuple = ("baseline_fp32", "ptq_int8", "qat_int8")
    scenario_protocol: str = "standard"
    seed: int = 0

    image_size: int = 224
    epochs: int = 100
    head_epochs: int = 10
    qat_epochs: int = 50
    unfreeze_blocks: int = 2
    learning_rate: float = 1e-5
    batch_size: int = 32
    test_fraction: float = 0.2
    l2sp_alpha: float = 0.1
    l2sp_beta: float = 0.01
    head_weight_penalty: float = 0.01
    calibration_images: int = 128

    # idol protocol only
    train_robot: str = ""
    train_lighting: str = ""

    def __post_init__(self):
        for name in ("datasets", "architectures", "approaches", "policies", "schemes"):
            values = getattr(self, name)
            object.__setattr__(self, name, tuple(values))
            if not getattr(self, name):
                raise ValueError(f"config field {name!r} must be non-empty")
        for a in self.approaches:
            if a not in APPROACHES:
                raise ValueError(f"unknown approach {a!r}; expected subset of {APPROACHES}")
        for p in self.policies:
            if p not in POLICIES:
                raise ValueError(f"unknown policy {p!r}; expected subset of {POLICIES}")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}; expected subset of {SCHEMES}")
        if self.scenario_protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.scenario_protocol!r}")
        if self.scenario_protocol == "idol" and not (self.train_robot and self.train_lighting):
            raise ValueError("idol protocol needs train_robot and train_lighting")

    def tiny(self) -> "ExperimentConfig":
        """Desk-scale profile: small backbone, few epochs, larger step."""
        return replace(
            self,
            architectures=("tiny",),
            image_size=32,
            epochs=6,
            head_epochs=2,
            qat_epochs=2,
            learning_rate=1e-3,
            calibration_images=64,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def save(self, dest) -> Path:
        path = Path(dest)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")
        return path

    @classmethod
    def load(cls, source) -> "ExperimentConfig":
        raw = yaml.safe_load(Path(source).read_text(encoding="utf-8")) or {}
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)
