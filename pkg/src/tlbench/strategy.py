"""Classifier-head spec, the drift penalty, and phased training plans.

Two training approaches are encoded as plans over an abstract backbone:
the two-phase schedule (train the new head frozen, then unfreeze the last
blocks) and the single-phase full-network schedule with the weight-drift
regularizer. Plans are pure descriptions; the training engine executes
them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ParameterGroup",
    "HeadSpec",
    "L2SPConfig",
    "Phase",
    "TrainingPlan",
    "AnchorSnapshot",
    "HEAD_GROUP",
    "build_head",
    "snapshot_anchors",
    "l2sp_penalty",
    "l2sp_gradient",
    "make_fine_tuning_plan",
    "make_l2sp_plan",
    "extend_plan_for_qat",
]

HEAD_GROUP = "head"


@dataclass(frozen=True)
class ParameterGroup:
    """One named backbone parameter tensor with its block index."""

    name: str
    shape: tuple
    block: int
    trainable: bool = True


@dataclass(frozen=True)
class HeadSpec:
    """Global-average-pooled classifier head attached to every backbone."""

    feature_dim: int
    output_units: int
    hidden_units: int = 256
    hidden_weight_penalty: float = 0.01
    dropout_rate: float = 0.5
    pooling: str = "global_average"
    hidden_activation: str = "relu"
    output_activation: str = "softmax"

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.output_units < 2:
            raise ValueError(f"need at least two classes, got {self.output_units}")
        if self.hidden_weight_penalty < 0:
            raise ValueError("hidden weight penalty must be >= 0")

    @property
    def param_count(self) -> int:
        hidden = self.feature_dim * self.hidden_units + self.hidden_units
        out = self.hidden_units * self.output_units + self.output_units
        return hidden + out


def build_head(feature_dim: int, num_classes: int, weight_penalty: float = 0.01) -> HeadSpec:
    return HeadSpec(
        feature_dim=feature_dim,
        output_units=num_classes,
        hidden_weight_penalty=weight_penalty,
    )


@dataclass(frozen=True)
class L2SPConfig:
    """Drift penalty strength on pre-trained weights (alpha) and magnitude
    penalty on new weights (beta)."""

    alpha: float = 0.1
    beta: float = 0.01

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")


class AnchorSnapshot:
    """Immutable copy of pre-trained parameter values, keyed by group name."""

    def __init__(self, values: dict):
        frozen = {}
        for name, arr in values.items():
            copy = np.array(arr, dtype=np.float64, copy=True)
            copy.setflags(write=False)
            frozen[name] = copy
        self._values = frozen

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def names(self):
        return self._values.keys()

    def items(self):
        return self._values.items()

    def __eq__(self, other):
        if not isinstance(other, AnchorSnapshot):
            return NotImplemented
        if self._values.keys() != other._values.keys():
            return False
        return all(np.array_equal(v, other._values[k]) for k, v in self._values.items())


def snapshot_anchors(backbone) -> AnchorSnapshot:
    """Deep-copy all backbone parameter values; later training steps leave
    the snapshot untouched."""
    return AnchorSnapshot(backbone.snapshot())


def l2sp_penalty(current: dict, anchors: AnchorSnapshot, config: L2SPConfig):
    """Drift/magnitude penalty over a parameter mapping.

    (alpha/2) * sum ||w - w0||^2 over groups with an anchor, plus
    (beta/2) * sum ||w||^2 over new groups. Works on numpy arrays or any
    tensor type supporting arithmetic, so it stays differentiable when
    called with autograd tensors (anchors then supplied via `anchor_of`).
    """
    return _l2sp_terms(current, anchors, config.alpha, config.beta)


def _l2sp_terms(current, anchors, alpha, beta):
    total = None
    for name, w in current.items():
        if name in anchors:
            a = anchors[name]
            if tuple(np.shape(a)) != tuple(w.shape):
                raise ValueError(
                    f"anchor shape {tuple(np.shape(a))} does not match parameter "
                    f"{name!r} shape {tuple(w.shape)}"
                )
            term = 0.5 * alpha * ((w - a) ** 2).sum()
        else:
            term = 0.5 * beta * (w**2).sum()
        total = term if total is None else total + term
    if total is None:
        return 0.0
    return total


def l2sp_gradient(current: dict, anchors: AnchorSnapshot, config: L2SPConfig) -> dict:
    """Analytic gradient: alpha*(w - w0) for anchored groups, beta*w for
    new groups."""
    grads = {}
    for name, w in current.items():
        w = np.asarray(w, dtype=np.float64)
        if name in anchors:
            grads[name] = config.alpha * (w - anchors[name])
        else:
            grads[name] = config.beta * w
    return grads


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-5


@dataclass(frozen=True)
class Phase:
    name: str
    epochs: tuple  # (first, last), 1-based inclusive
    trainable_groups: frozenset
    regularizer: str = "none"  # none | l2sp
    fake_quant: bool = False

    def __post_init__(self):
        first, last = self.epochs
        if first < 1 or last < first:
            raise ValueError(f"invalid epoch span {self.epochs} in phase {self.name!r}")
        if self.regularizer not in ("none", "l2sp"):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")

    @property
    def num_epochs(self) -> int:
        return self.epochs[1] - self.epochs[0] + 1


@dataclass(frozen=True)
class TrainingPlan:
    phases: tuple
    optimizer: OptimizerConfig = OptimizerConfig()
    l2sp: L2SPConfig | None = None
    anchors: AnchorSnapshot | None = None
    approach: str = ""

    def __post_init__(self):
        if not self.phases:
            raise ValueError("a training plan needs at least one phase")
        expect = 1
        for phase in self.phases:
            if phase.epochs[0] != expect:
                raise ValueError(
                    f"phase {phase.name!r} starts at epoch {phase.epochs[0]}, expected {expect}"
                )
            expect = phase.epochs[1] + 1
        needs_anchors = any(p.regularizer == "l2sp" for p in self.phases)
        if needs_anchors and (self.l2sp is None or self.anchors is None):
            raise ValueError("plan uses the l2sp regularizer but has no config/anchors")

    @property
    def total_epochs(self) -> int:
        return self.phases[-1].epochs[1]

    def phase_for_epoch(self, epoch: int) -> Phase:
        for phase in self.phases:
            if phase.epochs[0] <= epoch <= phase.epochs[1]:
                return phase
        raise ValueError(f"epoch {epoch} outside plan range 1..{self.total_epochs}")

    def to_dict(self) -> dict:
        return {
            "approach": self.approach,
            "optimizer": {"kind": self.optimizer.kind, "learning_rate": self.optimizer.learning_rate},
            "l2sp": None if self.l2sp is None else {"alpha": self.l2sp.alpha, "beta": self.l2sp.beta},
            "phases": [
                {
                    "name": p.name,
                    "epochs": list(p.epochs),
                    "trainable_groups": sorted(p.trainable_groups),
                    "regularizer": p.regularizer,
                    "fake_quant": p.fake_quant,
                }
                for p in self.phases
            ],
        }


def _validate_backbone_groups(backbone):
    groups = list(backbone.parameter_groups())
    if not groups:
        raise ValueError("backbone exposes no parameter groups")
    blocks = sorted({g.block for g in groups})
    if blocks != list(range(len(blocks))):
        raise ValueError(f"block indices must be contiguous from 0, got {blocks}")
    return groups, len(blocks)


def make_fine_tuning_plan(
    backbone,
    head_epochs: int = 10,
    total_epochs: int = 100,
    unfreeze_blocks: int = 2,
    learning_rate: float = 1e-5,
) -> TrainingPlan:
    """Two-phase schedule: head-only training, then the last
    ``unfreeze_blocks`` backbone blocks join in."""
    groups, num_blocks = _validate_backbone_groups(backbone)
    if not 0 <= head_epochs <= total_epochs or total_epochs < 1:
        raise ValueError(
            f"need 0 <= head_epochs <= total_epochs, got {head_epochs}, {total_epochs}"
        )
    if not 0 <= unfreeze_blocks <= num_blocks:
        raise ValueError(f"unfreeze_blocks must be in [0, {num_blocks}], got {unfreeze_blocks}")

    unfrozen = frozenset(
        g.name for g in groups if g.block >= num_blocks - unfreeze_blocks
    ) | {HEAD_GROUP}
    phases = []
    if head_epochs >= 1:
        phases.append(
            Phase("head_warmup", (1, head_epochs), frozenset({HEAD_GROUP}))
        )
    if head_epochs < total_epochs:
        phases.append(Phase("fine_tune", (head_epochs + 1, total_epochs), unfrozen))
    return TrainingPlan(
        phases=tuple(phases),
        optimizer=OptimizerConfig(learning_rate=learning_rate),
        approach="fine_tuning",
    )


def make_l2sp_plan(
    backbone,
    total_epochs: int = 100,
    config: L2SPConfig = L2SPConfig(),
    learning_rate: float = 1e-5,
) -> TrainingPlan:
    """Single phase training the whole network under the drift penalty;
    anchors are snapshotted now."""
    groups, _ = _validate_backbone_groups(backbone)
    if total_epochs < 1:
        raise ValueError(f"total_epochs must be >= 1, got {total_epochs}")
    trainable = frozenset(g.name for g in groups) | {HEAD_GROUP}
    phase = Phase("l2sp_full", (1, total_epochs), trainable, regularizer="l2sp")
    return TrainingPlan(
        phases=(phase,),
        optimizer=OptimizerConfig(learning_rate=learning_rate),
        l2sp=config,
        anchors=snapshot_anchors(backbone),
        approach="l2sp",
    )


def extend_plan_for_qat(plan: TrainingPlan, extra_epochs: int = 50) -> TrainingPlan:
    """Append a fake-quantized phase continuing the final phase's
    trainable set."""
    if extra_epochs < 1:
        raise ValueError(f"extra_epochs must be >= 1, got {extra_epochs}")
    last = plan.phases[-1]
    qat_phase = Phase(
        "qat",
        (plan.total_epochs + 1, plan.total_epochs + extra_epochs),
        last.trainable_groups,
        regularizer=last.regularizer,
        fake_quant=True,
    )
    return TrainingPlan(
        phases=plan.phases + (qat_phase,),
        optimizer=plan.optimizer,
        l2sp=plan.l2sp,
        anchors=plan.anchors,
        approach=plan.approach,
    )
