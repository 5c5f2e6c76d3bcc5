"""Training and evaluation engine executing a plan on one grid cell."""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np
import torch

from ..augment import AugPipeline, apply_pipeline, resize
from ..backbones import ClassifierHead, ClassifierModel, create_adapter
from ..data import DatasetManifest
from ..metrics import balanced_accuracy, confusion
from ..quant import PrecisionScheme
from ..quant.simulate import PrecisionSim
from ..strategy import L2SPConfig, TrainingPlan, build_head, l2sp_penalty

__all__ = [
    "load_images",
    "build_model",
    "train_model",
    "evaluate_model",
    "save_snapshot",
    "load_snapshot",
]


def load_images(manifest: DatasetManifest, size: int | None = None):
    """Read every record's image (BGR uint8); optionally resize now."""
    images, labels = [], []
    for rec in manifest.records:
        img = cv2.imread(rec.path, cv2.IMREAD_COLOR)
        if img is None:
            raise FileNotFoundError(f"cannot read image {rec.path!r}")
        if size is not None:
            img = resize(img, (size, size))
        images.append(img)
        labels.append(rec.label)
    return images, labels


def build_model(architecture: str, num_classes: int, head_penalty: float, seed: int) -> ClassifierModel:
    backbone = create_adapter(architecture)
    head_spec = build_head(backbone.feature_dim, num_classes, head_penalty)
    head = ClassifierHead(head_spec, init_seed=seed)
    return ClassifierModel(backbone, head)


class _TorchAnchors:
    """Anchor view exposing torch tensors for the penalty term."""

    def __init__(self, anchors):
        self._t = {k: torch.from_numpy(np.asarray(v, dtype=np.float32)) for k, v in anchors.items()}

    def __contains__(self, name):
        return name in self._t

    def __getitem__(self, name):
        return self._t[name]


def train_model(
    model: ClassifierModel,
    plan: TrainingPlan,
    images,
    labels,
    classes,
    pipeline: AugPipeline,
    batch_size: int = 32,
    seed: int = 0,
    log=None,
):
    """Run every phase of the plan; returns the QAT simulator if any
    fake-quantized phase ran, else None."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    class_index = {c: i for i, c in enumerate(classes)}
    y_all = np.array([class_index[l] for l in labels], dtype=np.int64)
    n = len(images)
    loss_fn = torch.nn.CrossEntropyLoss()
    anchors_t = _TorchAnchors(plan.anchors) if plan.anchors is not None else None
    l2sp_cfg = plan.l2sp or L2SPConfig()

    sim = None
    current_phase = None
    optimizer = None
    sample_counter = 0
    for epoch in range(1, plan.total_epochs + 1):
        phase = plan.phase_for_epoch(epoch)
        if phase is not current_phase:
            current_phase = phase
            model.set_trainable(phase.trainable_groups)
            trainable = [p for p in model.parameters() if p.requires_grad]
            optimizer = torch.optim.Adam(trainable, lr=plan.optimizer.learning_rate)
            if phase.fake_quant and sim is None:
                sim = PrecisionSim(PrecisionScheme.QAT_INT8, mode="train")
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            batch = np.stack(
                [
                    apply_pipeline(images[i], pipeline, pipeline.stream_for(sample_counter + k))
                    for k, i in enumerate(idx)
                ]
            )
            sample_counter += len(idx)
            x = model.backbone.preprocess(batch)
            y = torch.from_numpy(y_all[idx])
            optimizer.zero_grad()
            logits = model(x, training=True, sim=sim if phase.fake_quant else None)
            loss = loss_fn(logits, y) + model.head.l2_term()
            if phase.regularizer == "l2sp":
                current = {
                    name: p for name, p in model.backbone.named_parameters()
                }
                current.update(
                    {f"head_{name}": p for name, p in model.head.named_parameters()}
                )
                loss = loss + l2sp_penalty(current, anchors_t, l2sp_cfg)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
        if log is not None:
            log(f"epoch {epoch}/{plan.total_epochs} [{phase.name}] loss {epoch_loss:.4f}")
    return sim


def make_sim_for_eval(
    model: ClassifierModel,
    scheme: PrecisionScheme,
    calibration_images=None,
    qat_sim: PrecisionSim | None = None,
) -> PrecisionSim | None:
    """Build the evaluation-time simulator for a scheme.

    PTQ calibrates activation ranges with the given images; QAT freezes
    the observer state accumulated during training.
    """
    if scheme is PrecisionScheme.BASELINE_FP32:
        return None
    if scheme is PrecisionScheme.FP16:
        return PrecisionSim(PrecisionScheme.FP16)
    if scheme is PrecisionScheme.QAT_INT8:
        if qat_sim is None:
            raise ValueError("QAT evaluation needs the simulator from training")
        qat_sim.freeze()
        return qat_sim
    if calibration_images is None or len(calibration_images) == 0:
        raise ValueError("PTQ calibration needs a non-empty image set")
    sim = PrecisionSim(PrecisionScheme.PTQ_INT8, mode="calibrate")
    with torch.no_grad():
        for start in range(0, len(calibration_images), 64):
            batch = np.stack(calibration_images[start : start + 64])
            model(model.backbone.preprocess(batch), training=False, sim=sim)
    sim.freeze()
    return sim


def evaluate_model(model, images, labels, classes, sim=None) -> float:
    """Balanced accuracy (percent) on already-resized images."""
    preds = model.predict_labels(np.stack(images), classes, sim=sim)
    cm = confusion(labels, preds, classes)
    return 100.0 * balanced_accuracy(cm)


def save_snapshot(model: ClassifierModel, dest, metadata: dict) -> Path:
    out = Path(dest)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {f"backbone.{k}": v for k, v in model.backbone.snapshot().items()}
    arrays.update(
        {f"head.{k}": p.detach().cpu().numpy() for k, p in model.head.named_parameters()}
    )
    np.savez(out / "weights.npz", **arrays)
    meta = dict(metadata)
    meta["head_spec"] = {
        "feature_dim": model.head.spec.feature_dim,
        "output_units": model.head.spec.output_units,
        "hidden_units": model.head.spec.hidden_units,
        "hidden_weight_penalty": model.head.spec.hidden_weight_penalty,
        "dropout_rate": model.head.spec.dropout_rate,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return out


def load_snapshot(source) -> tuple[ClassifierModel, dict]:
    src = Path(source)
    meta = json.loads((src / "metadata.json").read_text(encoding="utf-8"))
    arch = meta["model"]
    num_classes = meta["head_spec"]["output_units"]
    model = build_model(arch, num_classes, meta["head_spec"]["hidden_weight_penalty"], seed=0)
    arrays = np.load(src / "weights.npz")
    model.backbone.load(
        {k[len("backbone.") :]: arrays[k] for k in arrays.files if k.startswith("backbone.")}
    )
    with torch.no_grad():
        for name, p in model.head.named_parameters():
            p.copy_(torch.from_numpy(arrays[f"head.{name}"]))
    return model, meta
