"""Dataset manifests, stratified splitting, and robustness scenario matrices.

A manifest is a line-delimited UTF-8 file of JSON records, one per line:
``{"path": ..., "label": ..., "tags": {...}, "split": ...}`` with an
optional first-line header object carrying an ordered ``classes`` list.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "SampleRecord",
    "DatasetManifest",
    "SplitSpec",
    "TagPredicate",
    "ScenarioMatrix",
    "ManifestError",
    "load_manifest",
    "save_manifest",
    "stratified_split",
    "build_idol_scenarios",
    "make_synthetic_dataset",
]

SPLITS = ("train", "test", "unassigned")


class ManifestError(ValueError):
    """Malformed or inconsistent manifest content."""


@dataclass(frozen=True)
class SampleRecord:
    path: str
    label: str
    tags: dict = field(default_factory=dict)
    split: str = "unassigned"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"invalid split {self.split!r} for {self.path}")


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    classes: tuple
    records: tuple

    def __post_init__(self):
        if not self.classes:
            raise ManifestError(f"manifest {self.name!r} has no classes")
        if len(set(self.classes)) != len(self.classes):
            raise ManifestError(f"manifest {self.name!r} has duplicate classes")
        seen = set()
        for rec in self.records:
            if rec.label not in self.classes:
                raise ManifestError(
                    f"record {rec.path!r} has label {rec.label!r} "
                    f"not in class list {list(self.classes)}"
                )
            if rec.path in seen:
                raise ManifestError(f"duplicate path {rec.path!r}")
            seen.add(rec.path)

    def __len__(self):
        return len(self.records)

    def by_class(self) -> dict:
        out = {c: [] for c in self.classes}
        for rec in self.records:
            out[rec.label].append(rec)
        return out

    def tag_values(self, tag: str) -> set:
        return {r.tags[tag] for r in self.records if tag in r.tags}

    def filter(self, predicate, name: str | None = None) -> "DatasetManifest":
        kept = tuple(r for r in self.records if predicate(r))
        return DatasetManifest(name or self.name, self.classes, kept)


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    test_fraction: float = 0.2
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0,1), got {self.test_fraction}")


def load_manifest(source, name: str | None = None) -> DatasetManifest:
    """Read a manifest file. Class order comes from the optional header,
    otherwise it is the sorted set of observed labels."""
    path = Path(source)
    declared_classes = None
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if lineno == 1 and "classes" in obj and "path" not in obj:
                declared_classes = tuple(obj["classes"])
                continue
            if "path" not in obj or "label" not in obj:
                raise ManifestError(f"{path}:{lineno}: record needs 'path' and 'label'")
            records.append(
                SampleRecord(
                    path=str(obj["path"]),
                    label=str(obj["label"]),
                    tags=dict(obj.get("tags", {})),
                    split=str(obj.get("split", "unassigned")),
                )
            )
    if declared_classes is None:
        declared_classes = tuple(sorted({r.label for r in records}))
    if not declared_classes:
        raise ManifestError(f"{path}: empty manifest (no classes)")
    return DatasetManifest(name or path.stem, declared_classes, tuple(records))


def save_manifest(manifest: DatasetManifest, dest) -> Path:
    path = Path(dest)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"classes": list(manifest.classes)}) + "\n")
        for rec in manifest.records:
            obj = {"path": rec.path, "label": rec.label}
            if rec.tags:
                obj["tags"] = rec.tags
            if rec.split != "unassigned":
                obj["split"] = rec.split
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    return path


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(manifest: DatasetManifest, spec: SplitSpec):
    """Deterministic train/test partition.

    Per class, the test count is round(test_fraction * n) (half-up),
    clipped so at least one training sample remains. Record order within
    the output manifests follows the input manifest.
    """
    rng = np.random.default_rng(spec.seed)
    test_paths = set()
    if spec.stratified:
        for cls in manifest.classes:
            idx = [i for i, r in enumerate(manifest.records) if r.label == cls]
            if not idx:
                continue
            n = len(idx)
            k = min(_round_half_up(spec.test_fraction * n), n - 1)
            order = rng.permutation(n)
            test_paths.update(manifest.records[idx[j]].path for j in order[:k])
    else:
        n = len(manifest.records)
        k = min(_round_half_up(spec.test_fraction * n), max(n - 1, 0))
        order = rng.permutation(n)
        test_paths.update(manifest.records[j].path for j in order[:k])

    train_recs, test_recs = [], []
    for rec in manifest.records:
        if rec.path in test_paths:
            test_recs.append(replace(rec, split="test"))
        else:
            train_recs.append(replace(rec, split="train"))
    train = DatasetManifest(f"{manifest.name}-train", manifest.classes, tuple(train_recs))
    test = DatasetManifest(f"{manifest.name}-test", manifest.classes, tuple(test_recs))
    return train, test


@dataclass(frozen=True)
class TagPredicate:
    """Conjunction of per-tag conditions.

    ``equals`` maps tag -> required value; ``differs`` maps tag -> excluded
    value (any other observed value matches).
    """

    equals: tuple = ()
    differs: tuple = ()

    def matches(self, tags: dict) -> bool:
        for tag, value in self.equals:
            if tags.get(tag) != value:
                return False
        for tag, value in self.differs:
            if tag not in tags or tags[tag] == value:
                return False
        return True

    def __call__(self, record: SampleRecord) -> bool:
        return self.matches(record.tags)

    def describe(self) -> str:
        parts = [f"{t}={v}" for t, v in self.equals]
        parts += [f"{t}!={v}" for t, v in self.differs]
        return " & ".join(parts)


@dataclass(frozen=True)
class ScenarioMatrix:
    """The four-way robustness protocol over (robot, lighting) tags.

    SBSL is evaluated on the held-out split of the training condition;
    the other three scenarios use all matching records, which are unseen
    by construction.
    """

    train_filter: TagPredicate
    scenarios: tuple

    def __post_init__(self):
        names = [n for n, _ in self.scenarios]
        if names != ["SBSL", "SBDL", "DBSL", "DBDL"]:
            raise ValueError(f"expected the four standard scenarios, got {names}")

    def scenario(self, name: str) -> TagPredicate:
        for n, pred in self.scenarios:
            if n == name:
                return pred
        raise KeyError(name)


def build_idol_scenarios(
    manifest: DatasetManifest,
    train_robot: str,
    train_lighting: str,
    robot_tag: str = "robot",
    lighting_tag: str = "lighting",
) -> ScenarioMatrix:
    """Construct the SBSL/SBDL/DBSL/DBDL matrix for a training condition."""
    robots = manifest.tag_values(robot_tag)
    lightings = manifest.tag_values(lighting_tag)
    if train_robot not in robots:
        raise ManifestError(f"train robot {train_robot!r} not in tag domain {sorted(robots)}")
    if train_lighting not in lightings:
        raise ManifestError(
            f"train lighting {train_lighting!r} not in tag domain {sorted(lightings)}"
        )
    if len(robots) != 2:
        raise ManifestError(f"scenario matrix needs exactly two robots, got {sorted(robots)}")
    if len(lightings) < 2:
        raise ManifestError(f"scenario matrix needs >= 2 lighting values, got {sorted(lightings)}")
    (other_robot,) = robots - {train_robot}

    same_bot = (robot_tag, train_robot)
    diff_bot = (robot_tag, other_robot)
    train_filter = TagPredicate(equals=(same_bot, (lighting_tag, train_lighting)))
    scenarios = (
        ("SBSL", train_filter),
        ("SBDL", TagPredicate(equals=(same_bot,), differs=((lighting_tag, train_lighting),))),
        ("DBSL", TagPredicate(equals=(diff_bot, (lighting_tag, train_lighting)))),
        ("DBDL", TagPredicate(equals=(diff_bot,), differs=((lighting_tag, train_lighting),))),
    )
    return ScenarioMatrix(train_filter=train_filter, scenarios=scenarios)


def make_synthetic_dataset(
    out_dir,
    num_classes: int = 8,
    per_class: int = 40,
    size: int = 32,
    seed: int = 0,
    tags_cycle: tuple = (),
    name: str = "synthetic",
) -> DatasetManifest:
    """Generate a small separable image dataset and its manifest.

    Each class gets a distinct base color plus a class-specific stripe
    pattern, with per-image noise, so a small model can learn it quickly.
    ``tags_cycle`` optionally assigns condition tags round-robin, e.g.
    ``({"robot": "a", "lighting": "x"}, {"robot": "b", "lighting": "x"})``.
    """
    import cv2

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    hues = np.linspace(0, 179, num_classes, endpoint=False)
    records = []
    for ci in range(num_classes):
        label = f"class{ci:02d}"
        for j in range(per_class):
            hsv = np.zeros((size, size, 3), dtype=np.uint8)
            hsv[..., 0] = int(hues[ci])
            hsv[..., 1] = 200
            hsv[..., 2] = 180
            img = cv2.cvtColor(hsv, cv2.COLOR_HSV2BGR).astype(np.int16)
            stripe = (ci % 4) + 2
            axis_rows = ci % 2 == 0
            for k in range(0, size, stripe * 2):
                if axis_rows:
                    img[k : k + stripe, :, :] += 50
                else:
                    img[:, k : k + stripe, :] += 50
            img += rng.integers(-25, 26, size=img.shape, dtype=np.int16)
            img = np.clip(img, 0, 255).astype(np.uint8)
            rel = f"{label}_{j:03d}.png"
            cv2.imwrite(str(out / rel), img)
            tags = dict(tags_cycle[j % len(tags_cycle)]) if tags_cycle else {}
            records.append(SampleRecord(path=str(out / rel), label=label, tags=tags))
    classes = tuple(f"class{ci:02d}" for ci in range(num_classes))
    manifest = DatasetManifest(name, classes, tuple(records))
    save_manifest(manifest, out / "manifest.jsonl")
    return manifest
