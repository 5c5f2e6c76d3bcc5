"""Grid expansion and single-cell execution."""

from __future__ import annotations

import datetime
import itertools
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..augment import extra_aug_policy, norm_aug_policy
from ..backbones import available_adapters
from ..data import SplitSpec, build_idol_scenarios, load_manifest, stratified_split
from ..quant import PrecisionScheme
from ..results import CellKey, ResultRow
from ..strategy import L2SPConfig, extend_plan_for_qat, make_fine_tuning_plan, make_l2sp_plan
from .config import ExperimentConfig
from .engine import (
    build_model,
    evaluate_model,
    load_images,
    make_sim_for_eval,
    save_snapshot,
    train_model,
)
from .store import append_rows, existing_keys

__all__ = ["RunDescriptor", "expand_grid", "run_cell", "run_grid"]

_POLICY_BUILDERS = {"norm_aug": norm_aug_policy, "extra_aug": extra_aug_policy}


@dataclass(frozen=True)
class RunDescriptor:
    dataset: str
    manifest_path: str
    model: str
    approach: str
    policy: str
    seed: int


def _derived_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((base_seed, index)).generate_state(1)[0])


def expand_grid(config: ExperimentConfig) -> list[RunDescriptor]:
    """Cartesian product of the configured training factors, in stable
    order, each with its derived RNG seed."""
    for arch in config.architectures:
        if arch not in available_adapters():
            raise ValueError(
                f"unresolvable adapter {arch!r}; registered: {available_adapters()}"
            )
    manifests = {}
    for ds in config.datasets:
        path = Path(ds)
        if not path.exists():
            raise ValueError(f"unresolvable dataset manifest {ds!r}")
        manifests[ds] = path

    descriptors = []
    combos = itertools.product(config.datasets, config.architectures, config.approaches, config.policies)
    for index, (ds, arch, approach, policy) in enumerate(combos):
        descriptors.append(
            RunDescriptor(
                dataset=Path(ds).stem.replace("-manifest", ""),
                manifest_path=str(manifests[ds]),
                model=arch,
                approach=approach,
                policy=policy,
                seed=_derived_seed(config.seed, index),
            )
        )
    return descriptors


def _scenario_sets(manifest, config: ExperimentConfig, seed: int):
    """Map scenario name -> evaluation manifest, plus the training manifest."""
    split_spec = SplitSpec(seed=seed, test_fraction=config.test_fraction)
    if config.scenario_protocol == "standard":
        train, test = stratified_split(manifest, split_spec)
        return train, {"test": test}
    matrix = build_idol_scenarios(manifest, config.train_robot, config.train_lighting)
    train_pool = manifest.filter(matrix.train_filter, name=f"{manifest.name}-traincond")
    train, heldout = stratified_split(train_pool, split_spec)
    scenarios = {"SBSL": heldout}
    for name in ("SBDL", "DBSL", "DBDL"):
        scenarios[name] = manifest.filter(matrix.scenario(name), name=f"{manifest.name}-{name}")
    return train, scenarios


def _build_plan(descriptor: RunDescriptor, config: ExperimentConfig, backbone):
    if descriptor.approach == "fine_tuning":
        return make_fine_tuning_plan(
            backbone,
            head_epochs=config.head_epochs,
            total_epochs=config.epochs,
            unfreeze_blocks=config.unfreeze_blocks,
            learning_rate=config.learning_rate,
        )
    return make_l2sp_plan(
        backbone,
        total_epochs=config.epochs,
        config=L2SPConfig(alpha=config.l2sp_alpha, beta=config.l2sp_beta),
        learning_rate=config.learning_rate,
    )


def run_cell(
    descriptor: RunDescriptor,
    config: ExperimentConfig,
    snapshot_dir=None,
    log=None,
) -> list[ResultRow]:
    """Train one strategy cell and evaluate every configured scheme on
    every scenario. Returns one row per (scheme, scenario)."""
    started = time.time()
    manifest = load_manifest(descriptor.manifest_path, name=descriptor.dataset)
    train_manifest, scenario_manifests = _scenario_sets(manifest, config, descriptor.seed)

    size = config.image_size
    train_images, train_labels = load_images(train_manifest)
    eval_sets = {
        name: load_images(m, size=size) for name, m in scenario_manifests.items()
    }

    pipeline = _POLICY_BUILDERS[descriptor.policy](size, size, seed=descriptor.seed)
    model = build_model(
        descriptor.model, len(manifest.classes), config.head_weight_penalty, seed=descriptor.seed
    )
    plan = _build_plan(descriptor, config, model.backbone)
    full_plan = (
        extend_plan_for_qat(plan, config.qat_epochs) if "qat_int8" in config.schemes else plan
    )

    train_model(
        model, plan, train_images, train_labels, manifest.classes, pipeline,
        batch_size=config.batch_size, seed=descriptor.seed, log=log,
    )

    from ..augment import resize

    calibration = [
        resize(img, (size, size)) for img in train_images[: config.calibration_images]
    ]
    base_meta = {
        "dataset": descriptor.dataset,
        "model": descriptor.model,
        "seed": descriptor.seed,
        "epochs": config.epochs,
        "plan": full_plan.to_dict(),
        "pipeline": pipeline.to_dict(),
        "config": config.to_dict(),
        "started_utc": datetime.datetime.fromtimestamp(
            started, tz=datetime.timezone.utc
        ).isoformat(),
    }
    if snapshot_dir is not None:
        cell_name = "__".join(
            [descriptor.dataset, descriptor.model, descriptor.approach, descriptor.policy]
        )
        save_snapshot(model, Path(snapshot_dir) / cell_name, base_meta)

    rows = []

    def emit(scheme_name: str, sim) -> None:
        for scenario, (images, labels) in eval_sets.items():
            acc = evaluate_model(model, images, labels, manifest.classes, sim=sim)
            meta = dict(base_meta)
            meta["finished_utc"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
            if sim is not None:
                meta["quant"] = sim.describe()
            rows.append(
                ResultRow(
                    key=CellKey(
                        descriptor.dataset, descriptor.model, descriptor.approach,
                        descriptor.policy, scheme_name, scenario,
                    ),
                    balanced_accuracy=acc,
                    metadata=meta,
                )
            )

    for scheme_name in config.schemes:
        if scheme_name == "qat_int8":
            continue  # needs the extra training phase; handled last
        scheme = PrecisionScheme(scheme_name)
        sim = make_sim_for_eval(model, scheme, calibration_images=calibration)
        emit(scheme_name, sim)

    if "qat_int8" in config.schemes:
        qat_phase = full_plan.phases[-1]
        continuation = type(plan)(
            phases=(type(qat_phase)(
                qat_phase.name, (1, qat_phase.num_epochs), qat_phase.trainable_groups,
                regularizer=qat_phase.regularizer, fake_quant=True,
            ),),
            optimizer=plan.optimizer,
            l2sp=plan.l2sp,
            anchors=plan.anchors,
            approach=plan.approach,
        )
        qat_sim = train_model(
            model, continuation, train_images, train_labels, manifest.classes, pipeline,
            batch_size=config.batch_size, seed=descriptor.seed + 1, log=log,
        )
        sim = make_sim_for_eval(model, PrecisionScheme.QAT_INT8, qat_sim=qat_sim)
        emit("qat_int8", sim)
    return rows


def run_grid(config: ExperimentConfig, out_dir, resume: bool = True, log=print) -> Path:
    """Run every missing cell of the grid, appending to the result store.

    Failed cells are recorded and skipped; the grid always continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = out / "results.jsonl"
    done = existing_keys(store) if resume else set()
    descriptors = expand_grid(config)
    config.save(out / "config.yaml")

    for desc in descriptors:
        cell4 = (desc.dataset, desc.model, desc.approach, desc.policy)
        have_all = all(
            any(k[:4] == cell4 and k.scheme == scheme for k in done)
            for scheme in config.schemes
        )
        if have_all and done:
            log(f"skip {desc.dataset}/{desc.model}/{desc.approach}/{desc.policy} (already in store)")
            continue
        log(f"run  {desc.dataset}/{desc.model}/{desc.approach}/{desc.policy} seed={desc.seed}")
        try:
            rows = run_cell(desc, config, snapshot_dir=out / "snapshots")
        except (FloatingPointError, ValueError, FileNotFoundError) as exc:
            log(f"FAILED cell {desc}: {exc}")
            with (out / "failures.jsonl").open("a", encoding="utf-8") as fh:
                fh.write(
                    f'{{"dataset": "{desc.dataset}", "model": "{desc.model}", '
                    f'"approach": "{desc.approach}", "policy": "{desc.policy}", '
                    f'"error": "{type(exc).__name__}: {exc}"}}\n'
                )
            continue
        append_rows(store, rows)
        done.update(r.key for r in rows)
    return store
