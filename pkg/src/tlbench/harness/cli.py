"""Command-line interface for the benchmark toolkit."""

from __future__ import annotations

import importlib.resources
import json
from pathlib import Path

import click
import numpy as np

from .. import bench as bench_mod
from .. import metrics
from ..data import SplitSpec, load_manifest, save_manifest, stratified_split
from ..quant import PrecisionScheme, quant_error_report
from ..results import ResultTable
from .config import ExperimentConfig
from .engine import evaluate_model, load_images, load_snapshot, make_sim_for_eval
from .grid import run_grid
from .report import emit_report
from .store import read_table

FIXTURE_NAMES = ("baseline_accuracy", "quantization_accuracy", "kth_baseline")


def _fixture_dir(fixtures: str | None) -> Path:
    if fixtures:
        return Path(fixtures)
    return Path(importlib.resources.files("tlbench") / "fixtures")


def load_fixture_tables(fixtures: str | None = None) -> dict:
    root = _fixture_dir(fixtures)
    out = {}
    for name in FIXTURE_NAMES:
        path = root / f"{name}.csv"
        if path.exists():
            out[name] = ResultTable.from_csv(path)
    return out


@click.group()
def main():
    """Transfer-learning strategy benchmark toolkit."""


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--test-fraction", default=0.2, show_default=True)
@click.option("--stratified/--no-stratified", default=True, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def split(manifest_path, seed, test_fraction, stratified, out_dir):
    """Split a manifest into train/test manifests."""
    manifest = load_manifest(manifest_path)
    spec = SplitSpec(seed=seed, test_fraction=test_fraction, stratified=stratified)
    train, test = stratified_split(manifest, spec)
    out = Path(out_dir)
    train_path = save_manifest(train, out / f"{manifest.name}-train.jsonl")
    test_path = save_manifest(test, out / f"{manifest.name}-test.jsonl")
    click.echo(f"train: {len(train)} records -> {train_path}")
    click.echo(f"test:  {len(test)} records -> {test_path}")


def _load_config(config_path, tiny, seed, datasets):
    if config_path:
        cfg = ExperimentConfig.load(config_path)
    else:
        if not datasets:
            raise click.UsageError("either --config or --dataset is required")
        cfg = ExperimentConfig(datasets=tuple(datasets))
    if datasets and config_path:
        cfg = ExperimentConfig(**{**cfg.to_dict(), "datasets": list(datasets)})
    if tiny:
        cfg = cfg.tiny()
    if seed is not None:
        cfg = ExperimentConfig(**{**cfg.to_dict(), "seed": seed})
    return cfg


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--dataset", "datasets", multiple=True, type=click.Path(exists=True),
              help="Manifest path; repeatable. Overrides the config's datasets.")
@click.option("--tiny", is_flag=True, help="Desk-scale profile (small backbone, few epochs).")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--fresh", is_flag=True, help="Ignore existing store rows instead of resuming.")
def train(config_path, datasets, tiny, seed, out_dir, fresh):
    """Run the training grid (resumable)."""
    cfg = _load_config(config_path, tiny, seed, datasets)
    store = run_grid(cfg, out_dir, resume=not fresh, log=click.echo)
    table = read_table(store)
    click.echo(f"store: {store} ({len(table)} rows)")


@main.command()
@click.option("--snapshot", "snapshot_dir", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--scheme", default="baseline_fp32", show_default=True,
              type=click.Choice([s.value for s in PrecisionScheme]))
@click.option("--image-size", default=None, type=int)
def evaluate(snapshot_dir, manifest_path, scheme, image_size):
    """Evaluate a snapshot on a manifest (held-out data)."""
    model, meta = load_snapshot(snapshot_dir)
    manifest = load_manifest(manifest_path)
    size = image_size or meta.get("config", {}).get("image_size", 224)
    images, labels = load_images(manifest, size=size)
    scheme_e = PrecisionScheme(scheme)
    sim = make_sim_for_eval(model, scheme_e, calibration_images=images[:128])
    acc = evaluate_model(model, images, labels, manifest.classes, sim=sim)
    click.echo(f"balanced accuracy ({scheme}): {acc:.2f}%")


@main.command()
@click.option("--snapshot", "snapshot_dir", required=True, type=click.Path(exists=True))
@click.option("--scheme", default="ptq_int8", show_default=True,
              type=click.Choice(["ptq_int8", "fp16"]))
@click.option("--out", "out_path", required=True, type=click.Path())
def quantize(snapshot_dir, scheme, out_path):
    """Apply a precision scheme to a snapshot's weights and report the
    per-tensor quantization error."""
    model, _ = load_snapshot(snapshot_dir)
    report = {"scheme": scheme, "tensors": {}}
    for name, p in list(model.backbone.named_parameters()) + [
        (f"head_{n}", p) for n, p in model.head.named_parameters()
    ]:
        w = p.detach().cpu().numpy()
        if scheme == "ptq_int8":
            from ..quant import calibrate_minmax

            qp = calibrate_minmax([w])
            err = quant_error_report(w, qp)
            report["tensors"][name] = {
                "qparams": qp.to_dict(),
                "max_abs": err.max_abs,
                "mean_abs": err.mean_abs,
                "sqnr_db": err.sqnr_db,
            }
        else:
            from ..quant import cast_fp16

            err = np.abs(cast_fp16(w).astype(np.float64) - w)
            report["tensors"][name] = {
                "max_abs": float(err.max()),
                "mean_abs": float(err.mean()),
            }
    Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    click.echo(f"wrote {out_path} ({len(report['tensors'])} tensors)")


@main.command("bench")
@click.option("--snapshot", "snapshot_dir", type=click.Path(exists=True))
@click.option("--scheme", default="baseline_fp32", show_default=True,
              type=click.Choice([s.value for s in PrecisionScheme]))
@click.option("--batch", default=32, show_default=True)
@click.option("--image-size", default=32, show_default=True)
@click.option("--warmup", default=10, show_default=True)
@click.option("--repeats", default=10, show_default=True)
@click.option("--per-image", is_flag=True)
@click.option("--out", "out_path", type=click.Path())
def bench_cmd(snapshot_dir, scheme, batch, image_size, warmup, repeats, per_image, out_path):
    """Run the timing protocol on a snapshot (or the tiny default model)."""
    import torch

    from ..backbones import ClassifierHead, ClassifierModel, create_adapter
    from ..strategy import build_head

    if snapshot_dir:
        model, meta = load_snapshot(snapshot_dir)
        name = meta.get("model", "snapshot")
    else:
        backbone = create_adapter("tiny")
        model = ClassifierModel(backbone, ClassifierHead(build_head(backbone.feature_dim, 8)))
        name = "tiny"
    scheme_e = PrecisionScheme(scheme)
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(batch, image_size, image_size, 3), dtype=np.uint8)
    preprocessed = model.backbone.preprocess(images)
    sim = None
    if scheme_e is not PrecisionScheme.BASELINE_FP32:
        sim = make_sim_for_eval(model, scheme_e, calibration_images=list(images))

    def runner_fn(x):
        with torch.no_grad():
            return model(x if isinstance(x, torch.Tensor) else model.backbone.preprocess(np.asarray(x)),
                         training=False, sim=sim)

    runner = bench_mod.ModelRunner(fn=runner_fn, name=name, scheme=scheme,
                                   input_shape=(batch, image_size, image_size, 3))
    result = bench_mod.run_benchmark(runner, preprocessed, warmup_rounds=warmup,
                                     repeats=repeats, per_image=per_image)
    click.echo(
        f"{name} [{scheme}] batch={result.batch_size}: "
        f"elapsed {result.elapsed_mean:.4f}s +/- {result.elapsed_std:.4f}s, "
        f"throughput {result.throughput:.2f} images/s"
    )
    if out_path:
        bench_mod.write_timing_csv([result], out_path, dataset_names=["synthetic"])
        click.echo(f"wrote {out_path}")


@main.command()
@click.option("--table", "table_path", type=click.Path(exists=True),
              help="Result table CSV; defaults to the published fixtures.")
@click.option("--fixtures", "fixtures_dir", type=click.Path(exists=True))
@click.option("--fixture", "fixture_name", type=click.Choice(FIXTURE_NAMES),
              default="baseline_accuracy", show_default=True)
@click.option("--factor", default="policy", show_default=True)
@click.option("--level-a", default="norm_aug", show_default=True)
@click.option("--level-b", default="extra_aug", show_default=True)
@click.option("--holding", default="dataset,model,approach", show_default=True)
@click.option("--scenario", "scenarios", multiple=True,
              help="Restrict to these scenarios before pairing.")
@click.option("--seed", default=0, show_default=True)
def stats(table_path, fixtures_dir, fixture_name, factor, level_a, level_b, holding, scenarios, seed):
    """Paired comparison (signed-rank, effect size, bootstrap CI)."""
    if table_path:
        table = ResultTable.from_csv(table_path)
    else:
        table = load_fixture_tables(fixtures_dir)[fixture_name]
    if scenarios:
        table = table.select(scenario=tuple(scenarios))
    res = metrics.paired_comparison(
        table, factor, level_a, level_b,
        holding=tuple(h for h in holding.split(",") if h), seed=seed,
    )
    click.echo(f"pairs:     {res.n_pairs}")
    click.echo(f"statistic: {res.statistic}")
    click.echo(f"p-value:   {res.p_value:.3e}")
    click.echo(f"cohen's d: {res.effect_size_d:.4f}  "
               f"[{res.ci_low:.4f}, {res.ci_high:.4f}] ({res.n_resamples} resamples)")


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--fixtures", "fixtures_dir", type=click.Path(exists=True))
@click.option("--with-fixtures", is_flag=True,
              help="Include delta columns against the published fixtures.")
@click.option("--seed", default=0, show_default=True)
def report(store_path, out_dir, fixtures_dir, with_fixtures, seed):
    """Emit the report bundle from a result store or table CSV."""
    path = Path(store_path)
    table = ResultTable.from_csv(path) if path.suffix == ".csv" else read_table(path)
    fixtures = load_fixture_tables(fixtures_dir) if (with_fixtures or fixtures_dir) else None
    produced = emit_report(table, out_dir, fixtures=fixtures, seed=seed)
    for kind, val in produced.items():
        click.echo(f"{kind}: {val}")


if __name__ == "__main__":
    main()
