"""Command-line entry point: ``taxelgrasp <subcommand> ...``.

Every subcommand writes plain TSV/text (plus PNG figures where noted) and
exits 0 on success. Guard trips (leakage, gate rejections that empty the
dataset, non-finite training) exit 1 with the reason on stderr.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import augment, dataset, harness, hpsearch, synthgrasp
from .models import ARCHS, evaluate
from .nn.checkpoint import read_checkpoint


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(1)


def _common(fn):
    """Experiment flags shared by train, eval, sweep and search."""
    options = [
        click.option("--dataset", "dataset_dir", type=click.Path(file_okay=False), help="Dataset directory with manifest.tsv."),
        click.option("--sensor", type=click.Choice(dataset.SENSORS), default=None),
        click.option("--arch", type=click.Choice(ARCHS), default=None),
        click.option("--split-ratio", type=click.IntRange(1, dataset.CANONICAL_SAMPLES), default=None),
        click.option("--norm", type=click.Choice(["scaled", "standardized"]), default=None),
        click.option("--filtered", is_flag=True, default=None, help="Blur tactile images with a 3x3 box filter."),
        click.option("--seed", type=int, default=None),
        click.option("--epochs", type=click.IntRange(0), default=None),
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="key=value settings file."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _build_config(dataset_dir, sensor, arch, split_ratio, norm, filtered, seed, epochs, config_path, **extra) -> harness.ExperimentConfig:
    """Config file first, then explicit flags on top."""
    kw = harness.load_config(config_path) if config_path else {}
    flags = {
        "dataset": dataset_dir,
        "sensor": sensor,
        "arch": arch,
        "split_ratio": split_ratio,
        "norm": norm,
        "filtered": filtered,
        "seed": seed,
        "epochs": epochs,
    }
    flags.update(extra)
    kw.update({k: v for k, v in flags.items() if v is not None})
    try:
        return harness.experiment_config(**kw)
    except (TypeError, ValueError) as exc:
        _fail(f"invalid configuration: {exc}")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Tactile grasp classification experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="New (or empty) directory.")
@click.option("--sensor", "sensors", type=click.Choice(dataset.SENSORS), multiple=True, help="Repeat for both sensors; default both.")
@click.option("--per-class", type=click.IntRange(1), default=40, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--profiles", type=click.Path(exists=True, dir_okay=False), default=None, help="Object profile file.")
def generate(out_dir, sensors, per_class, seed, profiles):
    """Write a synthetic 9-class dataset (TACREC files + manifest)."""
    sensors = sensors or dataset.SENSORS
    try:
        prof = synthgrasp.load_profiles(profiles)
        recs = [r for s in sensors for r in synthgrasp.generate_recordings(per_class, s, seed, prof)]
        dataset.write_dataset(recs, out_dir)
    except (ValueError, FileExistsError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(recs)} recordings to {out_dir}")


@main.command("gate-check")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--sensor", type=click.Choice(dataset.SENSORS), default=None)
@click.option("--threshold", type=float, default=None, help="Pressure threshold; default 2% of full scale.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default=None, help="Write the TSV here instead of stdout.")
def gate_check(dataset_dir, sensor, threshold, out_file):
    """List which recordings pass the grasp gate."""
    recs = dataset.load_dataset(dataset_dir, sensor=sensor)
    lines = ["sensor\tobject\tgrasp_id\tsamples\tgate"]
    passed = 0
    for r in recs:
        ok = dataset.passes_gate(r, threshold)
        passed += ok
        lines.append(f"{r.sensor}\t{r.object.name}\t{r.grasp_id}\t{r.sample_count}\t{'pass' if ok else 'reject'}")
    text = "\n".join(lines) + "\n"
    if out_file:
        Path(out_file).write_text(text)
    else:
        click.echo(text, nl=False)
    click.echo(f"{passed}/{len(recs)} recordings pass the gate", err=True)
    if recs and not passed:
        _fail("no recording passes the grasp gate")


@main.command()
@_common
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--leaky-split", is_flag=True, default=None, help="Split series before partitioning (demonstrates the leakage guard).")
@click.option("--no-figures", is_flag=True)
def train(out_dir, leaky_split, no_figures, **flags):
    """Train one model; writes report, confusion, history, checkpoint and figures."""
    config = _build_config(**flags, split_before_partition=leaky_split)
    if not config.dataset:
        _fail("--dataset is required")
    try:
        report = harness.run_experiment(config)
    except (ValueError, FileNotFoundError) as exc:
        _fail(str(exc))
    harness.write_report(report, _out_dir(out_dir), figures=not no_figures)
    if not report.ok:
        _fail(report.reason)
    click.echo(f"{config.sensor} {config.arch} k={config.split_ratio}: validation accuracy {harness.format_accuracy(report.val_accuracy)}")


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True, file_okay=False), default=None, help="Default: the dataset the model was trained on.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--no-figures", is_flag=True)
def eval_cmd(ckpt_path, dataset_dir, out_dir, no_figures):
    """Evaluate a checkpoint on its validation partition."""
    try:
        ckpt = read_checkpoint(ckpt_path)
        config = harness.config_from_meta(ckpt.meta, dataset=dataset_dir)
        recs, rejected = harness.prepare_recordings(config)
        _, val_set, _ = harness.build_samples(config, recs)
        acc, cm = evaluate(ckpt, val_set)
    except (ValueError, FileNotFoundError, augment.LeakageError) as exc:
        _fail(str(exc))
    report = harness.ExperimentReport(config, val_accuracy=acc, confusion=cm, n_val=len(val_set), n_rejected=rejected)
    report.param_count = sum(a.size for a in ckpt.weights())
    harness.write_report(report, _out_dir(out_dir), figures=not no_figures)
    click.echo(f"validation accuracy {harness.format_accuracy(acc)}")


@main.command()
@_common
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--ratios", default="1,3,5,7", show_default=True, help="Comma-separated split ratios.")
@click.option("--archs", default=",".join(ARCHS), show_default=True)
@click.option("--sensors", default=None, help="Comma-separated; default every sensor in the dataset.")
@click.option("--no-figures", is_flag=True)
def sweep(out_dir, ratios, archs, sensors, no_figures, **flags):
    """Accuracy over sensors x architectures x split ratios."""
    config = _build_config(**flags)
    if not config.dataset:
        _fail("--dataset is required")
    try:
        ratio_list = [int(k) for k in ratios.split(",")]
        arch_list = [a for a in archs.split(",") if a]
        bad = [a for a in arch_list if a not in ARCHS]
        if bad:
            raise ValueError(f"unknown architectures {bad}")
        if sensors:
            sensor_list = [s for s in sensors.split(",") if s]
        elif flags["sensor"]:
            sensor_list = [flags["sensor"]]
        else:
            present = {r.sensor for r in dataset.load_dataset(config.dataset)}
            sensor_list = [s for s in dataset.SENSORS if s in present]
        result = harness.run_sweep(config, ratio_list, arch_list, sensors=sensor_list)
    except (ValueError, FileNotFoundError) as exc:
        _fail(str(exc))
    harness.write_sweep(result, _out_dir(out_dir), figures=not no_figures)
    click.echo(harness.render_summary(result.summary()), nl=False)
    failed = [r for r in result.rows if r["status"] != "ok"]
    if failed:
        _fail(f"{len(failed)} sweep cell(s) failed; see sweep.tsv")


@main.command()
@_common
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--space", "space_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Search grid file (dimension=v1;v2 lines).")
@click.option("--mode", type=click.Choice(["grid", "random"]), default="grid", show_default=True)
@click.option("--budget", type=click.IntRange(1), default=None, help="Number of trials (required for random mode).")
@click.option("--workers", type=click.IntRange(1), default=1, show_default=True)
def search(out_dir, space_path, mode, budget, workers, **flags):
    """Hyperparameter search ranked by validation accuracy."""
    config = _build_config(**flags)
    if not config.dataset:
        _fail("--dataset is required")
    try:
        space = hpsearch.parse_space(Path(space_path).read_text()) if space_path else hpsearch.SearchSpace()
        recs = dataset.load_dataset(config.dataset, sensor=config.sensor)
        result = hpsearch.search(space, config, budget=budget, mode=mode, workers=workers, recordings=recs)
    except (ValueError, FileNotFoundError) as exc:
        _fail(str(exc))
    out = _out_dir(out_dir)
    (out / "search.tsv").write_text(hpsearch.render_search(result))
    table = hpsearch.kernel_table(result)
    if table:
        (out / "kernel_table.tsv").write_text(hpsearch.render_kernel_table(table))
    best = result.best
    if not best.ok:
        _fail(f"all {len(result.trials)} trials failed; see search.tsv")
    click.echo(f"best trial {best.trial_id}: {harness.format_accuracy(best.val_acc)} ({best.param_count} parameters)")


@main.command()
@click.option("--sweep", "sweep_path", required=True, type=click.Path(exists=True, dir_okay=False), help="sweep.tsv from a previous sweep.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--no-figures", is_flag=True)
def report(sweep_path, out_dir, no_figures):
    """Re-render summary, tables, curves and figures from a sweep TSV."""
    try:
        rows = harness.parse_sweep(Path(sweep_path).read_text())
    except (KeyError, ValueError) as exc:
        _fail(f"{sweep_path}: {exc}")
    harness.write_sweep(harness.SweepResult(rows), _out_dir(out_dir), figures=not no_figures)
    click.echo(harness.render_summary(harness.summarize(rows)), nl=False)


if __name__ == "__main__":
    main()
