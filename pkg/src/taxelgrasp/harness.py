"""Experiment orchestration: one pipeline run, ratio sweeps and report files."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import augment, dataset, preprocess
from .augment import LeakageError, SampleSet
from .dataset import CANONICAL_SAMPLES, OBJECT_NAMES, GraspRecording
from .models import ARCH_LABELS, ARCHS, ModelSpec, TrainingError, build, evaluate, train
from .nn import Checkpoint

log = logging.getLogger(__name__)

# per-architecture defaults; every field is overridable from a config file
DEFAULT_SPECS = {
    "cnn2d1": ModelSpec(arch="cnn2d1", conv_nodes=(16,), kernel_space=(3, 2), dense_nodes=32, dropout_rates=(0.25, 0.3), learning_rate=1e-3),
    "cnn2d2": ModelSpec(arch="cnn2d2", conv_nodes=(16, 16), kernel_space=(3, 2), dense_nodes=32, dropout_rates=(0.25, 0.3), learning_rate=1e-3),
    "cnn3d1": ModelSpec(arch="cnn3d1", conv_nodes=(4,), kernel_space=(3, 2), kernel_time=3, dense_nodes=32, dropout_rates=(0.25, 0.3), learning_rate=1e-3, pool=True),
    "cnn3d2": ModelSpec(arch="cnn3d2", conv_nodes=(4, 4), kernel_space=(3, 2), kernel_time=3, dense_nodes=32, dropout_rates=(0.25, 0.3), learning_rate=1e-3),
    "lstm1": ModelSpec(arch="lstm1", lstm_nodes=32, dense_nodes=32, dropout_rates=(0.1, 0.2), lstm_recurrent_dropout=0.1, learning_rate=2e-3),
}

_SPEC_FIELDS = tuple(f.name for f in fields(ModelSpec) if f.name not in ("arch", "n_classes"))


@dataclass(frozen=True)
class ExperimentConfig:
    sensor: str = "biotac"
    arch: str = "lstm1"
    split_ratio: int = 1
    norm: str = "scaled"
    filtered: bool = False
    shift_augment: bool = True
    seed: int = 0
    epochs: int = 150
    val_fraction: float = 0.2
    test_fraction: float = 0.0
    batch_size: int = 16
    norm_scope: str = "global"
    dataset: str = ""
    gate_threshold: float | None = None
    split_before_partition: bool = False
    # seeds weight init and training order; defaults to ``seed``
    model_seed: int | None = None
    model: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        dataset.sensor_info(self.sensor)
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.split_ratio < 1 or self.split_ratio > CANONICAL_SAMPLES:
            raise ValueError(f"split_ratio must lie in 1..{CANONICAL_SAMPLES}")
        if self.norm not in preprocess.NORM_MODES:
            raise ValueError(f"norm must be one of {preprocess.NORM_MODES}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        unknown = set(self.model) - set(_SPEC_FIELDS)
        if unknown:
            raise ValueError(f"unknown model keys {sorted(unknown)}")

    @property
    def series_length(self) -> int:
        return math.ceil(CANONICAL_SAMPLES / self.split_ratio)

    def model_spec(self) -> ModelSpec:
        return replace(DEFAULT_SPECS[self.arch], **self.model)

    def as_items(self) -> list[tuple[str, str]]:
        items = []
        for f in fields(self):
            if f.name == "model":
                continue
            items.append((f.name, _fmt_value(getattr(self, f.name))))
        spec = self.model_spec()
        for name in _SPEC_FIELDS:
            items.append((f"model.{name}", _fmt_value(getattr(spec, name))))
        return items


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


# ---------------------------------------------------------------- config files

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


_NULLABLE = ("gate_threshold", "model_seed")


def _coerce(name: str, raw: str, template):
    if name in _NULLABLE + ("pool",) and raw.lower() == "none":
        return None
    if name == "pool":
        template = False
    if isinstance(template, bool):
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ValueError(f"{name}: expected true/false, got {raw!r}") from None
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float) or template is None:
        return None if raw.lower() == "none" else float(raw)
    if isinstance(template, tuple):
        kind = type(template[0]) if template else int
        return tuple(kind(x) for x in raw.split(",") if x)
    return raw


def parse_config(text: str) -> dict:
    """``key=value`` lines; ``model.<field>`` or bare spec fields set model hyperparameters."""
    out: dict = {}
    model: dict = {}
    defaults = ExperimentConfig()
    spec_defaults = ModelSpec()
    aliases = {"split-ratio": "split_ratio", "norm_mode": "norm"}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = aliases.get(key.strip(), key.strip()), value.strip()
        if key.startswith("model."):
            key = key[6:]
            if key not in _SPEC_FIELDS:
                raise ValueError(f"config line {lineno}: unknown model key {key!r}")
        if key in _SPEC_FIELDS and not hasattr(defaults, key):
            model[key] = _coerce(key, value, getattr(spec_defaults, key))
        elif hasattr(defaults, key) and key != "model":
            template = getattr(defaults, key)
            if key in ("gate_threshold", "model_seed"):
                template = 0 if key == "model_seed" else 0.0
            out[key] = value if key in ("sensor", "arch", "norm", "norm_scope", "dataset") else _coerce(key, value, template)
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    if model:
        out["model"] = model
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


def config_meta(config: ExperimentConfig) -> dict[str, str]:
    """Experiment settings as ``config.<key>`` checkpoint metadata."""
    return {f"config.{k}": v for k, v in config.as_items()}


def config_from_meta(meta: dict[str, str], **overrides) -> ExperimentConfig:
    """Inverse of :func:`config_meta`; ``overrides`` replace stored values."""
    text = "\n".join(f"{k[7:]}={v}" for k, v in sorted(meta.items()) if k.startswith("config."))
    if not text:
        raise ValueError("checkpoint carries no experiment settings")
    kw = parse_config(text)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------- one experiment

@dataclass
class ExperimentReport:
    config: ExperimentConfig
    status: str = "ok"
    reason: str = ""
    val_accuracy: float = float("nan")
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((len(OBJECT_NAMES),) * 2, dtype=np.int64))
    history: list = field(default_factory=list)
    best_epoch: int = 0
    param_count: int = 0
    n_train: int = 0
    n_val: int = 0
    n_rejected: int = 0
    checkpoint: Checkpoint | None = None
    train_grasps: tuple[int, ...] = ()
    val_grasps: tuple[int, ...] = ()

    @property
    def series_length(self) -> int:
        return self.config.series_length

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def prepare_recordings(config: ExperimentConfig, recordings=None) -> tuple[list[GraspRecording], int]:
    """Load, gate-filter and resample; returns recordings and the rejected count."""
    if recordings is None:
        if not config.dataset:
            raise ValueError("no dataset given")
        recordings = dataset.load_dataset(config.dataset, sensor=config.sensor)
    recs = [r for r in recordings if r.sensor == config.sensor]
    if not recs:
        raise ValueError(f"dataset has no {config.sensor} recordings")
    kept = [r for r in recs if dataset.passes_gate(r, config.gate_threshold)]
    canonical = [dataset.resample_to_canonical(r) for r in kept]
    return canonical, len(recs) - len(kept)


def build_samples(config: ExperimentConfig, recs: list[GraspRecording]) -> tuple[SampleSet, SampleSet, dataset.DatasetSplit | None]:
    spec = config.model_spec()
    taxels = dataset.layout_for(config.sensor)

    def transform(frames):
        return preprocess.assemble_frames(frames, spec.layout, taxels, config.filtered)

    if config.split_before_partition:
        # leaky ordering kept only to show the guard trips
        norm = preprocess.fit_normalizer(recs, config.norm, config.norm_scope)
        normed = [preprocess.apply_normalizer(r, norm) for r in recs]
        train_set, val_set = augment.split_then_partition(normed, config.split_ratio, config.val_fraction, config.seed, transform)
        return train_set, val_set, None

    split = dataset.partition_by_grasp(recs, config.val_fraction, config.seed, config.test_fraction)
    train_recs = [r for r in recs if r.grasp_id in split.train_ids]
    norm = preprocess.fit_normalizer(train_recs, config.norm, config.norm_scope)
    normed = [preprocess.apply_normalizer(r, norm) for r in recs]
    shift = config.shift_augment and spec.layout != preprocess.SEQUENCE_OF_VECTORS
    train_set, val_set = augment.augment_partition(
        normed,
        split,
        config.split_ratio,
        shift=shift,
        transform=transform,
        layout=spec.layout,
        block_rows=taxels.grid_rows,
    )
    return train_set, val_set, split


def run_experiment(config: ExperimentConfig, recordings=None) -> ExperimentReport:
    """load -> gate -> resample -> partition -> normalise -> split -> assemble -> train -> evaluate."""
    report = ExperimentReport(config)
    recs, report.n_rejected = prepare_recordings(config, recordings)
    spec = config.model_spec()
    try:
        train_set, val_set, _ = build_samples(config, recs)
        report.n_train, report.n_val = len(train_set), len(val_set)
        report.train_grasps = tuple(sorted(set(train_set.grasp_ids.tolist())))
        report.val_grasps = tuple(sorted(set(val_set.grasp_ids.tolist())))
        # guard on the sample streams that actually reach training
        augment.check_disjoint(train_set.grasp_ids, val_set.grasp_ids)
        model_seed = config.seed if config.model_seed is None else config.model_seed
        net = build(spec, train_set.x.shape[1:], seed=model_seed)
        report.param_count = net.param_count
        result = train(net, spec, train_set, val_set, config.epochs, seed=model_seed + 1, batch_size=config.batch_size)
        report.history = result.history
        report.best_epoch = result.best_epoch
        report.checkpoint = result.checkpoint
        report.checkpoint.meta.update(config_meta(config))
        report.val_accuracy, report.confusion = evaluate(net, val_set)
    except LeakageError as exc:
        report.status, report.reason = "failed", f"leakage guard: {exc}"
    except TrainingError as exc:
        report.status, report.reason = "failed", f"training aborted: {exc}"
    except ValueError as exc:
        report.status, report.reason = "failed", f"invalid configuration: {exc}"
    if not report.ok:
        log.warning("%s %s k=%d failed: %s", config.sensor, config.arch, config.split_ratio, report.reason)
    return report


# ---------------------------------------------------------------- rendering

def format_accuracy(acc: float) -> str:
    if acc is None or not math.isfinite(acc):
        return "n/a"
    return f"{100.0 * acc:.1f} %"


def render_confusion(cm: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(["true\\pred"] + list(OBJECT_NAMES))
    for name, row in zip(OBJECT_NAMES, np.asarray(cm, dtype=np.int64)):
        writer.writerow([name] + [str(int(v)) for v in row])
    return buf.getvalue()


def render_history(history) -> str:
    lines = ["epoch\ttrain_loss\tval_acc"]
    for epoch, loss, acc in history:
        lines.append(f"{epoch}\t{loss!r}\t{acc!r}")
    return "\n".join(lines) + "\n"


def render_report(report: ExperimentReport) -> str:
    c = report.config
    lines = [
        "# experiment report",
        f"status\t{report.status}",
    ]
    if report.reason:
        lines.append(f"reason\t{report.reason}")
    lines += [
        f"architecture\t{ARCH_LABELS[c.arch]}",
        f"layers\t{2 if c.arch.endswith('2') else 1}",
        f"split_ratio\t{c.split_ratio}",
        f"series_length\t{report.series_length}",
        f"normalisation\t{c.norm}{', filtered' if c.filtered else ''}",
        f"validation_accuracy\t{format_accuracy(report.val_accuracy)}",
        f"best_epoch\t{report.best_epoch}",
        f"parameters\t{report.param_count}",
        f"train_samples\t{report.n_train}",
        f"val_samples\t{report.n_val}",
        f"gate_rejected\t{report.n_rejected}",
    ]
    lines += [f"config.{k}\t{v}" for k, v in c.as_items()]
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, out_dir, figures: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(render_report(report))
    (out / "confusion.tsv").write_text(render_confusion(report.confusion))
    (out / "history.tsv").write_text(render_history(report.history))
    if report.checkpoint is not None:
        from .nn.checkpoint import write_checkpoint

        write_checkpoint(report.checkpoint, out / "model.ckpt")
    if figures and report.ok:
        from . import plotting

        plotting.confusion_figure(report.confusion, out / "confusion.png", title=f"{ARCH_LABELS[report.config.arch]} {report.config.sensor}")
        if report.history:
            plotting.history_figure(report.history, out / "history.png")
    return out


# ---------------------------------------------------------------- sweeps

SWEEP_COLUMNS = ("sensor", "arch", "layers", "split_ratio", "series_length", "norm", "val_acc", "best_epoch", "param_count", "status")


@dataclass
class SweepResult:
    rows: list[dict]
    reports: list[ExperimentReport] = field(default_factory=list, repr=False)

    def summary(self) -> list[dict]:
        return summarize(self.rows)


def run_sweep(base: ExperimentConfig, ratios=augment.EVALUATED_SPLIT_RATIOS, archs=ARCHS, sensors=None, recordings=None) -> SweepResult:
    """Every (sensor, arch, ratio) cell; failed cells are marked and the sweep goes on."""
    sensors = sensors or (base.sensor,)
    rows, reports = [], []
    for sensor in sensors:
        recs = recordings
        if recs is None:
            recs = dataset.load_dataset(base.dataset, sensor=sensor)
        for arch in archs:
            for k in ratios:
                cfg = replace(base, sensor=sensor, arch=arch, split_ratio=k)
                rep = run_experiment(cfg, recs)
                log.info("%s %-6s k=%d acc=%s", sensor, arch, k, format_accuracy(rep.val_accuracy))
                reports.append(rep)
                rows.append(sweep_row(rep))
    return SweepResult(rows, reports)


def sweep_row(rep: ExperimentReport) -> dict:
    c = rep.config
    return {
        "sensor": c.sensor,
        "arch": c.arch,
        "layers": 2 if c.arch.endswith("2") else 1,
        "split_ratio": c.split_ratio,
        "series_length": rep.series_length,
        "norm": c.norm + (",filtered" if c.filtered else ""),
        "val_acc": rep.val_accuracy if rep.ok else float("nan"),
        "best_epoch": rep.best_epoch,
        "param_count": rep.param_count,
        "status": rep.status,
    }


def render_sweep(rows) -> str:
    lines = ["\t".join(SWEEP_COLUMNS)]
    for r in rows:
        vals = []
        for col in SWEEP_COLUMNS:
            v = r[col]
            vals.append(repr(float(v)) if col == "val_acc" else str(v))
        lines.append("\t".join(vals))
    return "\n".join(lines) + "\n"


def parse_sweep(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text), delimiter="\t")
    rows = []
    for r in reader:
        rows.append({
            "sensor": r["sensor"],
            "arch": r["arch"],
            "layers": int(r["layers"]),
            "split_ratio": int(r["split_ratio"]),
            "series_length": int(r["series_length"]),
            "norm": r["norm"],
            "val_acc": float(r["val_acc"]),
            "best_epoch": int(r["best_epoch"]),
            "param_count": int(r["param_count"]),
            "status": r["status"],
        })
    return rows


def summarize(rows) -> list[dict]:
    """Maximum validation accuracy per (sensor, arch) with the ratio achieving it."""
    best: dict[tuple[str, str], dict] = {}
    for r in rows:
        if r["status"] != "ok" or not math.isfinite(r["val_acc"]):
            continue
        key = (r["sensor"], r["arch"])
        if key not in best or r["val_acc"] > best[key]["max_val_acc"]:
            best[key] = {"sensor": r["sensor"], "arch": r["arch"], "max_val_acc": r["val_acc"], "split_ratio": r["split_ratio"], "series_length": r["series_length"]}
    order = {a: i for i, a in enumerate(ARCHS)}
    return sorted(best.values(), key=lambda d: (d["sensor"], order.get(d["arch"], 99)))


def render_summary(summary) -> str:
    lines = ["sensor\tarch\tmax_val_acc\tsplit_ratio\tseries_length\tmax_val_acc_pct"]
    for s in summary:
        lines.append(f"{s['sensor']}\t{s['arch']}\t{s['max_val_acc']!r}\t{s['split_ratio']}\t{s['series_length']}\t{format_accuracy(s['max_val_acc'])}")
    return "\n".join(lines) + "\n"


def render_curve(rows, sensor: str, arch: str) -> str:
    lines = ["series_length\tsplit_ratio\tval_acc"]
    pts = sorted((r for r in rows if r["sensor"] == sensor and r["arch"] == arch), key=lambda r: -r["series_length"])
    for r in pts:
        lines.append(f"{r['series_length']}\t{r['split_ratio']}\t{float(r['val_acc'])!r}")
    return "\n".join(lines) + "\n"


def render_table(rows, sensor: str) -> str:
    """Accuracy table in the layout of the published result tables."""
    lines = [f"# {sensor} validation accuracy", "model\tnumber of layers\tsplit ratio\ttime-series length\tnormalisation\tvalidation acc."]
    for r in rows:
        if r["sensor"] != sensor:
            continue
        acc = format_accuracy(r["val_acc"]) if r["status"] == "ok" else "failed"
        family = {"cnn2": "2D-CNN", "cnn3": "3D-CNN", "lstm": "LSTM"}[r["arch"][:4]]
        lines.append(f"{family}\t{r['layers']}\t{r['split_ratio']}\t{r['series_length']}\t{r['norm']}\t{acc}")
    return "\n".join(lines) + "\n"


def write_sweep(result: SweepResult, out_dir, figures: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result.rows
    (out / "sweep.tsv").write_text(render_sweep(rows))
    summary = summarize(rows)
    (out / "summary.tsv").write_text(render_summary(summary))
    sensors = sorted({r["sensor"] for r in rows})
    for sensor in sensors:
        (out / f"table_{sensor}.tsv").write_text(render_table(rows, sensor))
        for arch in ARCHS:
            if any(r["sensor"] == sensor and r["arch"] == arch for r in rows):
                (out / f"curve_{sensor}_{arch}.tsv").write_text(render_curve(rows, sensor, arch))
    for rep in result.reports:
        if rep.ok:
            c = rep.config
            (out / f"confusion_{c.sensor}_{c.arch}_k{c.split_ratio}.tsv").write_text(render_confusion(rep.confusion))
    if figures:
        from . import plotting

        for sensor in sensors:
            plotting.accuracy_curves_figure(rows, sensor, out / f"curves_{sensor}.png")
        plotting.max_accuracy_figure(summary, out / "max_accuracy.png")
    return out


def experiment_config(**kw) -> ExperimentConfig:
    """Build a config from flat keys, routing model hyperparameters into ``model``."""
    model = dict(kw.pop("model", {}) or {})
    for key in list(kw):
        if key in _SPEC_FIELDS and key not in {f.name for f in fields(ExperimentConfig)}:
            model[key] = kw.pop(key)
    return ExperimentConfig(model=model, **kw)


__all__ = [
    "DEFAULT_SPECS",
    "ExperimentConfig",
    "ExperimentReport",
    "SweepResult",
    "experiment_config",
    "format_accuracy",
    "load_config",
    "parse_config",
    "parse_sweep",
    "render_confusion",
    "render_report",
    "render_summary",
    "render_sweep",
    "run_experiment",
    "run_sweep",
    "summarize",
    "write_report",
    "write_sweep",
]
