"""Grid and seeded random hyperparameter search over the model settings.

Every trial is a full train + evaluate run through the harness. All trials
share the base configuration's grasp partition; a trial's model seed is
derived from the base seed and the trial's own hyperparameters, so two
identical configurations always score identically.
"""

from __future__ import annotations

import itertools
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .harness import ExperimentConfig, format_accuracy, run_experiment

DIMENSIONS = ("learning_rate", "nodes", "dense_nodes", "dropout_rates", "kernel_space", "kernel_time")


@dataclass(frozen=True)
class SearchSpace:
    """One grid per searched dimension.

    ``nodes`` is the filter count of every conv layer, or the LSTM width.
    Kernel grids only apply to the convolutional architectures, and
    ``kernel_time`` only to the 3D ones.
    """

    learning_rate: tuple[float, ...] = (1e-3, 2e-3)
    nodes: tuple[int, ...] = (16, 32)
    dense_nodes: tuple[int, ...] = (32,)
    dropout_rates: tuple[tuple[float, float], ...] = ((0.2, 0.3),)
    kernel_space: tuple[tuple[int, int], ...] = ((3, 2),)
    kernel_time: tuple[int, ...] = (3,)

    def __post_init__(self):
        for name in DIMENSIONS:
            if len(getattr(self, name)) == 0:
                raise ValueError(f"search grid for {name} is empty")

    def dimensions(self, arch: str) -> tuple[str, ...]:
        if arch == "lstm1":
            return DIMENSIONS[:4]
        if arch.startswith("cnn2d"):
            return DIMENSIONS[:5]
        return DIMENSIONS

    def grid(self, arch: str) -> list[dict]:
        dims = self.dimensions(arch)
        return [dict(zip(dims, combo)) for combo in itertools.product(*(getattr(self, d) for d in dims))]

    def size(self, arch: str) -> int:
        return math.prod(len(getattr(self, d)) for d in self.dimensions(arch))


def parse_space(text: str) -> SearchSpace:
    """``dimension=v1;v2;...`` lines; tuple values are comma separated (``3,2``)."""
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in DIMENSIONS:
            raise ValueError(f"search space line {lineno}: expected <dimension>=v1;v2 with dimension in {DIMENSIONS}")
        items = [v.strip() for v in value.split(";") if v.strip()]
        if key in ("learning_rate",):
            kw[key] = tuple(float(v) for v in items)
        elif key in ("nodes", "dense_nodes", "kernel_time"):
            kw[key] = tuple(int(v) for v in items)
        elif key == "dropout_rates":
            kw[key] = tuple(tuple(float(x) for x in v.split(",")) for v in items)
        else:
            kw[key] = tuple(tuple(int(x) for x in v.split(",")) for v in items)
    return SearchSpace(**kw)


def model_overrides(arch: str, params: dict) -> dict:
    """Translate search dimensions into ``ModelSpec`` fields."""
    out = {}
    for key, value in params.items():
        if key == "nodes":
            if arch == "lstm1":
                out["lstm_nodes"] = int(value)
            else:
                out["conv_nodes"] = (int(value),) * (2 if arch.endswith("2") else 1)
        else:
            out[key] = value
    return out


def _params_key(params: dict) -> str:
    return ";".join(f"{k}={params[k]!r}" for k in sorted(params))


def trial_seed(seed: int, params: dict) -> int:
    """Model seed for a trial, derived from the base seed and its settings."""
    ss = np.random.SeedSequence([seed, zlib.crc32(_params_key(params).encode())])
    return int(ss.generate_state(1)[0])


@dataclass
class Trial:
    trial_id: int
    params: dict
    seed: int
    val_acc: float = float("nan")
    param_count: int = 0
    status: str = "ok"
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok" and math.isfinite(self.val_acc)


@dataclass
class SearchResult:
    arch: str
    mode: str
    trials: list[Trial] = field(default_factory=list)  # ranked

    @property
    def best(self) -> Trial:
        return self.trials[0]


def rank_key(trial: Trial):
    acc = trial.val_acc if trial.ok else -math.inf
    return (-acc, trial.param_count, trial.trial_id)


def plan_trials(space: SearchSpace, arch: str, seed: int, budget: int | None, mode: str) -> list[dict]:
    if budget is not None and budget < 1:
        raise ValueError("budget must be >= 1")
    grid = space.grid(arch)
    if mode == "grid":
        return grid if budget is None else grid[:budget]
    if mode == "random":
        if budget is None:
            raise ValueError("random search needs an explicit budget")
        rng = np.random.default_rng(seed)
        return [grid[int(i)] for i in rng.integers(0, len(grid), size=budget)]
    raise ValueError(f"unknown search mode {mode!r}; expected grid or random")


def _run_trial(args) -> Trial:
    base, trial_id, params, recordings = args
    seed = trial_seed(base.seed, params)
    model = dict(base.model)
    model.update(model_overrides(base.arch, params))
    config = replace(base, model=model, model_seed=seed)
    trial = Trial(trial_id, params, seed)
    try:
        report = run_experiment(config, recordings)
    except ValueError as exc:
        trial.status, trial.reason = "failed", f"invalid configuration: {exc}"
        return trial
    trial.param_count = report.param_count
    trial.val_acc = report.val_accuracy
    trial.status, trial.reason = report.status, report.reason
    return trial


def search(
    space: SearchSpace,
    base: ExperimentConfig,
    budget: int | None = None,
    mode: str = "grid",
    workers: int = 1,
    recordings=None,
) -> SearchResult:
    """Run every planned trial and rank them.

    Ranking: validation accuracy (best epoch) descending, then fewer
    parameters, then lower trial index. Failed trials rank last but are kept.
    """
    plan = plan_trials(space, base.arch, base.seed, budget, mode)
    jobs = [(base, i, params, recordings) for i, params in enumerate(plan)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_trial, jobs))
    else:
        trials = [_run_trial(job) for job in jobs]
    return SearchResult(base.arch, mode, sorted(trials, key=rank_key))


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_search(result: SearchResult) -> str:
    dims = sorted({k for t in result.trials for k in t.params}, key=DIMENSIONS.index)
    lines = ["\t".join(["rank", "trial_id", "seed"] + list(dims) + ["val_acc", "val_acc_pct", "param_count", "status", "reason"])]
    for rank, t in enumerate(result.trials, 1):
        cells = [str(rank), str(t.trial_id), str(t.seed)]
        cells += [_fmt(t.params.get(d, "")) for d in dims]
        cells += [repr(t.val_acc), format_accuracy(t.val_acc), str(t.param_count), t.status, t.reason]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def kernel_table(result: SearchResult) -> list[dict]:
    """Best accuracy per (kernel_time, kernel_space) pair over successful trials."""
    cells: dict[tuple, dict] = {}
    for t in result.trials:
        if "kernel_space" not in t.params:
            continue
        key = (t.params.get("kernel_time", 0), tuple(t.params["kernel_space"]))
        cell = cells.setdefault(key, {"kernel_time": key[0], "kernel_space": key[1], "trials": 0, "failed": 0, "best_val_acc": float("nan")})
        cell["trials"] += 1
        if not t.ok:
            cell["failed"] += 1
        elif not cell["best_val_acc"] >= t.val_acc:
            cell["best_val_acc"] = t.val_acc
    return [cells[k] for k in sorted(cells)]


def render_kernel_table(rows) -> str:
    lines = ["kernel_time\tkernel_space\ttrials\tfailed\tbest_val_acc\tbest_val_acc_pct"]
    for r in rows:
        lines.append(
            f"{r['kernel_time']}\t{_fmt(r['kernel_space'])}\t{r['trials']}\t{r['failed']}\t{r['best_val_acc']!r}\t{format_accuracy(r['best_val_acc'])}"
        )
    return "\n".join(lines) + "\n"


__all__ = [
    "DIMENSIONS",
    "SearchResult",
    "SearchSpace",
    "Trial",
    "kernel_table",
    "model_overrides",
    "parse_space",
    "plan_trials",
    "rank_key",
    "render_kernel_table",
    "render_search",
    "search",
    "trial_seed",
]
