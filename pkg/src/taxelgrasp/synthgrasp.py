"""Deterministic synthetic grasp recordings for the nine-object set.

Each class is described by an :class:`ObjectProfile`: a contact footprint
on the finger grid, a pressure ramp whose exponent encodes stiffness, and
per-grasp variation (pose offset, amplitude, facet-shift timing). The
generator stands in for the physical rig; it is not a contact simulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import (
    FINGERS,
    OBJECT_NAMES,
    GraspRecording,
    ObjectClass,
    TaxelLayout,
    default_threshold,
    layout_for,
    passes_gate,
    sensor_info,
    write_dataset,
)

FOOTPRINTS = ("disk", "band", "ridge", "plane", "spikes")
FACET_SHIFT_CLASSES = ("triangular_prism", "icosahedron")
# fraction of the end pressure already present when recording starts
RAMP_BASE = 0.35


@dataclass(frozen=True)
class ObjectProfile:
    object: ObjectClass
    footprint: str
    size: float
    center: tuple[float, float] = (0.5, 0.5)
    stiffness: float = 1.0
    peak: float = 0.5
    noise_sigma: float = 0.02
    pose_jitter: tuple[float, float] = (0.0, 0.0)
    amp_jitter: float = 0.0
    finger_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    dynamics: str = "static"
    alt_footprint: str = ""
    alt_size: float = 0.0
    transition: float = 0.5
    transition_jitter: float = 0.0

    def __post_init__(self):
        for kind in (self.footprint,) + ((self.alt_footprint,) if self.alt_footprint else ()):
            if kind not in FOOTPRINTS:
                raise ValueError(f"{self.object.name}: unknown footprint {kind!r}")
        if self.dynamics not in ("static", "facetshift"):
            raise ValueError(f"{self.object.name}: unknown dynamics {self.dynamics!r}")
        if self.dynamics == "facetshift":
            if self.object.name not in FACET_SHIFT_CLASSES:
                raise ValueError(f"{self.object.name}: facet shifts are reserved for {FACET_SHIFT_CLASSES}")
            if not self.alt_footprint:
                raise ValueError(f"{self.object.name}: facetshift needs alt_footprint")
        if self.stiffness <= 0 or self.peak <= 0 or self.noise_sigma < 0 or self.amp_jitter < 0:
            raise ValueError(f"{self.object.name}: stiffness/peak must be positive, noise/jitter non-negative")
        if len(self.finger_gain) != len(FINGERS):
            raise ValueError(f"{self.object.name}: need one finger gain per finger")


def footprint_values(kind: str, size: float, center, u: np.ndarray, v: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Contact weight in [0, 1] at normalised taxel coordinates (u row, v col)."""
    cu, cv = center
    if kind == "disk":
        d2 = ((u - cu) ** 2 + (v - cv) ** 2) / (size * size)
        return np.clip(1.0 - d2, 0.0, 1.0)
    if kind == "spikes":
        d2 = ((u - cu) ** 2 + (v - cv) ** 2) / (size * size)
        lattice = ((rows + cols) % 2 == 0).astype(float)
        return np.clip(1.0 - d2, 0.0, 1.0) * (0.15 + 0.85 * lattice)
    if kind == "band":
        return np.clip(1.0 - ((u - cu) / size) ** 2, 0.0, 1.0)
    if kind == "ridge":
        return np.clip(1.0 - ((v - cv) / size) ** 2, 0.0, 1.0)
    if kind == "plane":
        return np.clip(1.0 - size * np.abs(u - cu) - 0.5 * size * np.abs(v - cv), 0.0, 1.0)
    raise ValueError(f"unknown footprint {kind!r}")


def _grid_coords(layout: TaxelLayout):
    rows, cols = layout.rows, layout.cols
    return (rows + 0.5) / layout.grid_rows, (cols + 0.5) / layout.grid_cols, rows, cols


def grasp_rng(seed: int, object_id: int, grasp_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, object_id, grasp_id]))


def generate(
    profile: ObjectProfile,
    grasp_id: int,
    seed: int,
    sensor: str,
    layout: TaxelLayout | None = None,
) -> GraspRecording:
    """One recording: stiffness-shaped ramp x (jittered) footprint + noise."""
    info = sensor_info(sensor)
    layout = layout or layout_for(sensor)
    rng = grasp_rng(seed, profile.object.id, grasp_id)
    steps = info.raw_samples
    fs = info.full_scale
    t = np.arange(steps) / (steps - 1)
    ramp = RAMP_BASE + (1.0 - RAMP_BASE) * t**profile.stiffness
    amp = profile.peak * fs * (1.0 + profile.amp_jitter * rng.uniform(-1.0, 1.0))

    u, v, rows, cols = _grid_coords(layout)
    jr, jc = profile.pose_jitter
    primary = np.empty((len(FINGERS), layout.taxel_count))
    alt = np.empty_like(primary)
    for f, gain in enumerate(profile.finger_gain):
        du = rng.uniform(-jr, jr) / layout.grid_rows
        dv = rng.uniform(-jc, jc) / layout.grid_cols
        primary[f] = gain * footprint_values(profile.footprint, profile.size, profile.center, u - du, v - dv, rows, cols)
        if profile.dynamics == "facetshift":
            alt[f] = gain * footprint_values(profile.alt_footprint, profile.alt_size, profile.center, u - du, v - dv, rows, cols)

    pattern = np.broadcast_to(primary, (steps,) + primary.shape).copy()
    if profile.dynamics == "facetshift":
        when = profile.transition + profile.transition_jitter * rng.uniform(-1.0, 1.0)
        t0 = int(np.clip(round(when * (steps - 1)), 1, steps - 1))
        pattern[t0:] = alt

    frames = amp * ramp[:, None, None] * pattern
    sigma = profile.noise_sigma * fs
    if sigma > 0:
        noise = np.clip(rng.normal(0.0, sigma, frames.shape), -2 * sigma, 2 * sigma)
        frames = frames + noise
    frames = np.maximum(frames, 0.0)

    _check_gate_margin(profile, primary, amp, sigma, sensor)
    rec = GraspRecording(sensor, profile.object, grasp_id, frames, info.rate_hz)
    if not passes_gate(rec):
        raise RuntimeError(f"generated grasp {grasp_id} ({profile.object.name}) fails the grasp gate")
    return rec


def _check_gate_margin(profile, primary, amp, sigma, sensor):
    """Worst-case first-frame pressure must clear the gate threshold."""
    tau = default_threshold(sensor)
    floor = amp * RAMP_BASE * primary.max(axis=1) - 2 * sigma
    if floor[0] <= tau or max(floor[1], floor[2]) <= tau:
        raise ValueError(
            f"profile {profile.object.name} cannot guarantee the grasp gate "
            f"(worst-case start pressure {floor.round(1).tolist()} vs threshold {tau})"
        )


# ---------------------------------------------------------------- profiles

def _parse_pair(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(","))


def parse_profiles(text: str) -> dict[str, ObjectProfile]:
    """Parse ``key=value`` blocks, one per class, separated by blank lines."""
    blocks: list[dict[str, str]] = []
    current: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.lstrip().startswith("#"):
            continue
        line = raw.split("#", 1)[0].strip()
        if not line:
            if current:
                blocks.append(current)
                current = {}
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"profile line {lineno}: expected key=value")
        current[key.strip()] = value.strip()
    if current:
        blocks.append(current)
    profiles = {}
    for block in blocks:
        name = block.pop("class", None)
        if name is None:
            raise ValueError("profile block without class=")
        kw: dict = {"object": ObjectClass.from_name(name)}
        for key, value in block.items():
            if key in ("center", "pose_jitter", "finger_gain"):
                kw[key] = _parse_pair(value)
            elif key in ("footprint", "dynamics", "alt_footprint"):
                kw[key] = value
            elif key in ("size", "stiffness", "peak", "noise_sigma", "amp_jitter", "alt_size", "transition", "transition_jitter"):
                kw[key] = float(value)
            else:
                raise ValueError(f"profile {name}: unknown key {key!r}")
        profiles[name] = ObjectProfile(**kw)
    return profiles


def load_profiles(path=None) -> dict[str, ObjectProfile]:
    if path is not None:
        profiles = parse_profiles(Path(path).read_text())
    else:
        ref = resources.files("taxelgrasp") / "data" / "synth_profiles_v1.txt"
        profiles = parse_profiles(ref.read_text())
    missing = [n for n in OBJECT_NAMES if n not in profiles]
    if missing:
        raise ValueError(f"profiles missing for {missing}")
    return profiles


def generate_recordings(n_per_class: int, sensor: str, seed: int, profiles=None) -> list[GraspRecording]:
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    profiles = profiles or load_profiles()
    layout = layout_for(sensor)
    recs = []
    for cls_id, name in enumerate(OBJECT_NAMES):
        for j in range(n_per_class):
            grasp_id = cls_id * n_per_class + j
            recs.append(generate(profiles[name], grasp_id, seed, sensor, layout))
    return recs


def generate_dataset(n_per_class: int, sensor: str, seed: int, directory, profiles=None) -> Path:
    """Write 9 x n_per_class recordings plus manifest into a fresh directory."""
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()):
        raise FileExistsError(f"output directory {directory} already exists and is not empty")
    return write_dataset(generate_recordings(n_per_class, sensor, seed, profiles), directory)


def nearest_centroid_accuracy(train, val) -> float:
    """Baseline: classify time-averaged frames by the nearest class centroid."""
    def feats(recs):
        return np.stack([r.frames.mean(axis=0).ravel() for r in recs]), np.array([r.label for r in recs])

    xt, yt = feats(train)
    xv, yv = feats(val)
    classes = np.unique(yt)
    centroids = np.stack([xt[yt == c].mean(axis=0) for c in classes])
    d = ((xv[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    pred = classes[d.argmin(axis=1)]
    return float(np.mean(pred == yv))


__all__ = [
    "ObjectProfile",
    "footprint_values",
    "generate",
    "generate_dataset",
    "generate_recordings",
    "load_profiles",
    "nearest_centroid_accuracy",
    "parse_profiles",
]
