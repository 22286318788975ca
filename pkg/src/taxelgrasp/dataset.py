"""Recordings, sensor layouts, the grasp gate and grasp-level partitioning.

A recording holds ``frames`` of shape (T, 3, taxels) for the thumb, index
and ring finger, in that order. Datasets on disk are directories of
``.tacrec`` text files plus a ``manifest.tsv``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

OBJECT_NAMES = (
    "spiky_rubber_ball",
    "plastic_ball",
    "empty_bottle",
    "metal_pipe",
    "cardboard_box",
    "sponge_box",
    "paint_roller",
    "triangular_prism",
    "icosahedron",
)
N_CLASSES = len(OBJECT_NAMES)
FINGERS = ("thumb", "index", "ring")
CANONICAL_SAMPLES = 63
SENSORS = ("biotac", "wtsft")


@dataclass(frozen=True)
class ObjectClass:
    id: int
    name: str

    @classmethod
    def from_name(cls, name: str) -> "ObjectClass":
        try:
            return cls(OBJECT_NAMES.index(name), name)
        except ValueError:
            raise ValueError(f"unknown object class {name!r}") from None

    @classmethod
    def from_id(cls, i: int) -> "ObjectClass":
        if not 0 <= i < N_CLASSES:
            raise ValueError(f"object id {i} outside 0..{N_CLASSES - 1}")
        return cls(i, OBJECT_NAMES[i])


OBJECT_CLASSES = tuple(ObjectClass(i, n) for i, n in enumerate(OBJECT_NAMES))


@dataclass(frozen=True)
class SensorInfo:
    name: str
    taxel_count: int
    full_scale: float
    rate_hz: float
    raw_samples: int


# rates follow from ~6 s recordings: 63 BioTac samples, ~200 WTS-FT samples
SENSOR_INFO = {
    "biotac": SensorInfo("biotac", 24, 4095.0, 10.5, 63),
    "wtsft": SensorInfo("wtsft", 32, 4095.0, 200 / 6.0, 200),
}


def sensor_info(sensor: str) -> SensorInfo:
    try:
        return SENSOR_INFO[sensor]
    except KeyError:
        raise ValueError(f"unknown sensor {sensor!r}; expected one of {SENSORS}") from None


@dataclass(frozen=True)
class TaxelLayout:
    sensor: str
    taxel_count: int
    grid_rows: int
    grid_cols: int
    taxel_to_cell: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.taxel_to_cell) != self.taxel_count:
            raise ValueError(
                f"{len(self.taxel_to_cell)} cell entries for {self.taxel_count} taxels"
            )
        if len(set(self.taxel_to_cell)) != self.taxel_count:
            raise ValueError("taxel_to_cell must map taxels to distinct cells")
        for r, c in self.taxel_to_cell:
            if not (0 <= r < self.grid_rows and 0 <= c < self.grid_cols):
                raise ValueError(f"cell ({r}, {c}) outside {self.grid_rows}x{self.grid_cols} grid")

    @property
    def rows(self) -> np.ndarray:
        return np.array([r for r, _ in self.taxel_to_cell])

    @property
    def cols(self) -> np.ndarray:
        return np.array([c for _, c in self.taxel_to_cell])


def wts_layout() -> TaxelLayout:
    cells = tuple((i // 4, i % 4) for i in range(32))
    return TaxelLayout("wtsft", 32, 8, 4, cells)


def load_layout(path, sensor: str = "biotac") -> TaxelLayout:
    """Read a taxel map file: ``# grid_rows=R grid_cols=C`` plus ``taxel row col`` rows."""
    rows = cols = None
    cells: dict[int, tuple[int, int]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "grid_rows":
                    rows = int(val)
                elif key == "grid_cols":
                    cols = int(val)
            continue
        if not line or line.startswith("taxel"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'taxel row col'")
        t, r, c = (int(p) for p in parts)
        cells[t] = (r, c)
    if rows is None or cols is None:
        raise ValueError(f"{path}: missing grid_rows/grid_cols header")
    if sorted(cells) != list(range(len(cells))):
        raise ValueError(f"{path}: taxel indices must be 0..{len(cells) - 1}")
    return TaxelLayout(sensor, len(cells), rows, cols, tuple(cells[i] for i in range(len(cells))))


def biotac_layout() -> TaxelLayout:
    ref = resources.files("taxelgrasp") / "data" / "biotac_sp_layout_v1.tsv"
    with resources.as_file(ref) as path:
        return load_layout(path, "biotac")


def layout_for(sensor: str) -> TaxelLayout:
    sensor_info(sensor)
    return biotac_layout() if sensor == "biotac" else wts_layout()


@dataclass
class GraspRecording:
    sensor: str
    object: ObjectClass
    grasp_id: int
    frames: np.ndarray  # (T, 3, taxels)
    rate_hz: float = field(default=0.0)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        info = sensor_info(self.sensor)
        if self.frames.ndim != 3 or self.frames.shape[1] != len(FINGERS):
            raise ValueError(f"frames must be (T, 3, taxels), got {self.frames.shape}")
        if self.frames.shape[2] != info.taxel_count:
            raise ValueError(
                f"{self.sensor} has {info.taxel_count} taxels per finger, frames have {self.frames.shape[2]}"
            )
        if not self.rate_hz:
            self.rate_hz = info.rate_hz

    @property
    def sample_count(self) -> int:
        return self.frames.shape[0]

    @property
    def label(self) -> int:
        return self.object.id

    def __eq__(self, other):
        if not isinstance(other, GraspRecording):
            return NotImplemented
        return (
            self.sensor == other.sensor
            and self.object == other.object
            and self.grasp_id == other.grasp_id
            and self.rate_hz == other.rate_hz
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )


# ---------------------------------------------------------------- grasp gate

def default_threshold(sensor: str) -> float:
    return 0.02 * sensor_info(sensor).full_scale


def gate_window(recording: GraspRecording) -> np.ndarray:
    """Frames recorded within the first second."""
    n = max(1, math.ceil(recording.rate_hz))
    return recording.frames[:n]


def grasp_gate(frames: np.ndarray, threshold: float) -> bool:
    """True iff every frame has thumb pressure and index or ring pressure.

    ``frames`` is (T, 3, taxels) covering the first second of a recording.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ValueError(f"grasp_gate needs a non-empty (T, 3, taxels) window, got {frames.shape}")
    peak = frames.max(axis=2) > threshold  # (T, 3)
    ok = peak[:, 0] & (peak[:, 1] | peak[:, 2])
    return bool(ok.all())


def passes_gate(recording: GraspRecording, threshold: float | None = None) -> bool:
    if threshold is None:
        threshold = default_threshold(recording.sensor)
    return grasp_gate(gate_window(recording), threshold)


# ---------------------------------------------------------------- resampling

def resample_indices(n_in: int, n_out: int = CANONICAL_SAMPLES) -> np.ndarray:
    """Source index round(j * (n_in - 1) / (n_out - 1)), halves rounded up."""
    if n_in < n_out:
        raise ValueError(f"cannot resample {n_in} samples up to {n_out}")
    if n_out == 1:
        return np.zeros(1, dtype=np.int64)
    j = np.arange(n_out, dtype=np.int64)
    den = n_out - 1
    return (2 * j * (n_in - 1) + den) // (2 * den)


def resample_to_canonical(recording: GraspRecording, n_out: int = CANONICAL_SAMPLES) -> GraspRecording:
    idx = resample_indices(recording.sample_count, n_out)
    rate = recording.rate_hz * (n_out - 1) / max(recording.sample_count - 1, 1)
    return GraspRecording(recording.sensor, recording.object, recording.grasp_id, recording.frames[idx], rate)


# ---------------------------------------------------------------- partitioning

@dataclass(frozen=True)
class DatasetSplit:
    train_ids: frozenset[int]
    val_ids: frozenset[int]
    test_ids: frozenset[int] = frozenset()

    def __post_init__(self):
        if (self.train_ids & self.val_ids) or (self.train_ids & self.test_ids) or (self.val_ids & self.test_ids):
            raise ValueError("train/validation/test grasp ids overlap")


def partition_by_grasp(recordings, val_fraction: float, seed: int, test_fraction: float = 0.0) -> DatasetSplit:
    """Stratified split of grasp ids into train/validation (and optional test).

    Each class contributes round(n * val_fraction) validation grasps, chosen
    by a seeded shuffle of its sorted grasp ids.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    if not 0.0 <= test_fraction < 1.0 or val_fraction + test_fraction >= 1.0:
        raise ValueError(f"invalid test_fraction {test_fraction}")
    by_class: dict[int, set[int]] = {}
    for rec in recordings:
        by_class.setdefault(rec.object.id, set()).add(rec.grasp_id)
    if not by_class:
        raise ValueError("cannot partition an empty dataset")
    rng = np.random.default_rng(seed)
    train, val, test = set(), set(), set()
    for cls in sorted(by_class):
        ids = np.array(sorted(by_class[cls]))
        ids = ids[rng.permutation(len(ids))]
        n_val = math.floor(len(ids) * val_fraction + 0.5)
        n_test = math.floor(len(ids) * test_fraction + 0.5)
        val.update(int(i) for i in ids[:n_val])
        test.update(int(i) for i in ids[n_val : n_val + n_test])
        train.update(int(i) for i in ids[n_val + n_test :])
    return DatasetSplit(frozenset(train), frozenset(val), frozenset(test))


# ---------------------------------------------------------------- TACREC files

TACREC_MAGIC = "#TACREC v1"
_HEADER_KEYS = ("sensor", "object", "grasp_id", "taxels_per_finger", "samples", "rate_hz")


class TacrecError(ValueError):
    def __init__(self, lineno: int, msg: str, path=None):
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{lineno}: {msg}")
        self.lineno = lineno


def dumps_recording(rec: GraspRecording) -> str:
    lines = [
        TACREC_MAGIC,
        f"sensor={rec.sensor}",
        f"object={rec.object.name}",
        f"grasp_id={rec.grasp_id}",
        f"taxels_per_finger={rec.frames.shape[2]}",
        f"samples={rec.sample_count}",
        f"rate_hz={rec.rate_hz!r}",
    ]
    for t in range(rec.sample_count):
        for f in range(len(FINGERS)):
            values = " ".join(repr(float(v)) for v in rec.frames[t, f])
            lines.append(f"t={t} f={f} {values}")
    return "\n".join(lines) + "\n"


def loads_recording(text: str, path=None) -> GraspRecording:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TACREC_MAGIC:
        raise TacrecError(1, f"expected {TACREC_MAGIC!r}", path)
    header: dict[str, str] = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("t="):
        line = lines[pos].strip()
        if line:
            key, sep, val = line.partition("=")
            if not sep or key not in _HEADER_KEYS:
                raise TacrecError(pos + 1, f"malformed header line {line!r}", path)
            header[key] = val
        pos += 1
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise TacrecError(pos, f"missing header keys {missing}", path)
    try:
        sensor = header["sensor"]
        sensor_info(sensor)
        obj = ObjectClass.from_name(header["object"])
        grasp_id = int(header["grasp_id"])
        n_tax = int(header["taxels_per_finger"])
        samples = int(header["samples"])
        rate = float(header["rate_hz"])
    except ValueError as exc:
        raise TacrecError(pos, f"bad header: {exc}", path) from None
    if n_tax != sensor_info(sensor).taxel_count:
        raise TacrecError(pos, f"{sensor} has {sensor_info(sensor).taxel_count} taxels, header says {n_tax}", path)
    if samples < 1:
        raise TacrecError(pos, "samples must be positive", path)
    frames = np.empty((samples, len(FINGERS), n_tax))
    expected = [(t, f) for t in range(samples) for f in range(len(FINGERS))]
    body = [(i + 1, ln) for i, ln in enumerate(lines) if i >= pos and ln.strip()]
    if len(body) != len(expected):
        lineno = body[len(expected)][0] if len(body) > len(expected) else len(lines)
        raise TacrecError(lineno, f"expected {len(expected)} data rows, found {len(body)}", path)
    for (lineno, line), (t, f) in zip(body, expected):
        parts = line.split()
        if len(parts) < 2 or parts[0] != f"t={t}" or parts[1] != f"f={f}":
            raise TacrecError(lineno, f"expected row 't={t} f={f} ...'", path)
        if len(parts) - 2 != n_tax:
            raise TacrecError(lineno, f"expected {n_tax} values, found {len(parts) - 2}", path)
        try:
            vals = [float(v) for v in parts[2:]]
        except ValueError:
            raise TacrecError(lineno, "non-numeric value", path) from None
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise TacrecError(lineno, "values must be finite and non-negative", path)
        frames[t, f] = vals
    return GraspRecording(sensor, obj, grasp_id, frames, rate)


def write_recording(rec: GraspRecording, path) -> None:
    Path(path).write_text(dumps_recording(rec))


def read_recording(path) -> GraspRecording:
    return loads_recording(Path(path).read_text(), path)


MANIFEST = "manifest.tsv"
_MANIFEST_COLUMNS = ("filename", "object", "grasp_id", "sensor")


def recording_filename(rec: GraspRecording) -> str:
    return f"{rec.sensor}_{rec.object.name}_{rec.grasp_id:05d}.tacrec"


def write_dataset(recordings, directory) -> Path:
    """Write recordings and a manifest into a new directory."""
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()):
        raise FileExistsError(f"dataset directory {directory} already exists and is not empty")
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in recordings:
        name = recording_filename(rec)
        write_recording(rec, directory / name)
        rows.append((name, rec.object.name, str(rec.grasp_id), rec.sensor))
    with open(directory / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(_MANIFEST_COLUMNS)
        writer.writerows(rows)
    return directory


def load_dataset(directory, sensor: str | None = None) -> list[GraspRecording]:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    out = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != _MANIFEST_COLUMNS:
            raise ValueError(f"{manifest}: expected columns {_MANIFEST_COLUMNS}")
        for row in reader:
            if sensor is not None and row["sensor"] != sensor:
                continue
            rec = read_recording(directory / row["filename"])
            if rec.grasp_id != int(row["grasp_id"]) or rec.object.name != row["object"]:
                raise ValueError(f"{row['filename']}: contents disagree with manifest")
            out.append(rec)
    return out
