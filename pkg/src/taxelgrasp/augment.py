"""Interleaved time-series splitting and spatial shift augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import DatasetSplit
from .preprocess import SEQUENCE_OF_VECTORS

EVALUATED_SPLIT_RATIOS = (1, 3, 5, 7)


class LeakageError(RuntimeError):
    """A grasp contributes samples to more than one partition."""


def split_length(n: int, k: int) -> int:
    return math.ceil(n / k)


def split_series_raw(series, k: int) -> list[np.ndarray]:
    """Series i holds samples i, i+k, i+2k, ... of the input (no padding)."""
    series = np.asarray(series)
    n = series.shape[0]
    if k < 1:
        raise ValueError(f"split ratio must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"split ratio {k} exceeds series length {n}")
    return [series[i::k] for i in range(k)]


def split_series(series, k: int) -> list[np.ndarray]:
    """Split a series into k interleaved series of length ceil(N / k).

    Shorter outputs are padded by repeating their own last sample.
    """
    parts = split_series_raw(series, k)
    length = split_length(np.asarray(series).shape[0], k)
    out = []
    for p in parts:
        if p.shape[0] < length:
            pad = np.repeat(p[-1:], length - p.shape[0], axis=0)
            p = np.concatenate([p, pad], axis=0)
        out.append(p.copy())
    return out


def interleave(parts) -> np.ndarray:
    """Inverse of :func:`split_series_raw`."""
    parts = [np.asarray(p) for p in parts]
    k = len(parts)
    n = sum(p.shape[0] for p in parts)
    out = np.empty((n,) + parts[0].shape[1:], dtype=parts[0].dtype)
    for i, p in enumerate(parts):
        out[i::k] = p
    return out


@dataclass(frozen=True)
class ShiftSpec:
    max_horizontal: int = 1
    max_vertical: int = 2

    def draw(self, rng: np.random.Generator) -> tuple[int, int]:
        dh = int(rng.integers(-self.max_horizontal, self.max_horizontal + 1))
        dv = int(rng.integers(-self.max_vertical, self.max_vertical + 1))
        return dh, dv


def _shift_axis(a: np.ndarray, d: int, axis: int) -> np.ndarray:
    if d == 0:
        return a
    out = np.zeros_like(a)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if abs(d) < n:
        if d > 0:
            src[axis], dst[axis] = slice(0, n - d), slice(d, n)
        else:
            src[axis], dst[axis] = slice(-d, n), slice(0, n + d)
        out[tuple(dst)] = a[tuple(src)]
    return out


def shift_sample(sample, dh: int, dv: int, layout: str, block_rows: int | None = None) -> np.ndarray:
    """Translate the tactile image of every time step by (dv rows, dh columns).

    Positive ``dh`` moves content right, positive ``dv`` moves it down.
    Vacated cells are zero; content pushed past the edge is dropped. With
    ``block_rows`` the image is treated as stacked finger grids of that
    height, each shifted inside its own block.
    """
    if layout == SEQUENCE_OF_VECTORS:
        raise ValueError("shift augmentation needs spatial axes; sequence layout has none")
    if abs(dh) > 1 or abs(dv) > 2:
        raise ValueError(f"shift ({dh}, {dv}) exceeds the +-1 horizontal / +-2 vertical range")
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError(f"sample of shape {x.shape} has no spatial axes")
    if block_rows:
        h = x.shape[-2]
        if h % block_rows:
            raise ValueError(f"image height {h} is not a multiple of block height {block_rows}")
        blocks = x.reshape(x.shape[:-2] + (h // block_rows, block_rows, x.shape[-1]))
        shifted = _shift_axis(_shift_axis(blocks, dv, -2), dh, -1)
        return shifted.reshape(x.shape)
    return _shift_axis(_shift_axis(x, dv, -2), dh, -1)


@dataclass
class SampleSet:
    """Model-ready samples plus the grasp each one came from."""

    x: np.ndarray
    y: np.ndarray
    grasp_ids: np.ndarray
    shift: ShiftSpec | None = None
    layout: str = ""
    block_rows: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(self.x[idx], self.y[idx], self.grasp_ids[idx], self.shift, self.layout, self.block_rows, dict(self.meta))

    def augmented(self, idx, rng: np.random.Generator) -> np.ndarray:
        """Batch ``x[idx]`` with a fresh random shift per sample when enabled."""
        batch = self.x[idx]
        if self.shift is None:
            return batch
        out = np.empty_like(batch)
        for j in range(len(batch)):
            dh, dv = self.shift.draw(rng)
            out[j] = shift_sample(batch[j], dh, dv, self.layout, self.block_rows)
        return out


def check_disjoint(*partitions) -> None:
    seen: dict[int, int] = {}
    for p, ids in enumerate(partitions):
        for g in set(int(i) for i in np.asarray(list(ids)).ravel()):
            if g in seen and seen[g] != p:
                raise LeakageError(f"grasp {g} appears in partitions {seen[g]} and {p}")
            seen[g] = p


def _expand(recordings, k, transform):
    xs, ys, gs = [], [], []
    for rec in recordings:
        for part in split_series(rec.frames, k):
            xs.append(transform(part) if transform else part)
            ys.append(rec.label)
            gs.append(rec.grasp_id)
    if not xs:
        raise ValueError("partition is empty")
    return np.stack(xs), np.array(ys, dtype=np.int64), np.array(gs, dtype=np.int64)


def augment_partition(
    recordings,
    split: DatasetSplit,
    k: int,
    shift: bool = False,
    transform=None,
    layout: str = "",
    block_rows: int | None = None,
    shift_spec: ShiftSpec = ShiftSpec(),
) -> tuple[SampleSet, SampleSet]:
    """Split every recording into k series after the grasp-level partition.

    Both partitions are split; shift augmentation (applied per batch during
    training) is enabled on the training set only. ``transform`` maps a
    (T', 3, taxels) frame block to the model layout.
    """
    overlap = set(split.train_ids) & set(split.val_ids)
    if overlap:
        raise LeakageError(f"grasp ids {sorted(overlap)[:5]} are in both train and validation")
    if shift and layout == SEQUENCE_OF_VECTORS:
        raise ValueError("shift augmentation needs spatial axes; sequence layout has none")
    recordings = list(recordings)
    train_recs = [r for r in recordings if r.grasp_id in split.train_ids]
    val_recs = [r for r in recordings if r.grasp_id in split.val_ids]
    tx, ty, tg = _expand(train_recs, k, transform)
    vx, vy, vg = _expand(val_recs, k, transform)
    check_disjoint(tg, vg)
    train = SampleSet(tx, ty, tg, shift_spec if shift else None, layout, block_rows)
    val = SampleSet(vx, vy, vg, None, layout, block_rows)
    return train, val


def split_then_partition(recordings, k: int, val_fraction: float, seed: int, transform=None) -> tuple[SampleSet, SampleSet]:
    """The leaky ordering: split every grasp first, then shuffle series into partitions.

    Exists to demonstrate that the leakage guard catches it.
    """
    x, y, g = _expand(list(recordings), k, transform)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_val = int(round(len(y) * val_fraction))
    vi, ti = order[:n_val], order[n_val:]
    return SampleSet(x[ti], y[ti], g[ti]), SampleSet(x[vi], y[vi], g[vi])
