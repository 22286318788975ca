"""Normalisation, taxel-to-grid mapping and model-ready sample assembly."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import FINGERS, GraspRecording, TaxelLayout

NORM_MODES = ("scaled", "standardized")
NORM_SCOPES = ("global", "per_taxel")

CHANNELS_AS_TIME_2D = "channels2d"
VOLUME_3D = "volume3d"
SEQUENCE_OF_VECTORS = "sequence"
SAMPLE_LAYOUTS = (CHANNELS_AS_TIME_2D, VOLUME_3D, SEQUENCE_OF_VECTORS)


@dataclass(frozen=True)
class Normalizer:
    """Frozen statistics fitted on training recordings.

    ``scale`` and ``offset`` are scalars (global scope) or (3, taxels) arrays
    (per-taxel scope); applying the normaliser computes (v - offset) / scale.
    """

    mode: str
    scope: str
    offset: np.ndarray
    scale: np.ndarray

    @property
    def max(self) -> np.ndarray:
        return self.scale

    @property
    def mean(self) -> np.ndarray:
        return self.offset

    @property
    def std(self) -> np.ndarray:
        return self.scale


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def fit_normalizer(recordings, mode: str = "scaled", scope: str = "global") -> Normalizer:
    if mode not in NORM_MODES:
        raise ValueError(f"unknown normalisation mode {mode!r}")
    if scope not in NORM_SCOPES:
        raise ValueError(f"unknown normalisation scope {scope!r}")
    recordings = list(recordings)
    if not recordings:
        raise ValueError("cannot fit a normaliser on an empty training set")
    stacked = np.concatenate([r.frames for r in recordings], axis=0)  # (sum T, 3, taxels)
    axis = None if scope == "global" else 0
    if mode == "scaled":
        peak = np.asarray(stacked.max(axis=axis), dtype=np.float64)
        if np.any(peak <= 0):
            warnings.warn("training data has no positive values; scaling by 1", RuntimeWarning, stacklevel=2)
            peak = np.where(peak > 0, peak, 1.0)
        return Normalizer(mode, scope, _frozen(np.zeros_like(peak)), _frozen(peak))
    mean = np.asarray(stacked.mean(axis=axis), dtype=np.float64)
    std = np.asarray(stacked.std(axis=axis), dtype=np.float64)
    std = np.where(std > 0, std, 1.0)
    return Normalizer(mode, scope, _frozen(mean), _frozen(std))


def apply_normalizer(recording: GraspRecording, norm: Normalizer) -> GraspRecording:
    frames = (recording.frames - norm.offset) / norm.scale
    return GraspRecording(recording.sensor, recording.object, recording.grasp_id, frames, recording.rate_hz)


def map_to_grid(frame, layout: TaxelLayout) -> np.ndarray:
    """Place taxel values on the sensor grid; cells without a taxel stay 0.

    Accepts one taxel vector or any stack of them (trailing axis = taxels).
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] != layout.taxel_count:
        raise ValueError(f"frame has {frame.shape[-1]} taxels, layout expects {layout.taxel_count}")
    grid = np.zeros(frame.shape[:-1] + (layout.grid_rows, layout.grid_cols))
    grid[..., layout.rows, layout.cols] = frame
    return grid


def blur_grid(matrix, kernel_size: int = 3) -> np.ndarray:
    """Normalised box blur with zero-padded borders, same output extents."""
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd and >= 3, got {kernel_size}")
    m = np.asarray(matrix, dtype=np.float64)
    r = kernel_size // 2
    rows, cols = m.shape[-2:]
    padded = np.pad(m, [(0, 0)] * (m.ndim - 2) + [(r, r), (r, r)])
    out = np.zeros_like(m)
    for di in range(kernel_size):
        for dj in range(kernel_size):
            out += padded[..., di : di + rows, dj : dj + cols]
    return out / (kernel_size * kernel_size)


def concat_fingers(matrices) -> np.ndarray:
    """Stack thumb, index and ring grids vertically (thumb on top)."""
    matrices = [np.asarray(m, dtype=np.float64) for m in matrices]
    if len(matrices) != len(FINGERS):
        raise ValueError(f"expected {len(FINGERS)} finger matrices, got {len(matrices)}")
    shapes = {m.shape for m in matrices}
    if len(shapes) != 1:
        raise ValueError(f"finger matrices differ in shape: {sorted(shapes)}")
    return np.concatenate(matrices, axis=-2)


def tactile_images(frames: np.ndarray, layout: TaxelLayout, filtered: bool = False, blur_size: int = 3) -> np.ndarray:
    """(T, 3, taxels) -> (T, 3 * grid_rows, grid_cols)."""
    grids = map_to_grid(frames, layout)  # (T, 3, R, C)
    if filtered:
        grids = blur_grid(grids, blur_size)
    return concat_fingers([grids[:, i] for i in range(len(FINGERS))])


def assemble_frames(
    frames: np.ndarray,
    layout: str,
    taxel_layout: TaxelLayout,
    filtered: bool = False,
) -> np.ndarray:
    if layout == SEQUENCE_OF_VECTORS:
        return frames.reshape(frames.shape[0], -1).copy()
    images = tactile_images(frames, taxel_layout, filtered)
    if layout == CHANNELS_AS_TIME_2D:
        return images
    if layout == VOLUME_3D:
        return images[None]
    raise ValueError(f"unknown sample layout {layout!r}")


def assemble(
    recording: GraspRecording,
    layout: str,
    taxel_layout: TaxelLayout,
    normalizer: Normalizer | None = None,
    filtered: bool = False,
) -> tuple[np.ndarray, int]:
    """Normalise (if given) and reshape one recording for a model.

    channels2d -> (T, 3R, C); volume3d -> (1, T, 3R, C);
    sequence -> (T, 3 * taxels).
    """
    if normalizer is not None:
        recording = apply_normalizer(recording, normalizer)
    return assemble_frames(recording.frames, layout, taxel_layout, filtered), recording.label
