from dataclasses import replace

import numpy as np
import pytest

from taxelgrasp import dataset as D
from taxelgrasp import synthgrasp as S


@pytest.fixture(scope="module")
def profiles():
    return S.load_profiles()


def _quiet(profile):
    return replace(profile, noise_sigma=0.0, pose_jitter=(0.0, 0.0), amp_jitter=0.0, transition_jitter=0.0)


def test_profiles_cover_all_classes(profiles):
    assert set(profiles) == set(D.OBJECT_NAMES)


def test_cylinders_share_footprint_and_differ_in_stiffness(profiles):
    cyl = [profiles[n] for n in ("empty_bottle", "metal_pipe", "paint_roller")]
    assert len({(p.footprint, p.size) for p in cyl}) == 1
    assert len({p.stiffness for p in cyl}) == 3


def test_facetshift_reserved_for_faceted_objects(profiles):
    with pytest.raises(ValueError, match="facet"):
        replace(profiles["plastic_ball"], dynamics="facetshift", alt_footprint="disk", alt_size=0.5)
    assert {n for n, p in profiles.items() if p.dynamics == "facetshift"} == set(S.FACET_SHIFT_CLASSES)


@pytest.mark.parametrize("sensor, t", [("biotac", 63), ("wtsft", 200)])
def test_sample_counts(profiles, sensor, t):
    rec = S.generate(profiles["plastic_ball"], 0, 0, sensor)
    assert rec.frames.shape == (t, 3, D.sensor_info(sensor).taxel_count)
    assert (rec.frames >= 0).all()


def test_noise_free_static_ignores_seed(profiles):
    p = _quiet(profiles["metal_pipe"])
    a = S.generate(p, 3, seed=0, sensor="wtsft")
    b = S.generate(p, 3, seed=99, sensor="wtsft")
    assert np.array_equal(a.frames, b.frames)


def test_linear_ramp_for_unit_stiffness(profiles):
    p = replace(_quiet(profiles["plastic_ball"]), stiffness=1.0)
    rec = S.generate(p, 0, 0, "biotac")
    series = rec.frames[:, 0, :]
    active = series[-1] > 0
    steps = np.diff(series[:, active], axis=0)
    assert (steps >= 0).all()
    assert np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("name", S.FACET_SHIFT_CLASSES)
def test_facet_shift_spikes_frame_difference(profiles, name):
    p = _quiet(profiles[name])
    rec = S.generate(p, 0, 0, "wtsft")
    l1 = np.abs(np.diff(rec.frames, axis=0)).sum(axis=(1, 2))
    t0 = int(round(p.transition * (rec.sample_count - 1)))
    assert int(np.argmax(l1)) + 1 == t0
    assert l1[t0 - 1] > 10 * np.median(l1)


def test_jitter_varies_between_grasps(profiles):
    p = profiles["spiky_rubber_ball"]
    a = S.generate(p, 0, 0, "wtsft")
    b = S.generate(p, 1, 0, "wtsft")
    assert not np.array_equal(a.frames, b.frames)


@pytest.mark.parametrize("sensor", D.SENSORS)
def test_every_recording_passes_gate(sensor):
    recs = S.generate_recordings(40, sensor, 0)
    assert len(recs) == 360
    assert len({r.grasp_id for r in recs}) == 360
    assert all(D.passes_gate(r) for r in recs)


def test_gate_margin_check_rejects_weak_profiles(profiles):
    weak = replace(profiles["plastic_ball"], peak=0.01)
    with pytest.raises(ValueError, match="grasp gate"):
        S.generate(weak, 0, 0, "biotac")


def test_one_per_class(tmp_path):
    S.generate_dataset(1, "biotac", 0, tmp_path / "ds")
    files = sorted(p.name for p in (tmp_path / "ds").glob("*.tacrec"))
    assert len(files) == 9
    assert sorted(r.object.name for r in D.load_dataset(tmp_path / "ds")) == sorted(D.OBJECT_NAMES)


def test_same_seed_byte_identical(tmp_path):
    S.generate_dataset(2, "wtsft", 5, tmp_path / "a")
    S.generate_dataset(2, "wtsft", 5, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)


def test_directory_collision(tmp_path):
    S.generate_dataset(1, "wtsft", 0, tmp_path / "a")
    with pytest.raises(FileExistsError):
        S.generate_dataset(1, "wtsft", 0, tmp_path / "a")


@pytest.mark.parametrize("sensor", D.SENSORS)
def test_nearest_centroid_baseline_above_60_percent(sensor):
    recs = [D.resample_to_canonical(r) for r in S.generate_recordings(40, sensor, 0)]
    split = D.partition_by_grasp(recs, 0.2, 0)
    train = [r for r in recs if r.grasp_id in split.train_ids]
    val = [r for r in recs if r.grasp_id in split.val_ids]
    assert S.nearest_centroid_accuracy(train, val) > 0.6


def test_profile_parser_errors():
    with pytest.raises(ValueError, match="key=value"):
        S.parse_profiles("class=plastic_ball\nfootprint disk\n")
    with pytest.raises(ValueError, match="unknown key"):
        S.parse_profiles("class=plastic_ball\nfootprint=disk\nsize=0.3\ncolour=red\n")
    with pytest.raises(ValueError, match="footprint"):
        S.parse_profiles("class=plastic_ball\nfootprint=blob\nsize=0.3\n")
