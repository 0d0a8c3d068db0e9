import json

import numpy as np
import pytest

from curvelab.geometry import CameraModel, CurveParams, Range3D, project_points, sample_curve
from curvelab.scenegen import (BLOB_NAME, INDEX_NAME, SceneFormatError, SceneSpec, generate_scene,
                               generate_scenes, rasterize, read_scenes, write_scenes)


def scenes_equal(a, b):
    assert a.scenario == b.scenario
    np.testing.assert_array_equal(a.ys, b.ys)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.seg_mask, b.seg_mask)
    assert a.camera.to_dict() == b.camera.to_dict()
    assert len(a.lanes) == len(b.lanes)
    for la, lb in zip(a.lanes, b.lanes):
        assert la.curve.to_dict() == lb.curve.to_dict()
        np.testing.assert_array_equal(la.anchors.points, lb.anchors.points)
        np.testing.assert_array_equal(la.anchors.in_extent, lb.anchors.in_extent)
        np.testing.assert_array_equal(la.visibility, lb.visibility)


def test_generate_is_deterministic():
    spec = SceneSpec(seed=7)
    a, b = generate_scene(spec, 3), generate_scene(spec, 3)
    scenes_equal(a, b)
    assert a.image.tobytes() == b.image.tobytes()
    c = generate_scene(spec, 4)
    assert not np.array_equal(a.image, c.image)


def test_index_does_not_depend_on_earlier_scenes():
    spec = SceneSpec(seed=1)
    scenes_equal(generate_scenes(spec, 5)[4], generate_scene(spec, 4))


def test_degenerate_spec_single_straight_lane():
    spec = SceneSpec(lane_count=(1, 1), offset_jitter=0.0, lateral_shift=0.0, heading=(0, 0), curvature=(0, 0),
                     cubic=(0, 0), slope=(0, 0), vertical_curvature=(0, 0))
    s = generate_scene(spec, 0)
    assert len(s.lanes) == 1
    np.testing.assert_array_equal(s.lanes[0].curve.a, 0.0)
    np.testing.assert_array_equal(s.lanes[0].curve.b, 0.0)
    assert s.seg_mask.any()


def test_four_lane_label_set():
    s = generate_scene(SceneSpec(lane_count=(4, 4)), 0)
    assert len(s.lanes) == 4
    assert set(np.unique(s.seg_mask).tolist()) <= {0, 1, 2, 3, 4}


def test_scene_invariants_over_many_scenes():
    spec = SceneSpec()
    for s in generate_scenes(spec, 20):
        assert s.image.shape == (128, 160, 3) and s.seg_mask.shape == (128, 160)
        assert s.image.dtype == np.float32 and 0.0 <= s.image.min() and s.image.max() <= 1.0
        assert 2 <= len(s.lanes) <= 4
        assert any(np.all(l.visibility[l.anchors.in_extent]) for l in s.lanes)
        for lane in s.lanes:
            lane.curve.validate(Range3D(), order=3)
            # visibility is the projection validity flag
            _, ok = project_points(lane.anchors, s.camera)
            np.testing.assert_array_equal(lane.visibility, ok)
            # re-sampling the curve reproduces the stored anchors exactly
            again = sample_curve(lane.curve, s.ys)
            np.testing.assert_array_equal(again.points, lane.anchors.points)
            np.testing.assert_array_equal(again.in_extent, lane.anchors.in_extent)


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(lane_count=(0, 2))
    with pytest.raises(ValueError):
        SceneSpec(curvature=(1.0, -1.0))
    with pytest.raises(ValueError):
        SceneSpec(stroke_width=0.5)


def test_impossible_spec_fails():
    # every lane far to the side of a narrow camera
    spec = SceneSpec(lane_count=(1, 1), lateral_shift=0.0, offset_jitter=0.0, lane_spacing=3.6, focal=100.0)
    spec = SceneSpec(**{**spec.__dict__, "image_size": (4, 4), "y_start": (3.0, 3.0), "y_end": (100.0, 100.0)})
    with pytest.raises(ValueError, match="no lane fully visible"):
        generate_scene(spec, 0)


def _mask_agreement(scene, radius):
    hits = total = 0
    for k, lane in enumerate(scene.lanes):
        pts = sample_curve(lane.curve, np.linspace(lane.curve.y_start, lane.curve.y_end, 100)).points
        uv, ok = project_points(pts, scene.camera)
        for u, v in uv[ok]:
            total += 1
            r0, r1 = int(max(v - radius, 0)), int(min(v + radius, scene.seg_mask.shape[0] - 1))
            c0, c1 = int(max(u - radius, 0)), int(min(u + radius, scene.seg_mask.shape[1] - 1))
            hits += bool(np.any(scene.seg_mask[r0:r1 + 1, c0:c1 + 1] == k + 1))
    return hits, total


def test_mask_curve_agreement_at_least_95_percent():
    spec = SceneSpec()
    hits = total = 0
    for s in generate_scenes(spec, 20):
        h, t = _mask_agreement(s, spec.stroke_width)
        hits, total = hits + h, total + t
    assert total > 1000
    assert hits / total >= 0.95


def test_rasterize_no_lanes():
    cam = CameraModel.from_height_pitch(1.5, 0.04, 100, (64, 80))
    image, mask = rasterize([], cam, (64, 80))
    assert not mask.any()
    assert image.shape == (64, 80, 3)


def test_rasterize_centered_lane_near_center_column():
    cam = CameraModel.from_height_pitch(1.5, 0.04, 100, (64, 80))
    lane = CurveParams(1.0, 5.0, 100.0, np.zeros(4), np.zeros(4))
    _, mask = rasterize([lane], cam, (64, 80), stroke_width=2.0)
    # the straight line x = 0 on the road projects onto the principal column u = 40
    uv, ok = project_points(sample_curve(lane).points, cam)
    np.testing.assert_allclose(uv[ok, 0], 40.0, atol=1e-9)
    cols = np.nonzero(mask)[1]
    assert cols.size > 0 and np.all(np.abs(cols + 0.5 - 40.0) <= 1.0)
    rows = np.unique(np.nonzero(mask)[0])
    assert rows.min() <= uv[ok, 1].min() + 1 and rows.max() >= uv[ok, 1].max() - 1


def test_rasterize_two_lanes_disjoint_labels():
    cam = CameraModel.from_height_pitch(1.5, 0.04, 100, (64, 80))
    lanes = [CurveParams(1.0, 5.0, 60.0, [x, 0, 0, 0], np.zeros(4)) for x in (-2.0, 2.0)]
    _, mask = rasterize(lanes, cam, (64, 80), stroke_width=1.0)
    left, right = np.nonzero(mask == 1)[1], np.nonzero(mask == 2)[1]
    assert left.size and right.size
    assert left.max() < 40 <= right.min()
    with pytest.raises(ValueError):
        rasterize(lanes, cam, (64, 80), stroke_width=0.5)


def test_write_read_round_trip(tmp_path):
    scenes = generate_scenes(SceneSpec(seed=5), 10)
    write_scenes(scenes, tmp_path / "set")
    back = read_scenes(tmp_path / "set")
    assert len(back) == 10
    for a, b in zip(scenes, back):
        scenes_equal(a, b)


def test_empty_scene_list(tmp_path):
    write_scenes([], tmp_path / "empty")
    assert (tmp_path / "empty" / INDEX_NAME).is_file()
    assert read_scenes(tmp_path / "empty") == []


def test_bad_magic_and_version(tmp_path):
    write_scenes(generate_scenes(SceneSpec(), 2), tmp_path / "s")
    index = tmp_path / "s" / INDEX_NAME
    lines = index.read_text().splitlines()
    header = json.loads(lines[0])
    index.write_text("\n".join([json.dumps({**header, "magic": "other"})] + lines[1:]) + "\n")
    with pytest.raises(SceneFormatError):
        read_scenes(tmp_path / "s")
    index.write_text("\n".join([json.dumps({**header, "version": 99})] + lines[1:]) + "\n")
    with pytest.raises(SceneFormatError):
        read_scenes(tmp_path / "s")


def test_truncated_files(tmp_path):
    write_scenes(generate_scenes(SceneSpec(), 2), tmp_path / "s")
    blob = tmp_path / "s" / BLOB_NAME
    data = blob.read_bytes()
    blob.write_bytes(data[:len(data) // 2])
    with pytest.raises(SceneFormatError):
        read_scenes(tmp_path / "s")
    blob.write_bytes(data)
    index = tmp_path / "s" / INDEX_NAME
    index.write_text("\n".join(index.read_text().splitlines()[:2]) + "\n")
    with pytest.raises(SceneFormatError):
        read_scenes(tmp_path / "s")
    with pytest.raises((SceneFormatError, FileNotFoundError)):
        read_scenes(tmp_path / "missing")
