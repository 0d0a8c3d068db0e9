import itertools

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment as scipy_lsa

from curvelab.kernels import linear_sum_assignment, stroke_polyline

BACKENDS = [pytest.param(True, id="numba"), pytest.param(False, id="numpy")]


def brute_force_min(cost):
    r, c = cost.shape
    if r <= c:
        return min(cost[np.arange(r), list(p)].sum() for p in itertools.permutations(range(c), r))
    return brute_force_min(cost.T)


@pytest.mark.parametrize("use_numba", BACKENDS)
def test_assignment_matches_permutation_minimum(use_numba):
    rng = np.random.default_rng(0)
    for _ in range(300):
        shape = tuple(rng.integers(1, 7, size=2))
        cost = rng.normal(size=shape) * rng.choice([0.1, 1.0, 100.0])
        rows, cols = linear_sum_assignment(cost, use_numba)
        assert len(rows) == min(shape)
        assert len(set(cols.tolist())) == len(cols) and len(set(rows.tolist())) == len(rows)
        assert abs(cost[rows, cols].sum() - brute_force_min(cost)) <= 1e-9 * max(1.0, np.abs(cost).sum())


@pytest.mark.parametrize("use_numba", BACKENDS)
def test_assignment_agrees_with_scipy_on_larger_instances(use_numba):
    rng = np.random.default_rng(1)
    for _ in range(200):
        n, m = rng.integers(1, 30, size=2)
        cost = rng.uniform(-5, 5, size=(n, m))
        rows, cols = linear_sum_assignment(cost, use_numba)
        sr, sc = scipy_lsa(cost)
        np.testing.assert_array_equal(rows, sr)
        assert cost[rows, cols].sum() == pytest.approx(cost[sr, sc].sum(), abs=1e-9)


def test_backends_identical_including_ties():
    rng = np.random.default_rng(2)
    for _ in range(500):
        cost = rng.integers(0, 3, size=tuple(rng.integers(1, 8, size=2))).astype(float)
        a = linear_sum_assignment(cost, True)
        b = linear_sum_assignment(cost, False)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


def test_all_equal_costs_give_identity():
    rows, cols = linear_sum_assignment(np.zeros((4, 4)))
    assert rows.tolist() == [0, 1, 2, 3] and cols.tolist() == [0, 1, 2, 3]


def test_assignment_input_errors():
    with pytest.raises(ValueError):
        linear_sum_assignment(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        linear_sum_assignment(np.array([[0.0, np.inf], [1.0, 2.0]]))
    rows, cols = linear_sum_assignment(np.zeros((0, 3)))
    assert rows.size == 0 and cols.size == 0


@pytest.mark.parametrize("use_numba", BACKENDS)
def test_stroke_horizontal_segment(use_numba):
    mask = np.zeros((10, 20), np.int32)
    stroke_polyline(mask, np.array([[2.0, 5.0], [15.0, 5.0]]), np.array([True, True]), 3, 2.0, use_numba)
    # pixel centers at rows 4 and 5 (y = 4.5, 5.5) lie 0.5 from the line; rows 3 and 6 lie 1.5 away
    assert set(np.nonzero(mask.any(1))[0].tolist()) == {4, 5}
    assert set(np.unique(mask).tolist()) == {0, 3}
    cols = np.nonzero(mask[4])[0]
    assert cols.min() == 1 and cols.max() == 15


@pytest.mark.parametrize("use_numba", BACKENDS)
def test_stroke_skips_invalid_vertices(use_numba):
    mask = np.zeros((10, 20), np.int32)
    stroke_polyline(mask, np.array([[2.0, 5.0], [15.0, 5.0]]), np.array([True, False]), 1, 2.0, use_numba)
    assert not mask.any()
    with pytest.raises(ValueError):
        stroke_polyline(mask, np.zeros((2, 2)), np.ones(2, bool), 1, 0.5, use_numba)


def test_stroke_backends_identical():
    rng = np.random.default_rng(3)
    for _ in range(200):
        uv = rng.uniform(-10, 60, size=(int(rng.integers(2, 12)), 2))
        ok = rng.random(len(uv)) < 0.8
        width = rng.uniform(1, 5)
        a = stroke_polyline(np.zeros((40, 50), np.int32), uv, ok, 2, width, True)
        b = stroke_polyline(np.zeros((40, 50), np.int32), uv, ok, 2, width, False)
        np.testing.assert_array_equal(a, b)


def test_stroke_matches_distance_oracle():
    rng = np.random.default_rng(4)
    for _ in range(30):
        p0, p1 = rng.uniform(0, 30, size=(2, 2))
        half = rng.uniform(0.5, 3)
        mask = stroke_polyline(np.zeros((30, 30), np.int32), np.stack([p0, p1]), np.ones(2, bool), 1, 2 * half)
        r, c = np.mgrid[0:30, 0:30] + 0.5
        pts = np.stack([c, r], -1)
        d = p1 - p0
        t = np.clip(((pts - p0) @ d) / (d @ d), 0, 1)
        dist = np.linalg.norm(pts - (p0 + t[..., None] * d), axis=-1)
        np.testing.assert_array_equal(mask > 0, dist <= half)


def test_env_flag_selects_numpy_path():
    import os
    import subprocess
    import sys
    code = "from curvelab import _accel; print(_accel.USE_NUMBA)"
    env = {**os.environ, "CURVELAB_DISABLE_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
    env["CURVELAB_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "True"
