"""Procedural 3D road scenes and their on-disk format."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import (DEFAULT_ORDER, FIXED_Y_POSITIONS, AnchorPointSet, CameraModel, CurveParams,
                       Range3D, project_points, sample_curve)
from .kernels import stroke_polyline

FORMAT_MAGIC = "curvelab-scenes"
FORMAT_VERSION = 1
INDEX_NAME = "scenes.jsonl"
BLOB_NAME = "scenes.bin"
_DENSE_SAMPLES = 300
_MAX_DRAWS = 32


class SceneFormatError(ValueError):
    pass


@dataclass
class SceneSpec:
    lane_count: tuple[int, int] = (2, 4)
    lane_spacing: float = 3.6
    offset_jitter: float = 0.25
    lateral_shift: float = 1.0
    heading: tuple[float, float] = (-0.03, 0.03)
    curvature: tuple[float, float] = (-4e-4, 4e-4)
    cubic: tuple[float, float] = (-1.5e-6, 1.5e-6)
    slope: tuple[float, float] = (-0.01, 0.01)
    vertical_curvature: tuple[float, float] = (-5e-5, 5e-5)
    y_start: tuple[float, float] = (3.0, 8.0)
    y_end: tuple[float, float] = (70.0, 103.0)
    camera_height: tuple[float, float] = (1.4, 1.7)
    camera_pitch: tuple[float, float] = (0.02, 0.06)
    focal: float = 100.0
    image_size: tuple[int, int] = (128, 160)
    stroke_width: float = 2.0
    blur_sigma: float = 0.8
    noise: float = 0.03
    order: int = DEFAULT_ORDER
    seed: int = 0

    def __post_init__(self):
        for name in ("lane_count", "heading", "curvature", "cubic", "slope", "vertical_curvature",
                     "y_start", "y_end", "camera_height", "camera_pitch", "image_size"):
            val = tuple(getattr(self, name))
            if len(val) != 2 or val[0] > val[1]:
                raise ValueError(f"SceneSpec.{name} must be an ordered (lo, hi) pair, got {val}")
            object.__setattr__(self, name, val)
        if self.lane_count[0] < 1:
            raise ValueError("lane count must be >= 1")
        if self.stroke_width < 1:
            raise ValueError("stroke width must be >= 1")
        if self.y_start[1] >= self.y_end[0]:
            raise ValueError("y_start range must lie below y_end range")


@dataclass
class GTLane:
    curve: CurveParams
    anchors: AnchorPointSet
    visibility: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        """Points that count for losses and metrics: visible and inside the lane's extent."""
        return self.visibility & self.anchors.in_extent


@dataclass
class Scene:
    lanes: list[GTLane]
    camera: CameraModel
    image: np.ndarray
    seg_mask: np.ndarray
    scenario: str = "synthetic"
    ys: np.ndarray = field(default_factory=lambda: np.array(FIXED_Y_POSITIONS))


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(index) & (2**64 - 1)]))


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def rasterize(lanes: list[CurveParams], cam: CameraModel, image_size: tuple[int, int],
              stroke_width: float = 2.0, rng: np.random.Generator | None = None,
              blur_sigma: float = 0.8, noise: float = 0.03) -> tuple[np.ndarray, np.ndarray]:
    """Stroke projected lanes into an instance mask (label k+1 for lane k) and render an image."""
    if stroke_width < 1:
        raise ValueError(f"stroke width must be >= 1, got {stroke_width}")
    h, w = image_size
    mask = np.zeros((h, w), dtype=np.int32)
    for k, lane in enumerate(lanes):
        ys = np.geomspace(lane.y_start, lane.y_end, _DENSE_SAMPLES)
        pts = sample_curve(lane, ys).points
        cam_depth = (pts @ cam.rotation.T + cam.translation)[:, 2]
        uv, _ = project_points(pts, cam)
        stroke_polyline(mask, uv, cam_depth > 1e-6, k + 1, stroke_width)
    paint = gaussian_filter((mask > 0).astype(np.float64), blur_sigma) if blur_sigma > 0 else (mask > 0) * 1.0
    rows = np.linspace(0.0, 1.0, h)[:, None]
    base = np.stack([0.25 + 0.1 * rows, 0.25 + 0.1 * rows, 0.3 + 0.05 * rows], axis=-1) * np.ones((h, w, 1))
    image = base + 0.7 * paint[..., None]
    if rng is not None and noise > 0:
        image = image + rng.normal(0.0, noise, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask


def generate_scene(spec: SceneSpec, index: int, ys=FIXED_Y_POSITIONS,
                   rng3d: Range3D = Range3D()) -> Scene:
    rng = _rng(spec.seed, index)
    ys = np.asarray(ys, dtype=np.float64)
    for _ in range(_MAX_DRAWS):
        n_lanes = int(rng.integers(spec.lane_count[0], spec.lane_count[1] + 1))
        cam = CameraModel.from_height_pitch(_uniform(rng, spec.camera_height), _uniform(rng, spec.camera_pitch),
                                            spec.focal, spec.image_size)
        road_a = np.zeros(spec.order + 1)
        road_b = np.zeros(spec.order + 1)
        shapes = [spec.heading, spec.curvature, spec.cubic]
        for r in range(1, spec.order + 1):
            road_a[r] = _uniform(rng, shapes[r - 1]) if r <= 3 else 0.0
        if spec.order >= 1:
            road_b[1] = _uniform(rng, spec.slope)
        if spec.order >= 2:
            road_b[2] = _uniform(rng, spec.vertical_curvature)
        shift = _uniform(rng, (-spec.lateral_shift, spec.lateral_shift))
        curves = []
        for k in range(n_lanes):
            a = road_a.copy()
            a[0] = (k - (n_lanes - 1) / 2.0) * spec.lane_spacing + shift \
                + _uniform(rng, (-spec.offset_jitter, spec.offset_jitter))
            y0 = _uniform(rng, spec.y_start)
            y1 = _uniform(rng, spec.y_end)
            curves.append(CurveParams(1.0, y0, min(y1, rng3d.y_max), a, road_b.copy()))
        lanes = []
        for c in curves:
            anchors = sample_curve(c, ys, order=spec.order)
            _, vis = project_points(anchors, cam)
            lanes.append(GTLane(c, anchors, vis))
        if any(np.all(l.visibility[l.anchors.in_extent]) for l in lanes):
            break
    else:
        raise ValueError(f"scene {index}: no lane fully visible after {_MAX_DRAWS} draws; check SceneSpec ranges")
    image, mask = rasterize(curves, cam, spec.image_size, spec.stroke_width, rng, spec.blur_sigma, spec.noise)
    return Scene(lanes, cam, image, mask, "synthetic", ys)


def generate_scenes(spec: SceneSpec, count: int, start: int = 0) -> list[Scene]:
    return [generate_scene(spec, i) for i in range(start, start + count)]


# ---------------------------------------------------------------------------
# persistence

def _scene_record(scene: Scene, offset: int) -> tuple[dict, list[np.ndarray]]:
    blobs = [np.ascontiguousarray(scene.image, dtype="<f4"), np.ascontiguousarray(scene.seg_mask, dtype="<f4")]
    rec = {
        "version": FORMAT_VERSION,
        "scenario": scene.scenario,
        "ys": scene.ys.tolist(),
        "camera": scene.camera.to_dict(),
        "lanes": [{"curve": l.curve.to_dict(), "anchors": l.anchors.points.tolist(),
                   "in_extent": l.anchors.in_extent.tolist(), "visibility": l.visibility.tolist()}
                  for l in scene.lanes],
    }
    for key, arr in zip(("image", "seg_mask"), blobs):
        rec[key] = {"offset": offset, "shape": list(arr.shape)}
        offset += arr.nbytes
    return rec, blobs


def write_scenes(scenes: list[Scene], path) -> Path:
    """Write ``scenes.jsonl`` + ``scenes.bin`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    records, offset = [], 0
    with open(path / BLOB_NAME, "wb") as fb:
        for scene in scenes:
            rec, blobs = _scene_record(scene, offset)
            for arr in blobs:
                fb.write(arr.tobytes(order="C"))
                offset += arr.nbytes
            records.append(rec)
    header = {"magic": FORMAT_MAGIC, "version": FORMAT_VERSION, "count": len(records), "blob_bytes": offset}
    with open(path / INDEX_NAME, "w") as fi:
        fi.write(json.dumps(header) + "\n")
        for rec in records:
            fi.write(json.dumps(rec) + "\n")
    return path


def _read_blob(blob: bytes, meta: dict, what: str) -> np.ndarray:
    shape = tuple(meta["shape"])
    n = int(np.prod(shape)) * 4
    start = meta["offset"]
    if start < 0 or start + n > len(blob):
        raise SceneFormatError(f"{what} blob [{start}, {start + n}) exceeds {BLOB_NAME} size {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", count=n // 4, offset=start).reshape(shape).copy()


def read_scenes(path) -> list[Scene]:
    path = Path(path)
    try:
        lines = (path / INDEX_NAME).read_text().splitlines()
        blob = (path / BLOB_NAME).read_bytes()
    except FileNotFoundError as exc:
        raise SceneFormatError(f"missing scene file: {exc.filename}") from exc
    if not lines:
        raise SceneFormatError(f"{INDEX_NAME} is empty (no header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"bad header line: {exc}") from exc
    if header.get("magic") != FORMAT_MAGIC:
        raise SceneFormatError(f"bad magic {header.get('magic')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise SceneFormatError(f"unsupported version {header.get('version')!r}, expected {FORMAT_VERSION}")
    if len(lines) - 1 != header["count"]:
        raise SceneFormatError(f"truncated index: header says {header['count']} scenes, found {len(lines) - 1}")
    if len(blob) != header["blob_bytes"]:
        raise SceneFormatError(f"truncated blob: expected {header['blob_bytes']} bytes, found {len(blob)}")
    scenes = []
    for i, line in enumerate(lines[1:]):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"scene {i}: bad JSON: {exc}") from exc
        if rec.get("version") != FORMAT_VERSION:
            raise SceneFormatError(f"scene {i}: unsupported version {rec.get('version')!r}")
        lanes = [GTLane(CurveParams.from_dict(l["curve"]),
                        AnchorPointSet(np.array(l["anchors"], dtype=np.float64), np.array(l["in_extent"], dtype=bool)),
                        np.array(l["visibility"], dtype=bool))
                 for l in rec["lanes"]]
        image = _read_blob(blob, rec["image"], f"scene {i} image")
        mask = _read_blob(blob, rec["seg_mask"], f"scene {i} seg_mask").astype(np.int32)
        scenes.append(Scene(lanes, CameraModel.from_dict(rec["camera"]), image, mask, rec["scenario"],
                            np.array(rec["ys"], dtype=np.float64)))
    return scenes


def spec_to_dict(spec: SceneSpec) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}
