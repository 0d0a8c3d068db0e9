"""Lane curve parameterization, camera projection and coordinate helpers.

Coordinates follow the road frame used throughout the package: x to the
right, y forward along the road, z up, all in meters. A lane is a pair of
polynomials in y, ``x(y) = sum a_r y^r`` and ``z(y) = sum b_r y^r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FIXED_Y_POSITIONS = (5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0)
DEFAULT_ORDER = 3
BEHIND_SENTINEL = -1.0
_MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Range3D:
    x_min: float = -30.0
    x_max: float = 30.0
    y_min: float = 3.0
    y_max: float = 103.0
    z_min: float = -10.0
    z_max: float = 10.0

    def __post_init__(self):
        for lo, hi, axis in ((self.x_min, self.x_max, "x"), (self.y_min, self.y_max, "y"),
                             (self.z_min, self.z_max, "z")):
            if not lo < hi:
                raise ValueError(f"Range3D {axis}: min {lo} must be < max {hi}")

    @property
    def y_span(self) -> float:
        return self.y_max - self.y_min

    def clamp(self, points: np.ndarray) -> np.ndarray:
        out = np.array(points, dtype=np.float64, copy=True)
        out[..., 0] = np.clip(out[..., 0], self.x_min, self.x_max)
        out[..., 2] = np.clip(out[..., 2], self.z_min, self.z_max)
        return out


@dataclass
class CurveParams:
    """One lane: confidence, y-extent and two coefficient vectors (ascending powers)."""

    confidence: float
    y_start: float
    y_end: float
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.ndim != 1 or self.a.shape != self.b.shape:
            raise ValueError(f"coefficient vectors must be 1-D and equal length, got {self.a.shape} and {self.b.shape}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not self.y_start < self.y_end:
            raise ValueError(f"y_start {self.y_start} must be < y_end {self.y_end}")

    @property
    def order(self) -> int:
        return self.a.shape[0] - 1

    def validate(self, rng3d: Range3D, order: int | None = None) -> None:
        if order is not None and self.order != order:
            raise ValueError(f"expected {order + 1} coefficients, got {self.a.shape[0]}")
        if self.y_start < rng3d.y_min or self.y_end > rng3d.y_max:
            raise ValueError(f"y-extent [{self.y_start}, {self.y_end}] outside [{rng3d.y_min}, {rng3d.y_max}]")

    def to_dict(self) -> dict:
        return {"confidence": float(self.confidence), "y_start": float(self.y_start),
                "y_end": float(self.y_end), "a": self.a.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CurveParams":
        return cls(d["confidence"], d["y_start"], d["y_end"], np.array(d["a"]), np.array(d["b"]))


@dataclass
class AnchorPointSet:
    """N ordered 3D points at fixed, strictly increasing y-positions."""

    points: np.ndarray
    in_extent: np.ndarray = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {self.points.shape}")
        if self.in_extent is None:
            self.in_extent = np.ones(len(self.points), dtype=bool)
        self.in_extent = np.asarray(self.in_extent, dtype=bool)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xs(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def zs(self) -> np.ndarray:
        return self.points[:, 2]


@dataclass
class CameraModel:
    """Pinhole camera. ``X_cam = R @ X_world + t``; camera axes are right, down, forward."""

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        k = self.intrinsics
        if k.shape != (3, 3) or np.any(np.tril(k, -1) != 0) or k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("intrinsics must be upper-triangular 3x3 with positive focal lengths")
        r = self.rotation
        if r.shape != (3, 3) or np.max(np.abs(r @ r.T - np.eye(3))) > 1e-9:
            raise ValueError("rotation must be orthonormal")
        if min(self.image_size) <= 0:
            raise ValueError(f"image size must be positive, got {self.image_size}")

    @classmethod
    def from_height_pitch(cls, height: float, pitch: float, focal: float,
                          image_size: tuple[int, int], lateral: float = 0.0) -> "CameraModel":
        """Forward-looking camera ``height`` m above the road, tilted down by ``pitch`` rad."""
        h, w = image_size
        c, s = np.cos(pitch), np.sin(pitch)
        right = np.array([1.0, 0.0, 0.0])
        down = np.array([0.0, -s, -c])
        forward = np.array([0.0, c, -s])
        rot = np.stack([right, down, forward])
        center = np.array([lateral, 0.0, height])
        k = np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0], [0.0, 0.0, 1.0]])
        return cls(k, rot, -rot @ center, (h, w))

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix ``K [R | t]``."""
        return self.intrinsics @ np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.tolist(), "rotation": self.rotation.tolist(),
                "translation": self.translation.tolist(), "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(np.array(d["intrinsics"]), np.array(d["rotation"]), np.array(d["translation"]),
                   tuple(d["image_size"]))


def polyval(coeffs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Evaluate ascending-power coefficients; ``coeffs`` may carry leading batch dims."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    lead = coeffs.shape[:-1]
    out = np.zeros(lead + ys.shape)
    expand = tuple(range(len(lead), len(lead) + ys.ndim))
    for r in range(coeffs.shape[-1] - 1, -1, -1):
        out = out * ys + np.expand_dims(coeffs[..., r], expand)
    return out


def sample_curve(curve: CurveParams, ys=FIXED_Y_POSITIONS, order: int | None = None) -> AnchorPointSet:
    ys = np.asarray(ys, dtype=np.float64)
    if ys.size == 0:
        raise ValueError("ys must not be empty")
    if ys.ndim != 1 or np.any(np.diff(ys) <= 0):
        raise ValueError("ys must be strictly increasing")
    if order is not None and curve.a.shape[0] != order + 1:
        raise ValueError(f"expected {order + 1} coefficients, got {curve.a.shape[0]}")
    pts = np.stack([polyval(curve.a, ys), ys, polyval(curve.b, ys)], axis=1)
    in_extent = (ys >= curve.y_start) & (ys <= curve.y_end)
    return AnchorPointSet(pts, in_extent)


def fit_curve(points: np.ndarray, order: int = DEFAULT_ORDER, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients (a, b) through (x, y, z) points."""
    points = np.asarray(points, dtype=np.float64)
    ys = points[:, 1]
    scale = max(np.max(np.abs(ys)), 1.0)
    vand = np.vander(ys / scale, order + 1, increasing=True)
    w = np.ones(len(ys)) if weights is None else np.asarray(weights, dtype=np.float64)
    sol, *_ = np.linalg.lstsq(vand * w[:, None], points[:, [0, 2]] * w[:, None], rcond=None)
    sol = sol / (scale ** np.arange(order + 1))[:, None]
    return sol[:, 0], sol[:, 1]


def project_points(points, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of (N, 3) road-frame points.

    Returns pixel coordinates (N, 2) as (u, v) and a validity flag that is 1
    only for points in front of the camera that land inside the image.
    Points behind the camera map to the sentinel (-1, -1).
    """
    pts = points.points if isinstance(points, AnchorPointSet) else np.asarray(points, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    cam_pts = pts @ cam.rotation.T + cam.translation
    depth = cam_pts[:, 2]
    front = depth > _MIN_DEPTH
    safe = np.where(front, depth, 1.0)
    pix = cam_pts @ cam.intrinsics.T
    uv = pix[:, :2] / safe[:, None]
    uv[~front] = BEHIND_SENTINEL
    h, w = cam.image_size
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    return uv, front & inside


def normalize_coords(uv, image_size: tuple[int, int]) -> np.ndarray:
    h, w = image_size
    if h <= 0 or w <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")
    uv = np.asarray(uv, dtype=np.float64)
    return uv / np.array([w, h], dtype=np.float64)


def denormalize_coords(uvn, image_size: tuple[int, int]) -> np.ndarray:
    h, w = image_size
    return np.asarray(uvn, dtype=np.float64) * np.array([w, h], dtype=np.float64)
