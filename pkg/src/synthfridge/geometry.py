"""Rigid transforms, the pinhole camera and 2D box math.

Image coordinates are continuous with y pointing down; pixel (i, j) covers
[i, i+1) x [j, j+1) and its center sits at (i + 0.5, j + 0.5). Cameras look
down their +z axis with x to the right and y down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IMAGE_SIZE = 512
NEAR_EPS = 1e-6


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform x -> R @ x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: Pose) -> Pose:
        """self after other: x -> self(other(x))."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        """Rotation about +y by ``yaw`` radians."""
        c, s = np.cos(yaw), np.sin(yaw)
        # exact quarter turns keep footprints exact
        c, s = np.round(c, 15), np.round(s, 15)
        r = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        return cls(r, translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
        """World -> camera transform for a camera at ``eye`` looking at ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        n = np.linalg.norm(right)
        if n < 1e-9:
            raise ValueError("view direction is parallel to the up vector")
        right /= n
        down = np.cross(fwd, right)
        r = np.stack([right, down, fwd])
        return cls(r, -r @ eye)


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE
    pose: Pose = field(default_factory=Pose)  # world -> camera

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    @property
    def center(self) -> np.ndarray:
        return self.pose.inverse().translation

    def to_camera(self, points) -> np.ndarray:
        return self.pose.apply(points)


def project(camera: Camera, point) -> tuple[np.ndarray, float]:
    """Pixel coordinates and depth of one world point."""
    x, y, z = camera.to_camera(point)
    if z <= NEAR_EPS:
        raise BehindCameraError(f"point at camera depth {z:.3g} is not in front of the camera")
    return np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy]), float(z)


def project_points(camera: Camera, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``project`` without the depth check; returns (uv (N,2), z (N,))."""
    pc = camera.to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = pc[:, 2]
    uv = np.stack([camera.fx * pc[:, 0] / z + camera.cx, camera.fy * pc[:, 1] / z + camera.cy], axis=1)
    return uv, z


@dataclass(frozen=True)
class BBox2D:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite box {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box must have positive area, got {vals}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def shifted(self, dx: float, dy: float) -> BBox2D:
        return BBox2D(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


def iou(a: BBox2D, b: BBox2D) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (N,4) and (M,4) corner arrays; degenerate boxes score 0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out
