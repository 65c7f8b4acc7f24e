"""Rigid transforms, pinhole cameras and hemisphere viewpoint sampling.

Conventions: right-handed frames, camera looks along its +Z axis with +X to
the right and +Y pointing down in the image, so image rows grow with v.
Pixel (i, j) is sampled at continuous coordinates (i + 0.5, j + 0.5); the
default principal point of a 512x512 image therefore sits at (256, 256),
on the corner shared by the four central pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGeometryError, PreconditionError

WORLD_UP = np.array([0.0, 0.0, 1.0])


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p -> R @ p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = _frozen(self.rotation)
        trans = _frozen(self.translation)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ValueError("Pose needs a 3x3 rotation and a 3-vector translation")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: Pose) -> Pose:
        """Pose equivalent to applying ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )


def transform_point(pose: Pose, p) -> np.ndarray:
    return pose.rotation @ np.asarray(p, dtype=float) + pose.translation


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit-normalised ``axis``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int = 512, height: int = 512, vertical_fov_deg: float = 60.0) -> CameraIntrinsics:
        """Square-pixel intrinsics with the principal point at the image centre."""
        fy = (height / 2.0) / math.tan(math.radians(vertical_fov_deg) / 2.0)
        return cls(fx=fy, fy=fy, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    extrinsic: Pose  # world -> camera

    @property
    def eye(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.extrinsic.rotation.T @ self.extrinsic.translation


class PixelPoint(NamedTuple):
    u: float
    v: float
    depth: float


def project(camera: Camera, world_point) -> PixelPoint | None:
    """Project a world point; ``None`` when it is not in front of the camera.

    Points outside the image are still returned, bounds are the caller's job.
    """
    x, y, z = transform_point(camera.extrinsic, world_point)
    if z <= 0:
        return None
    k = camera.intrinsics
    return PixelPoint(k.cx + k.fx * x / z, k.cy + k.fy * y / z, float(z))


def project_points(camera: Camera, world_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection. Returns ``(uvz, valid)`` with uvz of shape (N, 3).

    Rows where ``valid`` is False (z <= 0) hold NaN pixel coordinates.
    """
    pc = camera.extrinsic.apply(np.atleast_2d(world_points))
    k = camera.intrinsics
    z = pc[:, 2]
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(valid, k.cx + k.fx * pc[:, 0] / z, np.nan)
        v = np.where(valid, k.cy + k.fy * pc[:, 1] / z, np.nan)
    return np.stack([u, v, z], axis=1), valid


def look_at(eye, target, up=WORLD_UP) -> Pose:
    """World->camera pose whose +Z axis points from ``eye`` to ``target``."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise DegenerateGeometryError("eye and target coincide")
    forward /= norm
    right = np.cross(forward, np.asarray(up, dtype=float))
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise DegenerateGeometryError("up vector is parallel to the viewing direction")
    right /= rnorm
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return Pose(rot, -rot @ eye)


def sample_hemisphere_camera(
    rng: np.random.Generator,
    center=(0.0, 0.0, 0.0),
    r_min: float = 0.8,
    r_max: float = 1.2,
    elev_min: float = math.radians(40.0),
    elev_max: float = math.radians(85.0),
    intrinsics: CameraIntrinsics | None = None,
) -> Camera:
    """Camera on a spherical shell above ``center``, looking at it.

    Distance and elevation are drawn uniformly from their ranges, azimuth
    uniformly from [0, 2*pi).
    """
    if not (0 < r_min <= r_max):
        raise PreconditionError(f"need 0 < r_min <= r_max, got {r_min}, {r_max}")
    if not (0 <= elev_min <= elev_max <= math.pi / 2):
        raise PreconditionError(f"need 0 <= elev_min <= elev_max <= pi/2, got {elev_min}, {elev_max}")
    if intrinsics is None:
        intrinsics = CameraIntrinsics.from_fov()
    center = np.asarray(center, dtype=float)

    dist = rng.uniform(r_min, r_max)
    elev = rng.uniform(elev_min, elev_max)
    azim = rng.uniform(0.0, 2.0 * math.pi)
    direction = np.array([math.cos(elev) * math.cos(azim), math.cos(elev) * math.sin(azim), math.sin(elev)])
    eye = center + dist * direction

    # straight overhead the world up is parallel to the view ray; use the
    # horizontal direction back towards the azimuth so the image stays upright
    up = WORLD_UP
    if math.cos(elev) < 1e-6:
        up = np.array([-math.cos(azim), -math.sin(azim), 0.0])
    return Camera(intrinsics, look_at(eye, center, up))
