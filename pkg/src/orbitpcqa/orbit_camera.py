"""Capture orbits and singularity-free camera poses.

Three circular orbits around the cloud center cover complementary viewpoint
families: A lies in the z=0 plane, B in the x=0 plane, and C is the great
circle of the sphere cut by the plane x+z=0. Poses use the orbit-plane
normal as the up vector, so forward is always orthogonal to up and there is
no look-at degeneracy anywhere on any orbit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class BadRadius(ValueError):
    pass


class TooFewFrames(ValueError):
    pass


class DegeneratePosition(ValueError):
    pass


class OrbitId(Enum):
    A = 0
    B = 1
    C = 2


# unit normal of each orbit's plane, also used as the pose up vector
_SQRT2 = math.sqrt(2.0)
_ORBIT_NORMAL = {
    OrbitId.A: np.array([0.0, 0.0, 1.0]),
    OrbitId.B: np.array([1.0, 0.0, 0.0]),
    OrbitId.C: np.array([1.0 / _SQRT2, 0.0, 1.0 / _SQRT2]),
}
# in-plane basis (u, v) so positions are R*(cos t * u + sin t * v)
_ORBIT_BASIS = {
    OrbitId.A: (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
    OrbitId.B: (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    OrbitId.C: (np.array([1.0 / _SQRT2, 0.0, -1.0 / _SQRT2]),
                np.array([0.0, 1.0, 0.0])),
}


@dataclass(frozen=True)
class CaptureConfig:
    """Geometry and schedule of the video capture stage.

    The camera sits at radius_scale times the cloud's bounding radius; with
    the defaults (2.5x, 50 degree vertical fov) the bounding sphere subtends
    about 47.2 degrees, so the whole cloud is always in frame.
    """

    radius_scale: float = 2.5
    frames_per_orbit: int = 210
    image_width: int = 520
    image_height: int = 520
    crop_width: int = 448
    crop_height: int = 448
    vertical_fov_degrees: float = 50.0
    splat_size: int = 3
    background: tuple[int, int, int] = (128, 128, 128)

    def __post_init__(self):
        if self.radius_scale <= 1.0:
            raise ValueError(f"radius_scale must be > 1, got {self.radius_scale}")
        if self.frames_per_orbit < 3:
            raise TooFewFrames(f"frames_per_orbit must be >= 3, got {self.frames_per_orbit}")
        if self.crop_width > self.image_width or self.crop_height > self.image_height:
            raise ValueError("crop dimensions must not exceed image dimensions")
        if min(self.image_width, self.image_height, self.crop_width, self.crop_height) < 1:
            raise ValueError("image and crop dimensions must be positive")
        if self.splat_size < 1 or self.splat_size % 2 == 0:
            raise ValueError(f"splat_size must be an odd positive integer, got {self.splat_size}")
        if not (0.0 < self.vertical_fov_degrees < 180.0):
            raise ValueError(f"vertical fov must be in (0, 180), got {self.vertical_fov_degrees}")
        half_fov = math.radians(self.vertical_fov_degrees) / 2.0
        if self.radius_scale * math.sin(half_fov) <= 1.0:
            raise ValueError(
                "radius_scale * sin(fov/2) must exceed 1 so the bounding sphere fits in frame"
            )
        if any(not (0 <= c <= 255) for c in self.background):
            raise ValueError(f"background channels must be 8-bit, got {self.background}")


@dataclass(frozen=True)
class CameraPose:
    """Position plus an orthonormal right/up/forward frame aimed at the target.

    The camera basis (right, up, back=-forward) is right-handed; forward
    points from the position toward the cloud center.
    """

    position: np.ndarray
    forward: np.ndarray
    right: np.ndarray
    up: np.ndarray


def orbit_positions(orbit: OrbitId, radius: float, n: int) -> np.ndarray:
    """n camera positions on the orbit, uniformly spaced at angles 2*pi*k/n.

    Returned in centered coordinates (the orbit center is the origin), shape
    (n, 3). Counter-clockwise when viewed from the orbit normal, starting at
    angle zero.
    """
    if not (radius > 0.0 and math.isfinite(radius)):
        raise BadRadius(f"radius must be positive and finite, got {radius}")
    if n < 3:
        raise TooFewFrames(f"need at least 3 frames per orbit, got {n}")
    theta = 2.0 * np.pi * np.arange(n, dtype=np.float64) / n
    u, v = _ORBIT_BASIS[orbit]
    return radius * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)


def orbit_normal(orbit: OrbitId) -> np.ndarray:
    """Unit normal of the orbit plane (also the pose up vector)."""
    return _ORBIT_NORMAL[orbit].copy()


def pose_at(orbit: OrbitId, position: np.ndarray, center: np.ndarray) -> CameraPose:
    """Camera pose at `position` looking at `center`.

    Uses the orbit-plane normal as the up hint; because every orbit position
    lies in that plane, forward is orthogonal to the hint for every angle
    and the frame is well-defined with no special cases.
    """
    position = np.asarray(position, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    offset = center - position
    dist = float(np.linalg.norm(offset))
    if dist == 0.0:
        raise DegeneratePosition("camera position coincides with the target center")
    forward = offset / dist
    up_hint = _ORBIT_NORMAL[orbit]
    right = np.cross(forward, up_hint)
    right = right / np.linalg.norm(right)
    up = np.cross(right, forward)
    return CameraPose(position=position, forward=forward, right=right, up=up)


def capture_radius(cloud_radius: float, config: CaptureConfig) -> float:
    """Orbit radius for a cloud of the given bounding radius."""
    if not (cloud_radius > 0.0 and math.isfinite(cloud_radius)):
        raise BadRadius(f"cloud radius must be positive and finite, got {cloud_radius}")
    return config.radius_scale * cloud_radius
