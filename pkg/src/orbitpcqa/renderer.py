"""Deterministic z-buffered point-splat rasterizer and frame utilities.

Pinhole camera model: a point p maps to camera space via dot products with
the pose's right/up/forward vectors (depth along forward), then through a
perspective divide with focal length f = (height/2) / tan(fov/2). Image
coordinates put the origin at the top-left with +x right and +y down; world
up appears up in the image (py = h/2 - f * y_cam / depth).

Each visible point paints a splat_size x splat_size square centered on its
rounded projection. A per-pixel z-buffer keeps the minimum depth; exact
depth ties go to the lowest point index, making frames fully deterministic
and independent of traversal order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .cloud_io import EmptyCloud, PointCloud, bounding_radius, mean_center
from .orbit_camera import (
    CameraPose,
    CaptureConfig,
    OrbitId,
    capture_radius,
    orbit_positions,
    pose_at,
)

_DEPTH_EPS = 1e-9
# orbit radius used when a cloud degenerates to a single location
_FALLBACK_CLOUD_RADIUS = 1.0


class BadDimensions(ValueError):
    pass


class CropTooLarge(ValueError):
    pass


class BadMagic(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    """One rendered RGB image, 8 bits per channel, row-major (H, W, 3)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.uint8))
        if px.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {px.shape} does not match {(self.height, self.width, 3)}"
            )
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class VideoSequence:
    """Frames captured along one orbit, stacked as a (F, H, W, 3) uint8 array."""

    orbit: OrbitId
    frames: np.ndarray

    def __post_init__(self):
        fr = np.ascontiguousarray(np.asarray(self.frames, dtype=np.uint8))
        if fr.ndim != 4 or fr.shape[3] != 3:
            raise ValueError(f"frames must have shape (F, H, W, 3), got {fr.shape}")
        fr.flags.writeable = False
        object.__setattr__(self, "frames", fr)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def frame(self, i: int) -> Frame:
        return Frame(width=self.width, height=self.height, pixels=self.frames[i])


def focal_length(config: CaptureConfig) -> float:
    return (config.image_height / 2.0) / math.tan(
        math.radians(config.vertical_fov_degrees) / 2.0
    )


def project(point: np.ndarray, pose: CameraPose, config: CaptureConfig):
    """Project one world point; returns (px, py, depth) or None when behind.

    Depth is the forward component of point - position; points with depth
    <= 1e-9 are culled.
    """
    rel = np.asarray(point, dtype=np.float64) - pose.position
    depth = float(rel @ pose.forward)
    if depth <= _DEPTH_EPS:
        return None
    f = focal_length(config)
    px = config.image_width / 2.0 + f * float(rel @ pose.right) / depth
    py = config.image_height / 2.0 - f * float(rel @ pose.up) / depth
    return px, py, depth


def render_frame(cloud: PointCloud, pose: CameraPose, config: CaptureConfig) -> Frame:
    """Rasterize the cloud from one pose into a background-filled frame."""
    if cloud.count < 1:
        raise EmptyCloud("cannot render an empty cloud")
    w, h = config.image_width, config.image_height
    out = np.empty((h, w, 3), dtype=np.uint8)
    out[:, :] = np.array(config.background, dtype=np.uint8)

    rel = cloud.points - pose.position
    basis = np.stack([pose.right, pose.up, pose.forward])  # rows
    cam = rel @ basis.T
    depth = cam[:, 2]
    vis = depth > _DEPTH_EPS
    if not vis.any():
        return Frame(width=w, height=h, pixels=out)

    f = focal_length(config)
    idx = np.nonzero(vis)[0]
    z = depth[idx]
    px = w / 2.0 + f * cam[idx, 0] / z
    py = h / 2.0 - f * cam[idx, 1] / z
    # splat centers: round half up, consistent with the resize rounding rule
    cx = np.floor(px + 0.5).astype(np.int64)
    cy = np.floor(py + 0.5).astype(np.int64)

    half = config.splat_size // 2
    pix_chunks, z_chunks, idx_chunks = [], [], []
    for dy in range(-half, half + 1):
        yy = cy + dy
        for dx in range(-half, half + 1):
            xx = cx + dx
            ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            if not ok.any():
                continue
            pix_chunks.append(yy[ok] * w + xx[ok])
            z_chunks.append(z[ok])
            idx_chunks.append(idx[ok])
    if not pix_chunks:
        return Frame(width=w, height=h, pixels=out)

    pix = np.concatenate(pix_chunks)
    zs = np.concatenate(z_chunks)
    src = np.concatenate(idx_chunks)
    # winner per pixel: minimum depth, ties broken by lowest point index
    order = np.lexsort((src, zs, pix))
    pix = pix[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    flat = out.reshape(-1, 3)
    flat[pix[first]] = cloud.colors[src[order][first]]
    return Frame(width=w, height=h, pixels=out)


def capture_sequences(
    cloud: PointCloud, config: CaptureConfig
) -> tuple[VideoSequence, VideoSequence, VideoSequence]:
    """Render the three per-orbit video sequences around the cloud's mean center.

    A cloud whose points are all coincident has bounding radius zero; the
    orbit then falls back to one model unit so the camera never sits on the
    target.
    """
    center = mean_center(cloud)
    radius = bounding_radius(cloud, center)
    if radius == 0.0:
        radius = _FALLBACK_CLOUD_RADIUS
    orbit_r = capture_radius(radius, config)
    sequences = []
    for orbit in (OrbitId.A, OrbitId.B, OrbitId.C):
        positions = center + orbit_positions(orbit, orbit_r, config.frames_per_orbit)
        frames = np.empty(
            (config.frames_per_orbit, config.image_height, config.image_width, 3),
            dtype=np.uint8,
        )
        for k in range(config.frames_per_orbit):
            pose = pose_at(orbit, positions[k], center)
            frames[k] = render_frame(cloud, pose, config).pixels
        sequences.append(VideoSequence(orbit=orbit, frames=frames))
    return tuple(sequences)


def resize_bilinear(frame: Frame, width: int, height: int) -> Frame:
    """Bilinear resize with half-pixel centers; channels independent.

    The source coordinate of output pixel i is (i + 0.5) * (src/dst) - 0.5,
    clamped to the source extent, and the interpolated value is
    (1-wy) * ((1-wx) * p00 + wx * p01) + wy * ((1-wx) * p10 + wx * p11)
    evaluated in float64 in exactly that order, then rounded to the nearest
    integer with ties rounding up. Resizing to the source dimensions
    returns an identical frame.
    """
    if width < 1 or height < 1:
        raise BadDimensions(f"target dimensions must be positive, got {width}x{height}")
    if frame.width < 1 or frame.height < 1:
        raise BadDimensions("source frame is empty")
    if width == frame.width and height == frame.height:
        return frame

    src = frame.pixels.astype(np.float64)
    sx = frame.width / width
    sy = frame.height / height
    xs = (np.arange(width) + 0.5) * sx - 0.5
    ys = (np.arange(height) + 0.5) * sy - 0.5
    xs = np.clip(xs, 0.0, frame.width - 1.0)
    ys = np.clip(ys, 0.0, frame.height - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, frame.width - 1)
    y1 = np.minimum(y0 + 1, frame.height - 1)
    wx = (xs - x0)[None, :, None]
    wy = (ys - y0)[:, None, None]

    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    val = top * (1 - wy) + bot * wy
    pixels = np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8)
    return Frame(width=width, height=height, pixels=pixels)


def center_crop(frame: Frame, width: int, height: int) -> Frame:
    """Centered crop; the window offset is floor((size - crop) / 2)."""
    if width > frame.width or height > frame.height:
        raise CropTooLarge(
            f"crop {width}x{height} exceeds frame {frame.width}x{frame.height}"
        )
    if width < 1 or height < 1:
        raise BadDimensions(f"crop dimensions must be positive, got {width}x{height}")
    x0 = (frame.width - width) // 2
    y0 = (frame.height - height) // 2
    return Frame(width=width, height=height,
                 pixels=frame.pixels[y0:y0 + height, x0:x0 + width])


# --------------------------------------------------------------------------
# PCV container: bit-exact storage for captured sequences
# --------------------------------------------------------------------------
# Little-endian layout:
#   magic "PCVS" | u32 version=1 | u32 width | u32 height | u32 frame_count
#   | u8 orbit_id (0/1/2) | frame_count * (width*height*3) raw RGB bytes

_PCV_MAGIC = b"PCVS"
_PCV_VERSION = 1
_PCV_HEADER = struct.Struct("<4sIIIIB")


def save_sequence(seq: VideoSequence, path) -> None:
    header = _PCV_HEADER.pack(
        _PCV_MAGIC, _PCV_VERSION, seq.width, seq.height, seq.frame_count,
        seq.orbit.value,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(seq.frames.tobytes())


def load_sequence(path) -> VideoSequence:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PCV_HEADER.size:
        raise TruncatedFile(f"{path}: shorter than the container header")
    magic, version, width, height, frame_count, orbit_id = _PCV_HEADER.unpack_from(data)
    if magic != _PCV_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != _PCV_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    try:
        orbit = OrbitId(orbit_id)
    except ValueError:
        raise BadMagic(f"{path}: unknown orbit id {orbit_id}") from None
    expected = frame_count * width * height * 3
    body = data[_PCV_HEADER.size:]
    if len(body) < expected:
        raise TruncatedFile(
            f"{path}: expected {expected} pixel bytes, found {len(body)}"
        )
    frames = np.frombuffer(body[:expected], dtype=np.uint8).reshape(
        frame_count, height, width, 3
    )
    return VideoSequence(orbit=orbit, frames=frames)
