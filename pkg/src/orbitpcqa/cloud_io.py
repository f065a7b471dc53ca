"""Colored point cloud containers, PLY I/O, and synthetic distortions.

Coordinates are kept in double precision, colors as 8-bit channels. Only a
deliberately small PLY subset is supported: vertex elements with float/double
x, y, z and optional uchar red/green/blue (or r/g/b). Anything else is
rejected loudly rather than half-parsed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_COLOR = (128, 128, 128)

_U64 = 0xFFFFFFFFFFFFFFFF


class MalformedHeader(ValueError):
    """PLY header is missing, truncated, or declares an unsupported format."""


class UnsupportedProperty(ValueError):
    """PLY declares elements or properties outside the supported subset."""


class CountMismatch(ValueError):
    """PLY body holds fewer vertices than the header declares."""


class EmptyCloud(ValueError):
    """Operation requires at least one point."""


class InvalidLevel(ValueError):
    """Distortion level is outside its legal range."""


@dataclass(frozen=True)
class PointCloud:
    """N points with XYZ coordinates (float64) and RGB colors (uint8).

    Arrays are frozen after construction, so instances are safe to share
    across threads.
    """

    points: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        cols = np.ascontiguousarray(np.asarray(self.colors, dtype=np.uint8))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if cols.shape != pts.shape:
            raise ValueError(
                f"colors shape {cols.shape} does not match points shape {pts.shape}"
            )
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        pts.flags.writeable = False
        cols.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)

    @property
    def count(self) -> int:
        return self.points.shape[0]


class DistortionKind(Enum):
    DOWNSAMPLE = "downsample"
    GEOMETRY_NOISE = "noise"
    COLOR_QUANTIZE = "quantize"


@dataclass(frozen=True)
class DistortionSpec:
    """One synthetic distortion: kind, level, and RNG seed.

    Level ranges: keep ratio in (0, 1] for downsampling, sigma >= 0 in model
    units for geometry noise, integral bits in [1, 8] for color quantization.
    """

    kind: DistortionKind
    level: float
    seed: int = 0

    def __post_init__(self):
        lv = float(self.level)
        if self.kind is DistortionKind.DOWNSAMPLE:
            if not (0.0 < lv <= 1.0):
                raise InvalidLevel(f"keep ratio must be in (0, 1], got {lv}")
        elif self.kind is DistortionKind.GEOMETRY_NOISE:
            if not (lv >= 0.0 and math.isfinite(lv)):
                raise InvalidLevel(f"noise sigma must be finite and >= 0, got {lv}")
        elif self.kind is DistortionKind.COLOR_QUANTIZE:
            if lv != int(lv) or not (1 <= int(lv) <= 8):
                raise InvalidLevel(f"bits must be an integer in [1, 8], got {lv}")


# --------------------------------------------------------------------------
# PLY parsing / writing
# --------------------------------------------------------------------------

_FLOAT_TYPES = {"float", "float32", "double", "float64"}
_UCHAR_TYPES = {"uchar", "uint8"}
_COLOR_ALIASES = {"red": "red", "green": "green", "blue": "blue",
                  "r": "red", "g": "green", "b": "blue"}
_NUMPY_OF = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
             "uchar": "u1", "uint8": "u1"}


def _parse_header(data: bytes):
    """Split the header off, returning (vertex_count, properties, body_offset).

    properties is a list of (canonical_name, ply_type) in declared order,
    with canonical names among x, y, z, red, green, blue.
    """
    end_marker = b"end_header"
    idx = data.find(end_marker)
    if idx < 0:
        raise MalformedHeader("missing end_header")
    # body starts after the end_header line's newline
    nl = data.find(b"\n", idx)
    if nl < 0:
        raise MalformedHeader("no newline after end_header")
    body_offset = nl + 1
    try:
        header_text = data[:idx].decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"header is not ASCII: {exc}") from None

    lines = [ln.strip() for ln in header_text.splitlines() if ln.strip()]
    if not lines or lines[0] != "ply":
        raise MalformedHeader("file does not start with 'ply'")

    fmt = None
    vertex_count = None
    properties: list[tuple[str, str]] = []
    in_vertex = False
    for line in lines[1:]:
        parts = line.split()
        keyword = parts[0]
        if keyword == "comment" or keyword == "obj_info":
            continue
        if keyword == "format":
            if len(parts) != 3 or parts[1] not in ("ascii", "binary_little_endian"):
                raise MalformedHeader(f"unsupported format line: {line!r}")
            if parts[2] != "1.0":
                raise MalformedHeader(f"unsupported PLY version: {parts[2]}")
            fmt = parts[1]
        elif keyword == "element":
            if len(parts) != 3:
                raise MalformedHeader(f"bad element line: {line!r}")
            if parts[1] != "vertex":
                raise UnsupportedProperty(f"unsupported element: {parts[1]}")
            if vertex_count is not None:
                raise MalformedHeader("duplicate vertex element")
            try:
                vertex_count = int(parts[2])
            except ValueError:
                raise MalformedHeader(f"bad vertex count: {parts[2]!r}") from None
            if vertex_count < 0:
                raise MalformedHeader(f"negative vertex count: {vertex_count}")
            in_vertex = True
        elif keyword == "property":
            if not in_vertex:
                raise MalformedHeader(f"property outside vertex element: {line!r}")
            if len(parts) >= 2 and parts[1] == "list":
                raise UnsupportedProperty(f"list properties are unsupported: {line!r}")
            if len(parts) != 3:
                raise MalformedHeader(f"bad property line: {line!r}")
            ptype, pname = parts[1], parts[2]
            if pname in ("x", "y", "z"):
                if ptype not in _FLOAT_TYPES:
                    raise UnsupportedProperty(f"{pname} must be float/double, got {ptype}")
                properties.append((pname, ptype))
            elif pname in _COLOR_ALIASES:
                if ptype not in _UCHAR_TYPES:
                    raise UnsupportedProperty(f"{pname} must be uchar, got {ptype}")
                properties.append((_COLOR_ALIASES[pname], ptype))
            else:
                raise UnsupportedProperty(f"unsupported vertex property: {pname}")
        else:
            raise MalformedHeader(f"unknown header line: {line!r}")

    if fmt is None:
        raise MalformedHeader("missing format line")
    if vertex_count is None:
        raise MalformedHeader("missing vertex element")
    names = [name for name, _ in properties]
    if len(set(names)) != len(names):
        raise MalformedHeader("duplicate vertex property")
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise MalformedHeader(f"missing vertex property {coord}")
    colors_declared = any(n in ("red", "green", "blue") for n in names)
    if colors_declared and not all(c in names for c in ("red", "green", "blue")):
        raise MalformedHeader("red/green/blue must be declared together")
    return fmt, vertex_count, properties, body_offset


def parse_ply(data: bytes) -> PointCloud:
    """Parse an ASCII or binary-little-endian PLY byte stream.

    Vertices must declare float x/y/z; uchar red/green/blue (or r/g/b) are
    optional and default to mid-gray (128, 128, 128) when absent. Property
    order is honored as declared.
    """
    fmt, count, properties, offset = _parse_header(data)
    names = [name for name, _ in properties]
    has_color = "red" in names

    if fmt == "ascii":
        text = data[offset:].decode("ascii", errors="replace")
        rows = np.empty((count, len(properties)), dtype=np.float64)
        lines = text.splitlines()
        row = 0
        for line in lines:
            tokens = line.split()
            if not tokens:
                continue
            if row >= count:
                break
            if len(tokens) != len(properties):
                raise CountMismatch(
                    f"vertex {row}: expected {len(properties)} values, got {len(tokens)}"
                )
            try:
                rows[row] = [float(t) for t in tokens]
            except ValueError:
                raise MalformedHeader(f"vertex {row}: non-numeric value in {line!r}") from None
            row += 1
        if row < count:
            raise CountMismatch(f"declared {count} vertices, found {row}")
        columns = {name: rows[:, i] for i, (name, _) in enumerate(properties)}
    else:
        dtype = np.dtype([(name, _NUMPY_OF[ptype]) for name, ptype in properties])
        body = data[offset:]
        needed = dtype.itemsize * count
        if len(body) < needed:
            raise CountMismatch(
                f"declared {count} vertices ({needed} bytes), found {len(body)} bytes"
            )
        table = np.frombuffer(body[:needed], dtype=dtype)
        columns = {name: table[name] for name, _ in properties}

    points = np.column_stack([columns["x"], columns["y"], columns["z"]]).astype(np.float64)
    if not np.isfinite(points).all():
        raise MalformedHeader("non-finite vertex coordinate")
    if has_color:
        colors = np.column_stack([columns["red"], columns["green"], columns["blue"]])
        colors = colors.astype(np.uint8)
    else:
        colors = np.tile(np.array(DEFAULT_COLOR, dtype=np.uint8), (count, 1))
    return PointCloud(points=points, colors=colors)


def _format_coord(v: float) -> str:
    # shortest representation that round-trips; integral values drop the ".0"
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


def write_ply(cloud: PointCloud, format: str = "ascii") -> bytes:
    """Serialize a cloud to PLY bytes ('ascii' or 'binary_le').

    Coordinates are written as doubles so that parse_ply(write_ply(c)) is
    the identity on arbitrary valid clouds.
    """
    if format not in ("ascii", "binary_le"):
        raise ValueError(f"format must be 'ascii' or 'binary_le', got {format!r}")
    fmt_line = "ascii 1.0" if format == "ascii" else "binary_little_endian 1.0"
    coord_type = "double"
    header = (
        "ply\n"
        f"format {fmt_line}\n"
        f"element vertex {cloud.count}\n"
        f"property {coord_type} x\n"
        f"property {coord_type} y\n"
        f"property {coord_type} z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    if format == "ascii":
        body_lines = []
        for p, c in zip(cloud.points, cloud.colors):
            body_lines.append(
                f"{_format_coord(p[0])} {_format_coord(p[1])} {_format_coord(p[2])}"
                f" {c[0]} {c[1]} {c[2]}"
            )
        body = ("\n".join(body_lines) + "\n") if body_lines else ""
        return header.encode("ascii") + body.encode("ascii")
    dtype = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                      ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    table = np.empty(cloud.count, dtype=dtype)
    table["x"], table["y"], table["z"] = cloud.points.T
    table["red"], table["green"], table["blue"] = cloud.colors.T
    return header.encode("ascii") + table.tobytes()


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------

def mean_center(cloud: PointCloud) -> np.ndarray:
    """Component-wise arithmetic mean of all points, shape (3,)."""
    if cloud.count < 1:
        raise EmptyCloud("mean_center of an empty cloud")
    return cloud.points.mean(axis=0)


def bounding_radius(cloud: PointCloud, center: np.ndarray) -> float:
    """Maximum Euclidean distance from `center` to any point."""
    if cloud.count < 1:
        raise EmptyCloud("bounding_radius of an empty cloud")
    diffs = cloud.points - np.asarray(center, dtype=np.float64)
    return float(np.sqrt((diffs * diffs).sum(axis=1).max()))


# --------------------------------------------------------------------------
# Deterministic RNG: SplitMix64 + Box-Muller
# --------------------------------------------------------------------------
# The distortion RNG is pinned to a documented algorithm so traces can be
# reproduced independently:
#   * state_k = seed + (k+1) * 0x9E3779B97F4A7C15 (mod 2^64)
#   * output_k = mix(state_k) with the SplitMix64 finalizer
#   * uniforms: u = (output >> 11) * 2^-53 in [0, 1)
#   * normals come in Box-Muller pairs from consecutive outputs (x1, x2):
#       u1 = ((x1 >> 11) + 1) * 2^-53   in (0, 1]
#       u2 = (x2 >> 11) * 2^-53         in [0, 1)
#       z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First n outputs of SplitMix64 seeded with `seed`, as uint64."""
    with np.errstate(over="ignore"):
        ks = np.arange(1, n + 1, dtype=np.uint64)
        z = (np.uint64(seed & _U64) + ks * np.uint64(_SPLITMIX_GAMMA))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def gaussian_stream(seed: int, n: int) -> np.ndarray:
    """First n standard normals of the documented SplitMix64 + Box-Muller stream."""
    pairs = (n + 1) // 2
    x = splitmix64(seed, 2 * pairs)
    u1 = ((x[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    u2 = (x[1::2] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


def _sample_without_replacement(seed: int, n: int, m: int) -> np.ndarray:
    """m distinct indices from range(n), seeded partial Fisher-Yates, sorted."""
    outputs = splitmix64(seed, m)
    idx = np.arange(n, dtype=np.int64)
    for i in range(m):
        j = i + int(outputs[i] % np.uint64(n - i))
        idx[i], idx[j] = idx[j], idx[i]
    return np.sort(idx[:m])


def apply_distortion(cloud: PointCloud, spec: DistortionSpec) -> PointCloud:
    """Apply one seeded synthetic distortion, deterministically.

    Downsample keeps ceil(keep_ratio * N) points (order-preserving);
    GeometryNoise adds i.i.d. Gaussian offsets to every coordinate;
    ColorQuantize truncates channels to the top `bits` bits and rescales
    back to [0, 255].
    """
    if spec.kind is DistortionKind.DOWNSAMPLE:
        keep = math.ceil(float(spec.level) * cloud.count)
        keep = max(1, min(cloud.count, keep))
        sel = _sample_without_replacement(spec.seed, cloud.count, keep)
        return PointCloud(points=cloud.points[sel], colors=cloud.colors[sel])
    if spec.kind is DistortionKind.GEOMETRY_NOISE:
        sigma = float(spec.level)
        normals = gaussian_stream(spec.seed, 3 * cloud.count)
        offsets = normals.reshape(cloud.count, 3)
        return PointCloud(points=cloud.points + sigma * offsets, colors=cloud.colors)
    if spec.kind is DistortionKind.COLOR_QUANTIZE:
        bits = int(spec.level)
        top = cloud.colors.astype(np.int64) >> (8 - bits)
        levels = (1 << bits) - 1
        rescaled = np.floor(top * 255.0 / levels + 0.5).astype(np.uint8)
        return PointCloud(points=cloud.points, colors=rescaled)
    raise InvalidLevel(f"unknown distortion kind: {spec.kind}")
