"""Synthetic desk-scale dataset: procedural clouds with graded noise levels.

Stands in for a real subjective-quality database when only laptop-scale
compute is available. Each content is a procedurally sampled colored shape;
its distorted versions add seeded Gaussian geometry noise whose sigma is a
fixed fraction of the cloud's bounding radius. The pseudo-MOS decreases
strictly with the noise level and uses the same value for every content,
so held-out contents are rankable in principle.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .cloud_io import (
    DistortionKind,
    DistortionSpec,
    PointCloud,
    apply_distortion,
    bounding_radius,
    mean_center,
    write_ply,
)

DEFAULT_NOISE_LEVELS = (0.02, 0.06, 0.13, 0.27, 0.5, 0.9)
_SHAPES = ("sphere", "cube", "torus", "cylinder", "helix")


def _colorize(points: np.ndarray) -> np.ndarray:
    """Deterministic position-driven coloring, shared by every content.

    A common texture keeps the color statistics of held-out contents close
    to the training distribution, so generalization hinges on the geometry
    distortion rather than on unseen palettes.
    """
    span = max(float(np.ptp(points)), 1e-9)
    u = (points - points.min(axis=0)) / span
    stripes = 0.5 + 0.5 * np.sin(8.0 * points[:, 2] / span)
    rgb = np.stack([
        0.15 + 0.7 * u[:, 0],
        0.25 + 0.5 * stripes,
        0.85 - 0.6 * u[:, 1],
    ], axis=1)
    return np.clip(np.floor(rgb * 255.0 + 0.5), 0, 255).astype(np.uint8)


def make_shape(name: str, points: int, seed: int) -> PointCloud:
    """Sample one unit-scale procedural shape with a deterministic texture."""
    rng = np.random.default_rng(seed)
    if name == "sphere":
        v = rng.normal(size=(points, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = v
    elif name == "cube":
        face = rng.integers(0, 6, size=points)
        uv = rng.uniform(-0.8, 0.8, size=(points, 2))
        pts = np.empty((points, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 0.8, -0.8)
        for i in range(points):
            others = [a for a in range(3) if a != axis[i]]
            pts[i, axis[i]] = sign[i]
            pts[i, others[0]] = uv[i, 0]
            pts[i, others[1]] = uv[i, 1]
    elif name == "torus":
        u = rng.uniform(0, 2 * np.pi, size=points)
        v = rng.uniform(0, 2 * np.pi, size=points)
        ring, tube = 0.75, 0.3
        pts = np.stack([
            (ring + tube * np.cos(v)) * np.cos(u),
            (ring + tube * np.cos(v)) * np.sin(u),
            tube * np.sin(v),
        ], axis=1)
    elif name == "cylinder":
        t = rng.uniform(0, 2 * np.pi, size=points)
        h = rng.uniform(-0.8, 0.8, size=points)
        cap = rng.uniform(size=points) < 0.25
        r = np.where(cap, np.sqrt(rng.uniform(size=points)) * 0.5, 0.5)
        z = np.where(cap, np.sign(rng.uniform(size=points) - 0.5) * 0.8, h)
        pts = np.stack([r * np.cos(t), r * np.sin(t), z], axis=1)
    elif name == "helix":
        t = rng.uniform(0, 4 * np.pi, size=points)
        tube = 0.1 * rng.normal(size=(points, 3))
        pts = np.stack([
            0.7 * np.cos(t), 0.7 * np.sin(t), -0.8 + 1.6 * t / (4 * np.pi),
        ], axis=1) + tube
    else:
        raise ValueError(f"unknown shape {name!r}; choose from {_SHAPES}")
    return PointCloud(points=pts, colors=_colorize(pts))


def generate_synthetic_dataset(out_dir, contents: int = 5, points: int = 1800,
                               noise_levels=DEFAULT_NOISE_LEVELS, seed: int = 7,
                               mos_range: tuple[float, float] = (0.0, 1.0)) -> Path:
    """Write PLY clouds plus a manifest.csv under out_dir; returns the manifest path.

    Level k of every content gets pseudo-MOS linearly interpolated from
    mos_range[1] (pristine) down to mos_range[0] (noisiest), strictly
    decreasing in sigma.
    """
    if contents < 1 or contents > len(_SHAPES):
        raise ValueError(f"contents must be in [1, {len(_SHAPES)}], got {contents}")
    levels = [float(s) for s in noise_levels]
    if sorted(set(levels)) != levels:
        raise ValueError(f"noise levels must be strictly increasing, got {levels}")
    out = Path(out_dir)
    cloud_dir = out / "clouds"
    cloud_dir.mkdir(parents=True, exist_ok=True)

    lo, hi = mos_range
    n_levels = len(levels)
    rows = []
    for ci in range(contents):
        shape = _SHAPES[ci]
        base = make_shape(shape, points, seed=seed * 1000 + ci)
        radius = bounding_radius(base, mean_center(base))
        for k, level in enumerate(levels):
            if level == 0.0:
                cloud = base
            else:
                spec = DistortionSpec(
                    kind=DistortionKind.GEOMETRY_NOISE,
                    level=level * radius,
                    seed=seed * 100_000 + ci * 100 + k,
                )
                cloud = apply_distortion(base, spec)
            entry_id = f"{shape}_n{k}"
            rel = Path("clouds") / f"{entry_id}.ply"
            (out / rel).write_bytes(write_ply(cloud, format="binary_le"))
            mos = hi - (hi - lo) * (k / (n_levels - 1)) if n_levels > 1 else hi
            rows.append({
                "id": entry_id,
                "cloud_path": str(rel),
                "mos": f"{mos:.6f}",
                "content_group": shape,
                "distortion": f"noise_{level:g}",
            })

    manifest = out / "manifest.csv"
    with open(manifest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["id", "cloud_path", "mos", "content_group", "distortion"]
        )
        writer.writeheader()
        writer.writerows(rows)
    return manifest
