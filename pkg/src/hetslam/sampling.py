"""Depth sampling along rays: stratified coverage plus sensor-guided bands.

All depths here are ray lengths (meters along the unit direction). Guided
samples concentrate around each sensor's depth reading; the stratified set
spans (near_clip, max_depth], where max_depth is the furthest reading across
sensors for that ray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose

DEFAULT_NEAR_CLIP = 0.05
DEFAULT_NEAR_BAND = 0.04  # 0.25 x fine voxel size


@dataclass
class Ray:
    origin: np.ndarray  # (3,)
    direction: np.ndarray  # (3,) unit
    pixel: tuple[int, int] = (0, 0)  # (u, v)
    sensor_id: int = 0

    def __post_init__(self):
        n = float(np.linalg.norm(self.direction))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length (got {n})")


@dataclass
class SampleSet:
    depths: np.ndarray  # (N,) ascending ray lengths
    points: np.ndarray  # (N, 3)
    occupancies: np.ndarray | None = None
    colors: np.ndarray | None = None


def stratified_depths(n: int, near: float, far: float, rng, n_rays: int = 1) -> np.ndarray:
    """(n_rays, n) jittered-uniform depths covering (near, far]."""
    if far <= max(near, 0.0):
        raise ValueError("far bound must exceed the near clip and be positive")
    u = rng.uniform(0.0, 1.0, size=(n_rays, n))
    edges = near + (np.arange(n) + u) * ((far - near) / n)
    return edges


def near_band_depths(hints: np.ndarray, n: int, band: float, rng) -> np.ndarray:
    """(n_rays, n) uniform depths in hint +- band, floored at a tiny positive."""
    hints = np.atleast_1d(hints)
    u = rng.uniform(-1.0, 1.0, size=(hints.shape[0], n))
    d = hints[:, None] + u * band
    return np.maximum(d, 1e-6)


def sample_along_ray(
    ray: Ray,
    max_depth: float,
    depth_hints: list[tuple[float, int]],
    n_strat: int,
    n_near: int,
    rng,
    near_clip: float = DEFAULT_NEAR_CLIP,
    near_band: float = DEFAULT_NEAR_BAND,
) -> SampleSet:
    """Merged, ascending sample set for one ray.

    depth_hints are (ray_length, sensor_id) pairs; non-positive or non-finite
    hints are skipped. max_depth must be positive.
    """
    if max_depth <= 0:
        raise ValueError("max_depth must be positive")
    parts = []
    if n_strat > 0:
        parts.append(stratified_depths(n_strat, near_clip, max_depth, rng)[0])
    for hint, _sensor in depth_hints:
        if not np.isfinite(hint) or hint <= 0:
            continue
        if n_near > 0:
            parts.append(near_band_depths(np.array([hint]), n_near, near_band, rng)[0])
    depths = np.sort(np.concatenate(parts)) if parts else np.empty(0)
    points = ray.origin[None, :] + depths[:, None] * ray.direction[None, :]
    return SampleSet(depths=depths, points=points)


def batch_sample_depths(
    hints: np.ndarray,
    hint_valid: np.ndarray,
    n_strat: int,
    n_near: int,
    rng,
    near_clip: float = DEFAULT_NEAR_CLIP,
    near_band: float = DEFAULT_NEAR_BAND,
    max_depth: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized sampling for R rays sharing a validity pattern.

    hints: (R, S) ray lengths per sensor; hint_valid: (R, S) bools, and every
    ray must have the same valid set (callers group rays by pattern first).
    Returns sorted depths (R, n_strat + n_near * S_valid).
    """
    hints = np.atleast_2d(hints)
    hint_valid = np.atleast_2d(hint_valid)
    r = hints.shape[0]
    valid_cols = np.flatnonzero(hint_valid[0])
    if not np.all(hint_valid == hint_valid[0]):
        raise ValueError("rays in one batch must share a hint-validity pattern")
    if max_depth is None:
        if valid_cols.size == 0:
            raise ValueError("rays without hints need an explicit max_depth")
        max_depth = hints[:, valid_cols].max(axis=1)
    else:
        max_depth = np.broadcast_to(np.asarray(max_depth, dtype=float), (r,))
    if np.any(max_depth <= near_clip):
        raise ValueError("max_depth must exceed the near clip")
    parts = []
    if n_strat > 0:
        u = rng.uniform(0.0, 1.0, size=(r, n_strat))
        parts.append(near_clip + (np.arange(n_strat) + u) * ((max_depth - near_clip)[:, None] / n_strat))
    for s in valid_cols:
        if n_near > 0:
            parts.append(near_band_depths(hints[:, s], n_near, near_band, rng))
    return np.sort(np.concatenate(parts, axis=1), axis=1)


def rays_from_pixels(pose: Pose, intrinsics, u, v) -> list[Ray]:
    """Spec-level Ray objects for a handful of pixels (tests / debugging)."""
    from .geometry import rays_for_pixels

    origins, dirs, _ = rays_for_pixels(pose, intrinsics, np.asarray(u), np.asarray(v))
    return [
        Ray(origin=o, direction=d, pixel=(int(uu), int(vv)))
        for o, d, uu, vv in zip(np.atleast_2d(origins), np.atleast_2d(dirs), np.atleast_1d(u), np.atleast_1d(v))
    ]
