"""Differentiable volumetric rendering of depth, color, and depth variance.

Termination weights follow w_i = o_i * prod_{j<i}(1 - o_j); rendered depth is
the weight-averaged sample depth, and the variance term is the weighted spread
of sample depths around the rendered depth. Backward passes propagate to the
scene parameters and, when requested, to the sample point positions (the hook
pose optimization uses).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, Intrinsics, rays_for_pixels
from .sampling import batch_sample_depths, SampleSet
from .scene import SceneModel, SceneGrads, MIDDLE_PLUS_FINE


@dataclass
class RenderResult:
    depth: np.ndarray  # (R,) ray lengths
    var_std: np.ndarray  # (R,) sqrt of weighted depth spread
    weights: np.ndarray  # (R, N)
    color: np.ndarray | None = None  # (R, 3)

    @property
    def weight_sum(self) -> np.ndarray:
        return self.weights.sum(axis=-1)


def compute_weights(occupancies: np.ndarray) -> np.ndarray:
    """Termination weights for occupancies in [0, 1], any leading batch shape."""
    o = np.asarray(occupancies)
    if np.any((o < 0) | (o > 1)):
        raise ValueError("occupancies must lie in [0, 1]")
    t = np.cumprod(1.0 - o, axis=-1)
    t_excl = np.concatenate([np.ones_like(t[..., :1]), t[..., :-1]], axis=-1)
    return o * t_excl


def compute_weights_backward(occupancies: np.ndarray, g_weights: np.ndarray) -> np.ndarray:
    """d(loss)/d(occupancies) given d(loss)/d(weights)."""
    o = np.asarray(occupancies)
    t = np.cumprod(1.0 - o, axis=-1)
    t_excl = np.concatenate([np.ones_like(t[..., :1]), t[..., :-1]], axis=-1)
    w = o * t_excl
    gw = g_weights * w
    # suffix sums: s_k = sum_{i > k} g_i w_i
    s = np.flip(np.cumsum(np.flip(gw, axis=-1), axis=-1), axis=-1)
    s = np.concatenate([s[..., 1:], np.zeros_like(s[..., :1])], axis=-1)
    one_minus = 1.0 - o
    # at o == 1 every later weight is zero, so the suffix term vanishes
    suffix = np.where(one_minus > 0, s / np.where(one_minus > 0, one_minus, 1.0), 0.0)
    return g_weights * t_excl - suffix


def render_samples(
    model: SceneModel,
    depths: np.ndarray,
    points: np.ndarray,
    stage: str = MIDDLE_PLUS_FINE,
    want_color: bool = False,
):
    """Render R rays from presampled points.

    depths: (R, N) ray lengths; points: (R, N, 3) world positions. Points are
    clamped into model bounds for decoding (clamped samples get zero point
    gradients). Returns (RenderResult, cache).
    """
    depths = np.atleast_2d(depths)
    r, n = depths.shape
    flat_pts = points.reshape(-1, 3)
    lo = model.bounds_lo
    hi = model.bounds_hi
    clamped = flat_pts.clip(lo, hi)
    was_clamped = np.any(flat_pts != clamped, axis=1)
    occ_flat, color_flat, dec_cache = model.decode_batch(clamped, stage, want_color)
    occ = occ_flat.reshape(r, n)
    w = compute_weights(occ)
    depth = (w * depths).sum(axis=1)
    spread = (w * (depth[:, None] - depths) ** 2).sum(axis=1)
    var_std = np.sqrt(np.maximum(spread, 0.0))
    color = None
    if want_color:
        color = np.einsum("rn,rnc->rc", w, color_flat.reshape(r, n, 3))
    result = RenderResult(depth=depth, var_std=var_std, weights=w, color=color)
    cache = dict(depths=depths, occ=occ, result=result, dec_cache=dec_cache,
                 was_clamped=was_clamped, color_samples=color_flat, stage=stage)
    return result, cache


def render_backward(
    model: SceneModel,
    cache: dict,
    d_depth: np.ndarray | None = None,
    d_var_std: np.ndarray | None = None,
    d_color: np.ndarray | None = None,
    need_param_grads: bool = True,
    need_point_grads: bool = False,
) -> tuple[SceneGrads, np.ndarray | None]:
    """Backward through render_samples.

    Returns (SceneGrads, d_points (R, N, 3) or None). Gradient conventions:
    the variance path uses subgradient 0 where var_std == 0.
    """
    depths = cache["depths"]
    occ = cache["occ"]
    res: RenderResult = cache["result"]
    r, n = depths.shape
    g_w = np.zeros_like(depths)
    if d_depth is not None:
        g_w += d_depth[:, None] * depths
    if d_var_std is not None:
        wsum = res.weights.sum(axis=1)
        s1 = res.depth * (wsum - 1.0)
        d_spread = (res.depth[:, None] - depths) ** 2 + 2.0 * depths * s1[:, None]
        safe = np.where(res.var_std > 0, res.var_std, 1.0)
        g_w += (d_var_std / (2.0 * safe) * (res.var_std > 0))[:, None] * d_spread
    d_color_samples = None
    if d_color is not None:
        colors = cache["color_samples"].reshape(r, n, 3)
        g_w += np.einsum("rc,rnc->rn", d_color, colors)
        d_color_samples = (d_color[:, None, :] * res.weights[..., None]).reshape(-1, 3)
    d_occ = compute_weights_backward(occ, g_w).reshape(-1)
    grads, d_points = model.decode_backward(
        cache["dec_cache"], d_occ, d_color_samples,
        need_param_grads=need_param_grads, need_point_grads=need_point_grads,
    )
    if d_points is not None:
        d_points = d_points.copy()
        d_points[cache["was_clamped"]] = 0.0
        d_points = d_points.reshape(r, n, 3)
    return grads, d_points


def render_ray(model: SceneModel, samples: SampleSet, want_color: bool = False) -> RenderResult:
    """Single-ray convenience wrapper over render_samples."""
    if samples.depths.size == 0:
        raise ValueError("empty sample set")
    result, _ = render_samples(
        model, samples.depths[None, :], samples.points[None, :, :], want_color=want_color
    )
    return RenderResult(
        depth=result.depth[0], var_std=result.var_std[0], weights=result.weights[0],
        color=None if result.color is None else result.color[0],
    )


def render_frame(
    model: SceneModel,
    pose: Pose,
    intrinsics: Intrinsics,
    pixels: np.ndarray,
    depth_hints: np.ndarray | None,
    rng,
    n_strat: int = 32,
    n_near: int = 16,
    near_clip: float = 0.05,
    near_band: float = 0.04,
    fallback_max_depth: float = 6.0,
    stage: str = MIDDLE_PLUS_FINE,
    want_color: bool = False,
) -> dict:
    """Render a set of pixels of one camera; deterministic given rng.

    pixels: (M, 2) integer (u, v). depth_hints: (M, S) z-depths per sensor
    (0/NaN = invalid) or None for unguided rays. Rays are grouped by their
    hint-validity pattern so mixed frames stay vectorizable. Returns per-pixel
    arrays in the input pixel order, with depths converted back to z-depth.
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=int))
    m = pixels.shape[0]
    out = dict(
        depth=np.zeros(m), var_std=np.zeros(m), weight_sum=np.zeros(m),
        color=np.zeros((m, 3)) if want_color else None,
    )
    if m == 0:
        return out
    u, v = pixels[:, 0], pixels[:, 1]
    if np.any(~intrinsics.contains(u, v)):
        raise ValueError("pixel outside image")
    origins, dirs, scale = rays_for_pixels(pose, intrinsics, u, v)
    if depth_hints is None:
        hints = np.zeros((m, 0))
    else:
        hints = np.atleast_2d(depth_hints) * scale[:, None]  # to ray lengths
    valid = np.isfinite(hints) & (hints > 0)
    patterns = valid @ (1 << np.arange(valid.shape[1])) if valid.shape[1] else np.zeros(m, dtype=int)
    for pat in np.unique(patterns):
        sel = np.flatnonzero(patterns == pat)
        h = hints[sel]
        hv = valid[sel]
        if pat == 0:
            depths = batch_sample_depths(
                np.zeros((sel.size, 0)), np.zeros((sel.size, 0), dtype=bool),
                n_strat, 0, rng, near_clip, near_band,
                max_depth=np.full(sel.size, fallback_max_depth),
            )
        else:
            depths = batch_sample_depths(h, hv, n_strat, n_near, rng, near_clip, near_band)
        pts = origins[sel][:, None, :] + depths[..., None] * dirs[sel][:, None, :]
        res, _ = render_samples(model, depths, pts, stage=stage, want_color=want_color)
        out["depth"][sel] = res.depth / scale[sel]  # back to z-depth
        out["var_std"][sel] = res.var_std / scale[sel]
        out["weight_sum"][sel] = res.weight_sum
        if want_color:
            out["color"][sel] = res.color
    return out
