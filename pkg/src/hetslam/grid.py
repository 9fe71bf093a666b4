"""Dense voxel grids of optimizable feature vectors with trilinear lookup.

Features live on grid vertices; a point interpolates the 8 vertices of its
enclosing cell. Both the blend (for feature gradients) and the blend weights
(for point gradients, used by pose tracking) are differentiated by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:
    import numba

    @numba.njit(fastmath=False)
    def _scatter_add(out, idx, contrib):  # pragma: no cover - jitted
        n, f = contrib.shape
        for i in range(n):
            j = idx[i]
            for k in range(f):
                out[j, k] += contrib[i, k]

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, contrib: np.ndarray) -> None:
    """out[idx[i]] += contrib[i] with deterministic (sequential) accumulation."""
    if _HAVE_NUMBA:
        _scatter_add(out, idx.astype(np.int64), np.ascontiguousarray(contrib))
    else:
        np.add.at(out, idx, contrib)


class OutOfBoundsError(ValueError):
    """Query point outside a grid's interpolation domain."""


# the 8 cell-corner offsets in (x, y, z) order
_CORNERS = np.array(
    [[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64
)


@dataclass
class FeatureGrid:
    """Axis-aligned dense grid of feature vectors on vertices.

    dims counts vertices per axis; the interpolation domain is the box
    [origin, origin + (dims - 1) * voxel_size].
    """

    level: str  # middle | fine | color
    voxel_size: float
    origin: np.ndarray  # (3,)
    dims: tuple[int, int, int]
    features: np.ndarray = field(default=None)  # (nx, ny, nz, F)
    feature_dim: int = 32

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        if any(d < 2 for d in self.dims):
            raise ValueError("grid needs at least 2 vertices per axis")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.features is None:
            self.features = np.zeros((*self.dims, self.feature_dim), dtype=np.float64)
        else:
            self.features = np.asarray(self.features)
            if self.features.shape[:3] != tuple(self.dims):
                raise ValueError("features shape does not match dims")
            self.feature_dim = self.features.shape[3]

    @classmethod
    def for_bounds(
        cls,
        level: str,
        lo: np.ndarray,
        hi: np.ndarray,
        voxel_size: float,
        feature_dim: int = 32,
        init: np.ndarray | None = None,
        dtype=np.float64,
    ) -> "FeatureGrid":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        dims = tuple(int(np.ceil((hi[a] - lo[a]) / voxel_size - 1e-9)) + 1 for a in range(3))
        g = cls(level=level, voxel_size=float(voxel_size), origin=lo, dims=dims,
                features=init, feature_dim=feature_dim)
        g.features = g.features.astype(dtype)
        return g

    @property
    def n_vertices(self) -> int:
        return int(np.prod(self.dims))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.array(self.dims) - 1) * self.voxel_size

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.origin) & (p <= self.upper), axis=1)

    def _locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell base indices (N, 3) and fractional coordinates (N, 3)."""
        g = (points - self.origin) / self.voxel_size
        base = np.floor(g).astype(np.int64)
        # points exactly on the upper face belong to the last cell
        base = np.clip(base, 0, np.array(self.dims) - 2)
        frac = g - base
        return base, frac

    def interpolation_weights(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat vertex indices (N, 8) and trilinear weights (N, 8)."""
        points = np.atleast_2d(np.asarray(points, dtype=self.features.dtype))
        base, frac = self._locate(points)
        corners = base[:, None, :] + _CORNERS[None, :, :]  # (N, 8, 3)
        nx, ny, nz = self.dims
        flat = (corners[..., 0] * ny + corners[..., 1]) * nz + corners[..., 2]
        # per-axis hat weights: (1 - frac) for offset 0, frac for offset 1
        w_axis = np.where(_CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
        weights = w_axis[..., 0] * w_axis[..., 1] * w_axis[..., 2]
        return flat, weights.astype(self.features.dtype)

    def interpolate(self, points: np.ndarray, check_bounds: bool = True):
        """Trilinear blend of the 8 enclosing vertex features.

        Returns (values (N, F), cache). Raises OutOfBoundsError when a point
        lies outside the interpolation domain and check_bounds is set.
        """
        points = np.atleast_2d(np.asarray(points, dtype=self.features.dtype))
        if check_bounds and not bool(np.all(self.contains(points))):
            raise OutOfBoundsError(f"point outside {self.level} grid bounds")
        flat, weights = self.interpolation_weights(points)
        feats = self.features.reshape(-1, self.feature_dim)
        out = np.zeros((points.shape[0], self.feature_dim), dtype=self.features.dtype)
        for c in range(8):
            out += weights[:, c, None] * feats[flat[:, c]]
        cache = (points, flat, weights)
        return out, cache

    def backward_features(self, cache, dout: np.ndarray, grad: np.ndarray | None = None) -> np.ndarray:
        """Accumulate d(loss)/d(features) into grad (allocated when None)."""
        _, flat, weights = cache
        if grad is None:
            grad = np.zeros_like(self.features)
        g2 = grad.reshape(-1, self.feature_dim)
        for c in range(8):
            scatter_add_rows(g2, flat[:, c], weights[:, c, None] * dout)
        return grad

    def backward_points(self, cache, dout: np.ndarray) -> np.ndarray:
        """d(loss)/d(points), (N, 3). Piecewise constant across cell faces."""
        points, flat, _ = cache
        base, frac = self._locate(points)
        feats = self.features.reshape(-1, self.feature_dim)
        # dot(dout, feature) per corner: (N, 8)
        fdot = np.empty((points.shape[0], 8), dtype=self.features.dtype)
        for c in range(8):
            fdot[:, c] = np.einsum("nf,nf->n", dout, feats[flat[:, c]])
        w_axis = np.where(_CORNERS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
        sign = np.where(_CORNERS == 1, 1.0, -1.0)  # (8, 3)
        dpoints = np.zeros((points.shape[0], 3), dtype=self.features.dtype)
        for a in range(3):
            others = [ax for ax in range(3) if ax != a]
            dw = sign[None, :, a] * w_axis[..., others[0]] * w_axis[..., others[1]]
            dpoints[:, a] = (fdot * dw).sum(axis=1) / self.voxel_size
        return dpoints
