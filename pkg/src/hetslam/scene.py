"""The optimizable world state: feature grids plus geometry/color decoders.

Occupancy decoding follows the residual scheme: a middle-resolution decoder
produces a base pre-activation and a fine-resolution decoder (which also sees
the middle features) adds a correction; a sigmoid maps the sum to [0, 1].
Color uses its own grid and decoder with sigmoid output per channel.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import FeatureGrid, OutOfBoundsError
from .mlp import MLP, PositionalEncoding, sigmoid
from . import rng as rngmod

MIDDLE_ONLY = "middle_only"
MIDDLE_PLUS_FINE = "middle_plus_fine"


@dataclass
class SceneGrads:
    """Gradient accumulators matching SceneModel's parameter groups."""

    middle: np.ndarray | None = None
    fine: np.ndarray | None = None
    color: np.ndarray | None = None
    f1: list | None = None
    f2: list | None = None
    g: list | None = None

    @staticmethod
    def _add_list(a, b):
        if a is None:
            return b
        for x, y in zip(a, b):
            x += y
        return a

    def accumulate(self, other: "SceneGrads") -> "SceneGrads":
        for name in ("middle", "fine", "color"):
            o = getattr(other, name)
            if o is not None:
                mine = getattr(self, name)
                setattr(self, name, o if mine is None else mine + o)
        for name in ("f1", "f2", "g"):
            o = getattr(other, name)
            if o is not None:
                setattr(self, name, self._add_list(getattr(self, name), o))
        return self


class SceneModel:
    """Bounded multi-resolution feature grids + decoders, all optimizable."""

    def __init__(
        self,
        bounds_lo,
        bounds_hi,
        middle_voxel: float = 0.32,
        fine_voxel: float = 0.16,
        feature_dim: int = 32,
        hidden_width: int = 32,
        n_hidden: int = 3,
        pe_bands: int = 4,
        seed: int = 0,
        dtype=np.float64,
    ):
        self.bounds_lo = np.asarray(bounds_lo, dtype=float)
        self.bounds_hi = np.asarray(bounds_hi, dtype=float)
        if np.any(self.bounds_hi <= self.bounds_lo):
            raise ValueError("empty bounds")
        self.dtype = np.dtype(dtype)
        self.pe = PositionalEncoding(pe_bands)
        self.middle = FeatureGrid.for_bounds("middle", self.bounds_lo, self.bounds_hi,
                                             middle_voxel, feature_dim, dtype=self.dtype)
        self.fine = FeatureGrid.for_bounds("fine", self.bounds_lo, self.bounds_hi,
                                           fine_voxel, feature_dim, dtype=self.dtype)
        self.color_grid = FeatureGrid.for_bounds("color", self.bounds_lo, self.bounds_hi,
                                                 fine_voxel, feature_dim, dtype=self.dtype)
        pe_dim = self.pe.out_dim
        hid = [hidden_width] * n_hidden
        self.f1 = MLP([pe_dim + feature_dim, *hid, 1],
                      rngmod.stream(seed, rngmod.PHASE_INIT, 1), dtype=self.dtype)
        self.f2 = MLP([pe_dim + 2 * feature_dim, *hid, 1],
                      rngmod.stream(seed, rngmod.PHASE_INIT, 2), final_zero=True, dtype=self.dtype)
        self.g = MLP([pe_dim + feature_dim, *hid, 3],
                     rngmod.stream(seed, rngmod.PHASE_INIT, 3), dtype=self.dtype)
        self.seed = int(seed)
        self._meta = dict(
            middle_voxel=middle_voxel, fine_voxel=fine_voxel, feature_dim=feature_dim,
            hidden_width=hidden_width, n_hidden=n_hidden, pe_bands=pe_bands, seed=int(seed),
        )

    # -- geometry helpers -------------------------------------------------

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.bounds_lo) & (p <= self.bounds_hi), axis=1)

    def normalize(self, points: np.ndarray) -> np.ndarray:
        span = self.bounds_hi - self.bounds_lo
        return ((points - self.bounds_lo) / span).astype(self.dtype)

    # -- decoding ----------------------------------------------------------

    def decode_batch(self, points: np.ndarray, stage: str, want_color: bool = False):
        """Occupancy (and optionally color) for a batch of in-bounds points.

        Returns (occ (N,), color (N,3) or None, cache) without bounds checks;
        callers either pre-clamp or pre-validate.
        """
        points = np.atleast_2d(np.asarray(points, dtype=self.dtype))
        enc, pe_phase = self.pe.forward(self.normalize(points))
        phi1, c_mid = self.middle.interpolate(points, check_bounds=False)
        z, f1_cache = self.f1.forward(np.concatenate([enc, phi1], axis=1))
        f2_cache = c_fine = None
        if stage == MIDDLE_PLUS_FINE:
            phi2, c_fine = self.fine.interpolate(points, check_bounds=False)
            z2, f2_cache = self.f2.forward(np.concatenate([enc, phi2, phi1], axis=1))
            z = z + z2
        elif stage != MIDDLE_ONLY:
            raise ValueError(f"unknown stage {stage!r}")
        occ = sigmoid(z[:, 0])
        color = g_cache = psi_cache = None
        if want_color:
            psi, psi_cache = self.color_grid.interpolate(points, check_bounds=False)
            rgb_z, g_cache = self.g.forward(np.concatenate([enc, psi], axis=1))
            color = sigmoid(rgb_z)
        cache = dict(points=points, stage=stage, occ=occ, color=color,
                     pe_phase=pe_phase, c_mid=c_mid, c_fine=c_fine, psi_cache=psi_cache,
                     f1_cache=f1_cache, f2_cache=f2_cache, g_cache=g_cache)
        return occ, color, cache

    def decode_backward(
        self,
        cache: dict,
        d_occ: np.ndarray,
        d_color: np.ndarray | None = None,
        need_param_grads: bool = True,
        need_point_grads: bool = False,
    ) -> tuple[SceneGrads, np.ndarray | None]:
        """Backward through decode_batch. Returns (SceneGrads, dpoints or None)."""
        occ = cache["occ"]
        dz = (d_occ * occ * (1.0 - occ))[:, None].astype(self.dtype)
        pe_dim = self.pe.out_dim
        fdim = self.middle.feature_dim
        dx1, g_f1 = self.f1.backward(cache["f1_cache"], dz, need_param_grads)
        denc = dx1[:, :pe_dim]
        dphi1 = dx1[:, pe_dim:]
        grads = SceneGrads()
        dphi2 = None
        if cache["stage"] == MIDDLE_PLUS_FINE:
            dx2, g_f2 = self.f2.backward(cache["f2_cache"], dz, need_param_grads)
            denc = denc + dx2[:, :pe_dim]
            dphi2 = dx2[:, pe_dim : pe_dim + fdim]
            dphi1 = dphi1 + dx2[:, pe_dim + fdim :]
            if need_param_grads:
                grads.f2 = g_f2
                grads.fine = self.fine.backward_features(cache["c_fine"], dphi2)
        if need_param_grads:
            grads.f1 = g_f1
            grads.middle = self.middle.backward_features(cache["c_mid"], dphi1)
        dpsi = None
        if d_color is not None:
            color = cache["color"]
            drgb_z = (d_color * color * (1.0 - color)).astype(self.dtype)
            dxg, g_g = self.g.backward(cache["g_cache"], drgb_z, need_param_grads)
            denc = denc + dxg[:, :pe_dim]
            dpsi = dxg[:, pe_dim:]
            if need_param_grads:
                grads.g = g_g
                grads.color = self.color_grid.backward_features(cache["psi_cache"], dpsi)
        dpoints = None
        if need_point_grads:
            span = (self.bounds_hi - self.bounds_lo).astype(self.dtype)
            dpoints = self.pe.backward(cache["pe_phase"], denc) / span
            dpoints += self.middle.backward_points(cache["c_mid"], dphi1)
            if dphi2 is not None:
                dpoints += self.fine.backward_points(cache["c_fine"], dphi2)
            if dpsi is not None:
                dpoints += self.color_grid.backward_points(cache["psi_cache"], dpsi)
        return grads, dpoints

    def decode_occupancy(self, point: np.ndarray, stage: str = MIDDLE_PLUS_FINE) -> np.ndarray:
        """Occupancy in (0, 1) at point(s); raises OutOfBoundsError outside bounds."""
        points = np.atleast_2d(np.asarray(point, dtype=self.dtype))
        if not bool(np.all(self.contains(points))):
            raise OutOfBoundsError("point outside model bounds")
        occ, _, _ = self.decode_batch(points, stage)
        return occ if np.ndim(point) > 1 else occ[0]

    def decode_color(self, point: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(point, dtype=self.dtype))
        if not bool(np.all(self.contains(points))):
            raise OutOfBoundsError("point outside model bounds")
        _, color, _ = self.decode_batch(points, MIDDLE_PLUS_FINE, want_color=True)
        return color if np.ndim(point) > 1 else color[0]

    # -- parameter plumbing -------------------------------------------------

    def param_groups(self) -> dict[str, list[np.ndarray]]:
        return {
            "middle": [self.middle.features],
            "fine": [self.fine.features],
            "color": [self.color_grid.features],
            "f1": self.f1.params,
            "f2": self.f2.params,
            "g": self.g.params,
        }

    def grads_for(self, grads: SceneGrads) -> dict[str, list[np.ndarray]]:
        out = {}
        if grads.middle is not None:
            out["middle"] = [grads.middle]
        if grads.fine is not None:
            out["fine"] = [grads.fine]
        if grads.color is not None:
            out["color"] = [grads.color]
        for name in ("f1", "f2", "g"):
            v = getattr(grads, name)
            if v is not None:
                out[name] = v
        return out

    @property
    def n_params(self) -> int:
        return int(sum(sum(p.size for p in ps) for ps in self.param_groups().values()))


# -- checkpoint container ----------------------------------------------------
#
# Deterministic binary layout (np.savez embeds zip timestamps, which breaks
# byte-identical reruns): magic, version, u64 header length, JSON header
# (sorted keys) describing metadata and array table, then raw array bytes.

_MAGIC = b"HSCK"
_VERSION = 1


def save_checkpoint(path, model: SceneModel, extra: dict[str, np.ndarray] | None = None,
                    extra_meta: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {
        "middle.features": model.middle.features,
        "fine.features": model.fine.features,
        "color.features": model.color_grid.features,
    }
    for name, net in (("f1", model.f1), ("f2", model.f2), ("g", model.g)):
        for i, p in enumerate(net.params):
            arrays[f"{name}.{i}"] = p
    if extra:
        arrays.update(extra)
    table = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        blob = a.tobytes()
        table.append(dict(name=name, dtype=str(a.dtype), shape=list(a.shape), offset=offset))
        blobs.append(blob)
        offset += len(blob)
    meta = dict(model._meta)
    meta["bounds_lo"] = model.bounds_lo.tolist()
    meta["bounds_hi"] = model.bounds_hi.tolist()
    meta["dtype"] = str(model.dtype)
    if extra_meta:
        meta["extra"] = extra_meta
    header = json.dumps({"meta": meta, "arrays": table}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[SceneModel, dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise IOError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise IOError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        payload = f.read()
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        a = np.frombuffer(payload, dtype=dt, count=n, offset=start).reshape(entry["shape"])
        arrays[entry["name"]] = a.copy()
    meta = header["meta"]
    model = SceneModel(
        meta["bounds_lo"], meta["bounds_hi"],
        middle_voxel=meta["middle_voxel"], fine_voxel=meta["fine_voxel"],
        feature_dim=meta["feature_dim"], hidden_width=meta["hidden_width"],
        n_hidden=meta["n_hidden"], pe_bands=meta["pe_bands"], seed=meta["seed"],
        dtype=np.dtype(meta["dtype"]),
    )
    model.middle.features[...] = arrays.pop("middle.features")
    model.fine.features[...] = arrays.pop("fine.features")
    model.color_grid.features[...] = arrays.pop("color.features")
    for name, net in (("f1", model.f1), ("f2", model.f2), ("g", model.g)):
        net.load_state([arrays.pop(f"{name}.{i}") for i in range(len(net.params))])
    return model, arrays, meta.get("extra", {})
