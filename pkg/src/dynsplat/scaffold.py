"""Anchor-based canonical scene.

Anchors sit at voxel centers and carry learnable offsets, a log-space scaling,
a context feature, and two dynamics scalars. Neural Gaussians are derived on
demand: positions from offsets scaled by the anchor extent, attributes from
per-attribute MLP decoders fed with the feature and camera geometry. Growing
and pruning maintain the one-anchor-per-voxel layout from accumulated
gradient/opacity statistics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP
from .render import Camera

__all__ = [
    "Anchor",
    "AnchorSet",
    "AttributeDecoders",
    "init_from_points",
    "voxel_cell",
    "derive_positions",
    "derive_positions_batch",
    "derive_attributes",
    "derive_attributes_batch",
    "grow_anchors",
    "prune_anchors",
    "dedupe_voxels",
]


def voxel_cell(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel index per point (floor of position over voxel size)."""
    return np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)


@dataclass
class Anchor:
    """Read-only view of one anchor (values snapshot, activation applied)."""

    position: np.ndarray   # (3,)
    offsets: np.ndarray    # (k, 3)
    scaling: np.ndarray    # (3,) positive extent
    feature: np.ndarray    # (F,)
    d_global: float
    d_local: float


class AnchorSet:
    """Batched anchor storage; all learnable fields are (A, ...) tensors."""

    def __init__(self, positions, offsets, log_scaling, features,
                 d_global, d_local, voxel_size: float):
        self.positions = positions if isinstance(positions, Tensor) else Tensor(positions, requires_grad=True)
        self.offsets = offsets if isinstance(offsets, Tensor) else Tensor(offsets, requires_grad=True)
        self.log_scaling = log_scaling if isinstance(log_scaling, Tensor) else Tensor(log_scaling, requires_grad=True)
        self.features = features if isinstance(features, Tensor) else Tensor(features, requires_grad=True)
        self.d_global = d_global if isinstance(d_global, Tensor) else Tensor(d_global, requires_grad=True)
        self.d_local = d_local if isinstance(d_local, Tensor) else Tensor(d_local, requires_grad=True)
        self.voxel_size = float(voxel_size)
        self.reset_statistics()
        self.last_row_map: np.ndarray | None = None

    # -- shape helpers ---------------------------------------------------------

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def k(self) -> int:
        return self.offsets.shape[1]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def anchor(self, i: int) -> Anchor:
        return Anchor(
            position=self.positions.values[i].copy(),
            offsets=self.offsets.values[i].copy(),
            scaling=np.exp(self.log_scaling.values[i]),
            feature=self.features.values[i].copy(),
            d_global=float(self.d_global.values[i]),
            d_local=float(self.d_local.values[i]),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {
            "positions": self.positions,
            "offsets": self.offsets,
            "log_scaling": self.log_scaling,
            "features": self.features,
            "d_global": self.d_global,
            "d_local": self.d_local,
        }

    def occupied_cells(self) -> set[tuple[int, int, int]]:
        cells = voxel_cell(self.positions.values, self.voxel_size)
        return {tuple(c) for c in cells}

    def check_one_per_voxel(self) -> bool:
        cells = voxel_cell(self.positions.values, self.voxel_size)
        return len({tuple(c) for c in cells}) == len(self)

    # -- statistics -------------------------------------------------------------

    def reset_statistics(self) -> None:
        a, k = len(self), self.k if len(self) else 0
        self.grad_sum = np.zeros((a, k))
        self.grad_count = np.zeros((a, k), dtype=np.int64)
        self.opacity_sum = np.zeros(a)
        self.opacity_count = np.zeros(a, dtype=np.int64)

    def accumulate_growth(self, center_grads: np.ndarray) -> None:
        """Add per-Gaussian positional-gradient norms, shaped (A, k, 3)."""
        norms = np.linalg.norm(center_grads.reshape(len(self), self.k, 3), axis=2)
        self.grad_sum += norms
        self.grad_count += 1

    def accumulate_opacity(self, opacities: np.ndarray) -> None:
        """Add per-anchor mean derived opacity, shaped (A, k) or (A*k,)."""
        per_anchor = opacities.reshape(len(self), self.k).mean(axis=1)
        self.opacity_sum += per_anchor
        self.opacity_count += 1


def init_from_points(points, voxel_size: float, k: int, feat_dim: int,
                     rng: np.random.Generator) -> AnchorSet:
    """One anchor per occupied voxel, placed at the voxel center.

    Offsets start at zero, features from the seeded normal(0, 0.01), dynamics
    scalars at zero, and the anchor extent at the voxel size.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
        raise ValueError("init_from_points needs a non-empty (N, 3) point array")
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    cells = voxel_cell(points, voxel_size)
    seen: dict[tuple[int, int, int], None] = {}
    for c in cells:
        seen.setdefault(tuple(c), None)
    centers = np.array(
        [(np.asarray(c, dtype=np.float64) + 0.5) * voxel_size for c in seen],
    ).reshape(-1, 3)
    a = centers.shape[0]
    return AnchorSet(
        positions=centers,
        offsets=np.zeros((a, k, 3)),
        log_scaling=np.full((a, 3), np.log(voxel_size)),
        features=rng.normal(0.0, 0.01, size=(a, feat_dim)),
        d_global=np.zeros(a),
        d_local=np.zeros(a),
        voxel_size=voxel_size,
    )


# -- derivation ----------------------------------------------------------------


def derive_positions_batch(positions: Tensor, offsets: Tensor,
                           log_scaling: Tensor) -> Tensor:
    """Neural-Gaussian centers mu = x_v + O_i * l_v, shaped (A, k, 3)."""
    scaling = ad.exp(log_scaling)
    return ad.reshape(positions, (-1, 1, 3)) + offsets * ad.reshape(scaling, (-1, 1, 3))


def derive_positions(anchor: Anchor) -> np.ndarray:
    """Spec-level single-anchor derivation (value-level)."""
    return anchor.position[None, :] + anchor.offsets * anchor.scaling[None, :]


class AttributeDecoders:
    """Per-attribute MLPs mapping [feature, distance, direction] to k Gaussians."""

    def __init__(self, feat_dim: int, k: int, hidden: int,
                 rng: np.random.Generator):
        in_dim = feat_dim + 4
        self.k = k
        self.opacity = MLP([in_dim, hidden, k], rng)
        self.color = MLP([in_dim, hidden, k * 3], rng)
        self.quat_scale = MLP([in_dim, hidden, k * 7], rng)

    def parameters(self) -> list[Tensor]:
        return (self.opacity.parameters() + self.color.parameters()
                + self.quat_scale.parameters())


def _view_geometry(positions: Tensor, camera: Camera) -> Tensor:
    """[distance, unit direction] from the camera to each anchor, shaped (A, 4)."""
    delta = positions - Tensor(camera.position)
    dist = ad.sqrt((delta * delta).sum(axis=1, keepdims=True))
    degenerate = dist.values[:, 0] < 1e-12
    safe = ad.clip(dist, 1e-12, np.inf)
    direction = delta / safe
    if degenerate.any():
        warnings.warn("camera coincides with an anchor; using +z view direction")
        mask = Tensor(degenerate[:, None].astype(np.float64))
        fallback = Tensor(np.array([0.0, 0.0, 1.0]))
        direction = direction * (1.0 - mask) + fallback * mask
    return ad.concat([dist, direction], axis=1)


def derive_attributes_batch(features: Tensor, positions: Tensor, camera: Camera,
                            decoders: AttributeDecoders, log_scaling: Tensor):
    """Decode per-Gaussian attributes for every anchor.

    Returns (opacity (A, k), color (A, k, 3), quat (A, k, 4) normalized,
    scale (A, k, 3) positive). Scales are exp(raw) * l_v.
    """
    a = features.shape[0]
    k = decoders.k
    inputs = ad.concat([features, _view_geometry(positions, camera)], axis=1)
    opacity = ad.sigmoid(decoders.opacity(inputs))
    color = ad.sigmoid(ad.reshape(decoders.color(inputs), (a, k, 3)))
    qs = decoders.quat_scale(inputs)
    quat_raw = ad.reshape(qs[:, : k * 4], (a, k, 4))
    norm = ad.sqrt((quat_raw * quat_raw).sum(axis=2, keepdims=True))
    quat = quat_raw / ad.clip(norm, 1e-12, np.inf)
    scale_raw = ad.reshape(qs[:, k * 4:], (a, k, 3))
    anchor_extent = ad.reshape(ad.exp(log_scaling), (a, 1, 3))
    scale = ad.exp(scale_raw) * anchor_extent
    return opacity, color, quat, scale


def derive_attributes(feature, camera: Camera, position, decoders: AttributeDecoders,
                      scaling=None):
    """Single-anchor attribute derivation (spec signature).

    ``scaling`` defaults to ones so the returned scale is exp(raw) alone.
    Returns (opacity (k, 1), color (k, 3), quaternion (k, 4), scale (k, 3)).
    """
    feature = feature if isinstance(feature, Tensor) else Tensor(feature)
    position = position if isinstance(position, Tensor) else Tensor(position)
    if scaling is None:
        log_scaling = Tensor(np.zeros((1, 3)))
    else:
        log_scaling = Tensor(np.log(np.asarray(scaling, dtype=np.float64))[None, :])
    opacity, color, quat, scale = derive_attributes_batch(
        ad.reshape(feature, (1, -1)), ad.reshape(position, (1, 3)),
        camera, decoders, log_scaling,
    )
    k = decoders.k
    return (
        ad.reshape(opacity, (k, 1)),
        ad.reshape(color, (k, 3)),
        ad.reshape(quat, (k, 4)),
        ad.reshape(scale, (k, 3)),
    )


# -- growing / pruning -----------------------------------------------------------


def _rebuild(set_: AnchorSet, keep_rows: np.ndarray,
             new_rows: dict[str, np.ndarray] | None) -> None:
    """Replace anchor tensors with kept rows plus optional appended rows."""
    fields = {
        "positions": set_.positions,
        "offsets": set_.offsets,
        "log_scaling": set_.log_scaling,
        "features": set_.features,
        "d_global": set_.d_global,
        "d_local": set_.d_local,
    }
    n_new = 0 if new_rows is None else next(iter(new_rows.values())).shape[0]
    row_map = np.concatenate([keep_rows, np.full(n_new, -1, dtype=np.int64)])
    for name, old in fields.items():
        vals = old.values[keep_rows]
        if new_rows is not None:
            vals = np.concatenate([vals, new_rows[name]], axis=0)
        setattr(set_, name, Tensor(vals, requires_grad=True))
    set_.last_row_map = row_map
    set_.reset_statistics()


def grow_anchors(set_: AnchorSet, threshold_grad: float) -> int:
    """Add anchors at unoccupied voxels under high-gradient neural Gaussians."""
    if len(set_) == 0:
        return 0
    counts = np.maximum(set_.grad_count, 1)
    mean_grad = set_.grad_sum / counts
    candidates = np.argwhere((mean_grad > threshold_grad) & (set_.grad_count > 0))
    if candidates.size == 0:
        set_.last_row_map = np.arange(len(set_), dtype=np.int64)
        set_.reset_statistics()
        return 0

    centers = derive_positions_batch(
        set_.positions, set_.offsets, set_.log_scaling
    ).values
    occupied = set_.occupied_cells()
    new_rows = {name: [] for name in
                ("positions", "offsets", "log_scaling", "features", "d_global", "d_local")}
    added = 0
    for ai, gi in candidates:
        cell = tuple(voxel_cell(centers[ai, gi][None, :], set_.voxel_size)[0])
        if cell in occupied:
            continue
        occupied.add(cell)
        center = (np.asarray(cell, dtype=np.float64) + 0.5) * set_.voxel_size
        new_rows["positions"].append(center)
        new_rows["offsets"].append(np.zeros((set_.k, 3)))
        new_rows["log_scaling"].append(set_.log_scaling.values[ai].copy())
        new_rows["features"].append(set_.features.values[ai].copy())
        new_rows["d_global"].append(float(set_.d_global.values[ai]))
        new_rows["d_local"].append(float(set_.d_local.values[ai]))
        added += 1
    keep = np.arange(len(set_), dtype=np.int64)
    if added:
        stacked = {name: np.asarray(rows, dtype=np.float64) for name, rows in new_rows.items()}
        _rebuild(set_, keep, stacked)
    else:
        set_.last_row_map = keep
        set_.reset_statistics()
    return added


def prune_anchors(set_: AnchorSet, threshold_opacity: float) -> int:
    """Remove anchors whose running-mean derived opacity fell below the threshold."""
    if len(set_) == 0:
        return 0
    counts = np.maximum(set_.opacity_count, 1)
    mean_opacity = np.where(set_.opacity_count > 0,
                            set_.opacity_sum / counts, np.inf)
    keep = np.flatnonzero(mean_opacity >= threshold_opacity)
    if keep.size == 0:
        warnings.warn("pruning would remove every anchor; keeping the best one")
        keep = np.array([int(np.argmax(mean_opacity))], dtype=np.int64)
    removed = len(set_) - keep.size
    _rebuild(set_, keep, None)
    return removed


def dedupe_voxels(set_: AnchorSet) -> int:
    """Drop anchors that drifted into an occupied voxel (first occupant wins)."""
    cells = voxel_cell(set_.positions.values, set_.voxel_size)
    seen: set[tuple[int, int, int]] = set()
    keep = []
    for i, c in enumerate(map(tuple, cells)):
        if c in seen:
            continue
        seen.add(c)
        keep.append(i)
    removed = len(set_) - len(keep)
    if removed:
        warnings.warn(f"{removed} anchors drifted into occupied voxels; deduplicated")
        _rebuild(set_, np.asarray(keep, dtype=np.int64), None)
    return removed
