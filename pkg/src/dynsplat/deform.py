"""Global-to-local motion machinery.

A hexplane factorizes the 4D (x, y, z, t) feature field into six 2D planes
per scale; a query bilinearly interpolates each plane and multiplies the six
results, concatenating across scales. Deformation decoders turn the feature
into per-head deltas. Anchor dynamics gate the deltas: a straight-through
binary mask on the global scalar and a plain sigmoid on the local one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, Linear
from .render import Gaussian3D, GaussianBatch
from .scaffold import Anchor

__all__ = [
    "HexPlane",
    "DeformDecoder",
    "CanonicalTimes",
    "hexplane_query",
    "mask_dynamics",
    "canonical_time_of",
    "gad_deform",
    "gad_deform_batch",
    "lgd_deform",
    "lgd_deform_batch",
    "PLANE_PAIRS",
]

# (axis_a, axis_b) with axis 3 = time
PLANE_PAIRS = (("xy", 0, 1), ("xz", 0, 2), ("yz", 1, 2),
               ("xt", 0, 3), ("yt", 1, 3), ("zt", 2, 3))


class HexPlane:
    """Six 2D feature-plane grids per scale over a bounded spatial box."""

    def __init__(self, resolution, channels: int, bounds_lo, bounds_hi,
                 n_scales: int = 2, multiplier: int = 2,
                 rng: np.random.Generator | None = None, init_std: float = 0.01):
        self.base_resolution = tuple(int(r) for r in resolution)
        if len(self.base_resolution) != 4:
            raise ValueError("hexplane resolution must be (Rx, Ry, Rz, Rt)")
        self.channels = int(channels)
        self.bounds_lo = np.asarray(bounds_lo, dtype=np.float64)
        self.bounds_hi = np.asarray(bounds_hi, dtype=np.float64)
        if np.any(self.bounds_hi <= self.bounds_lo):
            raise ValueError("hexplane bounds must be a nonempty box")
        self.n_scales = int(n_scales)
        self.multiplier = int(multiplier)
        self.planes: list[dict[str, Tensor]] = []
        for s in range(self.n_scales):
            res = [r * self.multiplier**s for r in self.base_resolution]
            level = {}
            for name, a, b in PLANE_PAIRS:
                shape = (res[a], res[b], self.channels)
                if rng is None:
                    vals = np.ones(shape)
                else:
                    vals = 1.0 + rng.normal(0.0, init_std, size=shape)
                level[name] = Tensor(vals, requires_grad=True)
            self.planes.append(level)

    @property
    def out_dim(self) -> int:
        return self.channels * self.n_scales

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for s, level in enumerate(self.planes):
            for name, t in level.items():
                out[f"s{s}.{name}"] = t
        return out

    def scale_resolution(self, s: int) -> tuple[int, int, int, int]:
        return tuple(r * self.multiplier**s for r in self.base_resolution)

    def query(self, xyz: Tensor, t: float) -> Tensor:
        return hexplane_query(self, xyz, t)


def _bilinear(plane: Tensor, u: Tensor, v: Tensor) -> Tensor:
    """Sample a (R1, R2, C) grid at fractional coords (u, v), both (N,)."""
    r1, r2, c = plane.shape
    i0 = np.clip(np.floor(u.values).astype(np.int64), 0, max(r1 - 2, 0))
    j0 = np.clip(np.floor(v.values).astype(np.int64), 0, max(r2 - 2, 0))
    fu = ad.reshape(u - Tensor(i0.astype(np.float64)), (-1, 1))
    fv = ad.reshape(v - Tensor(j0.astype(np.float64)), (-1, 1))
    flat = ad.reshape(plane, (r1 * r2, c))
    base = i0 * r2 + j0
    g00 = flat[base]
    g10 = flat[base + r2] if r1 > 1 else g00
    g01 = flat[base + 1] if r2 > 1 else g00
    g11 = flat[base + r2 + 1] if (r1 > 1 and r2 > 1) else g00
    one = 1.0
    return (g00 * ((one - fu) * (one - fv)) + g10 * (fu * (one - fv))
            + g01 * ((one - fu) * fv) + g11 * (fu * fv))


def hexplane_query(plane: HexPlane, xyz: Tensor, t: float) -> Tensor:
    """Interpolated hexplane feature at (x, y, z, t); output (N, C * n_scales).

    Spatial coordinates outside the bounds are clamped (with a warning); the
    six per-plane bilinear samples are multiplied elementwise and scale
    results concatenated.
    """
    if not isinstance(xyz, Tensor):
        xyz = Tensor(np.asarray(xyz, dtype=np.float64))
    if xyz.ndim == 1:
        xyz = ad.reshape(xyz, (1, 3))
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise ValueError("hexplane time coordinate must lie in [0, 1]")
    span = plane.bounds_hi - plane.bounds_lo
    unit = (xyz - Tensor(plane.bounds_lo)) / Tensor(span)
    if np.any(unit.values < -1e-9) or np.any(unit.values > 1.0 + 1e-9):
        warnings.warn("hexplane query outside bounds; clamping to the boundary")
    unit = ad.clip(unit, 0.0, 1.0)
    n = unit.shape[0]
    outputs = []
    for s in range(plane.n_scales):
        res = plane.scale_resolution(s)
        coords = []
        for axis in range(3):
            coords.append(unit[:, axis] * float(res[axis] - 1))
        t_coord = Tensor(np.full(n, t * (res[3] - 1), dtype=np.float64))
        coords.append(t_coord)
        product = None
        for name, a, b in PLANE_PAIRS:
            sample = _bilinear(plane.planes[s][name], coords[a], coords[b])
            product = sample if product is None else product * sample
        outputs.append(product)
    return ad.concat(outputs, axis=1)


class DeformDecoder:
    """Shared trunk MLP plus named linear heads, heads zero-initialized."""

    def __init__(self, in_dim: int, hidden: int, heads: dict[str, int],
                 rng: np.random.Generator):
        self.trunk = MLP([in_dim, hidden, hidden], rng)
        self.heads = {name: Linear(hidden, dim, zero_init=True)
                      for name, dim in heads.items()}

    def __call__(self, features: Tensor) -> dict[str, Tensor]:
        h = ad.relu(self.trunk(features))
        return {name: head(h) for name, head in self.heads.items()}

    def parameters(self) -> list[Tensor]:
        params = self.trunk.parameters()
        for head in self.heads.values():
            params += head.parameters()
        return params

    def zero_heads(self) -> None:
        for head in self.heads.values():
            head.weight.values[:] = 0.0
            head.bias.values[:] = 0.0

    @classmethod
    def for_gad(cls, in_dim: int, hidden: int, feat_dim: int, k: int,
                rng: np.random.Generator) -> "DeformDecoder":
        return cls(in_dim, hidden,
                   {"pos": 3, "feat": feat_dim, "offset": k * 3, "scale": 3}, rng)

    @classmethod
    def for_lgd(cls, in_dim: int, hidden: int,
                rng: np.random.Generator) -> "DeformDecoder":
        return cls(in_dim, hidden,
                   {"pos": 3, "quat": 4, "scale": 3, "opacity": 1}, rng)


def mask_dynamics(d_global: Tensor, epsilon: float) -> Tensor:
    """Straight-through binary dynamics mask.

    Forward is the exact indicator [sigmoid(d) > epsilon] in {0, 1}; the
    gradient is the sigmoid derivative, as if the indicator and stop-gradient
    wrapper were absent.
    """
    if not isinstance(d_global, Tensor):
        d_global = Tensor(np.asarray(d_global, dtype=np.float64))
    soft = ad.sigmoid(d_global)
    hard = (soft.values > epsilon).astype(np.float64)
    return ad.straight_through(hard, soft)


@dataclass
class CanonicalTimes:
    """Interior segment boundaries [t_1, ..., t_{l-1}]; t_0 = 0 is implicit."""

    t_c: np.ndarray

    def __post_init__(self):
        self.t_c = np.asarray(self.t_c, dtype=np.float64)
        if self.t_c.size and (np.any(np.diff(self.t_c) <= 0)
                              or self.t_c[0] <= 0 or self.t_c[-1] >= 1):
            raise ValueError("canonical times must be strictly increasing in (0, 1)")

    @property
    def l(self) -> int:
        return self.t_c.size + 1

    @classmethod
    def uniform(cls, segments: int) -> "CanonicalTimes":
        if segments < 1:
            raise ValueError("need at least one segment")
        return cls(np.arange(1, segments) / segments)

    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], self.t_c, [1.0]])


def canonical_time_of(times: CanonicalTimes, t: float) -> tuple[int, float]:
    """Segment index containing ``t`` and that segment's midpoint time."""
    if not (0.0 <= t <= 1.0):
        raise ValueError("timestamp must lie in [0, 1]")
    bounds = times.boundaries()
    j = int(np.searchsorted(bounds, t, side="right") - 1)
    j = min(max(j, 0), times.l - 1)
    return j, float((bounds[j] + bounds[j + 1]) / 2.0)


@dataclass
class DeformedAnchorFields:
    """GAD output: deformed batched anchor fields (still on the tape)."""

    positions: Tensor
    features: Tensor
    offsets: Tensor
    log_scaling: Tensor
    mask: Tensor
    local_gate: Tensor
    deltas: dict = field(default_factory=dict)


def gad_deform_batch(positions: Tensor, features: Tensor, offsets: Tensor,
                     log_scaling: Tensor, d_global: Tensor, d_local: Tensor,
                     plane: HexPlane, decoder: DeformDecoder, t_c: float,
                     epsilon: float, mask_enabled: bool = True) -> DeformedAnchorFields:
    """Deform every anchor to the canonical time of its segment.

    Position updates are gated by the binary global-dynamics mask; feature,
    offset, and scaling updates are scaled by sigmoid(d_local). The scaling
    delta lands on the log-space parameter so the exponential activation stays
    positive. With the mask disabled both gates are exact ones.
    """
    a = positions.shape[0]
    k = offsets.shape[1]
    feats = hexplane_query(plane, positions, t_c)
    deltas = decoder(feats)
    if mask_enabled:
        mask = ad.reshape(mask_dynamics(d_global, epsilon), (a, 1))
        local_gate = ad.reshape(ad.sigmoid(d_local), (a, 1))
    else:
        mask = Tensor(np.ones((a, 1)))
        local_gate = Tensor(np.ones((a, 1)))
    new_positions = positions + mask * deltas["pos"]
    new_features = features + deltas["feat"] * local_gate
    offset_delta = ad.reshape(deltas["offset"], (a, k, 3))
    new_offsets = offsets + offset_delta * ad.reshape(local_gate, (a, 1, 1))
    new_log_scaling = log_scaling + deltas["scale"] * local_gate
    return DeformedAnchorFields(
        positions=new_positions,
        features=new_features,
        offsets=new_offsets,
        log_scaling=new_log_scaling,
        mask=mask,
        local_gate=local_gate,
        deltas=deltas,
    )


def gad_deform(anchor: Anchor, plane: HexPlane, decoder: DeformDecoder,
               t_c: float, epsilon: float, mask_enabled: bool = True) -> Anchor:
    """Single-anchor GAD (spec signature); returns a value-level Anchor."""
    out = gad_deform_batch(
        Tensor(anchor.position[None, :]),
        Tensor(anchor.feature[None, :]),
        Tensor(anchor.offsets[None, :, :]),
        Tensor(np.log(anchor.scaling)[None, :]),
        Tensor(np.array([anchor.d_global])),
        Tensor(np.array([anchor.d_local])),
        plane, decoder, t_c, epsilon, mask_enabled,
    )
    return Anchor(
        position=out.positions.values[0].copy(),
        offsets=out.offsets.values[0].copy(),
        scaling=np.exp(out.log_scaling.values[0]),
        feature=out.features.values[0].copy(),
        d_global=anchor.d_global,
        d_local=anchor.d_local,
    )


def lgd_deform_batch(batch: GaussianBatch, plane: HexPlane,
                     decoder: DeformDecoder, t: float) -> GaussianBatch:
    """Deform spawned Gaussians to the target timestamp.

    Center and quaternion deltas are additive (quaternions re-normalized by
    the renderer), the scale delta is applied in log space, and opacity is
    re-clamped to [0, 1]. Zero deltas reproduce the input exactly.
    """
    n = len(batch)
    feats = hexplane_query(plane, batch.centers, t)
    deltas = decoder(feats)
    centers = batch.centers + deltas["pos"]
    rotations = batch.rotations + deltas["quat"]
    scales = batch.scales * ad.exp(deltas["scale"])
    opacity_delta = ad.reshape(deltas["opacity"], (n,))
    opacities = ad.clip(batch.opacities + opacity_delta, 0.0, 1.0)
    return GaussianBatch(
        centers=centers,
        rotations=rotations,
        scales=scales,
        opacities=opacities,
        colors=batch.colors,
    )


def lgd_deform(gaussians: list[Gaussian3D], plane: HexPlane,
               decoder: DeformDecoder, t: float) -> list[Gaussian3D]:
    """List-based LGD (spec signature); quaternions normalized in the output."""
    batch = GaussianBatch.from_gaussians(gaussians)
    out = lgd_deform_batch(batch, plane, decoder, t)
    norm = np.linalg.norm(out.rotations.values, axis=1, keepdims=True)
    rotations = out.rotations.values / np.maximum(norm, 1e-12)
    result = []
    for i in range(len(gaussians)):
        result.append(Gaussian3D(
            center=out.centers.values[i].copy(),
            rotation=rotations[i].copy(),
            scale=out.scales.values[i].copy(),
            opacity=float(out.opacities.values[i]),
            color=out.colors.values[i].copy(),
        ))
    return result
