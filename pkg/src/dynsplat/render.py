"""Differentiable CPU splatting: covariance projection and alpha compositing.

The renderer is vectorized over splats and pixels: per-splat quantities are
(N,)-shaped tensors and the compositing stage works on (N, P) alpha maps with
an exclusive cumulative product supplying front-to-back transmittance. A
scalar per-pixel ``composite`` reference implements the same blending rule
directly and serves as the oracle in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "Camera",
    "Gaussian3D",
    "GaussianBatch",
    "RenderedImage",
    "build_covariance",
    "project",
    "composite",
    "render",
    "ALPHA_MAX",
    "ALPHA_MIN",
    "TRANSMITTANCE_FLOOR",
    "COV2D_DILATION",
]

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_FLOOR = 1e-4
COV2D_DILATION = 0.3
_DET_FLOOR = 1e-12


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    view: np.ndarray          # 4x4 world-to-camera
    focal: tuple[float, float]    # (fx, fy) pixels
    principal: tuple[float, float]  # (cx, cy) pixels
    size: tuple[int, int]         # (width, height) pixels
    near: float = 0.01

    def __post_init__(self):
        self.view = np.asarray(self.view, dtype=np.float64)
        if self.view.shape != (4, 4):
            raise ValueError("camera view must be 4x4")
        rot = self.view[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation block must be orthonormal")
        if self.focal[0] <= 0 or self.focal[1] <= 0:
            raise ValueError("focal lengths must be positive")
        if self.near <= 0:
            raise ValueError("near plane must be positive")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        rot = self.view[:3, :3]
        t = self.view[:3, 3]
        return -rot.T @ t

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), focal=64.0,
                size=(64, 64), near=0.01) -> "Camera":
        """Build a camera at ``eye`` looking toward ``target`` (+z into the scene)."""
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        forward = target - eye
        forward = forward / np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-12:
            up = np.array([0.0, 0.0, 1.0])
            right = np.cross(forward, up)
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])  # world -> camera rows
        view = np.eye(4)
        view[:3, :3] = rot
        view[:3, 3] = -rot @ eye
        w, h = size
        return cls(
            view=view,
            focal=(float(focal), float(focal)),
            principal=((w - 1) / 2.0, (h - 1) / 2.0),
            size=(int(w), int(h)),
            near=near,
        )


def _as_field(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


@dataclass
class Gaussian3D:
    """Explicit renderable primitive. Fields may be plain arrays or live tensors."""

    center: Tensor
    rotation: Tensor   # quaternion (w, x, y, z); renderer normalizes
    scale: Tensor      # positive per-axis lengths
    opacity: Tensor    # scalar in [0, 1]
    color: Tensor      # rgb in [0, 1]

    def __post_init__(self):
        self.center = _as_field(self.center)
        self.rotation = _as_field(self.rotation)
        self.scale = _as_field(self.scale)
        self.opacity = _as_field(self.opacity)
        self.color = _as_field(self.color)
        if np.linalg.norm(self.rotation.values) < 1e-12:
            raise ValueError("quaternion must be nonzero")
        if np.any(self.scale.values <= 0):
            raise ValueError("scale components must be positive")
        op = float(np.asarray(self.opacity.values).reshape(-1)[0])
        if not (0.0 <= op <= 1.0):
            raise ValueError("opacity must lie in [0, 1]")


@dataclass
class GaussianBatch:
    """Column-of-structs view of N Gaussians, the unit the renderer consumes."""

    centers: Tensor    # (N, 3)
    rotations: Tensor  # (N, 4) raw quaternions
    scales: Tensor     # (N, 3) positive
    opacities: Tensor  # (N,) in [0, 1]
    colors: Tensor     # (N, 3) in [0, 1]

    def __len__(self) -> int:
        return self.centers.shape[0]

    @classmethod
    def from_gaussians(cls, gaussians: list[Gaussian3D]) -> "GaussianBatch":
        return cls(
            centers=ad.stack([g.center for g in gaussians]),
            rotations=ad.stack([g.rotation for g in gaussians]),
            scales=ad.stack([g.scale for g in gaussians]),
            opacities=ad.stack(
                [ad.reshape(g.opacity, ()) for g in gaussians]
            ),
            colors=ad.stack([g.color for g in gaussians]),
        )

    def to_gaussians(self) -> list[Gaussian3D]:
        out = []
        for i in range(len(self)):
            out.append(Gaussian3D(
                center=Tensor(self.centers.values[i].copy()),
                rotation=Tensor(self.rotations.values[i].copy()),
                scale=Tensor(self.scales.values[i].copy()),
                opacity=Tensor(self.opacities.values[i].copy()),
                color=Tensor(self.colors.values[i].copy()),
            ))
        return out


@dataclass
class RenderedImage:
    pixels: Tensor          # (H, W, 3) in [0, 1]
    transmittance: Tensor   # (H, W) leftover background weight
    n_drawn: int = 0
    aux: dict = field(default_factory=dict)


# -- covariance ----------------------------------------------------------------


def _normalize_rows(x: Tensor) -> Tensor:
    norm = ad.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / norm


def _rotation_entries(q: Tensor) -> list[list[Tensor]]:
    """3x3 rotation entries from normalized (N, 4) quaternions, as (N,) tensors."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]


def _covariance_entries(rotations: Tensor, scales: Tensor) -> list[list[Tensor]]:
    """World covariance R^T S^T S R as a symmetric 3x3 of (N,) tensors."""
    q = _normalize_rows(rotations)
    r = _rotation_entries(q)
    s2 = [scales[:, i] * scales[:, i] for i in range(3)]
    cov = [[None] * 3 for _ in range(3)]
    for a in range(3):
        for b in range(a, 3):
            acc = r[0][a] * s2[0] * r[0][b]
            acc = acc + r[1][a] * s2[1] * r[1][b]
            acc = acc + r[2][a] * s2[2] * r[2][b]
            cov[a][b] = acc
            cov[b][a] = acc
    return cov


def build_covariance(rotation, scale) -> Tensor:
    """3x3 world covariance of a single Gaussian (symmetric PSD)."""
    rotation = _as_field(rotation)
    scale = _as_field(scale)
    if np.any(scale.values <= 0):
        raise ValueError("scale components must be positive")
    entries = _covariance_entries(
        ad.reshape(rotation, (1, 4)), ad.reshape(scale, (1, 3))
    )
    rows = [ad.stack([entries[a][b][0] for b in range(3)]) for a in range(3)]
    return ad.stack(rows)


# -- projection ----------------------------------------------------------------


def _view_rotated_cov(cov: list[list[Tensor]], rot: np.ndarray,
                      convention: str) -> list[list[Tensor]]:
    """Conjugate the world covariance with the camera rotation block.

    ``transposed``  : M = R Sigma R^T with R the world-to-camera rotation
                      (the splatting-literature composition for column vectors).
    ``as_printed``  : M = R^T Sigma R, the inner ordering of the printed
                      formula taken literally with the same stored matrix.
    """
    if convention == "transposed":
        rmat = rot
    elif convention == "as_printed":
        rmat = rot.T
    else:
        raise ValueError(f"unknown covariance convention {convention!r}")
    out = [[None] * 3 for _ in range(3)]
    for a in range(3):
        for b in range(a, 3):
            acc = None
            for c in range(3):
                for d in range(3):
                    coeff = rmat[a, c] * rmat[b, d]
                    if coeff == 0.0:
                        continue
                    term = cov[c][d] * coeff
                    acc = term if acc is None else acc + term
            out[a][b] = acc
            out[b][a] = acc
    return out


def _project_batch(batch: GaussianBatch, camera: Camera,
                   convention: str = "transposed"):
    """Project all Gaussians; returns per-splat tensors plus the kept-index array."""
    rot = camera.view[:3, :3]
    trans = camera.view[:3, 3]
    cam_pts = ad.matmul(batch.centers, Tensor(rot.T)) + Tensor(trans)
    tz_all = cam_pts[:, 2]
    keep = np.flatnonzero(tz_all.values > camera.near)
    if keep.size == 0:
        return None
    centers_kept = cam_pts[keep]
    tx, ty, tz = centers_kept[:, 0], centers_kept[:, 1], centers_kept[:, 2]

    cov = _covariance_entries(batch.rotations[keep], batch.scales[keep])
    m = _view_rotated_cov(cov, rot, convention)

    fx, fy = camera.focal
    cx, cy = camera.principal
    inv_z = 1.0 / tz
    a1 = inv_z * fx
    a2 = inv_z * fy
    b1 = tx * inv_z * inv_z * (-fx)
    b2 = ty * inv_z * inv_z * (-fy)

    c11 = a1 * a1 * m[0][0] + 2.0 * (a1 * b1) * m[0][2] + b1 * b1 * m[2][2] + COV2D_DILATION
    c22 = a2 * a2 * m[1][1] + 2.0 * (a2 * b2) * m[1][2] + b2 * b2 * m[2][2] + COV2D_DILATION
    c12 = (a1 * a2) * m[0][1] + (a1 * b2) * m[0][2] + (a2 * b1) * m[1][2] + (b1 * b2) * m[2][2]

    mean_x = tx * inv_z * fx + cx
    mean_y = ty * inv_z * fy + cy
    return {
        "keep": keep,
        "mean_x": mean_x,
        "mean_y": mean_y,
        "c11": c11,
        "c12": c12,
        "c22": c22,
        "depth": tz,
    }


def project(gaussian: Gaussian3D, camera: Camera,
            convention: str = "transposed"):
    """Project one Gaussian. Returns (mean2d, cov2d, depth) tensors, or None if culled."""
    batch = GaussianBatch.from_gaussians([gaussian])
    proj = _project_batch(batch, camera, convention)
    if proj is None:
        return None
    mean2d = ad.stack([proj["mean_x"][0], proj["mean_y"][0]])
    row0 = ad.stack([proj["c11"][0], proj["c12"][0]])
    row1 = ad.stack([proj["c12"][0], proj["c22"][0]])
    cov2d = ad.stack([row0, row1])
    return mean2d, cov2d, proj["depth"][0]


# -- compositing ----------------------------------------------------------------


def composite(splats, pixel, background) -> np.ndarray:
    """Front-to-back alpha blending at one pixel (reference, value-level).

    ``splats`` is a depth-ordered list of (mean2d, cov2d, opacity, color).
    Splats with singular 2x2 covariance are skipped; alphas below 1/255 do not
    contribute; blending stops once transmittance falls below 1e-4.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    color = np.zeros(3)
    transmittance = 1.0
    for mean2d, cov2d, opacity, splat_color in splats:
        if transmittance < TRANSMITTANCE_FLOOR:
            break
        mean2d = np.asarray(mean2d, dtype=np.float64)
        cov2d = np.asarray(cov2d, dtype=np.float64)
        det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] * cov2d[1, 0]
        if det <= _DET_FLOOR:
            continue
        d = pixel - mean2d
        quad = (cov2d[1, 1] * d[0] * d[0]
                - (cov2d[0, 1] + cov2d[1, 0]) * d[0] * d[1]
                + cov2d[0, 0] * d[1] * d[1]) / det
        alpha = float(opacity) * np.exp(-0.5 * quad)
        alpha = min(alpha, ALPHA_MAX)
        if alpha < ALPHA_MIN:
            continue
        color = color + np.asarray(splat_color, dtype=np.float64) * alpha * transmittance
        transmittance = transmittance * (1.0 - alpha)
    return color + transmittance * background


def _pixel_grid(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    w, h = camera.size
    px = np.tile(np.arange(w, dtype=np.float64), h)
    py = np.repeat(np.arange(h, dtype=np.float64), w)
    return px, py


def render(gaussians, camera: Camera, background=(0.0, 0.0, 0.0),
           convention: str = "transposed") -> RenderedImage:
    """Render a batch (or list) of Gaussians; differentiable w.r.t. all fields."""
    if isinstance(gaussians, list):
        if len(gaussians) == 0:
            return _background_image(camera, background)
        batch = GaussianBatch.from_gaussians(gaussians)
    else:
        batch = gaussians
        if len(batch) == 0:
            return _background_image(camera, background)

    proj = _project_batch(batch, camera, convention)
    if proj is None:
        return _background_image(camera, background)
    keep = proj["keep"]

    order = np.argsort(proj["depth"].values, kind="stable")
    mean_x = proj["mean_x"][order]
    mean_y = proj["mean_y"][order]
    c11 = proj["c11"][order]
    c12 = proj["c12"][order]
    c22 = proj["c22"][order]
    opac = batch.opacities[keep][order]
    colors = batch.colors[keep][order]

    det = c11 * c22 - c12 * c12
    valid = det.values > _DET_FLOOR
    safe_det = ad.clip(det, _DET_FLOOR, np.inf)
    i11 = c22 / safe_det
    i12 = c12 / safe_det
    i22 = c11 / safe_det

    w, h = camera.size
    px, py = _pixel_grid(camera)
    dx = Tensor(px[None, :]) - ad.reshape(mean_x, (-1, 1))
    dy = Tensor(py[None, :]) - ad.reshape(mean_y, (-1, 1))
    quad = (ad.reshape(i11, (-1, 1)) * (dx * dx)
            - 2.0 * ad.reshape(i12, (-1, 1)) * (dx * dy)
            + ad.reshape(i22, (-1, 1)) * (dy * dy))
    alpha = ad.reshape(opac, (-1, 1)) * ad.exp(-0.5 * quad)
    alpha = ad.clip(alpha, 0.0, ALPHA_MAX)

    # Value-level prepass fixes the contribution mask: alpha must clear 1/255,
    # the 2x2 covariance must be invertible, and blending stops per pixel once
    # running transmittance drops under the floor.
    gate = (alpha.values >= ALPHA_MIN) & valid[:, None]
    alpha_gated = alpha.values * gate
    t_before = np.cumprod(1.0 - alpha_gated, axis=0)
    t_before = np.roll(t_before, 1, axis=0)
    t_before[0, :] = 1.0
    gate &= t_before >= TRANSMITTANCE_FLOOR

    alpha_eff = alpha * Tensor(gate.astype(np.float64))
    trans = ad.exclusive_cumprod(1.0 - alpha_eff, axis=0)
    weights = alpha_eff * trans
    final_trans = ad.exp(ad.log(1.0 - alpha_eff).sum(axis=0))

    rgb = ad.matmul(ad.transpose(weights), colors)  # (P, 3)
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    rgb = rgb + ad.reshape(final_trans, (-1, 1)) * Tensor(bg)
    pixels = ad.reshape(rgb, (h, w, 3))
    return RenderedImage(
        pixels=pixels,
        transmittance=ad.reshape(final_trans, (h, w)),
        n_drawn=int(keep.size),
        aux={"keep": keep, "order": order},
    )


def _background_image(camera: Camera, background) -> RenderedImage:
    w, h = camera.size
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    pixels = np.tile(bg, (h, w, 1))
    return RenderedImage(
        pixels=Tensor(pixels.copy()),
        transmittance=Tensor(np.ones((h, w))),
        n_drawn=0,
    )
