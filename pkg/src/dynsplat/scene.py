"""Synthetic dynamic scenes: Gaussian clusters on rigid sinusoidal paths with
per-Gaussian jitter, rendered to ground-truth frames by the same splatting
renderer the model trains against."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import TrainConfig
from .render import Camera, GaussianBatch, render

__all__ = ["SceneSpec", "SyntheticScene", "generate_scene"]


@dataclass
class SceneSpec:
    seed: int = 0
    clusters: int = 3
    gaussians_per_cluster: int = 8
    frames: int = 24
    cameras: int = 3
    global_amp: float = 0.25
    local_amp: float = 0.03
    motion_freq: float = 1.0
    motion_profile: str = "sine"  # or "bursts": rest poses with rapid moves
    static_clusters: int = 0
    monocular: bool = False
    radius: float = 1.0
    resolution: int = 32
    holdout_every: int = 8
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.resolution > 256:
            raise ValueError("scene resolution is capped at 256")
        if self.frames < 2 or self.clusters < 1 or self.gaussians_per_cluster < 1:
            raise ValueError("scene needs at least 2 frames and 1 Gaussian")

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "SceneSpec":
        return cls(
            seed=cfg.scene_seed,
            clusters=cfg.scene_clusters,
            gaussians_per_cluster=cfg.scene_gaussians_per_cluster,
            frames=cfg.scene_frames,
            cameras=cfg.scene_cameras,
            global_amp=cfg.scene_global_amp,
            local_amp=cfg.scene_local_amp,
            motion_freq=cfg.scene_motion_freq,
            motion_profile=cfg.scene_motion_profile,
            static_clusters=cfg.scene_static_clusters,
            monocular=cfg.scene_monocular,
            radius=cfg.scene_radius,
            resolution=cfg.resolution,
            holdout_every=cfg.holdout_every,
            background=cfg.background,
        )


class SyntheticScene:
    """Ground-truth Gaussians with parametric motion plus rendered frames."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        c, g = spec.clusters, spec.gaussians_per_cluster

        # per-cluster rigid trajectory (global motion)
        self.cluster_base = rng.uniform(-0.55, 0.55, size=(c, 3)) * spec.radius
        dirs = rng.normal(size=(c, 3))
        self.cluster_dir = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        self.cluster_freq = rng.uniform(0.4, 0.9, size=c) * spec.motion_freq
        self.cluster_phase = rng.uniform(0.0, 1.0, size=c)
        # burst profile: each cluster holds rest poses and moves rapidly
        # between them (interval-localized global motion)
        if spec.motion_profile not in ("sine", "bursts"):
            raise ValueError(f"unknown motion profile {spec.motion_profile!r}")
        self.n_bursts = max(1, int(round(2 * spec.motion_freq)))
        times = rng.uniform(0.15, 0.85, size=(c, self.n_bursts))
        self.burst_times = np.sort(times, axis=1)
        steps = rng.normal(size=(c, self.n_bursts, 3))
        self.burst_steps = steps / np.linalg.norm(steps, axis=2, keepdims=True)
        self.burst_width = 0.05
        # amplitude profile: the first static_clusters clusters do not move
        self.cluster_amp = np.full(c, spec.global_amp)
        self.jitter_amp = np.full(c, spec.local_amp)
        n_static = min(max(spec.static_clusters, 0), c)
        self.cluster_amp[:n_static] = 0.0
        self.jitter_amp[:n_static] = 0.0

        # per-Gaussian placement and sinusoidal jitter (local motion)
        self.offsets = rng.normal(0.0, 0.15 * spec.radius, size=(c, g, 3))
        jdir = rng.normal(size=(c, g, 3))
        self.jitter_dir = jdir / np.linalg.norm(jdir, axis=2, keepdims=True)
        self.jitter_freq = rng.uniform(1.0, 2.0, size=(c, g))
        self.jitter_phase = rng.uniform(0.0, 1.0, size=(c, g))

        self.colors = rng.uniform(0.35, 1.0, size=(c, g, 3))
        self.opacities = rng.uniform(0.65, 0.95, size=(c, g))
        self.scales = rng.uniform(0.08, 0.16, size=(c, g, 3)) * spec.radius
        quats = rng.normal(size=(c, g, 4))
        self.quats = quats / np.linalg.norm(quats, axis=2, keepdims=True)

        self.timestamps = np.linspace(0.0, 1.0, spec.frames)
        self.cameras = self._make_cameras(spec)

        every = spec.holdout_every
        idx = np.arange(spec.frames)
        if 0 < every < spec.frames:
            self.test_frames = idx[idx % every == 0]
            self.train_frames = idx[idx % every != 0]
        else:
            self.test_frames = idx.copy()
            self.train_frames = idx.copy()

        # monocular capture: one camera per training timestamp (cycling);
        # evaluation still covers every camera at held-out times
        if spec.monocular:
            self.train_views = [(int(f) % spec.cameras, int(f))
                                for f in self.train_frames]
        else:
            self.train_views = [(c, int(f)) for f in self.train_frames
                                for c in range(spec.cameras)]

        self.frames = self._render_frames()

    @staticmethod
    def _make_cameras(spec: SceneSpec) -> list[Camera]:
        cams = []
        distance = 3.8 * spec.radius
        for i in range(spec.cameras):
            azim = np.deg2rad(-20.0 + 40.0 * i / max(spec.cameras - 1, 1))
            elev = np.deg2rad(12.0)
            eye = distance * np.array([
                np.sin(azim) * np.cos(elev),
                np.sin(elev),
                -np.cos(azim) * np.cos(elev),
            ])
            cams.append(Camera.look_at(
                eye=eye, target=(0.0, 0.0, 0.0),
                focal=float(spec.resolution),
                size=(spec.resolution, spec.resolution),
                near=0.05,
            ))
        return cams

    # -- analytic motion ----------------------------------------------------------

    def _global_displacement(self, t: float) -> np.ndarray:
        """Per-cluster rigid displacement at time t, shaped (clusters, 3)."""
        if self.spec.motion_profile == "sine":
            wave = np.sin(2 * np.pi * (self.cluster_freq * t + self.cluster_phase))
            base = np.sin(2 * np.pi * self.cluster_phase)
            return (self.cluster_amp * (wave - base))[:, None] * self.cluster_dir
        # bursts: cubic smoothstep ramps between rest poses
        u = np.clip((t - self.burst_times) / self.burst_width, 0.0, 1.0)
        ramp = u * u * (3.0 - 2.0 * u)                      # (c, n_bursts)
        disp = (ramp[:, :, None] * self.burst_steps).sum(axis=1)
        return self.cluster_amp[:, None] * disp / np.sqrt(self.n_bursts)

    def cluster_centroid(self, cluster: int, t: float) -> np.ndarray:
        """Analytic rigid-trajectory position of a cluster's reference point."""
        disp = self._global_displacement(t)[cluster]
        return self.cluster_base[cluster] + self.offsets[cluster].mean(axis=0) + disp

    def centers_at(self, t: float) -> np.ndarray:
        c, g = self.spec.clusters, self.spec.gaussians_per_cluster
        disp = self._global_displacement(t)
        centers = self.cluster_base[:, None, :] + self.offsets + disp[:, None, :]
        jwave = np.sin(2 * np.pi * (self.jitter_freq * t + self.jitter_phase))
        jbase = np.sin(2 * np.pi * self.jitter_phase)
        centers = centers + (self.jitter_amp[:, None] * (jwave - jbase))[:, :, None] * self.jitter_dir
        return centers.reshape(c * g, 3)

    def gaussians_at(self, t: float) -> GaussianBatch:
        n = self.spec.clusters * self.spec.gaussians_per_cluster
        return GaussianBatch(
            centers=Tensor(self.centers_at(t)),
            rotations=Tensor(self.quats.reshape(n, 4)),
            scales=Tensor(self.scales.reshape(n, 3)),
            opacities=Tensor(self.opacities.reshape(n)),
            colors=Tensor(self.colors.reshape(n, 3)),
        )

    def _render_frames(self) -> np.ndarray:
        spec = self.spec
        h = w = spec.resolution
        out = np.zeros((len(self.cameras), spec.frames, h, w, 3))
        for fi, t in enumerate(self.timestamps):
            batch = self.gaussians_at(t)
            for ci, cam in enumerate(self.cameras):
                out[ci, fi] = render(batch, cam, spec.background).pixels.values
        return out

    def frame(self, camera_index: int, frame_index: int) -> np.ndarray:
        return self.frames[camera_index, frame_index]

    def init_points(self, rng: np.random.Generator) -> np.ndarray:
        """Stand-in for an SfM cloud: t=0 centers with mild seeded noise."""
        pts = self.centers_at(0.0)
        return pts + rng.normal(0.0, 0.01 * self.spec.radius, size=pts.shape)

    def bounds(self, margin: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned box covering all motion, padded for anchor drift."""
        pts = np.concatenate([self.centers_at(t) for t in self.timestamps])
        if margin is None:
            margin = (self.spec.global_amp + self.spec.local_amp
                      + 0.35 * self.spec.radius)
        return pts.min(axis=0) - margin, pts.max(axis=0) + margin


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    return SyntheticScene(spec)
