"""Flat key-value training configuration.

Config files are UTF-8 text, one ``key = value`` per line, ``#`` comments.
Every field of ``TrainConfig`` is addressable by its name; integer lists are
comma-separated. CLI overrides reuse the same ``key=value`` syntax.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

__all__ = ["TrainConfig", "parse_config_text", "load_config", "apply_overrides"]


@dataclass
class TrainConfig:
    seed: int = 0

    # stage iteration counts
    global_iters: int = 3000
    local_iters: int = 20000

    # per-group learning rates
    lr_positions: float = 1.6e-4
    lr_features: float = 2e-3
    lr_planes: float = 2e-3
    lr_mlps: float = 1e-3
    lr_dynamics: float = 1e-2
    lr_offsets: float = 1e-2
    lr_scaling: float = 7e-3

    # objective
    lambda_ssim: float = 0.2

    # scaffold
    k: int = 10
    voxel_size: float = 0.01
    feat_dim: int = 32
    appearance_dim: int = 0  # hook, off by default
    mlp_hidden: int = 64

    # densification
    densify_from: int = 500
    densify_every: int = 500
    densify_until: int = 1_000_000
    grow_grad_threshold: float = 0.0002  # scaled by the image diagonal
    prune_opacity_threshold: float = 0.005

    # hexplanes (Rx, Ry, Rz, Rt)
    hg_resolution: tuple = (32, 32, 32, 10)
    hl_resolution: tuple = (64, 64, 64, 100)
    hexplane_scales: int = 2
    hexplane_multiplier: int = 2
    hexplane_channels: int = 8

    # temporal segmentation
    segments: int = 8
    mask_epsilon: float = 0.01

    # TIA
    tia_enabled: bool = True
    tia_from: int = 500
    tia_until: int = 10_000
    tia_period: int = 1_000
    tia_tau: float = 1.0
    tia_step: float = 0.05
    tia_compare_normalized: bool = False

    # ablation switches
    one_stage: bool = False
    anchor_only_deform: bool = False
    mask_enabled: bool = True
    covariance_convention: str = "transposed"

    # synthetic scene
    scene_seed: int = 0
    scene_clusters: int = 3
    scene_gaussians_per_cluster: int = 8
    scene_frames: int = 24
    scene_cameras: int = 3
    scene_global_amp: float = 0.25
    scene_local_amp: float = 0.03
    scene_motion_freq: float = 1.0
    scene_motion_profile: str = "sine"
    scene_static_clusters: int = 0
    scene_monocular: bool = False
    scene_radius: float = 1.0
    resolution: int = 32
    holdout_every: int = 8
    background: tuple = (0.0, 0.0, 0.0)

    # bookkeeping
    log_every: int = 50
    checkpoint_every: int = 0  # 0 = only at stage ends
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.global_iters <= 0 or self.local_iters <= 0:
            raise ValueError("iteration counts must be positive")
        if not (0.0 <= self.lambda_ssim < 1.0):
            raise ValueError("lambda_ssim must lie in [0, 1)")
        if self.resolution > 256:
            raise ValueError("scene resolution is capped at 256")
        self.hg_resolution = tuple(int(x) for x in self.hg_resolution)
        self.hl_resolution = tuple(int(x) for x in self.hl_resolution)
        self.background = tuple(float(x) for x in self.background)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


def _coerce(name: str, raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        kind = float if any(isinstance(x, float) for x in current) else int
        return tuple(kind(p) for p in parts)
    return raw


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = base if base is not None else TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        updates[key] = _coerce(key, raw, getattr(cfg, key))
    return replace(cfg, **updates)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def apply_overrides(cfg: TrainConfig, pairs: list[str]) -> TrainConfig:
    """Apply CLI ``key=value`` overrides on top of a parsed config."""
    if not pairs:
        return cfg
    text = "\n".join(pairs)
    return parse_config_text(text, cfg)
