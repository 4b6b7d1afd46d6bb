"""Training orchestration: global static stage, local deformation stage,
ablation variants, evaluation, and checkpoint wiring."""

from __future__ import annotations

import json
import os
import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .checkpoint import read_container, write_container
from .config import TrainConfig, parse_config_text
from .deform import (CanonicalTimes, DeformDecoder, HexPlane, canonical_time_of,
                     gad_deform_batch, lgd_deform_batch)
from .losses import render_loss
from .metrics import psnr, ssim_metric
from .optim import Adam
from .render import Camera, GaussianBatch, RenderedImage, render
from .scaffold import (AnchorSet, AttributeDecoders, dedupe_voxels,
                       derive_attributes_batch, derive_positions_batch,
                       grow_anchors, init_from_points, prune_anchors)
from .scene import SceneSpec, SyntheticScene, generate_scene
from .tia import TiaSchedule, TiaState, accumulate as tia_accumulate, adjust as tia_adjust

__all__ = [
    "ScaffoldModel",
    "ExplicitModel",
    "Trainer",
    "run_training",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "write_explicit_dump",
    "ablation_grid",
    "run_ablation",
]

MODEL_COMPONENT_PREFIXES = ("anchors.", "planes.", "decoders.", "times.")


def _named_linear(params: dict, prefix: str, mlp) -> None:
    for i, layer in enumerate(mlp.layers):
        params[f"{prefix}.{i}.weight"] = layer.weight
        params[f"{prefix}.{i}.bias"] = layer.bias


def _named_decoder(params: dict, prefix: str, decoder: DeformDecoder) -> None:
    _named_linear(params, f"{prefix}.trunk", decoder.trunk)
    for name, head in decoder.heads.items():
        params[f"{prefix}.head.{name}.weight"] = head.weight
        params[f"{prefix}.head.{name}.bias"] = head.bias


class ScaffoldModel:
    """Anchor scaffold plus deformation fields; the primary trainable model."""

    kind = "scaffold"

    def __init__(self, cfg: TrainConfig, points: np.ndarray,
                 bounds_lo: np.ndarray, bounds_hi: np.ndarray,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.anchors = init_from_points(points, cfg.voxel_size, cfg.k,
                                        cfg.feat_dim, rng)
        self.attr_decoders = AttributeDecoders(cfg.feat_dim, cfg.k,
                                               cfg.mlp_hidden, rng)
        self.hg = HexPlane(cfg.hg_resolution, cfg.hexplane_channels,
                           bounds_lo, bounds_hi, cfg.hexplane_scales,
                           cfg.hexplane_multiplier, rng)
        self.gad = DeformDecoder.for_gad(self.hg.out_dim, cfg.mlp_hidden,
                                         cfg.feat_dim, cfg.k, rng)
        # the fine-stage plane backs either the Gaussian-level deformation or,
        # in the all-anchor variant, a second anchor-level decoder; the pure
        # anchor one-stage variant carries neither
        uses_lgd = not cfg.anchor_only_deform
        uses_hl = uses_lgd or not cfg.one_stage
        self.hl = None
        self.lgd = None
        self.gad2 = None
        if uses_hl:
            self.hl = HexPlane(cfg.hl_resolution, cfg.hexplane_channels,
                               bounds_lo, bounds_hi, cfg.hexplane_scales,
                               cfg.hexplane_multiplier, rng)
        if uses_lgd:
            self.lgd = DeformDecoder.for_lgd(self.hl.out_dim, cfg.mlp_hidden, rng)
        if cfg.anchor_only_deform and not cfg.one_stage:
            self.gad2 = DeformDecoder.for_gad(self.hl.out_dim, cfg.mlp_hidden,
                                              cfg.feat_dim, cfg.k, rng)
        self.times = CanonicalTimes.uniform(cfg.segments)
        self.tia = TiaState(
            self.times,
            TiaSchedule(cfg.tia_from, cfg.tia_until, cfg.tia_period),
            tau=cfg.tia_tau, step=cfg.tia_step,
            compare_normalized=cfg.tia_compare_normalized,
        )
        self.bounds_lo = np.asarray(bounds_lo, dtype=np.float64)
        self.bounds_hi = np.asarray(bounds_hi, dtype=np.float64)

    # -- parameters -----------------------------------------------------------

    def named_tensors(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, t in self.anchors.parameters().items():
            params[f"anchors.{name}"] = t
        for name, t in self.hg.parameters().items():
            params[f"planes.hg.{name}"] = t
        if self.hl is not None:
            for name, t in self.hl.parameters().items():
                params[f"planes.hl.{name}"] = t
        _named_linear(params, "decoders.attr.opacity", self.attr_decoders.opacity)
        _named_linear(params, "decoders.attr.color", self.attr_decoders.color)
        _named_linear(params, "decoders.attr.quat_scale", self.attr_decoders.quat_scale)
        _named_decoder(params, "decoders.gad", self.gad)
        if self.lgd is not None:
            _named_decoder(params, "decoders.lgd", self.lgd)
        if self.gad2 is not None:
            _named_decoder(params, "decoders.gad2", self.gad2)
        return params

    def param_groups(self) -> list[dict]:
        cfg = self.cfg
        a = self.anchors
        groups = [
            {"name": "positions", "lr": cfg.lr_positions, "params": [a.positions]},
            {"name": "offsets", "lr": cfg.lr_offsets, "params": [a.offsets]},
            {"name": "scaling", "lr": cfg.lr_scaling, "params": [a.log_scaling]},
            {"name": "features", "lr": cfg.lr_features, "params": [a.features]},
            {"name": "dynamics", "lr": cfg.lr_dynamics,
             "params": [a.d_global, a.d_local]},
            {"name": "planes", "lr": cfg.lr_planes,
             "params": list(self.hg.parameters().values())
                       + (list(self.hl.parameters().values())
                          if self.hl is not None else [])},
        ]
        mlps = self.attr_decoders.parameters() + self.gad.parameters()
        if self.lgd is not None:
            mlps += self.lgd.parameters()
        if self.gad2 is not None:
            mlps += self.gad2.parameters()
        groups.append({"name": "mlps", "lr": cfg.lr_mlps, "params": mlps})
        return groups

    def zero_deformation(self) -> None:
        """Zero every deformation head; the pipeline then renders the Global CS."""
        self.gad.zero_heads()
        if self.lgd is not None:
            self.lgd.zero_heads()
        if self.gad2 is not None:
            self.gad2.zero_heads()

    # -- forward --------------------------------------------------------------

    def _derive(self, positions, features, offsets, log_scaling, camera):
        a, k = positions.shape[0], self.cfg.k
        mu = derive_positions_batch(positions, offsets, log_scaling)
        opacity, color, quat, scale = derive_attributes_batch(
            features, positions, camera, self.attr_decoders, log_scaling)
        batch = GaussianBatch(
            centers=ad.reshape(mu, (a * k, 3)),
            rotations=ad.reshape(quat, (a * k, 4)),
            scales=ad.reshape(scale, (a * k, 3)),
            opacities=ad.reshape(opacity, (a * k,)),
            colors=ad.reshape(color, (a * k, 3)),
        )
        return batch, {"mu": mu, "opacity": opacity}

    def render_at(self, camera: Camera, t: float, static: bool = False):
        """Render the model at timestamp ``t``.

        ``static`` skips all deformation (the Global CS render); with zeroed
        deformation heads the dynamic path produces the identical image.
        Returns (RenderedImage, aux) where aux carries the tensors whose
        gradients feed densification and TIA statistics.
        """
        cfg = self.cfg
        anchors = self.anchors
        aux: dict = {}
        if static:
            positions, features = anchors.positions, anchors.features
            offsets, log_scaling = anchors.offsets, anchors.log_scaling
        elif cfg.one_stage and cfg.anchor_only_deform:
            fields = gad_deform_batch(
                anchors.positions, anchors.features, anchors.offsets,
                anchors.log_scaling, anchors.d_global, anchors.d_local,
                self.hg, self.gad, t, cfg.mask_epsilon, cfg.mask_enabled)
            positions, features = fields.positions, fields.features
            offsets, log_scaling = fields.offsets, fields.log_scaling
        else:
            _, t_c = canonical_time_of(self.times, t)
            aux["t_c"] = t_c
            fields = gad_deform_batch(
                anchors.positions, anchors.features, anchors.offsets,
                anchors.log_scaling, anchors.d_global, anchors.d_local,
                self.hg, self.gad, t_c, cfg.mask_epsilon, cfg.mask_enabled)
            if self.gad2 is not None:
                fields = gad_deform_batch(
                    fields.positions, fields.features, fields.offsets,
                    fields.log_scaling, anchors.d_global, anchors.d_local,
                    self.hl, self.gad2, t, cfg.mask_epsilon, cfg.mask_enabled)
            positions, features = fields.positions, fields.features
            offsets, log_scaling = fields.offsets, fields.log_scaling

        batch, derive_aux = self._derive(positions, features, offsets,
                                         log_scaling, camera)
        aux.update(derive_aux)
        use_lgd = not static and not cfg.anchor_only_deform
        if use_lgd:
            batch = lgd_deform_batch(batch, self.hl, self.lgd, t)
        aux["final_centers"] = batch.centers
        image = render(batch, camera, cfg.background,
                       convention=cfg.covariance_convention)
        return image, aux

    def render_global(self, camera: Camera):
        return self.render_at(camera, 0.0, static=True)


class ExplicitModel:
    """Per-Gaussian canonical set plus local deformation (one-stage baseline).

    Baked from a trained scaffold: every derived Gaussian becomes an
    independent learnable primitive; only the shared hexplane deformation
    moves them in time.
    """

    kind = "explicit"

    def __init__(self, cfg: TrainConfig, centers, quats, log_scales,
                 opacity_logit, color_logit, bounds_lo, bounds_hi,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.centers = Tensor(centers, requires_grad=True)
        self.quats = Tensor(quats, requires_grad=True)
        self.log_scales = Tensor(log_scales, requires_grad=True)
        self.opacity_logit = Tensor(opacity_logit, requires_grad=True)
        self.color_logit = Tensor(color_logit, requires_grad=True)
        self.hl = HexPlane(cfg.hl_resolution, cfg.hexplane_channels,
                           bounds_lo, bounds_hi, cfg.hexplane_scales,
                           cfg.hexplane_multiplier, rng)
        self.lgd = DeformDecoder.for_lgd(self.hl.out_dim, cfg.mlp_hidden, rng)
        self.bounds_lo = np.asarray(bounds_lo, dtype=np.float64)
        self.bounds_hi = np.asarray(bounds_hi, dtype=np.float64)

    @classmethod
    def bake(cls, model: ScaffoldModel, camera: Camera,
             rng: np.random.Generator) -> "ExplicitModel":
        batch, _ = model._derive(
            model.anchors.positions, model.anchors.features,
            model.anchors.offsets, model.anchors.log_scaling, camera)
        eps = 1e-5
        opac = np.clip(batch.opacities.values, eps, 1 - eps)
        color = np.clip(batch.colors.values, eps, 1 - eps)
        return cls(
            model.cfg,
            centers=batch.centers.values.copy(),
            quats=batch.rotations.values.copy(),
            log_scales=np.log(batch.scales.values),
            opacity_logit=np.log(opac / (1 - opac)),
            color_logit=np.log(color / (1 - color)),
            bounds_lo=model.bounds_lo, bounds_hi=model.bounds_hi,
            rng=rng,
        )

    def named_tensors(self) -> dict[str, Tensor]:
        params = {
            "gaussians.centers": self.centers,
            "gaussians.quats": self.quats,
            "gaussians.log_scales": self.log_scales,
            "gaussians.opacity_logit": self.opacity_logit,
            "gaussians.color_logit": self.color_logit,
        }
        for name, t in self.hl.parameters().items():
            params[f"planes.hl.{name}"] = t
        _named_decoder(params, "decoders.lgd", self.lgd)
        return params

    def param_groups(self) -> list[dict]:
        cfg = self.cfg
        return [
            {"name": "positions", "lr": cfg.lr_positions, "params": [self.centers]},
            {"name": "scaling", "lr": cfg.lr_scaling,
             "params": [self.quats, self.log_scales]},
            {"name": "features", "lr": cfg.lr_features,
             "params": [self.opacity_logit, self.color_logit]},
            {"name": "planes", "lr": cfg.lr_planes,
             "params": list(self.hl.parameters().values())},
            {"name": "mlps", "lr": cfg.lr_mlps, "params": self.lgd.parameters()},
        ]

    def canonical_batch(self) -> GaussianBatch:
        return GaussianBatch(
            centers=self.centers,
            rotations=self.quats,
            scales=ad.exp(self.log_scales),
            opacities=ad.sigmoid(self.opacity_logit),
            colors=ad.sigmoid(self.color_logit),
        )

    def render_at(self, camera: Camera, t: float, static: bool = False):
        batch = self.canonical_batch()
        if not static:
            batch = lgd_deform_batch(batch, self.hl, self.lgd, t)
        aux = {"final_centers": batch.centers}
        image = render(batch, camera, self.cfg.background,
                       convention=self.cfg.covariance_convention)
        return image, aux


# -- training -----------------------------------------------------------------


class Trainer:
    def __init__(self, scene: SyntheticScene, cfg: TrainConfig):
        self.scene = scene
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        lo, hi = scene.bounds()
        self.model = ScaffoldModel(cfg, scene.init_points(rng), lo, hi, rng)
        self.explicit: ExplicitModel | None = None
        self.optimizer = Adam(self.model.param_groups())
        self.sample_rng = np.random.default_rng(cfg.seed + 1)
        self.bake_rng = np.random.default_rng(cfg.seed + 2)
        self.metrics_rows: list[str] = []
        self.interval_rows: list[str] = []
        self.grow_threshold = cfg.grow_grad_threshold * float(
            np.hypot(*scene.cameras[0].size))

    # -- sampling -------------------------------------------------------------

    def _sample_view(self) -> tuple[int, int]:
        views = self.scene.train_views
        return views[int(self.sample_rng.integers(len(views)))]

    # -- shared iteration machinery ---------------------------------------------

    def _log_metrics(self, iteration: int, loss: float, image: RenderedImage,
                     gt: np.ndarray, model) -> None:
        if self.cfg.log_every <= 0 or iteration % self.cfg.log_every != 0:
            return
        if model.kind == "scaffold":
            count = len(self.model.anchors)
        else:
            count = model.centers.shape[0]
        tc = ",".join(f"{v:.6f}" for v in self.model.times.t_c)
        row = (f"{iteration}\t{loss:.8f}\t{psnr(image.pixels.values, gt):.4f}"
               f"\t{count}\t{tc}")
        self.metrics_rows.append(row)

    def _check_finite(self, loss_value: float, iteration: int, stage: str) -> None:
        if not np.isfinite(loss_value):
            raise RuntimeError(
                f"{stage} diverged at iteration {iteration}: loss={loss_value}")

    def _densify(self) -> None:
        anchors = self.model.anchors
        for op, arg in (("grow", self.grow_threshold),
                        ("prune", self.cfg.prune_opacity_threshold),
                        ("dedupe", None)):
            old = dict(anchors.parameters())
            if op == "grow":
                grow_anchors(anchors, arg)
            elif op == "prune":
                prune_anchors(anchors, arg)
            else:
                if dedupe_voxels(anchors) == 0:
                    continue
            row_map = anchors.last_row_map
            for name, new in anchors.parameters().items():
                if new is not old[name]:
                    self.optimizer.remap_rows(old[name], new, row_map)

    def _densify_due(self, iteration: int, stage_iters: int) -> bool:
        cfg = self.cfg
        return (cfg.densify_from <= iteration <= min(cfg.densify_until, stage_iters)
                and iteration % cfg.densify_every == 0)

    # -- stages ---------------------------------------------------------------

    def train_global(self) -> None:
        """Fit the static scaffold against all frames, ignoring time."""
        cfg = self.cfg
        for it in range(1, cfg.global_iters + 1):
            cam_idx, frame_idx = self._sample_view()
            camera = self.scene.cameras[cam_idx]
            gt = self.scene.frame(cam_idx, frame_idx)
            with Tape() as tape:
                image, aux = self.model.render_global(camera)
                loss = render_loss(image.pixels, gt, cfg.lambda_ssim)
                self._check_finite(loss.item(), it, "global stage")
                tape.backward(loss)
            if aux["mu"].grad is not None:
                self.model.anchors.accumulate_growth(aux["mu"].grad)
            self.model.anchors.accumulate_opacity(aux["opacity"].values)
            self.optimizer.step()
            self.optimizer.zero_grad()
            if self._densify_due(it, cfg.global_iters):
                self._densify()
            self._log_metrics(it, loss.item(), image, gt, self.model)

    def train_local(self) -> None:
        """Fit the deformation stack (or the one-stage explicit baseline)."""
        cfg = self.cfg
        model = self.model
        if cfg.one_stage and not cfg.anchor_only_deform:
            self.explicit = ExplicitModel.bake(self.model, self.scene.cameras[0],
                                               self.bake_rng)
            model = self.explicit
            self.optimizer = Adam(model.param_groups())
        tia_active = (cfg.tia_enabled and not cfg.one_stage
                      and model.kind == "scaffold")

        for it in range(1, cfg.local_iters + 1):
            cam_idx, frame_idx = self._sample_view()
            camera = self.scene.cameras[cam_idx]
            t = float(self.scene.timestamps[frame_idx])
            gt = self.scene.frame(cam_idx, frame_idx)
            with Tape() as tape:
                image, aux = model.render_at(camera, t)
                loss = render_loss(image.pixels, gt, cfg.lambda_ssim)
                self._check_finite(loss.item(), it, "local stage")
                tape.backward(loss)

            if tia_active and self.model.tia.schedule.start <= it <= self.model.tia.schedule.until:
                grad = aux["final_centers"].grad
                norm = float(np.linalg.norm(grad)) if grad is not None else 0.0
                tia_accumulate(self.model.tia, t, norm)
                if tia_adjust(self.model.tia, it):
                    tc = "\t".join(f"{v:.8f}" for v in self.model.times.t_c)
                    self.interval_rows.append(f"{it}\t{tc}")

            if model.kind == "scaffold":
                if aux["mu"].grad is not None:
                    self.model.anchors.accumulate_growth(aux["mu"].grad)
                self.model.anchors.accumulate_opacity(aux["opacity"].values)
            self.optimizer.step()
            self.optimizer.zero_grad()
            if model.kind == "scaffold" and self._densify_due(it, cfg.local_iters):
                self._densify()
            self._log_metrics(it, loss.item(), image, gt, model)

    def active_model(self):
        return self.explicit if self.explicit is not None else self.model

    def run(self):
        self.train_global()
        self.train_local()
        return self.active_model()


def run_training(cfg: TrainConfig, scene: SyntheticScene | None = None):
    """Train both stages from a config; returns (model, trainer)."""
    if scene is None:
        scene = generate_scene(SceneSpec.from_config(cfg))
    trainer = Trainer(scene, cfg)
    model = trainer.run()
    return model, trainer


# -- evaluation -----------------------------------------------------------------


def evaluate(model, scene: SyntheticScene, split: str = "test",
             checkpoint_path: str | None = None) -> dict:
    """PSNR/SSIM averaged per frame then over frames, plus exact storage bytes."""
    frames = scene.test_frames if split == "test" else scene.train_frames
    if len(frames) == 0:
        raise ValueError(f"evaluation split {split!r} is empty")
    per_frame = []
    for frame_idx in frames:
        t = float(scene.timestamps[frame_idx])
        for cam_idx, camera in enumerate(scene.cameras):
            image, _ = model.render_at(camera, t)
            gt = scene.frame(cam_idx, frame_idx)
            per_frame.append({
                "camera": cam_idx,
                "frame": int(frame_idx),
                "psnr": psnr(image.pixels.values, gt),
                "ssim": ssim_metric(image.pixels.values, gt),
            })
    storage = None
    if checkpoint_path is not None:
        storage = model_storage_bytes(checkpoint_path)
    return {
        "psnr": float(np.mean([r["psnr"] for r in per_frame])),
        "ssim": float(np.mean([r["ssim"] for r in per_frame])),
        "storage_bytes": storage,
        "per_frame": per_frame,
    }


# -- checkpointing ----------------------------------------------------------------


def save_checkpoint(path, model, cfg: TrainConfig, iteration: int,
                    optimizer: Adam | None = None) -> dict[str, int]:
    blocks: dict = {}
    meta = {
        "kind": model.kind,
        "iteration": int(iteration),
        "config_hash": cfg.digest(),
        "config_text": cfg.to_text(),
        "bounds_lo": list(map(float, model.bounds_lo)),
        "bounds_hi": list(map(float, model.bounds_hi)),
    }
    if model.kind == "scaffold":
        meta["anchor_count"] = len(model.anchors)
        blocks["times.t_c"] = model.times.t_c
        blocks["tia.g_acc"] = model.tia.g_acc
        blocks["tia.nu_acc"] = model.tia.nu_acc
    else:
        meta["gaussian_count"] = model.centers.shape[0]
    blocks["meta"] = json.dumps(meta).encode("utf-8")
    for name, t in model.named_tensors().items():
        blocks[name] = t.values
    if optimizer is not None:
        for name, arr in optimizer.state_tensors().items():
            blocks[f"opt.{name}"] = arr
    return write_container(path, blocks)


def load_checkpoint(path, optimizer_slot: list | None = None):
    """Rebuild a model from a checkpoint; returns (model, cfg, iteration)."""
    blocks, _ = read_container(path)
    meta = json.loads(blocks["meta"].decode("utf-8"))
    cfg = parse_config_text(meta["config_text"])
    rng = np.random.default_rng(cfg.seed)
    lo = np.asarray(meta["bounds_lo"])
    hi = np.asarray(meta["bounds_hi"])
    if meta["kind"] == "scaffold":
        count = int(meta["anchor_count"])
        # placeholder geometry; every tensor is overwritten from the blocks
        dummy = np.zeros((1, 3))
        model = ScaffoldModel(cfg, dummy, lo, hi, rng)
        model.anchors = AnchorSet(
            positions=blocks["anchors.positions"],
            offsets=blocks["anchors.offsets"],
            log_scaling=blocks["anchors.log_scaling"],
            features=blocks["anchors.features"],
            d_global=blocks["anchors.d_global"],
            d_local=blocks["anchors.d_local"],
            voxel_size=cfg.voxel_size,
        )
        assert len(model.anchors) == count
        model.times = CanonicalTimes(blocks["times.t_c"])
        model.tia = TiaState(
            model.times,
            TiaSchedule(cfg.tia_from, cfg.tia_until, cfg.tia_period),
            tau=cfg.tia_tau, step=cfg.tia_step,
            compare_normalized=cfg.tia_compare_normalized,
            g_acc=blocks["tia.g_acc"], nu_acc=blocks["tia.nu_acc"],
        )
    else:
        n = int(meta["gaussian_count"])
        model = ExplicitModel(
            cfg,
            centers=blocks["gaussians.centers"],
            quats=blocks["gaussians.quats"],
            log_scales=blocks["gaussians.log_scales"],
            opacity_logit=blocks["gaussians.opacity_logit"],
            color_logit=blocks["gaussians.color_logit"],
            bounds_lo=lo, bounds_hi=hi, rng=rng,
        )
        assert model.centers.shape[0] == n
    for name, t in model.named_tensors().items():
        if name not in blocks:
            raise ValueError(f"checkpoint is missing tensor block {name!r}")
        t.values = np.asarray(blocks[name], dtype=np.float64).reshape(t.values.shape)
    if optimizer_slot is not None:
        opt = Adam(model.param_groups())
        opt.load_state_tensors({k[len("opt."):]: v for k, v in blocks.items()
                                if k.startswith("opt.")})
        optimizer_slot.append(opt)
    return model, cfg, int(meta["iteration"])


def model_storage_bytes(path) -> int:
    """Exact on-disk bytes of the model components (anchors, planes, MLPs, T_c)."""
    blocks, sizes = read_container(path)
    meta = json.loads(blocks["meta"].decode("utf-8"))
    prefixes = MODEL_COMPONENT_PREFIXES if meta["kind"] == "scaffold" else (
        "gaussians.", "planes.", "decoders.")
    return sum(size for name, size in sizes.items()
               if name.startswith(prefixes))


def write_explicit_dump(model, scene: SyntheticScene, path) -> int:
    """Dump derived Gaussians at every scene timestamp as explicit primitives.

    The baseline an anchor checkpoint competes against on storage: rendering
    the same frames without the model requires all 14 per-Gaussian floats at
    every timestamp. Returns total bytes written.
    """
    camera = scene.cameras[0]
    blocks = {"meta": json.dumps({"kind": "explicit_dump",
                                  "frames": len(scene.timestamps)}).encode()}
    for fi, t in enumerate(scene.timestamps):
        batch = _derived_batch(model, camera, float(t))
        n = len(batch)
        packed = np.concatenate([
            batch.centers.values.reshape(n, 3),
            batch.rotations.values.reshape(n, 4),
            batch.scales.values.reshape(n, 3),
            batch.opacities.values.reshape(n, 1),
            batch.colors.values.reshape(n, 3),
        ], axis=1)
        blocks[f"gaussians.f{fi}"] = packed
    write_container(path, blocks)
    return os.path.getsize(path)


def _derived_batch(model, camera: Camera, t: float) -> GaussianBatch:
    """The renderable Gaussian set a model produces for (camera, t)."""
    if model.kind == "explicit":
        batch = model.canonical_batch()
        return lgd_deform_batch(batch, model.hl, model.lgd, t)
    cfg = model.cfg
    anchors = model.anchors
    if cfg.one_stage and cfg.anchor_only_deform:
        fields = gad_deform_batch(
            anchors.positions, anchors.features, anchors.offsets,
            anchors.log_scaling, anchors.d_global, anchors.d_local,
            model.hg, model.gad, t, cfg.mask_epsilon, cfg.mask_enabled)
    else:
        _, t_c = canonical_time_of(model.times, t)
        fields = gad_deform_batch(
            anchors.positions, anchors.features, anchors.offsets,
            anchors.log_scaling, anchors.d_global, anchors.d_local,
            model.hg, model.gad, t_c, cfg.mask_epsilon, cfg.mask_enabled)
        if model.gad2 is not None:
            fields = gad_deform_batch(
                fields.positions, fields.features, fields.offsets,
                fields.log_scaling, anchors.d_global, anchors.d_local,
                model.hl, model.gad2, t, cfg.mask_epsilon, cfg.mask_enabled)
    batch, _ = model._derive(fields.positions, fields.features,
                             fields.offsets, fields.log_scaling, camera)
    if not cfg.anchor_only_deform:
        batch = lgd_deform_batch(batch, model.hl, model.lgd, t)
    return batch


# -- ablation grid ----------------------------------------------------------------


def ablation_grid(cfg: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """Rows (a)-(g): one-stage/two-stage, masking, TIA, and plane-size axes."""
    from dataclasses import replace

    small_hg = tuple(max(r // 2, 2) for r in cfg.hg_resolution)
    small_hl = tuple(max(r // 2, 2) for r in cfg.hl_resolution)
    rows = [
        ("a", dict(one_stage=True, anchor_only_deform=False,
                   mask_enabled=False, tia_enabled=False)),
        ("b", dict(one_stage=True, anchor_only_deform=True,
                   mask_enabled=False, tia_enabled=False)),
        ("c", dict(one_stage=False, anchor_only_deform=True,
                   mask_enabled=False, tia_enabled=False)),
        ("d", dict(one_stage=False, anchor_only_deform=False,
                   mask_enabled=False, tia_enabled=False)),
        ("e", dict(one_stage=False, anchor_only_deform=False,
                   mask_enabled=False, tia_enabled=False,
                   hg_resolution=small_hg, hl_resolution=small_hl)),
        ("f", dict(one_stage=False, anchor_only_deform=False,
                   mask_enabled=True, tia_enabled=False,
                   hg_resolution=small_hg, hl_resolution=small_hl)),
        ("g", dict(one_stage=False, anchor_only_deform=False,
                   mask_enabled=True, tia_enabled=True,
                   hg_resolution=small_hg, hl_resolution=small_hl)),
    ]
    return [(name, replace(cfg, **changes)) for name, changes in rows]


def run_ablation(cfg: TrainConfig, out_dir: str) -> list[dict]:
    """Train every ablation row on the same scene; returns comparison records."""
    os.makedirs(out_dir, exist_ok=True)
    scene = generate_scene(SceneSpec.from_config(cfg))
    results = []
    for name, row_cfg in ablation_grid(cfg):
        start = time.time()
        model, trainer = run_training(row_cfg, scene)
        ckpt = os.path.join(out_dir, f"ablation_{name}.mdgs")
        save_checkpoint(ckpt, model, row_cfg, row_cfg.local_iters)
        record = evaluate(model, scene, "test", checkpoint_path=ckpt)
        results.append({
            "row": name,
            "psnr": record["psnr"],
            "ssim": record["ssim"],
            "storage_bytes": record["storage_bytes"],
            "seconds": time.time() - start,
        })
    return results
