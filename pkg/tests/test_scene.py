"""Synthetic-scene tests: determinism, motion structure, projection accuracy."""

import numpy as np
import pytest

from dynsplat.scene import SceneSpec, generate_scene


def small_spec(**kw):
    defaults = dict(seed=0, clusters=2, gaussians_per_cluster=4, frames=8,
                    cameras=2, resolution=24, global_amp=0.3, local_amp=0.03)
    defaults.update(kw)
    return SceneSpec(**defaults)


class TestDeterminism:
    def test_zero_amplitudes_freeze_all_frames(self):
        scene = generate_scene(small_spec(global_amp=0.0, local_amp=0.0))
        first = scene.frames[:, 0]
        for fi in range(1, scene.spec.frames):
            assert np.array_equal(scene.frames[:, fi], first)

    def test_same_seed_bit_exact(self):
        a = generate_scene(small_spec())
        b = generate_scene(small_spec())
        assert np.array_equal(a.frames, b.frames)

    def test_different_seed_differs(self):
        a = generate_scene(small_spec(seed=0))
        b = generate_scene(small_spec(seed=1))
        assert not np.array_equal(a.frames, b.frames)


class TestMotion:
    def test_global_displacement_matches_projected_trajectory(self):
        # single moving cluster, no jitter: the brightness centroid of each
        # frame must track the projected analytic centroid within one pixel
        spec = small_spec(clusters=1, gaussians_per_cluster=6, frames=10,
                          cameras=1, resolution=64, global_amp=0.35,
                          local_amp=0.0)
        scene = generate_scene(spec)
        cam = scene.cameras[0]
        rot, tr = cam.view[:3, :3], cam.view[:3, 3]
        for fi, t in enumerate(scene.timestamps):
            frame = scene.frames[0, fi]
            weights = frame.sum(axis=2)
            total = weights.sum()
            assert total > 0
            ys, xs = np.mgrid[0:64, 0:64]
            centroid_px = np.array([(xs * weights).sum(), (ys * weights).sum()]) / total

            world = scene.cluster_centroid(0, float(t))
            cam_pt = rot @ world + tr
            proj = np.array([
                cam.focal[0] * cam_pt[0] / cam_pt[2] + cam.principal[0],
                cam.focal[1] * cam_pt[1] / cam_pt[2] + cam.principal[1],
            ])
            assert np.linalg.norm(centroid_px - proj) < 1.0

    def test_static_clusters_do_not_move(self):
        spec = small_spec(clusters=3, static_clusters=1, global_amp=0.5,
                          local_amp=0.1)
        scene = generate_scene(spec)
        g = spec.gaussians_per_cluster
        c0_start = scene.centers_at(0.0)[:g]
        c0_end = scene.centers_at(0.7)[:g]
        np.testing.assert_array_equal(c0_start, c0_end)
        moving_start = scene.centers_at(0.0)[g:]
        moving_end = scene.centers_at(0.7)[g:]
        assert not np.allclose(moving_start, moving_end)

    def test_zero_time_matches_base_configuration(self):
        scene = generate_scene(small_spec())
        base = (scene.cluster_base[:, None, :] + scene.offsets).reshape(-1, 3)
        np.testing.assert_allclose(scene.centers_at(0.0), base, atol=1e-12)


class TestSplits:
    def test_holdout_every_eighth(self):
        scene = generate_scene(small_spec(frames=24, holdout_every=8))
        np.testing.assert_array_equal(scene.test_frames, [0, 8, 16])
        assert len(scene.train_frames) == 21
        assert set(scene.test_frames).isdisjoint(scene.train_frames)

    def test_no_holdout_when_disabled(self):
        scene = generate_scene(small_spec(frames=8, holdout_every=0))
        np.testing.assert_array_equal(scene.train_frames, np.arange(8))
        np.testing.assert_array_equal(scene.test_frames, np.arange(8))


class TestGuards:
    def test_resolution_cap(self):
        with pytest.raises(ValueError):
            small_spec(resolution=512)

    def test_bounds_cover_all_motion(self):
        scene = generate_scene(small_spec(global_amp=0.5))
        lo, hi = scene.bounds()
        for t in scene.timestamps:
            pts = scene.centers_at(float(t))
            assert np.all(pts >= lo) and np.all(pts <= hi)

    def test_init_points_near_t0_centers(self):
        scene = generate_scene(small_spec())
        rng = np.random.default_rng(0)
        pts = scene.init_points(rng)
        assert pts.shape == scene.centers_at(0.0).shape
        assert np.abs(pts - scene.centers_at(0.0)).max() < 0.1
