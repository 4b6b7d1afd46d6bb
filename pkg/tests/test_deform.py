"""Deformation tests: hexplane queries against a dense-weight oracle, the
straight-through mask contract, GAD/LGD behavior, and canonical times."""

import numpy as np
import pytest

from dynsplat import autodiff as ad
from dynsplat.autodiff import Tape, Tensor
from dynsplat.deform import (PLANE_PAIRS, CanonicalTimes, DeformDecoder,
                             HexPlane, canonical_time_of, gad_deform,
                             hexplane_query, lgd_deform, lgd_deform_batch,
                             mask_dynamics)
from dynsplat.render import GaussianBatch
from dynsplat.scaffold import Anchor


def dense_bilinear_oracle(plane_vals: np.ndarray, u: float, v: float) -> np.ndarray:
    """Materialize the full bilinear weight grid and contract it explicitly."""
    r1, r2, c = plane_vals.shape
    w = np.zeros((r1, r2))
    i0 = min(max(int(np.floor(u)), 0), max(r1 - 2, 0))
    j0 = min(max(int(np.floor(v)), 0), max(r2 - 2, 0))
    fu, fv = u - i0, v - j0
    w[i0, j0] = (1 - fu) * (1 - fv)
    if r1 > 1:
        w[i0 + 1, j0] += fu * (1 - fv)
    if r2 > 1:
        w[i0, j0 + 1] += (1 - fu) * fv
    if r1 > 1 and r2 > 1:
        w[i0 + 1, j0 + 1] += fu * fv
    return np.einsum("ij,ijc->c", w, plane_vals)


def hexplane_oracle(plane: HexPlane, x: np.ndarray, t: float) -> np.ndarray:
    unit = np.clip((x - plane.bounds_lo) / (plane.bounds_hi - plane.bounds_lo),
                   0.0, 1.0)
    pieces = []
    for s in range(plane.n_scales):
        res = plane.scale_resolution(s)
        coords = [unit[0] * (res[0] - 1), unit[1] * (res[1] - 1),
                  unit[2] * (res[2] - 1), t * (res[3] - 1)]
        product = np.ones(plane.channels)
        for name, a, b in PLANE_PAIRS:
            product = product * dense_bilinear_oracle(
                plane.planes[s][name].values, coords[a], coords[b])
        pieces.append(product)
    return np.concatenate(pieces)


def make_plane(seed=0, res=(5, 4, 6, 3), channels=2, scales=2):
    rng = np.random.default_rng(seed)
    return HexPlane(res, channels, (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0),
                    n_scales=scales, multiplier=2, rng=rng, init_std=0.3)


class TestHexplaneQuery:
    def test_constant_grid_power_of_six(self):
        plane = HexPlane((3, 3, 3, 3), 1, (0, 0, 0), (1, 1, 1), n_scales=1,
                         multiplier=2, rng=None)
        for level in plane.planes:
            for t in level.values():
                t.values[:] = 2.0
        out = hexplane_query(plane, np.array([[0.3, 0.7, 0.2]]), 0.5)
        np.testing.assert_allclose(out.values, [[64.0]])

    def test_grid_node_query_returns_node_product(self):
        plane = make_plane(seed=1, scales=1)
        res = plane.scale_resolution(0)
        # pick the world point mapping exactly to node (1, 2, 3) at t-node 1
        unit = np.array([1 / (res[0] - 1), 2 / (res[1] - 1), 3 / (res[2] - 1)])
        x = plane.bounds_lo + unit * (plane.bounds_hi - plane.bounds_lo)
        t = 1 / (res[3] - 1)
        idx = {"x": 1, "y": 2, "z": 3, "t": 1}
        expected = np.ones(plane.channels)
        for name, a, b in PLANE_PAIRS:
            key = {0: "x", 1: "y", 2: "z", 3: "t"}
            expected = expected * plane.planes[0][name].values[idx[key[a]], idx[key[b]]]
        out = hexplane_query(plane, x[None, :], t)
        np.testing.assert_allclose(out.values[0], expected, atol=1e-12)

    def test_1000_random_queries_match_dense_oracle(self):
        plane = make_plane(seed=2)
        rng = np.random.default_rng(3)
        xs = rng.uniform(-1, 1, size=(1000, 3))
        ts = rng.uniform(0, 1, size=1000)
        # query one point at a time (the vector path shares t per call)
        outs = np.concatenate(
            [hexplane_query(plane, xs[i: i + 1], float(ts[i])).values
             for i in range(1000)])
        for i in range(1000):
            oracle = hexplane_oracle(plane, xs[i], float(ts[i]))
            np.testing.assert_allclose(outs[i], oracle, atol=1e-9)

    def test_out_of_bounds_clamps_with_warning(self):
        plane = make_plane(seed=4, scales=1)
        with pytest.warns(UserWarning):
            out = hexplane_query(plane, np.array([[5.0, 0.0, 0.0]]), 0.5)
        edge = hexplane_query(plane, np.array([[1.0, 0.0, 0.0]]), 0.5)
        np.testing.assert_array_equal(out.values, edge.values)

    def test_bad_time_raises(self):
        plane = make_plane(seed=5, scales=1)
        with pytest.raises(ValueError):
            hexplane_query(plane, np.zeros((1, 3)), 1.5)

    def test_gradients_flow_to_planes_and_coords(self):
        plane = make_plane(seed=6, scales=1)
        x0 = np.array([[0.21, -0.37, 0.55]])
        with Tape() as tape:
            x = Tensor(x0, requires_grad=True)
            loss = hexplane_query(plane, x, 0.3).sum()
        tape.backward(loss)
        assert x.grad is not None and np.any(x.grad != 0)
        some_plane = plane.planes[0]["xy"]
        assert some_plane.grad is not None and np.any(some_plane.grad != 0)

        # coordinate gradient against finite differences (bilinear is smooth
        # inside a cell; the probe stays within one cell)
        h = 1e-7
        for j in range(3):
            xp, xm = x0.copy(), x0.copy()
            xp[0, j] += h
            xm[0, j] -= h
            fd = (hexplane_query(plane, xp, 0.3).values.sum()
                  - hexplane_query(plane, xm, 0.3).values.sum()) / (2 * h)
            assert abs(fd - x.grad[0, j]) / max(abs(fd), 1e-8) < 1e-5


class TestMaskDynamics:
    def test_large_positive_gives_one(self):
        out = mask_dynamics(Tensor([10.0]), epsilon=0.01)
        assert out.values[0] == 1.0

    def test_large_negative_gives_zero(self):
        out = mask_dynamics(Tensor([-10.0]), epsilon=0.5)
        assert out.values[0] == 0.0

    def test_gradient_at_zero_is_quarter(self):
        with Tape() as tape:
            d = Tensor([0.0], requires_grad=True)
            loss = mask_dynamics(d, 0.01).sum()
        tape.backward(loss)
        assert abs(d.grad[0] - 0.25) < 1e-15

    def test_contract_on_100_random_inputs(self):
        rng = np.random.default_rng(7)
        d_vals = rng.uniform(-8, 8, size=100)
        with Tape() as tape:
            d = Tensor(d_vals, requires_grad=True)
            out = mask_dynamics(d, 0.01)
            loss = out.sum()
        tape.backward(loss)
        assert np.all((out.values == 0.0) | (out.values == 1.0))
        sig = 1 / (1 + np.exp(-d_vals))
        np.testing.assert_allclose(d.grad, sig * (1 - sig), atol=1e-12)


def make_anchor(seed=0, k=3, feat_dim=6):
    rng = np.random.default_rng(seed)
    return Anchor(position=rng.uniform(-0.5, 0.5, 3),
                  offsets=rng.normal(0, 0.2, (k, 3)),
                  scaling=np.exp(rng.normal(0, 0.2, 3)),
                  feature=rng.normal(size=feat_dim),
                  d_global=float(rng.normal()), d_local=float(rng.normal()))


def make_gad(seed, plane, k=3, feat_dim=6, hidden=16):
    rng = np.random.default_rng(seed)
    return DeformDecoder.for_gad(plane.out_dim, hidden, feat_dim, k, rng)


class TestGadDeform:
    def test_zero_decoder_is_identity(self):
        plane = make_plane(seed=8, scales=1)
        dec = make_gad(9, plane)
        anchor = make_anchor(seed=10)
        out = gad_deform(anchor, plane, dec, t_c=0.4, epsilon=0.01)
        np.testing.assert_array_equal(out.position, anchor.position)
        np.testing.assert_array_equal(out.feature, anchor.feature)
        np.testing.assert_array_equal(out.offsets, anchor.offsets)
        np.testing.assert_allclose(out.scaling, anchor.scaling, rtol=0, atol=0)

    def test_mask_gates_position_but_not_features(self):
        plane = make_plane(seed=11, scales=1)
        dec = make_gad(12, plane)
        rng = np.random.default_rng(13)
        for head in ("pos", "feat"):
            dec.heads[head].weight.values[:] = rng.normal(
                0, 0.5, dec.heads[head].weight.values.shape)
            dec.heads[head].bias.values[:] = rng.normal(
                0, 0.5, dec.heads[head].bias.values.shape)
        anchor = make_anchor(seed=14)
        anchor = Anchor(anchor.position, anchor.offsets, anchor.scaling,
                        anchor.feature, d_global=-30.0, d_local=0.5)
        out = gad_deform(anchor, plane, dec, t_c=0.4, epsilon=0.01)
        np.testing.assert_array_equal(out.position, anchor.position)  # masked
        assert not np.allclose(out.feature, anchor.feature)  # still updated

    def test_local_gate_halves_at_zero(self):
        plane = make_plane(seed=15, scales=1)
        dec = make_gad(16, plane)
        rng = np.random.default_rng(17)
        dec.heads["feat"].bias.values[:] = rng.normal(0, 1.0,
                                                      dec.heads["feat"].bias.values.shape)
        base = make_anchor(seed=18)
        half = Anchor(base.position, base.offsets, base.scaling, base.feature,
                      d_global=0.0, d_local=0.0)
        full = Anchor(base.position, base.offsets, base.scaling, base.feature,
                      d_global=0.0, d_local=60.0)  # sigmoid -> 1
        delta_half = gad_deform(half, plane, dec, 0.3, 0.01).feature - base.feature
        delta_full = gad_deform(full, plane, dec, 0.3, 0.01).feature - base.feature
        np.testing.assert_allclose(delta_half, 0.5 * delta_full, rtol=1e-12)

    def test_mask_disabled_forces_unit_gates(self):
        plane = make_plane(seed=19, scales=1)
        dec = make_gad(20, plane)
        rng = np.random.default_rng(21)
        for head in dec.heads.values():
            head.bias.values[:] = rng.normal(0, 0.5, head.bias.values.shape)
        anchor = make_anchor(seed=22)
        anchor = Anchor(anchor.position, anchor.offsets, anchor.scaling,
                        anchor.feature, d_global=-50.0, d_local=-50.0)
        gated = gad_deform(anchor, plane, dec, 0.3, 0.01, mask_enabled=True)
        free = gad_deform(anchor, plane, dec, 0.3, 0.01, mask_enabled=False)
        np.testing.assert_array_equal(gated.position, anchor.position)
        assert not np.allclose(free.position, anchor.position)

    def test_continuity_in_canonical_time(self):
        # outputs move O(delta) under small t_c perturbations (no jumps)
        plane = make_plane(seed=23, scales=1)
        dec = make_gad(24, plane)
        rng = np.random.default_rng(25)
        for head in dec.heads.values():
            head.weight.values[:] = rng.normal(0, 0.3, head.weight.values.shape)
        anchor = make_anchor(seed=26)
        res_t = plane.scale_resolution(0)[3]
        # probe away from temporal cell boundaries
        t0 = (0.5 + 0.2) / (res_t - 1)
        delta = 1e-6
        a = gad_deform(anchor, plane, dec, t0, 0.01).position
        b = gad_deform(anchor, plane, dec, t0 + delta, 0.01).position
        assert np.linalg.norm(b - a) < 1e-3  # Lipschitz-bounded step


class TestCanonicalTimes:
    def test_uniform_left_edge(self):
        times = CanonicalTimes.uniform(4)
        j, tc = canonical_time_of(times, 0.0)
        assert j == 0 and tc == pytest.approx(0.125)

    def test_hand_example(self):
        times = CanonicalTimes(np.array([0.25, 0.5, 0.75]))
        j, tc = canonical_time_of(times, 0.6)
        assert j == 2
        assert tc == pytest.approx(0.625)

    def test_right_edge_maps_to_last_segment(self):
        times = CanonicalTimes.uniform(5)
        j, _ = canonical_time_of(times, 1.0)
        assert j == 4

    def test_validation(self):
        with pytest.raises(ValueError):
            CanonicalTimes(np.array([0.5, 0.25]))
        with pytest.raises(ValueError):
            CanonicalTimes(np.array([0.0, 0.5]))
        with pytest.raises(ValueError):
            canonical_time_of(CanonicalTimes.uniform(4), 1.5)


def make_batch(seed=0, n=5):
    rng = np.random.default_rng(seed)
    return GaussianBatch(
        centers=Tensor(rng.uniform(-0.5, 0.5, (n, 3))),
        rotations=Tensor(rng.normal(size=(n, 4))),
        scales=Tensor(rng.uniform(0.1, 0.4, (n, 3))),
        opacities=Tensor(rng.uniform(0.2, 0.9, n)),
        colors=Tensor(rng.uniform(0, 1, (n, 3))),
    )


class TestLgdDeform:
    def test_zero_decoder_identity_at_all_times(self):
        plane = make_plane(seed=27, scales=1)
        rng = np.random.default_rng(28)
        dec = DeformDecoder.for_lgd(plane.out_dim, 16, rng)
        batch = make_batch(seed=29)
        outs = [lgd_deform_batch(batch, plane, dec, t) for t in (0.0, 0.4, 1.0)]
        for out in outs:
            assert np.array_equal(out.centers.values, batch.centers.values)
            assert np.array_equal(out.rotations.values, batch.rotations.values)
            assert np.array_equal(out.scales.values, batch.scales.values)
            assert np.array_equal(out.opacities.values, batch.opacities.values)

    def test_constructed_planes_encode_rigid_drift(self):
        # plane product reduces to a pure time ramp; trunk and head wired to
        # pass it through: every center must shift by the same analytic dx
        velocity = 0.37
        plane = HexPlane((4, 4, 4, 5), 1, (-1, -1, -1), (1, 1, 1), n_scales=1,
                         multiplier=2, rng=None)
        for name, _, _ in PLANE_PAIRS:
            plane.planes[0][name].values[:] = 1.0
        rt = plane.scale_resolution(0)[3]
        ramp = np.linspace(0, 1, rt)  # linear in t after bilinear interp
        plane.planes[0]["zt"].values[:] = ramp[None, :, None]

        rng = np.random.default_rng(30)
        dec = DeformDecoder.for_lgd(plane.out_dim, 8, rng)
        # trunk: first unit copies the (non-negative) feature, rest zero
        for layer in dec.trunk.layers:
            layer.weight.values[:] = 0.0
            layer.bias.values[:] = 0.0
        dec.trunk.layers[0].weight.values[0, 0] = 1.0
        dec.trunk.layers[1].weight.values[0, 0] = 1.0
        dec.heads["pos"].weight.values[:] = 0.0
        dec.heads["pos"].weight.values[0, 0] = velocity
        batch = make_batch(seed=31)
        for t in (0.0, 0.3, 0.8, 1.0):
            out = lgd_deform_batch(batch, plane, dec, t)
            shift = out.centers.values - batch.centers.values
            np.testing.assert_allclose(shift[:, 0], velocity * t, atol=1e-6)
            np.testing.assert_allclose(shift[:, 1:], 0.0, atol=1e-12)

    def test_list_interface_normalizes_quats(self):
        plane = make_plane(seed=32, scales=1)
        rng = np.random.default_rng(33)
        dec = DeformDecoder.for_lgd(plane.out_dim, 16, rng)
        dec.heads["quat"].bias.values[:] = rng.normal(0, 0.5, 4)
        gaussians = make_batch(seed=34).to_gaussians()
        out = lgd_deform(gaussians, plane, dec, 0.5)
        for g in out:
            assert abs(np.linalg.norm(g.rotation.values) - 1.0) < 1e-9

    def test_opacity_reclamped(self):
        plane = make_plane(seed=35, scales=1)
        rng = np.random.default_rng(36)
        dec = DeformDecoder.for_lgd(plane.out_dim, 16, rng)
        dec.heads["opacity"].bias.values[:] = 50.0
        out = lgd_deform_batch(make_batch(seed=37), plane, dec, 0.5)
        assert np.all(out.opacities.values <= 1.0)
        assert np.all(out.opacities.values >= 0.0)

    def test_scale_update_multiplicative_positive(self):
        plane = make_plane(seed=38, scales=1)
        rng = np.random.default_rng(39)
        dec = DeformDecoder.for_lgd(plane.out_dim, 16, rng)
        dec.heads["scale"].bias.values[:] = -3.0
        batch = make_batch(seed=40)
        out = lgd_deform_batch(batch, plane, dec, 0.5)
        assert np.all(out.scales.values > 0.0)
        np.testing.assert_allclose(out.scales.values,
                                   batch.scales.values * np.exp(-3.0), rtol=1e-12)
