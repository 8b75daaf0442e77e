"""Neural executor tests.

Reference implementations (6-loop convolution, stamp-sum transposed
convolution, two-pass normalization, integer-shift epipolar oracle) are
written here from scratch and never share code with the executor.
"""

import numpy as np
import pytest

from conftest import make_camera, rectified_pair
from mvsbisect import neural
from mvsbisect.geometry import PixelCoord, bilinear_sample, project
from mvsbisect.neural import (FPN_CHANNELS, WeightError, WeightStore, conv2d,
                              deformable_epipolar_conv, dnet_layers, fpn_layers,
                              image_to_tensor, instance_norm, leaky_relu, load_weights,
                              manifest, parameter_count, random_weights, resize_bilinear,
                              run_dnet_level, run_fpn, run_multilevel_dnet,
                              run_multilevel_wnet, run_wnet_level, save_weights,
                              transposed_conv2d, validate_store, wnet_layers)
from mvsbisect.sampler import build_sample_grid


def _ref_conv2d(x, w, b, stride):
    """Direct six-loop cross-correlation with zero padding (k-1)//2."""
    c_out, c_in, k, _ = w.shape
    h, wd = x.shape[1:]
    p = (k - 1) // 2
    oh = (h + 2 * p - k) // stride + 1
    ow = (wd + 2 * p - k) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0.0
                for c in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            iy = oy * stride + ky - p
                            ix = ox * stride + kx - p
                            if 0 <= iy < h and 0 <= ix < wd:
                                acc += x[c, iy, ix] * w[o, c, ky, kx]
                out[o, oy, ox] = acc + (b[o] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(3, 8, 8)).astype(np.float32)
        w = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for i in range(3):
            w[i, i, 0, 0] = 1.0
        np.testing.assert_array_equal(conv2d(x, w), x)

    def test_all_ones_kernel_on_constant(self):
        x = np.ones((1, 6, 6), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        y = conv2d(x, w)
        assert y.shape == (1, 6, 6)
        np.testing.assert_array_equal(y[0, 1:-1, 1:-1], 9.0)

    def test_against_loop_reference(self, rng):
        x = rng.normal(size=(8, 16, 16)).astype(np.float32)
        w = rng.normal(size=(4, 8, 3, 3)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        got = conv2d(x, w, b)
        expect = _ref_conv2d(x.astype(np.float64), w.astype(np.float64),
                             b.astype(np.float64), 1)
        assert np.max(np.abs(got - expect)) < 1e-5

    def test_stride2_against_reference(self, rng):
        x = rng.normal(size=(2, 10, 10)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        got = conv2d(x, w, stride=2)
        expect = _ref_conv2d(x.astype(np.float64), w.astype(np.float64), None, 2)
        assert got.shape == expect.shape == (3, 5, 5)
        assert np.max(np.abs(got - expect)) < 1e-5

    def test_channel_mismatch(self, rng):
        with pytest.raises(neural.ShapeError):
            conv2d(np.zeros((2, 4, 4), dtype=np.float32),
                   np.zeros((1, 3, 3, 3), dtype=np.float32))


class TestTransposedConv2d:
    def test_delta_stamps_kernel(self, rng):
        w = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
        x = np.zeros((1, 5, 5), dtype=np.float32)
        x[0, 2, 3] = 1.0
        y = transposed_conv2d(x, w)
        assert y.shape == (2, 10, 10)
        # Stamp lands at output rows 2*2-1 .. +4, cols 2*3-1 .. +4.
        np.testing.assert_allclose(y[:, 3:7, 5:9], w[0], atol=1e-6)
        mask = np.ones_like(y, dtype=bool)
        mask[:, 3:7, 5:9] = False
        assert np.all(y[mask] == 0.0)

    def test_output_doubles_dims(self, rng):
        x = rng.normal(size=(3, 7, 9)).astype(np.float32)
        w = rng.normal(size=(3, 2, 4, 4)).astype(np.float32)
        assert transposed_conv2d(x, w).shape == (2, 14, 18)

    def test_against_stamp_sum_reference(self, rng):
        c_in, c_out, k, s = 3, 2, 4, 2
        x = rng.normal(size=(c_in, 6, 5)).astype(np.float32)
        w = rng.normal(size=(c_in, c_out, k, k)).astype(np.float32)
        h, wd = x.shape[1:]
        full = np.zeros((c_out, s * (h - 1) + k, s * (wd - 1) + k))
        for ci in range(c_in):
            for iy in range(h):
                for ix in range(wd):
                    full[:, s * iy:s * iy + k, s * ix:s * ix + k] += (
                        x[ci, iy, ix] * w[ci].astype(np.float64))
        expect = full[:, 1:1 + s * h, 1:1 + s * wd]
        got = transposed_conv2d(x, w)
        assert np.max(np.abs(got - expect)) < 1e-5


class TestInstanceNorm:
    def test_constant_channel_zeroes(self):
        x = np.full((2, 4, 4), 7.0, dtype=np.float32)
        y = instance_norm(x)
        np.testing.assert_allclose(y, 0.0, atol=1e-3)

    def test_normalizes_statistics(self, rng):
        x = rng.normal(3.0, 2.5, size=(4, 16, 16)).astype(np.float32)
        y = instance_norm(x)
        np.testing.assert_allclose(y.mean(axis=(1, 2)), 0.0, atol=1e-4)
        np.testing.assert_allclose(y.var(axis=(1, 2)), 1.0, atol=1e-4)

    def test_against_two_pass_reference(self, rng):
        x = rng.normal(size=(3, 8, 8)).astype(np.float32)
        g = rng.normal(size=3).astype(np.float32)
        b = rng.normal(size=3).astype(np.float32)
        got = instance_norm(x, g, b)
        for c in range(3):
            mu = float(np.mean(x[c]))
            var = float(np.mean((x[c] - mu) ** 2))
            expect = (x[c] - mu) / np.sqrt(var + 1e-5) * g[c] + b[c]
            assert np.max(np.abs(got[c] - expect)) < 1e-5


class TestResize:
    def test_constant_preserved(self):
        x = np.full((2, 8, 8), 3.0, dtype=np.float32)
        y = resize_bilinear(x, (4, 4))
        np.testing.assert_allclose(y, 3.0, atol=1e-6)

    def test_upscale_dims(self, rng):
        x = rng.normal(size=(1, 5, 7)).astype(np.float32)
        assert resize_bilinear(x, (10, 14)).shape == (1, 10, 14)


def _store_for(layers, seed=0):
    entries = []
    for ld in layers:
        entries.extend(ld.param_shapes())
    return random_weights(entries, seed=seed), entries


class TestFpn:
    def test_output_shapes_64(self, rng):
        store, _ = _store_for(fpn_layers(3))
        img = rng.uniform(0, 1, size=(3, 64, 64)).astype(np.float32)
        feats = run_fpn(store, img)
        assert feats[0].shape == (32, 16, 16)
        assert feats[1].shape == (16, 32, 32)
        assert feats[2].shape == (8, 64, 64)

    def test_zero_weights_zero_output(self):
        entries = []
        for ld in fpn_layers(3):
            entries.extend(ld.param_shapes())
        store = WeightStore({n: np.zeros(s, dtype=np.float32) for n, s in entries})
        feats = run_fpn(store, np.ones((3, 32, 32), dtype=np.float32))
        for f in feats:
            np.testing.assert_array_equal(f, 0.0)

    def test_scaled_down_weights_finite(self, rng):
        store, entries = _store_for(fpn_layers(3), seed=5)
        scaled = WeightStore({n: (t * 1e-2 if t.ndim == 4 else t)
                              for n, t in store.tensors.items()})
        feats = run_fpn(scaled, rng.uniform(0, 1, size=(3, 32, 32)).astype(np.float32))
        for f in feats:
            assert np.all(np.isfinite(f))

    def test_indivisible_dims_rejected(self, rng):
        store, _ = _store_for(fpn_layers(3))
        with pytest.raises(neural.ShapeError):
            run_fpn(store, np.zeros((3, 30, 30), dtype=np.float32))

    def test_deterministic_bitwise(self, rng):
        store, _ = _store_for(fpn_layers(3))
        img = rng.uniform(0, 1, size=(3, 32, 32)).astype(np.float32)
        a = run_fpn(store, img)
        b = run_fpn(store, img)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa, fb)


def _level_grids(hyp_hw, k=5, baseline=0.1):
    h, w = hyp_hw
    ref = make_camera(fx=1.5 * w, width=w, height=h)
    src = make_camera(fx=1.5 * w, t=np.array([-baseline, 0.0, 0.0]), width=w, height=h)
    hyp = np.full((h, w), 0.5)
    return neural.build_level_grids(ref, src, hyp, 1.0, k=k)


class TestDnetLevel:
    def test_level0_shapes(self, rng):
        store, _ = _store_for(dnet_layers(0))
        f_r = rng.normal(size=(32, 16, 16)).astype(np.float32) * 0.3
        f_s = rng.normal(size=(32, 16, 16)).astype(np.float32) * 0.3
        grids = _level_grids((16, 16))
        mask, fo = run_dnet_level(store, 0, f_r, f_s, grids, None)
        assert mask.shape == (16, 16)
        assert fo.shape == (128, 16, 16)
        assert np.all(mask > 0.0)
        assert np.all(mask < 1.0)

    def test_level1_requires_previous_features(self, rng):
        store, _ = _store_for(dnet_layers(1))
        f = rng.normal(size=(16, 32, 32)).astype(np.float32)
        grids = _level_grids((32, 32))
        with pytest.raises(neural.ShapeError):
            run_dnet_level(store, 1, f, f, grids, None)

    def test_parameter_count_matches_symbolic_sum(self):
        def conv_p(cin, cout, k, bias=True):
            return cout * cin * k * k + (cout if bias else 0)

        for level in range(3):
            f = FPN_CHANNELS[level]
            expect = (conv_p(f, f, 3) + conv_p(f, f, 5)            # conv1, dconv1
                      + conv_p(2 * f, 2 * f, 3) * 2                # conv2, sc1
                      + conv_p(f, f, 3) + conv_p(f, f, 5)          # conv3, dconv2
                      + conv_p(2 * f, 2 * f, 3))                   # conv4
            if level == 0:
                expect += conv_p(4 * f, 4 * f, 3)                  # conv5
            else:
                fprev = 4 * FPN_CHANNELS[level - 1]
                expect += conv_p(4 * f + fprev, 4 * f, 3)          # convpr
                expect += conv_p(4 * f, 4 * f, 3)                  # conv5
            expect += (conv_p(4 * f, 4 * f, 3)                     # sc2
                       + conv_p(f, f, 3) + conv_p(f, f, 5)         # conv6, dconv3
                       + conv_p(2 * f, 2 * f, 3)                   # conv7
                       + conv_p(6 * f, 6 * f, 3) * 3               # conv8..10
                       + conv_p(6 * f, 6 * f, 4, bias=False)       # uconv1
                       + conv_p(10 * f, 4 * f, 3)                  # conv11
                       + conv_p(4 * f, 4 * f, 3)                   # conv12
                       + conv_p(4 * f, 4 * f, 4, bias=False)       # uconv2
                       + conv_p(6 * f, 4 * f, 3)                   # fo
                       + conv_p(4 * f, 1, 3, bias=False))          # mask
            entries = []
            for ld in dnet_layers(level):
                entries.extend(ld.param_shapes())
            assert parameter_count(entries) == expect

    def test_wnet_parameter_count_matches_symbolic_sum(self):
        def conv_p(cin, cout, k=3, bias=True):
            return cout * cin * k * k + (cout if bias else 0)

        for level in range(3):
            f = FPN_CHANNELS[level]
            if level == 0:
                expect = conv_p(1, 2 * f)
            else:
                fprev = FPN_CHANNELS[level - 1] // 2
                expect = conv_p(1, f) + conv_p(fprev, f) + conv_p(2 * f, 2 * f)
            expect += (conv_p(2 * f, 2 * f) + conv_p(2 * f, f)
                       + conv_p(f, f // 2)             # propagated input width
                       + conv_p(f // 2, 1, bias=False))
            entries = []
            for ld in wnet_layers(level):
                entries.extend(ld.param_shapes())
            assert parameter_count(entries) == expect


class TestWnetLevel:
    def test_zero_weights_unit_fusion_weight(self):
        from mvsbisect.fusion import weight_from_logit
        entries = []
        for ld in wnet_layers(0):
            entries.extend(ld.param_shapes())
        store = WeightStore({n: np.zeros(s, dtype=np.float32) for n, s in entries})
        e = np.full((16, 16), 0.3, dtype=np.float32)
        logit, _ = run_wnet_level(store, 0, e, None)
        np.testing.assert_array_equal(logit, 0.0)
        np.testing.assert_array_equal(weight_from_logit(logit), 1.0)

    def test_carried_feature_channels(self, rng):
        store, _ = _store_for(wnet_layers(0))
        e = rng.uniform(0, 0.7, size=(12, 12)).astype(np.float32)
        logit, fo = run_wnet_level(store, 0, e, None)
        assert logit.shape == (12, 12)
        assert fo.shape == (FPN_CHANNELS[0] // 2, 12, 12)

    def test_spatial_dims_preserved_all_levels(self, rng):
        dims = [(8, 8), (16, 16), (32, 32)]
        fo = None
        for level in range(3):
            store, _ = _store_for(wnet_layers(level))
            e = rng.uniform(0, 0.7, size=dims[level]).astype(np.float32)
            logit, fo = run_wnet_level(store, level, e, fo)
            assert logit.shape == dims[level]


class TestWeightIO:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        tensors = {
            "a.w": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
            "a.b": rng.normal(size=(4,)).astype(np.float32),
            "z.long.name.g": rng.normal(size=(7,)).astype(np.float32),
        }
        store = WeightStore(tensors)
        path = tmp_path / "w.bin"
        save_weights(store, path)
        loaded = load_weights(path)
        assert set(loaded.tensors) == set(tensors)
        for name in tensors:
            np.testing.assert_array_equal(loaded.tensors[name], store.tensors[name])
            assert loaded.tensors[name].dtype == np.float32

    def test_truncated_file_rejected(self, rng, tmp_path):
        store = WeightStore({"a.w": rng.normal(size=(4, 4)).astype(np.float32)})
        path = tmp_path / "w.bin"
        save_weights(store, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(WeightError):
            load_weights(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(WeightError):
            load_weights(path)

    def test_manifest_validation_catches_problems(self):
        entries = manifest()
        store = random_weights(entries, seed=0)
        validate_store(store, entries)

        broken = dict(store.tensors)
        removed = entries[0][0]
        del broken[removed]
        with pytest.raises(WeightError, match=removed):
            validate_store(WeightStore(broken), entries)

        extra = dict(store.tensors)
        extra["rogue.w"] = np.zeros((1,), dtype=np.float32)
        with pytest.raises(WeightError, match="rogue.w"):
            validate_store(WeightStore(extra), entries)

        bad_shape = dict(store.tensors)
        name0 = entries[0][0]
        bad_shape[name0] = np.zeros((2, 2), dtype=np.float32)
        with pytest.raises(WeightError, match=name0):
            validate_store(WeightStore(bad_shape), entries)

    def test_manifest_covers_every_declared_layer(self):
        names = {n for n, _ in manifest()}
        for level in range(3):
            for ld in dnet_layers(level) + wnet_layers(level):
                assert ld.name + (".g" if ld.kind == "inorm" else ".w") in names


class TestFiniteActivations:
    def test_ops_finite_on_bounded_inputs(self, rng):
        for _ in range(100):
            c_in = int(rng.integers(1, 6))
            c_out = int(rng.integers(1, 6))
            k = int(rng.choice([1, 3, 5]))
            h = int(rng.integers(4, 12))
            w = int(rng.integers(4, 12))
            x = rng.uniform(-10, 10, size=(c_in, h, w)).astype(np.float32)
            wt = rng.uniform(-1, 1, size=(c_out, c_in, k, k)).astype(np.float32)
            b = rng.uniform(-1, 1, size=c_out).astype(np.float32)
            for act in ("lrelu", "sigmoid", "identity"):
                assert np.all(np.isfinite(conv2d(x, wt, b, activation=act)))
            wt2 = rng.uniform(-1, 1, size=(c_in, c_out, 4, 4)).astype(np.float32)
            assert np.all(np.isfinite(transposed_conv2d(x, wt2, activation="lrelu")))
            assert np.all(np.isfinite(instance_norm(x)))


class TestDeformableConv:
    def test_center_delta_kernel_equals_projection_sample(self, rng):
        ref, src = rectified_pair(fx=100.0, baseline=0.2)
        hyp = np.full((64, 64), 0.5)
        grid = build_sample_grid(ref, src, hyp, k=5)
        fmap = rng.uniform(0, 1, size=(1, 64, 64)).astype(np.float32)
        w = np.zeros((1, 1, 5, 5), dtype=np.float32)
        w[0, 0, 2, 2] = 1.0   # row-major tap 12 = line offset 0 (the center)
        out = deformable_epipolar_conv(fmap, grid, w, activation="identity")
        for y in range(8, 56, 13):
            for x in range(8, 56, 13):
                if not grid.valid[12, y, x]:
                    continue
                p = project(ref, src, PixelCoord(float(x), float(y)), 0.5)
                expect = bilinear_sample(fmap[0].astype(np.float64), p.x, p.y)
                assert out[0, y, x] == pytest.approx(expect, abs=1e-5)

    def test_constant_field_independent_of_geometry(self, rng):
        ref, src = rectified_pair()
        grid = build_sample_grid(ref, src, np.full((32, 32), 0.5), k=5)
        fmap = np.full((2, 64, 64), 1.5, dtype=np.float32)
        w = rng.normal(size=(3, 2, 5, 5)).astype(np.float32)
        out = deformable_epipolar_conv(fmap, grid, w, activation="identity")
        all_valid = grid.valid.all(axis=0)
        expect = 1.5 * w.sum(axis=(1, 2, 3))
        for o in range(3):
            np.testing.assert_allclose(out[o][all_valid], expect[o], atol=1e-4)

    def test_matches_integer_shift_oracle_rectified(self, rng):
        # Rectified pair with integer disparity: every tap reads the source
        # row at an integer x offset, so an integer-shift accumulation
        # reproduces the deformable convolution exactly.
        fx, baseline, disp = 100.0, 0.2, 3
        ref, src = rectified_pair(fx=fx, baseline=baseline)
        H = disp / (fx * baseline)
        hyp = np.full((64, 64), H)
        grid = build_sample_grid(ref, src, hyp, k=5)
        fmap = rng.uniform(-1, 1, size=(3, 64, 64)).astype(np.float32)
        w = rng.normal(size=(2, 3, 5, 5)).astype(np.float32)
        b = rng.normal(size=2).astype(np.float32)
        out = deformable_epipolar_conv(fmap, grid, w, b)

        xs = np.arange(64)
        oracle = np.zeros((2, 64, 64))
        # Sample direction: rectified step is (-1, 0) here, so tap i sits at
        # x - disp - (i - 12).
        for i in range(25):
            ky, kx = divmod(i, 5)
            src_x = xs - disp - (i - 12)
            valid_x = (src_x >= 0) & (src_x <= 63)
            taken = fmap[:, :, np.clip(src_x, 0, 63)] * valid_x[None, None, :]
            for o in range(2):
                oracle[o] += np.tensordot(w[o, :, ky, kx], taken, axes=([0], [0]))
        oracle += b[:, None, None]
        oracle = np.where(oracle >= 0, oracle, 0.01 * oracle)

        interior = slice(16, 48)
        assert grid.valid[:, :, interior].all()
        assert np.max(np.abs(out[:, :, interior] - oracle[:, :, interior])) < 1e-5


class TestMultiLevel:
    def _two_view_scene(self, rng, size=64):
        from mvsbisect.scenegen import SceneSpec, render
        spec = SceneSpec.from_dict({
            "width": size, "height": size, "focal": 1.4 * size, "seed": 2,
            "ref_index": 0,
            "rig": {"count": 2, "baseline": 0.15, "look_at": [0, 0, 2.0]},
            "objects": [
                {"kind": "plane", "point": [0, 0, 2.0], "normal": [0, 0, -1],
                 "texture": {"kind": "noise", "seed": 8, "scale": 0.08}},
            ],
        })
        return render(spec)

    def test_masks_shapes_and_open_range(self, rng):
        bundle = self._two_view_scene(rng)
        store = random_weights(manifest(), seed=3)
        hyp = np.full((64, 64), 0.5)
        masks, center_valid = run_multilevel_dnet(
            store, bundle.ref.image, bundle.sources[0].image,
            bundle.ref.camera, bundle.sources[0].camera, hyp)
        assert masks[0].shape == (16, 16)
        assert masks[1].shape == (32, 32)
        assert masks[2].shape == (64, 64)
        for m in masks:
            assert np.all(m > 0.0)
            assert np.all(m < 1.0)
        assert center_valid.shape == (64, 64)

    def test_scale_independence(self, rng):
        # Doubling every translation while halving the hypothesis leaves the
        # epipolar sampling, and therefore the whole output, unchanged.
        from mvsbisect.geometry import Camera
        bundle = self._two_view_scene(rng)
        store = random_weights(manifest(), seed=3)
        hyp = np.full((64, 64), 0.5)
        ref_cam, src_cam = bundle.ref.camera, bundle.sources[0].camera

        def scaled(cam):
            Rt = cam.Rt.copy()
            Rt[:, 3] *= 2.0
            return Camera(K=cam.K, Rt=Rt, width=cam.width, height=cam.height)

        m1, _ = run_multilevel_dnet(store, bundle.ref.image, bundle.sources[0].image,
                                    ref_cam, src_cam, hyp)
        m2, _ = run_multilevel_dnet(store, bundle.ref.image, bundle.sources[0].image,
                                    scaled(ref_cam), scaled(src_cam), hyp / 2.0)
        for a, b in zip(m1, m2):
            np.testing.assert_allclose(a, b, atol=1e-5)

    def test_zeroed_mask_layer_gives_half(self, rng):
        bundle = self._two_view_scene(rng)
        tensors = dict(random_weights(manifest(), seed=3).tensors)
        for level in range(3):
            tensors[f"dnet{level}.mask.w"] = np.zeros_like(tensors[f"dnet{level}.mask.w"])
        store = WeightStore(tensors)
        hyp = np.full((64, 64), 0.5)
        masks, _ = run_multilevel_dnet(store, bundle.ref.image, bundle.sources[0].image,
                                       bundle.ref.camera, bundle.sources[0].camera, hyp)
        for m in masks:
            np.testing.assert_array_equal(m, 0.5)

    def test_wnet_chain_shapes(self, rng):
        store = random_weights(manifest(), seed=4)
        ents = [rng.uniform(0, 0.69, size=(16, 16)).astype(np.float32),
                rng.uniform(0, 0.69, size=(32, 32)).astype(np.float32),
                rng.uniform(0, 0.69, size=(64, 64)).astype(np.float32)]
        logits = run_multilevel_wnet(store, ents)
        assert [lg.shape for lg in logits] == [(16, 16), (32, 32), (64, 64)]
        for lg in logits:
            assert np.all(np.isfinite(lg))

    def test_indivisible_by_16_rejected(self, rng):
        store = random_weights(manifest(), seed=3)
        bundle = self._two_view_scene(rng)
        with pytest.raises(neural.ShapeError):
            run_multilevel_dnet(store, bundle.ref.image[:40, :40],
                                bundle.sources[0].image[:40, :40],
                                bundle.ref.camera, bundle.sources[0].camera,
                                np.full((40, 40), 0.5))
