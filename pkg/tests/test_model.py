"""Architecture contracts: shapes, determinism, parameter counts, detach
behavior, residual identity, weight export, and full-model gradients."""

import numpy as np
import pytest

from fpnn import model as M
from fpnn import ops
from fpnn.gradcheck import relative_error


def micro_config(**kw):
    defaults = dict(noi=1, grid_side=8, alpha=0.01, head_hidden=(8,), seed=3)
    defaults.update(kw)
    return M.FpnnConfig(**defaults)


def random_batch(config, n=2, seed=0):
    rng = np.random.default_rng(seed)
    g, d = config.grid_side, config.sample_depth
    raw = rng.standard_normal((n, 3, d, g, g))
    diff = rng.standard_normal((n, 3, d - 1, g, g))
    return raw, diff


class TestBuild:
    def test_same_seed_bit_identical(self):
        a = M.build_model(micro_config())
        b = M.build_model(micro_config())
        assert list(a.tensors) == list(b.tensors)
        for k in a.tensors:
            assert np.array_equal(a.tensors[k], b.tensors[k]), k

    def test_different_seed_differs(self):
        a = M.build_model(micro_config(seed=1))
        b = M.build_model(micro_config(seed=2))
        assert any(not np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)

    def test_param_count_strictly_increasing_in_noi(self):
        counts = [M.build_model(micro_config(noi=k)).n_parameters() for k in range(5)]
        assert all(b > a for a, b in zip(counts, counts[1:]))

    def test_param_count_pure_function_of_config(self):
        c1 = M.build_model(micro_config(seed=10)).n_parameters()
        c2 = M.build_model(micro_config(seed=99)).n_parameters()
        assert c1 == c2

    def test_detach_diff_branch_prunes_stream(self):
        full = M.build_model(micro_config())
        single = M.build_model(micro_config(detach=M.DetachFlags(diff_branch=True)))
        assert any(k.startswith("diff.") for k in full.tensors)
        assert not any(k.startswith("diff.") for k in single.tensors)
        assert any(k.startswith("raw.") for k in single.tensors)

    def test_detach_residual_prunes_projections(self):
        p = M.build_model(micro_config(detach=M.DetachFlags(residual=True)))
        assert not any(k.endswith("proj.w") for k in p.tensors)

    def test_invalid_noi(self):
        with pytest.raises(ValueError):
            micro_config(noi=9)
        with pytest.raises(ValueError):
            micro_config(noi=-1)

    def test_zero_bias_and_bn_init(self):
        p = M.build_model(micro_config())
        assert not p.tensors["raw.init.conv.b"].any()
        assert np.array_equal(p.tensors["raw.front.bn.scale"], np.ones(64))
        assert not p.tensors["raw.front.bn.shift"].any()


class TestForwardShapes:
    @pytest.mark.parametrize("noi", [0, 1, 2, 3, 4])
    @pytest.mark.parametrize("grid", [16, 32])
    def test_output_is_flat_vector(self, noi, grid):
        config = M.FpnnConfig(noi=noi, grid_side=grid, seed=1)
        params = M.build_model(config)
        batch = random_batch(config, n=3)
        preds = M.fpnn_forward(batch, params, mode="eval")
        assert preds.shape == (3,)

    def test_initial_layers_shape_reduction(self):
        # 7x7/s2/p3 conv then 3x3/s2/p1 max pool: 32 -> 16 -> 8
        config = M.FpnnConfig(noi=1, grid_side=32, seed=0)
        params = M.build_model(config)
        raw, diff = random_batch(config, n=1)
        _, _, cache = M.fpnn_forward((raw, diff), params, mode="eval", want_cache=True)
        assert cache["streams"]["raw"]["init"]["pooled_shape"][-2:] == (8, 8)
        assert cache["gap_shapes"]["raw"] == (1, 88, 8, 8)

    def test_block_emits_88_channels(self):
        config = micro_config(noi=3)
        params = M.build_model(config)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 64, 5, 5))
        out = M.inception_block_forward(x, params, "raw", 0)
        assert out.shape == (2, 88, 5, 5)
        out2 = M.inception_block_forward(rng.standard_normal((88, 5, 5)), params, "raw", 1)
        assert out2.shape == (88, 5, 5)

    def test_noi_zero_stream_keeps_64_channels(self):
        config = micro_config(noi=0)
        params = M.build_model(config)
        raw, diff = random_batch(config)
        _, _, cache = M.fpnn_forward((raw, diff), params, mode="eval", want_cache=True)
        assert cache["gap_shapes"]["raw"][1] == 64

    def test_eval_deterministic_bitwise(self):
        config = micro_config()
        params = M.build_model(config)
        batch = random_batch(config)
        a = M.fpnn_forward(batch, params, mode="eval")
        b = M.fpnn_forward(batch, params, mode="eval")
        assert np.array_equal(a, b)

    def test_shape_mismatch_rejected(self):
        config = micro_config()
        params = M.build_model(config)
        raw, diff = random_batch(config)
        from fpnn.errors import ShapeError

        with pytest.raises(ShapeError):
            M.fpnn_forward((raw[:, :, :, :4], diff), params)


class TestDetachBehavior:
    def test_diff_branch_detached_ignores_diff(self):
        config = micro_config(detach=M.DetachFlags(diff_branch=True))
        params = M.build_model(config)
        raw, diff = random_batch(config)
        a = M.fpnn_forward((raw, diff), params)
        b = M.fpnn_forward((raw, diff + 123.0), params)
        assert np.array_equal(a, b)

    def test_conv3d_detached_still_runs(self):
        config = micro_config(detach=M.DetachFlags(conv3d=True))
        params = M.build_model(config)
        preds = M.fpnn_forward(random_batch(config), params)
        assert preds.shape == (2,)
        assert "raw.front.proj.w" in params.tensors
        assert "raw.front.conv3d.w" not in params.tensors

    def test_initial_layers_detached_keeps_grid(self):
        config = micro_config(detach=M.DetachFlags(initial_layers=True))
        params = M.build_model(config)
        raw, diff = random_batch(config)
        _, _, cache = M.fpnn_forward((raw, diff), params, mode="eval", want_cache=True)
        g = config.grid_side
        assert cache["gap_shapes"]["raw"][-2:] == (g, g)

    def test_residual_identity(self):
        # residual on vs off differs by exactly the projected input
        config = micro_config(noi=1)
        with_res = M.build_model(config)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 64, 5, 5))
        out_res = M.inception_block_forward(x, with_res, "raw", 0)

        no_res_cfg = micro_config(noi=1, detach=M.DetachFlags(residual=True))
        no_res = M.build_model(no_res_cfg)
        # same branch weights, no projection
        for k, v in with_res.tensors.items():
            if k in no_res.tensors:
                no_res.tensors[k] = v.copy()
        out_plain = M.inception_block_forward(x, no_res, "raw", 0)

        proj = with_res.tensors["raw.block0.proj.w"]
        spec = ops.ConvSpec((1, 1), (1, 1), (0, 0), 64, 88)
        skip = ops.conv2d_forward(x, proj, np.zeros(88), spec)
        np.testing.assert_allclose(out_res - out_plain, skip, atol=1e-12)


class TestBackward:
    def test_zero_pred_grad_gives_zero_grads(self):
        config = micro_config()
        params = M.build_model(config)
        batch = random_batch(config)
        _, _, cache = M.fpnn_forward(batch, params, mode="train", want_cache=True)
        grads = M.fpnn_backward(params, cache, np.zeros(2))
        assert all(not g.any() for g in grads.values())

    def test_head_bias_grad_is_summed_pred_grad(self):
        config = micro_config()
        params = M.build_model(config)
        batch = random_batch(config)
        _, _, cache = M.fpnn_forward(batch, params, mode="train", want_cache=True)
        pred_grad = np.array([0.7, -0.2])
        grads = M.fpnn_backward(params, cache, pred_grad)
        last = f"head.fc{len(config.head_widths()) - 2}.b"
        np.testing.assert_allclose(grads[last], [pred_grad.sum()], atol=1e-12)

    def test_gradient_flow_everywhere(self):
        # after one backward on a nonzero loss every parameter gets signal
        config = micro_config(noi=1)
        params = M.build_model(config)
        batch = random_batch(config, n=4, seed=9)
        preds, _, cache = M.fpnn_forward(batch, params, mode="train", want_cache=True)
        grads = M.fpnn_backward(params, cache, 2 * (preds - 100.0) / preds.size)
        dead = [k for k, g in grads.items() if np.linalg.norm(g) == 0.0]
        assert dead == []

    def test_full_model_finite_differences(self):
        # micro network, a handful of randomly probed parameters
        config = micro_config(noi=1, grid_side=8)
        params = M.build_model(config)
        batch = random_batch(config, n=2, seed=33)
        target = np.array([3.0, -1.0])

        def loss_fn():
            preds = M.fpnn_forward(batch, params, mode="train")
            return float(((preds - target) ** 2).mean())

        preds, _, cache = M.fpnn_forward(batch, params, mode="train", want_cache=True)
        grads = M.fpnn_backward(params, cache, 2 * (preds - target) / preds.size)

        rng = np.random.default_rng(8)
        names = [k for k in params.tensors if params.tensors[k].size > 0]
        probes = []
        for name in rng.choice(names, size=8, replace=False):
            t = params.tensors[name]
            idx = tuple(rng.integers(0, s) for s in t.shape)
            probes.append((name, idx))

        eps = 1e-5
        for name, idx in probes:
            t = params.tensors[name]
            orig = t[idx]
            t[idx] = orig + eps
            up = loss_fn()
            t[idx] = orig - eps
            down = loss_fn()
            t[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[name][idx]
            err = relative_error(np.array([analytic]), np.array([numeric]))
            assert err < 1e-3, f"{name}{idx}: analytic {analytic}, numeric {numeric}"


class TestWeightExport:
    def test_eight_matrices(self):
        params = M.build_model(micro_config(noi=3))
        mats = M.export_block_weights(params, 0, "raw")
        assert set(mats) == {
            "branch1x1_conv", "branch3x3_reduce", "branch3x3_conv",
            "branch3x3stack_reduce", "branch3x3stack_conv1", "branch3x3stack_conv2",
            "branch_pool_conv", "residual_proj",
        }

    def test_branch1x1_shape(self):
        params = M.build_model(micro_config(noi=2))
        mats0 = M.export_block_weights(params, 0, "raw")
        assert mats0["branch1x1_conv"].shape == (16, 64)
        mats1 = M.export_block_weights(params, 1, "raw")
        assert mats1["branch1x1_conv"].shape == (16, 88)
        assert mats1["branch3x3_conv"].shape == (24, 16 * 9)
        assert mats1["residual_proj"].shape == (88, 88)

    def test_round_trip_bitwise(self):
        params = M.build_model(micro_config(noi=1))
        mats = M.export_block_weights(params, 0, "raw")
        restored = M.import_block_weights(params, 0, "raw", mats)
        for k in params.tensors:
            assert np.array_equal(restored.tensors[k], params.tensors[k]), k

    def test_block_out_of_range(self):
        params = M.build_model(micro_config(noi=1))
        with pytest.raises(ValueError):
            M.export_block_weights(params, 5, "raw")
        with pytest.raises(ValueError):
            M.export_block_weights(params, 0, "nope")
