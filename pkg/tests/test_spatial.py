import numpy as np
import pytest

from roadcast.autodiff import Tensor, backward
from roadcast.config import ModelConfig
from roadcast.spatial import (
    AttentionRecorder,
    ChannelGraph,
    GraphBundle,
    MaskDriftError,
    apply_mask,
    channel_conv,
    dual_graph_conv,
    init_gate_params,
    named_gate_params,
)

from oracles import finite_difference_grad, grad_close


def small_cfg(**kw):
    base = dict(hidden_dim=4, layers=1, history=3, horizon=2, batch_size=2, in_features=1)
    base.update(kw)
    return ModelConfig(**base)


def random_bundle(rng, n, density=0.4):
    def channel(label):
        a = (rng.uniform(size=(n, n)) < density).astype(float)
        np.fill_diagonal(a, 0.0)
        return ChannelGraph(a, rng.normal(size=(n, 2)), label)

    return GraphBundle(distance=channel("distance"), latent=channel("latent"))


def build(rng, n, in_dim, out_dim, cfg):
    bundle = random_bundle(rng, n)
    labels = [g.label for g in bundle.channels(cfg.use_latent)]
    params = init_gate_params(rng, in_dim, out_dim, n, labels, cfg)
    return bundle, params


class TestMask:
    def test_all_ones_mask_is_identity(self):
        rng = np.random.default_rng(0)
        a = (rng.uniform(size=(5, 5)) < 0.5).astype(float)
        np.fill_diagonal(a, 0.0)
        masked = apply_mask(Tensor(a), Tensor(np.ones((5, 5))))
        assert np.array_equal(masked.data, a)

    def test_zero_adjacency_stays_zero(self):
        masked = apply_mask(Tensor(np.zeros((4, 4))), Tensor(np.full((4, 4), 3.7)))
        assert np.array_equal(masked.data, np.zeros((4, 4)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mask"):
            apply_mask(Tensor(np.zeros((4, 4))), Tensor(np.zeros((3, 3))))

    def test_mask_gradient_lives_on_adjacency_support(self):
        rng = np.random.default_rng(1)
        cfg = small_cfg(use_latent=False)
        n, in_dim, out_dim = 5, 3, 4
        bundle, params = build(rng, n, in_dim, out_dim, cfg)
        h = Tensor(rng.uniform(-1, 1, size=(1, n, in_dim)))
        w = rng.normal(size=(1, n, out_dim))
        backward((dual_graph_conv(h, bundle, params, cfg) * Tensor(w)).sum())
        mask = params.channels["distance"].mask
        support = bundle.distance.adjacency != 0.0
        assert np.all(mask.grad[~support] == 0.0)
        assert np.any(mask.grad[support] != 0.0)

        # finite differences agree on a few support entries
        mask0 = mask.data.copy()
        idx = np.argwhere(support)[:3]

        def loss_for(mask_values):
            mask.data[:] = mask_values
            out = dual_graph_conv(h, bundle, params, cfg)
            mask.data[:] = mask0
            return float((out.data * w).sum())

        for i, j in idx:
            step = 1e-5
            up = mask0.copy()
            up[i, j] += step
            down = mask0.copy()
            down[i, j] -= step
            fd = (loss_for(up) - loss_for(down)) / (2 * step)
            assert mask.grad[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_mask_drift_raises_and_clamp_recovers(self):
        rng = np.random.default_rng(2)
        cfg = small_cfg(use_latent=False)
        n = 4
        bundle, params = build(rng, n, 2, 3, cfg)
        mask = params.channels["distance"].mask
        mask.data[:] = -5.0  # drive every masked degree negative
        h = Tensor(rng.uniform(-1, 1, size=(1, n, 2)))
        with pytest.raises(MaskDriftError) as info:
            dual_graph_conv(h, bundle, params, cfg)
        info.value.clamp_offending_entries()
        out = dual_graph_conv(h, bundle, params, cfg)
        assert np.all(np.isfinite(out.data))


class TestNormalization:
    def test_symmetric_two_node_operator(self):
        # one undirected edge: degrees 2, D^-1/2 (A+I) D^-1/2 is constant 1/2
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        graph = ChannelGraph(a, np.array([[0.0, 0.0], [1.0, 1.0]]), "distance")
        assert np.array_equal(graph.norm_whole_t.data[0], [[0.5, 0.5], [0.5, 0.5]])

    def test_empty_graph_conv_is_sigmoid_of_linear_map(self):
        rng = np.random.default_rng(3)
        cfg = small_cfg()
        n, in_dim, out_dim = 4, 3, 2
        graph = ChannelGraph(np.zeros((n, n)), rng.normal(size=(n, 2)), "distance")
        params = init_gate_params(rng, in_dim, out_dim, n, ["distance"], cfg)
        h0 = rng.uniform(-1, 1, size=(2, n, in_dim))
        out = channel_conv(Tensor(h0), graph, params.channels["distance"], cfg)
        expected = 1.0 / (1.0 + np.exp(-(h0 @ params.channels["distance"].weight.data)))
        # every region reduces to the self-loop, so attention mixes four
        # identical vectors and returns them unchanged
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        cfg = small_cfg(use_latent=False, use_mask=False)
        n, in_dim, out_dim = 6, 3, 4
        a = (rng.uniform(size=(n, n)) < 0.4).astype(float)
        np.fill_diagonal(a, 0.0)
        pos = rng.normal(size=(n, 2))
        params = init_gate_params(rng, in_dim, out_dim, n, ["distance"], cfg)
        h0 = rng.uniform(-1, 1, size=(1, n, in_dim))

        out = dual_graph_conv(
            Tensor(h0), GraphBundle(ChannelGraph(a, pos, "distance")), params, cfg
        )
        perm = rng.permutation(n)
        out_p = dual_graph_conv(
            Tensor(h0[:, perm]),
            GraphBundle(ChannelGraph(a[np.ix_(perm, perm)], pos[perm], "distance")),
            params,
            cfg,
        )
        assert np.allclose(out_p.data, out.data[:, perm], atol=1e-12)


class TestAttention:
    def test_identical_region_vectors_average_to_themselves(self):
        rng = np.random.default_rng(5)
        cfg = small_cfg()
        n, in_dim, out_dim = 3, 2, 4
        # no edges: all four region outputs coincide
        graph = ChannelGraph(np.zeros((n, n)), rng.normal(size=(n, 2)), "distance")
        params = init_gate_params(rng, in_dim, out_dim, n, ["distance"], cfg)
        recorder = AttentionRecorder()
        h0 = rng.uniform(-1, 1, size=(1, n, in_dim))
        out = channel_conv(Tensor(h0), graph, params.channels["distance"], cfg, recorder)
        alpha = recorder.rows[0]["alpha"]
        assert np.allclose(alpha, 0.25, atol=1e-12)
        single = 1.0 / (1.0 + np.exp(-(h0 @ params.channels["distance"].weight.data)))
        assert np.allclose(out.data, single, atol=1e-12)

    def test_alpha_is_probability_distribution(self):
        rng = np.random.default_rng(6)
        cfg = small_cfg()
        bundle, params = build(rng, 7, 3, 4, cfg)
        recorder = AttentionRecorder()
        h = Tensor(rng.uniform(-1, 1, size=(2, 7, 3)))
        dual_graph_conv(h, bundle, params, cfg, recorder)
        assert len(recorder.rows) == 2  # one per channel
        for row in recorder.rows:
            alpha = row["alpha"]
            assert np.all(alpha >= 0.0)
            assert np.allclose(alpha.sum(axis=0), 1.0, atol=1e-9)

    def test_dominant_logit_selects_its_region(self):
        rng = np.random.default_rng(7)
        logits = Tensor(np.array([10.0, 0.0, 0.0, 0.0]).reshape(4, 1, 1, 1))
        regions = Tensor(rng.uniform(-1, 1, size=(4, 1, 1, 5)))
        out = (logits.softmax(axis=0) * regions).sum(axis=0)
        ref = regions.data[0, 0, 0]
        assert np.allclose(out.data[0, 0], ref, rtol=1e-3, atol=1e-3 * np.abs(ref).max())


class TestFusion:
    def test_zero_channel_outputs_leave_linear_term(self):
        rng = np.random.default_rng(8)
        cfg = small_cfg(use_latent=False, use_mask=False, use_dynamic_regions=False)
        n, in_dim, out_dim = 4, 3, 4
        bundle, params = build(rng, n, in_dim, out_dim, cfg)
        params.fuse_out["distance"].data[:] = 0.0
        h0 = rng.uniform(-1, 1, size=(1, n, in_dim))
        out = dual_graph_conv(Tensor(h0), bundle, params, cfg)
        expected = (h0 @ params.fuse_in1.data) @ params.fuse_in2.data
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_all_zero_weights_give_zero(self):
        rng = np.random.default_rng(9)
        cfg = small_cfg()
        bundle, params = build(rng, 4, 3, 4, cfg)
        for t in named_gate_params(params, "g").values():
            if t.data.shape != (4, 4) or not np.all(t.data == 1.0):
                t.data[:] = 0.0
        params.channels["distance"].mask.data[:] = 1.0
        params.channels["latent"].mask.data[:] = 1.0
        h = Tensor(rng.uniform(-1, 1, size=(2, 4, 3)))
        out = dual_graph_conv(h, bundle, params, cfg)
        assert np.array_equal(out.data, np.zeros_like(out.data))

    def test_linearity_in_channel_outputs(self):
        rng = np.random.default_rng(10)
        cfg = small_cfg(use_latent=False, use_mask=False)
        n, in_dim, out_dim = 5, 3, 4
        bundle, params = build(rng, n, in_dim, out_dim, cfg)
        h0 = rng.uniform(-1, 1, size=(1, n, in_dim))
        base = (h0 @ params.fuse_in1.data) @ params.fuse_in2.data
        full = dual_graph_conv(Tensor(h0), bundle, params, cfg).data
        channel_part = full - base
        for scale in (0.0, 0.5, 2.0, -1.3):
            params_scaled_out = channel_part * scale + base
            saved = params.fuse_out["distance"].data.copy()
            params.fuse_out["distance"].data[:] = saved * scale
            scaled = dual_graph_conv(Tensor(h0), bundle, params, cfg).data
            params.fuse_out["distance"].data[:] = saved
            assert np.allclose(scaled, params_scaled_out, atol=1e-12)


class TestFullBlock:
    def test_isolated_sensor_depends_only_on_own_features(self):
        rng = np.random.default_rng(11)
        cfg = small_cfg(use_latent=False)
        n, in_dim, out_dim = 1, 3, 4
        bundle = GraphBundle(ChannelGraph(np.zeros((1, 1)), np.zeros((1, 2)), "distance"))
        params = init_gate_params(rng, in_dim, out_dim, n, ["distance"], cfg)
        h0 = rng.uniform(-1, 1, size=(1, 1, in_dim))
        out1 = dual_graph_conv(Tensor(h0), bundle, params, cfg).data
        out2 = dual_graph_conv(Tensor(h0 + 0.0), bundle, params, cfg).data
        assert np.array_equal(out1, out2)

    def test_mask_initialization_identity_is_bit_exact(self):
        n, in_dim, out_dim = 6, 3, 4
        outs = {}
        for use_mask in (True, False):
            rng = np.random.default_rng(12)
            cfg = small_cfg(use_mask=use_mask)
            bundle, params = build(rng, n, in_dim, out_dim, cfg)
            h = Tensor(np.random.default_rng(13).uniform(-1, 1, size=(2, n, in_dim)))
            outs[use_mask] = dual_graph_conv(h, bundle, params, cfg).data
        assert np.array_equal(outs[True], outs[False])

    def test_zeroed_latent_fusion_removes_latent_dependence(self):
        rng = np.random.default_rng(14)
        cfg = small_cfg()
        n, in_dim, out_dim = 5, 3, 4
        bundle, params = build(rng, n, in_dim, out_dim, cfg)
        params.fuse_out["latent"].data[:] = 0.0
        h = Tensor(rng.uniform(-1, 1, size=(1, n, in_dim)))
        base = dual_graph_conv(h, bundle, params, cfg).data
        # perturb the latent adjacency: output must not move at all
        perturbed = bundle.latent.adjacency.copy()
        flip = np.argwhere(~np.eye(n, dtype=bool))[0]
        perturbed[flip[0], flip[1]] = 1.0 - perturbed[flip[0], flip[1]]
        bundle2 = GraphBundle(
            distance=bundle.distance,
            latent=ChannelGraph(perturbed, bundle.latent.positions, "latent"),
        )
        moved = dual_graph_conv(h, bundle2, params, cfg).data
        assert np.array_equal(base, moved)

    def test_basic_config_matches_plain_convolution(self):
        # independent plain implementation of the single-graph convolution
        rng = np.random.default_rng(15)
        cfg = small_cfg(use_latent=False, use_mask=False, use_dynamic_regions=False)
        n, in_dim, out_dim = 6, 3, 4
        a = (rng.uniform(size=(n, n)) < 0.4).astype(float)
        np.fill_diagonal(a, 0.0)
        bundle = GraphBundle(ChannelGraph(a, rng.normal(size=(n, 2)), "distance"))
        params = init_gate_params(rng, in_dim, out_dim, n, ["distance"], cfg)
        h0 = rng.uniform(-1, 1, size=(2, n, in_dim))

        deg = a.sum(axis=1) + 1.0
        dhalf = np.diag(deg**-0.5)
        norm = dhalf @ (a + np.eye(n)) @ dhalf
        conv = 1.0 / (1.0 + np.exp(-(norm @ h0 @ params.channels["distance"].weight.data)))
        expected = (
            h0 @ params.fuse_in1.data @ params.fuse_in2.data
            + conv @ params.fuse_out["distance"].data
        )
        out = dual_graph_conv(Tensor(h0), bundle, params, cfg)
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_full_gradient_check(self):
        rng = np.random.default_rng(16)
        cfg = small_cfg()
        n, in_dim, out_dim = 6, 3, 4
        bundle, params = build(rng, n, in_dim, out_dim, cfg)
        named = named_gate_params(params, "gate")
        h0 = rng.uniform(-1, 1, size=(1, n, in_dim))
        w = rng.normal(size=(1, n, out_dim))

        def loss():
            return (dual_graph_conv(Tensor(h0), bundle, params, cfg) * Tensor(w)).sum()

        backward(loss())
        for name, tensor in named.items():
            saved = tensor.data.copy()

            def f(values, tensor=tensor, saved=saved):
                tensor.data[:] = values
                val = loss().item()
                tensor.data[:] = saved
                return val

            fd = finite_difference_grad(f, saved)
            assert grad_close(tensor.grad, fd, rtol=1e-4), name
