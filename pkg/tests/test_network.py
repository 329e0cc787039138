import numpy as np
import pytest

from gridpose.codes import GridSpec, encode_projection
from gridpose.geometry import build_knn_graph
from gridpose.graphnet import StagePlan
from gridpose.network import NetConfig, ProgressiveLocalizer, localization_loss

from conftest import fd_check_params

SMALL_GRID = GridSpec(roi_size=32, depth=4, base_depth=2)
SMALL_PLAN = StagePlan(l0=1, lj=1, stages=2, head_hidden=8)


def small_net(seed=0, patch=1):
    cfg = NetConfig(grid=SMALL_GRID, n_keypoints=6, plan=SMALL_PLAN,
                    encoder_channels=(4, 6, 8), decoder_widths=(6, 5),
                    patch=patch, seed=seed)
    return ProgressiveLocalizer(cfg)


def small_inputs(seed=0, batch=2):
    rng = np.random.default_rng(seed)
    kp = rng.normal(size=(6, 3))
    graph = build_knn_graph(kp, 3)
    images = rng.normal(size=(batch, 3, 32, 32))
    gt_codes = [encode_projection(rng.uniform(0, 32, size=(6, 2)), SMALL_GRID)
                for _ in range(batch)]
    gt_masks = (rng.uniform(size=(batch, 2, 16, 16)) > 0.5).astype(float)
    return graph, images, gt_codes, gt_masks


class TestForward:
    def test_output_shapes(self):
        net = small_net()
        graph, images, *_ = small_inputs()
        out = net.forward(images, graph)
        assert out.p_v.shape == (2, 6)
        assert out.p_x.shape == (2, 6, 4)
        assert out.p_y.shape == (2, 6, 4)
        assert out.mask_logits.shape == (2, 2, 16, 16)

    def test_probabilities_in_unit_interval(self):
        net = small_net(1)
        graph, images, *_ = small_inputs(1)
        out = net.forward(images * 30, graph)
        for arr in (out.p_v, out.p_x, out.p_y):
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_bitwise_deterministic(self):
        graph, images, *_ = small_inputs(2)
        a = small_net(5).forward(images, graph)
        b = small_net(5).forward(images, graph)
        assert np.array_equal(a.p_x, b.p_x)
        assert np.array_equal(a.mask_logits, b.mask_logits)

    def test_stage_truncation(self):
        net = small_net()
        graph, images, *_ = small_inputs()
        out = net.forward(images, graph, max_stage=0)
        assert out.p_x.shape == (2, 6, 2)  # base-depth bits only
        out1 = net.forward(images, graph, max_stage=1)
        assert out1.p_x.shape == (2, 6, 3)

    def test_teacher_forcing_changes_patch_cells(self):
        net = small_net(3)
        graph, images, gt_codes, _ = small_inputs(3)
        free = net.forward(images, graph)
        forced = net.forward(images, graph, teacher_codes=gt_codes)
        # outputs exist and have the same shape; values generally differ
        assert free.p_x.shape == forced.p_x.shape

    def test_permutation_equivariance_from_embeddings(self):
        """Graph-side forward commutes with node relabeling, bitwise."""
        rng = np.random.default_rng(7)
        for trial in range(10):
            net = small_net(trial)
            graph, images, *_ = small_inputs(trial)
            out = net.forward(images, graph)
            perm = rng.permutation(6)
            # permute the per-node parameter rows of the initial embedding:
            # node identity lives only there, so relabeled nodes with
            # relabeled graph must produce identically permuted outputs.
            net.embed.w.value[...] = net.embed.w.value[np.argsort(perm)][:]
            net.embed.b.value[...] = net.embed.b.value[np.argsort(perm)][:]
            out_p = net.forward(images, graph.permuted(perm))
            assert np.array_equal(out_p.p_v[:, perm], out.p_v)
            assert np.array_equal(out_p.p_x[:, perm], out.p_x)
            assert np.array_equal(out_p.p_y[:, perm], out.p_y)
            assert np.array_equal(out_p.mask_logits, out.mask_logits)


class TestBackward:
    @pytest.mark.parametrize("seed", range(3))
    def test_full_model_gradients(self, seed):
        net = small_net(seed)
        graph, images, gt_codes, gt_masks = small_inputs(seed)

        def forward():
            out = net.forward(images, graph)
            bd, *_ = localization_loss(out, gt_codes, gt_masks)
            sig = b"".join(a.tobytes() for a in net.routing())
            return bd.total, sig

        forward()
        net.zero_grad()
        out = net.forward(images, graph)
        _, d_pv, d_px, d_py, d_mask = localization_loss(out, gt_codes, gt_masks)
        net.backward(d_pv, d_px, d_py, d_mask)
        err = fd_check_params(net.params(), forward, max_coords=80,
                              rng=np.random.default_rng(seed + 50))
        assert err < 1e-4

    def test_patch3_gradients(self):
        net = small_net(9, patch=3)
        graph, images, gt_codes, gt_masks = small_inputs(9)

        def forward():
            out = net.forward(images, graph)
            bd, *_ = localization_loss(out, gt_codes, gt_masks)
            sig = b"".join(a.tobytes() for a in net.routing())
            return bd.total, sig

        forward()
        net.zero_grad()
        out = net.forward(images, graph)
        _, d_pv, d_px, d_py, d_mask = localization_loss(out, gt_codes, gt_masks)
        net.backward(d_pv, d_px, d_py, d_mask)
        err = fd_check_params(net.params(), forward, max_coords=60,
                              rng=np.random.default_rng(1))
        assert err < 1e-4

    def test_backward_before_forward(self):
        net = small_net()
        with pytest.raises(RuntimeError):
            net.backward(None, None, None, None)


class TestConfig:
    def test_plan_grid_consistency_enforced(self):
        with pytest.raises(ValueError):
            NetConfig(grid=SMALL_GRID, n_keypoints=4,
                      plan=StagePlan(l0=1, lj=1, stages=3),
                      encoder_channels=(4, 6, 8), decoder_widths=(6, 5, 4))

    def test_loss_truncates_targets_to_predicted_bits(self):
        net = small_net()
        graph, images, gt_codes, gt_masks = small_inputs()
        out = net.forward(images, graph, max_stage=0)
        bd, d_pv, d_px, d_py, d_mask = localization_loss(out, gt_codes, gt_masks)
        assert d_px.shape == out.p_x.shape
        assert np.isfinite(bd.total)
