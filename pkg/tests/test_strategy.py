import numpy as np
import pytest

from tlbench.backbones import TinyConvBackbone
from tlbench.strategy import (
    HEAD_GROUP,
    AnchorSnapshot,
    L2SPConfig,
    build_head,
    extend_plan_for_qat,
    l2sp_gradient,
    l2sp_penalty,
    make_fine_tuning_plan,
    make_l2sp_plan,
    snapshot_anchors,
)


class TestHead:
    def test_param_count_worked_example(self):
        head = build_head(1280, 8, 0.01)
        assert head.param_count == 1280 * 256 + 256 + 256 * 8 + 8 == 329_992

    def test_binary_head(self):
        head = build_head(1280, 2, 0.0)
        assert head.output_units == 2
        assert head.output_activation == "softmax"

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            build_head(1280, 1, 0.01)

    def test_defaults(self):
        head = build_head(64, 5)
        assert head.hidden_units == 256 and head.dropout_rate == 0.5


class TestL2SPPenalty:
    def test_zero_at_anchors_with_zero_head(self):
        anchors = AnchorSnapshot({"w": np.array([1.0, -2.0])})
        current = {"w": np.array([1.0, -2.0]), "head": np.zeros(3)}
        assert l2sp_penalty(current, anchors, L2SPConfig(0.1, 0.01)) == 0.0

    def test_shared_scalar_example(self):
        anchors = AnchorSnapshot({"w": np.array(0.0)})
        val = l2sp_penalty({"w": np.array(1.0)}, anchors, L2SPConfig(alpha=0.1, beta=0.0))
        assert val == pytest.approx(0.05)

    def test_new_scalar_example(self):
        anchors = AnchorSnapshot({})
        val = l2sp_penalty({"h": np.array(2.0)}, anchors, L2SPConfig(alpha=0.0, beta=0.01))
        assert val == pytest.approx(0.02)

    def test_shape_mismatch_rejected(self):
        anchors = AnchorSnapshot({"w": np.zeros(3)})
        with pytest.raises(ValueError, match="shape"):
            l2sp_penalty({"w": np.zeros(4)}, anchors, L2SPConfig())

    def test_decomposition_identity(self, rng):
        for _ in range(20):
            anchors = AnchorSnapshot({"w": rng.normal(size=7)})
            current = {"w": rng.normal(size=7), "h": rng.normal(size=4)}
            alpha, beta = rng.uniform(0, 2, size=2)
            full = l2sp_penalty(current, anchors, L2SPConfig(alpha, beta))
            part_a = l2sp_penalty(current, anchors, L2SPConfig(1.0, 0.0))
            part_b = l2sp_penalty(current, anchors, L2SPConfig(0.0, 1.0))
            assert full == pytest.approx(alpha * part_a + beta * part_b, rel=1e-12)

    def test_gradient_check_finite_differences(self, rng):
        config = L2SPConfig(alpha=0.1, beta=0.01)
        h = 1e-4
        for _ in range(200):
            w0 = rng.normal(size=1)
            w = rng.normal(size=1)
            anchors = AnchorSnapshot({"w": w0})

            def omega(value):
                return l2sp_penalty({"w": np.array([value])}, anchors, config)

            numeric = (omega(w[0] + h) - omega(w[0] - h)) / (2 * h)
            analytic = l2sp_gradient({"w": w}, anchors, config)["w"][0]
            assert numeric == pytest.approx(analytic, rel=1e-4, abs=1e-8)

    def test_torch_differentiable(self):
        import torch

        anchors_np = AnchorSnapshot({"w": np.array([1.0, 2.0])})

        class TorchView:
            def __contains__(self, k):
                return k in anchors_np

            def __getitem__(self, k):
                return torch.from_numpy(np.array(anchors_np[k], dtype=np.float32))

        w = torch.tensor([1.5, 1.0], requires_grad=True)
        h = torch.tensor([0.5], requires_grad=True)
        val = l2sp_penalty({"w": w, "head": h}, TorchView(), L2SPConfig(0.2, 0.04))
        val.backward()
        assert np.allclose(w.grad.numpy(), 0.2 * np.array([0.5, -1.0]))
        assert np.allclose(h.grad.numpy(), 0.04 * np.array([0.5]))


class TestAnchors:
    def test_snapshot_unaffected_by_training(self):
        backbone = TinyConvBackbone()
        anchors = snapshot_anchors(backbone)
        before = {k: v.copy() for k, v in anchors.items()}
        import torch

        with torch.no_grad():
            backbone.block0_w.add_(1.0)
        assert all(np.array_equal(anchors[k], before[k]) for k in before)

    def test_snapshot_restore_round_trip(self):
        backbone = TinyConvBackbone()
        anchors = snapshot_anchors(backbone)
        import torch

        with torch.no_grad():
            backbone.block1_w.mul_(2.0)
        backbone.load({k: np.asarray(v) for k, v in anchors.items()})
        assert snapshot_anchors(backbone) == anchors

    def test_shapes_match_backbone(self):
        backbone = TinyConvBackbone()
        anchors = snapshot_anchors(backbone)
        for group in backbone.parameter_groups():
            assert tuple(anchors[group.name].shape) == group.shape

    def test_snapshot_is_immutable(self):
        anchors = snapshot_anchors(TinyConvBackbone())
        with pytest.raises(ValueError):
            anchors["block0_w"][0] = 9.9


class TestFineTuningPlan:
    def test_default_schedule(self):
        plan = make_fine_tuning_plan(TinyConvBackbone(), 10, 100, 2)
        assert len(plan.phases) == 2
        assert plan.phases[0].epochs == (1, 10)
        assert plan.phases[0].trainable_groups == {HEAD_GROUP}
        assert plan.phases[1].epochs == (11, 100)
        blocks = {name for name in plan.phases[1].trainable_groups if name != HEAD_GROUP}
        assert blocks == {"block1_w", "block1_b", "block2_w", "block2_b"}

    def test_phase1_freezes_backbone(self):
        plan = make_fine_tuning_plan(TinyConvBackbone(), 5, 20, 2)
        backbone_groups = {g.name for g in TinyConvBackbone().parameter_groups()}
        assert not plan.phases[0].trainable_groups & backbone_groups

    def test_zero_unfreeze_is_feature_extraction(self):
        plan = make_fine_tuning_plan(TinyConvBackbone(), 5, 20, 0)
        assert plan.phases[1].trainable_groups == {HEAD_GROUP}

    def test_head_epochs_equal_total_single_phase(self):
        plan = make_fine_tuning_plan(TinyConvBackbone(), 20, 20, 2)
        assert len(plan.phases) == 1
        assert plan.total_epochs == 20

    def test_epoch_coverage_and_disjointness(self):
        plan = make_fine_tuning_plan(TinyConvBackbone(), 7, 31, 1)
        covered = []
        for phase in plan.phases:
            covered.extend(range(phase.epochs[0], phase.epochs[1] + 1))
        assert covered == list(range(1, 32))

    def test_invalid_spans_rejected(self):
        with pytest.raises(ValueError):
            make_fine_tuning_plan(TinyConvBackbone(), 30, 20, 2)
        with pytest.raises(ValueError):
            make_fine_tuning_plan(TinyConvBackbone(), 5, 20, 99)


class TestL2SPPlan:
    def test_single_phase_all_trainable(self):
        backbone = TinyConvBackbone()
        plan = make_l2sp_plan(backbone, 100, L2SPConfig(0.1, 0.01))
        assert len(plan.phases) == 1
        expected = {g.name for g in backbone.parameter_groups()} | {HEAD_GROUP}
        assert plan.phases[0].trainable_groups == expected
        assert plan.phases[0].regularizer == "l2sp"
        assert plan.anchors is not None

    def test_zero_coefficients_zero_penalty(self, rng):
        backbone = TinyConvBackbone()
        plan = make_l2sp_plan(backbone, 10, L2SPConfig(0.0, 0.0))
        current = {"block0_w": rng.normal(size=(8, 3, 3, 3)), "x": rng.normal(size=4)}
        assert l2sp_penalty(current, plan.anchors, plan.l2sp) == 0.0

    def test_anchors_frozen_after_plan_creation(self):
        import torch

        backbone = TinyConvBackbone()
        plan = make_l2sp_plan(backbone, 10)
        snap = {k: v.copy() for k, v in plan.anchors.items()}
        with torch.no_grad():
            backbone.block0_w.mul_(3.0)
        assert all(np.array_equal(plan.anchors[k], snap[k]) for k in snap)


class TestQatExtension:
    def test_extends_fine_tuning_plan(self):
        plan = make_fine_tuning_plan(TinyConvBackbone(), 10, 100, 2)
        extended = extend_plan_for_qat(plan, 50)
        assert len(extended.phases) == 3
        last = extended.phases[-1]
        assert last.epochs == (101, 150)
        assert last.fake_quant
        assert last.trainable_groups == plan.phases[-1].trainable_groups

    def test_extends_l2sp_plan(self):
        plan = make_l2sp_plan(TinyConvBackbone(), 100)
        extended = extend_plan_for_qat(plan, 50)
        assert len(extended.phases) == 2
        assert extended.phases[-1].regularizer == "l2sp"

    def test_zero_extra_rejected(self):
        plan = make_l2sp_plan(TinyConvBackbone(), 10)
        with pytest.raises(ValueError):
            extend_plan_for_qat(plan, 0)

    def test_serialization_includes_all_constants(self):
        plan = extend_plan_for_qat(make_l2sp_plan(TinyConvBackbone(), 100), 50)
        d = plan.to_dict()
        assert d["l2sp"] == {"alpha": 0.1, "beta": 0.01}
        assert [p["epochs"] for p in d["phases"]] == [[1, 100], [101, 150]]
        assert d["optimizer"]["learning_rate"] == 1e-5
