import numpy as np
import pytest

from tlbench.augment import (
    OP_KINDS,
    AugOp,
    AugPipeline,
    apply_op,
    apply_pipeline,
    extra_aug_policy,
    norm_aug_policy,
    resize,
)

from conftest import random_image


class TestPolicies:
    def test_norm_aug_resize_target(self):
        p = norm_aug_policy(224, 224)
        assert p.resize_target == (224, 224)

    def test_norm_aug_op_kinds(self):
        kinds = norm_aug_policy(64, 64).op_kinds()
        assert kinds <= {"random_crop", "rotate", "flip_h", "flip_v", "gaussian_blur"}

    def test_all_probabilities_valid(self):
        for p in (norm_aug_policy(32, 32), extra_aug_policy(32, 32)):
            assert all(0.0 < op.p <= 1.0 for op in p.ops)

    def test_extra_aug_strict_superset(self):
        norm = norm_aug_policy(64, 64).op_kinds()
        extra = extra_aug_policy(64, 64).op_kinds()
        assert norm < extra
        assert "coarse_dropout" in extra

    def test_extra_aug_resize_target(self):
        assert extra_aug_policy(96, 128).resize_target == (96, 128)

    def test_serialization_round_trip(self):
        p = extra_aug_policy(48, 48, seed=17)
        back = AugPipeline.from_dict(p.to_dict())
        assert back == p


class TestApplyPipeline:
    def test_p_zero_equals_resize_only(self, rng):
        img = random_image(rng)
        ops = tuple(AugOp(kind, p=0.0) for kind in ("rotate", "flip_h", "gaussian_blur"))
        pipeline = AugPipeline(resize_target=(32, 32), ops=ops, seed=0)
        out = apply_pipeline(img, pipeline, pipeline.stream_for(0))
        assert np.array_equal(out, resize(img, (32, 32)))

    def test_double_flip_is_identity(self, rng):
        img = random_image(rng)
        ops = (AugOp("flip_h", p=1.0), AugOp("flip_h", p=1.0))
        pipeline = AugPipeline(resize_target=(40, 40), ops=ops, seed=0)
        out = apply_pipeline(img, pipeline, pipeline.stream_for(3))
        assert np.array_equal(out, resize(img, (40, 40)))

    def test_deterministic_given_stream(self, rng):
        pipeline = extra_aug_policy(32, 32, seed=5)
        img = random_image(rng)
        a = apply_pipeline(img, pipeline, pipeline.stream_for(11))
        b = apply_pipeline(img, pipeline, pipeline.stream_for(11))
        assert np.array_equal(a, b)

    def test_different_streams_differ(self, rng):
        pipeline = extra_aug_policy(32, 32, seed=5)
        img = random_image(rng)
        a = apply_pipeline(img, pipeline, pipeline.stream_for(0))
        b = apply_pipeline(img, pipeline, pipeline.stream_for(1))
        assert not np.array_equal(a, b)

    def test_output_shape_contract(self, rng):
        pipeline = extra_aug_policy(37, 53, seed=1)
        for i in range(10):
            img = random_image(rng, h=int(rng.integers(8, 100)), w=int(rng.integers(8, 100)))
            out = apply_pipeline(img, pipeline, pipeline.stream_for(i))
            assert out.shape == (37, 53, 3)
            assert out.dtype == np.uint8

    def test_probability_gate_frequency(self, rng):
        # asymmetric image makes a flip detectable exactly
        img = np.zeros((8, 8, 1), dtype=np.uint8)
        img[:, :4] = 255
        p_gate = 0.3
        pipeline = AugPipeline((8, 8), (AugOp("flip_h", p=p_gate),), seed=42)
        n = 10_000
        flips = sum(
            not np.array_equal(apply_pipeline(img, pipeline, pipeline.stream_for(i)), img)
            for i in range(n)
        )
        bound = 3 * np.sqrt(p_gate * (1 - p_gate) / n)
        assert abs(flips / n - p_gate) <= bound


class TestOperators:
    def test_flip_v_involution(self, rng):
        img = random_image(rng)
        op = AugOp("flip_v", p=1.0)
        stream = np.random.default_rng(0)
        assert np.array_equal(apply_op(apply_op(img, op, stream), op, stream), img)

    def test_median_blur_constant_invariant(self):
        img = np.full((16, 16, 3), 77, dtype=np.uint8)
        out = apply_op(img, AugOp("median_blur", p=1.0), np.random.default_rng(0))
        assert np.array_equal(out, img)

    def test_rotate_zero_angle_identity(self, rng):
        img = random_image(rng, 32, 32)
        out = apply_op(img, AugOp("rotate", p=1.0, params={"limit": 0.0}), np.random.default_rng(0))
        assert np.array_equal(out, img)

    def test_rotate_solid_color_preserved(self):
        img = np.full((32, 32, 3), 130, dtype=np.uint8)
        out = apply_op(img, AugOp("rotate", p=1.0), np.random.default_rng(3))
        assert np.array_equal(out, img)

    def test_coarse_dropout_bound(self, rng):
        img = np.full((50, 50, 3), 128, dtype=np.uint8)  # no zero pixels
        params = {"max_holes": 4, "max_size_frac": 0.1, "fill": 0}
        for trial in range(20):
            out = apply_op(img, AugOp("coarse_dropout", p=1.0, params=params), np.random.default_rng(trial))
            zeroed = int((out == 0).all(axis=2).sum())
            assert 0 < zeroed <= 4 * 5 * 5  # mask-counting oracle: n * h * w

    def test_all_kinds_total_on_valid_images(self, rng):
        img = random_image(rng, 24, 24)
        for kind in OP_KINDS:
            out = apply_op(img, AugOp(kind, p=1.0), np.random.default_rng(1))
            assert out.shape == img.shape
            assert out.dtype == np.uint8

    def test_grayscale_supported(self, rng):
        img = random_image(rng, 24, 24, c=1)
        for kind in OP_KINDS:
            out = apply_op(img, AugOp(kind, p=1.0), np.random.default_rng(2))
            assert out.shape == img.shape

    def test_invalid_probability_rejected(self):
        with pytest.raises(ValueError):
            AugOp("rotate", p=1.5)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            AugOp("solarize", p=0.5)
