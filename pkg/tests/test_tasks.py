"""Toy task generators and metrics."""
import numpy as np
import pytest

from priordiff.errors import ConfigError, DimensionError
from priordiff.tasks import (
    TaskSample,
    ToyDatasetSpec,
    box_downsample,
    generate_image,
    load_png,
    make_sample,
    psnr,
    save_png,
)

INPAINT = ToyDatasetSpec(kind="inpaint", image_size=32, count=128, seed=11, mask_ratio=0.3)
SR = ToyDatasetSpec(kind="sr", image_size=32, count=128, seed=11, scale=2)


class TestGenerateImage:
    def test_deterministic(self):
        a = generate_image(INPAINT, 5)
        b = generate_image(INPAINT, 5)
        assert np.array_equal(a, b)

    def test_range(self):
        for i in range(20):
            img = generate_image(INPAINT, i)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_non_degenerate_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            i, j = rng.choice(INPAINT.count, size=2, replace=False)
            a, b = generate_image(INPAINT, int(i)), generate_image(INPAINT, int(j))
            frac = np.mean(np.abs(a - b) > 1e-3)
            assert frac > 0.10

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            generate_image(INPAINT, INPAINT.count)

    def test_seed_changes_content(self):
        other = ToyDatasetSpec(kind="inpaint", image_size=32, count=128, seed=12)
        assert not np.array_equal(generate_image(INPAINT, 0), generate_image(other, 0))


class TestInpaintSamples:
    def test_zero_ratio_is_identity(self):
        spec = ToyDatasetSpec(kind="inpaint", image_size=16, count=4, seed=1, mask_ratio=0.0)
        s = make_sample(spec, 0)
        assert np.array_equal(s.input, s.gt)

    def test_full_ratio_is_all_gray(self):
        spec = ToyDatasetSpec(kind="inpaint", image_size=16, count=4, seed=1, mask_ratio=1.0)
        s = make_sample(spec, 0)
        assert np.all(s.input == 0.5)

    def test_mask_is_binary_and_fill_rule_holds(self):
        s = make_sample(INPAINT, 3)
        mask = s.meta["mask"]
        assert set(np.unique(mask)) <= {0.0, 1.0}
        np.testing.assert_array_equal(s.input, s.gt * (1 - mask) + 0.5 * mask)

    def test_identity_outside_mask(self):
        s = make_sample(INPAINT, 7)
        outside = s.meta["mask"] == 0.0
        assert np.array_equal(s.input[:, outside], s.gt[:, outside])

    def test_mask_area_matches_ratio(self):
        s = make_sample(INPAINT, 2)
        assert s.meta["mask"].sum() == round(0.3 * 32 * 32)

    def test_model_input_is_input(self):
        s = make_sample(INPAINT, 0)
        assert s.model_input is s.input

    def test_bad_ratio(self):
        with pytest.raises(ConfigError):
            make_sample(ToyDatasetSpec(kind="inpaint", mask_ratio=1.5), 0)


class TestSrSamples:
    def test_low_res_shape(self):
        s = make_sample(SR, 0)
        assert s.input.shape == (1, 16, 16)
        assert s.gt.shape == (1, 32, 32)

    def test_block_means(self):
        spec = ToyDatasetSpec(kind="sr", image_size=4, count=2, seed=3, scale=2)
        s = make_sample(spec, 0)
        for i in range(2):
            for j in range(2):
                block = s.gt[0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                assert s.input[0, i, j] == pytest.approx(block.mean(), abs=1e-15)

    def test_downsampling_gt_reproduces_input_bit_exactly(self):
        for i in range(8):
            s = make_sample(SR, i)
            assert np.array_equal(box_downsample(s.gt, SR.scale), s.input)

    def test_model_input_is_nearest_neighbor_upsample(self):
        s = make_sample(SR, 1)
        up = s.model_input
        assert up.shape == s.gt.shape
        assert np.array_equal(up[0, ::2, ::2], s.input[0])
        assert np.array_equal(up[0, 1::2, 1::2], s.input[0])

    def test_bad_scale(self):
        with pytest.raises(ConfigError):
            make_sample(ToyDatasetSpec(kind="sr", image_size=32, scale=3), 0)


class TestPsnr:
    def test_identical_images_hit_cap(self):
        img = generate_image(INPAINT, 0)
        assert psnr(img, img) == 99.0

    def test_known_mse(self):
        a = np.zeros((1, 10, 10))
        b = np.full((1, 10, 10), 0.1)  # MSE = 0.01
        assert psnr(a, b) == pytest.approx(20.0)

    def test_unit_mse(self):
        a = np.zeros((1, 4, 4))
        b = np.ones((1, 4, 4))
        assert psnr(a, b) == pytest.approx(0.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((1, 4, 4)), np.zeros((1, 5, 5)))


class TestPngRoundTrip:
    def test_quantized_round_trip(self, tmp_path):
        img = generate_image(INPAINT, 9)
        path = tmp_path / "sample.png"
        save_png(img, path)
        back = load_png(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12
