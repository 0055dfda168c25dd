import numpy as np
import pytest

from metricmask import autodiff as ad
from metricmask.autodiff import AutodiffError, Tensor, grad_check
from metricmask import models
from metricmask.models import (
    DiscriminatorSpec,
    FeatureConfig,
    GeneratorSpec,
    discriminator_forward,
    discriminator_parameter_count,
    generator_forward,
    generator_parameter_count,
    init_discriminator,
    init_generator,
    parameter_count,
    transform_array,
    transform_tensor,
)

TINY_G = GeneratorSpec(blstm_layers=2, blstm_width=4, dense_width=6, output_bins=10)
TINY_D = DiscriminatorSpec(conv_layers=4, filters=3, dense_widths=(5, 3))


class TestGenerator:
    def test_mask_range(self):
        rng = np.random.default_rng(0)
        params = init_generator(TINY_G, rng)
        feats = np.abs(rng.standard_normal((12, 10))) * 5
        mask = generator_forward(params, TINY_G, feats, mask_floor=0.05)
        assert mask.shape == (12, 10)
        assert mask.data.min() >= 0.05
        assert mask.data.max() <= 1.0

    def test_zero_params_zero_input_gives_half(self):
        rng = np.random.default_rng(1)
        params = init_generator(TINY_G, rng)
        for p in params.values():
            p.data = np.zeros_like(p.data)
        mask = generator_forward(params, TINY_G, np.zeros((5, 10)), mask_floor=0.05)
        assert np.allclose(mask.data, 0.5)

    def test_grad_check_small(self):
        rng = np.random.default_rng(2)
        params = init_generator(TINY_G, rng)
        feats = np.abs(rng.standard_normal((10, 10)))
        err = grad_check(
            lambda: ad.reduce_mean(generator_forward(params, TINY_G, feats)),
            list(params.values()),
        )
        assert err < 1e-4

    def test_bin_mismatch_rejected(self):
        rng = np.random.default_rng(3)
        params = init_generator(TINY_G, rng)
        with pytest.raises(AutodiffError, match="bins"):
            generator_forward(params, TINY_G, np.zeros((5, 11)))

    def test_parameter_count_closed_form(self):
        rng = np.random.default_rng(4)
        assert parameter_count(init_generator(TINY_G, rng)) == generator_parameter_count(TINY_G)

    def test_full_scale_parameter_count(self):
        # 2 BLSTM layers (200/dir), dense 300, 257 sigmoid bins
        spec = GeneratorSpec()
        expected = 0
        in_dim = 257
        for _ in range(2):
            expected += 2 * ((in_dim + 200) * 800 + 800)
            in_dim = 400
        expected += 400 * 300 + 300
        expected += 300 * 257 + 257
        assert generator_parameter_count(spec) == expected == 1_892_057

    def test_determinism_same_seed(self):
        p1 = init_generator(TINY_G, np.random.default_rng(7))
        p2 = init_generator(TINY_G, np.random.default_rng(7))
        feats = np.abs(np.random.default_rng(8).standard_normal((6, 10)))
        m1 = generator_forward(p1, TINY_G, feats).data
        m2 = generator_forward(p2, TINY_G, feats).data
        assert np.array_equal(m1, m2)


class TestDiscriminator:
    def test_scalar_output(self):
        rng = np.random.default_rng(5)
        params = init_discriminator(TINY_D, rng)
        out = discriminator_forward(params, TINY_D, np.abs(rng.standard_normal((20, 22))))
        assert out.shape == ()
        assert np.isfinite(out.data)

    def test_pooling_absorbs_duration_of_constant_content(self):
        rng = np.random.default_rng(6)
        params = init_discriminator(TINY_D, rng)
        row = np.abs(rng.standard_normal(22)) + 0.5
        short = np.tile(row, (30, 1))
        long = np.tile(row, (75, 1))
        d_short = discriminator_forward(params, TINY_D, short).item()
        d_long = discriminator_forward(params, TINY_D, long).item()
        # a time-constant map yields time-constant valid-conv features, so
        # pooling gives the same statistics at any length
        assert abs(d_short - d_long) < 1e-6

    def test_zero_input_zero_biases_gives_zero(self):
        rng = np.random.default_rng(7)
        params = init_discriminator(TINY_D, rng)
        for name, p in params.items():
            if name.endswith(".b"):
                p.data = np.zeros_like(p.data)
        out = discriminator_forward(params, TINY_D, np.zeros((20, 22)))
        assert out.item() == 0.0

    def test_grad_check_small(self):
        rng = np.random.default_rng(8)
        params = init_discriminator(TINY_D, rng)
        mag = np.abs(rng.standard_normal((20, 22)))
        err = grad_check(
            lambda: discriminator_forward(params, TINY_D, mag), list(params.values())
        )
        assert err < 1e-4

    def test_input_too_small_reports_minimums(self):
        rng = np.random.default_rng(9)
        params = init_discriminator(TINY_D, rng)
        with pytest.raises(AutodiffError, match="17 frames"):
            discriminator_forward(params, TINY_D, np.zeros((10, 22)))

    def test_no_nan_under_scaled_inputs(self):
        rng = np.random.default_rng(10)
        params = init_discriminator(TINY_D, rng)
        mag = np.abs(rng.standard_normal((25, 25))) * 100
        out = discriminator_forward(params, TINY_D, mag)
        assert np.isfinite(out.data)

    def test_parameter_count_closed_form(self):
        rng = np.random.default_rng(11)
        assert parameter_count(init_discriminator(TINY_D, rng)) == discriminator_parameter_count(TINY_D)

    def test_full_scale_parameter_count(self):
        # 4 convs of 15 5x5 filters, pooled to 15, dense 50/10/1
        spec = DiscriminatorSpec()
        expected = (15 * 1 * 25 + 15) + 3 * (15 * 15 * 25 + 15)
        expected += 15 * 50 + 50 + 50 * 10 + 10 + 10 * 1 + 1
        assert discriminator_parameter_count(spec) == expected == 18_631

    def test_pooled_dim_equals_filters(self):
        assert TINY_D.pooled_dim == TINY_D.filters


class TestFeatureConfig:
    def test_transforms_monotone_on_nonnegatives(self):
        x = np.linspace(0, 5, 50)
        for cfg in (FeatureConfig("magnitude"), FeatureConfig("power", 0.3), FeatureConfig("log1p")):
            y = transform_array(x, cfg)
            assert np.all(np.diff(y) >= 0)

    def test_tensor_and_array_paths_agree(self):
        rng = np.random.default_rng(12)
        x = np.abs(rng.standard_normal((4, 5)))
        for cfg in (FeatureConfig("magnitude"), FeatureConfig("power", 0.3), FeatureConfig("log1p")):
            arr = transform_array(x, cfg)
            ten = transform_tensor(Tensor(x), cfg).data
            assert np.allclose(arr, ten, atol=1e-9)

    def test_unknown_transform_rejected(self):
        with pytest.raises(ValueError, match="transform"):
            FeatureConfig("mel")
