import math
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from src.errors import SynthesisError, UnsupportedModelError, ValidationError
from src.fields import (
    BlockIIDFieldModel,
    BlockLaw,
    BooleanFieldModel,
    CovarianceModel,
    FieldSample,
    GaussianFieldModel,
    GridSpec,
    RadiusLaw,
    derive_seed,
    load_field,
    model_from_dict,
    sample_block_iid,
    sample_boolean,
    sample_gaussian,
)
from src.fields.gaussian import spectral_coefficients, wrapped_covariance


def replicate_means(values):
    values = np.asarray(values, dtype=float)
    return values.mean(), values.std(ddof=1) / math.sqrt(len(values))


class GridSpecTest(unittest.TestCase):
    def test_rejects_sizes_that_are_not_powers_of_two(self):
        with self.assertRaises(ValidationError) as ctx:
            GridSpec(d=1, N=48)
        self.assertEqual(ctx.exception.field, "grid.N")

    def test_rejects_grids_beyond_the_cell_cap(self):
        with self.assertRaises(ValidationError):
            GridSpec(d=3, N=512)
        GridSpec(d=3, N=256)

    def test_rejects_unsupported_dimension_and_spacing(self):
        with self.assertRaises(ValidationError):
            GridSpec(d=4, N=8)
        with self.assertRaises(ValidationError):
            GridSpec(d=1, N=8, h=0.0)
        with self.assertRaises(ValidationError):
            GridSpec(d=1, N=8, periodic=False)

    def test_torus_distance_uses_the_minimal_image(self):
        grid = GridSpec(d=1, N=8, h=0.5)
        np.testing.assert_array_equal(grid.torus_distance(), [0, 0.5, 1.0, 1.5, 2.0, 1.5, 1.0, 0.5])

    def test_lag_to_offset_checks_grid_multiples_and_half_side(self):
        grid = GridSpec(d=2, N=16, h=0.5)
        self.assertEqual(grid.lag_to_offset((1.0, -0.5)), (2, -1))
        with self.assertRaises(ValidationError):
            grid.lag_to_offset((0.3, 0.0))
        with self.assertRaises(ValidationError):
            grid.lag_to_offset((4.5, 0.0))
        with self.assertRaises(ValidationError):
            grid.lag_to_offset((1.0,))


class BlockIIDFieldTest(unittest.TestCase):
    def setUp(self):
        self.grid = GridSpec(d=2, N=16)

    def test_same_seed_gives_bit_identical_samples(self):
        law = BlockLaw.bernoulli(0.3)
        first = sample_block_iid(self.grid, 4, law, 99)
        second = sample_block_iid(self.grid, 4, law, 99)
        self.assertEqual(first.values.tobytes(), second.values.tobytes())
        other = sample_block_iid(self.grid, 4, law, 100)
        self.assertFalse(np.array_equal(first.values, other.values))

    def test_field_is_constant_on_aligned_blocks(self):
        values = sample_block_iid(self.grid, 4, BlockLaw.uniform_pm1(), 5).values
        blocks = values.reshape(4, 4, 4, 4)
        for i in range(4):
            for j in range(4):
                self.assertEqual(len(np.unique(blocks[i, :, j, :])), 1)
        self.assertTrue(set(np.unique(values)) <= {-1.0, 1.0})

    def test_block_must_divide_the_grid(self):
        with self.assertRaises(ValidationError) as ctx:
            sample_block_iid(self.grid, 3, BlockLaw.bernoulli(0.5), 1)
        self.assertEqual(ctx.exception.field, "block")

    def test_bernoulli_mean_matches_the_marginal_law(self):
        model = BlockIIDFieldModel(GridSpec(d=1, N=64), 2, BlockLaw.bernoulli(0.5))
        means = [float(np.mean(model.sample(derive_seed(7, i)).values)) for i in range(200)]
        mean, se = replicate_means(means)
        self.assertLess(abs(mean - 0.5), 3 * se)

    def test_distant_cells_are_uncorrelated(self):
        grid = GridSpec(d=1, N=64)
        model = BlockIIDFieldModel(grid, 4, BlockLaw.uniform_pm1())
        lagged = []
        for i in range(200):
            values = model.sample(derive_seed(11, i)).values
            lagged.append(float(np.mean(values * np.roll(values, -5))))
        mean, se = replicate_means(lagged)
        self.assertGreater(5, model.dependence_range)
        self.assertLess(abs(mean), 3 * se)

    def test_resample_exterior_keeps_blocks_meeting_the_ball(self):
        grid = GridSpec(d=1, N=16)
        model = BlockIIDFieldModel(grid, 2, BlockLaw.uniform_pm1())
        kept = model.sample(3)
        resampled = model.resample_exterior(3, 4, 2.0)
        # Cells 15, 0 and 1 are at distance < 2; their blocks are cells 14..15 and 0..1.
        for cell in (14, 15, 0, 1):
            self.assertEqual(resampled.values[cell], kept.values[cell])
        fresh = model.sample(4)
        np.testing.assert_array_equal(resampled.values[2:14], fresh.values[2:14])


class GaussianFieldTest(unittest.TestCase):
    def test_delta_lag_neighbours_are_uncorrelated(self):
        grid = GridSpec(d=1, N=64)
        cov = CovarianceModel.from_dict({"kind": "delta_lag", "sigma2": 1.0})
        lagged, means = [], []
        for i in range(200):
            values = sample_gaussian(grid, cov, derive_seed(21, i)).values
            lagged.append(float(np.mean(values * np.roll(values, -1))))
            means.append(float(np.mean(values)))
        mean, se = replicate_means(lagged)
        self.assertLess(abs(mean), 3 * se)
        mean, se = replicate_means(means)
        self.assertLess(abs(mean), 3 * se)

    def test_exponential_lag_covariance_matches_the_wrapped_sum(self):
        grid = GridSpec(d=1, N=64, h=0.5)
        cov = CovarianceModel.from_dict({"kind": "exponential", "sigma2": 1.0, "rho": 1.0})
        side = grid.side_length
        target = sum(math.exp(-abs(0.5 + k * side)) for k in range(-50, 51))
        lagged = []
        for i in range(200):
            values = sample_gaussian(grid, cov, derive_seed(22, i)).values
            lagged.append(float(np.mean(values * np.roll(values, -1))))
        mean, se = replicate_means(lagged)
        self.assertLess(abs(mean - target), 3 * se)

    def test_torus_covariance_equals_the_wrapped_covariance(self):
        grid = GridSpec(d=2, N=16, h=0.5)
        cov = CovarianceModel.from_dict({"kind": "exponential", "sigma2": 2.0, "rho": 1.5})
        model = GaussianFieldModel(grid, cov)
        np.testing.assert_allclose(model.torus_covariance(), wrapped_covariance(grid, cov), atol=1e-12)
        self.assertAlmostEqual(model.variance, wrapped_covariance(grid, cov)[0, 0], places=12)

    def test_algebraic_decay_spectrum_is_nonnegative(self):
        grid = GridSpec(d=1, N=256, h=4.0)
        cov = CovarianceModel.from_dict({"kind": "algebraic_decay", "sigma2": 1.0, "gamma": 0.5})
        self.assertGreaterEqual(float(np.min(spectral_coefficients(grid, cov))), 0.0)

    def test_negative_spectral_mode_beyond_tolerance_raises(self):
        grid = GridSpec(d=1, N=8, h=0.25)
        cov = CovarianceModel.from_dict({"kind": "exponential", "sigma2": 1.0, "rho": 0.125})
        bad = np.array([1.0, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9])
        spectral_coefficients.cache_clear()
        try:
            with patch("src.fields.gaussian.wrapped_covariance", return_value=bad):
                with self.assertRaises(SynthesisError) as ctx:
                    sample_gaussian(grid, cov, 1)
        finally:
            spectral_coefficients.cache_clear()
        self.assertEqual(ctx.exception.mode, (4,))

    def test_linear_average_variance_matches_a_direct_double_loop(self):
        grid = GridSpec(d=1, N=16, h=0.5)
        cov = CovarianceModel.from_dict({"kind": "exponential", "sigma2": 1.0, "rho": 2.0})
        model = GaussianFieldModel(grid, cov)
        kernel = np.random.default_rng(3).random(grid.shape)
        c = wrapped_covariance(grid, cov)
        direct = 0.0
        for y in range(grid.N):
            for z in range(grid.N):
                direct += kernel[y] * kernel[z] * c[(y - z) % grid.N]
        np.testing.assert_allclose(model.linear_average_variance(kernel), direct, rtol=1e-12)

    def test_expected_periodogram_equals_the_spectral_coefficients(self):
        grid = GridSpec(d=1, N=8)
        cov = CovarianceModel.from_dict({"kind": "exponential", "sigma2": 1.0, "rho": 1.0})
        lam = spectral_coefficients(grid, cov)
        periodograms = np.array([
            np.abs(np.fft.fft(sample_gaussian(grid, cov, derive_seed(23, i)).values)) ** 2 / grid.n_cells
            for i in range(10_000)
        ])
        mean = periodograms.mean(axis=0)
        se = periodograms.std(axis=0, ddof=1) / math.sqrt(len(periodograms))
        self.assertTrue(np.all(np.abs(mean - lam) <= 5 * se), f"{mean} vs {lam}")

    def test_resampling_a_correlated_gaussian_is_unsupported(self):
        model = GaussianFieldModel(GridSpec(d=1, N=8), CovarianceModel.from_dict({"kind": "exponential", "rho": 1}))
        with self.assertRaises(UnsupportedModelError):
            model.resample_exterior(1, 2, 1.0)


class BooleanFieldTest(unittest.TestCase):
    def test_zero_intensity_gives_an_empty_field(self):
        sample = sample_boolean(GridSpec(d=2, N=16), 0.0, RadiusLaw.fixed(1.0), 1)
        self.assertEqual(float(sample.values.sum()), 0.0)

    def test_heavy_pareto_tail_is_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            sample_boolean(GridSpec(d=2, N=16), 0.1, RadiusLaw.pareto(0.5, 2.0), 1)
        self.assertEqual(ctx.exception.field, "radius_law.a")

    def test_coverage_matches_the_void_probability(self):
        grid = GridSpec(d=1, N=256, h=0.25)
        model = BooleanFieldModel(grid, 0.5, RadiusLaw.fixed(1.0))
        expected = 1.0 - math.exp(-1.0)
        self.assertAlmostEqual(model.mean, expected, places=14)
        fractions = [float(np.mean(model.sample(derive_seed(31, i)).values)) for i in range(200)]
        mean, se = replicate_means(fractions)
        self.assertLess(abs(mean - expected), 3 * se)

    def test_lower_intensity_is_covered_by_higher_intensity_for_a_shared_seed(self):
        grid = GridSpec(d=2, N=32)
        law = RadiusLaw.pareto(0.5, 3.0)
        for i in range(20):
            seed = derive_seed(32, i)
            low = sample_boolean(grid, 0.01, law, seed).values
            high = sample_boolean(grid, 0.03, law, seed).values
            self.assertTrue(np.all(low <= high))

    def test_resample_exterior_keeps_germs_inside_the_ball(self):
        grid = GridSpec(d=1, N=64)
        model = BooleanFieldModel(grid, 0.2, RadiusLaw.fixed(0.5))
        # Radius 0.5 balls centred in B_10 cover exactly the cells they covered before
        # within distance 9; germs centred outside B_10 cannot reach them.
        kept = model.sample(41)
        resampled = model.resample_exterior(41, 42, 10.0)
        near = grid.torus_distance() < 9.0
        np.testing.assert_array_equal(resampled.values[near], kept.values[near])


class FieldSampleTest(unittest.TestCase):
    def test_dump_and_load_preserve_values(self):
        sample = sample_block_iid(GridSpec(d=2, N=8), 2, BlockLaw.uniform_pm1(), 17)
        with tempfile.TemporaryDirectory() as tmp:
            path = sample.dump(Path(tmp) / "field.msfi")
            raw = path.read_bytes()
            self.assertEqual(raw[:4], b"MSFI")
            self.assertEqual(len(raw), 16 + 8 * 64)
            loaded = load_field(path)
        self.assertEqual(loaded.values.tobytes(), sample.values.tobytes())
        self.assertEqual(loaded.grid, sample.grid)

    def test_load_rejects_a_foreign_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "junk.bin"
            path.write_bytes(b"NOPE" + bytes(12) + bytes(8))
            with self.assertRaises(ValidationError):
                load_field(path)

    def test_values_are_read_only_and_finite(self):
        sample = FieldSample(GridSpec(d=1, N=4), [1.0, 2.0, 3.0, 4.0], "manual", 0)
        with self.assertRaises(ValueError):
            sample.values[0] = 5.0
        with self.assertRaises(ValidationError):
            FieldSample(GridSpec(d=1, N=4), [1.0, np.nan, 3.0, 4.0], "manual", 0)

    def test_shift_is_a_torus_translation(self):
        sample = FieldSample(GridSpec(d=1, N=4), [1.0, 2.0, 3.0, 4.0], "manual", 0)
        np.testing.assert_array_equal(sample.shifted((1,)).values, [2.0, 3.0, 4.0, 1.0])


class ModelFromDictTest(unittest.TestCase):
    def test_builds_each_model_kind(self):
        grid = {"d": 1, "N": 32, "h": 1.0}
        gaussian = model_from_dict({"kind": "gaussian", "grid": grid, "covariance": {"kind": "exponential", "rho": 2}})
        boolean = model_from_dict({"kind": "boolean", "grid": grid, "intensity": 0.1, "radius_law": {"kind": "fixed", "r": 1}})
        block = model_from_dict({"kind": "block_iid", "grid": grid, "block": 2, "law": {"kind": "bernoulli", "p": 0.25}})
        self.assertIsInstance(gaussian, GaussianFieldModel)
        self.assertIsInstance(boolean, BooleanFieldModel)
        self.assertIsInstance(block, BlockIIDFieldModel)
        self.assertEqual(block.mean, 0.25)
        self.assertEqual(model_from_dict(block.to_dict()).model_tag, block.model_tag)

    def test_missing_parts_name_the_field(self):
        with self.assertRaises(ValidationError) as ctx:
            model_from_dict({"kind": "gaussian"})
        self.assertEqual(ctx.exception.field, "model.grid")
        with self.assertRaises(ValidationError) as ctx:
            model_from_dict({"kind": "block_iid", "grid": {"d": 1, "N": 8}})
        self.assertEqual(ctx.exception.field, "model.block")
        with self.assertRaises(ValidationError) as ctx:
            model_from_dict({"kind": "voronoi", "grid": {"d": 1, "N": 8}})
        self.assertEqual(ctx.exception.field, "model.kind")
