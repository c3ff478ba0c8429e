"""
End-to-end checks of the laboratory against exactly solvable models.

These run full Monte Carlo sweeps and take a few minutes in total.
"""

import math
import unittest
from fractions import Fraction
from pathlib import Path

from scipy import stats

from src.bounds import C_MAX, BoundRegime, FitPoint, fit_constant
from src.estimators import tail_probability, variance_of_average
from src.fields import BlockIIDFieldModel, BlockLaw, GridSpec
from src.functionals import AverageKind, LocalFunctional, averaging_kernel
from src.oracle import CellLaw, TinyFieldSpec, TinyFunctional, exact_moments
from src.services.experiment import ExperimentConfig, load_config
from src.services.runner import run_experiment
from src.weights import DimensionContext, WeightFamily

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"


def exact_average_variance(model, L):
    """Double-sum variance of the Box average from the synthesized covariance."""
    return model.linear_average_variance(averaging_kernel(model.grid, float(L), AverageKind.BOX))


def within(estimate, expected, n_se=3.0):
    return abs(estimate.value - expected) <= n_se * estimate.std_error


class CltScalingTest(unittest.TestCase):
    def test_iid_variance_matches_sigma_squared_h_over_l(self):
        config = ExperimentConfig.from_dict({
            "experiment": "VarianceScan",
            "model": {"kind": "block_iid", "grid": {"d": 1, "N": 512, "h": 1.0}, "block": 1, "law": {"p": 0.5}},
            "functional": {"kind": "cell_value"},
            "average": "box",
            "sweep": [8, 16, 32, 64, 128],
            "replicates": 2000,
            "seed": 101,
        })
        report = run_experiment(config, write=False)
        self.assertAlmostEqual(report.scaling.slope, -1.0, delta=0.1)
        for row in report.rows:
            exact = 0.25 / float(row.param_value)
            self.assertLessEqual(abs(row.value - exact), 3.0 * row.std_error, row.param_value)


class LongRangeScalingTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = load_config(EXPERIMENTS / "long_range_variance.json")
        cls.report = run_experiment(cls.config, write=False)

    def test_slope_follows_the_covariance_exponent(self):
        self.assertAlmostEqual(self.report.scaling.slope, -0.5, delta=0.15)

    def test_points_agree_with_the_covariance_double_sum(self):
        for row in self.report.rows:
            exact = exact_average_variance(self.config.model, float(row.param_value))
            self.assertLessEqual(abs(row.value - exact), 3.0 * row.std_error, row.param_value)

    def test_variance_bound_dominates_with_a_finite_constant(self):
        (verdict,) = self.report.verdicts
        self.assertEqual(verdict.regime, "VarMSG")
        self.assertTrue(verdict.fit.dominated)
        self.assertLess(verdict.fit.C_fit, C_MAX)


class GaussianTailTest(unittest.TestCase):
    def test_tails_match_the_normal_law_and_are_dominated(self):
        base = load_config(EXPERIMENTS / "gaussian_tails.json")
        L = 32.0
        sigma = math.sqrt(exact_average_variance(base.model, L))
        multiples = (1.0, 1.5, 2.0)
        data = dict(base.raw)
        data["sweep"] = [[k * sigma, L] for k in multiples]
        data["regimes"] = [{"kind": "TailMLSIfct"}]
        report = run_experiment(ExperimentConfig.from_dict(data), write=False)

        for k, row in zip(multiples, report.rows):
            expected = stats.norm.sf(k)
            self.assertLessEqual(abs(row.value - expected), 3.0 * row.std_error, f"{k} sigma")
        (verdict,) = report.verdicts
        self.assertTrue(verdict.fit.dominated)


class BoundedFieldCutoffTest(unittest.TestCase):
    def test_threshold_average_never_exceeds_its_bound(self):
        report = run_experiment(load_config(EXPERIMENTS / "boolean_cutoff.json"), write=False)
        cutoff = [row for row in report.rows if row.param_value.startswith("2.5|")]
        self.assertEqual(len(cutoff), 1)
        self.assertEqual(cutoff[0].value, 0.0)
        self.assertEqual(cutoff[0].n, 10000)
        self.assertTrue(all(v.fit.dominated for v in report.verdicts))


class FiniteRangeMixingTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.report = run_experiment(load_config(EXPERIMENTS / "block_mixing.json"), write=False)
        cls.rows = {float(row.param_value): row for row in cls.report.rows}

    def test_shared_block_is_detected(self):
        row = self.rows[1.0]
        self.assertGreaterEqual(row.value, 5.0 * row.std_error)

    def test_separated_regions_are_independent(self):
        # block * h = 2
        for R, row in self.rows.items():
            if R > 4.0:
                self.assertLessEqual(row.value, 3.0 * row.std_error, R)

    def test_mixing_bound_dominates_every_separation(self):
        (verdict,) = self.report.verdicts
        self.assertEqual(verdict.regime, "MixingDecay")
        self.assertTrue(verdict.fit.dominated)
        self.assertEqual(verdict.n_points, 4)


class CovarianceDecayTest(unittest.TestCase):
    def test_exponential_covariance_is_dominated(self):
        report = run_experiment(load_config(EXPERIMENTS / "covariance_decay.json"), write=False)
        first = report.rows[0]
        self.assertLessEqual(abs(first.value - 1.0), 3.0 * first.std_error)
        (verdict,) = report.verdicts
        self.assertTrue(verdict.fit.dominated)
        self.assertLess(verdict.fit.C_fit, C_MAX)


class OracleConsistencyTest(unittest.TestCase):
    def test_monte_carlo_agrees_with_enumeration_on_an_embedded_instance(self):
        spec = TinyFieldSpec.iid(4, CellLaw.bernoulli("1/2"))
        model = BlockIIDFieldModel(GridSpec(1, 4), 1, BlockLaw.bernoulli(0.5))
        f = LocalFunctional.cell_value()

        exact_var = exact_moments(spec, TinyFunctional("sum")).variance / 16
        est = variance_of_average(model, f, AverageKind.BOX, 4.0, 10000, 2024)
        self.assertTrue(within(est, float(exact_var)), (est, exact_var))

        exact_tail = sum((p for config, p in spec.configurations() if sum(config) >= 3), Fraction(0))
        self.assertEqual(exact_tail, Fraction(5, 16))
        est = tail_probability(model, f, AverageKind.BOX, 4.0, 0.25, 10000, 2025)
        self.assertTrue(within(est, float(exact_tail)), (est, exact_tail))


class MomentGrowthTest(unittest.TestCase):
    def test_gaussian_moments_have_the_sub_gaussian_signature(self):
        config = load_config(EXPERIMENTS / "gaussian_moments.json")
        report = run_experiment(config, write=False)
        moments = {int(row.param_value): row for row in report.rows}

        sigma2 = exact_average_variance(config.model, config.L)
        self.assertLessEqual(abs(moments[2].value - 3.0 * sigma2 ** 2), 3.0 * moments[2].std_error)

        ratios = [moments[p].value ** (1.0 / (2 * p)) / math.sqrt(2 * p) for p in (1, 2, 3)]
        centre = sum(ratios) / len(ratios)
        for ratio in ratios:
            self.assertLessEqual(abs(ratio / centre - 1.0), 0.2, ratios)
        self.assertTrue(all(v.fit.dominated for v in report.verdicts))


class VarianceFitTest(unittest.TestCase):
    def test_fit_on_exact_iid_points_is_the_compact_weight_constant(self):
        # pi_*(L) = 2L for the unit compact weight in one dimension, so 0.25 / L = C / (2L) at C = 1/2.
        w = WeightFamily.compact(1.0)
        points = [FitPoint({"L": L}, 0.25 / L) for L in (8.0, 16.0, 32.0)]
        fit = fit_constant(BoundRegime("VarMSG", {"C": 1.0}), points, w, DimensionContext(1))
        self.assertAlmostEqual(fit.C_fit, 0.5, places=8)
        self.assertTrue(fit.dominated)
