import contextlib
import csv
import io
import json
import math
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from src.bounds import FitResult
from src.config import Config
from src.errors import ValidationError
from src.main import EXIT_OK, EXIT_VALIDATION, EXIT_VERDICT, main
from src.services.experiment import ExperimentConfig, ExperimentKind, load_config
from src.services.formatter import RESULT_COLUMNS, VERDICT_COLUMNS, ReportFormatter
from src.services.runner import Report, Verdict, fit_scaling, preflight, run_experiment

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"


def block_variance_config(**overrides):
    data = {
        "experiment": "VarianceScan",
        "model": {
            "kind": "block_iid",
            "grid": {"d": 1, "N": 64, "h": 1.0},
            "block": 1,
            "law": {"kind": "bernoulli", "p": 0.5},
        },
        "functional": {"kind": "cell_value"},
        "average": "box",
        "weight": {"kind": "compact", "R": 1.0},
        "sweep": [4, 8, 16],
        "replicates": 200,
        "seed": 42,
    }
    data.update(overrides)
    return data


def moment_config(**overrides):
    data = block_variance_config(
        experiment="MomentScan",
        L=8,
        sweep=[1, 2, 3],
        replicates=1000,
        regimes=[{"kind": "MomentLSI", "params": {"base": 0.25}}],
    )
    del data["weight"]
    data.update(overrides)
    return data


def covariance_config(weight, output_dir):
    return {
        "experiment": "CovarianceScan",
        "model": {
            "kind": "gaussian",
            "grid": {"d": 1, "N": 64, "h": 1.0},
            "covariance": {"kind": "exponential", "sigma2": 1.0, "rho": 1.0},
        },
        "weight": weight,
        "sweep": [0, 1, 8],
        "replicates": 200,
        "seed": 9,
        "output_dir": output_dir,
    }


def write_json(directory, name, data):
    path = Path(directory) / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def run_cli(argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(argv)
    return code, out.getvalue()


class ExperimentConfigTest(unittest.TestCase):
    def test_missing_replicates_names_the_field(self):
        data = block_variance_config()
        del data["replicates"]
        with self.assertRaises(ValidationError) as ctx:
            ExperimentConfig.from_dict(data)
        self.assertEqual(ctx.exception.field, "replicates")

    def test_replicates_below_the_floor_are_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            ExperimentConfig.from_dict(block_variance_config(replicates=50))
        self.assertEqual(ctx.exception.field, "replicates")

    def test_sweep_must_be_nonempty_and_strictly_increasing(self):
        for sweep in ([], [8, 8, 16], [16, 8]):
            with self.assertRaises(ValidationError) as ctx:
                ExperimentConfig.from_dict(block_variance_config(sweep=sweep))
            self.assertEqual(ctx.exception.field, "sweep")

    def test_nested_errors_name_the_nested_field(self):
        data = block_variance_config()
        data["model"] = {"kind": "block_iid", "grid": {"d": 1, "N": 64}}
        with self.assertRaises(ValidationError) as ctx:
            ExperimentConfig.from_dict(data)
        self.assertEqual(ctx.exception.field, "model.block")

        with self.assertRaises(ValidationError) as ctx:
            ExperimentConfig.from_dict(block_variance_config(experiment="HeatScan"))
        self.assertEqual(ctx.exception.field, "experiment")

    def test_weight_alone_selects_the_default_regime(self):
        config = ExperimentConfig.from_dict(block_variance_config())
        self.assertEqual([r.kind.value for r in config.regimes], ["VarMSG"])
        self.assertEqual(config.regimes[0].C, 1.0)

        data = block_variance_config()
        del data["weight"]
        self.assertEqual(ExperimentConfig.from_dict(data).regimes, ())

    def test_tail_scan_scalar_entries_take_the_config_scale(self):
        data = block_variance_config(experiment="TailScan", sweep=[0.1, 0.2], replicates=1000, L=8)
        config = ExperimentConfig.from_dict(data)
        self.assertEqual(config.sweep, ((0.1, 8.0), (0.2, 8.0)))
        del data["L"]
        with self.assertRaises(ValidationError) as ctx:
            ExperimentConfig.from_dict(data)
        self.assertEqual(ctx.exception.field, "L")

    def test_moment_scan_needs_a_scale(self):
        with self.assertRaises(ValidationError) as ctx:
            ExperimentConfig.from_dict(block_variance_config(experiment="MomentScan", sweep=[1, 2], replicates=1000))
        self.assertEqual(ctx.exception.field, "L")

    def test_config_hash_follows_every_field(self):
        base = ExperimentConfig.from_dict(block_variance_config(output_dir="out"))
        same = ExperimentConfig.from_dict(block_variance_config(output_dir="out"))
        self.assertEqual(base.config_hash, same.config_hash)
        self.assertEqual(len(base.config_hash), 64)

        variants = [
            block_variance_config(output_dir="out", seed=43),
            block_variance_config(output_dir="out", replicates=201),
            block_variance_config(output_dir="out", sweep=[4, 8, 32]),
            block_variance_config(output_dir="out", average="exp_kernel"),
            block_variance_config(output_dir="out", weight={"kind": "compact", "R": 2.0}),
        ]
        hashes = {ExperimentConfig.from_dict(v).config_hash for v in variants}
        self.assertEqual(len(hashes), len(variants))
        self.assertNotIn(base.config_hash, hashes)

    def test_overrides_are_revalidated(self):
        config = ExperimentConfig.from_dict(block_variance_config())
        self.assertEqual(config.with_overrides(seed=5).seed, 5)
        self.assertEqual(config.with_overrides(replicates=300).replicates, 300)
        with self.assertRaises(ValidationError):
            config.with_overrides(replicates=10)

    def test_default_output_dir_lives_under_the_configured_root(self):
        with patch.object(Config, "OUTPUT_DIR", "lab-results"):
            config = ExperimentConfig.from_dict(block_variance_config())
        self.assertEqual(Path(config.output_dir), Path("lab-results") / "VarianceScan")

    def test_load_config_reports_missing_and_malformed_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValidationError) as ctx:
                load_config(Path(tmp) / "absent.json")
            self.assertEqual(ctx.exception.field, "config")

            bad = Path(tmp) / "bad.json"
            bad.write_text("{not json", encoding="utf-8")
            with self.assertRaises(ValidationError):
                load_config(bad)

    def test_every_shipped_config_validates(self):
        paths = sorted(EXPERIMENTS.glob("*.json"))
        self.assertGreaterEqual(len(paths), 5)
        for path in paths:
            config = load_config(path)
            self.assertIsInstance(config.experiment, ExperimentKind)
            preflight(config)


class FitScalingTest(unittest.TestCase):
    def test_exact_power_law(self):
        rows = [{"x": x, "y": 7.0 * x ** -2} for x in (1.0, 2.0, 4.0, 8.0, 16.0)]
        fit = fit_scaling(rows, "x", "y")
        self.assertAlmostEqual(fit.slope, -2.0, places=12)
        self.assertAlmostEqual(fit.intercept, math.log(7.0), places=12)
        self.assertLess(fit.residual, 1e-12)

    def test_constant_values_have_zero_slope(self):
        rows = [{"x": x, "y": 3.0} for x in (2.0, 3.0, 5.0, 7.0)]
        self.assertAlmostEqual(fit_scaling(rows, "x", "y").slope, 0.0, places=12)

    def test_nonpositive_values_and_short_inputs_are_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            fit_scaling([{"x": 1, "y": 1}, {"x": 2, "y": 0}, {"x": 3, "y": 1}], "x", "y")
        self.assertEqual(ctx.exception.field, "y")
        with self.assertRaises(ValidationError):
            fit_scaling([{"x": 1, "y": 1}, {"x": 2, "y": 2}], "x", "y")


class PreflightTest(unittest.TestCase):
    def test_regime_that_needs_a_weight(self):
        data = block_variance_config(regimes=[{"kind": "VarMSG"}])
        del data["weight"]
        with self.assertRaises(ValidationError) as ctx:
            preflight(ExperimentConfig.from_dict(data))
        self.assertEqual(ctx.exception.field, "weight")

    def test_regime_the_experiment_cannot_feed(self):
        data = block_variance_config(regimes=[{"kind": "TailMLSIfct", "params": {"pi_star": 4}}])
        with self.assertRaises(ValidationError) as ctx:
            preflight(ExperimentConfig.from_dict(data))
        self.assertEqual(ctx.exception.field, "regimes")

    def test_mixing_regions_that_do_not_fit(self):
        data = block_variance_config(
            experiment="MixingScan",
            sweep=[1, 40],
            mixing={"levels": [0.5], "region_size": 4},
        )
        with self.assertRaises(ValidationError) as ctx:
            preflight(ExperimentConfig.from_dict(data))
        self.assertEqual(ctx.exception.field, "query")

    def test_ergodic_radius_beyond_the_half_side(self):
        data = block_variance_config(experiment="ErgodicScan", sweep=[4, 40])
        with self.assertRaises(ValidationError) as ctx:
            preflight(ExperimentConfig.from_dict(data))
        self.assertEqual(ctx.exception.field, "sweep")

    def test_validation_happens_before_any_replicate(self):
        data = block_variance_config(experiment="ErgodicScan", sweep=[4, 40])
        with patch("src.services.runner.ergodic_fluctuation") as estimator:
            with self.assertRaises(ValidationError):
                run_experiment(ExperimentConfig.from_dict(data), write=False)
        estimator.assert_not_called()

    def test_moment_regime_without_a_base_fails_before_sampling(self):
        data = moment_config(regimes=[{"kind": "MomentLSI"}])
        with patch("src.services.runner.sample_averages") as sampler:
            with self.assertRaises(ValidationError) as ctx:
                run_experiment(ExperimentConfig.from_dict(data), write=False)
        self.assertEqual(ctx.exception.field, "base")
        sampler.assert_not_called()

    def test_moment_base_out_of_range_fails_before_sampling(self):
        for base in (0.0, -1.0):
            data = moment_config(regimes=[{"kind": "MomentSG", "params": {"base": base}}])
            with patch("src.services.runner.sample_averages") as sampler:
                with self.assertRaises(ValidationError) as ctx:
                    run_experiment(ExperimentConfig.from_dict(data), write=False)
            self.assertEqual(ctx.exception.field, "base")
            sampler.assert_not_called()

    def test_moment_orders_are_checked_before_sampling(self):
        data = moment_config(sweep=[1, 2, 7])
        with patch("src.services.runner.sample_averages") as sampler:
            with self.assertRaises(ValidationError) as ctx:
                run_experiment(ExperimentConfig.from_dict(data), write=False)
        self.assertEqual(ctx.exception.field, "sweep")
        sampler.assert_not_called()

    def test_confronted_sweep_needs_three_points(self):
        data = block_variance_config(sweep=[4, 8])
        with patch("src.services.runner.variance_of_average") as estimator:
            with self.assertRaises(ValidationError) as ctx:
                run_experiment(ExperimentConfig.from_dict(data), write=False)
        self.assertEqual(ctx.exception.field, "sweep")
        estimator.assert_not_called()

    def test_valid_moment_config_passes(self):
        preflight(ExperimentConfig.from_dict(moment_config()))


class RunExperimentTest(unittest.TestCase):
    def test_quickstart_recovers_the_clt_slope(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = load_config(EXPERIMENTS / "quickstart_variance.json").with_overrides(output_dir=tmp)
            report = run_experiment(config)

            self.assertEqual(len(report.rows), len(config.sweep))
            self.assertTrue(all(row.config_hash == config.config_hash for row in report.rows))
            self.assertAlmostEqual(report.scaling.slope, -1.0, delta=0.1)
            self.assertTrue(report.all_dominated)
            for name in ("results", "verdicts", "report"):
                self.assertTrue(Path(report.paths[name]).exists())

    def test_reruns_write_byte_identical_results(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = ExperimentConfig.from_dict(block_variance_config(output_dir=tmp))
            outputs = []
            for _ in range(2):
                report = run_experiment(config)
                outputs.append(Path(report.paths["results"]).read_bytes())
        self.assertEqual(outputs[0], outputs[1])

    def test_thread_count_never_changes_the_results(self):
        config = ExperimentConfig.from_dict(block_variance_config(output_dir="same"))
        outputs = []
        for threads, batch in ((1, 1000), (4, 7)):
            with patch.object(Config, "THREADS", threads), patch.object(Config, "BATCH_SIZE", batch):
                report = run_experiment(config, write=False)
            outputs.append([(row.value, row.std_error) for row in report.rows])
        self.assertEqual(outputs[0], outputs[1])

    def test_every_experiment_kind_produces_rows(self):
        for name in ("block_mixing.json", "covariance_decay.json", "ergodic_exponential.json", "oracle_threshold.json"):
            config = load_config(EXPERIMENTS / name)
            if config.experiment is not ExperimentKind.ORACLE_CHECK:
                config = config.with_overrides(replicates=200)
            report = run_experiment(config, write=False)
            self.assertEqual(len(report.rows), len(config.sweep), name)
            self.assertEqual({row.param_name for row in report.rows}, {config.experiment.param_name})

    def test_oracle_check_rows_are_exact(self):
        report = run_experiment(load_config(EXPERIMENTS / "oracle_threshold.json"), write=False)
        for row in report.rows:
            self.assertEqual(row.std_error, 0.0)
            self.assertIn("efron-stein-holds", row.flags)
        self.assertEqual(report.verdicts, [])


class ReportFormatterTest(unittest.TestCase):
    def test_write_report_uses_the_fixed_schema(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = ExperimentConfig.from_dict(block_variance_config(output_dir=tmp))
            report = run_experiment(config)
            header = Path(report.paths["results"]).read_text(encoding="utf-8").splitlines()[0]
            self.assertEqual(header.split(","), list(RESULT_COLUMNS))
            verdict_lines = Path(report.paths["verdicts"]).read_text(encoding="utf-8").splitlines()
            self.assertEqual(verdict_lines[0].split(","), list(VERDICT_COLUMNS))
            self.assertEqual(len(verdict_lines), 2)

            document = json.loads(Path(report.paths["report"]).read_text(encoding="utf-8"))
            self.assertEqual(document["schema_version"], 1)
            self.assertEqual(document["row_count"], 3)
            self.assertEqual(document["provenance"]["config_hash"], config.config_hash)
            self.assertIn("wall_time", document["provenance"])

    def test_infinite_margins_stay_valid_json(self):
        verdict = Verdict("ConcExp", "", 1, FitResult(1e-12, True, math.inf, None), "abc")
        report = Report([], [verdict], {"config_hash": "abc"})
        with tempfile.TemporaryDirectory() as tmp:
            paths = ReportFormatter.write_report(report, tmp)
            document = json.loads(Path(paths["report"]).read_text(encoding="utf-8"))
        self.assertEqual(document["verdicts"][0]["margin"], "inf")

    def test_summary_marks_failed_verdicts(self):
        verdict = Verdict("CovDecay", "", 3, FitResult(1e12, False, -math.inf, "lag=8.0"), "abc")
        summary = ReportFormatter.format_summary(Report([], [verdict], {"config_hash": "abc"}))
        self.assertIn("❌ CovDecay", summary)
        self.assertIn("worst=lag=8.0", summary)


class CommandLineTest(unittest.TestCase):
    def test_run_succeeds_and_honours_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_json(tmp, "config.json", block_variance_config())
            out = str(Path(tmp) / "report")
            code, stdout = run_cli(["run", path, "--out", out, "--seed", "3", "--assert-verdicts"])
            self.assertEqual(code, EXIT_OK)
            self.assertIn("VarianceScan", stdout)
            with (Path(out) / "results.csv").open(newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
        self.assertEqual(len(rows), 3)
        self.assertTrue(all(row["seed"] == "3" for row in rows))

    def test_invalid_config_exits_with_validation_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = block_variance_config()
            del data["replicates"]
            path = write_json(tmp, "config.json", data)
            self.assertEqual(run_cli(["run", path])[0], EXIT_VALIDATION)
            self.assertEqual(run_cli(["run", str(Path(tmp) / "missing.json")])[0], EXIT_VALIDATION)

    def test_failed_verdict_exits_with_verdict_code_only_when_asserted(self):
        with tempfile.TemporaryDirectory() as tmp:
            # compact support cannot reach the covariance at lag 8
            path = write_json(tmp, "config.json", covariance_config({"kind": "compact", "R": 1.0}, tmp))
            self.assertEqual(run_cli(["run", path, "--assert-verdicts"])[0], EXIT_VERDICT)
            self.assertEqual(run_cli(["run", path])[0], EXIT_OK)

    def test_bounds_eval_prints_the_curve_value(self):
        code, stdout = run_cli(["bounds", "eval", "TailOscAlg", "C=2", "beta=1", "d=1", "delta=0.5", "L=16"])
        self.assertEqual(code, EXIT_OK)
        expected = 2.0 * math.exp(-0.5 / 2.0) * (1.0 + 0.5 ** (-2.0) * abs(math.log(0.5))) * 16.0 ** (-1.0)
        self.assertIn(f"{expected:.12g}", stdout)

        self.assertEqual(run_cli(["bounds", "eval", "TailOscAlg", "C=2", "delta=0.5", "L=16"])[0], EXIT_VALIDATION)

    def test_weights_table_and_oracle_subcommands(self):
        code, stdout = run_cli(["weights", "table", "algebraic", "beta=2", "--d", "1", "--ell", "0", "4"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("algebraic(beta=2)", stdout)

        code, stdout = run_cli(["oracle", "--n", "4"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("efron-stein holds", stdout)
        self.assertIn("1/4", stdout)
