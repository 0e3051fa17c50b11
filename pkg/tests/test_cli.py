import sys
import tempfile
import unittest

import numpy as np
import pandas as pd

# Modify path to include parent dir
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from features import config as cfg
from features.cli import build_config, build_parser, main, resolve_params
from features.commands import FAILED_MARKER, MANIFEST_NAME, RUN_LOG_NAME
from features.core import AgeGrid, CareerPanel, read_panel, write_panel
from features.errors import ConfigError
from features.logger import logger

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")
BATTING = os.path.join(FIXTURES, "Batting.csv")
PEOPLE = os.path.join(FIXTURES, "People.csv")

logger.quiet = True

SMALL_SIM = ["--n-players", "200", "--m", "2", "--iters", "5"]


def read_report(path):
    with open(path, encoding="utf-8") as fh:
        return dict(line.rstrip("\n").split("=", 1) for line in fh if "=" in line)


def read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def csv_bytes(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        if name.endswith(".csv"):
            with open(os.path.join(directory, name), "rb") as fh:
                out[name] = fh.read()
    return out


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        logger.set_sink(None)
        self._tmp.cleanup()

    def out(self, name="out"):
        return os.path.join(self.tmp, name)


class TestParameters(CliTestCase):
    def test_flags_parse_to_typed_values(self):
        args = build_parser().parse_args(["curve", "--panel", "p.csv", "--span", "0.5", "--min-pa", "50"])
        self.assertEqual(args.command, "curve")
        self.assertEqual(args.span, 0.5)
        self.assertEqual(args.min_pa, 50)
        self.assertIsNone(args.seed)

    def test_unknown_mechanism_rejected_by_parser(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(["simulate", "--mechanism", "sudden"])

    def test_flag_beats_config_file_beats_default(self):
        path = os.path.join(self.tmp, "run.env")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("AGECURVE_SEED=7\nAGECURVE_SPAN=0.4\nOTHER_KEY=1\n")
        args = build_parser().parse_args(["curve", "--config", path, "--seed", "9"])
        params = resolve_params(args)
        self.assertEqual(params["seed"], 9)
        self.assertEqual(params["span"], 0.4)
        self.assertEqual(params["m"], cfg.M_IMPUTATIONS)

    def test_bad_config_value(self):
        path = os.path.join(self.tmp, "run.env")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("AGECURVE_M=five\n")
        args = build_parser().parse_args(["impute", "--config", path])
        with self.assertRaises(ConfigError):
            resolve_params(args)
        self.assertEqual(main(["impute", "--config", path]), 2)

    def test_missing_config_file(self):
        self.assertEqual(main(["curve", "--config", os.path.join(self.tmp, "absent.env")]), 2)

    def test_invalid_values_exit_2(self):
        self.assertEqual(main(["curve", "--span", "1.5", "--out", self.out()]), 2)
        self.assertEqual(main(["impute", "--m", "1", "--out", self.out()]), 2)
        self.assertEqual(main(["simulate", "--age-min", "39", "--age-max", "21", "--out", self.out()]), 2)

    def test_build_config_ties_imputation_seed_to_root_seed(self):
        args = build_parser().parse_args(["pipeline-sim", "--seed", "11"])
        config = build_config("pipeline-sim", resolve_params(args))
        self.assertEqual(config.mi.seed, 11)
        self.assertEqual(config.grid, AgeGrid(cfg.AGE_MIN, cfg.AGE_MAX))


class TestExitCodes(CliTestCase):
    def test_missing_batting_file(self):
        out = self.out()
        code = main(["pipeline-mlb", "--batting", os.path.join(self.tmp, "nope.csv"), "--people", PEOPLE, "--out", out])
        self.assertEqual(code, 3)
        report = read_report(os.path.join(out, FAILED_MARKER))
        self.assertEqual(report["stage"], "ingest")
        self.assertEqual(report["exit_code"], "3")
        self.assertTrue(os.path.isfile(os.path.join(out, MANIFEST_NAME)))

    def test_missing_lahman_paths_is_a_config_error(self):
        self.assertEqual(main(["pipeline-mlb", "--out", self.out()]), 2)

    def test_missing_fit_file(self):
        out = self.out()
        self.assertEqual(main(["simulate", "--fit", os.path.join(self.tmp, "none.txt"), "--out", out]), 3)
        self.assertEqual(read_report(os.path.join(out, FAILED_MARKER))["stage"], "fit")

    def test_impute_without_panel(self):
        self.assertEqual(main(["impute", "--out", self.out()]), 2)

    def test_numeric_failure(self):
        # only two distinct ages carry data: the smoother cannot fit a quadratic
        grid = AgeGrid()
        observed = np.zeros((2, len(grid)), dtype=bool)
        observed[:, [0, -1]] = True
        values = np.where(observed, 0.6, np.nan)
        panel_path = os.path.join(self.tmp, "thin.csv")
        write_panel(CareerPanel(players=["a", "b"], grid=grid, values=values, observed=observed), panel_path)
        out = self.out()
        self.assertEqual(main(["curve", "--panel", panel_path, "--out", out]), 4)
        report = read_report(os.path.join(out, FAILED_MARKER))
        self.assertEqual(report["stage"], "curve")
        self.assertEqual(report["exit_code"], "4")

    def test_success_clears_old_marker(self):
        out = self.out()
        os.makedirs(out)
        with open(os.path.join(out, FAILED_MARKER), "w") as fh:
            fh.write("stage=old\n")
        self.assertEqual(main(["simulate", "--n-players", "30", "--out", out]), 0)
        self.assertFalse(os.path.exists(os.path.join(out, FAILED_MARKER)))

    def test_run_log_reports_timings(self):
        out = self.out()
        self.assertEqual(main(["simulate", "--n-players", "30", "--out", out]), 0)
        finish = [line for line in read_text(os.path.join(out, RUN_LOG_NAME)).splitlines() if "simulate finished in" in line]
        self.assertEqual(len(finish), 1)
        self.assertIn("(process up ", finish[0])


class TestStepCommands(CliTestCase):
    def test_simulate_impute_curve_chain(self):
        sim_out = self.out("sim")
        self.assertEqual(main(["simulate", "--n-players", "60", "--mechanism", "early", "--out", sim_out]), 0)
        for name in ("lmm_fit.txt", "panel_true.csv", "panel_dropout.csv", "panel_dropout.meta.json", RUN_LOG_NAME):
            self.assertTrue(os.path.isfile(os.path.join(sim_out, name)), name)
        full = read_panel(os.path.join(sim_out, "panel_true.csv"))
        dropped = read_panel(os.path.join(sim_out, "panel_dropout.csv"))
        self.assertEqual(full.n_missing, 0)
        self.assertGreater(dropped.n_missing, 0)
        self.assertEqual(full.players, dropped.players)

        imp_out = self.out("imp")
        panel_path = os.path.join(sim_out, "panel_dropout.csv")
        self.assertEqual(main(["impute", "--panel", panel_path, "--m", "2", "--iters", "3", "--out", imp_out]), 0)
        completed = read_panel(os.path.join(imp_out, "panel_imp_1.csv"))
        self.assertEqual(completed.n_missing, 0)
        np.testing.assert_array_equal(completed.values[dropped.observed], dropped.values[dropped.observed])
        traces = pd.read_csv(os.path.join(imp_out, "traces.csv"))
        self.assertEqual(len(traces), 6)

        curve_out = self.out("curve")
        self.assertEqual(main(["curve", "--panel", panel_path, "--out", curve_out]), 0)
        curve = pd.read_csv(os.path.join(curve_out, "curve.csv"))
        self.assertEqual(list(curve["age"]), list(range(21, 40)))
        self.assertTrue(os.path.isfile(os.path.join(curve_out, "curve.svg")))

    def test_fit_on_lahman_fixture(self):
        out = self.out()
        self.assertEqual(main(["fit", "--batting", BATTING, "--people", PEOPLE, "--out", out]), 0)
        report = read_report(os.path.join(out, "lmm_fit.txt"))
        self.assertEqual(report["n_players"], "3")


class TestPipelineMlb(CliTestCase):
    def test_fixture_end_to_end(self):
        out = self.out()
        code = main(["pipeline-mlb", "--batting", BATTING, "--people", PEOPLE,
                     "--m", "2", "--iters", "5", "--out", out])
        self.assertEqual(code, 0)
        self.assertFalse(os.path.exists(os.path.join(out, FAILED_MARKER)))
        for name in ("curve_observed.csv", "curve_pooled.csv", "curve_pooled_ops.csv"):
            frame = pd.read_csv(os.path.join(out, name))
            self.assertEqual(len(frame), 19)
            self.assertTrue(np.all(np.isfinite(frame["estimate"])))
        pooled = pd.read_csv(os.path.join(out, "curve_pooled.csv"))
        self.assertTrue(np.all(pooled["ci_low"] <= pooled["estimate"]))
        self.assertTrue(np.all(pooled["estimate"] <= pooled["ci_high"]))
        report = read_report(os.path.join(out, "mlb_report.txt"))
        self.assertEqual(report["players"], "3")
        self.assertEqual(report["observed_cells"], "11")
        self.assertEqual(report["missing_cells"], str(3 * 19 - 11))
        self.assertTrue(os.path.isfile(os.path.join(out, MANIFEST_NAME)))
        for name in ("curves.svg", "curves_ops.svg"):
            svg = read_text(os.path.join(out, name))
            for label in ("imp_1", "imp_2", "observed only", "pooled imputed"):
                self.assertIn(label, svg, name)


class TestPipelineSim(CliTestCase):
    def test_rerun_from_manifest_is_byte_identical(self):
        first = self.out("first")
        self.assertEqual(main(["pipeline-sim", *SMALL_SIM, "--threads", "1", "--out", first]), 0)
        second = self.out("second")
        manifest = os.path.join(first, MANIFEST_NAME)
        self.assertEqual(main(["pipeline-sim", "--config", manifest, "--threads", "2", "--out", second]), 0)

        a, b = csv_bytes(first), csv_bytes(second)
        self.assertIn("curve_pooled.csv", a)
        self.assertIn("dropout_comparison.csv", a)
        self.assertEqual(sorted(a), sorted(b))
        for name in a:
            self.assertEqual(a[name], b[name], name)

    def test_report_and_comparison(self):
        out = self.out()
        self.assertEqual(main(["pipeline-sim", *SMALL_SIM, "--out", out]), 0)
        comparison = pd.read_csv(os.path.join(out, "dropout_comparison.csv"))
        self.assertEqual(list(comparison["mechanism"]), ["rolling4", "early", "random30"])
        self.assertTrue(np.all(comparison["mae"] >= 0))
        report = read_report(os.path.join(out, "mae_report.txt"))
        self.assertEqual(report["mechanism"], cfg.MECHANISM)
        self.assertGreaterEqual(float(report["ks_imputed_vs_true"]), 0.0)
        self.assertLessEqual(float(report["ks_imputed_vs_true"]), 1.0)
        summary = read_report(os.path.join(out, "traces_summary.txt"))
        self.assertLessEqual(float(summary["mixing_mean"]), 1.0)
        wide = pd.read_csv(os.path.join(out, "curves.csv"))
        self.assertEqual(list(wide.columns), ["age", "true", "survivor", "pooled", "imp_1", "imp_2"])
        svg = read_text(os.path.join(out, "curves.svg"))
        for label in ("imp_1", "imp_2", "true", "survivor", "pooled imputed"):
            self.assertIn(label, svg)

    def test_different_seed_changes_results(self):
        a_out, b_out = self.out("a"), self.out("b")
        self.assertEqual(main(["pipeline-sim", *SMALL_SIM, "--seed", "1", "--out", a_out]), 0)
        self.assertEqual(main(["pipeline-sim", *SMALL_SIM, "--seed", "2", "--out", b_out]), 0)
        self.assertNotEqual(csv_bytes(a_out)["panel_true.csv"], csv_bytes(b_out)["panel_true.csv"])


if __name__ == '__main__':
    unittest.main()
