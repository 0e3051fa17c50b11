"""
Reference-seed regression runs of the simulation study and, when a Lahman
download is available, of the MLB application. Both are long: they are
deselected by default and run with `pytest -m slow` / `pytest -m integration`.
"""

import sys
import tempfile
import unittest

import numpy as np
import pandas as pd
import pytest

# Modify path to include parent dir
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from features.commands import PipelineConfig, handle_command
from features.config import REFERENCE_FIT_PATH
from features.core import AgeGrid, TransformSpec
from features.curve import CurveUse, curve_mae, panel_to_curve
from features.lmm import load_fit, with_grid
from features.logger import logger
from features.mi import MiConfig
from features.sim import STREAM_DROPOUT, STREAM_SIMULATE, DropoutSpec, Mechanism, SeededRng, apply_dropout, simulate_careers

logger.quiet = True

REFERENCE_SEED = 2022
LAHMAN_DIR = os.getenv("LAHMAN_DIR", "")


def read_report(path):
    with open(path, encoding="utf-8") as fh:
        return dict(line.rstrip("\n").split("=", 1) for line in fh if "=" in line)


@pytest.mark.slow
class TestDropoutBias(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        grid = AgeGrid()
        root = SeededRng(REFERENCE_SEED)
        fit = with_grid(load_fit(REFERENCE_FIT_PATH), grid)
        cls.full = simulate_careers(fit, 1000, grid, root.substream(STREAM_SIMULATE))
        cls.true_curve = panel_to_curve(cls.full, use=CurveUse.ALL)
        cls.survivor = {}
        for mech in Mechanism:
            panel = apply_dropout(cls.full, DropoutSpec(mech, threshold=0.55), TransformSpec(),
                                  root.substream(STREAM_DROPOUT))
            cls.survivor[mech] = panel_to_curve(panel)
        cls.late = grid.ages >= 30

    def test_survivors_overestimate_late_career(self):
        for mech in (Mechanism.ROLLING4, Mechanism.EARLY_CAREER):
            gap = self.survivor[mech].mean[self.late] - self.true_curve.mean[self.late]
            self.assertTrue(np.all(gap > 0), mech.value)

    def test_mae_bands(self):
        self.assertTrue(0.010 <= curve_mae(self.survivor[Mechanism.ROLLING4], self.true_curve) <= 0.060)
        self.assertTrue(0.006 <= curve_mae(self.survivor[Mechanism.EARLY_CAREER], self.true_curve) <= 0.040)
        self.assertLess(curve_mae(self.survivor[Mechanism.RANDOM_AT_30], self.true_curve), 5e-3)


@pytest.mark.slow
class TestReferencePipeline(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.out = cls._tmp.name
        config = PipelineConfig(
            command="pipeline-sim",
            out=cls.out,
            seed=REFERENCE_SEED,
            n_players=1000,
            mi=MiConfig(m=5, n_iter=30, seed=REFERENCE_SEED),
            dropout=DropoutSpec(Mechanism.EARLY_CAREER, threshold=0.55),
        )
        cls.code = handle_command(config)
        logger.set_sink(None)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_pipeline_succeeds(self):
        self.assertEqual(self.code, 0)

    def test_imputation_reduces_bias(self):
        report = read_report(os.path.join(self.out, "mae_report.txt"))
        mae_pooled = float(report["mae_pooled"])
        self.assertLess(mae_pooled, 0.010)
        self.assertLess(mae_pooled, float(report["mae_survivor"]))

    def test_imputed_distribution_matches_masked_truth(self):
        report = read_report(os.path.join(self.out, "mae_report.txt"))
        self.assertLess(float(report["ks_imputed_vs_true"]), 0.10)

    def test_chains_mix(self):
        summary = read_report(os.path.join(self.out, "traces_summary.txt"))
        self.assertLess(float(summary["mixing_mean"]), 0.5)
        self.assertLess(float(summary["mixing_sd"]), 0.5)

    def test_observed_cells_identical_across_imputations(self):
        source = pd.read_csv(os.path.join(self.out, "panel_dropout.csv"))
        kept = source["observed"] == 1
        for i in range(1, 6):
            completed = pd.read_csv(os.path.join(self.out, f"panel_imp_{i}.csv"))
            np.testing.assert_array_equal(completed["value"][kept].to_numpy(), source["value"][kept].to_numpy())


@pytest.mark.integration
@unittest.skipUnless(LAHMAN_DIR, "set LAHMAN_DIR to a Lahman download to run")
class TestLahmanApplication(unittest.TestCase):
    def test_mlb_pipeline(self):
        with tempfile.TemporaryDirectory() as out:
            config = PipelineConfig(
                command="pipeline-mlb",
                out=out,
                batting=os.path.join(LAHMAN_DIR, "Batting.csv"),
                people=os.path.join(LAHMAN_DIR, "People.csv"),
            )
            self.assertEqual(handle_command(config), 0)
            logger.set_sink(None)
            report = read_report(os.path.join(out, "mlb_report.txt"))
            self.assertEqual(report["players"], "2323")
            self.assertGreater(float(report["late_career_gap"]), 0.0)


if __name__ == '__main__':
    unittest.main()
