import sys
import tempfile
import unittest

import numpy as np

# Modify path to include parent dir
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from features.core import AgeGrid, CareerPanel
from features.errors import IngestError, NumericError
from features.lmm import (
    LmmFit, _ObservedCells, age_basis, fit_lmm, gls_beta, load_fit,
    predict_curve, predict_mean, save_fit,
)
from features.logger import logger

logger.quiet = True

BETA = (0.73, -0.04, -0.10, -0.02)


def generated_panel(n_players, tau2, sigma2, seed, beta=BETA, grid=AgeGrid()):
    """Careers straight from the model, without clipping"""
    rng = np.random.default_rng(seed)
    mean = age_basis(grid.ages) @ np.asarray(beta)
    values = (mean[None, :]
              + np.sqrt(tau2) * rng.standard_normal((n_players, 1))
              + np.sqrt(sigma2) * rng.standard_normal((n_players, len(grid))))
    return CareerPanel(
        players=[f"g{i:04d}" for i in range(n_players)],
        grid=grid,
        values=values,
        observed=np.ones_like(values, dtype=bool),
    )


class TestPredict(unittest.TestCase):
    def test_flat_curve(self):
        fit = LmmFit(beta=(0.5, 0, 0, 0), tau2=0.0, sigma2=1.0)
        self.assertTrue(all(predict_mean(fit, a) == 0.5 for a in range(21, 40)))

    def test_centering_identity(self):
        fit = LmmFit(beta=(0, 1, 0, 0), tau2=0.0, sigma2=1.0)
        self.assertEqual(predict_mean(fit, 30), 0.0)
        self.assertAlmostEqual(predict_mean(fit, 39), 0.9, places=12)

    def test_age_outside_grid(self):
        fit = LmmFit(beta=BETA, tau2=0.0, sigma2=1.0)
        with self.assertRaises(NumericError):
            predict_mean(fit, 45)

    def test_curve_matches_points(self):
        fit = LmmFit(beta=BETA, tau2=0.0, sigma2=1.0)
        curve = predict_curve(fit)
        self.assertEqual(curve.shape, (19,))
        self.assertAlmostEqual(curve[9], BETA[0], places=12)

    def test_negative_variance_rejected(self):
        with self.assertRaises(NumericError):
            LmmFit(beta=BETA, tau2=-0.1, sigma2=1.0)


class TestGls(unittest.TestCase):
    def test_gls_equals_ols_without_player_effect(self):
        panel = generated_panel(40, 0.02, 0.01, seed=11)
        cells = _ObservedCells(panel, 30.0, 10.0)
        ols, *_ = np.linalg.lstsq(cells.X, cells.y, rcond=None)
        np.testing.assert_allclose(gls_beta(cells, 0.0, 0.01), ols, atol=1e-10)


class TestFitLmm(unittest.TestCase):
    def test_recovers_generating_parameters(self):
        tau2, sigma2 = 0.02, 0.01
        fit = fit_lmm(generated_panel(1000, tau2, sigma2, seed=2022))
        self.assertTrue(fit.converged)
        self.assertFalse(fit.boundary)
        # within 10% or three large-sample standard errors
        self.assertLess(abs(fit.tau2 - tau2), max(0.1 * tau2, 3 * tau2 * np.sqrt(2 / 1000)))
        self.assertLess(abs(fit.sigma2 - sigma2) / sigma2, 0.10)
        self.assertLess(abs(fit.beta[0] - BETA[0]) / BETA[0], 0.10)
        for k in range(1, 4):
            self.assertLess(abs(fit.beta[k] - BETA[k]), max(0.1 * abs(BETA[k]), 0.02))
        self.assertEqual(fit.n_players, 1000)
        self.assertEqual(fit.n_obs, 19000)

    def test_loglik_monotone(self):
        fit = fit_lmm(generated_panel(300, 0.02, 0.01, seed=5))
        trace = np.asarray(fit.loglik_trace)
        self.assertGreater(trace.size, 1)
        self.assertTrue(np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1])))
        self.assertTrue(np.isfinite(fit.loglik))

    def test_no_player_effect(self):
        fit = fit_lmm(generated_panel(200, 0.0, 0.01, seed=9))
        self.assertLess(fit.tau2, 0.002)

    def test_only_observed_cells_enter(self):
        panel = generated_panel(200, 0.02, 0.01, seed=4)
        observed = np.array(panel.observed)
        observed[:, 15:] = False
        fit = fit_lmm(panel.replace(observed=observed))
        self.assertEqual(fit.n_obs, 200 * 15)

    def test_player_order_invariance(self):
        panel = generated_panel(150, 0.02, 0.01, seed=8)
        a = fit_lmm(panel)
        b = fit_lmm(panel.take(list(reversed(range(panel.n_players)))))
        self.assertAlmostEqual(a.tau2, b.tau2, places=8)
        self.assertAlmostEqual(a.sigma2, b.sigma2, places=8)
        np.testing.assert_allclose(a.beta, b.beta, atol=1e-8)

    def test_single_player_rejected(self):
        with self.assertRaises(NumericError):
            fit_lmm(generated_panel(1, 0.02, 0.01, seed=1))

    def test_iteration_cap_flags_non_convergence(self):
        fit = fit_lmm(generated_panel(100, 0.02, 0.01, seed=3), max_iter=1, tol=1e-300)
        self.assertFalse(fit.converged)
        self.assertEqual(fit.n_iter, 1)


class TestFitFile(unittest.TestCase):
    def test_save_and_load(self):
        fit = LmmFit(beta=BETA, tau2=0.006, sigma2=0.007, loglik=-12.5, n_players=3, n_obs=40,
                     converged=True, boundary=False, n_iter=17)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "fit.txt")
            save_fit(fit, path)
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
            back = load_fit(path)
        self.assertIn("beta0=0.73\n", text)
        self.assertIn("converged=true\n", text)
        self.assertEqual(back.beta, fit.beta)
        self.assertEqual((back.tau2, back.sigma2, back.n_iter), (0.006, 0.007, 17))

    def test_malformed_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "fit.txt")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("beta0=1\n")
            with self.assertRaises(NumericError):
                load_fit(path)

    def test_missing_file(self):
        with self.assertRaises(IngestError):
            load_fit(os.path.join(tempfile.gettempdir(), "no-such-fit.txt"))

    def test_reference_fit_ships(self):
        from features.config import REFERENCE_FIT_PATH
        fit = load_fit(REFERENCE_FIT_PATH)
        self.assertTrue(fit.converged)
        self.assertEqual(fit.grid, AgeGrid(21, 39))
        peak = int(np.argmax(predict_curve(fit))) + 21
        self.assertTrue(26 <= peak <= 31)


if __name__ == '__main__':
    unittest.main()
