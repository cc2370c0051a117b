"""
Desk-scale acceptance runs
n = 1024 nodes, m = 256 steps and 1e5 paths; deselect with -m "not slow".
"""

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from cases import GAUSSIAN_PAIR, HEAT_FLOW, fast_config, marginals, run_config
from sbb_bridge.bridge import assemble
from sbb_bridge.cli import main
from sbb_bridge.config import GaussianSpec
from sbb_bridge.dual_solver import dual_gradient, dual_objective, solve
from sbb_bridge.measures import Grid, GridFunction
from sbb_bridge.moreau import beta_convex_project, moreau_minus, moreau_plus
from sbb_bridge.primal_sim import linear_coupling_bound, simulate
from sbb_bridge.reference import gaussian_quadratic_oracle, sinkhorn_sb
from test_moreau import random_convex_pl

DESK = {"n": 1024, "m": 256, "tol_residual": 1e-5}
DESK_PATHS = 100_000
BASS_PAIR = (GaussianSpec(mean=0.0, var=0.5), GaussianSpec(mean=0.0, var=1.5))


def desk_solution(specs, **overrides):
    cfg = fast_config(**{**DESK, **overrides})
    mu0, muT = marginals(specs, cfg)
    return assemble(solve(mu0, muT, cfg), cfg, mu0, muT)


def assert_structure(case: unittest.TestCase, sol):
    """Envelope identity, Hessian band, inverse relation and semiconvexity"""
    case.assertEqual(sol.degraded, ())
    case.assertLessEqual(sol.residuals["envelope_identity"], 1e-5)
    case.assertLessEqual(sol.residuals["hessian_band_lower"], 0.0)
    case.assertLessEqual(sol.residuals["hessian_band_upper"], 0.0)
    case.assertLessEqual(sol.residuals["inverse_relation"], 1e-4)
    case.assertEqual(sol.heat.warnings, ())
    case.assertLessEqual(sol.dual_value, linear_coupling_bound(sol.mu0, sol.muT, sol.config) + 1e-6)


@pytest.mark.slow
class MoreauAcceptanceTests(unittest.TestCase):
    """Round trip on 100 random beta-convex piecewise-linear potentials"""

    def test_round_trip(self):
        grid = Grid(-10.0, 10.0, 1024)
        rng = np.random.default_rng(100)
        middle = slice(grid.n // 6, 5 * grid.n // 6)
        worst = 0.0
        for _ in range(100):
            beta = float(rng.uniform(0.5, 8.0))
            phi = random_convex_pl(grid, beta, rng)
            back = moreau_minus(moreau_plus(phi, beta, refine=False).envelope, beta, refine=False).envelope
            worst = max(worst, float(np.max(np.abs(back.values - phi.values)[middle])))
        self.assertLessEqual(worst, 1e-6)


@pytest.mark.slow
class GradientAcceptanceTests(unittest.TestCase):
    """Analytic gradient against central differences at 3 potentials and 10 directions"""

    def test_finite_differences(self):
        cfg = fast_config(beta=2.0, n=1024, m=256)
        mu0, muT = marginals(GAUSSIAN_PAIR, cfg)
        grid = mu0.grid
        y = grid.nodes
        rng = np.random.default_rng(31)
        eps = 1e-3
        for _ in range(3):
            q, p = rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3)
            raw = GridFunction(grid, 0.5 * q * y ** 2 + p * y + 0.05 * np.sin(rng.uniform(0.5, 1.5) * y))
            phi = beta_convex_project(raw, cfg.beta)
            gradient = dual_gradient(phi, mu0, muT, cfg)
            for _ in range(10):
                b, c, d = rng.uniform(-1.0, 1.0, size=3)
                direction = b * y + c * np.sin(0.25 * y + d)
                up = dual_objective(GridFunction(grid, phi.values + eps * direction), mu0, muT, cfg)
                down = dual_objective(GridFunction(grid, phi.values - eps * direction), mu0, muT, cfg)
                fd = (up - down) / (2.0 * eps)
                analytic = float(np.dot(grid.weights, direction * gradient.density.values))
                self.assertLessEqual(abs(fd - analytic), 1e-2 * abs(fd) + 2e-4)


@pytest.mark.slow
class GaussianPairAcceptanceTests(unittest.TestCase):
    """N(0, 0.25) -> N(0, 1) with beta = 2, T = 1"""

    @classmethod
    def setUpClass(cls):
        cls.sol = desk_solution(GAUSSIAN_PAIR, beta=2.0)
        cls.report = simulate(cls.sol, DESK_PATHS, seed=0)

    def test_system_residuals(self):
        self.assertTrue(self.sol.state.converged)
        self.assertLessEqual(self.sol.residuals["sbb_system_T"], 1e-4)
        self.assertLessEqual(self.sol.residuals["sbb_system_0"], 1e-3)

    def test_structure(self):
        assert_structure(self, self.sol)

    def test_against_quadratic_oracle(self):
        spec0, specT = GAUSSIAN_PAIR
        oracle = gaussian_quadratic_oracle(spec0, specT, self.sol.config)
        self.assertGreaterEqual(self.sol.dual_value, oracle.value - 1e-3)

    def test_strong_duality(self):
        self.assertTrue(self.report.duality_ok)
        self.assertLessEqual(self.report.duality_gap, self.report.duality_budget)
        self.assertLessEqual(self.report.excluded_paths, 0.001 * DESK_PATHS)

    def test_euler_bias(self):
        fine = desk_solution(GAUSSIAN_PAIR, beta=2.0, m=512)
        report = simulate(fine, DESK_PATHS, seed=0)
        combined = np.hypot(report.primal_cost_stderr, self.report.primal_cost_stderr)
        self.assertLess(abs(report.primal_cost_mean - self.report.primal_cost_mean), 3.0 * combined)


@pytest.mark.slow
class SchroedingerLimitTests(unittest.TestCase):
    """Dual value climbs toward the Schroedinger bridge value as beta grows"""

    def test_beta_sweep(self):
        values = []
        reference = None
        for beta in (1.5, 2.0, 4.0, 8.0, 20.0, 50.0):
            sol = desk_solution(GAUSSIAN_PAIR, beta=beta)
            if reference is None:
                reference = sinkhorn_sb(sol.mu0, sol.muT, 1.0).value
            self.assertLessEqual(sol.dual_value, reference + 1e-4)
            self.assertLessEqual(sol.dual_value, linear_coupling_bound(sol.mu0, sol.muT, sol.config) + 1e-6)
            values.append(sol.dual_value)
        self.assertTrue(np.all(np.diff(values) >= -1e-6), values)
        self.assertLessEqual(reference - values[-1], 0.05 * reference)


@pytest.mark.slow
class BassRegimeTests(unittest.TestCase):
    """Drift dies out and a martingale emerges as beta shrinks with beta*T fixed"""

    def test_martingale_emerges(self):
        drift, slopes = [], []
        for beta, T in ((2.0, 2.0), (0.5, 8.0), (0.125, 32.0)):
            sol = desk_solution(BASS_PAIR, beta=beta, T=T)
            report = simulate(sol, DESK_PATHS, seed=0)
            self.assertLessEqual(report.excluded_paths, 0.001 * DESK_PATHS)
            drift.append(report.drift_energy)
            slopes.append(report.martingale_slope)
        self.assertTrue(np.all(np.diff(drift) < 0.0), drift)
        self.assertTrue(np.all(np.diff(slopes) > 0.0), slopes)
        self.assertGreater(slopes[-1], 0.9)


@pytest.mark.slow
class HeatFlowAcceptanceTests(unittest.TestCase):
    """Brownian motion is optimal for mu_T = mu_0 * N_T"""

    def test_trivial_pair(self):
        sol = desk_solution(HEAT_FLOW)
        self.assertLessEqual(sol.state.iteration, 3)
        self.assertLessEqual(abs(sol.dual_value), 1e-6)
        self.assertLessEqual(float(np.ptp(sol.phi_hat.values)), 1e-6)
        assert_structure(self, sol)
        report = simulate(sol, DESK_PATHS, seed=0)
        self.assertLessEqual(report.primal_cost_mean, 1e-3)


@pytest.mark.slow
class DeterminismTests(unittest.TestCase):
    """Same config and seed give byte-identical artifacts"""

    def test_repeat_runs(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            config = root / "run.json"
            config.write_text(json.dumps(run_config(GAUSSIAN_PAIR, str(root / "a"), beta=2.0, **DESK)))
            reports = []
            for out in ("a", "b"):
                main(["solve", "--config", str(config), "--out", str(root / out)])
                main(["simulate", "--out", str(root / out), "--paths", "10000", "--seed", "5"])
                reports.append(json.loads((root / out / "simulation.json").read_text())["report"])
            for name in ("phi_hat", "u", "v", "score", "y_map", "x_map", "marginals", "nu0", "mT"):
                self.assertEqual((root / "a" / f"{name}.csv").read_bytes(), (root / "b" / f"{name}.csv").read_bytes())
            self.assertEqual(reports[0], reports[1])


if __name__ == "__main__":
    unittest.main()
