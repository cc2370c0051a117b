"""
Tests for the Schroedinger-bridge reference and the quadratic-potential oracle
"""

import unittest

import numpy as np

from cases import GAUSSIAN_PAIR, HEAT_FLOW, SHIFTED_PAIR, fast_config, marginals
from sbb_bridge.config import GaussianSpec
from sbb_bridge.errors import DomainError, NonConvergenceError
from sbb_bridge.primal_sim import linear_coupling_bound
from sbb_bridge.reference import (
    gaussian_quadratic_oracle,
    gaussian_quadratic_value,
    gaussian_sb_value,
    sinkhorn_sb,
)


class GaussianClosedFormTests(unittest.TestCase):
    """Test the static Schroedinger value between Gaussians"""

    def test_heat_flow_pair(self):
        self.assertAlmostEqual(gaussian_sb_value(0.0, 1.0, 0.0, 2.0, 1.0), 0.0, delta=1e-12)

    def test_shift_costs_kinetic_energy(self):
        for m, T in ((1.0, 1.0), (-0.5, 2.0)):
            self.assertAlmostEqual(gaussian_sb_value(0.0, 1.0, m, 1.0 + T, T), m * m / (2.0 * T), delta=1e-12)

    def test_time_reversal_of_equal_variances(self):
        self.assertAlmostEqual(gaussian_sb_value(-0.5, 1.0, 0.5, 1.0, 1.0),
                               gaussian_sb_value(0.5, 1.0, -0.5, 1.0, 1.0), delta=1e-12)

    def test_domain(self):
        with self.assertRaises(DomainError):
            gaussian_sb_value(0.0, 0.0, 0.0, 1.0, 1.0)


class SinkhornTests(unittest.TestCase):
    """Test log-domain Sinkhorn scaling against closed forms"""

    def test_heat_flow_pair_is_free(self):
        mu0, muT = marginals(HEAT_FLOW, fast_config())
        result = sinkhorn_sb(mu0, muT, 1.0)
        self.assertAlmostEqual(result.value, 0.0, delta=1e-6)
        self.assertLessEqual(result.residual, 1e-9)

    def test_shift(self):
        specs = (GaussianSpec(mean=0.0, var=1.0), GaussianSpec(mean=1.0, var=2.0))
        mu0, muT = marginals(specs, fast_config())
        result = sinkhorn_sb(mu0, muT, 1.0)
        self.assertAlmostEqual(result.value, 0.5, delta=1e-4)
        self.assertLessEqual(result.marginal_l1, 1e-6)

    def test_swap_symmetry(self):
        mu0, muT = marginals(SHIFTED_PAIR, fast_config())
        forward = sinkhorn_sb(mu0, muT, 1.0).value
        backward = sinkhorn_sb(muT, mu0, 1.0).value
        self.assertAlmostEqual(forward, backward, delta=1e-6)
        self.assertAlmostEqual(forward, gaussian_sb_value(-0.5, 1.0, 0.5, 1.0, 1.0), delta=1e-3)

    def test_residuals_contract(self):
        mu0, muT = marginals(GAUSSIAN_PAIR, fast_config(beta=2.0))
        result = sinkhorn_sb(mu0, muT, 1.0)
        history = np.asarray(result.residual_history)
        self.assertTrue(np.all(np.diff(history) <= 1e-12))
        self.assertAlmostEqual(result.value, gaussian_sb_value(0.0, 0.25, 0.0, 1.0, 1.0), delta=1e-3)

    def test_budget(self):
        specs = (GaussianSpec(mean=0.0, var=1.0), GaussianSpec(mean=1.0, var=2.0))
        mu0, muT = marginals(specs, fast_config())
        with self.assertRaises(NonConvergenceError):
            sinkhorn_sb(mu0, muT, 1.0, tol=1e-15, max_iter=3)


class QuadraticOracleTests(unittest.TestCase):
    """Test the closed-form dual over quadratic potentials"""

    def test_value_at_zero(self):
        mu0, muT = HEAT_FLOW
        self.assertEqual(gaussian_quadratic_value(0.0, 0.0, mu0, muT, 4.0, 1.0), 0.0)

    def test_vectorized(self):
        mu0, muT = GAUSSIAN_PAIR
        p = np.array([0.0, 0.1, -0.2])
        q = np.array([0.0, 0.3, -0.5])
        out = gaussian_quadratic_value(p, q, mu0, muT, 2.0, 1.0)
        self.assertEqual(out.shape, (3,))
        self.assertAlmostEqual(out[1], gaussian_quadratic_value(0.1, 0.3, mu0, muT, 2.0, 1.0))

    def test_domain(self):
        mu0, muT = GAUSSIAN_PAIR
        with self.assertRaises(DomainError):
            gaussian_quadratic_value(0.0, 1.0, mu0, muT, 2.0, 1.0)
        with self.assertRaises(DomainError):
            gaussian_quadratic_value(0.0, -2.0, mu0, muT, 2.0, 1.0)

    def test_heat_flow_optimum_at_origin(self):
        mu0, muT = HEAT_FLOW
        result = gaussian_quadratic_oracle(mu0, muT, fast_config())
        self.assertAlmostEqual(result.value, 0.0, delta=1e-8)
        self.assertAlmostEqual(result.p, 0.0, delta=1e-4)
        self.assertAlmostEqual(result.q, 0.0, delta=1e-4)

    def test_weak_duality_chain(self):
        cfg = fast_config(beta=2.0, n=1024)
        spec0, specT = GAUSSIAN_PAIR
        result = gaussian_quadratic_oracle(spec0, specT, cfg)
        mu0, muT = marginals(GAUSSIAN_PAIR, cfg)
        self.assertGreater(result.value, 0.0)
        self.assertLessEqual(result.value, linear_coupling_bound(mu0, muT, cfg))
        self.assertLessEqual(result.value, gaussian_sb_value(0.0, 0.25, 0.0, 1.0, 1.0) + 1e-6)


if __name__ == "__main__":
    unittest.main()
