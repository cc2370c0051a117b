"""
Tests for grids, grid functions, measures, pushforwards and 1-D distances
"""

import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from sbb_bridge.config import CsvSpec, GaussianSpec, SolverConfig
from sbb_bridge.errors import ConfigError, GridMismatchError, GridTooSmallError, MonotonicityError
from sbb_bridge.measures import (
    Grid,
    GridFunction,
    GridMeasure,
    TimeGrid,
    build_grid,
    empirical_wasserstein2,
    gaussian_measure,
    ks_distance,
    l1_distance,
    load_measure_csv,
    measure_from_spec,
    pushforward,
    quadrature,
    sample,
    truncation_window,
    wasserstein2,
)


class GridTests(unittest.TestCase):
    """Test meshes and trapezoid weights"""

    def test_nodes_and_weights(self):
        grid = Grid(-1.0, 1.0, 21)
        self.assertAlmostEqual(grid.h, 0.1)
        self.assertAlmostEqual(grid.nodes[-1], 1.0)
        self.assertAlmostEqual(float(grid.weights.sum()), 2.0)
        self.assertAlmostEqual(grid.weights[0], 0.05)

    def test_rejects_small_or_inverted_grids(self):
        with self.assertRaises(ConfigError):
            Grid(0.0, 1.0, 8)
        with self.assertRaises(ConfigError):
            Grid(1.0, 0.0, 64)

    def test_nearest_index_clamps(self):
        grid = Grid(-1.0, 1.0, 21)
        self.assertEqual(grid.nearest_index(0.0), 10)
        self.assertEqual(grid.nearest_index(-5.0), 0)
        self.assertEqual(grid.nearest_index(5.0), 20)

    def test_time_grid_ends_exactly_at_horizon(self):
        tg = TimeGrid(0.7, 33)
        self.assertEqual(tg.nodes[-1], 0.7)
        self.assertEqual(len(tg.nodes), 34)
        self.assertAlmostEqual(tg.dt, 0.7 / 33)


class GridFunctionTests(unittest.TestCase):
    """Test interpolation, extrapolation and finite differences"""

    def setUp(self):
        self.grid = Grid(-2.0, 2.0, 41)

    def test_shape_mismatch(self):
        with self.assertRaises(GridMismatchError):
            GridFunction(self.grid, np.zeros(40))

    def test_linear_extrapolation(self):
        f = GridFunction.from_callable(self.grid, lambda x: 2.0 * x + 1.0)
        self.assertAlmostEqual(float(f(10.0)), 21.0, places=10)
        self.assertAlmostEqual(float(f(-10.0)), -19.0, places=10)
        np.testing.assert_allclose(f(np.array([0.05, 1.33])), [1.1, 3.66], atol=1e-12)

    def test_derivatives_of_quadratic(self):
        f = GridFunction.from_callable(self.grid, lambda x: x ** 2)
        np.testing.assert_allclose(f.derivative().values[1:-1], 2.0 * self.grid.nodes[1:-1], atol=1e-10)
        np.testing.assert_allclose(f.second_derivative().values, 2.0, atol=1e-8)

    def test_values_are_read_only(self):
        f = GridFunction(self.grid, np.zeros(41))
        with self.assertRaises(ValueError):
            f.values[0] = 1.0


class MeasureTests(unittest.TestCase):
    """Test quadrature, moments and measure validation"""

    def setUp(self):
        self.grid = Grid(-8.0, 8.0, 1024)
        self.mu = gaussian_measure(self.grid, 0.0, 1.0)

    def test_mass_is_one(self):
        self.assertAlmostEqual(self.mu.mass, 1.0, delta=1e-10)

    def test_unnormalized_density_rejected(self):
        with self.assertRaises(ValueError):
            GridMeasure(self.grid, 2.0 * self.mu.density)

    def test_quadrature_of_odd_function(self):
        f = GridFunction.from_callable(self.grid, lambda x: x)
        self.assertAlmostEqual(quadrature(f, self.mu), 0.0, delta=1e-8)

    def test_quadrature_of_second_moment(self):
        f = GridFunction.from_callable(self.grid, lambda x: x ** 2)
        self.assertAlmostEqual(quadrature(f, self.mu), 1.0, delta=1e-4)

    def test_quadrature_grid_mismatch(self):
        f = GridFunction(Grid(-8.0, 8.0, 512), np.zeros(512))
        with self.assertRaises(GridMismatchError):
            quadrature(f, self.mu)

    def test_cdf_and_quantile(self):
        self.assertAlmostEqual(float(self.mu.cdf_at(0.0)), 0.5, delta=1e-6)
        self.assertAlmostEqual(float(self.mu.quantile(0.975)), 1.959964, delta=1e-3)
        self.assertEqual(self.mu.cdf[0], 0.0)
        self.assertEqual(self.mu.cdf[-1], 1.0)

    def test_gaussian_needs_positive_variance(self):
        with self.assertRaises(ConfigError):
            gaussian_measure(self.grid, 0.0, 0.0)


class PushforwardTests(unittest.TestCase):
    """Test pushforwards of grid measures"""

    def setUp(self):
        self.grid = Grid(-8.0, 8.0, 1024)
        self.mu = gaussian_measure(self.grid, 0.0, 1.0)

    def test_identity(self):
        identity = GridFunction.from_callable(self.grid, lambda x: x)
        out = pushforward(identity, self.mu, self.grid)
        self.assertLessEqual(l1_distance(out, self.mu), 1e-10)

    def test_dilation_variance(self):
        target = Grid(-20.0, 20.0, 2049)
        out = pushforward(GridFunction.from_callable(self.grid, lambda x: 2.0 * x), self.mu, target)
        self.assertAlmostEqual(out.variance, 4.0, delta=1e-3)

    def test_translation_mean(self):
        out = pushforward(GridFunction.from_callable(self.grid, lambda x: x + 1.0), self.mu, self.grid)
        self.assertAlmostEqual(out.mean, 1.0, delta=1e-6)

    def test_decreasing_map_rejected(self):
        with self.assertRaises(MonotonicityError):
            pushforward(GridFunction.from_callable(self.grid, lambda x: -x), self.mu, self.grid)

    def test_map_outside_target(self):
        with self.assertRaises(GridTooSmallError) as ctx:
            pushforward(GridFunction.from_callable(self.grid, lambda x: x + 100.0), self.mu, self.grid)
        self.assertEqual(ctx.exception.lost_mass, 1.0)

    def test_flat_map_collapses_to_a_point(self):
        out = pushforward(GridFunction(self.grid, np.full(self.grid.n, self.grid.nodes[600])), self.mu, self.grid)
        self.assertAlmostEqual(out.masses[600], 1.0, delta=1e-12)

    def test_contraction_density_converges(self):
        errors = []
        for n in (256, 1024):
            grid = Grid(-8.0, 8.0, n)
            contraction = GridFunction.from_callable(grid, lambda x: 0.9 * x)
            out = pushforward(contraction, gaussian_measure(grid, 0.0, 1.0), grid)
            errors.append(l1_distance(out, gaussian_measure(grid, 0.0, 0.81)))
        self.assertLessEqual(errors[1], 1e-3)
        self.assertLess(errors[1], 0.5 * errors[0])

    def test_pushforward_conserves_mass(self):
        out = pushforward(GridFunction.from_callable(self.grid, lambda x: np.tanh(x)), self.mu, self.grid)
        self.assertAlmostEqual(float(out.masses.sum()), 1.0, delta=1e-12)
        self.assertLessEqual(float(np.max(np.abs(out.cdf_at(np.array([0.0])) - 0.5))), 1e-6)


class DistanceTests(unittest.TestCase):
    """Test W2, KS and sampling"""

    def setUp(self):
        self.grid = Grid(-8.0, 8.0, 1024)

    def test_w2_identical(self):
        mu = gaussian_measure(self.grid, 0.3, 1.2)
        self.assertAlmostEqual(wasserstein2(mu, mu), 0.0, delta=1e-8)

    def test_w2_translation(self):
        mu = gaussian_measure(self.grid, 0.0, 1.0)
        nu = gaussian_measure(self.grid, 0.7, 1.0)
        self.assertAlmostEqual(wasserstein2(mu, nu), 0.7, delta=1e-3)

    def test_w2_centered_scales(self):
        mu = gaussian_measure(self.grid, 0.0, 0.25)
        nu = gaussian_measure(self.grid, 0.0, 1.0)
        self.assertAlmostEqual(wasserstein2(mu, nu), 0.5, delta=1e-3)

    def test_w2_metric_properties(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            a, b, c = (gaussian_measure(self.grid, rng.uniform(-1, 1), rng.uniform(0.3, 2.0)) for _ in range(3))
            self.assertAlmostEqual(wasserstein2(a, b), wasserstein2(b, a), delta=1e-6)
            self.assertLessEqual(wasserstein2(a, c), wasserstein2(a, b) + wasserstein2(b, c) + 1e-6)

    def test_sampling_is_deterministic(self):
        mu = gaussian_measure(self.grid, 0.0, 1.0)
        np.testing.assert_array_equal(sample(mu, 1000, seed=3), sample(mu, 1000, seed=3))
        self.assertFalse(np.array_equal(sample(mu, 1000, seed=3), sample(mu, 1000, seed=4)))

    def test_sample_statistics(self):
        mu = gaussian_measure(self.grid, 0.5, 1.0)
        draws = sample(mu, 20000, seed=1)
        self.assertAlmostEqual(float(np.mean(draws)), 0.5, delta=0.05)
        self.assertLess(ks_distance(draws, mu), 0.02)
        self.assertLess(empirical_wasserstein2(draws, mu), 0.1)

    def test_sample_count(self):
        with self.assertRaises(ValueError):
            sample(gaussian_measure(self.grid, 0.0, 1.0), 0, seed=0)


class MarginalFileTests(unittest.TestCase):
    """Test CSV marginals and the truncation window"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, name, frame):
        path = os.path.join(self.tmp.name, name)
        frame.to_csv(path, index=False)
        return path

    def test_uniform_file_defines_its_grid(self):
        x = np.linspace(-5.0, 5.0, 101)
        path = self._write("m.csv", pd.DataFrame({"x": x, "density": np.exp(-0.5 * x ** 2)}))
        mu = load_measure_csv(path)
        self.assertEqual(mu.grid.n, 101)
        self.assertAlmostEqual(mu.mass, 1.0, delta=1e-10)
        self.assertAlmostEqual(mu.mean, 0.0, delta=1e-10)

    def test_resampled_onto_grid(self):
        x = np.linspace(-5.0, 5.0, 101)
        path = self._write("m.csv", pd.DataFrame({"x": x, "density": np.exp(-0.5 * x ** 2)}))
        mu = measure_from_spec(CsvSpec(path=path), Grid(-6.0, 6.0, 301))
        self.assertEqual(mu.grid.n, 301)
        self.assertAlmostEqual(mu.variance, 1.0, delta=1e-2)

    def test_bad_header(self):
        path = self._write("bad.csv", pd.DataFrame({"y": [0.0, 1.0], "p": [1.0, 1.0]}))
        with self.assertRaises(ConfigError):
            load_measure_csv(path)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_measure_csv(os.path.join(self.tmp.name, "nope.csv"))

    def test_nonuniform_file_needs_grid(self):
        path = self._write("nu.csv", pd.DataFrame({"x": [0.0, 1.0, 3.0], "density": [1.0, 1.0, 1.0]}))
        with self.assertRaises(ConfigError):
            load_measure_csv(path)

    def test_truncation_window(self):
        lo, hi = truncation_window([GaussianSpec(mean=0.0, var=1.0), GaussianSpec(mean=1.0, var=4.0)], 1.0)
        self.assertAlmostEqual(lo, -20.0)
        self.assertAlmostEqual(hi, 21.0)

    def test_explicit_bounds_win(self):
        cfg = SolverConfig(beta=2.0, T=1.0, n=64, x_min=-3.0, x_max=3.0)
        grid = build_grid(cfg, [GaussianSpec(var=1.0)])
        self.assertEqual((grid.x_min, grid.x_max, grid.n), (-3.0, 3.0, 64))


if __name__ == "__main__":
    unittest.main()
