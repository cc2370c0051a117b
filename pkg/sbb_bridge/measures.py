"""
Grids, grid functions and probability measures
Uniform 1-D meshes, trapezoid quadrature, pushforwards, sampling and 1-D distances.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .config import CsvSpec, GaussianSpec, MarginalSpec, SolverConfig
from .errors import ConfigError, GridMismatchError, GridTooSmallError, MonotonicityError

logger = logging.getLogger(__name__)

MASS_TOL = 1e-10
QUANTILE_LEVELS = 16384
TRUNCATION_SIGMAS = 8.0
HEAT_MARGIN_SIGMAS = 4.0


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Grid:
    """Uniform mesh of n nodes on [x_min, x_max]"""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ConfigError(f"grid needs at least 16 nodes (got {self.n})")
        if not self.x_min < self.x_max:
            raise ConfigError(f"grid bounds must satisfy x_min < x_max (got {self.x_min}, {self.x_max})")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return _frozen(self.x_min + np.arange(self.n) * self.h)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights"""
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return _frozen(w)

    def node(self, i: int) -> float:
        return self.x_min + i * self.h

    def nearest_index(self, x: float) -> int:
        return int(np.clip(np.rint((x - self.x_min) / self.h), 0, self.n - 1))

    def contains(self, x: np.ndarray) -> np.ndarray:
        return (x >= self.x_min) & (x <= self.x_max)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    m: int

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"horizon must be positive (got {self.T})")
        if self.m < 16:
            raise ConfigError(f"time grid needs at least 16 steps (got {self.m})")

    @property
    def dt(self) -> float:
        return self.T / self.m

    @cached_property
    def nodes(self) -> np.ndarray:
        t = self.T * np.arange(self.m + 1) / self.m
        t[-1] = self.T
        return _frozen(t)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real field sampled on a grid, piecewise-linear between nodes"""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.grid.n,):
            raise GridMismatchError(f"expected {self.grid.n} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        object.__setattr__(self, "values", values)

    def __call__(self, x: Union[float, np.ndarray]) -> np.ndarray:
        """Linear interpolation inside the grid, linear extrapolation from the boundary slopes outside"""
        x = np.asarray(x, dtype=float)
        g, v = self.grid, self.values
        out = np.interp(x, g.nodes, v)
        left_slope = (v[1] - v[0]) / g.h
        right_slope = (v[-1] - v[-2]) / g.h
        out = np.where(x < g.x_min, v[0] + left_slope * (x - g.x_min), out)
        out = np.where(x > g.x_max, v[-1] + right_slope * (x - g.x_max), out)
        return out

    def derivative(self) -> "GridFunction":
        """Central differences, one-sided at the ends"""
        return GridFunction(self.grid, np.gradient(self.values, self.grid.h))

    def second_derivative(self) -> "GridFunction":
        """Three-point second differences over h^2, copied to the end nodes"""
        d2 = np.empty_like(self.values)
        d2[1:-1] = (self.values[2:] - 2.0 * self.values[1:-1] + self.values[:-2]) / self.grid.h ** 2
        d2[0], d2[-1] = d2[1], d2[-2]
        return GridFunction(self.grid, d2)

    def shifted(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, self.values + c)

    @classmethod
    def from_callable(cls, grid: Grid, f) -> "GridFunction":
        return cls(grid, f(grid.nodes))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Nonnegative density against Lebesgue on a grid, any total mass"""

    grid: Grid
    density: np.ndarray

    def __post_init__(self):
        density = _frozen(self.density)
        if density.shape != (self.grid.n,):
            raise GridMismatchError(f"expected {self.grid.n} density values, got shape {density.shape}")
        if not np.all(np.isfinite(density)) or np.any(density < 0):
            raise ValueError("density must be finite and nonnegative")
        object.__setattr__(self, "density", density)

    @property
    def mass(self) -> float:
        return float(np.dot(self.grid.weights, self.density))

    @property
    def masses(self) -> np.ndarray:
        return self.grid.weights * self.density

    def normalized(self) -> "GridMeasure":
        mass = self.mass
        if mass <= 0:
            raise GridTooSmallError("cannot normalize a density with zero mass", lost_mass=1.0)
        return GridMeasure(self.grid, self.density / mass)


@dataclass(frozen=True, eq=False)
class GridMeasure(GridDensity):
    """Probability density on a grid, trapezoid mass 1"""

    def __post_init__(self):
        super().__post_init__()
        if abs(self.mass - 1.0) > MASS_TOL:
            raise ValueError(f"measure mass must be 1 within {MASS_TOL:g} (got {self.mass!r})")

    @classmethod
    def from_density(cls, grid: Grid, density: np.ndarray) -> "GridMeasure":
        return GridDensity(grid, np.clip(density, 0.0, None)).normalized()

    @property
    def mean(self) -> float:
        return float(np.dot(self.masses, self.grid.nodes))

    @property
    def variance(self) -> float:
        return float(np.dot(self.masses, (self.grid.nodes - self.mean) ** 2))

    @cached_property
    def cdf(self) -> np.ndarray:
        """Nodal CDF by cumulative trapezoid, pinned to [0, 1]"""
        c = cumulative_trapezoid(self.density, dx=self.grid.h, initial=0.0)
        return _frozen(np.clip(c / c[-1], 0.0, 1.0))

    def cdf_at(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.grid.nodes, self.cdf, left=0.0, right=1.0)

    def quantile(self, p: np.ndarray) -> np.ndarray:
        return _inverse_cdf(self.grid, self.cdf, np.asarray(p, dtype=float))


def _inverse_cdf(grid: Grid, cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # first node whose CDF reaches u, then linear inversion on the bracketing cell
    i = np.clip(np.searchsorted(cdf, u, side="left"), 1, grid.n - 1)
    lo, hi = cdf[i - 1], cdf[i]
    span = hi - lo
    t = np.divide(u - lo, span, out=np.zeros_like(u), where=span > 0)
    return grid.nodes[i - 1] + np.clip(t, 0.0, 1.0) * grid.h


def check_same_grid(*grids: Grid):
    first = grids[0]
    for g in grids[1:]:
        if g != first:
            raise GridMismatchError(f"grid mismatch: {first} vs {g}")


def quadrature(f: GridFunction, mu: GridDensity) -> float:
    """Trapezoid value of the integral of f against mu"""
    check_same_grid(f.grid, mu.grid)
    return float(np.dot(mu.grid.weights, f.values * mu.density))


def _image_cdf(edges: np.ndarray, cdf: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Monotone cubic interpolant of the image CDF, 0 left of the image and total mass right of it"""
    keep = np.r_[np.diff(edges) > 0.0, True]
    edges, cdf = edges[keep], cdf[keep]
    out = np.where(t >= edges[-1], cdf[-1], 0.0)
    if edges.size >= 2:
        inner = (t >= edges[0]) & (t < edges[-1])
        out[inner] = PchipInterpolator(edges, cdf)(t[inner])
    return out


def pushforward(transport_map: GridFunction, mu: GridDensity, target: Grid) -> GridMeasure:
    """
    Law of transport_map(X) for X ~ mu, as a density on the target grid.

    The CDF of mu at the source cell edges is carried to the image of those edges and
    interpolated there by a monotone cubic; target cell masses are its increments over
    the target cell edges. Mass is conserved and the identity map reproduces mu exactly.
    """
    check_same_grid(transport_map.grid, mu.grid)
    source = mu.grid
    masses = mu.masses
    support = np.flatnonzero(masses > 0)
    if support.size == 0:
        raise GridTooSmallError("pushforward of a zero measure", lost_mass=1.0)

    y = transport_map.values[support].copy()
    drops = y[:-1] - y[1:]
    tie_tol = 1e-9 * source.h
    if drops.size and drops.max() > tie_tol:
        worst = int(np.argmax(drops))
        raise MonotonicityError(
            f"map decreases by {drops[worst]:.3e} at x={source.nodes[support[worst]]:.6g} (tolerance {tie_tol:.1e})"
        )
    # ties: keep the left value
    y = np.maximum.accumulate(y)

    lo, hi = int(support[0]), int(support[-1])
    # zero-mass nodes inside the support only bound cells; the map there is read off its neighbours
    v = np.interp(source.nodes[lo:hi + 1], source.nodes[support], y)
    if v.size > 1:
        left = v[0] if lo == 0 else v[0] - 0.5 * (v[1] - v[0])
        right = v[-1] if hi == source.n - 1 else v[-1] + 0.5 * (v[-1] - v[-2])
        edges = np.r_[left, 0.5 * (v[:-1] + v[1:]), right]
    else:
        edges = np.r_[v, v]
    cdf = np.r_[0.0, np.cumsum(masses[lo:hi + 1])]
    total = float(cdf[-1])

    cut = np.r_[target.x_min, target.nodes[:-1] + 0.5 * target.h, target.x_max]
    image_cdf = _image_cdf(edges, cdf, cut)
    inside = float(image_cdf[-1] - image_cdf[0])
    lost = max(total - inside, 0.0) / total
    if inside <= 0.0:
        raise GridTooSmallError(f"pushforward lands entirely outside the target grid (lost mass fraction {lost:.3g})", lost_mass=lost)
    if lost > MASS_TOL:
        logger.warning(f"Pushforward lost mass fraction {lost:.3e} outside the target grid")

    cells = np.maximum(np.diff(image_cdf), 0.0)
    return GridMeasure.from_density(target, cells / target.weights)


def _quantile_levels(count: int = QUANTILE_LEVELS) -> np.ndarray:
    return (np.arange(count) + 0.5) / count


def wasserstein2(mu: GridMeasure, nu: GridMeasure) -> float:
    """1-D W2 through quantile functions on a midpoint p-grid"""
    p = _quantile_levels()
    diff = mu.quantile(p) - nu.quantile(p)
    return float(math.sqrt(np.mean(diff ** 2)))


def empirical_wasserstein2(samples: np.ndarray, mu: GridMeasure) -> float:
    """W2 between the empirical law of samples and a grid measure"""
    p = _quantile_levels()
    diff = np.quantile(np.asarray(samples, dtype=float), p) - mu.quantile(p)
    return float(math.sqrt(np.mean(diff ** 2)))


def ks_distance(samples: np.ndarray, mu: GridMeasure) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and mu's CDF"""
    x = np.sort(np.asarray(samples, dtype=float))
    count = x.size
    f = mu.cdf_at(x)
    upper = np.arange(1, count + 1) / count - f
    lower = f - np.arange(count) / count
    return float(max(upper.max(), lower.max()))


def sample_from_uniforms(mu: GridMeasure, u: np.ndarray) -> np.ndarray:
    return _inverse_cdf(mu.grid, mu.cdf, np.asarray(u, dtype=float))


def sample(mu: GridMeasure, count: int, seed: int) -> np.ndarray:
    """Inverse-CDF draws, deterministic given the seed"""
    if count < 1:
        raise ValueError(f"count must be at least 1 (got {count})")
    rng = np.random.Generator(np.random.Philox(seed))
    return sample_from_uniforms(mu, rng.random(count))


def gaussian_measure(grid: Grid, mean: float, var: float) -> GridMeasure:
    """Gaussian density sampled on the grid and renormalized (truncation)"""
    if var <= 0:
        raise ConfigError(f"variance must be positive (got {var})")
    x = grid.nodes
    density = np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)
    return GridMeasure.from_density(grid, density)


def load_measure_csv(path: Union[str, Path], grid: Optional[Grid] = None) -> GridMeasure:
    """Read a measure from a CSV with header x,density; resampled onto grid when given"""
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise ConfigError(f"marginal file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot parse marginal file {path}: {e}")

    if list(df.columns[:2]) != ["x", "density"]:
        raise ConfigError(f"marginal file {path} must have header x,density (got {list(df.columns)})")
    x = df["x"].to_numpy(dtype=float)
    d = df["density"].to_numpy(dtype=float)
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise ConfigError(f"marginal file {path} needs strictly increasing x values")

    if grid is None:
        steps = np.diff(x)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ConfigError(f"marginal file {path} is not on a uniform grid; pass a target grid")
        grid = Grid(float(x[0]), float(x[-1]), int(x.size))
        return GridMeasure.from_density(grid, d)

    resampled = np.interp(grid.nodes, x, np.clip(d, 0.0, None), left=0.0, right=0.0)
    if not np.any(resampled > 0):
        raise GridTooSmallError(f"marginal file {path} has no mass on the grid", lost_mass=1.0)
    return GridMeasure.from_density(grid, resampled)


def measure_frame(mu: GridDensity) -> pd.DataFrame:
    return pd.DataFrame({"x": mu.grid.nodes, "density": mu.density})


def marginal_moments(spec: MarginalSpec) -> Tuple[float, float]:
    """(mean, standard deviation) of a marginal spec"""
    if isinstance(spec, GaussianSpec):
        return spec.mean, math.sqrt(spec.var)
    mu = load_measure_csv(spec.path)
    return mu.mean, math.sqrt(mu.variance)


def truncation_window(specs: Sequence[MarginalSpec], T: float) -> Tuple[float, float]:
    """[min mean - 8 sigma_max - 4 sqrt(T), max mean + 8 sigma_max + 4 sqrt(T)]"""
    moments = [marginal_moments(s) for s in specs]
    means = [mean for mean, _ in moments]
    sigma_max = max(sd for _, sd in moments)
    pad = TRUNCATION_SIGMAS * sigma_max + HEAT_MARGIN_SIGMAS * math.sqrt(T)
    return min(means) - pad, max(means) + pad


def build_grid(cfg: SolverConfig, specs: Iterable[MarginalSpec]) -> Grid:
    if cfg.x_min is not None:
        return Grid(cfg.x_min, cfg.x_max, cfg.n)
    lo, hi = truncation_window(list(specs), cfg.T)
    return Grid(lo, hi, cfg.n)


def measure_from_spec(spec: MarginalSpec, grid: Grid) -> GridMeasure:
    if isinstance(spec, GaussianSpec):
        return gaussian_measure(grid, spec.mean, spec.var)
    if isinstance(spec, CsvSpec):
        return load_measure_csv(spec.path, grid)
    raise ConfigError(f"unknown marginal spec: {spec!r}")


def l1_distance(a: GridDensity, b: GridDensity) -> float:
    check_same_grid(a.grid, b.grid)
    return float(np.dot(a.grid.weights, np.abs(a.density - b.density)))
