"""
Monte-Carlo simulation of the optimal semimartingale
Y solves dY = score(t, Y) dt + dW under the bridge measure and X = X_t(Y); costs are
accumulated with the feedback controls at the left endpoint of every step.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from .bridge import SbbSolution, cost_integrand
from .config import SolverConfig
from .errors import DomainError, GridTooSmallError
from .measures import GridMeasure, empirical_wasserstein2, ks_distance, sample_from_uniforms, wasserstein2

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096
MAX_EXCLUDED_FRACTION = 1e-3
TRAJECTORY_CAP = 1000
MIN_PATHS_FOR_DUALITY = 1000
RECOMMENDED_PATHS = 100
DUALITY_ABS_SLACK = 1e-6


class SimulationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    path_count: int = Field(..., description="Paths kept after exclusions")
    excluded_paths: int = Field(0, description="Paths that left the grid or dom(H)")
    time_steps: int
    seed: int
    primal_cost_mean: float = Field(..., description="E of the integrated cost c(a, sigma)")
    primal_cost_stderr: float
    drift_energy: float = Field(..., description="E of the integral of a^2/2")
    diffusion_energy: float = Field(..., description="E of the integral of beta/2 (sigma - 1)^2")
    terminal_W2: float = Field(..., description="W2 between simulated X_T and mu_T")
    terminal_KS: float
    initial_W2: float = Field(..., description="W2 between simulated X_0 and mu_0")
    model_terminal_W2: float = Field(..., description="W2 between simulated X_T and X_T # m_T")
    martingale_slope: Optional[float] = Field(None, description="OLS slope of X_T on X_0")
    dual_value: float
    duality_gap: float = Field(..., description="|primal_cost_mean - dual_value|")
    duality_budget: float = Field(..., description="3 stderr + relative budget times |dual_value| + 1e-6")
    duality_ok: Optional[bool] = Field(None, description="Only judged with at least 1000 paths")


@dataclass(frozen=True, eq=False)
class PathBlock:
    x0: np.ndarray
    xT: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray
    excluded: np.ndarray
    records: Optional[pd.DataFrame] = None


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream of one path, independent of how paths are batched"""
    return np.random.Generator(np.random.Philox(key=seed).jumped(path_index))


def _draws(seed: int, indices: range, steps: int) -> Tuple[np.ndarray, np.ndarray]:
    u0 = np.empty(len(indices))
    xi = np.empty((len(indices), steps))
    for row, i in enumerate(indices):
        rng = path_generator(seed, i)
        u0[row] = rng.random()
        xi[row] = rng.standard_normal(steps)
    return u0, xi


def _simulate_block(sol: SbbSolution, indices: range, seed: int, curvature: List,
                    record: bool = False) -> PathBlock:
    tg = sol.time_grid
    beta = sol.config.beta
    grid = sol.grid
    dt, sqrt_dt = tg.dt, math.sqrt(tg.dt)

    u0, xi = _draws(seed, indices, tg.m)
    x0 = sample_from_uniforms(sol.mu0, u0)
    y = sol.y_maps[0](x0)

    drift = np.zeros(len(indices))
    diffusion = np.zeros(len(indices))
    excluded = np.zeros(len(indices), dtype=bool)
    frames = []

    for k in range(tg.m):
        x = sol.x_maps[k](y)
        a = sol.heat.score[k](y)
        A = curvature[k](x)
        excluded |= ~grid.contains(y) | ~grid.contains(x) | (A >= beta)
        sigma = np.where(A < beta, beta / np.where(A < beta, beta - A, 1.0), 1.0)
        drift += dt * cost_integrand(a, 1.0, beta)
        diffusion += dt * cost_integrand(0.0, sigma, beta)
        if record:
            frames.append(pd.DataFrame({
                "path_id": np.asarray(indices), "t": tg.nodes[k], "Y": y, "X": x, "a": a, "sigma": sigma,
            }))
        y = y + a * dt + sqrt_dt * xi[:, k]

    xT = sol.x_maps[tg.m](y)
    excluded |= ~grid.contains(y) | ~grid.contains(xT)

    records = None
    if record:
        frames.append(pd.DataFrame({
            "path_id": np.asarray(indices), "t": tg.nodes[tg.m], "Y": y, "X": xT,
            "a": np.nan, "sigma": np.nan,
        }))
        records = pd.concat(frames, ignore_index=True).sort_values(["path_id", "t"], kind="stable")
    return PathBlock(x0=x0, xT=xT, drift=drift, diffusion=diffusion, excluded=excluded, records=records)


def _curvatures(sol: SbbSolution) -> List:
    return [v.second_derivative() for v in sol.v]


def _run(sol: SbbSolution, paths: int, seed: int) -> PathBlock:
    curvature = _curvatures(sol)
    blocks = []
    for start in range(0, paths, BLOCK_SIZE):
        indices = range(start, min(start + BLOCK_SIZE, paths))
        blocks.append(_simulate_block(sol, indices, seed, curvature))
        logger.debug(f"Simulated paths {indices.start}..{indices.stop - 1}")
    return PathBlock(
        x0=np.concatenate([b.x0 for b in blocks]),
        xT=np.concatenate([b.xT for b in blocks]),
        drift=np.concatenate([b.drift for b in blocks]),
        diffusion=np.concatenate([b.diffusion for b in blocks]),
        excluded=np.concatenate([b.excluded for b in blocks]),
    )


def martingale_diagnostic(x0: np.ndarray, xT: np.ndarray) -> float:
    """OLS slope of X_T against X_0"""
    x0 = np.asarray(x0, dtype=float)
    if x0.size < 2 or np.var(x0) < 1e-12:
        raise DomainError(f"degenerate X_0 sample: variance {np.var(x0) if x0.size else 0.0:.3e} below 1e-12")
    return float(stats.linregress(x0, np.asarray(xT, dtype=float)).slope)


def linear_coupling_bound(mu0: GridMeasure, muT: GridMeasure, cfg: SolverConfig) -> float:
    """Cost of the linear interpolation of the comonotone coupling, diffusion penalty included"""
    w2 = wasserstein2(mu0, muT)
    return w2 ** 2 / (2.0 * cfg.T) + 0.5 * cfg.beta * cfg.T


def simulate(sol: SbbSolution, paths: int, seed: int, duality_rel_budget: float = 0.02) -> SimulationReport:
    if paths < 2:
        raise ValueError(f"simulation needs at least 2 paths (got {paths})")
    if paths < RECOMMENDED_PATHS:
        logger.warning(f"Only {paths} paths requested; statistics below {RECOMMENDED_PATHS} paths are indicative only")
    logger.info(f"Simulating {paths} paths over {sol.time_grid.m} steps (seed {seed})")
    run = _run(sol, paths, seed)

    n_excluded = int(run.excluded.sum())
    fraction = n_excluded / paths
    if fraction > MAX_EXCLUDED_FRACTION:
        raise GridTooSmallError(
            f"grid too small: {n_excluded} of {paths} paths left the grid or dom(H) ({fraction:.2%})",
            lost_mass=fraction,
        )
    if n_excluded:
        logger.warning(f"Excluded {n_excluded} of {paths} paths that left the grid or dom(H)")

    keep = ~run.excluded
    drift, diffusion = run.drift[keep], run.diffusion[keep]
    cost = drift + diffusion
    count = int(keep.sum())
    stderr = float(np.std(cost, ddof=1) / math.sqrt(count)) if count > 1 else float("nan")

    x0, xT = run.x0[keep], run.xT[keep]
    try:
        slope = martingale_diagnostic(x0, xT)
    except DomainError as e:
        logger.warning(f"Martingale diagnostic skipped: {e}")
        slope = None

    primal = float(np.mean(cost))
    dual = sol.dual_value
    gap = abs(primal - dual)
    budget = (3.0 * (stderr if math.isfinite(stderr) else 0.0) + duality_rel_budget * abs(dual)
              + DUALITY_ABS_SLACK)
    duality_ok = gap <= budget if paths >= MIN_PATHS_FOR_DUALITY else None

    report = SimulationReport(
        path_count=count,
        excluded_paths=n_excluded,
        time_steps=sol.time_grid.m,
        seed=seed,
        primal_cost_mean=primal,
        primal_cost_stderr=stderr,
        drift_energy=float(np.mean(drift)),
        diffusion_energy=float(np.mean(diffusion)),
        terminal_W2=empirical_wasserstein2(xT, sol.muT),
        terminal_KS=ks_distance(xT, sol.muT),
        initial_W2=empirical_wasserstein2(x0, sol.mu0),
        model_terminal_W2=empirical_wasserstein2(xT, sol.marginals[-1]),
        martingale_slope=slope,
        dual_value=dual,
        duality_gap=gap,
        duality_budget=budget,
        duality_ok=duality_ok,
    )
    logger.info(
        f"Primal cost {primal:.6g} +/- {stderr:.2g} vs dual {dual:.6g} "
        f"(drift {report.drift_energy:.4g}, diffusion {report.diffusion_energy:.4g})"
    )
    return report


def trajectory_frame(sol: SbbSolution, paths: int, seed: int) -> pd.DataFrame:
    """Per-step records (path_id, t, Y, X, a, sigma) of the first paths, capped at 1000"""
    count = min(paths, TRAJECTORY_CAP)
    block = _simulate_block(sol, range(count), seed, _curvatures(sol), record=True)
    return block.records.reset_index(drop=True)
