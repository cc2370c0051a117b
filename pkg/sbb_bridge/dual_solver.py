"""
Reduced dual of the SBB problem
Objective J(phi) = mu_T(T+[phi]) - mu_0(T+[u_T]), its gradient as a signed density,
and the damped log-ratio fixed point that maximizes it over beta-convex potentials.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .config import SolverConfig
from .errors import GridTooSmallError, NonConvergenceError, ResolutionError
from .heat import convolve_density, log_heat_convolve
from .measures import (
    GridDensity,
    GridFunction,
    GridMeasure,
    check_same_grid,
    pushforward,
    quadrature,
)
from .moreau import MoreauResult, beta_convex_project, moreau_plus

logger = logging.getLogger(__name__)

CLIPPED_MASS_TOL = 1e-6
MASS_ERROR_TOL = 1e-3
MASS_WARNING_TOL = 1e-4
DENSITY_FLOOR = 1e-12
LOG_GUARD = 1e-300
MAX_HALVINGS = 30
RESTORE_AFTER = 3
EXP_CAP = 700.0


@dataclass(frozen=True, eq=False)
class DualGradient:
    """Signed gradient density Y_T#mu_T - m_T and the measures it is built from"""

    density: GridFunction
    u_T: GridFunction
    y0_map: GridFunction
    yT_map: GridFunction
    m0: GridMeasure
    nu0: GridDensity
    nuT: GridDensity
    mT: GridDensity
    yT_push: GridMeasure
    # nodes whose T+[phi] minimizer sits on the grid boundary
    clipped: np.ndarray

    @property
    def total(self) -> float:
        return float(np.dot(self.density.grid.weights, self.density.values))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    residual: float
    omega: float
    accepted: bool


@dataclass(frozen=True, eq=False)
class DualState:
    phi: GridFunction
    objective: float
    gradient: DualGradient
    residual: float
    iteration: int
    converged: bool = True
    history: Tuple[IterationRecord, ...] = field(default_factory=tuple)

    @property
    def residual_history(self) -> List[float]:
        return [r.residual for r in self.history if r.accepted]


def _clipped_mass(result: MoreauResult, mu: GridMeasure) -> float:
    return float(mu.masses[result.clipped].sum())


def _transforms(phi: GridFunction, mu0: GridMeasure, muT: GridMeasure,
                cfg: SolverConfig) -> Tuple[GridFunction, MoreauResult, MoreauResult]:
    """u_T, T+[phi] and T+[u_T], with the boundary check on both marginals"""
    check_same_grid(phi.grid, mu0.grid, muT.grid)
    u_T = log_heat_convolve(phi, cfg.T)
    plus_phi = moreau_plus(phi, cfg.beta)
    plus_u = moreau_plus(u_T, cfg.beta)

    for label, result, mu in (("mu_T", plus_phi, muT), ("mu_0", plus_u, mu0)):
        lost = _clipped_mass(result, mu)
        if lost > CLIPPED_MASS_TOL:
            raise GridTooSmallError(
                f"grid too small: {label} puts mass {lost:.3e} on nodes whose Moreau minimizer is clipped "
                f"at the grid boundary",
                lost_mass=lost,
            )
    return u_T, plus_phi, plus_u


def dual_objective(phi: GridFunction, mu0: GridMeasure, muT: GridMeasure, cfg: SolverConfig) -> float:
    _, plus_phi, plus_u = _transforms(phi, mu0, muT, cfg)
    return quadrature(plus_phi.envelope, muT) - quadrature(plus_u.envelope, mu0)


def _gradient_from(phi: GridFunction, mu0: GridMeasure, muT: GridMeasure, cfg: SolverConfig,
                   u_T: GridFunction, plus_phi: MoreauResult, plus_u: MoreauResult) -> DualGradient:
    grid = phi.grid
    y0_map, yT_map = plus_u.argmin, plus_phi.argmin

    m0 = pushforward(y0_map, mu0, grid)
    nu0 = GridDensity(grid, np.exp(np.minimum(-u_T.values, EXP_CAP)) * m0.density)
    nuT = convolve_density(nu0, cfg.T)
    mT = GridDensity(grid, np.exp(np.minimum(phi.values, EXP_CAP)) * nuT.density)
    yT_push = pushforward(yT_map, muT, grid)

    deviation = abs(mT.mass - 1.0)
    if deviation > MASS_ERROR_TOL:
        raise ResolutionError(
            f"resolution/truncation failure: mass of m_T is {mT.mass:.6f} (deviation {deviation:.2e})"
        )
    if deviation > MASS_WARNING_TOL:
        logger.warning(f"Mass of m_T deviates from 1 by {deviation:.2e}; grid may be under-resolved")

    return DualGradient(
        density=GridFunction(grid, yT_push.density - mT.density),
        u_T=u_T,
        y0_map=y0_map,
        yT_map=yT_map,
        m0=m0,
        nu0=nu0,
        nuT=nuT,
        mT=mT,
        yT_push=yT_push,
        clipped=plus_phi.clipped,
    )


def dual_gradient(phi: GridFunction, mu0: GridMeasure, muT: GridMeasure, cfg: SolverConfig) -> DualGradient:
    u_T, plus_phi, plus_u = _transforms(phi, mu0, muT, cfg)
    return _gradient_from(phi, mu0, muT, cfg, u_T, plus_phi, plus_u)


def gradient_residual(gradient: DualGradient) -> float:
    """L1 norm of the gradient density, end nodes and clipped nodes excluded"""
    keep = ~gradient.clipped
    keep[0] = keep[-1] = False
    w = gradient.density.grid.weights
    return float(np.sum(w[keep] * np.abs(gradient.density.values[keep])))


def evaluate_state(phi: GridFunction, mu0: GridMeasure, muT: GridMeasure, cfg: SolverConfig,
                   iteration: int = 0) -> DualState:
    u_T, plus_phi, plus_u = _transforms(phi, mu0, muT, cfg)
    objective = quadrature(plus_phi.envelope, muT) - quadrature(plus_u.envelope, mu0)
    gradient = _gradient_from(phi, mu0, muT, cfg, u_T, plus_phi, plus_u)
    residual = gradient_residual(gradient)
    return DualState(
        phi=phi,
        objective=objective,
        gradient=gradient,
        residual=residual,
        iteration=iteration,
        converged=residual <= cfg.tol_residual,
    )


def normalize(phi: GridFunction) -> GridFunction:
    """Shift phi so that it vanishes at the node nearest 0"""
    anchor = phi.grid.nearest_index(0.0)
    return phi.shifted(-phi.values[anchor])


def log_ratio_step(gradient: DualGradient, max_log_step: float) -> np.ndarray:
    """Clipped log(density(Y_T#mu_T) / density(m_T)); zero where both densities vanish"""
    rho_y = gradient.yT_push.density
    rho_m = gradient.mT.density
    step = np.log((rho_y + LOG_GUARD) / (rho_m + LOG_GUARD))
    step = np.clip(step, -max_log_step, max_log_step)
    step[(rho_y < DENSITY_FLOOR) & (rho_m < DENSITY_FLOOR)] = 0.0
    return step


def _slack(objective: float) -> float:
    # round-off allowance when comparing objectives
    return 1e-12 * (1.0 + abs(objective))


def solve(mu0: GridMeasure, muT: GridMeasure, cfg: SolverConfig,
          callback: Optional[Callable[[IterationRecord], None]] = None,
          phi0: Optional[GridFunction] = None) -> DualState:
    """Damped fixed-point ascent on J from phi = 0 (or phi0), with backtracking on omega"""
    check_same_grid(mu0.grid, muT.grid)
    grid = mu0.grid
    phi = GridFunction(grid, np.zeros(grid.n)) if phi0 is None else normalize(beta_convex_project(phi0, cfg.beta))

    history: List[IterationRecord] = []

    def emit(record: IterationRecord):
        history.append(record)
        logger.debug(
            f"iter={record.iteration} objective={record.objective:.10g} residual={record.residual:.3e} "
            f"omega={record.omega:g} accepted={record.accepted}"
        )
        if callback is not None:
            callback(record)

    omega = cfg.damping
    state = evaluate_state(phi, mu0, muT, cfg, iteration=0)
    emit(IterationRecord(0, state.objective, state.residual, omega, True))
    streak = 0

    while state.residual > cfg.tol_residual and state.iteration < cfg.max_iter:
        step = log_ratio_step(state.gradient, cfg.max_log_step)
        iteration = state.iteration + 1

        for _ in range(MAX_HALVINGS + 1):
            raw = GridFunction(grid, state.phi.values + omega * step)
            candidate_phi = normalize(beta_convex_project(raw, cfg.beta))
            candidate = evaluate_state(candidate_phi, mu0, muT, cfg, iteration=iteration)
            if candidate.objective >= state.objective - _slack(state.objective):
                break
            emit(IterationRecord(iteration, candidate.objective, candidate.residual, omega, False))
            omega *= 0.5
            streak = 0
        else:
            residuals = [r.residual for r in history if r.accepted]
            raise NonConvergenceError(
                f"objective kept decreasing after {MAX_HALVINGS} halvings of omega at iteration {iteration}",
                residual_history=residuals,
            )

        state = candidate
        emit(IterationRecord(iteration, state.objective, state.residual, omega, True))
        streak += 1
        if omega < cfg.damping and streak >= RESTORE_AFTER:
            omega = cfg.damping
            streak = 0

    residuals = [r.residual for r in history if r.accepted]
    if state.residual <= cfg.tol_residual:
        logger.info(
            f"Dual ascent converged in {state.iteration} iterations: objective={state.objective:.10g} "
            f"residual={state.residual:.3e}"
        )
        converged = True
    elif state.residual <= 10.0 * cfg.tol_residual:
        logger.warning(
            f"Dual ascent stopped at max_iter={cfg.max_iter} with residual {state.residual:.3e} "
            f"(tolerance {cfg.tol_residual:.1e}); returning unconverged state"
        )
        converged = False
    else:
        raise NonConvergenceError(
            f"no convergence after {cfg.max_iter} iterations: residual {state.residual:.3e} "
            f"exceeds 10x tolerance {cfg.tol_residual:.1e}",
            residual_history=residuals,
        )

    return DualState(
        phi=state.phi,
        objective=state.objective,
        gradient=state.gradient,
        residual=state.residual,
        iteration=state.iteration,
        converged=converged,
        history=tuple(history),
    )
