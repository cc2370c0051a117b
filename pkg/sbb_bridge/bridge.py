"""
SBB solution assembly
Builds v = T+[u], the maps Y_t and X_t, the running marginals and every structural check
from a converged dual potential.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .config import SolverConfig
from .dual_solver import DualState
from .errors import DomainError
from .heat import HeatField, build_heat_field, convolve_density
from .measures import GridDensity, GridFunction, GridMeasure, TimeGrid, l1_distance, pushforward
from .moreau import moreau_plus

logger = logging.getLogger(__name__)

SUPPORT_FLOOR = 1e-8
ENVELOPE_TOL = 1e-5
INVERSE_TOL = 1e-4

ArrayLike = Union[float, np.ndarray]


def hamiltonian(p: ArrayLike, A: ArrayLike, beta: float) -> ArrayLike:
    """H(p, A) = p^2/2 + beta/2 (beta / (beta - A) - 1), finite only for A < beta"""
    p_arr, a_arr = np.asarray(p, dtype=float), np.asarray(A, dtype=float)
    if np.any(a_arr >= beta):
        raise DomainError(f"outside dom(H): A={np.max(a_arr):g} must be below beta={beta:g}")
    out = 0.5 * p_arr * p_arr + 0.5 * beta * (beta / (beta - a_arr) - 1.0)
    return float(out) if out.ndim == 0 else out


def feedback(p: ArrayLike, A: ArrayLike, beta: float) -> Tuple[ArrayLike, ArrayLike]:
    """Maximizers of the Hamiltonian: drift p and diffusion beta / (beta - A)"""
    a_arr = np.asarray(A, dtype=float)
    if np.any(a_arr >= beta):
        raise DomainError(f"outside dom(H): A={np.max(a_arr):g} must be below beta={beta:g}")
    diffusion = beta / (beta - a_arr)
    if diffusion.ndim == 0:
        return float(p), float(diffusion)
    return np.asarray(p, dtype=float), diffusion


def cost_integrand(a: ArrayLike, b: ArrayLike, beta: float) -> ArrayLike:
    """c(a, b) = a^2/2 + beta/2 (b - 1)^2"""
    out = 0.5 * np.square(a) + 0.5 * beta * np.square(np.asarray(b, dtype=float) - 1.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class SbbSolution:
    config: SolverConfig
    state: DualState
    heat: HeatField
    v: Tuple[GridFunction, ...]
    y_maps: Tuple[GridFunction, ...]
    x_maps: Tuple[GridFunction, ...]
    # per time node, eval nodes whose T+[u] minimizer is clipped
    clipped: Tuple[np.ndarray, ...]
    nu: Tuple[GridDensity, ...]
    mu0: GridMeasure
    muT: GridMeasure
    marginals: Tuple[GridMeasure, ...] = ()
    lagrangian_cost: float = float("nan")
    residuals: Dict[str, float] = field(default_factory=dict)
    degraded: Tuple[str, ...] = ()

    @property
    def phi_hat(self) -> GridFunction:
        return self.state.phi

    @property
    def dual_value(self) -> float:
        return self.state.objective

    @property
    def time_grid(self) -> TimeGrid:
        return self.heat.time_grid

    @property
    def grid(self):
        return self.state.phi.grid

    @property
    def nu0(self) -> GridDensity:
        return self.nu[0]

    @property
    def nuT(self) -> GridDensity:
        return self.nu[-1]

    @property
    def m0(self) -> GridMeasure:
        return self.state.gradient.m0

    @property
    def mT(self) -> GridDensity:
        return self.state.gradient.mT

    @property
    def is_degraded(self) -> bool:
        return bool(self.degraded)

    def y_density(self, k: int) -> GridDensity:
        """Law of Y at t_k: h_t nu_t = exp(u[k]) nu_t"""
        h = np.exp(np.minimum(self.heat.u[k].values, 700.0))
        return GridDensity(self.grid, h * self.nu[k].density)


def _transport_nu(nu0: GridDensity, time_grid: TimeGrid, workers: Optional[int]) -> List[GridDensity]:
    times = [float(t) for t in time_grid.nodes[1:]]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rest = list(pool.map(lambda t: convolve_density(nu0, t), times))
    else:
        rest = [convolve_density(nu0, t) for t in times]
    return [nu0] + rest


def assemble(state: DualState, cfg: SolverConfig, mu0: GridMeasure, muT: GridMeasure,
             workers: Optional[int] = None) -> SbbSolution:
    """Fields, maps and structural residuals of the SBB solution generated by state.phi"""
    if not state.converged:
        logger.warning("Assembling from an unconverged dual state; the solution will be flagged")

    grid = state.phi.grid
    beta = cfg.beta
    time_grid = TimeGrid(cfg.T, cfg.m)
    heat = build_heat_field(state.phi, time_grid, beta, workers=workers)

    plus = [moreau_plus(u, beta) for u in heat.u]
    v = tuple(r.envelope for r in plus)
    y_maps = tuple(r.argmin for r in plus)
    clipped = tuple(r.clipped for r in plus)
    x_maps = tuple(GridFunction(grid, grid.nodes + s.values / beta) for s in heat.score)

    # nu_T comes from the same convolution as in the dual gradient
    nu = _transport_nu(state.gradient.nu0, time_grid, workers)

    solution = SbbSolution(
        config=cfg,
        state=state,
        heat=heat,
        v=v,
        y_maps=y_maps,
        x_maps=x_maps,
        clipped=clipped,
        nu=tuple(nu),
        mu0=mu0,
        muT=muT,
    )
    marginals = tuple(running_marginals(solution))
    solution = replace(solution, marginals=marginals)
    residuals, degraded = _structural_checks(solution)
    solution = replace(solution, lagrangian_cost=lagrangian_cost(solution), residuals=residuals,
                     degraded=tuple(degraded))

    if solution.degraded:
        logger.warning(f"Solution degraded: {', '.join(solution.degraded)}")
    else:
        logger.info(f"Solution assembled: dual value {solution.dual_value:.10g}, all structural checks pass")
    return solution


def running_marginals(sol: SbbSolution) -> List[GridMeasure]:
    """Law of X_t at every time node: X_t # (h_t nu_t)"""
    out = []
    for k in range(sol.time_grid.m + 1):
        out.append(pushforward(sol.x_maps[k], sol.y_density(k), sol.grid))
    return out


def _interior_mask(sol: SbbSolution, k: int) -> np.ndarray:
    mask = ~sol.clipped[k]
    mask[0] = mask[-1] = False
    return mask


def _x_support(sol: SbbSolution, k: int) -> np.ndarray:
    mask = _interior_mask(sol, k)
    if sol.marginals:
        mask &= sol.marginals[k].density >= SUPPORT_FLOOR
    return mask


def hjb_residual(sol: SbbSolution) -> np.ndarray:
    """d_t v + H(v', v'') per time node and grid node; NaN where not evaluated (t = T, ends, clipped)"""
    tg = sol.time_grid
    beta = sol.config.beta
    out = np.full((tg.m + 1, sol.grid.n), np.nan)
    for k in range(tg.m):
        lo = max(k - 1, 0)
        dv_dt = (sol.v[k + 1].values - sol.v[lo].values) / ((k + 1 - lo) * tg.dt)
        p = sol.v[k].derivative().values
        A = sol.v[k].second_derivative().values
        mask = _interior_mask(sol, k) & ~sol.clipped[lo] & ~sol.clipped[k + 1] & (A < beta)
        out[k, mask] = dv_dt[mask] + hamiltonian(p[mask], A[mask], beta)
    return out


def hjb_residual_sup(sol: SbbSolution) -> float:
    """Largest |HJB residual| on the support of the running law, over t < T"""
    res = hjb_residual(sol)
    worst = 0.0
    for k in range(sol.time_grid.m):
        mask = _x_support(sol, k) & np.isfinite(res[k])
        if mask.any():
            worst = max(worst, float(np.max(np.abs(res[k, mask]))))
    return worst


def lagrangian_cost(sol: SbbSolution) -> float:
    """Left-endpoint quadrature of the cost of the feedback controls against the running marginals"""
    tg = sol.time_grid
    beta = sol.config.beta
    total = 0.0
    for k in range(tg.m):
        mu = sol.marginals[k]
        a = sol.v[k].derivative().values
        A = sol.v[k].second_derivative().values
        ok = A < beta
        if not ok.all() and mu.masses[~ok].sum() > SUPPORT_FLOOR:
            logger.warning(f"v'' reaches beta on mass {mu.masses[~ok].sum():.2e} at t={tg.nodes[k]:.4g}")
        sigma = np.ones_like(A)
        sigma[ok] = beta / (beta - A[ok])
        c = np.where(ok, cost_integrand(a, sigma, beta), 0.0)
        total += tg.dt * float(np.dot(mu.masses, c))
    return total


def diffusion_consistency(sol: SbbSolution) -> float:
    """max |beta/(beta - v''(X(y))) - X'(y)| over the support of the Y-law, t < T"""
    beta = sol.config.beta
    worst = 0.0
    for k in range(sol.time_grid.m):
        y_support = sol.y_density(k).density >= SUPPORT_FLOOR
        y_support[0] = y_support[-1] = False
        x_at = sol.x_maps[k].values[y_support]
        A = sol.v[k].second_derivative()(x_at)
        if np.any(A >= beta):
            return float("inf")
        sigma_x = beta / (beta - A)
        sigma_y = 1.0 + sol.heat.u[k].second_derivative().values[y_support] / beta
        if sigma_x.size:
            worst = max(worst, float(np.max(np.abs(sigma_x - sigma_y))))
    return worst


def _structural_checks(sol: SbbSolution) -> Tuple[Dict[str, float], List[str]]:
    cfg = sol.config
    beta, tg, grid = cfg.beta, sol.time_grid, sol.grid
    x = grid.nodes
    residuals: Dict[str, float] = {}
    degraded: List[str] = []

    envelope = 0.0
    band_low = 0.0
    band_high = 0.0
    inverse = 0.0
    min_slope = np.inf
    for k in range(tg.m + 1):
        support = _x_support(sol, k)
        dv = sol.v[k].derivative().values
        if support.any():
            gap = np.abs(dv - beta * (x - sol.y_maps[k].values))[support] / (1.0 + np.abs(x[support]))
            envelope = max(envelope, float(np.max(gap)))

        if k < tg.m and support.any():
            d2v = sol.v[k].second_derivative().values[support]
            tol = 1e-6 * (1.0 + float(np.max(np.abs(sol.v[k].values[support]))))
            lower = -1.0 / (cfg.T - float(tg.nodes[k])) - tol
            margin = beta ** 2 * tg.dt / (2.0 * (1.0 + beta * tg.dt))
            band_low = max(band_low, float(np.max(lower - d2v)))
            band_high = max(band_high, float(np.max(d2v - (beta - margin))))

        y_support = sol.y_density(k).density >= SUPPORT_FLOOR
        y_support[0] = y_support[-1] = False
        if y_support.any():
            y = x[y_support]
            back = sol.y_maps[k](sol.x_maps[k].values[y_support])
            inverse = max(inverse, float(np.max(np.abs(back - y) / (1.0 + np.abs(y)))))

        min_slope = min(min_slope, float(np.min(np.diff(sol.x_maps[k].values))))

    residuals["envelope_identity"] = envelope
    residuals["hessian_band_lower"] = band_low
    residuals["hessian_band_upper"] = band_high
    residuals["inverse_relation"] = inverse
    residuals["x_map_min_step"] = min_slope
    residuals["semiconvexity_margin"] = float(np.min(sol.heat.semiconvexity_margin))
    residuals["hjb_sup"] = hjb_residual_sup(sol)
    residuals["diffusion_consistency"] = diffusion_consistency(sol)

    chain_0 = l1_distance(sol.marginals[0], sol.mu0)
    chain_T = l1_distance(sol.marginals[-1], sol.muT)
    residuals["marginal_chain_0"] = chain_0
    residuals["marginal_chain_T"] = chain_T

    state = sol.state
    residuals["sbb_system_T"] = state.residual
    nu0 = state.gradient.nu0.density
    on = nu0 >= SUPPORT_FLOOR
    ratio = state.gradient.m0.density[on] / nu0[on]
    residuals["sbb_system_0"] = float(np.dot(grid.weights[on], np.abs(ratio - np.exp(state.gradient.u_T.values[on]))))

    chain_budget = 5.0 * cfg.tol_residual
    checks = {
        "envelope_identity": envelope <= ENVELOPE_TOL,
        "hessian_band": band_low <= 0.0 and band_high <= 0.0,
        "inverse_relation": inverse <= INVERSE_TOL,
        "x_map_monotone": min_slope >= -1e-9 * grid.h,
        "semiconvexity": not sol.heat.warnings,
        "marginal_chain_0": chain_0 <= chain_budget,
        "marginal_chain_T": chain_T <= chain_budget,
        "sbb_system_T": state.residual <= cfg.tol_residual,
        "sbb_system_0": residuals["sbb_system_0"] <= 10.0 * cfg.tol_residual,
    }
    for name, ok in checks.items():
        if not ok:
            degraded.append(name)
    if not state.converged:
        degraded.append("dual_not_converged")
    return residuals, degraded
