"""
Independent reference values
Static Schroedinger bridge by log-domain Sinkhorn scaling (large-beta limit), its Gaussian
closed form, and a closed-form maximization of the dual over quadratic potentials.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import logsumexp

from .config import GaussianSpec, SolverConfig
from .errors import DomainError, NonConvergenceError, OracleBoxError
from .measures import GridFunction, GridMeasure, check_same_grid

logger = logging.getLogger(__name__)

ORACLE_SCAN = 201
ORACLE_REFINE = 41
ORACLE_ROUNDS = 12


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    value: float
    # log scalings on the supports of mu_0 and mu_T, zero elsewhere
    f: GridFunction
    g: GridFunction
    iterations: int
    residual: float
    residual_history: Tuple[float, ...]
    marginal_l1: float


def _log_kernel(x: np.ndarray, w: np.ndarray, T: float) -> np.ndarray:
    """Row-normalized log heat kernel log N_T(y_j - x_i) w_j on the grid"""
    logk = -(x[:, None] - x[None, :]) ** 2 / (2.0 * T) + np.log(w)[None, :]
    return logk - logsumexp(logk, axis=1, keepdims=True)


def sinkhorn_sb(mu0: GridMeasure, muT: GridMeasure, T: float, tol: float = 1e-9,
                max_iter: int = 10_000) -> SinkhornResult:
    """min KL(pi | mu_0 (x) N_T) over couplings of mu_0 and mu_T, by alternating log-domain scaling"""
    if T <= 0:
        raise DomainError(f"horizon must be positive (got T={T})")
    check_same_grid(mu0.grid, muT.grid)
    grid = mu0.grid
    a_all, b_all = mu0.masses, muT.masses
    rows, cols = np.flatnonzero(a_all > 0), np.flatnonzero(b_all > 0)
    a, b = a_all[rows], b_all[cols]
    log_a, log_b = np.log(a), np.log(b)
    # reference coupling R_ij = a_i k_ij restricted to the supports
    logk = _log_kernel(grid.nodes, grid.weights, T)[np.ix_(rows, cols)]

    f = np.zeros(rows.size)
    g = np.zeros(cols.size)
    history: List[float] = []
    converged = False
    for it in range(1, max_iter + 1):
        f_next = -logsumexp(logk + g[None, :], axis=1)
        if it > 1:
            # oscillation of log(row marginal / a); contracts monotonically
            step = f - f_next
            history.append(float(step.max() - step.min()))
        f = f_next
        g = log_b - logsumexp(log_a[:, None] + logk + f[:, None], axis=0)
        if history and history[-1] <= tol:
            converged = True
            break

    if not converged:
        raise NonConvergenceError(
            f"Sinkhorn did not reach tolerance {tol:.1e} in {max_iter} iterations "
            f"(residual {history[-1] if history else float('nan'):.3e})",
            residual_history=history,
        )

    row = a * np.exp(f + logsumexp(logk + g[None, :], axis=1))
    value = float(np.dot(row, f) + np.dot(b, g))
    marginal_l1 = float(np.abs(row - a).sum())

    f_full, g_full = np.zeros(grid.n), np.zeros(grid.n)
    f_full[rows], g_full[cols] = f, g
    logger.info(f"Sinkhorn converged in {it} iterations: SB value {value:.8g}, row L1 {marginal_l1:.2e}")
    return SinkhornResult(
        value=max(value, 0.0),
        f=GridFunction(grid, f_full),
        g=GridFunction(grid, g_full),
        iterations=it,
        residual=history[-1],
        residual_history=tuple(history),
        marginal_l1=marginal_l1,
    )


def gaussian_sb_value(mean0: float, var0: float, meanT: float, varT: float, T: float) -> float:
    """Static Schroedinger value between two Gaussians, Brownian reference with variance T"""
    if min(var0, varT, T) <= 0:
        raise DomainError("variances and horizon must be positive")
    # optimal coupling y = meanT + alpha (x - mean0) + noise
    alpha = (-T + math.sqrt(T * T + 4.0 * var0 * varT)) / (2.0 * var0)
    noise = varT - alpha * alpha * var0
    return 0.5 * ((varT + var0 - 2.0 * alpha * var0) / T - 1.0 - math.log(noise / T) + (meanT - mean0) ** 2 / T)


def _moreau_quadratic(p, q, beta):
    """Coefficients (a2, a1, a0) of T+[p y + q/2 y^2] = a2 x^2 + a1 x + a0, q > -beta"""
    return q * beta / (2.0 * (q + beta)), beta * p / (q + beta), -p * p / (2.0 * (q + beta))


def _gaussian_mean(a2, a1, a0, mean, var):
    return a2 * (var + mean * mean) + a1 * mean + a0


def gaussian_quadratic_value(p, q, mu0: GaussianSpec, muT: GaussianSpec, beta: float, T: float):
    """J(phi) for phi(y) = p y + q/2 y^2 and Gaussian marginals, all integrals in closed form; needs -beta < q < 1/T"""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if np.any(q <= -beta) or np.any(q >= 1.0 / T):
        raise DomainError(f"quadratic coefficient must lie in (-beta, 1/T) = ({-beta:g}, {1.0 / T:g})")
    shrink = 1.0 - q * T
    c2, c1 = q / shrink, p / shrink
    c0 = -0.5 * np.log(shrink) + p * p * T / (2.0 * shrink)

    terminal = _gaussian_mean(*_moreau_quadratic(p, q, beta), muT.mean, muT.var)
    a2, a1, a0 = _moreau_quadratic(c1, c2, beta)
    initial = _gaussian_mean(a2, a1, a0 + c0, mu0.mean, mu0.var)
    out = terminal - initial
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class QuadraticOracleResult:
    value: float
    p: float
    q: float


def gaussian_quadratic_oracle(mu0: GaussianSpec, muT: GaussianSpec, cfg: SolverConfig) -> QuadraticOracleResult:
    """Best J over quadratic potentials: dense scan of (p, q) then local refinement"""
    beta, T = cfg.beta, cfg.T
    q_lo, q_hi = -beta * (1.0 - 1e-6), (1.0 - 1e-6) / T
    p_box = 4.0 * (1.0 + beta) * (1.0 + abs(muT.mean - mu0.mean) / T)

    ps = np.linspace(-p_box, p_box, ORACLE_SCAN)
    qs = np.linspace(q_lo, q_hi, ORACLE_SCAN)
    P, Q = np.meshgrid(ps, qs, indexing="ij")
    values = gaussian_quadratic_value(P, Q, mu0, muT, beta, T)
    i, j = np.unravel_index(int(np.argmax(values)), values.shape)
    if i in (0, ORACLE_SCAN - 1) or j in (0, ORACLE_SCAN - 1):
        raise OracleBoxError(
            f"quadratic oracle optimum on the scan boundary at p={ps[i]:.4g}, q={qs[j]:.4g}; enlarge box"
        )

    best_p, best_q, best = ps[i], qs[j], float(values[i, j])
    dp, dq = ps[1] - ps[0], qs[1] - qs[0]
    for _ in range(ORACLE_ROUNDS):
        ps = np.linspace(best_p - 2.0 * dp, best_p + 2.0 * dp, ORACLE_REFINE)
        qs = np.linspace(max(best_q - 2.0 * dq, q_lo), min(best_q + 2.0 * dq, q_hi), ORACLE_REFINE)
        P, Q = np.meshgrid(ps, qs, indexing="ij")
        values = gaussian_quadratic_value(P, Q, mu0, muT, beta, T)
        i, j = np.unravel_index(int(np.argmax(values)), values.shape)
        if values[i, j] >= best:
            best_p, best_q, best = ps[i], qs[j], float(values[i, j])
        dp, dq = ps[1] - ps[0], qs[1] - qs[0]

    logger.debug(f"Quadratic oracle: J={best:.10g} at p={best_p:.6g}, q={best_q:.6g}")
    return QuadraticOracleResult(value=best, p=float(best_p), q=float(best_q))
