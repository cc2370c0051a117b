"""
Heat semigroup in the log domain
u_s = log(N_s * e^phi), the backward potential field, scores and the semiconvexity certificate.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

from .errors import DomainError
from .measures import GridDensity, GridFunction, TimeGrid

logger = logging.getLogger(__name__)

KERNEL_SIGMAS = 10.0


def kappa(t: float, beta: float, T: float) -> float:
    """Semiconvexity bound beta / (1 + beta (T - t)) of log h_t"""
    if t >= T:
        raise DomainError(f"kappa needs t < T (got t={t}, T={T})")
    if t < 0:
        raise DomainError(f"kappa needs t >= 0 (got t={t})")
    return beta / (1.0 + beta * (T - t))


def _extended(phi: GridFunction, e: int) -> Tuple[np.ndarray, np.ndarray]:
    """phi on the grid padded by e nodes per side (linear extension) and log trapezoid weights"""
    v = phi.values
    k = np.arange(1, e + 1)
    left = v[0] - (v[1] - v[0]) * k[::-1]
    right = v[-1] + (v[-1] - v[-2]) * k
    values = np.concatenate([left, v, right])
    log_w = np.full(values.size, math.log(phi.grid.h))
    log_w[0] = log_w[-1] = math.log(0.5 * phi.grid.h)
    return values, log_w


def log_heat_convolve(phi: GridFunction, s: float, banded: bool = True) -> GridFunction:
    """u_s(x) = log sum_j w_j exp(phi(y_j) - (x - y_j)^2 / 2s) - log(2 pi s) / 2"""
    if s <= 0:
        raise DomainError(f"heat time must be positive (got s={s})")
    grid = phi.grid
    h, n = grid.h, grid.n
    e = max(1, int(math.ceil(KERNEL_SIGMAS * math.sqrt(s) / h)))
    values, log_w = _extended(phi, e)
    terms = values + log_w

    if banded:
        # window i spans extended nodes i .. i+2e, i.e. offsets e .. -e from x_i
        offsets = (e - np.arange(2 * e + 1)) * h
        windows = sliding_window_view(terms, 2 * e + 1)
        u = logsumexp(windows - offsets ** 2 / (2.0 * s), axis=1)
    else:
        # dense reference over the whole extended grid
        j = np.arange(values.size)
        offsets = ((np.arange(n) + e)[:, None] - j[None, :]) * h
        u = logsumexp(terms[None, :] - offsets ** 2 / (2.0 * s), axis=1)

    return GridFunction(grid, u - 0.5 * math.log(2.0 * math.pi * s))


def convolve_density(nu: GridDensity, s: float) -> GridDensity:
    """nu * N_s restricted to the grid, by direct (non-FFT) discrete convolution"""
    if s <= 0:
        raise DomainError(f"heat time must be positive (got s={s})")
    grid = nu.grid
    n = grid.n
    d = np.arange(-(n - 1), n) * grid.h
    kernel = np.exp(-d ** 2 / (2.0 * s)) / math.sqrt(2.0 * math.pi * s)
    out = np.convolve(nu.masses, kernel)[n - 1:2 * n - 1]
    return GridDensity(grid, np.clip(out, 0.0, None))


@dataclass(frozen=True, eq=False)
class HeatField:
    """u[k] = u_{T - t_k} (time to go), u[m] = phi; score[k] = d/dx u[k]"""

    time_grid: TimeGrid
    beta: float
    u: Tuple[GridFunction, ...]
    score: Tuple[GridFunction, ...]
    # min over interior nodes of u''[k] + kappa(t_k), negative means under-resolved
    semiconvexity_margin: np.ndarray
    warnings: Tuple[str, ...] = ()

    @property
    def phi(self) -> GridFunction:
        return self.u[-1]

    def h(self, k: int) -> np.ndarray:
        """Backward heat potential h_{t_k} = exp(u[k]) on the grid"""
        return np.exp(self.u[k].values)


def _semiconvexity_bound(k: int, time_grid: TimeGrid, beta: float) -> float:
    if k == time_grid.m:
        return beta
    return kappa(float(time_grid.nodes[k]), beta, time_grid.T)


def build_heat_field(phi: GridFunction, time_grid: TimeGrid, beta: float, banded: bool = True,
                     workers: Optional[int] = None) -> HeatField:
    """Log heat flow of phi at every time node, with scores and the semiconvexity certificate"""
    T = time_grid.T
    times_to_go = [T - float(t) for t in time_grid.nodes[:-1]]

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            u: List[GridFunction] = list(pool.map(lambda s: log_heat_convolve(phi, s, banded), times_to_go))
    else:
        u = [log_heat_convolve(phi, s, banded) for s in times_to_go]
    u.append(phi)

    score = tuple(f.derivative() for f in u)

    margins = np.empty(len(u))
    warnings: List[str] = []
    for k, f in enumerate(u):
        bound = _semiconvexity_bound(k, time_grid, beta)
        tol = 1e-6 * (1.0 + float(np.max(np.abs(f.values))))
        margins[k] = float(np.min(f.second_derivative().values[1:-1])) + bound
        if margins[k] < -tol:
            msg = (f"semiconvexity certificate fails at t={time_grid.nodes[k]:.6g}: "
                   f"min u'' + kappa = {margins[k]:.3e} (tolerance {tol:.1e}); grid under-resolved")
            warnings.append(msg)
            logger.warning(msg)

    return HeatField(
        time_grid=time_grid,
        beta=beta,
        u=tuple(u),
        score=score,
        semiconvexity_margin=margins,
        warnings=tuple(warnings),
    )


def backward_heat_residual(field: HeatField) -> np.ndarray:
    """sup over interior nodes of |d_t h + h''/2| at interior time nodes, h = exp(u)"""
    tg = field.time_grid
    h_x = field.u[0].grid.h
    out = np.zeros(tg.m + 1)
    for k in range(1, tg.m):
        dt_h = (field.h(k + 1) - field.h(k - 1)) / (2.0 * tg.dt)
        hk = field.h(k)
        lap = (hk[2:] - 2.0 * hk[1:-1] + hk[:-2]) / h_x ** 2
        out[k] = float(np.max(np.abs(dt_h[1:-1] + 0.5 * lap)))
    return out
