"""
Quadratic inf-convolution
Moreau transforms T_beta^+ / T_beta^-, argmin maps, beta-convexity test and projection.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .measures import Grid, GridFunction

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MoreauResult:
    envelope: GridFunction
    argmin: GridFunction
    # eval nodes whose minimizer sits on the first or last node of the input grid
    clipped: np.ndarray


def _lower_envelope_index(y: np.ndarray, f: np.ndarray, beta: float, x: np.ndarray) -> np.ndarray:
    """Index of the lowest parabola f[j] + beta/2 (x - y[j])^2 at each sorted x"""
    a = (f + 0.5 * beta * y * y).tolist()
    ys = y.tolist()
    n = len(a)
    v = [0] * n
    z = [0.0] * (n + 1)
    z[0], z[1] = -np.inf, np.inf
    k = 0
    for q in range(1, n):
        s = (a[q] - a[v[k]]) / (beta * (ys[q] - ys[v[k]]))
        while s <= z[k]:
            k -= 1
            s = (a[q] - a[v[k]]) / (beta * (ys[q] - ys[v[k]]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    breaks = np.asarray(z[1:k + 1])
    owners = np.asarray(v[:k + 1])
    # ties go to the left parabola, i.e. the smallest y
    return owners[np.searchsorted(breaks, x, side="left")]


def moreau_plus(phi: GridFunction, beta: float, eval_grid: Optional[Grid] = None, refine: bool = True) -> MoreauResult:
    """T_beta^+[phi](x) = min_y phi(y) + beta/2 (x - y)^2 over the nodes of phi's grid"""
    if beta <= 0:
        raise ValueError(f"beta must be positive (got {beta})")
    grid = phi.grid
    eval_grid = eval_grid or grid
    y, f, x = grid.nodes, phi.values, eval_grid.nodes

    j = _lower_envelope_index(y, f, beta, x)
    value = f[j] + 0.5 * beta * (x - y[j]) ** 2
    argmin = y[j].copy()
    clipped = (j == 0) | (j == grid.n - 1)

    if refine:
        # three-node quadratic fit around the discrete argmin
        inner = ~clipped
        ji, xi = j[inner], x[inner]
        f0 = value[inner]
        fm = f[ji - 1] + 0.5 * beta * (xi - y[ji - 1]) ** 2
        fp = f[ji + 1] + 0.5 * beta * (xi - y[ji + 1]) ** 2
        curv = fp - 2.0 * f0 + fm
        ok = curv > 0
        safe = np.where(ok, curv, 1.0)
        # vertex offset in units of h; never leaves the half cells around the node
        t = np.where(ok, np.clip(0.5 * (fm - fp) / safe, -0.5, 0.5), 0.0)
        value[inner] = f0 + 0.5 * t * (fp - fm) + 0.5 * t * t * curv
        argmin[inner] = y[ji] + t * grid.h

    return MoreauResult(
        envelope=GridFunction(eval_grid, value),
        argmin=GridFunction(eval_grid, argmin),
        clipped=clipped,
    )


def moreau_minus(psi: GridFunction, beta: float, eval_grid: Optional[Grid] = None, refine: bool = True) -> MoreauResult:
    """T_beta^-[psi] = -T_beta^+[-psi]; argmin holds the maximizer"""
    result = moreau_plus(GridFunction(psi.grid, -psi.values), beta, eval_grid, refine)
    return MoreauResult(
        envelope=GridFunction(result.envelope.grid, -result.envelope.values),
        argmin=result.argmin,
        clipped=result.clipped,
    )


def beta_convex_project(phi: GridFunction, beta: float) -> GridFunction:
    """Largest beta-convex minorant: lower convex hull of phi + beta/2 y^2, minus beta/2 y^2"""
    if beta <= 0:
        raise ValueError(f"beta must be positive (got {beta})")
    y = phi.grid.nodes
    g = phi.values + 0.5 * beta * y * y
    ys, gs = y.tolist(), g.tolist()

    hull = []
    for i in range(len(ys)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (ys[b] - ys[a]) * (gs[i] - gs[a]) - (gs[b] - gs[a]) * (ys[i] - ys[a])
            if cross < 0:
                hull.pop()
            else:
                break
        hull.append(i)

    hull = np.asarray(hull)
    projected = np.interp(y, y[hull], g[hull]) - 0.5 * beta * y * y
    # never above the input; hull nodes keep their exact values
    projected = np.minimum(projected, phi.values)
    projected[hull] = phi.values[hull]
    return GridFunction(phi.grid, projected)


def second_difference(phi: GridFunction, beta: float = 0.0) -> np.ndarray:
    """Unscaled second difference of phi + beta/2 y^2 at interior nodes"""
    v = phi.values
    return v[2:] - 2.0 * v[1:-1] + v[:-2] + beta * phi.grid.h ** 2


def is_beta_convex(phi: GridFunction, beta: float, tol: float = 1e-9) -> bool:
    if tol < 0:
        raise ValueError(f"tolerance must be nonnegative (got {tol})")
    return bool(np.all(second_difference(phi, beta) >= -tol))
