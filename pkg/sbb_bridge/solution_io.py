"""
Solution directories
Field CSVs (t,x,value), measure CSVs (x,density) and the JSON summary, all written atomically.
"""

import json
import logging
import math
import os
import tempfile
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .bridge import SbbSolution, assemble
from .config import RunConfig
from .dual_solver import evaluate_state
from .errors import ConfigError, SbbError, SolutionFormatError
from .measures import Grid, GridDensity, GridFunction, GridMeasure, measure_frame

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
SUMMARY_FILE = "summary.json"
FIELD_FILES = ("u", "v", "score", "y_map", "x_map", "marginals")
MEASURE_FILES = ("mu0", "muT", "nu0", "nuT", "m0", "mT")

PathLike = Union[str, Path]


def atomic_write(path: Path, write) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def write_csv(df: pd.DataFrame, path: PathLike) -> Path:
    return atomic_write(Path(path), lambda tmp: df.to_csv(tmp, index=False, float_format=FLOAT_FORMAT))


def json_safe(value: Any) -> Any:
    """Non-finite floats become null; numpy scalars become Python numbers"""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    text = json.dumps(json_safe(payload), indent=2, sort_keys=True)

    def write(tmp):
        with open(tmp, "w") as fh:
            fh.write(text + "\n")

    return atomic_write(Path(path), write)


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def field_frame(times: Sequence[float], fields: Sequence[Union[GridFunction, GridDensity]]) -> pd.DataFrame:
    """Long format: one row per (t, x)"""
    grid = fields[0].grid
    values = np.stack([f.values if isinstance(f, GridFunction) else f.density for f in fields])
    return pd.DataFrame({
        "t": np.repeat(np.asarray(times, dtype=float), grid.n),
        "x": np.tile(grid.nodes, len(fields)),
        "value": values.ravel(),
    })


def solution_summary(sol: SbbSolution, run: RunConfig) -> Dict[str, Any]:
    grid = sol.grid
    return {
        "timestamp": timestamp(),
        "config": run.echo(),
        "grid": {"x_min": grid.x_min, "x_max": grid.x_max, "n": grid.n},
        "dual_value": sol.dual_value,
        "converged": sol.state.converged,
        "iterations": sol.state.iteration,
        "residual": sol.state.residual,
        "residual_history": sol.state.residual_history,
        "lagrangian_cost": sol.lagrangian_cost,
        "residuals": sol.residuals,
        "degraded": list(sol.degraded),
        "warnings": list(sol.heat.warnings),
    }


def save_solution(sol: SbbSolution, run: RunConfig, out_dir: PathLike,
                  extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Write every field and measure of sol plus summary.json; returns the summary"""
    out = Path(out_dir)
    times = sol.time_grid.nodes

    write_csv(pd.DataFrame({"x": sol.grid.nodes, "value": sol.phi_hat.values}), out / "phi_hat.csv")
    measures = {"mu0": sol.mu0, "muT": sol.muT, "nu0": sol.nu0, "nuT": sol.nuT, "m0": sol.m0, "mT": sol.mT}
    for name in MEASURE_FILES:
        write_csv(measure_frame(measures[name]), out / f"{name}.csv")

    fields = {
        "u": sol.heat.u,
        "v": sol.v,
        "score": sol.heat.score,
        "y_map": sol.y_maps,
        "x_map": sol.x_maps,
        "marginals": sol.marginals,
    }
    for name in FIELD_FILES:
        write_csv(field_frame(times, fields[name]), out / f"{name}.csv")

    summary = solution_summary(sol, run)
    summary.update(extra or {})
    write_json(summary, out / SUMMARY_FILE)
    logger.info(f"Solution written to {out}")
    return summary


def _read_csv(path: Path, columns: Tuple[str, ...]) -> pd.DataFrame:
    if not path.is_file():
        raise SolutionFormatError(f"solution file missing: {path}")
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise SolutionFormatError(f"cannot parse {path}: {e}")
    if tuple(df.columns) != columns:
        raise SolutionFormatError(f"{path} must have columns {','.join(columns)} (got {list(df.columns)})")
    return df


def read_summary(out_dir: PathLike) -> Dict[str, Any]:
    path = Path(out_dir) / SUMMARY_FILE
    if not path.is_file():
        raise SolutionFormatError(f"solution summary missing: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SolutionFormatError(f"solution summary is not valid JSON: {path}: {e}")


def load_solution(out_dir: PathLike, workers: Optional[int] = None) -> Tuple[SbbSolution, RunConfig]:
    """Rebuild the solution from phi_hat and the marginals stored in a solution directory"""
    out = Path(out_dir)
    summary = read_summary(out)
    try:
        run = RunConfig.model_validate(summary["config"])
        grid = Grid(float(summary["grid"]["x_min"]), float(summary["grid"]["x_max"]), int(summary["grid"]["n"]))
        stored_value = float(summary["dual_value"])
        converged = bool(summary["converged"])
        iterations = int(summary["iterations"])
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise SolutionFormatError(f"solution summary in {out} is incomplete: {e}")

    for name in FIELD_FILES + MEASURE_FILES:
        if not (out / f"{name}.csv").is_file():
            raise SolutionFormatError(f"solution file missing: {out / f'{name}.csv'}")

    phi_df = _read_csv(out / "phi_hat.csv", ("x", "value"))
    mu0_df = _read_csv(out / "mu0.csv", ("x", "density"))
    muT_df = _read_csv(out / "muT.csv", ("x", "density"))
    if not (len(phi_df) == len(mu0_df) == len(muT_df) == grid.n):
        raise SolutionFormatError(f"solution files in {out} do not match the stored grid of {grid.n} nodes")

    try:
        phi = GridFunction(grid, phi_df["value"].to_numpy(dtype=float))
        mu0 = GridMeasure.from_density(grid, mu0_df["density"].to_numpy(dtype=float))
        muT = GridMeasure.from_density(grid, muT_df["density"].to_numpy(dtype=float))
        state = evaluate_state(phi, mu0, muT, run.solver, iteration=iterations)
    except (ValueError, SbbError) as e:
        raise SolutionFormatError(f"cannot rebuild the solution in {out}: {e}")

    if not math.isclose(state.objective, stored_value, rel_tol=1e-9, abs_tol=1e-12):
        raise SolutionFormatError(
            f"solution in {out} is inconsistent: stored dual value {stored_value!r}, rebuilt {state.objective!r}"
        )
    state = replace(state, converged=converged)
    return assemble(state, run.solver, mu0, muT, workers=workers), run
