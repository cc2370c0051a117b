#!/usr/bin/env python3
"""
Command line interface
solve, simulate, validate and sweep-beta; exit codes are the machine contract:
0 ok, 1 config or IO error, 2 nonconvergence, 3 degraded result, 4 failed sweep rows.
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import ValidationError

from .bridge import SbbSolution, assemble
from .config import GaussianSpec, RunConfig, SolverConfig, load_run_config, parse_beta_list
from .dual_solver import solve
from .errors import ConfigError, NonConvergenceError, SbbError, SolutionFormatError
from .measures import GridMeasure, build_grid, measure_from_spec
from .plots import write_sweep_html
from .primal_sim import MIN_PATHS_FOR_DUALITY, linear_coupling_bound, simulate, trajectory_frame
from .reference import gaussian_quadratic_oracle, sinkhorn_sb
from .solution_io import load_solution, read_summary, save_solution, timestamp, write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONCONVERGED = 2
EXIT_DEGRADED = 3
EXIT_SWEEP_FAILED = 4

BOUND_SLACK = 1e-6
SINKHORN_SLACK = 1e-4


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _marginals(run: RunConfig, cfg: SolverConfig) -> Tuple[GridMeasure, GridMeasure]:
    grid = build_grid(cfg, [run.mu0, run.muT])
    return measure_from_spec(run.mu0, grid), measure_from_spec(run.muT, grid)


def _solve(run: RunConfig, cfg: SolverConfig) -> SbbSolution:
    mu0, muT = _marginals(run, cfg)
    state = solve(mu0, muT, cfg)
    return assemble(state, cfg, mu0, muT)


def _bound_entry(sol: SbbSolution) -> Dict[str, Any]:
    bound = linear_coupling_bound(sol.mu0, sol.muT, sol.config)
    return {"linear_coupling_bound": bound, "bound_ok": sol.dual_value <= bound + BOUND_SLACK}


def cmd_solve(run: RunConfig) -> int:
    sol = _solve(run, run.solver)
    extra = _bound_entry(sol)
    save_solution(sol, run, run.out, extra)

    if not extra["bound_ok"]:
        logger.error(
            f"Dual value {sol.dual_value:.8g} exceeds the linear coupling bound {extra['linear_coupling_bound']:.8g}"
        )
        return EXIT_DEGRADED
    if not sol.state.converged:
        return EXIT_NONCONVERGED
    if sol.degraded:
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_simulate(run: RunConfig) -> int:
    sol, _ = load_solution(run.out)
    seed = run.solver.seed
    report = simulate(sol, run.paths, seed, run.duality_rel_budget)
    payload = {"timestamp": timestamp(), "config": run.echo(), "report": report.model_dump(mode="json")}
    write_json(payload, Path(run.out) / "simulation.json")

    if run.emit_paths:
        write_csv(trajectory_frame(sol, run.paths, seed), Path(run.out) / "paths.csv")

    if report.duality_ok is False:
        logger.error(
            f"Strong duality check failed: gap {report.duality_gap:.4g} exceeds budget {report.duality_budget:.4g}"
        )
        return EXIT_DEGRADED
    return EXIT_OK


def _check(name: str, value: Optional[float], threshold: Optional[float], passed: bool) -> Dict[str, Any]:
    return {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}


def cmd_validate(run: RunConfig) -> int:
    cfg = run.solver
    sol = _solve(run, cfg)
    bound = _bound_entry(sol)
    save_solution(sol, run, run.out, bound)

    r = sol.residuals
    checks: List[Dict[str, Any]] = [
        _check("sbb_system_T", r["sbb_system_T"], 1e-4, r["sbb_system_T"] <= 1e-4),
        _check("sbb_system_0", r["sbb_system_0"], 1e-3, r["sbb_system_0"] <= 1e-3),
        _check("linear_coupling_bound", sol.dual_value, bound["linear_coupling_bound"] + BOUND_SLACK, bound["bound_ok"]),
        _check("envelope_identity", r["envelope_identity"], 1e-5, "envelope_identity" not in sol.degraded),
        _check("hessian_band", max(r["hessian_band_lower"], r["hessian_band_upper"]), 0.0, "hessian_band" not in sol.degraded),
        _check("inverse_relation", r["inverse_relation"], 1e-4, "inverse_relation" not in sol.degraded),
        _check("semiconvexity", r["semiconvexity_margin"], None, "semiconvexity" not in sol.degraded),
        _check("x_map_monotone", r["x_map_min_step"], 0.0, "x_map_monotone" not in sol.degraded),
    ]

    report = simulate(sol, run.paths, cfg.seed, run.duality_rel_budget)
    if run.paths >= MIN_PATHS_FOR_DUALITY:
        checks.append(_check("strong_duality", report.duality_gap, report.duality_budget, bool(report.duality_ok)))

    sinkhorn = sinkhorn_sb(sol.mu0, sol.muT, cfg.T)
    checks.append(_check("below_schroedinger_bridge", sol.dual_value, sinkhorn.value + SINKHORN_SLACK,
                         sol.dual_value <= sinkhorn.value + SINKHORN_SLACK))

    oracle = None
    if isinstance(run.mu0, GaussianSpec) and isinstance(run.muT, GaussianSpec):
        oracle = gaussian_quadratic_oracle(run.mu0, run.muT, cfg)
        checks.append(_check("above_quadratic_oracle", sol.dual_value, oracle.value - 1e-3,
                             sol.dual_value >= oracle.value - 1e-3))

    passed = all(c["passed"] for c in checks)
    payload = {
        "timestamp": timestamp(),
        "config": run.echo(),
        "dual_value": sol.dual_value,
        "sinkhorn_value": sinkhorn.value,
        "quadratic_oracle": None if oracle is None else {"value": oracle.value, "p": oracle.p, "q": oracle.q},
        "simulation": report.model_dump(mode="json"),
        "checks": checks,
        "passed": passed,
    }
    write_json(payload, Path(run.out) / "validation.json")

    for c in checks:
        if not c["passed"]:
            logger.error(f"Validation check failed: {c['name']} = {c['value']} (threshold {c['threshold']})")
    return EXIT_OK if passed else EXIT_DEGRADED


def _sweep_configs(run: RunConfig) -> List[SolverConfig]:
    if not run.sweep:
        raise ConfigError("sweep-beta needs a non-empty beta list (--beta or 'sweep' in the config)")
    base = run.solver.model_dump()
    configs = []
    for point in run.sweep:
        data = {**base, "beta": point.beta, "T": point.T if point.T is not None else base["T"]}
        try:
            configs.append(SolverConfig.model_validate(data))
        except ValidationError as e:
            raise ConfigError(f"invalid sweep point beta={point.beta:g}: {e}")
    return configs


def sweep_row(run: RunConfig, cfg: SolverConfig) -> Dict[str, Any]:
    """One (beta, T) point of the sweep; failures become a failed row"""
    row: Dict[str, Any] = {"beta": cfg.beta, "T": cfg.T, "status": "ok", "error": ""}
    try:
        sol = _solve(run, cfg)
        report = simulate(sol, run.paths, cfg.seed, run.duality_rel_budget)
        row.update({
            "dual_value": sol.dual_value,
            "primal_cost": report.primal_cost_mean,
            "primal_cost_stderr": report.primal_cost_stderr,
            "drift_energy": report.drift_energy,
            "diffusion_energy": report.diffusion_energy,
            "martingale_slope": report.martingale_slope,
            "lagrangian_cost": sol.lagrangian_cost,
            "degraded": ";".join(sol.degraded),
        })
        if run.sinkhorn:
            row["sinkhorn_value"] = sinkhorn_sb(sol.mu0, sol.muT, cfg.T).value
    except (SbbError, ValueError) as e:
        logger.error(f"Sweep row beta={cfg.beta:g}, T={cfg.T:g} failed: {e}")
        row.update({"status": "failed", "error": str(e)})
    return row


SWEEP_COLUMNS = [
    "beta", "T", "status", "dual_value", "primal_cost", "primal_cost_stderr", "drift_energy",
    "diffusion_energy", "martingale_slope", "lagrangian_cost", "sinkhorn_value", "degraded", "error",
]


def cmd_sweep_beta(run: RunConfig) -> int:
    configs = _sweep_configs(run)
    if run.workers > 1:
        with ProcessPoolExecutor(max_workers=run.workers) as pool:
            rows = list(pool.map(sweep_row, [run] * len(configs), configs))
    else:
        rows = [sweep_row(run, cfg) for cfg in configs]

    table = pd.DataFrame(rows).reindex(columns=SWEEP_COLUMNS)
    out = Path(run.out)
    write_csv(table, out / "sweep.csv")
    write_json({"timestamp": timestamp(), "config": run.echo(), "rows": table.to_dict(orient="records")},
               out / "sweep.json")
    if (table["status"] == "ok").any():
        write_sweep_html(table, out / "sweep.html")

    failed = int((table["status"] != "ok").sum())
    if failed:
        logger.error(f"{failed} of {len(table)} sweep rows failed")
        return EXIT_SWEEP_FAILED
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "sweep-beta": cmd_sweep_beta,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbb-bridge", description="Schroedinger-Bridge-Bass transport solver")
    parser.add_argument("command", choices=sorted(COMMANDS), help="What to run")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--out", help="Output directory (solution directory for simulate)")
    parser.add_argument("--paths", type=int, help="Monte-Carlo paths")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--beta", help="beta value, or comma list of b or b:T items for sweep-beta")
    parser.add_argument("--emit-paths", action="store_true", default=None, help="Dump up to 1000 trajectories")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = {
        "command": args.command,
        "out": args.out,
        "paths": args.paths,
        "seed": args.seed,
        "emit_paths": args.emit_paths,
    }
    if args.beta is not None:
        points = parse_beta_list(args.beta)
        if args.command == "sweep-beta":
            overrides["sweep"] = points
        elif len(points) == 1:
            overrides.update(points[0])
        else:
            raise ConfigError(f"{args.command} takes a single beta (got {args.beta!r})")

    base = None
    if args.command == "simulate" and args.config is None:
        if args.out is None:
            raise ConfigError("simulate needs --out pointing at a solution directory")
        base = read_summary(args.out)["config"]
    return load_run_config(args.config, overrides, base=base)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    try:
        run = resolve_config(args)
        logger.info(f"Running {run.command} (beta={run.solver.beta:g}, T={run.solver.T:g}, out={run.out})")
        return COMMANDS[run.command](run)
    except (ConfigError, SolutionFormatError) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except NonConvergenceError as e:
        logger.error(f"{e} (last residuals: {e.residual_history[-5:]})")
        return EXIT_NONCONVERGED
    except SbbError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
