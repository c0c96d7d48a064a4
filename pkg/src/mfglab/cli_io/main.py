"""Command-line entry point: static / ergodic / evolve / sweep / validate.

All numeric parameters live in the config file; flags only pick the
subcommand, the config path, the output directory, and verbosity.  Exit
codes: 0 success (possibly with warnings), 2 config error, 3 solver error,
4 assumption violation found by `validate`.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..asymptotics import (
    SweepParams,
    bounded_ratio,
    nonincreasing_with_slack,
    run_sweep,
    semilimit_surrogates,
    singleton_limit_check,
    stable_within,
)
from ..cost_models import validate_assumptions
from ..eikonal_ergodic import build_ergodic_triple, converse_check
from ..errors import ConfigError, MfgError
from ..finite_horizon import solve_mfg
from ..static_game import solve_static
from .config import (
    ExperimentConfig,
    build_cost,
    build_grid,
    build_initial_measure,
    make_damping,
    parse_config,
)
from .formats import (
    read_measure_csv,
    write_csv,
    write_field_csv,
    write_json,
    write_measure_csv,
    write_path_jsonl,
)

LOG = logging.getLogger("mfglab.cli")

COMMANDS = ("static", "ergodic", "evolve", "sweep", "validate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfglab",
        description=(
            "Solvers and long-horizon experiments for deterministic "
            "first-order mean field games with non-monotone costs."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "static": "solve the static equilibrium by damped best response",
        "ergodic": "build and check the ergodic triple seeded by a static measure",
        "evolve": "solve the finite-horizon game by HJB/transport fixed point",
        "sweep": "run the horizon sweep and its long-time limit metrics",
        "validate": "run the structural assumption diagnostics for a model",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("config", help="experiment config file (YAML)")
        sp.add_argument(
            "--output-dir",
            default=None,
            help="directory for output artifacts (default: current directory)",
        )
        sp.add_argument(
            "-v",
            "--verbose",
            action="count",
            default=0,
            help="increase log verbosity (-v info, -vv debug)",
        )
    return parser


def _setup_logging(verbosity: int):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def _run_static(cfg: ExperimentConfig, out: Path) -> int:
    grid = build_grid(cfg)
    F = build_cost(cfg, grid)
    m0 = build_initial_measure(cfg, grid, F)
    sc = cfg.data["static"]
    result = solve_static(
        F,
        grid,
        m0,
        damping_schedule=make_damping(sc["damping"]),
        tol=sc["tol"],
        max_iter=sc["max_iter"],
        eps_min=sc["eps_min"],
        br_mode=sc["br_mode"],
        w1_size_cap=sc["w1_size_cap"],
    )
    sha, seed = cfg.sha256, cfg.seed
    write_csv(
        out / "static_iterates.csv",
        "static",
        sha,
        seed,
        ["iteration", "residual", "d1_step"],
        result.history,
    )
    write_measure_csv(out / "static_measure.csv", result.measure, "static", sha, seed)
    write_json(
        out / "static_summary.json",
        {
            "converged": result.converged,
            "residual": result.residual,
            "iterations": result.iterations,
            "support_size": result.measure.size,
        },
        "static",
        sha,
        seed,
    )
    if not result.converged:
        LOG.warning(
            "static solve stopped at residual %.3e without reaching tol %.3e",
            result.residual,
            sc["tol"],
        )
    return 0


def _run_ergodic(cfg: ExperimentConfig, out: Path) -> int:
    grid = build_grid(cfg)
    F = build_cost(cfg, grid)
    ec = cfg.data["ergodic"]
    if ec["measure_file"] is not None:
        m = read_measure_csv(cfg.resolve(ec["measure_file"]))
    else:
        m = build_initial_measure(cfg, grid, F)
    triple = build_ergodic_triple(
        F,
        m,
        grid,
        static_tol=ec["static_tol"],
        eps_min=ec["eps_min"],
        sweep_tol=ec["sweep_tol"],
        max_sweeps=ec["max_sweeps"],
    )
    converse = converse_check(F, triple, grid, eps_min=ec["eps_min"])
    sha, seed = cfg.sha256, cfg.seed
    write_field_csv(out / "ergodic_value.csv", grid, triple.v, "v", "ergodic", sha, seed)
    write_json(
        out / "ergodic_summary.json",
        {
            "c": triple.c,
            "residuals": triple.residuals,
            "boundary_monotone": triple.boundary_monotone,
            "dirichlet_points": triple.dirichlet.points,
            "converse": converse,
        },
        "ergodic",
        sha,
        seed,
    )
    if not converse["passed"]:
        LOG.warning("converse check failed: %s", converse)
    return 0


def _run_evolve(cfg: ExperimentConfig, out: Path) -> int:
    grid = build_grid(cfg)
    F = build_cost(cfg, grid)
    m0 = build_initial_measure(cfg, grid, F)
    ev = cfg.data["evolve"]
    eq = solve_mfg(
        F,
        m0,
        ev["T"],
        grid,
        ev["dt"],
        damping_schedule=make_damping(ev["damping"]),
        tol=ev["tol"],
        max_iter=ev["max_iter"],
        control_radius=ev["control_radius"],
        control_mesh=ev["control_mesh"],
        path_cap=ev["path_cap"],
        w1_size_cap=ev["w1_size_cap"],
        seed=cfg.seed,
    )
    sha, seed = cfg.sha256, cfg.seed
    write_csv(
        out / "evolve_trace.csv",
        "evolve",
        sha,
        seed,
        ["iteration", "br_residual", "step_residual"],
        eq.trace,
    )
    snap_rows = []
    for k in eq.checkpoints:
        t = eq.value.times[int(k)]
        u = eq.value.values[int(k)].ravel()
        for i in range(grid.n_nodes):
            snap_rows.append((t, *grid.nodes[i], u[i]))
    coord_cols = [f"x{i + 1}" for i in range(grid.dim)]
    write_csv(
        out / "evolve_u_checkpoints.csv",
        "evolve",
        sha,
        seed,
        ["t", *coord_cols, "u"],
        snap_rows,
    )
    write_path_jsonl(out / "evolve_path.jsonl", eq.flow_path, "evolve", sha, seed)
    stats = eq.trajectory_stats
    write_csv(
        out / "evolve_stats.csv",
        "evolve",
        sha,
        seed,
        ["particle", "sup_position", "sup_speed"],
        ((i, stats.sup_position[i], stats.sup_speed[i]) for i in range(stats.sup_position.size)),
    )
    from ..finite_horizon import a_priori_report

    write_json(
        out / "evolve_summary.json",
        {
            "converged": eq.converged,
            "iterations": eq.iterations,
            "br_residual": eq.br_residual,
            "fixed_point_residual": eq.fixed_point_residual,
            "chi_hat": stats.chi_hat,
            "chi_prime_hat": stats.chi_prime_hat,
            "r1_hat": stats.r1_hat,
            "checkpoints": eq.checkpoints,
            "a_priori": a_priori_report(eq.value, F),
        },
        "evolve",
        sha,
        seed,
    )
    if not eq.converged:
        LOG.warning(
            "fixed point stopped at best-response residual %.3e without reaching tol %.3e",
            eq.br_residual,
            ev["tol"],
        )
    return 0


def _run_sweep(cfg: ExperimentConfig, out: Path) -> int:
    grid = build_grid(cfg)
    F = build_cost(cfg, grid)
    m0 = build_initial_measure(cfg, grid, F)
    sw = cfg.data["sweep"]
    params = SweepParams(
        mode=sw["mode"],
        n_steps=sw["n_steps"],
        dt=sw["dt"],
        s_grid=tuple(sw["s_grid"]),
        R=sw["R"],
        delta_occ=sw["delta_occ"],
        tol=sw["tol"],
        max_iter=sw["max_iter"],
        control_radius=sw["control_radius"],
        control_mesh=sw["control_mesh"],
        path_cap=sw["path_cap"],
        w1_size_cap=sw["w1_size_cap"],
        eps_min=sw["eps_min"],
        seed=cfg.seed,
    )
    records = run_sweep(F, m0, sw["T_list"], grid, params)
    sha, seed = cfg.sha256, cfg.seed

    rows = []
    for r in records:
        for j, s in enumerate(r.s_grid):
            rows.append(
                (
                    r.T,
                    r.dt,
                    r.n_steps,
                    s,
                    r.s_times[j],
                    r.support_dist[j],
                    r.d1_to_limit[j],
                    r.value_rate_err[j],
                    r.T * r.value_rate_err[j],
                    r.wkam_err[j],
                    r.chi_hat,
                    r.chi_prime_hat,
                    r.r1_hat,
                    float(r.rho.max()),
                    r.occ_bound,
                    r.a_priori["grad_max"],
                    r.iterations,
                    r.converged,
                    r.tainted,
                    r.estimated,
                    r.c_star_used,
                )
            )
    write_csv(
        out / "sweep_records.csv",
        "sweep",
        sha,
        seed,
        [
            "T",
            "dt",
            "n_steps",
            "s",
            "t",
            "support_dist",
            "d1_to_limit",
            "value_rate_err",
            "value_rate_err_times_T",
            "wkam_err",
            "chi_hat",
            "chi_prime_hat",
            "r1_hat",
            "rho_max",
            "occ_bound",
            "grad_max",
            "iterations",
            "converged",
            "tainted",
            "estimated",
            "c_star",
        ],
        rows,
    )

    s_grid = records[0].s_grid
    slack, atol = sw["slack"], sw["atol"]
    tail = [j for j, s in enumerate(s_grid) if s >= 0.25]
    support_decay_ok = all(
        nonincreasing_with_slack([r.support_dist[j] for r in records], slack, atol)
        for j in tail
    )
    last = records[-1]
    support_final = float(last.support_dist[-1])
    rate_values = [r.T * float(r.value_rate_err.max()) for r in records]
    rate_ratio = bounded_ratio(rate_values)
    summary = {
        "T_list": [r.T for r in records],
        "s_grid": s_grid,
        "estimated_limit": bool(records[0].estimated),
        "c_star": records[0].c_star_used,
        "tainted_any": any(r.tainted for r in records),
        "support_decay_ok": support_decay_ok,
        "support_final": support_final,
        "support_final_ok": support_final <= sw["support_cap"],
        "value_rate_times_T": rate_values,
        "value_rate_ratio": rate_ratio,
        "value_rate_ok": rate_ratio <= sw["rate_ratio_cap"],
        "chi_hat_stable": stable_within([r.chi_hat for r in records]),
        "chi_prime_hat_stable": stable_within([r.chi_prime_hat for r in records]),
        "r1_hat_stable": stable_within([r.r1_hat for r in records], atol=grid.max_spacing),
        "occ_bound_max": float(np.nanmax([r.occ_bound for r in records])),
    }
    if records[0].argmin_points.shape[0] == 1:
        try:
            report = singleton_limit_check(
                F,
                records,
                records[0].argmin_points[0],
                grid,
                wkam_cap=sw["wkam_cap"],
                slack=slack,
                atol=atol,
            )
        except (ValueError, MfgError) as exc:
            LOG.warning("singleton limit check unavailable: %s", exc)
            report = None
        if report is not None:
            summary["singleton"] = {
                "d1_table": report["d1_table"],
                "wkam_table": report["wkam_table"],
                "wkam_final": report["wkam_final"],
                "passed": report["passed"],
            }
    if len(records) >= 3:
        _, _, gaps = semilimit_surrogates(records, F, grid)
        summary["semilimit_gaps"] = gaps
        summary["semilimit_gap_max"] = float(gaps.max())
        summary["semilimit_ok"] = float(gaps.max()) <= sw["semilimit_tol"]

    checks = [v for k, v in summary.items() if k.endswith("_ok") or k.endswith("_stable")]
    if "singleton" in summary:
        checks.append(summary["singleton"]["passed"])
    summary["passed"] = bool(all(checks)) and not summary["tainted_any"]
    write_json(out / "sweep_summary.json", summary, "sweep", sha, seed)
    for r in records:
        if r.tainted:
            LOG.warning(
                "horizon T=%g did not reach the fixed-point tolerance "
                "(best-response residual %.3e)",
                r.T,
                r.br_residual,
            )
    return 0


def _run_validate(cfg: ExperimentConfig, out: Path) -> int:
    grid = build_grid(cfg)
    F = build_cost(cfg, grid)
    vc = cfg.data["validate"]
    report = validate_assumptions(
        F,
        grid,
        seed=cfg.seed,
        n_random=vc["n_random"],
        lipschitz_slack=vc["lipschitz_slack"],
    )
    write_json(out / "validate_report.json", report, "validate", cfg.sha256, cfg.seed)
    print(f"model: {report['model']} (dim {F.dim})")
    for key, value in sorted(report["metrics"].items()):
        print(f"  {key}: {value}")
    for violation in report["violations"]:
        print(f"violation: {violation}")
    if report["violations"]:
        print(f"validation: FAIL ({len(report['violations'])} violations)")
        return 4
    print("validation: PASS")
    return 0


_RUNNERS = {
    "static": _run_static,
    "ergodic": _run_ergodic,
    "evolve": _run_evolve,
    "sweep": _run_sweep,
    "validate": _run_validate,
}


def run(command: str, cfg: ExperimentConfig, output_dir) -> int:
    """Programmatic dispatch used by the CLI and by tests."""
    if command not in _RUNNERS:
        raise ConfigError(f"unknown subcommand {command!r}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[command](cfg, out)


def entrypoint(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = parse_config(args.config)
        return run(args.command, cfg, args.output_dir or Path.cwd())
    except ConfigError as exc:
        LOG.error("config error: %s", exc)
        return 2
    except MfgError as exc:
        LOG.error("solver error: %s", exc)
        return 3


def main():
    sys.exit(entrypoint())


if __name__ == "__main__":
    main()
