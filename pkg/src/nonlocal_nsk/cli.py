"""Command line entry point: ``nonlocal-nsk <subcommand> [options]``.

Subcommands: simulate, sweep-alpha, sweep-kappa, picard, check-ops.  Exit
status is 0 when every check is within tolerance, 1 on failed checks or
solver errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, _validate, load_config
from .dynamics import CFLStep, FixedStep, PhysParams, PressureSolveError, make_state, simulate
from .experiments import (
    SweepConfig,
    default_initial_state,
    energy_report,
    fit_rate,
    max_principle_report,
    operator_checks,
    sweep_alpha,
    sweep_kappa,
)
from .fields_io import FieldFormatError, read_field, write_csv, write_field, write_json
from .picard import eta_consistency, picard_solve
from .spectral import make_grid

logger = logging.getLogger("nonlocal_nsk")

OUTPUT_ENV = "NSK_OUTPUT_DIR"


def _output_dir(arg: str | None, default_name: str) -> Path:
    if arg:
        path = Path(arg)
    else:
        path = Path(os.environ.get(OUTPUT_ENV, "nsk_runs")) / default_name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(out: Path, command: str, config: dict, summaries: dict, status: int, started: float):
    write_json(
        out / "manifest.json",
        {
            "command": command,
            "config": config,
            "version": __version__,
            "wall_clock_seconds": time.perf_counter() - started,
            "summaries": summaries,
            "exit_status": status,
        },
    )


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonlocal-nsk", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--n", type=int, default=None)
        sp.add_argument("--dim", type=int, default=None)
        sp.add_argument("--kappa", type=float, default=None)
        sp.add_argument("--alpha", type=float, default=None)
        sp.add_argument("--t-end", type=float, default=None)
        sp.add_argument("--frames", type=int, default=None)
        sp.add_argument("--output-dir", default=None)

    sp = sub.add_parser("simulate", help="run one system and write frames + energy report")
    sp.add_argument("--config", default=None, help="flat TOML run configuration")
    sp.add_argument("--system", default=None)
    common(sp)

    sp = sub.add_parser("sweep-alpha", help="relaxed vs local system over alpha")
    common(sp)
    sp.add_argument("--alphas", type=float, nargs="+", default=[8, 16, 32, 64])
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("sweep-kappa", help="relaxed vs Navier-Stokes over kappa")
    common(sp)
    sp.add_argument("--kappas", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125])
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("picard", help="linearized iteration and contraction report")
    common(sp)
    sp.add_argument("--T", type=float, default=0.05)
    sp.add_argument("--tol", type=float, default=1e-20)
    sp.add_argument("--max-iter", type=int, default=30)

    sp = sub.add_parser("check-ops", help="randomised k_alpha operator inequalities")
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--dim", type=int, default=2)
    sp.add_argument("--alpha", type=float, default=8.0)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output-dir", default=None)
    return p


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig(system="RelaxedINSK", n=128)
    overrides = {
        "system": args.system,
        "n": args.n,
        "dim": args.dim,
        "kappa": args.kappa,
        "alpha": args.alpha,
        "t_end": args.t_end,
        "n_frames": args.frames,
        "output_dir": args.output_dir,
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def _sweep_config(args, **defaults) -> SweepConfig:
    cfg = SweepConfig(**defaults)
    overrides = {
        "n": args.n,
        "dim": args.dim,
        "kappa": args.kappa,
        "alpha": args.alpha,
        "t_end": args.t_end,
        "n_frames": args.frames,
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def _cmd_simulate(args, started) -> int:
    cfg = _run_config(args)
    _validate(cfg)
    grid = make_grid(cfg.dim, cfg.n, cfg.length)
    if cfg.init == "files":
        rho = read_field(cfg.rho_file)
        u = [read_field(p) for p in cfg.u_files]
        if rho.grid != grid or any(c.grid != grid for c in u):
            raise FieldFormatError("initial field files do not match the configured grid")
        init = make_state(grid, rho.values, np.stack([c.values for c in u]))
    else:
        init = default_initial_state(grid, cfg.rho_bar, cfg.amplitude)
    params = PhysParams(kappa=cfg.kappa, alpha=cfg.alpha, rho_bar=cfg.rho_bar, system=cfg.system)
    policy = FixedStep(cfg.dt) if cfg.dt_policy == "fixed" else CFLStep(cfg.safety)
    out = _output_dir(cfg.output_dir, "simulate")
    traj = simulate(init, params, cfg.t_end, policy, n_frames=cfg.n_frames)
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    for i, fr in enumerate(traj.frames):
        write_field(fr.rho, frames_dir / f"rho_{i:04d}.nskf")
        for j, c in enumerate(fr.u):
            write_field(c, frames_dir / f"u{j}_{i:04d}.nskf")
    rep = energy_report(traj, params)
    write_csv(
        out / "energy.csv",
        ["time", "energy", "dissipation", "residual"],
        zip(rep.times, rep.energy, rep.dissipation, rep.residual),
    )
    mp = max_principle_report(traj)
    status = 1 if traj.blew_up else 0
    summaries = {
        "frames": len(traj.frames),
        "steps": traj.steps,
        "blew_up": traj.blew_up,
        "message": traj.message,
        "energy_max_relative_residual": rep.max_relative_residual,
        "rho_min": mp.rho_min,
        "rho_max": mp.rho_max,
        "overshoot": mp.overshoot,
    }
    _manifest(out, "simulate", cfg.to_dict(), summaries, status, started)
    print(f"simulate: {len(traj.frames)} frames, {traj.steps} steps -> {out}")
    return status


def _cmd_sweep(args, started, which: str) -> int:
    if which == "alpha":
        values = args.alphas
        cfg = _sweep_config(args)
        if len(values) < 2:
            raise _UsageError("sweep-alpha needs at least two --alphas values")
        table = sweep_alpha(cfg, values, workers=args.workers)
        names = ["rho_err_l0", "u_err_l0", "rho_err_l1", "u_err_l1", "rho_err_l2", "u_err_l2"]
    else:
        values = args.kappas
        cfg = _sweep_config(args)
        if len(values) < 2:
            raise _UsageError("sweep-kappa needs at least two --kappas values")
        table = sweep_kappa(cfg, values, workers=args.workers)
        names = ["rho_err_h3", "u_err_h3"]
    out = _output_dir(args.output_dir, f"sweep-{which}")
    rows = [[v] + [table.columns[c][i] for c in names] for i, v in enumerate(table.values)]
    write_csv(out / "convergence.csv", ["parameter"] + names, rows)
    fits = {}
    for c in names:
        try:
            f = fit_rate(table, c)
            fits[c] = {"slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared}
        except ValueError as exc:
            fits[c] = {"error": str(exc)}
    write_json(out / "rate_fit.json", {"parameter": table.parameter, "fits": fits})
    status = 0 if all(table.valid) else 1
    _manifest(
        out, f"sweep-{which}", {**vars(cfg), "values": list(values)},
        {"reference": table.reference, "valid": table.valid}, status, started,
    )
    for c, f in fits.items():
        print(f"{c}: " + (f"slope {f['slope']:.4f}" if "slope" in f else f["error"]))
    return status


def _cmd_picard(args, started) -> int:
    cfg = _sweep_config(args)
    init = default_initial_state(cfg.grid, cfg.rho_bar, cfg.amplitude)
    params = cfg.params()
    it, rep = picard_solve(init, params, args.T, tol=args.tol, max_iter=args.max_iter)
    out = _output_dir(args.output_dir, "picard")
    ratios = [float("nan")] + rep.ratios
    write_csv(
        out / "contraction.csv",
        ["iteration", "sup_x", "ratio"],
        [[i + 1, x, r] for i, (x, r) in enumerate(zip(rep.x_sequence, ratios))],
    )
    consistency = eta_consistency(it)
    status = 0 if rep.converged else 1
    _manifest(
        out, "picard", {**vars(cfg), "T": args.T, "tol": args.tol, "max_iter": args.max_iter},
        {"converged": rep.converged, "non_contraction": rep.non_contraction,
         "iterations": rep.iterations, "eta_consistency": consistency},
        status, started,
    )
    print(f"picard: {rep.iterations} iterations, converged={rep.converged}, "
          f"eta consistency {consistency:.3e}")
    return status


def _cmd_check_ops(args, started) -> int:
    grid = make_grid(args.dim, args.n)
    results = operator_checks(grid, args.alpha, args.trials, np.random.default_rng(args.seed))
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: worst {r.worst:.3e} (tol {r.tolerance:g})")
    status = 0 if all(r.passed for r in results) else 1
    if args.output_dir or os.environ.get(OUTPUT_ENV):
        out = _output_dir(args.output_dir, "check-ops")
        write_csv(
            out / "check_ops.csv",
            ["check", "worst", "tolerance", "passed"],
            [[r.name, r.worst, r.tolerance, int(r.passed)] for r in results],
        )
        _manifest(out, "check-ops", vars(args), {r.name: r.passed for r in results},
                  status, started)
    return status


class _UsageError(Exception):
    pass


def run_command(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    started = time.perf_counter()
    handlers = {
        "simulate": lambda: _cmd_simulate(args, started),
        "sweep-alpha": lambda: _cmd_sweep(args, started, "alpha"),
        "sweep-kappa": lambda: _cmd_sweep(args, started, "kappa"),
        "picard": lambda: _cmd_picard(args, started),
        "check-ops": lambda: _cmd_check_ops(args, started),
    }
    try:
        return handlers[args.command]()
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nonlocal-nsk: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FieldFormatError, PressureSolveError, ValueError, RuntimeError) as exc:
        print(f"nonlocal-nsk: {args.command} failed: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
