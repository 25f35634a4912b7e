"""Command-line front end.

Subcommands read a JSON/YAML run configuration (or just ``--model``) and
write CSV files, plus PNG renderings unless ``--no-plots`` is given.

Exit status: 0 success, 2 invalid configuration, 3 numerical failure,
4 non-convergence (``iterate_history.csv`` is written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import csvio
from .config import RunConfig, build_grid, build_neutral, build_system, load_config
from .exceptions import ConfigError, ConvergenceError
from .gramian import a0_diagnostic, assemble
from .models import PRESETS, make_rotation_example, rotation_example_inputs
from .propagator import dense_oracle, mild_solve_semilinear

log = logging.getLogger("impulsive_control")

COMMANDS = ("simulate", "gramian", "synthesize", "verify", "sweep", "figures")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="impulsive-control",
        description="Simulate impulsive evolution equations and synthesize regularized controls.",
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="JSON or YAML run configuration")
    ap.add_argument("--output", type=Path, help="output directory (overrides the config)")
    ap.add_argument("--alpha", type=float, help="single regularization parameter")
    ap.add_argument("--model", choices=PRESETS, help="preset model (overrides the config)")
    ap.add_argument("--jobs", type=int, default=1, help="worker threads for sweep rows")
    ap.add_argument("--paper-literal-control", action="store_true",
                    help="use the printed control formula instead of the adjoint-consistent one")
    ap.add_argument("--neutral-convention", choices=("paper", "standard"))
    ap.add_argument("--no-plots", action="store_true", help="write CSV only")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _resolve_config(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.model is not None or args.command == "figures":
        cfg = RunConfig.model_validate({"model": {"preset": args.model or "rotation-example"}})
    else:
        raise ConfigError("need --config or --model")
    if args.model is not None and args.config is not None:
        cfg.model.preset, cfg.model.custom = args.model, None
    if args.output is not None:
        cfg.output.directory = str(args.output)
    if args.alpha is not None:
        if not args.alpha > 0:
            raise ConfigError("--alpha must be positive")
        cfg.synthesis.alpha = args.alpha
        cfg.synthesis.alphas = [args.alpha]
    if args.paper_literal_control:
        cfg.synthesis.paper_literal_control = True
    if args.neutral_convention is not None:
        cfg.neutral.convention = args.neutral_convention
    if args.no_plots:
        cfg.output.plots = False
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    return cfg


def _target(cfg, system):
    if cfg.synthesis.target is None:
        return np.zeros(system.dim)
    h = np.array(cfg.synthesis.target, dtype=float)
    if h.shape != (system.dim,):
        raise ConfigError(f"target needs {system.dim} entries, got {h.size}")
    return h


def _controls(cfg, system):
    c = cfg.control
    u = None if c.u is None else np.array(c.u, dtype=float)
    if u is not None and u.shape != (system.n_inputs,):
        raise ConfigError(f"control.u needs {system.n_inputs} entries")
    v = None if c.v is None else [np.array(x, dtype=float) for x in c.v]
    if v is not None and len(v) != system.n_impulses:
        raise ConfigError(f"control.v needs {system.n_impulses} vectors")
    return u, v


def _outer_kwargs(cfg):
    s = cfg.synthesis
    return dict(outer_tol=s.outer_tol, max_outer=s.max_outer, damping=s.damping,
                inner_tol=s.inner_tol, inner_max_iter=s.max_iter)


def _neutral(cfg, system):
    if cfg.neutral.sigma == "zero":
        return None
    return build_neutral(cfg, system)


def cmd_simulate(cfg, out, plots, jobs):
    system = build_system(cfg)
    grid = build_grid(cfg, system)
    u, v = _controls(cfg, system)
    ns = _neutral(cfg, system)
    s = cfg.synthesis
    if ns is not None:
        from .neutral import neutral_dense_oracle, neutral_mild_solve

        traj = neutral_mild_solve(ns, u, v, grid, s.inner_tol, s.max_iter, s.damping)
        oracle = (lambda: neutral_dense_oracle(ns, u, v, cfg.simulate.oracle_step))
    else:
        traj = mild_solve_semilinear(system, u, v, grid, s.inner_tol, s.max_iter, s.damping)
        oracle = (lambda: dense_oracle(system, u, v, cfg.simulate.oracle_step))
    files = [csvio.write_trajectory(out / "trajectory.csv", traj)]
    if cfg.simulate.oracle:
        ref = oracle()
        files.append(csvio.write_trajectory(out / "oracle_trajectory.csv", ref))
        files.append(csvio.write_table(out / "oracle_distance.csv", ["sup_distance"],
                                       [[traj.sup_distance(ref)]]))
    if plots:
        from .plotting import plot_trajectory

        files.append(plot_trajectory(traj, out / "trajectory.png", "mild solution"))
    return files


def cmd_gramian(cfg, out, plots, jobs):
    system = build_system(cfg)
    gs = assemble(system, build_grid(cfg, system))
    files = []
    eig_rows, eigs = [], {}
    parts = dict(gs.parts, W=gs.total)
    for name, M in parts.items():
        files.append(csvio.write_matrix(out / f"gramian_{name}.csv", M))
        lam = gs.eigenvalues(M)
        eigs[name] = lam
        eig_rows += [[name, i, x] for i, x in enumerate(lam)]
    files.append(csvio.write_table(out / "gramian_eigenvalues.csv",
                                   ["operator", "index", "eigenvalue"], eig_rows))
    probes = list(np.eye(system.dim))
    h = _target(cfg, system)
    if np.any(h):
        probes.append(h)
    alphas = sorted(cfg.synthesis.alphas, reverse=True)
    rep = a0_diagnostic(gs, alphas, probes)
    rows = [[a, j, rep.ratios[i, j], rep.status] for i, a in enumerate(rep.alphas)
            for j in range(len(probes))]
    files.append(csvio.write_table(out / "a0_diagnostic.csv", ["alpha", "probe", "ratio", "status"], rows))
    if plots:
        from .plotting import plot_spectrum

        files.append(plot_spectrum(eigs, out / "gramian_eigenvalues.png"))
    log.info("A0 diagnostic: %s", rep.status)
    return files


def _synth(cfg, system, grid, gs, alpha, paper_literal):
    from .synthesis import semilinear_synthesize

    h = _target(cfg, system)
    ns = _neutral(cfg, system)
    if ns is not None:
        from .neutral import neutral_synthesize

        return neutral_synthesize(ns, gs, h, alpha, grid, paper_literal=paper_literal, **_outer_kwargs(cfg))
    return semilinear_synthesize(system, gs, h, alpha, grid, paper_literal=paper_literal,
                                 **_outer_kwargs(cfg))


def cmd_synthesize(cfg, out, plots, jobs):
    from .synthesis import predicted_deviation

    system = build_system(cfg)
    grid = build_grid(cfg, system)
    gs = assemble(system, grid)
    alpha = cfg.synthesis.alpha
    res = _synth(cfg, system, grid, gs, alpha, cfg.synthesis.paper_literal_control)
    law, traj = res.law, res.trajectory
    h = _target(cfg, system)
    rows, ts, us = [], [], []
    nseg = len(traj.segments)
    for k, (times, _) in enumerate(traj.segments):
        seg = law.segment(k)
        for j, t in enumerate(times):
            side = "right" if (j == 0 and k > 0) else ("left" if j == len(times) - 1 and k < nseg - 1 else "cont")
            uv = seg(t)
            rows.append([t, side, *uv])
            ts.append(t)
            us.append(uv)
    files = [
        csvio.write_table(out / "control_u.csv", ["t", "side"] + [f"u{j}" for j in range(system.n_inputs)], rows),
        csvio.write_table(out / "control_v.csv",
                          ["k", "t"] + [f"v{j}" for j in range(max([len(v) for v in law.v], default=0))],
                          [[k + 1, system.times[k], *v] for k, v in enumerate(law.v)]),
        csvio.write_table(out / "phi.csv", ["index", "phi"], [[i, x] for i, x in enumerate(law.phi)]),
        csvio.write_trajectory(out / "closed_loop.csv", traj),
        csvio.write_table(
            out / "synthesis_summary.csv",
            ["alpha", "measured_error", "predicted_error", "terminal_residual", "outer_iters"],
            [[alpha, gs.norm(traj.terminal - h), gs.norm(predicted_deviation(gs, alpha, res.moment)),
              res.terminal_residual, res.outer_iterations]],
        ),
    ]
    if plots:
        from .plotting import plot_control, plot_trajectory

        files.append(plot_control(ts, us, out / "control_u.png"))
        files.append(plot_trajectory(traj, out / "closed_loop.png", f"closed loop, alpha={alpha:g}"))
    return files


def cmd_verify(cfg, out, plots, jobs):
    from .synthesis import verify_lemma31

    system = build_system(cfg)
    grid = build_grid(cfg, system)
    gs = assemble(system, grid)
    h = _target(cfg, system)
    lit = cfg.synthesis.paper_literal_control
    variant = "paper-literal" if lit else "adjoint"
    rows = []
    ns = _neutral(cfg, system)
    for a in cfg.synthesis.alphas:
        if ns is None:
            chk = verify_lemma31(system, gs, None, h, a, grid, paper_literal=lit)
            rows.append([a, chk.residual, chk.relative, gs.norm(chk.measured),
                         gs.norm(chk.predicted), variant])
        else:
            res = _synth(cfg, system, grid, gs, a, lit)
            from .synthesis import predicted_deviation

            pred = gs.norm(predicted_deviation(gs, a, res.moment))
            rows.append([a, res.terminal_residual, res.terminal_residual / max(gs.norm(res.moment), 1e-300),
                         gs.norm(res.trajectory.terminal - h), pred, variant])
    return [csvio.write_table(out / "verify.csv", ["alpha", "residual", "relative_residual",
                                                   "measured_error", "predicted_error", "variant"], rows)]


SWEEP_HEADER = ["alpha", "measured_error", "predicted_error", "outer_iters", "status"]


def cmd_sweep(cfg, out, plots, jobs):
    from .synthesis import alpha_sweep

    system = build_system(cfg)
    grid = build_grid(cfg, system)
    gs = assemble(system, grid)
    h = _target(cfg, system)
    s = cfg.synthesis
    alphas = sorted(s.alphas, reverse=True)
    ns = _neutral(cfg, system)
    kw = _outer_kwargs(cfg) if (s.mode == "semilinear" or ns is not None) else {}
    if ns is not None:
        from .neutral import neutral_alpha_sweep

        rows = neutral_alpha_sweep(ns, gs, h, alphas, grid, jobs, s.paper_literal_control, **kw)
    else:
        rows = alpha_sweep(system, gs, h, alphas, s.mode, grid, jobs, s.paper_literal_control, **kw)
    files = [csvio.write_table(out / "sweep.csv", SWEEP_HEADER, [list(r) for r in rows])]
    if plots:
        from .plotting import plot_sweep

        files.append(plot_sweep(rows, out / "sweep.png"))
    return files


FIGURE_CASES = (
    ("rotation_u_impulsive", True, True),
    ("rotation_u_smooth", False, True),
    ("rotation_u0_impulsive", True, False),
    ("rotation_u0_smooth", False, False),
)


def cmd_figures(cfg, out, plots, jobs):
    """Four trajectories of the rotation example: with and without the impulse, u = (1, 0) and u = 0."""
    files = []
    s = cfg.synthesis
    for name, impulsive, control in FIGURE_CASES:
        system = make_rotation_example(impulsive=impulsive)
        u, v = rotation_example_inputs(system, control=control)
        traj = mild_solve_semilinear(system, u, v, build_grid(cfg, system), s.inner_tol, s.max_iter)
        files.append(csvio.write_trajectory(out / f"{name}.csv", traj))
        if plots:
            from .plotting import plot_trajectory

            title = f"{'impulsive' if impulsive else 'no impulse'}, u = {'(1, 0)' if control else '0'}"
            files.append(plot_trajectory(traj, out / f"{name}.png", title, labels=["x1", "x2"]))
    return files


HANDLERS = {
    "simulate": cmd_simulate,
    "gramian": cmd_gramian,
    "synthesize": cmd_synthesize,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "figures": cmd_figures,
}


def run(command, cfg: RunConfig, jobs=1) -> list:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return HANDLERS[command](cfg, out, cfg.output.plots, jobs)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = None
    try:
        cfg = _resolve_config(args)
        out_dir = Path(cfg.output.directory)
        files = run(args.command, cfg, args.jobs)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            csvio.write_table(out_dir / "iterate_history.csv", ["iteration", "gap"],
                              [[i + 1, g] for i, g in enumerate(exc.history)])
        return 4
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
