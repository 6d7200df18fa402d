"""Command-line surface.

Subcommands: ``run`` executes a configured case and writes CSV/VTK
outputs; ``sample-linesearch`` tabulates the energy and slope along one
Newton direction; ``compare-linesearches`` re-runs a load step under all
line-search variants from a common checkpoint; ``verify`` runs the
built-in oracle suite.

Exit status: 0 on success, 1 on solver non-convergence (outputs are still
written), 2 on configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import os
import sys

from .bench import (
    NewtonIterateCapture,
    SolveConfig,
    compare_linesearches,
    config_fingerprint,
    imported_case,
    load_checkpoint,
    nucleation_case,
    run_case,
    sample_linesearch_profile,
    save_checkpoint,
    sliding_case,
)
from .config import RunConfig, load_config, trajectory_fingerprint_text
from .errors import ConfigError, PffracError
from .fem import DirichletSpec
from .mesh import read_mesh
from .output import (
    write_comparison_csv,
    write_path_csv,
    write_profile_csv,
    write_step_csv,
    write_vtk,
)
from .solver import MechanicalProblem
from .verify import run_verification

EXIT_OK = 0
EXIT_NONCONVERGED = 1
EXIT_CONFIG = 2


def build_case(cfg: RunConfig):
    c = cfg.case
    if c.name in ("nucleation", "sliding"):
        if c.nx != c.ny:
            raise ConfigError(
                f"built-in case {c.name!r} uses a square grid; got {c.nx}x{c.ny}")
        if c.name == "nucleation":
            return nucleation_case(cfg.material, n=c.nx, steps=c.steps,
                                   angle_deg=c.load_angle_deg,
                                   load_scale=c.load_scale, length=c.length,
                                   stop_max_alpha=c.stop_max_alpha)
        if c.nx % 2 != 0:
            raise ConfigError("sliding case needs an even grid so the crack "
                              "row lies on nodes")
        return sliding_case(cfg.material, n=c.nx, steps=c.steps,
                            load_scale=c.load_scale, length=c.length,
                            stop_max_alpha=c.stop_max_alpha)
    mesh = read_mesh(c.mesh_file)
    bc = []
    final = 0.0
    for entry in filter(None, (s.strip() for s in c.dirichlet.split(","))):
        parts = entry.split(":")
        if len(parts) != 3:
            raise ConfigError(f"dirichlet entry {entry!r} is not set:field:value")
        name, dof_field, value = parts[0], parts[1], float(parts[2])
        bc.append(DirichletSpec(name, dof_field, value))
        if dof_field != "alpha":
            final = max(final, abs(value))
    if not bc:
        raise ConfigError("imported case needs at least one dirichlet entry")
    return imported_case(mesh, cfg.material, bc, steps=c.steps,
                         reaction_set=c.reaction_set,
                         reaction_component=c.reaction_component,
                         final_displacement=final,
                         stop_max_alpha=c.stop_max_alpha)


def solve_config(cfg: RunConfig) -> SolveConfig:
    return SolveConfig(settings=cfg.solver,
                       irreversibility=cfg.irreversibility,
                       ls_u=cfg.ls_u, ls_alpha=cfg.ls_alpha,
                       penalty_tol_ir=cfg.penalty_tol_ir,
                       tol_stagger=cfg.tol_stagger,
                       max_stagger=cfg.max_stagger)


def _prepare_outdir(cfg: RunConfig, override=None) -> str:
    outdir = override or cfg.output.directory
    os.makedirs(outdir, exist_ok=True)
    return outdir


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    outdir = _prepare_outdir(cfg, args.output_dir)
    case = build_case(cfg)
    result = run_case(case, solve_config(cfg))
    if cfg.output.csv:
        write_step_csv(result.records, os.path.join(outdir, "steps.csv"))
        for rec in result.records:
            if rec.staggered.rows:
                write_path_csv(rec.staggered.rows,
                               os.path.join(outdir, f"path_step{rec.step:04d}.csv"))
    if cfg.output.vtk:
        write_vtk(case.mesh, result.final_state,
                  os.path.join(outdir, "final_state.vtk"))
    failed = result.failed_step
    for rec in result.records:
        tag = "ok" if rec.converged else rec.failure_cause
        print(f"step {rec.step}: {tag}, max alpha {rec.max_alpha:.4f}, "
              f"staggered {rec.staggered.iterations}")
    if failed is not None:
        print(f"run stopped: step {failed} did not converge "
              f"({result.records[-1].failure_cause})")
        return EXIT_NONCONVERGED
    print(f"run finished: {len(result.records)} steps, outputs in {outdir}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    outdir = _prepare_outdir(cfg, args.output_dir)
    case = build_case(cfg)
    if not 1 <= args.step <= case.load.n_steps:
        raise ConfigError(f"--step must lie in [1, {case.load.n_steps}]")
    capture = NewtonIterateCapture(args.step, args.newton_iter)
    result = run_case(case, solve_config(cfg), mech_monitor=capture)
    ran_to_step = result.records[-1].step if result.records else 0
    if ran_to_step < args.step:
        raise ConfigError(f"run ended at step {ran_to_step} before reaching "
                          f"step {args.step}")
    failed = result.failed_step == args.step
    i, state, w, dw = capture.pick(failed)
    problem = MechanicalProblem(result.system, state)
    rows = sample_linesearch_profile(problem, w, dw, args.samples)
    path = os.path.join(
        outdir, f"profile_step{args.step:04d}_iter{args.newton_iter:04d}.csv")
    write_profile_csv(rows, path)
    print(f"sampled {args.samples} points at step {args.step}, staggered "
          f"iteration {i}, Newton iteration {args.newton_iter} -> {path}")
    return EXIT_NONCONVERGED if result.failed_step is not None else EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    outdir = _prepare_outdir(cfg, args.output_dir)
    case = build_case(cfg)
    if not 1 <= args.step <= case.load.n_steps:
        raise ConfigError(f"--step must lie in [1, {case.load.n_steps}]")
    fingerprint = config_fingerprint(trajectory_fingerprint_text(cfg))
    ckpt_path = os.path.join(
        outdir, f"checkpoint_step{args.step - 1:04d}_{fingerprint}.npz")

    start_state = None
    if os.path.exists(ckpt_path):
        state, step, stamp = load_checkpoint(ckpt_path)
        if step == args.step - 1 and stamp == fingerprint:
            start_state = state
    if start_state is None:
        states = {}
        probe = run_case(case, solve_config(cfg),
                         state_hook=lambda s, st: states.__setitem__(s, st))
        if args.step == 1:
            system = case.build_system()
            start_state = case.initial_state(system)
        elif args.step - 1 in states:
            start_state = states[args.step - 1]
        else:
            raise ConfigError(
                f"checkpoint missing: could not reach step {args.step - 1} "
                f"(run stopped at step "
                f"{probe.records[-1].step if probe.records else 0} with "
                f"'{probe.records[-1].failure_cause if probe.records else ''}')")
        save_checkpoint(ckpt_path, start_state, args.step - 1, fingerprint)

    rows = compare_linesearches(case, args.step, solve_config(cfg), start_state)
    path = os.path.join(outdir, f"comparison_step{args.step:04d}.csv")
    write_comparison_csv(rows, path)
    for row in rows:
        status = "converged" if row.converged else "failed"
        print(f"{row.variant:22s} {status:9s} newton_u={row.newton_u_total:6d} "
              f"evals/iter={row.mean_residual_evals:6.2f}")
    print(f"comparison written to {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    return EXIT_OK if run_verification() else EXIT_NONCONVERGED


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pffrac",
        description="Phase-field brittle fracture solver with exact-line-search "
                    "Newton globalization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured benchmark case")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_run.set_defaults(func=cmd_run)

    p_sample = sub.add_parser("sample-linesearch",
                              help="sample energy/slope along a Newton direction")
    p_sample.add_argument("config")
    p_sample.add_argument("--step", type=int, required=True)
    p_sample.add_argument("--newton-iter", type=int, required=True)
    p_sample.add_argument("--samples", type=int, default=100)
    p_sample.add_argument("--output-dir", default=None)
    p_sample.set_defaults(func=cmd_sample)

    p_cmp = sub.add_parser("compare-linesearches",
                           help="re-run one step under every line-search variant")
    p_cmp.add_argument("config")
    p_cmp.add_argument("--step", type=int, required=True)
    p_cmp.add_argument("--output-dir", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_ver = sub.add_parser("verify", help="run the built-in oracle suite")
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except PffracError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
