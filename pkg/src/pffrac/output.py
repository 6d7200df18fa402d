"""CSV tables and legacy-VTK snapshots.

All floating-point fields are written with 17 significant digits so a
64-bit value survives the round trip exactly. Every file ends with a
newline; headers are mandatory. Identical runs produce bitwise-identical
files.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .fem import State
from .mesh import Mesh

STEP_COLUMNS = ("step", "applied_displacement", "reaction_force", "max_alpha",
                "staggered_iters", "newton_u_total", "newton_alpha_total",
                "converged", "failure_cause")
PATH_COLUMNS = ("staggered_iter", "cum_newton_u", "cum_newton_alpha",
                "res_u_norm", "dalpha_norm", "energy", "denergy")
PROFILE_COLUMNS = ("lambda", "energy", "slope", "res_norm")
COMPARISON_COLUMNS = ("variant", "converged", "newton_u_total",
                      "newton_alpha_total", "mean_residual_evals",
                      "staggered_iters")


def _g17(x: float) -> str:
    return f"{float(x):.17g}"


def _write_lines(path, lines) -> None:
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise ConfigError(f"cannot write {path}: {err}") from err


def _require_rows(records, what: str) -> None:
    if not records:
        raise ConfigError(f"refusing to write empty {what} table")


def write_step_csv(records, path) -> None:
    """One row per executed load step."""
    _require_rows(records, "step")
    lines = [",".join(STEP_COLUMNS)]
    for rec in records:
        rows = rec.staggered.rows
        lines.append(",".join([
            str(rec.step),
            _g17(rec.applied_displacement),
            _g17(rec.reaction_force),
            _g17(rec.max_alpha),
            str(rec.staggered.iterations),
            str(rows[-1].cum_newton_u if rows else 0),
            str(rows[-1].cum_newton_alpha if rows else 0),
            "true" if rec.converged else "false",
            rec.failure_cause,
        ]))
    _write_lines(path, lines)


def write_path_csv(rows, path) -> None:
    """Staggered-path rows of a single load step."""
    _require_rows(rows, "path")
    lines = [",".join(PATH_COLUMNS)]
    for row in rows:
        lines.append(",".join([
            str(row.staggered_iter),
            str(row.cum_newton_u),
            str(row.cum_newton_alpha),
            _g17(row.res_u_norm),
            _g17(row.dalpha_norm),
            _g17(row.energy),
            _g17(row.denergy),
        ]))
    _write_lines(path, lines)


def write_profile_csv(rows, path) -> None:
    """Energy/slope/residual samples along one Newton direction."""
    _require_rows(rows, "profile")
    lines = [",".join(PROFILE_COLUMNS)]
    for row in rows:
        lines.append(",".join([
            _g17(row.lam), _g17(row.energy), _g17(row.slope), _g17(row.res_norm),
        ]))
    _write_lines(path, lines)


def write_comparison_csv(rows, path) -> None:
    """Line-search comparison table for one load step."""
    _require_rows(rows, "comparison")
    lines = [",".join(COMPARISON_COLUMNS)]
    for row in rows:
        lines.append(",".join([
            row.variant,
            "true" if row.converged else "false",
            str(row.newton_u_total),
            str(row.newton_alpha_total),
            _g17(row.mean_residual_evals),
            str(row.staggered_iters),
        ]))
    _write_lines(path, lines)


def write_vtk(mesh: Mesh, state: State, path) -> None:
    """Legacy ASCII VTK unstructured grid with displacement and damage."""
    if len(state.alpha) != mesh.n_nodes or len(state.u) != 2 * mesh.n_nodes:
        raise ConfigError("state does not match mesh size")
    n, m = mesh.n_nodes, mesh.n_elements
    lines = [
        "# vtk DataFile Version 3.0",
        "phase-field fracture state",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    for x, y in mesh.coords:
        lines.append(f"{_g17(x)} {_g17(y)} 0")
    lines.append(f"CELLS {m} {5 * m}")
    for quad in mesh.quads:
        lines.append("4 " + " ".join(str(int(q)) for q in quad))
    lines.append(f"CELL_TYPES {m}")
    lines.extend(["9"] * m)
    lines.append(f"POINT_DATA {n}")
    lines.append("VECTORS displacement double")
    for k in range(n):
        lines.append(f"{_g17(state.u[2 * k])} {_g17(state.u[2 * k + 1])} 0")
    lines.append("SCALARS alpha double 1")
    lines.append("LOOKUP_TABLE default")
    for k in range(n):
        lines.append(_g17(state.alpha[k]))
    _write_lines(path, lines)
