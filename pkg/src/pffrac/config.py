"""Run configuration: flat key = value files with bracketed section headers.

Example::

    [case]
    name = nucleation
    nx = 50
    steps = 50

    [material]
    split = voldev

    [solver]
    irreversibility = reduced-space

    [linesearch.u]
    variant = bisection

Unknown sections or keys are rejected; all values are validated on load.
Defaults mirror the reference tolerances: staggered 1e-6, Newton 1e-8,
slope atol 1e-12, step-change ltol 1e-6, irreversibility 1e-4.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .material import DISSIPATIONS, SPLITS, MaterialModel
from .solver import (
    LINESEARCH_VARIANTS,
    LineSearchSettings,
    LineSearchSpec,
    SolverSettings,
)

CASES = ("nucleation", "sliding", "imported")
IRREVERSIBILITY_METHODS = ("reduced-space", "penalty")


@dataclass(frozen=True)
class CaseConfig:
    name: str = "nucleation"
    nx: int = 50
    ny: int = 50
    length: float = 1.0
    steps: int = 50
    stop_max_alpha: float | None = 0.99
    load_angle_deg: float = 320.0
    load_scale: float = 0.1
    mesh_file: str = ""
    dirichlet: str = ""  # imported meshes: "set:field:value," entries
    reaction_set: str = ""
    reaction_component: int = 0


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    csv: bool = True
    vtk: bool = False
    profiles: bool = False


@dataclass(frozen=True)
class RunConfig:
    case: CaseConfig = field(default_factory=CaseConfig)
    material: MaterialModel = field(default_factory=lambda: MaterialModel(
        E0=100.0, nu0=0.3, Gc=0.1, ell=0.05, split="voldev"))
    solver: SolverSettings = field(default_factory=SolverSettings)
    irreversibility: str = "reduced-space"
    tol_stagger: float = 1e-6
    max_stagger: int = 5000
    penalty_tol_ir: float = 1e-4
    ls_u: LineSearchSpec = field(default_factory=lambda: LineSearchSpec("bisection"))
    ls_alpha: LineSearchSpec = field(default_factory=LineSearchSpec)
    output: OutputConfig = field(default_factory=OutputConfig)


# ---------------------------------------------------------------------------
# Schema: section -> key -> (parser, default-source attribute)
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_optional_float(text: str):
    if text.lower() in ("none", ""):
        return None
    return float(text)


def _parse_optional_int(text: str):
    if text.lower() in ("none", ""):
        return None
    return int(text)


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {options}, got {text!r}")
        return text
    return parse


SCHEMA = {
    "case": {
        "name": _choice(CASES),
        "nx": int,
        "ny": int,
        "length": float,
        "steps": int,
        "stop_max_alpha": _parse_optional_float,
        "load_angle_deg": float,
        "load_scale": float,
        "mesh_file": str,
        "dirichlet": str,
        "reaction_set": str,
        "reaction_component": int,
    },
    "material": {
        "E0": float,
        "nu0": float,
        "Gc": float,
        "ell": float,
        "a0": float,
        "dissipation": _choice(DISSIPATIONS),
        "split": _choice(SPLITS),
        "gamma_star": float,
        "gamma_dp": float,
    },
    "solver": {
        "tol_newton": float,
        "max_newton": int,
        "active_set_tol": float,
        "irreversibility": _choice(IRREVERSIBILITY_METHODS),
        "tol_stagger": float,
        "max_stagger": int,
    },
    "penalty": {
        "tol_ir": float,
    },
    "linesearch.u": {
        "variant": _choice(LINESEARCH_VARIANTS),
        "atol": float,
        "rtol": _parse_optional_float,
        "ltol": float,
        "l_max": _parse_optional_int,
        "mu": _parse_optional_float,
    },
    "linesearch.alpha": None,  # same keys as linesearch.u
    "output": {
        "directory": str,
        "csv": _parse_bool,
        "vtk": _parse_bool,
        "profiles": _parse_bool,
    },
}
SCHEMA["linesearch.alpha"] = SCHEMA["linesearch.u"]


def _parse_sections(text: str, origin: str):
    """Tokenize into {section: {key: value}} with line diagnostics."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in SCHEMA:
                errors.append(f"{origin}:{lineno}: unknown section [{current}]")
                current = None
            elif current in sections:
                errors.append(f"{origin}:{lineno}: duplicate section [{current}]")
            else:
                sections[current] = {}
            continue
        if "=" not in line:
            errors.append(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
            continue
        if current is None:
            errors.append(f"{origin}:{lineno}: key outside of any section")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key in sections[current]:
            errors.append(f"{origin}:{lineno}: duplicate key {key!r} in [{current}]")
        elif key not in SCHEMA[current]:
            errors.append(f"{origin}:{lineno}: unknown key {key!r} in [{current}]")
        else:
            sections[current][key] = value
    return sections, errors


def _linesearch_from(values: dict, default_variant: str) -> LineSearchSpec:
    settings_kw = {}
    for key in ("atol", "rtol", "ltol", "l_max", "mu"):
        if key in values:
            settings_kw[key] = values[key]
    variant = values.get("variant", default_variant)
    return LineSearchSpec(variant, LineSearchSettings(**settings_kw))


def parse_config(text: str, origin: str = "<config>") -> RunConfig:
    """Parse and validate configuration text; all violations are reported
    together."""
    sections, errors = _parse_sections(text, origin)
    typed: dict[str, dict] = {}
    for section, raw in sections.items():
        typed[section] = {}
        for key, value in raw.items():
            try:
                typed[section][key] = SCHEMA[section][key](value)
            except (ValueError, TypeError) as err:
                errors.append(f"{origin}: [{section}] {key}: {err}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))

    try:
        case = CaseConfig(**typed.get("case", {}))
        material = replace(
            MaterialModel(E0=100.0, nu0=0.3, Gc=0.1, ell=0.05, split="voldev"),
            **typed.get("material", {}))
        solver_kw = dict(typed.get("solver", {}))
        irrev = solver_kw.pop("irreversibility", "reduced-space")
        tol_stagger = solver_kw.pop("tol_stagger", 1e-6)
        max_stagger = solver_kw.pop("max_stagger", 5000)
        solver = SolverSettings(**solver_kw)
        penalty_tol = typed.get("penalty", {}).get("tol_ir", 1e-4)
        ls_u = _linesearch_from(typed.get("linesearch.u", {}), "bisection")
        ls_alpha = _linesearch_from(typed.get("linesearch.alpha", {}), "full")
        output = OutputConfig(**typed.get("output", {}))
    except (ValueError, ConfigError) as err:
        raise ConfigError(f"{origin}: {err}") from err

    _validate(case, tol_stagger, max_stagger, penalty_tol, origin)
    return RunConfig(case=case, material=material, solver=solver,
                     irreversibility=irrev, tol_stagger=tol_stagger,
                     max_stagger=max_stagger, penalty_tol_ir=penalty_tol,
                     ls_u=ls_u, ls_alpha=ls_alpha, output=output)


def _validate(case: CaseConfig, tol_stagger, max_stagger, penalty_tol, origin):
    problems = []
    if case.nx < 1 or case.ny < 1:
        problems.append(f"mesh resolution must be >= 1, got {case.nx}x{case.ny}")
    if case.length <= 0.0:
        problems.append(f"length must be positive, got {case.length}")
    if case.steps < 1:
        problems.append(f"steps must be >= 1, got {case.steps}")
    if case.load_scale <= 0.0:
        problems.append(f"load_scale must be positive, got {case.load_scale}")
    if case.name == "imported" and not case.mesh_file:
        problems.append("imported case needs mesh_file")
    elif case.mesh_file and not os.path.exists(case.mesh_file):
        problems.append(f"mesh_file {case.mesh_file!r} does not exist")
    if case.name == "imported" and not case.reaction_set:
        problems.append("imported case needs reaction_set")
    if tol_stagger <= 0.0:
        problems.append(f"tol_stagger must be positive, got {tol_stagger}")
    if max_stagger < 1:
        problems.append(f"max_stagger must be >= 1, got {max_stagger}")
    if not (0.0 < penalty_tol < 1.0):
        problems.append(f"penalty tol_ir must lie in (0, 1), got {penalty_tol}")
    if problems:
        raise ConfigError(f"{origin}: invalid configuration:\n  "
                          + "\n  ".join(problems))


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text, origin=str(path))


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; reparsing yields an equal RunConfig."""
    m = cfg.material
    lines = [
        "[case]",
        f"name = {cfg.case.name}",
        f"nx = {cfg.case.nx}",
        f"ny = {cfg.case.ny}",
        f"length = {_fmt(cfg.case.length)}",
        f"steps = {cfg.case.steps}",
        f"stop_max_alpha = {_fmt(cfg.case.stop_max_alpha)}",
        f"load_angle_deg = {_fmt(cfg.case.load_angle_deg)}",
        f"load_scale = {_fmt(cfg.case.load_scale)}",
    ]
    if cfg.case.mesh_file:
        lines.append(f"mesh_file = {cfg.case.mesh_file}")
    if cfg.case.dirichlet:
        lines.append(f"dirichlet = {cfg.case.dirichlet}")
    if cfg.case.reaction_set:
        lines.append(f"reaction_set = {cfg.case.reaction_set}")
        lines.append(f"reaction_component = {cfg.case.reaction_component}")
    lines += [
        "",
        "[material]",
        f"E0 = {_fmt(m.E0)}",
        f"nu0 = {_fmt(m.nu0)}",
        f"Gc = {_fmt(m.Gc)}",
        f"ell = {_fmt(m.ell)}",
        f"a0 = {_fmt(m.a0)}",
        f"dissipation = {m.dissipation}",
        f"split = {m.split}",
        f"gamma_star = {_fmt(m.gamma_star)}",
        f"gamma_dp = {_fmt(m.gamma_dp)}",
        "",
        "[solver]",
        f"tol_newton = {_fmt(cfg.solver.tol_newton)}",
        f"max_newton = {cfg.solver.max_newton}",
        f"active_set_tol = {_fmt(cfg.solver.active_set_tol)}",
        f"irreversibility = {cfg.irreversibility}",
        f"tol_stagger = {_fmt(cfg.tol_stagger)}",
        f"max_stagger = {cfg.max_stagger}",
        "",
        "[penalty]",
        f"tol_ir = {_fmt(cfg.penalty_tol_ir)}",
    ]
    for name, spec in (("linesearch.u", cfg.ls_u), ("linesearch.alpha", cfg.ls_alpha)):
        s = spec.settings
        lines += [
            "",
            f"[{name}]",
            f"variant = {spec.variant}",
            f"atol = {_fmt(s.atol)}",
            f"rtol = {_fmt(s.rtol)}",
            f"ltol = {_fmt(s.ltol)}",
            f"l_max = {_fmt(s.l_max)}",
            f"mu = {_fmt(s.mu)}",
        ]
    lines += [
        "",
        "[output]",
        f"directory = {cfg.output.directory}",
        f"csv = {_fmt(cfg.output.csv)}",
        f"vtk = {_fmt(cfg.output.vtk)}",
        f"profiles = {_fmt(cfg.output.profiles)}",
    ]
    return "\n".join(lines) + "\n"


def trajectory_fingerprint_text(cfg: RunConfig) -> str:
    """Serialized form without the output section: identifies the solution
    trajectory for checkpoint compatibility checks."""
    text = serialize_config(cfg)
    head, _, _ = text.partition("[output]")
    return head
