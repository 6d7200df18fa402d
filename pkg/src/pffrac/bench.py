"""Load stepping, benchmark cases, and solver instrumentation.

The two built-in cases run on structured meshes at desk scale:

``nucleation``
    Unit square under a ramped homogeneous diagonal strain, imposed by
    prescribing opposite normal displacements on opposing edges (the final
    values follow the direction angle, components cos/sin(angle) * L/10).
    The phase field is pinned to zero at the four corner nodes so the
    crack cannot form on the boundary.
``sliding``
    Unit square with an initial half-width crack at mid-height, the bottom
    edge clamped and the top edge ramped horizontally. The crack enters as
    an initial condition alpha_prev = 1 on the crack nodes; irreversibility
    preserves it.

Other geometries are supported through imported meshes with named node
sets. Default desk-scale resolution is 50x50, giving ell/h = 2.5 for the
standard parameters; raising the resolution is the escalation knob toward
the reference ratio of about 5.

``run_case`` drives the load program step by step and tabulates per-step
records including failures; a failed step ends the run but still yields
its record, so failure tables can be built from the output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import AssemblyError, ConfigError
from .fem import DirichletSpec, State, System
from .material import MaterialModel
from .mesh import Mesh, build_structured_mesh
from .solver import (
    LineSearchSpec,
    PenaltySettings,
    SolverSettings,
    StaggeredPath,
    alternate_minimization,
    modified_residual,
)

FAILURE_CAUSES = ("", "mechanical_nonconvergence", "damage_nonconvergence",
                  "staggered_cap")


@dataclass(frozen=True)
class LoadProgram:
    """Uniform displacement ramp: step k applies fraction k/n_steps of the
    final boundary values; an optional damage threshold stops the run."""

    n_steps: int
    stop_max_alpha: float | None = None

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError(f"load program needs >= 1 steps, got {self.n_steps}")

    def factor(self, step: int) -> float:
        return step / self.n_steps


@dataclass
class BenchmarkCase:
    tag: str
    mesh: Mesh
    material: MaterialModel
    bc: list
    load: LoadProgram
    reaction_set: str
    reaction_component: int
    final_displacement: float
    crack_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    ell_over_h: float = float("nan")

    def build_system(self) -> System:
        return System(self.mesh, self.material, self.bc)

    def initial_state(self, system: System) -> State:
        state = system.new_state()
        if len(self.crack_nodes):
            state.alpha[self.crack_nodes] = 1.0
            state.alpha_prev[self.crack_nodes] = 1.0
        return state


def nucleation_case(material: MaterialModel, n: int = 50, steps: int = 50,
                    angle_deg: float = 320.0, load_scale: float = 0.1,
                    length: float = 1.0,
                    stop_max_alpha: float | None = 0.99) -> BenchmarkCase:
    ux = np.cos(np.deg2rad(angle_deg)) * length * load_scale
    uy = np.sin(np.deg2rad(angle_deg)) * length * load_scale
    mesh = build_structured_mesh(n, n, length, length)
    bc = [
        DirichletSpec("left", "ux", -ux),
        DirichletSpec("right", "ux", ux),
        DirichletSpec("bottom", "uy", -uy),
        DirichletSpec("top", "uy", uy),
        DirichletSpec("corners", "alpha", 0.0),
    ]
    return BenchmarkCase(
        tag="nucleation", mesh=mesh, material=material, bc=bc,
        load=LoadProgram(steps, stop_max_alpha),
        reaction_set="left", reaction_component=0,
        final_displacement=float(np.hypot(ux, uy)),
        ell_over_h=material.ell / (length / n),
    )


def sliding_case(material: MaterialModel, n: int = 50, steps: int = 50,
                 load_scale: float = 0.1, length: float = 1.0,
                 stop_max_alpha: float | None = None) -> BenchmarkCase:
    mesh = build_structured_mesh(n, n, length, length)
    ux = load_scale * length
    bc = [
        DirichletSpec("bottom", "ux", 0.0),
        DirichletSpec("bottom", "uy", 0.0),
        DirichletSpec("top", "ux", ux),
        DirichletSpec("top", "uy", 0.0),
    ]
    # Initial crack: nodes on the mid-height row, left edge to mid-span.
    x, y = mesh.coords[:, 0], mesh.coords[:, 1]
    crack = np.nonzero((np.abs(y - length / 2.0) < 1e-12)
                       & (x <= length / 2.0 + 1e-12))[0]
    return BenchmarkCase(
        tag="sliding", mesh=mesh, material=material, bc=bc,
        load=LoadProgram(steps, stop_max_alpha),
        reaction_set="top", reaction_component=0,
        final_displacement=ux,
        crack_nodes=crack.astype(np.int64),
        ell_over_h=material.ell / (length / n),
    )


def imported_case(mesh: Mesh, material: MaterialModel, bc: list,
                  steps: int, reaction_set: str, reaction_component: int,
                  final_displacement: float,
                  crack_nodes=(), stop_max_alpha=None) -> BenchmarkCase:
    spacing = np.linalg.norm(
        mesh.coords[mesh.quads[:, 1]] - mesh.coords[mesh.quads[:, 0]], axis=1)
    return BenchmarkCase(
        tag="imported-mesh", mesh=mesh, material=material, bc=bc,
        load=LoadProgram(steps, stop_max_alpha),
        reaction_set=reaction_set, reaction_component=reaction_component,
        final_displacement=final_displacement,
        crack_nodes=np.asarray(crack_nodes, dtype=np.int64),
        ell_over_h=material.ell / float(spacing.mean()) if len(spacing) else float("nan"),
    )


@dataclass(frozen=True)
class SolveConfig:
    """Everything run_case needs besides the case itself."""

    settings: SolverSettings = field(default_factory=SolverSettings)
    irreversibility: str = "reduced-space"
    ls_u: LineSearchSpec = field(default_factory=lambda: LineSearchSpec("bisection"))
    ls_alpha: LineSearchSpec = field(default_factory=LineSearchSpec)
    penalty_tol_ir: float = 1e-4
    tol_stagger: float = 1e-6
    max_stagger: int = 5000

    def penalty_for(self, material: MaterialModel) -> PenaltySettings | None:
        if self.irreversibility != "penalty":
            return None
        return PenaltySettings.from_material(material, self.penalty_tol_ir)


@dataclass
class StepRecord:
    step: int
    applied_displacement: float
    reaction_force: float
    max_alpha: float
    max_psi_d: float
    staggered: StaggeredPath
    converged: bool
    failure_cause: str


@dataclass
class RunResult:
    case: BenchmarkCase
    records: list
    final_state: State
    system: System

    @property
    def failed_step(self) -> int | None:
        for rec in self.records:
            if not rec.converged:
                return rec.step
        return None


def run_case(case: BenchmarkCase, config: SolveConfig, mech_monitor=None,
             report_sink=None, state_hook=None) -> RunResult:
    """Run the load program; one record per executed step.

    Stops at the stop criterion or at the first failed step (whose record
    carries the failure cause). ``state_hook(step, state)`` is called with
    every converged step's state, e.g. for checkpointing.
    """
    system = case.build_system()
    state = case.initial_state(system)
    penalty = config.penalty_for(case.material)
    records = []
    for step in range(1, case.load.n_steps + 1):
        factor = case.load.factor(step)
        wants = getattr(mech_monitor, "wants", lambda s: True)
        state, path = alternate_minimization(
            system, state, factor, config.settings,
            irreversibility=config.irreversibility,
            ls_u=config.ls_u, ls_alpha=config.ls_alpha, penalty=penalty,
            tol_stagger=config.tol_stagger, max_stagger=config.max_stagger,
            mech_monitor=mech_monitor if mech_monitor is not None
            and wants(step) else None,
            report_sink=None if report_sink is None else
            (lambda i, which, rep, _s=step: report_sink(_s, i, which, rep)),
        )
        converged = path.outcome == "converged"
        records.append(StepRecord(
            step=step,
            applied_displacement=factor * case.final_displacement,
            reaction_force=system.reaction(state, case.reaction_set,
                                           case.reaction_component),
            max_alpha=float(state.alpha.max()),
            max_psi_d=system.max_psi_d(state),
            staggered=path,
            converged=converged,
            failure_cause="" if converged else path.outcome,
        ))
        if not converged:
            break
        if state_hook is not None:
            state_hook(step, state.copy())
        if (case.load.stop_max_alpha is not None
                and records[-1].max_alpha >= case.load.stop_max_alpha):
            break
    return RunResult(case=case, records=records, final_state=state, system=system)


class NewtonIterateCapture:
    """Grabs the state/direction pair at one Newton iteration of one step.

    Keeps the first and the last staggered iteration at which the wanted
    Newton iteration occurs; on a failed step the last one belongs to the
    non-converging solve, which is the interesting iterate to sample.
    """

    def __init__(self, step: int, newton_iter: int):
        self.step = step
        self.newton_iter = newton_iter
        self.first = None
        self.last = None

    def wants(self, step: int) -> bool:
        return step == self.step

    def __call__(self, i, k, state, w, dw):
        if k != self.newton_iter:
            return
        entry = (i, state.copy(), w.copy(), dw.copy())
        if self.first is None:
            self.first = entry
        self.last = entry

    def pick(self, failed: bool):
        entry = self.last if failed else self.first
        if entry is None:
            raise ConfigError(
                f"Newton iteration {self.newton_iter} never occurred in "
                f"step {self.step}; pick a smaller --newton-iter")
        return entry


@dataclass
class ProfileRow:
    lam: float
    energy: float
    slope: float
    res_norm: float
    error: str = ""


def sample_linesearch_profile(problem, w: np.ndarray, dw: np.ndarray,
                              n_samples: int, bounds=None) -> list:
    """Tabulate energy, slope, and residual norm along the Newton ray.

    Uniform lambda grid on [0, 1] inclusive; assembly failures are recorded
    per row instead of aborting the sweep.
    """
    if n_samples < 2:
        raise ConfigError(f"need at least 2 samples, got {n_samples}")
    rows = []
    for lam in np.linspace(0.0, 1.0, n_samples):
        try:
            trial = w + lam * dw
            if bounds is not None:
                trial = np.clip(trial, *bounds)
            r = problem.residual(trial)
            if bounds is not None:
                r = modified_residual(r, trial, *bounds)
            rows.append(ProfileRow(
                lam=float(lam),
                energy=problem.energy(trial),
                slope=float(r @ dw),
                res_norm=float(np.linalg.norm(r)),
            ))
        except AssemblyError as err:
            rows.append(ProfileRow(lam=float(lam), energy=float("nan"),
                                   slope=float("nan"), res_norm=float("nan"),
                                   error=str(err)))
    return rows


# ---------------------------------------------------------------------------
# Line-search comparison harness
# ---------------------------------------------------------------------------

COMPARISON_VARIANTS = ("full", "bisection", "backtracking-residual",
                       "backtracking-energy", "secant-l2", "secant-energy",
                       "secant-cp")


@dataclass
class ComparisonRow:
    variant: str
    converged: bool
    newton_u_total: int
    newton_alpha_total: int
    mean_residual_evals: float
    staggered_iters: int


def compare_linesearches(case: BenchmarkCase, step: int, config: SolveConfig,
                         start_state: State, variants=COMPARISON_VARIANTS) -> list:
    """Re-run one load step under each line-search variant.

    Every variant starts from the identical pre-step state. The damage
    problem is pinned to reduced-space without line search so the
    comparison isolates the mechanical nonlinearity. A variant failure is
    recorded and the comparison continues.
    """
    system = case.build_system()
    factor = case.load.factor(step)
    rows = []
    for variant in variants:
        counters = {"evals": 0, "iters": 0}

        def sink(i, which, rep):
            if which == "mechanical":
                counters["evals"] += rep.n_residual_evals
                counters["iters"] += rep.iterations

        _, path = alternate_minimization(
            system, start_state.copy(), factor, config.settings,
            irreversibility="reduced-space",
            ls_u=LineSearchSpec(variant, config.ls_u.settings),
            ls_alpha=LineSearchSpec("full"),
            tol_stagger=config.tol_stagger, max_stagger=config.max_stagger,
            report_sink=sink,
        )
        total_u = path.rows[-1].cum_newton_u if path.rows else counters["iters"]
        total_a = path.rows[-1].cum_newton_alpha if path.rows else 0
        if path.outcome != "converged":
            total_u = counters["iters"]
        rows.append(ComparisonRow(
            variant=variant,
            converged=path.outcome == "converged",
            newton_u_total=total_u,
            newton_alpha_total=total_a,
            mean_residual_evals=(counters["evals"] / counters["iters"]
                                 if counters["iters"] else float("nan")),
            staggered_iters=path.iterations,
        ))
    return rows


# ---------------------------------------------------------------------------
# Checkpoints (pre-step snapshots for the comparison harness)
# ---------------------------------------------------------------------------

def config_fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(path, state: State, step: int, fingerprint: str) -> None:
    np.savez(path, u=state.u, alpha=state.alpha, alpha_prev=state.alpha_prev,
             step=np.array([step]), fingerprint=np.array([fingerprint]))


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        state = State(data["u"].copy(), data["alpha"].copy(),
                      data["alpha_prev"].copy())
        return state, int(data["step"][0]), str(data["fingerprint"][0])


# ---------------------------------------------------------------------------
# Closed-form helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrengthValues:
    sigma_e_plus: float
    tau_c: float
    at1_onset_psi: float


def analytic_helpers(material: MaterialModel) -> StrengthValues:
    """Tensile/shear strength scales and the damage-onset energy density.

    Valid for the linear dissipation model only: the quadratic one has no
    elastic phase.
    """
    if material.dissipation != "AT1":
        raise ConfigError("strength helpers require the AT1 model")
    denom = (8.0 / 3.0) * material.ell
    return StrengthValues(
        sigma_e_plus=float(np.sqrt(material.E0 * material.Gc / denom)),
        tau_c=float(np.sqrt(material.mu0 * material.Gc / denom)),
        at1_onset_psi=3.0 * material.Gc / (16.0 * material.ell),
    )
