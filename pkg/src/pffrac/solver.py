"""Newton solvers for the staggered subproblems, with pluggable line searches.

The mechanical problem (damage frozen) and the damage problem (displacement
frozen) are both solved with Newton's method. Each iteration solves
``K dw = -R`` and updates ``w <- w + lam* dw`` where the step multiplier
``lam*`` comes from a line search restricted to (0, 1]:

``full``
    lam = 1, plain Newton.
``bisection``
    Exact line search: the energy minimizer along the Newton direction is
    the root of the directional derivative phi'(lam) = R(w + lam dw) . dw,
    bracketed on [0, 1] and located by bisection. If phi'(0) phi'(1) >= 0
    the full step is already the constrained minimizer and lam = 1. Each
    bracket halves exactly, so iterate l sits within 2^-l of the root.
``backtracking-residual`` / ``backtracking-energy``
    Armijo backtracking on 1/2 ||R||^2 resp. the energy, halving from 1.
``secant-l2`` / ``secant-energy`` / ``secant-cp``
    Newton-on-lambda iterations using one-sided three-point stencils of the
    scalar objective (or, for the critical-point variant, the exact slope
    with a stencil only for the curvature).

The bound-constrained damage problem is handled either by a reduced-space
active-set Newton variant (exact bounds, modified residual for the
convergence check, stiffness assembled once per staggered iteration) or by
the penalty reformulation, which is unconstrained and uses the plain
Newton driver with a penalized energy.

Non-convergence is a reported outcome, never an exception: benchmark
tables are built from failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

try:
    from cvxopt import cholmod as _cholmod
    from cvxopt import matrix as _cvxmatrix
    from cvxopt import spmatrix as _cvxspmatrix
except ImportError:  # pragma: no cover - cvxopt is a soft dependency
    _cholmod = None

from .errors import IndefiniteMatrixError, NotDescentDirectionError
from .fem import State, System

LINESEARCH_VARIANTS = (
    "full",
    "bisection",
    "backtracking-residual",
    "backtracking-energy",
    "secant-l2",
    "secant-energy",
    "secant-cp",
)

# Relative curvature floor below which the secant update falls back to
# halving the step.
SECANT_CURVATURE_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# Settings and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineSearchSettings:
    """Tolerances shared by the line-search variants.

    ``atol`` applies to the slope normalized by ||dw||; ``rtol`` (disabled
    by default) to the slope relative to its value at lam = 0; ``ltol`` to
    the change of lam between iterations. ``l_max`` and ``mu`` default per
    variant: 20 iterations for bisection, 10 for the others; sufficient
    decrease 1e-4 for residual objectives and 1.0 for energy objectives.
    """

    atol: float = 1e-12
    rtol: float | None = None
    ltol: float = 1e-6
    l_max: int | None = None
    mu: float | None = None

    def __post_init__(self):
        if not (0.0 < self.ltol < 1.0):
            raise ValueError(f"ltol must lie in (0, 1), got {self.ltol}")
        if self.l_max is not None and self.l_max < 1:
            raise ValueError(f"l_max must be >= 1, got {self.l_max}")

    def max_iter(self, variant: str) -> int:
        if self.l_max is not None:
            return self.l_max
        return 20 if variant == "bisection" else 10

    def decrease_param(self, variant: str) -> float:
        if self.mu is not None:
            return self.mu
        return 1.0 if variant == "backtracking-energy" else 1e-4


@dataclass(frozen=True)
class LineSearchSpec:
    variant: str = "full"
    settings: LineSearchSettings = field(default_factory=LineSearchSettings)

    def __post_init__(self):
        if self.variant not in LINESEARCH_VARIANTS:
            raise ValueError(
                f"unknown line search {self.variant!r}; choose from {LINESEARCH_VARIANTS}")


@dataclass(frozen=True)
class SolverSettings:
    tol_newton: float = 1e-8
    max_newton: int = 5000
    active_set_tol: float = 1e-8

    def __post_init__(self):
        if self.tol_newton <= 0.0 or self.active_set_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_newton < 1:
            raise ValueError("iteration cap must be >= 1")


@dataclass(frozen=True)
class PenaltySettings:
    """Irreversibility penalty: coefficient sized so the converged violation
    stays below ``tol_ir``."""

    tol_ir: float = 1e-4
    epsilon: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.tol_ir < 1.0):
            raise ValueError(f"tol_ir must lie in (0, 1), got {self.tol_ir}")
        if self.epsilon <= 0.0:
            raise ValueError(f"penalty coefficient must be positive, got {self.epsilon}")

    @staticmethod
    def from_material(material, tol_ir: float = 1e-4) -> "PenaltySettings":
        eps = material.Gc / material.ell * 27.0 / (64.0 * tol_ir**2)
        return PenaltySettings(tol_ir=tol_ir, epsilon=eps)


@dataclass
class LineSearchTrace:
    """One line-search invocation: accepted step and per-iteration record."""

    lam: float = 1.0
    n_slope_evals: int = 0
    n_objective_evals: int = 0
    iterates: list = field(default_factory=list)
    widths: list = field(default_factory=list)
    exit_reason: str = "full-step"
    fallbacks: int = 0
    failed: bool = False


@dataclass
class NewtonReport:
    """Iteration accounting for one Newton solve."""

    converged: bool = False
    iterations: int = 0
    initial_residual: float = math.nan
    residual_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)
    linesearch_traces: list = field(default_factory=list)
    failure: str | None = None
    n_residual_evals: int = 0
    n_energy_evals: int = 0


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------

def _as_csc(matrix) -> sp.csc_matrix:
    if hasattr(matrix, "to_csc"):
        return matrix.to_csc()
    return sp.csc_matrix(matrix)


def _refine(solve, mat, b, x, max_passes=3):
    for _ in range(max_passes):
        res = b - mat @ x
        if np.linalg.norm(res) <= 1e-12 * (1.0 + np.linalg.norm(b)):
            break
        x = x + solve(res)
    return x


def _splu_spd_factor(mat: sp.csc_matrix):
    """Symmetric-mode elimination: no off-diagonal pivoting, so a
    non-positive pivot exposes indefiniteness."""
    try:
        lu = splu(mat, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    except RuntimeError as err:
        raise IndefiniteMatrixError(f"symmetric factorization failed: {err}") from err
    diag = lu.U.diagonal()
    if np.any(diag <= 0.0):
        where = int(np.argmax(diag <= 0.0))
        pivot = int(lu.perm_c[where])
        raise IndefiniteMatrixError(
            f"non-positive pivot at index {pivot}", pivot_index=pivot)
    return lu.solve


def _cholmod_factor(matrix):
    """Sparse Cholesky on the frozen pattern, reusing the symbolic analysis.

    Works on assembled symmetric matrices whose pattern carries the
    column-major scatter maps; the analysis and the triplet template are
    cached on the pattern.
    """
    pattern = matrix.pattern
    ws = pattern.factor_workspace
    if ws is None:
        template = _cvxspmatrix(
            matrix.data[pattern.csc_src], pattern.csc_rows.tolist(),
            pattern.csc_cols.tolist(), (pattern.n, pattern.n))
        symbolic = _cholmod.symbolic(template)
        pattern.factor_workspace = ws = (template, symbolic)
    template, symbolic = ws
    template.V = _cvxmatrix(matrix.data[pattern.csc_src])
    try:
        _cholmod.numeric(template, symbolic)
    except ArithmeticError as err:
        try:
            pivot = int(str(err))
        except ValueError:
            pivot = None
        raise IndefiniteMatrixError(
            f"Cholesky factorization failed at column {pivot}",
            pivot_index=pivot) from err

    def solve(rhs: np.ndarray) -> np.ndarray:
        x = _cvxmatrix(rhs)
        _cholmod.solve(symbolic, x)
        return np.asarray(x).ravel()

    return solve


def spd_factor(matrix):
    """Factorize an SPD matrix; returns a solve callable.

    Assembled matrices go through sparse Cholesky with a cached symbolic
    analysis; anything else falls back to symmetric-mode LU. Both raise
    :class:`IndefiniteMatrixError` on a non-positive pivot.
    """
    if _cholmod is not None and hasattr(matrix, "pattern"):
        return _cholmod_factor(matrix)
    return _splu_spd_factor(_as_csc(matrix))


def _matvec_form(matrix):
    if hasattr(matrix, "to_csr"):
        return matrix.to_csr()
    if hasattr(matrix, "to_csc"):
        return matrix.to_csc()
    return matrix


def solve_spd(matrix, b: np.ndarray) -> np.ndarray:
    """Direct symmetric-positive-definite solve.

    Raises :class:`IndefiniteMatrixError` (with the offending pivot index)
    when the factorization hits a non-positive pivot. The solution is
    iteratively refined toward ||Kx - b|| <= 1e-12 (1 + ||b||).
    """
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        return np.zeros(0)
    solve = spd_factor(matrix)
    x = solve(b)
    return _refine(solve, _matvec_form(matrix), b, x)


def general_factor(matrix):
    """LU with partial pivoting; tolerates indefinite matrices."""
    mat = _as_csc(matrix)
    try:
        lu = splu(mat)
    except RuntimeError as err:
        raise IndefiniteMatrixError(f"LU factorization failed: {err}") from err
    return lu.solve


def solve_general(matrix, b: np.ndarray) -> np.ndarray:
    """Direct solve with partial pivoting; tolerates indefinite matrices."""
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        return np.zeros(0)
    solve = general_factor(matrix)
    x = solve(b)
    return _refine(solve, _matvec_form(matrix), b, x)


# ---------------------------------------------------------------------------
# Subproblem adapters
# ---------------------------------------------------------------------------

class MechanicalProblem:
    """Equilibrium residual/stiffness/energy as functions of the unknown
    displacement vector, damage frozen."""

    def __init__(self, system: System, state: State):
        self.system = system
        self.scratch = state.copy()
        self.spd = True
        self.n_residual_evals = 0
        self.n_energy_evals = 0

    def initial(self) -> np.ndarray:
        return self.scratch.u[self.system.dofs.u_unknown].copy()

    def _set(self, w: np.ndarray) -> None:
        self.scratch.u[self.system.dofs.u_unknown] = w

    def residual(self, w: np.ndarray) -> np.ndarray:
        self._set(w)
        self.n_residual_evals += 1
        return self.system.residual_u(self.scratch)

    def stiffness(self, w: np.ndarray):
        self._set(w)
        return self.system.stiffness_uu(self.scratch)

    def energy(self, w: np.ndarray) -> float:
        self._set(w)
        self.n_energy_evals += 1
        return self.system.energy(self.scratch)


class DamageProblem:
    """Damage residual/stiffness/energy at frozen displacement.

    With ``penalty`` the irreversibility term enters energy, residual, and
    stiffness; the stiffness then depends on the iterate and is
    reassembled. Without penalty it is independent of damage. The
    star-convex model with gamma_star > 0 may render the problem
    non-convex, in which case the linear solves switch to the general
    factorization.
    """

    def __init__(self, system: System, state: State, penalty: PenaltySettings | None = None):
        self.system = system
        self.scratch = state.copy()
        self.penalty = penalty
        m = system.material
        self.spd = not (m.split == "star-convex" and m.gamma_star > 0.0)
        self.n_residual_evals = 0
        self.n_energy_evals = 0

    def initial(self) -> np.ndarray:
        return self.scratch.alpha[self.system.dofs.a_unknown].copy()

    def bounds(self):
        lower = self.scratch.alpha_prev[self.system.dofs.a_unknown].copy()
        upper = np.ones_like(lower)
        return lower, upper

    def _set(self, w: np.ndarray) -> None:
        self.scratch.alpha[self.system.dofs.a_unknown] = w

    def residual(self, w: np.ndarray) -> np.ndarray:
        self._set(w)
        self.n_residual_evals += 1
        return self.system.residual_alpha(self.scratch, self.penalty)

    def stiffness(self, w: np.ndarray):
        self._set(w)
        return self.system.stiffness_alpha(self.scratch, self.penalty)

    def energy(self, w: np.ndarray) -> float:
        self._set(w)
        self.n_energy_evals += 1
        return self.system.energy(self.scratch, self.penalty)


def modified_residual(r: np.ndarray, w: np.ndarray, lower: np.ndarray,
                      upper: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Residual with infeasible-direction components zeroed at active bounds.

    ``tol`` must match the active-set classification tolerance: a component
    frozen by the active set has to be discounted here as well, otherwise a
    DOF parked within ``tol`` of its bound stalls the iteration forever.
    """
    out = r.copy()
    at_lo = w - lower <= tol
    at_hi = upper - w <= tol
    out[at_lo] = np.minimum(out[at_lo], 0.0)
    out[at_hi] = np.maximum(out[at_hi], 0.0)
    return out


def directional_derivative(problem, w: np.ndarray, dw: np.ndarray, lam: float,
                           bounds=None, bound_tol: float = 1e-8) -> float:
    """Slope of the energy along the (possibly projected) Newton ray.

    Unbounded: R(w + lam dw) . dw. With ``bounds = (lower, upper)`` the
    trial point is projected componentwise and the modified residual is
    used, so the slope accounts for the constraints.
    """
    trial = w + lam * dw
    if bounds is None:
        r = problem.residual(trial)
    else:
        lower, upper = bounds
        trial = np.clip(trial, lower, upper)
        r = modified_residual(problem.residual(trial), trial, lower, upper,
                              bound_tol)
    return float(r @ dw)


# ---------------------------------------------------------------------------
# Line searches (scalar kernels; FE problems enter through callables)
# ---------------------------------------------------------------------------

def bisection_line_search(slope, dw_norm: float, settings: LineSearchSettings,
                          slope0: float | None = None):
    """Exact line search: bisection on the slope over the bracket [0, 1].

    ``slope`` maps lam to phi'(lam); ``slope0`` may pass a precomputed
    phi'(0). Requires a descent direction. Returns ``(lam, trace)``; the
    trace records every bisection iterate with the bracket width it split,
    which halves exactly per iteration.
    """
    trace = LineSearchTrace()
    phi0 = slope(0.0) if slope0 is None else slope0
    if slope0 is None:
        trace.n_slope_evals += 1
    if not (phi0 < 0.0):
        raise NotDescentDirectionError(
            f"initial slope {phi0} is not negative; Newton direction is invalid")
    phi1 = slope(1.0)
    trace.n_slope_evals += 1
    if phi0 * phi1 >= 0.0:
        # No sign change: the minimum over (0, 1] sits at the full step.
        trace.lam = 1.0
        trace.exit_reason = "no-sign-change"
        return 1.0, trace
    # The first iterate is the full step itself; if its slope already meets
    # the tolerances (e.g. roundoff noise on a linear problem), keep it.
    if abs(phi1) / dw_norm <= settings.atol:
        trace.lam = 1.0
        trace.exit_reason = "atol"
        return 1.0, trace
    if settings.rtol is not None and abs(phi1 / phi0) <= settings.rtol:
        trace.lam = 1.0
        trace.exit_reason = "rtol"
        return 1.0, trace

    left, right = 0.0, 1.0
    phi_left = phi0
    lam_prev = 1.0
    lam = 1.0
    l_max = settings.max_iter("bisection")
    for _ in range(l_max):
        width = right - left
        lam = 0.5 * (left + right)
        phi = slope(lam)
        trace.n_slope_evals += 1
        trace.iterates.append(lam)
        trace.widths.append(width)
        if abs(phi) / dw_norm <= settings.atol:
            trace.exit_reason = "atol"
            break
        if settings.rtol is not None and abs(phi / phi0) <= settings.rtol:
            trace.exit_reason = "rtol"
            break
        if abs(lam - lam_prev) <= settings.ltol:
            trace.exit_reason = "ltol"
            break
        if phi * phi_left < 0.0:
            right = lam
        else:
            left = lam
            phi_left = phi
        lam_prev = lam
    else:
        trace.exit_reason = "l_max"
    trace.lam = lam
    return lam, trace


def backtracking_line_search(objective, phi0: float, dphi0: float,
                             settings: LineSearchSettings, variant: str):
    """Armijo backtracking: first lam in {1, 1/2, 1/4, ...} with sufficient
    decrease; after ``l_max`` failed halvings the last lam is returned with
    the failure flag set."""
    mu = settings.decrease_param(variant)
    l_max = settings.max_iter(variant)
    trace = LineSearchTrace()
    lam = 1.0
    for _ in range(l_max + 1):
        value = objective(lam)
        trace.n_objective_evals += 1
        trace.iterates.append(lam)
        if value <= phi0 + mu * lam * dphi0:
            trace.lam = lam
            trace.exit_reason = "sufficient-decrease"
            return lam, trace
        lam *= 0.5
    lam *= 2.0  # undo the final halving: report the last lam actually tried
    trace.lam = lam
    trace.failed = True
    trace.exit_reason = "max-halvings"
    return lam, trace


def _secant_fd_slopes(objective, lam, lam_prev, f_lam, f_prev, trace):
    mid = 0.5 * (lam + lam_prev)
    f_mid = objective(mid)
    trace.n_objective_evals += 1
    d = lam - lam_prev
    dphi = (3.0 * f_lam - 4.0 * f_mid + f_prev) / d
    dphi_prev = (-3.0 * f_prev + 4.0 * f_mid - f_lam) / d
    ddphi = (dphi - dphi_prev) / d
    return dphi, ddphi


def secant_line_search(settings: LineSearchSettings, variant: str,
                       objective=None, slope=None, dw_norm: float = 1.0):
    """Newton-on-lambda updates lam <- lam - phi'/phi''.

    ``secant-l2`` and ``secant-energy`` approximate both derivatives from
    three objective samples per iteration and run a fixed number of
    iterations. ``secant-cp`` evaluates the slope exactly, approximates
    only the curvature, and exits on the atol/ltol tolerances. Steps are
    clamped to (0, 1]; near-zero curvature falls back to halving.
    """
    trace = LineSearchTrace()
    l_max = settings.max_iter(variant)
    lam_prev = 0.0
    lam = 1.0
    if variant == "secant-cp":
        phi_prev = slope(lam_prev)
        trace.n_slope_evals += 1
        slope0 = phi_prev
    else:
        phi_prev = objective(lam_prev)
        trace.n_objective_evals += 1
        slope0 = None

    for _ in range(l_max):
        if abs(lam - lam_prev) < 1e-15:
            trace.exit_reason = "stationary"
            break
        if variant == "secant-cp":
            dphi = slope(lam)
            mid_slope = slope(0.5 * (lam + lam_prev))
            trace.n_slope_evals += 2
            d = lam - lam_prev
            ddphi = (3.0 * dphi - 4.0 * mid_slope + phi_prev) / d
            phi_next_prev = dphi
        else:
            f_lam = objective(lam)
            trace.n_objective_evals += 1
            dphi, ddphi = _secant_fd_slopes(objective, lam, lam_prev, f_lam,
                                            phi_prev, trace)
            phi_next_prev = f_lam
        trace.iterates.append(lam)

        if variant == "secant-cp":
            if abs(dphi) / dw_norm <= settings.atol:
                trace.exit_reason = "atol"
                break
            if settings.rtol is not None and abs(dphi / slope0) <= settings.rtol:
                trace.exit_reason = "rtol"
                break
            if abs(lam - lam_prev) <= settings.ltol:
                trace.exit_reason = "ltol"
                break

        if dphi == 0.0:
            # Exactly stationary in the sampled objective: keep this lam.
            trace.exit_reason = "stationary"
            break
        if ddphi == 0.0 or abs(ddphi) < SECANT_CURVATURE_FLOOR * abs(dphi):
            new_lam = 0.5 * lam
            trace.fallbacks += 1
        else:
            new_lam = lam - dphi / ddphi
            if new_lam > 1.0:
                new_lam = 1.0
            elif new_lam <= 0.0:
                new_lam = 0.5 * lam
                trace.fallbacks += 1
        lam_prev, phi_prev = lam, phi_next_prev
        lam = new_lam
    else:
        trace.exit_reason = "l_max"
    trace.lam = lam
    return lam, trace


def _run_linesearch(problem, w, dw, r0, spec: LineSearchSpec, bounds=None,
                    bound_tol: float = 1e-8):
    """Pick the step multiplier for one Newton iteration."""
    if spec.variant == "full":
        return 1.0, LineSearchTrace()
    dw_norm = float(np.linalg.norm(dw))
    slope0 = (float(modified_residual(r0, w, *bounds, bound_tol) @ dw)
              if bounds else float(r0 @ dw))

    def slope(lam):
        return directional_derivative(problem, w, dw, lam, bounds, bound_tol)

    if spec.variant == "bisection":
        return bisection_line_search(slope, dw_norm, spec.settings, slope0=slope0)

    if spec.variant in ("backtracking-residual", "secant-l2"):
        def objective(lam):
            trial = w + lam * dw
            if bounds is not None:
                trial = np.clip(trial, *bounds)
                r = modified_residual(problem.residual(trial), trial, *bounds,
                                      bound_tol)
            else:
                r = problem.residual(trial)
            return 0.5 * float(r @ r)
        phi0 = 0.5 * float(r0 @ r0)
        # Slope of 1/2||R||^2 at 0 along the Newton direction: since
        # K dw = -R, it equals -||R||^2 without extra assembly.
        dphi0 = -2.0 * phi0
    else:
        def objective(lam):
            trial = w + lam * dw
            if bounds is not None:
                trial = np.clip(trial, *bounds)
            return problem.energy(trial)
        phi0 = None
        dphi0 = slope0

    if spec.variant.startswith("backtracking"):
        if phi0 is None:
            phi0 = objective(0.0)
        if not (dphi0 < 0.0):
            raise NotDescentDirectionError(
                f"initial slope {dphi0} is not negative for {spec.variant}")
        return backtracking_line_search(objective, phi0, dphi0, spec.settings,
                                        spec.variant)

    if spec.variant == "secant-cp":
        return secant_line_search(spec.settings, spec.variant, slope=slope,
                                  dw_norm=dw_norm)
    return secant_line_search(spec.settings, spec.variant, objective=objective,
                              dw_norm=dw_norm)


# ---------------------------------------------------------------------------
# Newton drivers
# ---------------------------------------------------------------------------

def newton_solve(problem, w0: np.ndarray, settings: SolverSettings,
                 linesearch: LineSearchSpec = LineSearchSpec(),
                 monitor=None):
    """Newton iteration for an unconstrained subproblem.

    Runs until ||R||_2 <= tol_newton or the iteration cap; the report
    carries per-iteration residual norms, energies, and line-search
    traces. ``monitor(k, w, dw)`` is called with each iterate and its
    Newton direction before the line search (instrumentation hook).
    """
    report = NewtonReport()
    w = w0.copy()
    r = problem.residual(w)
    rnorm = float(np.linalg.norm(r))
    report.initial_residual = rnorm
    if rnorm <= settings.tol_newton:
        report.converged = True
        return w, _finalize(report, problem)

    solve = solve_spd if problem.spd else solve_general
    for k in range(settings.max_newton):
        try:
            kmat = problem.stiffness(w)
            dw = solve(kmat, -r)
        except IndefiniteMatrixError as err:
            raise IndefiniteMatrixError(
                f"linear solve failed at Newton iteration {k}: {err}",
                pivot_index=err.pivot_index) from err
        if monitor is not None:
            monitor(k, w.copy(), dw.copy())
        lam, trace = _run_linesearch(problem, w, dw, r, linesearch)
        w = w + lam * dw
        r = problem.residual(w)
        rnorm = float(np.linalg.norm(r))
        report.iterations += 1
        report.residual_history.append(rnorm)
        report.energy_history.append(problem.energy(w))
        report.linesearch_traces.append(trace)
        if rnorm <= settings.tol_newton:
            report.converged = True
            break
    else:
        report.failure = "iteration-cap"
    return w, _finalize(report, problem)


def reduced_space_newton(problem: DamageProblem, w0: np.ndarray,
                         lower: np.ndarray, upper: np.ndarray,
                         settings: SolverSettings,
                         linesearch: LineSearchSpec = LineSearchSpec(),
                         monitor=None):
    """Bound-constrained Newton with the reduced-space active-set strategy.

    DOFs sitting at a bound with a residual pushing outward form the
    active set; the Newton step solves the inactive block only, active
    components stay put, and the update is projected back into the box.
    Convergence is judged on the modified residual that ignores
    infeasible directions. The stiffness is assembled once and reused:
    without a penalty term it does not depend on the iterate.
    """
    report = NewtonReport()
    tol = settings.active_set_tol
    w = np.clip(w0, lower, upper)
    kmat = problem.stiffness(w)
    r = problem.residual(w)
    rcheck = modified_residual(r, w, lower, upper, tol)
    rnorm = float(np.linalg.norm(rcheck))
    report.initial_residual = rnorm
    if rnorm <= settings.tol_newton:
        report.converged = True
        return w, _finalize(report, problem)

    make_factor = spd_factor if problem.spd else general_factor
    # The stiffness is fixed here, so factorizations are reusable whenever
    # the active set repeats.
    factor_cache: dict[bytes, tuple] = {}
    bounds = (lower, upper)
    for j in range(settings.max_newton):
        active = (((w - lower <= tol) & (r > 0.0))
                  | ((upper - w <= tol) & (r < 0.0)))
        inactive = ~active
        dw = np.zeros_like(w)
        if inactive.any():
            try:
                key = active.tobytes()
                if key not in factor_cache:
                    sub = kmat.submatrix_csc(inactive)
                    factor_cache[key] = (make_factor(sub), sub)
                fsolve, sub = factor_cache[key]
                rhs = -r[inactive]
                dw[inactive] = _refine(fsolve, sub, rhs, fsolve(rhs))
            except IndefiniteMatrixError as err:
                raise IndefiniteMatrixError(
                    f"inactive-block solve failed at iteration {j}: {err}",
                    pivot_index=err.pivot_index) from err
        if monitor is not None:
            monitor(j, w.copy(), dw.copy())
        if linesearch.variant == "full" or not inactive.any():
            lam, trace = 1.0, LineSearchTrace()
        else:
            lam, trace = _run_linesearch(problem, w, dw, r, linesearch,
                                         bounds=bounds, bound_tol=tol)
        w = np.clip(w + lam * dw, lower, upper)
        r = problem.residual(w)
        rcheck = modified_residual(r, w, lower, upper, tol)
        rnorm = float(np.linalg.norm(rcheck))
        report.iterations += 1
        report.residual_history.append(rnorm)
        report.energy_history.append(problem.energy(w))
        report.linesearch_traces.append(trace)
        if rnorm <= settings.tol_newton:
            report.converged = True
            break
    else:
        report.failure = "iteration-cap"
    return w, _finalize(report, problem)


def _finalize(report: NewtonReport, problem) -> NewtonReport:
    report.n_residual_evals = problem.n_residual_evals
    report.n_energy_evals = problem.n_energy_evals
    return report


# ---------------------------------------------------------------------------
# Alternate minimization
# ---------------------------------------------------------------------------

@dataclass
class StaggeredRow:
    staggered_iter: int
    cum_newton_u: int
    cum_newton_alpha: int
    res_u_norm: float
    dalpha_norm: float
    energy: float
    denergy: float


@dataclass
class StaggeredPath:
    """Per-iteration accounting of one alternate-minimization loop.

    ``energy`` rows record the objective actually minimized: the penalized
    energy when irreversibility is enforced by penalty, the plain energy
    otherwise. ``outcome`` is one of ``converged``,
    ``mechanical_nonconvergence``, ``damage_nonconvergence``,
    ``staggered_cap``.
    """

    rows: list = field(default_factory=list)
    outcome: str = "converged"
    failed_report: NewtonReport | None = None

    @property
    def iterations(self) -> int:
        return len(self.rows)


def alternate_minimization(system: System, prev_state: State, load_factor: float,
                           settings: SolverSettings,
                           irreversibility: str = "reduced-space",
                           ls_u: LineSearchSpec = LineSearchSpec(variant="bisection"),
                           ls_alpha: LineSearchSpec = LineSearchSpec(),
                           penalty: PenaltySettings | None = None,
                           tol_stagger: float = 1e-6, max_stagger: int = 5000,
                           mech_monitor=None, report_sink=None):
    """One load step: alternate mechanical and damage solves to a critical point.

    Starts from the previous step's converged state with the new boundary
    values imposed, iterates mechanical-then-damage solves, and stops when
    the re-evaluated displacement residual drops below ``tol_stagger``.
    Subproblem non-convergence aborts the step with the partial path
    attached. ``report_sink(i, which, report)`` receives every subproblem
    report; ``mech_monitor(i, k, state, w, dw)`` sees every mechanical
    Newton iterate with the staggered iteration and the live state (its
    damage field is the one the solve is run at).
    """
    if irreversibility not in ("reduced-space", "penalty"):
        raise ValueError(f"unknown irreversibility method {irreversibility!r}")
    if irreversibility == "penalty" and penalty is None:
        penalty = PenaltySettings.from_material(system.material)

    state = prev_state.copy()
    state.alpha_prev = prev_state.alpha.copy()
    system.dofs.set_bc(state, load_factor)

    path = StaggeredPath()
    pen = penalty if irreversibility == "penalty" else None
    cum_u = 0
    cum_a = 0
    energy_prev = system.energy(state, pen)

    for i in range(1, max_stagger + 1):
        mech = MechanicalProblem(system, state)
        monitor = None
        if mech_monitor is not None:
            monitor = (lambda k, w, dw, _i=i:
                       mech_monitor(_i, k, state, w, dw))
        w, rep_u = newton_solve(mech, mech.initial(), settings, ls_u,
                                monitor=monitor)
        state.u[system.dofs.u_unknown] = w
        cum_u += rep_u.iterations
        if report_sink is not None:
            report_sink(i, "mechanical", rep_u)
        if not rep_u.converged:
            path.outcome = "mechanical_nonconvergence"
            path.failed_report = rep_u
            return state, path

        alpha_old = state.alpha.copy()
        dmg = DamageProblem(system, state, penalty=pen)
        if irreversibility == "reduced-space":
            lower, upper = dmg.bounds()
            a, rep_a = reduced_space_newton(dmg, dmg.initial(), lower, upper,
                                            settings, ls_alpha)
        else:
            a, rep_a = newton_solve(dmg, dmg.initial(), settings, ls_alpha)
        state.alpha[system.dofs.a_unknown] = a
        cum_a += rep_a.iterations
        if report_sink is not None:
            report_sink(i, "damage", rep_a)
        if not rep_a.converged:
            path.outcome = "damage_nonconvergence"
            path.failed_report = rep_a
            return state, path

        res_u = float(np.linalg.norm(system.residual_u(state)))
        energy = system.energy(state, pen)
        path.rows.append(StaggeredRow(
            staggered_iter=i,
            cum_newton_u=cum_u,
            cum_newton_alpha=cum_a,
            res_u_norm=res_u,
            dalpha_norm=system.dalpha_l2(state.alpha - alpha_old),
            energy=energy,
            denergy=energy_prev - energy,
        ))
        energy_prev = energy
        if res_u <= tol_stagger:
            return state, path

    path.outcome = "staggered_cap"
    return state, path
