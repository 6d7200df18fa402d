"""Built-in oracle suite behind the ``verify`` subcommand.

Each oracle recomputes a quantity through an independent route (finite
differences, partition identities, analytic minimizers) and reports the
worst error it saw. The suite is intentionally small and fast; the full
test suite is the authoritative gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bench import analytic_helpers
from .fem import DirichletSpec, System
from .material import MaterialModel, split_arrays
from .mesh import build_structured_mesh
from .solver import LineSearchSettings, bisection_line_search


@dataclass
class OracleResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _materials():
    base = dict(E0=100.0, nu0=0.3, Gc=0.1, ell=0.05)
    yield MaterialModel(split="none", **base)
    yield MaterialModel(split="voldev", **base)
    yield MaterialModel(split="spectral", **base)
    for gs in (-1.0, 0.0, 1.0, 5.0):
        yield MaterialModel(split="star-convex", gamma_star=gs, **base)


def check_split_consistency(n: int = 2000) -> OracleResult:
    rng = np.random.default_rng(1234)
    worst = 0.0
    for m in _materials():
        e = rng.uniform(-1.0, 1.0, size=(n, 3))
        batch = split_arrays(e, m, order=0)
        psi0 = m.psi0(e)
        err = np.abs(batch.psi_d + batch.psi_r - psi0) / (1.0 + np.abs(psi0))
        worst = max(worst, float(err.max()))
    return OracleResult("split partition psi_D + psi_R = psi0", worst, 1e-12)


def check_stress_fd(n: int = 40) -> OracleResult:
    rng = np.random.default_rng(987)
    worst = 0.0
    for m in _materials():
        e = rng.uniform(-1.0, 1.0, size=(n, 3))
        batch = split_arrays(e, m, order=1)
        h = 1e-6
        for j in range(3):
            ep, em = e.copy(), e.copy()
            ep[:, j] += h
            em[:, j] -= h
            fd = (split_arrays(ep, m, order=0).psi_d
                  - split_arrays(em, m, order=0).psi_d) / (2 * h)
            ref = 1.0 + np.abs(batch.sig_d[:, j]).max()
            worst = max(worst, float(np.abs(fd - batch.sig_d[:, j]).max() / ref))
    return OracleResult("stress vs finite-difference energy", worst, 1e-6)


def _test_system():
    ur, vr = 0.05, -0.04
    bc = [
        DirichletSpec("left", "ux", -ur),
        DirichletSpec("right", "ux", ur),
        DirichletSpec("bottom", "uy", -vr),
        DirichletSpec("top", "uy", vr),
        DirichletSpec("corners", "alpha", 0.0),
    ]
    m = MaterialModel(E0=100.0, nu0=0.3, Gc=0.1, ell=0.3, split="voldev")
    return System(build_structured_mesh(6, 6, 1.0, 1.0), m, bc)


def check_residual_fd() -> OracleResult:
    system = _test_system()
    rng = np.random.default_rng(55)
    state = system.new_state(load_factor=1.0)
    state.u[system.dofs.u_unknown] += rng.uniform(-0.02, 0.02, system.dofs.n_u)
    state.alpha[system.dofs.a_unknown] = rng.uniform(0.0, 0.8, system.dofs.n_alpha)
    ru = system.residual_u(state)
    ra = system.residual_alpha(state)
    h = 1e-6
    worst = 0.0
    for k in rng.choice(system.dofs.n_u, 12, replace=False):
        dof = system.dofs.u_unknown[k]
        sp, sm = state.copy(), state.copy()
        sp.u[dof] += h
        sm.u[dof] -= h
        fd = (system.energy(sp) - system.energy(sm)) / (2 * h)
        worst = max(worst, abs(fd - ru[k]) / (1.0 + abs(ru[k])))
    for k in rng.choice(system.dofs.n_alpha, 12, replace=False):
        dof = system.dofs.a_unknown[k]
        sp, sm = state.copy(), state.copy()
        sp.alpha[dof] += h
        sm.alpha[dof] -= h
        fd = (system.energy(sp) - system.energy(sm)) / (2 * h)
        worst = max(worst, abs(fd - ra[k]) / (1.0 + abs(ra[k])))
    return OracleResult("residuals vs finite-difference energy", worst, 1e-6)


def check_stiffness_fd() -> OracleResult:
    system = _test_system()
    rng = np.random.default_rng(56)
    state = system.new_state(load_factor=1.0)
    state.u[system.dofs.u_unknown] += rng.uniform(-0.02, 0.02, system.dofs.n_u)
    state.alpha[system.dofs.a_unknown] = rng.uniform(0.0, 0.8, system.dofs.n_alpha)
    kuu = system.stiffness_uu(state).to_csr().toarray()
    ka = system.stiffness_alpha(state).to_csr().toarray()
    h = 1e-6
    worst = 0.0
    ref_u = np.abs(kuu).max()
    for k in rng.choice(system.dofs.n_u, 10, replace=False):
        dof = system.dofs.u_unknown[k]
        sp, sm = state.copy(), state.copy()
        sp.u[dof] += h
        sm.u[dof] -= h
        fd = (system.residual_u(sp) - system.residual_u(sm)) / (2 * h)
        worst = max(worst, float(np.abs(fd - kuu[:, k]).max() / ref_u))
    ref_a = np.abs(ka).max()
    for k in rng.choice(system.dofs.n_alpha, 10, replace=False):
        dof = system.dofs.a_unknown[k]
        sp, sm = state.copy(), state.copy()
        sp.alpha[dof] += h
        sm.alpha[dof] -= h
        fd = (system.residual_alpha(sp) - system.residual_alpha(sm)) / (2 * h)
        worst = max(worst, float(np.abs(fd - ka[:, k]).max() / ref_a))
    return OracleResult("stiffness vs finite-difference residual", worst, 1e-5)


def check_bisection_bound() -> OracleResult:
    worst = 0.0
    profiles = [
        lambda lam: lam - 0.3,
        lambda lam: lam - 0.731,
        lambda lam: (-1.0 + 1.5 * lam) if lam < 0.37 else -0.445 + 8.0 * (lam - 0.37),
    ]
    for slope in profiles:
        lam, trace = bisection_line_search(slope, 1.0, LineSearchSettings())
        for l, it in enumerate(trace.iterates, start=1):
            excess = abs(it - lam) - 2.0**-l
            worst = max(worst, excess)
        for w0, w1 in zip(trace.widths, trace.widths[1:]):
            worst = max(worst, abs(w1 - w0 / 2.0))
    return OracleResult("bisection contraction bound", worst, 0.0)


def check_strength_helpers() -> OracleResult:
    # Reference parameters quote tensile/shear strengths of 34 and 22 MPa
    # at two significant figures.
    m = MaterialModel(E0=10000.0, nu0=0.15, Gc=0.15, ell=0.5)
    s = analytic_helpers(m)
    err = max(abs(round(s.sigma_e_plus) - 34.0), abs(round(s.tau_c) - 22.0))
    return OracleResult("strength helper closed forms", float(err), 0.0)


ORACLES = (
    check_split_consistency,
    check_stress_fd,
    check_residual_fd,
    check_stiffness_fd,
    check_bisection_bound,
    check_strength_helpers,
)


def run_verification(printer=print) -> bool:
    ok = True
    for oracle in ORACLES:
        result = oracle()
        status = "pass" if result.passed else "FAIL"
        printer(f"[{status}] {result.name}: max error {result.max_error:.3e} "
                f"(tolerance {result.tolerance:.3e})")
        ok = ok and result.passed
    return ok
