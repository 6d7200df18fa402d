"""Discrete energy, residuals, and stiffness blocks on quad meshes.

Bilinear displacement and damage interpolation with 2x2 Gauss quadrature.
The assembled objects are the pieces the staggered solver needs:

* total energy  E = sum_e sum_qp w detJ [ a(alpha) psi_D + psi_R
  + (Gc/c_w)(w(alpha)/ell + ell |grad alpha|^2) ]  (optionally penalized),
* its exact gradients R_u, R_alpha restricted to unknown DOFs,
* its exact Hessian blocks K_uu, K_alpha-alpha as symmetric sparse
  matrices. The coupling blocks are never formed; the staggered scheme
  does not use them.

Dirichlet constraints are handled by row/column elimination: full-length
state vectors carry the prescribed values, assembly produces reduced
vectors/matrices over the unknown DOFs only, which keeps the blocks
positive definite for the convex splits.

Determinism: the sparsity pattern is frozen at first assembly and scatter
is performed in element order, so repeated assemblies of the same state
are bitwise identical. Setting ``PFF_THREADS`` > 1 evaluates element
batches concurrently but merges them in index order, preserving bitwise
reproducibility.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, ConfigError
from .material import MaterialModel, split_arrays
from .mesh import GAUSS_POINTS, Mesh, shape_functions, shape_gradients

FIELDS = ("ux", "uy", "alpha")


@dataclass(frozen=True)
class DirichletSpec:
    """One boundary condition: pin ``field`` on ``node_set`` to ``value``.

    Displacement values ramp with the load factor; damage values are held
    fixed (they pin the phase field, e.g. to zero at selected nodes).
    """

    node_set: str
    field: str
    value: float

    def __post_init__(self):
        if self.field not in FIELDS:
            raise ConfigError(f"unknown DOF field {self.field!r}; use ux, uy or alpha")


@dataclass
class State:
    """Full-length solution vectors; Dirichlet entries carry their values."""

    u: np.ndarray
    alpha: np.ndarray
    alpha_prev: np.ndarray

    def copy(self) -> "State":
        return State(self.u.copy(), self.alpha.copy(), self.alpha_prev.copy())


class SparseSymMatrix:
    """Symmetric matrix stored as the upper triangle on a frozen pattern."""

    def __init__(self, pattern: "_SymPattern", data: np.ndarray):
        self.pattern = pattern
        self.data = data

    @property
    def shape(self):
        n = self.pattern.n
        return (n, n)

    def to_csr(self) -> sp.csr_matrix:
        p = self.pattern
        return sp.csr_matrix((self.data[p.full_src], p.full_indices, p.full_indptr),
                             shape=self.shape)

    def to_csc(self) -> sp.csc_matrix:
        return self.to_csr().tocsc()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_csr() @ x

    def diagonal(self) -> np.ndarray:
        return self.to_csr().diagonal()

    def submatrix_csc(self, mask: np.ndarray) -> sp.csc_matrix:
        """Principal submatrix over the True entries of ``mask``."""
        csr = self.to_csr()
        return csr[mask][:, mask].tocsc()


class _SymPattern:
    """Precomputed scatter maps from element matrices to the triangle."""

    def __init__(self, edofs_red: np.ndarray, n: int):
        self.n = n
        k = edofs_red.shape[1]
        rows = np.repeat(edofs_red, k, axis=1).ravel()
        cols = np.tile(edofs_red, (1, k)).ravel()
        keep = (rows >= 0) & (cols >= 0) & (rows <= cols)
        self.kept_flat = np.nonzero(keep)[0]
        ri, ci = rows[self.kept_flat], cols[self.kept_flat]
        keys = ri.astype(np.int64) * n + ci
        unique_keys, self.slots = np.unique(keys, return_inverse=True)
        self.nnz = len(unique_keys)
        tri_rows = (unique_keys // n).astype(np.int64)
        tri_cols = (unique_keys % n).astype(np.int64)
        off = tri_rows != tri_cols
        full_rows = np.concatenate([tri_rows, tri_cols[off]])
        full_cols = np.concatenate([tri_cols, tri_rows[off]])
        src = np.concatenate([np.arange(self.nnz), np.nonzero(off)[0]])
        order = np.lexsort((full_cols, full_rows))
        self.full_src = src[order]
        self.full_indices = full_cols[order].astype(np.int32)
        self.full_indptr = np.zeros(n + 1, dtype=np.int32)
        np.add.at(self.full_indptr, full_rows[order] + 1, 1)
        self.full_indptr = np.cumsum(self.full_indptr, dtype=np.int32)
        # Column-major (CSC) view of the same entries, for factorization
        # backends that want triplets in compressed-column order.
        csc_order = np.lexsort((full_rows, full_cols))
        self.csc_rows = full_rows[csc_order]
        self.csc_cols = full_cols[csc_order]
        self.csc_src = src[csc_order]
        # Lazily populated by the linear-solver layer.
        self.factor_workspace = None

    def assemble(self, element_values: np.ndarray) -> SparseSymMatrix:
        vals = element_values.reshape(element_values.shape[0], -1).ravel()
        data = np.bincount(self.slots, weights=vals[self.kept_flat],
                           minlength=self.nnz)
        return SparseSymMatrix(self, data)


class DofMap:
    """Unknown/known DOF bookkeeping for both fields."""

    def __init__(self, mesh: Mesh, bc: list[DirichletSpec]):
        n = mesh.n_nodes
        self.bc = list(bc)
        u_fixed = np.zeros(2 * n, dtype=bool)
        a_fixed = np.zeros(n, dtype=bool)
        self._u_entries = []
        self._a_entries = []
        for spec in self.bc:
            nodes = mesh.node_set(spec.node_set)
            if spec.field == "alpha":
                a_fixed[nodes] = True
                self._a_entries.append((nodes, spec.value))
            else:
                comp = 0 if spec.field == "ux" else 1
                dofs = 2 * nodes + comp
                u_fixed[dofs] = True
                self._u_entries.append((dofs, spec.value))
        self.u_unknown = np.nonzero(~u_fixed)[0]
        self.a_unknown = np.nonzero(~a_fixed)[0]
        self.u_full2red = np.full(2 * n, -1, dtype=np.int64)
        self.u_full2red[self.u_unknown] = np.arange(len(self.u_unknown))
        self.a_full2red = np.full(n, -1, dtype=np.int64)
        self.a_full2red[self.a_unknown] = np.arange(len(self.a_unknown))

    @property
    def n_u(self) -> int:
        return len(self.u_unknown)

    @property
    def n_alpha(self) -> int:
        return len(self.a_unknown)

    def set_bc(self, state: State, load_factor: float) -> None:
        """Impose constrained values: displacements scaled, damage as given."""
        for dofs, value in self._u_entries:
            state.u[dofs] = load_factor * value
        for nodes, value in self._a_entries:
            state.alpha[nodes] = value


def _thread_count() -> int:
    raw = os.environ.get("PFF_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class System:
    """Mesh + material + boundary conditions, with assembly routines.

    Immutable inputs are shared; a System instance may be used by several
    solve sessions as long as each session owns its own State.
    """

    def __init__(self, mesh: Mesh, material: MaterialModel, bc: list[DirichletSpec]):
        self.mesh = mesh
        self.material = material
        self.dofs = DofMap(mesh, bc)

        dn_ref = shape_gradients(GAUSS_POINTS)  # (4qp, 4n, 2)
        self.shape_qp = shape_functions(GAUSS_POINTS)  # (4qp, 4n)
        xe = mesh.coords[mesh.quads]
        jac = np.einsum("qnj,eni->eqij", dn_ref, xe)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        inv = np.empty_like(jac)
        inv[..., 0, 0] = jac[..., 1, 1] / det
        inv[..., 1, 1] = jac[..., 0, 0] / det
        inv[..., 0, 1] = -jac[..., 0, 1] / det
        inv[..., 1, 0] = -jac[..., 1, 0] / det
        # dN/dx_k = dN/dxi_j * dxi_j/dx_k; inv rows are dxi/dx.
        self.dndx = np.einsum("qnj,eqjk->eqnk", dn_ref, inv)
        self.wdetj = det  # unit Gauss weights

        nelem = mesh.n_elements
        self.b_u = np.zeros((nelem, 4, 3, 8))
        self.b_u[:, :, 0, 0::2] = self.dndx[..., 0]
        self.b_u[:, :, 1, 1::2] = self.dndx[..., 1]
        self.b_u[:, :, 2, 0::2] = self.dndx[..., 1]
        self.b_u[:, :, 2, 1::2] = self.dndx[..., 0]

        self.udofs = np.empty((nelem, 8), dtype=np.int64)
        self.udofs[:, 0::2] = 2 * mesh.quads
        self.udofs[:, 1::2] = 2 * mesh.quads + 1
        self.adofs = mesh.quads

        self._pattern_u = _SymPattern(self.dofs.u_full2red[self.udofs], self.dofs.n_u)
        self._pattern_a = _SymPattern(self.dofs.a_full2red[self.adofs], self.dofs.n_alpha)

    # -- field evaluation ---------------------------------------------------

    def new_state(self, load_factor: float = 0.0) -> State:
        n = self.mesh.n_nodes
        state = State(np.zeros(2 * n), np.zeros(n), np.zeros(n))
        self.dofs.set_bc(state, load_factor)
        return state

    def strains(self, u: np.ndarray, elems=slice(None)) -> np.ndarray:
        ue = u[self.udofs[elems]]
        return np.einsum("eqij,ej->eqi", self.b_u[elems], ue)

    def alpha_at_qp(self, alpha: np.ndarray, elems=slice(None)) -> np.ndarray:
        return alpha[self.adofs[elems]] @ self.shape_qp.T

    def grad_alpha(self, alpha: np.ndarray, elems=slice(None)) -> np.ndarray:
        ae = alpha[self.adofs[elems]]
        return np.einsum("eqnd,en->eqd", self.dndx[elems], ae)

    def _fracture_coeffs(self):
        m = self.material
        return m.Gc / (m.c_w * m.ell), 2.0 * m.Gc * m.ell / m.c_w

    def _map_elements(self, fn):
        """Evaluate per-element quantities, optionally in parallel batches.

        ``fn`` maps an element slice to an array whose first axis is the
        batch; results are concatenated in index order so the outcome is
        independent of the thread count.
        """
        nelem = self.mesh.n_elements
        nthreads = _thread_count()
        if nthreads <= 1 or nelem < 2 * nthreads:
            return fn(slice(None))
        bounds = np.linspace(0, nelem, nthreads + 1, dtype=int)
        chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(fn, chunks))
        return np.concatenate(parts, axis=0)

    # -- energy and gradients -------------------------------------------------

    def energy(self, state: State, penalty=None) -> float:
        m = self.material
        w_coef, g_coef = self._fracture_coeffs()

        def chunk(elems):
            e = self.strains(state.u, elems)
            a_qp = self.alpha_at_qp(state.alpha, elems)
            ga = self.grad_alpha(state.alpha, elems)
            batch = split_arrays(e, m, order=0)
            deg = (1.0 - a_qp) ** 2 + m.a0
            w_alpha = a_qp if m.dissipation == "AT1" else a_qp**2
            density = (deg * batch.psi_d + batch.psi_r
                       + w_coef * w_alpha + 0.5 * g_coef * (ga**2).sum(axis=-1))
            if penalty is not None:
                gap = a_qp - self.alpha_at_qp(state.alpha_prev, elems)
                density += 0.5 * penalty.epsilon * np.minimum(gap, 0.0) ** 2
            return (self.wdetj[elems] * density).sum(axis=1)

        per_element = self._map_elements(chunk)
        if not np.all(np.isfinite(per_element)):
            bad = int(np.nonzero(~np.isfinite(per_element))[0][0])
            raise AssemblyError(f"non-finite energy in element {bad}", element=bad)
        return float(per_element.sum())

    def residual_u_full(self, state: State) -> np.ndarray:
        m = self.material

        def chunk(elems):
            e = self.strains(state.u, elems)
            a_qp = self.alpha_at_qp(state.alpha, elems)
            batch = split_arrays(e, m, order=1)
            deg = (1.0 - a_qp) ** 2 + m.a0
            sig = deg[..., None] * batch.sig_d + batch.sig_r
            sig *= self.wdetj[elems][..., None]
            bt = np.swapaxes(self.b_u[elems], -1, -2)
            return (bt @ sig[..., None])[..., 0].sum(axis=1)

        fe = self._map_elements(chunk)
        return np.bincount(self.udofs.ravel(), weights=fe.ravel(),
                           minlength=2 * self.mesh.n_nodes)

    def residual_u(self, state: State) -> np.ndarray:
        r = self.residual_u_full(state)[self.dofs.u_unknown]
        self._check_finite(r, "displacement residual")
        return r

    def residual_alpha_full(self, state: State, penalty=None) -> np.ndarray:
        m = self.material
        w_coef, g_coef = self._fracture_coeffs()

        def chunk(elems):
            e = self.strains(state.u, elems)
            a_qp = self.alpha_at_qp(state.alpha, elems)
            ga = self.grad_alpha(state.alpha, elems)
            psi_d = split_arrays(e, m, order=0).psi_d
            dw = np.ones_like(a_qp) if m.dissipation == "AT1" else 2.0 * a_qp
            s = -2.0 * (1.0 - a_qp) * psi_d + w_coef * dw
            if penalty is not None:
                gap = a_qp - self.alpha_at_qp(state.alpha_prev, elems)
                s += penalty.epsilon * np.minimum(gap, 0.0)
            w = self.wdetj[elems]
            fe = np.einsum("eq,qn->en", w * s, self.shape_qp)
            fe += g_coef * np.einsum("eq,eqnd,eqd->en", w, self.dndx[elems], ga)
            return fe

        fe = self._map_elements(chunk)
        return np.bincount(self.adofs.ravel(), weights=fe.ravel(),
                           minlength=self.mesh.n_nodes)

    def residual_alpha(self, state: State, penalty=None) -> np.ndarray:
        r = self.residual_alpha_full(state, penalty)[self.dofs.a_unknown]
        self._check_finite(r, "damage residual")
        return r

    def _check_finite(self, vec: np.ndarray, label: str) -> None:
        if not np.all(np.isfinite(vec)):
            bad = int(np.nonzero(~np.isfinite(vec))[0][0])
            raise AssemblyError(f"non-finite {label} entry at reduced DOF {bad}",
                                dof=bad)

    # -- stiffness blocks -----------------------------------------------------

    def stiffness_uu(self, state: State) -> SparseSymMatrix:
        m = self.material

        def chunk(elems):
            e = self.strains(state.u, elems)
            a_qp = self.alpha_at_qp(state.alpha, elems)
            batch = split_arrays(e, m, order=2)
            deg = (1.0 - a_qp) ** 2 + m.a0
            cc = deg[..., None, None] * batch.cc_d + batch.cc_r
            b = self.b_u[elems]
            cb = cc @ b
            cb *= self.wdetj[elems][..., None, None]
            return (np.swapaxes(b, -1, -2) @ cb).sum(axis=1)

        ke = self._map_elements(chunk)
        return self._pattern_u.assemble(ke)

    def stiffness_alpha(self, state: State, penalty=None) -> SparseSymMatrix:
        m = self.material
        w_coef, g_coef = self._fracture_coeffs()
        ddw = 0.0 if m.dissipation == "AT1" else 2.0

        def chunk(elems):
            e = self.strains(state.u, elems)
            psi_d = split_arrays(e, m, order=0).psi_d
            c0 = 2.0 * psi_d + w_coef * ddw
            if penalty is not None:
                a_qp = self.alpha_at_qp(state.alpha, elems)
                gap = a_qp - self.alpha_at_qp(state.alpha_prev, elems)
                c0 = c0 + penalty.epsilon * (gap < 0.0)
            w = self.wdetj[elems]
            nn = self.shape_qp[:, :, None] * self.shape_qp[:, None, :]
            ke = np.einsum("eq,qmn->emn", w * c0, nn)
            dn = self.dndx[elems]
            ke += g_coef * ((w[..., None, None] * dn) @ np.swapaxes(dn, -1, -2)
                            ).sum(axis=1)
            return ke

        ke = self._map_elements(chunk)
        return self._pattern_a.assemble(ke)

    # -- derived quantities -----------------------------------------------------

    def reaction(self, state: State, node_set: str, component: int) -> float:
        """Reaction force: sum of full-space residual entries on a node set."""
        nodes = self.mesh.node_set(node_set)
        full = self.residual_u_full(state)
        return float(full[2 * nodes + component].sum())

    def max_psi_d(self, state: State) -> float:
        """Largest degradable energy density over all quadrature points."""
        e = self.strains(state.u)
        return float(split_arrays(e, self.material, order=0).psi_d.max())

    def dalpha_l2(self, dalpha: np.ndarray) -> float:
        """Continuous L2 norm of a damage increment field."""
        v = self.alpha_at_qp(dalpha)
        return float(np.sqrt((self.wdetj * v**2).sum()))

    def quadrature_area(self) -> float:
        return float(self.wdetj.sum())
