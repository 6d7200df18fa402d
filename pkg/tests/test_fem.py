"""Mesh handling and assembly tests, mostly against finite-difference oracles."""

import os

import numpy as np
import pytest

from pffrac.errors import AssemblyError, ConfigError, MeshFormatError
from pffrac.fem import DirichletSpec, State, System
from pffrac.material import MaterialModel
from pffrac.mesh import Mesh, build_structured_mesh, read_mesh, write_mesh


def make_material(split="voldev", **kw):
    base = dict(E0=100.0, nu0=0.3, Gc=0.1, ell=0.05, split=split)
    base.update(kw)
    return MaterialModel(**base)


class FakePenalty:
    def __init__(self, epsilon):
        self.epsilon = epsilon


def nucleation_bc():
    return [
        DirichletSpec("left", "ux", -0.0766),
        DirichletSpec("right", "ux", 0.0766),
        DirichletSpec("bottom", "uy", 0.0643),
        DirichletSpec("top", "uy", -0.0643),
        DirichletSpec("corners", "alpha", 0.0),
    ]


def random_state(system, rng, u_scale=0.05, alpha_max=0.9):
    state = system.new_state(load_factor=1.0)
    state.u[system.dofs.u_unknown] += rng.uniform(-u_scale, u_scale,
                                                  size=system.dofs.n_u)
    a = rng.uniform(0.0, alpha_max, size=system.dofs.n_alpha)
    state.alpha[system.dofs.a_unknown] = a
    state.alpha_prev = state.alpha * rng.uniform(0.0, 1.0, size=len(state.alpha))
    return state


class TestStructuredMesh:
    def test_counts_2x2(self):
        mesh = build_structured_mesh(2, 2, 1.0, 1.0)
        assert mesh.n_nodes == 9
        assert mesh.n_elements == 4

    def test_counts_10x10(self):
        mesh = build_structured_mesh(10, 10, 1.0, 1.0)
        assert mesh.n_nodes == 121
        assert mesh.n_elements == 100

    def test_zero_counts_rejected(self):
        with pytest.raises(ConfigError):
            build_structured_mesh(0, 2, 1.0, 1.0)

    @pytest.mark.parametrize("n", [1, 3, 7])
    def test_quadrature_area(self, n):
        mesh = build_structured_mesh(n, n, 1.0, 1.0)
        system = System(mesh, make_material(), [])
        assert abs(system.quadrature_area() - 1.0) < 1e-14

    def test_edge_sets(self):
        mesh = build_structured_mesh(3, 2, 3.0, 2.0)
        assert len(mesh.node_sets["left"]) == 3
        assert len(mesh.node_sets["top"]) == 4
        assert len(mesh.node_sets["corners"]) == 4
        np.testing.assert_array_equal(mesh.coords[mesh.node_sets["right"], 0], 3.0)

    def test_negative_jacobian_rejected(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(MeshFormatError):
            Mesh(coords, np.array([[0, 3, 2, 1]]))  # clockwise

    def test_bad_node_set_rejected(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(MeshFormatError):
            Mesh(coords, np.array([[0, 1, 2, 3]]), {"s": np.array([0, 0])})


class TestMeshIO:
    def test_round_trip(self, tmp_path):
        mesh = build_structured_mesh(3, 4, 2.0, 1.0)
        path = tmp_path / "grid.pfmesh"
        write_mesh(mesh, path)
        again = read_mesh(path)
        np.testing.assert_array_equal(mesh.coords, again.coords)
        np.testing.assert_array_equal(mesh.quads, again.quads)
        assert set(mesh.node_sets) == set(again.node_sets)
        for name in mesh.node_sets:
            np.testing.assert_array_equal(mesh.node_sets[name], again.node_sets[name])

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.pfmesh"
        path.write_text("MESH 1\nnodes 0\nquads 0\n")
        with pytest.raises(MeshFormatError):
            read_mesh(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.pfmesh"
        path.write_text("PFMESH 1\nnodes 2\n0 0\n")
        with pytest.raises(MeshFormatError):
            read_mesh(path)


class TestEnergy:
    def test_zero_state(self):
        system = System(build_structured_mesh(4, 4, 1.0, 1.0), make_material(), [])
        assert system.energy(system.new_state()) == 0.0

    def test_uniform_strain_matches_analytic(self):
        # Affine displacement gives a uniform strain; at alpha = 0 the energy
        # is ((1 + a0) psi_D + psi_R) * area, which approaches psi0 * area as
        # the residual stiffness a0 vanishes.
        from pffrac.material import split_arrays

        exx, eyy, exy = 0.02, -0.01, 0.005
        mesh = build_structured_mesh(5, 5, 1.0, 1.0)
        for a0, tol in ((1e-30, 1e-12), (1e-6, 1e-12)):
            m = make_material(a0=a0)
            system = System(mesh, m, [])
            state = system.new_state()
            x, y = mesh.coords[:, 0], mesh.coords[:, 1]
            state.u[0::2] = exx * x + exy * y
            state.u[1::2] = exy * x + eyy * y
            e = np.array([[exx, eyy, 2 * exy]])
            batch = split_arrays(e, m, order=0)
            expected = float((1.0 + a0) * batch.psi_d[0] + batch.psi_r[0])
            assert system.energy(state) == pytest.approx(expected, rel=tol)
            if a0 == 1e-30:
                psi0 = float(m.psi0(e)[0])
                assert system.energy(state) == pytest.approx(psi0, rel=1e-12)

    def test_uniform_damage_at1(self):
        m = make_material()
        system = System(build_structured_mesh(6, 6, 1.0, 1.0), m, [])
        state = system.new_state()
        abar = 0.37
        state.alpha[:] = abar
        expected = 3.0 * m.Gc / 8.0 * abar / m.ell
        assert system.energy(state) == pytest.approx(expected, rel=1e-13)

    def test_penalty_term(self):
        m = make_material()
        system = System(build_structured_mesh(4, 4, 1.0, 1.0), m, [])
        state = system.new_state()
        state.alpha_prev[:] = 0.5
        state.alpha[:] = 0.3  # uniform violation of 0.2
        pen = FakePenalty(1000.0)
        base = system.energy(state)
        assert system.energy(state, pen) == pytest.approx(
            base + 0.5 * 1000.0 * 0.2**2, rel=1e-12)

    def test_nan_reports_element(self):
        system = System(build_structured_mesh(3, 3, 1.0, 1.0), make_material(), [])
        state = system.new_state()
        state.u[2 * 5] = np.nan
        with pytest.raises(AssemblyError) as err:
            system.energy(state)
        assert err.value.element is not None


class TestResidualOracles:
    @pytest.mark.parametrize("split", ["none", "voldev", "spectral", "star-convex"])
    def test_residuals_match_energy_fd(self, split):
        m = make_material(split, gamma_star=1.0)
        mesh = build_structured_mesh(4, 4, 1.0, 1.0)
        system = System(mesh, m, nucleation_bc())
        rng = np.random.default_rng(20)
        state = random_state(system, rng)
        pen = FakePenalty(500.0)
        for penalty in (None, pen):
            ru = system.residual_u(state)
            ra = system.residual_alpha(state, penalty)
            scale = 1.0 + max(np.abs(state.u).max(), np.abs(state.alpha).max())
            h = 1e-6 * scale
            for k in rng.choice(system.dofs.n_u, size=15, replace=False):
                dof = system.dofs.u_unknown[k]
                sp = state.copy()
                sm = state.copy()
                sp.u[dof] += h
                sm.u[dof] -= h
                fd = (system.energy(sp, penalty) - system.energy(sm, penalty)) / (2 * h)
                assert fd == pytest.approx(ru[k], rel=1e-6, abs=1e-9 * scale)
            for k in rng.choice(system.dofs.n_alpha, size=15, replace=False):
                dof = system.dofs.a_unknown[k]
                sp = state.copy()
                sm = state.copy()
                sp.alpha[dof] += h
                sm.alpha[dof] -= h
                fd = (system.energy(sp, penalty) - system.energy(sm, penalty)) / (2 * h)
                assert fd == pytest.approx(ra[k], rel=1e-6, abs=1e-9 * scale)

    def test_plain_and_penalized_residual_agree_at_prev(self):
        system = System(build_structured_mesh(4, 4, 1.0, 1.0), make_material(), [])
        rng = np.random.default_rng(21)
        state = random_state(system, rng)
        state.alpha_prev = state.alpha.copy()
        plain = system.residual_alpha(state)
        pen = system.residual_alpha(state, FakePenalty(1e8))
        np.testing.assert_array_equal(plain, pen)

    def test_affine_field_is_equilibrium(self):
        # Diagonal homogeneous strains satisfy the nucleation BCs exactly and
        # are exact FE solutions, so the reduced residual vanishes.
        mesh = build_structured_mesh(6, 6, 1.0, 1.0)
        system = System(mesh, make_material(), nucleation_bc())
        state = system.new_state(load_factor=1.0)
        x, y = mesh.coords[:, 0], mesh.coords[:, 1]
        exx, eyy = 2 * 0.0766 / 1.0, -2 * 0.0643 / 1.0
        state.u[0::2] = exx * (x - 0.5)
        state.u[1::2] = eyy * (y - 0.5)
        load_scale = np.abs(system.residual_u_full(state)).max()
        assert np.abs(system.residual_u(state)).max() <= 1e-12 * load_scale

    def test_reaction_balance(self):
        mesh = build_structured_mesh(6, 6, 1.0, 1.0)
        system = System(mesh, make_material(), nucleation_bc())
        state = system.new_state(load_factor=1.0)
        x, y = mesh.coords[:, 0], mesh.coords[:, 1]
        state.u[0::2] = 2 * 0.0766 * (x - 0.5)
        state.u[1::2] = -2 * 0.0643 * (y - 0.5)
        left = system.reaction(state, "left", 0)
        right = system.reaction(state, "right", 0)
        assert left == pytest.approx(-right, rel=1e-12)
        assert left < 0.0  # tension pulls the left edge leftward


class TestStiffnessOracles:
    @pytest.mark.parametrize("split", ["voldev", "spectral"])
    def test_kuu_matches_residual_fd(self, split):
        m = make_material(split)
        system = System(build_structured_mesh(3, 3, 1.0, 1.0), m, nucleation_bc())
        rng = np.random.default_rng(22)
        state = random_state(system, rng)
        kuu = system.stiffness_uu(state).to_csr().toarray()
        scale = 1.0 + np.abs(state.u).max()
        h = 1e-6 * scale
        ref = np.abs(kuu).max()
        for k in range(system.dofs.n_u):
            dof = system.dofs.u_unknown[k]
            sp = state.copy()
            sm = state.copy()
            sp.u[dof] += h
            sm.u[dof] -= h
            fd = (system.residual_u(sp) - system.residual_u(sm)) / (2 * h)
            assert np.abs(fd - kuu[:, k]).max() / ref < 1e-5

    def test_kalpha_matches_residual_fd(self):
        m = make_material("voldev")
        system = System(build_structured_mesh(3, 3, 1.0, 1.0), m, nucleation_bc())
        rng = np.random.default_rng(23)
        state = random_state(system, rng)
        pen = FakePenalty(300.0)
        for penalty in (None, pen):
            ka = system.stiffness_alpha(state, penalty).to_csr().toarray()
            h = 1e-6
            ref = np.abs(ka).max()
            for k in range(system.dofs.n_alpha):
                dof = system.dofs.a_unknown[k]
                sp = state.copy()
                sm = state.copy()
                sp.alpha[dof] += h
                sm.alpha[dof] -= h
                fd = (system.residual_alpha(sp, penalty)
                      - system.residual_alpha(sm, penalty)) / (2 * h)
                assert np.abs(fd - ka[:, k]).max() / ref < 1e-5

    def test_kalpha_independent_of_alpha(self):
        system = System(build_structured_mesh(4, 4, 1.0, 1.0), make_material(), [])
        rng = np.random.default_rng(24)
        state1 = random_state(system, rng)
        state2 = state1.copy()
        state2.alpha = rng.uniform(0.0, 1.0, size=len(state2.alpha))
        k1 = system.stiffness_alpha(state1)
        k2 = system.stiffness_alpha(state2)
        np.testing.assert_array_equal(k1.data, k2.data)

    def test_kuu_constant_for_none_split(self):
        system = System(build_structured_mesh(4, 4, 1.0, 1.0),
                        make_material("none"), [])
        rng = np.random.default_rng(25)
        state1 = random_state(system, rng)
        state2 = state1.copy()
        state2.u = rng.uniform(-0.1, 0.1, size=len(state2.u))
        k1 = system.stiffness_uu(state1)
        k2 = system.stiffness_uu(state2)
        np.testing.assert_array_equal(k1.data, k2.data)

    def test_residual_alpha_affine(self):
        system = System(build_structured_mesh(4, 4, 1.0, 1.0), make_material(), [])
        rng = np.random.default_rng(26)
        state = random_state(system, rng)
        ka = system.stiffness_alpha(state)
        zero = state.copy()
        zero.alpha = np.zeros_like(state.alpha)
        r0 = system.residual_alpha(zero)
        predicted = ka.matvec(state.alpha[system.dofs.a_unknown]) + r0
        actual = system.residual_alpha(state)
        ref = np.abs(actual).max()
        assert np.abs(predicted - actual).max() <= 1e-12 * max(ref, 1.0)

    def test_blocks_positive_definite(self):
        for split, gs in (("none", 0.0), ("voldev", 0.0), ("spectral", 0.0),
                          ("star-convex", -0.5)):
            m = make_material(split, gamma_star=gs)
            system = System(build_structured_mesh(4, 4, 1.0, 1.0), m, nucleation_bc())
            rng = np.random.default_rng(27)
            state = random_state(system, rng)
            for mat in (system.stiffness_uu(state), system.stiffness_alpha(state)):
                eigs = np.linalg.eigvalsh(mat.to_csr().toarray())
                assert eigs.min() > 0.0


class TestTaylorConsistency:
    @pytest.mark.parametrize("field", ["u", "alpha"])
    def test_single_field_expansion(self, field):
        m = make_material("voldev")
        system = System(build_structured_mesh(4, 4, 1.0, 1.0), m, nucleation_bc())
        rng = np.random.default_rng(28)
        state = random_state(system, rng)
        e0 = system.energy(state)
        if field == "u":
            y = rng.normal(size=system.dofs.n_u)
            r = system.residual_u(state)
            k = system.stiffness_uu(state)
            unknown = system.dofs.u_unknown
        else:
            y = rng.normal(size=system.dofs.n_alpha)
            r = system.residual_alpha(state)
            k = system.stiffness_alpha(state)
            unknown = system.dofs.a_unknown
        quad = y @ k.matvec(y)
        lin = y @ r
        remainders = []
        floors = []
        for eps in (1e-2, 1e-3, 1e-4):
            trial = state.copy()
            if field == "u":
                trial.u[unknown] += eps * y
            else:
                trial.alpha[unknown] += eps * y
            rem = system.energy(trial) - e0 - eps * lin - 0.5 * eps**2 * quad
            remainders.append(abs(rem) / eps**2)
            # Cancellation floor: the energy difference is O(eps) while the
            # energies themselves are O(1).
            floors.append(64 * np.finfo(float).eps * max(abs(e0), 1.0) / eps**2)
        # o(eps^2): normalized remainder must vanish with eps until roundoff.
        assert remainders[1] < max(0.2 * remainders[0], floors[1])
        assert remainders[2] < max(0.2 * remainders[1], floors[2])


class TestDeterminism:
    def test_repeat_assembly_bitwise(self):
        system = System(build_structured_mesh(5, 5, 1.0, 1.0),
                        make_material("spectral"), nucleation_bc())
        rng = np.random.default_rng(29)
        state = random_state(system, rng)
        r1 = system.residual_u(state)
        r2 = system.residual_u(state)
        np.testing.assert_array_equal(r1, r2)
        k1 = system.stiffness_uu(state)
        k2 = system.stiffness_uu(state)
        np.testing.assert_array_equal(k1.data, k2.data)
        assert system.energy(state) == system.energy(state)

    def test_thread_count_does_not_change_bits(self):
        system = System(build_structured_mesh(5, 5, 1.0, 1.0),
                        make_material("spectral"), nucleation_bc())
        rng = np.random.default_rng(30)
        state = random_state(system, rng)
        old = os.environ.get("PFF_THREADS")
        try:
            os.environ["PFF_THREADS"] = "1"
            r1 = system.residual_u(state)
            e1 = system.energy(state)
            k1 = system.stiffness_uu(state).data.copy()
            os.environ["PFF_THREADS"] = "3"
            r3 = system.residual_u(state)
            e3 = system.energy(state)
            k3 = system.stiffness_uu(state).data.copy()
        finally:
            if old is None:
                os.environ.pop("PFF_THREADS", None)
            else:
                os.environ["PFF_THREADS"] = old
        np.testing.assert_array_equal(r1, r3)
        np.testing.assert_array_equal(k1, k3)
        assert e1 == e3


class TestDofMap:
    def test_pin_everything_leaves_interior(self):
        mesh = build_structured_mesh(4, 4, 1.0, 1.0)
        bc = [DirichletSpec(s, f, 0.0)
              for s in ("left", "right", "top", "bottom") for f in ("ux", "uy")]
        system = System(mesh, make_material(), bc)
        assert system.dofs.n_u == 2 * 3 * 3  # interior nodes only

    def test_unknown_set_name(self):
        mesh = build_structured_mesh(2, 2, 1.0, 1.0)
        with pytest.raises(ConfigError):
            System(mesh, make_material(), [DirichletSpec("nope", "ux", 0.0)])

    def test_dalpha_l2_uniform(self):
        system = System(build_structured_mesh(5, 5, 2.0, 1.0), make_material(), [])
        v = np.full(system.mesh.n_nodes, 0.3)
        assert system.dalpha_l2(v) == pytest.approx(0.3 * np.sqrt(2.0), rel=1e-13)
