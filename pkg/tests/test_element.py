import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from psbfem.benchmarks import structured_box_mesh
from psbfem.element import (
    ElementError,
    ModalBasis,
    b_vectors,
    boundary_jacobian,
    cube_permutation,
    element_matrices,
    element_matrices_raw,
    element_report,
    face_coefficients,
    hamiltonian,
    is_scalable_cube,
    map_cube,
    mass,
    modal_decomposition,
    parent_cache,
    stiffness,
)
from psbfem.mesh import Material, Mesh, PolyhedronCell, cell_volume
from psbfem.polygon import face_basis, reference_polygon, wachspress_grad
from psbfem.testing import box_cells_mesh, random_cell

# trilinear hexahedron, k = 1, unit cube: corner i + 2j + 4k
HEX_K = np.zeros((8, 8))
HEX_M = np.zeros((8, 8))
for a in range(8):
    for b in range(8):
        da = np.array([a & 1, (a >> 1) & 1, (a >> 2) & 1])
        db = np.array([b & 1, (b >> 1) & 1, (b >> 2) & 1])
        same = int(np.sum(da == db))
        HEX_K[a, b] = {3: 1 / 3, 2: 0.0, 1: -1 / 12, 0: -1 / 12}[same]
        HEX_M[a, b] = 2.0**same / 216.0


def scaled(mesh, s=1.0, R=None, t=None):
    x = mesh.nodes * s
    if R is not None:
        x = x @ R.T
    if t is not None:
        x = x + t
    return Mesh(x, tuple(PolyhedronCell(c.faces) for c in mesh.cells))


class TestBoundaryJacobian:
    def test_unit_cube_top_face(self, unit_cube):
        cell = unit_cube.cells[0]
        X = unit_cube.face_coords(0, 1) - cell.scaling_center
        _, basis = face_basis(4, 4)
        _, det = boundary_jacobian(X, basis)
        np.testing.assert_allclose(det, 0.25, rtol=1e-14)

    def test_single_point(self, unit_cube):
        X = unit_cube.face_coords(0, 1) - 0.5
        ev = wachspress_grad(reference_polygon(4), (0.1, 0.2))
        Jb, det = boundary_jacobian(X, ev)
        assert Jb.shape == (3, 3)
        assert det == pytest.approx(np.linalg.det(Jb))

    def test_scaling_is_cubic(self, unit_cube):
        X = unit_cube.face_coords(0, 4) - 0.5
        _, basis = face_basis(4, 4)
        _, d1 = boundary_jacobian(X, basis)
        _, d2 = boundary_jacobian(2.5 * X, basis)
        np.testing.assert_allclose(d2, 2.5**3 * d1, rtol=1e-13)

    def test_reversed_face_rejected(self, unit_cube):
        X = unit_cube.face_coords(0, 1)[::-1] - 0.5
        with pytest.raises(ElementError, match="negative boundary Jacobian"):
            boundary_jacobian(X, face_basis(4, 4)[1])


class TestBVectors:
    def test_identity(self):
        b1, b2, b3 = b_vectors(np.eye(3), 1.0)
        np.testing.assert_allclose(np.column_stack([b1, b2, b3]), np.eye(3))

    def test_diagonal(self):
        b1, b2, b3 = b_vectors(2 * np.eye(3), 8.0)
        np.testing.assert_allclose(np.column_stack([b1, b2, b3]), 0.5 * np.eye(3))

    def test_inverse_reconstruction(self, rng):
        for _ in range(20):
            J = rng.normal(size=(3, 3)) + 3 * np.eye(3)
            b1, b2, b3 = b_vectors(J, np.linalg.det(J))
            assert np.max(np.abs(J @ np.column_stack([b1, b2, b3]) - np.eye(3))) < 1e-12

    def test_singular(self):
        with pytest.raises(ElementError):
            b_vectors(np.zeros((3, 3)), 0.0)


class TestFaceCoefficients:
    def test_structure(self, rng, unit_material):
        mesh = random_cell(rng, "clipped-cube")
        cell = mesh.cells[0]
        for fi in range(len(cell.faces)):
            fc = face_coefficients(mesh.face_coords(0, fi), cell.scaling_center, unit_material)
            np.testing.assert_allclose(fc.E0, fc.E0.T, atol=1e-14)
            assert np.linalg.eigvalsh(fc.E0).min() > 0
            one = np.ones(len(fc.E0))
            scale = np.abs(fc.E2).max() + np.abs(fc.E1).max()
            assert np.abs(fc.E2 @ one).max() < 1e-12 * scale
            assert np.abs(fc.E1.T @ one).max() < 1e-12 * scale

    def test_degree_four_vs_six(self, unit_cube, unit_material):
        c = unit_cube.cells[0].scaling_center
        X = unit_cube.face_coords(0, 0)
        a = face_coefficients(X, c, unit_material, 4)
        b = face_coefficients(X, c, unit_material, 6)
        for A, B in zip((a.E0, a.E1, a.E2, a.M0), (b.E0, b.E1, b.E2, b.M0)):
            np.testing.assert_allclose(A, B, rtol=1e-6, atol=1e-6 * np.abs(B).max())


class TestRawMatrices:
    def test_unit_cube_mass_total(self, unit_cube):
        mat = Material.isotropic(1.0, 2.0, 1.5)
        E0, E1, E2, M0 = element_matrices_raw(unit_cube.cells[0], unit_cube, mat)
        assert M0.sum() == pytest.approx(3 * mat.rho_c, rel=1e-13)
        np.testing.assert_allclose(E2 @ np.ones(8), 0.0, atol=1e-13)
        for A in (E0, M0):
            np.testing.assert_allclose(A, A.T, atol=1e-14)
            assert np.linalg.eigvalsh(A).min() > 0

    def test_rotation_invariance(self, rng, unit_material):
        for _ in range(5):
            mesh = random_cell(rng)
            R = Rotation.random(random_state=rng).as_matrix()
            rot = scaled(mesh, R=R, t=rng.normal(size=3))
            a = element_matrices_raw(mesh.cells[0], mesh, unit_material)
            b = element_matrices_raw(rot.cells[0], rot, unit_material)
            for A, B in zip(a, b):
                assert np.abs(A - B).max() <= 1e-10 * np.abs(A).max()


class TestHamiltonian:
    def test_spectrum_symmetry_and_constant_mode(self, rng, unit_material):
        mesh = random_cell(rng, "prism")
        E0, E1, E2, _ = element_matrices_raw(mesh.cells[0], mesh, unit_material)
        Z = hamiltonian(E0, E1, E2)
        lam = np.sort_complex(np.linalg.eigvals(Z))
        np.testing.assert_allclose(lam, np.sort_complex(-lam), atol=1e-8 * np.abs(lam).max())
        n = len(E0)
        v = np.concatenate([np.ones(n), np.zeros(n)])
        np.testing.assert_allclose(Z @ v, 0.5 * v, atol=1e-10)

    def test_matches_block_formula(self, unit_cube, unit_material):
        E0, E1, E2, _ = element_matrices_raw(unit_cube.cells[0], unit_cube, unit_material)
        P = np.linalg.inv(E0)
        I = np.eye(8)
        ref = np.block([[-P @ E1.T + 0.5 * I, P], [E2 - E1 @ P @ E1.T, E1 @ P - 0.5 * I]])
        np.testing.assert_allclose(hamiltonian(E0, E1, E2), ref, atol=1e-12)

    def test_deterministic(self, unit_cube, unit_material):
        raw = element_matrices_raw(unit_cube.cells[0], unit_cube, unit_material)
        raw2 = element_matrices_raw(unit_cube.cells[0], unit_cube, unit_material)
        assert np.array_equal(hamiltonian(*raw[:3]), hamiltonian(*raw2[:3]))

    def test_ill_conditioned(self):
        E0 = np.diag([1.0, 1e-14])
        with pytest.raises(ElementError, match="ill-conditioned E0"):
            hamiltonian(E0, np.zeros((2, 2)), np.zeros((2, 2)))


class TestModal:
    def test_unit_cube_spectrum(self, unit_cube, unit_material):
        E0, E1, E2, _ = element_matrices_raw(unit_cube.cells[0], unit_cube, unit_material)
        basis = modal_decomposition(hamiltonian(E0, E1, E2))
        np.testing.assert_allclose(basis.lambda_plus.imag, 0.0, atol=1e-10)
        np.testing.assert_allclose(basis.lambda_plus.real, [0.5, 1.5, 1.5, 1.5, 2.5, 2.5, 2.5, 3.5], atol=1e-9)
        assert basis.lambda_plus.real.min() == pytest.approx(0.5, abs=1e-10)

    def test_constant_mode_and_conjugates(self, rng, unit_material):
        for _ in range(10):
            mesh = random_cell(rng)
            E0, E1, E2, _ = element_matrices_raw(mesh.cells[0], mesh, unit_material)
            lam = modal_decomposition(hamiltonian(E0, E1, E2)).lambda_plus
            assert np.min(np.abs(lam - 0.5)) < 1e-8
            cplx = lam[np.abs(lam.imag) > 1e-9]
            for z in cplx:
                assert np.min(np.abs(cplx - np.conj(z))) < 1e-8

    def test_sorted(self, rng, unit_material):
        mesh = random_cell(rng, "convex")
        E0, E1, E2, _ = element_matrices_raw(mesh.cells[0], mesh, unit_material)
        lam = modal_decomposition(hamiltonian(E0, E1, E2)).lambda_plus
        assert np.all(np.diff(lam.real) >= -1e-12)

    def test_unbalanced(self):
        with pytest.raises(ElementError, match="unbalanced spectrum"):
            modal_decomposition(np.zeros((4, 4)))

    def test_near_defective(self):
        Z = np.array([[1.0, 1.0, 0, 0], [0, 1.0, 0, 0], [0, 0, -1.0, 0], [0, 0, 1.0, -1.0]])
        with pytest.raises(ElementError, match="near-defective"):
            modal_decomposition(Z)


class TestStiffnessMass:
    def test_unit_cube_equals_trilinear(self, unit_cube, unit_material):
        em = element_matrices(unit_cube.cells[0], unit_cube, unit_material)
        np.testing.assert_allclose(em.K, HEX_K, atol=1e-12)
        np.testing.assert_allclose(em.M, HEX_M, atol=1e-12)
        assert em.M.sum() == pytest.approx(1.0, rel=1e-13)

    def test_null_space_and_definiteness(self, rng, unit_material):
        for _ in range(10):
            mesh = random_cell(rng)
            em = element_matrices(mesh.cells[0], mesh, unit_material)
            one = np.ones(len(em.K))
            assert np.abs(em.K @ one).max() < 1e-9 * np.abs(em.K).max()
            ev = np.linalg.eigvalsh(em.K)
            assert ev.min() > -1e-10 * ev.max()
            assert np.sum(ev > 1e-8 * ev.max()) == len(ev) - 1
            assert np.linalg.eigvalsh(em.M).min() > 0

    def test_scale_laws(self, rng):
        mat = Material.isotropic(1.7, 2.0, 0.6)
        for _ in range(5):
            mesh = random_cell(rng)
            s = rng.uniform(0.2, 5.0)
            a = element_matrices(mesh.cells[0], mesh, mat)
            big = scaled(mesh, s)
            b = element_matrices(big.cells[0], big, mat)
            assert np.abs(b.K - s * a.K).max() <= 1e-10 * np.abs(s * a.K).max()
            assert np.abs(b.M - s**3 * a.M).max() <= 1e-10 * np.abs(s**3 * a.M).max()

    def test_mass_vs_brute_force_volume_quadrature(self, rng):
        mat = Material.isotropic(1.0, 1.3, 0.9)
        mesh = random_cell(rng, "clipped-cube")
        cell = mesh.cells[0]
        E0, E1, E2, M0 = element_matrices_raw(cell, mesh, mat)
        basis = modal_decomposition(hamiltonian(E0, E1, E2))
        M = mass(basis, M0)
        lam, Phi = basis.lambda_plus, basis.Phi_h1
        C = np.linalg.inv(Phi)  # column j: modal coefficients of boundary field e_j
        xi, wx = np.polynomial.legendre.leggauss(50)
        xi, wx = 0.5 * (xi + 1), 0.5 * wx
        brute = np.zeros_like(M, dtype=complex)
        for f, loc in zip(cell.faces, cell.local_faces()):
            rule, ev = face_basis(len(f), 4)
            X = mesh.nodes[list(f)] - cell.scaling_center
            _, det = boundary_jacobian(X, ev)
            for r, wr in zip(xi, wx):
                # u(xi, s) = N(s) Phi[loc] diag(xi^(lam - 0.5)) C
                U = ev.N @ Phi[loc] @ (r ** (lam - 0.5)[:, None] * C)
                brute += mat.rho_c * wr * r**2 * np.einsum("q,qi,qj->ij", rule.weights * det, U, U)
        np.testing.assert_allclose(M, brute.real, atol=1e-4 * np.abs(M).max())

    def test_mass_total_on_quad_faces(self, rng):
        mat = Material.isotropic(1.0, 2.0, 2.0)
        mesh = random_cell(rng, "box")
        em = element_matrices(mesh.cells[0], mesh, mat)
        assert em.M.sum() == pytest.approx(mat.rho_c * cell_volume(mesh.cells[0], mesh), rel=1e-12)

    def test_non_real_stiffness(self):
        basis = ModalBasis(np.ones(2, complex), np.eye(2, dtype=complex), 1j * np.eye(2), 1.0)
        with pytest.raises(ElementError, match="non-real stiffness"):
            stiffness(basis)

    def test_invalid_exponent(self):
        basis = ModalBasis(np.array([-2.0, 1.0], complex), np.eye(2, dtype=complex), np.eye(2, dtype=complex), 1.0)
        with pytest.raises(ElementError, match="invalid modal exponent"):
            mass(basis, np.eye(2))

    def test_error_names_cell(self):
        err = ElementError("non-real mass", 7)
        assert str(err) == "cell 7: non-real mass" and err.reason == "non-real mass" and err.cell == 7


class TestParentCache:
    def test_cube_detection(self):
        mesh = structured_box_mesh((1.0, 0.5, 0.75), 0.25)
        assert all(is_scalable_cube(c, mesh) == pytest.approx(0.25) for c in mesh.cells)

    def test_rotated_cube_not_scalable(self, unit_cube):
        R = Rotation.from_euler("z", 45, degrees=True).as_matrix()
        assert is_scalable_cube(unit_cube.cells[0], scaled(unit_cube, R=R)) is None

    def test_box_not_scalable(self):
        mesh = structured_box_mesh((1.0, 1.0, 1.0), 1.0)
        stretched = Mesh(mesh.nodes * [1, 1, 2], mesh.cells)
        assert is_scalable_cube(stretched.cells[0], stretched) is None

    def test_hanging_node_cube_not_scalable(self):
        boxes = [((0, 0, 0), 1.0)] + [((1 + i * 0.5, j * 0.5, k * 0.5), 0.5) for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        mesh = box_cells_mesh(boxes)
        assert is_scalable_cube(mesh.cells[0], mesh) is None
        assert all(is_scalable_cube(c, mesh) == pytest.approx(0.5) for c in mesh.cells[1:])

    def test_map_cube_examples(self):
        cache = parent_cache(4)
        em = map_cube(cache, Material.isotropic(2.0, 1.0, 1.0), 0.5)
        np.testing.assert_array_equal(em.K, cache.K_par)
        em = map_cube(cache, Material.isotropic(1.0, 4.0, 1.0), 0.5)
        np.testing.assert_allclose(em.M, 0.5 * cache.M_par, rtol=1e-15)

    def test_map_cube_rejects(self):
        with pytest.raises(ValueError):
            map_cube(parent_cache(4), Material(1.0, 2.0, 1.0), 1.0)
        with pytest.raises(ValueError):
            map_cube(parent_cache(4), Material.isotropic(1.0), 0.0)

    @pytest.mark.parametrize("degree", [2, 4, 6])
    def test_equals_full_pipeline(self, rng, degree):
        for _ in range(5):
            L = rng.uniform(0.05, 3.0)
            mat = Material.isotropic(rng.uniform(0.1, 5), rng.uniform(0.1, 5), rng.uniform(0.1, 5))
            mesh = structured_box_mesh((L, L, L), L, origin=rng.normal(size=3))
            cell = mesh.cells[0]
            full = element_matrices(cell, mesh, mat, degree)
            p = cube_permutation(cell, mesh, is_scalable_cube(cell, mesh))
            em = map_cube(parent_cache(degree), mat, L)
            K = em.K[np.ix_(p, p)]
            M = em.M[np.ix_(p, p)]
            assert np.abs(K - full.K).max() <= 1e-12 * np.abs(full.K).max()
            assert np.abs(M - full.M).max() <= 1e-12 * np.abs(full.M).max()

    def test_cache_read_only(self):
        with pytest.raises(ValueError):
            parent_cache(4).K_par[0, 0] = 0.0


def test_element_report_lists_all_stages(unit_cube, unit_material):
    text = element_report(unit_cube.cells[0], unit_cube, unit_material, 4, 0)
    for key in ("cell 0", "E0", "E1", "E2", "M0", "K", "M", "scaling_center"):
        assert key in text
