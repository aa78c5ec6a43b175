import numpy as np
import pytest

from psbfem.polygon import (
    SUPPORTED_DEGREES,
    face_basis,
    polygon_quadrature,
    reference_polygon,
    triangle_rule,
    wachspress,
    wachspress_grad,
)

from conftest import polygon_monomial_integral, random_interior_points

SIZES = range(3, 13)


class TestReferencePolygon:
    def test_vertices_on_unit_circle(self):
        for n in SIZES:
            poly = reference_polygon(n)
            assert poly.vertices.shape == (n, 2)
            np.testing.assert_allclose(np.linalg.norm(poly.vertices, axis=1), 1.0, atol=1e-15)

    def test_first_vertex_and_orientation(self):
        poly = reference_polygon(5)
        np.testing.assert_allclose(poly.vertices[0], [0.0, 1.0], atol=1e-15)
        ang = np.unwrap(np.arctan2(poly.vertices[:, 1], poly.vertices[:, 0]))
        assert np.all(np.diff(ang) > 0)

    def test_area(self):
        for n in SIZES:
            assert reference_polygon(n).area == pytest.approx(0.5 * n * np.sin(2 * np.pi / n), rel=1e-14)

    @pytest.mark.parametrize("n", [0, 1, 2])
    def test_too_few_vertices(self, n):
        with pytest.raises(ValueError):
            reference_polygon(n)


class TestWachspress:
    def test_partition_of_unity_and_linear_precision(self, rng):
        for n in SIZES:
            poly = reference_polygon(n)
            p = random_interior_points(poly, rng, 100)
            N = wachspress(poly, p).N
            np.testing.assert_allclose(N.sum(axis=1), 1.0, atol=1e-13)
            np.testing.assert_allclose(N @ poly.vertices, p, atol=1e-12)
            assert np.all(N > 0)

    def test_kronecker_limit(self):
        for n in SIZES:
            poly = reference_polygon(n)
            for i, v in enumerate(poly.vertices):
                N = wachspress(poly, v * (1 - 1e-9)).N
                expected = np.zeros(n)
                expected[i] = 1.0
                np.testing.assert_allclose(N, expected, atol=1e-7)

    def test_single_point_shape(self):
        N = wachspress(reference_polygon(4), (0.1, 0.2)).N
        assert N.shape == (4,)

    def test_centroid_is_symmetric(self):
        for n in SIZES:
            np.testing.assert_allclose(wachspress(reference_polygon(n), (0.0, 0.0)).N, 1.0 / n, atol=1e-15)

    def test_linear_along_edge(self):
        poly = reference_polygon(6)
        v0, v1 = poly.vertices[0], poly.vertices[1]
        p = 0.7 * v0 + 0.3 * v1
        inward = -(v0 + v1) / np.linalg.norm(v0 + v1)
        N = wachspress(poly, p + 1e-10 * inward).N
        np.testing.assert_allclose(N[:2], [0.7, 0.3], atol=1e-8)
        np.testing.assert_allclose(N[2:], 0.0, atol=1e-8)

    @pytest.mark.parametrize("p", [(0.0, 1.5), (2.0, 2.0), (0.0, 1.0)])
    def test_outside_or_on_boundary_rejected(self, p):
        with pytest.raises(ValueError):
            wachspress(reference_polygon(4), p)

    def test_gradient_matches_finite_differences(self, rng):
        h = 1e-6
        for n in SIZES:
            poly = reference_polygon(n)
            p = random_interior_points(poly, rng, 100)
            ev = wachspress_grad(poly, p)
            fd_eta = (wachspress(poly, p + [h, 0]).N - wachspress(poly, p - [h, 0]).N) / (2 * h)
            fd_zeta = (wachspress(poly, p + [0, h]).N - wachspress(poly, p - [0, h]).N) / (2 * h)
            assert np.max(np.abs(ev.dN_deta - fd_eta)) < 1e-6
            assert np.max(np.abs(ev.dN_dzeta - fd_zeta)) < 1e-6

    def test_gradients_sum_to_zero(self, rng):
        poly = reference_polygon(7)
        ev = wachspress_grad(poly, random_interior_points(poly, rng, 50))
        np.testing.assert_allclose(ev.dN_deta.sum(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(ev.dN_dzeta.sum(axis=1), 0.0, atol=1e-12)

    def test_gradient_of_linear_reproduction(self, rng):
        # sum_i grad N_i v_i^T = I
        poly = reference_polygon(9)
        ev = wachspress_grad(poly, random_interior_points(poly, rng, 30))
        np.testing.assert_allclose(ev.dN_deta @ poly.vertices, np.tile([1.0, 0.0], (30, 1)), atol=1e-12)
        np.testing.assert_allclose(ev.dN_dzeta @ poly.vertices, np.tile([0.0, 1.0], (30, 1)), atol=1e-12)


class TestQuadrature:
    def test_square_degree_two(self):
        rule = polygon_quadrature(4, 2)
        assert len(rule.weights) == 12
        assert rule.weights.sum() == pytest.approx(2.0, rel=1e-14)

    def test_hexagon_area(self):
        assert polygon_quadrature(6, 4).weights.sum() == pytest.approx(3 * np.sqrt(3) / 2, rel=1e-14)

    def test_hexagon_eta2_zeta2(self):
        rule = polygon_quadrature(6, 4)
        got = np.sum(rule.weights * rule.points[:, 0] ** 2 * rule.points[:, 1] ** 2)
        exact = polygon_monomial_integral(reference_polygon(6).vertices, 2, 2)
        assert got == pytest.approx(exact, rel=1e-12)

    @pytest.mark.parametrize("degree", SUPPORTED_DEGREES)
    def test_monomial_exactness(self, degree):
        for n in SIZES:
            rule = polygon_quadrature(n, degree)
            verts = reference_polygon(n).vertices
            for a in range(degree + 1):
                for b in range(degree + 1 - a):
                    got = np.sum(rule.weights * rule.points[:, 0] ** a * rule.points[:, 1] ** b)
                    exact = polygon_monomial_integral(verts, a, b)
                    assert abs(got - exact) <= 1e-12 * max(abs(exact), 1.0), (n, a, b)

    @pytest.mark.parametrize("degree", SUPPORTED_DEGREES)
    def test_points_strictly_inside(self, degree):
        for n in SIZES:
            rule = polygon_quadrature(n, degree)
            # every point evaluates without hitting the boundary guard
            N = wachspress(reference_polygon(n), rule.points).N
            np.testing.assert_allclose(N.sum(axis=1), 1.0, atol=1e-13)

    def test_point_counts(self):
        sizes = {2: 3, 4: 6, 6: 12}
        for degree, m in sizes.items():
            assert len(polygon_quadrature(5, degree).weights) == 5 * m

    @pytest.mark.parametrize("degree", [0, 1, 3, 5, 8])
    def test_unsupported_degree(self, degree):
        with pytest.raises(ValueError):
            polygon_quadrature(4, degree)

    def test_triangle_rule_weights(self):
        for degree in SUPPORTED_DEGREES:
            bary, w = triangle_rule(degree)
            assert w.sum() == pytest.approx(1.0, abs=1e-15)
            np.testing.assert_allclose(bary.sum(axis=1), 1.0, atol=1e-15)
            assert np.all(bary > 0)

    def test_face_basis_is_cached_and_read_only(self):
        rule1, ev1 = face_basis(5, 4)
        rule2, ev2 = face_basis(5, 4)
        assert rule1 is rule2 and ev1 is ev2
        with pytest.raises(ValueError):
            ev1.N[0, 0] = 1.0
