import numpy as np
import pytest

from psbfem.benchmarks import structured_box_mesh
from psbfem.element import _unit_cube
from psbfem.mesh import Material


@pytest.fixture
def unit_cube():
    return _unit_cube()


@pytest.fixture
def unit_material():
    return Material.isotropic(1.0, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_box():
    return structured_box_mesh((1.0, 1.0, 1.0), 0.5)


def polygon_monomial_integral(vertices, a, b):
    """Exact integral of x^a y^b over a polygon by Green's theorem.

    Each edge integral of x^(a+1) y^b dy is a polynomial in the edge
    parameter and is integrated exactly by Gauss-Legendre.
    """
    t, w = np.polynomial.legendre.leggauss(a + b + 2)
    t, w = 0.5 * (t + 1), 0.5 * w
    total = 0.0
    for p, q in zip(vertices, np.roll(vertices, -1, axis=0)):
        x = p[0] + t * (q[0] - p[0])
        y = p[1] + t * (q[1] - p[1])
        total += np.sum(w * x ** (a + 1) * y**b) * (q[1] - p[1])
    return total / (a + 1)


def random_interior_points(poly, rng, m):
    """Points drawn uniformly in the fan triangles, kept off the boundary."""
    k = rng.integers(poly.n, size=m)
    r = rng.random((m, 2))
    flip = r.sum(axis=1) > 1
    r[flip] = 1 - r[flip]
    v = poly.vertices
    p = r[:, :1] * v[k] + r[:, 1:] * v[(k + 1) % poly.n]
    return 0.98 * p


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
