"""Wachspress shape functions and quadrature on reference regular polygons.

Every polygonal face of a cell is parametrised over a regular ``n``-gon in
the ``(eta, zeta)`` plane. Face node ``k`` maps to reference vertex ``k``;
the geometry and temperature are interpolated with Wachspress coordinates
of the reference polygon.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "ReferencePolygon",
    "QuadratureRule",
    "BasisEval",
    "reference_polygon",
    "wachspress",
    "wachspress_grad",
    "polygon_quadrature",
    "triangle_rule",
    "face_basis",
    "SUPPORTED_DEGREES",
]

# Minimum distance to an edge for a point to count as strictly interior.
EDGE_EPS = 1e-12


@dataclass(frozen=True)
class ReferencePolygon:
    """Regular polygon inscribed in the unit circle, vertices CCW."""

    n: int
    vertices: np.ndarray  # (n, 2)

    @property
    def normals(self) -> np.ndarray:
        """Unit outward normal of edge ``k`` (from vertex ``k`` to ``k+1``)."""
        e = np.roll(self.vertices, -1, axis=0) - self.vertices
        nrm = np.column_stack([e[:, 1], -e[:, 0]])
        return nrm / np.linalg.norm(nrm, axis=1)[:, None]

    @property
    def area(self) -> float:
        return 0.5 * self.n * np.sin(2.0 * np.pi / self.n)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (m, 2)
    weights: np.ndarray  # (m,)
    degree: int


@dataclass(frozen=True)
class BasisEval:
    """Shape function values (and optionally gradients) at ``m`` points.

    ``N`` has shape ``(m, n)``; ``dN_deta`` and ``dN_dzeta`` likewise, or
    ``None`` when only values were requested.
    """

    N: np.ndarray
    dN_deta: np.ndarray | None = None
    dN_dzeta: np.ndarray | None = None


@lru_cache(maxsize=None)
def reference_polygon(n: int) -> ReferencePolygon:
    """Regular ``n``-gon on the unit circle with its first vertex at angle pi/2."""
    if int(n) != n or n < 3:
        raise ValueError(f"a polygon needs at least 3 vertices, got {n}")
    n = int(n)
    ang = np.pi / 2.0 + 2.0 * np.pi * np.arange(n) / n
    verts = np.column_stack([np.cos(ang), np.sin(ang)])
    verts.setflags(write=False)
    return ReferencePolygon(n, verts)


def _edge_distances(poly: ReferencePolygon, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    normals = poly.normals
    # h[m, k]: distance from p_m to the line of edge k, positive inside.
    h = np.einsum("kd,kd->k", poly.vertices, normals)[None, :] - p @ normals.T
    if np.any(h <= EDGE_EPS):
        raise ValueError("point outside open polygon")
    return h, normals


def _weights(poly, p):
    h, normals = _edge_distances(poly, p)
    n_prev = np.roll(normals, 1, axis=0)
    # det(n_{k-1}, n_k) is the same constant for every vertex of a regular polygon,
    # but is kept explicit so the formula holds for any convex polygon.
    cross = n_prev[:, 0] * normals[:, 1] - n_prev[:, 1] * normals[:, 0]
    h_prev = np.roll(h, 1, axis=1)
    w = cross[None, :] / (h_prev * h)
    return w, h, h_prev, normals, n_prev


def _as_points(p) -> tuple[np.ndarray, bool]:
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    return np.atleast_2d(p), single


def wachspress(poly: ReferencePolygon, p) -> BasisEval:
    """Wachspress coordinates at one point ``(eta, zeta)`` or an ``(m, 2)`` array."""
    pts, single = _as_points(p)
    w = _weights(poly, pts)[0]
    N = w / w.sum(axis=1, keepdims=True)
    return BasisEval(N[0] if single else N)


def wachspress_grad(poly: ReferencePolygon, p) -> BasisEval:
    """Wachspress coordinates with analytic gradients.

    Uses ``grad(phi_i) = phi_i (R_i - sum_j phi_j R_j)`` with
    ``R_i = grad(w_i) / w_i = n_{i-1}/h_{i-1} + n_i/h_i``.
    """
    pts, single = _as_points(p)
    w, h, h_prev, normals, n_prev = _weights(poly, pts)
    N = w / w.sum(axis=1, keepdims=True)
    R = n_prev[None, :, :] / h_prev[:, :, None] + normals[None, :, :] / h[:, :, None]
    Rbar = np.einsum("mk,mkd->md", N, R)
    dN = N[:, :, None] * (R - Rbar[:, None, :])
    if single:
        return BasisEval(N[0], dN[0, :, 0], dN[0, :, 1])
    return BasisEval(N, dN[:, :, 0], dN[:, :, 1])


# Symmetric rules on the unit triangle: (barycentric orbit generator, weight),
# weights normalised to sum to one. Dunavant (1985) families.
_TRIANGLE_ORBITS = {
    2: [((2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0), 1.0 / 3.0)],
    4: [
        ((0.10810301816807022736, 0.44594849091596488632, 0.44594849091596488632),
         0.22338158967801146570),
        ((0.81684757298045851308, 0.09157621350977074346, 0.09157621350977074346),
         0.10995174365532186764),
    ],
    6: [
        ((0.50142650965817915742, 0.24928674517091042129, 0.24928674517091042129),
         0.11678627572637936603),
        ((0.87382197101699554332, 0.06308901449150222834, 0.06308901449150222834),
         0.05084490637020681692),
        ((0.05314504984481694735, 0.31035245103378440542, 0.63650249912139864723),
         0.08285107561837357519),
    ],
}

SUPPORTED_DEGREES = tuple(sorted(_TRIANGLE_ORBITS))

_PERMS = ((0, 1, 2), (1, 2, 0), (2, 0, 1), (0, 2, 1), (2, 1, 0), (1, 0, 2))


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points ``(m, 3)`` and weights (summing to 1) for ``degree``."""
    if degree not in _TRIANGLE_ORBITS:
        raise ValueError(f"unsupported quadrature degree {degree}; choose from {SUPPORTED_DEGREES}")
    bary, wts = [], []
    for gen, w in _TRIANGLE_ORBITS[degree]:
        orbit = []
        for perm in _PERMS:
            b = tuple(gen[i] for i in perm)
            if b not in orbit:
                orbit.append(b)
        bary.extend(orbit)
        wts.extend([w] * len(orbit))
    bary, wts = np.array(bary), np.array(wts)
    bary.setflags(write=False)
    wts.setflags(write=False)
    return bary, wts


@lru_cache(maxsize=None)
def polygon_quadrature(n: int, degree: int = 4) -> QuadratureRule:
    """Fan the reference ``n``-gon into ``n`` triangles about the origin and
    place the symmetric triangle rule of ``degree`` in each."""
    poly = reference_polygon(n)
    bary, w = triangle_rule(degree)
    v = poly.vertices
    pts, wts = [], []
    for k in range(n):
        a, b = v[k], v[(k + 1) % n]
        area = 0.5 * abs(a[0] * b[1] - a[1] * b[0])
        # barycentric column 0 belongs to the origin
        pts.append(bary[:, 1:2] * a + bary[:, 2:3] * b)
        wts.append(w * area)
    points = np.vstack(pts)
    weights = np.concatenate(wts)
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, degree)


@lru_cache(maxsize=None)
def face_basis(n: int, degree: int = 4) -> tuple[QuadratureRule, BasisEval]:
    """Quadrature rule on the reference ``n``-gon and the basis evaluated on it."""
    rule = polygon_quadrature(n, degree)
    basis = wachspress_grad(reference_polygon(n), rule.points)
    for arr in (basis.N, basis.dN_deta, basis.dN_dzeta):
        arr.setflags(write=False)
    return rule, basis
