"""Scaled boundary element kernel for heat conduction in polyhedral cells.

Pipeline per cell: boundary Jacobians and coefficient matrices on each
face, assembly into cell-level ``E0, E1, E2, M0``, the Hamiltonian matrix
``Zp``, its eigen decomposition, and finally the conductance matrix
``K = Phi_q1 Phi_h1^-1`` and the capacity matrix ``M``.

The interior field of a cell is ``u(xi) = Phi_h1 xi**(Lambda - 1/2) c``
with the eigenvalues ``Re(lambda) > 0``; the constant-temperature mode sits
at ``lambda = 1/2`` and carries zero flux.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from io import StringIO

import numpy as np
import scipy.linalg as sla

from .mesh import Material, Mesh, PolyhedronCell
from .polygon import BasisEval, face_basis

__all__ = [
    "ElementError",
    "FaceCoefficients",
    "ModalBasis",
    "ElementMatrices",
    "ParentCache",
    "boundary_jacobian",
    "b_vectors",
    "face_coefficients",
    "element_matrices_raw",
    "hamiltonian",
    "modal_decomposition",
    "stiffness",
    "mass",
    "element_matrices",
    "is_scalable_cube",
    "parent_cache",
    "map_cube",
    "cube_permutation",
    "element_report",
]

E0_COND_MAX = 1e12
PHI_COND_MAX = 1e10
IMAG_TOL = 1e-8
CUBE_TOL = 1e-9


class ElementError(ArithmeticError):
    """Numerical failure while forming the matrices of one cell."""

    def __init__(self, message, cell=None):
        self.reason = message
        self.cell = cell
        super().__init__(message if cell is None else f"cell {cell}: {message}")


@dataclass(frozen=True)
class FaceCoefficients:
    E0: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    M0: np.ndarray


@dataclass(frozen=True)
class ModalBasis:
    lambda_plus: np.ndarray  # (n,) complex
    Phi_h1: np.ndarray  # (n, n) complex
    Phi_q1: np.ndarray  # (n, n) complex
    cond: float


@dataclass(frozen=True)
class ElementMatrices:
    K: np.ndarray
    M: np.ndarray


def boundary_jacobian(face_coords: np.ndarray, basis: BasisEval):
    """Boundary Jacobian rows ``[x, x_eta, x_zeta]`` and its determinant.

    ``face_coords`` are ``(n_f, 3)`` node coordinates relative to the scaling
    center. With a single-point ``basis`` the result is ``(3, 3), float``;
    with ``m`` points it is ``(m, 3, 3), (m,)``.
    """
    X = np.asarray(face_coords, float)
    x = basis.N @ X
    xe = basis.dN_deta @ X
    xz = basis.dN_dzeta @ X
    Jb = np.stack([x, xe, xz], axis=-2)
    det = np.einsum("...d,...d->...", x, np.cross(xe, xz))
    if np.any(det <= 0):
        raise ElementError("negative boundary Jacobian")
    return Jb, det


def b_vectors(Jb: np.ndarray, detJb):
    """Columns of ``Jb^-1`` written as cross products of the Jacobian rows."""
    Jb = np.asarray(Jb, float)
    detJb = np.asarray(detJb, float)
    if np.any(detJb == 0):
        raise ElementError("singular boundary Jacobian")
    x, xe, xz = Jb[..., 0, :], Jb[..., 1, :], Jb[..., 2, :]
    d = detJb[..., None]
    b1 = np.cross(xe, xz) / d
    b2 = np.cross(xz, x) / d
    b3 = np.cross(x, xe) / d
    return b1, b2, b3


def face_coefficients(coords: np.ndarray, center, mat: Material, degree: int = 4) -> FaceCoefficients:
    """Integrate the four coefficient matrices over one polygonal face."""
    X = np.asarray(coords, float) - np.asarray(center, float)
    rule, basis = face_basis(len(X), degree)
    Jb, det = boundary_jacobian(X, basis)
    b1, b2, b3 = b_vectors(Jb, det)
    w = rule.weights * det
    N, Ne, Nz = basis.N, basis.dN_deta, basis.dN_dzeta
    # B1[m] = b1 N, B2[m] = b2 N_eta + b3 N_zeta, both (m, 3, n_f)
    B1 = b1[:, :, None] * N[:, None, :]
    B2 = b2[:, :, None] * Ne[:, None, :] + b3[:, :, None] * Nz[:, None, :]
    kd = np.array([mat.kx, mat.ky, mat.kz])
    kB1 = kd[None, :, None] * B1
    kB2 = kd[None, :, None] * B2
    E0 = np.einsum("m,mdi,mdj->ij", w, B1, kB1)
    E1 = np.einsum("m,mdi,mdj->ij", w, B2, kB1)
    E2 = np.einsum("m,mdi,mdj->ij", w, B2, kB2)
    M0 = mat.rho_c * np.einsum("m,mi,mj->ij", w, N, N)
    return FaceCoefficients(E0, E1, E2, M0)


def element_matrices_raw(cell: PolyhedronCell, mesh: Mesh, mat: Material, degree: int = 4):
    """Cell-level ``E0, E1, E2, M0`` in local (ascending global id) numbering."""
    nodes = cell.nodes
    n = len(nodes)
    E0, E1, E2, M0 = (np.zeros((n, n)) for _ in range(4))
    center = cell.scaling_center
    for f, loc in zip(cell.faces, cell.local_faces()):
        fc = face_coefficients(mesh.nodes[list(f)], center, mat, degree)
        ix = np.ix_(loc, loc)
        E0[ix] += fc.E0
        E1[ix] += fc.E1
        E2[ix] += fc.E2
        M0[ix] += fc.M0
    return E0, E1, E2, M0


def hamiltonian(E0, E1, E2) -> np.ndarray:
    """Hamiltonian coefficient matrix of the first-order radial ODE system."""
    n = E0.shape[0]
    if np.linalg.cond(E0) > E0_COND_MAX:
        raise ElementError("ill-conditioned E0")
    try:
        cf = sla.cho_factor(E0)
    except np.linalg.LinAlgError as exc:
        raise ElementError("E0 is not positive definite") from exc
    E0i_E1T = sla.cho_solve(cf, E1.T)
    E0i = sla.cho_solve(cf, np.eye(n))
    I = np.eye(n)
    return np.block(
        [
            [-E0i_E1T + 0.5 * I, E0i],
            [E2 - E1 @ E0i_E1T, E1 @ E0i - 0.5 * I],
        ]
    )


def modal_decomposition(Zp: np.ndarray) -> ModalBasis:
    """Select the eigenpairs of ``Zp`` with positive real part."""
    n2 = Zp.shape[0]
    n = n2 // 2
    lam, vec = np.linalg.eig(Zp)
    sel = np.flatnonzero(lam.real > 0)
    if len(sel) != n:
        raise ElementError(f"unbalanced spectrum ({len(sel)} of {n2} eigenvalues with Re > 0)")
    order = np.lexsort((sel, lam[sel].imag, lam[sel].real))
    sel = sel[order]
    Phi_h1 = vec[:n, sel]
    Phi_q1 = vec[n:, sel]
    cond = np.linalg.cond(Phi_h1)
    if not cond < PHI_COND_MAX:
        raise ElementError(f"near-defective modal basis (cond {cond:.3e})")
    return ModalBasis(lam[sel], Phi_h1, Phi_q1, float(cond))


def _realize(A, what):
    scale = np.max(np.abs(A.real))
    if np.max(np.abs(A.imag)) > IMAG_TOL * max(scale, np.finfo(float).tiny):
        raise ElementError(f"non-real {what}")
    R = A.real
    return 0.5 * (R + R.T)


def stiffness(basis: ModalBasis) -> np.ndarray:
    """``K = Phi_q1 Phi_h1^-1``, realised and symmetrised."""
    # K^T = Phi_h1^-T Phi_q1^T
    K = np.linalg.solve(basis.Phi_h1.T, basis.Phi_q1.T).T
    return _realize(K, "stiffness")


def mass(basis: ModalBasis, M0: np.ndarray) -> np.ndarray:
    """Capacity matrix with the radial integral evaluated in closed form."""
    lam = basis.lambda_plus
    denom = lam[:, None] + lam[None, :] + 2.0
    if np.any(denom.real <= 0):
        raise ElementError("invalid modal exponent")
    m0 = basis.Phi_h1.T @ M0 @ basis.Phi_h1
    m = m0 / denom
    Y = np.linalg.inv(basis.Phi_h1)
    return _realize(Y.T @ m @ Y, "mass")


def element_matrices(cell: PolyhedronCell, mesh: Mesh, mat: Material, degree: int = 4) -> ElementMatrices:
    """Full pipeline from geometry to ``(K, M)`` for one cell."""
    E0, E1, E2, M0 = element_matrices_raw(cell, mesh, mat, degree)
    basis = modal_decomposition(hamiltonian(E0, E1, E2))
    return ElementMatrices(stiffness(basis), mass(basis, M0))


# --- parent-element fast path for axis-aligned cubes ---------------------------------


def is_scalable_cube(cell: PolyhedronCell, mesh: Mesh) -> float | None:
    """Edge length ``L`` if the cell is an axis-aligned cube without hanging nodes."""
    if len(cell.faces) != 6 or any(len(f) != 4 for f in cell.faces):
        return None
    nodes = cell.nodes
    if len(nodes) != 8:
        return None
    edges = np.array(sorted({tuple(sorted(e)) for e in cell.edges()}))
    if len(edges) != 12:
        return None
    x = mesh.nodes
    d = np.abs(x[edges[:, 1]] - x[edges[:, 0]])
    lengths = d.max(axis=1)
    if np.any(lengths <= 0) or np.any(np.sum(d > CUBE_TOL * lengths[:, None], axis=1) != 1):
        return None
    L = float(lengths.mean())
    if np.any(np.abs(lengths - L) > CUBE_TOL * L):
        return None
    span = x[nodes].max(axis=0) - x[nodes].min(axis=0)
    if np.any(np.abs(span - L) > CUBE_TOL * L):
        return None
    return L


@dataclass(frozen=True)
class ParentCache:
    """Matrices of the unit cube ``[0, 1]^3`` with ``k = rho = c = 1``.

    Node ``i + 2 j + 4 k`` of the parent sits at corner ``(i, j, k)``.
    """

    K_par: np.ndarray
    M_par: np.ndarray
    degree: int


def _unit_cube():
    pts = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)], dtype=float)
    faces = (
        (0, 2, 3, 1),  # z = 0
        (4, 5, 7, 6),  # z = 1
        (0, 1, 5, 4),  # y = 0
        (2, 6, 7, 3),  # y = 1
        (0, 4, 6, 2),  # x = 0
        (1, 3, 7, 5),  # x = 1
    )
    return Mesh(pts, (PolyhedronCell(faces),))


@lru_cache(maxsize=None)
def parent_cache(degree: int = 4) -> ParentCache:
    mesh = _unit_cube()
    em = element_matrices(mesh.cells[0], mesh, Material.isotropic(1.0, 1.0, 1.0), degree)
    K, M = em.K, em.M
    K.setflags(write=False)
    M.setflags(write=False)
    return ParentCache(K, M, degree)


def map_cube(cache: ParentCache, mat: Material, L: float) -> ElementMatrices:
    """Scale the parent matrices to a cube of edge ``L`` (parent node order)."""
    if not mat.is_isotropic:
        raise ValueError("parent-element mapping requires isotropic conductivity")
    if not L > 0:
        raise ValueError("cube edge length must be positive")
    return ElementMatrices(mat.kx * L * cache.K_par, mat.rho_c * L**3 * cache.M_par)


def cube_permutation(cell: PolyhedronCell, mesh: Mesh, L: float) -> np.ndarray:
    """Parent node index for each local node of an axis-aligned cube."""
    x = mesh.nodes[cell.nodes]
    bits = np.rint((x - x.min(axis=0)) / L).astype(int)
    return bits[:, 0] + 2 * bits[:, 1] + 4 * bits[:, 2]


def element_report(cell: PolyhedronCell, mesh: Mesh, mat: Material, degree: int = 4, index=None) -> str:
    """Text dump of every intermediate matrix of one cell."""
    E0, E1, E2, M0 = element_matrices_raw(cell, mesh, mat, degree)
    basis = modal_decomposition(hamiltonian(E0, E1, E2))
    K = stiffness(basis)
    M = mass(basis, M0)
    out = StringIO()
    opts = dict(precision=10, suppress_small=False, max_line_width=200, threshold=100000)
    title = "cell" if index is None else f"cell {index}"
    out.write(f"# {title}: {len(cell.nodes)} nodes, {len(cell.faces)} faces\n")
    out.write(f"nodes: {cell.nodes.tolist()}\n")
    out.write(f"scaling_center: {np.array2string(cell.scaling_center, **opts)}\n")
    for name, A in (("E0", E0), ("E1", E1), ("E2", E2), ("M0", M0)):
        out.write(f"{name}:\n{np.array2string(A, **opts)}\n")
    out.write(f"lambda_plus:\n{np.array2string(basis.lambda_plus, **opts)}\n")
    out.write(f"cond(Phi_h1): {basis.cond:.6e}\n")
    out.write(f"K:\n{np.array2string(K, **opts)}\n")
    out.write(f"M:\n{np.array2string(M, **opts)}\n")
    return out.getvalue()
