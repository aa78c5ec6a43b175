"""Polyhedral mesh data model, validation and geometric queries.

A cell is a closed polyhedral surface made of planar convex polygons whose
vertices run counterclockwise when viewed from outside the cell. Each cell
carries a scaling center from which its boundary is radially scaled; the
cell must be star-convex with respect to that point.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Mapping

import numpy as np
from scipy.spatial import cKDTree

from .polygon import face_basis

__all__ = [
    "Material",
    "PolyhedronCell",
    "Mesh",
    "MeshError",
    "Issue",
    "ValidationReport",
    "validate_mesh",
    "scaling_center",
    "cell_volume",
    "face_normal",
    "face_area",
    "boundary_faces",
]

PLANAR_TOL = 1e-8


class MeshError(ValueError):
    """Raised for malformed meshes and geometric failures."""


@dataclass(frozen=True)
class Material:
    """Orthotropic conductivity (W/m/degC) with density and heat capacity."""

    kx: float
    ky: float
    kz: float
    rho: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if min(self.kx, self.ky, self.kz) <= 0:
            raise ValueError("thermal conductivities must be positive")
        if self.rho < 0 or self.c < 0:
            raise ValueError("density and heat capacity must be non-negative")

    @classmethod
    def isotropic(cls, k: float, rho: float = 1.0, c: float = 1.0) -> "Material":
        return cls(k, k, k, rho, c)

    @property
    def conductivity(self) -> np.ndarray:
        return np.diag([self.kx, self.ky, self.kz])

    @property
    def rho_c(self) -> float:
        return self.rho * self.c

    @property
    def is_isotropic(self) -> bool:
        return self.kx == self.ky == self.kz


@dataclass(frozen=True)
class PolyhedronCell:
    """A cell given by its faces (tuples of global node indices).

    ``nodes`` lists the distinct cell nodes in ascending order; this is the
    local DOF numbering used by every element matrix.
    """

    faces: tuple[tuple[int, ...], ...]
    scaling_center: np.ndarray | None = None
    material: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "faces", tuple(tuple(int(i) for i in f) for f in self.faces))

    @cached_property
    def nodes(self) -> np.ndarray:
        out = np.unique(np.concatenate([np.asarray(f, dtype=np.int64) for f in self.faces]))
        out.setflags(write=False)
        return out

    def local_faces(self) -> list[np.ndarray]:
        """Faces expressed in local node numbering."""
        nodes = self.nodes
        return [np.searchsorted(nodes, np.asarray(f)) for f in self.faces]

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges of all faces."""
        out = []
        for f in self.faces:
            out.extend(zip(f, f[1:] + f[:1]))
        return out


@dataclass(frozen=True)
class Mesh:
    """Nodes, cells and named boundary sets.

    ``face_sets`` map a name to an ``(m, 2)`` array of
    ``[cell_index, local_face_index]`` pairs. Scaling centers missing from the
    supplied cells are computed on construction.
    """

    nodes: np.ndarray
    cells: tuple[PolyhedronCell, ...]
    node_sets: Mapping[str, np.ndarray] = field(default_factory=dict)
    face_sets: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError("nodes must be an (N, 3) array")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        cells = []
        for i, cell in enumerate(self.cells):
            if not isinstance(cell, PolyhedronCell):
                cell = PolyhedronCell(tuple(cell))
            if cell.scaling_center is None and _indices_in_range(cell, len(nodes)):
                try:
                    cell = replace(cell, scaling_center=scaling_center(cell, nodes))
                except MeshError:
                    pass  # reported by validate_mesh
            cells.append(cell)
        object.__setattr__(self, "cells", tuple(cells))
        object.__setattr__(
            self, "node_sets", {k: np.asarray(v, dtype=np.int64).ravel() for k, v in self.node_sets.items()}
        )
        object.__setattr__(
            self,
            "face_sets",
            {k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in self.face_sets.items()},
        )

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def face_coords(self, cell_index: int, face_index: int) -> np.ndarray:
        return self.nodes[list(self.cells[cell_index].faces[face_index])]

    def with_sets(self, node_sets=None, face_sets=None) -> "Mesh":
        return replace(
            self,
            node_sets={**self.node_sets, **(node_sets or {})},
            face_sets={**self.face_sets, **(face_sets or {})},
        )


def _indices_in_range(cell, n_nodes):
    return all(0 <= i < n_nodes for f in cell.faces for i in f)


def _coords(mesh_or_nodes) -> np.ndarray:
    return mesh_or_nodes.nodes if isinstance(mesh_or_nodes, Mesh) else np.asarray(mesh_or_nodes, float)


def scaling_center(cell: PolyhedronCell, mesh) -> np.ndarray:
    """Vertex centroid of the cell's distinct nodes."""
    x = _coords(mesh)[cell.nodes]
    if len(x) < 4:
        raise MeshError("degenerate cell")
    center = x.mean(axis=0)
    d = x - center
    diam = np.max(np.linalg.norm(d, axis=1))
    s = np.linalg.svd(d, compute_uv=False)
    if diam == 0 or s[-1] <= 1e-10 * diam:
        raise MeshError("degenerate cell")
    return center


def face_normal(coords: np.ndarray) -> np.ndarray:
    """Newell area vector of a polygon (length = area, direction by CCW order)."""
    c = np.asarray(coords, float)
    return 0.5 * np.cross(c, np.roll(c, -1, axis=0)).sum(axis=0)


def face_area(coords: np.ndarray) -> float:
    return float(np.linalg.norm(face_normal(coords)))


def cell_volume(cell: PolyhedronCell, mesh) -> float:
    """Volume as the sum of pyramids from the scaling center over every face.

    For planar faces this equals one third of the boundary integral of
    ``|Jb|`` after the radial ``xi**2`` integration, evaluated exactly.
    """
    x = _coords(mesh)
    center = cell.scaling_center if cell.scaling_center is not None else scaling_center(cell, x)
    vol = 0.0
    for f in cell.faces:
        p = x[list(f)] - center
        # fan from the first vertex; exact for planar polygons
        a = p[0]
        b, c = p[1:-1], p[2:]
        vol += np.einsum("i,ni->", a, np.cross(b, c)) / 6.0
    if not vol > 0:
        raise MeshError("inverted cell")
    return float(vol)


@dataclass(frozen=True)
class Issue:
    cell: int | None
    message: str

    def __str__(self):
        where = "mesh" if self.cell is None else f"cell {self.cell}"
        return f"{where}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    def add(self, cell, message):
        self.issues.append(Issue(cell, message))

    @property
    def ok(self) -> bool:
        return not self.issues

    def __len__(self):
        return len(self.issues)

    def __iter__(self) -> Iterator[Issue]:
        return iter(self.issues)

    def for_cell(self, cell: int) -> list[str]:
        return [i.message for i in self.issues if i.cell == cell]

    def __str__(self):
        return "\n".join(str(i) for i in self.issues) if self.issues else "mesh is valid"


def _check_face_shape(coords, report, ci, fi):
    diam = max(np.max(np.linalg.norm(coords - p, axis=1)) for p in coords)
    if diam == 0:
        report.add(ci, f"degenerate face {fi}")
        return
    nvec = face_normal(coords)
    area = np.linalg.norm(nvec)
    if area <= 1e-14 * diam**2:
        report.add(ci, f"degenerate face {fi}")
        return
    unit = nvec / area
    dist = np.abs((coords - coords.mean(axis=0)) @ unit)
    if dist.max() > PLANAR_TOL * diam:
        report.add(ci, f"non-planar face {fi} (deviation {dist.max():.3e})")
    e = np.roll(coords, -1, axis=0) - coords
    turn = np.cross(e, np.roll(e, -1, axis=0)) @ unit
    # collinear vertices (hanging nodes) are allowed
    if np.any(turn < -PLANAR_TOL * diam**2):
        report.add(ci, f"non-convex face {fi}")


def _check_jacobian(coords_rel, report, ci, fi, degree):
    rule, basis = face_basis(len(coords_rel), degree)
    x = basis.N @ coords_rel
    xe = basis.dN_deta @ coords_rel
    xz = basis.dN_dzeta @ coords_rel
    det = np.einsum("md,md->m", x, np.cross(xe, xz))
    if np.any(det <= 0):
        report.add(ci, f"negative Jacobian on face {fi}")


def validate_mesh(mesh: Mesh, degree: int = 4) -> ValidationReport:
    """Collect every violated invariant; never raises for bad geometry."""
    report = ValidationReport()
    x = mesh.nodes
    if not np.all(np.isfinite(x)):
        report.add(None, "non-finite node coordinates")
    n_nodes = len(x)
    used = np.zeros(n_nodes, dtype=bool)
    for ci, cell in enumerate(mesh.cells):
        bad_index = False
        for fi, f in enumerate(cell.faces):
            if len(f) < 3:
                report.add(ci, f"face {fi} has fewer than 3 nodes")
                bad_index = True
            if len(set(f)) != len(f):
                report.add(ci, f"face {fi} repeats a node")
                bad_index = True
            out = [i for i in f if not 0 <= i < n_nodes]
            if out:
                report.add(ci, f"face {fi} node index out of range: {out}")
                bad_index = True
        if bad_index:
            continue
        used[cell.nodes] = True
        directed = Counter(cell.edges())
        same_dir = sum(cnt - 1 for cnt in directed.values() if cnt > 1)
        undirected = Counter(tuple(sorted(e)) for e in directed.elements())
        boundary = sum(1 for e, cnt in undirected.items() if cnt == 1)
        if boundary:
            report.add(ci, f"open surface: {boundary} boundary edges unmatched")
        if same_dir or any(cnt > 2 for cnt in undirected.values()):
            report.add(ci, "inconsistent face orientation or non-manifold edge")
        try:
            center = cell.scaling_center if cell.scaling_center is not None else scaling_center(cell, x)
        except MeshError as exc:
            report.add(ci, str(exc))
            continue
        for fi, f in enumerate(cell.faces):
            coords = x[list(f)]
            _check_face_shape(coords, report, ci, fi)
            _check_jacobian(coords - center, report, ci, fi, degree)
    if mesh.n_cells:
        unused = np.flatnonzero(~used)
        if len(unused) and not report.issues:
            report.add(None, f"{len(unused)} nodes not referenced by any cell (first: {unused[0]})")
    _check_conformity(mesh, report)
    _check_sets(mesh, report)
    return report


def boundary_faces(mesh: Mesh) -> list[tuple[int, int]]:
    """(cell, local face) pairs whose node set is not shared with another cell."""
    count = Counter()
    for ci, cell in enumerate(mesh.cells):
        for f in cell.faces:
            count[frozenset(f)] += 1
    return [
        (ci, fi)
        for ci, cell in enumerate(mesh.cells)
        for fi, f in enumerate(cell.faces)
        if count[frozenset(f)] == 1
    ]


def _check_conformity(mesh, report):
    owners: dict[frozenset, list[tuple[int, tuple[int, ...]]]] = {}
    for ci, cell in enumerate(mesh.cells):
        for f in cell.faces:
            owners.setdefault(frozenset(f), []).append((ci, f))
    edge_count = Counter()
    for key, own in owners.items():
        if len(own) > 2:
            report.add(None, f"face {sorted(key)} shared by {len(own)} cells")
        elif len(own) == 2:
            (c0, f0), (c1, f1) = own
            if c0 == c1:
                report.add(c0, "cell lists the same face twice")
                continue
            e0 = set(zip(f0, f0[1:] + f0[:1]))
            e1 = set(zip(f1, f1[1:] + f1[:1]))
            if any((a, b) in e1 for a, b in e0):
                report.add(None, f"cells {c0} and {c1} share a face with equal orientation")
        else:
            f = own[0][1]
            for a, b in zip(f, f[1:] + f[:1]):
                edge_count[(min(a, b), max(a, b))] += 1
    odd = sum(1 for cnt in edge_count.values() if cnt % 2)
    if odd:
        report.add(None, f"non-conforming interface: {odd} boundary edges unmatched")
    _check_t_junctions(mesh, edge_count, report)


def _check_t_junctions(mesh, edges, report):
    """Report nodes lying inside an edge of a boundary face (hanging nodes not listed as vertices)."""
    if not edges or not np.all(np.isfinite(mesh.nodes)):
        return
    x = mesh.nodes
    tree = cKDTree(x)
    for a, b in edges:
        if not (0 <= a < len(x) and 0 <= b < len(x)):
            continue
        pa, pb = x[a], x[b]
        seg = pb - pa
        L = np.linalg.norm(seg)
        if L == 0:
            continue
        for k in tree.query_ball_point(0.5 * (pa + pb), 0.5 * L):
            if k in (a, b):
                continue
            t = (x[k] - pa) @ seg / L**2
            if 1e-9 < t < 1 - 1e-9 and np.linalg.norm(pa + t * seg - x[k]) < 1e-9 * L:
                report.add(None, f"non-conforming interface: node {k} lies inside edge ({a}, {b})")
                return


def _check_sets(mesh, report):
    for name, ids in mesh.node_sets.items():
        if len(ids) and (ids.min() < 0 or ids.max() >= mesh.n_nodes):
            report.add(None, f"node set '{name}' has out-of-range indices")
    for name, pairs in mesh.face_sets.items():
        for ci, fi in pairs:
            if not (0 <= ci < mesh.n_cells and 0 <= fi < len(mesh.cells[ci].faces)):
                report.add(None, f"face set '{name}' references missing face [{ci}, {fi}]")
                break
