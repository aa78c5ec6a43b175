"""Generators of polyhedral cells and meshes for tests and fixtures.

Nothing here is needed to run an analysis; the module builds random convex
cells, Voronoi box meshes and box meshes with hanging nodes.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection, cKDTree
from scipy.spatial.transform import Rotation

from .mesh import Mesh, PolyhedronCell, validate_mesh

__all__ = [
    "convex_cell",
    "random_box",
    "random_prism",
    "clipped_cube",
    "random_convex_polyhedron",
    "random_cell",
    "CELL_KINDS",
    "merge_polyhedra",
    "box_sets",
    "voronoi_layer",
    "stack_layers",
    "box_cells_mesh",
]


def _order_ccw(pts: np.ndarray, idx: Sequence[int], normal: np.ndarray) -> list[int]:
    idx = list(idx)
    c = pts[idx].mean(axis=0)
    u = pts[idx[0]] - c
    u -= normal * (u @ normal)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    d = pts[idx] - c
    ang = np.arctan2(d @ v, d @ u)
    return [idx[i] for i in np.argsort(ang)]


def convex_cell(points, tol: float = 1e-9) -> tuple[np.ndarray, list[list[int]]]:
    """Convex hull of ``points`` as polygon faces (coplanar facets merged).

    Returns the hull vertices and faces that index into them, each face
    counterclockwise about its outward normal.
    """
    pts = np.asarray(points, dtype=float)
    hull = ConvexHull(pts)
    verts = np.unique(hull.simplices)
    remap = {int(v): i for i, v in enumerate(verts)}
    scale = np.ptp(pts[verts], axis=0).max()
    groups: list[tuple[np.ndarray, set]] = []
    for simplex, eq in zip(hull.simplices, hull.equations):
        for n, members in groups:
            if np.linalg.norm(n - eq) < tol * max(1.0, scale):
                members.update(int(s) for s in simplex)
                break
        else:
            groups.append((eq, set(int(s) for s in simplex)))
    faces = []
    for eq, members in groups:
        # vertices of other facets lying on this plane belong to it as well
        on = [v for v in verts if abs(eq[:3] @ pts[v] + eq[3]) < tol * max(1.0, scale)]
        members.update(int(v) for v in on)
        faces.append([remap[i] for i in _order_ccw(pts, sorted(members), eq[:3])])
    return pts[verts], faces


def _single(verts, faces) -> Mesh:
    return Mesh(verts, (PolyhedronCell(tuple(tuple(f) for f in faces)),))


def _random_rigid(rng, verts, scale=None):
    R = Rotation.random(random_state=rng).as_matrix()
    s = rng.uniform(0.3, 3.0) if scale is None else scale
    return s * verts @ R.T + rng.uniform(-2, 2, 3)


def random_box(rng) -> Mesh:
    """Rotated, translated box with random edge lengths."""
    e = rng.uniform(0.4, 2.0, 3)
    corners = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)], float) * e
    return _single(*convex_cell(_random_rigid(rng, corners)))


def random_prism(rng) -> Mesh:
    """Oblique prism over a random convex polygon with 3 to 8 sides."""
    n = int(rng.integers(3, 9))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    while np.max(np.diff(np.append(ang, ang[0] + 2 * np.pi))) > 2.6 or np.min(np.diff(ang)) < 0.25:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = rng.uniform(0.7, 1.0, n)
    base = np.column_stack([r * np.cos(ang), r * np.sin(ang), np.zeros(n)])
    base = base[ConvexHull(base[:, :2]).vertices]
    n = len(base)
    shift = np.array([*rng.uniform(-0.3, 0.3, 2), rng.uniform(0.6, 1.6)])
    verts = np.vstack([base, base + shift])
    faces = [list(range(n - 1, -1, -1)), list(range(n, 2 * n))]
    for i in range(n):
        j = (i + 1) % n
        faces.append([i, j, n + j, n + i])
    return _single(_random_rigid(rng, verts), faces)


def clipped_cube(rng, n_planes: int | None = None) -> Mesh:
    """Unit cube with one to three corners cut off by random planes."""
    n_planes = int(rng.integers(1, 4)) if n_planes is None else n_planes
    hs = [[-1, 0, 0, 0], [1, 0, 0, -1], [0, -1, 0, 0], [0, 1, 0, -1], [0, 0, -1, 0], [0, 0, 1, -1]]
    corners = rng.choice(8, size=n_planes, replace=False)
    for c in corners:
        corner = np.array([c & 1, (c >> 1) & 1, (c >> 2) & 1], float)
        n = (corner - 0.5) + rng.uniform(-0.15, 0.15, 3)
        n /= np.linalg.norm(n)
        # plane cuts the corner at a depth between 0.15 and 0.35 along n
        d = n @ corner - rng.uniform(0.15, 0.35)
        hs.append([*n, -d])
    hsi = HalfspaceIntersection(np.array(hs, float), np.full(3, 0.5))
    return _single(*convex_cell(_random_rigid(rng, hsi.intersections)))


def random_convex_polyhedron(rng) -> Mesh:
    """Hull of 8 to 16 jittered points on an ellipsoid."""
    m = int(rng.integers(8, 17))
    for _ in range(100):
        p = rng.normal(size=(m, 3))
        p /= np.linalg.norm(p, axis=1)[:, None]
        p *= rng.uniform(0.6, 1.4, 3)
        verts, faces = convex_cell(p)
        edges = [np.linalg.norm(verts[f[i]] - verts[f[i - 1]]) for f in faces for i in range(len(f))]
        if min(edges) > 0.15 * np.ptp(verts, axis=0).max():
            break
    return _single(_random_rigid(rng, verts), faces)


CELL_KINDS = {
    "box": random_box,
    "prism": random_prism,
    "clipped-cube": clipped_cube,
    "convex": random_convex_polyhedron,
}


def random_cell(rng, kind: str | None = None) -> Mesh:
    """A single-cell mesh of the given (or a random) kind that passes validation."""
    kinds = list(CELL_KINDS)
    kind = kind or kinds[int(rng.integers(len(kinds)))]
    for _ in range(50):
        mesh = CELL_KINDS[kind](rng)
        if validate_mesh(mesh).ok:
            return mesh
    raise RuntimeError(f"could not generate a valid {kind} cell")


def merge_polyhedra(polys, tol: float = 1e-9) -> tuple[np.ndarray, list[PolyhedronCell]]:
    """Merge per-cell ``(vertices, faces)`` pairs into shared global nodes."""
    offsets, allv = [], []
    for verts, _ in polys:
        offsets.append(sum(len(v) for v in allv))
        allv.append(np.asarray(verts, float))
    X = np.vstack(allv)
    scale = max(np.ptp(X, axis=0).max(), 1.0)
    parent = np.arange(len(X))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in cKDTree(X).query_pairs(tol * scale):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(X))])
    uniq, new = np.unique(roots, return_inverse=True)
    nodes = X[uniq]
    cells = []
    for (verts, faces), off in zip(polys, offsets):
        out = []
        for f in faces:
            g = [int(new[off + i]) for i in f]
            g = [v for k, v in enumerate(g) if v != g[k - 1]]
            out.append(tuple(g))
        cells.append(PolyhedronCell(tuple(out)))
    return nodes, cells


def box_sets(nodes: np.ndarray, cells, lo, hi, tol: float = 1e-9) -> tuple[dict, dict]:
    """Node and face sets ``xmin ... zmax`` and ``boundary`` of a box domain."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    tol = tol * np.max(hi - lo)
    node_sets, face_sets = {}, {}
    for axis, name in enumerate("xyz"):
        for side, val in (("min", lo[axis]), ("max", hi[axis])):
            on = np.abs(nodes[:, axis] - val) < tol
            node_sets[name + side] = np.flatnonzero(on)
            pairs = [(ci, fi) for ci, c in enumerate(cells) for fi, f in enumerate(c.faces) if on[list(f)].all()]
            face_sets[name + side] = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    node_sets["boundary"] = np.unique(np.concatenate(list(node_sets.values())))
    return node_sets, face_sets


def _voronoi_cells(seeds, lo, hi):
    polys = []
    box = [
        [-1, 0, 0, lo[0]],
        [1, 0, 0, -hi[0]],
        [0, -1, 0, lo[1]],
        [0, 1, 0, -hi[1]],
        [0, 0, -1, lo[2]],
        [0, 0, 1, -hi[2]],
    ]
    for i, s in enumerate(seeds):
        others = np.delete(seeds, i, axis=0)
        n = others - s
        mid = 0.5 * (others + s)
        hs = np.vstack([box, np.column_stack([n, -np.einsum("ij,ij->i", n, mid)])])
        hsi = HalfspaceIntersection(hs, s)
        polys.append(convex_cell(hsi.intersections))
    return polys


def _min_edge(nodes, cells) -> float:
    return min(
        float(np.linalg.norm(nodes[f[k]] - nodes[f[k - 1]])) for c in cells for f in c.faces for k in range(len(f))
    )


def voronoi_layer(extents, counts, rng, jitter: float = 0.3, min_edge: float = 0.1, max_tries: int = 500) -> Mesh:
    """Voronoi mesh of a box whose cells are mirror symmetric about mid-height.

    Seeds on a jittered ``counts[0] x counts[1] x counts[2]`` lattice fill the
    lower half; the upper half is its mirror image. Bottom and top faces then
    carry the same polygon pattern, so layers stack conformingly. Draws whose
    shortest edge is below ``min_edge`` times the seed spacing are rejected.
    """
    a, b, c = map(float, extents)
    nx, ny, nz = counts
    half_hi = np.array([a, b, c / 2])
    spacing = half_hi / np.array([nx, ny, nz])
    g = np.stack(np.meshgrid(*(np.arange(k) + 0.5 for k in (nx, ny, nz)), indexing="ij"), -1).reshape(-1, 3)
    for _ in range(max_tries):
        seeds = (g + rng.uniform(-jitter, jitter, g.shape)) * spacing
        lower = _voronoi_cells(seeds, np.zeros(3), half_hi)
        upper = []
        for verts, faces in lower:
            v = verts.copy()
            v[:, 2] = c - v[:, 2]
            upper.append((v, [f[::-1] for f in faces]))
        nodes, cells = merge_polyhedra(lower + upper)
        if _min_edge(nodes, cells) >= min_edge * spacing.min():
            break
    else:
        raise RuntimeError("no Voronoi draw met the edge-length bound")
    ns, fs = box_sets(nodes, cells, (0, 0, 0), (a, b, c))
    return Mesh(nodes, tuple(cells), ns, fs)


def stack_layers(layer: Mesh, n: int) -> Mesh:
    """Stack ``n`` copies of a layer mesh along z."""
    lo, hi = layer.nodes.min(axis=0), layer.nodes.max(axis=0)
    c = hi[2] - lo[2]
    polys = []
    for k in range(n):
        for cell in layer.cells:
            ids = cell.nodes
            loc = {int(g): i for i, g in enumerate(ids)}
            v = layer.nodes[ids] + np.array([0.0, 0.0, k * c])
            polys.append((v, [[loc[i] for i in f] for f in cell.faces]))
    nodes, cells = merge_polyhedra(polys)
    top = hi.copy()
    top[2] = lo[2] + n * c
    ns, fs = box_sets(nodes, cells, lo, top)
    return Mesh(nodes, tuple(cells), ns, fs)


def box_cells_mesh(boxes) -> Mesh:
    """Mesh of axis-aligned boxes ``(lower_corner, edge_lengths)`` with hanging nodes.

    A face touching several smaller neighbours is split into the neighbours'
    faces; every node on a face edge becomes a polygon vertex, so faces may
    carry collinear vertices. Neighbours are assumed to tile shared faces.
    """
    boxes = [(np.asarray(lo, float), np.broadcast_to(np.asarray(e, float), (3,)).copy()) for lo, e in boxes]
    corners = np.array(
        [lo + e * np.array([i, j, k]) for lo, e in boxes for k in (0, 1) for j in (0, 1) for i in (0, 1)]
    )
    scale = np.ptp(corners, axis=0).max()
    tol = 1e-9 * scale
    nodes, _ = merge_polyhedra([(corners, [])])
    tree = cKDTree(nodes)

    def rects(bi, axis, side):
        lo, e = boxes[bi]
        plane = lo[axis] + side * e[axis]
        a1, a2 = [d for d in range(3) if d != axis]
        r0 = np.array([lo[a1], lo[a2]])
        r1 = r0 + np.array([e[a1], e[a2]])
        subs = []
        for bj, (lo2, e2) in enumerate(boxes):
            if bj == bi or e2[axis] >= e[axis] - tol:
                continue
            if abs(lo2[axis] + (1 - side) * e2[axis] - plane) > tol:
                continue
            s0 = np.array([lo2[a1], lo2[a2]])
            s1 = s0 + np.array([e2[a1], e2[a2]])
            if np.all(s0 >= r0 - tol) and np.all(s1 <= r1 + tol):
                subs.append((s0, s1))
        return plane, a1, a2, subs or [(r0, r1)]

    cells = []
    for bi, (lo, e) in enumerate(boxes):
        faces = []
        for axis in range(3):
            for side in (0, 1):
                plane, a1, a2, subs = rects(bi, axis, side)
                normal = np.zeros(3)
                normal[axis] = 1.0 if side else -1.0
                for s0, s1 in subs:
                    c = np.zeros(3)
                    c[axis] = plane
                    c[a1], c[a2] = 0.5 * (s0 + s1)
                    half = 0.5 * np.linalg.norm(s1 - s0)
                    cand = tree.query_ball_point(c, half + tol)
                    on = []
                    for i in cand:
                        p = nodes[i]
                        q = np.array([p[a1], p[a2]])
                        if abs(p[axis] - plane) > tol or np.any(q < s0 - tol) or np.any(q > s1 + tol):
                            continue
                        if np.any(np.abs(q - s0) < tol) or np.any(np.abs(q - s1) < tol):
                            on.append(i)
                    faces.append(tuple(_order_ccw(nodes, on, normal)))
        cells.append(PolyhedronCell(tuple(faces)))
    lo_all, hi_all = corners.min(axis=0), corners.max(axis=0)
    ns, fs = box_sets(nodes, cells, lo_all, hi_all)
    return Mesh(nodes, tuple(cells), ns, fs)
