"""Analytic reference problems, error norms and convergence studies.

Built-in cases
--------------
``patch``
    Prism ``[0,1] x [0,1] x [0,3]``, ``T = 0`` at ``z = 0`` and ``T = 100`` at
    ``z = 3``; exact field ``100 z / 3``. Uses the shipped polyhedral mesh.
``beam``
    Bar ``1.5 x 1.5 x 6``, ``T = 70`` at ``z = 0`` and ``T = 30`` at ``z = 6``.
``steady-cube``
    Unit cube, ``T = sin(pi x) sin(pi z)`` on ``y = 1`` and zero elsewhere;
    exact field ``sinh(pi y) / sinh(pi) sin(pi x) sin(pi z)``.
``steady-cube-harmonic``
    Same boundary data against the harmonic field
    ``sinh(sqrt(2) pi y) / sinh(sqrt(2) pi) sin(pi x) sin(pi z)``.
``transient-cube``
    Cube ``[0, pi]^3`` with zero boundary temperature and initial field
    ``10 sin x sin y sin z``; exact field ``10 exp(-3 t) sin x sin y sin z``.
``robin-slab``
    Slab ``[0,1] x [0,0.2] x [0,0.2]``, ``T = 1`` at ``x = 0`` and convection
    ``h = 1, T_inf = 0`` at ``x = 1``; exact field ``1 - x / 2``.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .mesh import Material, Mesh, PolyhedronCell
from .solver import (
    BoundaryConditions,
    FieldResult,
    TransientConfig,
    assemble,
    run_transient,
    solve_steady,
)

__all__ = [
    "l2_relative_error",
    "analytic_steady_cube",
    "analytic_transient_cube",
    "harmonic_steady_cube",
    "structured_box_mesh",
    "AnalyticCase",
    "ConvergenceRecord",
    "CASES",
    "get_case",
    "run_case",
    "run_convergence",
    "fitted_order",
    "free_nodes",
    "write_convergence_csv",
    "CSV_COLUMNS",
    "fixture_path",
]

CSV_COLUMNS = ("case", "h", "dofs", "e_L2", "order", "seconds", "cache_flag")


def l2_relative_error(T_num, T_ref) -> float:
    """``||T_num - T_ref|| / ||T_ref||`` over nodal values."""
    T_num = np.asarray(T_num, float)
    T_ref = np.asarray(T_ref, float)
    if T_num.shape != T_ref.shape:
        raise ValueError("fields differ in length")
    ref = np.linalg.norm(T_ref)
    if ref == 0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm(T_num - T_ref) / ref)


def analytic_steady_cube(p) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return np.sinh(np.pi * y) / np.sinh(np.pi) * np.sin(np.pi * x) * np.sin(np.pi * z)


def analytic_transient_cube(p, t: float = 0.0) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, float))
    return 10.0 * np.exp(-3.0 * t) * np.sin(p[:, 0]) * np.sin(p[:, 1]) * np.sin(p[:, 2])


# Local corner index i + 2j + 4k, faces outward and counterclockwise.
_HEX_FACES = (
    (0, 2, 3, 1),
    (4, 5, 7, 6),
    (0, 1, 5, 4),
    (2, 6, 7, 3),
    (0, 4, 6, 2),
    (1, 3, 7, 5),
)
_HEX_FACE_NAMES = ("zmin", "zmax", "ymin", "ymax", "xmin", "xmax")


def structured_box_mesh(extents, h, origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Axis-aligned hexahedral mesh of a box with cubes of edge ``h``.

    Node sets and face sets ``xmin, xmax, ymin, ymax, zmin, zmax`` cover the
    six sides; the node set ``boundary`` is their union.
    """
    extents = np.asarray(extents, float)
    origin = np.asarray(origin, float)
    counts = np.rint(extents / h).astype(int)
    if np.any(counts < 1) or np.any(np.abs(counts * h - extents) > 1e-9 * extents):
        raise ValueError(f"extents {extents.tolist()} are not divisible by h={h}")
    nx, ny, nz = counts
    h_axes = extents / counts
    ii, jj, kk = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    nid = lambda i, j, k: i + (nx + 1) * (j + (ny + 1) * k)  # noqa: E731
    order = np.argsort(nid(ii, jj, kk).ravel())
    grid = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])[order]
    nodes = origin + grid * h_axes

    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ci, cj, ck = (a.transpose(2, 1, 0).ravel() for a in (ci, cj, ck))
    corners = np.stack(
        [nid(ci + a, cj + b, ck + c) for c in (0, 1) for b in (0, 1) for a in (0, 1)], axis=1
    )
    cells = tuple(PolyhedronCell(tuple(tuple(int(cn[v]) for v in f) for f in _HEX_FACES)) for cn in corners)

    tol = 1e-9 * np.max(extents)
    lo, hi = origin, origin + extents
    node_sets = {}
    for axis, name in enumerate("xyz"):
        node_sets[f"{name}min"] = np.flatnonzero(np.abs(nodes[:, axis] - lo[axis]) < tol)
        node_sets[f"{name}max"] = np.flatnonzero(np.abs(nodes[:, axis] - hi[axis]) < tol)
    node_sets["boundary"] = np.unique(np.concatenate(list(node_sets.values())))
    idx = np.arange(len(corners))
    wall = {
        "zmin": ck == 0,
        "zmax": ck == nz - 1,
        "ymin": cj == 0,
        "ymax": cj == ny - 1,
        "xmin": ci == 0,
        "xmax": ci == nx - 1,
    }
    face_sets = {
        name: np.column_stack([idx[wall[name]], np.full(wall[name].sum(), _HEX_FACE_NAMES.index(name))])
        for name in _HEX_FACE_NAMES
    }
    return Mesh(nodes, cells, node_sets, face_sets)


def fixture_path(name: str):
    return resources.files("psbfem") / "data" / name


@dataclass
class ConvergenceRecord:
    h: float
    dofs: int
    e_L2: float
    seconds: float
    cache_flag: bool = True
    case: str = ""


@dataclass
class AnalyticCase:
    """A benchmark with closed-form solution ``solution(points, t)``.

    ``boundary_checks`` pairs a sampler ``(rng, n) -> points`` with a residual
    ``points -> array`` that must vanish when the closed form satisfies the
    boundary condition imposed there.
    """

    name: str
    description: str
    material: Material
    solution: Callable[[np.ndarray, float], np.ndarray]
    make_mesh: Callable[[float | None], Mesh]
    make_bc: Callable[[Mesh], BoundaryConditions]
    levels: tuple[float, ...] = ()
    default_h: float | None = None
    transient: TransientConfig | None = None
    boundary_checks: list = field(default_factory=list)
    monitor: tuple[float, float, float] | None = None

    def self_check(self, n: int = 1000, seed: int = 0) -> float:
        """Largest boundary residual of the closed form over random samples."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for sampler, residual in self.boundary_checks:
            pts = sampler(rng, n)
            worst = max(worst, float(np.max(np.abs(residual(pts)))))
        return worst

    def reference(self, mesh: Mesh, t: float | None = None) -> np.ndarray:
        if t is None:
            t = self.transient.t_end if self.transient else 0.0
        return np.asarray(self.solution(mesh.nodes, t), float)


def _face_sampler(axis, value, lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)

    def sample(rng, n):
        p = lo + rng.random((n, 3)) * (hi - lo)
        p[:, axis] = value
        return p

    return sample


def _dirichlet_check(sol, bcfun, t=0.0):
    return lambda p: sol(p, t) - bcfun(p)


def _patch_case():
    sol = lambda p, t=0.0: 100.0 * np.asarray(p)[:, 2] / 3.0  # noqa: E731
    lo, hi = (0, 0, 0), (1, 1, 3)

    def make_mesh(h=None):
        if h is None:
            from .io import load_mesh

            return load_mesh(fixture_path("patch_prism.json"))
        return structured_box_mesh((1.0, 1.0, 3.0), h)

    return AnalyticCase(
        name="patch",
        description="patch test on a polyhedral prism 1 x 1 x 3, T=0 at z=0, T=100 at z=3",
        material=Material.isotropic(1.0, 1.0, 1.0),
        solution=sol,
        make_mesh=make_mesh,
        make_bc=lambda mesh: BoundaryConditions(dirichlet={"zmin": 0.0, "zmax": 100.0}),
        boundary_checks=[
            (_face_sampler(2, 0.0, lo, hi), _dirichlet_check(sol, lambda p: 0.0)),
            (_face_sampler(2, 3.0, lo, hi), _dirichlet_check(sol, lambda p: 100.0)),
        ],
    )


def _beam_case():
    sol = lambda p, t=0.0: 70.0 - 40.0 * np.asarray(p)[:, 2] / 6.0  # noqa: E731
    lo, hi = (0, 0, 0), (1.5, 1.5, 6.0)

    def make_mesh(h=0.1):
        if h is None:
            from .io import load_mesh

            return load_mesh(fixture_path("poly_beam.json"))
        return structured_box_mesh((1.5, 1.5, 6.0), h)

    return AnalyticCase(
        name="beam",
        description="bar 1.5 x 1.5 x 6, T=70 at z=0 and T=30 at z=6",
        material=Material.isotropic(1.0, 1.0, 1.0),
        solution=sol,
        make_mesh=make_mesh,
        make_bc=lambda mesh: BoundaryConditions(dirichlet={"zmin": 70.0, "zmax": 30.0}),
        levels=(1.5, 0.5, 0.25, 0.1),
        default_h=0.1,
        boundary_checks=[
            (_face_sampler(2, 0.0, lo, hi), _dirichlet_check(sol, lambda p: 70.0)),
            (_face_sampler(2, 6.0, lo, hi), _dirichlet_check(sol, lambda p: 30.0)),
        ],
    )


def _steady_cube_case():
    sol = lambda p, t=0.0: analytic_steady_cube(p)  # noqa: E731
    top = lambda p, t=0.0: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 2])  # noqa: E731
    lo, hi = (0, 0, 0), (1, 1, 1)

    def make_bc(mesh):
        zero = {k: 0.0 for k in ("xmin", "xmax", "ymin", "zmin", "zmax")}
        return BoundaryConditions(dirichlet={**zero, "ymax": top})

    checks = [(_face_sampler(1, 1.0, lo, hi), _dirichlet_check(sol, top))]
    for axis in range(3):
        for v in (0.0, 1.0):
            if axis == 1 and v == 1.0:
                continue
            checks.append((_face_sampler(axis, v, lo, hi), _dirichlet_check(sol, lambda p: 0.0)))
    return AnalyticCase(
        name="steady-cube",
        description="unit cube, T=sin(pi x) sin(pi z) on y=1, zero elsewhere",
        material=Material.isotropic(1.0, 1.0, 1.0),
        solution=sol,
        make_mesh=lambda h=0.1: structured_box_mesh((1.0, 1.0, 1.0), h),
        make_bc=make_bc,
        levels=(0.25, 0.1, 0.05, 0.025),
        default_h=0.1,
        boundary_checks=checks,
        monitor=(0.5, 0.5, 0.5),
    )


def harmonic_steady_cube(p) -> np.ndarray:
    """Harmonic field with the steady-cube boundary values.

    ``sinh(sqrt(2) pi y) / sinh(sqrt(2) pi) sin(pi x) sin(pi z)`` solves the
    Laplace equation; ``analytic_steady_cube`` matches the same boundary data
    but has Laplacian ``-pi^2 T``.
    """
    p = np.atleast_2d(np.asarray(p, float))
    a = np.sqrt(2.0) * np.pi
    return np.sinh(a * p[:, 1]) / np.sinh(a) * np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 2])


def _harmonic_cube_case():
    case = _steady_cube_case()
    case.name = "steady-cube-harmonic"
    case.description = "steady-cube boundary data against the harmonic reference field"
    case.solution = lambda p, t=0.0: harmonic_steady_cube(p)
    top = lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 2])  # noqa: E731
    lo, hi = (0, 0, 0), (1, 1, 1)
    checks = [(_face_sampler(1, 1.0, lo, hi), lambda p: case.solution(p) - top(p))]
    for axis in range(3):
        for v in (0.0, 1.0):
            if not (axis == 1 and v == 1.0):
                checks.append((_face_sampler(axis, v, lo, hi), case.solution))
    case.boundary_checks = checks
    return case


def _transient_cube_case():
    sol = analytic_transient_cube
    L = np.pi
    lo, hi = (0, 0, 0), (L, L, L)
    checks = []
    for axis in range(3):
        for v in (0.0, L):
            for t in (0.0, 0.5, 1.0):
                checks.append((_face_sampler(axis, v, lo, hi), _dirichlet_check(sol, lambda p: 0.0, t)))
    return AnalyticCase(
        name="transient-cube",
        description="cube [0, pi]^3, zero boundary temperature, T0 = 10 sin x sin y sin z",
        material=Material.isotropic(1.0, 1.0, 1.0),
        solution=sol,
        make_mesh=lambda h=np.pi / 20: structured_box_mesh((L, L, L), h),
        make_bc=lambda mesh: BoundaryConditions(dirichlet={"boundary": 0.0}),
        levels=(np.pi / 5, np.pi / 10, np.pi / 20, np.pi / 40),
        default_h=np.pi / 20,
        transient=TransientConfig(dt=0.01, t_end=1.0, T0=lambda p: analytic_transient_cube(p, 0.0)),
        boundary_checks=checks,
        monitor=(L / 2, L / 2, L / 2),
    )


def _robin_slab_case():
    sol = lambda p, t=0.0: 1.0 - 0.5 * np.asarray(p)[:, 0]  # noqa: E731
    lo, hi = (0, 0, 0), (1.0, 0.2, 0.2)
    # -k dT/dx at x = 1 must equal h (T - T_inf) with k = h = 1, T_inf = 0
    robin = lambda p: 0.5 - 1.0 * (sol(p) - 0.0)  # noqa: E731
    return AnalyticCase(
        name="robin-slab",
        description="slab of length 1, T=1 at x=0, convection h=1, T_inf=0 at x=1",
        material=Material.isotropic(1.0, 1.0, 1.0),
        solution=sol,
        make_mesh=lambda h=0.1: structured_box_mesh((1.0, 0.2, 0.2), h),
        make_bc=lambda mesh: BoundaryConditions(dirichlet={"xmin": 1.0}, convection={"xmax": (1.0, 0.0)}),
        levels=(0.2, 0.1, 0.05),
        default_h=0.1,
        boundary_checks=[
            (_face_sampler(0, 0.0, lo, hi), _dirichlet_check(sol, lambda p: 1.0)),
            (_face_sampler(0, 1.0, lo, hi), robin),
        ],
    )


CASES: dict[str, Callable[[], AnalyticCase]] = {
    "patch": _patch_case,
    "beam": _beam_case,
    "steady-cube": _steady_cube_case,
    "steady-cube-harmonic": _harmonic_cube_case,
    "transient-cube": _transient_cube_case,
    "robin-slab": _robin_slab_case,
}


def get_case(name: str) -> AnalyticCase:
    try:
        return CASES[name]()
    except KeyError:
        raise KeyError(f"unknown case '{name}'; available: {', '.join(CASES)}") from None


def run_case(
    case: AnalyticCase,
    mesh: Mesh,
    degree: int = 4,
    use_parent_cache: bool = True,
    threads: int = 1,
    dt: float | None = None,
    t_end: float | None = None,
    stride: int | None = None,
) -> tuple[FieldResult, dict]:
    """Assemble and solve ``case`` on ``mesh``; returns the result and timings."""
    t0 = time.perf_counter()
    system = assemble(mesh, case.material, degree, use_parent_cache, threads, bc=case.make_bc(mesh))
    t_asm = time.perf_counter() - t0
    if case.transient is not None:
        cfg = case.transient
        cfg = TransientConfig(
            dt=dt or cfg.dt,
            t_end=t_end or cfg.t_end,
            T0=cfg.T0,
            stride=stride or cfg.stride,
        )
        result = run_transient(system, cfg)
    else:
        result = solve_steady(system)
    info = dict(system.info)
    info["assembly_seconds"] = t_asm
    info["total_seconds"] = time.perf_counter() - t0
    return result, info


def free_nodes(mesh: Mesh, bc: BoundaryConditions) -> np.ndarray:
    """Nodes not constrained by any Dirichlet set of ``bc``."""
    fixed = [mesh.node_sets[name] for name in bc.dirichlet]
    fixed = np.concatenate(fixed) if fixed else np.zeros(0, dtype=np.int64)
    return np.setdiff1d(np.arange(mesh.n_nodes), fixed)


def fitted_order(records: Sequence[ConvergenceRecord], last: int | None = None) -> float:
    """Least-squares slope of ``log e_L2`` against ``log h``."""
    recs = list(records)[-last:] if last else list(records)
    if len(recs) < 2:
        return float("nan")
    h = np.log([r.h for r in recs])
    e = np.log([r.e_L2 for r in recs])
    return float(np.polyfit(h, e, 1)[0])


def run_convergence(
    case: AnalyticCase,
    levels: Sequence[float] | None = None,
    degree: int = 4,
    use_parent_cache: bool = True,
    threads: int = 1,
    dt: float | None = None,
    meshes: Sequence[Mesh] | None = None,
) -> list[ConvergenceRecord]:
    """Solve ``case`` on a refinement sequence and record ``e_L2`` per level.

    Structured box meshes are generated for ``levels`` unless explicit
    ``meshes`` are given (their ``h`` is then taken from ``levels``).
    """
    levels = tuple(levels or case.levels)
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise ValueError("mesh sizes must be strictly decreasing")
    records = []
    for i, h in enumerate(levels):
        mesh = meshes[i] if meshes is not None else case.make_mesh(h)
        t0 = time.perf_counter()
        result, _ = run_case(case, mesh, degree, use_parent_cache, threads, dt=dt)
        seconds = time.perf_counter() - t0
        t_final = result.times[-1]
        err = l2_relative_error(result.final, case.solution(mesh.nodes, t_final))
        records.append(ConvergenceRecord(h, mesh.n_nodes, err, seconds, use_parent_cache, case.name))
    return records


def write_convergence_csv(records: Sequence[ConvergenceRecord], path_or_file) -> None:
    """CSV with the columns of ``CSV_COLUMNS``.

    ``order`` is the least-squares order over all levels up to and including
    the row (empty on the first row), so the last row carries the order of
    the whole study.
    """
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i, r in enumerate(records):
            order = "" if i == 0 else f"{fitted_order(records[: i + 1]):.6f}"
            w.writerow([r.case, repr(float(r.h)), r.dofs, f"{r.e_L2:.12e}", order, f"{r.seconds:.6f}", int(r.cache_flag)])
    finally:
        if own:
            fh.close()
