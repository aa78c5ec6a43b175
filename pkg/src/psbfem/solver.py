"""Global assembly, boundary conditions, steady and backward-Euler solves.

Sign convention for surface data: a prescribed flux ``q > 0`` is heat
*leaving* the body through the face, so it enters the load vector as
``-int(q N dS)``. Convection adds ``int(h N^T N dS)`` to the conductance
matrix and ``int(h T_inf N dS)`` to the load.
"""
from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .element import (
    ElementError,
    ElementMatrices,
    cube_permutation,
    element_matrices,
    is_scalable_cube,
    map_cube,
    parent_cache,
)
from .mesh import Material, Mesh
from .polygon import face_basis

__all__ = [
    "SolverError",
    "DofMap",
    "BCValue",
    "BoundaryConditions",
    "ThermalSystem",
    "TransientConfig",
    "FieldResult",
    "assemble",
    "apply_convection",
    "apply_flux",
    "dirichlet_values",
    "solve_steady",
    "step_transient",
    "run_transient",
    "TransientStepper",
]

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SolverError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DofMap:
    """One temperature DOF per node; node ``i`` owns global DOF ``i``."""

    n_nodes: int

    @property
    def n_dofs(self) -> int:
        return self.n_nodes

    def dofs(self, nodes) -> np.ndarray:
        return np.asarray(nodes, dtype=np.int64)


class BCValue:
    """A boundary value: constant, ``(t, v)`` table, or ``f(points, t)``.

    Tables interpolate linearly and hold their end values outside the
    tabulated range. Callables receive an ``(m, 3)`` array of points and the
    time, and return ``m`` values (or a scalar).
    """

    def __init__(self, value):
        if isinstance(value, BCValue):
            self._kind, self._data = value._kind, value._data
        elif callable(value):
            self._kind, self._data = "function", value
        elif np.isscalar(value):
            self._kind, self._data = "constant", float(value)
        else:
            table = np.asarray(value, dtype=float)
            if table.ndim != 2 or table.shape[1] != 2 or len(table) == 0:
                raise ValueError("tabulated boundary values need rows of (t, value)")
            if np.any(np.diff(table[:, 0]) <= 0):
                raise ValueError("tabulated times must be strictly increasing")
            self._kind, self._data = "table", table

    @property
    def is_constant(self) -> bool:
        return self._kind == "constant"

    def __call__(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        m = len(points)
        if self._kind == "constant":
            return np.full(m, self._data)
        if self._kind == "table":
            tab = self._data
            return np.full(m, np.interp(t, tab[:, 0], tab[:, 1]))
        out = np.asarray(self._data(points, t), dtype=float)
        return np.broadcast_to(out, (m,)).copy()

    def __repr__(self):
        return f"BCValue({self._kind})"


@dataclass
class BoundaryConditions:
    """Named-set boundary data.

    ``dirichlet`` maps node-set names to values; ``flux`` maps face-set
    names to outward heat flux ``q``; ``convection`` maps face-set names to
    ``(h, T_inf)``. Every value may be anything accepted by :class:`BCValue`.
    """

    dirichlet: dict[str, Any] = field(default_factory=dict)
    flux: dict[str, Any] = field(default_factory=dict)
    convection: dict[str, tuple[Any, Any]] = field(default_factory=dict)

    def __post_init__(self):
        self.dirichlet = {k: BCValue(v) for k, v in self.dirichlet.items()}
        self.flux = {k: BCValue(v) for k, v in self.flux.items()}
        self.convection = {k: (BCValue(h), BCValue(ti)) for k, (h, ti) in self.convection.items()}
        for name, (h, _) in self.convection.items():
            if h.is_constant and h(np.zeros((1, 3)))[0] < 0:
                raise ValueError(f"negative film coefficient on face set '{name}'")


@dataclass
class ThermalSystem:
    """Global conductance ``K``, capacity ``M`` and load ``Q``.

    ``applied`` records which surface terms of ``bc`` are already folded
    into ``K`` and ``Q``, so solvers never add them twice.
    """

    K: sp.csr_matrix
    M: sp.csr_matrix
    Q: np.ndarray
    dof_map: DofMap
    bc: BoundaryConditions | None = None
    mesh: Mesh | None = None
    degree: int = 4
    info: dict = field(default_factory=dict)
    applied: frozenset = frozenset()
    _surface_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def coords(self) -> np.ndarray:
        if self.mesh is None:
            return np.zeros((self.n, 3))
        return self.mesh.nodes

    @classmethod
    def from_matrices(cls, K, M, Q=None, bc=None) -> "ThermalSystem":
        K = sp.csr_matrix(np.atleast_2d(K) if not sp.issparse(K) else K, dtype=float)
        M = sp.csr_matrix(np.atleast_2d(M) if not sp.issparse(M) else M, dtype=float)
        Q = np.zeros(K.shape[0]) if Q is None else np.atleast_1d(np.asarray(Q, float))
        return cls(K, M, Q, DofMap(K.shape[0]), bc=bc)


@dataclass
class TransientConfig:
    """Fixed-step march settings; ``T0`` is a nodal array or ``f(points)``."""

    dt: float
    t_end: float
    T0: Any = 0.0
    stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.t_end < self.dt * (1 - 1e-12):
            raise ValueError("t_end must be at least one time step")
        if int(self.stride) < 1:
            raise ValueError("output stride must be >= 1")
        self.stride = int(self.stride)

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * max(self.t_end, 1.0):
            raise ValueError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")
        return n

    def initial_field(self, coords: np.ndarray) -> np.ndarray:
        if callable(self.T0):
            return np.asarray(self.T0(coords), dtype=float).reshape(len(coords))
        return np.broadcast_to(np.asarray(self.T0, dtype=float), (len(coords),)).copy()


@dataclass
class FieldResult:
    times: np.ndarray
    fields: np.ndarray  # (n_times, n_nodes)
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]


# --- assembly ---------------------------------------------------------------------


def _material_for(materials, cell) -> Material:
    if isinstance(materials, Material):
        return materials
    try:
        return materials[cell.material]
    except KeyError:
        raise SolverError(f"no material named '{cell.material}'") from None


def _cell_matrices(args):
    ci, cell, mesh, mat, degree, use_cache = args
    try:
        if use_cache and mat.is_isotropic:
            L = is_scalable_cube(cell, mesh)
            if L is not None:
                em = map_cube(parent_cache(degree), mat, L)
                p = cube_permutation(cell, mesh, L)
                return ElementMatrices(em.K[np.ix_(p, p)], em.M[np.ix_(p, p)]), True
        return element_matrices(cell, mesh, mat, degree), False
    except ElementError as exc:
        raise ElementError(exc.reason, ci) from exc


def assemble(
    mesh: Mesh,
    materials: Material | Mapping[str, Material],
    degree: int = 4,
    use_parent_cache: bool = True,
    threads: int = 1,
    bc: BoundaryConditions | None = None,
) -> ThermalSystem:
    """Scatter-add every cell's ``(K, M)`` into global sparse matrices.

    Element matrices may be computed on ``threads`` worker threads; the
    scatter runs afterwards in cell order so the result does not depend on
    the thread count.
    """
    t0 = time.perf_counter()
    jobs = [
        (ci, cell, mesh, _material_for(materials, cell), degree, use_parent_cache)
        for ci, cell in enumerate(mesh.cells)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_cell_matrices, jobs, chunksize=max(1, len(jobs) // (8 * threads))))
    else:
        results = [_cell_matrices(j) for j in jobs]
    t_elem = time.perf_counter() - t0

    sizes = [len(cell.nodes) ** 2 for cell in mesh.cells]
    total = int(np.sum(sizes))
    rows = np.empty(total, dtype=np.int64)
    cols = np.empty(total, dtype=np.int64)
    kv = np.empty(total)
    mv = np.empty(total)
    pos = 0
    n_cached = 0
    for cell, (em, cached) in zip(mesh.cells, results):
        nodes = cell.nodes
        k = len(nodes)
        sl = slice(pos, pos + k * k)
        rows[sl] = np.repeat(nodes, k)
        cols[sl] = np.tile(nodes, k)
        kv[sl] = em.K.ravel()
        mv[sl] = em.M.ravel()
        pos += k * k
        n_cached += cached
    n = mesh.n_nodes
    K = sp.coo_matrix((kv, (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((mv, (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    M.sum_duplicates()
    info = {
        "cells": mesh.n_cells,
        "cached_cells": n_cached,
        "element_seconds": t_elem,
        "assembly_seconds": time.perf_counter() - t0,
        "threads": threads,
        "degree": degree,
        "parent_cache": use_parent_cache,
    }
    log.debug("assembled %d cells (%d from parent cache) in %.3fs", mesh.n_cells, n_cached, info["assembly_seconds"])
    return ThermalSystem(K, M, np.zeros(n), DofMap(n), bc=bc, mesh=mesh, degree=degree, info=info)


# --- surface terms ----------------------------------------------------------------


def _boundary_keys(system):
    cache = system._surface_cache
    if "boundary" not in cache:
        cnt = Counter(frozenset(f) for c in system.mesh.cells for f in c.faces)
        cache["boundary"] = {k for k, v in cnt.items() if v == 1}
    return cache["boundary"]


def _face_quadrature(system, ci, fi):
    """Nodes, physical quadrature points, ``w * dS`` and basis values of a face."""
    key = ("face", ci, fi)
    cache = system._surface_cache
    if key not in cache:
        mesh = system.mesh
        face = mesh.cells[ci].faces[fi]
        if frozenset(face) not in _boundary_keys(system):
            raise SolverError(f"face [{ci}, {fi}] is not on the mesh boundary")
        X = mesh.nodes[list(face)]
        rule, basis = face_basis(len(face), system.degree)
        x = basis.N @ X
        dS = np.linalg.norm(np.cross(basis.dN_deta @ X, basis.dN_dzeta @ X), axis=1)
        cache[key] = (np.asarray(face), x, rule.weights * dS, basis.N)
    return cache[key]


def _face_set(system, name):
    if system.mesh is None or name not in system.mesh.face_sets:
        raise SolverError(f"unknown face set '{name}'")
    return system.mesh.face_sets[name]


def _convection_terms(system, bc, t):
    n = system.n
    rows, cols, vals = [], [], []
    q = np.zeros(n)
    fingerprint = []
    for name, (h, tinf) in bc.convection.items():
        for ci, fi in _face_set(system, name):
            nodes, x, wds, N = _face_quadrature(system, ci, fi)
            hv = h(x, t)
            if np.any(hv < 0):
                raise SolverError(f"negative film coefficient on face set '{name}'")
            tv = tinf(x, t)
            H = np.einsum("m,mi,mj->ij", wds * hv, N, N)
            rows.append(np.repeat(nodes, len(nodes)))
            cols.append(np.tile(nodes, len(nodes)))
            vals.append(H.ravel())
            np.add.at(q, nodes, N.T @ (wds * hv * tv))
            fingerprint.append(hv)
    if not vals:
        return None, q, b""
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    return H, q, np.concatenate(fingerprint).tobytes()


def _flux_terms(system, bc, t):
    q = np.zeros(system.n)
    for name, qv in bc.flux.items():
        for ci, fi in _face_set(system, name):
            nodes, x, wds, N = _face_quadrature(system, ci, fi)
            np.add.at(q, nodes, -(N.T @ (wds * qv(x, t))))
    return q


def apply_convection(system: ThermalSystem, bc: BoundaryConditions | None = None, t: float = 0.0) -> ThermalSystem:
    """Add the Robin terms of ``bc`` (default ``system.bc``) evaluated at ``t``."""
    bc = bc or system.bc
    if bc is None or not bc.convection:
        return replace(system, applied=system.applied | {"convection"})
    H, q, _ = _convection_terms(system, bc, t)
    return replace(system, K=(system.K + H).tocsr(), Q=system.Q + q, applied=system.applied | {"convection"})


def apply_flux(system: ThermalSystem, bc: BoundaryConditions | None = None, t: float = 0.0) -> ThermalSystem:
    """Add prescribed surface fluxes of ``bc``; positive flux leaves the body."""
    bc = bc or system.bc
    if bc is None or not bc.flux:
        return replace(system, applied=system.applied | {"flux"})
    return replace(system, Q=system.Q + _flux_terms(system, bc, t), applied=system.applied | {"flux"})


def _operators_at(system, t):
    """``K(t)``, ``Q(t)`` and a fingerprint of the time-dependent part of ``K``."""
    bc = system.bc
    K, Q, fp = system.K, system.Q, b""
    if bc is None:
        return K, Q, fp
    if "convection" not in system.applied and bc.convection:
        H, q, fp = _convection_terms(system, bc, t)
        K = (K + H).tocsr()
        Q = Q + q
    if "flux" not in system.applied and bc.flux:
        Q = Q + _flux_terms(system, bc, t)
    return K, Q, fp


def dirichlet_values(system: ThermalSystem, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Constrained DOFs (ascending) and their prescribed values at time ``t``."""
    bc = system.bc
    if bc is None or not bc.dirichlet:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    mesh = system.mesh
    coords = system.coords
    dofs, vals = [], []
    for name, value in bc.dirichlet.items():
        if mesh is not None and name in mesh.node_sets:
            nodes = mesh.node_sets[name]
        elif mesh is None and name == "all":
            nodes = np.arange(system.n)
        else:
            raise SolverError(f"unknown node set '{name}'")
        dofs.append(system.dof_map.dofs(nodes))
        vals.append(value(coords[nodes], t))
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    order = np.argsort(dofs, kind="stable")
    dofs, vals = dofs[order], vals[order]
    uniq, start = np.unique(dofs, return_index=True)
    ends = np.append(start[1:], len(dofs))
    for u, s, e in zip(uniq, start, ends):
        if e - s > 1 and np.ptp(vals[s:e]) > 1e-12 * max(1.0, np.abs(vals[s:e]).max()):
            raise SolverError(f"conflicting Dirichlet values on node {u}")
    return uniq, vals[start]


def _partition(n, fixed):
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    return np.flatnonzero(mask)


def _check_residual(A, x, rhs, what):
    nr = np.linalg.norm(rhs)
    if nr == 0:
        return 0.0
    res = np.linalg.norm(A @ x - rhs) / nr
    if not res < RESIDUAL_TOL:
        raise SolverError(f"{what}: relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    return float(res)


def _factorize(A):
    try:
        # the operators are symmetric, so a symmetric fill-reducing ordering applies
        return spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError("insufficient constraints") from exc


def _solve(lu, A, rhs, what):
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("insufficient constraints")
    nr = np.linalg.norm(rhs)
    if nr and np.linalg.norm(A @ x - rhs) / nr >= RESIDUAL_TOL:
        x = x + lu.solve(rhs - A @ x)  # one step of iterative refinement
    return x, _check_residual(A, x, rhs, what)


def solve_steady(system: ThermalSystem, t: float = 0.0) -> FieldResult:
    """Solve ``K T = Q`` with Dirichlet DOFs eliminated by partitioning."""
    t0 = time.perf_counter()
    K, Q, _ = _operators_at(system, t)
    fixed, tbar = dirichlet_values(system, t)
    has_robin = system.bc is not None and bool(system.bc.convection)
    if len(fixed) == 0 and not has_robin:
        raise SolverError("insufficient constraints")
    free = _partition(system.n, fixed)
    T = np.zeros(system.n)
    T[fixed] = tbar
    res = 0.0
    if len(free):
        Kff = K[free][:, free]
        rhs = Q[free] - K[free][:, fixed] @ tbar
        lu = _factorize(Kff)
        T[free], res = _solve(lu, Kff, rhs, "steady solve")
    meta = {"residual": res, "solve_seconds": time.perf_counter() - t0, "free_dofs": len(free)}
    return FieldResult(np.array([t]), T[None, :], meta)


class TransientStepper:
    """Backward-Euler stepper that reuses its factorization.

    The factorization of ``K + M/dt`` restricted to the free DOFs is kept
    while ``dt``, the constrained DOF set and the convection coefficients
    stay unchanged.
    """

    def __init__(self, system: ThermalSystem):
        self.system = system
        self._key = None
        self._lu = None
        self._A = None
        self.factorizations = 0
        self.max_residual = 0.0

    def step(self, T_t: np.ndarray, dt: float, t_next: float) -> np.ndarray:
        if not dt > 0:
            raise ValueError("time step must be positive")
        sysm = self.system
        K, Q, fp = _operators_at(sysm, t_next)
        fixed, tbar = dirichlet_values(sysm, t_next)
        free = _partition(sysm.n, fixed)
        key = (dt, fixed.tobytes(), fp)
        if key != self._key:
            A = (K + sysm.M / dt).tocsr()
            self._A = A[free][:, free]
            self._A_fc = A[free][:, fixed]
            self._lu = _factorize(self._A) if len(free) else None
            self._key = key
            self.factorizations += 1
        T = np.empty(sysm.n)
        T[fixed] = tbar
        if len(free):
            rhs = Q[free] + (sysm.M[free] @ T_t) / dt - self._A_fc @ tbar
            T[free], res = _solve(self._lu, self._A, rhs, "transient step")
            self.max_residual = max(self.max_residual, res)
        return T


def step_transient(system: ThermalSystem, T_t: np.ndarray, dt: float, t_next: float) -> np.ndarray:
    """One backward-Euler step from ``T_t`` to ``t_next = t + dt``."""
    return TransientStepper(system).step(np.asarray(T_t, float), dt, t_next)


def run_transient(
    system: ThermalSystem,
    cfg: TransientConfig,
    callback: Callable[[int, float, np.ndarray], None] | None = None,
) -> FieldResult:
    """March from ``cfg.T0`` to ``cfg.t_end``, recording every ``cfg.stride`` steps."""
    t0 = time.perf_counter()
    n_steps = cfg.n_steps
    T = cfg.initial_field(system.coords)
    stepper = TransientStepper(system)
    times, fields, recorded = [0.0], [T.copy()], [0]
    for k in range(1, n_steps + 1):
        t = k * cfg.dt
        T = stepper.step(T, cfg.dt, t)
        if callback is not None:
            callback(k, t, T)
        if k % cfg.stride == 0 or k == n_steps:
            times.append(t)
            fields.append(T.copy())
            recorded.append(k)
    meta = {
        "steps": n_steps,
        "recorded_steps": recorded,
        "factorizations": stepper.factorizations,
        "max_residual": stepper.max_residual,
        "solve_seconds": time.perf_counter() - t0,
    }
    return FieldResult(np.array(times), np.vstack(fields), meta)
