"""Command-line driver.

Exit codes: 0 success, 1 input or usage error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import benchmarks as bm
from .element import ElementError, element_report
from .io import ConfigError, load_config, load_mesh
from .mesh import Material, MeshError, validate_mesh
from .solver import SolverError, assemble, run_transient, solve_steady
from .vtk import write_vtk

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

# acceptance gates reported by ``bench``
PATCH_GATE = 5e-4
BEAM_GATE = 1e-3
TRANSIENT_GATE = 0.06
ROBIN_GATE = 1e-6


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--threads", type=int, default=1, help="worker threads for element matrices")
    p.add_argument("--quadrature-degree", type=int, choices=(2, 4, 6), default=None, help="face quadrature degree")
    p.add_argument("--no-parent-cache", action="store_true", help="compute every cube cell in full")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized self-checks")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="psbfem", description="Polyhedral SBFEM heat conduction solver")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", parents=[common], help="solve a configured problem")
    p.add_argument("config", type=Path, help="YAML or JSON solver configuration")
    p.add_argument("--mesh", type=Path, help="override the configured mesh file")
    p.add_argument("--vtk", type=Path, help="override the configured VTK output path")
    p.add_argument("--csv", type=Path, help="override the configured CSV output path")

    cases = list(bm.CASES)
    p = sub.add_parser("bench", parents=[common], help="run a built-in benchmark case")
    p.add_argument("case", choices=cases)
    p.add_argument("--h", type=float, help="structured mesh size (default: the case's own mesh)")
    p.add_argument("--mesh", type=Path, help="mesh file to use instead")
    p.add_argument("--dt", type=float, help="time step for transient cases")
    p.add_argument("--vtk", type=Path, help="write the result to VTK")

    p = sub.add_parser("converge", parents=[common], help="mesh-refinement study of a case")
    p.add_argument("case", choices=cases)
    p.add_argument("--levels", type=float, nargs="+", help="decreasing mesh sizes")
    p.add_argument("--dt", type=float, help="time step for transient cases")
    p.add_argument("--csv", type=Path, help="write the report here instead of stdout")

    p = sub.add_parser("inspect", parents=[common], help="dump per-cell element matrices")
    p.add_argument("mesh", type=Path)
    p.add_argument("--cell", type=int, nargs="+", help="cell indices (default: all)")
    p.add_argument("--k", type=float, default=1.0, help="isotropic conductivity")
    p.add_argument("--rho-c", type=float, default=1.0, help="volumetric heat capacity")

    p = sub.add_parser("validate", parents=[common], help="check a mesh file")
    p.add_argument("mesh", type=Path)
    return parser


def _degree(args, default=4):
    return args.quadrature_degree or default


def _write_csv(path, mesh, T):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "x", "y", "z", "T"])
        for i, (p, v) in enumerate(zip(mesh.nodes, T)):
            w.writerow([i, *(repr(float(c)) for c in p), repr(float(v))])


def _cmd_solve(args) -> int:
    cfg = load_config(args.config)
    mesh = load_mesh(args.mesh or cfg.mesh_path, degree=_degree(args, cfg.degree))
    mesh = cfg.apply_to(mesh)
    system = assemble(
        mesh,
        cfg.materials,
        _degree(args, cfg.degree),
        cfg.parent_cache and not args.no_parent_cache,
        args.threads if args.threads != 1 else cfg.threads,
        bc=cfg.bc,
    )
    result = run_transient(system, cfg.transient) if cfg.analysis == "transient" else solve_steady(system)
    T = result.final
    print(f"cells={mesh.n_cells} nodes={mesh.n_nodes} Tmin={T.min():.10g} Tmax={T.max():.10g}")
    vtk = args.vtk or cfg.vtk
    if vtk is not None:
        files = write_vtk(mesh, result, vtk)
        print(f"wrote {len(files)} VTK file(s) to {files[0].parent}")
    out_csv = args.csv or cfg.csv
    if out_csv is not None:
        _write_csv(out_csv, mesh, T)
        print(f"wrote {out_csv}")
    return EXIT_OK


def _gate(name, value, limit):
    verdict = "PASS" if value <= limit else "FAIL"
    print(f"{name} = {value:.6e} (gate {limit:.1e}) {verdict}")


def _cmd_bench(args) -> int:
    case = bm.get_case(args.case)
    resid = case.self_check(1000, args.seed)
    print(f"case {case.name}: {case.description}")
    print(f"closed-form boundary residual = {resid:.3e} (seed {args.seed})")
    if args.mesh is not None:
        mesh = load_mesh(args.mesh, degree=_degree(args))
    else:
        mesh = case.make_mesh(args.h if args.h is not None else case.default_h)
    result, info = bm.run_case(case, mesh, _degree(args), not args.no_parent_cache, args.threads, dt=args.dt)
    T = result.final
    ref = case.reference(mesh, result.times[-1])
    print(f"cells={mesh.n_cells} nodes={mesh.n_nodes} cached_cells={info['cached_cells']} seconds={info['total_seconds']:.3f}")
    e = bm.l2_relative_error(T, ref)
    print(f"e_L2 = {e:.6e}")
    free = bm.free_nodes(mesh, case.make_bc(mesh))
    if case.name == "patch":
        _gate("max nodal relative error", float(np.max(np.abs(T[free] - ref[free]) / np.abs(ref[free]))), PATCH_GATE)
    elif case.name == "beam":
        _gate("e_L2", e, BEAM_GATE)
    elif case.name == "robin-slab":
        _gate("max nodal error", float(np.max(np.abs(T - ref))), ROBIN_GATE)
    if case.monitor is not None:
        i = int(np.argmin(np.linalg.norm(mesh.nodes - np.asarray(case.monitor), axis=1)))
        rel = abs(T[i] - ref[i]) / abs(ref[i])
        print(f"monitor {mesh.nodes[i].tolist()}: T = {T[i]:.6f}, exact = {ref[i]:.6f}")
        if case.name == "transient-cube":
            _gate("monitor relative error", rel, TRANSIENT_GATE)
    if args.vtk is not None:
        files = write_vtk(mesh, result, args.vtk)
        print(f"wrote {len(files)} VTK file(s)")
    return EXIT_OK


def _cmd_converge(args) -> int:
    case = bm.get_case(args.case)
    levels = args.levels or case.levels
    if not levels:
        print(f"case {case.name} has no refinement sequence; pass --levels", file=sys.stderr)
        return EXIT_INPUT
    recs = bm.run_convergence(case, levels, _degree(args), not args.no_parent_cache, args.threads, dt=args.dt)
    if args.csv is not None:
        bm.write_convergence_csv(recs, args.csv)
    else:
        bm.write_convergence_csv(recs, sys.stdout)
    print(f"fitted order = {bm.fitted_order(recs):.4f}", file=sys.stderr)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    mesh = load_mesh(args.mesh, degree=_degree(args))
    mat = Material.isotropic(args.k, args.rho_c, 1.0)
    cells = args.cell if args.cell is not None else range(mesh.n_cells)
    for ci in cells:
        if not 0 <= ci < mesh.n_cells:
            print(f"no cell {ci} (mesh has {mesh.n_cells})", file=sys.stderr)
            return EXIT_INPUT
        print(element_report(mesh.cells[ci], mesh, mat, _degree(args), ci))
    return EXIT_OK


def _cmd_validate(args) -> int:
    mesh = load_mesh(args.mesh, validate=False)
    report = validate_mesh(mesh, _degree(args))
    print(report)
    return EXIT_OK if report.ok else EXIT_INPUT


_COMMANDS = {
    "solve": _cmd_solve,
    "bench": _cmd_bench,
    "converge": _cmd_converge,
    "inspect": _cmd_inspect,
    "validate": _cmd_validate,
}


def cli(argv: Sequence[str] | None = None) -> int:
    """Run the command line ``argv`` and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INPUT
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return _COMMANDS[args.command](args)
    except (ElementError, SolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MeshError, ConfigError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
