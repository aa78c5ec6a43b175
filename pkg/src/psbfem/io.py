"""Mesh files and solver configuration documents.

Mesh format (JSON)
------------------
::

    {
      "format": "psbfem-mesh", "version": 1,
      "nodes": [[x, y, z], ...],
      "cells": [{"faces": [[n0, n1, ...], ...], "material": "default"}, ...],
      "node_sets": {"name": [node, ...]},
      "face_sets": {"name": [[cell, local_face], ...]}
    }

Faces list global node indices counterclockwise seen from outside the cell.
``material`` and the optional ``"center"`` (scaling center) of a cell may be
omitted; so may both set tables.

Solver configuration (YAML or JSON)
-----------------------------------
See ``CONFIG_SCHEMA``. Boundary values may be a number, ``{"table": [[t, v],
...]}`` or ``{"expr": "<expression in x, y, z, t>"}``.
"""
from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml

from .mesh import Material, Mesh, MeshError, PolyhedronCell, ValidationReport, validate_mesh
from .solver import BoundaryConditions, TransientConfig

__all__ = [
    "MeshValidationError",
    "ConfigError",
    "load_mesh",
    "save_mesh",
    "mesh_to_dict",
    "mesh_from_dict",
    "SolverConfig",
    "load_config",
    "parse_config",
    "compile_expression",
    "CONFIG_SCHEMA",
]

MESH_FORMAT = "psbfem-mesh"


class MeshValidationError(MeshError):
    """A mesh parsed but failed validation; ``report`` holds the diagnostics."""

    def __init__(self, path, report: ValidationReport):
        self.report = report
        super().__init__(f"{path}: mesh validation failed\n{report}")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- meshes


def mesh_to_dict(mesh: Mesh) -> dict:
    cells = []
    for cell in mesh.cells:
        entry: dict[str, Any] = {"faces": [list(f) for f in cell.faces]}
        if cell.material != "default":
            entry["material"] = cell.material
        cells.append(entry)
    return {
        "format": MESH_FORMAT,
        "version": 1,
        "nodes": mesh.nodes.tolist(),
        "cells": cells,
        "node_sets": {k: v.tolist() for k, v in mesh.node_sets.items()},
        "face_sets": {k: v.tolist() for k, v in mesh.face_sets.items()},
    }


def save_mesh(mesh: Mesh, path) -> None:
    """Write ``mesh`` as JSON. Coordinates are stored with full precision."""
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh, separators=(",", ":"))
        fh.write("\n")


def _structure_error(where: str, msg: str) -> MeshError:
    return MeshError(f"{where}: {msg}")


def mesh_from_dict(data: Any, where: str = "<mesh>") -> Mesh:
    """Build a mesh from decoded JSON, checking structure and index ranges."""
    if not isinstance(data, dict):
        raise _structure_error(where, "top level must be an object")
    if data.get("format", MESH_FORMAT) != MESH_FORMAT:
        raise _structure_error(where, f"unknown format '{data.get('format')}'")
    for key in ("nodes", "cells"):
        if key not in data:
            raise _structure_error(where, f"missing '{key}'")
    try:
        nodes = np.asarray(data["nodes"], dtype=float)
    except (TypeError, ValueError):
        raise _structure_error(where, "nodes must be numeric [x, y, z] triples") from None
    if nodes.ndim != 2 or nodes.shape[1] != 3:
        raise _structure_error(where, "nodes must be numeric [x, y, z] triples")
    if not np.all(np.isfinite(nodes)):
        raise _structure_error(where, "non-finite node coordinate")
    n = len(nodes)
    cells = []
    for ci, entry in enumerate(data["cells"]):
        if isinstance(entry, list):
            entry = {"faces": entry}
        faces = entry.get("faces") if isinstance(entry, dict) else None
        if not isinstance(faces, list) or not faces:
            raise _structure_error(where, f"cell {ci}: 'faces' must be a non-empty list")
        for fi, face in enumerate(faces):
            if not isinstance(face, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in face):
                raise _structure_error(where, f"cell {ci} face {fi}: node indices must be integers")
            bad = [i for i in face if not 0 <= i < n]
            if bad:
                raise _structure_error(where, f"cell {ci} face {fi}: node index {bad[0]} out of range [0, {n})")
        center = entry.get("center")
        if center is not None:
            center = np.asarray(center, dtype=float)
            if center.shape != (3,):
                raise _structure_error(where, f"cell {ci}: center must be [x, y, z]")
        cells.append(PolyhedronCell(tuple(tuple(f) for f in faces), center, str(entry.get("material", "default"))))
    node_sets = {}
    for name, ids in (data.get("node_sets") or {}).items():
        arr = np.asarray(ids, dtype=np.int64).ravel()
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise _structure_error(where, f"node set '{name}': index out of range")
        node_sets[name] = arr
    face_sets = {}
    for name, pairs in (data.get("face_sets") or {}).items():
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        for ci, fi in arr:
            if not (0 <= ci < len(cells) and 0 <= fi < len(cells[ci].faces)):
                raise _structure_error(where, f"face set '{name}': no face {fi} on cell {ci}")
        face_sets[name] = arr
    return Mesh(nodes, tuple(cells), node_sets, face_sets)


def load_mesh(path, validate: bool = True, degree: int = 4) -> Mesh:
    """Read a JSON mesh file.

    Raises
    ------
    MeshError
        On parse errors (with line and column) or structural problems.
    MeshValidationError
        If ``validate`` is set and the mesh fails ``validate_mesh``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    mesh = mesh_from_dict(data, str(path))
    if validate:
        report = validate_mesh(mesh, degree)
        if not report.ok:
            raise MeshValidationError(path, report)
    return mesh


# ---------------------------------------------------------------- expressions

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "abs": np.abs,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_VARS = ("x", "y", "z", "t")
_ALLOWED = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.Mod,
    ast.USub,
    ast.UAdd,
)


def compile_expression(src: str):
    """Compile an arithmetic expression of ``x, y, z, t`` into ``f(points, t)``.

    Only numbers, the operators ``+ - * / ** %``, the constants ``pi`` and
    ``e`` and the functions in ``_FUNCS`` are accepted.
    """
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression '{src}': {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"bad expression '{src}': {type(node).__name__} not allowed")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS and node.id not in _VARS:
            raise ConfigError(f"bad expression '{src}': unknown name '{node.id}'")
        if isinstance(node, ast.Call) and (not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords):
            raise ConfigError(f"bad expression '{src}': only calls to {sorted(_FUNCS)} are allowed")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"bad expression '{src}': only numeric literals are allowed")
    code = compile(tree, "<expr>", "eval")

    def f(points, t=0.0):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        env = {**_FUNCS, **_CONSTS, "x": p[:, 0], "y": p[:, 1], "z": p[:, 2], "t": float(t)}
        return eval(code, {"__builtins__": {}}, env)

    f.source = src
    return f


# ---------------------------------------------------------------- configuration

_VALUE = {
    "oneOf": [
        {"type": "number"},
        {
            "type": "object",
            "properties": {
                "table": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                }
            },
            "required": ["table"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"expr": {"type": "string"}},
            "required": ["expr"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "analysis": {"enum": ["steady", "transient"]},
        "mesh": {"type": "string"},
        "materials": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "properties": {
                    "k": {"type": "number", "exclusiveMinimum": 0},
                    "kx": {"type": "number", "exclusiveMinimum": 0},
                    "ky": {"type": "number", "exclusiveMinimum": 0},
                    "kz": {"type": "number", "exclusiveMinimum": 0},
                    "rho": {"type": "number", "minimum": 0},
                    "c": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
                "oneOf": [{"required": ["k"]}, {"required": ["kx", "ky", "kz"]}],
            },
        },
        "cell_materials": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "boundary_conditions": {
            "type": "object",
            "properties": {
                "dirichlet": {"type": "object", "additionalProperties": _VALUE},
                "flux": {"type": "object", "additionalProperties": _VALUE},
                "convection": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "properties": {"h": _VALUE, "T_inf": _VALUE},
                        "required": ["h", "T_inf"],
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "transient": {
            "type": "object",
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "T0": _VALUE,
                "stride": {"type": "integer", "minimum": 1},
            },
            "required": ["dt", "t_end"],
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "quadrature_degree": {"enum": [2, 4, 6]},
                "parent_cache": {"type": "boolean"},
                "threads": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"vtk": {"type": "string"}, "csv": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["analysis", "mesh", "materials"],
    "additionalProperties": False,
}


@dataclass
class SolverConfig:
    analysis: str
    mesh_path: Path
    materials: dict[str, Material]
    cell_materials: dict[str, list[int]] = field(default_factory=dict)
    bc: BoundaryConditions = field(default_factory=BoundaryConditions)
    transient: TransientConfig | None = None
    degree: int = 4
    parent_cache: bool = True
    threads: int = 1
    vtk: Path | None = None
    csv: Path | None = None

    def apply_to(self, mesh: Mesh) -> Mesh:
        """Check referenced sets and assign cell materials."""
        missing = [n for n in self.bc.dirichlet if n not in mesh.node_sets]
        missing += [n for n in (*self.bc.flux, *self.bc.convection) if n not in mesh.face_sets]
        if missing:
            raise ConfigError(f"sets not defined in the mesh: {', '.join(sorted(set(missing)))}")
        cells = list(mesh.cells)
        for name, ids in self.cell_materials.items():
            for ci in ids:
                if ci >= len(cells):
                    raise ConfigError(f"cell_materials '{name}': no cell {ci}")
                cells[ci] = PolyhedronCell(cells[ci].faces, cells[ci].scaling_center, name)
        unknown = sorted({c.material for c in cells} - set(self.materials))
        if unknown:
            raise ConfigError(f"cells reference undefined materials: {', '.join(unknown)}")
        return Mesh(mesh.nodes, tuple(cells), mesh.node_sets, mesh.face_sets)


def _value(v):
    if isinstance(v, dict):
        if "table" in v:
            return [tuple(row) for row in v["table"]]
        return compile_expression(v["expr"])
    return float(v)


def _scalar(v, what):
    out = _value(v)
    if not isinstance(out, float):
        raise ConfigError(f"{what} must be a number")
    return out


def parse_config(data: Any, base: Path | None = None) -> SolverConfig:
    """Validate a decoded configuration document against ``CONFIG_SCHEMA``."""
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {loc}: {exc.message}") from None
    base = base or Path(".")
    mats = {}
    for name, m in data["materials"].items():
        k = (m["k"],) * 3 if "k" in m else (m["kx"], m["ky"], m["kz"])
        mats[name] = Material(*k, m.get("rho", 1.0), m.get("c", 1.0))
    bcd = data.get("boundary_conditions", {})
    bc = BoundaryConditions(
        dirichlet={k: _value(v) for k, v in bcd.get("dirichlet", {}).items()},
        flux={k: _value(v) for k, v in bcd.get("flux", {}).items()},
        convection={
            k: (_scalar(v["h"], f"convection '{k}' h"), _scalar(v["T_inf"], f"convection '{k}' T_inf"))
            for k, v in bcd.get("convection", {}).items()
        },
    )
    analysis = data["analysis"]
    tr = data.get("transient")
    if (analysis == "transient") != (tr is not None):
        raise ConfigError("a 'transient' section is required for, and only allowed with, analysis: transient")
    transient = None
    if tr is not None:
        T0 = _value(tr.get("T0", 0.0))
        if isinstance(T0, list):
            raise ConfigError("T0 must be a number or an expression")
        T0_fn = (lambda p, f=T0: f(p, 0.0)) if callable(T0) else T0
        try:
            transient = TransientConfig(tr["dt"], tr["t_end"], T0_fn, tr.get("stride", 1))
            transient.n_steps
        except ValueError as exc:
            raise ConfigError(f"transient: {exc}") from None
    sol = data.get("solver", {})
    out = data.get("output", {})
    return SolverConfig(
        analysis=analysis,
        mesh_path=(base / data["mesh"]),
        materials=mats,
        cell_materials=data.get("cell_materials", {}),
        bc=bc,
        transient=transient,
        degree=sol.get("quadrature_degree", 4),
        parent_cache=sol.get("parent_cache", True),
        threads=sol.get("threads", 1),
        vtk=(base / out["vtk"]) if "vtk" in out else None,
        csv=(base / out["csv"]) if "csv" in out else None,
    )


def load_config(path) -> SolverConfig:
    """Read a YAML (or JSON) configuration; relative paths resolve against its folder."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        pos = f"{mark.line + 1}:{mark.column + 1}" if mark else "?"
        raise ConfigError(f"{path}:{pos}: {exc.problem}") from None
    return parse_config(data, path.parent)
