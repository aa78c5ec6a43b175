"""Legacy ASCII VTK output with polyhedron cells (type 42)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import Mesh
from .solver import FieldResult

__all__ = ["write_vtk", "VTK_POLYHEDRON"]

VTK_POLYHEDRON = 42


def _write_one(mesh: Mesh, T: np.ndarray, path: Path, title: str) -> None:
    lines = ["# vtk DataFile Version 4.2", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines.extend(" ".join(repr(float(c)) for c in p) for p in mesh.nodes)
    streams = []
    for cell in mesh.cells:
        s = [len(cell.faces)]
        for f in cell.faces:
            s.append(len(f))
            s.extend(f)
        streams.append(s)
    # the count before the face stream is the stream length
    size = sum(len(s) + 1 for s in streams)
    lines.append(f"CELLS {mesh.n_cells} {size}")
    lines.extend(" ".join(map(str, [len(s), *s])) for s in streams)
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines.extend([str(VTK_POLYHEDRON)] * mesh.n_cells)
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    lines.append("SCALARS Temperature double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(repr(float(v)) for v in T)
    path.write_text("\n".join(lines) + "\n")


def write_vtk(mesh: Mesh, data, path) -> list[Path]:
    """Write nodal temperatures to legacy VTK files.

    ``data`` is either a nodal array, written to ``path`` as given, or a
    ``FieldResult``. For a result each recorded time goes to its own file
    ``<stem>_<step>.vtk``, where ``step`` is the time-step index; a
    single-time (steady) result is written to ``path`` unchanged.

    Returns the written paths.
    """
    path = Path(path)
    if isinstance(data, FieldResult):
        if len(data.times) == 1:
            _write_one(mesh, data.fields[0], path, f"Temperature t={data.times[0]!r}")
            return [path]
        steps = data.metadata.get("recorded_steps")
        if steps is None or len(steps) != len(data.times):
            steps = range(len(data.times))
        width = max(4, len(str(max(steps))))
        out = []
        for step, t, T in zip(steps, data.times, data.fields):
            p = path.with_name(f"{path.stem}_{int(step):0{width}d}{path.suffix or '.vtk'}")
            _write_one(mesh, T, p, f"Temperature t={float(t)!r} step={int(step)}")
            out.append(p)
        return out
    T = np.asarray(data, dtype=float)
    if T.shape != (mesh.n_nodes,):
        raise ValueError(f"field has {T.size} values for {mesh.n_nodes} nodes")
    _write_one(mesh, T, path, "Temperature")
    return [path]
