"""Regenerate the mesh fixtures shipped in ``src/psbfem/data``."""
from pathlib import Path

import numpy as np

from psbfem.benchmarks import structured_box_mesh
from psbfem.io import save_mesh
from psbfem.mesh import validate_mesh
from psbfem.testing import stack_layers, voronoi_layer

DATA = Path(__file__).resolve().parents[1] / "src" / "psbfem" / "data"


def main():
    meshes = {
        "unit_cube.json": structured_box_mesh((1.0, 1.0, 1.0), 1.0),
        "patch_prism.json": stack_layers(voronoi_layer((1, 1, 1), (3, 3, 1), np.random.default_rng(0)), 3),
        "poly_beam.json": stack_layers(voronoi_layer((1.5, 1.5, 1.5), (3, 3, 1), np.random.default_rng(1)), 4),
    }
    for name, mesh in meshes.items():
        report = validate_mesh(mesh)
        if not report.ok:
            raise SystemExit(f"{name}: {report}")
        save_mesh(mesh, DATA / name)
        print(f"{name}: {mesh.n_cells} cells, {mesh.n_nodes} nodes")


if __name__ == "__main__":
    main()
