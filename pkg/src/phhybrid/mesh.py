"""Simplicial 3D meshes with canonical orientation and boundary partitions.

Every entity stores its vertex ids in ascending order; that ordering fixes the
global orientation of edges (tail -> head) and faces (right-hand rule over the
ascending triple).  Cells keep ascending vertex tuples as well, so local and
global numbering of sub-simplices coincide and the only orientation data a
cell carries is the sign of its ascending tuple and the outward signs of its
four faces.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# local sub-simplices of a tetrahedron with ascending vertex tuple (0, 1, 2, 3)
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
# local face i is opposite local vertex i
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])
# edges of an ascending face (a, b, c) and their signs in its boundary
FACE_EDGES = np.array([(0, 1), (0, 2), (1, 2)])
FACE_EDGE_SIGNS = np.array([1, -1, 1])


class MeshError(ValueError):
    """Raised for malformed mesh input."""


@dataclass(frozen=True)
class FacetAdjacency:
    """Face -> incident cells table.

    ``cells[f, 0]`` is T+ and ``cells[f, 1]`` is T- (or -1 on the boundary);
    ``local[f, s]`` is the local face index of ``f`` inside that cell.  For
    interior faces T+ is the cell whose outward normal agrees with the
    canonical face normal.
    """

    cells: np.ndarray
    local: np.ndarray

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.cells[:, 1] >= 0)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.cells[:, 1] < 0)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    cell_edges: np.ndarray
    cell_faces: np.ndarray
    face_edges: np.ndarray
    cell_sign: np.ndarray
    outward: np.ndarray
    volumes: np.ndarray
    areas: np.ndarray
    normals: np.ndarray
    diameters: np.ndarray
    adjacency: FacetAdjacency

    @classmethod
    def from_cells(cls, vertices, cells) -> "Mesh":
        """Build all derived tables from vertex coordinates and cell tuples."""
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.sort(np.asarray(cells, dtype=np.int64), axis=1)
        if cells.ndim != 2 or cells.shape[1] != 4:
            raise MeshError("cells must be an (n, 4) array")
        if np.any(cells[:, :-1] == cells[:, 1:]):
            raise MeshError("cell with repeated vertex")

        edges, cell_edges = _number(cells[:, LOCAL_EDGES])
        faces, cell_faces = _number(cells[:, LOCAL_FACES])

        fe = faces[:, FACE_EDGES]
        lookup = {tuple(e): i for i, e in enumerate(edges)}
        face_edges = np.array([[lookup[tuple(e)] for e in row] for row in fe], dtype=np.int64)

        x = vertices[cells]
        jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=-1)
        det = np.linalg.det(jac)
        if np.any(np.abs(det) <= 1e-14 * np.max(np.abs(det), initial=1.0)):
            raise MeshError("degenerate cell")
        cell_sign = np.sign(det).astype(np.int64)
        volumes = np.abs(det) / 6.0

        fx = vertices[faces]
        cross = np.cross(fx[:, 1] - fx[:, 0], fx[:, 2] - fx[:, 0])
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        normals = cross / (2.0 * areas[:, None])

        # outward sign of each local face w.r.t. its canonical normal
        opposite = x[:, np.arange(4)]
        centers = vertices[faces[cell_faces]].mean(axis=2)
        out = np.einsum("cfd,cfd->cf", normals[cell_faces], centers - opposite)
        outward = np.sign(out).astype(np.int64)

        pair = x[:, :, None, :] - x[:, None, :, :]
        diameters = np.sqrt((pair**2).sum(-1)).max(axis=(1, 2))

        adjacency = _adjacency(len(faces), cell_faces, outward)
        return cls(
            vertices=vertices,
            cells=cells,
            edges=edges,
            faces=faces,
            cell_edges=cell_edges,
            cell_faces=cell_faces,
            face_edges=face_edges,
            cell_sign=cell_sign,
            outward=outward,
            volumes=volumes,
            areas=areas,
            normals=normals,
            diameters=diameters,
            adjacency=adjacency,
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def entity_count(self, dim: int) -> int:
        return (self.n_vertices, self.n_edges, self.n_faces, self.n_cells)[dim]

    def cell_entities(self, dim: int) -> np.ndarray:
        """Global ids of the ``dim``-simplices of every cell, in local order."""
        if dim == 0:
            return self.cells
        if dim == 1:
            return self.cell_edges
        if dim == 2:
            return self.cell_faces
        return np.arange(self.n_cells)[:, None]

    @property
    def boundary_faces(self) -> np.ndarray:
        return self.adjacency.boundary

    @property
    def face_reference_sign(self) -> np.ndarray:
        """Orientation of each face's global DOF relative to its canonical normal.

        Interior faces use the canonical normal, boundary faces the outward one.
        """
        sign = np.ones(self.n_faces, dtype=np.int64)
        b = self.adjacency.boundary
        sign[b] = self.outward[self.adjacency.cells[b, 0], self.adjacency.local[b, 0]]
        return sign

    def outward_normals(self, faces) -> np.ndarray:
        """Unit outward normals of boundary faces."""
        faces = np.asarray(faces, dtype=np.int64)
        return self.normals[faces] * self.face_reference_sign[faces, None]

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def report(self) -> str:
        lines = [
            f"vertices {self.n_vertices}",
            f"edges    {self.n_edges}",
            f"faces    {self.n_faces} ({len(self.boundary_faces)} boundary)",
            f"cells    {self.n_cells}",
            f"euler    {self.n_vertices - self.n_edges + self.n_faces - self.n_cells}",
            f"h_max    {self.h:.6g}",
        ]
        return "\n".join(lines)


def _number(local_tuples: np.ndarray):
    """Assign deterministic global ids (lexicographic) to sub-simplex tuples."""
    n_cells, n_loc, width = local_tuples.shape
    flat = local_tuples.reshape(-1, width)
    unique, inverse = np.unique(flat, axis=0, return_inverse=True)
    return unique.astype(np.int64), inverse.reshape(n_cells, n_loc).astype(np.int64)


def _adjacency(n_faces: int, cell_faces: np.ndarray, outward: np.ndarray) -> FacetAdjacency:
    cells = -np.ones((n_faces, 2), dtype=np.int64)
    local = -np.ones((n_faces, 2), dtype=np.int64)
    count = np.zeros(n_faces, dtype=np.int64)
    for c in range(cell_faces.shape[0]):
        for l in range(4):
            f = cell_faces[c, l]
            if count[f] >= 2:
                raise MeshError(f"face {f} has more than two incident cells")
            cells[f, count[f]] = c
            local[f, count[f]] = l
            count[f] += 1
    # put the cell whose outward normal matches the canonical normal first
    both = np.flatnonzero(count == 2)
    flip = outward[cells[both, 0], local[both, 0]] < 0
    idx = both[flip]
    cells[idx] = cells[idx, ::-1]
    local[idx] = local[idx, ::-1]
    return FacetAdjacency(cells=cells, local=local)


def facet_adjacency(mesh: Mesh) -> FacetAdjacency:
    return mesh.adjacency


def build_structured_box(n: int, bounds=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))) -> Mesh:
    """Box split into ``n**3`` cubes of six tetrahedra each (Kuhn split).

    Every cube is cut around its diagonal from the minimal to the maximal
    corner, which keeps neighbouring cubes facet-compatible.
    """
    if int(n) != n or n < 1:
        raise MeshError("n must be a positive integer")
    n = int(n)
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (3, 2) or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise MeshError("box must have positive extent on every axis")

    axes = [np.linspace(lo, hi, n + 1) for lo, hi in bounds]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")], axis=1)

    def vid(i, j, k):
        return i + (n + 1) * (j + (n + 1) * k)

    unit = np.eye(3, dtype=np.int64)
    cells = []
    for k, j, i in itertools.product(range(n), repeat=3):
        base = np.array([i, j, k])
        for perm in itertools.permutations(range(3)):
            path = [base.copy()]
            for axis in perm:
                path.append(path[-1] + unit[axis])
            cells.append([vid(*p) for p in path])
    return Mesh.from_cells(vertices, np.array(cells))


def structured_counts(n: int) -> dict[str, int]:
    """Entity counts of the Kuhn-split box without building it."""
    v = (n + 1) ** 3
    e = 3 * n * (n + 1) ** 2 + 3 * n * n * (n + 1) + n**3
    c = 6 * n**3
    f = 1 - v + e + c
    return {"vertices": v, "edges": e, "faces": f, "cells": c}


@dataclass(frozen=True, eq=False)
class BoundaryPartition:
    """Disjoint split of the boundary faces into gamma1 and gamma2.

    Vertices and edges are gathered per partition from the closure of its
    faces; an entity on the closure of both belongs to both sets here.  The
    builders resolve that overlap in favour of the essential partition.
    """

    mesh: Mesh
    gamma1_faces: np.ndarray
    gamma2_faces: np.ndarray
    _closure: dict = field(default_factory=dict, repr=False)

    def faces(self, which: int) -> np.ndarray:
        return self.gamma1_faces if which == 1 else self.gamma2_faces

    def closure(self, dim: int, which: int) -> np.ndarray:
        """Sorted ids of ``dim``-entities on the closure of gamma ``which``."""
        key = (dim, which)
        if key not in self._closure:
            faces = self.faces(which)
            if dim == 2:
                ids = np.sort(faces)
            elif dim == 1:
                ids = np.unique(self.mesh.face_edges[faces])
            elif dim == 0:
                ids = np.unique(self.mesh.faces[faces])
            else:
                raise ValueError("boundary entities have dimension <= 2")
            self._closure[key] = ids.astype(np.int64)
        return self._closure[key]

    def mask(self, dim: int, which: int) -> np.ndarray:
        m = np.zeros(self.mesh.entity_count(dim), dtype=bool)
        m[self.closure(dim, which)] = True
        return m


def tag_boundary(mesh: Mesh, gamma1: Callable[[np.ndarray], bool]) -> BoundaryPartition:
    """Send boundary faces whose center satisfies ``gamma1`` to gamma1, the rest to gamma2."""
    b = mesh.boundary_faces
    centers = mesh.vertices[mesh.faces[b]].mean(axis=1)
    hit = np.array([bool(gamma1(c)) for c in centers], dtype=bool)
    return BoundaryPartition(mesh=mesh, gamma1_faces=b[hit], gamma2_faces=b[~hit])


def lower_planes(tol: float = 1e-12) -> Callable[[np.ndarray], bool]:
    """Predicate for the ``x=0 or y=0 or z=0`` planes."""
    return lambda c: bool(np.any(np.abs(c) < tol))


GAMMA1_PREDICATES: dict[str, Callable[[np.ndarray], bool]] = {
    "lower": lower_planes(),
    "all": lambda c: True,
    "none": lambda c: False,
}
