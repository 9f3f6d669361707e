"""Global operators on broken, conforming and facet spaces.

Broken DOFs are numbered cell-major: DOF ``i`` of cell ``c`` has index
``c * N + i``.  Broken 2-form spaces with outer orientation use an outward
local frame (every face flux measured along the outward normal of the cell);
all other broken spaces use the canonical ascending frame of the mesh.  The
two frames differ by the per-cell sign vector returned by ``local_signs``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import elements as el
from .mesh import Mesh

LAYOUTS = ("conforming", "broken", "facet_broken", "facet_unbroken")
ORIENTATIONS = ("inner", "outer")


@dataclass(frozen=True, eq=False)
class FormSpace:
    k: int
    layout: str
    orientation: str
    dim: int
    cell_dofs: np.ndarray | None = None
    signs: np.ndarray | None = None
    s: int = 1

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")
        el.n_dofs(self.k, self.s)

    def __repr__(self) -> str:
        return f"FormSpace(k={self.k}, {self.layout}, {self.orientation}, dim={self.dim})"


def local_signs(mesh: Mesh, k: int, orientation: str) -> np.ndarray:
    """Per-cell signs relating the broken local frame to the canonical one."""
    if k == 2 and orientation == "outer":
        return mesh.outward.astype(float)
    return np.ones((mesh.n_cells, el.N_DOFS[k]))


def _cell_numbering(mesh: Mesh, n: int) -> np.ndarray:
    return np.arange(mesh.n_cells * n).reshape(mesh.n_cells, n)


def broken_space(mesh: Mesh, k: int, orientation: str = "inner") -> FormSpace:
    n = el.n_dofs(k)
    return FormSpace(k, "broken", orientation, mesh.n_cells * n, _cell_numbering(mesh, n))


def facet_broken_space(mesh: Mesh, k: int, orientation: str = "inner") -> FormSpace:
    if k > 2:
        raise ValueError("facet spaces exist for k <= 2")
    n = el.n_dofs(k)
    return FormSpace(k, "facet_broken", orientation, mesh.n_cells * n, _cell_numbering(mesh, n))


def conforming_space(mesh: Mesh, k: int, orientation: str = "inner") -> FormSpace:
    signs = conforming_signs(mesh, k, orientation)
    return FormSpace(
        k, "conforming", orientation, mesh.entity_count(k), mesh.cell_entities(k), signs
    )


def facet_unbroken_space(mesh: Mesh, k: int, orientation: str = "inner") -> FormSpace:
    if k > 2:
        raise ValueError("facet spaces exist for k <= 2")
    return FormSpace(k, "facet_unbroken", orientation, mesh.entity_count(k), mesh.cell_entities(k))


def conforming_signs(mesh: Mesh, k: int, orientation: str) -> np.ndarray:
    """Sign of each (cell, local DOF) w.r.t. the global DOF it copies.

    Global face DOFs of outer 2-forms are measured along the canonical normal
    on interior faces and along the outward normal on boundary faces.
    """
    if k == 2 and orientation == "outer":
        ref = mesh.face_reference_sign[mesh.cell_faces]
        return (mesh.outward * ref).astype(float)
    return np.ones((mesh.n_cells, el.N_DOFS[k]))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    matrix: sp.csr_matrix
    rows: FormSpace
    cols: FormSpace

    def __post_init__(self):
        if self.matrix.shape != (self.rows.dim, self.cols.dim):
            raise ValueError(
                f"shape {self.matrix.shape} does not match spaces {self.rows} x {self.cols}"
            )

    @property
    def T(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    def save_coo(self, path) -> None:
        """Write ``row col value`` triplets, one per line."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        data = np.column_stack([coo.row[order], coo.col[order], coo.data[order]])
        np.savetxt(path, data, fmt=["%d", "%d", "%.17g"])


def block_diagonal(blocks: np.ndarray, row_offset=None) -> sp.csr_matrix:
    """Sparse block diagonal matrix from dense ``(nc, a, b)`` blocks."""
    nc, a, b = blocks.shape
    rows = (np.arange(nc)[:, None, None] * a + np.arange(a)[None, :, None]) + np.zeros((1, 1, b), int)
    cols = (np.arange(nc)[:, None, None] * b + np.arange(b)[None, None, :]) + np.zeros((1, a, 1), int)
    mat = sp.coo_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(nc * a, nc * b))
    mat.eliminate_zeros()
    return mat.tocsr()


@dataclass(frozen=True, eq=False)
class BrokenOperators:
    mass: OperatorMatrix
    derivative: OperatorMatrix | None
    trace: OperatorMatrix
    facet_mass: OperatorMatrix
    local_mass: np.ndarray
    local_derivative: np.ndarray | None
    local_facet_mass: np.ndarray


def cell_geometry(mesh: Mesh) -> el.CellGeometry:
    return el.CellGeometry.of(mesh.vertices[mesh.cells])


def assemble_broken(
    k: int,
    mesh: Mesh,
    weight=1.0,
    orientation: str = "inner",
    derivative_weight=None,
    geo: el.CellGeometry | None = None,
) -> BrokenOperators:
    """Block diagonal mass, derivative, trace and facet mass of the broken k-space.

    The derivative pairs the (k+1)-basis, weighted by ``derivative_weight``
    (defaults to 1), with d of the k-basis.
    """
    geo = geo or cell_geometry(mesh)
    o = local_signs(mesh, k, orientation)
    space = broken_space(mesh, k, orientation)

    m_loc = el.local_mass(k, None, weight, geo=geo) * o[:, :, None] * o[:, None, :]
    mass = OperatorMatrix(block_diagonal(m_loc), space, space)

    d_loc = deriv = None
    if k < 3:
        dw = 1.0 if derivative_weight is None else derivative_weight
        _, d_loc = el.local_derivative(k, None, dw, geo=geo)
        o1 = local_signs(mesh, k + 1, orientation)
        d_loc = d_loc * o1[:, :, None] * o[:, None, :]
        deriv = OperatorMatrix(
            block_diagonal(d_loc), broken_space(mesh, k + 1, orientation), space
        )

    if k < 3:
        fspace = facet_broken_space(mesh, k, orientation)
        t_loc = np.broadcast_to(el.local_trace(k).astype(float), (mesh.n_cells,) + (el.N_DOFS[k],) * 2)
        trace = OperatorMatrix(block_diagonal(np.array(t_loc)), fspace, space)
        fm_loc = el.local_facet_mass(k, None, geo=geo) * o[:, :, None] * o[:, None, :]
        facet_mass = OperatorMatrix(block_diagonal(fm_loc), fspace, fspace)
    else:
        trace = facet_mass = None
        fm_loc = None
    return BrokenOperators(mass, deriv, trace, facet_mass, m_loc, d_loc, fm_loc)


def assemble_conforming_map(k: int, mesh: Mesh, orientation: str = "inner") -> OperatorMatrix:
    """Signed injection G: broken DOFs <- conforming DOFs."""
    n = el.n_dofs(k)
    ids = mesh.cell_entities(k)
    signs = conforming_signs(mesh, k, orientation)
    rows = np.arange(mesh.n_cells * n)
    g = sp.csr_matrix((signs.ravel(), (rows, ids.ravel())), shape=(len(rows), mesh.entity_count(k)))
    return OperatorMatrix(g, broken_space(mesh, k, orientation), conforming_space(mesh, k, orientation))


def assemble_jump(k: int, mesh: Mesh, orientation: str = "inner", entities=None) -> OperatorMatrix:
    """Jump operator Xi: facet_unbroken <- facet_broken.

    Inner orientation sums the cell-side copies; outer orientation differences
    them across interior faces.  At s=1 facet and cell DOFs coincide, so this
    is the transpose of the conforming map.  ``entities`` restricts the rows
    (keeping their order).
    """
    if k > 2:
        raise ValueError("jump defined for k <= 2")
    g = assemble_conforming_map(k, mesh, orientation).matrix
    xi = g.T.tocsr()
    if entities is not None:
        xi = xi[np.asarray(entities, dtype=np.int64)]
    rows = facet_unbroken_space(mesh, k, orientation)
    if entities is not None:
        rows = FormSpace(k, "facet_unbroken", orientation, xi.shape[0])
    return OperatorMatrix(xi, rows, facet_broken_space(mesh, k, orientation))


def conforming_incidence(k: int, mesh: Mesh) -> sp.csr_matrix:
    """Global integer incidence d^k in the canonical frame."""
    if k == 0:
        e = mesh.edges
        n = len(e)
        rows = np.repeat(np.arange(n), 2)
        cols = e.ravel()
        vals = np.tile([-1, 1], n)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, mesh.n_vertices))
    if k == 1:
        from .mesh import FACE_EDGE_SIGNS

        n = mesh.n_faces
        rows = np.repeat(np.arange(n), 3)
        vals = np.tile(FACE_EDGE_SIGNS, n)
        return sp.csr_matrix((vals, (rows, mesh.face_edges.ravel())), shape=(n, mesh.n_edges))
    if k == 2:
        rows = np.repeat(np.arange(mesh.n_cells), 4)
        return sp.csr_matrix(
            (mesh.outward.ravel(), (rows, mesh.cell_faces.ravel())),
            shape=(mesh.n_cells, mesh.n_faces),
        )
    raise ValueError("no exterior derivative of a 3-form in 3D")


def _boundary_dof_signs(mesh: Mesh, k: int, cells, local_face) -> tuple[np.ndarray, np.ndarray]:
    """Global entity ids and frame signs of the cell DOFs supported on a boundary face."""
    loc = el.FACE_DOFS[k][local_face]  # (nb, m)
    ids = mesh.cell_entities(k)[cells[:, None], loc]
    if k == 2:
        sign = mesh.outward[cells[:, None], loc].astype(float)
    else:
        sign = np.ones(ids.shape)
    return ids, sign, loc


def assemble_boundary_pairing(
    k_test: int, k_ctrl: int, mesh: Mesh, faces, geo: el.CellGeometry | None = None
) -> sp.csr_matrix:
    """Boundary wedge pairing Psi between global boundary traces.

    Rows index global ``k_test`` entities, columns global ``k_ctrl`` entities.
    Boundary face DOFs are outward fluxes; the (1,1) pairing is
    ``(test x control) . n_out``.
    """
    if k_test + k_ctrl != 2 or min(k_test, k_ctrl) < 0:
        raise ValueError("pairing requires complementary boundary degrees summing to 2")
    shape = (mesh.entity_count(k_test), mesh.entity_count(k_ctrl))
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0:
        return sp.csr_matrix(shape)
    adj = mesh.adjacency
    if np.any(adj.cells[faces, 1] >= 0):
        raise ValueError("pairing faces must lie on the boundary")
    cells = adj.cells[faces, 0]
    lf = adj.local[faces, 0]
    geo = geo or cell_geometry(mesh)
    sub = el.CellGeometry(
        geo.coords[cells], geo.grads[cells], geo.volume[cells], geo.outward[cells], geo.areas[cells]
    )
    vals = el.facet_pairing(k_test, k_ctrl, sub, lf)
    ti, ts, tl = _boundary_dof_signs(mesh, k_test, cells, lf)
    ci, cs, cl = _boundary_dof_signs(mesh, k_ctrl, cells, lf)
    b = np.arange(len(faces))[:, None, None]
    block = vals[b, tl[:, :, None], cl[:, None, :]] * ts[:, :, None] * cs[:, None, :]
    rows = np.broadcast_to(ti[:, :, None], block.shape)
    cols = np.broadcast_to(ci[:, None, :], block.shape)
    mat = sp.coo_matrix((block.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    mat.sum_duplicates()
    return mat
