"""Lowest-order Whitney forms on tetrahedra, in vector-proxy form.

Degrees of freedom are integral ones: vertex values (k=0), edge circulations
along the ascending edge (k=1), face fluxes through the right-hand normal of
the ascending face (k=2) and the cell integral (k=3).  Basis functions are
dual to those functionals, so the k=3 basis is the constant ``1/V``.

All routines are batched: ``coords`` has shape ``(n_cells, 4, 3)`` with the
vertices of every cell in ascending global order.  A single cell ``(4, 3)`` is
accepted as well and treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import FACE_EDGE_SIGNS, FACE_EDGES, LOCAL_EDGES, LOCAL_FACES

N_DOFS = (4, 6, 4, 1)
SUPPORTED_DEGREE = 1


class ElementError(ValueError):
    pass


@dataclass(frozen=True)
class Quadrature:
    """Reference rule: barycentric points and weights summing to the reference measure."""

    points: np.ndarray
    weights: np.ndarray
    order: int


def _collapsed(m: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    # conical product of Gauss-Jacobi rules mapped to [0, 1]
    rules = []
    for alpha in range(dim - 1, -1, -1):
        if alpha == 0:
            x, w = roots_legendre(m)
        else:
            x, w = roots_jacobi(m, alpha, 0.0)
        rules.append(((x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)))
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.prod(np.meshgrid(*[r[1] for r in rules], indexing="ij"), axis=0).ravel()
    u = [g.ravel() for g in grids]
    lam = []
    scale = np.ones_like(u[0])
    for ui in u:
        lam.append(ui * scale)
        scale = scale * (1.0 - ui)
    lam = np.stack(lam, axis=1)
    bary = np.column_stack([1.0 - lam.sum(axis=1), lam])
    return bary, wgrid


@lru_cache(maxsize=None)
def tet_quadrature(order: int = 4) -> Quadrature:
    m = max(1, (order + 2) // 2)
    pts, w = _collapsed(m, 3)
    return Quadrature(pts, w, 2 * m - 1)


@lru_cache(maxsize=None)
def triangle_quadrature(order: int = 4) -> Quadrature:
    m = max(1, (order + 2) // 2)
    pts, w = _collapsed(m, 2)
    return Quadrature(pts, w, 2 * m - 1)


def _batch(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 2:
        coords = coords[None]
    if coords.shape[1:] != (4, 3):
        raise ElementError("cell coordinates must have shape (..., 4, 3)")
    return coords


@dataclass(frozen=True)
class CellGeometry:
    coords: np.ndarray
    grads: np.ndarray  # (nc, 4, 3) gradients of barycentric coordinates
    volume: np.ndarray
    outward: np.ndarray  # (nc, 4) sign of local face normal vs outward
    areas: np.ndarray  # (nc, 4)

    @classmethod
    def of(cls, coords) -> "CellGeometry":
        x = _batch(coords)
        jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=1)
        det = np.linalg.det(jac)
        scale = np.max(np.abs(jac), axis=(1, 2)) ** 3
        if np.any(np.abs(det) <= 1e-13 * scale):
            raise ElementError("degenerate cell")
        # rows of inverse-transpose give gradients of lambda_1..3
        g = np.linalg.inv(jac).transpose(0, 2, 1)
        grads = np.concatenate([-g.sum(axis=1, keepdims=True), g], axis=1)
        fx = x[:, LOCAL_FACES]
        cross = np.cross(fx[:, :, 1] - fx[:, :, 0], fx[:, :, 2] - fx[:, :, 0])
        side = np.einsum("cfd,cfd->cf", cross, fx.mean(axis=2) - x)
        return cls(
            coords=x,
            grads=grads,
            volume=np.abs(det) / 6.0,
            outward=np.sign(side).astype(np.int64),
            areas=0.5 * np.linalg.norm(cross, axis=2),
        )

    @property
    def n_cells(self) -> int:
        return self.coords.shape[0]

    def unit_normals(self) -> np.ndarray:
        """Canonical (ascending right-hand) unit normal of each local face."""
        fx = self.coords[:, LOCAL_FACES]
        cross = np.cross(fx[:, :, 1] - fx[:, :, 0], fx[:, :, 2] - fx[:, :, 0])
        return cross / np.linalg.norm(cross, axis=2, keepdims=True)

    def to_physical(self, bary: np.ndarray) -> np.ndarray:
        """Map barycentric points ``(q, 4)`` (or per-cell ``(nc, q, 4)``) to ``(nc, q, 3)``."""
        if bary.ndim == 2:
            return np.einsum("qv,cvd->cqd", bary, self.coords)
        return np.einsum("cqv,cvd->cqd", bary, self.coords)


def is_vector(k: int) -> bool:
    return k in (1, 2)


def n_dofs(k: int, s: int = SUPPORTED_DEGREE) -> int:
    if s != SUPPORTED_DEGREE:
        raise ElementError("only the lowest-order Whitney family (s=1) is implemented")
    if k not in (0, 1, 2, 3):
        raise ElementError(f"invalid form degree {k}")
    return N_DOFS[k]


def basis(k: int, geo: CellGeometry, bary: np.ndarray) -> np.ndarray:
    """Proxy values of the k-form basis at barycentric points.

    ``bary`` is ``(q, 4)`` shared by all cells or ``(nc, q, 4)``.  Returns
    ``(nc, q, N)`` for scalar proxies and ``(nc, q, N, 3)`` for vector ones.
    """
    lam = np.broadcast_to(bary, (geo.n_cells,) + bary.shape[-2:]) if bary.ndim == 2 else bary
    g = geo.grads
    if k == 0:
        return np.array(lam)
    if k == 1:
        i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        return (
            lam[:, :, i, None] * g[:, None, j, :] - lam[:, :, j, None] * g[:, None, i, :]
        )
    if k == 2:
        out = np.zeros(lam.shape[:2] + (4, 3))
        for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            i, j, l = LOCAL_FACES[:, a], LOCAL_FACES[:, b], LOCAL_FACES[:, c]
            out += lam[:, :, i, None] * np.cross(g[:, j], g[:, l])[:, None]
        return 2.0 * out
    if k == 3:
        return np.broadcast_to(1.0 / geo.volume[:, None, None], lam.shape[:2] + (1,)).copy()
    raise ElementError(f"invalid form degree {k}")


def derivative_basis(k: int, geo: CellGeometry, bary: np.ndarray) -> np.ndarray:
    """Proxy values of grad / curl / div of the k-form basis (constant at s=1)."""
    nq = bary.shape[-2]
    g = geo.grads
    if k == 0:
        val = g
    elif k == 1:
        i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        val = 2.0 * np.cross(g[:, i], g[:, j])
    elif k == 2:
        i, j, l = LOCAL_FACES.T
        val = 6.0 * np.einsum("cfd,cfd->cf", g[:, i], np.cross(g[:, j], g[:, l]))
    else:
        raise ElementError("no exterior derivative of a 3-form in 3D")
    return np.broadcast_to(val[:, None], (geo.n_cells, nq) + val.shape[1:]).copy()


def _pair(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    if a.ndim == 4:
        return np.einsum("q,cqid,cqjd->cij", w, a, b)
    return np.einsum("q,cqi,cqj->cij", w, a, b)


def local_mass(k: int, coords, weight=1.0, geo: CellGeometry | None = None) -> np.ndarray:
    """Weighted L2 Gram matrices of the k-form basis, shape ``(nc, N, N)``."""
    geo = geo or CellGeometry.of(coords)
    quad = tet_quadrature(4)
    phi = basis(k, geo, quad.points)
    m = _pair(phi, phi, quad.weights) * (6.0 * geo.volume)[:, None, None]
    m = 0.5 * (m + np.swapaxes(m, 1, 2))
    return m * np.broadcast_to(np.asarray(weight, dtype=float), (geo.n_cells,))[:, None, None]


def incidence(k: int, outward=None) -> np.ndarray:
    """Integer local incidence d^k of one tetrahedron.

    ``d^2`` needs the outward signs of the four faces (one row per cell when
    a batch of sign rows is given).
    """
    if k == 0:
        d = np.zeros((6, 4), dtype=np.int64)
        d[np.arange(6), LOCAL_EDGES[:, 0]] = -1
        d[np.arange(6), LOCAL_EDGES[:, 1]] = 1
        return d
    if k == 1:
        edge_id = {tuple(e): n for n, e in enumerate(LOCAL_EDGES)}
        d = np.zeros((4, 6), dtype=np.int64)
        for f, face in enumerate(LOCAL_FACES):
            for (a, b), s in zip(FACE_EDGES, FACE_EDGE_SIGNS):
                d[f, edge_id[(face[a], face[b])]] = s
        return d
    if k == 2:
        if outward is None:
            raise ElementError("d^2 requires the outward face signs")
        out = np.asarray(outward, dtype=np.int64)
        return out[..., None, :]
    raise ElementError("no exterior derivative of a 3-form in 3D")


def local_derivative(k: int, coords, weight=1.0, geo: CellGeometry | None = None):
    """Return ``(d, D)`` with ``D = M^{k+1} d`` per cell; ``d`` is ``(nc, N_{k+1}, N_k)``."""
    if k not in (0, 1, 2):
        raise ElementError("local derivative defined for k <= 2")
    geo = geo or CellGeometry.of(coords)
    d = incidence(k, geo.outward)
    d = np.broadcast_to(d, (geo.n_cells,) + d.shape[-2:])
    m = local_mass(k + 1, None, weight, geo=geo)
    return np.array(d), m @ d


def local_derivative_quadrature(k: int, coords, weight=1.0) -> np.ndarray:
    """Pairing of the (k+1)-basis with d of the k-basis computed by quadrature."""
    geo = CellGeometry.of(coords)
    quad = tet_quadrature(4)
    test = basis(k + 1, geo, quad.points)
    dphi = derivative_basis(k, geo, quad.points)
    out = _pair(test, dphi, quad.weights) * (6.0 * geo.volume)[:, None, None]
    return out * np.broadcast_to(np.asarray(weight, dtype=float), (geo.n_cells,))[:, None, None]


def local_trace(k: int) -> np.ndarray:
    """Selection of boundary DOFs among cell DOFs; at s=1 every DOF lies on the boundary."""
    if k not in (0, 1, 2):
        raise ElementError("trace defined for k <= 2")
    return np.eye(N_DOFS[k], dtype=np.int64)


# local DOFs supported on each local face
FACE_DOFS = {
    0: LOCAL_FACES,
    1: np.array(
        [
            [int(np.flatnonzero((LOCAL_EDGES == (f[a], f[b])).all(1))[0]) for a, b in FACE_EDGES]
            for f in LOCAL_FACES
        ]
    ),
    2: np.arange(4)[:, None],
}


def face_points(local_face: int, order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Tetrahedron barycentric points and reference weights on local face ``local_face``."""
    quad = triangle_quadrature(order)
    bary = np.zeros((len(quad.weights), 4))
    bary[:, LOCAL_FACES[local_face]] = quad.points
    return bary, quad.weights


def trace_values(k: int, geo: CellGeometry, local_face: int, bary: np.ndarray) -> np.ndarray:
    """Trace proxies on a local face: scalar for k=0, tangential vector for k=1,
    flux density w.r.t. the canonical face normal for k=2."""
    phi = basis(k, geo, bary)
    if k == 0:
        return phi
    n = geo.unit_normals()[:, local_face]
    if k == 1:
        return phi - np.einsum("cqid,cd->cqi", phi, n)[..., None] * n[:, None, None, :]
    if k == 2:
        return np.einsum("cqid,cd->cqi", phi, n)
    raise ElementError("trace defined for k <= 2")


def local_facet_mass(k: int, coords, faces=None, geo: CellGeometry | None = None) -> np.ndarray:
    """Facet Gram matrices of traced basis functions summed over the selected local faces."""
    geo = geo or CellGeometry.of(coords)
    faces = range(4) if faces is None else faces
    n = N_DOFS[k]
    out = np.zeros((geo.n_cells, n, n))
    for f in faces:
        bary, w = face_points(f)
        tr = trace_values(k, geo, f, bary)
        out += _pair(tr, tr, w) * (2.0 * geo.areas[:, f])[:, None, None]
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def facet_pairing(k_test: int, k_ctrl: int, geo: CellGeometry, local_face: np.ndarray) -> np.ndarray:
    """Boundary wedge pairing on one face per cell, using the outward normal.

    (2,0) and (0,2) pair a scalar with an outward flux density; (1,1) is
    ``(test x control) . n_out``.  Returns ``(nc, N_test, N_ctrl)`` over cell DOFs.
    """
    if k_test + k_ctrl != 2:
        raise ElementError("pairing requires complementary boundary degrees")
    local_face = np.asarray(local_face, dtype=np.int64)
    out = np.zeros((geo.n_cells, N_DOFS[k_test], N_DOFS[k_ctrl]))
    normals = geo.unit_normals()
    for f in range(4):
        sel = np.flatnonzero(local_face == f)
        if sel.size == 0:
            continue
        sub = CellGeometry(
            geo.coords[sel], geo.grads[sel], geo.volume[sel], geo.outward[sel], geo.areas[sel]
        )
        bary, w = face_points(f)
        nout = normals[sel, f] * sub.outward[:, f, None]
        a = basis(k_test, sub, bary)
        b = basis(k_ctrl, sub, bary)
        if k_test == 1:
            cross = np.cross(a[:, :, :, None, :], b[:, :, None, :, :])
            val = np.einsum("cqijd,cd->cqij", cross, nout)
        elif k_test == 2:
            flux = np.einsum("cqid,cd->cqi", a, nout)
            val = flux[:, :, :, None] * b[:, :, None, :]
        else:
            flux = np.einsum("cqjd,cd->cqj", b, nout)
            val = a[:, :, :, None] * flux[:, :, None, :]
        out[sel] = np.einsum("q,cqij->cij", w, val) * (2.0 * sub.areas[:, f])[:, None, None]
    return out
