"""Hybrid and mixed block systems for linear port-Hamiltonian wave models.

A formulation pairs a state ``alpha`` of degree ``ka`` and a state ``beta`` of
degree ``kb``; the differentiated variable has degree ``kt`` and its facet
trace is the global unknown ``x_g``.  The hybrid system reads

    E_l x_l' = J_l x_l + C_lg x_g + B_l u_l (+ F)
    0        = -C_lg^T x_l + B_g u_g

with ``x_l = (alpha, beta, lambda)`` ordered variable-major and cell-major
inside each variable.  The multiplier couples to the trace through the facet
mass, ``C_lg = +-M_dT Xi^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import elements as el
from .assembly import (
    assemble_boundary_pairing,
    assemble_broken,
    assemble_conforming_map,
    block_diagonal,
    cell_geometry,
    conforming_signs,
)
from .mesh import BoundaryPartition, Mesh

DIM = 3


@dataclass(frozen=True)
class Formulation:
    """Degrees and orientation of a primal or dual formulation with ``p + q = 4``."""

    kind: str
    p: int

    def __post_init__(self):
        if self.kind not in ("primal", "dual"):
            raise ValueError(f"unknown formulation {self.kind!r}")
        if self.p not in (1, 2, 3):
            raise ValueError("p must be 1, 2 or 3")

    @property
    def q(self) -> int:
        return DIM + 1 - self.p

    @property
    def primal(self) -> bool:
        return self.kind == "primal"

    @property
    def ka(self) -> int:
        return self.p if self.primal else self.q - 1

    @property
    def kb(self) -> int:
        return self.p - 1 if self.primal else self.q

    @property
    def kt(self) -> int:
        """Degree of the conforming (differentiated) variable and its trace."""
        return self.kb if self.primal else self.ka

    @property
    def kc(self) -> int:
        """Degree of the control on the natural boundary part."""
        return DIM - 1 - self.kt

    @property
    def orientation(self) -> str:
        return "outer" if self.primal else "inner"

    @property
    def essential_side(self) -> int:
        return 2 if self.primal else 1

    @property
    def natural_side(self) -> int:
        return 1 if self.primal else 2

    @property
    def sign(self) -> int:
        """Sign multiplying the structure blocks."""
        return (-1) ** self.p if self.primal else 1

    @property
    def control_sign(self) -> int:
        """Sign of the boundary pairing block B_g."""
        if self.primal:
            return (-1) ** self.p
        return (-1) ** ((self.p - 1) * (self.q - 1))


def formulation(problem: str, kind: str) -> Formulation:
    p = {"wave": 3, "maxwell": 2}[problem]
    return Formulation(kind, p)


@dataclass(frozen=True)
class Weights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("material weights must be positive")


@dataclass(frozen=True, eq=False)
class LocalBlocks:
    """Batched per-cell operators shared by all builders."""

    form: Formulation
    mass_a: np.ndarray
    mass_b: np.ndarray
    deriv: np.ndarray  # alpha <- beta (primal) or beta <- alpha (dual), unweighted
    facet_mass: np.ndarray
    trace: np.ndarray


def local_blocks(form: Formulation, mesh: Mesh, weights: Weights) -> LocalBlocks:
    geo = cell_geometry(mesh)
    ori = form.orientation
    opa = assemble_broken(form.ka, mesh, weights.alpha, ori, geo=geo)
    opb = assemble_broken(form.kb, mesh, weights.beta, ori, geo=geo)
    opt = opb if form.primal else opa
    return LocalBlocks(
        form=form,
        mass_a=opa.local_mass,
        mass_b=opb.local_mass,
        deriv=opt.local_derivative,
        facet_mass=opt.local_facet_mass,
        trace=np.broadcast_to(
            el.local_trace(form.kt).astype(float), opt.local_facet_mass.shape
        ).copy(),
    )


@dataclass(frozen=True, eq=False)
class BoundaryDofs:
    """Global entity sets for the trace unknowns and the controls."""

    essential: np.ndarray  # degree kt entities carrying the essential input
    free: np.ndarray  # degree kt entities carried by x_g
    control: np.ndarray  # degree kc entities carrying the natural input
    natural_faces: np.ndarray


def boundary_dofs(form: Formulation, mesh: Mesh, partition: BoundaryPartition) -> BoundaryDofs:
    ess = partition.closure(form.kt, form.essential_side)
    mask = np.ones(mesh.entity_count(form.kt), dtype=bool)
    mask[ess] = False
    return BoundaryDofs(
        essential=ess,
        free=np.flatnonzero(mask),
        control=partition.closure(form.kc, form.natural_side),
        natural_faces=np.sort(partition.faces(form.natural_side)),
    )


@dataclass(frozen=True, eq=False)
class SystemBlocks:
    form: Formulation
    E_l: sp.csr_matrix
    J_l: sp.csr_matrix
    C_lg: sp.csr_matrix
    B_l: sp.csr_matrix
    B_g: sp.csr_matrix
    index: dict  # name -> slice of x_l
    cell_index: np.ndarray  # (n_cells, n_local) positions of each cell's unknowns in x_l
    dofs: BoundaryDofs
    n_cells: int
    weights: Weights = field(default_factory=Weights)

    @property
    def n_local(self) -> int:
        return self.E_l.shape[0]

    @property
    def n_global(self) -> int:
        return self.C_lg.shape[1]

    def part(self, x_l: np.ndarray, name: str) -> np.ndarray:
        return x_l[self.index[name]]

    def blocks(self) -> dict:
        return {"E_l": self.E_l, "J_l": self.J_l, "C_lg": self.C_lg, "B_l": self.B_l, "B_g": self.B_g}


def _layout(n_cells: int, na: int, nb: int, nl: int):
    sa, sb, sl = n_cells * na, n_cells * nb, n_cells * nl
    index = {"alpha": slice(0, sa), "beta": slice(sa, sa + sb), "lambda": slice(sa + sb, sa + sb + sl)}
    c = np.arange(n_cells)[:, None]
    cell_index = np.hstack(
        [c * na + np.arange(na), sa + c * nb + np.arange(nb), sa + sb + c * nl + np.arange(nl)]
    )
    return index, cell_index


@dataclass(frozen=True, eq=False)
class CellPHDAE:
    """Local descriptor system of one cell.

    ``M x' = J x + G lam`` and ``0 = -G^T x + B u_t`` with state ``x = (alpha, beta)``,
    multiplier ``lam`` and trace input ``u_t``; the conjugate output is ``B^T lam``.
    """

    form: Formulation
    cell: int
    M: np.ndarray
    J: np.ndarray
    G: np.ndarray
    B: np.ndarray
    entities: np.ndarray  # global trace entity of each multiplier/port DOF
    signs: np.ndarray  # frame sign of each port DOF w.r.t. its global entity
    face_dofs: np.ndarray  # local port DOFs supported on each local face

    @property
    def n_state(self) -> int:
        return self.M.shape[0]

    @property
    def n_port(self) -> int:
        return self.B.shape[1]

    def G_face(self, f: int) -> np.ndarray:
        return self.G[:, self.face_dofs[f]]


def _cell_matrices(lb: LocalBlocks):
    """Per-cell (M, J, G, B) arrays of the local pHDAEs."""
    form = lb.form
    s = form.sign
    nc, na, _ = lb.mass_a.shape
    nb = lb.mass_b.shape[1]
    nl = lb.facet_mass.shape[1]
    ns = na + nb
    M = np.zeros((nc, ns, ns))
    M[:, :na, :na] = lb.mass_a
    M[:, na:, na:] = lb.mass_b
    J = np.zeros((nc, ns, ns))
    G = np.zeros((nc, ns, nl))
    mt = np.einsum("cji,cjk->cik", lb.trace, lb.facet_mass)  # T^T M_dT
    if form.primal:
        J[:, :na, na:] = s * lb.deriv
        J[:, na:, :na] = -s * np.swapaxes(lb.deriv, 1, 2)
        G[:, na:, :] = s * mt
        B = s * lb.facet_mass
    else:
        J[:, :na, na:] = np.swapaxes(lb.deriv, 1, 2)
        J[:, na:, :na] = -lb.deriv
        G[:, :na, :] = -mt
        B = -lb.facet_mass
    return M, J, G, B


def build_cell_phdaes(form: Formulation, mesh: Mesh, weights: Weights = Weights()) -> list[CellPHDAE]:
    lb = local_blocks(form, mesh, weights)
    M, J, G, B = _cell_matrices(lb)
    ents = mesh.cell_entities(form.kt)
    signs = conforming_signs(mesh, form.kt, form.orientation)
    fd = el.FACE_DOFS[form.kt]
    return [
        CellPHDAE(form, c, M[c], J[c], G[c], B[c], ents[c], signs[c], fd) for c in range(mesh.n_cells)
    ]


def build_cell_phdae(form: Formulation, mesh: Mesh, cell: int, weights: Weights = Weights()) -> CellPHDAE:
    return build_cell_phdaes(form, mesh, weights)[cell]


def _pairing_block(form: Formulation, mesh: Mesh, dofs: BoundaryDofs) -> sp.csr_matrix:
    psi = assemble_boundary_pairing(form.kt, form.kc, mesh, dofs.natural_faces)
    return form.control_sign * psi[dofs.free][:, dofs.control]


def _trace_selection(mesh: Mesh, form: Formulation, dofs: BoundaryDofs):
    """Signed maps from the global free / essential trace DOFs to cell port DOFs."""
    g = assemble_conforming_map(form.kt, mesh, form.orientation).matrix.tocsc()
    return g[:, dofs.free].tocsr(), g[:, dofs.essential].tocsr()


def _hybrid(form: Formulation, mesh: Mesh, partition: BoundaryPartition, weights: Weights) -> SystemBlocks:
    lb = local_blocks(form, mesh, weights)
    M, J, G, B = _cell_matrices(lb)
    nc, ns, nl = G.shape
    na = lb.mass_a.shape[1]
    nb = ns - na
    index, cell_index = _layout(nc, na, nb, nl)
    n = nc * (ns + nl)

    full = np.zeros((nc, ns + nl, ns + nl))
    full[:, :ns, :ns] = J
    full[:, :ns, ns:] = G
    full[:, ns:, :ns] = -np.swapaxes(G, 1, 2)
    emat = np.zeros_like(full)
    emat[:, :ns, :ns] = M

    perm = sp.csr_matrix(
        (np.ones(n), (cell_index.ravel(), np.arange(n))), shape=(n, n)
    )  # cell-major -> variable-major
    E_l = (perm @ block_diagonal(emat) @ perm.T).tocsr()
    J_l = (perm @ block_diagonal(full) @ perm.T).tocsr()

    dofs = boundary_dofs(form, mesh, partition)
    xi_free, xi_ess = _trace_selection(mesh, form, dofs)
    bd = block_diagonal(B)
    lam = index["lambda"]

    def in_lambda(mat):
        top = sp.csr_matrix((lam.start, mat.shape[1]))
        return sp.vstack([top, mat]).tocsr()

    C_lg = in_lambda(bd @ xi_free)
    B_l = in_lambda(bd @ xi_ess)
    B_g = _pairing_block(form, mesh, dofs).tocsr()
    for m in (E_l, J_l, C_lg, B_l, B_g):
        m.eliminate_zeros()
        m.sort_indices()
    return SystemBlocks(form, E_l, J_l, C_lg, B_l, B_g, index, cell_index, dofs, nc, weights)


def build_primal_hybrid(p: int, mesh: Mesh, partition: BoundaryPartition, weights: Weights = Weights()) -> SystemBlocks:
    if p not in (2, 3):
        raise ValueError("primal hybrid supports p in {2, 3}")
    return _hybrid(Formulation("primal", p), mesh, partition, weights)


def build_dual_hybrid(q: int, mesh: Mesh, partition: BoundaryPartition, weights: Weights = Weights()) -> SystemBlocks:
    if q not in (1, 2):
        raise ValueError("dual hybrid supports q in {1, 2}")
    return _hybrid(Formulation("dual", DIM + 1 - q), mesh, partition, weights)


def build_hybrid(form: Formulation, mesh: Mesh, partition: BoundaryPartition, weights: Weights = Weights()) -> SystemBlocks:
    if form.primal:
        return build_primal_hybrid(form.p, mesh, partition, weights)
    return build_dual_hybrid(form.q, mesh, partition, weights)


def interconnect(cells: list[CellPHDAE], mesh: Mesh, partition: BoundaryPartition, weights: Weights = Weights()) -> SystemBlocks:
    """Couple per-cell pHDAEs through their facet ports.

    Port DOFs of neighbouring cells that refer to the same entity are tied to
    one global trace unknown with their frame signs; the conjugate outputs
    are summed with the same signs, so the interconnection is power neutral.
    """
    if len(cells) != mesh.n_cells:
        raise ValueError("one local system per mesh cell is required")
    form = cells[0].form
    if any(c.form != form for c in cells):
        raise ValueError("all local systems must share one formulation")
    na = el.N_DOFS[form.ka]
    ns, nl = cells[0].n_state, cells[0].n_port
    index, cell_index = _layout(mesh.n_cells, na, ns - na, nl)
    n = cell_index.size
    dofs = boundary_dofs(form, mesh, partition)
    free_pos = -np.ones(mesh.entity_count(form.kt), dtype=np.int64)
    free_pos[dofs.free] = np.arange(len(dofs.free))
    ess_pos = -np.ones_like(free_pos)
    ess_pos[dofs.essential] = np.arange(len(dofs.essential))

    E = sp.lil_matrix((n, n))
    J = sp.lil_matrix((n, n))
    C = sp.lil_matrix((n, len(dofs.free)))
    Bl = sp.lil_matrix((n, len(dofs.essential)))
    for cs in sorted(cells, key=lambda c: c.cell):
        idx = cell_index[cs.cell]
        st, lm = idx[:ns], idx[ns:]
        E[np.ix_(st, st)] = cs.M
        J[np.ix_(st, st)] = cs.J
        J[np.ix_(st, lm)] = cs.G
        J[np.ix_(lm, st)] = -cs.G.T
        for j in range(nl):
            ent, sgn = cs.entities[j], cs.signs[j]
            target = C if free_pos[ent] >= 0 else Bl
            col = free_pos[ent] if free_pos[ent] >= 0 else ess_pos[ent]
            for i in range(nl):
                if cs.B[i, j] != 0.0:
                    target[lm[i], col] = target[lm[i], col] + cs.B[i, j] * sgn
    out = [m.tocsr() for m in (E, J, C, Bl)]
    B_g = _pairing_block(form, mesh, dofs).tocsr()
    for m in out + [B_g]:
        m.eliminate_zeros()
        m.sort_indices()
    return SystemBlocks(form, *out, B_g, index, cell_index, dofs, mesh.n_cells, weights)


def port_pairing(cells: list[CellPHDAE], u: list[np.ndarray], y: list[np.ndarray], entity: int) -> float:
    """Sum of ``u . y`` over all port DOFs attached to one global entity."""
    total = 0.0
    for cs, uu, yy in zip(cells, u, y):
        hit = cs.entities == entity
        total += float(np.dot(uu[hit], yy[hit]))
    return total


@dataclass(frozen=True, eq=False)
class MixedSystem:
    """Non-hybrid reference with one conforming and one broken state.

    ``y = (alpha, beta)`` with the conforming variable restricted to free DOFs;
    its essential DOFs ``e`` enter through ``E_e`` and ``J_e``:

        E y' + E_e e' = J y + J_e e + B u_g (+ F)
    """

    form: Formulation
    E: sp.csr_matrix
    J: sp.csr_matrix
    E_e: sp.csr_matrix
    J_e: sp.csr_matrix
    B: sp.csr_matrix
    G_free: sp.csr_matrix
    G_ess: sp.csr_matrix
    index: dict
    dofs: BoundaryDofs
    n_conforming: int
    n_broken: int

    @property
    def dim(self) -> int:
        """Full mixed dimension (conforming including essential DOFs, plus broken)."""
        return self.n_conforming + self.n_broken


def build_mixed_reference(
    form: Formulation, mesh: Mesh, partition: BoundaryPartition, weights: Weights = Weights()
) -> MixedSystem:
    lb = local_blocks(form, mesh, weights)
    dofs = boundary_dofs(form, mesh, partition)
    gf, ge = _trace_selection(mesh, form, dofs)
    ma = block_diagonal(lb.mass_a)
    mb = block_diagonal(lb.mass_b)
    d = block_diagonal(lb.deriv)
    s = form.sign
    psi = _pairing_block(form, mesh, dofs)
    nf = len(dofs.free)
    if form.primal:
        na = ma.shape[0]
        E = sp.block_diag([ma, gf.T @ mb @ gf])
        E_e = sp.vstack([sp.csr_matrix((na, ge.shape[1])), gf.T @ mb @ ge])
        J = sp.bmat([[None, s * d @ gf], [-s * gf.T @ d.T, None]])
        J_e = sp.vstack([s * d @ ge, sp.csr_matrix((nf, ge.shape[1]))])
        B = sp.vstack([sp.csr_matrix((na, psi.shape[1])), psi])
        index = {"alpha": slice(0, na), "beta": slice(na, na + nf)}
        n_conf, n_brk = mesh.entity_count(form.kb), na
    else:
        nb = mb.shape[0]
        E = sp.block_diag([gf.T @ ma @ gf, mb])
        E_e = sp.vstack([gf.T @ ma @ ge, sp.csr_matrix((nb, ge.shape[1]))])
        J = sp.bmat([[None, gf.T @ d.T], [-d @ gf, None]])
        J_e = sp.vstack([sp.csr_matrix((nf, ge.shape[1])), -d @ ge])
        B = sp.vstack([psi, sp.csr_matrix((nb, psi.shape[1]))])
        index = {"alpha": slice(0, nf), "beta": slice(nf, nf + nb)}
        n_conf, n_brk = mesh.entity_count(form.ka), nb
    mats = [m.tocsr() for m in (E, J, E_e, J_e, B)]
    return MixedSystem(form, *mats, gf, ge, index, dofs, n_conf, n_brk)


def hybrid_dims(form: Formulation, counts: dict) -> tuple[int, int]:
    """(mixed dim, hybrid global dim) from entity counts, no assembly."""
    names = ("vertices", "edges", "faces", "cells")
    per_cell = el.N_DOFS
    conf = counts[names[form.kt]]
    other = form.ka if form.primal else form.kb
    broken = counts["cells"] * per_cell[other]
    return conf + broken, counts[names[form.kt]]
