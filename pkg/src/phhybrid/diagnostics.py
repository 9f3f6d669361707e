"""Energy, power balance, error norms, divergence tracking and size tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import elements as el
from .assembly import assemble_broken, assemble_conforming_map, cell_geometry, local_signs
from .mesh import Mesh, structured_counts
from .physystem import Formulation, SystemBlocks, formulation, hybrid_dims
from .solver import PhState, StepInputs, hamiltonian as _hamiltonian, supplied_power

NORM_NAMES = {0: "H1", 1: "Hcurl", 2: "Hdiv"}


@dataclass(frozen=True)
class StepDiagnostics:
    t: float
    H: float
    power: float
    residual: float
    div_norm: float | None = None


@dataclass
class ErrorReport:
    h: float
    s: int = 1
    errors: dict = field(default_factory=dict)  # (variable, norm) -> value

    def __getitem__(self, key):
        return self.errors[key]


def hamiltonian(blocks: SystemBlocks, state) -> float:
    x_l = state.x_l if isinstance(state, PhState) else np.asarray(state)
    return _hamiltonian(blocks, x_l)


def power_residual(blocks: SystemBlocks, state_n: PhState, state_n1: PhState, inp: StepInputs, dt: float) -> float:
    """``(H^{n+1} - H^n)/dt`` minus the supplied power at the midpoint."""
    dH = (hamiltonian(blocks, state_n1) - hamiltonian(blocks, state_n)) / dt
    x_mid = 0.5 * (state_n.x_l + state_n1.x_l)
    g_mid = 0.5 * (state_n.x_g + state_n1.x_g)
    return dH - supplied_power(blocks, x_mid, g_mid, inp)


# ---------------------------------------------------------------- field evaluation


def broken_values(mesh: Mesh, k: int, orientation: str, coeffs, bary, geo=None) -> np.ndarray:
    """Proxy values of a broken cochain at barycentric points, ``(nc, q[, 3])``."""
    geo = geo or cell_geometry(mesh)
    c = np.asarray(coeffs).reshape(mesh.n_cells, -1) * local_signs(mesh, k, orientation)
    phi = el.basis(k, geo, bary)
    if phi.ndim == 4:
        return np.einsum("cqid,ci->cqd", phi, c)
    return np.einsum("cqi,ci->cq", phi, c)


def broken_derivative_values(mesh: Mesh, k: int, orientation: str, coeffs, bary, geo=None) -> np.ndarray:
    geo = geo or cell_geometry(mesh)
    c = np.asarray(coeffs).reshape(mesh.n_cells, -1) * local_signs(mesh, k, orientation)
    dphi = el.derivative_basis(k, geo, bary)
    if dphi.ndim == 4:
        return np.einsum("cqid,ci->cqd", dphi, c)
    return np.einsum("cqi,ci->cq", dphi, c)


def _l2(diff: np.ndarray, geo) -> float:
    quad = el.tet_quadrature(4)
    sq = diff**2 if diff.ndim == 2 else (diff**2).sum(-1)
    return float(np.sqrt(np.sum((sq @ quad.weights) * 6.0 * geo.volume)))


def l2_error(mesh: Mesh, k: int, orientation: str, coeffs, exact: Callable, geo=None) -> float:
    geo = geo or cell_geometry(mesh)
    quad = el.tet_quadrature(4)
    uh = broken_values(mesh, k, orientation, coeffs, quad.points, geo)
    return _l2(uh - exact(geo.to_physical(quad.points)), geo)


def derivative_error(mesh: Mesh, k: int, orientation: str, coeffs, exact: Callable, geo=None) -> float:
    geo = geo or cell_geometry(mesh)
    quad = el.tet_quadrature(4)
    duh = broken_derivative_values(mesh, k, orientation, coeffs, quad.points, geo)
    return _l2(duh - exact(geo.to_physical(quad.points)), geo)


def l2_difference(mesh: Mesh, a: tuple, b: tuple, geo=None) -> float:
    """L2 distance between two broken cochains given as ``(k, orientation, coeffs)``."""
    geo = geo or cell_geometry(mesh)
    quad = el.tet_quadrature(4)
    va = broken_values(mesh, *a, quad.points, geo)
    vb = broken_values(mesh, *b, quad.points, geo)
    return _l2(va - vb, geo)


# ---------------------------------------------------------------- facet traces


def _facet_trace_basis(mesh: Mesh, k: int, orientation: str, geo, f: int):
    bary, w = el.face_points(f)
    tr = el.trace_values(k, geo, f, bary)
    o = local_signs(mesh, k, orientation)
    tr = tr * (o[:, None, :, None] if tr.ndim == 4 else o[:, None, :])
    if k == 2:
        # normal traces are flux densities along the outward normal
        tr = tr * geo.outward[:, f, None, None]
    return bary, w, tr


def facet_annihilator_projection(omega, k: int, mesh: Mesh, orientation: str = "inner", geo=None) -> np.ndarray:
    """L2 projection onto the broken facet space over every cell boundary.

    ``omega`` is either a callable ``(x, n_out) -> values`` (scalar, or a
    tangential vector for k=1) or a cochain of the same facet space.
    Returns the cell-major facet cochain.
    """
    if k > 2:
        raise ValueError("facet spaces exist for k <= 2")
    geo = geo or cell_geometry(mesh)
    n = el.N_DOFS[k]
    rhs = np.zeros((mesh.n_cells, n))
    normals = geo.unit_normals() * geo.outward[..., None]
    coeffs = None if callable(omega) else np.asarray(omega).reshape(mesh.n_cells, n)
    for f in range(4):
        bary, w, tr = _facet_trace_basis(mesh, k, orientation, geo, f)
        if coeffs is None:
            x = geo.to_physical(bary)
            vals = omega(x, normals[:, f, None, :])
        else:
            vals = np.einsum("cqi...,ci->cq...", tr, coeffs)
        if tr.ndim == 4:
            loc = np.einsum("q,cqid,cqd->ci", w, tr, vals)
        else:
            loc = np.einsum("q,cqi,cq->ci", w, tr, vals)
        rhs += loc * (2.0 * geo.areas[:, f])[:, None]
    mass = assemble_broken(k, mesh, 1.0, orientation, geo=geo).local_facet_mass
    return np.linalg.solve(mass, rhs[..., None])[..., 0].ravel()


def facet_norm(mesh: Mesh, k: int, orientation: str, cochain, geo=None) -> float:
    """Cell-diameter scaled facet norm ``sqrt(sum_T h_T ||e||^2_{dT})``."""
    geo = geo or cell_geometry(mesh)
    mass = assemble_broken(k, mesh, 1.0, orientation, geo=geo).local_facet_mass
    e = np.asarray(cochain).reshape(mesh.n_cells, -1)
    per_cell = np.einsum("ci,cij,cj->c", e, mass, e)
    return float(np.sqrt(np.sum(mesh.diameters * per_cell)))


# ---------------------------------------------------------------- divergence


def divergence_norm(cochain, space, mesh: Mesh) -> float:
    """L2 norm of the divergence of a 2-form cochain (broken or conforming)."""
    if space.k != 2:
        raise ValueError("divergence norm needs a 2-form")
    w = np.asarray(cochain, dtype=float)
    if space.layout == "conforming":
        w = assemble_conforming_map(2, mesh, space.orientation).matrix @ w
    w = w.reshape(mesh.n_cells, 4) * local_signs(mesh, 2, space.orientation)
    div = np.sum(mesh.outward * w, axis=1)
    return float(np.sqrt(np.sum(div**2 / mesh.volumes)))


# ---------------------------------------------------------------- errors


def error_norms(setup, state: PhState, t: float, variables=("alpha", "beta", "lambda", "trace")) -> ErrorReport:
    """Errors of a hybrid state against the manufactured solution at time ``t``."""
    from .problems import interpolate

    form: Formulation = setup.form
    blocks: SystemBlocks = setup.blocks
    mesh, geo, case = setup.mesh, setup.geo, setup.case
    ori = form.orientation
    report = ErrorReport(h=mesh.h)
    for name in variables:
        if name in ("alpha", "beta"):
            k = form.ka if name == "alpha" else form.kb
            coeffs = blocks.part(state.x_l, name)
            fld = case.field(name)
            l2 = l2_error(mesh, k, ori, coeffs, lambda x: fld(x, t), geo)
            report.errors[(name, "L2")] = l2
            if k < 3:
                dex = case.d_exact(name, k)
                de = derivative_error(mesh, k, ori, coeffs, lambda x: dex(x, t), geo)
                report.errors[(name, NORM_NAMES[k])] = math.hypot(l2, de)
        elif name == "lambda":
            lam = blocks.part(state.x_l, "lambda")
            mult = case.multiplier(form)
            proj = facet_annihilator_projection(lambda x, n: mult(x, n, t), form.kt, mesh, ori, geo)
            report.errors[("lambda", "facet")] = facet_norm(mesh, form.kt, ori, lam - proj, geo)
        elif name == "trace":
            conf = case.field("beta" if form.primal else "alpha")
            exact = interpolate(mesh, form.kt, blocks.dofs.free, lambda x: conf(x, t))
            g = assemble_conforming_map(form.kt, mesh, ori).matrix.tocsc()[:, blocks.dofs.free]
            report.errors[("trace", "facet")] = facet_norm(mesh, form.kt, ori, g @ (state.x_g - exact), geo)
        else:
            raise KeyError(f"unknown variable {name!r}")
    return report


def fit_rate(h, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 2 or h.size != e.size:
        raise ValueError("need at least two (h, error) pairs")
    if np.any(h <= 0) or np.any(e <= 0):
        raise ValueError("h and errors must be positive")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


# ---------------------------------------------------------------- size tables

# ratios (%) listed in the reference size tables, for mismatch flags
REFERENCE_RATIOS = {
    ("wave", "primal"): {1: 75, 2: 71, 4: 69, 8: 68, 16: 67},
    ("wave", "dual"): {1: 18, 2: 9, 4: 5, 8: 4},
    ("maxwell", "primal"): {1: 44, 2: 38, 4: 28, 8: 25},
    ("maxwell", "dual"): {1: 44, 2: 38, 4: 28, 8: 25},
}


@dataclass(frozen=True)
class DofRow:
    n: int
    mixed: int
    hybrid: int
    ratio: int
    reference_ratio: int | None = None

    @property
    def flagged(self) -> bool:
        return self.reference_ratio is not None and self.reference_ratio != self.ratio


def dof_table(problem: str, kind: str, ns, s: int = 1) -> list[DofRow]:
    """Mixed vs hybrid global sizes from entity counts (no assembly)."""
    if s != 1:
        raise ValueError("only s=1 is supported")
    form = formulation(problem, kind)
    ref = REFERENCE_RATIOS.get((problem, kind), {})
    rows = []
    for n in ns:
        mixed, hybrid = hybrid_dims(form, structured_counts(int(n)))
        ratio = int(math.floor(100.0 * hybrid / mixed + 0.5))
        rows.append(DofRow(int(n), mixed, hybrid, ratio, ref.get(int(n))))
    return rows
