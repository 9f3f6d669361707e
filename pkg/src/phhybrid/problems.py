"""Manufactured wave and Maxwell cases, projections and boundary inputs.

Both problems are written with a state pair ``(alpha, beta)`` of vector
proxies: pressure and velocity-like flux ``(p, sigma)`` for the wave
equation, ``(E, H)`` for Maxwell.  The same physical pair is represented by
different form degrees in the primal and dual formulations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

from . import elements as el
from .assembly import assemble_broken, cell_geometry, local_signs
from .mesh import BoundaryPartition, GAMMA1_PREDICATES, Mesh, build_structured_box, tag_boundary
from .physystem import (
    Formulation,
    MixedSystem,
    SystemBlocks,
    Weights,
    build_hybrid,
    build_mixed_reference,
    formulation,
)
from .solver import InputFn, PhState, StepInputs, consistent_initial

Field = Callable[[np.ndarray, float], np.ndarray]
SQ3 = np.sqrt(3.0)


@dataclass(frozen=True)
class Profile:
    name: str
    f: Callable[[float], float]
    df: Callable[[float], float]
    ddf: Callable[[float], float]


PROFILES = {
    "eigenmode": Profile(
        "eigenmode",
        lambda t: np.sin(SQ3 * t) + np.cos(SQ3 * t),
        lambda t: SQ3 * (np.cos(SQ3 * t) - np.sin(SQ3 * t)),
        lambda t: -3.0 * (np.sin(SQ3 * t) + np.cos(SQ3 * t)),
    ),
    "quadratic": Profile("quadratic", lambda t: 0.5 * t * t, lambda t: t, lambda t: 1.0),
    "linear": Profile("linear", lambda t: t, lambda t: 1.0, lambda t: 0.0),
}


def profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown time profile {name!r}") from None


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields with their derivatives and the forcing of the alpha equation.

    ``alpha``/``beta`` return scalars ``(...)`` or vectors ``(..., 3)``;
    ``grad``, ``curl`` and ``div`` hold the classical derivatives of each.
    """

    problem: str
    profile: Profile
    alpha: Field
    beta: Field
    derivs: dict
    forcing: Field
    weights: Weights
    alpha_is_vector: bool
    has_forcing: bool

    def d_exact(self, name: str, k: int) -> Field:
        """Exact exterior derivative proxy of variable ``name`` viewed as a k-form."""
        op = {0: "grad", 1: "curl", 2: "div"}[k]
        return self.derivs[(name, op)]

    def field(self, name: str) -> Field:
        return self.alpha if name == "alpha" else self.beta

    def multiplier(self, form: Formulation) -> Callable:
        """Exact normal trace carried by the hybrid multiplier, as ``(x, n_out, t)``."""
        if form.primal:
            if self.alpha_is_vector:
                return lambda x, n, t: np.cross(self.alpha(x, t), n)
            return lambda x, n, t: self.alpha(x, t)
        if form.kb == 1:
            return lambda x, n, t: np.einsum("...d,...d->...", self.beta(x, t), n)
        return lambda x, n, t: np.cross(self.beta(x, t), n)


def _sx(x):
    return np.sin(x[..., 0]), np.sin(x[..., 1]), np.sin(x[..., 2])


def _cx(x):
    return np.cos(x[..., 0]), np.cos(x[..., 1]), np.cos(x[..., 2])


def _zero_scalar(x, t):
    return np.zeros(x.shape[:-1])


def _zero_vector(x, t):
    return np.zeros(x.shape)


def wave_g(x):
    sx, sy, sz = _sx(x)
    return sx * sy * sz


def wave_grad_g(x):
    sx, sy, sz = _sx(x)
    cx, cy, cz = _cx(x)
    return np.stack([cx * sy * sz, sx * cy * sz, sx * sy * cz], axis=-1)


def maxwell_g(x):
    sx, sy, sz = _sx(x)
    cx, cy, cz = _cx(x)
    return np.stack([-cx * sy * sz, np.zeros_like(sx), sx * sy * cz], axis=-1)


def maxwell_curl_g(x):
    sx, sy, sz = _sx(x)
    cx, cy, cz = _cx(x)
    return np.stack([sx * cy * cz, -2.0 * cx * sy * cz, cx * cy * sz], axis=-1)


def wave_case(profile_name: str = "eigenmode", c: float = 1.0) -> ManufacturedCase:
    """Pressure ``p = g f'`` and flux ``sigma = -grad g f`` with forcing of the pressure equation."""
    pr = profile(profile_name)
    inv_c2 = 1.0 / (c * c)
    derivs = {
        ("alpha", "grad"): lambda x, t: wave_grad_g(x) * pr.df(t),
        ("beta", "div"): lambda x, t: 3.0 * wave_g(x) * pr.f(t),
        ("beta", "curl"): _zero_vector,
    }
    # c^-2 p_t + div sigma = xi
    forcing = lambda x, t: (inv_c2 * pr.ddf(t) + 3.0 * pr.f(t)) * wave_g(x)
    return ManufacturedCase(
        problem="wave",
        profile=pr,
        alpha=lambda x, t: wave_g(x) * pr.df(t),
        beta=lambda x, t: -wave_grad_g(x) * pr.f(t),
        derivs=derivs,
        forcing=forcing,
        weights=Weights(inv_c2, 1.0),
        alpha_is_vector=False,
        has_forcing=profile_name != "eigenmode" or c != 1.0,
    )


def maxwell_case(profile_name: str = "eigenmode", eps: float = 1.0, mu: float = 1.0) -> ManufacturedCase:
    """``E = g f'`` and ``H = -curl g f / mu`` with a current in the electric equation."""
    pr = profile(profile_name)
    derivs = {
        ("alpha", "curl"): lambda x, t: maxwell_curl_g(x) * pr.df(t),
        ("alpha", "div"): _zero_scalar,
        ("beta", "curl"): lambda x, t: -3.0 * maxwell_g(x) * pr.f(t) / mu,
        ("beta", "div"): _zero_scalar,
    }
    # eps E_t = curl H + j,  mu H_t = -curl E
    forcing = lambda x, t: (eps * pr.ddf(t) + 3.0 * pr.f(t) / mu) * maxwell_g(x)
    return ManufacturedCase(
        problem="maxwell",
        profile=pr,
        alpha=lambda x, t: maxwell_g(x) * pr.df(t),
        beta=lambda x, t: -maxwell_curl_g(x) * pr.f(t) / mu,
        derivs=derivs,
        forcing=forcing,
        weights=Weights(eps, mu),
        alpha_is_vector=True,
        has_forcing=profile_name != "eigenmode" or eps * mu != 1.0,
    )


def make_case(problem: str, profile_name: str, c=1.0, eps=1.0, mu=1.0) -> ManufacturedCase:
    if problem == "wave":
        return wave_case(profile_name, c)
    if problem == "maxwell":
        return maxwell_case(profile_name, eps, mu)
    raise ValueError(f"unknown problem {problem!r}")


# ---------------------------------------------------------------- projections


def broken_load(mesh: Mesh, k: int, orientation: str, func: Callable[[np.ndarray], np.ndarray], geo=None) -> np.ndarray:
    """Cell-major vector of ``int_T func . phi_i`` in the broken local frame."""
    geo = geo or cell_geometry(mesh)
    quad = el.tet_quadrature(4)
    phi = el.basis(k, geo, quad.points)
    vals = func(geo.to_physical(quad.points))
    if phi.ndim == 4:
        loc = np.einsum("q,cqid,cqd->ci", quad.weights, phi, vals)
    else:
        loc = np.einsum("q,cqi,cq->ci", quad.weights, phi, vals)
    loc *= (6.0 * geo.volume)[:, None] * local_signs(mesh, k, orientation)
    return loc.ravel()


def project_broken(mesh: Mesh, k: int, orientation: str, func, geo=None) -> np.ndarray:
    geo = geo or cell_geometry(mesh)
    ops = assemble_broken(k, mesh, 1.0, orientation, geo=geo)
    b = broken_load(mesh, k, orientation, func, geo).reshape(mesh.n_cells, -1)
    return np.linalg.solve(ops.local_mass, b[..., None])[..., 0].ravel()


def project_conforming(mesh: Mesh, k: int, orientation: str, func, g_free, g_ess, ess_values, geo=None) -> np.ndarray:
    """L2 projection onto the conforming space with prescribed essential DOFs.

    Returns the free DOFs.
    """
    geo = geo or cell_geometry(mesh)
    m = assemble_broken(k, mesh, 1.0, orientation, geo=geo).mass.matrix
    b = broken_load(mesh, k, orientation, func, geo)
    lhs = (g_free.T @ m @ g_free).tocsc()
    rhs = g_free.T @ (b - m @ (g_ess @ ess_values))
    if lhs.shape[0] == 0:
        return np.zeros(0)
    return spla.spsolve(lhs, rhs)


def interpolate(mesh: Mesh, k: int, entities, func, boundary_outward: bool = True) -> np.ndarray:
    """Integral DOFs of ``func`` on the given entities.

    Vertex values, circulations along ascending edges, fluxes through faces
    (outward on boundary faces, canonical otherwise) and cell integrals.
    """
    ent = np.asarray(entities, dtype=np.int64)
    if ent.size == 0:
        return np.zeros(0)
    if k == 0:
        return np.asarray(func(mesh.vertices[ent]), dtype=float)
    if k == 1:
        gx, gw = leggauss(4)
        s = 0.5 * (gx + 1.0)
        a = mesh.vertices[mesh.edges[ent, 0]]
        b = mesh.vertices[mesh.edges[ent, 1]]
        pts = a[:, None] + s[None, :, None] * (b - a)[:, None]
        return np.einsum("q,eqd,ed->e", 0.5 * gw, func(pts), b - a)
    if k == 2:
        quad = el.triangle_quadrature(4)
        x = mesh.vertices[mesh.faces[ent]]
        pts = np.einsum("qv,fvd->fqd", quad.points, x)
        n = mesh.normals[ent]
        if boundary_outward:
            n = n * mesh.face_reference_sign[ent, None]
        vals = np.einsum("fqd,fd->fq", func(pts), n)
        return (vals @ quad.weights) * 2.0 * mesh.areas[ent]
    if k == 3:
        geo = el.CellGeometry.of(mesh.vertices[mesh.cells[ent]])
        quad = el.tet_quadrature(4)
        vals = func(geo.to_physical(quad.points))
        return (vals @ quad.weights) * 6.0 * geo.volume
    raise ValueError(f"invalid form degree {k}")


def evaluate_input(case: ManufacturedCase, form: Formulation, mesh: Mesh, dofs, t: float):
    """Interpolated (essential, natural) boundary inputs at time ``t``."""
    if form.primal:
        ess_field, ctrl_field, ctrl_sign = case.beta, case.alpha, 1.0
    else:
        ess_field, ctrl_field = case.alpha, case.beta
        ctrl_sign = -float(form.control_sign)
    u_l = interpolate(mesh, form.kt, dofs.essential, lambda x: ess_field(x, t))
    u_g = ctrl_sign * interpolate(mesh, form.kc, dofs.control, lambda x: ctrl_field(x, t))
    return u_l, u_g


# ---------------------------------------------------------------- simulations


@dataclass(eq=False)
class Setup:
    """Everything needed to march one formulation of one manufactured case."""

    case: ManufacturedCase
    form: Formulation
    mesh: Mesh
    partition: BoundaryPartition
    blocks: SystemBlocks
    geo: el.CellGeometry
    zero_input: bool = False

    @property
    def dofs(self):
        return self.blocks.dofs

    def load(self, t: float) -> np.ndarray | None:
        """Forcing of the alpha equation as an ``x_l`` vector."""
        if not self.case.has_forcing:
            return None
        f = np.zeros(self.blocks.n_local)
        f[self.blocks.index["alpha"]] = broken_load(
            self.mesh, self.form.ka, self.form.orientation, lambda x: self.case.forcing(x, t), self.geo
        )
        return f

    def inputs(self, t: float) -> StepInputs:
        if self.zero_input:
            return StepInputs(np.zeros(len(self.dofs.essential)), np.zeros(len(self.dofs.control)), None)
        u_l, u_g = evaluate_input(self.case, self.form, self.mesh, self.dofs, t)
        return StepInputs(u_l, u_g, self.load(t))

    @property
    def input_fn(self) -> InputFn:
        return self.inputs

    def initial_states(self, t: float = 0.0):
        """Projected (alpha, beta) broken vectors and the conforming free DOFs."""
        form, mesh = self.form, self.mesh
        from .assembly import assemble_conforming_map

        g = assemble_conforming_map(form.kt, mesh, form.orientation).matrix.tocsc()
        gf, ge = g[:, self.dofs.free], g[:, self.dofs.essential]
        u_l = self.inputs(t).u_l
        conf_name = "beta" if form.primal else "alpha"
        brok_name = "alpha" if form.primal else "beta"
        conf_field = self.case.field(conf_name)
        brok_field = self.case.field(brok_name)
        k_brok = form.ka if form.primal else form.kb
        c_free = project_conforming(
            mesh, form.kt, form.orientation, lambda x: conf_field(x, t), gf, ge, u_l, self.geo
        )
        conf_broken = gf @ c_free + ge @ u_l
        other = project_broken(mesh, k_brok, form.orientation, lambda x: brok_field(x, t), self.geo)
        states = {conf_name: conf_broken, brok_name: other}
        return states, c_free, u_l

    def initial_state(self, t: float = 0.0) -> PhState:
        states, _, _ = self.initial_states(t)
        x = np.zeros(self.blocks.n_local)
        x[self.blocks.index["alpha"]] = states["alpha"]
        x[self.blocks.index["beta"]] = states["beta"]
        return consistent_initial(self.blocks, x, self.inputs, t)

    def mixed(self) -> MixedSystem:
        return build_mixed_reference(self.form, self.mesh, self.partition, self.case.weights)


def make_setup(
    problem: str,
    kind: str,
    n: int,
    profile_name: str = "eigenmode",
    gamma1: str = "lower",
    c: float = 1.0,
    eps: float = 1.0,
    mu: float = 1.0,
    zero_input: bool = False,
) -> Setup:
    case = make_case(problem, profile_name, c, eps, mu)
    form = formulation(problem, kind)
    mesh = build_structured_box(n)
    try:
        pred = GAMMA1_PREDICATES[gamma1]
    except KeyError:
        raise ValueError(f"unknown gamma1 predicate {gamma1!r}") from None
    part = tag_boundary(mesh, pred)
    blocks = build_hybrid(form, mesh, part, case.weights)
    return Setup(case, form, mesh, part, blocks, cell_geometry(mesh), zero_input)


def project_initial(case: ManufacturedCase, space, mesh: Mesh, name: str, t: float = 0.0) -> np.ndarray:
    """Broken L2 projection of one exact variable onto a broken space."""
    fld = case.field(name)
    return project_broken(mesh, space.k, space.orientation, lambda x: fld(x, t))
