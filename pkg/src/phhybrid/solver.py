"""Implicit-midpoint time stepping with static condensation.

One step of the hybrid descriptor system is the saddle point problem

    A x_l' - C_s x_g' = b_l,     C_s^T x_l' = b_g,

with ``A = E_l - dt/2 J_l`` and ``C_s = dt/2 C_lg``.  ``A`` is block diagonal
over cells, so the cell unknowns are eliminated with dense per-cell inverses
and only the Schur complement ``S = C_s^T A^-1 C_s`` is factorized globally.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .physystem import MixedSystem, SystemBlocks


class SolverError(RuntimeError):
    def __init__(self, message: str, step: int | None = None, cell: int | None = None):
        super().__init__(message)
        self.step = step
        self.cell = cell


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.n_steps < 0:
            raise ValueError("number of steps must be nonnegative")

    @classmethod
    def until(cls, dt: float, t_end: float) -> "TimeGrid":
        n = int(round(t_end / dt))
        if abs(n * dt - t_end) > 1e-9 * max(t_end, dt):
            raise ValueError("t_end must be an integer multiple of dt")
        return cls(dt, n)

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    def time(self, n: int) -> float:
        return n * self.dt


@dataclass
class PhState:
    x_l: np.ndarray
    x_g: np.ndarray
    t: float = 0.0
    step: int = 0

    def copy(self) -> "PhState":
        return PhState(self.x_l.copy(), self.x_g.copy(), self.t, self.step)


@dataclass(frozen=True)
class StepInputs:
    """Inputs sampled at one time: essential values, natural controls, load."""

    u_l: np.ndarray
    u_g: np.ndarray
    f: np.ndarray | None = None


InputFn = Callable[[float], StepInputs]


def zero_inputs(blocks: SystemBlocks) -> InputFn:
    u_l = np.zeros(blocks.B_l.shape[1])
    u_g = np.zeros(blocks.B_g.shape[1])
    return lambda t: StepInputs(u_l, u_g, None)


def _cell_blocks(mat: sp.spmatrix, cell_index: np.ndarray) -> np.ndarray:
    nc, m = cell_index.shape
    perm = cell_index.ravel()
    sub = mat.tocsr()[perm][:, perm].tocoo()
    bc = sub.row // m
    if np.any(bc != sub.col // m):
        raise SolverError("local operator couples different cells")
    out = np.zeros((nc, m, m))
    np.add.at(out, (bc, sub.row % m, sub.col % m), sub.data)
    return out


def _batched_inverse(blocks: np.ndarray, threads: int = 1) -> np.ndarray:
    cond = np.linalg.cond(blocks)
    bad = np.flatnonzero(~np.isfinite(cond) | (cond > 1e14))
    if bad.size:
        raise SolverError(f"singular local block in cell {bad[0]}", cell=int(bad[0]))
    if threads <= 1 or len(blocks) < 2 * threads:
        return np.linalg.inv(blocks)
    chunks = np.array_split(np.arange(len(blocks)), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda ix: np.linalg.inv(blocks[ix]), chunks))
    return np.concatenate(parts)


@dataclass(eq=False)
class CondensedOperator:
    dt: float
    A: sp.csr_matrix
    A_inv: np.ndarray  # (n_cells, m, m)
    C_s: sp.csr_matrix
    S: sp.csc_matrix
    lu: object
    cell_index: np.ndarray
    rhs_l: sp.csr_matrix  # E_l + dt/2 J_l

    def apply_A_inv(self, b: np.ndarray) -> np.ndarray:
        loc = b[self.cell_index]
        out = np.empty_like(b)
        out[self.cell_index] = np.einsum("cij,cj->ci", self.A_inv, loc)
        return out

    def solve(self, b_l: np.ndarray, b_g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ainv_b = self.apply_A_inv(b_l)
        rhs = b_g - self.C_s.T @ ainv_b
        x_g = self.lu.solve(rhs) if len(rhs) else rhs
        x_l = self.apply_A_inv(b_l + self.C_s @ x_g)
        return x_l, x_g


def prepare(blocks: SystemBlocks, dt: float, threads: int = 1) -> CondensedOperator:
    if not dt > 0:
        raise ValueError("time step must be positive")
    A = (blocks.E_l - 0.5 * dt * blocks.J_l).tocsr()
    a_loc = _cell_blocks(A, blocks.cell_index)
    a_inv = _batched_inverse(a_loc, threads)
    C_s = (0.5 * dt * blocks.C_lg).tocsr()

    # per-cell dense slices of C_s restricted to the global columns they touch
    ci = blocks.cell_index
    nc, m = ci.shape
    cperm = C_s[ci.ravel()].tocsr()
    ng = C_s.shape[1]
    rows, cols, vals = [], [], []
    for c in range(nc):
        blk = cperm[c * m : (c + 1) * m]
        touched = np.unique(blk.indices)
        if touched.size == 0:
            continue
        dense = blk[:, touched].toarray()
        s_c = dense.T @ a_inv[c] @ dense
        rows.append(np.repeat(touched, touched.size))
        cols.append(np.tile(touched, touched.size))
        vals.append(s_c.ravel())
    if rows:
        S = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ng, ng)
        ).tocsc()
    else:
        S = sp.csc_matrix((ng, ng))
    S.sum_duplicates()
    lu = spla.splu(S) if ng else None
    rhs_l = (blocks.E_l + 0.5 * dt * blocks.J_l).tocsr()
    return CondensedOperator(dt, A, a_inv, C_s, S, lu, ci, rhs_l)


def _rhs(blocks: SystemBlocks, rhs_l, dt: float, state: PhState, inp: StepInputs):
    b_l = rhs_l @ state.x_l + 0.5 * dt * (blocks.C_lg @ state.x_g) + dt * (blocks.B_l @ inp.u_l)
    if inp.f is not None:
        b_l = b_l + dt * inp.f
    b_g = -0.5 * dt * (blocks.C_lg.T @ state.x_l) + dt * (blocks.B_g @ inp.u_g)
    return b_l, b_g


def _check(x: np.ndarray, step: int):
    if not np.all(np.isfinite(x)):
        raise SolverError(f"non-finite values at step {step}", step=step)


def step(op: CondensedOperator, blocks: SystemBlocks, state: PhState, inp: StepInputs) -> PhState:
    b_l, b_g = _rhs(blocks, op.rhs_l, op.dt, state, inp)
    x_l, x_g = op.solve(b_l, b_g)
    _check(x_l, state.step + 1)
    _check(x_g, state.step + 1)
    return PhState(x_l, x_g, state.t + op.dt, state.step + 1)


@dataclass(eq=False)
class MonolithicOperator:
    dt: float
    K: sp.csc_matrix
    lu: object
    rhs_l: sp.csr_matrix
    tol: float = 1e-10

    @classmethod
    def prepare(cls, blocks: SystemBlocks, dt: float, tol: float = 1e-10) -> "MonolithicOperator":
        A = blocks.E_l - 0.5 * dt * blocks.J_l
        C_s = 0.5 * dt * blocks.C_lg
        K = sp.bmat([[A, -C_s], [C_s.T, None]], format="csc")
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SolverError(f"singular saddle matrix: {exc}") from exc
        return cls(dt, K, lu, (blocks.E_l + 0.5 * dt * blocks.J_l).tocsr(), tol)

    def step(self, blocks: SystemBlocks, state: PhState, inp: StepInputs) -> PhState:
        b_l, b_g = _rhs(blocks, self.rhs_l, self.dt, state, inp)
        b = np.concatenate([b_l, b_g])
        x = self.lu.solve(b)
        res = np.linalg.norm(self.K @ x - b)
        if res > self.tol * max(np.linalg.norm(b), 1e-300) and res > 1e-14:
            raise SolverError(f"saddle residual {res:.3e} at step {state.step + 1}", step=state.step + 1)
        _check(x, state.step + 1)
        n = blocks.n_local
        return PhState(x[:n], x[n:], state.t + self.dt, state.step + 1)


def monolithic_solve(blocks: SystemBlocks, state: PhState, inp: StepInputs, dt: float) -> PhState:
    return MonolithicOperator.prepare(blocks, dt).step(blocks, state, inp)


def hamiltonian(blocks: SystemBlocks, x_l: np.ndarray) -> float:
    return 0.5 * float(x_l @ (blocks.E_l @ x_l))


def supplied_power(blocks: SystemBlocks, x_l_mid, x_g_mid, inp: StepInputs) -> float:
    power = float(x_l_mid @ (blocks.B_l @ inp.u_l) + x_g_mid @ (blocks.B_g @ inp.u_g))
    if inp.f is not None:
        power += float(x_l_mid @ inp.f)
    return power


@dataclass(frozen=True)
class StepRecord:
    t: float
    H: float
    power: float
    residual: float


@dataclass
class IntegrationResult:
    state: PhState
    log: list = field(default_factory=list)

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.H for r in self.log])


def integrate(
    blocks: SystemBlocks,
    initial: PhState,
    inputs: InputFn,
    grid: TimeGrid,
    observers: Sequence[Callable] = (),
    op=None,
) -> IntegrationResult:
    """March ``grid.n_steps`` midpoint steps; observers get ``(state, record)`` after each."""
    op = op or prepare(blocks, grid.dt)
    state = initial.copy()
    H = hamiltonian(blocks, state.x_l)
    result = IntegrationResult(state, [StepRecord(state.t, H, 0.0, 0.0)])
    for n in range(grid.n_steps):
        t_mid = grid.time(n) + 0.5 * grid.dt
        inp = inputs(t_mid)
        if isinstance(op, MonolithicOperator):
            new = op.step(blocks, state, inp)
        else:
            new = step(op, blocks, state, inp)
        new.t = grid.time(n + 1)
        H_new = hamiltonian(blocks, new.x_l)
        power = supplied_power(blocks, 0.5 * (state.x_l + new.x_l), 0.5 * (state.x_g + new.x_g), inp)
        rec = StepRecord(new.t, H_new, power, (H_new - H) / grid.dt - power)
        result.log.append(rec)
        for obs in observers:
            obs(new, rec)
        state, H = new, H_new
    result.state = state
    return result


def consistent_initial(
    blocks: SystemBlocks, x_state: np.ndarray, inputs: InputFn, t0: float = 0.0, h: float = 1e-6
) -> PhState:
    """Complete the states with multipliers and traces satisfying the algebraic rows.

    ``x_state`` is a full ``x_l`` vector whose multiplier block is ignored.  The
    trace ``x_g`` is fitted to the state traces; the multipliers follow from the
    once-differentiated trace constraint, with input rates by central differences.
    """
    n = blocks.n_local
    lam = np.zeros(n, dtype=bool)
    lam[blocks.index["lambda"]] = True
    st = ~lam
    x = np.asarray(x_state, dtype=float).copy()
    x[lam] = 0.0
    inp = inputs(t0)
    du_l = (inputs(t0 + h).u_l - inputs(t0 - h).u_l) / (2 * h)

    J = blocks.J_l.tocsr()
    C_L = blocks.C_lg.tocsr()[lam]
    rhs = -(J[lam][:, st] @ x[st]) - blocks.B_l.tocsr()[lam] @ inp.u_l
    if C_L.shape[1]:
        x_g = spla.spsolve((C_L.T @ C_L).tocsc(), C_L.T @ rhs)
    else:
        x_g = np.zeros(0)

    E_ss = blocks.E_l.tocsr()[st][:, st]
    J_sL = J[st][:, lam]
    J_Ls = J[lam][:, st]
    ns, nl, ng = E_ss.shape[0], int(lam.sum()), C_L.shape[1]
    f = inp.f[st] if inp.f is not None else np.zeros(ns)
    K = sp.bmat(
        [
            [E_ss, -J_sL, None],
            [J_Ls, None, C_L],
            [None, C_L.T, sp.csr_matrix((ng, ng))],
        ],
        format="csc",
    )
    b = np.concatenate(
        [J[st][:, st] @ x[st] + f, -(blocks.B_l.tocsr()[lam] @ du_l), blocks.B_g @ inp.u_g]
    )
    sol = spla.splu(K).solve(b)
    x[lam] = sol[ns : ns + nl]
    return PhState(x, np.asarray(x_g, dtype=float), t0, 0)


@dataclass(eq=False)
class MixedStepper:
    """Midpoint stepping of the non-hybrid reference with essential DOFs
    advanced so that their midpoint average matches the input."""

    system: MixedSystem
    dt: float
    lu: object = None
    rhs: sp.csr_matrix = None

    def __post_init__(self):
        s = self.system
        self.lu = spla.splu((s.E - 0.5 * self.dt * s.J).tocsc())
        self.rhs = (s.E + 0.5 * self.dt * s.J).tocsr()

    def step(self, y: np.ndarray, e: np.ndarray, inp: StepInputs, load: np.ndarray | None):
        s, dt = self.system, self.dt
        e_new = 2.0 * inp.u_l - e
        b = self.rhs @ y - s.E_e @ (e_new - e) + dt * (s.J_e @ inp.u_l) + dt * (s.B @ inp.u_g)
        if load is not None:
            b = b + dt * load
        y_new = self.lu.solve(b)
        _check(y_new, -1)
        return y_new, e_new
