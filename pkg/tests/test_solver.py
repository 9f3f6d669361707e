import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from phhybrid.problems import make_setup
from phhybrid.solver import (
    MonolithicOperator,
    PhState,
    SolverError,
    StepInputs,
    TimeGrid,
    _batched_inverse,
    integrate,
    monolithic_solve,
    prepare,
    step,
    zero_inputs,
)

FORMS = [("wave", "primal"), ("wave", "dual"), ("maxwell", "primal"), ("maxwell", "dual")]


@pytest.fixture(scope="module", params=FORMS, ids=lambda f: "-".join(f))
def setup(request):
    return make_setup(*request.param, n=1)


def zero_state(blocks):
    return PhState(np.zeros(blocks.n_local), np.zeros(blocks.n_global))


def test_time_grid():
    g = TimeGrid.until(0.01, 1.0)
    assert g.n_steps == 100 and np.isclose(g.t_end, 1.0)
    with pytest.raises(ValueError):
        TimeGrid.until(0.3, 1.0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(0.1, -1)


def test_zero_stays_zero(setup):
    b = setup.blocks
    res = integrate(b, zero_state(b), zero_inputs(b), TimeGrid(0.1, 5))
    assert not res.state.x_l.any() and not res.state.x_g.any()
    assert np.all(res.energies == 0)


def test_condensed_matches_monolithic(setup):
    b = setup.blocks
    st0 = setup.initial_state()
    inp = setup.inputs(0.05)
    a = step(prepare(b, 0.1), b, st0, inp)
    m = monolithic_solve(b, st0, inp, 0.1)
    scale = max(np.abs(m.x_l).max(), 1.0)
    assert np.abs(a.x_l - m.x_l).max() <= 1e-11 * scale
    assert np.abs(a.x_g - m.x_g).max() <= 1e-11 * max(np.abs(m.x_g).max(), 1.0)
    assert a.t == pytest.approx(st0.t + 0.1) and a.step == 1


def test_step_satisfies_equations(setup):
    # midpoint rule: E (x1-x0)/dt = J xm + C gm + B_l u_l + f, 0 = -C^T xm + B_g u_g
    b, dt = setup.blocks, 0.05
    x0 = setup.initial_state()
    inp = setup.inputs(dt / 2)
    x1 = step(prepare(b, dt), b, x0, inp)
    xm, gm = 0.5 * (x0.x_l + x1.x_l), 0.5 * (x0.x_g + x1.x_g)
    f = inp.f if inp.f is not None else 0.0
    r1 = b.E_l @ (x1.x_l - x0.x_l) / dt - (b.J_l @ xm + b.C_lg @ gm + b.B_l @ inp.u_l + f)
    r2 = -b.C_lg.T @ xm + b.B_g @ inp.u_g
    assert np.abs(r1).max() < 1e-10 and np.abs(r2).max() < 1e-10


def test_tiny_step_prepares(setup):
    op = prepare(setup.blocks, 1e-6)
    assert op.A_inv.shape[0] == setup.mesh.n_cells
    assert np.all(np.isfinite(op.A_inv))


def test_zero_steps(setup):
    b = setup.blocks
    st0 = setup.initial_state()
    res = integrate(b, st0, setup.inputs, TimeGrid(0.1, 0))
    assert np.array_equal(res.state.x_l, st0.x_l)
    assert len(res.log) == 1


def test_observers_and_log(setup):
    b = setup.blocks
    seen = []
    res = integrate(b, setup.initial_state(), setup.inputs, TimeGrid(0.05, 4), [lambda s, r: seen.append(s.t)])
    assert len(seen) == 4 and len(res.log) == 5
    assert np.allclose(seen, [0.05, 0.1, 0.15, 0.2])
    assert [r.t for r in res.log][0] == 0.0


def test_reuse_is_deterministic(setup):
    b = setup.blocks
    op = prepare(b, 0.05)
    r1 = integrate(b, setup.initial_state(), setup.inputs, TimeGrid(0.05, 3), op=op)
    r2 = integrate(b, setup.initial_state(), setup.inputs, TimeGrid(0.05, 3), op=op)
    assert np.array_equal(r1.state.x_l, r2.state.x_l)
    r3 = integrate(b, setup.initial_state(), setup.inputs, TimeGrid(0.05, 3), op=prepare(b, 0.05, threads=2))
    assert np.allclose(r1.state.x_l, r3.state.x_l, rtol=0, atol=1e-13)


def test_monolithic_operator_in_integrate(setup):
    b = setup.blocks
    op = MonolithicOperator.prepare(b, 0.05)
    r1 = integrate(b, setup.initial_state(), setup.inputs, TimeGrid(0.05, 3), op=op)
    r2 = integrate(b, setup.initial_state(), setup.inputs, TimeGrid(0.05, 3))
    assert np.allclose(r1.state.x_l, r2.state.x_l, atol=1e-11)


def test_linear_profile_power_balance():
    s = make_setup("wave", "dual", 1, profile_name="linear")
    res = integrate(s.blocks, s.initial_state(), s.inputs, TimeGrid(0.1, 10))
    assert max(abs(r.residual) for r in res.log) < 1e-10


def test_singular_block_reported():
    blocks = np.stack([np.eye(3), np.zeros((3, 3))])
    with pytest.raises(SolverError) as err:
        _batched_inverse(blocks)
    assert err.value.cell == 1


def test_non_finite_input_raises(setup):
    b = setup.blocks
    bad = StepInputs(np.full(b.B_l.shape[1], np.nan), np.zeros(b.B_g.shape[1]))
    if b.B_l.shape[1] == 0:
        bad = StepInputs(np.zeros(0), np.full(b.B_g.shape[1], np.nan))
    with pytest.raises(SolverError):
        step(prepare(b, 0.1), b, zero_state(b), bad)


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-3, 1.0), st.integers(0, 2**31 - 1))
def test_homogeneous_energy_conserved(dt, seed):
    s = make_setup("maxwell", "dual", 1, zero_input=True)
    b = s.blocks
    rng = np.random.default_rng(seed)
    x = np.zeros(b.n_local)
    n_state = b.index["lambda"].start
    x[:n_state] = rng.normal(size=n_state)
    from phhybrid.solver import consistent_initial

    st0 = consistent_initial(b, x, s.inputs)
    res = integrate(b, st0, s.inputs, TimeGrid(dt, 5))
    H = res.energies
    assert np.all(np.abs(H - H[0]) <= 1e-12 * H[0])


def test_block_coupling_detected():
    from phhybrid.solver import _cell_blocks

    mat = sp.csr_matrix(np.ones((4, 4)))
    with pytest.raises(SolverError):
        _cell_blocks(mat, np.arange(4).reshape(2, 2))
