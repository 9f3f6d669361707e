"""Acceptance suite: one PASS/FAIL line per criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also repeated in the terminal summary of any pytest run that includes this file.
"""

import time

import numpy as np
import pytest

from phhybrid import elements as el
from phhybrid.assembly import cell_geometry
from phhybrid.cli import run_conserve, run_equivalence
from phhybrid.diagnostics import dof_table, error_norms, facet_annihilator_projection, fit_rate, l2_difference
from phhybrid.mesh import GAMMA1_PREDICATES, build_structured_box, tag_boundary
from phhybrid.physystem import build_cell_phdaes, build_hybrid, formulation, interconnect
from phhybrid.problems import make_setup, wave_g
from phhybrid.solver import MonolithicOperator, TimeGrid, integrate, prepare

FORMS = [("wave", "primal"), ("wave", "dual"), ("maxwell", "primal"), ("maxwell", "dual")]
NS = (2, 4, 8)
LINES: list[str] = []


def report(number: int, ok: bool, text: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
    LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- shared runs


@pytest.fixture(scope="module")
def equivalence_runs():
    out = {}
    for problem, kind in FORMS:
        setup = make_setup(problem, kind, 2, "eigenmode")
        t0 = time.perf_counter()
        rows, result = run_equivalence(setup, 0.01, 1.0)
        out[(problem, kind)] = (rows, result, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def convergence_runs():
    out = {}
    grid = TimeGrid.until(1 / 200, 1.0)
    for problem, kind in FORMS:
        for n in NS:
            s = make_setup(problem, kind, n, "quadratic")
            res = integrate(s.blocks, s.initial_state(), s.inputs, grid, op=prepare(s.blocks, grid.dt))
            out[(problem, kind, n)] = (s, res.state, error_norms(s, res.state, grid.t_end))
    return out


# ---------------------------------------------------------------- criteria

SIZE_TABLES = {
    ("wave", "primal"): [(24, 18), (168, 120), (1248, 864), (9600, 6528), (75264, 50688)],
    ("wave", "dual"): [(44, 8), (315, 27), (2429, 125), (19161, 729)],
    ("maxwell", "primal"): [(43, 19), (290, 98), (2140, 604), (16472, 4184)],
    ("maxwell", "dual"): [(43, 19), (290, 98), (2140, 604), (16472, 4184)],
}


def test_criterion_1_dof_tables():
    t0 = time.perf_counter()
    bad = []
    for key, expected in SIZE_TABLES.items():
        ns = [1, 2, 4, 8, 16][: len(expected)]
        got = [(r.mixed, r.hybrid) for r in dof_table(*key, ns)]
        if got != expected:
            bad.append(f"{key}: {got}")
    dt = time.perf_counter() - t0
    report(1, not bad and dt < 1.0, f"size tables exact ({len(bad)} mismatches), {dt:.3f} s")


def test_criterion_2_equivalence(equivalence_runs):
    worst = {k: max(max(r[1], r[2]) for r in rows) for k, (rows, _, _) in equivalence_runs.items()}
    total = sum(t for *_, t in equivalence_runs.values())
    m = max(worst.values())
    detail = ", ".join(f"{p} {k} {v:.1e}" for (p, k), v in worst.items())
    report(2, m <= 1e-10 and total < 120, f"max relative mixed/hybrid difference {m:.2e} <= 1e-10 ({detail}); {total:.1f} s")


def test_criterion_3_power_balance(equivalence_runs):
    worst = 0.0
    for _, result, _ in equivalence_runs.values():
        worst = max(worst, max(abs(r.residual) / max(abs(r.H), 1.0) for r in result.log))
    drift = 0.0
    for problem, kind in FORMS:
        s = make_setup(problem, kind, 2, "eigenmode", zero_input=True)
        result, _ = run_conserve(s, 0.01, 1.0)
        H = result.energies
        drift = max(drift, abs(H[-1] - H[0]) / H[0])
    report(3, worst <= 1e-10 and drift <= 1e-11, f"scaled power residual {worst:.2e} <= 1e-10, zero-input drift {drift:.2e} <= 1e-11")


def test_criterion_4_condensation():
    s = make_setup("wave", "primal", 2, "eigenmode")
    grid = TimeGrid(0.01, 100)
    t0 = time.perf_counter()
    a, b = [], []
    ra = integrate(s.blocks, s.initial_state(), s.inputs, grid, [lambda st, r: a.append(st.x_l)])
    rb = integrate(s.blocks, s.initial_state(), s.inputs, grid, [lambda st, r: b.append(st.x_l)],
                   op=MonolithicOperator.prepare(s.blocks, grid.dt))
    rel = max(np.linalg.norm(x - y) / np.linalg.norm(y) for x, y in zip(a, b))
    rel_g = np.linalg.norm(ra.state.x_g - rb.state.x_g) / np.linalg.norm(rb.state.x_g)
    dt = time.perf_counter() - t0
    report(4, max(rel, rel_g) <= 1e-9 and dt < 60, f"condensed vs monolithic relative difference {max(rel, rel_g):.2e} <= 1e-9 over 100 steps")


def test_criterion_5_interconnection():
    m = build_structured_box(2)
    part = tag_boundary(m, GAMMA1_PREDICATES["lower"])
    worst = 0.0
    for problem, kind in FORMS:
        form = formulation(problem, kind)
        direct = build_hybrid(form, m, part).blocks()
        coupled = interconnect(build_cell_phdaes(form, m), m, part).blocks()
        for name, mat in direct.items():
            diff = mat - coupled[name]
            if mat.shape != coupled[name].shape:
                worst = np.inf
            elif diff.nnz:
                worst = max(worst, abs(diff).max())
    report(5, worst <= 1e-12, f"interconnected vs direct blocks max abs difference {worst:.1e} <= 1e-12")


def test_criterion_6_solenoidal():
    worst = 0.0
    for kind in ("primal", "dual"):
        s = make_setup("maxwell", kind, 2, "eigenmode")
        _, divs = run_conserve(s, 0.01, 1.0)
        worst = max(worst, np.max(np.abs(divs - divs[0])))
    report(6, worst <= 1e-10, f"max |div(t) - div(0)| over both 2-form fields {worst:.2e} <= 1e-10")


RATE_CHECKS = [
    ("wave", "dual", "alpha", "H1"),
    ("wave", "dual", "beta", "Hcurl"),
    ("wave", "primal", "beta", "Hdiv"),
    ("maxwell", "dual", "alpha", "Hcurl"),
    ("maxwell", "primal", "alpha", "L2"),
    ("maxwell", "primal", "beta", "L2"),
    ("maxwell", "dual", "alpha", "L2"),
    ("maxwell", "dual", "beta", "L2"),
]


def test_criterion_7_convergence(convergence_runs):
    rates, ok = [], True
    for problem, kind, var, norm in RATE_CHECKS:
        reps = [convergence_runs[(problem, kind, n)][2] for n in NS]
        r = fit_rate([x.h for x in reps], [x[(var, norm)] for x in reps])
        rates.append(f"{problem} {kind} {var} {norm} {r:.2f}")
        ok &= r >= 0.85
    facet = []
    for problem, kind in FORMS:
        e = [convergence_runs[(problem, kind, n)][2][("lambda", "facet")] for n in NS]
        decreasing = all(b < a for a, b in zip(e, e[1:]))
        ok &= decreasing
        facet.append(f"{problem} {kind} {fit_rate([1 / n for n in NS], e):.2f}")
    report(7, ok, "rates >= 0.85: " + "; ".join(rates) + " | facet traces decreasing, observed rates: " + "; ".join(facet))


def test_criterion_8_dual_field_difference(convergence_runs):
    ok, parts = True, []
    for problem in ("wave", "maxwell"):
        for name in ("alpha", "beta"):
            d = []
            for n in NS:
                sp_, xp, _ = convergence_runs[(problem, "primal", n)]
                sd, xd, _ = convergence_runs[(problem, "dual", n)]
                fp, fd = sp_.form, sd.form
                kp = fp.ka if name == "alpha" else fp.kb
                kd = fd.ka if name == "alpha" else fd.kb
                d.append(l2_difference(
                    sp_.mesh,
                    (kp, fp.orientation, sp_.blocks.part(xp.x_l, name)),
                    (kd, fd.orientation, sd.blocks.part(xd.x_l, name)),
                ))
            ok &= all(b < a for a, b in zip(d, d[1:]))
            parts.append(f"{problem} {name} " + " > ".join(f"{v:.2e}" for v in d))
    report(8, ok, "primal/dual differences strictly decreasing: " + "; ".join(parts))


def test_criterion_9_unit_suite():
    t0 = time.perf_counter()
    checks = {}
    out = np.array([1, -1, 1, -1])
    checks["d o d = 0"] = not (el.incidence(1) @ el.incidence(0)).any() and not (el.incidence(2, out) @ el.incidence(1)).any()
    ref = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    m0 = el.local_mass(0, ref)[0]
    v = 1 / 6
    checks["M0 entries"] = bool(np.all(np.abs(np.diag(m0) - v / 10) <= 1e-14)
                                and np.all(np.abs(m0[~np.eye(4, dtype=bool)] - v / 20) <= 1e-14))
    mesh = build_structured_box(2)
    part = tag_boundary(mesh, GAMMA1_PREDICATES["lower"])
    skew = sym = True
    for problem, kind in FORMS:
        b = build_hybrid(formulation(problem, kind), mesh, part)
        skew &= (b.J_l + b.J_l.T).nnz == 0 or abs(b.J_l + b.J_l.T).max() == 0
        sym &= (b.E_l - b.E_l.T).nnz == 0 or abs(b.E_l - b.E_l.T).max() == 0
    checks["J_l skew"], checks["E_l symmetric"] = skew, sym
    geo = cell_geometry(mesh)
    idem = 0.0
    for k, ori in ((0, "inner"), (1, "inner"), (2, "outer")):
        def omega(x, n, k=k):
            if k == 1:
                return np.cross(np.stack([x[..., 1], np.sin(x[..., 2]), x[..., 0] ** 2], -1), n)
            return wave_g(x) + x[..., 0] * x[..., 1]

        p1 = facet_annihilator_projection(omega, k, mesh, ori, geo)
        p2 = facet_annihilator_projection(p1, k, mesh, ori, geo)
        idem = max(idem, np.abs(p1 - p2).max() / max(1.0, np.abs(p1).max()))
    checks["facet projection idempotent"] = idem <= 1e-12
    dt = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    report(9, not failed and dt < 30, f"{len(checks) - len(failed)}/{len(checks)} unit checks (idempotence {idem:.1e}), {dt:.1f} s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))
