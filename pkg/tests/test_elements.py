import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phhybrid import elements as el
from phhybrid.mesh import LOCAL_EDGES, build_structured_box

REF = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])


def random_cell(seed):
    rng = np.random.default_rng(seed)
    while True:
        x = rng.normal(size=(4, 3))
        if abs(np.linalg.det(x[1:] - x[0])) > 0.1:
            return x


def bary_moment(powers):
    # int over reference tet of prod lambda_i^a_i = 6 V prod a_i! / (sum a + 3)!
    num = np.prod([math.factorial(a) for a in powers])
    return 6 * (1 / 6) * num / math.factorial(sum(powers) + 3)


@pytest.mark.parametrize("powers", [p for p in product(range(5), repeat=4) if sum(p) <= 4])
def test_tet_quadrature_exact(powers):
    q = el.tet_quadrature(4)
    val = np.sum(q.weights * np.prod(q.points ** np.array(powers), axis=1))
    assert abs(val - bary_moment(powers)) <= 1e-14 * max(1.0, bary_moment(powers))


def test_quadrature_weights():
    assert np.isclose(el.tet_quadrature(4).weights.sum(), 1 / 6, atol=1e-15)
    assert np.isclose(el.triangle_quadrature(4).weights.sum(), 1 / 2, atol=1e-15)
    assert el.tet_quadrature(4).order >= 4


@pytest.mark.parametrize("powers", [p for p in product(range(5), repeat=3) if sum(p) <= 4])
def test_triangle_quadrature_exact(powers):
    q = el.triangle_quadrature(4)
    val = np.sum(q.weights * np.prod(q.points ** np.array(powers), axis=1))
    exact = np.prod([math.factorial(a) for a in powers]) / math.factorial(sum(powers) + 2)
    assert abs(val - exact) <= 1e-14


@pytest.mark.parametrize("seed", range(3))
def test_p1_mass_entries(seed):
    x = random_cell(seed)
    m = el.local_mass(0, x)[0]
    v = abs(np.linalg.det(x[1:] - x[0])) / 6
    assert np.allclose(np.diag(m), v / 10, rtol=0, atol=1e-14 * max(v, 1))
    off = m[~np.eye(4, dtype=bool)]
    assert np.allclose(off, v / 20, rtol=0, atol=1e-14 * max(v, 1))


def test_volume_mass():
    m = el.local_mass(3, REF)[0]
    assert np.isclose(m[0, 0], 6.0)  # 1/V with integral DOFs


@pytest.mark.parametrize("k", [0, 1, 2, 3])
@pytest.mark.parametrize("seed", range(2))
def test_mass_spd(k, seed):
    m = el.local_mass(k, random_cell(seed), weight=2.5)[0]
    assert np.array_equal(m, m.T)
    assert np.linalg.eigvalsh(m).min() > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0))
def test_p1_mass_scales_with_volume(lam):
    assert np.allclose(el.local_mass(0, lam * REF), lam**3 * el.local_mass(0, REF), rtol=1e-12)


def test_incidence_cochain_property():
    out = np.array([1, -1, 1, -1])
    assert not (el.incidence(1) @ el.incidence(0)).any()
    assert not (el.incidence(2, out) @ el.incidence(1)).any()
    d0 = el.incidence(0)
    assert np.all(d0.sum(axis=1) == 0) and np.all(np.abs(d0).sum(axis=1) == 2)


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("seed", range(3))
def test_derivative_two_paths(k, seed):
    x = random_cell(seed)
    _, D = el.local_derivative(k, x)
    assert np.allclose(D, el.local_derivative_quadrature(k, x), atol=1e-12)


def test_derivative_rejects_top_degree():
    with pytest.raises(el.ElementError):
        el.local_derivative(3, REF)


@pytest.mark.parametrize("seed", range(3))
def test_dofs_are_dual(seed):
    geo = el.CellGeometry.of(random_cell(seed))
    x = geo.coords[0]
    g, w = np.polynomial.legendre.leggauss(3)
    s = (g + 1) / 2
    for e, (i, j) in enumerate(LOCAL_EDGES):
        bary = np.zeros((3, 4))
        bary[:, i], bary[:, j] = 1 - s, s
        circ = np.einsum("q,qkd,d->k", w / 2, el.basis(1, geo, bary)[0], x[j] - x[i])
        assert np.allclose(circ, np.eye(6)[e], atol=1e-13)
    for f in range(4):
        bary, wf = el.face_points(f)
        flux = np.einsum("q,qi->i", wf, el.trace_values(2, geo, f, bary)[0]) * 2 * geo.areas[0, f]
        assert np.allclose(flux, np.eye(4)[f], atol=1e-13)


def test_trace_is_identity():
    for k, n in [(0, 4), (1, 6), (2, 4)]:
        assert np.array_equal(el.local_trace(k), np.eye(n))
    with pytest.raises(el.ElementError):
        el.local_trace(3)


def test_facet_mass_p1_face():
    fm = el.local_facet_mass(0, REF, faces=[0])[0]
    area = np.sqrt(3) / 2
    sub = fm[np.ix_([1, 2, 3], [1, 2, 3])]
    assert np.allclose(np.diag(sub), area / 6)
    assert np.allclose(sub[~np.eye(3, dtype=bool)], area / 12)
    assert np.allclose(fm[0], 0) and np.allclose(fm[:, 0], 0)


def test_facet_mass_flux_face():
    fm = el.local_facet_mass(2, REF, faces=[3])[0]
    assert np.isclose(fm[3, 3], 1 / 0.5)  # 1/A with integral DOFs
    assert np.count_nonzero(np.abs(fm) > 1e-14) == 1


@pytest.mark.parametrize("k", [0, 1, 2])
def test_facet_mass_symmetric_psd(k):
    fm = el.local_facet_mass(k, random_cell(7))[0]
    assert np.array_equal(fm, fm.T)
    assert np.linalg.eigvalsh(fm).min() > 0
    assert np.allclose(el.local_facet_mass(k, REF, faces=[]), 0)


def test_pairing_flux_against_hat():
    geo = el.CellGeometry.of(REF)
    psi = el.facet_pairing(2, 0, geo, np.array([3]))[0]
    # face 3 lies in z=0, its canonical normal +z points inward; flux density 1/A
    # against hat integrals A/3 gives -1/3
    assert np.allclose(psi[3, :3], -1 / 3)
    assert np.allclose(psi[:3], 0) and np.isclose(psi[3, 3], 0)


def test_pairing_rejects_degrees():
    geo = el.CellGeometry.of(REF)
    with pytest.raises(el.ElementError):
        el.facet_pairing(1, 0, geo, np.array([0]))


def test_pairing_11_antisymmetric():
    geo = el.CellGeometry.of(random_cell(3))
    psi = el.facet_pairing(1, 1, geo, np.array([2]))[0]
    assert np.allclose(psi, -psi.T, atol=1e-14)


def test_mesh_cells_match_geometry():
    m = build_structured_box(2)
    geo = el.CellGeometry.of(m.vertices[m.cells])
    assert np.allclose(geo.volume, m.volumes)
    assert np.array_equal(geo.outward, m.outward)


def test_degenerate_cell_rejected():
    x = REF.copy()
    x[3] = [0.5, 0.5, 0]
    with pytest.raises(el.ElementError):
        el.local_mass(0, x)


def test_only_lowest_order():
    with pytest.raises(el.ElementError):
        el.n_dofs(1, s=2)


def test_pairing_11_analytic():
    # on z=0: ((phi_01 x phi_02) . e_z) = l0^2 + l0 l1 + l0 l2, integral A/3 with A=1/2
    geo = el.CellGeometry.of(REF)
    psi = el.facet_pairing(1, 1, geo, np.array([3]))[0]
    assert np.isclose(psi[0, 1], -1 / 6, atol=1e-15)
