import numpy as np
import pytest

from relaxhdg.basis import (REF_VERTICES, build_bdm_element, dim_p, dubiner_basis,
                            facet_points, facet_scaled_normal, gauss_rule,
                            legendre_facet_basis, triangle_rule)


def test_gauss_midpoint():
    r = gauss_rule(1)
    assert r.points[0] == pytest.approx(0.5)
    assert r.weights[0] == pytest.approx(1.0)


@pytest.mark.parametrize("n,p", [(2, 3), (5, 9)])
def test_gauss_moments(n, p):
    r = gauss_rule(n)
    assert np.sum(r.weights * r.points**p) == pytest.approx(1.0 / (p + 1), abs=1e-15)


def test_gauss_rejects_zero():
    with pytest.raises(ValueError):
        gauss_rule(0)


def test_triangle_centroid_rule():
    r = triangle_rule(1)
    assert np.sum(r.weights * r.points.sum(axis=1)) == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_triangle_quartic_moment():
    r = triangle_rule(4)
    x, y = r.points.T
    assert np.sum(r.weights * x**2 * y**2) == pytest.approx(1.0 / 180.0, abs=1e-14)


@pytest.mark.parametrize("deg", range(0, 21, 3))
def test_triangle_weights_sum(deg):
    assert triangle_rule(deg).weights.sum() == pytest.approx(0.5, abs=1e-14)


def test_dubiner_constant():
    v = dubiner_basis(0).values(triangle_rule(2).points)
    assert v.shape[1] == 1
    assert np.allclose(v, np.sqrt(2.0))


@pytest.mark.parametrize("k", [2, 5, 9])
def test_dubiner_orthonormal(k):
    r = triangle_rule(2 * k + 2)
    v = dubiner_basis(k).values(r.points)
    assert v.shape[1] == dim_p(k)
    G = v.T @ (r.weights[:, None] * v)
    assert np.abs(G - np.eye(dim_p(k))).max() < 1e-12


def test_dubiner_gradient_matches_finite_difference(rng):
    b = dubiner_basis(4)
    p = rng.uniform(0.1, 0.4, (5, 2))
    _, g = b.tabulate(p)
    eps = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        fd = (b.values(p + e) - b.values(p - e)) / (2 * eps)
        assert np.abs(fd - g[:, :, d]).max() < 1e-6


def test_legendre_first_modes():
    t = np.linspace(0, 1, 7)
    v = legendre_facet_basis(1).values(t)
    assert np.allclose(v[:, 0], 1.0)
    assert np.allclose(v[:, 1], np.sqrt(3.0) * (2 * t - 1))


@pytest.mark.parametrize("k", [0, 3, 8])
def test_legendre_orthonormal(k):
    r = gauss_rule(k + 1)
    v = legendre_facet_basis(k).values(r.points)
    assert np.abs(v.T @ (r.weights[:, None] * v) - np.eye(k + 1)).max() < 1e-13


def test_bdm_dof_counts():
    e1 = build_bdm_element(1)
    assert e1.ndofs == 6 and e1.n_interior_moments == 0 and e1.n_complement == 0
    e2 = build_bdm_element(2)
    assert e2.ndofs == 12
    assert e2.n_facet_dofs == 9 and e2.n_interior_moments == 2 and e2.n_complement == 1


def _apply_dofs(el, f):
    k = el.order
    fr, vr = gauss_rule(k + 1), triangle_rule(2 * k)
    fv = np.stack([f(facet_points(i, fr.points)) for i in range(3)])
    return el.dof_functionals(vr, f(vr.points), fr, fv)


@pytest.mark.parametrize("k", [1, 2, 4, 7, 10])
def test_bdm_dual_basis_reproduces_polynomials(k, rng):
    el = build_bdm_element(k)
    cx = rng.standard_normal(dim_p(k))
    cy = rng.standard_normal(dim_p(k))
    basis = dubiner_basis(k)

    def f(p):
        v = basis.values(p)
        return np.stack([v @ cx, v @ cy], axis=-1)

    dofs = _apply_dofs(el, f)
    p = rng.uniform(0, 0.5, (20, 2))
    vals = np.einsum("qnc,n->qc", el.tabulate(p)[0], dofs)
    assert np.abs(vals - f(p)).max() < 1e-9 * max(1.0, np.abs(f(p)).max())


def test_bdm_duality_identity():
    el = build_bdm_element(3)
    fr, vr = gauss_rule(4), triangle_rule(6)
    fv = np.stack([np.moveaxis(el.tabulate(facet_points(i, fr.points))[0], 1, 0)
                   for i in range(3)], axis=1)
    vv = np.moveaxis(el.tabulate(vr.points)[0], 1, 0)
    D = el.dof_functionals(vr, vv, fr, fv)
    assert np.abs(D - np.eye(el.ndofs)).max() < 1e-11


def test_top_moment_vanishes_for_lower_degree_normal_trace():
    # field whose normal trace on facet 0 is linear while k = 3
    el = build_bdm_element(3)
    dofs = _apply_dofs(el, lambda p: np.stack([p[..., 0] + p[..., 1], 0 * p[..., 0]], axis=-1))
    assert abs(dofs[el.facet_dof(0, 3)]) < 1e-12


def test_facet_geometry():
    for i in range(3):
        pts = facet_points(i, [0.0, 1.0])
        assert np.allclose(pts[0], REF_VERTICES[(i + 1) % 3])
        n = facet_scaled_normal(i)
        centroid = REF_VERTICES.mean(axis=0)
        assert n @ (pts.mean(axis=0) - centroid) > 0
