import numpy as np
import pytest

from relaxhdg import flows
from relaxhdg.basis import triangle_rule


def _divergence(flow, pts):
    g = flow.velocity_gradient(pts)
    return g[..., 0, 0] + g[..., 1, 1]


def test_kovasznay_constant():
    assert flows.kovasznay_lambda(1 / 40) == pytest.approx(-0.9637405441957654, rel=1e-12)


def test_kovasznay_properties(rng):
    f = flows.kovasznay()
    x0, x1, y0, y1 = flows.KOVASZNAY_DOMAIN
    p = np.column_stack([rng.uniform(x0, x1, 50), rng.uniform(y0, y1, 50)])
    assert np.abs(_divergence(f, p)).max() < 1e-12
    # f = -(u . grad) u
    u, g = f.velocity(p), f.velocity_gradient(p)
    assert np.allclose(f.forcing(p), -np.einsum("qb,qab->qa", u, g), atol=1e-12)


def test_kovasznay_pressure_mean_zero():
    from numpy.polynomial.legendre import leggauss
    f = flows.kovasznay()
    x0, x1, y0, y1 = flows.KOVASZNAY_DOMAIN
    t, w = leggauss(30)
    x = 0.5 * (x1 - x0) * (t + 1) + x0
    y = 0.5 * (y1 - y0) * (t + 1) + y0
    X, Y = np.meshgrid(x, y)
    W = np.outer(w, w) * 0.25 * (x1 - x0) * (y1 - y0)
    p = f.pressure(np.stack([X, Y], axis=-1))
    assert abs(np.sum(W * p)) < 1e-12


def test_manufactured_boundary_and_mean():
    f = flows.manufactured()
    t = np.linspace(0, 1, 11)
    edges = np.concatenate([np.column_stack([t, 0 * t]), np.column_stack([t, 1 + 0 * t]),
                            np.column_stack([0 * t, t]), np.column_stack([1 + 0 * t, t])])
    assert np.abs(f.velocity(edges)).max() < 1e-14
    r = triangle_rule(20)
    # two reference triangles tile the unit square
    pts = np.concatenate([r.points, 1.0 - r.points])
    w = np.concatenate([r.weights, r.weights])
    assert abs(np.sum(w * f.pressure(pts))) < 1e-13
    assert np.abs(_divergence(f, pts)).max() < 1e-12


def test_gradient_forcing_mean():
    f = flows.gradient_forcing()
    r = triangle_rule(10)
    pts = np.concatenate([r.points, 1.0 - r.points])
    w = np.concatenate([r.weights, r.weights])
    assert abs(np.sum(w * f.pressure(pts))) < 1e-14
    assert np.abs(f.velocity(pts)).max() == 0.0


@pytest.mark.parametrize("k", [1, 3, 5])
def test_polynomial_flow_solenoidal(k, rng):
    f = flows.polynomial_flow(k, seed=k)
    p = rng.uniform(-1, 1, (20, 2))
    assert np.abs(_divergence(f, p)).max() < 1e-12


def test_lattice_decay():
    assert flows.lattice_decay(0.0) == 1.0
    assert flows.lattice_decay(0.1, 1e-6) == pytest.approx(np.exp(-8 * np.pi**2 * 1e-7))


def test_channel_inflow_profile():
    y = np.linspace(0, 0.41, 5)
    u = flows.channel_inflow(np.column_stack([0 * y, y]))
    assert u[0, 0] == 0.0 and u[-1, 0] == pytest.approx(0.0, abs=1e-15)
    assert u[2, 0] == pytest.approx(1.5)
    assert np.all(flows.channel_inflow(np.array([[1.0, 0.2]])) == 0.0)


def test_kovasznay_mesh_size():
    m = flows.kovasznay_mesh(20)
    assert 16 <= m.n_elements <= 24
    x0, x1, y0, y1 = flows.KOVASZNAY_DOMAIN
    assert m.areas.sum() == pytest.approx((x1 - x0) * (y1 - y0))
