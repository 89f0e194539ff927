import numpy as np
import pytest

from relaxhdg import assembly, flows
from relaxhdg.analysis import check_reconstruction
from relaxhdg.basis import triangle_rule
from relaxhdg.errors import MapMismatch
from relaxhdg.mesh import generate_unit_square
from relaxhdg.reconstruction import (build_reconstruction, cached_reconstruction,
                                     reconstruct, reconstruct_composite)
from relaxhdg.solvers import normal_jump_max, solve_stokes
from relaxhdg.spaces import FeFunction, HDGSpace, build_dofmap, element_values


@pytest.fixture(scope="module")
def mesh():
    return generate_unit_square(3)


def test_conforming_input_is_fixed(mesh, rng):
    dm = build_dofmap(mesh, "W_relaxed", 3)
    op = build_reconstruction(dm)
    u = op.E @ rng.standard_normal(op.target.ndofs)
    assert np.abs(op.ER @ u - u).max() < 1e-13


def test_idempotent_and_linear(mesh, rng):
    dm = build_dofmap(mesh, "W_relaxed", 4)
    ER = cached_reconstruction(dm).ER
    u, v = rng.standard_normal((2, dm.ndofs))
    assert np.abs(ER @ (ER @ u) - ER @ u).max() < 1e-13
    lhs = ER @ (2.0 * u - 3.0 * v)
    assert np.abs(lhs - (2.0 * (ER @ u) - 3.0 * (ER @ v))).max() < 1e-12


@pytest.mark.parametrize("k", [2, 3, 5])
def test_weakly_incompressible_input_becomes_solenoidal(k, rng):
    space = HDGSpace.build(generate_unit_square(2), k)
    B = assembly.assemble_divergence(space).toarray()[:, :space.nW]
    u = rng.standard_normal(space.nW)
    u -= B.T @ np.linalg.lstsq(B @ B.T, B @ u, rcond=None)[0]
    u /= np.abs(element_values(FeFunction(space.W, u), triangle_rule(2 * k).points,
                               "gradient")).max()
    assert np.abs(B @ u).max() < 1e-12
    ru = reconstruct(FeFunction(space.W, u))
    d = element_values(ru, triangle_rule(2 * k + 2).points, "divergence")
    assert np.abs(d).max() < 1e-11
    assert normal_jump_max(space, cached_reconstruction(space.W).ER @ u) < 1e-11


def test_stokes_solution_reconstruction_is_solenoidal():
    flow = flows.manufactured()
    sol = solve_stokes(generate_unit_square(3), 3, 1.0, flow.forcing)
    rw, _ = sol.reconstructed()
    d = element_values(rw, triangle_rule(8).points, "divergence")
    assert np.abs(d).max() < 1e-10
    assert normal_jump_max(sol.space, rw.coefficients) < 1e-10


@pytest.mark.parametrize("k", [1, 4, 7])
def test_moment_properties(k):
    r = check_reconstruction(generate_unit_square(2, True), k, samples=30, seed=k)
    assert r.normal_jump < 1e-10
    assert r.facet_moment_defect < 1e-12
    assert r.interior_moment_defect < 1e-12
    assert r.max_ratio < 10.0
    assert r.violations() == []


def test_composite_zero(mesh):
    space = HDGSpace.build(mesh, 2)
    w, f = reconstruct_composite(FeFunction.zeros(space.W), FeFunction.zeros(space.F))
    assert not w.coefficients.any() and not f.coefficients.any()
    assert w.dofmap.kind == "W_conf"


def test_composite_keeps_facet_part(mesh, rng):
    space = HDGSpace.build(mesh, 2)
    op = cached_reconstruction(space.W)
    P = op.composite_relaxed(space.nF)
    v = rng.standard_normal(space.n_velocity)
    assert np.array_equal((P @ v)[space.nW:], v[space.nW:])


def test_wrong_source_kind(mesh):
    with pytest.raises(MapMismatch):
        build_reconstruction(build_dofmap(mesh, "W_conf", 2))
    with pytest.raises(MapMismatch):
        reconstruct(FeFunction.zeros(build_dofmap(mesh, "W_conf", 2)))


def test_completion_minimises_local_l2(mesh, rng):
    # perturbing the complement DOFs of R u can only increase ||R u - u||
    k = 3
    dm = build_dofmap(mesh, "W_relaxed", k)
    op = cached_reconstruction(dm)
    u = rng.standard_normal(dm.ndofs)
    space = HDGSpace.build(mesh, k)
    M = assembly.assemble_mass(space)[:dm.ndofs, :dm.ndofs]
    base = op.ER @ u - u
    e0 = base @ (M @ base)
    comp = dm.interior_dofs[:, -(k - 1):].ravel()
    for _ in range(5):
        d = np.zeros(dm.ndofs)
        d[comp] = 1e-3 * rng.standard_normal(len(comp))
        assert (base + d) @ (M @ (base + d)) >= e0 - 1e-14
