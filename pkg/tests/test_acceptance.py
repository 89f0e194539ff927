"""End-to-end acceptance checks.

Each test records one PASS/FAIL line (printed in the pytest terminal
summary, or directly when the module is run as a script) and then asserts.
"""
import math

import numpy as np
import pytest

from relaxhdg import analysis, assembly, flows
from relaxhdg.mesh import build_mesh, generate_unit_square, parse_mesh_spec
from relaxhdg.solvers import (ImexIntegrator, divergence_max, initial_state, normal_jump_max,
                              run_unsteady, solve_stokes)
from relaxhdg.spaces import HDGSpace, evaluate

RESULTS = []


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------------------
# 1-2: Kovasznay k-sweep

KOV_ORDERS = list(range(2, 10))


@pytest.fixture(scope="module")
def kovasznay_errors():
    flow = flows.kovasznay()
    mesh = flows.kovasznay_mesh(20)
    out = {}
    for variant in ("B", "PR"):
        for k in KOV_ORDERS:
            sol = solve_stokes(mesh, k, flow.nu, flow.forcing, flow.velocity, variant)
            out[variant, k] = (analysis.solution_errors(flow, sol).h1_u,
                               analysis.solution_errors(flow, sol, reconstructed=True).h1_u)
    return mesh, out


def test_kovasznay_order_convergence(kovasznay_errors):
    mesh, errs = kovasznay_errors
    e = [errs["B", k][0] for k in KOV_ORDERS]
    monotone = all(b < a for a, b in zip(e, e[1:]))
    # reduction from order k to k + 1, for k >= 4
    factors = {k: errs["B", k + 1][0] / errs["B", k][0] for k in KOV_ORDERS[:-1] if k >= 4}
    e6 = errs["B", 6][0]
    ok = monotone and max(factors.values()) <= 0.3 and 1e-3 <= e6 <= 5e-2
    fac = ", ".join(f"{k}->{k + 1}:{v:.3f}" for k, v in factors.items())
    pre = errs["B", 4][0] / errs["B", 3][0]
    report(1, ok, f"{mesh.n_elements} elements, monotone={monotone}, factors {{{fac}}} "
                  f"(3->4: {pre:.3f}), err(k=6)={e6:.3e}")
    assert ok


def test_kovasznay_variant_closeness(kovasznay_errors):
    _, errs = kovasznay_errors
    d_var = max(abs(errs["PR", k][0] - errs["B", k][0]) / errs["B", k][0] for k in KOV_ORDERS)
    d_rec = max(abs(errs[v, k][1] - errs[v, k][0]) / errs[v, k][0]
                for v in ("B", "PR") for k in KOV_ORDERS)
    ok = d_var <= 0.15 and d_rec <= 0.15
    report(2, ok, f"max rel diff B vs PR {d_var:.3f}, pre vs post reconstruction {d_rec:.3f} "
                  f"(bound 0.15)")
    assert ok


# ---------------------------------------------------------------------------
# 3: gradient forcing

def test_gradient_forcing_robustness():
    flow = flows.gradient_forcing(1e-3)
    mesh = generate_unit_square(4)
    norms = {}
    for variant in ("B", "PR"):
        sol = solve_stokes(mesh, 3, flow.nu, flow.forcing, variant=variant)
        norms[variant] = math.sqrt(2.0 * analysis.kinetic_energy(sol.space, sol.velocity))
    ok = norms["PR"] <= 1e-4 * norms["B"]
    report(3, ok, f"||u_PR|| = {norms['PR']:.3e}, ||u_B|| = {norms['B']:.3e}, "
                  f"ratio {norms['PR'] / norms['B']:.2e} (bound 1e-4)")
    assert ok


# ---------------------------------------------------------------------------
# 4: reconstruction properties

def test_reconstruction_properties():
    mesh = parse_mesh_spec("square:3")
    checks = [analysis.check_reconstruction(mesh, k, samples=200, seed=k) for k in range(1, 9)]
    bad = [f"k={c.k}:{v}" for c in checks for v in c.violations()]
    ratios = [c.max_ratio for c in checks]
    spread = max(ratios) / min(ratios)
    ok = not bad and spread <= 2.0
    jump = max(c.normal_jump for c in checks)
    mom = max(max(c.facet_moment_defect, c.interior_moment_defect) for c in checks)
    report(4, ok, f"jump {jump:.1e}, moment defect {mom:.1e}, ratios "
                  f"[{min(ratios):.3f}, {max(ratios):.3f}], spread {spread:.3f}, "
                  f"violations {bad or 'none'}")
    assert ok


# ---------------------------------------------------------------------------
# 5: exact incompressibility after reconstruction

def test_reconstructed_solution_divergence_free():
    flow = flows.manufactured()
    mesh = generate_unit_square(3)
    div, jump = [], []
    for k in range(1, 7):
        sol = solve_stokes(mesh, k, flow.nu, flow.forcing, flow.velocity, "PR")
        w, _ = sol.reconstructed()
        div.append(divergence_max(sol.space, w.coefficients))
        jump.append(normal_jump_max(sol.space, w.coefficients))
    ok = max(div) <= 1e-10 and max(jump) <= 1e-10
    report(5, ok, f"k=1..6 max |div u| {max(div):.2e}, max normal jump {max(jump):.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 6: inf-sup and coercivity constants

def test_infsup_and_coercivity():
    mesh = parse_mesh_spec("square:4")
    reps = {k: analysis.estimate_infsup(mesh, k) for k in range(1, 9)}
    lbb = [reps[k].c_lbb for k in range(1, 7)]
    coer = {k: r.c_co for k, r in reps.items()}
    lbb_ok = max(lbb) / min(lbb) <= 2.0 and min(lbb) > 0.05
    co_ok = all(c > 0 for c in coer.values())
    ok = lbb_ok and co_ok
    report(6, ok, f"{mesh.n_elements} elements, c_LBB k=1..6 "
                  f"[{', '.join(f'{c:.3f}' for c in lbb)}] ratio {max(lbb) / min(lbb):.3f}; "
                  f"c_co(lambda=4) k=1..8 [{', '.join(f'{c:.3f}' for c in coer.values())}]")
    assert ok


# ---------------------------------------------------------------------------
# 7: h-convergence

def test_h_convergence_rates():
    flow = flows.manufactured()
    ok, parts = True, []
    for k in (2, 3):
        reps = []
        for n in (4, 8, 16, 32):
            sol = solve_stokes(generate_unit_square(n), k, flow.nu, flow.forcing, flow.velocity)
            reps.append(analysis.solution_errors(flow, sol))
        h = [r.h for r in reps]
        ru = analysis.fit_rate(h, [r.h1_u for r in reps])
        rp = analysis.fit_rate(h, [r.l2_p for r in reps])
        ok &= abs(ru - k) <= 0.25 and abs(rp - k) <= 0.25
        parts.append(f"k={k} H1 rate {ru:.3f}, pressure rate {rp:.3f}")
    report(7, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------------------
# 8: lattice flow

def _lattice(semidisc):
    mesh = parse_mesh_spec("square-periodic:10")
    space = HDGSpace.build(mesh, 4)
    integ = ImexIntegrator(space, flows.LATTICE_NU, 1e-4, "IMEX1", semidisc)
    state = initial_state(integ, flows.lattice_initial().velocity)
    rows, _ = run_unsteady(integ, state, 0.1)
    return np.array([[r[0], r[1]] for r in rows])


def test_lattice_energy():
    d = _lattice("d")
    exact = d[0, 1] * np.array([flows.lattice_decay(t) for t in d[:, 0]])
    dev = np.max(np.abs(d[:, 1] / exact - 1.0))
    incr = max(np.max(np.diff(d[:, 1]) / d[:-1, 1]), 0.0)
    finished = {}
    for s in ("a", "c"):
        r = _lattice(s)
        finished[s] = len(r) == len(d) and bool(np.all(np.isfinite(r[:, 1])))
    ok = dev <= 0.01 and incr <= 1e-10 and all(finished.values())
    report(8, ok, f"{len(d) - 1} steps, max deviation from exact decay {dev:.2e}, "
                  f"max per-step increase {incr:.1e}, variants a/c completed {finished}")
    assert ok


# ---------------------------------------------------------------------------
# 9: short cylinder run

def test_cylinder_short_run():
    mesh = parse_mesh_spec("channel:0.075")
    k, nu = 3, flows.CHANNEL_NU
    space = HDGSpace.build(mesh, k)
    bc = flows.channel_inflow
    sol = solve_stokes(mesh, k, nu, None, bc, "B", space=space)
    integ = ImexIntegrator(space, nu, 5e-4, "SBDF2", "d", bc=bc)
    w, f = sol.reconstructed()
    state = integ.make_state(0.0, np.concatenate([w.coefficients, f.coefficients]),
                             sol.pressure.coefficients)

    def forces(s):
        return analysis.drag_lift(space, s.velocity, s.pressure, nu, "cylinder", 20.0)

    rows, _ = run_unsteady(integ, state, 0.5, functionals=forces)
    rows = np.array(rows)
    t, norm, cd = rows[:, 0], rows[:, 1], rows[:, 4]
    bounded = bool(np.all(np.isfinite(norm))) and norm.max() <= 2.0 * norm[0]
    late = cd[t >= 0.25]
    in_band = late.min() >= 2.0 and late.max() <= 4.5
    ok = bounded and in_band and cd.mean() > 0
    report(9, ok, f"{mesh.n_elements} elements, norm in [{norm.min():.4f}, {norm.max():.4f}], "
                  f"c_D for t>=0.25 in [{late.min():.3f}, {late.max():.3f}], "
                  f"mean c_D {cd.mean():.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 10: assembled forms against direct quadrature

def _triangle_quadrature(n):
    """Collapsed Gauss rule on the reference triangle."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    pts = np.column_stack([u.ravel(), (v * (1.0 - u)).ravel()])
    return pts, (wu * wv * (1.0 - u)).ravel()


def _facet_reference(i, s):
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    a, b = corners[(i + 1) % 3], corners[(i + 2) % 3]
    return a[None, :] + s[:, None] * (b - a)[None, :]


def _oracle_forms(space, uw, uf, vw, vf, q, lam):
    """Viscous, divergence and mass forms from pointwise evaluation."""
    mesh, k = space.mesh, space.order
    qp, qw = _triangle_quadrature(k + 4)
    s, sw = np.polynomial.legendre.leggauss(k + 4)
    s, sw = 0.5 * (s + 1.0), 0.5 * sw
    leg = np.polynomial.legendre.legvander(2.0 * s - 1.0, k - 1) * np.sqrt(2 * np.arange(k) + 1)

    def proj(g):
        return leg @ (leg.T @ (sw * g))

    a = b = m = 0.0
    for t in range(mesh.n_elements):
        p = mesh.vertices[mesh.elements[t]]
        det = abs(np.linalg.det(np.column_stack([p[1] - p[0], p[2] - p[0]])))
        diam = max(np.linalg.norm(p[i] - p[j]) for i in range(3) for j in range(i))
        gu, gv = evaluate(uw, t, qp, "gradient"), evaluate(vw, t, qp, "gradient")
        a += det * np.sum(qw * np.einsum("qij,qij->q", gu, gv))
        m += det * np.sum(qw * np.einsum("qi,qi->q", evaluate(uw, t, qp), evaluate(vw, t, qp)))
        b -= det * np.sum(qw * evaluate(q, t, qp) * evaluate(vw, t, qp, "divergence"))
        for i in range(3):
            e = p[(i + 2) % 3] - p[(i + 1) % 3]
            length = np.linalg.norm(e)
            tan = e / length
            nrm = np.array([tan[1], -tan[0]])
            ju = proj(evaluate(uw, t, s, "tangential_trace", i)
                      - evaluate(uf, t, s, "tangential_trace", i))
            jv = proj(evaluate(vw, t, s, "tangential_trace", i)
                      - evaluate(vf, t, s, "tangential_trace", i))
            xs = _facet_reference(i, s)
            dnu = evaluate(uw, t, xs, "gradient") @ nrm @ tan
            dnv = evaluate(vw, t, xs, "gradient") @ nrm @ tan
            a += length * np.sum(sw * (lam * k * k / diam * ju * jv - dnu * jv - dnv * ju))
    return a, b, m


@pytest.mark.parametrize("k", range(1, 6))
def test_forms_match_direct_quadrature(k):
    rng = np.random.default_rng(100 + k)
    mesh = build_mesh([[0.0, 0.0], [1.3, 0.2], [0.4, 1.1], [1.5, 1.4]], [[0, 1, 2], [1, 3, 2]],
                      default_tag="dirichlet")
    space = HDGSpace.build(mesh, k)
    lam = assembly.DEFAULT_LAMBDA
    x = rng.standard_normal(space.n_velocity)
    y = rng.standard_normal(space.n_velocity)
    qc = rng.standard_normal(space.nQ)
    A = assembly.assemble_viscosity(space, 1.0, lam)
    B = assembly.assemble_divergence(space)
    M = assembly.assemble_mass(space)
    uw, uf, _ = space.split(np.concatenate([x, qc]))
    vw, vf, q = space.split(np.concatenate([y, qc]))
    ref = _oracle_forms(space, uw, uf, vw, vf, q, lam)
    got = (x @ (A @ y), qc @ (B @ y), x @ (M @ y))
    rel = [abs(g - r) / abs(r) for g, r in zip(got, ref)]
    ok = max(rel) <= 1e-12
    report(10, ok, f"k={k} relative differences A {rel[0]:.1e}, B {rel[1]:.1e}, M {rel[2]:.1e}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
