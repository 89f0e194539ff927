"""Error norms, discrete stability constants, boundary forces and rate fits."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla

from . import assembly
from .basis import _dubiner_tabulate, _legendre_tabulate, facet_points, gauss_rule, triangle_rule
from .errors import DimensionLimit, MissingTag
from .mesh import DIRICHLET_TAGS, Mesh
from .reconstruction import cached_reconstruction
from .spaces import HDGSpace, piola_tables

DENSE_LIMIT = 6000


@dataclass
class ErrorReport:
    l2_u: float
    h1_u: float
    triple_u: float
    l2_p: float
    k: int
    h: float
    ndofs: int

    def as_row(self):
        return asdict(self)


def _physical_points(mesh, ref):
    return np.einsum("tij,qj->tqi", mesh.jacobians, ref) + mesh.vertices[mesh.elements[:, 0]][:, None]


def jump_seminorm_sq(space: HDGSpace, velocity):
    """sum_T sum_F k^2/h ||Pi^{k-1}(u_T . t - u_F)||^2_F for a [W | F] vector."""
    P, _ = assembly.jump_moments(space)
    idx = np.concatenate([space.W.cell_dofs, space.nW + space.F.cell_dofs], axis=1)
    sgn = np.concatenate([space.W.cell_signs, space.F.cell_signs], axis=1)
    c = np.asarray(velocity)[idx] * sgn
    m = np.einsum("tidn,tn->tid", P, c)
    k = space.order
    L = assembly.element_tables(space.mesh, k).lengths
    return float(np.sum((k * k / space.mesh.h_local)[:, None] * L * np.sum(m * m, axis=2)))


def compute_errors(u_exact, grad_exact, p_exact, space: HDGSpace, velocity, pressure,
                   overquad=4, mean_constrained=True, reconstructed=False) -> ErrorReport:
    """Velocity errors in L2, broken H1 and the discrete energy norm; pressure in L2.

    ``velocity`` is a [W | F] vector; with ``reconstructed=True`` the element
    part is replaced by its reconstruction first. The facet part of the exact
    solution is its tangential trace, so the jump term only involves u_h.
    """
    if overquad < 2:
        raise ValueError("overquad must be >= 2")
    mesh, k = space.mesh, space.order
    u = np.array(velocity, dtype=float)
    if reconstructed and not space.conforming:
        u[:space.nW] = cached_reconstruction(space.W).ER @ u[:space.nW]
    rule = triangle_rule(2 * k + 2 + overquad)
    vals, grads, _ = piola_tables(mesh, k, rule.points)
    c = space.W.local_coefficients(u[:space.nW])
    uh = np.einsum("tqni,tn->tqi", vals, c)
    guh = np.einsum("tqnid,tn->tqid", grads, c)
    x = _physical_points(mesh, rule.points)
    flat = x.reshape(-1, 2)
    ue = np.asarray(u_exact(flat)).reshape(uh.shape)
    ge = np.asarray(grad_exact(flat)).reshape(guh.shape)
    w = rule.weights[None, :] * mesh.dets[:, None]
    l2 = math.sqrt(max(float(np.einsum("tq,tqi->", w, (ue - uh) ** 2)), 0.0))
    h1sq = float(np.einsum("tq,tqid->", w, (ge - guh) ** 2))
    triple = math.sqrt(h1sq + jump_seminorm_sq(space, u))

    l2p = 0.0
    if p_exact is not None and pressure is not None:
        psi = _dubiner_tabulate(k - 1, rule.points)[0]
        ph = np.einsum("qn,tn->tq", psi, space.Q.local_coefficients(pressure))
        pe = np.asarray(p_exact(flat)).reshape(ph.shape)
        diff = pe - ph
        if mean_constrained:
            diff = diff - float(np.sum(w * diff)) / float(np.sum(w))
        l2p = math.sqrt(float(np.sum(w * diff * diff)))
    return ErrorReport(l2, math.sqrt(h1sq), triple, l2p, k, float(mesh.h_local.max()),
                       int(space.ndofs))


def solution_errors(flow, sol, overquad=4, reconstructed=False):
    """compute_errors for a :class:`~relaxhdg.solvers.StokesSolution`."""
    return compute_errors(flow.velocity, flow.velocity_gradient, flow.pressure, sol.space,
                          sol.velocity, sol.pressure.coefficients, overquad,
                          sol.mean_constrained, reconstructed)


# ---------------------------------------------------------------------------
# discrete stability constants

@dataclass
class InfSupReport:
    c_lbb: float
    c_co: float
    k: int
    h: float
    lam: float


def _free_velocity(space: HDGSpace):
    from .spaces import boundary_values
    wi, _, fi, _ = boundary_values(space.W, space.F, lambda x: np.zeros_like(x),
                                   DIRICHLET_TAGS)
    mask = np.ones(space.n_velocity, dtype=bool)
    mask[wi] = False
    mask[space.nW + fi] = False
    return np.flatnonzero(mask)


def estimate_infsup(mesh: Mesh, k: int, lam=assembly.DEFAULT_LAMBDA, nu=1.0,
                    conforming=False, max_dim=DENSE_LIMIT) -> InfSupReport:
    """Dense estimates of the LBB constant and the coercivity constant.

    c_LBB^2 is the smallest nonzero eigenvalue of B N^{-1} B^T against the
    pressure mass, N the Gram matrix of the discrete energy norm on
    Dirichlet-free velocities. c_CO is the smallest eigenvalue of A against
    nu N.
    """
    space = HDGSpace.build(mesh, k, conforming)
    free = _free_velocity(space)
    if len(free) + space.nQ > max_dim:
        raise DimensionLimit(f"{len(free) + space.nQ} unknowns exceed the dense limit {max_dim}")
    N = assembly.assemble_triple_norm(space).toarray()[np.ix_(free, free)]
    A = assembly.assemble_viscosity(space, nu, lam).toarray()[np.ix_(free, free)]
    B = assembly.assemble_divergence(space).toarray()[:, free]
    Mp = assembly.assemble_pressure_mass(space).diagonal()
    L = sla.cho_factor(N)
    S = B @ sla.cho_solve(L, B.T)
    s = 1.0 / np.sqrt(Mp)
    mu = np.linalg.eigvalsh((S * s[:, None]) * s[None, :])
    mu = np.sort(mu)
    nz = mu[mu > 1e-10 * mu[-1]]
    c_lbb = float(np.sqrt(nz[0])) if len(nz) else 0.0
    c_co = float(sla.eigh(A, nu * N, eigvals_only=True, subset_by_index=[0, 0])[0])
    return InfSupReport(c_lbb, c_co, k, float(mesh.h_local.max()), lam)


# ---------------------------------------------------------------------------
# reconstruction properties

@dataclass
class ReconstructionCheck:
    k: int
    samples: int
    normal_jump: float          # max |[R u . n]| / max |u . n|
    facet_moment_defect: float  # normal moments 0..k-1, relative
    interior_moment_defect: float
    max_ratio: float            # max |||R_U v||| / |||v|||

    def violations(self, jump_tol=1e-10, moment_tol=1e-12, ratio_tol=10.0):
        out = []
        if self.normal_jump > jump_tol:
            out.append("normal_jump")
        if self.facet_moment_defect > moment_tol:
            out.append("facet_moments")
        if self.interior_moment_defect > moment_tol:
            out.append("interior_moments")
        if not self.max_ratio <= ratio_tol:
            out.append("stability")
        return out


def _normal_traces(dofmap, coefficients):
    """v.n at facet Gauss points, (nT, 3, q, S) for coefficient columns."""
    tb = assembly.element_tables(dofmap.mesh, dofmap.order)
    c = coefficients[dofmap.cell_dofs] * dofmap.cell_signs[..., None]
    vn = np.einsum("tiqnc,tic->tiqn", tb.fac_values, tb.normals)
    return np.einsum("tiqn,tns->tiqs", vn, c), tb


def check_reconstruction(mesh: Mesh, k: int, samples=200, seed=0) -> ReconstructionCheck:
    """Sample random relaxed fields and measure the reconstruction properties.

    Checked: normal continuity of the output, preservation of the facet
    normal moments of degree < k on every element side, preservation of the
    interior moments against [P^{k-2}]^2, and the energy-norm ratio of R_U.
    """
    space = HDGSpace.build(mesh, k)
    op = cached_reconstruction(space.W)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((space.n_velocity, samples))
    vw = V[:space.nW]
    rw = op.R @ vw

    vn_in, tb = _normal_traces(space.W, vw)
    vn_out, _ = _normal_traces(op.target, rw)
    scale = np.abs(vn_in).max()
    nb, nl = mesh.neighbors
    has = nb >= 0
    jump = 0.0
    if np.any(has):
        other = vn_out[nb[has], nl[has]][:, ::-1]
        jump = float(np.abs(vn_out[has] + other).max()) / scale

    leg = _legendre_tabulate(k - 1, tb.fac_points)[0]
    wl = tb.fac_weights[:, None] * leg
    mom_in = np.einsum("tiqs,qd,ti->tids", vn_in, wl, tb.lengths)
    mom_out = np.einsum("tiqs,qd,ti->tids", vn_out, wl, tb.lengths)
    fdef = float(np.abs(mom_in - mom_out).max() / np.abs(mom_in).max())

    idef = 0.0
    if k >= 2:
        ci = vw[space.W.cell_dofs] * space.W.cell_signs[..., None]
        co = rw[op.target.cell_dofs] * op.target.cell_signs[..., None]
        q = _dubiner_tabulate(k - 2, triangle_rule(2 * k + 2).points)[0]
        vals = tb.vol_values
        ui = np.einsum("tqnc,tns->tqcs", vals, ci)
        uo = np.einsum("tqnc,tns->tqcs", vals, co)
        mi = np.einsum("tq,tqcs,qm->tcms", tb.vol_weights, ui, q)
        mo = np.einsum("tq,tqcs,qm->tcms", tb.vol_weights, uo, q)
        idef = float(np.abs(mi - mo).max() / np.abs(mi).max())

    N = assembly.assemble_triple_norm(space)
    P = op.composite_relaxed(space.nF)
    PV = P @ V
    num = np.einsum("is,is->s", PV, N @ PV)
    den = np.einsum("is,is->s", V, N @ V)
    ratio = float(np.sqrt(np.max(num / den)))
    return ReconstructionCheck(k, samples, jump, fdef, idef, ratio)


# ---------------------------------------------------------------------------
# boundary forces

def drag_lift(space: HDGSpace, velocity, pressure, nu, boundary_tag="cylinder", scale=1.0,
              n_quad=None):
    """Force exerted by the fluid on the tagged boundary, times ``scale``.

    With n the unit normal pointing out of the fluid, the force is
    -int (nu du/dn - p n) ds; drag and lift are its x and y components.
    """
    mesh, k = space.mesh, space.order
    if boundary_tag in mesh.facet_groups:
        facets = mesh.facet_groups[boundary_tag]
    else:
        facets = np.flatnonzero(mesh.tag_array == boundary_tag)
    if len(facets) == 0:
        raise MissingTag(f"no facets tagged {boundary_tag!r}")
    rule = gauss_rule(n_quad or k + 2)
    els = mesh.facet_elements[facets, 0]
    loc = mesh.facet_local[facets, 0]
    cw = space.W.local_coefficients(np.asarray(velocity)[:space.nW])
    cp = space.Q.local_coefficients(np.asarray(pressure))
    total = np.zeros(2)
    for i in range(3):
        sel = loc == i
        if not np.any(sel):
            continue
        t = els[sel]
        ref = facet_points(i, rule.points)
        _, grads, _ = piola_tables(mesh, k, ref)
        gu = np.einsum("tqnid,tn->tqid", grads[t], cw[t])
        psi = _dubiner_tabulate(k - 1, ref)[0]
        ph = np.einsum("qn,tn->tq", psi, cp[t])
        p = mesh.vertices[mesh.elements[t]]
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        length = np.linalg.norm(e, axis=1)
        n = np.column_stack([e[:, 1], -e[:, 0]]) / length[:, None]
        dudn = np.einsum("tqid,td->tqi", gu, n)
        integrand = -(nu * dudn - ph[..., None] * n[:, None, :])
        total += np.einsum("q,t,tqi->i", rule.weights, length, integrand)
    return float(scale * total[0]), float(scale * total[1])


def kinetic_energy(space: HDGSpace, velocity, M=None):
    """0.5 ||u_T||^2 over the domain."""
    M = assembly.assemble_mass(space) if M is None else M
    u = np.asarray(velocity)
    return 0.5 * float(u @ (M @ u))


# ---------------------------------------------------------------------------
# rates

def fit_rate(h, err):
    """Least-squares slope of log(err) against log(h)."""
    h, err = np.asarray(h, float), np.asarray(err, float)
    if len(h) < 2:
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def fit_decay(k, err):
    """Least-squares per-order reduction factor exp(slope of log(err) vs k)."""
    k, err = np.asarray(k, float), np.asarray(err, float)
    if len(k) < 2:
        return float("nan")
    return float(np.exp(np.polyfit(k, np.log(err), 1)[0]))


TABLE_COLUMNS = ["k", "h", "ndof", "err_l2_u", "err_h1_u", "err_triple", "err_l2_p", "rate"]


def convergence_table(reports, by="h"):
    """Rows plus fitted rates.

    ``by='h'``: reports grouped by k, local algebraic rate of the H1 error
    between consecutive meshes and a least-squares fit per k.
    ``by='k'``: consecutive reduction factor of the H1 error and the fitted
    per-order factor.
    """
    rows, fits = [], {}
    if by == "h":
        groups = {}
        for r in reports:
            groups.setdefault(r.k, []).append(r)
        for k, grp in groups.items():
            prev = None
            for r in grp:
                rate = (math.log(prev.h1_u / r.h1_u) / math.log(prev.h / r.h)
                        if prev is not None and prev.h != r.h else float("nan"))
                rows.append(_row(r, rate))
                prev = r
            if len(grp) > 1:
                fits[k] = {"h1": fit_rate([r.h for r in grp], [r.h1_u for r in grp]),
                           "l2p": fit_rate([r.h for r in grp], [r.l2_p for r in grp])}
    elif by == "k":
        prev = None
        for r in reports:
            rate = r.h1_u / prev.h1_u if prev is not None else float("nan")
            rows.append(_row(r, rate))
            prev = r
        if len(reports) > 1:
            fits["decay"] = fit_decay([r.k for r in reports], [r.h1_u for r in reports])
    else:
        raise ValueError("by must be 'h' or 'k'")
    return rows, fits


def _row(r, rate):
    return {"k": r.k, "h": r.h, "ndof": r.ndofs, "err_l2_u": r.l2_u, "err_h1_u": r.h1_u,
            "err_triple": r.triple_u, "err_l2_p": r.l2_p, "rate": rate}


def format_csv(rows, columns=TABLE_COLUMNS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def format_text(rows, columns=TABLE_COLUMNS):
    cells = [columns] + [[_fmt(r[c]) for c in columns] for r in rows]
    width = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(row, width)) for row in cells) + "\n"


def _fmt(v):
    if isinstance(v, (int, np.integer)) or isinstance(v, str):
        return str(v)
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.6e}"
