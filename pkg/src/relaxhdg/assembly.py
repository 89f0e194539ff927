"""Assembly of the viscous, divergence, mass and convection forms.

Velocity vectors are laid out as ``[W | F]``. Element matrices are computed
for all elements at once from reference tables (affine maps make the tables
element independent up to the Jacobian) and scattered through the signed
DOF maps.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import io as spio
from scipy import sparse

from .basis import _dubiner_tabulate, _legendre_tabulate, facet_points, gauss_rule, triangle_rule
from .errors import MapMismatch, NotNormalContinuous
from .mesh import Mesh
from .spaces import HDGSpace, piola_tables

DEFAULT_LAMBDA = 4.0


# ---------------------------------------------------------------------------
# reference tables

@dataclass(frozen=True, eq=False)
class ElementTables:
    """Per-element physical quantities needed by the facet terms."""

    vol_weights: np.ndarray   # (nT, qv) physical weights
    vol_values: np.ndarray    # (nT, qv, n, 2)
    vol_grads: np.ndarray     # (nT, qv, n, 2, 2)
    vol_div: np.ndarray       # (nT, qv, n)
    fac_weights: np.ndarray   # (qf,) reference weights on [0, 1]
    fac_points: np.ndarray    # (qf,)
    fac_values: np.ndarray    # (nT, 3, qf, n, 2)
    fac_grads: np.ndarray     # (nT, 3, qf, n, 2, 2)
    tangents: np.ndarray      # (nT, 3, 2) unit, local direction
    normals: np.ndarray       # (nT, 3, 2) unit outward
    lengths: np.ndarray       # (nT, 3)


@functools.lru_cache(maxsize=8)
def element_tables(mesh: Mesh, k: int, vol_degree: int | None = None,
                   fac_points: int | None = None) -> ElementTables:
    vrule = triangle_rule(vol_degree if vol_degree is not None else 2 * k + 2)
    frule = gauss_rule(fac_points if fac_points is not None else k + 1)
    vv, vg, vd = piola_tables(mesh, k, vrule.points)
    fv, fg = [], []
    for i in range(3):
        a, b, _ = piola_tables(mesh, k, facet_points(i, frule.points))
        fv.append(a)
        fg.append(b)
    p = mesh.vertices[mesh.elements]
    edges = np.stack([p[:, (i + 2) % 3] - p[:, (i + 1) % 3] for i in range(3)], axis=1)
    lengths = np.linalg.norm(edges, axis=2)
    tang = edges / lengths[..., None]
    nrm = np.stack([tang[..., 1], -tang[..., 0]], axis=-1)
    return ElementTables(vrule.weights[None, :] * mesh.dets[:, None], vv, vg, vd,
                         frule.weights, frule.points, np.stack(fv, axis=1), np.stack(fg, axis=1),
                         tang, nrm, lengths)


def _velocity_layout(space: HDGSpace):
    idx = np.concatenate([space.W.cell_dofs, space.nW + space.F.cell_dofs], axis=1)
    sgn = np.concatenate([space.W.cell_signs, space.F.cell_signs], axis=1)
    return idx, sgn


def _scatter(local, ridx, rsgn, cidx, csgn, shape):
    vals = local * rsgn[:, :, None] * csgn[:, None, :]
    r = np.broadcast_to(ridx[:, :, None], vals.shape)
    c = np.broadcast_to(cidx[:, None, :], vals.shape)
    return sparse.coo_matrix((vals.ravel(), (r.ravel(), c.ravel())), shape=shape).tocsr()


def _symmetrize(A):
    A = 0.5 * (A + A.T)
    return A.tocsr()


# ---------------------------------------------------------------------------
# local jump operators

def jump_moments(space: HDGSpace):
    """Projected tangential-jump moments P and normal-derivative moments G.

    Both are (nT, 3, k, nloc) over the composite local velocity DOFs; the
    moments are taken against the Legendre modes 0..k-1 of the local facet
    parameter.
    """
    k = space.order
    tb = element_tables(space.mesh, k)
    nW = space.W.n_local
    nT = space.mesh.n_elements
    leg = _legendre_tabulate(k - 1, tb.fac_points)[0]             # (q, k)
    wl = tb.fac_weights[:, None] * leg
    vt = np.einsum("tiqnc,tic->tiqn", tb.fac_values, tb.tangents)
    dn = np.einsum("tiqncd,tid,tic->tiqn", tb.fac_grads, tb.normals, tb.tangents)
    P = np.zeros((nT, 3, k, nW + 3 * k))
    G = np.zeros_like(P)
    P[..., :nW] = np.einsum("tiqn,qd->tidn", vt, wl)
    G[..., :nW] = np.einsum("tiqn,qd->tidn", dn, wl)
    for i in range(3):
        P[:, i, np.arange(k), nW + i * k + np.arange(k)] = -1.0
    return P, G


def local_viscosity(space: HDGSpace, nu=1.0, lam=DEFAULT_LAMBDA, consistency=True):
    k = space.order
    tb = element_tables(space.mesh, k)
    nW = space.W.n_local
    nT = space.mesh.n_elements
    P, G = jump_moments(space)
    loc = np.zeros((nT, nW + 3 * k, nW + 3 * k))
    loc[:, :nW, :nW] = np.einsum("tq,tqacd,tqbcd->tab", tb.vol_weights, tb.vol_grads, tb.vol_grads)
    h = space.mesh.h_local
    pen = lam * k * k / h
    L = tb.lengths
    loc += np.einsum("ti,tida,tidb->tab", L * pen[:, None], P, P)
    if consistency:
        GP = np.einsum("ti,tida,tidb->tab", L, G, P)
        loc -= GP + GP.transpose(0, 2, 1)
    return nu * 0.5 * (loc + loc.transpose(0, 2, 1))


def assemble_viscosity(space: HDGSpace, nu=1.0, lam=DEFAULT_LAMBDA):
    """Symmetric viscous block A on [W | F]."""
    if lam <= 0:
        raise ValueError("the stabilization parameter must be positive")
    idx, sgn = _velocity_layout(space)
    loc = local_viscosity(space, nu, lam)
    n = space.n_velocity
    return _symmetrize(_scatter(loc, idx, sgn, idx, sgn, (n, n)))


def assemble_triple_norm(space: HDGSpace):
    """Gram matrix of sum ||grad u_T||^2 + k^2/h ||Pi jump(u^t)||^2."""
    idx, sgn = _velocity_layout(space)
    loc = local_viscosity(space, 1.0, 1.0, consistency=False)
    n = space.n_velocity
    return _symmetrize(_scatter(loc, idx, sgn, idx, sgn, (n, n)))


def local_divergence(space: HDGSpace):
    """(nT, nQloc, nWloc): -int_T q div(phi)."""
    k = space.order
    rule = triangle_rule(2 * k)
    psi = _dubiner_tabulate(k - 1, rule.points)[0]
    divhat = piola_tables(space.mesh, k, rule.points)[2] * space.mesh.dets[:, None, None]
    return -np.einsum("q,qp,tqn->tpn", rule.weights, psi, divhat)


def assemble_divergence(space: HDGSpace):
    """B block (nQ x [W | F]); the facet columns are empty."""
    loc = local_divergence(space)
    n = space.n_velocity
    return _scatter(loc, space.Q.cell_dofs, space.Q.cell_signs, space.W.cell_dofs,
                    space.W.cell_signs, (space.nQ, n))


def local_mass(space: HDGSpace):
    tb = element_tables(space.mesh, space.order)
    return np.einsum("tq,tqai,tqbi->tab", tb.vol_weights, tb.vol_values, tb.vol_values)


def assemble_mass(space: HDGSpace):
    """L2 mass of the element velocity on [W | F] (zero on facet DOFs)."""
    loc = local_mass(space)
    n = space.n_velocity
    M = _scatter(loc, space.W.cell_dofs, space.W.cell_signs, space.W.cell_dofs,
                 space.W.cell_signs, (n, n))
    return _symmetrize(M)


def assemble_pressure_mass(space: HDGSpace):
    """Pressure mass: det(J_T) times the identity on each element block."""
    d = np.repeat(space.mesh.dets, space.Q.n_local)
    return sparse.diags(d).tocsr()


def pressure_mean_row(space: HDGSpace):
    """Row vector r with r @ p = int_Omega p."""
    r = np.zeros(space.nQ)
    r[space.Q.cell_dofs[:, 0]] = space.mesh.dets * np.sqrt(2.0) * 0.5   # constant mode is sqrt(2)
    return r


# ---------------------------------------------------------------------------
# right-hand sides

def assemble_rhs(space: HDGSpace, f, variant="plain", recon=None, extra_degree=6):
    """Load vector int f . v_T on [W | F].

    ``variant='reconstructed'`` tests with R_U v: the plain W part is mapped
    through the adjoint (E R)^T.
    """
    k = space.order
    mesh = space.mesh
    vec = np.zeros(space.n_velocity)
    if f is None:
        return vec
    rule = triangle_rule(2 * k + 2 + extra_degree)
    vals = piola_tables(mesh, k, rule.points)[0]
    x = np.einsum("tij,qj->tqi", mesh.jacobians, rule.points) + mesh.vertices[mesh.elements[:, 0]][:, None]
    fx = np.asarray(f(x.reshape(-1, 2)), dtype=float).reshape(x.shape)
    w = rule.weights[None, :] * mesh.dets[:, None]
    loc = np.einsum("tq,tqi,tqni->tn", w, fx, vals) * space.W.cell_signs
    np.add.at(vec, space.W.cell_dofs, loc)
    if variant == "plain":
        return vec
    if variant != "reconstructed":
        raise ValueError(f"unknown rhs variant {variant!r}")
    if recon is None:
        if space.conforming:
            return vec
        from .reconstruction import cached_reconstruction
        recon = cached_reconstruction(space.W)
    vec[:space.nW] = recon.ER.T @ vec[:space.nW]
    return vec


# ---------------------------------------------------------------------------
# convection

def _check_normal_continuity(space, beta, tol=1e-10):
    if space.W.kind != "W_relaxed":
        return
    lf = space.mesh.logical_facets
    two = lf.two_sided
    td = space.W.top_dofs[two]
    jump = np.abs(beta[td[:, 0]] - beta[td[:, 1]])
    if jump.size and jump.max() > tol * max(1.0, np.abs(beta).max()):
        raise NotNormalContinuous(f"advecting field has top-mode normal jump {jump.max():.3e}")


def apply_convection(space: HDGSpace, beta, w, v_mode="plain", recon=None,
                     inflow=None, check=True):
    """Vector of C(beta; w, phi) over the [W | F] test functions.

    C(beta; w, z) = sum_T -int_T (w x beta) : grad z + int_dT (beta.n) w_up . z
    with the upwind trace taken from the element where beta.n >= 0 and from
    the neighbour otherwise. On exterior facets the inflow trace is ``inflow``
    (callable of physical points, default zero). ``beta`` and ``w`` are W
    coefficient vectors. Facet DOFs receive zero.
    """
    mesh, k = space.mesh, space.order
    beta = np.asarray(beta, dtype=float)
    w = np.asarray(w, dtype=float)
    if beta.shape != (space.nW,) or w.shape != (space.nW,):
        raise MapMismatch("convection arguments must be W coefficient vectors")
    if check:
        _check_normal_continuity(space, beta)
    tb = element_tables(mesh, k)
    cb = space.W.local_coefficients(beta)
    cw = space.W.local_coefficients(w)
    bv = np.einsum("tqni,tn->tqi", tb.vol_values, cb)
    wv = np.einsum("tqni,tn->tqi", tb.vol_values, cw)
    loc = -np.einsum("tq,tqa,tqb,tqnab->tn", tb.vol_weights, wv, bv, tb.vol_grads)

    bf = np.einsum("tiqnc,tn->tiqc", tb.fac_values, cb)
    wf = np.einsum("tiqnc,tn->tiqc", tb.fac_values, cw)
    bn = np.einsum("tiqc,tic->tiq", bf, tb.normals)
    nb, nl = mesh.neighbors
    has = nb >= 0
    wn = np.zeros_like(wf)
    wn[has] = wf[nb[has], nl[has]][:, ::-1]            # opposite parameter direction
    if inflow is not None and np.any(~has):
        t_ext, i_ext = np.nonzero(~has)
        pts = np.stack([facet_points(i, tb.fac_points) for i in range(3)])  # (3, q, 2)
        ref = pts[i_ext]
        x = np.einsum("eij,eqj->eqi", mesh.jacobians[t_ext], ref) + \
            mesh.vertices[mesh.elements[t_ext, 0]][:, None]
        gv = np.asarray(inflow(x.reshape(-1, 2)), dtype=float).reshape(x.shape)
        wn[t_ext, i_ext] = gv
    up = np.where((bn >= 0)[..., None], wf, wn)
    flux = np.einsum("q,ti,tiq,tiqc,tiqnc->tn", tb.fac_weights, tb.lengths, bn, up, tb.fac_values)
    loc = loc + flux

    vec = np.zeros(space.nW)
    np.add.at(vec, space.W.cell_dofs, loc * space.W.cell_signs)
    if v_mode == "reconstructed" and not space.conforming:
        if recon is None:
            from .reconstruction import cached_reconstruction
            recon = cached_reconstruction(space.W)
        vec = recon.ER.T @ vec
    elif v_mode not in ("plain", "reconstructed"):
        raise ValueError(f"unknown v_mode {v_mode!r}")
    return np.concatenate([vec, np.zeros(space.nF)])


def convection_value(space, beta, w, z, **kw):
    """Scalar C(beta; w, z) for W coefficient vectors."""
    return float(apply_convection(space, beta, w, **kw)[:space.nW] @ np.asarray(z))


def dump_matrix(path, matrix, comment=""):
    """Write a sparse matrix in MatrixMarket coordinate format."""
    spio.mmwrite(str(path), sparse.coo_matrix(matrix), comment=comment)
