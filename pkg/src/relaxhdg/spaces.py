"""Global DOF maps, Piola-mapped evaluation, projections and interpolation.

Velocity functions are stored through BDM degrees of freedom: facet-normal
Legendre moments in the *global* facet orientation, followed by element
interior DOFs. Locally, the moment of degree ``d`` seen from an element whose
facet direction is reversed picks up the sign ``(-1)**(d+1)`` (normal flips,
Legendre mode of degree d is even/odd in the parameter).
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import (_dubiner_tabulate, _legendre_tabulate, build_bdm_element, dim_p,
                    facet_points, gauss_rule, triangle_rule)
from .errors import MapMismatch, UnsupportedOrder
from .mesh import DIRICHLET_TAGS, Mesh

KINDS = ("W_relaxed", "W_conf", "Facet", "Pressure", "DG")
VELOCITY_KINDS = ("W_relaxed", "W_conf")


def mesh_hash(mesh: Mesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(mesh.elements, dtype=np.int64).tobytes())
    h.update("|".join(mesh.boundary_tags).encode())
    h.update(np.ascontiguousarray(mesh.periodic_pairs, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering for one discrete space.

    ``cell_dofs[t]`` lists the global DOFs seen by element ``t`` in local
    order, ``cell_signs[t]`` the factor turning a global coefficient into the
    local one. For W kinds ``facet_dofs[l]`` holds the k lower moments of
    logical facet ``l`` and ``top_dofs[l, s]`` the degree-k moment of side
    ``s``; for the Facet kind ``facet_dofs[l]`` are its k tangential modes.
    """

    mesh: Mesh
    kind: str
    order: int
    cell_dofs: np.ndarray
    cell_signs: np.ndarray
    ndofs: int
    facet_dofs: np.ndarray | None = None
    top_dofs: np.ndarray | None = None
    interior_dofs: np.ndarray | None = None

    @property
    def total_dofs(self):
        return self.ndofs

    @property
    def n_local(self):
        return self.cell_dofs.shape[1]

    @property
    def is_velocity(self):
        return self.kind in VELOCITY_KINDS

    @property
    def scalar_order(self):
        """Polynomial degree of the scalar kinds."""
        return self.order - 1 if self.kind == "Pressure" else self.order

    def constrained_facets(self, tags=DIRICHLET_TAGS):
        lf = self.mesh.logical_facets
        return np.flatnonzero(np.isin(lf.tags, list(tags)))

    @property
    def dirichlet_dofs(self):
        """DOFs fixed by Dirichlet data (dirichlet, inflow and wall facets)."""
        f = self.constrained_facets()
        if self.kind in VELOCITY_KINDS:
            return np.sort(np.concatenate([self.facet_dofs[f].ravel(), self.top_dofs[f, 0]]))
        if self.kind == "Facet":
            return np.sort(self.facet_dofs[f].ravel())
        return np.zeros(0, dtype=int)

    def local_coefficients(self, coefficients):
        c = np.asarray(coefficients)
        return c[..., self.cell_dofs] * self.cell_signs

    def gather_matrix(self):
        """Sparse (nT*nloc, ndofs) signed gather operator."""
        from scipy import sparse
        n = self.cell_dofs.size
        return sparse.csr_matrix((self.cell_signs.ravel(), (np.arange(n), self.cell_dofs.ravel())),
                                 shape=(n, self.ndofs))


def _orientation_signs(orient, degrees):
    return np.where(orient[..., None] > 0, 1.0, (-1.0) ** (np.asarray(degrees) + 1))


def build_dofmap(mesh: Mesh, kind: str, k: int) -> DofMap:
    """Build the DOF map of ``kind`` at order ``k``.

    For ``Pressure`` the polynomial degree is ``k - 1`` (paired with velocity
    order ``k``); ``DG`` is full P^k.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown space kind {kind!r}")
    k = int(k)
    nT = mesh.n_elements
    if kind in ("Pressure", "DG"):
        deg = k - 1 if kind == "Pressure" else k
        if deg < 0:
            raise UnsupportedOrder(f"{kind} needs a non-negative polynomial degree")
        n = dim_p(deg)
        cd = np.arange(nT * n).reshape(nT, n)
        return DofMap(mesh, kind, k, cd, np.ones(cd.shape), nT * n, interior_dofs=cd)
    if k < 1:
        raise UnsupportedOrder(f"{kind} needs order k >= 1, got {k}")

    lf = mesh.logical_facets
    nL = len(lf)
    ofe, side = lf.of_element, lf.side_of_element
    orient = lf.orientation[ofe, side]                               # (nT, 3)

    if kind == "Facet":
        fd = np.arange(nL * k).reshape(nL, k)
        cd = fd[ofe].reshape(nT, 3 * k)
        sg = _orientation_signs(orient, np.arange(k)).reshape(nT, 3 * k)
        return DofMap(mesh, kind, k, cd, sg, nL * k, facet_dofs=fd)

    lower = np.arange(nL * k).reshape(nL, k)
    nxt = nL * k
    top = -np.ones((nL, 2), dtype=int)
    two = lf.two_sided
    if kind == "W_relaxed":
        for l in range(nL):
            top[l, 0] = nxt
            nxt += 1
            if two[l]:
                top[l, 1] = nxt
                nxt += 1
    else:
        top[:, 0] = nxt + np.arange(nL)
        top[two, 1] = top[two, 0]
        nxt += nL
    ni = k * k - 1
    interior = nxt + np.arange(nT * ni).reshape(nT, ni)
    nxt += nT * ni

    facet_part = np.concatenate([lower[ofe], top[ofe, side][..., None]], axis=2)   # (nT, 3, k+1)
    sg = _orientation_signs(orient, np.arange(k + 1))
    cd = np.concatenate([facet_part.reshape(nT, -1), interior], axis=1)
    sg = np.concatenate([sg.reshape(nT, -1), np.ones((nT, ni))], axis=1)
    return DofMap(mesh, kind, k, cd, sg, nxt, facet_dofs=lower, top_dofs=top,
                  interior_dofs=interior)


# ---------------------------------------------------------------------------
# finite element functions

@dataclass(eq=False)
class FeFunction:
    dofmap: DofMap
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.dofmap.ndofs,):
            raise ValueError("coefficient length does not match the DOF map")

    @classmethod
    def zeros(cls, dofmap):
        return cls(dofmap, np.zeros(dofmap.ndofs))

    def copy(self):
        return FeFunction(self.dofmap, self.coefficients.copy())


def piola_tables(mesh: Mesh, k: int, points):
    """Physical BDM basis values (nT, q, n, 2), gradients (nT, q, n, 2, 2)
    and divergences (nT, q, n) at reference ``points``, unsigned."""
    el = build_bdm_element(k)
    v, g = el.tabulate(points)
    J = mesh.jacobians
    Ji = mesh.inverse_jacobians
    det = mesh.dets
    vals = np.einsum("tij,qnj->tqni", J, v) / det[:, None, None, None]
    grads = np.einsum("tij,qnje,ted->tqnid", J, g, Ji, optimize=True) / det[:, None, None, None, None]
    div = np.einsum("qnii->qn", g)[None] / det[:, None, None]
    return vals, grads, div


def scalar_tables(mesh: Mesh, degree: int, points):
    """Physical Dubiner values (q, n) and gradients (nT, q, n, 2)."""
    v, g = _dubiner_tabulate(degree, points)
    grads = np.einsum("qne,ted->tqnd", g, mesh.inverse_jacobians)
    return v, grads


def element_values(fef: FeFunction, points, what="value"):
    """Evaluate ``fef`` on every element at reference ``points``.

    ``what`` in {value, gradient, divergence}. Velocity values have shape
    (nT, q, 2), gradients (nT, q, 2, 2) with ``[.., comp, dir]``.
    """
    dm = fef.dofmap
    c = dm.local_coefficients(fef.coefficients)
    if dm.is_velocity:
        vals, grads, div = piola_tables(dm.mesh, dm.order, points)
        if what == "value":
            return np.einsum("tqni,tn->tqi", vals, c)
        if what == "gradient":
            return np.einsum("tqnid,tn->tqid", grads, c)
        if what == "divergence":
            return np.einsum("tqn,tn->tq", div, c)
    elif dm.kind in ("Pressure", "DG"):
        v, g = scalar_tables(dm.mesh, dm.scalar_order, points)
        if what == "value":
            return np.einsum("qn,tn->tq", v, c)
        if what == "gradient":
            return np.einsum("tqnd,tn->tqd", g, c)
    raise ValueError(f"cannot evaluate {what!r} for kind {dm.kind}")


def element_trace(fef: FeFunction, t_local, what="value"):
    """Traces on every local facet: shape (nT, 3, q, ...) at local params."""
    out = []
    for i in range(3):
        out.append(element_values(fef, facet_points(i, t_local), what))
    return np.stack(out, axis=1)


def facet_values(fef: FeFunction, t_local):
    """Facet-space field u_F seen from every element's local facets.

    Returns the tangential scalar along the element's local facet direction,
    shape (nT, 3, q).
    """
    dm = fef.dofmap
    if dm.kind != "Facet":
        raise MapMismatch("facet_values needs a Facet DOF map")
    k = dm.order
    leg = _legendre_tabulate(k - 1, t_local)[0]
    c = dm.local_coefficients(fef.coefficients).reshape(-1, 3, k)
    return np.einsum("tid,qd->tiq", c, leg)


def evaluate(fef: FeFunction, element: int, points, what="value", facet=None):
    """Evaluate one element.

    ``points`` are reference-element coordinates, or for the trace modes
    (``normal_trace``, ``tangential_trace``) and the Facet kind, parameters in
    [0, 1] along local facet ``facet`` of ``element``.
    """
    dm = fef.dofmap
    mesh = dm.mesh
    if dm.kind == "Facet":
        if facet is None:
            raise ValueError("Facet functions need the local facet index")
        k = dm.order
        leg = _legendre_tabulate(k - 1, points)[0]
        c = dm.local_coefficients(fef.coefficients)[element].reshape(3, k)[facet]
        s = leg @ c
        if what == "tangential_trace":
            return s
        if what == "value":
            p = mesh.vertices[mesh.elements[element]]
            e = p[(facet + 2) % 3] - p[(facet + 1) % 3]
            return np.outer(s, e / np.linalg.norm(e))
        raise ValueError(f"cannot evaluate {what!r} for kind Facet")
    c = dm.local_coefficients(fef.coefficients)[element]
    if what in ("normal_trace", "tangential_trace"):
        if facet is None:
            raise ValueError("trace evaluation needs the local facet index")
        v = evaluate(fef, element, facet_points(facet, points), "value")
        p = mesh.vertices[mesh.elements[element]]
        e = p[(facet + 2) % 3] - p[(facet + 1) % 3]
        e = e / np.linalg.norm(e)
        d = np.array([e[1], -e[0]]) if what == "normal_trace" else e
        return v @ d
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    J = mesh.jacobians[element]
    Ji = mesh.inverse_jacobians[element]
    det = mesh.dets[element]
    if dm.is_velocity:
        v, g = build_bdm_element(dm.order).tabulate(pts)
        if what == "value":
            return np.einsum("ij,qnj,n->qi", J, v, c) / det
        if what == "gradient":
            return np.einsum("ij,qnje,ed,n->qid", J, g, Ji, c) / det
        if what == "divergence":
            return np.einsum("qnii,n->q", g, c) / det
    else:
        v, g = _dubiner_tabulate(dm.scalar_order, pts)
        if what == "value":
            return v @ c
        if what == "gradient":
            return np.einsum("qne,ed,n->qd", g, Ji, c)
    raise ValueError(f"cannot evaluate {what!r} for kind {dm.kind}")


# ---------------------------------------------------------------------------
# projections and interpolation

def project_facet(f, order, n_quad=None):
    """Legendre coefficients of the L2(0,1) projection of ``f`` onto P^order.

    ``f`` is a callable of the parameter, or samples at the points of
    ``gauss_rule(n_quad)``.
    """
    if callable(f):
        rule = gauss_rule(n_quad or order + 8)
        vals = np.asarray(f(rule.points), dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
        rule = gauss_rule(n_quad or vals.shape[0])
        if vals.shape[0] != len(rule):
            raise ValueError("samples must match the Gauss points")
    leg = _legendre_tabulate(order, rule.points)[0]
    return np.einsum("q...,q,qd->d...", vals, rule.weights, leg)


def project_element(f, mesh: Mesh, element: int, k: int, quad_degree=None):
    """Dubiner coefficients of the L2(T) projection of ``f`` onto P^k.

    ``f`` maps physical points (q, 2) to scalars (q,) or vectors (q, m); the
    coefficients refer to the physical basis ``phi_hat(x_hat(x))``, which is
    orthogonal with norm ``det J``.
    """
    rule = triangle_rule(quad_degree or 2 * k + 8)
    J = mesh.jacobians[element]
    x0 = mesh.vertices[mesh.elements[element, 0]]
    x = rule.points @ J.T + x0
    vals = np.asarray(f(x), dtype=float)
    phi = _dubiner_tabulate(k, rule.points)[0]
    return np.einsum("q...,q,qn->n...", vals, rule.weights, phi)


def _pullback(mesh, u, ref_points):
    """det J^{-1} u(x(x_hat)) on all elements: (nT, q, 2)."""
    J = mesh.jacobians
    x = np.einsum("tij,qj->tqi", J, ref_points) + mesh.vertices[mesh.elements[:, 0]][:, None, :]
    vals = np.asarray(u(x.reshape(-1, 2)), dtype=float).reshape(x.shape)
    return np.einsum("tij,tqj->tqi", mesh.inverse_jacobians, vals) * mesh.dets[:, None, None]


def interpolate_local(mesh: Mesh, k: int, u, quad_degree=None, completion="l2"):
    """Local BDM DOF values (nT, ndof) of ``u`` on every element.

    Facet moments and [P^{k-2}]^2 interior moments are taken from ``u``. With
    ``completion='l2'`` the remaining k-1 interior DOFs minimise the local L2
    distance to ``u``; ``'canonical'`` uses their defining moments instead.
    """
    if completion not in ("l2", "canonical"):
        raise ValueError(f"unknown completion {completion!r}")
    el = build_bdm_element(k)
    deg = quad_degree or 2 * k + 6
    vrule = triangle_rule(deg)
    frule = gauss_rule(deg // 2 + 1)
    vol = _pullback(mesh, u, vrule.points)
    fac = np.stack([_pullback(mesh, u, facet_points(i, frule.points)) for i in range(3)], axis=1)
    loc = el.dof_functionals(vrule, vol, frule, fac)
    if completion == "canonical" or el.n_complement == 0:
        return loc
    # reference-frame L2 products with the Piola weight J^T J / det
    v = el.tabulate(vrule.points)[0]
    G = np.einsum("tic,tid->tcd", mesh.jacobians, mesh.jacobians) / mesh.dets[:, None, None]
    M = np.einsum("q,qac,tcd,qbd->tab", vrule.weights, v, G, v)
    b = np.einsum("q,qac,tcd,tqd->ta", vrule.weights, v, G, vol)
    comp = np.arange(el.ndofs)[el.complement_slice]
    rest = np.setdiff1d(np.arange(el.ndofs), comp)
    rhs = b[:, comp] - np.einsum("tab,tb->ta", M[:, comp][:, :, rest], loc[:, rest])
    loc[:, comp] = np.linalg.solve(M[:, comp][:, :, comp], rhs[..., None])[..., 0]
    return loc


def assemble_local(dofmap: DofMap, local):
    """Scatter signed local values to global, averaging shared DOFs."""
    g = np.zeros(dofmap.ndofs)
    cnt = np.zeros(dofmap.ndofs)
    np.add.at(g, dofmap.cell_dofs, local * dofmap.cell_signs)
    np.add.at(cnt, dofmap.cell_dofs, 1.0)
    return g / np.maximum(cnt, 1.0)


def interpolate_bdm(u, dofmap: DofMap, quad_degree=None, completion="l2") -> FeFunction:
    """BDM interpolant of the vector field ``u`` (callable on (q, 2)).

    See :func:`interpolate_local` for the choice of the interior DOFs.
    """
    if not dofmap.is_velocity:
        raise MapMismatch("interpolate_bdm needs a W DOF map")
    loc = interpolate_local(dofmap.mesh, dofmap.order, u, quad_degree, completion)
    return FeFunction(dofmap, assemble_local(dofmap, loc))


def facet_moments(mesh: Mesh, facets, g, order, kind="tangential", n_quad=None):
    """Moments ``int_0^1 (g . d) l_j(t) dt`` on geometric ``facets`` in their
    global direction, with d the unit tangent or unit normal. (nf, order+1)."""
    facets = np.asarray(facets, dtype=int)
    rule = gauss_rule(n_quad or order + 8)
    a = mesh.vertices[mesh.facets[facets, 0]]
    b = mesh.vertices[mesh.facets[facets, 1]]
    x = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(g(x.reshape(-1, 2)), dtype=float).reshape(x.shape)
    d = mesh.facet_tangents[facets] if kind == "tangential" else mesh.facet_normals[facets]
    s = np.einsum("fqi,fi->fq", vals, d)
    leg = _legendre_tabulate(order, rule.points)[0]
    return np.einsum("fq,q,qj->fj", s, rule.weights, leg)


def interpolate_facet(g, dofmap: DofMap, n_quad=None) -> FeFunction:
    """Facet-space function with the projected tangential trace of ``g``."""
    if dofmap.kind != "Facet":
        raise MapMismatch("interpolate_facet needs a Facet DOF map")
    lf = dofmap.mesh.logical_facets
    m = facet_moments(dofmap.mesh, lf.facet, g, dofmap.order - 1, n_quad=n_quad)
    c = np.zeros(dofmap.ndofs)
    c[dofmap.facet_dofs] = m
    return FeFunction(dofmap, c)


def boundary_values(wmap: DofMap, fmap: DofMap, g, tags=DIRICHLET_TAGS, n_quad=None):
    """Prescribed values on the constrained DOFs of W and F.

    Returns ``(w_idx, w_val, f_idx, f_val)``. All k+1 normal moments of W and
    the k tangential modes of F are taken from ``g``.
    """
    mesh = wmap.mesh
    lf = mesh.logical_facets
    fl = np.flatnonzero(np.isin(lf.tags, list(tags)))
    k = wmap.order
    geo = lf.facet[fl]
    if len(fl) == 0:
        e = np.zeros(0, dtype=int)
        return e, np.zeros(0), e, np.zeros(0)
    nm = facet_moments(mesh, geo, g, k, kind="normal", n_quad=n_quad) * mesh.facet_lengths[geo][:, None]
    w_idx = np.concatenate([wmap.facet_dofs[fl], wmap.top_dofs[fl, :1]], axis=1)
    tm = facet_moments(mesh, geo, g, k - 1, n_quad=n_quad)
    f_idx = fmap.facet_dofs[fl]
    return w_idx.ravel(), nm.ravel(), f_idx.ravel(), tm.ravel()


# ---------------------------------------------------------------------------
# composite space

@dataclass(frozen=True, eq=False)
class HDGSpace:
    """Velocity (W, F) and pressure Q on one mesh, laid out as [W | F | Q]."""

    mesh: Mesh
    order: int
    W: DofMap
    F: DofMap
    Q: DofMap

    @classmethod
    def build(cls, mesh: Mesh, k: int, conforming: bool = False):
        return cls(mesh, k, build_dofmap(mesh, "W_conf" if conforming else "W_relaxed", k),
                   build_dofmap(mesh, "Facet", k), build_dofmap(mesh, "Pressure", k))

    @property
    def conforming(self):
        return self.W.kind == "W_conf"

    @property
    def nW(self):
        return self.W.ndofs

    @property
    def nF(self):
        return self.F.ndofs

    @property
    def nQ(self):
        return self.Q.ndofs

    @property
    def n_velocity(self):
        return self.nW + self.nF

    @property
    def ndofs(self):
        return self.nW + self.nF + self.nQ

    def split(self, x):
        x = np.asarray(x)
        return (FeFunction(self.W, x[:self.nW]),
                FeFunction(self.F, x[self.nW:self.n_velocity]),
                FeFunction(self.Q, x[self.n_velocity:self.ndofs]))


# ---------------------------------------------------------------------------
# snapshots

def save_function(fef: FeFunction, path) -> None:
    """Write ``dof_index,value`` CSV plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dof_index", "value"])
        for i, v in enumerate(fef.coefficients.tolist()):
            w.writerow([i, repr(v)])
    meta = {"kind": fef.dofmap.kind, "k": fef.dofmap.order,
            "mesh_hash": mesh_hash(fef.dofmap.mesh), "ndofs": fef.dofmap.ndofs}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_function(path, dofmap: DofMap) -> FeFunction:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    if (meta["kind"], meta["k"], meta["mesh_hash"]) != (dofmap.kind, dofmap.order,
                                                        mesh_hash(dofmap.mesh)):
        raise MapMismatch("snapshot was written for a different space or mesh")
    c = np.zeros(dofmap.ndofs)
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            c[int(row["dof_index"])] = float(row["value"])
    return FeFunction(dofmap, c)
