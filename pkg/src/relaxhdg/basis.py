"""Reference-element polynomial bases, quadrature rules and the BDM element.

The reference triangle has vertices (0,0), (1,0), (0,1). Local facet ``i`` runs
from vertex ``i+1`` to vertex ``i+2`` (mod 3), i.e. it is the facet opposite
vertex ``i``; the reference facet parameter is ``t in [0, 1]``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy import special

from .errors import SingularElement

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_AREA = 0.5


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def facet_points(i, t):
    """Reference coordinates of points with parameter ``t`` on local facet ``i``."""
    a = REF_VERTICES[(i + 1) % 3]
    b = REF_VERTICES[(i + 2) % 3]
    return a + np.outer(np.asarray(t, dtype=float), b - a)


def facet_scaled_normal(i):
    """Outward normal of reference facet ``i`` scaled by the facet length."""
    e = REF_VERTICES[(i + 2) % 3] - REF_VERTICES[(i + 1) % 3]
    return np.array([e[1], -e[0]])


# --------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __len__(self):
        return len(self.weights)


@functools.lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``n`` points on [0, 1]."""
    if n < 1:
        raise ValueError("gauss_rule needs n >= 1")
    x, w = npleg.leggauss(n)
    return QuadratureRule(_frozen(0.5 * (x + 1.0)), _frozen(0.5 * w), 2 * n - 1)


@functools.lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed (Duffy) Gauss x Gauss-Jacobi rule on the reference triangle.

    ``x = xi (1 - eta)``, ``y = eta``; the Jacobian factor ``1 - eta`` is
    absorbed into a Gauss-Jacobi(1, 0) rule in ``eta``.
    """
    if degree < 0:
        raise ValueError("triangle_rule needs degree >= 0")
    n = max(1, (degree + 2) // 2)
    g = gauss_rule(n)
    tj, wj = special.roots_jacobi(n, 1.0, 0.0)
    eta = 0.5 * (1.0 + tj)
    weta = 0.25 * wj
    xi, wxi = g.points, g.weights
    X = np.outer(1.0 - eta, xi)
    Y = np.repeat(eta[:, None], n, axis=1)
    W = np.outer(weta, wxi)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(_frozen(pts), _frozen(W.ravel()), 2 * n - 1)


# --------------------------------------------------------------------------
# scalar bases

def _dubiner_tabulate(k, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    s = 2.0 * y - 1.0
    g = 2.0 * x - 1.0 + y           # a (1 - s) / 2 of the collapsed coordinates
    e = 1.0 - y                      # (1 - s) / 2
    npts = len(x)
    L = np.zeros((k + 1, npts))
    Lr = np.zeros((k + 1, npts))
    Ls = np.zeros((k + 1, npts))
    L[0] = 1.0
    if k >= 1:
        L[1] = g
        Lr[1] = 1.0
        Ls[1] = 0.5
    for p in range(1, k):
        a1 = (2 * p + 1) / (p + 1)
        a2 = p / (p + 1)
        L[p + 1] = a1 * g * L[p] - a2 * e**2 * L[p - 1]
        Lr[p + 1] = a1 * (L[p] + g * Lr[p]) - a2 * e**2 * Lr[p - 1]
        Ls[p + 1] = a1 * (0.5 * L[p] + g * Ls[p]) - a2 * (-e * L[p - 1] + e**2 * Ls[p - 1])

    n = (k + 1) * (k + 2) // 2
    vals = np.empty((npts, n))
    grads = np.empty((npts, n, 2))
    idx = 0
    for deg in range(k + 1):
        for p in range(deg + 1):
            q = deg - p
            c = np.sqrt(2.0 * (2 * p + 1) * (p + q + 1))
            J = special.eval_jacobi(q, 2 * p + 1, 0, s)
            if q > 0:
                dJ = 0.5 * (q + 2 * p + 2) * special.eval_jacobi(q - 1, 2 * p + 2, 1, s)
            else:
                dJ = np.zeros_like(s)
            vals[:, idx] = c * L[p] * J
            # d/dx = 2 d/dr, d/dy = 2 d/ds
            grads[:, idx, 0] = 2.0 * c * Lr[p] * J
            grads[:, idx, 1] = 2.0 * c * (Ls[p] * J + L[p] * dJ)
            idx += 1
    return vals, grads


def _legendre_tabulate(k, t):
    t = np.asarray(t, dtype=float).ravel()
    z = 2.0 * t - 1.0
    vals = np.empty((len(t), k + 1))
    ders = np.empty((len(t), k + 1, 1))
    for d in range(k + 1):
        c = np.sqrt(2 * d + 1)
        vals[:, d] = c * special.eval_legendre(d, z)
        if d > 0:
            ders[:, d, 0] = 2.0 * c * 0.5 * (d + 1) * special.eval_jacobi(d - 1, 1, 1, z)
        else:
            ders[:, d, 0] = 0.0
    return vals, ders


@dataclass(frozen=True)
class ScalarBasis:
    """Orthonormal polynomial basis on the reference triangle or [0, 1]."""

    order: int
    domain: str  # "triangle" or "interval"
    orthonormal: bool = True

    @property
    def size(self):
        if self.domain == "triangle":
            return (self.order + 1) * (self.order + 2) // 2
        return self.order + 1

    def tabulate(self, points):
        """Return ``(values, gradients)`` with shapes (npts, n) and (npts, n, dim)."""
        if self.domain == "triangle":
            return _dubiner_tabulate(self.order, points)
        return _legendre_tabulate(self.order, points)

    def values(self, points):
        return self.tabulate(points)[0]

    def gradients(self, points):
        return self.tabulate(points)[1]


def dubiner_basis(k: int) -> ScalarBasis:
    """L2-orthonormal basis of P^k on the reference triangle (area 1/2)."""
    if k < 0:
        raise ValueError("order must be >= 0")
    return ScalarBasis(k, "triangle")


def legendre_facet_basis(k: int) -> ScalarBasis:
    """Shifted, L2(0,1)-orthonormal Legendre polynomials of degree 0..k."""
    if k < 0:
        raise ValueError("order must be >= 0")
    return ScalarBasis(k, "interval")


def dim_p(k):
    """Dimension of P^k on a triangle (0 for negative k)."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


# --------------------------------------------------------------------------
# BDM element

@functools.lru_cache(maxsize=None)
def _complement_modes(k):
    """Orthonormal modal coefficients (2 * dim P^k, k-1) of the fields in [P^k]^2
    with vanishing normal trace that are L2-orthogonal to [P^{k-2}]^2.

    Dubiner modes are orthonormal and hierarchical, so both conditions are
    linear constraints on the modal coefficients.
    """
    n = dim_p(k)
    frule = gauss_rule(k + 1)
    leg = _legendre_tabulate(k, frule.points)[0]
    rows = []
    for i in range(3):
        v = _dubiner_tabulate(k, facet_points(i, frule.points))[0]     # (q, n)
        nu = facet_scaled_normal(i)
        rows.append(np.einsum("qd,q,qm->dm", leg, frule.weights,
                              np.concatenate([v * nu[0], v * nu[1]], axis=1)))
    low = np.zeros((2 * dim_p(k - 2), 2 * n))
    m = dim_p(k - 2)
    low[np.arange(m), np.arange(m)] = 1.0
    low[m + np.arange(m), n + np.arange(m)] = 1.0
    C = np.vstack(rows + [low])
    _, sv, vt = np.linalg.svd(C)
    return vt[-(k - 1):].T


def _complement_tests(k, pts):
    """Test fields for the k-1 complement moments, tabulated at ``pts``."""
    pts = np.atleast_2d(pts)
    if k < 2:
        return np.zeros((len(pts), 0, 2))
    v = _dubiner_tabulate(k, pts)[0]
    n = v.shape[1]
    c = _complement_modes(k)
    return np.stack([v @ c[:n], v @ c[n:]], axis=-1)


@dataclass(frozen=True, eq=False)
class BdmElement:
    """Dual (nodal) basis of [P^k]^2 for the BDM degrees of freedom.

    DOF ordering: facet moments ``i*(k+1) + d`` for facet ``i`` and Legendre
    degree ``d``; then the [P^{k-2}]^2 interior moments (component-major);
    then ``k-1`` moments against an orthonormal basis of the divergence-free
    complement: fields with zero normal trace orthogonal to [P^{k-2}]^2.
    """

    order: int
    coefficients: np.ndarray   # (nmodal, ndof): modal -> dual
    dof_kinds: tuple
    condition: float

    @property
    def ndofs(self):
        return (self.order + 1) * (self.order + 2)

    @property
    def n_facet_dofs(self):
        return 3 * (self.order + 1)

    @property
    def n_interior_moments(self):
        return 2 * dim_p(self.order - 2)

    @property
    def n_complement(self):
        return self.order - 1

    def facet_dof(self, i, d):
        return i * (self.order + 1) + d

    @property
    def top_dofs(self):
        return np.array([self.facet_dof(i, self.order) for i in range(3)])

    @property
    def interior_slice(self):
        s = self.n_facet_dofs
        return slice(s, s + self.n_interior_moments)

    @property
    def complement_slice(self):
        s = self.n_facet_dofs + self.n_interior_moments
        return slice(s, s + self.n_complement)

    def modal_tabulate(self, points):
        k = self.order
        v, g = _dubiner_tabulate(k, points)
        n = v.shape[1]
        vals = np.zeros((v.shape[0], 2 * n, 2))
        grads = np.zeros((v.shape[0], 2 * n, 2, 2))
        for c in range(2):
            vals[:, c * n:(c + 1) * n, c] = v
            grads[:, c * n:(c + 1) * n, c, :] = g
        return vals, grads

    def tabulate(self, points):
        """Values (npts, ndof, 2) and gradients (npts, ndof, comp, dir)."""
        mv, mg = self.modal_tabulate(points)
        C = self.coefficients
        return (np.einsum("qmc,mn->qnc", mv, C),
                np.einsum("qmcd,mn->qncd", mg, C))

    def dof_functionals(self, vol_rule, vol_values, facet_rule, facet_values):
        """Apply all DOF functionals to sampled reference vector fields.

        ``vol_values``: (..., nvq, 2) at ``vol_rule`` points;
        ``facet_values``: (..., 3, nfq, 2) at ``facet_rule`` points of each
        local facet in local parameter order. Returns (..., ndof).
        """
        k = self.order
        out = []
        leg = _legendre_tabulate(k, facet_rule.points)[0]
        for i in range(3):
            nu = facet_scaled_normal(i)
            vn = facet_values[..., i, :, :] @ nu
            out.append(np.einsum("...q,q,qd->...d", vn, facet_rule.weights, leg))
        if k >= 2:
            phi = _dubiner_tabulate(k - 2, vol_rule.points)[0]
            for c in range(2):
                out.append(np.einsum("...q,q,qj->...j", vol_values[..., c],
                                     vol_rule.weights, phi))
            tests = _complement_tests(k, vol_rule.points)
            out.append(np.einsum("...qc,q,qac->...a", vol_values, vol_rule.weights, tests))
        return np.concatenate(out, axis=-1)


@functools.lru_cache(maxsize=None)
def build_bdm_element(k: int) -> BdmElement:
    """Construct the dual BDM_k basis by inverting the DOF/modal Vandermonde."""
    if k < 1:
        raise ValueError("BDM order must be >= 1")
    frule = gauss_rule(k + 1)
    vrule = triangle_rule(2 * k)
    proto = BdmElement(k, np.eye(2 * dim_p(k)), (), 1.0)
    fvals = np.stack([proto.modal_tabulate(facet_points(i, frule.points))[0]
                      for i in range(3)])                    # (3, q, m, 2)
    vvals = proto.modal_tabulate(vrule.points)[0]            # (q, m, 2)
    D = proto.dof_functionals(vrule, np.moveaxis(vvals, 1, 0), frule,
                              np.moveaxis(fvals, 2, 0))      # (m, ndof)
    D = D.T
    cond = np.linalg.cond(D)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularElement(f"BDM{k} DOF matrix condition {cond:.3e}")
    C = np.linalg.solve(D, np.eye(D.shape[0]))
    kinds = ([("facet", i, d) for i in range(3) for d in range(k + 1)]
             + [("interior", c, j) for c in range(2) for j in range(dim_p(k - 2))]
             + [("complement", a) for a in range(k - 1)])
    return BdmElement(k, _frozen(C), tuple(kinds), float(cond))
