"""Map from the relaxed velocity space onto the normal-conforming BDM space.

The shared degree-k normal mode of an interior facet becomes the mean of its
two one-sided copies; lower facet moments and the [P^{k-2}]^2 interior
moments are kept. The k-1 remaining interior DOFs of each element are then
chosen to minimise the local L2 distance to the input.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .basis import build_bdm_element, triangle_rule
from .errors import MapMismatch
from .spaces import DofMap, FeFunction, build_dofmap, piola_tables


def local_mass(mesh, k):
    """Unsigned physical BDM mass matrices, (nT, n, n)."""
    rule = triangle_rule(2 * k + 2)
    vals = piola_tables(mesh, k, rule.points)[0]
    w = rule.weights[None, :] * mesh.dets[:, None]
    return np.einsum("tq,tqai,tqbi->tab", w, vals, vals)


@dataclass(frozen=True, eq=False)
class ReconstructionOp:
    """Sparse reconstruction ``R`` (conf x relaxed) and embedding ``E``
    (relaxed x conf); ``E @ R`` is the reconstruction seen inside the relaxed
    space."""

    source: DofMap
    target: DofMap
    R: sparse.csr_matrix
    E: sparse.csr_matrix
    completion: np.ndarray      # (nT, k-1, 3): complement response to local top jumps

    @functools.cached_property
    def ER(self):
        return (self.E @ self.R).tocsr()

    def apply(self, coefficients):
        return self.R @ np.asarray(coefficients)

    def composite(self, n_facet):
        """blockdiag(R, I) acting on [W | F] vectors."""
        return sparse.block_diag([self.R, sparse.identity(n_facet)], format="csr")

    def composite_relaxed(self, n_facet):
        """blockdiag(E R, I): reconstruction kept in relaxed coordinates."""
        return sparse.block_diag([self.ER, sparse.identity(n_facet)], format="csr")


def build_reconstruction(source: DofMap) -> ReconstructionOp:
    if source.kind != "W_relaxed":
        raise MapMismatch(f"reconstruction needs a W_relaxed source, got {source.kind}")
    mesh, k = source.mesh, source.order
    target = build_dofmap(mesh, "W_conf", k)
    el = build_bdm_element(k)
    lf = mesh.logical_facets
    nL, nT = len(lf), mesh.n_elements

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(np.ravel(r))
        cols.append(np.ravel(c))
        vals.append(np.ravel(np.broadcast_to(v, np.shape(r))).astype(float))

    put(target.facet_dofs, source.facet_dofs, 1.0)
    two = lf.two_sided
    put(target.top_dofs[~two, 0], source.top_dofs[~two, 0], 1.0)
    put(target.top_dofs[two, 0], source.top_dofs[two, 0], 0.5)
    put(target.top_dofs[two, 0], source.top_dofs[two, 1], 0.5)
    put(target.interior_dofs, source.interior_dofs, 1.0)

    nc = el.n_complement
    completion = np.zeros((nT, nc, 3))
    if nc:
        M = local_mass(mesh, k)
        comp = np.arange(el.ndofs)[el.complement_slice]
        top = el.top_dofs
        Mcc = M[:, comp][:, :, comp]
        Mct = M[:, comp][:, :, top]
        completion = -np.linalg.solve(Mcc, Mct)                  # (nT, nc, 3)
        side = lf.side_of_element
        lid = lf.of_element
        own = source.top_dofs[lid, side]                          # (nT, 3)
        other = source.top_dofs[lid, 1 - side]
        sign = source.cell_signs[:, top]                          # sigma^{k+1}
        has = two[lid]
        coef = 0.5 * completion * (sign * has)[:, None, :]        # (nT, nc, 3)
        tc = target.interior_dofs[:, el.n_interior_moments:]      # (nT, nc)
        tc3 = np.broadcast_to(tc[:, :, None], coef.shape)
        oth = np.broadcast_to(np.where(has, other, 0)[:, None, :], coef.shape)
        ow = np.broadcast_to(own[:, None, :], coef.shape)
        put(tc3, oth, coef)
        put(tc3, ow, -coef)

    R = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(target.ndofs, source.ndofs)).tocsr()
    R.eliminate_zeros()

    er, ec = [], []
    er += [source.facet_dofs.ravel(), source.top_dofs[:, 0], source.top_dofs[two, 1],
           source.interior_dofs.ravel()]
    ec += [target.facet_dofs.ravel(), target.top_dofs[:, 0], target.top_dofs[two, 0],
           target.interior_dofs.ravel()]
    er, ec = np.concatenate(er), np.concatenate(ec)
    E = sparse.csr_matrix((np.ones(len(er)), (er, ec)), shape=(source.ndofs, target.ndofs))
    return ReconstructionOp(source, target, R, E, completion)


@functools.lru_cache(maxsize=16)
def cached_reconstruction(source: DofMap) -> ReconstructionOp:
    return build_reconstruction(source)


def reconstruct(u: FeFunction, op: ReconstructionOp | None = None) -> FeFunction:
    """R_W u as a function on the conforming map."""
    if u.dofmap.kind != "W_relaxed":
        raise MapMismatch(f"reconstruct needs a W_relaxed function, got {u.dofmap.kind}")
    op = op or cached_reconstruction(u.dofmap)
    if op.source is not u.dofmap:
        raise MapMismatch("reconstruction operator belongs to another DOF map")
    return FeFunction(op.target, op.R @ u.coefficients)


def reconstruct_composite(u_w: FeFunction, u_f: FeFunction, op=None):
    """R_U (u_T, u_F) = (R_W u_T, u_F)."""
    return reconstruct(u_w, op), FeFunction(u_f.dofmap, u_f.coefficients.copy())
