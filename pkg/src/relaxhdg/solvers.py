"""Steady Stokes solves, the sparse direct backend and IMEX time stepping."""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from . import assembly
from .basis import build_bdm_element, gauss_rule, triangle_rule
from .errors import BackendFailure, Blowup, SingularSystem
from .mesh import DIRICHLET_TAGS, Mesh
from .reconstruction import cached_reconstruction
from .spaces import (FeFunction, HDGSpace, boundary_values, element_values, interpolate_bdm,
                     interpolate_facet, piola_tables)

SCHEMES = ("IMEX1", "SBDF2")
SEMIDISCS = ("a", "b", "c", "d")


# ---------------------------------------------------------------------------
# linear algebra

class LinearBackend:
    """Sparse LU (SuperLU, COLAMD ordering) with residual control.

    A dense LU is used when the sparse factorization breaks down and the
    system is small enough.
    """

    def __init__(self, matrix, tol=1e-10, max_dim=2_000_000, dense_limit=6000, refine=3):
        self.matrix = sparse.csc_matrix(matrix)
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n):
            raise BackendFailure("system matrix must be square")
        if n > max_dim:
            raise BackendFailure(f"dimension {n} exceeds backend limit {max_dim}")
        self.tol = tol
        self.refine = refine
        self.dense = None
        self.lu = None
        t0 = time.perf_counter()
        try:
            self.lu = spla.splu(self.matrix, permc_spec="COLAMD")
        except RuntimeError as exc:
            if n > dense_limit:
                raise SingularSystem(f"sparse factorization failed: {exc}") from exc
            self._dense_factor()
        self.factor_time = time.perf_counter() - t0

    def _dense_factor(self):
        dense = self.matrix.toarray()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(dense, check_finite=False)
        if np.min(np.abs(np.diag(lu))) <= 1e-14 * np.max(np.abs(np.diag(lu))):
            raise SingularSystem("system matrix is singular")
        self.dense = (lu, piv)

    def _raw(self, b):
        if self.dense is not None:
            return sla.lu_solve(self.dense, b, check_finite=False)
        return self.lu.solve(b)

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        x = self._raw(b)
        for _ in range(self.refine + 1):
            r = b - self.matrix @ x
            rel = np.linalg.norm(r) / nb
            if not np.isfinite(rel):
                break
            if rel <= self.tol:
                self.last_residual = rel
                return x
            x = x + self._raw(r)
        if self.dense is None and self.matrix.shape[0] <= 6000:
            self._dense_factor()
            return self.solve(b)
        raise BackendFailure(f"relative residual {rel:.3e} above {self.tol:.1e}")


def linear_solve(matrix, rhs, tol=1e-10):
    """Solve ``matrix x = rhs`` to relative residual ``tol``."""
    return LinearBackend(matrix, tol=tol).solve(rhs)


# ---------------------------------------------------------------------------
# saddle-point system

@dataclass(eq=False)
class SparseSystem:
    """Block operator [[A_, B^T, 0], [B, 0, r], [0, r^T, 0]] on [W | F | Q | mu].

    ``A_`` is the velocity block (A, or M + dt A when stepping). Dirichlet
    DOFs (velocity numbering) are eliminated with the prescribed values.
    """

    space: HDGSpace
    velocity_block: sparse.csr_matrix
    B: sparse.csr_matrix
    mean_constraint: bool
    fixed: np.ndarray
    fixed_values: np.ndarray
    nu: float = 1.0
    lam: float = assembly.DEFAULT_LAMBDA
    _backend: LinearBackend | None = field(default=None, repr=False)

    @property
    def size(self):
        return self.space.ndofs + int(self.mean_constraint)

    def matrix(self):
        sp = self.space
        blocks = [[self.velocity_block, self.B.T], [self.B, None]]
        K = sparse.bmat(blocks, format="csr")
        if self.mean_constraint:
            r = np.concatenate([np.zeros(sp.n_velocity), assembly.pressure_mean_row(sp)])
            r = sparse.csr_matrix(r[None, :])
            K = sparse.bmat([[K, r.T], [r, None]], format="csr")
        if K.shape[0] != self.size:
            K.resize((self.size, self.size))
        return K

    @property
    def free(self):
        mask = np.ones(self.size, dtype=bool)
        mask[self.fixed] = False
        return np.flatnonzero(mask)

    def reduced(self):
        K = self.matrix().tocsr()
        fr = self.free
        return K[fr][:, fr], K[fr][:, self.fixed]

    def backend(self):
        if self._backend is None:
            Kff, _ = self.reduced()
            try:
                self._backend = LinearBackend(Kff)
            except SingularSystem:
                raise
            self._Kfd = self.reduced()[1]
        return self._backend

    def solve(self, rhs, fixed_values=None):
        """Solve with the full-size right-hand side (length ``size``)."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] < self.size:
            rhs = np.concatenate([rhs, np.zeros(self.size - rhs.shape[0])])
        g = self.fixed_values if fixed_values is None else fixed_values
        be = self.backend()
        fr = self.free
        b = rhs[fr] - self._Kfd @ g
        x = np.zeros(self.size)
        x[fr] = be.solve(b)
        x[self.fixed] = g
        self.last_residual = getattr(be, "last_residual", 0.0)
        return x


def dirichlet_data(space: HDGSpace, g, tags=DIRICHLET_TAGS):
    """Fixed velocity DOFs (composite numbering) and their values."""
    zero = (lambda x: np.zeros_like(x)) if g is None else g
    wi, wv, fi, fv = boundary_values(space.W, space.F, zero, tags)
    idx = np.concatenate([wi, space.nW + fi])
    val = np.concatenate([wv, fv])
    order = np.argsort(idx, kind="stable")
    return idx[order], val[order]


def needs_mean_constraint(mesh: Mesh):
    return not mesh.has_outflow


def build_stokes_system(space: HDGSpace, nu, lam=assembly.DEFAULT_LAMBDA, g=None,
                        velocity_block=None):
    A = assembly.assemble_viscosity(space, nu, lam) if velocity_block is None else velocity_block
    B = assembly.assemble_divergence(space)
    fixed, vals = dirichlet_data(space, g)
    return SparseSystem(space, A, B, needs_mean_constraint(space.mesh), fixed, vals, nu, lam)


# ---------------------------------------------------------------------------
# steady Stokes

@dataclass(eq=False)
class StokesSolution:
    space: HDGSpace
    velocity_w: FeFunction
    velocity_f: FeFunction
    pressure: FeFunction
    nu: float
    variant: str
    residual: float
    divergence_residual: float
    stats: dict
    mean_constrained: bool
    system: SparseSystem | None = None

    @property
    def velocity(self):
        return np.concatenate([self.velocity_w.coefficients, self.velocity_f.coefficients])

    def reconstructed(self):
        """(R_W u_T as relaxed-space coefficients, u_F)."""
        if self.space.conforming:
            return self.velocity_w.copy(), self.velocity_f
        op = cached_reconstruction(self.space.W)
        return FeFunction(self.space.W, op.ER @ self.velocity_w.coefficients), self.velocity_f


def solve_stokes(mesh: Mesh, k: int, nu: float, f=None, bc=None, variant="B",
                 lam=assembly.DEFAULT_LAMBDA, conforming=False, space=None) -> StokesSolution:
    """Steady Stokes with load ``f`` (callable) and Dirichlet data ``bc``.

    ``variant='B'`` tests the load with v, ``'PR'`` with R_U v.
    """
    if variant not in ("B", "PR"):
        raise ValueError(f"unknown variant {variant!r}")
    space = space or HDGSpace.build(mesh, k, conforming)
    t0 = time.perf_counter()
    system = build_stokes_system(space, nu, lam, bc)
    t1 = time.perf_counter()
    rhs = assembly.assemble_rhs(space, f, "plain" if variant == "B" else "reconstructed")
    x = system.solve(rhs)
    t2 = time.perf_counter()
    K = system.matrix()
    full_rhs = np.concatenate([rhs, np.zeros(system.size - len(rhs))])
    res = K @ x - full_rhs
    res[system.fixed] = 0.0
    nrm = max(np.linalg.norm(full_rhs), np.linalg.norm(K @ x), 1e-300)
    uw, uf, p = space.split(x)
    div_res = float(np.abs(system.B @ x[:space.n_velocity]).max()) if space.nQ else 0.0
    stats = {"ndofs": int(system.size), "nnz": int(K.nnz), "assemble_s": t1 - t0,
             "solve_s": t2 - t1}
    return StokesSolution(space, uw, uf, p, nu, variant, float(np.linalg.norm(res) / nrm),
                          div_res, stats, system.mean_constraint, system)


# ---------------------------------------------------------------------------
# unsteady

@dataclass
class FlowState:
    t: float
    velocity: np.ndarray          # [W | F]
    pressure: np.ndarray
    energy: float
    div_max: float
    normal_jump_max: float
    step: int = 0


def kinetic_energy_of(space: HDGSpace, velocity, M=None):
    M = assembly.assemble_mass(space) if M is None else M
    u = np.asarray(velocity)
    return 0.5 * float(u @ (M @ u))


def divergence_max(space: HDGSpace, w_coefficients):
    rule = triangle_rule(2 * space.order + 2)
    g = build_bdm_element(space.order).tabulate(rule.points)[1]
    c = space.W.local_coefficients(w_coefficients)
    d = (c @ np.einsum("qnii->nq", g)) / space.mesh.dets[:, None]
    return float(np.abs(d).max())


def normal_jump_max(space: HDGSpace, w_coefficients):
    """Largest |[u.n]| over facet quadrature points of two-sided facets."""
    k = space.order
    tb = assembly.element_tables(space.mesh, k)
    c = space.W.local_coefficients(w_coefficients)
    vn = np.einsum("tiqnc,tn,tic->tiq", tb.fac_values, c, tb.normals)
    nb, nl = space.mesh.neighbors
    has = nb >= 0
    if not np.any(has):
        return 0.0
    other = vn[nb[has], nl[has]][:, ::-1]
    return float(np.abs(vn[has] + other).max())


class ImexIntegrator:
    """Semi-implicit stepping: Stokes implicit, convection explicit.

    The implicit matrix is factorized once per (dt, nu, lam, scheme stage).
    ``convection=False`` drops the explicit term (Stokes limit).
    """

    def __init__(self, space: HDGSpace, nu, dt, scheme="IMEX1", semidisc="d",
                 post_reconstruct=True, bc=None, force=None, lam=assembly.DEFAULT_LAMBDA,
                 convection=True, blowup_factor=1e3):
        if dt <= 0:
            raise ValueError("time step must be positive")
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        if semidisc not in SEMIDISCS:
            raise ValueError(f"unknown semi-discretization {semidisc!r}")
        self.space, self.nu, self.dt, self.lam = space, nu, dt, lam
        self.scheme, self.semidisc = scheme, semidisc
        self.post_reconstruct = post_reconstruct
        self.bc, self.convection = bc, convection
        self.blowup_factor = blowup_factor
        self.M = assembly.assemble_mass(space)
        self.A = assembly.assemble_viscosity(space, nu, lam)
        self.load = assembly.assemble_rhs(space, force, "reconstructed" if semidisc in "bd" else "plain") \
            if force is not None else np.zeros(space.n_velocity)
        self.recon = None if space.conforming else cached_reconstruction(space.W)
        self._systems = {}
        self._prev = None
        self.initial_energy = None

    # -- operators -------------------------------------------------------
    def system(self, alpha):
        key = round(alpha, 12)
        if key not in self._systems:
            block = (alpha * self.M + self.dt * self.A).tocsr()
            self._systems[key] = build_stokes_system(self.space, self.nu, self.lam, self.bc,
                                                     velocity_block=block)
        return self._systems[key]

    def _er(self, w):
        return w if self.recon is None else self.recon.ER @ w

    def convection_vector(self, velocity):
        """C(.;.,.) of the chosen semi-discretization as a [W | F] vector."""
        sp = self.space
        if not self.convection:
            return np.zeros(sp.n_velocity)
        w = velocity[:sp.nW]
        inflow = self.bc
        if self.semidisc == "a":
            return assembly.apply_convection(sp, w, w, "plain", self.recon, inflow, check=False)
        if self.semidisc == "b":
            return assembly.apply_convection(sp, w, w, "reconstructed", self.recon, inflow, check=False)
        rw = self._er(w)
        if self.semidisc == "c":
            return assembly.apply_convection(sp, rw, w, "plain", self.recon, inflow)
        return assembly.apply_convection(sp, rw, rw, "reconstructed", self.recon, inflow)

    # -- stepping ----------------------------------------------------------
    def _finish(self, x, t, step):
        sp = self.space
        u = x[:sp.n_velocity].copy()
        p = x[sp.n_velocity:sp.ndofs] / self.dt
        if self.post_reconstruct and self.recon is not None:
            u[:sp.nW] = self.recon.ER @ u[:sp.nW]
        return self.make_state(t, u, p, step)

    def make_state(self, t, u, p=None, step=0):
        sp = self.space
        p = np.zeros(sp.nQ) if p is None else p
        e = kinetic_energy_of(sp, u, self.M)
        return FlowState(t, u, p, e, divergence_max(sp, u[:sp.nW]),
                         normal_jump_max(sp, u[:sp.nW]), step)

    def step(self, state: FlowState) -> FlowState:
        if not self.initial_energy:
            self.initial_energy = state.energy     # first nonzero energy is the reference
        dt = self.dt
        c_now = self.convection_vector(state.velocity)
        if self.scheme == "SBDF2" and self._prev is not None and self._prev[0].step == state.step - 1:
            prev, c_prev = self._prev
            rhs = self.M @ (2.0 * state.velocity - 0.5 * prev.velocity) \
                - dt * (2.0 * c_now - c_prev) + dt * self.load
            sysm = self.system(1.5)
        else:
            rhs = self.M @ state.velocity - dt * c_now + dt * self.load
            sysm = self.system(1.0)
        x = sysm.solve(rhs)
        new = self._finish(x, state.t + dt, state.step + 1)
        self._prev = (state, c_now)
        ref = self.initial_energy
        if not np.isfinite(new.energy) or (ref > 0 and new.energy > self.blowup_factor * ref):
            raise Blowup(f"energy {new.energy:.3e} exceeds {self.blowup_factor:g} x initial at t={new.t:.4g}")
        return new


def imex_step(integrator: ImexIntegrator, state: FlowState) -> FlowState:
    return integrator.step(state)


def initial_state(integrator: ImexIntegrator, u0, quad_degree=None):
    """Interpolate ``u0`` (callable) into [W | F]; reconstructed if requested."""
    sp = integrator.space
    w = interpolate_bdm(u0, sp.W, quad_degree).coefficients
    f = interpolate_facet(u0, sp.F).coefficients
    if integrator.post_reconstruct and integrator.recon is not None:
        w = integrator.recon.ER @ w
    return integrator.make_state(0.0, np.concatenate([w, f]))


DIAG_HEADER = ["t", "energy", "div_max", "normal_jump_max"]


def _fmt(v):
    return f"{v:.12e}"


def run_unsteady(integrator: ImexIntegrator, state: FlowState, t_end: float, stride=1,
                 diag_path=None, functionals=None, callback=None, functional_names=("cd", "cl")):
    """Step until ``t_end``; return the list of diagnostic rows and the last state.

    Each row is ``(t, ||u_T||_L2, div_max, normal_jump_max, *extra)`` where
    ``functionals(state)`` returns the extra columns named by
    ``functional_names`` (drag and lift by default).
    """
    nsteps = int(round(t_end / integrator.dt))
    rows = []

    def record(s):
        row = [s.t, np.sqrt(2.0 * s.energy), s.div_max, s.normal_jump_max]
        if functionals is not None:
            row += list(functionals(s))
        rows.append(row)

    record(state)
    for n in range(nsteps):
        state = integrator.step(state)
        if (n + 1) % stride == 0 or n + 1 == nsteps:
            record(state)
        if callback is not None:
            callback(state)
    if diag_path is not None:
        header = DIAG_HEADER + (list(functional_names) if functionals is not None else [])
        with open(diag_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for r in rows:
                wr.writerow([_fmt(v) for v in r])
    return rows, state
