"""Closed-form flows used as references and forcing data."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy as sp

X, Y = sp.symbols("x y", real=True)

KOVASZNAY_DOMAIN = (-0.5, 1.0, -0.5, 1.5)
KOVASZNAY_NU = 1.0 / 40.0
CHANNEL_NU = 1e-3
LATTICE_NU = 1e-6


def _vectorize(expr_list):
    fns = [sp.lambdify((X, Y), e, "numpy") for e in expr_list]

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([np.broadcast_to(np.asarray(g(x, y), dtype=float), x.shape) for g in fns],
                        axis=-1)
    return f


@dataclass(eq=False)
class Flow:
    """Velocity/pressure pair with derived Stokes forcing.

    Callables take points of shape (..., 2). ``pressure`` is shifted by
    ``pressure_shift`` so that it has zero mean where that matters.
    """

    name: str
    u_expr: tuple
    p_expr: object
    nu: float
    f_expr: tuple
    pressure_shift: float = 0.0

    def __post_init__(self):
        self._u = _vectorize(list(self.u_expr))
        self._gu = _vectorize([sp.diff(c, v) for c in self.u_expr for v in (X, Y)])
        self._p = _vectorize([self.p_expr - self.pressure_shift])
        self._gp = _vectorize([sp.diff(self.p_expr, v) for v in (X, Y)])
        self._f = _vectorize(list(self.f_expr))

    def velocity(self, pts):
        return self._u(pts)

    def velocity_gradient(self, pts):
        """(..., 2, 2) with [..., comp, dir]."""
        g = self._gu(pts)
        return g.reshape(g.shape[:-1] + (2, 2))

    def pressure(self, pts):
        return self._p(pts)[..., 0]

    def pressure_gradient(self, pts):
        return self._gp(pts)

    def forcing(self, pts):
        return self._f(pts)


def stokes_flow(name, u_expr, p_expr, nu, pressure_shift=0.0):
    """Flow with f = -nu lap(u) + grad(p)."""
    f = tuple(sp.simplify(-nu * (sp.diff(c, X, 2) + sp.diff(c, Y, 2)) + sp.diff(p_expr, v))
              for c, v in zip(u_expr, (X, Y)))
    return Flow(name, tuple(u_expr), p_expr, nu, f, pressure_shift)


def from_stream_function(name, psi, p_expr, nu, pressure_shift=0.0):
    u = (sp.diff(psi, Y), -sp.diff(psi, X))
    return stokes_flow(name, u, p_expr, nu, pressure_shift)


def kovasznay_lambda(nu=KOVASZNAY_NU):
    return 1.0 / (2.0 * nu) - math.sqrt(1.0 / (4.0 * nu * nu) + 4.0 * math.pi**2)


def kovasznay_pressure_mean(nu=KOVASZNAY_NU):
    """Mean of -exp(2 lam x)/2 over the Kovasznay domain."""
    lam = kovasznay_lambda(nu)
    return -(math.exp(2 * lam) - math.exp(-lam)) / (6.0 * lam)


def kovasznay(nu=KOVASZNAY_NU) -> Flow:
    """Kovasznay flow driven as Stokes flow with f = -(u . grad) u.

    The pressure returned has zero mean on the domain.
    """
    lam = sp.Float(kovasznay_lambda(nu))
    u = (1 - sp.exp(lam * X) * sp.cos(2 * sp.pi * Y),
         lam / (2 * sp.pi) * sp.exp(lam * X) * sp.sin(2 * sp.pi * Y))
    p = -sp.Rational(1, 2) * sp.exp(2 * lam * X)
    f = tuple(-(u[0] * sp.diff(c, X) + u[1] * sp.diff(c, Y)) for c in u)
    return Flow("kovasznay", u, p, nu, f, kovasznay_pressure_mean(nu))


def kovasznay_mesh(n_elements=20):
    """Structured mesh of the Kovasznay domain with cells close to square and
    an element count close to ``n_elements``."""
    from .mesh import generate_rectangle
    best = None
    for ny in range(1, 64):
        nx = max(1, round(0.75 * ny))
        key = (abs(2 * nx * ny - n_elements), ny)
        if best is None or key < best[0]:
            best = (key, nx, ny)
    _, nx, ny = best
    return generate_rectangle(*KOVASZNAY_DOMAIN, nx, ny)


def lattice_initial():
    """Planar lattice flow initial velocity (divergence free, periodic)."""
    u = (sp.sin(2 * sp.pi * X) * sp.sin(2 * sp.pi * Y),
         sp.cos(2 * sp.pi * X) * sp.cos(2 * sp.pi * Y))
    return Flow("lattice", u, sp.Integer(0), LATTICE_NU, (sp.Integer(0), sp.Integer(0)))


def lattice_decay(t, nu=LATTICE_NU):
    """Factor by which the lattice flow's L2 norm decays by time ``t``."""
    return math.exp(-8.0 * math.pi**2 * nu * t)


def manufactured(nu=1.0) -> Flow:
    """Smooth solution on the unit square with u = 0 on the boundary and
    zero-mean pressure."""
    psi = sp.sin(sp.pi * X) ** 2 * sp.sin(sp.pi * Y) ** 2
    p = sp.cos(sp.pi * X) * sp.cos(sp.pi * Y) + X * X - sp.Rational(1, 3)
    return from_stream_function("manufactured", psi, p, nu)


def gradient_forcing(nu=1e-3) -> Flow:
    """f = grad(x^4 + y^4) on the unit square: u = 0, p = phi - mean(phi)."""
    phi = X**4 + Y**4
    f = (sp.diff(phi, X), sp.diff(phi, Y))
    return Flow("gradient", (sp.Integer(0), sp.Integer(0)), phi, nu, f, sp.Rational(2, 5))


def polynomial_flow(k, nu=1.0, seed=0) -> Flow:
    """Random solenoidal u in [P^k]^2 (curl of a degree k+1 stream function)
    with p in P^{k-1}; used for exactness checks."""
    rng = np.random.default_rng(seed)
    psi = sum(sp.Float(rng.uniform(-1, 1)) * X**a * Y**b
              for a in range(k + 2) for b in range(k + 2 - a) if a + b >= 1)
    if k >= 1:
        p = sum(sp.Float(rng.uniform(-1, 1)) * X**a * Y**b
                for a in range(k) for b in range(k - a))
    else:
        p = sp.Integer(0)
    return from_stream_function(f"poly{k}", psi, p, nu)


def channel_inflow(pts, umax=1.5):
    """Parabolic inflow on x = 0 with peak ``umax``; zero elsewhere."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    h = 0.41
    ux = np.where(x < 1e-9, 4.0 * umax * y * (h - y) / (h * h), 0.0)
    return np.stack([ux, np.zeros_like(ux)], axis=-1)
