"""Triangular meshes: facet connectivity, affine maps, generators and file I/O."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .errors import MeshGenerationFailure, ParseError, TopologyError

BOUNDARY_TAGS = ("dirichlet", "inflow", "outflow", "wall", "periodic_master", "periodic_slave")
ALL_TAGS = ("interior",) + BOUNDARY_TAGS
DIRICHLET_TAGS = frozenset({"dirichlet", "inflow", "wall"})

CHANNEL_LENGTH = 2.2
CHANNEL_HEIGHT = 0.41
CYLINDER_CENTER = (0.2, 0.2)
CYLINDER_RADIUS = 0.05
DEFAULT_CHANNEL_H = 0.075   # gives roughly 550 elements


@dataclass(frozen=True)
class AffineMap:
    """x = translation + jacobian @ xhat for one element."""

    element: int
    jacobian: np.ndarray
    det: float
    inverse_transpose: np.ndarray
    translation: np.ndarray

    def __call__(self, xhat):
        return np.asarray(xhat) @ self.jacobian.T + self.translation

    def inverse(self, x):
        return (np.asarray(x) - self.translation) @ self.inverse_transpose


@dataclass(frozen=True, eq=False)
class LogicalFacets:
    """Two-sided facet table: periodic slaves are folded into their master.

    Side 1 of an exterior facet is -1 in ``elements``/``local``/``geometric``
    and 0 in ``orientation``. ``of_element[t, i]`` / ``side_of_element[t, i]``
    locate local facet ``i`` of element ``t``.
    """

    facet: np.ndarray          # (nL,) geometric facet of side 0
    elements: np.ndarray       # (nL, 2)
    local: np.ndarray          # (nL, 2)
    orientation: np.ndarray    # (nL, 2)
    geometric: np.ndarray      # (nL, 2)
    tags: np.ndarray           # (nL,)
    of_element: np.ndarray     # (nT, 3)
    side_of_element: np.ndarray

    def __len__(self):
        return len(self.facet)

    @property
    def two_sided(self):
        return self.elements[:, 1] >= 0

    @classmethod
    def build(cls, mesh):
        nF = mesh.n_facets
        slave = np.zeros(nF, dtype=bool)
        partner = -np.ones(nF, dtype=int)
        for m, s in mesh.periodic_pairs:
            slave[s] = True
            partner[m] = s
        ids = np.flatnonzero(~slave)
        fe, fl, fo = mesh.facet_elements, mesh.facet_local, mesh.facet_orientation
        E = fe[ids].copy()
        L = fl[ids].copy()
        O = fo[ids].copy()
        G = np.column_stack([ids, np.where(fe[ids, 1] >= 0, ids, -1)])
        per = partner[ids] >= 0
        s = partner[ids][per]
        E[per, 1], L[per, 1], O[per, 1], G[per, 1] = fe[s, 0], fl[s, 0], fo[s, 0], s
        tags = mesh.tag_array[ids].copy()
        tags[per] = "interior"
        of_el = -np.ones((mesh.n_elements, 3), dtype=int)
        side = -np.ones((mesh.n_elements, 3), dtype=int)
        for sd in range(2):
            ok = E[:, sd] >= 0
            of_el[E[ok, sd], L[ok, sd]] = np.flatnonzero(ok)
            side[E[ok, sd], L[ok, sd]] = sd
        return cls(ids, E, L, O, G, tags, of_el, side)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D triangulation.

    ``facets[f]`` holds the facet's vertex pair in its global direction
    (lower to higher vertex index, except periodic slaves, which follow the
    direction of their master). ``facet_orientation[f, s]`` is +1 when the
    local direction of side ``s`` (vertex i+1 -> i+2 of its element) agrees
    with the global direction, -1 otherwise and 0 for a missing side.
    """

    vertices: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    facet_elements: np.ndarray
    facet_local: np.ndarray
    facet_orientation: np.ndarray
    element_facets: np.ndarray
    boundary_tags: tuple
    periodic_pairs: np.ndarray
    facet_groups: dict = field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_facets(self):
        return len(self.facets)

    @functools.cached_property
    def tag_array(self):
        return np.array(self.boundary_tags)

    @functools.cached_property
    def exterior_facets(self):
        return np.flatnonzero(self.facet_elements[:, 1] < 0)

    def facets_with_tag(self, *tags):
        if len(tags) == 1 and not isinstance(tags[0], str):
            tags = tuple(tags[0])
        sel = np.zeros(self.n_facets, dtype=bool)
        for t in tags:
            if t in self.facet_groups:
                sel[self.facet_groups[t]] = True
            else:
                sel |= self.tag_array == t
        return np.flatnonzero(sel)

    @functools.cached_property
    def has_outflow(self):
        return bool(np.any(self.tag_array == "outflow"))

    @functools.cached_property
    def periodic_master_of(self):
        """Logical facet id: master for periodic slaves, itself otherwise."""
        owner = np.arange(self.n_facets)
        if len(self.periodic_pairs):
            owner[self.periodic_pairs[:, 1]] = self.periodic_pairs[:, 0]
        return owner

    @functools.cached_property
    def logical_facets(self):
        """Facets with periodic pairs merged into one two-sided facet."""
        return LogicalFacets.build(self)

    @functools.cached_property
    def neighbors(self):
        """(nT, 3) element across each local facet (periodic resolved), -1 if none,
        and the matching local facet index in that element."""
        nb = -np.ones((self.n_elements, 3), dtype=int)
        nl = -np.ones((self.n_elements, 3), dtype=int)
        fe, fl = self.facet_elements, self.facet_local
        inner = np.flatnonzero(fe[:, 1] >= 0)
        nb[fe[inner, 0], fl[inner, 0]] = fe[inner, 1]
        nl[fe[inner, 0], fl[inner, 0]] = fl[inner, 1]
        nb[fe[inner, 1], fl[inner, 1]] = fe[inner, 0]
        nl[fe[inner, 1], fl[inner, 1]] = fl[inner, 0]
        for m, s in self.periodic_pairs:
            tm, lm = fe[m, 0], fl[m, 0]
            ts, ls = fe[s, 0], fl[s, 0]
            nb[tm, lm], nl[tm, lm] = ts, ls
            nb[ts, ls], nl[ts, ls] = tm, lm
        return nb, nl

    @functools.cached_property
    def element_orientation(self):
        """(nT, 3) orientation sign of each element's local facets."""
        out = np.zeros((self.n_elements, 3), dtype=int)
        for s in range(2):
            ok = self.facet_elements[:, s] >= 0
            out[self.facet_elements[ok, s], self.facet_local[ok, s]] = self.facet_orientation[ok, s]
        return out

    # -- geometry ----------------------------------------------------------
    @functools.cached_property
    def jacobians(self):
        p = self.vertices[self.elements]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @functools.cached_property
    def dets(self):
        J = self.jacobians
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @functools.cached_property
    def inverse_jacobians(self):
        J = self.jacobians
        d = self.dets
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / d
        inv[:, 1, 1] = J[:, 0, 0] / d
        inv[:, 0, 1] = -J[:, 0, 1] / d
        inv[:, 1, 0] = -J[:, 1, 0] / d
        return inv

    @functools.cached_property
    def areas(self):
        return 0.5 * self.dets

    @functools.cached_property
    def h_local(self):
        """Element diameter (longest edge)."""
        p = self.vertices[self.elements]
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @functools.cached_property
    def facet_lengths(self):
        v = self.vertices[self.facets]
        return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)

    @functools.cached_property
    def facet_tangents(self):
        """Unit tangent in the global facet direction."""
        v = self.vertices[self.facets]
        d = v[:, 1] - v[:, 0]
        return d / np.linalg.norm(d, axis=1)[:, None]

    @functools.cached_property
    def facet_normals(self):
        """Unit normal: the global tangent rotated clockwise."""
        t = self.facet_tangents
        return np.column_stack([t[:, 1], -t[:, 0]])

    def facet_point(self, f, t):
        """Physical points at global parameter ``t`` along facet ``f``."""
        a, b = self.vertices[self.facets[f]]
        return a + np.outer(np.asarray(t, dtype=float), b - a)

    def outward_normals(self):
        """(nT, 3, 2) outward unit normals of each element's local facets."""
        p = self.vertices[self.elements]
        out = np.empty((self.n_elements, 3, 2))
        for i in range(3):
            e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            nrm = np.column_stack([e[:, 1], -e[:, 0]])
            out[:, i] = nrm / np.linalg.norm(nrm, axis=1)[:, None]
        return out

    def domain_area(self):
        return float(self.areas.sum())

    def with_groups(self, **groups):
        g = dict(self.facet_groups)
        g.update({k: np.asarray(v, dtype=int) for k, v in groups.items()})
        return Mesh(self.vertices, self.elements, self.facets, self.facet_elements,
                    self.facet_local, self.facet_orientation, self.element_facets,
                    self.boundary_tags, self.periodic_pairs, g)

    def transformed(self, matrix=None, shift=(0.0, 0.0)):
        """Rigid/affine image of the mesh (orientation-preserving matrices only)."""
        A = np.eye(2) if matrix is None else np.asarray(matrix, dtype=float)
        if np.linalg.det(A) <= 0:
            raise ValueError("transformation must preserve orientation")
        v = self.vertices @ A.T + np.asarray(shift, dtype=float)
        return Mesh(v, self.elements, self.facets, self.facet_elements, self.facet_local,
                    self.facet_orientation, self.element_facets, self.boundary_tags,
                    self.periodic_pairs, dict(self.facet_groups))


def affine_map(mesh: Mesh, element: int) -> AffineMap:
    J = mesh.jacobians[element]
    return AffineMap(element, J.copy(), float(mesh.dets[element]),
                     mesh.inverse_jacobians[element].T.copy(),
                     mesh.vertices[mesh.elements[element, 0]].copy())


# ---------------------------------------------------------------------------
# construction

def build_mesh(vertices, elements, boundary=None, periodic=(), default_tag=None):
    """Build a :class:`Mesh` from raw arrays.

    ``boundary`` maps a vertex pair (either order) to a tag, or is a callable
    ``(facet_midpoint) -> tag``. ``periodic`` lists (master, slave) pairs of
    vertex pairs. Raises :class:`TopologyError` on invalid input.
    """
    V = np.asarray(vertices, dtype=float)
    E = np.asarray(elements, dtype=int)
    if V.ndim != 2 or V.shape[1] != 2 or E.ndim != 2 or E.shape[1] != 3:
        raise TopologyError("vertices must be (N, 2) and elements (M, 3)")
    if len(E) == 0:
        raise TopologyError("mesh has no elements")
    if E.min() < 0 or E.max() >= len(V):
        raise TopologyError("element references a missing vertex")
    p = V[E]
    area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    if np.any(area2 <= 0):
        bad = np.flatnonzero(area2 <= 0)[:5]
        raise TopologyError(f"elements {bad.tolist()} are not counterclockwise")

    local = np.stack([E[:, [1, 2]], E[:, [2, 0]], E[:, [0, 1]]], axis=1)   # (nT, 3, 2)
    keys = np.sort(local.reshape(-1, 2), axis=1)
    uniq, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if np.any(counts > 2):
        raise TopologyError("a facet is shared by more than two elements")
    nF = len(uniq)
    facet_elements = -np.ones((nF, 2), dtype=int)
    facet_local = -np.ones((nF, 2), dtype=int)
    fill = np.zeros(nF, dtype=int)
    for idx, f in enumerate(inv):
        t, i = divmod(idx, 3)
        s = fill[f]
        facet_elements[f, s] = t
        facet_local[f, s] = i
        fill[f] += 1
    element_facets = inv.reshape(-1, 3)
    facets = uniq.copy()

    tags = ["interior"] * nF
    ext = np.flatnonzero(facet_elements[:, 1] < 0)
    bmap = {}
    if isinstance(boundary, dict):
        bmap = {tuple(sorted(k)): v for k, v in boundary.items()}
    for f in ext:
        key = tuple(facets[f])
        if callable(boundary):
            tag = boundary(V[facets[f]].mean(axis=0))
        else:
            tag = bmap.get(key, default_tag)
        if tag is None:
            raise TopologyError(f"exterior facet {key} has no boundary tag")
        if tag not in BOUNDARY_TAGS:
            raise TopologyError(f"unknown boundary tag {tag!r}")
        tags[f] = tag
    if isinstance(boundary, dict):
        for key in bmap:
            loc = _find_facet(facets, key)
            if loc is None or facet_elements[loc, 1] >= 0:
                raise TopologyError(f"boundary entry {key} is not an exterior facet")

    pairs = []
    for mkey, skey in periodic:
        m = _find_facet(facets, tuple(sorted(mkey)))
        s = _find_facet(facets, tuple(sorted(skey)))
        if m is None or s is None:
            raise TopologyError(f"periodic pair {mkey}/{skey} references no facet")
        pairs.append((m, s))
    pairs = np.array(pairs, dtype=int).reshape(-1, 2)
    for m, s in pairs:
        if facet_elements[m, 1] >= 0 or facet_elements[s, 1] >= 0:
            raise TopologyError("periodic facets must be exterior")
        lm = np.linalg.norm(V[facets[m, 1]] - V[facets[m, 0]])
        ls = np.linalg.norm(V[facets[s, 1]] - V[facets[s, 0]])
        if abs(lm - ls) > 1e-12 * max(lm, ls):
            raise TopologyError("periodic facets differ in length")
        shift = V[facets[s]].mean(axis=0) - V[facets[m]].mean(axis=0)
        a, b = facets[s]
        if np.linalg.norm(V[a] - V[facets[m, 0]] - shift) > 1e-9 * lm:
            facets[s] = (b, a)
        tags[m] = "periodic_master"
        tags[s] = "periodic_slave"

    orient = np.zeros((nF, 2), dtype=int)
    for s in range(2):
        ok = facet_elements[:, s] >= 0
        t = facet_elements[ok, s]
        i = facet_local[ok, s]
        start = E[t, (i + 1) % 3]
        orient[ok, s] = np.where(start == facets[ok, 0], 1, -1)

    return Mesh(V, E, facets, facet_elements, facet_local, orient, element_facets,
                tuple(tags), pairs)


def _find_facet(facets, key):
    key = tuple(sorted(key))
    srt = np.sort(facets, axis=1)
    hit = np.flatnonzero((srt[:, 0] == key[0]) & (srt[:, 1] == key[1]))
    return int(hit[0]) if len(hit) else None


def generate_rectangle(x0, x1, y0, y1, nx, ny, periodic=False, tags=None):
    """Structured mesh of [x0,x1]x[y0,y1] with one diagonal per cell.

    ``tags`` maps side names (left/right/bottom/top) to boundary tags; all
    sides default to ``dirichlet``.
    """
    if nx < 1 or ny < 1:
        raise ValueError("need at least one subdivision per side")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    V = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    E = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            E.append((a, b, d))
            E.append((a, d, c))
    sides = {"left": "dirichlet", "right": "dirichlet", "bottom": "dirichlet", "top": "dirichlet"}
    sides.update(tags or {})
    boundary = {}
    for j in range(ny):
        boundary[(vid(0, j), vid(0, j + 1))] = sides["left"]
        boundary[(vid(nx, j), vid(nx, j + 1))] = sides["right"]
    for i in range(nx):
        boundary[(vid(i, 0), vid(i + 1, 0))] = sides["bottom"]
        boundary[(vid(i, ny), vid(i + 1, ny))] = sides["top"]
    pairs = []
    if periodic:
        for j in range(ny):
            pairs.append(((vid(0, j), vid(0, j + 1)), (vid(nx, j), vid(nx, j + 1))))
        for i in range(nx):
            pairs.append(((vid(i, 0), vid(i + 1, 0)), (vid(i, ny), vid(i + 1, ny))))
        for key in list(boundary):
            boundary[key] = "dirichlet"   # overwritten by the periodic tags
    return build_mesh(V, np.array(E), boundary, pairs)


def generate_unit_square(n: int, periodic: bool = False) -> Mesh:
    """2 n^2 right triangles on [0, 1]^2, diagonals all in the same direction."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return generate_rectangle(0.0, 1.0, 0.0, 1.0, n, n, periodic=periodic)


# ---------------------------------------------------------------------------
# channel with cylinder

def _channel_sdf(p):
    x, y = p[:, 0], p[:, 1]
    d_rect = -np.minimum.reduce([x, CHANNEL_LENGTH - x, y, CHANNEL_HEIGHT - y])
    r = np.hypot(x - CYLINDER_CENTER[0], y - CYLINDER_CENTER[1])
    return np.maximum(d_rect, CYLINDER_RADIUS - r)


def _walk(a, b, size):
    """Points from a to b (a included, b excluded) with spacing following ``size``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    L = np.linalg.norm(b - a)
    s, pts = 0.0, []
    fine = np.linspace(0.0, 1.0, 2001)
    hs = size(a + np.outer(fine, b - a))
    # integrate 1/h to place points at equal "size units"
    dens = np.concatenate([[0.0], np.cumsum(0.5 * (1 / hs[1:] + 1 / hs[:-1]) * np.diff(fine) * L)])
    n = max(1, int(math.ceil(dens[-1])))
    targets = np.linspace(0.0, dens[-1], n + 1)[:-1]
    s = np.interp(targets, dens, fine)
    pts = a + np.outer(s, b - a)
    return pts


def generate_channel_cylinder(h_target: float, *, grading: float = 0.35,
                              n_cylinder: int | None = None, iterations: int = 80,
                              seed: int = 0) -> Mesh:
    """Unstructured mesh of the 2D-2Z channel with a polygonal cylinder hole.

    Point placement follows a size field ``min(h_target, h_c + grading * d)``
    where ``d`` is the distance to the cylinder and ``h_c`` its chord length;
    interior points are relaxed by spring forces and re-triangulated with
    Delaunay (distmesh style). Boundary points stay fixed.
    """
    if not 0.0 < h_target < CHANNEL_HEIGHT:
        raise ValueError("h_target must lie in (0, 0.41)")
    r = CYLINDER_RADIUS
    c = np.array(CYLINDER_CENTER)
    if n_cylinder is None:
        n_cylinder = max(16, int(math.ceil(math.pi / math.asin(min(1.0, h_target / (2 * r))))))
    chord = 2 * r * math.sin(math.pi / n_cylinder)
    if chord > h_target * (1 + 1e-12):
        raise MeshGenerationFailure("cylinder polygon too coarse for h_target")

    def size(p):
        d = np.abs(np.hypot(p[:, 0] - c[0], p[:, 1] - c[1]) - r)
        return np.minimum(h_target, chord + grading * d)

    ang = 2 * np.pi * np.arange(n_cylinder) / n_cylinder
    cyl = c + r * np.column_stack([np.cos(ang), np.sin(ang)])
    corners = [(0, 0), (CHANNEL_LENGTH, 0), (CHANNEL_LENGTH, CHANNEL_HEIGHT), (0, CHANNEL_HEIGHT)]
    outer = np.vstack([_walk(corners[i], corners[(i + 1) % 4], size) for i in range(4)])
    fixed = np.vstack([outer, cyl])

    rng = np.random.default_rng(seed)
    h0 = chord
    gx = np.arange(h0, CHANNEL_LENGTH, h0)
    gy = np.arange(h0, CHANNEL_HEIGHT, h0 * np.sqrt(3) / 2)
    GX, GY = np.meshgrid(gx, gy)
    GX = GX + (np.arange(len(gy))[:, None] % 2) * h0 / 2
    cand = np.column_stack([GX.ravel(), GY.ravel()])
    hmin_bnd = size(fixed).min()
    cand = cand[_channel_sdf(cand) < -0.5 * hmin_bnd]
    keep = rng.random(len(cand)) < (chord / size(cand)) ** 2
    pts = cand[keep]

    nfix = len(fixed)
    deps = 1e-8 * h_target
    for _ in range(iterations):
        allp = np.vstack([fixed, pts])
        tri = _triangulate(allp)
        edges = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        vec = allp[edges[:, 0]] - allp[edges[:, 1]]
        L = np.linalg.norm(vec, axis=1)
        hb = size(0.5 * (allp[edges[:, 0]] + allp[edges[:, 1]]))
        L0 = hb * 1.2 * np.sqrt(np.sum(L**2) / np.sum(hb**2))
        F = np.maximum(L0 - L, 0.0)
        Fv = (F / L)[:, None] * vec
        force = np.zeros_like(allp)
        np.add.at(force, edges[:, 0], Fv)
        np.add.at(force, edges[:, 1], -Fv)
        pts = pts + 0.2 * force[nfix:]
        d = _channel_sdf(pts)
        out = d > -0.3 * size(pts)
        if np.any(out):
            q = pts[out]
            dx = (_channel_sdf(q + [deps, 0]) - d[out]) / deps
            dy = (_channel_sdf(q + [0, deps]) - d[out]) / deps
            push = d[out] + 0.3 * size(q)
            q = q - np.column_stack([push * dx, push * dy])
            pts[out] = q
        pts = pts[_channel_sdf(pts) < -0.1 * size(pts)]

    allp = np.vstack([fixed, pts])
    tri = _triangulate(allp)
    return _finish_channel(allp, tri, cyl, h_target)


def _triangulate(points):
    tri = Delaunay(points).simplices
    cen = points[tri].mean(axis=1)
    inside = np.hypot(cen[:, 0] - CYLINDER_CENTER[0], cen[:, 1] - CYLINDER_CENTER[1]) > CYLINDER_RADIUS
    return tri[inside]


def _finish_channel(points, tri, cyl, h_target):
    p = points[tri]
    a2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
          - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    tri = np.where((a2 < 0)[:, None], tri[:, [0, 2, 1]], tri)
    a2 = np.abs(a2)
    if np.any(a2 < 1e-14):
        raise MeshGenerationFailure("degenerate triangle produced")
    used = np.unique(tri)
    remap = -np.ones(len(points), dtype=int)
    remap[used] = np.arange(len(used))
    V = points[used]
    E = remap[tri]
    ncyl = len(cyl)
    eps = 1e-9

    def tagger(mid):
        if mid[0] < eps:
            return "inflow"
        if mid[0] > CHANNEL_LENGTH - eps:
            return "outflow"
        return "wall"

    mesh = build_mesh(V, E, tagger)
    poly_area = 0.5 * ncyl * CYLINDER_RADIUS**2 * math.sin(2 * math.pi / ncyl)
    expect = CHANNEL_LENGTH * CHANNEL_HEIGHT - poly_area
    if abs(mesh.domain_area() - expect) > 1e-10 * expect:
        raise MeshGenerationFailure("triangulation does not cover the channel")
    ext = mesh.exterior_facets
    mid = mesh.vertices[mesh.facets[ext]].mean(axis=1)
    rr = np.hypot(mid[:, 0] - CYLINDER_CENTER[0], mid[:, 1] - CYLINDER_CENTER[1])
    on_cyl = ext[rr < CYLINDER_RADIUS + 1e-9]
    if len(on_cyl) != ncyl:
        raise MeshGenerationFailure("cylinder polygon edges were not recovered")
    if mesh.facet_lengths[on_cyl].max() > h_target * (1 + 1e-9):
        raise MeshGenerationFailure("cylinder chord exceeds h_target")
    return mesh.with_groups(cylinder=on_cyl)


# ---------------------------------------------------------------------------
# text format

def _strip(line):
    return line.split("#", 1)[0].strip()


def read_mesh(path) -> Mesh:
    """Read the whitespace-separated text format (see :func:`write_mesh`)."""
    text = Path(path).read_text()
    return parse_mesh(text)


def parse_mesh(text: str) -> Mesh:
    lines = [l for l in (_strip(x) for x in text.splitlines()) if l]
    pos = 0

    def header(name, required=True):
        nonlocal pos
        if pos >= len(lines):
            if required:
                raise ParseError(f"missing section {name!r}")
            return None
        parts = lines[pos].split()
        if parts[0] != name:
            if required:
                raise ParseError(f"expected section {name!r}, got {lines[pos]!r}")
            return None
        if len(parts) != 2:
            raise ParseError(f"bad header {lines[pos]!r}")
        try:
            n = int(parts[1])
        except ValueError as exc:
            raise ParseError(f"bad count in {lines[pos]!r}") from exc
        pos += 1
        if pos + n > len(lines):
            raise ParseError(f"section {name!r} truncated")
        block = [lines[pos + i].split() for i in range(n)]
        pos += n
        return block

    try:
        verts = np.array([[float(a) for a in row] for row in header("vertices")])
        elems = np.array([[int(a) for a in row] for row in header("elements")], dtype=int)
        bnd = header("boundary")
        bedges = [(int(r[0]), int(r[1]), r[2]) for r in bnd]
        per = header("periodic", required=False) or []
        per = [(int(r[0]), int(r[1])) for r in per]
    except (ValueError, IndexError) as exc:
        raise ParseError(str(exc)) from exc
    if pos != len(lines):
        raise ParseError(f"unexpected content: {lines[pos]!r}")
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise ParseError("vertex lines need two coordinates")
    if elems.ndim != 2 or elems.shape[1] != 3:
        raise ParseError("element lines need three indices")
    boundary = {}
    for a, b, tag in bedges:
        if tag in ("periodic_master", "periodic_slave"):
            tag = "dirichlet"
        boundary[(a, b)] = tag
    pairs = []
    for m, s in per:
        if not (0 <= m < len(bedges) and 0 <= s < len(bedges)):
            raise ParseError("periodic entry references a missing boundary facet")
        pairs.append((bedges[m][:2], bedges[s][:2]))
    mesh = build_mesh(verts, elems, boundary, pairs)
    if len(bedges) != len(mesh.exterior_facets):
        raise TopologyError("boundary section does not list every exterior facet")
    return mesh


def format_mesh(mesh: Mesh) -> str:
    out = [f"vertices {mesh.n_vertices}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"elements {mesh.n_elements}")
    out += [f"{a} {b} {c}" for a, b, c in mesh.elements.tolist()]
    ext = mesh.exterior_facets
    out.append(f"boundary {len(ext)}")
    pos = {}
    for idx, f in enumerate(ext):
        a, b = sorted(mesh.facets[f].tolist())
        out.append(f"{a} {b} {mesh.boundary_tags[f]}")
        pos[f] = idx
    if len(mesh.periodic_pairs):
        out.append(f"periodic {len(mesh.periodic_pairs)}")
        out += [f"{pos[m]} {pos[s]}" for m, s in mesh.periodic_pairs.tolist()]
    return "\n".join(out) + "\n"


def write_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(format_mesh(mesh))


def parse_mesh_spec(spec: str) -> Mesh:
    """``square:N`` | ``square-periodic:N`` | ``channel:H`` | ``file:PATH`` |
    ``rect:x0,x1,y0,y1,nx,ny``."""
    kind, _, arg = spec.partition(":")
    if kind == "square":
        return generate_unit_square(int(arg))
    if kind == "square-periodic":
        return generate_unit_square(int(arg), periodic=True)
    if kind == "channel":
        return generate_channel_cylinder(float(arg))
    if kind == "file":
        return read_mesh(arg)
    if kind == "rect":
        x0, x1, y0, y1, nx, ny = arg.split(",")
        return generate_rectangle(float(x0), float(x1), float(y0), float(y1), int(nx), int(ny))
    raise ValueError(f"unknown mesh spec {spec!r}")
