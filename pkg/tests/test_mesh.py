import math

import numpy as np
import pytest

from relaxhdg.errors import ParseError, TopologyError
from relaxhdg.mesh import (ALL_TAGS, affine_map, build_mesh, format_mesh,
                           generate_channel_cylinder, generate_rectangle,
                           generate_unit_square, parse_mesh, parse_mesh_spec, read_mesh,
                           write_mesh)


def test_unit_square_smallest():
    m = generate_unit_square(1)
    assert (m.n_elements, m.n_facets, len(m.exterior_facets)) == (2, 5, 4)


def test_unit_square_periodic_pairs():
    m = generate_unit_square(1, periodic=True)
    assert len(m.periodic_pairs) == 2
    tags = {m.boundary_tags[f] for f in m.periodic_pairs.ravel()}
    assert tags == {"periodic_master", "periodic_slave"}


def test_unit_square_euler_count():
    m = generate_unit_square(4)
    assert m.n_elements == 32
    assert m.n_facets == 56
    assert m.n_vertices - m.n_facets + m.n_elements == 1


@pytest.mark.parametrize("periodic", [False, True])
def test_incidence_symmetric(periodic):
    m = generate_unit_square(3, periodic)
    for f in range(m.n_facets):
        for side in range(2):
            t = m.facet_elements[f, side]
            if t >= 0:
                assert m.element_facets[t, m.facet_local[f, side]] == f


def test_interior_normals_antiparallel():
    m = generate_channel_cylinder(0.15)
    n = m.outward_normals()
    for f in range(m.n_facets):
        t0, t1 = m.facet_elements[f]
        if t1 >= 0:
            n0 = n[t0, m.facet_local[f, 0]]
            n1 = n[t1, m.facet_local[f, 1]]
            assert np.abs(n0 + n1).max() < 1e-14


def test_area_sums():
    assert generate_unit_square(5).areas.sum() == pytest.approx(1.0, rel=1e-12)
    m = generate_channel_cylinder(0.1)
    hole = 0.5 * m.facet_lengths[m.facet_groups["cylinder"]].sum() * 0.05
    expected = 2.2 * 0.41 - math.pi * 0.05**2
    assert m.areas.sum() == pytest.approx(expected, rel=5e-3)
    # the polygon area equals sum of triangle fans from the centre
    poly = 0.0
    for f in m.facet_groups["cylinder"]:
        a, b = m.vertices[m.facets[f]] - np.array([0.2, 0.2])
        poly += 0.5 * abs(a[0] * b[1] - a[1] * b[0])
    assert m.areas.sum() == pytest.approx(2.2 * 0.41 - poly, rel=1e-12)
    assert poly < math.pi * 0.05**2 and hole > 0


def test_channel_chords_and_tags():
    m = generate_channel_cylinder(0.05)
    chords = m.facet_lengths[m.facet_groups["cylinder"]]
    assert chords.max() <= 0.05 + 1e-12
    ext_tags = {m.boundary_tags[f] for f in m.exterior_facets}
    assert ext_tags == {"inflow", "outflow", "wall"}
    assert m.has_outflow


def test_channel_default_size():
    m = generate_channel_cylinder(0.075)
    assert 400 <= m.n_elements <= 800


def test_affine_identity_and_scaling(rng):
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = build_mesh(V, [[0, 1, 2]], default_tag="dirichlet")
    a = affine_map(m, 0)
    assert np.allclose(a.jacobian, np.eye(2)) and a.det == pytest.approx(1.0)
    m3 = build_mesh(3.0 * V, [[0, 1, 2]], default_tag="dirichlet")
    assert affine_map(m3, 0).det == pytest.approx(9.0)
    P = rng.uniform(-1, 1, (3, 2))
    d1, d2 = P[1] - P[0], P[2] - P[0]
    if d1[0] * d2[1] - d1[1] * d2[0] < 0:
        P = P[[0, 2, 1]]
    mr = build_mesh(P, [[0, 1, 2]], default_tag="dirichlet")
    a = affine_map(mr, 0)
    assert np.abs(a(V) - P).max() < 1e-14
    assert np.abs(a.inverse(P) - V).max() < 1e-12


def test_round_trip(tmp_path):
    m = generate_rectangle(0.0, 2.0, -1.0, 1.0, 3, 2, periodic=True)
    p = tmp_path / "m.txt"
    write_mesh(m, p)
    m2 = read_mesh(p)
    assert format_mesh(m2) == format_mesh(m)
    assert np.array_equal(m2.periodic_pairs, m.periodic_pairs)


def test_two_triangle_file_equals_generated():
    text = """vertices 4
    0 0
    1 0
    0 1
    1 1
    elements 2
    0 1 3
    0 3 2
    boundary 4
    0 1 dirichlet
    0 2 dirichlet
    1 3 dirichlet
    2 3 dirichlet
    """
    m = parse_mesh(text)
    g = generate_unit_square(1)
    assert np.array_equal(m.elements, g.elements)
    assert np.array_equal(m.facets, g.facets)
    assert m.boundary_tags == g.boundary_tags


def test_clockwise_rejected():
    text = "vertices 3\n0 0\n1 0\n0 1\nelements 1\n0 2 1\nboundary 3\n0 1 wall\n1 2 wall\n0 2 wall\n"
    with pytest.raises(TopologyError):
        parse_mesh(text)


@pytest.mark.parametrize("text", ["", "vertices x\n", "vertices 1\n0 0\nelements 1\n0 1\n"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_mesh(text)


def test_mesh_spec():
    assert parse_mesh_spec("square:2").n_elements == 8
    assert len(parse_mesh_spec("square-periodic:2").periodic_pairs) == 4
    with pytest.raises(ValueError):
        parse_mesh_spec("hexagon:3")


def test_tags_are_known():
    m = generate_channel_cylinder(0.1)
    assert set(m.boundary_tags) <= set(ALL_TAGS)


def test_transformed_preserves_topology():
    m = generate_unit_square(2)
    c, s = math.cos(0.3), math.sin(0.3)
    r = m.transformed(np.array([[c, -s], [s, c]]), (1.0, 2.0))
    assert np.allclose(r.areas, m.areas)
    assert np.array_equal(r.facets, m.facets)
