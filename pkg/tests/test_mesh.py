import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgcut.geometry import Circle, Line
from pgcut.mesh import (
    build_quasi_uniform_mesh,
    build_rectangle_mesh,
    build_uniform_mesh,
    read_mesh,
    select_submesh,
)


def test_single_square():
    m = build_uniform_mesh(1)
    assert m.n_cells == 2 and m.n_vertices == 4
    assert m.signed_areas().sum() == pytest.approx(1.0)


def test_two_by_two_counts():
    m = build_uniform_mesh(2)
    assert m.n_cells == 8 and m.n_vertices == 9


def test_n128_counts_and_hmax():
    m = build_uniform_mesh(128)
    assert m.n_cells == 32768
    assert m.h_max == pytest.approx(math.sqrt(2) / 128, rel=1e-14)
    assert m.spacing == pytest.approx(1 / 128)


def test_default_diagonal_runs_lower_left_to_upper_right():
    m = build_uniform_mesh(1)
    edges = {tuple(sorted(map(tuple, m.vertices[e]))) for e in m.edges}
    assert ((0.0, 0.0), (1.0, 1.0)) in edges
    flipped = build_uniform_mesh(1, flip_diagonal=True)
    edges = {tuple(sorted(map(tuple, flipped.vertices[e]))) for e in flipped.edges}
    assert ((0.0, 1.0), (1.0, 0.0)) in edges


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 12),
    st.integers(1, 12),
    st.floats(-3, 3),
    st.floats(0.1, 5),
    st.floats(-3, 3),
    st.floats(0.1, 5),
    st.booleans(),
)
def test_mesh_invariants(nx, ny, x0, wx, y0, wy, flip):
    m = build_rectangle_mesh(nx, ny, (x0, x0 + wx, y0, y0 + wy), flip)
    areas = m.signed_areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(wx * wy, rel=1e-12)
    f2c = m.face_to_cells
    interior = f2c[:, 1] >= 0
    # boundary faces have one cell, interior faces two; counts match a rectangle
    assert (~interior).sum() == 2 * (nx + ny) == len(m.boundary_faces)
    assert np.all(f2c[interior, 0] != f2c[interior, 1])
    assert np.all(m.boundary_tags > 0)


def test_vertex_to_cells_consistent():
    m = build_uniform_mesh(4)
    for v in range(m.n_vertices):
        cells = m.cells_of_vertex(v)
        assert np.all(np.any(m.cells[cells] == v, axis=1))
        assert len(cells) == np.sum(np.any(m.cells == v, axis=1))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        build_uniform_mesh(0)
    with pytest.raises(ValueError):
        build_uniform_mesh(2, (0.0, 0.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        build_quasi_uniform_mesh(-1)


def test_quasi_uniform_levels():
    m0 = build_quasi_uniform_mesh(0)
    assert m0.shape == (10, 50) and m0.n_cells == 1000
    assert m0.spacing == pytest.approx(0.1)
    m1 = build_quasi_uniform_mesh(1)
    assert round(1 / m1.spacing) == 20
    assert (m1.domain[3] - m1.domain[2]) / m1.shape[1] == pytest.approx(0.01)
    assert 10 * 2**6 == 640


def test_mesh_round_trip(tmp_path):
    m = build_uniform_mesh(3, (-1.0, 1.0, -1.0, 1.0))
    m.write(tmp_path / "m.txt")
    r = read_mesh(tmp_path / "m.txt", m.domain, m.shape)
    np.testing.assert_array_equal(r.cells, m.cells)
    np.testing.assert_allclose(r.vertices, m.vertices, rtol=0, atol=0)


def test_submesh_full_domain():
    m = build_uniform_mesh(8)
    phi = Line(-1.0, 0.0, -0.51)
    for region in (1, 2):
        sub = select_submesh(m, phi, region, m.diameter)
        assert sub.n_cells == m.n_cells


def test_submesh_delta_zero_line():
    m = build_uniform_mesh(16)
    phi = Line(-1.0, 0.0, -0.51)  # region 1 is x < 0.51
    sub = select_submesh(m, phi, 1, 0.0)
    xmin = m.vertices[m.cells][:, :, 0].min(axis=1)
    np.testing.assert_array_equal(sub.active_cells, np.flatnonzero(xmin <= 0.51))


def test_submesh_circle_against_brute_force():
    m = build_uniform_mesh(32, (-1.0, 1.0, -1.0, 1.0))
    phi = Circle((0.0, 0.0), 0.75)
    delta = 6 * m.spacing
    sub = select_submesh(m, phi, 1, delta)
    # dist(x, disc) = max(0, r - 0.75) sampled on a fine per-cell grid plus the exact minimum
    g = np.linspace(0, 1, 21)
    a, b = np.meshgrid(g, g)
    keep = a + b <= 1
    ref = np.column_stack([a[keep], b[keep]])
    X = m.vertices[m.cells]
    pts = X[:, None, 0] + ref[None, :, 0:1] * (X[:, None, 1] - X[:, None, 0]) + ref[None, :, 1:2] * (
        X[:, None, 2] - X[:, None, 0]
    )
    dist = np.maximum(0.0, np.linalg.norm(pts, axis=2) - 0.75).min(axis=1)
    brute = dist <= delta
    active = sub.mask()
    assert np.all(active[brute])
    # cells the sampling misses must still be within one sample spacing of the band
    spare = active & ~brute
    assert np.all(dist[spare] <= delta + m.h_max / 20)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.0, 0.3), st.floats(0.0, 0.3))
def test_submesh_monotone_and_covering(c, d1, d2):
    m = build_uniform_mesh(10)
    phi = Line(-1.0, 0.0, -c)
    lo, hi = sorted((d1, d2))
    for region in (1, 2):
        a = select_submesh(m, phi, region, lo).mask()
        b = select_submesh(m, phi, region, hi).mask()
        assert np.all(b[a])
    # every point of region 1 lies in an active cell
    sub = select_submesh(m, phi, 1, lo).mask()
    xs = m.vertices[m.cells].mean(axis=1)
    assert np.all(sub[xs[:, 0] < c])


def test_submesh_errors():
    m = build_uniform_mesh(2)
    phi = Line(1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        select_submesh(m, phi, 3, 0.0)
    with pytest.raises(ValueError):
        select_submesh(m, phi, 1, -0.1)
