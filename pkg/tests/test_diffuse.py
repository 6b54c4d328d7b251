import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgcut.diffuse import (
    DiffuseOptions,
    assemble_diffuse,
    band_cells,
    closest_point_in_domain,
    diffuse_interface_matrix,
    kappa_at_closest_point,
)
from pgcut.fespace import build_space, interpolate, locate_points
from pgcut.geometry import Circle, Line, classify_and_cut
from pgcut.mesh import build_uniform_mesh, select_submesh
from pgcut.nitsche import assemble_sharp
from pgcut.problems import catalog, convection_line, l2_error

from cases import build, patch_problem


def test_kappa_at_closest_point():
    mesh = build_uniform_mesh(4)
    cut = classify_and_cut(mesh, Line(-1.0, 0.0, -0.3))  # region 1 is x < 0.3
    k1, k2 = kappa_at_closest_point(cut, np.array([[0.3, 0.1], [0.3, 0.6], [0.9, 0.9]]))
    # column 0.25 <= x <= 0.5: each triangle of the column is cut, the lower-right
    # one with the diagonal from (0.25, 0) to (0.5, 0.25)
    cells, _ = locate_points(mesh, np.array([[0.3, 0.1]]))
    assert k1[0] == pytest.approx(cut.kappa1[cells[0]])
    assert 0 < k1[0] < 1 and 0 < k1[1] < 1
    assert (k1[2], k2[2]) == (0.5, 0.5)  # uncut cell falls back to the average
    np.testing.assert_allclose(k1 + k2, 1.0)


def test_kappa_fallback_on_degenerate_cut():
    mesh = build_uniform_mesh(4)
    cut = classify_and_cut(mesh, Line(-1.0, 0.0, -0.5))  # along a mesh line
    k1, _ = kappa_at_closest_point(cut, np.array([[0.5, 0.3]]))
    assert k1[0] == 0.5


def test_closest_point_clamped_to_domain():
    line = convection_line()
    box = (0.0, 1.0, 0.0, 1.0)
    # the line enters the box at (0, 0.7); far up-left points project onto that end
    q = closest_point_in_domain(line, np.array([[-0.2, 1.0], [0.3, 0.9]]), box)
    np.testing.assert_allclose(q[0], [0.0, 0.7], atol=1e-14)
    assert abs(line(q[1])) < 1e-14 and np.all((q[1] >= 0) & (q[1] <= 1))
    circ = Circle((0.0, 0.0), 0.5)
    np.testing.assert_allclose(closest_point_in_domain(circ, np.array([2.0, 0.0]), box), [0.5, 0.0])
    with pytest.raises(ValueError):
        closest_point_in_domain(Line(1.0, 0.0, 3.0), np.array([0.0, 0.0]), box)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 2), st.floats(-1, 2), st.floats(0, 2 * math.pi), st.floats(0.2, 0.8), st.floats(0.2, 0.8))
def test_closest_point_in_domain_is_nearest_on_segment(x, y, theta, px, py):
    n = np.array([math.cos(theta), math.sin(theta)])
    line = Line(n[0], n[1], n @ [px, py])
    q = closest_point_in_domain(line, np.array([x, y]), (0.0, 1.0, 0.0, 1.0))
    assert abs(line(q)) < 1e-12 and np.all(q >= -1e-12) and np.all(q <= 1 + 1e-12)
    # brute force over the clipped segment
    t = np.array([-n[1], n[0]])
    s = np.linspace(-2, 2, 40001)
    pts = np.array([px, py]) + s[:, None] * t
    inside = np.all((pts >= 0) & (pts <= 1), axis=1)
    d = np.linalg.norm(pts[inside] - [x, y], axis=1).min()
    assert np.linalg.norm(q - [x, y]) <= d + 1e-9


def test_band_cells():
    mesh = build_uniform_mesh(10)
    band = band_cells(mesh, Line(-1.0, 0.0, -0.51), 0.1)
    xs = mesh.vertices[mesh.cells[band]][..., 0]
    assert np.all((xs.min(axis=1) <= 0.61) & (xs.max(axis=1) >= 0.41))
    assert len(band) == 2 * 10 * 3  # columns 0.4..0.7


def consistency_residual(spec, n, delta, p):
    mesh, cut, spaces = build(spec, n, delta, p)
    I = diffuse_interface_matrix(spec, mesh, spaces, cut=cut)
    u = np.concatenate([interpolate(spaces[0], spec.u1), interpolate(spaces[1], spec.u2)])
    # continuous test function: [[w]] = 0 wherever both fields live
    f = lambda x: np.cos(2 * x[..., 0]) + x[..., 1] ** 2
    w = np.concatenate([interpolate(spaces[0], f), interpolate(spaces[1], f)])
    scale = abs(I).max() * np.abs(u).max() * np.abs(w).max() * I.shape[0]
    return abs(w @ I @ u), scale


def test_consistency_probe_linear_exact():
    # piecewise linear u with [[u]] = 0 and continuous flux: interface integrand vanishes pointwise
    spec = patch_problem(0.4, 0.55, 0.2, 3.0)
    r, scale = consistency_residual(spec, 16, 6 / 16, 1)
    assert r <= 1e-10 * scale
    # with normal fibres that stay inside the domain the diffuse scheme reproduces u
    # up to the truncated delta mass; oblique lines lose mass where Gamma meets the boundary
    spec = patch_problem(0.0, 0.55, 0.2, 3.0)
    mesh, cut, spaces = build(spec, 16, 6 / 16)
    system = assemble_diffuse(spec, mesh, spaces, cut=cut, opts=DiffuseOptions(delta=6 / 16))
    x = system.solve()
    for coef, space, u in zip(system.split(x), spaces, (spec.u1, spec.u2)):
        assert np.max(np.abs(coef - u(space.coords))) < 1e-6


def test_band_width_barely_matters():
    spec = catalog("smooth1d")
    mesh, cut, spaces = build(spec, 32, math.sqrt(2))
    a = diffuse_interface_matrix(spec, mesh, spaces, opts=DiffuseOptions(band_factor=4.0), cut=cut)
    b = diffuse_interface_matrix(spec, mesh, spaces, opts=DiffuseOptions(band_factor=6.0), cut=cut)
    assert abs(a - b).max() <= 1e-8 * abs(b).max()


def test_interface_matrix_symmetric_for_p1():
    spec = catalog("circle")
    mesh, cut, spaces = build(spec, 16, 6 * 2 / 16)
    I = diffuse_interface_matrix(spec, mesh, spaces, cut=cut)
    assert abs(I - I.T).max() <= 1e-12 * abs(I).max()


@pytest.mark.parametrize("mode", ["clip", "sharp", "smooth"])
def test_diffuse_close_to_sharp(mode):
    spec = catalog("smooth1d")
    mesh, cut, spaces = build(spec, 32, math.sqrt(2))
    sharp = assemble_sharp(spec, mesh, cut, spaces)
    xs = sharp.solve()
    diffuse = assemble_diffuse(spec, mesh, spaces, cut=cut, opts=DiffuseOptions(heaviside=mode, delta=math.sqrt(2)))
    xd = diffuse.solve()
    es = l2_error(*sharp.split(xs), spaces, spec, cut)
    ed = l2_error(*diffuse.split(xd), spaces, spec, cut)
    assert ed < (2.0 if mode == "clip" else 20.0) * es


def test_option_validation():
    for kw in ({"eps": -1.0}, {"eps_factor": 0.0}, {"band_factor": 2.0}, {"alpha0": -1.0}, {"heaviside": "step"}):
        with pytest.raises(ValueError):
            DiffuseOptions(**kw)
    assert DiffuseOptions().width(0.01) == 0.01
    assert DiffuseOptions(eps_factor=2.0).width(0.01) == 0.02
    assert DiffuseOptions(eps=0.3).width(0.01) == 0.3


def test_closest_points_must_be_active():
    spec = catalog("smooth1d")
    mesh = build_uniform_mesh(16)
    other = Line(-1.0, 0.0, -0.2)  # spaces built around x = 0.2, interface at 0.51
    spaces = tuple(build_space(select_submesh(mesh, other, k, 0.0), 1) for k in (1, 2))
    with pytest.raises(ValueError):
        diffuse_interface_matrix(spec, mesh, spaces)
