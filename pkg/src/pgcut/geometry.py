"""Level sets, cut-cell decomposition and the regularized delta/Heaviside pair.

Convention: ``phi > 0`` in region 1, ``phi < 0`` in region 2, and the unit normal
``n = -grad(phi)/|grad(phi)|`` points out of region 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf

from .mesh import Mesh

INSIDE1, INSIDE2, CUT = 1, 2, 0


def delta_eps(t, eps: float):
    """Gaussian regularized Dirac delta of width ``eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    t = np.asarray(t, dtype=float)
    return math.sqrt(math.pi / 9.0) / eps * np.exp(-(math.pi**2) * t * t / (9.0 * eps * eps))


def heaviside_eps(t, eps: float):
    """Smoothed Heaviside with ``d/dt heaviside_eps = delta_eps``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return 0.5 * (1.0 + erf(math.pi * np.asarray(t, dtype=float) / (3.0 * eps)))


def heaviside(t):
    return (np.asarray(t) > 0).astype(float)


class LevelSet:
    """Base class; subclasses provide ``__call__``, ``gradient`` and ``closest_point``."""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, x: np.ndarray) -> np.ndarray:
        g = self.gradient(x)
        return -g / np.linalg.norm(g, axis=-1, keepdims=True)

    def closest_point(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cell_extrema(self, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(min, max) of phi over each triangle in ``tris`` (m, 3, 2).

        Sampled at vertices, edge midpoints and the barycenter; subclasses with
        closed forms override this.
        """
        mids = 0.5 * (tris + np.roll(tris, -1, axis=1))
        bary = tris.mean(axis=1, keepdims=True)
        samples = np.concatenate([tris, mids, bary], axis=1)
        vals = self(samples)
        return vals.min(axis=1), vals.max(axis=1)


class Line(LevelSet):
    """phi(x, y) = a x + b y - c with (a, b) normalised to unit length."""

    def __init__(self, a: float, b: float, c: float):
        norm = math.hypot(a, b)
        if norm == 0:
            raise ValueError("degenerate line")
        self.a, self.b, self.c = a / norm, b / norm, c / norm

    def __repr__(self) -> str:
        return f"Line(a={self.a:.6g}, b={self.b:.6g}, c={self.c:.6g})"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * x[..., 0] + self.b * x[..., 1] - self.c

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.empty_like(x)
        g[..., 0] = self.a
        g[..., 1] = self.b
        return g

    def closest_point(self, x):
        x = np.asarray(x, dtype=float)
        d = self(x)
        return x - d[..., None] * np.array([self.a, self.b])

    def cell_extrema(self, tris):
        vals = self(tris)
        return vals.min(axis=1), vals.max(axis=1)


def _point_triangle_distance(p: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Euclidean distance from point ``p`` (2,) to each triangle (m, 3, 2)."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]

    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    s1 = cross(b - a, p - a)
    s2 = cross(c - b, p - b)
    s3 = cross(a - c, p - c)
    inside = ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))

    def seg(u, v):
        d = v - u
        t = np.clip(np.einsum("ij,ij->i", p - u, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        return np.linalg.norm(u + t[:, None] * d - p, axis=1)

    dist = np.minimum(np.minimum(seg(a, b), seg(b, c)), seg(c, a))
    dist[inside] = 0.0
    return dist


class Circle(LevelSet):
    """Signed distance to a circle, positive inside unless ``inside_positive`` is False."""

    def __init__(self, center=(0.0, 0.0), radius: float = 1.0, inside_positive: bool = True):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.sign = 1.0 if inside_positive else -1.0

    def __repr__(self) -> str:
        return f"Circle(center={tuple(self.center)}, radius={self.radius})"

    def __call__(self, x):
        r = np.linalg.norm(np.asarray(x, dtype=float) - self.center, axis=-1)
        return self.sign * (self.radius - r)

    def gradient(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        return -self.sign * d / r

    def closest_point(self, x):
        d = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        if np.any(r == 0.0):
            raise ValueError("closest point undefined at the circle center")
        return self.center + self.radius * d / r

    def cell_extrema(self, tris):
        rmin = _point_triangle_distance(self.center, tris)
        rmax = np.linalg.norm(tris - self.center, axis=2).max(axis=1)
        lo, hi = self.radius - rmax, self.radius - rmin
        if self.sign < 0:
            lo, hi = -hi, -lo
        return lo, hi


class AnalyticLevelSet(LevelSet):
    """User-supplied phi and gradient; closest points by Newton projection."""

    def __init__(self, fn: Callable, grad: Callable, newton_steps: int = 50):
        self.fn, self.grad, self.newton_steps = fn, grad, newton_steps

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def gradient(self, x):
        return self.grad(np.asarray(x, dtype=float))

    def closest_point(self, x):
        y = np.array(x, dtype=float)
        for _ in range(self.newton_steps):
            g = self.gradient(y)
            step = (self(y) / np.einsum("...i,...i->...", g, g))[..., None] * g
            y = y - step
            if np.max(np.abs(step)) < 1e-15:
                break
        return y


@dataclass(eq=False)
class CutGeometry:
    """Per-cell classification and the clipped decomposition of cut cells.

    Cut cells are clipped against the linear interpolant of phi. ``sub_tris[k]`` holds
    the sub-triangles of K ∩ Ω_k for cut cells only, with parent ids in ``sub_parent[k]``.
    """

    mesh: Mesh
    levelset: LevelSet
    phi_vertex: np.ndarray
    cell_class: np.ndarray
    kappa1: np.ndarray
    cut_cells: np.ndarray
    sub_tris: dict
    sub_parent: dict
    segments: np.ndarray  # (ncut, 2, 2)
    seg_normal: np.ndarray  # (ncut, 2), out of region 1

    @property
    def kappa2(self) -> np.ndarray:
        return 1.0 - self.kappa1

    def side_cells(self, side: int) -> tuple[np.ndarray, np.ndarray]:
        """(parent cell ids, triangles) covering the discrete K ∩ Ω_side over the mesh."""
        label = INSIDE1 if side == 1 else INSIDE2
        full = np.flatnonzero(self.cell_class == label)
        parents = np.concatenate([full, self.sub_parent[side]])
        tris = np.concatenate([self.mesh.vertices[self.mesh.cells[full]], self.sub_tris[side]])
        return parents, tris

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1)


def _tri_area(t: np.ndarray) -> np.ndarray:
    d1 = t[..., 1, :] - t[..., 0, :]
    d2 = t[..., 2, :] - t[..., 0, :]
    return 0.5 * np.abs(d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def clip_triangles(P: np.ndarray, f: np.ndarray) -> dict:
    """Clip triangles ``P`` (m, 3, 2) with a sign change of the vertex values ``f`` (m, 3).

    The interface is the zero line of the linear interpolant.  Returns per side the
    sub-triangles and the row index of their parent, plus the interface segments and
    the area fraction on side 1.
    """
    pos = f > 0
    lone_pos = pos.sum(axis=1) == 1
    lone = np.where(lone_pos, np.argmax(pos, axis=1), np.argmin(pos, axis=1))
    perm = (lone[:, None] + np.arange(3)[None, :]) % 3
    rows = np.arange(len(P))[:, None]
    Q = P[rows, perm]  # lone vertex first, orientation preserved
    g = f[rows, perm]
    t1 = g[:, 0] / (g[:, 0] - g[:, 1])
    t2 = g[:, 0] / (g[:, 0] - g[:, 2])
    I1 = Q[:, 0] + t1[:, None] * (Q[:, 1] - Q[:, 0])
    I2 = Q[:, 0] + t2[:, None] * (Q[:, 2] - Q[:, 0])
    lone_tri = np.stack([Q[:, 0], I1, I2], axis=1)
    quad_a = np.stack([I1, Q[:, 1], Q[:, 2]], axis=1)
    quad_b = np.stack([I1, Q[:, 2], I2], axis=1)
    frac_lone = t1 * t2
    idx = np.arange(len(P))
    out = {"kappa1": np.where(lone_pos, frac_lone, 1.0 - frac_lone), "segments": np.stack([I1, I2], axis=1)}
    for side, lone_here in ((1, lone_pos), (2, ~lone_pos)):
        other = ~lone_here
        out[side] = (
            np.concatenate([lone_tri[lone_here], quad_a[other], quad_b[other]]),
            np.concatenate([idx[lone_here], idx[other], idx[other]]),
        )
    return out


def classify_and_cut(mesh: Mesh, phi: LevelSet) -> CutGeometry:
    h = mesh.spacing
    pv = np.array(phi(mesh.vertices), dtype=float)
    on_gamma = np.abs(pv) < 1e-12 * h
    if np.any(on_gamma[mesh.cells].all(axis=1)):
        raise ValueError("level set vanishes identically on a cell")
    # vertices on the interface are nudged into region 1
    pv[on_gamma] = 1e-12 * h
    vals = pv[mesh.cells]
    npos = (vals > 0).sum(axis=1)
    cls = np.full(mesh.n_cells, CUT, dtype=np.int8)
    cls[npos == 3] = INSIDE1
    cls[npos == 0] = INSIDE2
    kappa1 = (npos == 3).astype(float)

    cut = np.flatnonzero(cls == CUT)
    cv = vals[cut]
    clip = clip_triangles(mesh.vertices[mesh.cells[cut]], cv)
    kappa1[cut] = clip["kappa1"]
    sub_tris = {s: clip[s][0] for s in (1, 2)}
    sub_parent = {s: cut[clip[s][1]] for s in (1, 2)}

    # normal of the linear interpolant
    X = mesh.vertices[mesh.cells[cut]]
    J = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)  # columns
    df = np.stack([cv[:, 1] - cv[:, 0], cv[:, 2] - cv[:, 0]], axis=1)
    grad = np.linalg.solve(np.transpose(J, (0, 2, 1)), df[:, :, None])[:, :, 0]
    normal = -grad / np.linalg.norm(grad, axis=1, keepdims=True)

    return CutGeometry(
        mesh=mesh,
        levelset=phi,
        phi_vertex=pv,
        cell_class=cls,
        kappa1=kappa1,
        cut_cells=cut,
        sub_tris=sub_tris,
        sub_parent=sub_parent,
        segments=clip["segments"],
        seg_normal=normal,
    )


def subdivide(tris: np.ndarray, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform red refinement: 4**levels sub-triangles per triangle, with parent rows."""
    parent = np.arange(len(tris))
    for _ in range(levels):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        tris = np.concatenate(
            [np.stack(t, axis=1) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
        )
        parent = np.tile(parent, 4)
    return tris, parent


@dataclass
class QuadBlock:
    """Quadrature points of a set of parent cells.

    ``ref`` is (nq, 2) shared by all cells or (m, nq, 2) per cell; ``x`` and ``w`` are
    the physical points (m, nq, 2) and weights (m, nq).
    """

    cells: np.ndarray
    ref: np.ndarray
    x: np.ndarray
    w: np.ndarray

    def __len__(self) -> int:
        return len(self.cells)

    def take(self, s: slice) -> "QuadBlock":
        ref = self.ref if self.ref.ndim == 2 else self.ref[s]
        return QuadBlock(self.cells[s], ref, self.x[s], self.w[s])


def _map_tris(tris: np.ndarray, pts: np.ndarray) -> np.ndarray:
    d1 = tris[:, 1] - tris[:, 0]
    d2 = tris[:, 2] - tris[:, 0]
    return tris[:, None, 0] + pts[None, :, 0:1] * d1[:, None, :] + pts[None, :, 1:2] * d2[:, None, :]


def to_reference(mesh: Mesh, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reference coordinates of physical points ``x`` (m, nq, 2) in ``cells`` (m,)."""
    X = mesh.vertices[mesh.cells[cells]]
    d1 = X[:, 1] - X[:, 0]
    d2 = X[:, 2] - X[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = x - X[:, None, 0]
    xi = (r[..., 0] * d2[:, None, 1] - r[..., 1] * d2[:, None, 0]) / det[:, None]
    eta = (d1[:, None, 0] * r[..., 1] - d1[:, None, 1] * r[..., 0]) / det[:, None]
    return np.stack([xi, eta], axis=-1)


def refined_side_tris(cut: CutGeometry, side: int, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Pieces of the cut cells on ``side`` after ``levels`` of subdivision and clipping.

    Each cut cell is split into 4**levels sub-triangles, which are clipped against the
    linear interpolant of phi on the sub-triangle, so the region boundary converges
    to the exact interface at the sub-triangle scale.
    """
    mesh, phi = cut.mesh, cut.levelset
    tris, parent = subdivide(mesh.vertices[mesh.cells[cut.cut_cells]], levels)
    parent = cut.cut_cells[parent]
    h = mesh.spacing
    f = np.array(phi(tris), dtype=float)
    f[np.abs(f) < 1e-12 * h] = 1e-12 * h
    npos = (f > 0).sum(axis=1)
    full = npos == 3 if side == 1 else npos == 0
    mixed = (npos > 0) & (npos < 3)
    clip = clip_triangles(tris[mixed], f[mixed])
    sub, idx = clip[side]
    return np.concatenate([tris[full], sub]), np.concatenate([parent[full], parent[mixed][idx]])


def side_quadrature(cut: CutGeometry, side: int, order: int, refine: int = 0) -> list[QuadBlock]:
    """Quadrature over the discrete region ``side``: full cells plus clipped sub-triangles.

    ``refine > 0`` subdivides the cut cells before clipping (see :func:`refined_side_tris`).
    """
    from .quadrature import gauss_triangle

    rule = gauss_triangle(order)
    mesh = cut.mesh
    label = INSIDE1 if side == 1 else INSIDE2
    full = np.flatnonzero(cut.cell_class == label)
    X = mesh.vertices[mesh.cells[full]]
    area = _tri_area(X)
    blocks = [QuadBlock(full, rule.points, _map_tris(X, rule.points), 2.0 * area[:, None] * rule.weights[None, :])]
    if refine > 0:
        tris, parents = refined_side_tris(cut, side, refine)
    else:
        tris, parents = cut.sub_tris[side], cut.sub_parent[side]
    if len(parents):
        x = _map_tris(tris, rule.points)
        w = 2.0 * _tri_area(tris)[:, None] * rule.weights[None, :]
        blocks.append(QuadBlock(parents, to_reference(mesh, parents, x), x, w))
    return blocks


def interface_quadrature(cut: CutGeometry, order: int) -> QuadBlock:
    """Gauss points on the interface segments of the cut cells."""
    from .quadrature import gauss_segment

    rule = gauss_segment(order)
    t = rule.points[:, 0]
    a, b = cut.segments[:, 0], cut.segments[:, 1]
    x = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    w = cut.segment_lengths()[:, None] * rule.weights[None, :]
    cells = cut.cut_cells
    return QuadBlock(cells, to_reference(cut.mesh, cells, x), x, w)
