"""Structured triangulations of rectangles and level-set driven active submeshes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .geometry import LevelSet

# boundary tags
LEFT, RIGHT, BOTTOM, TOP = 1, 2, 3, 4


@dataclass(eq=False)
class Mesh:
    """Conforming triangulation of an axis-aligned rectangle.

    Local face ``i`` of a cell is the edge from vertex ``i`` to vertex ``(i+1) % 3``.
    """

    vertices: np.ndarray  # (nv, 2)
    cells: np.ndarray  # (nc, 3), counter-clockwise
    domain: tuple[float, float, float, float]  # (x0, x1, y0, y1)
    shape: tuple[int, int]  # squares per direction (nx, ny)
    edges: np.ndarray = field(init=False)  # (ne, 2), sorted vertex pairs
    cell_edges: np.ndarray = field(init=False)  # (nc, 3)
    face_to_cells: np.ndarray = field(init=False)  # (ne, 2), -1 on the boundary
    boundary_faces: np.ndarray = field(init=False)  # (nb, 2) rows of (cell, local face)
    boundary_tags: np.ndarray = field(init=False)  # (nb,)
    vertex_to_cells: tuple[np.ndarray, np.ndarray] = field(init=False)  # CSR (offsets, cells)
    h_max: float = field(init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        nc = len(self.cells)
        pairs = np.stack([self.cells, np.roll(self.cells, -1, axis=1)], axis=2).reshape(-1, 2)
        pairs.sort(axis=1)
        nv = len(self.vertices)
        keys, inverse = np.unique(pairs[:, 0] * nv + pairs[:, 1], return_inverse=True)
        self.edges = np.column_stack([keys // nv, keys % nv])
        inverse = inverse.ravel()
        self.cell_edges = inverse.reshape(nc, 3)

        owner = np.repeat(np.arange(nc), 3)
        order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse, minlength=len(self.edges))
        if counts.max() > 2:
            raise ValueError("non-manifold triangulation: an edge is shared by more than two cells")
        first = np.concatenate([[0], np.cumsum(counts)[:-1]])
        f2c = np.full((len(self.edges), 2), -1, dtype=np.int64)
        f2c[:, 0] = owner[order[first]]
        two = counts == 2
        f2c[two, 1] = owner[order[first[two] + 1]]
        self.face_to_cells = f2c

        bedges = np.flatnonzero(counts == 1)
        bcell = f2c[bedges, 0]
        bloc = np.argmax(self.cell_edges[bcell] == bedges[:, None], axis=1)
        self.boundary_faces = np.column_stack([bcell, bloc])
        mid = self.vertices[self.edges[bedges]].mean(axis=1)
        x0, x1, y0, y1 = self.domain
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        tags = np.zeros(len(bedges), dtype=np.int64)
        tags[np.abs(mid[:, 0] - x0) < tol] = LEFT
        tags[np.abs(mid[:, 0] - x1) < tol] = RIGHT
        tags[np.abs(mid[:, 1] - y0) < tol] = BOTTOM
        tags[np.abs(mid[:, 1] - y1) < tol] = TOP
        self.boundary_tags = tags

        flat = self.cells.ravel()
        vorder = np.argsort(flat, kind="stable")
        vcount = np.bincount(flat, minlength=len(self.vertices))
        self.vertex_to_cells = (
            np.concatenate([[0], np.cumsum(vcount)]),
            vorder // 3,
        )

        p = self.vertices[self.cells]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        self._diam = lengths.max(axis=1)
        self.h_max = float(self._diam.max())
        if np.any(self.signed_areas() <= 0.0):
            raise ValueError("mesh contains cells with nonpositive signed area")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> float:
        """Nominal mesh size h used in tables: the larger square spacing."""
        x0, x1, y0, y1 = self.domain
        return max((x1 - x0) / self.shape[0], (y1 - y0) / self.shape[1])

    @property
    def diameter(self) -> float:
        x0, x1, y0, y1 = self.domain
        return math.hypot(x1 - x0, y1 - y0)

    def cell_diameters(self) -> np.ndarray:
        return self._diam

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def cells_of_vertex(self, v: int) -> np.ndarray:
        off, idx = self.vertex_to_cells
        return idx[off[v] : off[v + 1]]

    def write(self, path: str | Path) -> None:
        """Plain-text dump: ``nv nc``, then ``x y`` lines, then 0-based ``i j k`` lines."""
        lines = [f"{self.n_vertices} {self.n_cells}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        lines += [f"{i} {j} {k}" for i, j, k in self.cells]
        Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path, domain: tuple[float, float, float, float], shape: tuple[int, int]) -> Mesh:
    text = Path(path).read_text().split("\n")
    nv, nc = map(int, text[0].split())
    verts = np.array([list(map(float, ln.split())) for ln in text[1 : 1 + nv]])
    cells = np.array([list(map(int, ln.split())) for ln in text[1 + nv : 1 + nv + nc]])
    return Mesh(verts, cells, domain, shape)


def build_rectangle_mesh(
    nx: int,
    ny: int,
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0),
    flip_diagonal: bool = False,
) -> Mesh:
    """nx*ny squares, each split into two triangles.

    The default diagonal runs from the lower-left to the upper-right corner of each
    square; ``flip_diagonal`` uses the other one.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"cells per side must be positive, got {nx}x{ny}")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {domain}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j = y index
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    ll = j * (nx + 1) + i
    lr = ll + 1
    ul = ll + nx + 1
    ur = ul + 1
    if flip_diagonal:
        t1 = np.column_stack([ll, lr, ul])
        t2 = np.column_stack([lr, ur, ul])
    else:
        t1 = np.column_stack([ll, lr, ur])
        t2 = np.column_stack([ll, ur, ul])
    cells = np.stack([t1, t2], axis=1).reshape(-1, 3)
    return Mesh(verts, cells, (x0, x1, y0, y1), (nx, ny))


def build_uniform_mesh(
    n: int,
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0),
    flip_diagonal: bool = False,
) -> Mesh:
    return build_rectangle_mesh(n, n, domain, flip_diagonal)


def build_quasi_uniform_mesh(level: int, flip_diagonal: bool = False) -> Mesh:
    """Level 0 has dx = 0.1, dy = 0.02 on the unit square; each level halves both."""
    if level < 0:
        raise ValueError("refinement level must be nonnegative")
    k = 2**level
    return build_rectangle_mesh(10 * k, 50 * k, (0.0, 1.0, 0.0, 1.0), flip_diagonal)


@dataclass(frozen=True, eq=False)
class SubMesh:
    parent: Mesh
    active_cells: np.ndarray  # sorted global cell ids
    region: int
    delta: float

    @property
    def n_cells(self) -> int:
        return len(self.active_cells)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.parent.n_cells, dtype=bool)
        m[self.active_cells] = True
        return m


def select_submesh(mesh: Mesh, phi: "LevelSet", region: int, delta: float) -> SubMesh:
    """Cells within distance ``delta`` of region 1 ({phi > 0}) or region 2 ({phi < 0})."""
    if region not in (1, 2):
        raise ValueError(f"region must be 1 or 2, got {region}")
    if delta < 0:
        raise ValueError("extension width must be nonnegative")
    if delta >= mesh.diameter:
        active = np.arange(mesh.n_cells)
    else:
        lo, hi = phi.cell_extrema(mesh.vertices[mesh.cells])
        active = np.flatnonzero(hi >= -delta) if region == 1 else np.flatnonzero(lo <= delta)
    return SubMesh(mesh, active, region, float(delta))
