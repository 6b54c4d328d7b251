"""Continuous Lagrange spaces of degree 1-3 on active submeshes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .mesh import Mesh, SubMesh

SUPPORTED_DEGREES = (1, 2, 3)


# ---------------------------------------------------------------- reference element


@lru_cache(maxsize=None)
def ref_nodes(p: int) -> np.ndarray:
    """Local node order: vertices, then p-1 points per edge (v_i -> v_{i+1}), then interior."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [v for v in verts]
    for e in range(3):
        a, b = verts[e], verts[(e + 1) % 3]
        for k in range(1, p):
            nodes.append(a + (k / p) * (b - a))
    if p == 3:
        nodes.append(np.array([1 / 3, 1 / 3]))
    return np.array(nodes)


@lru_cache(maxsize=None)
def _exponents(p: int) -> np.ndarray:
    return np.array([(i, j) for d in range(p + 1) for j in range(d + 1) for i in [d - j]])


def _monomials(p: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ex = _exponents(p)
    x = pts[..., 0:1]
    y = pts[..., 1:2]
    i, j = ex[:, 0], ex[:, 1]
    val = x**i * y**j
    dx = np.where(i > 0, i * x ** np.maximum(i - 1, 0), 0.0) * y**j
    dy = np.where(j > 0, j * y ** np.maximum(j - 1, 0), 0.0) * x**i
    return val, np.stack([dx, dy], axis=-1)


@lru_cache(maxsize=None)
def _coefficients(p: int) -> np.ndarray:
    V, _ = _monomials(p, ref_nodes(p))
    return np.linalg.inv(V)


def ref_basis(p: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis values (..., nloc) and reference gradients (..., nloc, 2) at ``pts``."""
    C = _coefficients(p)
    m, dm = _monomials(p, np.asarray(pts, dtype=float))
    return m @ C, np.einsum("...md,ml->...ld", dm, C)


def affine_maps(mesh: Mesh, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(v0, invJ, detJ) with x = v0 + J xi, so that xi = (x - v0) @ invJ.T."""
    X = mesh.vertices[mesh.cells[cells]]
    v0 = X[:, 0]
    J = np.stack([X[:, 1] - v0, X[:, 2] - v0], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    return v0, inv, det


# ---------------------------------------------------------------- global node numbering


def _global_nodes(mesh: Mesh, p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    key = ("nodes", p)
    if key in mesh._cache:
        return mesh._cache[key]
    nv, ne, nc = mesh.n_vertices, len(mesh.edges), mesh.n_cells
    nloc = (p + 1) * (p + 2) // 2
    cell_nodes = np.empty((nc, nloc), dtype=np.int64)
    cell_nodes[:, :3] = mesh.cells
    coords = [mesh.vertices]
    col = 3
    if p > 1:
        for e in range(3):
            E = mesh.cell_edges[:, e]
            forward = mesh.cells[:, e] < mesh.cells[:, (e + 1) % 3]
            for k in range(1, p):
                slot = np.where(forward, k - 1, p - 1 - k)
                cell_nodes[:, col] = nv + E * (p - 1) + slot
                col += 1
        a = mesh.vertices[mesh.edges[:, 0]]
        b = mesh.vertices[mesh.edges[:, 1]]
        t = np.arange(1, p) / p
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        coords.append(pts.reshape(-1, 2))
    if p == 3:
        cell_nodes[:, col] = nv + ne * (p - 1) + np.arange(nc)
        coords.append(mesh.vertices[mesh.cells].mean(axis=1))
    coords = np.concatenate(coords)

    on_bdry = np.zeros(len(coords), dtype=bool)
    bedges = mesh.cell_edges[mesh.boundary_faces[:, 0], mesh.boundary_faces[:, 1]]
    on_bdry[mesh.edges[bedges].ravel()] = True
    if p > 1:
        on_bdry[(nv + bedges[:, None] * (p - 1) + np.arange(p - 1)[None, :]).ravel()] = True
    mesh._cache[key] = (coords, cell_nodes, on_bdry)
    return mesh._cache[key]


# ---------------------------------------------------------------- spaces


@dataclass(eq=False)
class FeSpace:
    submesh: SubMesh
    degree: int
    cells: np.ndarray  # active global cell ids
    cell_index: np.ndarray  # (nc,) global cell -> local row in cell_dofs, -1 if inactive
    cell_dofs: np.ndarray  # (n_active, nloc)
    coords: np.ndarray  # (ndofs, 2)
    dirichlet_dofs: np.ndarray
    boundary_dofs: np.ndarray

    @property
    def mesh(self) -> Mesh:
        return self.submesh.parent

    @property
    def ndofs(self) -> int:
        return len(self.coords)

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    def dofs_of(self, cells: np.ndarray) -> np.ndarray:
        idx = self.cell_index[cells]
        if np.any(idx < 0):
            raise ValueError("cell is not active in this space")
        return self.cell_dofs[idx]


def build_space(
    submesh: SubMesh,
    p: int,
    dirichlet: Callable[[np.ndarray], np.ndarray] | None = None,
    levelset=None,
) -> FeSpace:
    """Lagrange space of degree ``p`` on the active cells of ``submesh``.

    ``dirichlet`` selects, among nodes on the outer boundary, those with prescribed values.
    With ``levelset`` given, only nodes on boundary edges that touch the closure of the
    submesh's region are constrained; the extension beyond the region stays free.
    Dofs are numbered lexicographically by node coordinate (x first, then y).
    """
    if p not in SUPPORTED_DEGREES:
        raise ValueError(f"degree must be one of {SUPPORTED_DEGREES}, got {p}")
    if submesh.n_cells == 0:
        raise ValueError("empty submesh")
    mesh = submesh.parent
    coords, cell_nodes, on_bdry = _global_nodes(mesh, p)
    cells = np.asarray(submesh.active_cells)
    used = np.unique(cell_nodes[cells])
    c = np.round(coords[used], 12)
    order = np.lexsort((c[:, 1], c[:, 0]))
    used = used[order]
    g2d = np.full(len(coords), -1, dtype=np.int64)
    g2d[used] = np.arange(len(used))
    cell_index = np.full(mesh.n_cells, -1, dtype=np.int64)
    cell_index[cells] = np.arange(len(cells))
    xy = coords[used]
    bmask = on_bdry[used]
    touching = on_bdry if levelset is None else _region_boundary_nodes(mesh, p, submesh, levelset)
    boundary = np.flatnonzero(bmask)
    if dirichlet is None:
        dmask = np.zeros(len(used), dtype=bool)
    else:
        dmask = bmask & touching[used] & np.asarray(dirichlet(xy), dtype=bool)
    return FeSpace(
        submesh=submesh,
        degree=p,
        cells=cells,
        cell_index=cell_index,
        cell_dofs=g2d[cell_nodes[cells]],
        coords=xy,
        dirichlet_dofs=np.flatnonzero(dmask),
        boundary_dofs=boundary,
    )


def _region_boundary_nodes(mesh: Mesh, p: int, submesh: SubMesh, levelset) -> np.ndarray:
    """Mask of global nodes on active boundary edges that meet the closed region."""
    coords, _, _ = _global_nodes(mesh, p)
    cells, faces = mesh.boundary_faces[:, 0], mesh.boundary_faces[:, 1]
    active = submesh.mask()[cells]
    edges = mesh.cell_edges[cells[active], faces[active]]
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    t = np.linspace(0.0, 1.0, 9)
    vals = levelset(a[:, None, :] + t[None, :, None] * (b - a)[:, None, :])
    touch = vals.max(axis=1) >= 0 if submesh.region == 1 else vals.min(axis=1) <= 0
    edges = edges[touch]
    mask = np.zeros(len(coords), dtype=bool)
    mask[mesh.edges[edges].ravel()] = True
    if p > 1:
        mask[(mesh.n_vertices + edges[:, None] * (p - 1) + np.arange(p - 1)[None, :]).ravel()] = True
    return mask


def tabulate(space: FeSpace, cells: np.ndarray, ref_pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis values (m, nq, nloc) and physical gradients (m, nq, nloc, 2).

    ``ref_pts`` is (nq, 2) shared by all cells or (m, nq, 2) per cell.
    """
    vals, gref = ref_basis(space.degree, ref_pts)
    _, invJ, _ = affine_maps(space.mesh, cells)
    if vals.ndim == 2:
        grads = np.einsum("qld,mde->mqle", gref, invJ)
        vals = np.broadcast_to(vals, (len(cells),) + vals.shape)
    else:
        grads = np.einsum("mqld,mde->mqle", gref, invJ)
    return vals, grads


def eval_basis(space: FeSpace, cell: int, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Values (nloc,) and physical gradients (nloc, 2) of the local basis on ``cell``."""
    if space.cell_index[cell] < 0:
        raise ValueError(f"cell {cell} is not active")
    v, g = tabulate(space, np.array([cell]), np.asarray(ref_point, dtype=float)[None, :])
    return v[0, 0], g[0, 0]


def interpolate(space: FeSpace, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    return np.asarray(f(space.coords), dtype=float) * np.ones(space.ndofs)


def evaluate(space: FeSpace, coeffs: np.ndarray, cells: np.ndarray, ref_pts: np.ndarray):
    """Finite element function values at reference points of the given cells."""
    vals, _ = ref_basis(space.degree, ref_pts)
    loc = coeffs[space.dofs_of(cells)]
    if vals.ndim == 2:
        return loc @ vals.T
    return np.einsum("mql,ml->mq", vals, loc)


def physical_points(mesh: Mesh, cells: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
    X = mesh.vertices[mesh.cells[cells]]
    v0 = X[:, 0]
    d1 = X[:, 1] - v0
    d2 = X[:, 2] - v0
    if ref_pts.ndim == 2:
        return v0[:, None, :] + ref_pts[None, :, 0:1] * d1[:, None, :] + ref_pts[None, :, 1:2] * d2[:, None, :]
    return v0[:, None, :] + ref_pts[..., 0:1] * d1[:, None, :] + ref_pts[..., 1:2] * d2[:, None, :]


# ---------------------------------------------------------------- point location


class PointLocator:
    """Background-grid hashing plus barycentric inclusion test."""

    def __init__(self, mesh: Mesh, tol: float = 1e-12):
        self.mesh = mesh
        self.tol = tol
        x0, x1, y0, y1 = mesh.domain
        nb = max(1, int(np.sqrt(mesh.n_cells / 2)))
        self.nbx = self.nby = nb
        self.dx = (x1 - x0) / nb
        self.dy = (y1 - y0) / nb
        X = mesh.vertices[mesh.cells]
        eps = 1e-9 * max(self.dx, self.dy)
        lo = X.min(axis=1) - eps
        hi = X.max(axis=1) + eps
        ix0, iy0 = self._bucket(lo)
        ix1, iy1 = self._bucket(hi)
        spanx = int((ix1 - ix0).max()) + 1
        spany = int((iy1 - iy0).max()) + 1
        keys, owners = [], []
        cells = np.arange(mesh.n_cells)
        for a in range(spanx):
            for b in range(spany):
                ok = (ix0 + a <= ix1) & (iy0 + b <= iy1)
                keys.append(((iy0 + b) * nb + ix0 + a)[ok])
                owners.append(cells[ok])
        keys = np.concatenate(keys)
        owners = np.concatenate(owners)
        order = np.lexsort((owners, keys))
        keys, owners = keys[order], owners[order]
        counts = np.bincount(keys, minlength=nb * nb)
        kmax = int(counts.max())
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slot = np.arange(len(keys)) - start[keys]
        table = np.full((nb * nb, kmax), -1, dtype=np.int64)
        table[keys, slot] = owners
        self.table = table
        self.v0, self.invJ, _ = affine_maps(mesh, cells)

    def _bucket(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x0, _, y0, _ = self.mesh.domain
        ix = np.clip(np.floor((pts[:, 0] - x0) / self.dx).astype(np.int64), 0, self.nbx - 1)
        iy = np.clip(np.floor((pts[:, 1] - y0) / self.dy).astype(np.int64), 0, self.nby - 1)
        return ix, iy

    def locate(self, pts: np.ndarray, chunk: int = 200_000) -> tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x0, x1, y0, y1 = self.mesh.domain
        scale = max(x1 - x0, y1 - y0)
        snap = self.tol * scale
        outside = (
            (pts[:, 0] < x0 - snap) | (pts[:, 0] > x1 + snap) | (pts[:, 1] < y0 - snap) | (pts[:, 1] > y1 + snap)
        )
        if np.any(outside):
            raise ValueError(f"{int(outside.sum())} point(s) outside the meshed domain")
        pts = np.column_stack([np.clip(pts[:, 0], x0, x1), np.clip(pts[:, 1], y0, y1)])
        cells = np.empty(len(pts), dtype=np.int64)
        refs = np.empty((len(pts), 2))
        for s in range(0, len(pts), chunk):
            P = pts[s : s + chunk]
            ix, iy = self._bucket(P)
            cand = self.table[iy * self.nbx + ix]  # (m, k)
            valid = cand >= 0
            cc = np.where(valid, cand, 0)
            ref = np.einsum("mkde,mke->mkd", self.invJ[cc], P[:, None, :] - self.v0[cc])
            lam = np.stack([1.0 - ref[..., 0] - ref[..., 1], ref[..., 0], ref[..., 1]], axis=-1)
            inside = valid & (lam.min(axis=-1) >= -self.tol)
            if not np.all(inside.any(axis=1)):
                raise ValueError("point location failed for a point inside the domain")
            first = np.argmax(inside, axis=1)
            rows = np.arange(len(P))
            cells[s : s + chunk] = cand[rows, first]
            refs[s : s + chunk] = ref[rows, first]
        return cells, refs


def point_locator(mesh: Mesh) -> PointLocator:
    if "locator" not in mesh._cache:
        mesh._cache["locator"] = PointLocator(mesh)
    return mesh._cache["locator"]


def locate_point(mesh: Mesh, x) -> tuple[int, np.ndarray]:
    """Cell containing ``x`` (lowest index on ties) and its reference coordinates."""
    cells, refs = point_locator(mesh).locate(np.asarray(x, dtype=float)[None, :])
    return int(cells[0]), refs[0]


def locate_points(mesh: Mesh, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return point_locator(mesh).locate(xs)
