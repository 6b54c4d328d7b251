"""Diffuse-interface assembly.

Interface integrals become volume integrals weighted by ``delta_eps(phi) |grad phi|``;
every interface quantity is evaluated at the closest point on the interface.  Bulk
terms are blended with a Heaviside function of phi instead of clipped cut cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fespace import FeSpace, affine_maps, locate_points
from .geometry import (
    CUT,
    CutGeometry,
    LevelSet,
    Line,
    QuadBlock,
    delta_eps,
    heaviside,
    heaviside_eps,
    _map_tris,
    _tri_area,
    side_quadrature,
    subdivide,
)
from .linalg import TripletBuffer, is_symmetric
from .mesh import Mesh
from .nitsche import add_interface, add_stabilization, add_volume, finalize, penalty, CoupledSystem
from .pg_stab import chunks
from .problems import ProblemSpec
from .quadrature import gauss_triangle

KAPPA_DEGENERATE = 1e-10


@dataclass
class DiffuseOptions:
    eps: float | None = None  # regularization width; default eps_factor * h
    eps_factor: float = 1.0
    band_factor: float = 4.0
    alpha0: float = 20.0
    delta: float = 0.0
    band_order: int = 8
    band_refine: int = 0  # subdivision levels of band cells for the interface quadrature
    cut_order: int = 6
    clip_levels: int = 2  # subdivision levels of cut cells for the "clip" blending
    # bulk blending: "clip" integrates H(phi_h) exactly on clipped cut cells, "sharp"
    # samples H(phi) at quadrature points, "smooth" uses H_eps
    heaviside: str = "clip"
    beta: float | str = 1.0
    velocity: tuple[float, float] | None = None
    projector_mode: str | None = None

    def __post_init__(self) -> None:
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.eps_factor <= 0:
            raise ValueError("eps_factor must be positive")
        if self.band_factor < 3:
            raise ValueError("band_factor must be at least 3")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.heaviside not in ("clip", "sharp", "smooth"):
            raise ValueError(f"unknown Heaviside mode {self.heaviside!r}")

    def width(self, h: float) -> float:
        return self.eps if self.eps is not None else self.eps_factor * h


def kappa_at_closest_point(cut: CutGeometry, x_gamma: np.ndarray, cells: np.ndarray | None = None):
    """(kappa1, kappa2) of the cell containing each point of ``x_gamma``.

    Uncut cells, and cut cells whose clipped part is degenerate (the interface runs
    along a cell edge), fall back to (1/2, 1/2).
    """
    x = np.asarray(x_gamma, dtype=float)
    flat = x.reshape(-1, 2)
    if cells is None:
        cells, _ = locate_points(cut.mesh, flat)
    cells = np.asarray(cells).reshape(-1)
    k1 = np.full(len(cells), 0.5)
    kc = cut.kappa1[cells]
    ok = (cut.cell_class[cells] == CUT) & (kc > KAPPA_DEGENERATE) & (kc < 1.0 - KAPPA_DEGENERATE)
    k1[ok] = kc[ok]
    k1 = k1.reshape(x.shape[:-1])
    return k1, 1.0 - k1


def closest_point_in_domain(phi: LevelSet, x: np.ndarray, domain) -> np.ndarray:
    """Closest point on the part of the interface inside the closed rectangle ``domain``.

    For a line this is the closest point of the clipped segment; other level sets
    return the unconstrained closest point (point location rejects it if it falls outside).
    """
    xg = phi.closest_point(x)
    if not isinstance(phi, Line):
        return xg
    x0, x1, y0, y1 = domain
    t = np.array([-phi.b, phi.a])
    base = np.array([phi.a, phi.b]) * phi.c  # point of the line nearest the origin
    # parameter interval of the line inside the box
    lo, hi = -np.inf, np.inf
    for d, (a, b), o in ((t[0], (x0, x1), base[0]), (t[1], (y0, y1), base[1])):
        if abs(d) < 1e-14:
            if not (a - 1e-12 <= o <= b + 1e-12):
                raise ValueError("interface line misses the domain")
            continue
        s0, s1 = sorted(((a - o) / d, (b - o) / d))
        lo, hi = max(lo, s0), min(hi, s1)
    if lo > hi:
        raise ValueError("interface line misses the domain")
    s = np.clip((xg - base) @ t, lo, hi)
    return base + s[..., None] * t


def band_cells(mesh: Mesh, phi: LevelSet, width: float) -> np.ndarray:
    """Cells with min |phi| <= width."""
    lo, hi = phi.cell_extrema(mesh.vertices[mesh.cells])
    return np.flatnonzero((lo <= width) & (hi >= -width))


def _cell_block(mesh: Mesh, cells: np.ndarray, order: int) -> QuadBlock:
    rule = gauss_triangle(order)
    X = mesh.vertices[mesh.cells[cells]]
    d1 = X[:, 1] - X[:, 0]
    d2 = X[:, 2] - X[:, 0]
    x = X[:, None, 0] + rule.points[None, :, 0:1] * d1[:, None, :] + rule.points[None, :, 1:2] * d2[:, None, :]
    _, _, det = affine_maps(mesh, cells)
    return QuadBlock(cells, rule.points, x, np.abs(det)[:, None] * rule.weights[None, :])


def _band_points(mesh: Mesh, cells: np.ndarray, order: int, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened quadrature points and weights over ``cells``, optionally on subdivided cells."""
    rule = gauss_triangle(order)
    tris, _ = subdivide(mesh.vertices[mesh.cells[cells]], levels)
    x = _map_tris(tris, rule.points)
    w = 2.0 * _tri_area(tris)[:, None] * rule.weights[None, :]
    return x.reshape(-1, 2), w.reshape(-1)


def add_diffuse_interface(
    buf: TripletBuffer,
    spec: ProblemSpec,
    mesh: Mesh,
    cut: CutGeometry,
    spaces: tuple[FeSpace, FeSpace],
    offsets: tuple[int, int, int],
    phi: LevelSet,
    opts: DiffuseOptions,
) -> None:
    """Nitsche terms as band integrals weighted by delta_eps(phi)|grad phi|, data at closest points."""
    eps = opts.width(mesh.spacing)
    p = max(s.degree for s in spaces)
    band = band_cells(mesh, phi, opts.band_factor * eps)
    x, w = _band_points(mesh, band, opts.band_order, opts.band_refine)
    W = w * delta_eps(phi(x), eps) * np.linalg.norm(phi.gradient(x), axis=1)
    xg = closest_point_in_domain(phi, x, mesh.domain)
    cg, refg = locate_points(mesh, xg)
    for k, space in enumerate(spaces):
        if np.any(space.cell_index[cg] < 0):
            raise ValueError(f"closest point lands outside the active mesh of field {k + 1}; increase delta")
    k1, _ = kappa_at_closest_point(cut, xg, cg)
    alpha = penalty(opts.alpha0, k1, spec.mu1, spec.mu2, p, mesh.cell_diameters()[cg])
    normal = phi.normal(xg)
    # one quadrature point per row, so cells may differ from point to point
    for s in chunks(len(W), 50_000):
        cs = cg[s][:, None]
        rs = refg[s][:, None, :]
        add_interface(
            buf, spaces, offsets, cs, rs, cs, rs, normal[s][:, None, :], W[s][:, None],
            k1[s], alpha[s], (spec.mu1, spec.mu2),
        )


def diffuse_interface_matrix(spec, mesh, spaces, phi=None, opts=None, cut=None):
    """The interface part of the diffuse system on its own (no Dirichlet treatment)."""
    from .geometry import classify_and_cut

    opts = DiffuseOptions() if opts is None else opts
    phi = spec.levelset if phi is None else phi
    cut = classify_and_cut(mesh, phi) if cut is None else cut
    n1, n2 = spaces[0].ndofs, spaces[1].ndofs
    buf = TripletBuffer((n1 + n2, n1 + n2))
    add_diffuse_interface(buf, spec, mesh, cut, spaces, (0, n1, n1 + n2), phi, opts)
    return buf.compress()


def assemble_diffuse(
    spec: ProblemSpec,
    mesh: Mesh,
    spaces: tuple[FeSpace, FeSpace],
    phi: LevelSet | None = None,
    opts: DiffuseOptions | None = None,
    cut: CutGeometry | None = None,
) -> CoupledSystem:
    from .geometry import classify_and_cut

    opts = DiffuseOptions() if opts is None else opts
    phi = spec.levelset if phi is None else phi
    cut = classify_and_cut(mesh, phi) if cut is None else cut
    h = mesh.spacing
    eps = opts.width(h)
    p = max(s.degree for s in spaces)
    n1, n2 = spaces[0].ndofs, spaces[1].ndofs
    offsets = (0, n1, n1 + n2)
    buf = TripletBuffer((n1 + n2, n1 + n2))
    rhs = np.zeros(n1 + n2)
    velocity = opts.velocity if opts.velocity is not None else spec.velocity
    mus = (spec.mu1, spec.mu2)
    fs = (spec.f1, spec.f2)

    # bulk: mu_k chi_k grad u . grad w with chi_1 = H(phi), chi_2 = 1 - H(phi)
    vorder = min(2 * p + 2, 10)
    corder = min(max(opts.cut_order, vorder), 10)
    lo, hi = phi.cell_extrema(mesh.vertices[mesh.cells])
    if opts.heaviside == "clip":
        for k, space in enumerate(spaces):
            for blk in side_quadrature(cut, k + 1, vorder, opts.clip_levels):
                if len(blk):
                    add_volume(buf, rhs, space, blk, offsets[k], mus[k], fs[k], velocity)
    elif opts.heaviside == "smooth":
        H = lambda t: heaviside_eps(t, eps)
        blended = (lo <= opts.band_factor * eps) & (hi >= -opts.band_factor * eps)
    else:
        H = heaviside
        blended = (lo < 0) & (hi > 0)
    for k, space in enumerate(spaces if opts.heaviside != "clip" else ()):
        cells = space.cells
        mixed = blended[cells]
        for sel, order in ((cells[~mixed], vorder), (cells[mixed], corder)):
            if len(sel) == 0:
                continue
            blk = _cell_block(mesh, sel, order)
            chi = H(phi(blk.x))
            if k == 1:
                chi = 1.0 - chi
            keep = np.any(chi > 0, axis=1)
            if not np.any(keep):
                continue
            blk = QuadBlock(blk.cells[keep], blk.ref, blk.x[keep], blk.w[keep])
            add_volume(buf, rhs, space, blk, offsets[k], mus[k], fs[k], velocity, weight=chi[keep])

    add_diffuse_interface(buf, spec, mesh, cut, spaces, offsets, phi, opts)

    add_stabilization(buf, spaces, offsets, mus, opts, velocity, h)
    system = finalize(buf, rhs, spaces, offsets, spec)
    if velocity is None and p == 1 and not is_symmetric(system.matrix):
        raise AssertionError("pure-diffusion p=1 system is not symmetric")
    return system
