"""Sharp-interface unfitted Nitsche assembly with optional PG stabilization and convection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fespace import FeSpace, tabulate
from .geometry import CutGeometry, QuadBlock, interface_quadrature, side_quadrature
from .linalg import TripletBuffer, is_symmetric, solve, write_matrix_market
from .pg_stab import assemble_pg_matrix, beta_h, build_projector, chunks
from .problems import ProblemSpec

log = logging.getLogger(__name__)

SHARP, H2 = "sharp", "h2"


@dataclass
class AssemblyOptions:
    alpha0: float = 20.0
    delta: float = 0.0  # extension width (length units) the spaces were built with
    stabilized: bool = True
    scheme: str = SHARP
    velocity: tuple[float, float] | None = None  # overrides the problem's velocity
    beta: float | str = 1.0  # stabilization multiplier, or "bh" for max(1, |v| h / (2 mu))
    projector_mode: str | None = None
    volume_order: int | None = None
    interface_order: int | None = None

    def __post_init__(self) -> None:
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.scheme not in (SHARP, H2):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == H2 and (self.stabilized or self.delta != 0):
            raise ValueError("the H2 scheme is unstabilized with delta = 0")
        if isinstance(self.beta, str) and self.beta != "bh":
            raise ValueError(f"beta must be a number or 'bh', got {self.beta!r}")


@dataclass(eq=False)
class CoupledSystem:
    """Two-field linear system on the concatenated dofs of (V1, V2).

    ``constrained`` holds Dirichlet dofs (and pinned dofs with empty rows) with their
    values in ``lifting``; they are eliminated symmetrically by :meth:`reduced`.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    offsets: tuple[int, int, int]
    constrained: np.ndarray
    lifting: np.ndarray
    spaces: tuple[FeSpace, FeSpace]
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.offsets[2]

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)

    def reduced(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        """(A_ff, b_f - A_fc g, free dofs)."""
        free = self.free
        A = self.matrix
        Aff = A[free][:, free]
        b = self.rhs[free] - A[free][:, self.constrained] @ self.lifting
        return sp.csr_matrix(Aff), b, free

    def solve(self, method: str = "auto", rtol: float = 1e-12) -> np.ndarray:
        Aff, b, free = self.reduced()
        x = np.zeros(self.n)
        x[self.constrained] = self.lifting
        x[free] = solve(Aff, b, method=method, rtol=rtol)
        return x

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        o = self.offsets
        return x[o[0] : o[1]], x[o[1] : o[2]]

    def export(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_matrix_market(d / "system.mtx", self.matrix)
        np.savetxt(d / "rhs.txt", self.rhs, fmt="%.17g")


# ---------------------------------------------------------------- building blocks


def add_volume(
    buf: TripletBuffer,
    rhs: np.ndarray,
    space: FeSpace,
    blk: QuadBlock,
    offset: int,
    mu: float | None,
    f=None,
    velocity=None,
    weight: np.ndarray | None = None,
) -> None:
    """Add mu (grad u, grad w), (v . grad u, w) and (f, w) over a quadrature block.

    ``weight`` (m, nq) multiplies all three integrands (used for Heaviside blending).
    """
    for s in chunks(len(blk), 20_000):
        b = blk.take(s)
        w = b.w if weight is None else b.w * weight[s]
        vals, grads = tabulate(space, b.cells, b.ref)
        dofs = space.dofs_of(b.cells) + offset
        if mu is not None:
            K = mu * np.einsum("mq,mqid,mqjd->mij", w, grads, grads)
            if velocity is not None:
                vg = grads @ np.asarray(velocity, dtype=float)  # (m, nq, nloc)
                K += np.einsum("mq,mqi,mqj->mij", w, vals, vg)
            buf.add_local(dofs, dofs, K)
        if f is not None:
            np.add.at(rhs, dofs, np.einsum("mq,mq,mqi->mi", w, f(b.x), vals))


def add_interface(
    buf: TripletBuffer,
    spaces: tuple[FeSpace, FeSpace],
    offsets: tuple[int, int, int],
    cells1: np.ndarray,
    ref1: np.ndarray,
    cells2: np.ndarray,
    ref2: np.ndarray,
    normal: np.ndarray,
    w: np.ndarray,
    kappa1: np.ndarray,
    alpha: np.ndarray,
    mu: tuple[float, float],
) -> None:
    """Nitsche coupling at points given per field by (cell, reference point).

    All arrays are per point with leading shape (m, nq); ``kappa1`` and ``alpha`` are (m,) or (m, nq).
    Adds -[[u]]{mu d_n w} - {mu d_n u}[[w]] + alpha [[u]][[w]] with [[v]] = v1 - v2 and
    {mu d_n v} = kappa1 mu1 d_n v1 + kappa2 mu2 d_n v2.
    """
    m, nq = w.shape
    k1 = np.broadcast_to(kappa1.reshape(m, -1), (m, nq))
    al = np.broadcast_to(alpha.reshape(m, -1), (m, nq))
    v1, g1 = _tab_points(spaces[0], cells1, ref1)
    v2, g2 = _tab_points(spaces[1], cells2, ref2)
    dn1 = np.einsum("mqld,mqd->mql", g1, normal)
    dn2 = np.einsum("mqld,mqd->mql", g2, normal)
    J = np.concatenate([v1, -v2], axis=2)
    F = np.concatenate([(k1 * mu[0])[..., None] * dn1, ((1.0 - k1) * mu[1])[..., None] * dn2], axis=2)
    d1 = _point_dofs(spaces[0], cells1) + offsets[0]
    d2 = _point_dofs(spaces[1], cells2) + offsets[1]
    if d1.ndim == 2:
        dofs = np.concatenate([d1, d2], axis=1)
        buf.add_local(dofs, dofs, _local_block(w, F, J, al))
    else:
        # cells differ per point: scatter each quadrature point on its own
        for q in range(nq):
            dofs = np.concatenate([d1[:, q], d2[:, q]], axis=1)
            sl = slice(q, q + 1)
            buf.add_local(dofs, dofs, _local_block(w[:, sl], F[:, sl], J[:, sl], al[:, sl]))


def interface_integrands(u1, u2, gu1, gu2, w1, w2, gw1, gw2, normal, kappa1, alpha, mu):
    """Pointwise (q1, q2) with [[u]]{mu d_n w} + {mu d_n u}[[w]] - alpha [[u]][[w]] = q1 - q2.

    Scalars have shape (...,), gradients and the normal (..., 2).
    """
    k2 = 1.0 - kappa1
    flux_u = kappa1 * mu[0] * np.sum(gu1 * normal, -1) + k2 * mu[1] * np.sum(gu2 * normal, -1)
    q1 = (u1 - u2) * kappa1 * mu[0] * np.sum(gw1 * normal, -1) + flux_u * w1 - alpha * (u1 - u2) * w1
    q2 = (u2 - u1) * k2 * mu[1] * np.sum(gw2 * normal, -1) + flux_u * w2 + alpha * (u2 - u1) * w2
    return q1, q2


def _local_block(w, F, J, al):
    """sum_q w (-F_i J_j - J_i F_j + alpha J_i J_j), i test, j trial."""
    loc = -np.einsum("mq,mqi,mqj->mij", w, F, J)
    loc += np.transpose(loc, (0, 2, 1))
    loc += np.einsum("mq,mqi,mqj->mij", w * al, J, J)
    return loc


def _tab_points(space: FeSpace, cells: np.ndarray, ref: np.ndarray):
    """Basis values/gradients for cells (m,) with refs (m, nq, 2), or cells (m, nq) per point."""
    if cells.ndim == 1:
        return tabulate(space, cells, ref)
    m, nq = cells.shape
    v, g = tabulate(space, cells.ravel(), ref.reshape(m * nq, 1, 2))
    return v.reshape(m, nq, -1), g.reshape(m, nq, -1, 2)


def _point_dofs(space: FeSpace, cells: np.ndarray) -> np.ndarray:
    if cells.ndim == 1:
        return space.dofs_of(cells)
    m, nq = cells.shape
    return space.dofs_of(cells.ravel()).reshape(m, nq, -1)


def penalty(alpha0: float, kappa1, mu1: float, mu2: float, p: int, h_cell) -> np.ndarray:
    """alpha = alpha0 (kappa1 mu1 + kappa2 mu2) p^2 / h_K."""
    kappa1 = np.asarray(kappa1, dtype=float)
    return alpha0 * (kappa1 * mu1 + (1.0 - kappa1) * mu2) * p * p / np.asarray(h_cell, dtype=float)


def stabilization_factor(opts: AssemblyOptions, velocity, h: float, mu: float) -> float:
    if opts.beta == "bh":
        return beta_h(velocity if velocity is not None else (0.0, 0.0), h, mu)
    return float(opts.beta)


def add_stabilization(buf, spaces, offsets, mus, opts: AssemblyOptions, velocity, h: float) -> None:
    for k, space in enumerate(spaces):
        beta = stabilization_factor(opts, velocity, h, mus[k])
        if beta == 0.0:
            continue
        proj = build_projector(space, opts.projector_mode)
        buf.add_matrix(assemble_pg_matrix(space, proj, mus[k], beta), offsets[k], offsets[k])


def finalize(buf: TripletBuffer, rhs: np.ndarray, spaces, offsets, spec: ProblemSpec) -> CoupledSystem:
    A = buf.compress()
    dofs, vals = [], []
    for k, space in enumerate(spaces):
        d = space.dirichlet_dofs
        dofs.append(d + offsets[k])
        vals.append(np.asarray(spec.boundary_values(space.coords[d], k + 1), dtype=float))
    constrained = np.concatenate(dofs)
    lifting = np.concatenate(vals)
    # dofs whose rows are empty (support misses its region entirely) are pinned to zero
    absrow = np.asarray(abs(A).sum(axis=1)).ravel()
    mask = np.zeros(A.shape[0], dtype=bool)
    mask[constrained] = True
    pinned = np.flatnonzero((absrow == 0.0) & ~mask)
    if len(pinned):
        log.info("pinning %d dofs with empty rows", len(pinned))
        constrained = np.concatenate([constrained, pinned])
        lifting = np.concatenate([lifting, np.zeros(len(pinned))])
    order = np.argsort(constrained, kind="stable")
    return CoupledSystem(A, rhs, offsets, constrained[order], lifting[order], tuple(spaces), pinned)


def _check_spaces(spaces, cut: CutGeometry) -> None:
    for k, space in enumerate(spaces):
        if space.mesh is not cut.mesh:
            raise ValueError("spaces and cut geometry live on different meshes")
        if np.any(space.cell_index[cut.cut_cells] < 0):
            raise ValueError(f"cut cell missing from the active mesh of field {k + 1}")


# ---------------------------------------------------------------- assemblers


def assemble_sharp(
    spec: ProblemSpec,
    mesh,
    cut: CutGeometry,
    spaces: tuple[FeSpace, FeSpace],
    opts: AssemblyOptions | None = None,
) -> CoupledSystem:
    opts = AssemblyOptions() if opts is None else opts
    _check_spaces(spaces, cut)
    p = max(s.degree for s in spaces)
    n1, n2 = spaces[0].ndofs, spaces[1].ndofs
    offsets = (0, n1, n1 + n2)
    buf = TripletBuffer((n1 + n2, n1 + n2))
    rhs = np.zeros(n1 + n2)
    velocity = opts.velocity if opts.velocity is not None else spec.velocity
    vorder = opts.volume_order or min(2 * p + 2, 10)
    mus = (spec.mu1, spec.mu2)
    fs = (spec.f1, spec.f2)

    for k, space in enumerate(spaces):
        for blk in side_quadrature(cut, k + 1, vorder):
            if len(blk):
                add_volume(buf, rhs, space, blk, offsets[k], mus[k], fs[k], velocity)

    if len(cut.cut_cells):
        iq = interface_quadrature(cut, opts.interface_order or 2 * p + 1)
        nq = iq.w.shape[1]
        normal = np.broadcast_to(cut.seg_normal[:, None, :], (len(iq), nq, 2))
        k1 = cut.kappa1[iq.cells]
        alpha = penalty(opts.alpha0, k1, spec.mu1, spec.mu2, p, mesh.cell_diameters()[iq.cells])
        for s in chunks(len(iq), 20_000):
            add_interface(
                buf, spaces, offsets, iq.cells[s], iq.ref[s], iq.cells[s], iq.ref[s],
                normal[s], iq.w[s], k1[s], alpha[s], mus,
            )

    if opts.stabilized:
        add_stabilization(buf, spaces, offsets, mus, opts, velocity, mesh.spacing)

    system = finalize(buf, rhs, spaces, offsets, spec)
    if velocity is None and p == 1 and not is_symmetric(system.matrix):
        raise AssertionError("pure-diffusion p=1 system is not symmetric")
    return system


def assemble_h2(spec: ProblemSpec, mesh, cut: CutGeometry, spaces, opts: AssemblyOptions | None = None) -> CoupledSystem:
    """The unstabilized method on spaces built with delta = 0."""
    base = AssemblyOptions() if opts is None else opts
    for s in spaces:
        if s.submesh.delta != 0:
            raise ValueError("the H2 scheme needs spaces built with delta = 0")
    o = AssemblyOptions(
        alpha0=base.alpha0, delta=0.0, stabilized=False, scheme=H2, velocity=base.velocity,
        volume_order=base.volume_order, interface_order=base.interface_order,
    )
    return assemble_sharp(spec, mesh, cut, spaces, o)
