"""Projected-gradient (PG) stabilization.

The stabilization form is ``s(u, w) = beta * mu * ((grad u - G u), grad w)`` where
``G u`` is a continuous nodal recovery of the gradient.  Algebraically
``S = beta * mu * (L - sum_c B_c^T G_c)`` with ``L`` the stiffness matrix and
``B_c[j, i] = (phi_j, d_c phi_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import FeSpace, affine_maps, ref_basis, ref_nodes, tabulate
from .linalg import TripletBuffer
from .quadrature import gauss_triangle

LUMPED = "lumped"
AVERAGE = "average"

CHUNK = 20_000


def chunks(n: int, size: int = CHUNK):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


@dataclass(eq=False)
class GradientProjector:
    space: FeSpace
    mode: str
    cells: np.ndarray  # cells the operators are assembled over
    G: tuple[sp.csr_matrix, sp.csr_matrix]  # nodal gradient components
    B: tuple[sp.csr_matrix, sp.csr_matrix]
    L: sp.csr_matrix
    lumped: np.ndarray  # integral of each basis function


def _volume_operators(space: FeSpace, cells: np.ndarray):
    """Stiffness L, gradient matrices B_x, B_y and basis integrals over ``cells``."""
    n = space.ndofs
    rule = gauss_triangle(max(2 * space.degree, 1))
    Lb = TripletBuffer((n, n))
    Bb = [TripletBuffer((n, n)), TripletBuffer((n, n))]
    lumped = np.zeros(n)
    for s in chunks(len(cells)):
        c = cells[s]
        dofs = space.dofs_of(c)
        vals, grads = tabulate(space, c, rule.points)
        _, _, det = affine_maps(space.mesh, c)
        w = rule.weights[None, :] * np.abs(det)[:, None]
        Lb.add_local(dofs, dofs, np.einsum("mq,mqid,mqjd->mij", w, grads, grads))
        for d in range(2):
            Bb[d].add_local(dofs, dofs, np.einsum("mq,mqj,mqi->mji", w, vals, grads[..., d]))
        np.add.at(lumped, dofs, np.einsum("mq,mqj->mj", w, vals))
    return Lb.compress(), (Bb[0].compress(), Bb[1].compress()), lumped


def _nodal_average(space: FeSpace, cells: np.ndarray):
    """G_c[j, i] = sum_K |K| d_c phi_i|_K(x_j) / sum_K |K| over active cells K containing node j."""
    n = space.ndofs
    nodes = ref_nodes(space.degree)
    _, gref = ref_basis(space.degree, nodes)  # (nloc_nodes, nloc, 2)
    Gb = [TripletBuffer((n, n)), TripletBuffer((n, n))]
    weight = np.zeros(n)
    for s in chunks(len(cells)):
        c = cells[s]
        dofs = space.dofs_of(c)
        _, invJ, det = affine_maps(space.mesh, c)
        area = 0.5 * np.abs(det)
        g = np.einsum("jld,mde->mjle", gref, invJ)  # (m, node j, basis l, comp)
        for d in range(2):
            Gb[d].add_local(dofs, dofs, area[:, None, None] * g[..., d])
        np.add.at(weight, dofs, np.broadcast_to(area[:, None], dofs.shape))
    if np.any(weight <= 0):
        raise AssertionError("node without an adjacent active cell")
    Dinv = sp.diags(1.0 / weight)
    return tuple(sp.csr_matrix(Dinv @ b.compress()) for b in Gb)


def build_projector(space: FeSpace, mode: str | None = None, cells: np.ndarray | None = None) -> GradientProjector:
    """Gradient projector on ``space``.

    ``mode`` is ``lumped`` (lumped L2 projection, p = 1 only) or ``average``
    (area-weighted average of one-sided nodal gradients); the default is lumped for
    p = 1 and average otherwise.  ``cells`` restricts everything to a subset of the
    active cells (default: all of them).
    """
    if mode is None:
        mode = LUMPED if space.degree == 1 else AVERAGE
    if mode not in (LUMPED, AVERAGE):
        raise ValueError(f"unknown projector mode {mode!r}")
    if mode == LUMPED and space.degree != 1:
        raise ValueError("lumped projection needs p = 1 (higher-order basis integrals can vanish)")
    cells = space.cells if cells is None else np.asarray(cells)
    L, B, lumped = _volume_operators(space, cells)
    if mode == LUMPED:
        used = lumped > 0
        inv = np.zeros_like(lumped)
        inv[used] = 1.0 / lumped[used]
        Minv = sp.diags(inv)
        G = (sp.csr_matrix(Minv @ B[0]), sp.csr_matrix(Minv @ B[1]))
    else:
        G = _nodal_average(space, cells)
    return GradientProjector(space, mode, cells, G, B, L, lumped)


def project_gradient(projector: GradientProjector, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    if u.shape != (projector.space.ndofs,):
        raise ValueError("dof vector does not match the space")
    return projector.G[0] @ u, projector.G[1] @ u


def assemble_pg_matrix(space: FeSpace, projector: GradientProjector, mu: float, beta: float = 1.0) -> sp.csr_matrix:
    """S = beta * mu * (L - B_x^T G_x - B_y^T G_y)."""
    if projector.space is not space and projector.space.ndofs != space.ndofs:
        raise ValueError("projector belongs to a different space")
    S = projector.L - projector.B[0].T @ projector.G[0] - projector.B[1].T @ projector.G[1]
    return sp.csr_matrix(beta * mu * S)


def beta_h(v, h: float, mu: float) -> float:
    """Convection scaling max(1, |v| h / (2 mu))."""
    if mu <= 0:
        raise ValueError("diffusion coefficient must be positive")
    return max(1.0, math.hypot(*np.asarray(v, dtype=float)) * h / (2.0 * mu))
