"""Gauss rules on the reference triangle {(0,0),(1,0),(0,1)} and on [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np
from scipy.special import roots_jacobi

MAX_ORDER = 10


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,), sums to the reference measure
    order: int

    def __len__(self) -> int:
        return len(self.weights)


def _orbit(bary: tuple[float, float, float], w: float) -> list[tuple[float, float, float]]:
    pts = sorted(set(permutations(bary)))
    return [(p[1], p[2], w) for p in pts]


# Symmetric rules (barycentric orbits); weights normalised to 1 before halving.
_SYMMETRIC = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 3)],
    4: [
        ((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322),
    ],
    5: [
        ((1 / 3, 1 / 3, 1 / 3), 0.225),
        ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
        ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827),
    ],
    6: [
        ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
    ],
}
_SYMMETRIC[3] = _SYMMETRIC[4]


def _symmetric_rule(order: int) -> QuadRule:
    rows = []
    for bary, w in _SYMMETRIC[order]:
        rows.extend(_orbit(bary, w))
    arr = np.array(rows)
    weights = arr[:, 2]
    # tabulated digits are 15-significant; renormalise the total exactly
    weights = 0.5 * weights / weights.sum()
    return QuadRule(arr[:, :2].copy(), weights, order)


def _conical_rule(order: int) -> QuadRule:
    # collapsed (Duffy) product of Gauss-Jacobi(1,0) and Gauss-Legendre
    n = (order + 2) // 2
    tu, wu = roots_jacobi(n, 1.0, 0.0)
    tv, wv = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (1.0 + tu)
    v = 0.5 * (1.0 + tv)
    wu = wu / 4.0  # (1-t)/2 Jacobian factor and d u = dt/2
    wv = wv / 2.0
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([uu.ravel(), (vv * (1.0 - uu)).ravel()])
    weights = np.outer(wu, wv).ravel()
    return QuadRule(pts, weights, order)


@lru_cache(maxsize=None)
def gauss_triangle(order: int) -> QuadRule:
    """Rule on the reference triangle exact for polynomials of total degree ``order``."""
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"unsupported triangle quadrature order {order} (1..{MAX_ORDER})")
    if order in _SYMMETRIC:
        return _symmetric_rule(order)
    return _conical_rule(order)


@lru_cache(maxsize=None)
def gauss_segment(order: int) -> QuadRule:
    """Gauss-Legendre on [0, 1] exact to ``order``."""
    if not 1 <= order <= 2 * MAX_ORDER + 1:
        raise ValueError(f"unsupported segment quadrature order {order}")
    n = (order + 2) // 2
    t, w = np.polynomial.legendre.leggauss(n)
    return QuadRule((0.5 * (t + 1.0))[:, None], 0.5 * w, order)
