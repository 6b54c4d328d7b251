"""Test problem catalog, L2 errors and convergence rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .fespace import FeSpace, evaluate
from .geometry import Circle, CutGeometry, LevelSet, Line, side_quadrature

Field = Callable[[np.ndarray], np.ndarray]


def _const(c: float) -> Field:
    return lambda x: np.full(np.shape(x)[:-1], c, dtype=float)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    domain: tuple[float, float, float, float]
    levelset: LevelSet
    mu1: float
    mu2: float
    f1: Field
    f2: Field
    dirichlet: Callable[[np.ndarray], np.ndarray]  # boundary point -> bool
    u1: Field | None = None
    u2: Field | None = None
    grad_u1: Field | None = None
    grad_u2: Field | None = None
    g_dirichlet: Field | None = None  # defaults to the exact solution
    velocity: tuple[float, float] | None = None
    quasi_1d: bool = False

    @property
    def has_exact(self) -> bool:
        return self.u1 is not None and self.u2 is not None

    def exact(self, x: np.ndarray) -> np.ndarray:
        if not self.has_exact:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        return np.where(self.levelset(x) > 0, self.u1(x), self.u2(x))

    def boundary_values(self, x: np.ndarray, field: int | None = None) -> np.ndarray:
        """Dirichlet data; with ``field`` set and no explicit data, that field's exact solution.

        Boundary nodes of field k can lie just outside region k (on an edge crossing
        the interface); they take the smooth extension u_k rather than the other side's value.
        """
        if self.g_dirichlet is not None:
            return self.g_dirichlet(x)
        if field is not None and self.has_exact:
            return (self.u1 if field == 1 else self.u2)(x)
        return self.exact(x)

    def scaled(self, s: float) -> "ProblemSpec":
        """Same problem with diffusion and sources multiplied by ``s``."""
        f1, f2 = self.f1, self.f2
        return replace(self, mu1=s * self.mu1, mu2=s * self.mu2, f1=lambda x: s * f1(x), f2=lambda x: s * f2(x))

    def with_levelset(self, phi: LevelSet) -> "ProblemSpec":
        return replace(self, levelset=phi)


def _x_sides(x0: float, x1: float) -> Callable[[np.ndarray], np.ndarray]:
    def pred(p):
        return (np.abs(p[..., 0] - x0) < 1e-12) | (np.abs(p[..., 0] - x1) < 1e-12)

    return pred


def _everywhere(p):
    return np.ones(np.shape(p)[:-1], dtype=bool)


def _grad_x(fprime: Callable[[np.ndarray], np.ndarray]) -> Field:
    def g(x):
        out = np.zeros(np.shape(x), dtype=float)
        out[..., 0] = fprime(x[..., 0])
        return out

    return g


def _smooth1d() -> ProblemSpec:
    u = lambda x: (x[..., 0] - 0.01) * (1.01 - x[..., 0])
    du = _grad_x(lambda t: 1.02 - 2.0 * t)
    return ProblemSpec(
        name="smooth1d",
        domain=(0.0, 1.0, 0.0, 1.0),
        levelset=Line(-1.0, 0.0, -0.51),  # phi = 0.51 - x, region 1 on the left
        mu1=1e-8,
        mu2=1.0,
        f1=_const(2e-8),
        f2=_const(2.0),
        dirichlet=_x_sides(0.0, 1.0),
        u1=u,
        u2=u,
        grad_u1=du,
        grad_u2=du,
        quasi_1d=True,
    )


def _kink1d() -> ProblemSpec:
    s = lambda x: x[..., 0] - 0.01
    return ProblemSpec(
        name="kink1d",
        domain=(0.0, 1.0, 0.0, 1.0),
        levelset=Line(-1.0, 0.0, -0.51),
        mu1=0.5,
        mu2=3.0,
        f1=_const(1.0),
        f2=_const(1.0),
        dirichlet=_x_sides(0.0, 1.0),
        u1=lambda x: (9 / 14) * s(x) - s(x) ** 2,
        u2=lambda x: 5 / 84 + (9 / 84) * s(x) - s(x) ** 2 / 6,
        grad_u1=_grad_x(lambda t: 9 / 14 - 2 * (t - 0.01)),
        grad_u2=_grad_x(lambda t: 9 / 84 - (t - 0.01) / 3),
        quasi_1d=True,
    )


def _quartic() -> ProblemSpec:
    s = lambda x: x[..., 0] - 0.01
    return ProblemSpec(
        name="quartic",
        domain=(0.0, 1.0, 0.0, 1.0),
        levelset=Line(-1.0, 0.0, -0.51),
        mu1=0.5,
        mu2=2.0,
        f1=lambda x: 4.0 * s(x) ** 2,
        f2=lambda x: (108 / 11) * s(x) ** 2,
        dirichlet=_x_sides(0.0, 1.0),
        u1=lambda x: (7 / 12) * s(x) - (2 / 3) * s(x) ** 4,
        u2=lambda x: 25 / 176 + (47 / 176) * s(x) - (9 / 22) * s(x) ** 4,
        grad_u1=_grad_x(lambda t: 7 / 12 - (8 / 3) * (t - 0.01) ** 3),
        grad_u2=_grad_x(lambda t: 47 / 176 - (18 / 11) * (t - 0.01) ** 3),
        quasi_1d=True,
    )


def _circle() -> ProblemSpec:
    r2 = lambda x: x[..., 0] ** 2 + x[..., 1] ** 2
    c = 0.5625  # r^2 on the interface
    return ProblemSpec(
        name="circle",
        domain=(-1.0, 1.0, -1.0, 1.0),
        levelset=Circle((0.0, 0.0), 0.75),
        mu1=1.0,
        mu2=1e3,
        f1=_const(-4.0),
        f2=_const(-4.0),
        dirichlet=_everywhere,
        u1=r2,
        u2=lambda x: r2(x) / 1000 - c / 1000 + c,
        grad_u1=lambda x: 2.0 * np.asarray(x, dtype=float),
        grad_u2=lambda x: 2.0 * np.asarray(x, dtype=float) / 1000,
    )


def convection_line() -> Line:
    """Line through (0, 0.7) parallel to the velocity, positive on the upper-right side."""
    th = -math.pi / 3
    # region 1 = {a x + b y < c} with a = sin(th), b = -cos(th), c = -0.7 cos(th)
    a, b, c = math.sin(th), -math.cos(th), -0.7 * math.cos(th)
    return Line(-a, -b, -c)


def _convection(mu1: float = 1e-3, mu2: float = 1e-8) -> ProblemSpec:
    th = -math.pi / 3

    def g(x):
        x = np.asarray(x, dtype=float)
        zero = (np.abs(x[..., 0] - 1.0) < 1e-12) | (x[..., 1] <= 0.7)
        return np.where(zero, 0.0, 1.0)

    return ProblemSpec(
        name="convection",
        domain=(0.0, 1.0, 0.0, 1.0),
        levelset=convection_line(),
        mu1=mu1,
        mu2=mu2,
        f1=_const(0.0),
        f2=_const(0.0),
        dirichlet=_everywhere,
        g_dirichlet=g,
        velocity=(math.cos(th), math.sin(th)),
    )


PROBLEMS = {
    "smooth1d": _smooth1d,
    "kink1d": _kink1d,
    "circle": _circle,
    "quartic": _quartic,
    "convection": _convection,
}


def catalog(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def l2_error(
    x1: np.ndarray,
    x2: np.ndarray,
    spaces: tuple[FeSpace, FeSpace],
    spec: ProblemSpec,
    cut: CutGeometry,
    order: int | None = None,
) -> float:
    """L2 norm of the blended discrete solution minus the exact one.

    Field k is integrated over the discrete region k (full cells plus clipped parts of
    cut cells), which is the H(phi)-blend of the two fields.
    """
    if not spec.has_exact:
        raise ValueError(f"problem {spec.name!r} has no exact solution")
    p = max(s.degree for s in spaces)
    order = min(2 * p + 2, 10) if order is None else order
    total = 0.0
    for side, (coef, space, u) in enumerate(((x1, spaces[0], spec.u1), (x2, spaces[1], spec.u2)), start=1):
        for blk in side_quadrature(cut, side, order):
            if len(blk) == 0:
                continue
            uh = evaluate(space, coef, blk.cells, blk.ref)
            total += float(np.sum(blk.w * (uh - u(blk.x)) ** 2))
    return math.sqrt(total)


def eoc(errors: list[tuple[float, float]]) -> list[float]:
    """Rates log(e_{i-1}/e_i) / log(h_{i-1}/h_i); log2 of the error ratio for halving."""
    hs = np.array([h for h, _ in errors], dtype=float)
    es = np.array([e for _, e in errors], dtype=float)
    if np.any(np.diff(hs) >= 0):
        raise ValueError("mesh sizes must be strictly decreasing")
    return [float(math.log(es[i - 1] / es[i]) / math.log(hs[i - 1] / hs[i])) for i in range(1, len(hs))]
