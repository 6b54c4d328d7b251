"""Shared test problems and setup helpers."""

import math

import numpy as np

from pgcut.fespace import build_space
from pgcut.geometry import Line, classify_and_cut
from pgcut.mesh import build_uniform_mesh, select_submesh
from pgcut.problems import ProblemSpec


def everywhere(x):
    return np.ones(x.shape[:-1], dtype=bool)


def zero(x):
    return np.zeros(x.shape[:-1])


def patch_problem(theta, c, mu1, mu2, tangential=0.4, normal1=1.3):
    """Piecewise linear u with [[u]] = 0 and [[mu d_n u]] = 0 across a straight line."""
    n1 = np.array([math.cos(theta), math.sin(theta)])
    line = Line(n1[0], n1[1], c)  # phi = n1 . x - c, normal -grad phi / |grad phi| = -n1
    t = np.array([-n1[1], n1[0]])
    a = normal1 * n1 + tangential * t
    b = (mu1 / mu2) * normal1 * n1 + tangential * t
    # both pieces agree on the line n1 . x = c
    c1 = 0.2
    c2 = c1 + (normal1 - (mu1 / mu2) * normal1) * c
    u1 = lambda x: x @ a + c1
    u2 = lambda x: x @ b + c2
    spec = ProblemSpec(
        name="patch", domain=(0.0, 1.0, 0.0, 1.0), levelset=line, mu1=mu1, mu2=mu2,
        f1=zero, f2=zero, dirichlet=everywhere, u1=u1, u2=u2,
    )
    return spec


def build(spec, n, delta, p=1):
    mesh = build_uniform_mesh(n, spec.domain)
    cut = classify_and_cut(mesh, spec.levelset)
    spaces = tuple(
        build_space(select_submesh(mesh, spec.levelset, k, delta), p, spec.dirichlet, spec.levelset) for k in (1, 2)
    )
    return mesh, cut, spaces
