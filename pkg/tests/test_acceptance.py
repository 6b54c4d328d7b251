"""Acceptance criteria 1-8.

Each ``test_criterion_N_*`` function checks one criterion at its stated tolerance;
the terminal summary prints one PASS/FAIL line per criterion with the measured values.
"""

import math
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import quad

from pgcut import experiments as ex
from pgcut.diffuse import diffuse_interface_matrix
from pgcut.fespace import interpolate
from pgcut.geometry import clip_triangles, delta_eps
from pgcut.nitsche import AssemblyOptions, assemble_sharp
from pgcut.pg_stab import AVERAGE, LUMPED, assemble_pg_matrix, build_projector, project_gradient
from pgcut.problems import catalog

from cases import build, patch_problem

pytestmark = pytest.mark.acceptance


@lru_cache(maxsize=None)
def convergence(**kw):
    t0 = time.perf_counter()
    report = ex.run_convergence(ex.ExperimentConfig(**kw))
    return report.errors(), report.rates(), time.perf_counter() - t0


def within(values, refs, rel):
    return all(abs(v - r) <= rel * r for v, r in zip(values, refs))


def fmt(xs, spec="{:.3e}"):
    return "[" + ", ".join(spec.format(x) for x in xs) + "]"


def note(record, label, errors, rates):
    record("measured", f"{label}: errors {fmt(errors)}, EOC {fmt(rates, '{:.3f}')}")


# ---------------------------------------------------------------- 1


SMOOTH_REF = [4.02e-05, 1.01e-05, 2.54e-06]
SMOOTH_H2_REF = [1.03e-05, 2.59e-06, 6.48e-07]


def test_criterion_1_smooth_quasi_1d(record_property):
    total = 0.0
    ok = True
    for label, kw, ref in (
        ("sharp delta=0", dict(scheme="sharp", delta="0"), SMOOTH_REF),
        ("sharp delta=6h", dict(scheme="sharp", delta="6h"), SMOOTH_REF),
        ("H2", dict(scheme="h2", delta="0"), SMOOTH_H2_REF),
    ):
        errors, rates, secs = convergence(problem="smooth1d", levels="128..512", **kw)
        total += secs
        note(record_property, label, errors, rates)
        ok &= within(errors, ref, 0.30)
        if label != "H2":
            ok &= all(1.9 <= r <= 2.1 for r in rates)
    record_property("measured", f"runtime {total:.1f} s")
    assert ok and total <= 300


# ---------------------------------------------------------------- 2


def test_criterion_2_kink_quasi_1d(record_property):
    errors, rates, _ = convergence(problem="kink1d", levels="128..512")
    note(record_property, "uniform sharp delta=0", errors, rates)
    q_errors, q_rates, _ = convergence(problem="kink1d", mesh="quasi-uniform", levels="0..4", delta="6h")
    note(record_property, "quasi-uniform sharp delta=6h", q_errors, q_rates)
    assert within(errors, [2.91e-05, 7.31e-06, 1.83e-06], 0.30)
    assert all(1.9 <= r <= 2.1 for r in rates)
    assert all(1.85 <= r <= 2.1 for r in q_rates)


# ---------------------------------------------------------------- 3


def test_criterion_3_circle(record_property):
    errors, rates, _ = convergence(problem="circle", levels="32..256")
    note(record_property, "sharp delta=0", errors, rates)
    assert within(errors, [4.32e-03, 1.09e-03, 2.74e-04, 6.87e-05], 0.40)
    assert all(1.85 <= r <= 2.15 for r in rates)


# ---------------------------------------------------------------- 4


# p = 3 stops at 128: one more level takes over ten minutes on a single core
@pytest.mark.parametrize("p,levels", [(1, "64..512"), (2, "32..256"), (3, "32..128")])
def test_criterion_4_high_order(p, levels, record_property):
    errors, rates, _ = convergence(problem="quartic", degree=p, levels=levels)
    note(record_property, f"quartic p={p} h^-1 {levels}", errors, rates)
    assert len(errors) >= 3
    assert all(p + 1 - 0.15 <= r <= p + 1 + 0.15 for r in rates)
    if p == 2:
        assert within(errors[:3], [9.92e-07, 1.24e-07, 1.56e-08], 0.25)


# ---------------------------------------------------------------- 5


def test_criterion_5_conditioning(record_property):
    rows = ex.run_condition_sweep(ex.ExperimentConfig(problem="quartic"))
    h2 = np.array([r.kappa_h2 for r in rows])
    sh = np.array([r.kappa_sharp for r in rows])
    record_property("measured", f"H2 kappa*h^2 {fmt(h2)}")
    record_property("measured", f"sharp kappa*h^2 {fmt(sh)}")
    assert [r.dist for r in rows] == pytest.approx([10.0**-j for j in range(2, 10)])
    assert np.all(np.isfinite(sh)) and sh.max() / sh.min() <= 2.0 and sh.max() <= 50.0
    # monotone growth up to eigen-solver accuracy
    assert np.all(h2[1:] >= h2[:-1] * (1 - 1e-6))
    assert h2[-1] >= 1e9 * h2[0]


# ---------------------------------------------------------------- 6


def test_criterion_6_diffuse(record_property):
    errors, rates, _ = convergence(problem="smooth1d", scheme="diffuse", delta="domain", levels="128..512")
    note(record_property, "smooth1d diffuse delta=domain", errors, rates)
    sharp, _, _ = convergence(problem="smooth1d", scheme="sharp", delta="0", levels="128..512")
    record_property("measured", f"diffuse/sharp error ratios {fmt(np.array(errors) / sharp, '{:.3f}')}")
    c_errors, c_rates, _ = convergence(problem="circle", scheme="diffuse", delta="6h", levels="128..512")
    note(record_property, "circle diffuse delta=6h", c_errors, c_rates)
    assert all(1.85 <= r <= 2.15 for r in rates)
    assert all(e <= 2 * s and s <= 2 * e for e, s in zip(errors, sharp))
    assert all(1.8 <= r <= 2.2 for r in c_rates)


# ---------------------------------------------------------------- 7


def rayleigh(N, D, X):
    return np.einsum("ik,ik->k", X, N @ X) / np.einsum("ik,ik->k", X, D @ X)


def check_cut_cells(rng):
    P = rng.uniform(-1, 1, size=(3000, 3, 2))
    d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    P = P[np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) > 1e-3]
    f = rng.uniform(-1, 1, size=(len(P), 3))
    mixed = (f > 0).any(axis=1) & (f < 0).any(axis=1)
    P, f = P[mixed][:1000], f[mixed][:1000]
    assert len(P) == 1000
    out = clip_triangles(P, f)

    def area(T):
        a, b = T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]
        return 0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    a1 = np.bincount(out[1][1], weights=area(out[1][0]), minlength=len(P))
    a2 = np.bincount(out[2][1], weights=area(out[2][0]), minlength=len(P))
    whole = area(P)
    k1 = out["kappa1"]
    return max(np.max(np.abs(k1 + (1 - k1) - 1)), np.max(np.abs(a1 + a2 - whole) / whole), np.max(np.abs(k1 - a1 / whole)))


def check_constant_gradients():
    worst = 0.0
    for p in (1, 2, 3):
        _, _, spaces = build(catalog("kink1d"), 6, 0.1, p)
        u = interpolate(spaces[0], lambda x: 0.7 * x[..., 0] - 1.9 * x[..., 1] + 3.0)
        for mode in (LUMPED, AVERAGE) if p == 1 else (AVERAGE,):
            gx, gy = project_gradient(build_projector(spaces[0], mode), u)
            worst = max(worst, np.abs(gx - 0.7).max(), np.abs(gy + 1.9).max())
    return worst


def p1_setup(name, n, shift=None):
    spec = catalog(name)
    if shift is not None:
        spec = ex.shifted_problem(spec, shift)
    mesh, cut, spaces = build(spec, n, 0.0)
    return spec, mesh, cut, spaces


def check_psd_and_modes(rng):
    spec, mesh, cut, spaces = p1_setup("kink1d", 16, 0.5 + 1e-7)
    worst_rq, worst_sym, worst_modes = np.inf, 0.0, 0.0
    for space, mu in zip(spaces, (spec.mu1, spec.mu2)):
        lump, avg = build_projector(space, LUMPED), build_projector(space, AVERAGE)
        S = assemble_pg_matrix(space, lump, mu).toarray()
        norm = np.linalg.norm(S, 2)
        X = rng.normal(size=(space.ndofs, 1000))
        q = np.einsum("ik,ik->k", X, S @ X) / np.einsum("ik,ik->k", X, X)
        worst_rq = min(worst_rq, q.min() / norm)
        worst_sym = max(worst_sym, np.abs(S - S.T).max() / norm)
        for c in range(2):
            worst_modes = max(worst_modes, np.abs((lump.G[c] - avg.G[c]).toarray()).max())
    return worst_rq, worst_sym, worst_modes


def check_spectral_equivalence(rng):
    lo, hi = np.inf, -np.inf
    for name, shift in (("kink1d", 0.5 + 1e-7), ("circle", None)):
        spec, mesh, cut, spaces = p1_setup(name, 16, shift)
        plain = assemble_sharp(spec, mesh, cut, spaces, AssemblyOptions(stabilized=False))
        free = plain.free
        mus = (spec.mu1, spec.mu2)
        projs = [build_projector(s) for s in spaces]
        S = sp.block_diag([assemble_pg_matrix(s, pr, mu) for s, pr, mu in zip(spaces, projs, mus)]).tocsr()
        L = sp.block_diag([mu * pr.L for pr, mu in zip(projs, mus)]).tocsr()
        A = plain.matrix
        N = (A + S)[free][:, free]
        D = (A + L)[free][:, free]
        q = rayleigh(N, D, rng.normal(size=(len(free), 1000)))
        lo, hi = min(lo, q.min()), max(hi, q.max())
    return lo, hi


def check_delta_mass():
    worst = 0.0
    for eps in (1e-3, 0.05, 1.0):
        mass, _ = quad(lambda t: delta_eps(t, eps), -8 * eps, 8 * eps, epsabs=1e-12, epsrel=1e-12, points=[0.0])
        worst = max(worst, abs(mass - 1.0))
    return worst


def check_patch():
    worst = 0.0
    for theta, c, delta in ((0.3, 0.6, 0.0), (2.0, -0.1, 6 / 16), (4.0, -0.8, math.sqrt(2))):
        spec = patch_problem(theta, c, 0.05, 3.0)
        mesh, cut, spaces = build(spec, 16, delta)
        system = assemble_sharp(spec, mesh, cut, spaces, AssemblyOptions(delta=delta))
        x = system.solve()
        keep = np.setdiff1d(np.arange(system.n), system.pinned)
        exact = np.concatenate([spec.u1(spaces[0].coords), spec.u2(spaces[1].coords)])
        worst = max(worst, np.abs(x - exact)[keep].max())
    return worst


def check_diffuse_probe():
    """w^T I u for u with [[u]] = 0 and continuous flux and continuous w: zero pointwise."""
    line = patch_problem(0.4, 0.55, 0.2, 3.0)
    circle = replace(catalog("circle"), mu2=1.0, u1=lambda x: 2 * x[..., 0] - x[..., 1], u2=lambda x: 2 * x[..., 0] - x[..., 1])
    f = lambda x: np.cos(2 * x[..., 0]) + x[..., 1] ** 2
    worst = 0.0
    for spec, delta in ((line, 6 / 16), (circle, 6 * 2 / 16)):
        mesh, cut, spaces = build(spec, 16, delta)
        I = diffuse_interface_matrix(spec, mesh, spaces, cut=cut)
        u = np.concatenate([interpolate(spaces[0], spec.u1), interpolate(spaces[1], spec.u2)])
        w = np.concatenate([interpolate(spaces[0], f), interpolate(spaces[1], f)])
        scale = abs(I).max() * np.abs(u).max() * np.abs(w).max() * I.shape[0]
        worst = max(worst, abs(w @ I @ u) / scale)
    return worst


def test_criterion_7_property_suite(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240607)
    cut_err = check_cut_cells(rng)
    grad_err = check_constant_gradients()
    rq_min, sym_err, mode_err = check_psd_and_modes(rng)
    eq_lo, eq_hi = check_spectral_equivalence(rng)
    mass_err = check_delta_mass()
    patch_err = check_patch()
    probe = check_diffuse_probe()
    secs = time.perf_counter() - t0
    for line in (
        f"cut cells: kappa/area error {cut_err:.2e}",
        f"constant gradients p=1..3: {grad_err:.2e}",
        f"S symmetric {sym_err:.2e}, min Rayleigh/|S| {rq_min:.2e}, lumped vs average {mode_err:.2e}",
        f"(A+S)/(A+L) Rayleigh quotients in [{eq_lo:.4f}, {eq_hi:.12f}]",
        f"delta_eps mass error {mass_err:.2e}, patch test {patch_err:.2e}, diffuse probe {probe:.2e}",
        f"runtime {secs:.1f} s",
    ):
        record_property("measured", line)
    assert cut_err <= 1e-12
    assert grad_err <= 1e-12
    assert sym_err <= 1e-12 and rq_min >= -1e-10
    assert mode_err <= 1e-12
    assert 0 < eq_lo and eq_hi <= 1 + 1e-10
    assert mass_err <= 1e-8
    assert patch_err <= 1e-10
    assert probe <= 1e-10
    assert secs < 60


# ---------------------------------------------------------------- 8


def test_criterion_8_convection(record_property):
    cfg = ex.ExperimentConfig(problem="convection", h_inv=256)
    plain = ex.run_convection(cfg, beta=0.0)
    stab = ex.run_convection(cfg, beta="bh")
    for r in (plain, stab):
        record_property("measured", f"beta={r.beta}: range [{r.umin:.4f}, {r.umax:.4f}], oscillation {r.oscillation:.4f}")
    ratio = plain.oscillation / max(stab.oscillation, 1e-300)
    record_property("measured", f"oscillation ratio {ratio:.2f}")
    assert ratio >= 5.0
    assert -0.5 <= stab.umin and stab.umax <= 1.5
    assert plain.umin < -0.5 or plain.umax > 1.5
