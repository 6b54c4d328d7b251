"""Convergence studies, the condition-number sweep and the convection demo."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .diffuse import DiffuseOptions, assemble_diffuse
from .fespace import FeSpace, build_space, evaluate, locate_points
from .geometry import CutGeometry, Line, classify_and_cut
from .linalg import SolverError, condition_number
from .mesh import Mesh, build_quasi_uniform_mesh, build_uniform_mesh, select_submesh
from .nitsche import AssemblyOptions, CoupledSystem, assemble_h2, assemble_sharp
from .problems import ProblemSpec, catalog, eoc, l2_error

log = logging.getLogger(__name__)

SCHEMES = ("sharp", "h2", "diffuse")
DELTAS = ("0", "6h", "domain")
MESHES = ("uniform", "quasi-uniform")
MAX_H_INV = 512


@dataclass
class ExperimentConfig:
    problem: str = "smooth1d"
    scheme: str = "sharp"
    delta: str = "0"
    degree: int = 1
    mesh: str = "uniform"
    levels: str = "128..512"  # h^-1 range for uniform meshes, level range for quasi-uniform ones
    alpha0: float = 20.0
    eps_rule: str = "h"  # diffuse width: "h", "2h", "0.5h", ...
    heaviside: str = "clip"
    beta: str = "1"  # "0", "1", a number, or "bh"
    rtol: float = 1e-12
    solver: str = "auto"
    out: str = "out"
    extended: bool = False
    sweep_n: int = 32  # condition sweep mesh
    h_inv: int = 256  # convection mesh
    sample: int = 201  # convection sampling grid per side
    mu1: float | None = None
    mu2: float | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.delta not in DELTAS:
            raise ValueError(f"delta must be one of {DELTAS}, got {self.delta!r}")
        if self.mesh not in MESHES:
            raise ValueError(f"mesh must be one of {MESHES}, got {self.mesh!r}")
        if self.degree not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")
        if self.scheme == "h2" and self.delta != "0":
            raise ValueError("the h2 scheme needs delta = 0")
        spec = catalog(self.problem)
        if self.mesh == "quasi-uniform" and not spec.quasi_1d:
            raise ValueError("quasi-uniform meshes are only for the quasi-1D problems")
        self.eps_factor()
        parse_beta(self.beta)
        lo, hi = parse_levels(self.levels)
        if self.mesh == "uniform" and hi > MAX_H_INV and not self.extended:
            raise ValueError(f"h^-1 above {MAX_H_INV} needs --extended")

    def eps_factor(self) -> float:
        rule = self.eps_rule.strip()
        if not rule.endswith("h"):
            raise ValueError(f"eps rule must look like 'h' or '2h', got {rule!r}")
        c = float(rule[:-1]) if rule[:-1] else 1.0
        if c <= 0:
            raise ValueError("eps factor must be positive")
        return c

    def spec(self) -> ProblemSpec:
        spec = catalog(self.problem)
        if self.mu1 is not None or self.mu2 is not None:
            from dataclasses import replace

            spec = replace(
                spec,
                mu1=spec.mu1 if self.mu1 is None else self.mu1,
                mu2=spec.mu2 if self.mu2 is None else self.mu2,
            )
        return spec

    def mesh_sizes(self) -> list[int]:
        lo, hi = parse_levels(self.levels)
        if self.mesh == "quasi-uniform":
            return list(range(lo, hi + 1))
        out, n = [], lo
        while n <= hi:
            out.append(n)
            n *= 2
        return out


def parse_levels(text: str) -> tuple[int, int]:
    parts = str(text).split("..")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise ValueError(f"levels must look like 'a..b', got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or vals[0] > vals[1] or vals[0] < 0:
        raise ValueError(f"levels must look like 'a..b' with a <= b, got {text!r}")
    return vals[0], vals[1]


def parse_beta(text) -> float | str:
    if str(text) == "bh":
        return "bh"
    b = float(text)
    if b < 0:
        raise ValueError("beta must be nonnegative")
    return b


def read_config(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys may use dashes or underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def make_config(values: dict) -> ExperimentConfig:
    """ExperimentConfig from string-or-typed values, converting by field type."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        if value is None:
            continue
        kind = str(known[key].type)
        if isinstance(value, str):
            if kind.startswith("bool"):
                value = value.lower() in ("1", "true", "yes", "on")
            elif kind.startswith("int"):
                value = int(value)
            elif kind.startswith("float"):
                value = float(value)
        kwargs[key] = value
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------- setup


def build_mesh(spec: ProblemSpec, family: str, size: int) -> Mesh:
    """``size`` is h^-1 (cells per side of the domain) or a quasi-uniform level."""
    if family == "quasi-uniform":
        return build_quasi_uniform_mesh(size)
    return build_uniform_mesh(size, spec.domain)


def delta_value(rule: str, mesh: Mesh) -> float:
    if rule == "0":
        return 0.0
    if rule == "6h":
        return 6.0 * mesh.spacing
    if rule == "domain":
        return mesh.diameter
    raise ValueError(f"unknown delta rule {rule!r}")


def setup(spec: ProblemSpec, mesh: Mesh, delta: float, p: int) -> tuple[CutGeometry, tuple[FeSpace, FeSpace]]:
    cut = classify_and_cut(mesh, spec.levelset)
    spaces = tuple(
        build_space(select_submesh(mesh, spec.levelset, k, delta), p, spec.dirichlet, spec.levelset) for k in (1, 2)
    )
    return cut, spaces


def assemble(cfg: ExperimentConfig, spec: ProblemSpec, mesh: Mesh, beta=None) -> tuple[CoupledSystem, CutGeometry]:
    delta = delta_value(cfg.delta, mesh)
    cut, spaces = setup(spec, mesh, delta, cfg.degree)
    beta = parse_beta(cfg.beta) if beta is None else beta
    if cfg.scheme == "h2":
        return assemble_h2(spec, mesh, cut, spaces, AssemblyOptions(alpha0=cfg.alpha0, stabilized=False, scheme="h2")), cut
    if cfg.scheme == "diffuse":
        opts = DiffuseOptions(
            eps_factor=cfg.eps_factor(), alpha0=cfg.alpha0, delta=delta, heaviside=cfg.heaviside, beta=beta
        )
        return assemble_diffuse(spec, mesh, spaces, opts=opts, cut=cut), cut
    stabilized = beta != 0.0
    opts = AssemblyOptions(alpha0=cfg.alpha0, delta=delta, stabilized=stabilized, beta=beta if stabilized else 1.0)
    return assemble_sharp(spec, mesh, cut, spaces, opts), cut


# ---------------------------------------------------------------- convergence


@dataclass
class ConvergenceRow:
    h_inv: int
    error: float
    eoc: float | None = None
    ndofs: int = 0
    seconds: float = 0.0
    status: str = "ok"


@dataclass
class ConvergenceReport:
    config: ExperimentConfig
    rows: list[ConvergenceRow] = field(default_factory=list)
    wall_time: float = 0.0

    def errors(self) -> list[float]:
        return [r.error for r in self.rows]

    def rates(self) -> list[float]:
        return [r.eoc for r in self.rows[1:]]

    def csv_rows(self) -> list[tuple[str, str, str]]:
        return [
            (str(r.h_inv), fmt_error(r.error), "" if r.eoc is None else fmt_rate(r.eoc)) for r in self.rows
        ]

    def table(self) -> str:
        c = self.config
        head = [
            f"# problem={c.problem} scheme={c.scheme} delta={c.delta} p={c.degree} mesh={c.mesh} "
            f"alpha0={c.alpha0:g} beta={c.beta}" + (f" eps={c.eps_rule}" if c.scheme == "diffuse" else ""),
            f"# wall time {self.wall_time:.1f} s",
        ]
        lines = [f"{'h^-1':>8}  {'L2 error':>14}  {'EOC':>8}  {'dofs':>9}  {'time/s':>8}  status"]
        for (h, e, r), row in zip(self.csv_rows(), self.rows):
            lines.append(f"{h:>8}  {e:>14}  {r:>8}  {row.ndofs:>9}  {row.seconds:>8.2f}  {row.status}")
        return "\n".join(head + lines) + "\n"

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h_inv", "error", "eoc"])
            w.writerows(self.csv_rows())
        (d / "report.txt").write_text(self.table())


def fmt_error(e: float) -> str:
    return "nan" if not np.isfinite(e) else f"{e:.6e}"


def fmt_rate(r: float) -> str:
    return f"{r:.4f}"


def run_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    spec = cfg.spec()
    if not spec.has_exact:
        raise ValueError(f"problem {cfg.problem!r} has no exact solution")
    report = ConvergenceReport(cfg)
    t_all = time.perf_counter()
    for size in cfg.mesh_sizes():
        t0 = time.perf_counter()
        mesh = build_mesh(spec, cfg.mesh, size)
        h_inv = size if cfg.mesh == "uniform" else round(1.0 / mesh.spacing)
        try:
            system, cut = assemble(cfg, spec, mesh)
            x = system.solve(cfg.solver, cfg.rtol)
            err = l2_error(*system.split(x), system.spaces, spec, cut)
            row = ConvergenceRow(h_inv, err, ndofs=system.n)
        except (SolverError, np.linalg.LinAlgError) as exc:
            log.error("h^-1 = %d failed: %s", h_inv, exc)
            row = ConvergenceRow(h_inv, float("nan"), status=f"failed: {exc}")
        row.seconds = time.perf_counter() - t0
        log.info("h^-1 = %d: error %.3e (%.1f s)", h_inv, row.error, row.seconds)
        report.rows.append(row)
    for prev, row in zip(report.rows, report.rows[1:]):
        if np.isfinite(prev.error) and np.isfinite(row.error):
            row.eoc = eoc([(1.0 / prev.h_inv, prev.error), (1.0 / row.h_inv, row.error)])[0]
    report.wall_time = time.perf_counter() - t_all
    return report


# ---------------------------------------------------------------- conditioning


@dataclass
class ConditionRow:
    dist: float
    kappa_h2: float
    kappa_sharp: float
    note: str = ""


def shifted_problem(spec: ProblemSpec, x_gamma: float) -> ProblemSpec:
    """Same coefficients with the vertical interface moved to ``x_gamma`` (region 1 on the left)."""
    return spec.with_levelset(Line(-1.0, 0.0, -x_gamma))


def scaled_condition(system: CoupledSystem, h: float) -> tuple[float, str]:
    A, _, _ = system.reduced()
    try:
        return condition_number(A) * h * h, ""
    except (SolverError, np.linalg.LinAlgError, ArithmeticError) as exc:
        log.warning("eigen-solver failed: %s", exc)
        return float("inf"), "lower bound"


def run_condition_sweep(cfg: ExperimentConfig, js=range(2, 10)) -> list[ConditionRow]:
    """kappa * h^2 for H2 and stabilized sharp (delta = 0, p = 1) with the interface at 0.5 + 10^-j."""
    if cfg.degree != 1:
        raise ValueError("the condition sweep uses p = 1")
    base = cfg.spec()
    if not base.quasi_1d:
        raise ValueError("the condition sweep needs a quasi-1D problem")
    mesh = build_uniform_mesh(cfg.sweep_n, base.domain)
    h = mesh.spacing
    rows = []
    for j in js:
        dist = 10.0 ** (-j)
        spec = shifted_problem(base, 0.5 + dist)
        cut, spaces = setup(spec, mesh, 0.0, 1)
        h2 = assemble_h2(spec, mesh, cut, spaces, AssemblyOptions(alpha0=cfg.alpha0, stabilized=False, scheme="h2"))
        sharp = assemble_sharp(spec, mesh, cut, spaces, AssemblyOptions(alpha0=cfg.alpha0))
        k_h2, n1 = scaled_condition(h2, h)
        k_sh, n2 = scaled_condition(sharp, h)
        rows.append(ConditionRow(dist, k_h2, k_sh, "; ".join(n for n in (n1, n2) if n)))
        log.info("dist 1e-%d: H2 %.4g, sharp %.4g", j, k_h2, k_sh)
    return rows


def write_condition_report(rows: list[ConditionRow], directory: str | Path, cfg: ExperimentConfig) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cells = [(f"{r.dist:.0e}", f"{r.kappa_h2:.6e}", f"{r.kappa_sharp:.6e}", r.note) for r in rows]
    with open(d / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dist", "kappa_h2_scaled", "kappa_sharp_scaled", "note"])
        w.writerows(cells)
    lines = [
        f"# scaled condition numbers kappa*h^2, problem={cfg.problem} mesh {cfg.sweep_n}x{cfg.sweep_n} p=1 "
        f"alpha0={cfg.alpha0:g}",
        f"{'dist':>8}  {'H2':>14}  {'sharp d=0':>14}  note",
    ]
    lines += [f"{a:>8}  {b:>14}  {c:>14}  {n}" for a, b, c, n in cells]
    (d / "report.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- convection


@dataclass
class ConvectionResult:
    beta: float | str
    umin: float
    umax: float
    oscillation: float
    h: float
    system: CoupledSystem = field(repr=False)
    x: np.ndarray = field(repr=False)


def oscillation_metric(u: np.ndarray) -> float:
    """max(0, max u - 1) + max(0, -min u); zero when u stays in [0, 1]."""
    if len(u) == 0:
        return 0.0
    return max(0.0, float(u.max()) - 1.0) + max(0.0, -float(u.min()))


def region_values(system: CoupledSystem, x: np.ndarray, phi) -> tuple[np.ndarray, np.ndarray]:
    """Nodal values of each field on its own closed region, with the node coordinates.

    For p = 1 the extrema of the blended solution are attained at these nodes or on
    the interface, where both fields are close.
    """
    vals, pts = [], []
    for k, (space, coef) in enumerate(zip(system.spaces, system.split(x))):
        s = phi(space.coords)
        keep = s >= 0 if k == 0 else s <= 0
        vals.append(coef[keep])
        pts.append(space.coords[keep])
    return np.concatenate(vals), np.concatenate(pts)


def blended_field(system: CoupledSystem, x: np.ndarray, phi, pts: np.ndarray) -> np.ndarray:
    """H(phi) u_1 + (1 - H(phi)) u_2 at arbitrary points."""
    mesh = system.spaces[0].mesh
    cells, refs = locate_points(mesh, pts)
    inside1 = phi(pts) > 0
    out = np.empty(len(pts))
    for k, (space, coef) in enumerate(zip(system.spaces, system.split(x))):
        sel = inside1 if k == 0 else ~inside1
        if not np.any(sel):
            continue
        if np.any(space.cell_index[cells[sel]] < 0):
            raise ValueError("sampling point outside the active mesh of its region")
        out[sel] = evaluate(space, coef, cells[sel], refs[sel][:, None, :])[:, 0]
    return out


def run_convection(cfg: ExperimentConfig, beta=None) -> ConvectionResult:
    spec = cfg.spec()
    if spec.velocity is None:
        raise ValueError("the convection run needs a problem with a velocity field")
    if cfg.scheme == "h2":
        raise ValueError("the convection run uses the sharp or diffuse scheme")
    mesh = build_uniform_mesh(cfg.h_inv, spec.domain)
    beta = parse_beta(cfg.beta) if beta is None else beta
    system, _ = assemble(cfg, spec, mesh, beta=beta)
    x = system.solve(cfg.solver, cfg.rtol)
    vals, pts = region_values(system, x, spec.levelset)
    h = mesh.spacing
    # strip around the interface, which is also the line the inflow discontinuity follows
    far = np.linalg.norm(pts - spec.levelset.closest_point(pts), axis=1) > 5.0 * h
    return ConvectionResult(beta, float(vals.min()), float(vals.max()), oscillation_metric(vals[far]), h, system, x)


def write_convection(results: list[ConvectionResult], cfg: ExperimentConfig, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    spec = cfg.spec()
    cells = [(str(r.beta), f"{r.umin:.6e}", f"{r.umax:.6e}", f"{r.oscillation:.6e}") for r in results]
    with open(d / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "min", "max", "oscillation"])
        w.writerows(cells)
    lines = [
        f"# convection, scheme={cfg.scheme} h=1/{cfg.h_inv} mu1={spec.mu1:g} mu2={spec.mu2:g}",
        f"{'beta':>6}  {'min':>14}  {'max':>14}  {'oscillation':>14}",
    ]
    lines += [f"{a:>6}  {b:>14}  {c:>14}  {o:>14}" for a, b, c, o in cells]
    (d / "report.txt").write_text("\n".join(lines) + "\n")
    x0, x1, y0, y1 = spec.domain
    g = np.linspace(0.0, 1.0, cfg.sample)
    X, Y = np.meshgrid(x0 + (x1 - x0) * g, y0 + (y1 - y0) * g)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    cols = [pts[:, 0], pts[:, 1]] + [blended_field(r.system, r.x, spec.levelset, pts) for r in results]
    header = ",".join(["x", "y"] + [f"u_beta_{r.beta}" for r in results])
    np.savetxt(d / "field.csv", np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.10g")


def config_echo(cfg: ExperimentConfig) -> str:
    return "\n".join(f"{k} = {v}" for k, v in asdict(cfg).items() if v is not None)
