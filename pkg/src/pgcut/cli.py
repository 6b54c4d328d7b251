"""Command-line driver: ``pgcut {convergence,condition,convection,mesh-info,export-system}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .problems import PROBLEMS

log = logging.getLogger("pgcut")

COMMANDS = ("convergence", "condition", "convection", "mesh-info", "export-system")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pgcut", description="Unfitted Nitsche interface solver with PG stabilization.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="file of 'key = value' lines; flags override it")
    ap.add_argument("--problem", choices=sorted(PROBLEMS))
    ap.add_argument("--scheme", choices=ex.SCHEMES)
    ap.add_argument("--delta", choices=ex.DELTAS)
    ap.add_argument("--degree", type=int, choices=(1, 2, 3))
    ap.add_argument("--mesh", choices=ex.MESHES)
    ap.add_argument("--levels", help="h^-1 range like 128..512 (quasi-uniform: level range like 0..4)")
    ap.add_argument("--alpha0", type=float)
    ap.add_argument("--eps-rule", help="diffuse width as a multiple of h, e.g. h or 2h")
    ap.add_argument("--heaviside", choices=("clip", "sharp", "smooth"))
    ap.add_argument("--beta", help="stabilization multiplier: 0, 1 or bh (convection: comma list)")
    ap.add_argument("--rtol", type=float)
    ap.add_argument("--solver", choices=("auto", "lu", "splu", "cg"))
    ap.add_argument("--sweep-n", type=int, help="cells per side of the condition sweep mesh")
    ap.add_argument("--h-inv", type=int, help="mesh for convection, mesh-info and export-system")
    ap.add_argument("--mu1", type=float)
    ap.add_argument("--mu2", type=float)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--extended", action="store_true", default=None, help=f"allow h^-1 above {ex.MAX_H_INV}")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace, defaults: dict | None = None) -> tuple[ex.ExperimentConfig, list]:
    values = dict(defaults or {})
    if args.config:
        values.update(ex.read_config(args.config))
    betas = None
    for key in (
        "problem", "scheme", "delta", "degree", "mesh", "levels", "alpha0", "eps_rule", "heaviside", "beta",
        "rtol", "solver", "sweep_n", "h_inv", "mu1", "mu2", "out", "extended",
    ):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if "beta" in values and "," in str(values["beta"]):
        betas = [ex.parse_beta(b.strip()) for b in str(values["beta"]).split(",")]
        values["beta"] = str(values["beta"]).split(",")[0].strip()
    return ex.make_config(values), betas


def cmd_convergence(cfg: ex.ExperimentConfig) -> int:
    report = ex.run_convergence(cfg)
    report.write(cfg.out)
    print(report.table(), end="")
    return 0 if all(r.status == "ok" for r in report.rows) else 1


def cmd_condition(cfg: ex.ExperimentConfig) -> int:
    rows = ex.run_condition_sweep(cfg)
    ex.write_condition_report(rows, cfg.out, cfg)
    print((Path(cfg.out) / "report.txt").read_text(), end="")
    return 0


def cmd_convection(cfg: ex.ExperimentConfig, betas) -> int:
    betas = betas or [ex.parse_beta(cfg.beta)]
    results = [ex.run_convection(cfg, beta=b) for b in betas]
    ex.write_convection(results, cfg, cfg.out)
    print((Path(cfg.out) / "report.txt").read_text(), end="")
    return 0


def _single_mesh(cfg: ex.ExperimentConfig):
    spec = cfg.spec()
    size = cfg.h_inv if cfg.mesh == "uniform" else ex.parse_levels(cfg.levels)[0]
    return spec, ex.build_mesh(spec, cfg.mesh, size)


def cmd_mesh_info(cfg: ex.ExperimentConfig) -> int:
    spec, mesh = _single_mesh(cfg)
    delta = ex.delta_value(cfg.delta, mesh)
    cut, spaces = ex.setup(spec, mesh, delta, cfg.degree)
    kap = cut.kappa1[cut.cut_cells]
    print(f"problem {spec.name}, domain {spec.domain}, mesh {mesh.shape[0]}x{mesh.shape[1]} squares")
    print(f"vertices {len(mesh.vertices)}, cells {mesh.n_cells}, h = {mesh.spacing:.6g}, delta = {delta:.6g}")
    print(f"cut cells {len(cut.cut_cells)}", end="")
    if len(kap):
        print(f", kappa1 in [{kap.min():.3g}, {kap.max():.3g}]", end="")
    print()
    for k, s in enumerate(spaces, start=1):
        print(f"field {k}: active cells {len(s.cells)}, dofs {s.ndofs}, Dirichlet dofs {len(s.dirichlet_dofs)}")
    return 0


def cmd_export(cfg: ex.ExperimentConfig) -> int:
    spec, mesh = _single_mesh(cfg)
    system, _ = ex.assemble(cfg, spec, mesh)
    system.export(cfg.out)
    np.savetxt(Path(cfg.out) / "constrained.txt", np.column_stack([system.constrained, system.lifting]), fmt="%d %.17g")
    print(f"wrote {cfg.out}/system.mtx ({system.n} unknowns, {system.matrix.nnz} nonzeros), rhs.txt, constrained.txt")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    defaults = {}
    if args.command == "convection":
        defaults = {"problem": "convection", "beta": "0,1,bh"}
    elif args.command == "condition":
        defaults = {"problem": "quartic"}
    try:
        cfg, betas = config_from_args(args, defaults)
    except ValueError as exc:
        print(f"pgcut: error: {exc}", file=sys.stderr)
        return 2
    if args.command != "mesh-info":
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
    if args.command == "convergence":
        return cmd_convergence(cfg)
    if args.command == "condition":
        return cmd_condition(cfg)
    if args.command == "convection":
        return cmd_convection(cfg, betas)
    if args.command == "mesh-info":
        return cmd_mesh_info(cfg)
    return cmd_export(cfg)


if __name__ == "__main__":
    sys.exit(main())
