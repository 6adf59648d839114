"""Command-line front end: solve, study, reference, compare.

Exit codes: 0 on success, 2 for configuration errors, 3 for solver errors.
EVOSTEP_THREADS caps worker parallelism across study levels.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import StudyReport, check_stability, error_vs_reference, run_study
from .config import (
    RunConfig,
    build_spec,
    check_partition,
    config_from_mapping,
    load_config_file,
    validate_config,
)
from .errors import EvostepError, SingularSystem
from .model import ProblemSpec
from .problems import manufactured_problem, paper_regions, hyperbolic_regions, trial_space_solution
from .slab import load_reference, march, save_reference, write_solution_dump
from .spacefem import assemble_spatial, build_mesh
from .timebasis import build_dg_time_bases, build_time_bases, uniform_partition


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("EVOSTEP_THREADS", "1")))
    except ValueError:
        return 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="TOML config file")
    parser.add_argument("--problem", choices=["paper1d", "manufactured-smooth", "manufactured-exactness", "custom"])
    parser.add_argument("--scheme", choices=["cgp", "dg", "both"])
    parser.add_argument("--k", type=int, help="spatial polynomial degree")
    parser.add_argument("--r", type=int, help="temporal trial degree")
    parser.add_argument("--N", type=int, help="spatial cell count")
    parser.add_argument("--M", type=int, help="time slab count")
    parser.add_argument("--rho", type=float, help="exponential weight")
    parser.add_argument("--T", type=float, help="final time")
    parser.add_argument("--levels", help="comma-separated slab counts, doubling")
    parser.add_argument("--reference", metavar="PATH", help="reference dump to load")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--layout", choices=["hyperbolic", "paper"], help="manufactured region layout")
    parser.add_argument("--dg-degree", type=int, help="trial degree of the discontinuous scheme")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = config_from_mapping(load_config_file(args.config)) if args.config else RunConfig()
    overrides = {
        "problem": args.problem,
        "scheme": args.scheme,
        "k": args.k,
        "r": args.r,
        "n_cells": args.N,
        "n_slabs": args.M,
        "rho": args.rho,
        "final_time": args.T,
        "reference_path": args.reference,
        "out_dir": args.out,
        "layout": args.layout,
        "dg_degree": args.dg_degree,
    }
    for attr, value in overrides.items():
        if value is not None:
            setattr(cfg, attr, value)
    if args.levels is not None:
        cfg.levels = tuple(int(v) for v in str(args.levels).split(","))
    validate_config(cfg)
    return cfg


def _prepare(cfg: RunConfig, n_cells: int, k: int):
    """Spec, space, and exact evaluator; resolves mesh-dependent problems."""
    spec, exact = build_spec(cfg)
    if spec is None:
        # the exactness fixture lives in the discrete space, so mesh first
        regions = paper_regions() if cfg.layout == "paper" else hyperbolic_regions()
        base_spec = _exactness_base(cfg, regions)
        mesh = build_mesh(base_spec, n_cells)
        space = assemble_spatial(mesh, k, base_spec.coefficients)
        man = trial_space_solution(space, cfg.r)
        spec = manufactured_problem(man, regions, rho=cfg.rho, final_time=cfg.resolved_final_time())
        return spec, space, man.u
    mesh = build_mesh(spec, n_cells)
    space = assemble_spatial(mesh, k, spec.coefficients)
    return spec, space, exact


def _exactness_base(cfg: RunConfig, regions) -> ProblemSpec:
    from .model import build_problem, MaterialCoefficients

    lo = min(l for l, _, _ in regions)
    hi = max(h for _, h, _ in regions)
    return build_problem(
        domain=(lo, hi),
        final_time=cfg.resolved_final_time(),
        rho=cfg.rho,
        regions=regions,
        coefficients=MaterialCoefficients.model(),
        name="manufactured-exactness",
    )


def _schemes(cfg: RunConfig) -> list[str]:
    return ["cgp", "dg"] if cfg.scheme == "both" else [cfg.scheme]


def _resolve_reference(cfg: RunConfig, spec, exact, out: Path):
    """Priority: explicit dump path, exact solution, generated fine run."""
    if cfg.reference_path:
        return load_reference(cfg.reference_path)
    if exact is not None:
        return exact
    stamp = f"reference_M{cfg.ref_slabs}_N{cfg.ref_cells}_k{cfg.ref_k}_r{cfg.ref_r}.npz"
    cache = out / stamp
    if cache.exists():
        return load_reference(cache)
    check_partition(cfg, spec, cfg.ref_slabs)
    mesh = build_mesh(spec, cfg.ref_cells)
    space = assemble_spatial(mesh, cfg.ref_k, spec.coefficients)
    sol = march(spec, space, uniform_partition(spec.final_time, cfg.ref_slabs), build_time_bases(cfg.ref_r), "cgp")
    save_reference(sol, cache)
    print(f"reference written to {cache}")
    return sol


def _solve_one(cfg: RunConfig, spec, space, scheme: str):
    check_partition(cfg, spec, cfg.n_slabs)
    partition = uniform_partition(spec.final_time, cfg.n_slabs)
    if scheme == "cgp":
        basis = build_time_bases(cfg.r)
    else:
        basis = build_dg_time_bases(cfg.dg_degree if cfg.dg_degree is not None else cfg.r)
    return march(spec, space, partition, basis, scheme)


def _write_error_report(report, path: Path) -> None:
    lines = [
        f"err_full = {report.full:.12e}",
        f"err_proj = {report.projected:.12e}",
        f"err_final_energy = {report.final_energy:.12e}",
        f"err_L2 = {report.l2_unweighted:.12e}",
        f"err_vs_projected_solution = {report.vs_projected_solution:.12e}",
        f"projection_defect = {report.projection_defect:.12e}",
        f"reference_norm = {report.reference_norm:.12e}",
        f"rho = {report.rho!r}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec, space, exact = _prepare(cfg, cfg.n_cells, cfg.k)
    reference = None
    if cfg.reference_path:
        reference = load_reference(cfg.reference_path)
    elif exact is not None:
        reference = exact

    for scheme in _schemes(cfg):
        sol = _solve_one(cfg, spec, space, scheme)
        dump = out / f"solution_{scheme}.dat"
        write_solution_dump(sol, dump)
        print(f"{scheme}: solution dump -> {dump}")
        if scheme == "cgp":
            report = check_stability(sol, spec)
            stab = out / "stability_cgp.txt"
            with open(stab, "w", encoding="utf-8") as handle:
                handle.write(f"# min_margin = {report.min_margin:.12e} scale = {report.scale:.12e}\n")
                handle.write("# knot lhs rhs margin\n")
                for t, lhs, rhs, margin in zip(report.knots, report.lhs, report.rhs, report.margins):
                    handle.write(f"{t:.12e} {lhs:.12e} {rhs:.12e} {margin:.12e}\n")
            print(f"cgp: stability margins (min {report.min_margin:.3e}) -> {stab}")
        if reference is not None:
            err = error_vs_reference(sol, reference)
            err_path = out / f"errors_{scheme}.txt"
            _write_error_report(err, err_path)
            print(f"{scheme}: err_full = {err.full:.6e} err_proj = {err.projected:.6e} -> {err_path}")
    return 0


def _print_table(report: StudyReport, schemes: list[str]) -> None:
    rows = {scheme: report.scheme_rows(scheme) for scheme in schemes}
    level_count = len(next(iter(rows.values())))
    header = "M=2N".rjust(8)
    for scheme in schemes:
        header += f" | {scheme + ' error':>14} {'rate':>6}"
    print(header)
    for i in range(level_count):
        line = f"{rows[schemes[0]][i].M:8d}"
        for scheme in schemes:
            row = rows[scheme][i]
            rate = "" if row.rate_full is None else f"{row.rate_full:.2f}"
            line += f" | {row.err_full:14.4e} {rate:>6}"
        print(line)


def cmd_study(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not cfg.levels or len(cfg.levels) < 2:
        raise EvostepError("study needs --levels with at least two doubling slab counts")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    levels = [(M, M // 2) for M in cfg.levels]
    if any(M % 2 for M in cfg.levels):
        raise EvostepError("levels must be even (coupled M = 2N)")
    spec, _, exact = _prepare(cfg, levels[0][1], cfg.k)
    for M, _ in levels:
        check_partition(cfg, spec, M)
    reference = _resolve_reference(cfg, spec, exact, out)
    report = run_study(
        spec,
        levels,
        cfg.k,
        cfg.r,
        schemes=_schemes(cfg),
        reference=reference,
        dg_degree=cfg.dg_degree,
        max_workers=_worker_count(),
    )
    csv_path = out / "study.csv"
    report.write_csv(csv_path)
    _print_table(report, _schemes(cfg))
    print(f"study table -> {csv_path}")
    return 0


def cmd_reference(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec, space, _ = _prepare(cfg, cfg.n_cells, cfg.k)
    sol = _solve_one(cfg, spec, space, "cgp" if cfg.scheme == "both" else cfg.scheme)
    path = out / "reference.npz"
    save_reference(sol, path)
    print(f"reference dump -> {path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    cfg.scheme = "both"
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec, space, exact = _prepare(cfg, cfg.n_cells, cfg.k)
    reference = _resolve_reference(cfg, spec, exact, out)
    print(f"{'scheme':>8} {'err_full':>14} {'err_proj':>14} {'err_L2':>14}")
    for scheme in ("cgp", "dg"):
        sol = _solve_one(cfg, spec, space, scheme)
        err = error_vs_reference(sol, reference)
        print(f"{scheme:>8} {err.full:14.4e} {err.projected:14.4e} {err.l2_unweighted:14.4e}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="evostep",
        description="Space-time Galerkin solver for 1D evolutionary systems of changing type",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in (
        ("solve", cmd_solve),
        ("study", cmd_study),
        ("reference", cmd_reference),
        ("compare", cmd_compare),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(handler=handler)

    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except SingularSystem as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (EvostepError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
