"""Run configuration: flat TOML config files plus CLI overrides."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib

from .errors import EvostepError
from .model import MaterialCoefficients, ProblemSpec, RegionTag, build_problem, zero_source
from .problems import (
    hyperbolic_regions,
    manufactured_problem,
    oscillating_solution,
    paper_problem,
    paper_regions,
)
from .slab import require_kinks_resolved
from .timebasis import uniform_partition

_PROBLEMS = ("paper1d", "manufactured-smooth", "manufactured-exactness", "custom")
_SCHEMES = ("cgp", "dg", "both")


@dataclass
class RunConfig:
    """Everything a CLI run needs; config-file values overridden by flags."""

    problem: str = "paper1d"
    scheme: str = "cgp"
    k: int = 2
    r: int = 1
    n_cells: int = 32
    n_slabs: int = 64
    rho: float = 1.0
    final_time: float | None = None
    levels: tuple[int, ...] | None = None      # slab counts, N coupled as M = 2N
    reference_path: str | None = None
    ref_slabs: int = 1024
    ref_cells: int = 512
    ref_k: int = 3
    ref_r: int = 2
    out_dir: str = "."
    layout: str = "hyperbolic"                 # manufactured problems
    dg_degree: int | None = None
    domain: tuple[float, float] | None = None  # custom problems
    regions: tuple[tuple[float, float, str], ...] | None = None
    source: str = "paper"                      # custom problems: paper | zero

    def resolved_final_time(self) -> float:
        if self.final_time is not None:
            return self.final_time
        return 4.0 * np.pi if self.problem == "paper1d" else 2.0


def load_config_file(path) -> dict:
    with open(path, "rb") as handle:
        return tomllib.load(handle)


def config_from_mapping(data: dict) -> RunConfig:
    """Map a parsed config file onto a RunConfig."""
    cfg = RunConfig()
    plain = {
        "problem": "problem",
        "scheme": "scheme",
        "k": "k",
        "r": "r",
        "N": "n_cells",
        "M": "n_slabs",
        "layout": "layout",
        "dg_degree": "dg_degree",
        "source": "source",
    }
    for key, attr in plain.items():
        if key in data:
            setattr(cfg, attr, data[key])
    if "levels" in data:
        cfg.levels = tuple(int(v) for v in data["levels"])
    time_tab = data.get("time", {})
    if "T" in time_tab:
        cfg.final_time = float(time_tab["T"])
    if "rho" in time_tab:
        cfg.rho = float(time_tab["rho"])
    dom = data.get("domain", {})
    if "a" in dom and "b" in dom:
        cfg.domain = (float(dom["a"]), float(dom["b"]))
    if "regions" in data:
        cfg.regions = tuple((float(lo), float(hi), str(tag)) for lo, hi, tag in data["regions"])
    ref = data.get("reference", {})
    if "path" in ref:
        cfg.reference_path = str(ref["path"])
    for key, attr in (("M", "ref_slabs"), ("N", "ref_cells"), ("k", "ref_k"), ("r", "ref_r")):
        if key in ref:
            setattr(cfg, attr, int(ref[key]))
    out = data.get("output", {})
    if "dir" in out:
        cfg.out_dir = str(out["dir"])
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.problem not in _PROBLEMS:
        raise EvostepError(f"unknown problem {cfg.problem!r}; expected one of {_PROBLEMS}")
    if cfg.scheme not in _SCHEMES:
        raise EvostepError(f"unknown scheme {cfg.scheme!r}; expected one of {_SCHEMES}")
    if cfg.levels is not None:
        lv = cfg.levels
        if len(lv) < 1 or any(b != 2 * a for a, b in zip(lv, lv[1:])):
            raise EvostepError("levels must be strictly doubling slab counts")


def build_spec(cfg: RunConfig):
    """ProblemSpec plus the exact evaluator when one exists (else None)."""
    T = cfg.resolved_final_time()
    if cfg.problem == "paper1d":
        return paper_problem(rho=cfg.rho, final_time=T), None
    if cfg.problem == "manufactured-smooth":
        regions = paper_regions() if cfg.layout == "paper" else hyperbolic_regions()
        man = oscillating_solution()
        return manufactured_problem(man, regions, rho=cfg.rho, final_time=T), man.u
    if cfg.problem == "custom":
        if cfg.regions is None or cfg.domain is None:
            raise EvostepError("custom problems need domain.a/domain.b and a regions table")
        regions = [(lo, hi, RegionTag(tag)) for lo, hi, tag in cfg.regions]
        if cfg.source == "zero":
            source = zero_source()
        elif cfg.source == "paper":
            source = paper_problem(rho=cfg.rho, final_time=max(T, np.pi)).source
        else:
            raise EvostepError(f"unknown source id {cfg.source!r} for a custom problem")
        return (
            build_problem(
                domain=cfg.domain,
                final_time=T,
                rho=cfg.rho,
                regions=regions,
                coefficients=MaterialCoefficients.model(),
                source=source,
                name="custom",
            ),
            None,
        )
    # manufactured-exactness depends on the discrete space; built in the CLI
    return None, None


def check_partition(cfg: RunConfig, spec: ProblemSpec, n_slabs: int) -> None:
    """Fail fast (config stage) when a kink cannot be a knot."""
    partition = uniform_partition(spec.final_time, n_slabs)
    require_kinks_resolved(partition, spec.source.kink_times)
