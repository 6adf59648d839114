"""Continuous problem description: regions, operator coefficients, sources.

The evolutionary system couples two scalar fields on an interval.  The
time-derivative and zero-order operators are diagonal with piecewise
constant per-region coefficients; the coupling operator pairs the spatial
derivative of each field with the other, with a homogeneous Dirichlet
condition on the first field.  Well-posedness requires rho*m0 + m1 >= gamma
> 0 on every region and component.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import BadPartition, BadWeight, NonCoercive


class RegionTag(enum.Enum):
    ELLIPTIC = "elliptic"
    PARABOLIC = "parabolic"
    HYPERBOLIC = "hyperbolic"


# Characteristic-function pattern of the model operators: the first field
# carries the time derivative on hyperbolic+parabolic cells and the zero-order
# term on elliptic cells; the second carries the time derivative on hyperbolic
# cells and the zero-order term on parabolic+elliptic cells.
_MODEL_M0 = {
    RegionTag.HYPERBOLIC: (1.0, 1.0),
    RegionTag.PARABOLIC: (1.0, 0.0),
    RegionTag.ELLIPTIC: (0.0, 0.0),
}
_MODEL_M1 = {
    RegionTag.HYPERBOLIC: (0.0, 0.0),
    RegionTag.PARABOLIC: (0.0, 1.0),
    RegionTag.ELLIPTIC: (1.0, 1.0),
}


@dataclass(frozen=True)
class MaterialCoefficients:
    """Per-region, per-component nonnegative coefficients (m0, m1)."""

    m0: Mapping[RegionTag, tuple[float, float]]
    m1: Mapping[RegionTag, tuple[float, float]]

    def __post_init__(self):
        for table in (self.m0, self.m1):
            for tag, pair in table.items():
                if len(pair) != 2 or min(pair) < 0.0:
                    raise ValueError(f"coefficients for {tag} must be two nonnegative reals")

    @classmethod
    def model(cls) -> "MaterialCoefficients":
        return cls(m0=dict(_MODEL_M0), m1=dict(_MODEL_M1))

    def for_tags(self, tags: Sequence[RegionTag]) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell coefficient arrays, shape (2, n_cells) each."""
        m0 = np.array([self.m0[t] for t in tags], dtype=float).T
        m1 = np.array([self.m1[t] for t in tags], dtype=float).T
        return m0, m1


@dataclass(frozen=True)
class SourceTerm:
    """Right-hand side evaluator with declared temporal kinks.

    evaluator(t, x) takes a scalar time and an array of positions and returns
    the two components as arrays broadcast against x.  `kink_times` lists
    the times where the source is continuous but not smooth; with `switch_on`
    the source is multiplied by the indicator of t >= 0.
    """

    evaluator: Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray]]
    kink_times: tuple[float, ...] = ()
    switch_on: bool = False

    def __post_init__(self):
        kinks = tuple(float(t) for t in self.kink_times)
        if any(b <= a for a, b in zip(kinks, kinks[1:])):
            raise ValueError("kink times must be strictly increasing")
        object.__setattr__(self, "kink_times", kinks)


def zero_source() -> SourceTerm:
    def _zero(t, x):
        x = np.asarray(x, dtype=float)
        z = np.zeros_like(x)
        return z, z.copy()

    return SourceTerm(evaluator=_zero)


@dataclass(frozen=True)
class ProblemSpec:
    """Validated continuous problem: domain, regions, operators, data."""

    domain: tuple[float, float]
    final_time: float
    rho: float
    regions: tuple[tuple[float, float, RegionTag], ...]
    coefficients: MaterialCoefficients
    source: SourceTerm
    initial_value: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    gamma: float
    name: str = "custom"

    @property
    def region_breaks(self) -> np.ndarray:
        """Interior region boundaries, ascending."""
        return np.array([hi for _, hi, _ in self.regions[:-1]], dtype=float)

    def region_tags_at(self, x: np.ndarray) -> np.ndarray:
        """Index into self.regions of the region containing each point."""
        x = np.asarray(x, dtype=float)
        return np.clip(np.searchsorted(self.region_breaks, x, side="right"), 0, len(self.regions) - 1)

    def coefficients_at(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise (m0, m1) arrays of shape (2,) + shape(x)."""
        idx = self.region_tags_at(x)
        tags = [tag for _, _, tag in self.regions]
        m0_tab = np.array([self.coefficients.m0[t] for t in tags], dtype=float)
        m1_tab = np.array([self.coefficients.m1[t] for t in tags], dtype=float)
        return np.moveaxis(m0_tab[idx], -1, 0), np.moveaxis(m1_tab[idx], -1, 0)

    def with_source(self, source: SourceTerm) -> "ProblemSpec":
        return replace(self, source=source)


def _zero_initial(x):
    x = np.asarray(x, dtype=float)
    z = np.zeros_like(x)
    return z, z.copy()


def build_problem(
    domain: tuple[float, float],
    final_time: float,
    rho: float,
    regions: Sequence[tuple[float, float, RegionTag]],
    coefficients: MaterialCoefficients | None = None,
    source: SourceTerm | None = None,
    initial_value: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None,
    name: str = "custom",
) -> ProblemSpec:
    """Validate the configuration and derive the coercivity constant.

    Raises BadWeight for rho <= 0, BadPartition if the region sub-intervals
    do not partition the domain, and NonCoercive if the derived gamma =
    min over regions and components of rho*m0 + m1 is not positive.
    """
    a, b = float(domain[0]), float(domain[1])
    if not b > a:
        raise BadPartition(f"empty domain [{a}, {b}]")
    if rho <= 0.0:
        raise BadWeight(f"rho must be positive, got {rho}")
    if final_time <= 0.0:
        raise ValueError(f"final time must be positive, got {final_time}")

    coefficients = coefficients or MaterialCoefficients.model()
    source = source or zero_source()
    initial_value = initial_value or _zero_initial

    ordered = sorted(((float(lo), float(hi), tag) for lo, hi, tag in regions), key=lambda t: t[0])
    tol = 1e-12 * (b - a)
    if not ordered:
        raise BadPartition("at least one region is required")
    if abs(ordered[0][0] - a) > tol or abs(ordered[-1][1] - b) > tol:
        raise BadPartition("regions do not cover the domain endpoints")
    for (lo, hi, _), (lo2, _, _) in zip(ordered, ordered[1:]):
        if hi <= lo:
            raise BadPartition(f"region ({lo}, {hi}) is empty or reversed")
        if abs(lo2 - hi) > tol:
            raise BadPartition(f"regions leave a gap or overlap near x = {hi}")
    lo, hi, _ = ordered[-1]
    if hi <= lo:
        raise BadPartition(f"region ({lo}, {hi}) is empty or reversed")

    for t in source.kink_times:
        if not 0.0 <= t <= final_time:
            raise ValueError(f"kink time {t} outside [0, {final_time}]")

    gamma = min(
        rho * coefficients.m0[tag][c] + coefficients.m1[tag][c]
        for _, _, tag in ordered
        for c in (0, 1)
    )
    if gamma <= 0.0:
        raise NonCoercive(f"rho*m0 + m1 has minimum {gamma}; solvability needs a positive bound")

    return ProblemSpec(
        domain=(a, b),
        final_time=float(final_time),
        rho=float(rho),
        regions=tuple(ordered),
        coefficients=coefficients,
        source=source,
        initial_value=initial_value,
        gamma=float(gamma),
        name=name,
    )


def evaluate_source(spec: ProblemSpec, t: float, x) -> tuple[np.ndarray, np.ndarray]:
    """Source components at time t and positions x, switch-on included."""
    x = np.asarray(x, dtype=float)
    f, g = spec.source.evaluator(t, x)
    f = np.broadcast_to(np.asarray(f, dtype=float), x.shape).copy()
    g = np.broadcast_to(np.asarray(g, dtype=float), x.shape).copy()
    if spec.source.switch_on and t < 0.0:
        f[...] = 0.0
        g[...] = 0.0
    return f, g
