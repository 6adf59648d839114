"""Built-in problems: the 1+1d changing-type example and manufactured solutions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BoundaryMismatch
from .model import (
    MaterialCoefficients,
    ProblemSpec,
    RegionTag,
    SourceTerm,
    build_problem,
)
from .spacefem import SpatialSystem1D, interpolate_spatial


def paper_problem(rho: float = 1.0, final_time: float = 4.0 * np.pi) -> ProblemSpec:
    """Hyperbolic-elliptic example on [-pi, pi]: zero initial value, source
    switched on at t = 0 with a temporal kink at t = pi."""

    def source(t, x):
        x = np.asarray(x, dtype=float)
        f = np.sin(3.0 * t) / 5.0 + min(t, np.pi) * np.cos(3.0 * x)
        g = np.sin(t) * (1.0 - x**2 / np.pi**2)
        return np.broadcast_to(f, x.shape), g

    kinks = (np.pi,) if final_time >= np.pi else ()
    return build_problem(
        domain=(-np.pi, np.pi),
        final_time=final_time,
        rho=rho,
        regions=[(-np.pi, 0.0, RegionTag.HYPERBOLIC), (0.0, np.pi, RegionTag.ELLIPTIC)],
        coefficients=MaterialCoefficients.model(),
        source=SourceTerm(evaluator=source, kink_times=kinks, switch_on=True),
        name="paper1d",
    )


def hyperbolic_regions(domain=(-np.pi, np.pi)):
    return [(domain[0], domain[1], RegionTag.HYPERBOLIC)]


def paper_regions():
    return [(-np.pi, 0.0, RegionTag.HYPERBOLIC), (0.0, np.pi, RegionTag.ELLIPTIC)]


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact space-time fields with the derivatives needed to build a source.

    Each evaluator takes (t, x-array) and returns the two components as
    arrays; u must have a vanishing first component on the boundary.
    """

    u: Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray]]
    du_dt: Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray]]
    du_dx: Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray]]
    name: str = "manufactured"

    def initial_value(self, x):
        return self.u(0.0, x)


def compose_manufactured_source(solution: ManufacturedSolution, spec: ProblemSpec) -> SourceTerm:
    """Source that makes `solution` solve the problem described by `spec`.

    Reads the operator equation right to left: per component c,
    F_c = m0_c * du_c/dt + m1_c * u_c + d(other component)/dx, with the
    per-region coefficients of spec.  Raises BoundaryMismatch unless the
    first component vanishes at both domain endpoints.
    """
    a, b = spec.domain
    ends = np.array([a, b])
    probe_times = np.linspace(0.0, spec.final_time, 7)
    worst = max(float(np.max(np.abs(solution.u(t, ends)[0]))) for t in probe_times)
    scales = [max(1.0, float(np.max(np.abs(solution.u(t, ends)[1])))) for t in probe_times]
    if worst > 1e-10 * max(1.0, *scales):
        raise BoundaryMismatch(
            f"first component reaches {worst:.3e} on the boundary; zero trace required"
        )

    def source(t, x):
        x = np.asarray(x, dtype=float)
        m0, m1 = spec.coefficients_at(x)
        u1, u2 = solution.u(t, x)
        dt1, dt2 = solution.du_dt(t, x)
        dx1, dx2 = solution.du_dx(t, x)
        f = m0[0] * dt1 + m1[0] * u1 + dx2
        g = m0[1] * dt2 + m1[1] * u2 + dx1
        return f, g

    return SourceTerm(evaluator=source, kink_times=(), switch_on=False)


def manufactured_problem(
    solution: ManufacturedSolution,
    regions,
    rho: float = 1.0,
    final_time: float = 2.0,
    domain: tuple[float, float] | None = None,
    coefficients: MaterialCoefficients | None = None,
) -> ProblemSpec:
    """Problem whose exact solution is `solution` on the given region layout."""
    regions = list(regions)
    if domain is None:
        domain = (min(lo for lo, _, _ in regions), max(hi for _, hi, _ in regions))
    base = build_problem(
        domain=domain,
        final_time=final_time,
        rho=rho,
        regions=regions,
        coefficients=coefficients,
        initial_value=solution.initial_value,
        name=solution.name,
    )
    return base.with_source(compose_manufactured_source(solution, base))


def oscillating_solution(freq_t: float = 3.0, freq_x: float = 1.0) -> ManufacturedSolution:
    """Smooth standing-wave pair on [-pi, pi]; first component zero at +-pi."""
    wt, wx = float(freq_t), float(freq_x)

    def u(t, x):
        x = np.asarray(x, dtype=float)
        return np.sin(wx * x) * np.cos(wt * t), np.cos(wx * x) * np.sin(wt * t)

    def du_dt(t, x):
        x = np.asarray(x, dtype=float)
        return -wt * np.sin(wx * x) * np.sin(wt * t), wt * np.cos(wx * x) * np.cos(wt * t)

    def du_dx(t, x):
        x = np.asarray(x, dtype=float)
        return wx * np.cos(wx * x) * np.cos(wt * t), -wx * np.sin(wx * x) * np.sin(wt * t)

    if wx != round(wx):
        raise ValueError("freq_x must be an integer so the first component vanishes at +-pi")
    return ManufacturedSolution(u=u, du_dt=du_dt, du_dx=du_dx, name="manufactured-smooth")


def polynomial_time_coeffs(r: int, kind: int = 0) -> np.ndarray:
    """Monomial coefficients of a degree-r time profile with all modes active."""
    c = 1.0 / (1.0 + np.arange(r + 1))
    if kind:
        c = c * (-1.0) ** np.arange(r + 1)
        c[0] = 0.75
    return c


def trial_space_solution(space: SpatialSystem1D, r: int) -> ManufacturedSolution:
    """Manufactured solution lying exactly in the discrete trial space.

    Spatial parts are the nodal interpolants of a smooth pair (so they are
    discrete functions of the given mesh/degree); time profiles are
    polynomials of degree exactly r.  The discrete march must reproduce it
    to roundoff.
    """
    a, b = space.mesh.a, space.mesh.b
    scale = 2.0 * np.pi / (b - a)

    def smooth(x):
        x = np.asarray(x, dtype=float)
        return np.sin(scale * (x - a)), np.cos(scale * (x - a)) + 0.5 * np.ones_like(x)

    w = interpolate_spatial(smooth, space)
    w1, w2 = space.split(w)
    q = np.stack([polynomial_time_coeffs(r, 0), polynomial_time_coeffs(r, 1)])
    dq = q[:, 1:] * np.arange(1, r + 1) if r >= 1 else np.zeros((2, 1))

    def timeval(c, t):
        return float(np.polynomial.polynomial.polyval(t, c))

    def u(t, x):
        return (
            timeval(q[0], t) * space.eval_component(0, w1, x),
            timeval(q[1], t) * space.eval_component(1, w2, x),
        )

    def du_dt(t, x):
        return (
            timeval(dq[0], t) * space.eval_component(0, w1, x),
            timeval(dq[1], t) * space.eval_component(1, w2, x),
        )

    def du_dx(t, x):
        return (
            timeval(q[0], t) * space.eval_component_deriv(0, w1, x),
            timeval(q[1], t) * space.eval_component_deriv(1, w2, x),
        )

    return ManufacturedSolution(u=u, du_dt=du_dt, du_dx=du_dx, name="manufactured-exactness")
