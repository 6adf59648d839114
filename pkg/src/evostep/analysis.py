"""Weighted norms, error functionals, runtime checkers, and study tables.

Error conventions: the "projected" error is the weighted norm of the
test-space projection of the error field, the quantity the discretization
controls at the optimal temporal order even when the time-derivative
operator has a nontrivial null space.  The report also carries the error
against the projected discrete solution and the projection defect of the
discrete solution, which tie the full and projected numbers together by the
triangle inequality.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NotNested, NotNestedWarning, StabilityViolated
from .model import ProblemSpec
from .slab import DiscreteSolution, LoadAssembler, march, split_gauss_01, interior_kinks
from .spacefem import SpatialSystem1D, assemble_spatial, build_mesh
from .timebasis import (
    TimeBasisPair,
    TimePartition,
    build_dg_time_bases,
    build_time_bases,
    exp_moments,
    hankel_moments,
    interpolate_trial_space,
    polyrows_eval,
    shifted_legendre_rows,
    uniform_partition,
)

_TINY = 1e-300


# ---------------------------------------------------------------------------
# weighted space-time norms


def weighted_norm(
    fn: Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray]],
    rho: float,
    partition: TimePartition,
    space: SpatialSystem1D,
    t_end: float | None = None,
    *,
    kinks=(),
    n_time: int | None = None,
    n_space: int | None = None,
) -> float:
    """Exponentially weighted L2 norm of a two-component field over [0, t_end].

    t_end must be a partition knot (NotAKnot otherwise).  Quadrature is
    composite Gauss per slab, split at declared kink times, with spatial
    Gauss exact for twice the stored degree.
    """
    t_end = partition.final_time if t_end is None else t_end
    upto = partition.knot_index(t_end)
    nt = n_time or (max(space.degree + 4, 8) + 2)
    xq, wx = space.quadrature_grid(n_space or (space.degree + 2))
    total = 0.0
    tol = 1e-12 * max(1.0, partition.final_time)
    for m in range(upto):
        t_prev = float(partition.knots[m])
        tau = float(partition.taus[m])
        lam = 2.0 * rho * tau
        inner = interior_kinks(kinks, t_prev, t_prev + tau, tol)
        s_pts, s_wts = split_gauss_01(nt, (inner - t_prev) / tau)
        tw = s_wts * np.exp(-lam * s_pts)
        acc = 0.0
        for s, w in zip(s_pts, tw):
            u1, u2 = fn(t_prev + tau * s, xq)
            acc += w * float(np.dot(wx, u1 * u1 + u2 * u2))
        total += np.exp(-2.0 * rho * t_prev) * tau * acc
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# error against a reference


@dataclass(frozen=True)
class ErrorReport:
    """All error functionals of one run against one reference."""

    full: float                     # ||E||_{rho,[0,T]}
    projected: float                # ||Pi E||_{rho,[0,T]}, Pi onto degree r-1
    final_energy: float             # <M0 E(T), E(T)> e^{-2 rho T}
    l2_unweighted: float            # plain L2 over space-time
    vs_projected_solution: float    # ||U_ref - Pi U_h||
    projection_defect: float        # ||U_h - Pi U_h||
    reference_norm: float
    rho: float
    per_slab_full_sq: np.ndarray = field(repr=False)

    @property
    def relative_full(self) -> float:
        return self.full / max(self.reference_norm, _TINY)

    def triangle_slack(self) -> dict[str, float]:
        """Slack of the triangle inequalities tying the error numbers together."""
        return {
            "projected_le_full": self.full - self.projected,
            "full_vs_mixed": self.projection_defect
            - abs(self.full - self.vs_projected_solution),
        }


def _nesting_ok(coarse: np.ndarray, fine: np.ndarray, tol: float) -> bool:
    idx = np.clip(np.searchsorted(fine, coarse), 0, len(fine) - 1)
    near = np.minimum(np.abs(fine[idx] - coarse), np.abs(fine[np.maximum(idx - 1, 0)] - coarse))
    return bool(np.all(near <= tol))


def error_vs_reference(
    u_h: DiscreteSolution,
    reference,
    rho: float | None = None,
    *,
    kinks=(),
    strict_nesting: bool = False,
    n_time: int | None = None,
    n_space: int | None = None,
) -> ErrorReport:
    """Compare a discrete run against a reference (discrete or exact evaluator).

    Both solutions are evaluated at the coarse run's space-time quadrature
    points.  For discrete references a non-nested pairing is reported as a
    warning (or NotNested with strict_nesting) since pointwise evaluation
    stays well defined.
    """
    rho = u_h.rho if rho is None else float(rho)
    space = u_h.space
    part = u_h.partition
    r = u_h.trial_degree
    k = space.degree

    if isinstance(reference, DiscreteSolution):
        k_ref = reference.space.degree
        tolT = 1e-9 * max(1.0, part.final_time)
        tolX = 1e-9 * max(1.0, space.mesh.b - space.mesh.a)
        nested = _nesting_ok(part.knots, reference.partition.knots, tolT) and _nesting_ok(
            space.mesh.nodes, reference.space.mesh.nodes, tolX
        )
        if not nested:
            if strict_nesting:
                raise NotNested("coarse knots/nodes are not contained in the reference grids")
            warnings.warn(
                "reference grids are not nested with the coarse run",
                NotNestedWarning,
                stacklevel=2,
            )
    else:
        k_ref = k

    xq, wx = space.quadrature_grid(n_space or (max(k, k_ref) + 2))
    table = space.evaluation_table(xq)
    if isinstance(reference, DiscreteSolution):
        ref_table = reference.space.evaluation_table(xq)

        def ref_at(t: float) -> np.ndarray:
            return np.stack(reference.evaluate(t, xq, table=ref_table))

    else:

        def ref_at(t: float) -> np.ndarray:
            return np.stack(reference(t, xq))

    nt = n_time or (max(r + k, 8) + 2)
    proj_deg = r - 1
    proj_rows = shifted_legendre_rows(proj_deg) if proj_deg >= 0 else None

    m0x = space.m0_cells[:, space.mesh.cell_of(xq)]
    tol = 1e-12 * max(1.0, part.final_time)

    full_sq = np.zeros(part.n_slabs)
    proj_sq = l2_sq = mixed_sq = defect_sq = ref_sq = 0.0

    for m in range(part.n_slabs):
        t_prev = float(part.knots[m])
        tau = float(part.taus[m])
        lam = 2.0 * rho * tau
        pref = float(np.exp(-2.0 * rho * t_prev))
        inner = interior_kinks(kinks, t_prev, t_prev + tau, tol)
        s_pts, s_wts = split_gauss_01(nt, (inner - t_prev) / tau)
        tw = s_wts * np.exp(-lam * s_pts)

        phi = u_h.basis.eval_trial(s_pts)                       # (r+1, nq)
        vecs = np.einsum("jq,jn->qn", phi, u_h.coeffs[m])       # (nq, n)
        uh = np.stack(space.eval_fields(vecs, xq, table=table), axis=1)   # (nq, 2, nx)
        ur = np.stack([ref_at(t_prev + tau * s) for s in s_pts])          # (nq, 2, nx)
        err = ur - uh

        sq_t = np.einsum("qcx,x->q", err * err, wx)
        full_sq[m] = pref * tau * float(tw @ sq_t)
        l2_sq += tau * float(s_wts @ np.einsum("qcx,x->q", err * err, wx))
        ref_sq += pref * tau * float(tw @ np.einsum("qcx,x->q", ur * ur, wx))

        if proj_rows is not None:
            # projection of the pointwise error onto polynomials of degree r-1
            mu = exp_moments(lam, 2 * proj_deg + 2)
            Wp = proj_rows @ hankel_moments(mu, proj_deg + 1, proj_deg + 1) @ proj_rows.T
            psi = polyrows_eval(proj_rows, s_pts)               # (np, nq)
            rhs = np.einsum("iq,q,qcx->icx", psi, tw, err)
            c = np.linalg.solve(Wp, rhs.reshape(proj_deg + 1, -1)).reshape(rhs.shape)
            proj_sq += pref * tau * float(np.einsum("ik,icx,kcx,x->", Wp, c, c, wx))

            # exact projection of the discrete slab polynomial
            mono = u_h.slab_poly(m)
            rhs_h = np.einsum(
                "ia,an->in", proj_rows @ hankel_moments(mu, proj_deg + 1, mono.shape[0]), mono
            )
            ch = np.linalg.solve(Wp, rhs_h)                     # test-basis coefficients
            pmono = np.tensordot(proj_rows, ch, axes=(0, 0))    # monomial rows
            powers = s_pts[:, None] ** np.arange(pmono.shape[0])
            uhp_vecs = powers @ pmono                           # (nq, n)
            uhp = np.stack(space.eval_fields(uhp_vecs, xq, table=table), axis=1)
            err_mixed = ur - uhp
            mixed_sq += pref * tau * float(tw @ np.einsum("qcx,x->q", err_mixed * err_mixed, wx))
            dd = uh - uhp
            defect_sq += pref * tau * float(tw @ np.einsum("qcx,x->q", dd * dd, wx))

    T = part.final_time
    uhT = np.stack(u_h.evaluate(T, xq, table=table))
    urT = ref_at(T)
    eT = urT - uhT
    final_energy = float(np.exp(-2.0 * rho * T) * np.einsum("cx,cx,x->", m0x, eT * eT, wx))

    nan = float("nan")
    return ErrorReport(
        full=float(np.sqrt(np.sum(full_sq))),
        projected=float(np.sqrt(proj_sq)) if proj_rows is not None else nan,
        final_energy=final_energy,
        l2_unweighted=float(np.sqrt(l2_sq)),
        vs_projected_solution=float(np.sqrt(mixed_sq)) if proj_rows is not None else nan,
        projection_defect=float(np.sqrt(defect_sq)) if proj_rows is not None else nan,
        reference_norm=float(np.sqrt(ref_sq)),
        rho=rho,
        per_slab_full_sq=full_sq,
    )


# ---------------------------------------------------------------------------
# interpolation-defect norm (drives the a priori bound)


@dataclass(frozen=True)
class DefectNormReport:
    """Cumulative interpolation-defect norms per knot."""

    knots: np.ndarray
    zero_order_sq: np.ndarray   # per-slab ||(2 rho M0 + M1) eta||^2 contributions
    coupling_sq: np.ndarray     # per-slab ||A eta||^2 contributions

    def upto(self, ell: int) -> float:
        """Defect norm over [0, t_ell]: sqrt-sum of each part, then added."""
        return float(
            np.sqrt(np.sum(self.zero_order_sq[:ell])) + np.sqrt(np.sum(self.coupling_sq[:ell]))
        )

    @property
    def total(self) -> float:
        return self.upto(len(self.zero_order_sq))


def defect_norm(
    fields,
    spec: ProblemSpec,
    space: SpatialSystem1D,
    partition: TimePartition,
    basis: TimeBasisPair,
    rho: float | None = None,
    *,
    n_time: int | None = None,
    n_space: int | None = None,
) -> DefectNormReport:
    """Norm of eta = v - (trial interpolant of v) weighted by the operators.

    `fields` provides evaluators u(t, x) and du_dx(t, x) (two components
    each); the coupling part applies the first-order operator to eta, which
    commutes with the slab-wise interpolation in time.
    """
    rho = spec.rho if rho is None else float(rho)
    nt = n_time or (max(basis.trial_degree + space.degree, 8) + 2)
    xq, wx = space.quadrature_grid(n_space or (space.degree + 3))
    m0x, m1x = spec.coefficients_at(xq)
    weight0 = 2.0 * rho * m0x + m1x   # (2, nx)

    def a_apply(t, x):
        d1, d2 = fields.du_dx(t, x)
        return d2, d1

    zero_sq = np.zeros(partition.n_slabs)
    coup_sq = np.zeros(partition.n_slabs)
    for m in range(partition.n_slabs):
        t_prev = float(partition.knots[m])
        tau = float(partition.taus[m])
        lam = 2.0 * rho * tau
        pref = float(np.exp(-2.0 * rho * t_prev))
        s_pts, s_wts = split_gauss_01(nt)
        tw = s_wts * np.exp(-lam * s_pts)
        powers = s_pts[:, None] ** np.arange(basis.n_trial)

        for which, out in ((fields.u, zero_sq), (a_apply, coup_sq)):

            def sampled(s_arr):
                return np.stack([np.stack(which(t_prev + tau * s, xq)) for s in np.atleast_1d(s_arr)])

            mono = interpolate_trial_space(basis, sampled, tau, rho)
            eta = sampled(s_pts) - np.einsum("qa,acx->qcx", powers, mono)
            if out is zero_sq:
                eta = weight0[None] * eta
            out[m] = pref * tau * float(np.einsum("q,qcx,qcx,x->", tw, eta, eta, wx))

    return DefectNormReport(knots=partition.knots, zero_order_sq=zero_sq, coupling_sq=coup_sq)


# ---------------------------------------------------------------------------
# stability checker


@dataclass(frozen=True)
class StabilityReport:
    """Per-knot energy balance of a continuous-scheme run."""

    knots: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margins: np.ndarray
    scale: float

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))


def check_stability(sol: DiscreteSolution, spec: ProblemSpec, tol: float = 1e-9) -> StabilityReport:
    """Verify the discrete energy inequality at every knot.

    At knot ell, half the weighted end energy plus gamma times the squared
    norm of the projected solution must not exceed the accumulated
    right-hand-side work plus half the initial energy; the factor one half
    on both energy terms comes from integrating the weighted time derivative
    by parts (testing with the projected solution makes the first-order
    coupling drop out and bounds the zero-order part below by gamma).  A
    violation beyond tol*scale signals an assembly bug and raises
    StabilityViolated.
    """
    if sol.scheme != "cgp":
        raise ValueError("stability checker applies to the continuous scheme")
    space = sol.space
    part = sol.partition
    basis = sol.basis
    rho = sol.rho
    gamma = spec.gamma

    mass = space.block_mass()
    mass_m0 = space.block_mass_m0()
    loader = LoadAssembler(spec, space, basis)

    M = part.n_slabs
    proj_sq = np.zeros(M)
    work = np.zeros(M)
    te = basis.test_rows
    for m in range(M):
        t_prev = float(part.knots[m])
        tau = float(part.taus[m])
        lam = 2.0 * rho * tau
        pref = float(np.exp(-2.0 * rho * t_prev))
        mono = sol.slab_poly(m)
        mu = exp_moments(lam, basis.test_degree + max(basis.trial_degree, basis.test_degree))
        rhs = te @ hankel_moments(mu, basis.n_test, mono.shape[0]) @ mono
        W = te @ hankel_moments(mu, basis.n_test, basis.n_test) @ te.T
        c = np.linalg.solve(W, rhs)                     # test-basis coefficients of Pi U_h
        loads = loader.slab_load(t_prev, tau, rho)      # prefactor divided out
        work[m] = pref * float(np.sum(loads * c))
        cm = (mass @ c.T).T
        proj_sq[m] = pref * tau * float(np.einsum("ik,in,kn->", W, c, cm))

    traces = sol.knot_values(side="left")
    energy = np.einsum("ln,ln->l", traces, (mass_m0 @ traces.T).T)
    energy *= np.exp(-2.0 * rho * part.knots)

    lhs = 0.5 * energy[1:] + gamma * np.cumsum(proj_sq)
    rhs = np.cumsum(work) + 0.5 * energy[0]
    margins = rhs - lhs
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    report = StabilityReport(
        knots=part.knots[1:], lhs=lhs, rhs=rhs, margins=margins, scale=scale
    )
    if report.min_margin < -tol * scale:
        raise StabilityViolated(
            f"energy margin {report.min_margin:.3e} below -{tol:.1e}*scale (scale={scale:.3e})"
        )
    return report


# ---------------------------------------------------------------------------
# norm-equivalence probes


@dataclass(frozen=True)
class ProbeReport:
    """Sampled bounds of a discrete norm-equivalence ratio."""

    per_tau: tuple[tuple[float, float, float], ...]   # (tau, min ratio, max ratio)

    @property
    def min_ratio(self) -> float:
        return min(lo for _, lo, _ in self.per_tau)

    @property
    def max_ratio(self) -> float:
        return max(hi for _, _, hi in self.per_tau)

    @property
    def spread(self) -> float:
        return self.max_ratio / self.min_ratio


def probe_norm_equivalence(
    r: int,
    rho: float,
    taus: Sequence[float],
    trials: int,
    case: str = "trivial",
    seed: int = 0,
) -> ProbeReport:
    """Sample the ratio of the slab norm to its claimed discrete equivalent.

    case "trivial": time-derivative operator is the identity; the equivalent
    adds the weighted end-value energy.  case "singular": two-point state
    space with complementary operator pattern; the equivalent adds the
    (rho*M0 + M1)-weighted start-value energy.  Ratios are exact Gram
    quadratic forms; the draws are standard normal coefficients.
    """
    if case not in ("trivial", "singular"):
        raise ValueError(f"unknown case {case!r}")
    basis = build_time_bases(r)
    tr = basis.trial_rows
    te = basis.test_rows
    rng = np.random.default_rng(seed)
    ncomp = 1 if case == "trivial" else 2
    draws = rng.standard_normal((trials, basis.n_trial, ncomp))
    v_end = basis.eval_trial(1.0)
    v_start = basis.eval_trial(0.0)

    out = []
    for tau in taus:
        lam = 2.0 * rho * float(tau)
        mu = exp_moments(lam, 2 * basis.trial_degree)
        G = tr @ hankel_moments(mu, basis.n_trial, basis.n_trial) @ tr.T
        W = te @ hankel_moments(mu, basis.n_test, basis.n_test) @ te.T
        momap = te @ hankel_moments(mu, basis.n_test, basis.n_trial) @ tr.T
        P = np.linalg.solve(W, momap)                  # trial coeffs -> projected test coeffs
        c = np.einsum("ij,tjc->tic", P, draws)
        lhs = np.einsum("tic,ij,tjc->t", draws, G, draws)
        proj = np.einsum("tic,ij,tjc->t", c, W, c)
        if case == "trivial":
            end = np.einsum("j,tjc->tc", v_end, draws)[:, 0]
            rhs = proj + np.exp(-lam) * end**2
        else:
            start = np.einsum("j,tjc->tc", v_start, draws)
            rhs = proj + rho * start[:, 0] ** 2 + start[:, 1] ** 2
        ratio = lhs / rhs
        out.append((float(tau), float(np.min(ratio)), float(np.max(ratio))))
    return ProbeReport(per_tau=tuple(out))


# ---------------------------------------------------------------------------
# convergence rates and studies


def convergence_rates(errors: Sequence[float], levels: Sequence[float] | None = None) -> np.ndarray:
    """Observed orders log2(e_{i-1}/e_i) for a factor-2 refinement sequence.

    Zero errors yield an infinite sentinel instead of an exception.
    """
    e = np.asarray(errors, dtype=float)
    if len(e) < 2:
        raise ValueError("need at least two levels")
    if levels is not None:
        lv = np.asarray(levels, dtype=float)
        if len(lv) != len(e):
            raise ValueError("levels and errors must align")
        if not np.allclose(lv[1:] / lv[:-1], 2.0, rtol=1e-12):
            raise ValueError("levels must refine by factors of two")
    rates = np.empty(len(e) - 1)
    for i in range(len(e) - 1):
        if e[i + 1] == 0.0:
            rates[i] = np.inf
        elif e[i] == 0.0:
            rates[i] = -np.inf
        else:
            rates[i] = np.log2(e[i] / e[i + 1])
    return rates


def solve_problem(
    spec: ProblemSpec,
    n_slabs: int,
    n_cells: int,
    k: int,
    r: int,
    scheme: str = "cgp",
) -> DiscreteSolution:
    """Mesh, assemble, and march one run in a single call."""
    mesh = build_mesh(spec, n_cells)
    space = assemble_spatial(mesh, k, spec.coefficients)
    partition = uniform_partition(spec.final_time, n_slabs)
    basis = build_time_bases(r) if scheme == "cgp" else build_dg_time_bases(r)
    return march(spec, space, partition, basis, scheme)


@dataclass(frozen=True)
class StudyRow:
    scheme: str
    M: int
    N: int
    k: int
    r: int
    err_full: float
    err_proj: float
    err_final_energy: float
    err_l2: float
    rate_full: float | None = None
    rate_proj: float | None = None


@dataclass(frozen=True)
class StudyReport:
    """Per-refinement errors and observed rates of one study."""

    rows: tuple[StudyRow, ...]

    CSV_HEADER = "M,N,k,r,scheme,err_full,err_proj,err_final_energy,err_L2,rate_full,rate_proj"

    def scheme_rows(self, scheme: str) -> list[StudyRow]:
        return [row for row in self.rows if row.scheme == scheme]

    def to_csv(self) -> str:
        def fmt(v) -> str:
            if v is None:
                return ""
            return f"{v:.12e}" if abs(v) != np.inf else ("inf" if v > 0 else "-inf")

        lines = [self.CSV_HEADER]
        for row in self.rows:
            lines.append(
                f"{row.M},{row.N},{row.k},{row.r},{row.scheme},"
                f"{fmt(row.err_full)},{fmt(row.err_proj)},{fmt(row.err_final_energy)},"
                f"{fmt(row.err_l2)},{fmt(row.rate_full)},{fmt(row.rate_proj)}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_csv())


def run_study(
    spec: ProblemSpec,
    levels: Sequence[tuple[int, int]],
    k: int,
    r: int,
    schemes: Sequence[str] = ("cgp",),
    reference=None,
    *,
    dg_degree: int | None = None,
    max_workers: int = 1,
) -> StudyReport:
    """Solve a refinement sequence and tabulate errors and rates.

    levels is a sequence of (M, N) pairs with M doubling between entries;
    `reference` is a DiscreteSolution or an exact evaluator used for every
    level.  Levels may run in worker threads (max_workers > 1); the output
    ordering is deterministic regardless.
    """
    Ms = [m for m, _ in levels]
    if any(b != 2 * a for a, b in zip(Ms, Ms[1:])):
        raise ValueError("study levels must double the slab count")
    if reference is None:
        raise ValueError("a reference (discrete or exact evaluator) is required")

    tasks = [(scheme, M, N) for scheme in schemes for M, N in levels]

    def run_one(task):
        scheme, M, N = task
        mesh = build_mesh(spec, N)
        space = assemble_spatial(mesh, k, spec.coefficients)
        if scheme == "cgp":
            basis = build_time_bases(r)
        else:
            basis = build_dg_time_bases(dg_degree if dg_degree is not None else r)
        sol = march(spec, space, uniform_partition(spec.final_time, M), basis, scheme)
        return error_vs_reference(sol, reference)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            reports = list(pool.map(run_one, tasks))
    else:
        reports = [run_one(t) for t in tasks]

    rows: list[StudyRow] = []
    for scheme in schemes:
        sub = [rep for task, rep in zip(tasks, reports) if task[0] == scheme]
        rate_full = convergence_rates([rep.full for rep in sub], Ms)
        projs = [rep.projected for rep in sub]
        rate_proj = convergence_rates(projs, Ms) if not np.any(np.isnan(projs)) else None
        for i, ((M, N), rep) in enumerate(zip(levels, sub)):
            rows.append(
                StudyRow(
                    scheme=scheme,
                    M=M,
                    N=N,
                    k=k,
                    r=r if scheme == "cgp" or dg_degree is None else dg_degree,
                    err_full=rep.full,
                    err_proj=rep.projected,
                    err_final_energy=rep.final_energy,
                    err_l2=rep.l2_unweighted,
                    rate_full=None if i == 0 else float(rate_full[i - 1]),
                    rate_proj=None if (i == 0 or rate_proj is None) else float(rate_proj[i - 1]),
                )
            )
    return StudyReport(rows=tuple(rows))
