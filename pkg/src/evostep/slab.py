"""Per-slab assembly and the sequential time march.

Each slab yields one block linear system over the stacked spatial DOF
vector: block (i, j) = G1[i][j]*M0h + tau*G0[i][j]*(M1h + Ah), with the
common weight prefactor exp(-2*rho*t_prev) divided out of both sides.  The
continuous scheme carries the previous end value as the known first trial
coefficient; the discontinuous scheme adds the upwind jump term instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import KinkNotResolved, OutOfDomain, SingularSystem
from .model import ProblemSpec, RegionTag, evaluate_source
from .spacefem import Mesh1D, SpatialSystem1D, assemble_spatial, interpolate_spatial, lagrange_values
from .timebasis import (
    TimeBasisPair,
    TimePartition,
    WeightedMoments,
    build_dg_time_bases,
    build_time_bases,
    gauss_rule_01,
    weighted_moments,
)

_RESIDUAL_TOL = 1e-10


def split_gauss_01(n: int, breaks=()) -> tuple[np.ndarray, np.ndarray]:
    """Composite n-point Gauss rule on [0, 1], split at interior breakpoints."""
    edges = np.concatenate([[0.0], np.sort(np.asarray(breaks, dtype=float)), [1.0]])
    sq, wq = gauss_rule_01(n)
    pts = np.concatenate([a + (b - a) * sq for a, b in zip(edges[:-1], edges[1:])])
    wts = np.concatenate([(b - a) * wq for a, b in zip(edges[:-1], edges[1:])])
    return pts, wts


def interior_kinks(kinks, t_lo: float, t_hi: float, tol: float) -> np.ndarray:
    k = np.asarray(kinks, dtype=float)
    return k[(k > t_lo + tol) & (k < t_hi - tol)]


def require_kinks_resolved(partition: TimePartition, kinks, tol: float = 1e-10) -> None:
    """Every declared kink time must coincide with a partition knot."""
    scale = max(1.0, partition.final_time)
    for tk in kinks:
        if np.min(np.abs(partition.knots - tk)) > tol * scale:
            raise KinkNotResolved(
                f"source kink at t = {tk} lies inside a slab; choose knots containing it"
            )


class LoadAssembler:
    """Temporal-weighted spatial load integrals of the right-hand side.

    The temporal rule uses max(r + k, 8) + 2 Gauss points per slab, split at
    declared kink times; the spatial rule is the assembly rule (degree+1
    Gauss points per cell), exact for polynomial data up to degree k.
    """

    def __init__(self, spec: ProblemSpec, space: SpatialSystem1D, basis: TimeBasisPair):
        self.spec = spec
        self.space = space
        self.basis = basis
        self.n_time = max(basis.trial_degree + space.degree, 8) + 2
        sq, wq = space.quad_ref
        lo = space.mesh.nodes[:-1][:, None]
        h = np.diff(space.mesh.nodes)[:, None]
        self._x = (lo + h * sq[None, :]).ravel()
        self._wx = h * wq[None, :]
        ref = np.arange(space.degree + 1) / space.degree
        self._phi = lagrange_values(ref, sq)

    def spatial_load(self, t: float) -> np.ndarray:
        """Stacked vector of (source(t), basis) inner products."""
        space = self.space
        f, g = evaluate_source(self.spec, t, self._x)
        shape = (space.mesh.n_cells, -1)
        out = []
        for comp, values in enumerate((f, g)):
            local = np.einsum("cq,ql->cl", self._wx * values.reshape(shape), self._phi)
            full = np.bincount(space.dof_table.ravel(), local.ravel(), minlength=space.n_nodes)
            out.append(full[1:-1] if comp == 0 else full)
        return np.concatenate(out)

    def slab_load(self, t_prev: float, tau: float, rho: float) -> np.ndarray:
        """Load matrix (n_test, n_dofs) with the weight prefactor divided out."""
        lam = 2.0 * rho * tau
        tol = 1e-12 * max(1.0, self.spec.final_time)
        inner = interior_kinks(self.spec.source.kink_times, t_prev, t_prev + tau, tol)
        s_pts, s_wts = split_gauss_01(self.n_time, (inner - t_prev) / tau)
        field = np.stack([self.spatial_load(t_prev + tau * s) for s in s_pts])
        psi = self.basis.eval_test(s_pts)
        return tau * (psi * (s_wts * np.exp(-lam * s_pts))) @ field


@dataclass
class SlabOperator:
    """Factorized block operator of one slab; reused while tau is unchanged."""

    moments: WeightedMoments
    matrix: sp.csr_matrix
    lu: spla.SuperLU


def assemble_cgp_slab(
    moments: WeightedMoments,
    space: SpatialSystem1D,
    state: np.ndarray,
    load: np.ndarray,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Block system for one continuous slab; unknowns are modes 1..r."""
    m0 = space.block_mass_m0()
    m1a = space.block_mass_m1() + space.block_coupling()
    G0, G1, tau = moments.G0, moments.G1, moments.tau
    K = (sp.kron(G1[:, 1:], m0) + tau * sp.kron(G0[:, 1:], m1a)).tocsr()
    rhs = load - np.outer(G1[:, 0], m0 @ state) - tau * np.outer(G0[:, 0], m1a @ state)
    return K, rhs.ravel()


def assemble_dg_slab(
    moments: WeightedMoments,
    space: SpatialSystem1D,
    state_left: np.ndarray,
    load: np.ndarray,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Block system for one discontinuous slab with the upwind jump term."""
    m0 = space.block_mass_m0()
    m1a = space.block_mass_m1() + space.block_coupling()
    basis = moments.basis
    G0, G1, tau = moments.G0, moments.G1, moments.tau
    jump = np.outer(basis.eval_test(0.0), basis.eval_trial(0.0))
    K = (sp.kron(G1 + jump, m0) + tau * sp.kron(G0, m1a)).tocsr()
    rhs = load + np.outer(basis.eval_test(0.0), m0 @ state_left)
    return K, rhs.ravel()


def solve_slab(op: SlabOperator, rhs: np.ndarray) -> np.ndarray:
    """Direct solve with a residual check; zero data short-circuits to zero."""
    nrm = float(np.linalg.norm(rhs))
    if nrm == 0.0:
        return np.zeros_like(rhs)
    x = op.lu.solve(rhs)
    residual = float(np.linalg.norm(op.matrix @ x - rhs)) / nrm
    if not np.isfinite(residual) or residual > _RESIDUAL_TOL:
        raise SingularSystem(
            f"slab solve residual {residual:.3e} exceeds {_RESIDUAL_TOL:.1e} "
            f"(tau = {op.moments.tau:.6e}, size = {rhs.size})"
        )
    return x


@dataclass
class DiscreteSolution:
    """Space-time coefficients of one run, with evaluation semantics.

    coeffs[m, j] is the stacked DOF vector of trial mode j on slab m.  For
    the continuous scheme coeffs[m, 0] equals the previous slab's end value
    (shared values by construction); for the discontinuous scheme all modes
    are free and knot values from the left and right differ.
    """

    partition: TimePartition
    basis: TimeBasisPair
    space: SpatialSystem1D
    rho: float
    scheme: str
    coeffs: np.ndarray
    initial_value: np.ndarray

    @property
    def trial_degree(self) -> int:
        return self.basis.trial_degree

    def _locate(self, t: float) -> tuple[int, float]:
        T = self.partition.final_time
        tol = 1e-12 * max(1.0, T)
        if t < -tol or t > T + tol:
            raise OutOfDomain(f"t = {t} outside [0, {T}]")
        t = min(max(t, 0.0), T)
        m = self.partition.slab_of(t)
        tau = float(self.partition.taus[m])
        return m, (t - float(self.partition.knots[m])) / tau

    def coefficients_at(self, t: float) -> np.ndarray:
        """Stacked DOF vector at time t (left limit at knots, t = 0 maps right)."""
        m, s = self._locate(t)
        return self.basis.eval_trial(s) @ self.coeffs[m]

    def evaluate(self, t: float, x, table=None) -> tuple[np.ndarray, np.ndarray]:
        x_arr = np.asarray(x, dtype=float)
        scalar = x_arr.ndim == 0
        x_arr = np.atleast_1d(x_arr)
        a, b = self.space.mesh.a, self.space.mesh.b
        tol = 1e-12 * max(1.0, b - a)
        if np.any(x_arr < a - tol) or np.any(x_arr > b + tol):
            raise OutOfDomain(f"position outside [{a}, {b}]")
        vec = self.coefficients_at(t)
        u1, u2 = self.space.eval_fields(vec, np.clip(x_arr, a, b), table=table)
        if scalar:
            return float(u1[0]), float(u2[0])
        return u1, u2

    def slab_poly(self, m: int) -> np.ndarray:
        """Monomial coefficients (r+1, n_dofs) of the slab-m polynomial."""
        return self.basis.to_monomial(self.coeffs[m])

    def knot_values(self, side: str = "left") -> np.ndarray:
        """(M+1, n_dofs) array of knot traces from the requested side."""
        M = self.partition.n_slabs
        out = np.empty((M + 1, self.coeffs.shape[2]))
        if side == "left":
            out[0] = self.initial_value
            end = self.basis.eval_trial(1.0)
            for m in range(M):
                out[m + 1] = end @ self.coeffs[m]
        elif side == "right":
            start = self.basis.eval_trial(0.0)
            for m in range(M):
                out[m] = start @ self.coeffs[m]
            out[M] = self.basis.eval_trial(1.0) @ self.coeffs[M - 1]
        else:
            raise ValueError(f"side must be 'left' or 'right', got {side!r}")
        return out


def evaluate_solution(sol: DiscreteSolution, t: float, x):
    """Field values (u1, u2) of a discrete solution at (t, x)."""
    return sol.evaluate(t, x)


def _check_basis(basis: TimeBasisPair, scheme: str) -> None:
    if scheme == "cgp":
        if basis.test_degree != basis.trial_degree - 1:
            raise ValueError("continuous scheme needs test degree = trial degree - 1")
    elif scheme == "dg":
        if basis.test_degree != basis.trial_degree:
            raise ValueError("discontinuous scheme needs test degree = trial degree")
    else:
        raise ValueError(f"unknown scheme {scheme!r}")


def march(
    spec: ProblemSpec,
    space: SpatialSystem1D,
    partition: TimePartition,
    basis: TimeBasisPair,
    scheme: str = "cgp",
) -> DiscreteSolution:
    """Sequential slab loop over the whole time interval.

    Parameters
    ----------
    spec : validated problem.
    space : assembled spatial system (mesh must match spec's regions).
    partition : time partition whose knots contain every source kink.
    basis : trial/test pair (from build_time_bases or build_dg_time_bases).
    scheme : "cgp" or "dg".

    The per-slab operator is refactorized only when the slab length changes;
    uniform partitions factorize once.
    """
    scheme = scheme.lower()
    _check_basis(basis, scheme)
    require_kinks_resolved(partition, spec.source.kink_times)
    if abs(partition.final_time - spec.final_time) > 1e-9 * max(1.0, spec.final_time):
        raise ValueError("partition final time does not match the problem")

    u0 = interpolate_spatial(spec.initial_value, space)
    loader = LoadAssembler(spec, space, basis)
    n = space.n_dofs
    M = partition.n_slabs
    coeffs = np.zeros((M, basis.n_trial, n))
    assemble = assemble_cgp_slab if scheme == "cgp" else assemble_dg_slab

    if basis.trial_nodes[-1] != 1.0:
        raise ValueError("trial basis must be nodal at the slab end")

    operators: dict[float, SlabOperator] = {}
    state = u0.copy()
    for m in range(M):
        t_prev = float(partition.knots[m])
        tau = float(partition.taus[m])
        op = operators.get(tau)
        if op is None:
            mom = weighted_moments(basis, t_prev, tau, spec.rho)
            K, _ = assemble(mom, space, np.zeros(n), np.zeros((basis.n_test, n)))
            op = SlabOperator(moments=mom, matrix=K, lu=spla.splu(K.tocsc()))
            operators[tau] = op
        load = loader.slab_load(t_prev, tau, spec.rho)
        _, rhs = assemble(op.moments, space, state, load)
        x = solve_slab(op, rhs)
        if scheme == "cgp":
            coeffs[m, 0] = state
            coeffs[m, 1:] = x.reshape(basis.trial_degree, n)
        else:
            coeffs[m] = x.reshape(basis.n_trial, n)
        state = coeffs[m, -1]

    return DiscreteSolution(
        partition=partition,
        basis=basis,
        space=space,
        rho=spec.rho,
        scheme=scheme,
        coeffs=coeffs,
        initial_value=u0,
    )


def write_solution_dump(sol: DiscreteSolution, path, n_time: int = 65, n_space: int = 65) -> None:
    """Plain-text sample table (t, x, u1, u2) for external plotting."""
    T = sol.partition.final_time
    a, b = sol.space.mesh.a, sol.space.mesh.b
    ts = np.linspace(0.0, T, n_time)
    xs = np.linspace(a, b, n_space)
    table = sol.space.evaluation_table(xs)
    rows = np.empty((n_time * n_space, 4))
    for i, t in enumerate(ts):
        u1, u2 = sol.evaluate(t, xs, table=table)
        block = slice(i * n_space, (i + 1) * n_space)
        rows[block, 0] = t
        rows[block, 1] = xs
        rows[block, 2] = u1
        rows[block, 3] = u2
    header = (
        f"scheme={sol.scheme} r={sol.trial_degree} k={sol.space.degree} "
        f"M={sol.partition.n_slabs} N={sol.space.mesh.n_cells} rho={sol.rho!r} T={T!r}\n"
        "t x u1 u2"
    )
    np.savetxt(path, rows, fmt="%.17e", header=header)


def save_reference(sol: DiscreteSolution, path) -> None:
    """Self-describing binary dump reloadable by load_reference."""
    np.savez(
        path,
        knots=sol.partition.knots,
        scheme=np.array(sol.scheme),
        trial_degree=np.array(sol.trial_degree),
        space_degree=np.array(sol.space.degree),
        mesh_nodes=sol.space.mesh.nodes,
        tags=np.array([t.value for t in sol.space.mesh.tags]),
        m0_cells=sol.space.m0_cells,
        m1_cells=sol.space.m1_cells,
        rho=np.array(sol.rho),
        coeffs=sol.coeffs,
        initial_value=sol.initial_value,
    )


def load_reference(path) -> DiscreteSolution:
    """Rebuild a dumped solution; evaluation round-trips exactly."""
    with np.load(path, allow_pickle=False) as data:
        scheme = str(data["scheme"])
        r = int(data["trial_degree"])
        mesh = Mesh1D(
            nodes=data["mesh_nodes"],
            tags=tuple(RegionTag(v) for v in data["tags"]),
        )
        space = assemble_spatial(mesh, int(data["space_degree"]), (data["m0_cells"], data["m1_cells"]))
        basis = build_time_bases(r) if scheme == "cgp" else build_dg_time_bases(r)
        return DiscreteSolution(
            partition=TimePartition(data["knots"]),
            basis=basis,
            space=space,
            rho=float(data["rho"]),
            scheme=scheme,
            coeffs=data["coeffs"],
            initial_value=data["initial_value"],
        )
