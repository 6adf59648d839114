"""1D spatial mesh, discrete spaces, and weighted spatial matrices.

The first field lives in the boundary-constrained continuous nodal space
(zero endpoint values), the second in the unconstrained continuous nodal
space of the same degree: on an interval the H(div)-conforming mixed space
of matching order collapses to continuous piecewise polynomials, so both
components share one nodal layout and differ only in the endpoint DOFs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import BoundaryMismatchWarning, UnresolvedRegion
from .model import MaterialCoefficients, ProblemSpec, RegionTag
from .timebasis import gauss_rule_01


@dataclass(frozen=True)
class Mesh1D:
    """Cells of [a, b] with one region tag per cell."""

    nodes: np.ndarray
    tags: tuple[RegionTag, ...]

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("mesh nodes must be strictly increasing")
        if len(self.tags) != len(nodes) - 1:
            raise ValueError("need exactly one region tag per cell")
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_cells(self) -> int:
        return len(self.nodes) - 1

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def h(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    def cell_of(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, self.n_cells - 1)


def build_mesh(spec: ProblemSpec, n_cells: int) -> Mesh1D:
    """Equidistant mesh whose nodes resolve every region boundary."""
    if n_cells < 2:
        raise ValueError(f"need at least 2 cells, got {n_cells}")
    a, b = spec.domain
    nodes = a + (b - a) * np.arange(n_cells + 1) / n_cells
    tol = 1e-9 * (b - a)
    for lo, hi, _ in spec.regions:
        for bp in (lo, hi):
            if np.min(np.abs(nodes - bp)) > tol:
                raise UnresolvedRegion(
                    f"region boundary x = {bp} is not a mesh node for N = {n_cells}"
                )
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    region_idx = spec.region_tags_at(mids)
    tags = tuple(spec.regions[int(i)][2] for i in region_idx)
    return Mesh1D(nodes=nodes, tags=tags)


def lagrange_values(ref_nodes: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Values of the Lagrange basis through ref_nodes at s; shape s.shape + (n,)."""
    n = len(ref_nodes)
    out = np.ones(np.shape(s) + (n,))
    for l in range(n):
        for m in range(n):
            if m != l:
                out[..., l] *= (s - ref_nodes[m]) / (ref_nodes[l] - ref_nodes[m])
    return out


def lagrange_derivs(ref_nodes: np.ndarray, s: np.ndarray) -> np.ndarray:
    n = len(ref_nodes)
    out = np.zeros(np.shape(s) + (n,))
    for l in range(n):
        for m in range(n):
            if m == l:
                continue
            term = np.ones(np.shape(s)) / (ref_nodes[l] - ref_nodes[m])
            for p in range(n):
                if p != l and p != m:
                    term *= (s - ref_nodes[p]) / (ref_nodes[l] - ref_nodes[p])
            out[..., l] += term
    return out


@dataclass(frozen=True)
class SpatialSystem1D:
    """Assembled nodal system: DOF maps and weighted spatial matrices.

    Nodal points are the k+1 equidistant points per cell, shared across cell
    boundaries; the constrained space drops the two endpoint DOFs.  All
    matrices are independent of time and reused for every slab.
    """

    mesh: Mesh1D
    degree: int
    m0_cells: np.ndarray          # (2, n_cells)
    m1_cells: np.ndarray
    nodal_points: np.ndarray      # (n_nodes,)
    dof_table: np.ndarray         # (n_cells, k+1) global nodal indices
    mass: tuple[sp.csr_matrix, sp.csr_matrix]
    mass_m0: tuple[sp.csr_matrix, sp.csr_matrix]
    mass_m1: tuple[sp.csr_matrix, sp.csr_matrix]
    coupling_v2_to_v1: sp.csr_matrix   # rows constrained space, cols full space
    coupling_v1_to_v2: sp.csr_matrix   # rows full space, cols constrained space
    quad_ref: tuple[np.ndarray, np.ndarray]

    @property
    def n_nodes(self) -> int:
        return len(self.nodal_points)

    @property
    def n_v1(self) -> int:
        return self.n_nodes - 2

    @property
    def n_v2(self) -> int:
        return self.n_nodes

    @property
    def n_dofs(self) -> int:
        return self.n_v1 + self.n_v2

    def split(self, stacked: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return stacked[..., : self.n_v1], stacked[..., self.n_v1 :]

    def join(self, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
        return np.concatenate([c1, c2], axis=-1)

    def nodal_values(self, comp: int, dofs: np.ndarray) -> np.ndarray:
        """Full nodal vector of one component (zero-padded for component 0)."""
        if comp == 0:
            full = np.zeros(dofs.shape[:-1] + (self.n_nodes,))
            full[..., 1:-1] = dofs
            return full
        return np.asarray(dofs, dtype=float)

    # -- block operators on the stacked DOF vector -------------------------

    def block_mass(self) -> sp.csr_matrix:
        return sp.block_diag(self.mass, format="csr")

    def block_mass_m0(self) -> sp.csr_matrix:
        return sp.block_diag(self.mass_m0, format="csr")

    def block_mass_m1(self) -> sp.csr_matrix:
        return sp.block_diag(self.mass_m1, format="csr")

    def block_coupling(self) -> sp.csr_matrix:
        return sp.bmat(
            [[None, self.coupling_v2_to_v1], [self.coupling_v1_to_v2, None]], format="csr"
        )

    # -- pointwise evaluation ----------------------------------------------

    def evaluation_table(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(cell index, local basis values) for reuse across many fields."""
        x = np.asarray(x, dtype=float)
        cells = self.mesh.cell_of(x)
        lo = self.mesh.nodes[cells]
        h = self.mesh.nodes[cells + 1] - lo
        s = (x - lo) / h
        ref = np.arange(self.degree + 1) / self.degree if self.degree > 0 else np.array([0.0])
        return cells, lagrange_values(ref, s)

    def eval_component(self, comp: int, dofs: np.ndarray, x, table=None) -> np.ndarray:
        """Field values of one component at points x."""
        x = np.asarray(x, dtype=float)
        cells, vals = table if table is not None else self.evaluation_table(x)
        full = self.nodal_values(comp, dofs)
        local = full[..., self.dof_table[cells]]
        return np.einsum("...pl,pl->...p", local, vals)

    def eval_component_deriv(self, comp: int, dofs: np.ndarray, x) -> np.ndarray:
        """Spatial derivative of one component at points x (cell-interior use)."""
        x = np.asarray(x, dtype=float)
        cells = self.mesh.cell_of(x)
        lo = self.mesh.nodes[cells]
        h = self.mesh.nodes[cells + 1] - lo
        s = (x - lo) / h
        ref = np.arange(self.degree + 1) / self.degree
        dvals = lagrange_derivs(ref, s) / h[..., None]
        full = self.nodal_values(comp, dofs)
        local = full[..., self.dof_table[cells]]
        return np.einsum("...pl,pl->...p", local, dvals)

    def eval_fields(self, stacked: np.ndarray, x, table=None) -> tuple[np.ndarray, np.ndarray]:
        c1, c2 = self.split(stacked)
        return (
            self.eval_component(0, c1, x, table=table),
            self.eval_component(1, c2, x, table=table),
        )

    def quadrature_grid(self, n_per_cell: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Composite Gauss points and weights over all cells (flattened)."""
        n = n_per_cell or (self.degree + 1)
        sq, wq = gauss_rule_01(n)
        lo = self.mesh.nodes[:-1, None]
        h = np.diff(self.mesh.nodes)[:, None]
        pts = lo + h * sq[None, :]
        wts = h * wq[None, :]
        return pts.ravel(), wts.ravel()


def assemble_spatial(mesh: Mesh1D, degree: int, coefficients) -> SpatialSystem1D:
    """Assemble DOF maps and all weighted matrices for one mesh and degree.

    `coefficients` is either a MaterialCoefficients table (resolved through
    the cell tags) or a pair of explicit per-cell arrays of shape (2, N).
    Quadrature is Gauss with degree+1 points per cell, exact for every
    assembled integrand.
    """
    if degree < 1:
        raise ValueError(f"spatial degree must be >= 1, got {degree}")
    if isinstance(coefficients, MaterialCoefficients):
        m0_cells, m1_cells = coefficients.for_tags(mesh.tags)
    else:
        m0_cells, m1_cells = (np.asarray(c, dtype=float) for c in coefficients)
        if m0_cells.shape != (2, mesh.n_cells) or m1_cells.shape != (2, mesh.n_cells):
            raise ValueError("per-cell coefficient arrays must have shape (2, n_cells)")

    k = degree
    N = mesh.n_cells
    n_nodes = N * k + 1
    dof_table = (np.arange(N)[:, None] * k) + np.arange(k + 1)[None, :]

    ref = np.arange(k + 1) / k
    lo = mesh.nodes[:-1]
    h = np.diff(mesh.nodes)
    nodal_points = np.empty(n_nodes)
    nodal_points[dof_table.ravel()] = (lo[:, None] + h[:, None] * ref[None, :]).ravel()

    sq, wq = gauss_rule_01(k + 1)
    vals = lagrange_values(ref, sq)       # (nq, k+1)
    dvals = lagrange_derivs(ref, sq)      # (nq, k+1)
    mass_ref = vals.T @ (wq[:, None] * vals)            # times h per cell
    grad_ref = vals.T @ (wq[:, None] * dvals)           # int L_l' L_m, h-independent

    rows = np.repeat(dof_table, k + 1, axis=1).ravel()
    cols = np.tile(dof_table, (1, k + 1)).ravel()

    def scatter(cell_weights: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
        data = (cell_weights[:, None, None] * local[None, :, :]).ravel()
        return sp.coo_matrix((data, (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()

    mass_full = scatter(h, mass_ref)
    grad_full = scatter(np.ones(N), grad_ref)   # K[i, j] = int L_j' L_i dx

    interior = slice(1, -1)
    mass = (mass_full[interior, interior], mass_full)
    mass_m0 = (
        scatter(h * m0_cells[0], mass_ref)[interior, interior],
        scatter(h * m0_cells[1], mass_ref),
    )
    mass_m1 = (
        scatter(h * m1_cells[0], mass_ref)[interior, interior],
        scatter(h * m1_cells[1], mass_ref),
    )

    return SpatialSystem1D(
        mesh=mesh,
        degree=k,
        m0_cells=m0_cells,
        m1_cells=m1_cells,
        nodal_points=nodal_points,
        dof_table=dof_table,
        mass=tuple(m.tocsr() for m in mass),
        mass_m0=tuple(m.tocsr() for m in mass_m0),
        mass_m1=tuple(m.tocsr() for m in mass_m1),
        coupling_v2_to_v1=grad_full[interior, :].tocsr(),
        coupling_v1_to_v2=grad_full[:, interior].tocsr(),
        quad_ref=(sq, wq),
    )


def interpolate_spatial(
    evaluator: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    system: SpatialSystem1D,
) -> np.ndarray:
    """Nodal interpolation into the stacked discrete space.

    The first component's endpoint values are forced to zero; a
    BoundaryMismatchWarning is emitted when they were not negligible.
    """
    u1, u2 = evaluator(system.nodal_points)
    u1 = np.broadcast_to(np.asarray(u1, dtype=float), system.nodal_points.shape)
    u2 = np.broadcast_to(np.asarray(u2, dtype=float), system.nodal_points.shape)
    scale = max(1.0, float(np.max(np.abs(u1)))) if u1.size else 1.0
    if max(abs(u1[0]), abs(u1[-1])) > 1e-10 * scale:
        warnings.warn(
            f"first component has boundary values ({u1[0]:.3e}, {u1[-1]:.3e}); forcing zero",
            BoundaryMismatchWarning,
            stacklevel=2,
        )
    return np.concatenate([u1[1:-1], u2])
