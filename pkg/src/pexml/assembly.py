"""P1 finite-element assembly on the structured triangulation.

Provides the coefficient-weighted stiffness form, the (optionally weighted)
mass form, the state-dependent exponential-coefficient stiffness, and
Galerkin restriction onto coefficient bases.  All assembly is exact for the
piecewise-linear/piecewise-constant data used here: gradients are constant
per triangle and the 3x3 element mass block has the closed form
|T|/12 * (2 on the diagonal, 1 off).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .field import ScalarCellField
from .grid import FineGrid, triangle_areas

STATE_OVERFLOW_LIMIT = 700.0  # exp() overflows shortly above this


def _p1_geometry(grid: FineGrid):
    """Per-triangle areas and P1 basis gradients, shape (ntri,), (ntri, 3, 2)."""
    p = grid.nodes[grid.triangles]
    area = triangle_areas(grid)
    grads = np.empty((grid.tri_count, 3, 2))
    for loc, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        grads[:, loc, 0] = p[:, a, 1] - p[:, b, 1]
        grads[:, loc, 1] = p[:, b, 0] - p[:, a, 0]
    grads /= (2.0 * area)[:, None, None]
    return area, grads


def _scatter(grid: FineGrid, local_blocks: np.ndarray, tri_subset=None) -> sp.csr_matrix:
    """Sum per-triangle 3x3 blocks into a global sparse matrix."""
    tris = grid.triangles if tri_subset is None else grid.triangles[tri_subset]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    mat = sp.coo_matrix(
        (local_blocks.ravel(), (rows, cols)),
        shape=(grid.node_count, grid.node_count),
    )
    return mat.tocsr()


def assemble_stiffness(
    grid: FineGrid, kappa: ScalarCellField, tri_subset=None
) -> sp.csr_matrix:
    """Galerkin matrix of (u, v) -> integral of kappa * grad(u).grad(v).

    Row sums vanish (pure Neumann kernel contains the constants).  With
    ``tri_subset`` only the listed triangles contribute, which yields the
    local bilinear form of a sub-region in global indexing.
    """
    area, grads = _p1_geometry(grid)
    coeff = kappa.values * area
    if tri_subset is not None:
        area, grads, coeff = area[tri_subset], grads[tri_subset], coeff[tri_subset]
    blocks = np.einsum("t,tid,tjd->tij", coeff, grads, grads)
    return _scatter(grid, blocks, tri_subset)


_MASS_REF = (np.full((3, 3), 1.0) + np.eye(3)) / 12.0


def assemble_mass(
    grid: FineGrid, weight: ScalarCellField | None = None, tri_subset=None
) -> sp.csr_matrix:
    """Galerkin matrix of (u, v) -> integral of w * u * v (w=1 when omitted)."""
    area = triangle_areas(grid)
    coeff = area if weight is None else weight.values * area
    if tri_subset is not None:
        coeff = coeff[tri_subset]
    blocks = coeff[:, None, None] * _MASS_REF[None, :, :]
    return _scatter(grid, blocks, tri_subset)


def assemble_nonlinear_stiffness(
    grid: FineGrid, kappa: ScalarCellField, state: np.ndarray
) -> sp.csr_matrix:
    """Stiffness with coefficient kappa * exp(mean of state over each triangle).

    The exponential is evaluated at the vertex average of ``state`` per
    triangle, which keeps the matrix symmetric positive semidefinite.
    """
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (grid.node_count,):
        raise ValueError(f"state has shape {state.shape}, expected ({grid.node_count},)")
    if not np.all(np.isfinite(state)):
        raise ValueError("state contains non-finite entries")
    if np.max(np.abs(state)) > STATE_OVERFLOW_LIMIT:
        raise ValueError(
            f"|state| exceeds {STATE_OVERFLOW_LIMIT}; exp() would overflow"
        )
    tri_mean = state[grid.triangles].mean(axis=1)
    scaled = ScalarCellField(kappa.values * np.exp(tri_mean))
    return assemble_stiffness(grid, scaled)


def restrict(matrix: sp.spmatrix, basis: np.ndarray) -> np.ndarray:
    """Galerkin restriction basis^T * matrix * basis, symmetrized.

    The exact symmetrization removes the round-off skew of the two-sided
    product so downstream Cholesky factorizations see a symmetric array.
    """
    basis = np.asarray(basis)
    if matrix.shape[1] != basis.shape[0]:
        raise ValueError(
            f"matrix of dimension {matrix.shape[1]} cannot act on basis rows {basis.shape[0]}"
        )
    product = basis.T @ (matrix @ basis)
    return 0.5 * (product + product.T)


def coarse_load(vector: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Load functional restricted to a coefficient basis: basis^T * vector."""
    vector = np.asarray(vector)
    if basis.shape[0] != vector.shape[0]:
        raise ValueError(
            f"basis rows {basis.shape[0]} do not match vector length {vector.shape[0]}"
        )
    return basis.T @ vector
