"""Structured triangulation of the unit square and its coarse-block overlay.

The fine grid splits every cell of a uniform n-by-n lattice along the
lower-left to upper-right diagonal, which keeps all triangles congruent and
the enumeration reproducible.  The coarse decomposition groups fine cells
into Nc-by-Nc blocks and records, for every block, an oversampled patch
obtained by padding with whole blocks and clipping at the domain boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FineGrid:
    """Uniform triangulation of [0,1]^2 with 2*n^2 triangles.

    Attributes
    ----------
    n : int
        Cells per side.
    nodes : ndarray, shape (node_count, 2)
        Lattice coordinates, node (i, j) at index j*(n+1)+i.
    triangles : ndarray, shape (tri_count, 3)
        Vertex indices, counterclockwise.
    """

    n: int
    nodes: np.ndarray
    triangles: np.ndarray

    @property
    def node_count(self) -> int:
        return (self.n + 1) ** 2

    @property
    def tri_count(self) -> int:
        return 2 * self.n * self.n

    @property
    def h(self) -> float:
        """Fine cell width (the mesh size along an axis; diagonal is sqrt(2)*h)."""
        return 1.0 / self.n

    def node_index(self, i, j):
        """Lattice coordinates (i, j) -> global node index (vectorized)."""
        return np.asarray(j) * (self.n + 1) + np.asarray(i)

    def cell_triangles(self, i, j):
        """Fine cell (i, j) -> its two triangle indices (lower, upper)."""
        base = 2 * (np.asarray(j) * self.n + np.asarray(i))
        return base, base + 1

    def rect_nodes(self, i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
        """All node indices of the closed cell rectangle [i0,i1) x [j0,j1)."""
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
        return self.node_index(ii.ravel(), jj.ravel())

    def rect_interior_nodes(self, i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
        """Nodes strictly inside the cell rectangle (zero-trace dof set)."""
        if i1 - i0 < 2 or j1 - j0 < 2:
            return np.empty(0, dtype=np.int64)
        ii, jj = np.meshgrid(np.arange(i0 + 1, i1), np.arange(j0 + 1, j1))
        return self.node_index(ii.ravel(), jj.ravel())

    def rect_triangles(self, i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
        """Triangle indices of all fine cells in [i0,i1) x [j0,j1)."""
        ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1))
        lower, upper = self.cell_triangles(ii.ravel(), jj.ravel())
        return np.sort(np.concatenate([lower, upper]))


def build_fine_grid(n: int) -> FineGrid:
    """Triangulate [0,1]^2 into n x n cells, each split into two triangles.

    Parameters
    ----------
    n : int
        Cells per side, at least 1.
    """
    if n < 1:
        raise ValueError(f"grid needs at least one cell per side, got n={n}")
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    ii, jj = np.meshgrid(np.arange(n), np.arange(n))
    ii, jj = ii.ravel(), jj.ravel()
    ll = jj * (n + 1) + ii
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    # same diagonal (lower-left to upper-right) in every cell
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return FineGrid(n=n, nodes=nodes, triangles=triangles)


def triangle_areas(grid: FineGrid) -> np.ndarray:
    """Signed areas of all triangles (positive for this construction)."""
    p = grid.nodes[grid.triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def triangle_centroids(grid: FineGrid) -> np.ndarray:
    return grid.nodes[grid.triangles].mean(axis=1)


@dataclass(frozen=True)
class CoarseBlock:
    """One coarse block K and its oversampled patch K+ (cell-range bounds)."""

    index: int
    cells: tuple[int, int, int, int]        # (i0, i1, j0, j1) fine-cell range of K
    over_cells: tuple[int, int, int, int]   # same for K+, clipped to the domain
    nodes: np.ndarray
    interior: np.ndarray                    # zero-trace dofs of K
    tris: np.ndarray
    over_nodes: np.ndarray
    over_interior: np.ndarray               # zero-trace dofs of K+
    over_tris: np.ndarray
    over_elements: np.ndarray               # coarse element ids covered by K+


@dataclass(frozen=True)
class CoarseDecomposition:
    """Nc x Nc coarse blocks over a fine grid, with oversampling layers."""

    grid: FineGrid
    Nc: int
    layers: int
    blocks: list[CoarseBlock] = field(repr=False)

    @property
    def element_count(self) -> int:
        return self.Nc * self.Nc

    @property
    def cells_per_block(self) -> int:
        return self.grid.n // self.Nc

    @property
    def H(self) -> float:
        """Coarse mesh size (diagonal of a coarse block)."""
        return np.sqrt(2.0) / self.Nc


def build_coarse_decomposition(grid: FineGrid, Nc: int, layers: int = 3) -> CoarseDecomposition:
    """Overlay Nc x Nc coarse blocks and their oversampled patches on the grid.

    Parameters
    ----------
    grid : FineGrid
    Nc : int
        Coarse blocks per side; must divide grid.n.
    layers : int
        Padding width of the oversampled patch, in whole coarse blocks;
        patches are clipped at the domain boundary.
    """
    if Nc < 1 or grid.n % Nc != 0:
        raise ValueError(f"Nc={Nc} must be positive and divide n={grid.n}")
    if layers < 0:
        raise ValueError(f"oversampling layers must be nonnegative, got {layers}")
    nb = grid.n // Nc
    blocks = []
    for J in range(Nc):
        for I in range(Nc):
            idx = J * Nc + I
            i0, i1 = I * nb, (I + 1) * nb
            j0, j1 = J * nb, (J + 1) * nb
            Io0, Io1 = max(I - layers, 0), min(I + layers + 1, Nc)
            Jo0, Jo1 = max(J - layers, 0), min(J + layers + 1, Nc)
            oi0, oi1 = Io0 * nb, Io1 * nb
            oj0, oj1 = Jo0 * nb, Jo1 * nb
            JJ, II = np.meshgrid(np.arange(Jo0, Jo1), np.arange(Io0, Io1))
            over_elems = np.sort(JJ.ravel() * Nc + II.ravel())
            blocks.append(
                CoarseBlock(
                    index=idx,
                    cells=(i0, i1, j0, j1),
                    over_cells=(oi0, oi1, oj0, oj1),
                    nodes=grid.rect_nodes(i0, i1, j0, j1),
                    interior=grid.rect_interior_nodes(i0, i1, j0, j1),
                    tris=grid.rect_triangles(i0, i1, j0, j1),
                    over_nodes=grid.rect_nodes(oi0, oi1, oj0, oj1),
                    over_interior=grid.rect_interior_nodes(oi0, oi1, oj0, oj1),
                    over_tris=grid.rect_triangles(oi0, oi1, oj0, oj1),
                    over_elements=over_elems,
                )
            )
    return CoarseDecomposition(grid=grid, Nc=Nc, layers=layers, blocks=blocks)


def build_partition_of_unity(dec: CoarseDecomposition) -> np.ndarray:
    """Bilinear coarse hat functions sampled at fine nodes.

    Returns
    -------
    ndarray, shape ((Nc+1)^2, node_count)
        Row c holds the hat of coarse lattice node c at every fine node.
        Rows sum to one at every fine node.
    """
    grid, Nc = dec.grid, dec.Nc
    x = grid.nodes[:, 0]
    y = grid.nodes[:, 1]
    H = 1.0 / Nc
    chis = np.zeros(((Nc + 1) ** 2, grid.node_count))
    for cj in range(Nc + 1):
        for ci in range(Nc + 1):
            hx = np.clip(1.0 - np.abs(x - ci * H) / H, 0.0, 1.0)
            hy = np.clip(1.0 - np.abs(y - cj * H) / H, 0.0, 1.0)
            chis[cj * (Nc + 1) + ci] = hx * hy
    return chis


def pu_gradient_sum(dec: CoarseDecomposition) -> np.ndarray:
    """Per-triangle value of sum_i |grad chi_i|^2 at the centroid.

    Inside a coarse cell with local coordinates (s, t) in [0,1]^2 the four
    active bilinear hats give Nc^2 * 2 * ((1-s)^2 + s^2 + (1-t)^2 + t^2).
    """
    cent = triangle_centroids(dec.grid)
    H = 1.0 / dec.Nc
    s = np.mod(cent[:, 0], H) / H
    t = np.mod(cent[:, 1], H) / H
    return (2.0 / H**2) * ((1 - s) ** 2 + s**2 + (1 - t) ** 2 + t**2)
