"""Parameterized block sources of the three benchmark problems.

Each source is a sum of rectangle indicators scaled by sinusoidal amplitude
functions of time; the parameter vector weights the sinusoids.  The first
problem uses two blocks and four parameters in [1, 10]; the second and third
use five blocks and ten parameters in [1, 20]; the third is the exponential-
coefficient (nonlinear) problem with a shorter horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FineGrid, triangle_areas

EXAMPLE_BOUNDS = {1: (1.0, 10.0), 2: (1.0, 20.0), 3: (1.0, 20.0)}
EXAMPLE_PARAM_COUNT = {1: 4, 2: 10, 3: 10}
EXAMPLE_FINAL_TIME = {1: 0.01, 2: 0.01, 3: 0.001}
EXAMPLE_NONLINEAR = {1: False, 2: False, 3: True}


@dataclass(frozen=True)
class SourceBlock:
    rect: tuple[float, float, float, float]     # (x0, x1, y0, y1)
    terms: tuple[tuple[int, float, int], ...]   # (param index, frequency, 0=sin/1=cos)

    def amplitude(self, w: np.ndarray, t: float, final_time: float) -> float:
        value = 0.0
        for idx, freq, kind in self.terms:
            phase = freq * np.pi * t / final_time
            value += w[idx] * (np.cos(phase) if kind else np.sin(phase))
        return 100.0 * value


_BLOCKS_EX1 = (
    SourceBlock((0.2, 0.3, 0.2, 0.3), ((0, 2.0, 0), (1, 5.2, 0))),
    SourceBlock((0.8, 0.9, 0.8, 0.9), ((2, 2.4, 0), (3, 4.0, 0))),
)

_BLOCKS_EX2 = (
    SourceBlock((0.2, 0.3, 0.2, 0.3), ((0, 1.0, 0), (1, 3.2, 1))),
    SourceBlock((0.8, 0.9, 0.8, 0.9), ((2, 2.2, 0), (3, 1.6, 0))),
    SourceBlock((0.2, 0.3, 0.8, 0.9), ((4, 3.0, 1), (5, 4.6, 1))),
    SourceBlock((0.8, 0.9, 0.2, 0.3), ((6, 1.4, 1), (7, 5.0, 0))),
    SourceBlock((0.5, 0.6, 0.5, 0.6), ((8, 2.8, 0), (9, 4.0, 0))),
)

_EXAMPLE_BLOCKS = {1: _BLOCKS_EX1, 2: _BLOCKS_EX2, 3: _BLOCKS_EX2}


@dataclass(frozen=True)
class SourceSpec:
    """One benchmark source: id, parameters, horizon, and its blocks."""

    example_id: int
    w: np.ndarray
    final_time: float
    blocks: tuple[SourceBlock, ...]

    @property
    def nonlinear(self) -> bool:
        return EXAMPLE_NONLINEAR[self.example_id]


def make_source(example_id: int, w, final_time: float | None = None) -> SourceSpec:
    if example_id not in _EXAMPLE_BLOCKS:
        raise ValueError(f"unknown example id {example_id}, options: 1, 2, 3")
    w = np.asarray(w, dtype=np.float64)
    expected = EXAMPLE_PARAM_COUNT[example_id]
    if w.shape != (expected,):
        raise ValueError(
            f"example {example_id} takes {expected} parameters, got shape {w.shape}"
        )
    if final_time is None:
        final_time = EXAMPLE_FINAL_TIME[example_id]
    return SourceSpec(
        example_id=example_id,
        w=w,
        final_time=final_time,
        blocks=_EXAMPLE_BLOCKS[example_id],
    )


def source_eval(spec: SourceSpec, x, t: float) -> float:
    """Point value of the source; zero outside every block."""
    x = np.asarray(x)
    for block in spec.blocks:
        x0, x1, y0, y1 = block.rect
        if x0 <= x[0] <= x1 and y0 <= x[1] <= y1:
            return block.amplitude(spec.w, t, spec.final_time)
    return 0.0


# P1 basis values at the interior Gauss points g_i = (2/3)p_i + (1/6)(p_j + p_k);
# the rule is degree-2 exact with weights |T|/3 and its points never touch the
# triangle boundary, so grid-aligned rectangles are integrated exactly.
_GAUSS_BASIS = (np.full((3, 3), 1.0) + 3.0 * np.eye(3)) / 6.0


def rectangle_indicator_load(grid: FineGrid, rect) -> np.ndarray:
    """Load vector of a unit rectangle indicator (3-point Gauss quadrature)."""
    x0, x1, y0, y1 = rect
    p = grid.nodes[grid.triangles]
    gauss = (3.0 * p + p.sum(axis=1, keepdims=True)) / 6.0
    inside = (
        (gauss[..., 0] >= x0) & (gauss[..., 0] <= x1)
        & (gauss[..., 1] >= y0) & (gauss[..., 1] <= y1)
    ).astype(np.float64)
    contrib = (inside @ _GAUSS_BASIS) * (triangle_areas(grid) / 3.0)[:, None]
    load = np.zeros(grid.node_count)
    np.add.at(load, grid.triangles.ravel(), contrib.ravel())
    return load


class BlockSourceLoad:
    """Fast load evaluation for a block source on a fixed grid.

    Per-rectangle indicator loads are assembled once; a load at time t is
    their combination with the block amplitudes.  ``reduced`` additionally
    caches the restriction of each indicator load onto the two bases.
    """

    def __init__(self, spec: SourceSpec, grid: FineGrid, spaces=None):
        self.spec = spec
        self.grid = grid
        self.block_loads = np.stack(
            [rectangle_indicator_load(grid, b.rect) for b in spec.blocks]
        )
        self._reduced = None
        if spaces is not None:
            self._reduced = (
                self.block_loads @ spaces.basis_implicit,
                self.block_loads @ spaces.basis_explicit,
            )

    def amplitudes(self, t: float) -> np.ndarray:
        return np.array(
            [b.amplitude(self.spec.w, t, self.spec.final_time) for b in self.spec.blocks]
        )

    def __call__(self, t: float) -> np.ndarray:
        return self.amplitudes(t) @ self.block_loads

    def reduced(self, t: float):
        if self._reduced is None:
            raise ValueError("constructed without spaces; reduced loads unavailable")
        amps = self.amplitudes(t)
        return amps @ self._reduced[0], amps @ self._reduced[1]

    def diff_norm(self, other: "BlockSourceLoad", t: float) -> float:
        """Continuous L2 norm of the difference of two same-shape sources."""
        amps = self.amplitudes(t) - other.amplitudes(t)
        areas = np.array(
            [(r[1] - r[0]) * (r[3] - r[2]) for r in
             (b.rect for b in self.spec.blocks)]
        )
        return float(np.sqrt(np.sum(amps**2 * areas)))


def discretize_source(spec: SourceSpec, grid: FineGrid, t: float) -> np.ndarray:
    """P1 load vector of the source at time t."""
    return BlockSourceLoad(spec, grid)(t)


def default_initial_condition(grid: FineGrid, amplitude: float = 1.0) -> np.ndarray:
    """Smooth dome 16*x(1-x)*y(1-y), scaled; zero trace, positive mean."""
    x, y = grid.nodes[:, 0], grid.nodes[:, 1]
    return amplitude * 16.0 * x * (1.0 - x) * y * (1.0 - y)
