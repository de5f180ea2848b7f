"""High-contrast permeability fields on the fine triangulation.

The reference field of the target problem exists only as a picture, so this
module ships a deterministic channel generator (thin high-contrast strips on
a unit background) plus a binary loader/saver with a versioned header.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import FineGrid, triangle_centroids

FIELD_MAGIC = b"PEXF"
FIELD_VERSION = 1

# (x0, x1, y0, y1) strips mimicking a channelized high-contrast medium:
# four horizontal runs, three vertical, none touching the source blocks'
# corners exactly.
DEFAULT_CHANNELS = (
    (0.05, 0.85, 0.12, 0.15),
    (0.15, 0.95, 0.37, 0.40),
    (0.05, 0.70, 0.62, 0.64),
    (0.30, 0.95, 0.84, 0.87),
    (0.22, 0.25, 0.05, 0.55),
    (0.52, 0.54, 0.30, 0.90),
    (0.76, 0.79, 0.10, 0.70),
)


class FieldFormatError(ValueError):
    """Raised for malformed field files or invalid field values."""


@dataclass(frozen=True)
class ScalarCellField:
    """One positive value per fine triangle."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise FieldFormatError("cell field must be a flat array")
        if not np.all(np.isfinite(v)):
            raise FieldFormatError("cell field contains non-finite values")
        if np.any(v <= 0.0):
            raise FieldFormatError("cell field values must be positive")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


def unit_field(grid: FineGrid) -> ScalarCellField:
    return ScalarCellField(np.ones(grid.tri_count))


def generate_channel_field(
    grid: FineGrid,
    background: float = 1.0,
    contrast: float = 1.0e4,
    channels=DEFAULT_CHANNELS,
    seed: int = 0,
) -> ScalarCellField:
    """Channelized field: `background` outside, `background*contrast` inside.

    A triangle belongs to a channel when its centroid lies in the rectangle.
    Pass ``channels=None`` to draw a reproducible random strip set from
    ``seed`` instead of the default fixed one.
    """
    if background <= 0.0 or contrast <= 0.0:
        raise ValueError("background and contrast must be positive")
    if channels is None:
        channels = _random_channels(seed)
    cent = triangle_centroids(grid)
    values = np.full(grid.tri_count, background, dtype=np.float64)
    for x0, x1, y0, y1 in channels:
        if not (0.0 <= x0 <= x1 <= 1.0 and 0.0 <= y0 <= y1 <= 1.0):
            raise ValueError(f"channel rectangle {(x0, x1, y0, y1)} leaves [0,1]^2")
        inside = (
            (cent[:, 0] >= x0) & (cent[:, 0] <= x1)
            & (cent[:, 1] >= y0) & (cent[:, 1] <= y1)
        )
        values[inside] = background * contrast
    return ScalarCellField(values)


def _random_channels(seed: int, count: int = 7):
    rng = np.random.default_rng(seed)
    rects = []
    for k in range(count):
        width = rng.uniform(0.02, 0.04)
        lo = rng.uniform(0.05, 0.55)
        hi = lo + rng.uniform(0.3, 0.42)
        pos = rng.uniform(0.08, 0.9 - width)
        if k % 2 == 0:
            rects.append((lo, min(hi, 0.97), pos, pos + width))
        else:
            rects.append((pos, pos + width, lo, min(hi, 0.97)))
    return tuple(rects)


def save_field(fld: ScalarCellField, path) -> None:
    """Write the little-endian PEXF container (magic, version, count, f64s)."""
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<I", FIELD_VERSION))
        fh.write(struct.pack("<Q", len(fld)))
        fh.write(np.ascontiguousarray(fld.values, dtype="<f8").tobytes())


def load_field(path, expected_count: int | None = None) -> ScalarCellField:
    """Read a PEXF file; optionally enforce the triangle count of a grid."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FIELD_MAGIC:
            raise FieldFormatError(f"bad magic {magic!r}, expected {FIELD_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FIELD_VERSION:
            raise FieldFormatError(f"unsupported field file version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        raw = fh.read()
    if len(raw) != 8 * count:
        raise FieldFormatError(
            f"payload holds {len(raw) // 8} values but header declares {count}"
        )
    if expected_count is not None and count != expected_count:
        raise FieldFormatError(
            f"field has {count} values, grid expects {expected_count}"
        )
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return ScalarCellField(values)
