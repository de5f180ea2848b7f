"""Snapshot compression: orthonormal dominant-direction basis via SVD.

Snapshots are the implicit-component coefficient vectors of training runs
from level 2 to N, concatenated run by run (time-major within each run).
The basis holds the leading left singular vectors; they are computed from
the smaller of the two Gram matrices, which is the economical route for the
tall-skinny and short-fat regimes alike.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

POD_MAGIC = b"PEXP"
POD_VERSION = 1


def build_snapshot_matrix(trajectories) -> np.ndarray:
    """Stack implicit coefficients of levels 2..N column-wise, run-major.

    Column order: run 0 levels 2..N, then run 1 levels 2..N, and so on.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("need at least one trajectory")
    nsteps = trajectories[0].nsteps
    dim = trajectories[0].c1.shape[1]
    if nsteps < 2:
        raise ValueError("snapshots start at level 2; runs need at least 2 steps")
    cols = []
    for k, traj in enumerate(trajectories):
        if traj.nsteps != nsteps or traj.c1.shape[1] != dim:
            raise ValueError(
                f"trajectory {k} has shape {traj.c1.shape}, expected ({nsteps + 1}, {dim})"
            )
        cols.append(traj.c1[2:].T)
    return np.hstack(cols)


@dataclass(frozen=True)
class PodBasis:
    """Orthonormal columns spanning the dominant snapshot directions."""

    matrix: np.ndarray            # (dim, retained)
    singular_values: np.ndarray   # all of them, nonincreasing

    @property
    def retained(self) -> int:
        return self.matrix.shape[1]

    def project(self, coeffs: np.ndarray) -> np.ndarray:
        """Reduced coordinates, literally (P'P)^-1 P' u (P'P is identity)."""
        p = self.matrix
        return np.linalg.solve(p.T @ p, p.T @ coeffs)

    def lift(self, reduced: np.ndarray) -> np.ndarray:
        return self.matrix @ reduced


def compute_pod(snapshots: np.ndarray, retain: int | None = None,
                energy_tol: float | None = None) -> PodBasis:
    """Dominant left singular vectors of the snapshot matrix.

    Exactly one of ``retain`` (column count, clamped to the numerical rank
    with a warning) or ``energy_tol`` (keep the fewest columns whose squared
    singular values carry all but this fraction of the total energy) selects
    the size.
    """
    snapshots = np.asarray(snapshots, dtype=np.float64)
    if snapshots.ndim != 2 or snapshots.size == 0:
        raise ValueError("snapshot matrix must be a nonempty 2-d array")
    if not np.any(snapshots):
        raise ValueError("snapshot matrix is identically zero")
    if (retain is None) == (energy_tol is None):
        raise ValueError("pass exactly one of retain / energy_tol")

    rows, cols = snapshots.shape
    if rows <= cols:
        gram = snapshots @ snapshots.T
        vals, vecs = sla.eigh(0.5 * (gram + gram.T))
        order = np.argsort(vals)[::-1]
        energies = np.clip(vals[order], 0.0, None)
        left = vecs[:, order]
    else:
        gram = snapshots.T @ snapshots
        vals, vecs = sla.eigh(0.5 * (gram + gram.T))
        order = np.argsort(vals)[::-1]
        energies = np.clip(vals[order], 0.0, None)
        sigma = np.sqrt(energies)
        keep = sigma > sigma[0] * 1e-14
        left = np.zeros((rows, cols))
        left[:, keep] = (snapshots @ vecs[:, order[keep]]) / sigma[keep]

    sigma = np.sqrt(energies)
    # rank cut at the energy level: the Gram route resolves squared singular
    # values to machine precision relative to the largest one
    rank = int(np.count_nonzero(energies > energies[0] * 1e-13))
    if retain is not None:
        if retain < 1:
            raise ValueError("must retain at least one direction")
        if retain > rank:
            warnings.warn(
                f"requested {retain} directions but the snapshot rank is {rank}; clamping",
                stacklevel=2,
            )
            retain = rank
    else:
        total = float(np.sum(energies))
        cumulative = np.cumsum(energies) / total
        retain = int(np.searchsorted(cumulative, 1.0 - energy_tol) + 1)
        retain = min(max(retain, 1), rank)
    return PodBasis(matrix=left[:, :retain].copy(), singular_values=sigma)


def save_pod(basis: PodBasis, path) -> None:
    with open(path, "wb") as fh:
        fh.write(POD_MAGIC)
        fh.write(struct.pack("<I", POD_VERSION))
        fh.write(struct.pack("<QQ", basis.matrix.shape[0], basis.retained))
        fh.write(np.asfortranarray(basis.matrix, dtype="<f8").tobytes(order="F"))
        fh.write(struct.pack("<Q", basis.singular_values.size))
        fh.write(np.ascontiguousarray(basis.singular_values, dtype="<f8").tobytes())


def load_pod(path) -> PodBasis:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != POD_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {POD_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != POD_VERSION:
            raise ValueError(f"unsupported basis file version {version}")
        rows, retained = struct.unpack("<QQ", fh.read(16))
        matrix = np.frombuffer(fh.read(8 * rows * retained), dtype="<f8").reshape(
            (rows, retained), order="F"
        )
        (count,) = struct.unpack("<Q", fh.read(8))
        sigma = np.frombuffer(fh.read(8 * count), dtype="<f8")
    return PodBasis(matrix=np.array(matrix), singular_values=np.array(sigma))
