"""Relative error series between learned, computed, and reference runs.

All norms are continuous L2 norms evaluated through the fine mass matrix
after lifting coefficient trajectories to fine node vectors.  Percentages
follow the four benchmark definitions: learned-vs-reference, computed-vs-
reference, learned-vs-computed on the implicit component, and learned-vs-
computed on the full state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ErrorSeries:
    """Per-step percentages for levels 2..N plus time averages.

    Steps with a vanishing denominator are NaN and flagged in ``defined``.
    """

    steps: np.ndarray
    times: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    e4: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(np.vstack([self.e1, self.e2, self.e3, self.e4])).all(axis=0)

    @property
    def avg_e3(self) -> float:
        return float(np.nanmean(self.e3))

    @property
    def avg_e4(self) -> float:
        return float(np.nanmean(self.e4))

    @property
    def avg_e1(self) -> float:
        return float(np.nanmean(self.e1))

    @property
    def avg_e2(self) -> float:
        return float(np.nanmean(self.e2))


def _mass_norms(mass, vectors: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(np.einsum("nd,nd->n", vectors, (mass @ vectors.T).T), 0.0))


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    ok = den > 0.0
    out[ok] = 100.0 * num[ok] / den[ok]
    return out


def compute_errors(learned, computed, reference, spaces, mass) -> ErrorSeries:
    """Error percentages of one test sample for levels 2..N.

    Parameters
    ----------
    learned, computed : Trajectory
        Split-space runs (predicted and fully computed).
    reference : Trajectory
        Fine-grid run; its states are node vectors.
    """
    nsteps = learned.nsteps
    if computed.nsteps != nsteps or reference.nsteps != nsteps:
        raise ValueError("trajectories disagree on the step count")
    steps = np.arange(2, nsteps + 1)
    r1, r2 = spaces.basis_implicit, spaces.basis_explicit

    learned_1 = learned.c1[2:] @ r1.T
    computed_1 = computed.c1[2:] @ r1.T
    learned_full = learned_1 + learned.c2[2:] @ r2.T
    computed_full = computed_1 + computed.c2[2:] @ r2.T
    reference_full = reference.c1[2:]

    ref_norm = _mass_norms(mass, reference_full)
    comp_norm = _mass_norms(mass, computed_full)
    comp1_norm = _mass_norms(mass, computed_1)
    return ErrorSeries(
        steps=steps,
        times=steps * learned.dt,
        e1=_ratio(_mass_norms(mass, learned_full - reference_full), ref_norm),
        e2=_ratio(_mass_norms(mass, computed_full - reference_full), ref_norm),
        e3=_ratio(_mass_norms(mass, learned_1 - computed_1), comp1_norm),
        e4=_ratio(_mass_norms(mass, learned_full - computed_full), comp_norm),
    )


def average_series(series_list) -> ErrorSeries:
    """Pointwise mean over samples of each error curve (NaN-aware)."""
    series_list = list(series_list)
    if not series_list:
        raise ValueError("nothing to average")
    first = series_list[0]
    stack = lambda attr: np.nanmean(
        np.vstack([getattr(s, attr) for s in series_list]), axis=0
    )
    return ErrorSeries(
        steps=first.steps,
        times=first.times,
        e1=stack("e1"),
        e2=stack("e2"),
        e3=stack("e3"),
        e4=stack("e4"),
    )


def write_errors_csv(series: ErrorSeries, path) -> None:
    """Emit the `step,t,e1,e2,e3,e4` table, one row per level 2..N."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "e1", "e2", "e3", "e4"])
        for i, step in enumerate(series.steps):
            writer.writerow(
                [
                    int(step),
                    f"{series.times[i]:.12g}",
                    f"{series.e1[i]:.12g}",
                    f"{series.e2[i]:.12g}",
                    f"{series.e3[i]:.12g}",
                    f"{series.e4[i]:.12g}",
                ]
            )


def read_errors_csv(path) -> ErrorSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["step", "t", "e1", "e2", "e3", "e4"]:
            raise ValueError(f"unexpected errors CSV header: {header}")
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows)
    return ErrorSeries(
        steps=data[:, 0].astype(np.int64),
        times=data[:, 1],
        e1=data[:, 2],
        e2=data[:, 3],
        e3=data[:, 4],
        e4=data[:, 5],
    )
