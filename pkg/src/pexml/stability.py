"""Subspace-angle constant, explicit-step time bound, and difference bounds.

The two coarse spaces form a direct sum whose stability is quantified by the
strengthened Cauchy-Schwarz constant gamma (the largest mass-inner-product
cosine between the spaces) and by the largest energy-to-mass Rayleigh
quotient over the explicitly stepped space.  The admissible explicit step is
dt <= (1 - gamma) / sup_ratio.  ``verify_continuity_bound`` checks the
telescoped source-difference estimates that this bound guarantees for two
runs with different source parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .assembly import restrict


class StabilityError(RuntimeError):
    """Raised when a Gram matrix is not positive definite."""


def _chol(gram: np.ndarray, label: str) -> np.ndarray:
    try:
        return sla.cholesky(gram, lower=True)
    except sla.LinAlgError as exc:
        raise StabilityError(f"{label} Gram matrix is not positive definite") from exc


def estimate_gamma(mass, basis_implicit: np.ndarray, basis_explicit: np.ndarray) -> float:
    """Largest mass-cosine between the spans of the two coefficient bases.

    Computed as the largest singular value of L1^-1 (R1' M R2) L2^-T with
    Cholesky factors of the two Gram matrices.
    """
    m11 = restrict(mass, basis_implicit)
    m22 = restrict(mass, basis_explicit)
    m12 = basis_implicit.T @ (mass @ basis_explicit)
    l1 = _chol(m11, "implicit-space")
    l2 = _chol(m22, "explicit-space")
    y = sla.solve_triangular(l1, m12, lower=True)
    z = sla.solve_triangular(l2, y.T, lower=True).T
    gamma = float(sla.svdvals(z)[0]) if min(z.shape) else 0.0
    if gamma == 0.0:
        warnings.warn(
            "cross Gram matrix vanished: the spaces are orthogonal (degenerate split)",
            stacklevel=2,
        )
    return gamma


def cfl_bound(stiffness, mass, basis_explicit: np.ndarray, gamma: float) -> float:
    """Largest admissible explicit step (1-gamma)/sup(energy/mass ratio)."""
    a22 = restrict(stiffness, basis_explicit)
    m22 = restrict(mass, basis_explicit)
    _chol(m22, "explicit-space")
    sup_ratio = float(sla.eigh(a22, m22, eigvals_only=True)[-1])
    if sup_ratio <= 0.0:
        raise StabilityError("explicit space has nonpositive energy ratio")
    return (1.0 - gamma) / sup_ratio


@dataclass(frozen=True)
class StabilityReport:
    gamma: float
    sup_ratio: float
    dt_max: float
    dt_used: float

    @property
    def satisfied(self) -> bool:
        return self.dt_used <= self.dt_max

    def as_text(self) -> str:
        lines = [
            f"gamma={self.gamma:.12g}",
            f"sup_ratio={self.sup_ratio:.12g}",
            f"dt_max={self.dt_max:.12g}",
            f"dt_used={self.dt_used:.12g}",
            f"satisfied={str(self.satisfied).lower()}",
        ]
        return "\n".join(lines) + "\n"


def stability_report(stiffness, mass, spaces, dt_used: float, safety: float = 1.0) -> StabilityReport:
    """Gamma, Rayleigh supremum and step bound for assembled spaces.

    ``safety`` < 1 shrinks the reported bound (used for nonlinear runs where
    the linear-form analysis is only a guide).
    """
    gamma = estimate_gamma(mass, spaces.basis_implicit, spaces.basis_explicit)
    dt_max = cfl_bound(stiffness, mass, spaces.basis_explicit, gamma) * safety
    sup_ratio = (1.0 - gamma) * safety / dt_max
    return StabilityReport(gamma=gamma, sup_ratio=sup_ratio, dt_max=dt_max, dt_used=dt_used)


@dataclass(frozen=True)
class ContinuityCheck:
    """Outcome of the source-difference bounds for one pair of runs."""

    holds: bool
    l2_lhs: np.ndarray          # per step: sum of squared component differences
    l2_rhs: float
    energy_lhs: np.ndarray      # per step: squared energy norm of the difference
    energy_rhs: float

    @property
    def l2_margin(self) -> float:
        return float(self.l2_rhs - self.l2_lhs.max(initial=0.0))

    @property
    def energy_margin(self) -> float:
        return float(self.energy_rhs - self.energy_lhs.max(initial=0.0))


def verify_continuity_bound(
    traj_a,
    traj_b,
    spaces,
    stiffness,
    mass,
    gamma: float,
    source_diff_norm,
) -> ContinuityCheck:
    """Check the telescoped difference bounds for two same-config runs.

    Parameters
    ----------
    traj_a, traj_b : Trajectory
        Split-space runs sharing grid, spaces, dt and step count.
    source_diff_norm : callable
        t -> continuous L2 norm of the source difference at time t.

    The mass-norm bound tested at every step n >= 1 is

        sum_i |r_i^{n+1}|^2 <= 2*T*dt/(1-gamma) * d1^2
                               + 4*gamma*T^2/(1-gamma) * max_k d_k^2

    and the energy-norm bound is

        |r^{n+1}|_a^2 <= gamma*dt/(1-gamma) * d1^2
                         + 2*gamma^2*T/(1-gamma) * max_k d_k^2

    with d_k the source-difference norm at step k and T the final time.
    """
    if traj_a.c1.shape != traj_b.c1.shape or traj_a.dt != traj_b.dt:
        raise ValueError("trajectories do not share a configuration")
    dt = traj_a.dt
    nsteps = traj_a.c1.shape[0] - 1
    total_time = nsteps * dt
    d = np.array([source_diff_norm(k * dt) for k in range(1, nsteps)])
    d1 = d[0] if d.size else source_diff_norm(dt)
    dmax2 = float(np.max(d**2)) if d.size else d1**2

    r1 = (traj_a.c1 - traj_b.c1) @ spaces.basis_implicit.T
    r2 = (traj_a.c2 - traj_b.c2) @ spaces.basis_explicit.T
    r = r1 + r2

    steps = np.arange(2, nsteps + 1)
    l2_lhs = np.array(
        [r1[n] @ (mass @ r1[n]) + r2[n] @ (mass @ r2[n]) for n in steps]
    )
    energy_lhs = np.array([r[n] @ (stiffness @ r[n]) for n in steps])
    l2_rhs = (
        2.0 * total_time * dt / (1.0 - gamma) * d1**2
        + 4.0 * gamma * total_time**2 / (1.0 - gamma) * dmax2
    )
    energy_rhs = (
        gamma * dt / (1.0 - gamma) * d1**2
        + 2.0 * gamma**2 * total_time / (1.0 - gamma) * dmax2
    )
    holds = bool(np.all(l2_lhs <= l2_rhs) and np.all(energy_lhs <= energy_rhs))
    return ContinuityCheck(
        holds=holds,
        l2_lhs=l2_lhs,
        l2_rhs=l2_rhs,
        energy_lhs=energy_lhs,
        energy_rhs=energy_rhs,
    )
