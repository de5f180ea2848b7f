"""Time integration: fine implicit reference and the split coarse scheme.

The split scheme advances the first coarse component implicitly and the
second explicitly.  With coefficient vectors c1, c2 in the two bases, mass
blocks Mij and stiffness blocks Aij, one step from level n reads

    (M11/dt + A11) c1[n+1] = M11 c1[n]/dt - M12 (c2[n]-c2[n-1])/dt
                             - A12 c2[n] + g1[n]
    M22 c2[n+1] = M22 c2[n] - M21 (c1[n]-c1[n-1])
                  - dt (A21 c1[n+1] + A22 c2[n]) + dt g2[n]

with the source sampled at t^n.  The scheme needs two back levels, so the
first step is a backward Euler solve in the combined space (source at t^1).
For the exponential-coefficient problem the stiffness blocks are assembled
at the previous state once per step (optionally iterated to a fixed point).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .assembly import (
    assemble_mass,
    assemble_nonlinear_stiffness,
    assemble_stiffness,
    restrict,
)

TRAJ_MAGIC = b"PEXT"
TRAJ_VERSION = 1


class PicardError(RuntimeError):
    """Raised when the fixed-point iteration for an implicit step stalls."""


class StepSolveError(RuntimeError):
    """Raised when a linear step system cannot be solved."""


@dataclass(frozen=True)
class Trajectory:
    """States of one run: row n holds the level-n coefficients.

    ``c1``/``c2`` have shape (N+1, dim); fine-grid runs store node values in
    ``c1`` and leave ``c2`` as None.
    """

    dt: float
    c1: np.ndarray
    c2: np.ndarray | None = None

    @property
    def nsteps(self) -> int:
        return self.c1.shape[0] - 1

    def state(self, n: int):
        if self.c2 is None:
            return self.c1[n]
        return self.c1[n], self.c2[n]


def save_trajectory(traj: Trajectory, path) -> None:
    dim2 = 0 if traj.c2 is None else traj.c2.shape[1]
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<I", TRAJ_VERSION))
        fh.write(struct.pack("<QQQ", traj.nsteps, traj.c1.shape[1], dim2))
        fh.write(struct.pack("<d", traj.dt))
        for n in range(traj.nsteps + 1):
            fh.write(np.ascontiguousarray(traj.c1[n], dtype="<f8").tobytes())
            if dim2:
                fh.write(np.ascontiguousarray(traj.c2[n], dtype="<f8").tobytes())


def load_trajectory(path) -> Trajectory:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TRAJ_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {TRAJ_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != TRAJ_VERSION:
            raise ValueError(f"unsupported trajectory file version {version}")
        nsteps, dim1, dim2 = struct.unpack("<QQQ", fh.read(24))
        (dt,) = struct.unpack("<d", fh.read(8))
        c1 = np.empty((nsteps + 1, dim1))
        c2 = np.empty((nsteps + 1, dim2)) if dim2 else None
        for n in range(nsteps + 1):
            c1[n] = np.frombuffer(fh.read(8 * dim1), dtype="<f8")
            if dim2:
                c2[n] = np.frombuffer(fh.read(8 * dim2), dtype="<f8")
    return Trajectory(dt=dt, c1=c1, c2=c2)


# ---------------------------------------------------------------------------
# fine-grid reference
# ---------------------------------------------------------------------------

class FineHeatSolver:
    """Backward Euler on the fine grid, reusable across runs.

    The linear variant factorizes (M/dt + A) once; the exponential-
    coefficient variant iterates matrix reassembly and solve to a relative
    fixed-point tolerance within every step.
    """

    def __init__(self, grid, kappa, dt, nonlinear=False, picard_tol=1e-8, picard_max=50):
        self.grid = grid
        self.kappa = kappa
        self.dt = dt
        self.nonlinear = nonlinear
        self.picard_tol = picard_tol
        self.picard_max = picard_max
        self.mass = assemble_mass(grid)
        self._factor = None
        if not nonlinear:
            system = self.mass / dt + assemble_stiffness(grid, kappa)
            self._factor = spla.splu(system.tocsc())

    def step(self, u: np.ndarray, t_next: float, load) -> np.ndarray:
        rhs_mass = self.mass @ u / self.dt
        g = load(t_next)
        if not self.nonlinear:
            return self._factor.solve(rhs_mass + g)
        current = u
        for _ in range(self.picard_max):
            system = self.mass / self.dt + assemble_nonlinear_stiffness(
                self.grid, self.kappa, current
            )
            new = spla.splu(system.tocsc()).solve(rhs_mass + g)
            delta = np.linalg.norm(new - current)
            current = new
            if delta <= self.picard_tol * max(np.linalg.norm(new), 1.0):
                return current
        raise PicardError(
            f"implicit step at t={t_next:g} did not converge in {self.picard_max} iterations"
        )


def backward_euler_fine(grid, kappa, load, u0, dt, nsteps, nonlinear=False,
                        picard_tol=1e-8, picard_max=50) -> Trajectory:
    """Reference run: implicit steps on all fine dofs, source at t^{n+1}."""
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    solver = FineHeatSolver(grid, kappa, dt, nonlinear, picard_tol, picard_max)
    states = np.empty((nsteps + 1, grid.node_count))
    states[0] = u0
    for n in range(nsteps):
        states[n + 1] = solver.step(states[n], (n + 1) * dt, load)
    return Trajectory(dt=dt, c1=states)


# ---------------------------------------------------------------------------
# split coarse scheme
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedBlocks:
    """Mass and stiffness blocks of the two bases (a21 = a12.T, A symmetric)."""

    m11: np.ndarray
    m12: np.ndarray
    m22: np.ndarray
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray


def reduced_blocks(spaces, stiffness, mass) -> ReducedBlocks:
    r1, r2 = spaces.basis_implicit, spaces.basis_explicit
    return ReducedBlocks(
        m11=restrict(mass, r1),
        m12=r1.T @ (mass @ r2),
        m22=restrict(mass, r2),
        a11=restrict(stiffness, r1),
        a12=r1.T @ (stiffness @ r2),
        a22=restrict(stiffness, r2),
    )


def split_step(blocks: ReducedBlocks, dt, c1n, c2n, c1nm1, c2nm1, g1, g2,
               implicit_factor=None, mass_factor=None):
    """One implicit/explicit update; returns (c1[n+1], c2[n+1])."""
    rhs1 = (
        blocks.m11 @ c1n / dt
        - blocks.m12 @ (c2n - c2nm1) / dt
        - blocks.a12 @ c2n
        + g1
    )
    if implicit_factor is None:
        implicit_factor = sla.cho_factor(blocks.m11 / dt + blocks.a11)
    c1np1 = sla.cho_solve(implicit_factor, rhs1)
    rhs2 = (
        blocks.m22 @ c2n
        - blocks.m12.T @ (c1n - c1nm1)
        - dt * (blocks.a12.T @ c1np1 + blocks.a22 @ c2n)
        + dt * g2
    )
    if mass_factor is None:
        mass_factor = sla.cho_factor(blocks.m22)
    c2np1 = sla.cho_solve(mass_factor, rhs2)
    return c1np1, c2np1


def split_step_residual(blocks: ReducedBlocks, dt, c1n, c2n, c1nm1, c2nm1,
                        c1np1, c2np1, g1, g2):
    """Residuals of both update equations at given consecutive states."""
    res1 = (
        blocks.m11 @ (c1np1 - c1n) / dt
        + blocks.m12 @ (c2n - c2nm1) / dt
        + blocks.a11 @ c1np1
        + blocks.a12 @ c2n
        - g1
    )
    res2 = (
        blocks.m22 @ (c2np1 - c2n) / dt
        + blocks.m12.T @ (c1n - c1nm1) / dt
        + blocks.a12.T @ c1np1
        + blocks.a22 @ c2n
        - g2
    )
    return res1, res2


class SplitStepper:
    """Holds the per-run blocks and factorizations of the split scheme."""

    def __init__(self, spaces, mass, dt, stiffness=None, grid=None, kappa=None,
                 nonlinear=False, picard=False, picard_tol=1e-8, picard_max=50):
        if dt <= 0.0:
            raise ValueError("time step must be positive")
        self.spaces = spaces
        self.dt = dt
        self.nonlinear = nonlinear
        self.picard = picard
        self.picard_tol = picard_tol
        self.picard_max = picard_max
        self.grid = grid
        self.kappa = kappa
        r1, r2 = spaces.basis_implicit, spaces.basis_explicit
        self.m11 = restrict(mass, r1)
        self.m12 = r1.T @ (mass @ r2)
        self.m22 = restrict(mass, r2)
        try:
            self.mass_factor = sla.cho_factor(self.m22)
        except sla.LinAlgError as exc:
            raise StepSolveError("explicit-space Gram matrix is singular") from exc
        if nonlinear:
            if grid is None or kappa is None:
                raise ValueError("nonlinear stepping needs the grid and coefficient field")
            self._blocks = None
            self._implicit_factor = None
        else:
            if stiffness is None:
                raise ValueError("linear stepping needs the assembled stiffness")
            self._blocks = self._make_blocks(stiffness)
            self._implicit_factor = sla.cho_factor(self.m11 / dt + self._blocks.a11)

    def _make_blocks(self, stiffness) -> ReducedBlocks:
        r1, r2 = self.spaces.basis_implicit, self.spaces.basis_explicit
        return ReducedBlocks(
            m11=self.m11,
            m12=self.m12,
            m22=self.m22,
            a11=restrict(stiffness, r1),
            a12=r1.T @ (stiffness @ r2),
            a22=restrict(stiffness, r2),
        )

    def blocks_at(self, c1, c2) -> ReducedBlocks:
        """Stiffness blocks assembled at the lifted state (nonlinear runs)."""
        state = self.spaces.basis_implicit @ c1 + self.spaces.basis_explicit @ c2
        matrix = assemble_nonlinear_stiffness(self.grid, self.kappa, state)
        return self._make_blocks(matrix)

    def step(self, c1n, c2n, c1nm1, c2nm1, g1, g2):
        if not self.nonlinear:
            return split_step(
                self._blocks, self.dt, c1n, c2n, c1nm1, c2nm1, g1, g2,
                implicit_factor=self._implicit_factor, mass_factor=self.mass_factor,
            )
        blocks = self.blocks_at(c1n, c2n)
        c1np1, c2np1 = split_step(
            blocks, self.dt, c1n, c2n, c1nm1, c2nm1, g1, g2,
            mass_factor=self.mass_factor,
        )
        if not self.picard:
            return c1np1, c2np1
        for _ in range(self.picard_max):
            previous = c1np1
            blocks = self.blocks_at(c1np1, c2n)
            c1np1, c2np1 = split_step(
                blocks, self.dt, c1n, c2n, c1nm1, c2nm1, g1, g2,
                mass_factor=self.mass_factor,
            )
            if np.linalg.norm(c1np1 - previous) <= self.picard_tol * max(
                np.linalg.norm(c1np1), 1.0
            ):
                return c1np1, c2np1
        raise PicardError(
            f"split implicit step did not converge in {self.picard_max} iterations"
        )


def project_initial_state(spaces, mass, u0):
    """Mass-orthogonal projection of fine data onto the combined space."""
    combined = spaces.combined()
    gram = restrict(mass, combined)
    try:
        coeff = sla.cho_solve(sla.cho_factor(gram), combined.T @ (mass @ u0))
    except sla.LinAlgError as exc:
        raise StepSolveError("combined-space Gram matrix is singular") from exc
    d1 = spaces.dim_implicit
    return coeff[:d1], coeff[d1:]


class CombinedFirstStep:
    """Backward Euler solve in the combined space, reusable across runs.

    The Gram matrix, its factorization, and (for the linear form) the step
    system factorization are built once; only right-hand sides change from
    sample to sample.
    """

    def __init__(self, spaces, mass, dt, stiffness=None, grid=None, kappa=None,
                 nonlinear=False, picard=False, picard_tol=1e-8, picard_max=50):
        self.spaces = spaces
        self.mass = mass
        self.dt = dt
        self.nonlinear = nonlinear
        self.picard = picard
        self.picard_tol = picard_tol
        self.picard_max = picard_max
        self.grid = grid
        self.kappa = kappa
        self.combined = spaces.combined()
        self.gram = restrict(mass, self.combined)
        try:
            self.gram_factor = sla.cho_factor(self.gram)
        except sla.LinAlgError as exc:
            raise StepSolveError("combined-space Gram matrix is singular") from exc
        self._system_factor = None
        if not nonlinear:
            if stiffness is None:
                raise ValueError("linear first step needs the assembled stiffness")
            self._system_factor = self._factor(stiffness)
        elif grid is None or kappa is None:
            raise ValueError("nonlinear first step needs the grid and coefficient field")

    def _factor(self, matrix):
        system = self.gram / self.dt + restrict(matrix, self.combined)
        try:
            return sla.cho_factor(system)
        except sla.LinAlgError as exc:
            raise StepSolveError("combined-space step system is singular") from exc

    def solve(self, load, u0):
        """Project the initial data and advance one step (source at t^1)."""
        chat0 = sla.cho_solve(self.gram_factor, self.combined.T @ (self.mass @ u0))
        rhs = self.gram @ chat0 / self.dt + self.combined.T @ load(self.dt)
        if not self.nonlinear:
            chat1 = sla.cho_solve(self._system_factor, rhs)
        else:
            state = self.combined @ chat0
            factor = self._factor(
                assemble_nonlinear_stiffness(self.grid, self.kappa, state)
            )
            chat1 = sla.cho_solve(factor, rhs)
            if self.picard:
                for _ in range(self.picard_max):
                    previous = chat1
                    factor = self._factor(
                        assemble_nonlinear_stiffness(
                            self.grid, self.kappa, self.combined @ chat1
                        )
                    )
                    chat1 = sla.cho_solve(factor, rhs)
                    if np.linalg.norm(chat1 - previous) <= self.picard_tol * max(
                        np.linalg.norm(chat1), 1.0
                    ):
                        break
                else:
                    raise PicardError(
                        f"combined first step did not converge in "
                        f"{self.picard_max} iterations"
                    )
        d1 = self.spaces.dim_implicit
        return chat0[:d1], chat0[d1:], chat1[:d1], chat1[d1:]


def first_coarse_step(spaces, mass, load, u0, dt, stiffness=None, grid=None,
                      kappa=None, nonlinear=False, picard=False,
                      picard_tol=1e-8, picard_max=50):
    """Backward Euler step in the combined space; source at t^1.

    Returns (c1_0, c2_0, c1_1, c2_1): the projected initial split and the
    level-1 split.
    """
    solver = CombinedFirstStep(
        spaces, mass, dt, stiffness=stiffness, grid=grid, kappa=kappa,
        nonlinear=nonlinear, picard=picard, picard_tol=picard_tol,
        picard_max=picard_max,
    )
    return solver.solve(load, u0)


def _reduced_load(spaces, load):
    r1t = np.ascontiguousarray(spaces.basis_implicit.T)
    r2t = np.ascontiguousarray(spaces.basis_explicit.T)

    def reducer(t):
        g = load(t)
        return r1t @ g, r2t @ g

    return reducer


def run_partially_explicit(spaces, mass, load, u0, dt, nsteps, *, stiffness=None,
                           grid=None, kappa=None, nonlinear=False, picard=False,
                           picard_tol=1e-8, picard_max=50, dt_max=None,
                           reduced_load=None, stepper=None,
                           first_step=None) -> Trajectory:
    """Full split run: combined implicit first step, then explicit/implicit.

    ``reduced_load`` (t -> (g1, g2)) short-circuits the fine load reduction;
    otherwise ``load`` (t -> fine load vector) is reduced through the bases.
    Prebuilt ``stepper`` / ``first_step`` machinery can be passed in to share
    factorizations across many runs of one configuration.  A warning is
    emitted when dt exceeds a supplied stability bound.
    """
    if nsteps < 1:
        raise ValueError("need at least one step")
    if dt_max is not None and dt > dt_max:
        warnings.warn(
            f"dt={dt:g} exceeds the explicit-step bound dt_max={dt_max:g}",
            stacklevel=2,
        )
    if first_step is None:
        first_step = CombinedFirstStep(
            spaces, mass, dt, stiffness=stiffness, grid=grid, kappa=kappa,
            nonlinear=nonlinear, picard=picard, picard_tol=picard_tol,
            picard_max=picard_max,
        )
    c1_0, c2_0, c1_1, c2_1 = first_step.solve(load, u0)
    c1 = np.empty((nsteps + 1, spaces.dim_implicit))
    c2 = np.empty((nsteps + 1, spaces.dim_explicit))
    c1[0], c2[0], c1[1], c2[1] = c1_0, c2_0, c1_1, c2_1
    if nsteps == 1:
        return Trajectory(dt=dt, c1=c1, c2=c2)

    if stepper is None:
        stepper = SplitStepper(
            spaces, mass, dt, stiffness=stiffness, grid=grid, kappa=kappa,
            nonlinear=nonlinear, picard=picard, picard_tol=picard_tol,
            picard_max=picard_max,
        )
    loads = reduced_load if reduced_load is not None else _reduced_load(spaces, load)
    for n in range(1, nsteps):
        g1, g2 = loads(n * dt)
        c1[n + 1], c2[n + 1] = stepper.step(c1[n], c2[n], c1[n - 1], c2[n - 1], g1, g2)
    return Trajectory(dt=dt, c1=c1, c2=c2)


def run_combined_implicit(spaces, stiffness, mass, load, u0, dt, nsteps,
                          grid=None, kappa=None, nonlinear=False,
                          picard_tol=1e-8, picard_max=50) -> Trajectory:
    """Backward Euler entirely in the combined space (comparison scheme)."""
    combined = spaces.combined()
    gram = restrict(mass, combined)
    gram_factor = sla.cho_factor(gram)
    c1_0, c2_0 = project_initial_state(spaces, mass, u0)
    chat = np.concatenate([c1_0, c2_0])
    d1 = spaces.dim_implicit
    c1 = np.empty((nsteps + 1, d1))
    c2 = np.empty((nsteps + 1, spaces.dim_explicit))
    c1[0], c2[0] = c1_0, c2_0
    factor = None
    if not nonlinear:
        factor = sla.cho_factor(gram / dt + restrict(stiffness, combined))
    for n in range(nsteps):
        rhs = gram @ chat / dt + combined.T @ load((n + 1) * dt)
        if not nonlinear:
            chat = sla.cho_solve(factor, rhs)
        else:
            current = chat
            for _ in range(picard_max):
                matrix = assemble_nonlinear_stiffness(grid, kappa, combined @ current)
                new = sla.cho_solve(
                    sla.cho_factor(gram / dt + restrict(matrix, combined)), rhs
                )
                delta = np.linalg.norm(new - current)
                current = new
                if delta <= picard_tol * max(np.linalg.norm(new), 1.0):
                    break
            else:
                raise PicardError(
                    f"combined implicit step {n + 1} did not converge"
                )
            chat = current
        c1[n + 1], c2[n + 1] = chat[:d1], chat[d1:]
    return Trajectory(dt=dt, c1=c1, c2=c2)


def run_explicit_with_given_implicit(spaces, mass, load, dt, c1_given, start,
                                     *, stiffness=None, grid=None, kappa=None,
                                     nonlinear=False, reduced_load=None,
                                     history_c1=None, stepper=None) -> Trajectory:
    """Complete a run whose implicit component for levels >= 2 is prescribed.

    ``start`` is (c1_0, c2_0, c1_1, c2_1) from the combined first step;
    ``c1_given`` has shape (N-1, dim_implicit) holding levels 2..N.  Only the
    explicit update is solved.  The implicit history entering it (the
    back-difference term and, for the exponential coefficient, the state the
    stiffness is assembled at) defaults to the prescribed component itself;
    pass ``history_c1`` with shape (N+1, dim_implicit) to source it from a
    separately computed run instead.
    """
    c1_0, c2_0, c1_1, c2_1 = start
    nsteps = c1_given.shape[0] + 1
    c1 = np.empty((nsteps + 1, spaces.dim_implicit))
    c2 = np.empty((nsteps + 1, spaces.dim_explicit))
    c1[0], c2[0], c1[1], c2[1] = c1_0, c2_0, c1_1, c2_1
    c1[2:] = c1_given
    hist = c1 if history_c1 is None else history_c1

    if stepper is None:
        stepper = SplitStepper(
            spaces, mass, dt, stiffness=stiffness, grid=grid, kappa=kappa,
            nonlinear=nonlinear,
        )
    loads = reduced_load if reduced_load is not None else _reduced_load(spaces, load)
    for n in range(1, nsteps):
        _, g2 = loads(n * dt)
        blocks = stepper._blocks if not nonlinear else stepper.blocks_at(hist[n], c2[n])
        rhs2 = (
            blocks.m22 @ c2[n]
            - blocks.m12.T @ (hist[n] - hist[n - 1])
            - dt * (blocks.a12.T @ c1[n + 1] + blocks.a22 @ c2[n])
            + dt * g2
        )
        c2[n + 1] = sla.cho_solve(stepper.mass_factor, rhs2)
    return Trajectory(dt=dt, c1=c1, c2=c2)
