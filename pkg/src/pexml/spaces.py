"""Construction of the two coarse spaces used by the split time stepper.

The first space collects constraint-energy-minimizing columns: per coarse
block, dominant local generalized eigenfunctions (stiffness against a
weighted mass) act as moment constraints, and each column minimizes energy
over the oversampled patch subject to matching those moments.  The second
space complements it: per block, eigenfunctions of the stiffness against the
plain mass restricted to the moment-free subspace, extended to the patch by
a doubly constrained energy minimization.

All per-block systems are small; they are solved by sparse LU on the patch
(one factorization per block, reused for all of its columns).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble_mass, assemble_stiffness
from .field import ScalarCellField
from .grid import CoarseDecomposition, pu_gradient_sum

SPACES_MAGIC = b"PEXS"
SPACES_VERSION = 1

KAPPA_TILDE_RULES = ("h2", "pu_gradient")


class SpaceConstructionError(RuntimeError):
    """Raised when a per-block eigenproblem or saddle system cannot be solved."""


def kappa_tilde(dec: CoarseDecomposition, kappa: ScalarCellField, rule: str = "h2") -> ScalarCellField:
    """Weight for the auxiliary mass form: kappa/H^2 or kappa * sum|grad chi|^2."""
    if rule == "h2":
        return ScalarCellField(kappa.values / dec.H**2)
    if rule == "pu_gradient":
        return ScalarCellField(kappa.values * pu_gradient_sum(dec))
    raise ValueError(f"unknown kappa_tilde rule {rule!r}, options: {KAPPA_TILDE_RULES}")


@dataclass(frozen=True)
class FemOperators:
    """Global fine-grid matrices shared by space construction and stepping."""

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    weighted_mass: sp.csr_matrix


def build_operators(
    dec: CoarseDecomposition, kappa: ScalarCellField, rule: str = "h2"
) -> FemOperators:
    grid = dec.grid
    return FemOperators(
        stiffness=assemble_stiffness(grid, kappa),
        mass=assemble_mass(grid),
        weighted_mass=assemble_mass(grid, kappa_tilde(dec, kappa, rule)),
    )


@dataclass(frozen=True)
class AuxSpace:
    """Per-block dominant eigenpairs, weighted-mass orthonormal, zero-extended."""

    eigenvalues: list[np.ndarray]
    vectors: sp.csc_matrix          # node_count x total columns
    counts: np.ndarray
    offsets: np.ndarray             # counts cumsum with leading 0

    def block_columns(self, element: int) -> np.ndarray:
        return np.arange(self.offsets[element], self.offsets[element + 1])


def solve_aux_eigen(dec, ops, element: int, count: int):
    """Smallest generalized eigenpairs of the block's interior problem.

    Solves stiffness * v = eigenvalue * weighted_mass * v on the zero-trace
    dofs of the block; eigenvectors come back weighted-mass orthonormal.
    """
    block = dec.blocks[element]
    dofs = block.interior
    if count < 1:
        raise SpaceConstructionError(f"element {element}: need at least one eigenpair")
    if count > dofs.size:
        raise SpaceConstructionError(
            f"element {element}: requested {count} eigenpairs, only {dofs.size} dofs"
        )
    a_loc = ops.stiffness[np.ix_(dofs, dofs)].toarray()
    s_loc = ops.weighted_mass[np.ix_(dofs, dofs)].toarray()
    try:
        vals, vecs = sla.eigh(a_loc, s_loc)
    except sla.LinAlgError as exc:
        raise SpaceConstructionError(f"element {element}: eigensolve failed: {exc}") from exc
    return vals[:count], vecs[:, :count]


def build_aux_space(dec, ops, counts) -> AuxSpace:
    """Solve all block eigenproblems and assemble the global column matrix."""
    counts = np.broadcast_to(np.asarray(counts, dtype=np.int64), (dec.element_count,))
    eigenvalues = []
    cols_i, cols_j, cols_v = [], [], []
    offsets = np.concatenate([[0], np.cumsum(counts)])
    for e in range(dec.element_count):
        vals, vecs = solve_aux_eigen(dec, ops, e, int(counts[e]))
        eigenvalues.append(vals)
        dofs = dec.blocks[e].interior
        for j in range(vecs.shape[1]):
            cols_i.append(dofs)
            cols_j.append(np.full(dofs.size, offsets[e] + j))
            cols_v.append(vecs[:, j])
    vectors = sp.csc_matrix(
        (np.concatenate(cols_v), (np.concatenate(cols_i), np.concatenate(cols_j))),
        shape=(dec.grid.node_count, int(offsets[-1])),
    )
    return AuxSpace(
        eigenvalues=eigenvalues,
        vectors=vectors,
        counts=np.asarray(counts),
        offsets=offsets,
    )


class MomentProjection:
    """Weighted-mass-orthogonal projection onto the auxiliary columns."""

    def __init__(self, aux: AuxSpace, weighted_mass: sp.spmatrix):
        self.aux = aux
        self._weighted_columns = (weighted_mass @ aux.vectors).tocsc()

    def moments(self, u: np.ndarray) -> np.ndarray:
        return self._weighted_columns.T @ u

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.aux.vectors @ self.moments(u)


def build_projection(aux: AuxSpace, weighted_mass: sp.spmatrix) -> MomentProjection:
    return MomentProjection(aux, weighted_mass)


@dataclass(frozen=True)
class SecondAuxSpace:
    """Per-block moment-free eigenpairs, plain-mass orthonormal."""

    eigenvalues: list[np.ndarray]
    vectors: sp.csc_matrix
    counts: np.ndarray
    offsets: np.ndarray

    def block_columns(self, element: int) -> np.ndarray:
        return np.arange(self.offsets[element], self.offsets[element + 1])


def solve_second_eigen(dec, ops, aux: AuxSpace, element: int, count: int):
    """Smallest eigenpairs of stiffness vs plain mass on the moment-free dofs.

    The moment-free subspace is realized by an orthonormal null-space basis
    of the block's auxiliary moment functionals.
    """
    block = dec.blocks[element]
    dofs = block.interior
    own = aux.block_columns(element)
    moment_rows = (ops.weighted_mass @ aux.vectors[:, own]).toarray()[dofs].T
    null_basis = sla.null_space(moment_rows)
    if count < 1 or count > null_basis.shape[1]:
        raise SpaceConstructionError(
            f"element {element}: requested {count} constrained eigenpairs, "
            f"moment-free space has dimension {null_basis.shape[1]}"
        )
    a_loc = ops.stiffness[np.ix_(dofs, dofs)].toarray()
    m_loc = ops.mass[np.ix_(dofs, dofs)].toarray()
    a_red = null_basis.T @ a_loc @ null_basis
    m_red = null_basis.T @ m_loc @ null_basis
    try:
        vals, vecs = sla.eigh(0.5 * (a_red + a_red.T), 0.5 * (m_red + m_red.T))
    except sla.LinAlgError as exc:
        raise SpaceConstructionError(f"element {element}: eigensolve failed: {exc}") from exc
    return vals[:count], null_basis @ vecs[:, :count]


def build_second_aux_space(dec, ops, aux: AuxSpace, counts) -> SecondAuxSpace:
    counts = np.broadcast_to(np.asarray(counts, dtype=np.int64), (dec.element_count,))
    eigenvalues = []
    cols_i, cols_j, cols_v = [], [], []
    offsets = np.concatenate([[0], np.cumsum(counts)])
    for e in range(dec.element_count):
        vals, vecs = solve_second_eigen(dec, ops, aux, e, int(counts[e]))
        eigenvalues.append(vals)
        dofs = dec.blocks[e].interior
        for j in range(vecs.shape[1]):
            cols_i.append(dofs)
            cols_j.append(np.full(dofs.size, offsets[e] + j))
            cols_v.append(vecs[:, j])
    vectors = sp.csc_matrix(
        (np.concatenate(cols_v), (np.concatenate(cols_i), np.concatenate(cols_j))),
        shape=(dec.grid.node_count, int(offsets[-1])),
    )
    return SecondAuxSpace(
        eigenvalues=eigenvalues,
        vectors=vectors,
        counts=np.asarray(counts),
        offsets=offsets,
    )


def _patch_columns(space, elements: np.ndarray) -> np.ndarray:
    return np.concatenate([space.block_columns(e) for e in elements])


def _saddle_solve(kkt: sp.spmatrix, element: int):
    try:
        lu = spla.splu(kkt.tocsc())
    except RuntimeError as exc:
        raise SpaceConstructionError(
            f"element {element}: singular saddle-point system: {exc}"
        ) from exc
    return lu


def solve_cem_basis(dec, ops, aux: AuxSpace, element: int) -> np.ndarray:
    """Energy-minimizing columns of one block, extended by zero off the patch.

    For every auxiliary eigenfunction of the block, minimizes the stiffness
    energy over the zero-trace dofs of the oversampled patch subject to
    matching the eigenfunction's weighted-mass moments against every
    auxiliary column living on the patch.  Returns (node_count, L_e).
    """
    block = dec.blocks[element]
    dofs = block.over_interior
    patch_cols = _patch_columns(aux, block.over_elements)
    weighted = (ops.weighted_mass @ aux.vectors[:, patch_cols]).tocsc()
    constraints = weighted[dofs, :].T.tocsr()
    a_dd = ops.stiffness[np.ix_(dofs, dofs)]
    n_d = dofs.size
    kkt = sp.bmat([[a_dd, constraints.T], [constraints, None]], format="csc")
    lu = _saddle_solve(kkt, element)
    own = aux.block_columns(element)
    out = np.zeros((dec.grid.node_count, own.size))
    for k, col in enumerate(own):
        target = aux.vectors[:, col].toarray().ravel()
        rhs = np.concatenate([np.zeros(n_d), weighted.T @ target])
        sol = lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SpaceConstructionError(
                f"element {element}: saddle-point solve returned non-finite values"
            )
        out[dofs, k] = sol[:n_d]
    return out


def solve_second_basis(
    dec, ops, aux: AuxSpace, aux2: SecondAuxSpace, element: int
) -> np.ndarray:
    """Complement-space columns of one block (doubly constrained minimization).

    Columns are stiffness-energy minimizers on the patch whose weighted-mass
    moments against every auxiliary column vanish and whose plain-mass
    moments reproduce those of the block's moment-free eigenfunction.
    """
    block = dec.blocks[element]
    dofs = block.over_interior
    patch_aux = _patch_columns(aux, block.over_elements)
    patch_aux2 = _patch_columns(aux2, block.over_elements)
    weighted = (ops.weighted_mass @ aux.vectors[:, patch_aux]).tocsc()
    plain = (ops.mass @ aux2.vectors[:, patch_aux2]).tocsc()
    c1 = weighted[dofs, :].T.tocsr()
    c2 = plain[dofs, :].T.tocsr()
    a_dd = ops.stiffness[np.ix_(dofs, dofs)]
    n_d = dofs.size
    kkt = sp.bmat(
        [[a_dd, c1.T, c2.T], [c1, None, None], [c2, None, None]], format="csc"
    )
    lu = _saddle_solve(kkt, element)
    own = aux2.block_columns(element)
    out = np.zeros((dec.grid.node_count, own.size))
    for k, col in enumerate(own):
        target = aux2.vectors[:, col].toarray().ravel()
        rhs = np.concatenate(
            [np.zeros(n_d), np.zeros(patch_aux.size), plain.T @ target]
        )
        sol = lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SpaceConstructionError(
                f"element {element}: saddle-point solve returned non-finite values"
            )
        out[dofs, k] = sol[:n_d]
    return out


@dataclass(frozen=True)
class MultiscaleSpaces:
    """Coefficient matrices of the implicitly and explicitly stepped spaces."""

    basis_implicit: np.ndarray      # (node_count, dim_implicit)
    basis_explicit: np.ndarray      # (node_count, dim_explicit)
    col_element_implicit: np.ndarray
    col_element_explicit: np.ndarray
    support_implicit: list[np.ndarray] = field(repr=False)
    support_explicit: list[np.ndarray] = field(repr=False)

    @property
    def node_count(self) -> int:
        return self.basis_implicit.shape[0]

    @property
    def dim_implicit(self) -> int:
        return self.basis_implicit.shape[1]

    @property
    def dim_explicit(self) -> int:
        return self.basis_explicit.shape[1]

    def combined(self) -> np.ndarray:
        return np.hstack([self.basis_implicit, self.basis_explicit])


@dataclass(frozen=True)
class SpacesConfig:
    aux_per_element: int = 3
    second_per_element: int = 1
    kappa_rule: str = "h2"


def assemble_spaces(
    dec: CoarseDecomposition,
    kappa: ScalarCellField,
    config: SpacesConfig = SpacesConfig(),
    ops: FemOperators | None = None,
) -> MultiscaleSpaces:
    """Build both coarse spaces for a decomposition and coefficient field."""
    if config.aux_per_element < 1:
        raise SpaceConstructionError("need at least one auxiliary eigenpair per element")
    if config.second_per_element < 1:
        raise SpaceConstructionError("need at least one complement eigenpair per element")
    if ops is None:
        ops = build_operators(dec, kappa, config.kappa_rule)
    aux = build_aux_space(dec, ops, config.aux_per_element)
    aux2 = build_second_aux_space(dec, ops, aux, config.second_per_element)

    imp_cols, exp_cols = [], []
    imp_elem, exp_elem = [], []
    imp_support, exp_support = [], []
    for e in range(dec.element_count):
        block = dec.blocks[e]
        cem = solve_cem_basis(dec, ops, aux, e)
        imp_cols.append(cem)
        imp_elem.extend([e] * cem.shape[1])
        imp_support.extend([block.over_interior] * cem.shape[1])
        comp = solve_second_basis(dec, ops, aux, aux2, e)
        exp_cols.append(comp)
        exp_elem.extend([e] * comp.shape[1])
        exp_support.extend([block.over_interior] * comp.shape[1])
    return MultiscaleSpaces(
        basis_implicit=_normalize_columns(np.hstack(imp_cols), ops.mass),
        basis_explicit=_normalize_columns(np.hstack(exp_cols), ops.mass),
        col_element_implicit=np.asarray(imp_elem, dtype=np.int64),
        col_element_explicit=np.asarray(exp_elem, dtype=np.int64),
        support_implicit=imp_support,
        support_explicit=exp_support,
    )


def _normalize_columns(basis: np.ndarray, mass: sp.spmatrix) -> np.ndarray:
    """Scale columns to unit mass norm.

    A per-column scaling changes neither the spanned space nor the scheme's
    solutions, but it keeps coefficient vectors commensurate with function
    norms, which conditioning of the snapshot compression relies on (the raw
    energy-minimizing columns inherit the contrast-dependent scale of the
    weighted-mass orthonormalization).
    """
    norms = np.sqrt(np.einsum("nc,nc->c", basis, mass @ basis))
    if np.any(norms <= 0.0):
        raise SpaceConstructionError("produced a zero basis column")
    return basis / norms


def save_spaces(spaces: MultiscaleSpaces, path) -> None:
    """Write the PEXS container: header, both column matrices, column metadata."""
    with open(path, "wb") as fh:
        fh.write(SPACES_MAGIC)
        fh.write(struct.pack("<I", SPACES_VERSION))
        fh.write(
            struct.pack(
                "<QQQ", spaces.node_count, spaces.dim_implicit, spaces.dim_explicit
            )
        )
        fh.write(np.asfortranarray(spaces.basis_implicit, dtype="<f8").tobytes(order="F"))
        fh.write(np.asfortranarray(spaces.basis_explicit, dtype="<f8").tobytes(order="F"))
        for elems, supports in (
            (spaces.col_element_implicit, spaces.support_implicit),
            (spaces.col_element_explicit, spaces.support_explicit),
        ):
            for e, supp in zip(elems, supports):
                fh.write(struct.pack("<IQ", int(e), supp.size))
                fh.write(np.ascontiguousarray(supp, dtype="<u4").tobytes())


def load_spaces(path) -> MultiscaleSpaces:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SPACES_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {SPACES_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != SPACES_VERSION:
            raise ValueError(f"unsupported spaces file version {version}")
        nodes, dim1, dim2 = struct.unpack("<QQQ", fh.read(24))
        r1 = np.frombuffer(fh.read(8 * nodes * dim1), dtype="<f8").reshape(
            (nodes, dim1), order="F"
        )
        r2 = np.frombuffer(fh.read(8 * nodes * dim2), dtype="<f8").reshape(
            (nodes, dim2), order="F"
        )
        metas = []
        for dim in (dim1, dim2):
            elems = np.empty(dim, dtype=np.int64)
            supports = []
            for c in range(dim):
                e, size = struct.unpack("<IQ", fh.read(12))
                elems[c] = e
                supports.append(
                    np.frombuffer(fh.read(4 * size), dtype="<u4").astype(np.int64)
                )
            metas.append((elems, supports))
    return MultiscaleSpaces(
        basis_implicit=np.array(r1),
        basis_explicit=np.array(r2),
        col_element_implicit=metas[0][0],
        col_element_explicit=metas[1][0],
        support_implicit=metas[0][1],
        support_explicit=metas[1][1],
    )
