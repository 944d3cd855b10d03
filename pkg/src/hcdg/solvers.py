"""
Static condensation driven by the switch function, block preconditioners
and stationary iteration.

Dependent nodes are those lying on no face where their element's switch is
+1.  Two dependent nodes of different elements never couple through the
LDG Laplacian, so the dependent block is block diagonal and can be
eliminated element by element.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import (Diverged, PartitionNotBlockDiagonal, SingularBlock, SingularDependentBlock,
                     SystemTooLarge)
from .layout import Discretization
from .operators import SPECTRUM_MAX_NODES, SparseOperator, Symmetry, finalize

SINGULAR_RTOL = 1e-13
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True, eq=False)
class Partition:
    independent: np.ndarray
    dependent: np.ndarray
    block_index: np.ndarray  # element ranges of the full numbering
    discretization: Discretization | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.independent) + len(self.dependent)

    def element_of(self, nodes):
        return np.searchsorted(self.block_index, nodes, side="right") - 1


def build_partition(disc: Discretization) -> Partition:
    """Split nodes into independent (on an S=+1 face) and dependent ones."""
    mesh, s = disc.mesh, disc.switch
    indep = []
    for e, lay in enumerate(disc.layouts):
        on_plus = np.zeros(lay.n_nodes, dtype=bool)
        if s is not None:
            for lf in range(2 * mesh.dim):
                if s.value(mesh, e, lf) > 0:
                    on_plus[lay.face_nodes[lf]] = True
        indep.append(disc.numbering.offsets[e] + np.flatnonzero(on_plus))
    independent = np.concatenate(indep).astype(int)
    dependent = np.setdiff1d(np.arange(disc.n_nodes), independent)
    return Partition(independent, dependent, np.asarray(disc.numbering.offsets), disc)


def _factor(block, on_singular):
    with warnings.catch_warnings():
        # singular blocks are reported through on_singular instead
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(block, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.size and diag.min() <= SINGULAR_RTOL * max(diag.max(), 1e-300):
        on_singular()
    return lu, piv


def _ranges(owner, n_blocks):
    """Contiguous ranges of an element-sorted owner array."""
    bounds = np.searchsorted(owner, np.arange(n_blocks + 1))
    return [(int(bounds[e]), int(bounds[e + 1])) for e in range(n_blocks)]


def _as_csr(a):
    return (a.matrix if isinstance(a, SparseOperator) else sp.csr_matrix(a)).tocsr()


@dataclass(eq=False)
class CondensedSystem:
    """Schur complement ``A_II - A_ID A_DD^{-1} A_DI`` with its factors."""

    operator: SparseOperator
    partition: Partition
    a_id: sp.csr_matrix
    a_di: sp.csr_matrix
    factors: list  # per element: (start, stop, lu, piv) into the dependent ordering

    def _solve_dd(self, rhs):
        out = np.zeros_like(rhs, dtype=float)
        for start, stop, lu, piv in self.factors:
            if stop > start:
                out[start:stop] = scipy.linalg.lu_solve((lu, piv), rhs[start:stop], check_finite=False)
        return out

    def reduce_rhs(self, b):
        b = np.asarray(b, dtype=float)
        part = self.partition
        b_i, b_d = b[part.independent], b[part.dependent]
        return b_i - self.a_id @ self._solve_dd(b_d)

    def recover(self, u_i, f_d):
        """Dependent values from ``A_DD u_D = f_D - A_DI u_I``."""
        return self._solve_dd(np.asarray(f_d, dtype=float) - self.a_di @ np.asarray(u_i, dtype=float))

    def assemble_solution(self, u_i, b):
        b = np.asarray(b, dtype=float)
        u = np.empty(self.partition.n_nodes)
        u[self.partition.independent] = u_i
        u[self.partition.dependent] = self.recover(u_i, b[self.partition.dependent])
        return u

    def solve(self, b):
        """Direct solve of the full system through the reduced one."""
        import scipy.sparse.linalg as spla

        rhs = self.reduce_rhs(b)
        u_i = spla.spsolve(self.operator.matrix.tocsc(), rhs) if rhs.size else rhs
        return self.assemble_solution(np.atleast_1d(u_i), b)


def recover_dependent(cs: CondensedSystem, u_i, f_d):
    return cs.recover(u_i, f_d)


def _face_between(disc, e0, e1):
    if disc is None:
        return None
    for lf, fid in enumerate(disc.mesh.element_faces[e0]):
        if disc.mesh.neighbor(e0, lf) == e1:
            return int(fid)
    return None


def condense(a, part: Partition) -> CondensedSystem:
    """Eliminate the dependent nodes by a block-diagonal Schur complement."""
    mat = _as_csr(a)
    ind, dep = part.independent, part.dependent
    nb = len(part.block_index) - 1
    a_dd = mat[dep][:, dep].tocoo()
    own_d = part.element_of(dep)
    bad = own_d[a_dd.row] != own_d[a_dd.col]
    if bad.any():
        k = int(np.argmax(bad))
        e0, e1 = int(own_d[a_dd.row[k]]), int(own_d[a_dd.col[k]])
        raise PartitionNotBlockDiagonal(_face_between(part.discretization, e0, e1), (e0, e1))
    a_dd = a_dd.tocsr()
    factors = []
    blocks = []
    for e, (start, stop) in enumerate(_ranges(own_d, nb)):
        if stop == start:
            factors.append((start, stop, None, None))
            continue
        blk = a_dd[start:stop, start:stop].toarray()

        def fail(e=e):
            raise SingularDependentBlock(e)

        lu, piv = _factor(blk, fail)
        factors.append((start, stop, lu, piv))
        blocks.append(scipy.linalg.lu_solve((lu, piv), np.eye(stop - start), check_finite=False))
    a_ii = mat[ind][:, ind]
    a_id = mat[ind][:, dep].tocsr()
    a_di = mat[dep][:, ind].tocsr()
    if len(dep):
        dd_inv = sp.block_diag(blocks, format="csr")
        reduced = a_ii - a_id @ dd_inv @ a_di
    else:
        reduced = a_ii
    hint = a.symmetry_hint if isinstance(a, SparseOperator) else Symmetry.NONE
    own_i = part.element_of(ind)
    red_index = np.searchsorted(own_i, np.arange(nb + 1)).astype(int)
    op = SparseOperator(finalize(reduced), red_index, hint)
    return CondensedSystem(op, part, a_id, a_di, factors)


# ---------------------------------------------------------------------------
# block preconditioners
# ---------------------------------------------------------------------------


class PreconditionerKind(enum.Enum):
    BLOCK_JACOBI = "jacobi"
    BLOCK_GAUSS_SEIDEL = "gauss-seidel"


@dataclass(eq=False)
class BlockPreconditioner:
    """Exact inverse of the block diagonal (Jacobi) or block lower triangle
    (Gauss-Seidel, element order) of an operator."""

    kind: PreconditionerKind
    block_index: np.ndarray
    factors: list
    lower_rows: list  # Gauss-Seidel: strictly-lower coupling rows per block

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        x = np.zeros_like(v)
        b = self.block_index
        for e, fac in enumerate(self.factors):
            lo, hi = int(b[e]), int(b[e + 1])
            if hi == lo:
                continue
            rhs = v[lo:hi]
            if self.kind is PreconditionerKind.BLOCK_GAUSS_SEIDEL:
                rhs = rhs - self.lower_rows[e] @ x
            x[lo:hi] = scipy.linalg.lu_solve(fac, rhs, check_finite=False)
        return x

    def dense(self):
        """Explicit ``P^{-1}`` (for small diagnostics)."""
        n = int(self.block_index[-1])
        return self.apply(np.eye(n))


def build_preconditioner(a, kind=PreconditionerKind.BLOCK_JACOBI, block_index=None) -> BlockPreconditioner:
    if isinstance(kind, str):
        kind = PreconditionerKind(kind)
    mat = _as_csr(a)
    b = np.asarray(a.block_index if block_index is None else block_index)
    factors, lower = [], []
    for e in range(len(b) - 1):
        lo, hi = int(b[e]), int(b[e + 1])
        if hi == lo:
            factors.append(None)
            lower.append(None)
            continue
        blk = mat[lo:hi, lo:hi].toarray()

        def fail(e=e):
            raise SingularBlock(e)

        factors.append(_factor(blk, fail))
        if kind is PreconditionerKind.BLOCK_GAUSS_SEIDEL:
            rows = mat[lo:hi].tolil()
            rows[:, lo:] = 0.0
            lower.append(rows.tocsr())
        else:
            lower.append(None)
    return BlockPreconditioner(kind, b, factors, lower)


@dataclass
class IterationResult:
    x: np.ndarray
    history: list  # relative residual norms, starting with the initial guess

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    @property
    def converged(self) -> bool:
        return bool(self.history) and self.history[-1] <= self._tol

    _tol: float = 0.0


def stationary_iterate(a, prec: BlockPreconditioner, b, x0=None, max_iters=1000, tol=1e-8):
    """``x <- x + P^{-1}(b - A x)`` until ``|b - A x| <= tol |b|``."""
    mat = _as_csr(a)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    r = b - mat @ x
    rnorm = np.linalg.norm(r)
    scale = bnorm if bnorm > 0 else 1.0
    history = [rnorm / scale]
    for _ in range(max_iters):
        if rnorm <= tol * bnorm or rnorm == 0.0:
            break
        x = x + prec.apply(r)
        r = b - mat @ x
        rnorm = np.linalg.norm(r)
        history.append(rnorm / scale)
        if not np.isfinite(rnorm) or rnorm > DIVERGENCE_FACTOR * scale:
            raise Diverged(f"residual grew to {rnorm:.3e}", history)
    return IterationResult(x, history, tol)


def _sort_spectrum(ev):
    ev = np.asarray(ev, dtype=complex)
    ev = np.where(np.abs(ev.imag) < 1e-300, ev.real + 0j, ev)
    order = np.lexsort((np.round(ev.imag, 14), np.round(ev.real, 14), np.abs(ev)))
    return ev[order]


def iteration_spectrum(a, kind=PreconditionerKind.BLOCK_JACOBI, part: Partition | None = None):
    """Eigenvalues of the block iteration matrix, sorted by magnitude.

    With a partition, the iteration acts on the condensed system and the
    eliminated nodes contribute exact zeros.
    """
    if isinstance(kind, BlockPreconditioner):
        kind = kind.kind
    n = _as_csr(a).shape[0]
    if n > SPECTRUM_MAX_NODES:
        raise SystemTooLarge(f"{n} nodes exceed the dense limit {SPECTRUM_MAX_NODES}")
    pad = 0
    if part is not None:
        cs = condense(a, part)
        a = cs.operator
        pad = len(part.dependent)
    mat = _as_csr(a)
    prec = build_preconditioner(a, kind)
    m = mat.shape[0]
    it = np.eye(m) - prec.apply(mat.toarray())
    ev = scipy.linalg.eigvals(it) if m else np.zeros(0)
    return _sort_spectrum(np.concatenate([ev, np.zeros(pad)]))


def spectrum_csv(ev) -> str:
    lines = ["index,real,imag"]
    for i, z in enumerate(ev):
        lines.append(f"{i},{z.real:.16e},{z.imag:.16e}")
    return "\n".join(lines) + "\n"
