"""
Sparse assembly of DG operators.

Conventions (``q`` is the auxiliary flux variable, ``u`` the scalar):

* ``D^d`` maps nodal ``q`` to ``(D q)_i = -int q d_d(phi_i) + int_{dK} phi_i q_hat n_d``,
  so ``M^{-1} D^d`` approximates ``d/dx_d``.
* ``G^d`` is the same form applied to ``u`` with trace ``u_hat``; with
  complementary face rules ``G^d = -(D^d)^T``.
* With the switch flux ``q_hat`` comes from the side whose switch is -1
  and ``u_hat`` from the side whose switch is +1.  On Dirichlet faces
  ``q_hat`` is the interior trace and ``u_hat`` the boundary data; on
  Neumann faces ``q_hat . n`` is data and ``u_hat`` the interior trace.
* ``L = sum_d D^d M^{-1} G^d - C_D B`` approximates the Laplacian, where
  ``B`` is the face mass of Dirichlet faces with boundary switch +1.
"""

from __future__ import annotations

import enum
from functools import lru_cache
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .errors import MissingSwitch, NonDiagonalMass, SystemTooLarge
from .layout import Discretization, discretize
from .mesh import DIRICHLET, NEUMANN, Mesh
from .quadrature import Kind, gauss_rule
from .switch import SwitchFunction

DROP_TOL = 1e-14
SPECTRUM_MAX_NODES = 2000


class QuadratureMode(enum.Enum):
    COLLOCATION = "collocation"
    EXACT = "exact"


class FluxKind(enum.Enum):
    UPWIND_BY_SWITCH = "switch"
    CENTRAL = "central"
    TAKE_RIGHT = "right"
    TAKE_LEFT = "left"


class Symmetry(enum.Enum):
    NONE = "none"
    SYMMETRIC = "symmetric"


@dataclass(frozen=True)
class FluxSpec:
    kind: FluxKind = FluxKind.UPWIND_BY_SWITCH
    dirichlet_penalty: float = 0.0

    def __post_init__(self):
        if self.dirichlet_penalty < 0:
            raise ValueError("the Dirichlet penalty must be non-negative")


@dataclass(eq=False)
class SparseOperator:
    """CSR matrix with element block ranges.

    ``structure`` optionally holds the generic (basis-independent) pattern
    in which inverse-mass factors are treated as dense element blocks.
    """

    matrix: sp.csr_matrix
    block_index: np.ndarray
    symmetry_hint: Symmetry = Symmetry.NONE
    structure: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def toarray(self):
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other

    def block(self, e: int, f: int | None = None):
        f = e if f is None else f
        b = self.block_index
        return self.matrix[b[e]:b[e + 1], b[f]:b[f + 1]]

    def to_matrix_market(self) -> str:
        buf = io.BytesIO()
        scipy.io.mmwrite(buf, self.matrix, symmetry="general")
        return buf.getvalue().decode("ascii")


def finalize(a, tol=DROP_TOL) -> sp.csr_matrix:
    """Canonical CSR: duplicates summed, sorted columns, tiny entries dropped."""
    a = sp.csr_matrix(a)
    a.sum_duplicates()
    a.sort_indices()
    if a.nnz:
        absval = np.abs(a.data)
        rows = np.repeat(np.arange(a.shape[0]), np.diff(a.indptr))
        rowmax = np.zeros(a.shape[0])
        np.maximum.at(rowmax, rows, absval)
        a.data[absval < tol * rowmax[rows]] = 0.0
        a.eliminate_zeros()
    return a


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _volume_rule(lay, mode):
    """Reference points, weights, basis values and reference gradients."""
    if mode is QuadratureMode.COLLOCATION:
        pts = lay.ref_nodes()
        return pts, lay.weights(), np.eye(lay.n_nodes, dtype=lay.dtype), lay.gradient(pts)
    x, w = gauss_rule(lay.p + 2, lay.dtype)
    n = len(x)
    ids = np.arange(n**lay.dim)
    mi = np.stack([(ids // n**d) % n for d in range(lay.dim)], axis=1)
    pts = x[mi]
    wts = np.prod(w[mi], axis=1)
    return pts, wts, lay.evaluate(pts), lay.gradient(pts)


@lru_cache(maxsize=1 << 16)
def _volume_data(disc: Discretization, e: int, mode):
    lay = disc.layouts[e]
    emap = disc.element_map(e)
    pts, w, v, dv = _volume_rule(lay, mode)
    wj = w * np.abs(emap.det(pts))
    inv = emap.inverse_jacobian(pts)  # [q, r, d] = dxi_r / dx_d
    dphys = np.einsum("qrd,rqn->dqn", inv, dv)
    return wj, v, dphys


def _sides(face):
    out = [(face.left_elem, face.local_index_left)]
    if not face.is_boundary:
        out.append((face.right_elem, face.local_index_right))
    return out


def face_rule(disc: Discretization, fid: int, mode=QuadratureMode.COLLOCATION):
    """Face quadrature in the left element's tangential coordinate.

    Returns points ``t`` and weights already scaled to arc length. In
    collocation mode the points are the tangential nodes of the side that
    has no nodes on the face (or of the left side if both or neither do).
    """
    mesh = disc.mesh
    f = mesh.faces[fid]
    if mesh.dim == 1:
        return np.zeros(1, dtype=disc.dtype), np.ones(1, dtype=disc.dtype)
    scale = disc.element_map(f.left_elem).face_scale(f.local_index_left)
    if mode is QuadratureMode.EXACT:
        t, w = gauss_rule(disc.p + 2, disc.dtype)
        return np.array(t), w * scale
    sides = _sides(f)
    ref = 0
    if len(sides) == 2:
        bears = [disc.layouts[e].bears_face(lf) for e, lf in sides]
        if bears[0] and not bears[1]:
            ref = 1
    e, lf = sides[ref]
    tb = disc.layouts[e].bases[1 - lf // 2]
    t, w = tb.nodes, tb.weights
    if ref == 1 and f.tangential_flip:
        t, w = -t[::-1], w[::-1]
    return np.array(t), w * scale


def face_trace(disc: Discretization, fid: int, side: int, t):
    """Basis values of one side of a face at face parameters ``t``."""
    mesh = disc.mesh
    f = mesh.faces[fid]
    e, lf = _sides(f)[side]
    tau = -t if (side == 1 and f.tangential_flip) else t
    tau = np.asarray(tau, dtype=disc.dtype)
    return _face_table(disc.layouts[e], lf, tau.tobytes())


@lru_cache(maxsize=None)
def _face_table(lay, lf, tau_bytes):
    tau = np.frombuffer(tau_bytes, dtype=lay.dtype)
    d_f, end = divmod(lf, 2)
    ref = np.empty((len(tau), lay.dim), dtype=lay.dtype)
    ref[:, d_f] = 1.0 if end else -1.0
    if lay.dim == 2:
        ref[:, 1 - d_f] = tau
    out = lay.evaluate(ref)
    out.setflags(write=False)
    return out


def _trace_support(disc, e, lf):
    lay = disc.layouts[e]
    nodes = lay.face_nodes[lf]
    return nodes if len(nodes) else np.arange(lay.n_nodes)


# ---------------------------------------------------------------------------
# mass
# ---------------------------------------------------------------------------


def _mass_blocks(disc, mode):
    for e in range(disc.mesh.num_elements):
        wj, v, _ = _volume_data(disc, e, mode)
        yield e, (v.T * wj) @ v


def assemble_mass(disc: Discretization, mode=QuadratureMode.COLLOCATION) -> SparseOperator:
    blocks = [blk for _, blk in _mass_blocks(disc, mode)]
    m = finalize(sp.block_diag(blocks, format="csr"))
    return SparseOperator(m, disc.numbering.offsets, Symmetry.SYMMETRIC)


def inverse_mass(disc: Discretization, mode=QuadratureMode.COLLOCATION) -> sp.csr_matrix:
    blocks = []
    for e, blk in _mass_blocks(disc, mode):
        if mode is QuadratureMode.COLLOCATION:
            off = blk - np.diag(np.diag(blk))
            if np.abs(off).max(initial=0.0) > 1e-13 * np.abs(blk).max():
                raise NonDiagonalMass(f"collocation mass of element {e} is not diagonal")
            blocks.append(np.diag(1.0 / np.diag(blk)))
        else:
            blocks.append(np.linalg.inv(blk))
    return sp.block_diag(blocks, format="csr")


@dataclass(frozen=True)
class FaceMass:
    element: int
    nodes: np.ndarray  # local node ids with non-zero trace
    matrix: np.ndarray


def assemble_face_mass(disc: Discretization, fid: int, side: int = 0,
                       mode=QuadratureMode.COLLOCATION) -> FaceMass:
    """``int_face phi_i phi_j ds`` for the basis of one side of a face."""
    f = disc.mesh.faces[fid]
    e, lf = _sides(f)[side]
    t, w = face_rule(disc, fid, mode)
    tr = face_trace(disc, fid, side, t)
    nodes = _trace_support(disc, e, lf)
    tr = tr[:, nodes]
    return FaceMass(e, nodes, (tr.T * w) @ tr)


# ---------------------------------------------------------------------------
# first-order operators
# ---------------------------------------------------------------------------


def _flux_weights(disc, fid, kind: FluxKind, value_from_bare: bool):
    """(a_left, a_right) with q_hat = a_left q_left + a_right q_right.

    For the switch flux ``value_from_bare`` selects the side with switch -1
    (divergence) rather than the side with switch +1 (gradient).
    """
    if kind is FluxKind.CENTRAL:
        return 0.5, 0.5
    if kind is FluxKind.TAKE_RIGHT:
        return 0.0, 1.0
    if kind is FluxKind.TAKE_LEFT:
        return 1.0, 0.0
    if disc.switch is None:
        raise MissingSwitch("the switch flux needs a switch function")
    left_negative = disc.switch.values[fid] < 0
    take_left = left_negative if value_from_bare else not left_negative
    return (1.0, 0.0) if take_left else (0.0, 1.0)


def _first_order(disc, d, weights_of, mode, structural=False, own_trace_tag=DIRICHLET):
    """Assemble ``-int q d_d(phi_i) + int_{dK} phi_i q_hat n_d``.

    ``weights_of(fid)`` gives the interior flux weights.  Boundary faces
    tagged ``own_trace_tag`` use the interior trace; the others carry data
    only and add nothing to the matrix.
    """
    mesh, num = disc.mesh, disc.numbering
    rows, cols, vals = [], [], []

    def add(r0, idx_r, c0, idx_c, blk):
        rows.append(np.repeat(r0 + idx_r, len(idx_c)))
        cols.append(np.tile(c0 + idx_c, len(idx_r)))
        vals.append(np.asarray(blk, dtype=disc.dtype).ravel())

    for e in range(mesh.num_elements):
        n = disc.layouts[e].n_nodes
        ids = np.arange(n)
        if structural:
            add(num.offsets[e], ids, num.offsets[e], ids, np.ones((n, n)))
        else:
            wj, v, dphys = _volume_data(disc, e, mode)
            add(num.offsets[e], ids, num.offsets[e], ids, -(dphys[d].T * wj) @ v)

    for fid, f in enumerate(mesh.faces):
        sides = _sides(f)
        if f.is_boundary:
            if mesh.boundary_tags.get(fid, DIRICHLET) != own_trace_tag:
                continue
            a = (1.0,)
        else:
            a = weights_of(fid)
        if structural:
            sup = [_trace_support(disc, e, lf) for e, lf in sides]
            for s_row, (er, _) in enumerate(sides):
                for s_col, (ec, _) in enumerate(sides):
                    if a[s_col]:
                        add(num.offsets[er], sup[s_row], num.offsets[ec], sup[s_col],
                            np.ones((len(sup[s_row]), len(sup[s_col]))))
            continue
        t, w = face_rule(disc, fid, mode)
        traces = [face_trace(disc, fid, s, t) for s in range(len(sides))]
        for s_row, (er, lf) in enumerate(sides):
            nd = disc.element_map(er).normal(lf)[d]
            if nd == 0.0:
                continue
            sup_r = _trace_support(disc, er, lf)
            tr_r = traces[s_row][:, sup_r]
            for s_col, (ec, lfc) in enumerate(sides):
                if not a[s_col]:
                    continue
                sup_c = _trace_support(disc, ec, lfc)
                blk = a[s_col] * nd * (tr_r.T * w) @ traces[s_col][:, sup_c]
                add(num.offsets[er], sup_r, num.offsets[ec], sup_c, blk)

    nn = num.total
    if rows:
        coo = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nn, nn))
    else:
        coo = sp.coo_matrix((nn, nn), dtype=disc.dtype)
    return finalize(coo) if not structural else _bool_pattern(coo)


def _bool_pattern(a) -> sp.csr_matrix:
    a = sp.csr_matrix(a, dtype=float)
    a.sum_duplicates()
    a.data[:] = 1.0
    a.sort_indices()
    return a


def _check_flux(disc, flux: FluxSpec):
    if flux.kind is FluxKind.UPWIND_BY_SWITCH and disc.switch is None:
        raise MissingSwitch("the switch flux needs a switch function")


def assemble_divergence(disc: Discretization, flux: FluxSpec = FluxSpec(), d: int = 0,
                        mode=QuadratureMode.COLLOCATION, structure: bool = True) -> SparseOperator:
    _check_flux(disc, flux)
    mat = _first_order(disc, d, lambda fid: _flux_weights(disc, fid, flux.kind, True), mode)
    struct = None
    if structure:
        struct = _first_order(disc, d, lambda fid: _flux_weights(disc, fid, flux.kind, True), mode,
                              structural=True)
    return SparseOperator(mat, disc.numbering.offsets, Symmetry.NONE, struct)


def _gradient_weights(disc, fid, kind):
    # u_hat uses the opposite switch side; the fixed-side kinds keep their side
    return _flux_weights(disc, fid, kind, False)


def assemble_gradient(disc: Discretization, flux: FluxSpec = FluxSpec(), d: int = 0,
                      mode=QuadratureMode.COLLOCATION, direct: bool = False,
                      structure: bool = True) -> SparseOperator:
    """Discrete gradient ``G^d``.

    By default built as ``-(D_c^d)^T`` with ``D_c`` the divergence using the
    complementary face rule, which makes the adjoint relation exact.  With
    ``direct=True`` the face integrals with ``u_hat`` are assembled
    directly; the two agree whenever quadrature integrates by parts exactly
    (affine elements).
    """
    _check_flux(disc, flux)

    def complement(fid):
        a_l, a_r = _gradient_weights(disc, fid, flux.kind)
        return a_r, a_l

    if direct:
        mat = _direct_gradient(disc, d, lambda fid: _gradient_weights(disc, fid, flux.kind), mode)
    else:
        mat = finalize(-_first_order(disc, d, complement, mode).T)
    struct = None
    if structure:
        struct = _bool_pattern(_first_order(disc, d, complement, mode, structural=True).T.tocsr())
    return SparseOperator(mat, disc.numbering.offsets, Symmetry.NONE, struct)


def _direct_gradient(disc, d, weights_of, mode):
    """``-int u d_d(phi_i) + int phi_i u_hat n_d``; u_hat is data on Dirichlet faces."""
    return _first_order(disc, d, weights_of, mode, own_trace_tag=NEUMANN)


def penalty_matrix(disc: Discretization, mode=QuadratureMode.COLLOCATION, structural=False) -> sp.csr_matrix:
    """Face mass of the Dirichlet faces whose boundary switch is +1."""
    mesh, num = disc.mesh, disc.numbering
    nn = num.total
    out = sp.lil_matrix((nn, nn), dtype=disc.dtype)
    for fid in mesh.boundary_faces():
        if mesh.boundary_tags.get(fid, DIRICHLET) != DIRICHLET:
            continue
        if disc.switch is None or disc.switch.values[fid] < 0:
            continue
        fm = assemble_face_mass(disc, fid, 0, mode)
        idx = num.offsets[fm.element] + fm.nodes
        out[np.ix_(idx, idx)] = out[np.ix_(idx, idx)].toarray() + (
            np.ones_like(fm.matrix) if structural else fm.matrix)
    return out.tocsr()


def _block_pattern(disc) -> sp.csr_matrix:
    blocks = [np.ones((lay.n_nodes, lay.n_nodes)) for lay in disc.layouts]
    return sp.block_diag(blocks, format="csr")


def assemble_ldg_laplacian(disc: Discretization, C_D: float = 0.0,
                           mode=QuadratureMode.COLLOCATION, structure: bool = True) -> SparseOperator:
    """``L = sum_d D^d M^{-1} G^d - C_D B`` (negative semi-definite)."""
    if disc.switch is None:
        raise MissingSwitch("the LDG Laplacian needs a switch function")
    if C_D < 0:
        raise ValueError("C_D must be non-negative")
    minv = inverse_mass(disc, mode)
    flux = FluxSpec(FluxKind.UPWIND_BY_SWITCH)
    nn = disc.n_nodes
    lap = sp.csr_matrix((nn, nn), dtype=disc.dtype)
    struct = sp.csr_matrix((nn, nn))
    mblock = _block_pattern(disc) if structure else None
    for d in range(disc.mesh.dim):
        dop = assemble_divergence(disc, flux, d, mode, structure)
        gop = assemble_gradient(disc, flux, d, mode, structure=structure)
        lap = lap + dop.matrix @ minv @ gop.matrix
        if structure:
            struct = struct + dop.structure @ mblock @ gop.structure
    if C_D > 0:
        lap = lap - C_D * penalty_matrix(disc, mode)
        if structure:
            struct = struct + penalty_matrix(disc, mode, structural=True)
    return SparseOperator(finalize(lap), disc.numbering.offsets, Symmetry.SYMMETRIC,
                          _bool_pattern(struct) if structure else None)


# ---------------------------------------------------------------------------
# pattern analytics
# ---------------------------------------------------------------------------


def pattern_hash(a: sp.csr_matrix) -> str:
    a = sp.csr_matrix(a)
    a.sort_indices()
    h = hashlib.blake2b(digest_size=8)
    h.update(np.asarray(a.shape, dtype=np.int64).tobytes())
    h.update(np.asarray(a.indptr, dtype=np.int64).tobytes())
    h.update(np.asarray(a.indices, dtype=np.int64).tobytes())
    return h.hexdigest()


def pattern_contains(outer: sp.spmatrix, inner: sp.spmatrix) -> bool:
    """True if every stored position of ``inner`` is stored in ``outer``."""
    o = _bool_pattern(outer)
    i = _bool_pattern(inner)
    return (i - i.multiply(o)).count_nonzero() == 0


@dataclass
class PatternReport:
    nnz: int
    block_nnz: dict
    occupancy: dict  # off-diagonal block classes: "empty"/"sparse"/"dense" counts
    hash: str
    structural_nnz: int | None = None
    structural_hash: str | None = None

    def lines(self):
        out = [f"nnz {self.nnz}", f"hash {self.hash}"]
        if self.structural_hash is not None:
            out += [f"structural_nnz {self.structural_nnz}", f"structural_hash {self.structural_hash}"]
        out.append("offdiag " + " ".join(f"{k}={v}" for k, v in sorted(self.occupancy.items())))
        return out


def pattern_report(op: SparseOperator) -> PatternReport:
    a = op.matrix.tocsr()
    b = np.asarray(op.block_index)
    nb = len(b) - 1
    elem_of = np.repeat(np.arange(nb), np.diff(b))
    coo = a.tocoo()
    pairs = elem_of[coo.row] * nb + elem_of[coo.col]
    keys, counts = np.unique(pairs, return_counts=True)
    block_nnz = {(int(k // nb), int(k % nb)): int(c) for k, c in zip(keys, counts)}
    occupancy = {"sparse": 0, "dense": 0}
    sizes = np.diff(b)
    for (r, c), cnt in block_nnz.items():
        if r != c:
            occupancy["dense" if cnt == sizes[r] * sizes[c] else "sparse"] += 1
    rep = PatternReport(int(a.nnz), block_nnz, occupancy, pattern_hash(a))
    if op.structure is not None:
        rep.structural_nnz = int(op.structure.nnz)
        rep.structural_hash = pattern_hash(op.structure)
    return rep


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


@dataclass
class SpectralReport:
    closed: np.ndarray
    halfclosed: np.ndarray
    max_deviation: float

    @property
    def relative_deviation(self) -> float:
        return self.max_deviation / max(np.abs(self.closed).max(), 1e-300)


def laplacian_spectrum(disc: Discretization, C_D: float = 0.0, mode=QuadratureMode.EXACT):
    """Sorted eigenvalues of ``M^{-1} L`` (real, non-positive)."""
    if disc.n_nodes > SPECTRUM_MAX_NODES:
        raise SystemTooLarge(f"{disc.n_nodes} nodes exceed the dense limit {SPECTRUM_MAX_NODES}")
    lap = assemble_ldg_laplacian(disc, C_D, mode).toarray()
    mass = assemble_mass(disc, mode).toarray()
    lap = 0.5 * (lap + lap.T)
    return np.sort(scipy.linalg.eigh(lap, mass, eigvals_only=True))


def spectral_equivalence_check(mesh: Mesh, p: int, s: SwitchFunction, C_D: float = 0.0,
                               mode=QuadratureMode.EXACT) -> SpectralReport:
    """Compare ``M^{-1} L`` spectra of closed and half-closed bases.

    Both assemblies use the same quadrature, so they discretize the same
    bilinear forms on the same polynomial space and must share eigenvalues.
    """
    closed = discretize(mesh, s, Kind.LOBATTO, p)
    half = discretize(mesh, s, Kind.RADAU, p)
    for disc in (closed, half):
        if disc.n_nodes > SPECTRUM_MAX_NODES:
            raise SystemTooLarge(f"{disc.n_nodes} nodes exceed the dense limit {SPECTRUM_MAX_NODES}")
    ec = laplacian_spectrum(closed, C_D, mode)
    eh = laplacian_spectrum(half, C_D, mode)
    return SpectralReport(ec, eh, float(np.max(np.abs(ec - eh))))
