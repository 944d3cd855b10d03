"""
Tensor-product node layouts and global numbering.

Local nodes are ordered x-fastest: in 2D the node with 1D indices (a, b)
has local id ``a + (p + 1) * b``.  Half-closed layouts orient each 1D Radau
basis so that its closed end sits on the face with switch value +1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import AlternationViolated, MissingSwitch
from .mesh import Mesh
from .quadrature import Basis1D, Kind, NodeFamily, Side, make_basis
from .switch import SwitchFunction


@dataclass(frozen=True, eq=False)
class ElementLayout:
    """Node lattice of one element.

    Attributes
    ----------
    bases : tuple of Basis1D
        One 1D basis per reference direction.
    plus_closed : tuple of bool
        For Radau bases, whether the closed end is the + reference face.
    face_nodes : tuple of ndarray
        Local node ids lying on each local face, ordered along the face's
        tangential reference coordinate; empty for a bare face.
    """

    bases: tuple
    plus_closed: tuple
    face_nodes: tuple

    @property
    def dim(self) -> int:
        return len(self.bases)

    @property
    def p(self) -> int:
        return self.bases[0].p

    @property
    def n_nodes(self) -> int:
        return int(np.prod([b.n for b in self.bases]))

    @property
    def family(self) -> NodeFamily:
        return self.bases[0].family

    @property
    def dtype(self):
        return self.bases[0].nodes.dtype

    def multi_index(self):
        """(n_nodes, dim) array of 1D indices, x-fastest."""
        n = self.bases[0].n
        ids = np.arange(self.n_nodes)
        return np.stack([(ids // n**d) % n for d in range(self.dim)], axis=1)

    def ref_nodes(self):
        mi = self.multi_index()
        return np.stack([self.bases[d].nodes[mi[:, d]] for d in range(self.dim)], axis=1)

    def weights(self):
        mi = self.multi_index()
        return np.prod([self.bases[d].weights[mi[:, d]] for d in range(self.dim)], axis=0)

    def evaluate(self, ref):
        """Basis values at reference points, shape (npts, n_nodes)."""
        ref = np.atleast_2d(ref)
        out = self.bases[0].interpolate(ref[:, 0])
        for d in range(1, self.dim):
            vd = self.bases[d].interpolate(ref[:, d])
            out = (vd[:, :, None] * out[:, None, :]).reshape(len(ref), -1)
        return out

    def gradient(self, ref):
        """Reference derivatives, shape (dim, npts, n_nodes)."""
        ref = np.atleast_2d(ref)
        grads = []
        for r in range(self.dim):
            out = None
            for d in range(self.dim):
                b = self.bases[d]
                vd = b.derivative(ref[:, d]) if d == r else b.interpolate(ref[:, d])
                out = vd if out is None else (vd[:, :, None] * out[:, None, :]).reshape(len(ref), -1)
            grads.append(out)
        return np.stack(grads)

    def bears_face(self, local_face: int) -> bool:
        return len(self.face_nodes[local_face]) > 0


@lru_cache(maxsize=None)
def _layout(kind: Kind, p: int, plus_closed: tuple, dtype=np.dtype(np.float64)) -> ElementLayout:
    dim = len(plus_closed)
    bases = []
    for pc in plus_closed:
        side = Side.RIGHT if pc else Side.LEFT
        bases.append(make_basis(NodeFamily(kind, side), p, dtype))
    n = p + 1
    ids = np.arange(n**dim)
    mi = np.stack([(ids // n**d) % n for d in range(dim)], axis=1)
    faces = []
    for lf in range(2 * dim):
        d, end = divmod(lf, 2)
        k = bases[d].endpoint_node(end)
        nodes = ids[mi[:, d] == k] if k is not None else np.zeros(0, dtype=int)
        nodes.setflags(write=False)
        faces.append(nodes)
    return ElementLayout(tuple(bases), tuple(plus_closed), tuple(faces))


@dataclass(frozen=True, eq=False)
class GlobalNumbering:
    offsets: np.ndarray  # element e owns [offsets[e], offsets[e+1])

    @property
    def total(self) -> int:
        return int(self.offsets[-1])

    def range(self, e: int) -> range:
        return range(int(self.offsets[e]), int(self.offsets[e + 1]))

    def slice(self, e: int) -> slice:
        return slice(int(self.offsets[e]), int(self.offsets[e + 1]))

    def element_of(self, node: int) -> int:
        return int(np.searchsorted(self.offsets, node, side="right") - 1)


@dataclass(frozen=True, eq=False)
class Discretization:
    """Mesh, switch and node layouts bundled for assembly."""

    mesh: Mesh
    switch: SwitchFunction | None
    layouts: tuple
    numbering: GlobalNumbering

    @property
    def family(self) -> NodeFamily:
        return self.layouts[0].family

    @property
    def p(self) -> int:
        return self.layouts[0].p

    @property
    def n_nodes(self) -> int:
        return self.numbering.total

    @property
    def dtype(self):
        return self.layouts[0].dtype

    def element_map(self, e: int):
        cache = self.__dict__.setdefault("_maps", {})
        if e not in cache:
            cache[e] = self.mesh.element_map(e, self.dtype)
        return cache[e]


def _as_kind(family) -> Kind:
    if isinstance(family, Kind):
        return family
    if isinstance(family, NodeFamily):
        return family.kind
    return NodeFamily.parse(family).kind


def build_layouts(mesh: Mesh, s: SwitchFunction | None, family, p: int, dtype=np.float64):
    """Per-element layouts and the global numbering.

    Parameters
    ----------
    family : NodeFamily, Kind or str
        Only the kind matters; Radau orientation comes from the switch.
    dtype : numpy float type
        Precision of nodes and basis tables.

    Returns
    -------
    layouts : tuple of ElementLayout
    numbering : GlobalNumbering
    """
    kind = _as_kind(family)
    dtype = np.dtype(dtype)
    dim = mesh.dim
    layouts = []
    for e in range(mesh.num_elements):
        if kind is Kind.RADAU:
            if s is None:
                raise MissingSwitch("half-closed layouts need a switch function")
            vals = s.element_values(mesh, e)
            pcs = []
            for d in range(dim):
                lo, hi = vals[2 * d], vals[2 * d + 1]
                if lo == hi:
                    raise AlternationViolated(
                        f"element {e}: faces {2 * d} and {2 * d + 1} share switch sign {lo:+d}")
                pcs.append(hi > 0)
            layouts.append(_layout(kind, p, tuple(pcs), dtype))
        else:
            if kind is Kind.LOBATTO:
                make_basis(NodeFamily(kind), p)  # raises DegreeTooLow early
            layouts.append(_layout(kind, p, (False,) * dim, dtype))
    sizes = [lay.n_nodes for lay in layouts]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    offsets.setflags(write=False)
    return tuple(layouts), GlobalNumbering(offsets)


def discretize(mesh: Mesh, s: SwitchFunction | None, family, p: int, dtype=np.float64) -> Discretization:
    layouts, numbering = build_layouts(mesh, s, family, p, dtype)
    return Discretization(mesh, s, layouts, numbering)


def physical_node_coords(mesh: Mesh, layouts, numbering: GlobalNumbering | None = None):
    """(total, dim) physical coordinates of every node."""
    out = []
    for e, lay in enumerate(layouts):
        out.append(mesh.element_map(e).map(lay.ref_nodes()))
    return np.concatenate(out, axis=0)


def node_measures(mesh: Mesh, layouts):
    """Collocation measure w_i |J_i| of every node."""
    out = []
    for e, lay in enumerate(layouts):
        out.append(lay.weights() * np.abs(mesh.element_map(e).det(lay.ref_nodes())))
    return np.concatenate(out)
