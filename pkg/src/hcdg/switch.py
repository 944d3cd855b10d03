"""
LDG switch functions.

A switch stores one sign per face, seen from the face's left element; the
right element sees the negation, so antisymmetry holds by construction.
Boundary faces carry a sign as well, which decides where Dirichlet
penalties act and which boundary faces receive half-closed nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import PropagationConflict, UnsupportedShape
from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class SwitchFunction:
    values: np.ndarray  # +-1 per face, from the left element

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int8).copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def value(self, mesh: Mesh, elem: int, local_face: int) -> int:
        """S_n^m seen from ``elem`` on its face ``local_face``."""
        fid = mesh.element_faces[elem, local_face]
        side = mesh.faces[fid].side_of(elem, local_face)
        v = int(self.values[fid])
        return v if side == 0 else -v

    def element_values(self, mesh: Mesh, elem: int):
        return [self.value(mesh, elem, lf) for lf in range(2 * mesh.dim)]

    def dump(self) -> str:
        return "".join(f"face {i} {'+1' if v > 0 else '-1'}\n" for i, v in enumerate(self.values))

    @classmethod
    def parse(cls, text: str) -> "SwitchFunction":
        entries = {}
        for line in text.splitlines():
            if line.strip():
                _, fid, val = line.split()
                entries[int(fid)] = int(val)
        return cls(np.array([entries[i] for i in range(len(entries))]))


def assign_switch_quad(mesh: Mesh, seed: int = 0, direction=None) -> SwitchFunction:
    """Alternating switch by chain propagation across opposite faces.

    Interior faces are visited in a seeded random order (boundary faces
    afterwards, for chains that touch no interior face). An unassigned face
    gets -1 from its left element; the sign is then carried through
    opposite faces of each element in both directions until the chain
    leaves the domain or closes.

    With ``direction`` (a vector) the starting sign of each chain is chosen
    instead so that the left element sees +1 iff its outward normal on the
    starting face points along ``direction``. This orients all chains of a
    structured mesh the same way.
    """
    rng = np.random.default_rng(seed)
    nf = mesh.num_faces
    values = np.zeros(nf, dtype=np.int8)
    interior = np.array(mesh.interior_faces(), dtype=int)
    boundary = np.array(mesh.boundary_faces(), dtype=int)
    order = np.concatenate([rng.permutation(interior), rng.permutation(boundary)]).astype(int)

    def set_from(elem, lf, v, chain):
        fid = int(mesh.element_faces[elem, lf])
        side = mesh.faces[fid].side_of(elem, lf)
        stored = v if side == 0 else -v
        chain.append(fid)
        if values[fid] == 0:
            values[fid] = stored
            return fid, True
        if values[fid] != stored:
            raise PropagationConflict("switch chain closes with inconsistent parity", chain)
        return fid, False

    for start in order:
        if values[start]:
            continue
        face = mesh.faces[start]
        v0 = -1
        if direction is not None:
            normal = mesh.element_map(face.left_elem).normal(face.local_index_left)
            v0 = 1 if float(np.dot(normal, direction)) > 0 else -1
        values[start] = v0
        walkers = [(face.left_elem, face.local_index_left, v0)]
        if not face.is_boundary:
            walkers.append((face.right_elem, face.local_index_right, -v0))
        for elem, lf, v in walkers:
            chain = [int(start)]
            while True:
                # opposite face of the current element carries the opposite sign
                fid, fresh = set_from(elem, lf ^ 1, -v, chain)
                if not fresh:
                    break
                nxt = mesh.faces[fid]
                if nxt.is_boundary:
                    break
                # the neighbour sees -(-v) = v on the shared face, so v is unchanged
                side = nxt.side_of(elem, lf ^ 1)
                elem, lf = (nxt.right_elem, nxt.local_index_right) if side == 0 else (
                    nxt.left_elem, nxt.local_index_left)
    return SwitchFunction(values)


def refine_switch(coarse: Mesh, s: SwitchFunction, fine: Mesh) -> SwitchFunction:
    """Carry a quad switch onto ``refine_uniform(coarse)``.

    Every child inherits its parent's sign on the local face with the same
    index, so all children of one element share its chain orientation and
    alternation is preserved. Relies on child ``e`` having parent ``e // 4``
    and a local frame aligned with the parent's.
    """
    if fine.num_elements != 4 * coarse.num_elements:
        raise ValueError("fine mesh is not a uniform refinement of the coarse mesh")
    values = np.empty(fine.num_faces, dtype=np.int8)
    for fid, f in enumerate(fine.faces):
        values[fid] = s.value(coarse, f.left_elem // 4, f.local_index_left)
    for fid, f in enumerate(fine.faces):
        if not f.is_boundary and s.value(coarse, f.right_elem // 4, f.local_index_right) != -values[fid]:
            raise PropagationConflict("inherited switch is not antisymmetric", [fid])
    return SwitchFunction(values)


def uniform_switch(mesh: Mesh, sign: int = 1) -> SwitchFunction:
    """Switch equal to ``sign`` on every element's +x/+y (right) faces.

    In 1D with ``sign=+1`` this is S_n^m > 0 iff n < m. Requires every
    interior face to join a "+" local face to a "-" local face, which holds
    on interval and Cartesian meshes.
    """
    values = np.empty(mesh.num_faces, dtype=np.int8)
    for fid, f in enumerate(mesh.faces):
        if not f.is_boundary and (f.local_index_left % 2) == (f.local_index_right % 2):
            raise ValueError(f"face {fid} does not join opposite local faces")
        values[fid] = sign if f.local_index_left % 2 else -sign
    return SwitchFunction(values)


@dataclass
class SwitchReport:
    antisymmetry: list[str] = field(default_factory=list)
    alternation: list[str] = field(default_factory=list)
    consistency: list[str] = field(default_factory=list)

    @property
    def violations(self):
        return self.antisymmetry + self.alternation + self.consistency

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.valid


def validate_switch(mesh: Mesh, s: SwitchFunction, require_alternation: bool = True) -> SwitchReport:
    report = SwitchReport()
    if len(s.values) != mesh.num_faces:
        report.antisymmetry.append(f"switch has {len(s.values)} values for {mesh.num_faces} faces")
        return report
    for fid, v in enumerate(s.values):
        if v not in (-1, 1):
            report.antisymmetry.append(f"face {fid}: value {v} is not +-1")
    if report.antisymmetry:
        return report
    for e in range(mesh.num_elements):
        vals = s.element_values(mesh, e)
        if require_alternation:
            for d in range(mesh.dim):
                if vals[2 * d] == vals[2 * d + 1]:
                    report.alternation.append(
                        f"element {e}: opposite faces {2 * d},{2 * d + 1} both {vals[2 * d]:+d}")
        if abs(sum(vals)) >= len(vals):
            report.consistency.append(f"element {e}: all faces carry {vals[0]:+d}")
    return report


def dependent_nodes_ratio(shape: str, p: int, d: int = 2) -> Fraction:
    """Fraction of nodes removed by switch-driven static condensation.

    ``shape`` is ``"quad"`` (tensor elements in ``d`` dimensions), ``"tri"``
    or ``"tet"``; the simplex values are expectations over random switches.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if shape in ("quad", "hex", "interval"):
        return Fraction(p**d, (p + 1) ** d)
    if shape == "tri":
        return Fraction(p * p, (p + 1) * (p + 2))
    if shape == "tet":
        return Fraction(7 * p**3 + 5 * p, 7 * (p + 1) * (p + 2) * (p + 3))
    raise UnsupportedShape(f"no elimination ratio for shape {shape!r}")
