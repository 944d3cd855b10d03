"""
Interval and straight-sided quadrilateral meshes with face connectivity.

Local face order is fixed in reference coordinates: 1D (left, right),
2D (-x, +x, -y, +y).  Opposite faces therefore differ only in the lowest
bit (``f ^ 1``).  Quad vertices are counter-clockwise, vertex 0 at
reference corner (-1, -1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidDomain, ParseError, TagError, TopologyError

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
BOUNDARY_TAGS = (DIRICHLET, NEUMANN)

# vertex pair (start, end) of each local quad face, ordered by increasing
# tangential reference coordinate
QUAD_FACE_VERTICES = ((0, 3), (1, 2), (0, 1), (3, 2))


@dataclass(frozen=True)
class Face:
    left_elem: int
    right_elem: int | None
    local_index_left: int
    local_index_right: int | None
    tangential_flip: bool = False
    periodic: bool = False

    @property
    def is_boundary(self) -> bool:
        return self.right_elem is None

    def side_of(self, elem: int, local: int | None = None) -> int:
        """0 if ``elem`` is the left element of this face, 1 if right."""
        if elem == self.left_elem and (local is None or local == self.local_index_left):
            return 0
        if elem == self.right_elem and (local is None or local == self.local_index_right):
            return 1
        raise KeyError(f"element {elem} is not incident to this face")

    def other(self, elem: int) -> int | None:
        return self.right_elem if elem == self.left_elem else self.left_elem


class ElementMap:
    """Reference-to-physical map of one element (affine in 1D, bilinear in 2D)."""

    def __init__(self, corners, dtype=np.float64):
        self.corners = np.asarray(corners).astype(dtype)
        self.dim = self.corners.shape[1]

    def _shape(self, ref):
        ref = np.asarray(ref)
        ref = np.atleast_2d(ref.astype(np.result_type(ref.dtype, self.corners.dtype)))
        if self.dim == 1:
            xi = ref[:, 0]
            n = np.stack([(1 - xi) / 2, (1 + xi) / 2], axis=1)
            dn = np.stack([np.full_like(xi, -0.5), np.full_like(xi, 0.5)], axis=1)[:, :, None]
            return n, dn
        xi, eta = ref[:, 0], ref[:, 1]
        n = 0.25 * np.stack(
            [(1 - xi) * (1 - eta), (1 + xi) * (1 - eta), (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)],
            axis=1,
        )
        dxi = 0.25 * np.stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)], axis=1)
        deta = 0.25 * np.stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)], axis=1)
        return n, np.stack([dxi, deta], axis=2)

    def map(self, ref):
        n, _ = self._shape(ref)
        return n @ self.corners

    def jacobian(self, ref):
        """Array (npts, dim, dim) with entries dx_i / dxi_j."""
        _, dn = self._shape(ref)
        return np.einsum("pkj,ki->pij", dn, self.corners)

    def det(self, ref):
        jac = self.jacobian(ref)
        if self.dim == 1:
            return jac[:, 0, 0]
        return jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]

    def inverse_jacobian(self, ref):
        """Array (npts, dim, dim); entry [p, r, d] is dxi_r / dx_d."""
        jac = self.jacobian(ref)
        if self.dim == 1:
            return 1.0 / jac
        det = self.det(ref)
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        return inv

    def face_scale(self, local_face: int) -> float:
        """ds per unit of the tangential reference coordinate."""
        if self.dim == 1:
            return 1.0
        a, b = QUAD_FACE_VERTICES[local_face]
        t = self.corners[b] - self.corners[a]
        return 0.5 * np.sqrt(t @ t)

    def face_length(self, local_face: int) -> float:
        return 2.0 * self.face_scale(local_face) if self.dim == 2 else 1.0

    def normal(self, local_face: int):
        """Unit outward normal of a (straight) face."""
        if self.dim == 1:
            return np.array([-1.0 if local_face == 0 else 1.0], dtype=self.corners.dtype)
        a, b = QUAD_FACE_VERTICES[local_face]
        t = self.corners[b] - self.corners[a]
        n = np.array([t[1], -t[0]]) / np.sqrt(t @ t)
        mid = 0.5 * (self.corners[a] + self.corners[b])
        if np.dot(n, mid - self.corners.mean(axis=0)) < 0:
            n = -n
        return n

    def is_affine(self, tol=1e-13) -> bool:
        if self.dim == 1:
            return True
        c = self.corners
        return bool(np.linalg.norm(c[0] + c[2] - c[1] - c[3]) <= tol * max(1.0, np.abs(c).max()))


@dataclass(eq=False)
class Mesh:
    """Validated mesh; treat as immutable after construction."""

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    faces: list[Face]
    element_faces: np.ndarray
    boundary_tags: dict[int, str]
    vertex_identity: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def interior_faces(self):
        return [i for i, f in enumerate(self.faces) if not f.is_boundary]

    def boundary_faces(self):
        return [i for i, f in enumerate(self.faces) if f.is_boundary]

    def element_map(self, e: int, dtype=np.float64) -> ElementMap:
        return ElementMap(self.vertices[self.elements[e]], dtype)

    def neighbor(self, e: int, local_face: int):
        face = self.faces[self.element_faces[e, local_face]]
        return face.other(e) if not face.is_boundary else None

    def face_vertices(self, fid: int):
        f = self.faces[fid]
        if self.dim == 1:
            return (int(self.elements[f.left_elem][f.local_index_left]),)
        a, b = QUAD_FACE_VERTICES[f.local_index_left]
        ev = self.elements[f.left_elem]
        return int(ev[a]), int(ev[b])

    def element_measure(self, e: int) -> float:
        if self.dim == 1:
            x = self.vertices[self.elements[e], 0]
            return float(x[1] - x[0])
        c = self.vertices[self.elements[e]]
        x, y = c[:, 0], c[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def total_measure(self) -> float:
        return sum(self.element_measure(e) for e in range(self.num_elements))

    def mean_boundary_face_length(self) -> float:
        faces = self.boundary_faces()
        if not faces:
            return float("nan")
        lengths = [
            self.element_map(self.faces[f].left_elem).face_length(self.faces[f].local_index_left)
            for f in faces
        ]
        return float(np.mean(lengths))

    def validate(self):
        _check_handshake(self)
        if self.dim == 2:
            for e in range(self.num_elements):
                _check_quad(self.vertices[self.elements[e]], e)
        return self


def _check_quad(corners, e):
    for k in range(4):
        a, b, c = corners[k - 1], corners[k], corners[(k + 1) % 4]
        u, v = c - b, a - b
        if u[0] * v[1] - u[1] * v[0] <= 0.0:
            raise TopologyError(f"inverted or degenerate quad {e} (non-positive Jacobian at corner {k})")


def _check_handshake(mesh: Mesh):
    visits = np.zeros(mesh.num_faces, dtype=int)
    for e in range(mesh.num_elements):
        for lf, fid in enumerate(mesh.element_faces[e]):
            f = mesh.faces[fid]
            f.side_of(e, lf)
            visits[fid] += 1
    for fid, f in enumerate(mesh.faces):
        expected = 1 if f.is_boundary else 2
        if visits[fid] != expected or f.left_elem == f.right_elem:
            raise TopologyError(f"face {fid} is visited {visits[fid]} times, expected {expected}")


# ---------------------------------------------------------------------------
# 1D
# ---------------------------------------------------------------------------


def uniform_interval_mesh(k: int, domain=(0.0, 1.0), periodic: bool = False) -> Mesh:
    a, b = map(float, domain)
    if not a < b:
        raise InvalidDomain(f"empty interval ({a}, {b})")
    if k < 1:
        raise InvalidDomain("need at least one element")
    if periodic and k < 2:
        raise InvalidDomain("a periodic interval mesh needs at least two elements")
    return interval_mesh(np.linspace(a, b, k + 1), periodic=periodic)


def interval_mesh(points, periodic: bool = False) -> Mesh:
    x = np.asarray(points, dtype=float)
    if np.any(np.diff(x) <= 0):
        raise InvalidDomain("interval vertices must be strictly increasing")
    k = len(x) - 1
    elements = np.stack([np.arange(k), np.arange(1, k + 1)], axis=1)
    faces: list[Face] = []
    efaces = np.zeros((k, 2), dtype=int)
    tags: dict[int, str] = {}
    if periodic:
        faces.append(Face(k - 1, 0, 1, 0, periodic=True))
        efaces[0, 0] = efaces[k - 1, 1] = 0
    else:
        faces.append(Face(0, None, 0, None))
        efaces[0, 0] = 0
        tags[0] = DIRICHLET
    for i in range(1, k):
        efaces[i - 1, 1] = efaces[i, 0] = len(faces)
        faces.append(Face(i - 1, i, 1, 0))
    if not periodic:
        efaces[k - 1, 1] = len(faces)
        tags[len(faces)] = DIRICHLET
        faces.append(Face(k - 1, None, 1, None))
    ident = None
    if periodic:
        ident = np.arange(k + 1)
        ident[k] = 0
    return Mesh(1, x[:, None], elements, faces, efaces, tags, vertex_identity=ident).validate()


# ---------------------------------------------------------------------------
# 2D
# ---------------------------------------------------------------------------


def connect_quads(vertices, quads, edge_tags=None, vertex_identity=None, default_tag=DIRICHLET):
    """Build faces for a quad mesh.

    ``edge_tags`` maps a frozenset of two vertex ids to a boundary tag.
    ``vertex_identity`` maps every vertex to a representative; edges whose
    endpoints share representatives are glued (periodic identification).
    """
    vertices = np.asarray(vertices, dtype=float)
    quads = np.asarray(quads, dtype=int)
    ident = np.arange(len(vertices)) if vertex_identity is None else np.asarray(vertex_identity)
    faces: list[Face] = []
    efaces = np.full((len(quads), 4), -1, dtype=int)
    pending: dict[frozenset, list] = {}
    for e, q in enumerate(quads):
        for lf, (ia, ib) in enumerate(QUAD_FACE_VERTICES):
            va, vb = int(q[ia]), int(q[ib])
            if va == vb:
                raise TopologyError(f"quad {e} has a repeated vertex")
            key = frozenset((int(ident[va]), int(ident[vb])))
            pending.setdefault(key, []).append((e, lf, va, vb))
    for e, q in enumerate(quads):
        for lf, (ia, ib) in enumerate(QUAD_FACE_VERTICES):
            if efaces[e, lf] >= 0:
                continue
            key = frozenset((int(ident[q[ia]]), int(ident[q[ib]])))
            users = pending[key]
            if len(users) > 2:
                raise TopologyError(f"edge {sorted(key)} is shared by {len(users)} quads")
            fid = len(faces)
            if len(users) == 1:
                faces.append(Face(e, None, lf, None))
            else:
                (e0, lf0, a0, b0), (e1, lf1, a1, b1) = users
                if (e0, lf0) != (e, lf):
                    (e0, lf0, a0, b0), (e1, lf1, a1, b1) = (e1, lf1, a1, b1), (e0, lf0, a0, b0)
                if e0 == e1:
                    raise TopologyError(f"quad {e0} is glued to itself")
                flip = ident[a0] != ident[a1]
                periodic = frozenset((a0, b0)) != frozenset((a1, b1))
                faces.append(Face(e0, e1, lf0, lf1, bool(flip), bool(periodic)))
                efaces[e1, lf1] = fid
            efaces[e, lf] = fid
    tags: dict[int, str] = {}
    edge_tags = edge_tags or {}
    known = set()
    for fid, f in enumerate(faces):
        if f.is_boundary:
            ia, ib = QUAD_FACE_VERTICES[f.local_index_left]
            key = frozenset((int(quads[f.left_elem][ia]), int(quads[f.left_elem][ib])))
            tags[fid] = edge_tags.get(key, default_tag)
            known.add(key)
    stray = [sorted(k) for k in edge_tags if k not in known]
    if stray:
        raise TopologyError(f"tagged edges {stray} are not boundary edges of the mesh")
    _check_hanging(vertices, quads, faces)
    mesh = Mesh(2, vertices, quads, faces, efaces, tags,
                vertex_identity=None if vertex_identity is None else np.asarray(vertex_identity))
    return mesh.validate()


def _check_hanging(vertices, quads, faces):
    used = np.unique(quads)
    pts = vertices[used]
    for f in faces:
        if not f.is_boundary:
            continue
        ia, ib = QUAD_FACE_VERTICES[f.local_index_left]
        a, b = vertices[quads[f.left_elem][ia]], vertices[quads[f.left_elem][ib]]
        t = b - a
        rel = pts - a
        s = rel @ t / (t @ t)
        dist = np.abs(rel[:, 0] * t[1] - rel[:, 1] * t[0]) / np.linalg.norm(t)
        inside = (s > 1e-10) & (s < 1 - 1e-10) & (dist < 1e-10 * np.linalg.norm(t))
        if inside.any():
            raise TopologyError(f"hanging node {int(used[np.argmax(inside)])} on edge of quad {f.left_elem}")


def cartesian_quad_mesh(nx: int, ny: int, domain=((0.0, 1.0), (0.0, 1.0)), periodic=False) -> Mesh:
    """Axis-aligned ``nx`` x ``ny`` quads, elements numbered x-fastest."""
    (x0, x1), (y0, y1) = domain
    if not (x0 < x1 and y0 < y1):
        raise InvalidDomain(f"empty rectangle {domain}")
    if nx < 1 or ny < 1:
        raise InvalidDomain("need at least one element per direction")
    if periodic and (nx < 3 or ny < 3):
        # with two elements per direction distinct edges share both glued endpoints
        raise InvalidDomain("a periodic quad mesh needs at least three elements per direction")
    xs, ys = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.stack([gx.ravel(), gy.ravel()], axis=1)

    def vid(i, j):
        return i + (nx + 1) * j

    quads = np.array(
        [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)] for j in range(ny) for i in range(nx)]
    )
    ident = None
    if periodic:
        ident = np.array([vid(i % nx, j % ny) for j in range(ny + 1) for i in range(nx + 1)])
    return connect_quads(vertices, quads, vertex_identity=ident)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every quad into four through its edge midpoints and centre."""
    if mesh.dim != 2:
        raise InvalidDomain("uniform refinement is implemented for quad meshes")
    verts = [tuple(v) for v in mesh.vertices]
    ident = list(mesh.vertex_identity) if mesh.vertex_identity is not None else list(range(len(verts)))
    midpoint: dict[tuple[int, int], int] = {}
    mid_ident: dict[frozenset, int] = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            midpoint[key] = len(verts)
            verts.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))
            tkey = frozenset((ident[a], ident[b]))
            ident.append(mid_ident.setdefault(tkey, midpoint[key]))
        return midpoint[key]

    quads = []
    for q in mesh.elements:
        v0, v1, v2, v3 = (int(v) for v in q)
        m01, m12, m23, m30 = mid(v0, v1), mid(v1, v2), mid(v2, v3), mid(v3, v0)
        c = len(verts)
        verts.append(tuple(mesh.vertices[q].mean(axis=0)))
        ident.append(c)
        quads += [[v0, m01, c, m30], [m01, v1, m12, c], [c, m12, v2, m23], [m30, c, m23, v3]]
    edge_tags = {}
    for fid, tag in mesh.boundary_tags.items():
        a, b = mesh.face_vertices(fid)
        m = midpoint[(min(a, b), max(a, b))]
        edge_tags[frozenset((a, m))] = tag
        edge_tags[frozenset((m, b))] = tag
    return connect_quads(
        np.array(verts), np.array(quads), edge_tags,
        vertex_identity=np.array(ident) if mesh.vertex_identity is not None else None,
    )


def perturbed_quad_mesh(nx, ny, amplitude=0.2, seed=0, domain=((0.0, 1.0), (0.0, 1.0))) -> Mesh:
    """Cartesian topology with randomly displaced interior vertices."""
    base = cartesian_quad_mesh(nx, ny, domain)
    rng = np.random.default_rng(seed)
    (x0, x1), (y0, y1) = domain
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    v = base.vertices.copy()
    interior = (v[:, 0] > x0) & (v[:, 0] < x1) & (v[:, 1] > y0) & (v[:, 1] < y1)
    shift = rng.uniform(-amplitude, amplitude, size=(interior.sum(), 2)) * [hx, hy]
    v[interior] += shift
    return connect_quads(v, base.elements)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def read_mesh(text: str) -> Mesh:
    """Parse the ``hcdg-mesh 2d`` text format."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body))
    if not lines:
        raise ParseError("empty mesh file", 1)
    it = iter(lines)

    def take(kind):
        try:
            return next(it)
        except StopIteration:
            raise ParseError(f"unexpected end of file while reading {kind}", len(text.splitlines()) + 1)

    lineno, header = take("header")
    if header.split() != ["hcdg-mesh", "2d"]:
        raise ParseError("expected header 'hcdg-mesh 2d'", lineno, 1)

    def count_line(keyword):
        ln, body = take(keyword)
        parts = body.split()
        if len(parts) != 2 or parts[0] != keyword:
            raise ParseError(f"expected '{keyword} <count>'", ln, 1)
        return _parse_int(parts[1], ln, len(keyword) + 2, body)

    def numbers(n_expected, conv, what):
        ln, body = take(what)
        parts = body.split()
        if len(parts) != n_expected:
            raise ParseError(f"expected {n_expected} values for {what}, got {len(parts)}", ln, 1)
        out, col = [], 1
        for tok in parts:
            col = body.index(tok, col - 1) + 1
            out.append(conv(tok, ln, col, body))
            col += len(tok)
        return ln, out

    nv = count_line("vertices")
    verts = [numbers(2, _parse_float, "vertex")[1] for _ in range(nv)]
    nq = count_line("quads")
    quads = []
    for _ in range(nq):
        ln, q = numbers(4, _parse_int, "quad")
        for v in q:
            if not 0 <= v < nv:
                raise TopologyError(f"quad on line {ln} references missing vertex {v}")
        quads.append(q)
    edge_tags: dict[frozenset, str] = {}
    notes = []
    for ln, body in it:
        parts = body.split()
        if parts[0] != "boundary" or len(parts) != 3:
            raise ParseError("expected 'boundary <TAG> <count>'", ln, 1)
        tag = parts[1].lower()
        if tag not in BOUNDARY_TAGS:
            raise TagError(f"unknown boundary tag {parts[1]!r} on line {ln}")
        k = _parse_int(parts[2], ln, body.index(parts[2]) + 1, body)
        for _ in range(k):
            ln2, (a, b) = numbers(2, _parse_int, "boundary edge")
            key = frozenset((a, b))
            if key in edge_tags:
                msg = f"edge ({a}, {b}) tagged twice (line {ln2}); last tag {tag!r} wins"
                notes.append(msg)
                warnings.warn(msg, stacklevel=2)
            edge_tags[key] = tag
    mesh = connect_quads(np.array(verts, dtype=float).reshape(-1, 2), np.array(quads, dtype=int).reshape(-1, 4),
                         edge_tags)
    mesh.warnings.extend(notes)
    return mesh


def load_mesh(path) -> Mesh:
    return read_mesh(Path(path).read_text(encoding="utf-8"))


def write_mesh(mesh: Mesh) -> str:
    if mesh.dim != 2:
        raise InvalidDomain("only quad meshes have a file format")
    out = ["hcdg-mesh 2d", f"vertices {len(mesh.vertices)}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"quads {mesh.num_elements}")
    out += [" ".join(str(int(v)) for v in q) for q in mesh.elements]
    for tag in BOUNDARY_TAGS:
        fids = [f for f, t in sorted(mesh.boundary_tags.items()) if t == tag]
        if fids:
            out.append(f"boundary {tag} {len(fids)}")
            out += [" ".join(map(str, mesh.face_vertices(f))) for f in fids]
    return "\n".join(out) + "\n"


def _parse_int(tok, line, col, body=None):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok!r}", line, col) from None


def _parse_float(tok, line, col, body=None):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"expected a number, got {tok!r}", line, col) from None


def bundled_mesh(name: str = "unit_square") -> Mesh:
    """Mesh shipped with the package (``hcdg/data/<name>.mesh``)."""
    path = Path(__file__).with_name("data") / f"{name}.mesh"
    return load_mesh(path)
