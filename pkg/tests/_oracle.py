"""
Dense reference assembly for small affine meshes.

Everything here is rebuilt from scratch: a monomial Vandermonde basis on
the layout's reference nodes, high-order Gauss quadrature, physical face
segments with their own outward normals, and affine inverse maps to find
the neighbour's reference coordinates. Only the node positions and the
switch signs are taken from the package.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss

NQ = 8  # points per direction; exact for every integrand at p <= 2


def affine(mesh, e):
    """(centre, J) with x = centre + J @ xi."""
    v = mesh.vertices[mesh.elements[e]]
    if mesh.dim == 1:
        a, b = v[0], v[1]
        return 0.5 * (a + b), np.array([[0.5 * (b - a)[0]]])
    j = np.column_stack([0.5 * (v[1] - v[0]), 0.5 * (v[3] - v[0])])
    return v[0] + j @ np.ones(2), j


def is_affine(mesh):
    if mesh.dim == 1:
        return True
    for q in mesh.elements:
        v = mesh.vertices[q]
        if np.abs(v[0] + v[2] - v[1] - v[3]).max() > 1e-12:
            return False
    return True


def _exponents(p, dim):
    if dim == 1:
        return [(a,) for a in range(p + 1)]
    return [(a, b) for b in range(p + 1) for a in range(p + 1)]


def _monomials(pts, p, deriv=None):
    pts = np.atleast_2d(pts)
    cols = []
    for ex in _exponents(p, pts.shape[1]):
        val = np.ones(len(pts))
        for d, k in enumerate(ex):
            if deriv == d:
                val = val * (k * pts[:, d] ** (k - 1) if k else 0.0 * pts[:, d])
            else:
                val = val * pts[:, d] ** k
        cols.append(val)
    return np.column_stack(cols)


class ElementBasis:
    def __init__(self, ref_nodes, p):
        self.p = p
        self.coef = np.linalg.inv(_monomials(ref_nodes, p))

    def values(self, ref):
        return _monomials(ref, self.p) @ self.coef

    def ref_grad(self, ref, r):
        return _monomials(ref, self.p, deriv=r) @ self.coef


def volume_rule(dim):
    x, w = leggauss(NQ)
    if dim == 1:
        return x[:, None], w
    xx, yy = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w)
    return np.column_stack([xx.ravel(), yy.ravel()]), ww.ravel()


class Reference:
    """Dense oracle operators for one discretization."""

    def __init__(self, disc):
        self.disc = disc
        self.mesh = disc.mesh
        self.off = np.asarray(disc.numbering.offsets)
        self.n = int(self.off[-1])
        self.bases = [ElementBasis(lay.ref_nodes(), lay.p) for lay in disc.layouts]
        self.maps = [affine(self.mesh, e) for e in range(self.mesh.num_elements)]

    def _sl(self, e):
        return slice(self.off[e], self.off[e + 1])

    def to_ref(self, e, x):
        c, j = self.maps[e]
        return np.linalg.solve(j, (np.atleast_2d(x) - c).T).T

    def mass(self):
        out = np.zeros((self.n, self.n))
        pts, w = volume_rule(self.mesh.dim)
        for e, b in enumerate(self.bases):
            det = abs(np.linalg.det(self.maps[e][1]))
            v = b.values(pts)
            out[self._sl(e), self._sl(e)] = (v.T * (w * det)) @ v
        return out

    def _phys_grad(self, e, pts, d):
        jinv = np.linalg.inv(self.maps[e][1])
        return sum(jinv[r, d] * self.bases[e].ref_grad(pts, r) for r in range(self.mesh.dim))

    def face_sides(self, fid):
        """Quadrature over the face: list of (elem, values, normal) and ds weights."""
        mesh = self.mesh
        f = mesh.faces[fid]
        e, lf = f.left_elem, f.local_index_left
        d_f, end = divmod(lf, 2)
        c, j = self.maps[e]
        sgn = 1.0 if end else -1.0
        if mesh.dim == 1:
            s, ws = np.zeros(1), np.ones(1)
            ref = np.array([[sgn]])
            t_len = 1.0
        else:
            s, ws = leggauss(NQ)
            ref = np.empty((NQ, 2))
            ref[:, d_f] = sgn
            ref[:, 1 - d_f] = s
            t_len = np.linalg.norm(j[:, 1 - d_f])
        x = c + ref @ j.T
        sides = []
        n_left = sgn * np.linalg.inv(j).T[:, d_f]
        n_left = n_left / np.linalg.norm(n_left)
        sides.append((e, self.bases[e].values(ref), n_left))
        if not f.is_boundary:
            er = f.right_elem
            xr = x
            if f.periodic:
                xr = x + self._face_centre(er, f.local_index_right) - self._face_centre(e, lf)
            ref_r = self.to_ref(er, xr)
            sides.append((er, self.bases[er].values(ref_r), -n_left))
        return sides, ws * t_len

    def _face_centre(self, e, lf):
        d_f, end = divmod(lf, 2)
        c, j = self.maps[e]
        ref = np.zeros(self.mesh.dim)
        ref[d_f] = 1.0 if end else -1.0
        return c + j @ ref

    def _take_left(self, fid, upwind_side_minus):
        s = int(self.disc.switch.values[fid])
        return (s < 0) if upwind_side_minus else (s > 0)

    def first_order(self, d, kind, gradient=False):
        """Divergence (``gradient=False``) or direct gradient operator.

        ``kind`` is "switch", "central", "left" or "right". The switch flux
        takes the S=-1 side for the divergence and the S=+1 side for the
        gradient. Boundary faces contribute the interior trace on Dirichlet
        faces (divergence) or Neumann faces (gradient).
        """
        out = np.zeros((self.n, self.n))
        pts, w = volume_rule(self.mesh.dim)
        for e, b in enumerate(self.bases):
            det = abs(np.linalg.det(self.maps[e][1]))
            out[self._sl(e), self._sl(e)] -= (self._phys_grad(e, pts, d).T * (w * det)) @ b.values(pts)
        own = "neumann" if gradient else "dirichlet"
        for fid, f in enumerate(self.mesh.faces):
            sides, ws = self.face_sides(fid)
            if f.is_boundary:
                if self.mesh.boundary_tags.get(fid, "dirichlet") != own:
                    continue
                a = [1.0]
            elif kind == "central":
                a = [0.5, 0.5]
            elif kind == "left":
                a = [1.0, 0.0]
            elif kind == "right":
                a = [0.0, 1.0]
            else:
                tl = self._take_left(fid, upwind_side_minus=not gradient)
                a = [1.0, 0.0] if tl else [0.0, 1.0]
            for er, vr, nr in sides:
                for (ec, vc, _), ac in zip(sides, a):
                    if ac:
                        out[self._sl(er), self._sl(ec)] += ac * nr[d] * (vr.T * ws) @ vc
        return out

    def penalty(self):
        out = np.zeros((self.n, self.n))
        for fid in self.mesh.boundary_faces():
            if self.mesh.boundary_tags.get(fid, "dirichlet") != "dirichlet" or self.disc.switch.values[fid] < 0:
                continue
            sides, ws = self.face_sides(fid)
            e, v, _ = sides[0]
            out[self._sl(e), self._sl(e)] += (v.T * ws) @ v
        return out

    def laplacian(self, C_D=0.0):
        minv = np.linalg.inv(self.mass())
        lap = sum(self.first_order(d, "switch") @ minv @ self.first_order(d, "switch", gradient=True)
                  for d in range(self.mesh.dim))
        return lap - C_D * self.penalty()
