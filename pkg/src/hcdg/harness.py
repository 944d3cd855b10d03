"""
Problem drivers: 1D advection, 1D/2D Poisson, discrete L2 errors and
convergence studies.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidDomain, ReportTooShort, SingularSystem, UnstableRun
from .layout import Discretization, discretize, node_measures, physical_node_coords
from .mesh import DIRICHLET, NEUMANN, Mesh, bundled_mesh, refine_uniform, uniform_interval_mesh
from .operators import (FluxKind, FluxSpec, QuadratureMode, assemble_divergence, assemble_ldg_laplacian,
                        assemble_mass, face_rule, face_trace, inverse_mass, _sides)
from .quadrature import Kind, NodeFamily
from .solvers import build_partition, condense
from .switch import assign_switch_quad, refine_switch, uniform_switch

SLOPE_LEVELS = 3
REFINE_STEPS = 2


def default_penalty(mesh: Mesh) -> float:
    """C_D = 10 / h with h the element width (1D) or mean boundary edge (2D)."""
    if mesh.dim == 1:
        h = float(np.mean([mesh.element_measure(e) for e in range(mesh.num_elements)]))
    else:
        h = mesh.mean_boundary_face_length()
    return 10.0 / h


@dataclass
class ProblemSpec:
    """A model problem with its manufactured solution.

    For Poisson problems ``forcing`` is ``f`` in ``-lap u = f`` and
    ``gradient`` returns the exact gradient (needed on Neumann faces).
    For advection ``exact(x, t)`` is the travelling solution.
    """

    equation: str  # "poisson" or "advection"
    dim: int
    exact: Callable
    forcing: Callable | None = None
    gradient: Callable | None = None
    velocity: float = 0.0
    penalty: Callable[[Mesh], float] = default_penalty
    final_time: float = 1.0
    cfl: float = 0.1
    dt: float | None = None
    name: str = ""


def poisson_1d_problem() -> ProblemSpec:
    def exact(x):
        return np.exp(np.sin(x[:, 0]))

    def forcing(x):
        s, c = np.sin(x[:, 0]), np.cos(x[:, 0])
        return -(c**2 - s) * np.exp(s)

    def gradient(x):
        return (np.cos(x[:, 0]) * exact(x))[:, None]

    return ProblemSpec("poisson", 1, exact, forcing, gradient, name="poisson1d")


def poisson_2d_problem() -> ProblemSpec:
    def exact(x):
        return np.exp(np.sin(x[:, 0]) * np.sin(x[:, 1]))

    def forcing(x):
        sx, cx, sy, cy = np.sin(x[:, 0]), np.cos(x[:, 0]), np.sin(x[:, 1]), np.cos(x[:, 1])
        u = np.exp(sx * sy)
        uxx = (-sx * sy + cx**2 * sy**2) * u
        uyy = (-sx * sy + sx**2 * cy**2) * u
        return -(uxx + uyy)

    def gradient(x):
        sx, cx, sy, cy = np.sin(x[:, 0]), np.cos(x[:, 0]), np.sin(x[:, 1]), np.cos(x[:, 1])
        u = np.exp(sx * sy)
        return np.stack([cx * sy * u, sx * cy * u], axis=1)

    return ProblemSpec("poisson", 2, exact, forcing, gradient, name="poisson2d")


def gaussian_bump(x):
    return np.exp(-100.0 * (x - 0.5) ** 2)


def advection_problem(velocity: float = 1.0, final_time: float = 1.0, cfl: float = 0.1,
                      dt: float | None = None) -> ProblemSpec:
    def exact(x, t):
        return gaussian_bump(np.mod(x[:, 0] - velocity * t, 1.0))

    return ProblemSpec("advection", 1, exact, velocity=velocity, final_time=final_time, cfl=cfl, dt=dt,
                       name=f"advection({velocity:+g})")


@dataclass
class RunResult:
    family: str
    p: int
    level: int
    elements: int
    h: float
    error: float
    solution: np.ndarray = field(repr=False, default=None)


@dataclass
class ConvergenceReport:
    family: str
    p: int
    runs: list

    @property
    def slope(self) -> float:
        return fit_slope([r.h for r in self.runs], [r.error for r in self.runs])


def fit_slope(h, err, last=SLOPE_LEVELS) -> float:
    """Least-squares slope of log(err) against log(h) over the last levels."""
    h = np.asarray(h, dtype=float)[-last:]
    err = np.asarray(err, dtype=float)[-last:]
    if len(h) < 2:
        raise ReportTooShort("need at least two levels to fit a slope")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def discrete_l2_error(u, exact, mesh: Mesh, layouts) -> float:
    """``sqrt(sum_i (u_i - exact(x_i))^2 w_i |J_i|)``."""
    x = physical_node_coords(mesh, layouts)
    w = node_measures(mesh, layouts)
    diff = np.asarray(u) - exact(x)
    return float(np.sqrt(np.sum(diff**2 * w)))


def family_label(family) -> str:
    kind = family.kind if isinstance(family, NodeFamily) else (family if isinstance(family, Kind)
                                                               else NodeFamily.parse(family).kind)
    return {Kind.LOBATTO: "closed", Kind.RADAU: "halfclosed", Kind.LEGENDRE: "open"}[kind]


def _mesh_size(mesh: Mesh) -> float:
    if mesh.dim == 1:
        return float(np.max([mesh.element_measure(e) for e in range(mesh.num_elements)]))
    return math.sqrt(mesh.total_measure() / mesh.num_elements)


def default_switch(mesh: Mesh, seed: int = 0):
    """Switch S_n^m > 0 iff n > m in 1D, seeded chain propagation in 2D.

    In 1D this puts every Radau end node, and the Dirichlet penalty, on the
    left side; the mirrored choice converges at the same asymptotic rate
    but with a larger pre-asymptotic p+3 component on coarse grids.
    """
    return uniform_switch(mesh, -1) if mesh.dim == 1 else assign_switch_quad(mesh, seed)


# ---------------------------------------------------------------------------
# Poisson
# ---------------------------------------------------------------------------


def _face_points(disc, fid, t):
    f = disc.mesh.faces[fid]
    e, lf = _sides(f)[0]
    d_f, end = divmod(lf, 2)
    ref = np.empty((len(t), disc.mesh.dim), dtype=disc.dtype)
    ref[:, d_f] = 1.0 if end else -1.0
    if disc.mesh.dim == 2:
        ref[:, 1 - d_f] = t
    return disc.element_map(e).map(ref)


def poisson_rhs(disc: Discretization, spec: ProblemSpec, C_D: float, mode=QuadratureMode.COLLOCATION):
    """Right-hand side of ``-L u = b`` including boundary data."""
    from .operators import _volume_data

    mesh, num = disc.mesh, disc.numbering
    b = np.zeros(num.total, dtype=disc.dtype)
    for e in range(mesh.num_elements):
        wj, v, _ = _volume_data(disc, e, mode)
        pts = _volume_points(disc, e, mode)
        b[num.slice(e)] += v.T @ (wj * spec.forcing(pts))
    r = np.zeros((mesh.dim, num.total), dtype=disc.dtype)
    for fid in mesh.boundary_faces():
        tag = mesh.boundary_tags.get(fid, DIRICHLET)
        e, lf = _sides(mesh.faces[fid])[0]
        t, w = face_rule(disc, fid, mode)
        tr = face_trace(disc, fid, 0, t)
        x = _face_points(disc, fid, t)
        normal = disc.element_map(e).normal(lf)
        sl = num.slice(e)
        if tag == DIRICHLET:
            g = spec.exact(x)
            for d in range(mesh.dim):
                r[d, sl] += normal[d] * (tr.T @ (w * g))
            if C_D > 0 and disc.switch.values[fid] > 0:
                b[sl] += C_D * (tr.T @ (w * g))
        elif tag == NEUMANN:
            gn = spec.gradient(x) @ normal
            b[sl] += tr.T @ (w * gn)
    minv = inverse_mass(disc, mode)
    flux = FluxSpec(FluxKind.UPWIND_BY_SWITCH)
    for d in range(mesh.dim):
        if np.any(r[d]):
            b += assemble_divergence(disc, flux, d, mode, structure=False).matrix @ (minv @ r[d])
    return b


def _volume_points(disc, e, mode):
    from .operators import _volume_rule

    pts, _, _, _ = _volume_rule(disc.layouts[e], mode)
    return disc.element_map(e).map(pts)


def solve_poisson(disc: Discretization, spec: ProblemSpec, condensed=False, mode=QuadratureMode.COLLOCATION,
                  C_D: float | None = None, refine: int | None = None):
    """Solve ``-L u = b`` for the discrete Poisson problem.

    With ``refine > 0`` the solution is improved by iterative refinement:
    residuals use operator and data assembled in extended precision, the
    corrections reuse the double-precision factorisation. This removes the
    roundoff floor that otherwise hides high-order convergence on fine
    meshes. The default refines 1D problems only; 2D errors stay far
    above that floor at practical sizes.
    """
    mesh = disc.mesh
    if not any(t == DIRICHLET for t in mesh.boundary_tags.values()):
        raise SingularSystem("Poisson problem without Dirichlet faces is singular")
    C_D = spec.penalty(mesh) if C_D is None else C_D
    if refine is None:
        refine = REFINE_STEPS if mesh.dim == 1 else 0
    lap = assemble_ldg_laplacian(disc, C_D, mode, structure=False)
    a = -lap.matrix
    b = poisson_rhs(disc, spec, C_D, mode)
    if condensed:
        neg = type(lap)(a.tocsr(), lap.block_index, lap.symmetry_hint)
        solve = condense(neg, build_partition(disc)).solve
    else:
        try:
            solve = spla.splu(a.tocsc()).solve
        except RuntimeError as exc:
            raise SingularSystem(f"sparse factorisation failed: {exc}") from exc
    u = solve(b)
    if refine > 0 and np.finfo(np.longdouble).eps < np.finfo(np.float64).eps:
        wide = discretize(mesh, disc.switch, disc.family, disc.p, np.longdouble)
        a_wide = -assemble_ldg_laplacian(wide, C_D, mode, structure=False).matrix
        b_wide = poisson_rhs(wide, spec, C_D, mode)
        u_wide = u.astype(np.longdouble)
        for _ in range(refine):
            r = b_wide - a_wide @ u_wide
            u_wide = u_wide + solve(np.asarray(r, dtype=np.float64))
        u = np.asarray(u_wide, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise SingularSystem("sparse solve produced non-finite values")
    return u


def run_poisson(spec: ProblemSpec, mesh: Mesh, family, p: int, seed: int = 0, condensed=False,
                mode=QuadratureMode.COLLOCATION, level: int = 0, refine: int | None = None,
                switch=None) -> RunResult:
    disc = discretize(mesh, switch if switch is not None else default_switch(mesh, seed), family, p)
    u = solve_poisson(disc, spec, condensed, mode, refine=refine)
    err = discrete_l2_error(u, spec.exact, mesh, disc.layouts)
    return RunResult(family_label(family), p, level, mesh.num_elements, _mesh_size(mesh), err, u)


# ---------------------------------------------------------------------------
# advection
# ---------------------------------------------------------------------------


def advection_operator(disc: Discretization, velocity: float, mode=QuadratureMode.COLLOCATION):
    """Sparse ``A`` with ``du/dt = A u`` for periodic 1D upwind DG."""
    kind = FluxKind.TAKE_LEFT if velocity > 0 else FluxKind.TAKE_RIGHT
    div = assemble_divergence(disc, FluxSpec(kind), 0, mode, structure=False).matrix
    minv = inverse_mass(disc, mode)
    return (-velocity * (minv @ div)).tocsr()


def rk4_propagator(a, dt):
    """One classical RK4 step for the linear system ``u' = A u``."""
    n = a.shape[-1]
    step = np.eye(n, dtype=a.dtype)
    term = np.eye(n, dtype=a.dtype)
    for k in range(1, 5):
        term = term @ (dt * a) / k
        step = step + term
    return step


def _circulant_blocks(a, k):
    """Offsets ``j`` and blocks ``B_j`` with ``A[e, e + j] = B_j``, or None."""
    coo = sp.coo_matrix(a)
    n = coo.shape[0] // k
    e, r = np.divmod(coo.row, n)
    f, c = np.divmod(coo.col, n)
    j = (f - e) % k
    offsets = np.unique(j)
    blocks = np.zeros((len(offsets), n, n), dtype=coo.dtype)
    slot = np.searchsorted(offsets, j)
    first = e == 0
    blocks[slot[first], r[first], c[first]] = coo.data[first]
    if np.count_nonzero(blocks) * k != coo.nnz:
        return None
    tol = 1e-12 * np.abs(coo.data).max(initial=0.0)
    if np.any(np.abs(blocks[slot, r, c] - coo.data) > tol):
        return None
    return offsets, blocks


def rk4_evolve(a, u0, dt, nsteps, k=None):
    """Apply ``nsteps`` RK4 steps of ``u' = A u`` to ``u0``.

    When ``a`` is block circulant over ``k`` elements (uniform periodic
    mesh) every Fourier mode evolves independently, so the step matrix is
    powered per mode on ``(p+1) x (p+1)`` symbols. This is the same RK4
    update, and it keeps very small time steps cheap. Otherwise the dense
    step matrix is powered directly.
    """
    found = _circulant_blocks(a, k) if k else None
    if found is None:
        dense = a.toarray() if sp.issparse(a) else np.asarray(a)
        return np.linalg.matrix_power(rk4_propagator(dense, dt), nsteps) @ u0
    offsets, blocks = found
    n = a.shape[0] // k
    real = blocks.dtype.type
    turns = np.outer(np.arange(k), offsets).astype(real) / k
    phase = np.exp(2j * (4 * np.arctan(real(1))) * turns)
    symbols = np.einsum("mj,jab->mab", phase, blocks)
    steps = np.linalg.matrix_power(rk4_propagator(symbols, blocks.dtype.type(dt)), nsteps)
    modes = np.fft.fft(np.asarray(u0).reshape(k, n), axis=0)
    modes = np.einsum("mab,mb->ma", steps, modes)
    return np.fft.ifft(modes, axis=0).real.reshape(-1)


def run_advection_1d(spec: ProblemSpec, k: int, family, p: int, closed_end: str = "left",
                     mode=QuadratureMode.COLLOCATION, level: int = 0, dtype=np.longdouble) -> RunResult:
    """Periodic advection of the Gaussian bump to ``final_time`` with RK4.

    ``closed_end`` picks the end of each element that carries the Radau
    end node (only relevant for half-closed nodes). The time step is
    ``spec.dt`` if given, else ``spec.cfl * h / |velocity|``. Operator and
    propagation use ``dtype``; extended precision keeps the roundoff of
    many tiny steps below the spatial error on fine meshes.
    """
    if spec.velocity == 0:
        raise InvalidDomain("advection needs a non-zero velocity")
    mesh = uniform_interval_mesh(k, periodic=True)
    s = uniform_switch(mesh, 1 if closed_end == "right" else -1)
    disc = discretize(mesh, s, family, p, dtype)
    a = advection_operator(disc, spec.velocity, mode)
    h = 1.0 / k
    dt_max = spec.dt if spec.dt is not None else spec.cfl * h / abs(spec.velocity)
    nsteps = max(1, int(math.ceil(spec.final_time / dt_max - 1e-12)))
    dt = spec.final_time / nsteps
    x = np.concatenate([disc.element_map(e).map(lay.ref_nodes()) for e, lay in enumerate(disc.layouts)])
    u0 = spec.exact(x, 0.0)
    u = np.asarray(rk4_evolve(a, u0, dt, nsteps, k), dtype=np.float64)
    if not np.all(np.isfinite(u)) or np.linalg.norm(u) > 1e3 * np.linalg.norm(u0):
        raise UnstableRun(f"solution norm grew beyond 1e3 x initial (dt={dt:.3e})")
    err = discrete_l2_error(u, lambda y: spec.exact(y, spec.final_time), mesh, disc.layouts)
    return RunResult(family_label(family), p, level, k, h, err, u)


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def interval_levels(levels, base=8):
    return [base * 2**i for i in range(levels)]


def mesh_hierarchy(base: Mesh, levels: int):
    meshes = [base]
    for _ in range(levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def switch_hierarchy(meshes, seed: int = 0):
    """Seeded switch on the coarsest mesh, inherited by every refinement.

    Independent switches per level scramble chain orientation from one
    level to the next, which costs the half-closed basis one order.
    """
    switches = [assign_switch_quad(meshes[0], seed)]
    for coarse, fine in zip(meshes, meshes[1:]):
        switches.append(refine_switch(coarse, switches[-1], fine))
    return switches


def convergence_study(spec: ProblemSpec, levels: int, families, degrees, base_mesh: Mesh | None = None,
                      seed: int = 0, closed_end: str = "left", base_elements: int = 8):
    """Sweep refinement levels for every (family, p) pair.

    1D problems use ``base_elements * 2**level`` uniform elements; 2D
    problems refine ``base_mesh`` (default: the bundled unstructured mesh)
    and carry one switch down the hierarchy.
    """
    if levels < SLOPE_LEVELS:
        raise ReportTooShort(f"a convergence study needs at least {SLOPE_LEVELS} levels")
    reports = []
    meshes = None
    switches = [None] * levels
    if spec.equation == "poisson":
        if spec.dim == 1:
            meshes = [uniform_interval_mesh(k) for k in interval_levels(levels, base_elements)]
        else:
            meshes = mesh_hierarchy(base_mesh if base_mesh is not None else bundled_mesh(), levels)
            switches = switch_hierarchy(meshes, seed)
    for fam in families:
        for p in degrees:
            runs = []
            for lev in range(levels):
                if spec.equation == "advection":
                    k = base_elements * 2**lev
                    runs.append(run_advection_1d(spec, k, fam, p, closed_end, level=lev))
                else:
                    runs.append(run_poisson(spec, meshes[lev], fam, p, seed, level=lev, switch=switches[lev]))
            reports.append(ConvergenceReport(family_label(fam), p, runs))
    return reports


def report_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "p", "level", "elements", "h", "error", "slope"])
    for rep in reports:
        slope = rep.slope
        for i, r in enumerate(rep.runs):
            w.writerow([rep.family, rep.p, r.level, r.elements, f"{r.h:.10e}", f"{r.error:.10e}",
                        f"{slope:.4f}" if i == len(rep.runs) - 1 else ""])
    return buf.getvalue()
