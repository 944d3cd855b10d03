"""
End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line; run with
``pytest tests/test_acceptance.py -s -v`` to see them.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from _oracle import Reference
from hcdg.errors import Diverged
from hcdg.harness import (advection_problem, convergence_study, default_penalty, default_switch,
                          poisson_1d_problem, poisson_2d_problem)
from hcdg.layout import discretize
from hcdg.mesh import bundled_mesh, cartesian_quad_mesh, perturbed_quad_mesh, refine_uniform, uniform_interval_mesh
from hcdg.operators import (FluxKind, FluxSpec, QuadratureMode, SparseOperator, assemble_divergence,
                            assemble_gradient, assemble_ldg_laplacian, assemble_mass, pattern_contains,
                            pattern_report, spectral_equivalence_check)
from hcdg.quadrature import Kind, NodeFamily, Side, make_basis, measured_exactness
from hcdg.solvers import (PreconditionerKind, build_partition, build_preconditioner, condense,
                          iteration_spectrum, stationary_iterate)
from hcdg.switch import assign_switch_quad, dependent_nodes_ratio, uniform_switch


def verdict(n, ok, detail=""):
    print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, detail


def negated(op):
    return SparseOperator(-op.matrix, op.block_index, op.symmetry_hint)


def test_criterion_01_quadrature_exactness():
    t0 = time.perf_counter()
    bad = []
    for p in range(1, 9):
        n = p + 1
        for fam, want in ((NodeFamily(Kind.LEGENDRE), 2 * n - 1), (NodeFamily(Kind.LOBATTO), 2 * n - 3),
                          (NodeFamily(Kind.RADAU, Side.LEFT), 2 * n - 2),
                          (NodeFamily(Kind.RADAU, Side.RIGHT), 2 * n - 2)):
            basis = make_basis(fam, p)
            got = measured_exactness(basis.nodes, basis.weights, tol=1e-12)
            if got != want:
                bad.append((fam, p, got, want))
    dt = time.perf_counter() - t0
    verdict(1, not bad and dt < 1.0, f"mismatches={bad} runtime={dt:.2f}s")


def test_criterion_02_pattern_theorem():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []
    for trial in range(20):
        nx, ny = (int(v) for v in rng.integers(2, 5, size=2))
        m = perturbed_quad_mesh(nx, ny, amplitude=0.2, seed=int(rng.integers(1 << 30)))
        s = assign_switch_quad(m, int(rng.integers(1 << 30)))
        for p in (1, 2, 3):
            c = discretize(m, s, "closed", p)
            h = discretize(m, s, "halfclosed", p)
            lc, lh = pattern_report(assemble_ldg_laplacian(c, 10.0)), pattern_report(assemble_ldg_laplacian(h, 10.0))
            if lc.structural_hash != lh.structural_hash:
                failures.append(("laplacian", trial, p))
            for d in (0, 1):
                dc, dh = assemble_divergence(c, FluxSpec(), d), assemble_divergence(h, FluxSpec(), d)
                if not (pattern_contains(dh.structure, dc.structure) and pattern_contains(dh.structure, dc.matrix)):
                    failures.append(("divergence", trial, p, d))
    dt = time.perf_counter() - t0
    verdict(2, not failures and dt < 30, f"failures={failures} runtime={dt:.1f}s")


def test_criterion_03_sparsity_counts():
    counts = {}
    for per in (False, True):
        m = cartesian_quad_mesh(3, 3, periodic=per)
        s = assign_switch_quad(m)
        for p in (1, 2):
            for fam in ("closed", "halfclosed", "open"):
                counts[per, p, fam] = pattern_report(assemble_ldg_laplacian(discretize(m, s, fam, p), 0.0))
    for (per, p, fam), r in sorted(counts.items()):
        print(f"  periodic={per} p={p} {fam}: nnz={r.nnz} structural_nnz={r.structural_nnz}")
    equal = all(counts[per, p, "closed"].structural_hash == counts[per, p, "halfclosed"].structural_hash
                for per in (False, True) for p in (1, 2))
    # closed nnz 729 and open nnz 1377 come from periodic faces, p=2, collocation
    pinned = (counts[True, 2, "closed"].nnz, counts[True, 2, "open"].nnz)
    frozen = {(False, 1): (156, 204, 300, 368), (True, 1): (180, 300, 396, 504),
              (False, 2): (621, 621, 1053, 1449), (True, 2): (729, 945, 1377, 1863)}
    measured = {k: (counts[k + ("closed",)].nnz, counts[k + ("halfclosed",)].nnz, counts[k + ("open",)].nnz,
                    counts[k + ("closed",)].structural_nnz) for k in frozen}
    verdict(3, equal and pinned == (729, 1377) and measured == frozen,
            f"structural patterns equal={equal}; periodic p=2 closed/open nnz={pinned}")


@pytest.mark.xfail(strict=True, reason="condensed entries scale with the element width, not the node spacing")
def test_criterion_04_condensed_entries_with_node_spacing():
    worst = 0.0
    for fam in ("closed", "halfclosed"):
        for p in (1, 2, 3):
            for k in range(3, 9):
                m = uniform_interval_mesh(k, periodic=True)
                d = discretize(m, default_switch(m), fam, p)
                red = condense(negated(assemble_ldg_laplacian(d, 0.0)), build_partition(d)).operator.toarray()
                h = 1.0 / (k * (p + 1))
                expect = (2 * np.eye(k) - np.roll(np.eye(k), 1, 1) - np.roll(np.eye(k), -1, 1)) / h
                worst = max(worst, np.abs(red - expect).max())
    verdict(4, worst < 1e-10, f"max deviation from 2/h, -1/h with h=1/(k(p+1)): {worst:.3e}")


def test_criterion_04_condensed_entries_with_element_width():
    worst = 0.0
    for fam in ("closed", "halfclosed"):
        for p in (1, 2, 3):
            for k in range(3, 9):
                m = uniform_interval_mesh(k, periodic=True)
                d = discretize(m, default_switch(m), fam, p)
                red = condense(negated(assemble_ldg_laplacian(d, 0.0)), build_partition(d)).operator.toarray()
                h = 1.0 / k
                expect = (2 * np.eye(k) - np.roll(np.eye(k), 1, 1) - np.roll(np.eye(k), -1, 1)) / h
                worst = max(worst, np.abs(red - expect).max())
    print(f"\ncriterion 4 (element-width form 2/H, -1/H, H=1/k): max deviation {worst:.3e}")
    assert worst < 1e-10


def test_criterion_05_elimination_ratios():
    bad = []
    for d in (1, 2):
        for p in range(1, 8):
            m = uniform_interval_mesh(3) if d == 1 else perturbed_quad_mesh(2, 3, seed=p)
            disc = discretize(m, default_switch(m, p), "halfclosed", p)
            part = build_partition(disc)
            if len(part.dependent) * (p + 1) ** d != p**d * part.n_nodes:
                bad.append((d, p))
            if dependent_nodes_ratio("quad", p, d) != Fraction(p**d, (p + 1) ** d):
                bad.append(("formula", d, p))
    formulas = (dependent_nodes_ratio("quad", 2, 2), dependent_nodes_ratio("tri", 2, 2),
                dependent_nodes_ratio("tet", 1, 3))
    ok = not bad and formulas == (Fraction(4, 9), Fraction(1, 3), Fraction(1, 14))
    verdict(5, ok, f"mismatches={bad} formulas={[str(f) for f in formulas]}")


def test_criterion_06_poisson_1d():
    t0 = time.perf_counter()
    reps = convergence_study(poisson_1d_problem(), 4, ["halfclosed", "closed"], [1, 2, 3], base_elements=8)
    slopes = {(r.family, r.p): r.slope for r in reps}
    ok = all(abs(s - (p + (2 if fam == "halfclosed" else 1))) <= 0.25 for (fam, p), s in slopes.items())
    dt = time.perf_counter() - t0
    verdict(6, ok and dt < 60, " ".join(f"{f}/p{p}={s:.2f}" for (f, p), s in slopes.items()) + f" ({dt:.1f}s)")


def test_criterion_07_advection_1d():
    t0 = time.perf_counter()
    dt_step, levels, base = 1e-5, 8, 8
    slopes, drift = {}, 0.0
    for vel in (-1.0, 1.0):
        for p in (1, 2, 3):
            fine = convergence_study(advection_problem(vel, dt=dt_step), levels, ["halfclosed"], [p],
                                     base_elements=base)[0]
            half = convergence_study(advection_problem(vel, dt=dt_step / 2), levels, ["halfclosed"], [p],
                                     base_elements=base)[0]
            slopes[vel, p] = fine.slope
            drift = max(drift, max(abs(a.error - b.error) / b.error for a, b in zip(fine.runs, half.runs)))
    ok = drift < 0.01
    for p in (1, 2, 3):
        ok &= (slopes[-1.0, p] >= p + 0.7) if p == 1 else abs(slopes[-1.0, p] - (p + 2)) <= 0.3
        ok &= abs(slopes[1.0, p] - (p + 1)) <= 0.3
    dt = time.perf_counter() - t0
    detail = " ".join(f"a={v:+g}/p{p}={s:.2f}" for (v, p), s in slopes.items())
    verdict(7, ok and dt < 300, f"{detail} dt-halving drift={drift:.2e} ({dt:.1f}s)")


def test_criterion_08_poisson_2d():
    t0 = time.perf_counter()
    reps = convergence_study(poisson_2d_problem(), 4, ["halfclosed", "closed"], [1, 2], base_mesh=bundled_mesh())
    slopes = {(r.family, r.p): r.slope for r in reps}
    ok = all(s >= p + 1.6 if fam == "halfclosed" else abs(s - (p + 1)) <= 0.3 for (fam, p), s in slopes.items())
    dt = time.perf_counter() - t0
    verdict(8, ok and dt < 300, " ".join(f"{f}/p{p}={s:.2f}" for (f, p), s in slopes.items()) + f" ({dt:.1f}s)")


def test_criterion_09_spectral_invariance():
    cases = [(uniform_interval_mesh(4, periodic=True), 2), (uniform_interval_mesh(16), 3),
             (cartesian_quad_mesh(4, 4, periodic=True), 2), (perturbed_quad_mesh(4, 4, seed=1), 3),
             (bundled_mesh(), 3), (refine_uniform(bundled_mesh()), 3)]
    worst = 0.0
    for m, p in cases:
        rep = spectral_equivalence_check(m, p, default_switch(m), default_penalty(m))
        assert len(rep.closed) <= 2000
        worst = max(worst, rep.max_deviation)
    verdict(9, worst < 1e-8, f"max eigenvalue deviation {worst:.2e} over {len(cases)} systems")


def test_criterion_10_condensed_preconditioning():
    m = refine_uniform(bundled_mesh())
    disc = discretize(m, assign_switch_quad(m), "halfclosed", 2)
    a = negated(assemble_ldg_laplacian(disc, default_penalty(m)))
    part = build_partition(disc)
    cs = condense(a, part)
    b = np.random.default_rng(0).standard_normal(disc.n_nodes)
    ok, parts = True, []
    for kind in (PreconditionerKind.BLOCK_JACOBI, PreconditionerKind.BLOCK_GAUSS_SEIDEL):
        z_full = int(np.sum(np.abs(iteration_spectrum(a, kind)) < 1e-12))
        z_cond = int(np.sum(np.abs(iteration_spectrum(a, kind, part)) < 1e-12))

        def iterations(op, rhs):
            try:
                res = stationary_iterate(op, build_preconditioner(op, kind), rhs, max_iters=5000)
            except Diverged:
                return np.inf
            return res.iterations if res.converged else np.inf

        n_full = iterations(a, b)
        n_cond = iterations(cs.operator, cs.reduce_rhs(b))
        ok &= z_cond >= len(part.dependent) and z_cond > z_full and n_cond <= n_full and np.isfinite(n_cond)
        parts.append(f"{kind.value}: zeros {z_full}->{z_cond} iterations {n_full}->{n_cond}")
    verdict(10, ok, f"|dependent|={len(part.dependent)}; " + "; ".join(parts))


def _small_meshes():
    yield uniform_interval_mesh(1)
    yield uniform_interval_mesh(3, (0.0, 2.0))
    yield uniform_interval_mesh(4, periodic=True)
    yield cartesian_quad_mesh(1, 1)
    yield cartesian_quad_mesh(2, 1, ((0.0, 2.0), (0.0, 1.0)))
    yield cartesian_quad_mesh(2, 2)
    yield cartesian_quad_mesh(4, 1, ((0.0, 2.0), (0.0, 0.5)))


def test_criterion_11_oracle_equivalence():
    worst_op, worst_solve = 0.0, 0.0
    rel = lambda x, y: np.abs(x - y).max() / max(1.0, np.abs(y).max())
    for m in _small_meshes():
        for fam in ("closed", "open", "halfclosed"):
            for p in (1, 2):
                for seed in (0, 1):
                    d = discretize(m, default_switch(m, seed), fam, p)
                    ref = Reference(d)
                    mode = QuadratureMode.EXACT
                    worst_op = max(worst_op, rel(assemble_mass(d, mode).toarray(), ref.mass()))
                    for k in range(m.dim):
                        for kind, label in ((FluxKind.UPWIND_BY_SWITCH, "switch"), (FluxKind.CENTRAL, "central")):
                            worst_op = max(worst_op, rel(assemble_divergence(d, FluxSpec(kind), k, mode).toarray(),
                                                         ref.first_order(k, label)))
                            worst_op = max(worst_op, rel(assemble_gradient(d, FluxSpec(kind), k, mode).toarray(),
                                                         ref.first_order(k, label, gradient=True)))
                    lap = assemble_ldg_laplacian(d, 5.0, mode)
                    worst_op = max(worst_op, rel(lap.toarray(), ref.laplacian(5.0)))
                    if fam != "open" and not any(f.periodic for f in m.faces):
                        a = negated(lap)
                        b = np.random.default_rng(seed).standard_normal(d.n_nodes)
                        u = np.linalg.solve(a.toarray(), b)
                        worst_solve = max(worst_solve, np.abs(condense(a, build_partition(d)).solve(b) - u).max()
                                          / np.abs(u).max())
    verdict(11, worst_op < 1e-12 and worst_solve < 1e-9,
            f"operator deviation {worst_op:.2e}, condensed solve deviation {worst_solve:.2e}")
