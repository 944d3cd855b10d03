import csv
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcdg.errors import InvalidDomain, ReportTooShort, SingularSystem, UnstableRun
from hcdg.harness import (ProblemSpec, advection_problem, convergence_study, default_penalty, default_switch,
                          discrete_l2_error, fit_slope, poisson_1d_problem, poisson_2d_problem, report_csv,
                          run_advection_1d, run_poisson, solve_poisson)
from hcdg.layout import discretize, node_measures, physical_node_coords
from hcdg.mesh import NEUMANN, bundled_mesh, cartesian_quad_mesh, connect_quads, perturbed_quad_mesh, \
    uniform_interval_mesh


def polynomial_problem(dim, p):
    """u = sum of monomials of degree <= p per variable, with forcing and gradient."""
    if dim == 1:
        c = np.arange(1.0, p + 2)

        def exact(x):
            return sum(ci * x[:, 0] ** i for i, ci in enumerate(c))

        def forcing(x):
            return -sum(ci * i * (i - 1) * x[:, 0] ** max(i - 2, 0) for i, ci in enumerate(c) if i >= 2) \
                + 0 * x[:, 0]

        def gradient(x):
            return (sum(ci * i * x[:, 0] ** (i - 1) for i, ci in enumerate(c) if i >= 1) + 0 * x[:, 0])[:, None]
    else:
        def exact(x):
            return x[:, 0] ** p * x[:, 1] + x[:, 1] ** p - 0.5 * x[:, 0]

        def forcing(x):
            lap = p * (p - 1) * (x[:, 0] ** max(p - 2, 0) * x[:, 1] + x[:, 1] ** max(p - 2, 0))
            return -lap

        def gradient(x):
            return np.stack([p * x[:, 0] ** (p - 1) * x[:, 1] - 0.5,
                             x[:, 0] ** p + p * x[:, 1] ** (p - 1)], axis=1)
    return ProblemSpec("poisson", dim, exact, forcing, gradient, name="poly")


def test_l2_error_examples():
    m = uniform_interval_mesh(5)
    d = discretize(m, default_switch(m), "halfclosed", 3)
    x = physical_node_coords(m, d.layouts)
    f = lambda y: np.sin(3 * y[:, 0])
    assert discrete_l2_error(f(x), f, m, d.layouts) < 1e-14
    assert abs(discrete_l2_error(f(x) + 0.7, f, m, d.layouts) - 0.7) < 1e-12


@given(st.integers(0, 1000), st.sampled_from(["closed", "open", "halfclosed"]), st.integers(1, 4))
def test_l2_error_bounded_by_unweighted_rms(seed, fam, p):
    m = perturbed_quad_mesh(2, 2, seed=seed % 20)
    d = discretize(m, default_switch(m, seed), fam, p)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d.n_nodes)
    zero = lambda y: np.zeros(len(y))
    w = node_measures(m, d.layouts)
    err = discrete_l2_error(u, zero, m, d.layouts)
    rms = np.sqrt(np.mean(u**2))
    scale = np.sqrt(w.sum())
    assert np.sqrt(w.min() / w.mean()) * rms * scale <= err * (1 + 1e-12)
    assert err <= np.sqrt(w.max() / w.mean()) * rms * scale * (1 + 1e-12)


@pytest.mark.parametrize("fam", ["closed", "open", "halfclosed"])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_polynomial_solutions_are_reproduced(fam, p):
    for m in (uniform_interval_mesh(4, (0.0, 2.0)), cartesian_quad_mesh(3, 2, ((0.0, 1.5), (-1.0, 1.0)))):
        spec = polynomial_problem(m.dim, p)
        d = discretize(m, default_switch(m), fam, p)
        u = solve_poisson(d, spec)
        x = physical_node_coords(m, d.layouts)
        assert np.abs(u - spec.exact(x)).max() < 1e-10


def test_polynomial_solution_with_neumann_face():
    v = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]], float)
    m = connect_quads(v, [[0, 1, 4, 3], [1, 2, 5, 4]], {frozenset((2, 5)): NEUMANN, frozenset((0, 1)): NEUMANN})
    spec = polynomial_problem(2, 2)
    for seed in range(4):
        d = discretize(m, default_switch(m, seed), "halfclosed", 2)
        u = solve_poisson(d, spec)
        assert np.abs(u - spec.exact(physical_node_coords(m, d.layouts))).max() < 1e-10


@given(st.integers(0, 10**4), st.sampled_from(["closed", "halfclosed"]), st.integers(1, 3))
def test_condensed_path_matches_full_solve(seed, fam, p):
    m = perturbed_quad_mesh(3, 2, seed=seed % 11) if seed % 2 else uniform_interval_mesh(4 + seed % 4)
    spec = poisson_2d_problem() if m.dim == 2 else poisson_1d_problem()
    full = run_poisson(spec, m, fam, p, seed, refine=0)
    cond = run_poisson(spec, m, fam, p, seed, condensed=True, refine=0)
    assert np.abs(full.solution - cond.solution).max() < 1e-9 * np.abs(full.solution).max()


def test_refinement_keeps_solution():
    m = uniform_interval_mesh(16)
    spec = poisson_1d_problem()
    a = run_poisson(spec, m, "halfclosed", 3, refine=0)
    b = run_poisson(spec, m, "halfclosed", 3)
    assert np.abs(a.solution - b.solution).max() < 1e-9
    assert b.error <= a.error * 1.01


def test_all_neumann_is_singular():
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    edges = [(0, 1), (1, 2), (2, 3), (3, 0)]
    m = connect_quads(v, [[0, 1, 2, 3]], {frozenset(e): NEUMANN for e in edges})
    with pytest.raises(SingularSystem):
        run_poisson(poisson_2d_problem(), m, "halfclosed", 1)


def test_default_penalty():
    assert default_penalty(uniform_interval_mesh(8)) == pytest.approx(80.0)
    assert default_penalty(cartesian_quad_mesh(4, 2, ((0.0, 2.0), (0.0, 1.0)))) == pytest.approx(20.0)


def test_fit_slope():
    h = np.array([1, 0.5, 0.25, 0.125])
    assert fit_slope(h, 3 * h**4) == pytest.approx(4.0)
    assert fit_slope(h, np.r_[1.0, 3 * h[1:] ** 2]) == pytest.approx(2.0)
    with pytest.raises(ReportTooShort):
        fit_slope([0.1], [1.0])


def test_study_needs_levels():
    with pytest.raises(ReportTooShort):
        convergence_study(poisson_1d_problem(), 1, ["halfclosed"], [1])


def test_study_csv_schema():
    reps = convergence_study(poisson_1d_problem(), 3, ["halfclosed", "closed"], [1, 2])
    rows = list(csv.reader(io.StringIO(report_csv(reps))))
    assert rows[0] == ["family", "p", "level", "elements", "h", "error", "slope"]
    assert len(rows) == 1 + 4 * 3
    assert [r[3] for r in rows[1:4]] == ["8", "16", "32"]
    slopes = {(r[0], r[1]): float(r[6]) for r in rows[1:] if r[6]}
    assert len(slopes) == 4
    for (fam, p), s in slopes.items():
        target = int(p) + (2 if fam == "halfclosed" else 1)
        assert abs(s - target) < 0.5
    assert all(float(r[5]) > 0 for r in rows[1:])


def test_advection_rejects_zero_velocity():
    with pytest.raises(InvalidDomain):
        run_advection_1d(advection_problem(0.0), 8, "halfclosed", 1)


def test_advection_unstable_step():
    with pytest.raises(UnstableRun):
        run_advection_1d(advection_problem(1.0, dt=0.05), 32, "halfclosed", 3, dtype=np.float64)


def test_advection_time_step_halving():
    for vel in (-1.0, 1.0):
        a = run_advection_1d(advection_problem(vel, dt=1e-3), 16, "halfclosed", 2)
        b = run_advection_1d(advection_problem(vel, dt=5e-4), 16, "halfclosed", 2)
        assert abs(a.error - b.error) < 0.01 * b.error


def test_advection_generic_path_matches_fourier_path():
    spec = advection_problem(-1.0, final_time=0.05, dt=1e-3)
    from hcdg.harness import advection_operator, rk4_evolve
    m = uniform_interval_mesh(6, periodic=True)
    d = discretize(m, default_switch(m), "halfclosed", 2)
    a = advection_operator(d, -1.0)
    u0 = np.random.default_rng(2).standard_normal(d.n_nodes)
    np.testing.assert_allclose(rk4_evolve(a, u0, 1e-3, 50, 6), rk4_evolve(a, u0, 1e-3, 50), atol=1e-12)
    assert run_advection_1d(spec, 6, "halfclosed", 2).error > 0


def test_advection_direction_changes_slope():
    slopes = {}
    for vel in (-1.0, 1.0):
        rep = convergence_study(advection_problem(vel, dt=1e-4), 3, ["halfclosed"], [2], base_elements=32)[0]
        slopes[vel] = rep.slope
    assert 0.7 < slopes[-1.0] - slopes[1.0] < 2.0


def test_bundled_mesh_poisson_runs():
    run = run_poisson(poisson_2d_problem(), bundled_mesh(), "halfclosed", 1)
    assert 0 < run.error < 1e-2 and run.elements == 21
