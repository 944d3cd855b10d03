"""
Command-line front end.

Every subcommand is deterministic given its flags.  Exit codes: 0 on
success, 1 on a runtime error, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .errors import HCDGError
from .layout import discretize
from .mesh import (bundled_mesh, cartesian_quad_mesh, load_mesh, perturbed_quad_mesh, refine_uniform,
                   uniform_interval_mesh)
from .operators import (FluxKind, FluxSpec, QuadratureMode, assemble_divergence, assemble_gradient,
                        assemble_ldg_laplacian, assemble_mass, pattern_report, spectral_equivalence_check)
from .quadrature import Kind, NodeFamily, Side, make_basis
from .solvers import PreconditionerKind, build_partition, condense, iteration_spectrum, spectrum_csv
from .switch import dependent_nodes_ratio, validate_switch

FAMILIES = ("closed", "open", "halfclosed")


class UsageError(Exception):
    pass


def parse_mesh(spec: str):
    """Builtin mesh spec or a mesh file path.

    Builtins: ``interval:K[:periodic]``, ``cartesian:NxM[:periodic]``,
    ``perturbed:NxM[:SEED]``, ``unstructured[:R]`` (bundled mesh refined
    ``R`` times).
    """
    head, _, rest = spec.partition(":")
    opts = rest.split(":") if rest else []
    try:
        if head == "interval":
            return uniform_interval_mesh(int(opts[0]), periodic="periodic" in opts[1:])
        if head == "cartesian":
            nx, ny = (int(v) for v in opts[0].lower().split("x"))
            return cartesian_quad_mesh(nx, ny, periodic="periodic" in opts[1:])
        if head == "perturbed":
            nx, ny = (int(v) for v in opts[0].lower().split("x"))
            return perturbed_quad_mesh(nx, ny, seed=int(opts[1]) if len(opts) > 1 else 0)
        if head == "unstructured":
            mesh = bundled_mesh()
            for _ in range(int(opts[0]) if opts else 0):
                mesh = refine_uniform(mesh)
            return mesh
    except (IndexError, ValueError) as exc:
        raise UsageError(f"bad mesh spec {spec!r}: {exc}") from None
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"mesh {spec!r} is neither a builtin spec nor an existing file")
    return load_mesh(path)


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _setup(args):
    mesh = parse_mesh(args.mesh)
    switch = harness.default_switch(mesh, args.seed)
    disc = discretize(mesh, switch, args.family, args.p)
    return mesh, switch, disc


def _penalty(args, mesh):
    return harness.default_penalty(mesh) if args.penalty is None else args.penalty


def _mode(args):
    return QuadratureMode.EXACT if args.quadrature == "exact" else QuadratureMode.COLLOCATION


def _flux(args):
    return FluxSpec({
        "switch": FluxKind.UPWIND_BY_SWITCH, "central": FluxKind.CENTRAL,
        "right": FluxKind.TAKE_RIGHT, "left": FluxKind.TAKE_LEFT,
    }[args.flux])


def _operator(args, disc):
    mode = _mode(args)
    _check_dim(args, disc.mesh)
    if args.operator == "mass":
        return assemble_mass(disc, mode)
    if args.operator == "divergence":
        return assemble_divergence(disc, _flux(args), args.dim, mode)
    if args.operator == "gradient":
        return assemble_gradient(disc, _flux(args), args.dim, mode)
    return assemble_ldg_laplacian(disc, _penalty(args, disc.mesh), mode)


def _check_dim(args, mesh):
    if not 0 <= args.dim < mesh.dim:
        raise UsageError(f"--dim must lie in [0, {mesh.dim})")


def cmd_nodes(args):
    fam = NodeFamily.parse(args.family)
    if fam.kind is Kind.RADAU:
        fam = NodeFamily(Kind.RADAU, Side(args.side))
    basis = make_basis(fam, args.p)
    lines = ["index,node,weight"]
    lines += [f"{i},{x:.16e},{w:.16e}" for i, (x, w) in enumerate(zip(basis.nodes, basis.weights))]
    _emit("\n".join(lines) + "\n", args.out)


def cmd_assemble(args):
    _, _, disc = _setup(args)
    _emit(_operator(args, disc).to_matrix_market(), args.out)


def cmd_sparsity(args):
    _, _, disc = _setup(args)
    rep = pattern_report(_operator(args, disc))
    _emit("\n".join(rep.lines()) + "\n", args.out)


def cmd_condense(args):
    mesh, switch, disc = _setup(args)
    lap = assemble_ldg_laplacian(disc, _penalty(args, mesh), _mode(args))
    part = build_partition(disc)
    cs = condense(lap, part)
    lines = [
        f"nodes {part.n_nodes}",
        f"independent {len(part.independent)}",
        f"dependent {len(part.dependent)}",
        f"dependent_fraction {len(part.dependent)}/{part.n_nodes}",
        f"reduced_nnz {cs.operator.nnz}",
    ]
    lines.append(f"quad_formula {dependent_nodes_ratio('quad', args.p, mesh.dim)}")
    if not validate_switch(mesh, switch).valid:
        lines.append("warning switch violates the validity rules")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(cs.operator.to_matrix_market(), encoding="utf-8")
    sys.stdout.write(text)


def cmd_spectrum(args):
    mesh, switch, disc = _setup(args)
    if args.equivalence:
        rep = spectral_equivalence_check(mesh, args.p, switch, _penalty(args, mesh))
        _emit(f"max_deviation {rep.max_deviation:.3e}\nrelative_deviation {rep.relative_deviation:.3e}\n"
              f"eigenvalues {len(rep.closed)}\n", args.out)
        return
    a = assemble_ldg_laplacian(disc, _penalty(args, mesh), _mode(args))
    neg = type(a)(-a.matrix, a.block_index, a.symmetry_hint)
    part = build_partition(disc) if args.condensed else None
    ev = iteration_spectrum(neg, PreconditionerKind(args.preconditioner), part)
    _emit(spectrum_csv(ev), args.out)


def cmd_solve(args):
    spec = _problem(args)
    mesh = parse_mesh(args.mesh)
    if spec.equation == "advection":
        if mesh.dim != 1 or not any(f.periodic for f in mesh.faces):
            raise UsageError("advection needs a periodic interval mesh")
        run = harness.run_advection_1d(spec, mesh.num_elements, args.family, args.p)
    else:
        run = harness.run_poisson(spec, mesh, args.family, args.p, args.seed, condensed=args.condensed)
    _emit(f"elements {run.elements}\nh {run.h:.10e}\nerror {run.error:.10e}\n", args.out)


def _problem(args):
    if args.problem == "poisson1d":
        return harness.poisson_1d_problem()
    if args.problem == "poisson2d":
        return harness.poisson_2d_problem()
    return harness.advection_problem(args.velocity, dt=args.dt)


def cmd_study(args):
    spec = _problem(args)
    families = [args.family] if args.family else ["halfclosed", "closed"]
    degrees = [int(v) for v in str(args.p).split(",")]
    base = parse_mesh(args.mesh) if args.mesh else None
    reports = harness.convergence_study(spec, args.levels, families, degrees, base_mesh=base, seed=args.seed,
                                        base_elements=args.base_elements)
    _emit(harness.report_csv(reports), args.out)


def _add_common(sp, mesh_default="interval:4", family_default="halfclosed", p_type=int):
    sp.add_argument("--mesh", default=mesh_default, help="mesh file or builtin spec")
    sp.add_argument("--family", choices=FAMILIES, default=family_default)
    sp.add_argument("--p", type=p_type, default=1 if p_type is int else "1")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="output path (default: stdout)")


def _add_operator_flags(sp):
    sp.add_argument("--operator", choices=("mass", "divergence", "gradient", "laplacian"), default="laplacian")
    sp.add_argument("--dim", type=int, default=0, help="derivative direction")
    sp.add_argument("--flux", choices=("switch", "central", "right", "left"), default="switch")
    sp.add_argument("--penalty", type=float, default=None, help="Dirichlet penalty C_D (default 10/h)")
    sp.add_argument("--quadrature", choices=("collocation", "exact"), default="collocation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hcdg", description="Half-closed nodal DG toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("nodes", help="print a 1D node/weight table")
    _add_common(sp)
    sp.add_argument("--side", choices=("left", "right"), default="left", help="closed end of Radau nodes")
    sp.set_defaults(func=cmd_nodes)

    sp = sub.add_parser("assemble", help="assemble an operator and export it in matrix-market format")
    _add_common(sp)
    _add_operator_flags(sp)
    sp.set_defaults(func=cmd_assemble)

    sp = sub.add_parser("sparsity", help="nnz, block occupancy and pattern hash of an operator")
    _add_common(sp)
    _add_operator_flags(sp)
    sp.set_defaults(func=cmd_sparsity)

    sp = sub.add_parser("condense", help="switch-driven static condensation of the LDG Laplacian")
    _add_common(sp)
    _add_operator_flags(sp)
    sp.set_defaults(func=cmd_condense)

    sp = sub.add_parser("spectrum", help="block-preconditioned iteration spectrum (CSV)")
    _add_common(sp)
    _add_operator_flags(sp)
    sp.add_argument("--preconditioner", choices=[k.value for k in PreconditionerKind], default="jacobi")
    sp.add_argument("--condensed", action="store_true", help="precondition after static condensation")
    sp.add_argument("--equivalence", action="store_true",
                    help="compare Laplacian spectra of closed and half-closed bases instead")
    sp.set_defaults(func=cmd_spectrum)

    for name, helptext in (("solve", "solve one problem and print its discrete L2 error"),
                           ("study", "convergence study; CSV family,p,level,elements,h,error,slope")):
        sp = sub.add_parser(name, help=helptext)
        if name == "solve":
            _add_common(sp)
            sp.add_argument("--condensed", action="store_true")
            sp.set_defaults(func=cmd_solve)
        else:
            _add_common(sp, mesh_default=None, family_default=None, p_type=str)
            sp.add_argument("--levels", type=int, default=4)
            sp.add_argument("--base-elements", type=int, default=8, help="1D elements at level 0")
            sp.set_defaults(func=cmd_study)
        sp.add_argument("--problem", choices=("poisson1d", "poisson2d", "advection"), default="poisson1d")
        sp.add_argument("--velocity", type=float, default=1.0)
        sp.add_argument("--dt", type=float, default=None, help="advection time step (default 0.1 h/|velocity|)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hcdg: error: {exc}", file=sys.stderr)
        return 2
    except (HCDGError, ValueError, OSError) as exc:
        print(f"hcdg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
