"""Experiment runner: solves a configured problem over a mesh sequence and
writes convergence CSV reports.

Outputs in the chosen directory:
  errors.csv         convergence history (analysis.CSV_HEADER schema)
  meshinfo.csv       level,triangles,vertices,ndof  (ndof = free DOFs)
  newton_<level>.csv semismooth Newton history, HJB experiments only

Exit codes: 0 success, 1 usage/config error, 2 solver failure,
3 invariant violation (mesh alignment or Cordes check).
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .mesh import uniform_rect_mesh, graded_mesh_sequence
from .fespace import build_space
from .problems import (
    CordesViolationError,
    ExactSolution,
    NondivProblem,
    exp1,
    exp2,
    exp3,
    exp4,
)
from .forms import MeshAlignmentError
from .analysis import ErrorReport, error_norms
from .solvers import SingularMatrixError, semismooth_newton, solve_nondiv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVE = 2
EXIT_INVARIANT = 3

EXPERIMENTS = ("exp1", "exp2", "exp3", "exp4", "custom")

# default uniform subdivision counts per (experiment, degree)
DEFAULT_LEVELS = {
    ("exp1", 3): (4, 8, 16, 32, 64),
    ("exp1", 4): (2, 4, 8, 16, 32),
    ("exp2", 3): (8, 16, 32, 64, 128),
    ("exp2", 4): (4, 8, 16, 32, 64),
    ("exp3", 3): (4, 8, 16, 32),
    ("exp3", 4): (2, 4, 8, 16),
    ("custom", 3): (4, 8, 16, 32),
    ("custom", 4): (2, 4, 8, 16),
}
DEFAULT_GRADED_LEVELS = 14


class UsageError(ValueError):
    """Bad flags or configuration; reported with exit code 1."""


@dataclass
class RunConfig:
    """Validated description of one experiment run."""

    experiment: str
    degree: int = 3
    levels: tuple = None
    tol: float = 1e-8
    max_iter: int = 30
    out: str = "."
    eps_tilde: float = None
    grading_constant: float = 120.0
    custom: dict = field(default_factory=dict)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise UsageError("unknown experiment %r (choose from %s)"
                             % (self.experiment, ", ".join(EXPERIMENTS)))
        if self.degree not in (3, 4):
            raise UsageError("degree must be 3 or 4")
        if self.levels is None:
            if self.experiment == "exp4":
                self.levels = DEFAULT_GRADED_LEVELS
            else:
                self.levels = DEFAULT_LEVELS[(self.experiment, self.degree)]
        if self.experiment == "exp4":
            if not isinstance(self.levels, int):
                if len(self.levels) != 1:
                    raise UsageError("exp4 takes a single level count")
                self.levels = int(self.levels[0])
            if self.levels < 1:
                raise UsageError("level count must be positive")
            if self.grading_constant <= 0:
                raise UsageError("grading constant must be positive")
        else:
            levels = tuple(int(n) for n in self.levels)
            if not levels or any(n < 1 for n in levels):
                raise UsageError("levels must be positive subdivision counts")
            if any(b <= a for a, b in zip(levels, levels[1:])):
                raise UsageError("levels must be strictly increasing")
            self.levels = levels
        if not self.tol > 0:
            raise UsageError("tol must be positive")
        if self.max_iter < 1:
            raise UsageError("max-iter must be at least 1")
        if self.eps_tilde is not None:
            if not 0.0 <= self.eps_tilde <= 1.0:
                raise UsageError("eps-tilde must lie in [0, 1]")
            if self.experiment in ("exp3", "exp4"):
                raise UsageError("eps-tilde applies to linear experiments only")
        if self.experiment == "custom" and not self.custom:
            raise UsageError("custom experiment requires a 'custom' config block")
        return self


def custom_problem(spec):
    """Constant-coefficient problem from a config mapping with keys
    A (2x2), optional b (2), c, lam, epsilon, domain [[x0,y0],[x1,y1]].

    The right-hand side is manufactured so the exact solution is
    sin(pi s1) sin(pi s2) in coordinates scaled to the domain, which makes
    errors.csv meaningful for any admissible coefficients.  A missing
    epsilon is filled in from the sharp Cordes constant of the
    coefficients.
    """
    try:
        A0 = np.asarray(spec["A"], dtype=float).reshape(2, 2)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError("custom problem needs a 2x2 matrix 'A': %s" % exc)
    if abs(A0[0, 1] - A0[1, 0]) > 1e-12:
        raise UsageError("custom 'A' must be symmetric")
    b0 = np.asarray(spec.get("b", (0.0, 0.0)), dtype=float).reshape(2)
    c0 = float(spec.get("c", 0.0))
    lam = float(spec.get("lam", 0.0))
    domain = spec.get("domain", ((0.0, 0.0), (1.0, 1.0)))
    lo = np.asarray(domain[0], dtype=float)
    hi = np.asarray(domain[1], dtype=float)
    if not np.all(hi > lo):
        raise UsageError("custom domain must have positive side lengths")
    if lam == 0.0 and (np.any(b0 != 0.0) or c0 != 0.0):
        raise UsageError("custom b/c terms require lam > 0")

    tr = A0[0, 0] + A0[1, 1]
    frob2 = float((A0 * A0).sum())
    if lam == 0.0:
        eps_sharp = tr * tr / frob2 - 1.0
    else:
        eps_sharp = (tr + c0 / lam) ** 2 / (
            frob2 + (b0 @ b0) / (2.0 * lam) + (c0 / lam) ** 2
        ) - 2.0
    if eps_sharp <= 0:
        raise CordesViolationError(
            "custom coefficients violate the Cordes condition"
        )
    epsilon = float(spec.get("epsilon", min(1.0, eps_sharp)))
    if epsilon > eps_sharp + 1e-12:
        raise UsageError(
            "custom epsilon %g exceeds the sharp Cordes constant %g"
            % (epsilon, eps_sharp)
        )

    size = hi - lo
    w = np.pi / size

    def u_ex(p):
        p = np.atleast_2d(p)
        return np.sin(w[0] * (p[:, 0] - lo[0])) * np.sin(w[1] * (p[:, 1] - lo[1]))

    def grad_ex(p):
        p = np.atleast_2d(p)
        s1 = np.sin(w[0] * (p[:, 0] - lo[0]))
        c1 = np.cos(w[0] * (p[:, 0] - lo[0]))
        s2 = np.sin(w[1] * (p[:, 1] - lo[1]))
        c2 = np.cos(w[1] * (p[:, 1] - lo[1]))
        return np.column_stack([w[0] * c1 * s2, w[1] * s1 * c2])

    def hess_ex(p):
        p = np.atleast_2d(p)
        s1 = np.sin(w[0] * (p[:, 0] - lo[0]))
        c1 = np.cos(w[0] * (p[:, 0] - lo[0]))
        s2 = np.sin(w[1] * (p[:, 1] - lo[1]))
        c2 = np.cos(w[1] * (p[:, 1] - lo[1]))
        H = np.empty((len(p), 2, 2))
        H[:, 0, 0] = -w[0] * w[0] * s1 * s2
        H[:, 0, 1] = H[:, 1, 0] = w[0] * w[1] * c1 * c2
        H[:, 1, 1] = -w[1] * w[1] * s1 * s2
        return H

    exact = ExactSolution(u_ex, grad_ex, hess_ex)

    def A_fn(p):
        return np.broadcast_to(A0, (len(np.atleast_2d(p)), 2, 2)).copy()

    def f_fn(p):
        H = hess_ex(p)
        val = np.einsum("ij,nij->n", A0, H)
        if lam > 0.0:
            val += grad_ex(p) @ b0 - c0 * u_ex(p)
        return val

    b_fn = (lambda p: np.broadcast_to(b0, (len(np.atleast_2d(p)), 2)).copy()) \
        if lam > 0.0 else None
    c_fn = (lambda p: np.full(len(np.atleast_2d(p)), c0)) if lam > 0.0 else None

    return NondivProblem(
        A=A_fn, f=f_fn, epsilon=epsilon, b=b_fn, c=c_fn, lam=lam,
        exact=exact, domain=(tuple(lo), tuple(hi)), name="custom",
    )


def _write_meshinfo(path, rows):
    with open(path, "w") as fh:
        fh.write("level,triangles,vertices,ndof\n")
        for level, mesh, space in rows:
            fh.write("%d,%d,%d,%d\n"
                     % (level, mesh.n_triangles, len(mesh.vertices), space.n_free))


def _run_linear(config, problem):
    report = ErrorReport()
    info = []
    for level, n in enumerate(config.levels):
        mesh = uniform_rect_mesh(n, lo=problem.domain[0], hi=problem.domain[1])
        space = build_space(mesh, config.degree)
        coeffs = solve_nondiv(space, problem, eps_tilde=config.eps_tilde)
        report.add_row(mesh.h, space.n_free,
                       error_norms(space, coeffs, problem.exact, lam=problem.lam))
        info.append((level, mesh, space))
        print("level %d: n=%d ndof=%d" % (level, n, space.n_free))
    report.to_csv(os.path.join(config.out, "errors.csv"))
    _write_meshinfo(os.path.join(config.out, "meshinfo.csv"), info)
    return EXIT_OK


def _run_hjb(config, hjb, meshes=None, graded=False):
    if meshes is None:
        meshes = [
            uniform_rect_mesh(n, lo=hjb.domain[0], hi=hjb.domain[1])
            for n in config.levels
        ]
    report = ErrorReport(graded=graded)
    info = []
    for level, mesh in enumerate(meshes):
        space = build_space(mesh, config.degree)
        coeffs, history = semismooth_newton(
            space, hjb, tol=config.tol, max_iter=config.max_iter
        )
        history.to_csv(os.path.join(config.out, "newton_%d.csv" % level))
        if not history.converged:
            print(
                "error: Newton did not reach tol %g in %d iterations at level %d"
                % (config.tol, config.max_iter, level),
                file=sys.stderr,
            )
            return EXIT_SOLVE
        report.add_row(mesh.h, space.n_free,
                       error_norms(space, coeffs, hjb.exact, lam=hjb.lam))
        info.append((level, mesh, space))
        print("level %d: ndof=%d newton_iters=%d"
              % (level, space.n_free, history.iterations))
    report.to_csv(os.path.join(config.out, "errors.csv"))
    _write_meshinfo(os.path.join(config.out, "meshinfo.csv"), info)
    return EXIT_OK


def run_experiment(config):
    """Execute a validated RunConfig; returns a process exit code."""
    try:
        config.validate()
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        os.makedirs(config.out, exist_ok=True)
        if config.experiment == "exp1":
            return _run_linear(config, exp1())
        if config.experiment == "exp2":
            return _run_linear(config, exp2())
        if config.experiment == "custom":
            return _run_linear(config, custom_problem(config.custom))
        if config.experiment == "exp3":
            return _run_hjb(config, exp3())
        meshes = graded_mesh_sequence(config.levels, config.grading_constant)
        return _run_hjb(config, exp4(), meshes=meshes, graded=True)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (MeshAlignmentError, CordesViolationError) as exc:
        print("invariant violation: %s" % exc, file=sys.stderr)
        return EXIT_INVARIANT
    except SingularMatrixError as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return EXIT_SOLVE


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through UsageError
    # so usage problems consistently exit 1
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(
        prog="cordesfem",
        description="Run a built-in or custom convergence experiment.",
    )
    parser.add_argument("--experiment", help="exp1|exp2|exp3|exp4|custom")
    parser.add_argument("--degree", type=int, help="polynomial degree (3 or 4)")
    parser.add_argument(
        "--levels",
        help="comma-separated subdivisions (uniform) or one count (exp4)",
    )
    parser.add_argument("--tol", type=float, help="Newton stopping tolerance")
    parser.add_argument("--max-iter", type=int, help="Newton iteration cap")
    parser.add_argument("--out", help="output directory (default: .)")
    parser.add_argument(
        "--eps-tilde", type=float,
        help="face-term coefficient override 2-sqrt(1-eps_tilde)",
    )
    parser.add_argument("--config", help="JSON file with the same keys as the flags")
    return parser


_CONFIG_KEYS = {
    "experiment", "degree", "levels", "tol", "max_iter", "out",
    "eps_tilde", "grading_constant", "custom",
}


def _config_from_args(args):
    data = {}
    if args.config is not None:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError("cannot read config file: %s" % exc)
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise UsageError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    for key in ("experiment", "degree", "tol", "max_iter", "out", "eps_tilde"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.levels is not None:
        try:
            data["levels"] = [int(tok) for tok in args.levels.split(",") if tok]
        except ValueError:
            raise UsageError("levels must be comma-separated integers")
    if "experiment" not in data:
        raise UsageError("an experiment must be selected (--experiment)")
    return RunConfig(**data)


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _config_from_args(args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
