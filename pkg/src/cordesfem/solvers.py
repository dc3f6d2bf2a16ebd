"""Linear solves and the semismooth Newton iteration for HJB problems."""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .forms import (
    VolumeCache,
    FaceTermCache,
    assemble_nondiv_system,
    assemble_hjb_linearization,
    hjb_residual,
)
from .problems import hamiltonian_argmax
from .analysis import lambda_norm


class SingularMatrixError(RuntimeError):
    """Raised when the sparse factorization fails or the solution does
    not satisfy the residual acceptance bound."""


def sparse_lu_solve(matrix, rhs):
    """Direct sparse LU solve with one step of iterative refinement.

    Raises SingularMatrixError unless
    ||Ax - b||_inf <= 1e-10 (||A||_inf ||x||_inf + ||b||_inf).
    """
    csc = matrix.tocsc()
    try:
        lu = splu(csc)
        x = lu.solve(rhs)
        if np.all(np.isfinite(x)):
            x = x + lu.solve(rhs - matrix @ x)
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("factorization produced non-finite values")
    norm_a = np.abs(matrix).sum(axis=1).max()
    bound = 1e-10 * (norm_a * np.abs(x).max() + np.abs(rhs).max())
    resid = np.abs(matrix @ x - rhs).max()
    if resid > bound:
        raise SingularMatrixError(
            "linear solve residual %g exceeds bound %g" % (resid, bound)
        )
    return x


def solve_nondiv(space, problem, eps_tilde=None, vol=None, face=None):
    """Assemble and solve a linear non-divergence problem; returns the
    full coefficient vector (zeros in constrained slots)."""
    system = assemble_nondiv_system(space, problem, eps_tilde=eps_tilde,
                                    vol=vol, face=face)
    return system.expand(sparse_lu_solve(system.matrix, system.rhs))


@dataclass
class NewtonHistory:
    """Per-iteration record of the semismooth Newton loop."""

    converged: bool = False
    rows: list = field(default_factory=list)

    def add_row(self, iteration, increment_norm, residual_norm, controls_changed):
        self.rows.append(
            {
                "iteration": int(iteration),
                "increment_norm": float(increment_norm),
                "residual_norm": float(residual_norm),
                "controls_changed": int(controls_changed),
            }
        )

    @property
    def iterations(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,increment_norm,residual_norm,controls_changed\n")
            for r in self.rows:
                fh.write(
                    "%d,%r,%r,%d\n"
                    % (
                        r["iteration"],
                        r["increment_norm"],
                        r["residual_norm"],
                        r["controls_changed"],
                    )
                )


def _controls_changed(cs, new, old):
    """Number of quadrature points whose maximizer moved by more than
    1e-8 of an axis span (circular distance on periodic axes)."""
    if old is None:
        return new.shape[0] * new.shape[1]
    moved = np.zeros(new.shape[:2], dtype=bool)
    for axis, (lo, hi, per) in enumerate(cs.axes):
        span = hi - lo
        d = np.abs(new[..., axis] - old[..., axis])
        if per:
            d = np.minimum(d, span - d)
        moved |= d > 1e-8 * span
    return int(moved.sum())


def control_field(space, hjb, coeffs, vol=None):
    """Pointwise unweighted maximizers of the Hamiltonian at the volume
    quadrature points of the current iterate, shape (nt, nq, n_params)."""
    vol = vol or VolumeCache(space)
    u, g, H = vol.function(coeffs)
    nt, nq = u.shape
    params, _ = hamiltonian_argmax(
        hjb,
        vol.points.reshape(-1, 2),
        u.ravel(),
        g.reshape(-1, 2),
        H.reshape(-1, 2, 2),
    )
    return params.reshape(nt, nq, hjb.control.n_params)


def semismooth_newton(space, hjb, u0=None, tol=1e-8, max_iter=30):
    """Solve the HJB scheme by freezing pointwise maximizers and solving
    the resulting linear problems; stops when the lambda-norm of the
    increment drops below `tol`.

    Returns (coefficient vector, NewtonHistory); running out of
    iterations leaves history.converged False rather than raising.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    vol = VolumeCache(space)
    face = FaceTermCache(space)
    u = np.zeros(space.n_dofs) if u0 is None else np.asarray(u0, dtype=float).copy()
    history = NewtonHistory()
    prev_field = None
    for j in range(1, max_iter + 1):
        field_j = control_field(space, hjb, u, vol)
        changed = _controls_changed(hjb.control, field_j, prev_field)
        prev_field = field_j
        system = assemble_hjb_linearization(space, hjb, field_j, vol=vol, face=face)
        u_next = system.expand(sparse_lu_solve(system.matrix, system.rhs))
        inc = lambda_norm(space, u_next - u, hjb.lam, vol=vol)
        res = float(np.linalg.norm(hjb_residual(space, hjb, u_next, vol=vol, face=face)))
        history.add_row(j, inc, res, changed)
        u = u_next
        if inc < tol:
            history.converged = True
            break
    return u, history
