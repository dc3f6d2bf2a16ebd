"""C0 Hermite finite elements for non-divergence-form elliptic PDEs and
Hamilton-Jacobi-Bellman equations under the Cordes condition.

The discretization tests the strong operator against (weighted) Laplacians
of C0 Hermite test functions and adds a fixed tangential-jump face term;
no penalty parameter has to be tuned.  Supported polynomial degrees are
k = 3 and k = 4 in two dimensions.
"""

from .quadrature import QuadRule, triangle_rule, edge_rule
from .mesh import (
    Mesh,
    uniform_rect_mesh,
    newest_vertex_bisect,
    graded_mesh_sequence,
    save_mesh_txt,
    load_mesh_txt,
)
from .fespace import (
    HermiteSpace,
    ElementBasisEval,
    build_space,
    evaluate,
    interpolate,
    save_coeffs_csv,
    load_coeffs_csv,
)
from .problems import (
    NondivProblem,
    HjbProblem,
    ControlSet,
    ExactSolution,
    gamma_nondiv,
    gamma_hjb,
    cordes_epsilon_nondiv,
    hamiltonian_argmax,
    fgamma_sup,
    exp1,
    exp2,
    exp3,
    exp4,
)
from .forms import (
    SparseSystem,
    FaceTermCache,
    VolumeCache,
    assemble_nondiv_system,
    assemble_hjb_linearization,
    hjb_residual,
    normal_jump,
    dump_system,
)
from .solvers import (
    NewtonHistory,
    SingularMatrixError,
    sparse_lu_solve,
    solve_nondiv,
    semismooth_newton,
)
from .analysis import (
    ErrorReport,
    error_norms,
    lambda_norm,
    mt_identity_gap,
    convergence_orders,
)

__all__ = [
    "QuadRule", "triangle_rule", "edge_rule",
    "Mesh", "uniform_rect_mesh", "newest_vertex_bisect", "graded_mesh_sequence",
    "save_mesh_txt", "load_mesh_txt",
    "HermiteSpace", "ElementBasisEval", "build_space", "evaluate", "interpolate",
    "save_coeffs_csv", "load_coeffs_csv",
    "NondivProblem", "HjbProblem", "ControlSet", "ExactSolution",
    "gamma_nondiv", "gamma_hjb", "cordes_epsilon_nondiv",
    "hamiltonian_argmax", "fgamma_sup", "exp1", "exp2", "exp3", "exp4",
    "SparseSystem", "FaceTermCache", "VolumeCache",
    "assemble_nondiv_system", "assemble_hjb_linearization", "hjb_residual",
    "normal_jump", "dump_system",
    "NewtonHistory", "SingularMatrixError", "sparse_lu_solve", "solve_nondiv",
    "semismooth_newton",
    "ErrorReport", "error_norms", "lambda_norm", "mt_identity_gap",
    "convergence_orders",
]

__version__ = "0.1.0"
