import numpy as np
import pytest

from cordesfem import (
    ControlSet,
    HjbProblem,
    NondivProblem,
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
from cordesfem.problems import CordesViolationError


def interior_points(rng, n=60):
    pts = rng.uniform(-1, 1, size=(4 * n, 2))
    pts = pts[np.all(np.abs(pts) > 1e-2, axis=1)]
    return pts[:n]


def fd_check(exact, pts, h=1e-6):
    """Max deviation of analytic gradient/Hessian from central differences."""
    u = exact.u
    g_fd = np.stack([(u(pts + h * e) - u(pts - h * e)) / (2 * h)
                     for e in np.eye(2)], axis=1)
    errg = np.abs(g_fd - exact.grad(pts)).max()
    H_fd = np.stack(
        [[(u(pts + h * (ei + ej)) - u(pts + h * (ei - ej))
           - u(pts - h * (ei - ej)) + u(pts - h * (ei + ej))) / (4 * h * h)
          for ej in np.eye(2)] for ei in np.eye(2)]
    )
    errh = np.abs(H_fd.transpose(2, 0, 1) - exact.hess(pts)).max()
    return errg, errh


def test_gamma_nondiv_closed_forms():
    A = np.stack([np.eye(2), [[2.0, 1.0], [1.0, 2.0]], np.diag([1.0, 2.0])])
    assert np.allclose(gamma_nondiv(A), [1.0, 0.4, 0.6])


def test_gamma_nondiv_rejects_bad_input():
    with pytest.raises(CordesViolationError):
        gamma_nondiv(-np.eye(2))
    with pytest.raises(ValueError):
        gamma_nondiv(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_gamma_hjb_reduces_to_nondiv():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M = rng.normal(size=(2, 2))
        A = M @ M.T + 0.1 * np.eye(2)
        g1 = gamma_hjb(A[None], np.zeros((1, 2)), np.zeros(1), 1e-12)
        # as lam -> 0 with b=c=0 the weight tends to tr A / |A|^2
        assert abs(g1[0] - gamma_nondiv(A[None])[0]) < 1e-9


def test_cordes_epsilon_sampling():
    p1 = exp1()
    rng = np.random.default_rng(1)
    pts = interior_points(rng)
    assert abs(cordes_epsilon_nondiv(p1.A, pts) - 0.6) < 1e-12

    def bad_A(p):
        A = np.zeros((len(np.atleast_2d(p)), 2, 2))
        A[:, 0, 0], A[:, 0, 1] = 1.0, 2.0
        A[:, 1, 0], A[:, 1, 1] = 2.0, 1.0
        return A

    with pytest.raises(CordesViolationError):
        cordes_epsilon_nondiv(bad_A, pts)


def test_problem_validation():
    def A_id(p):
        n = len(np.atleast_2d(p))
        return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()

    f = lambda p: np.ones(len(np.atleast_2d(p)))
    with pytest.raises(ValueError):
        NondivProblem(A=A_id, f=f, epsilon=1.5)
    with pytest.raises(ValueError):
        NondivProblem(A=A_id, f=f, epsilon=0.5, lam=-1.0)
    with pytest.raises(ValueError):
        # lower-order terms need lam > 0
        NondivProblem(A=A_id, f=f, epsilon=0.5,
                      b=lambda p: np.zeros((len(np.atleast_2d(p)), 2)))


def test_control_set_validation_and_grids():
    A_of = lambda params: np.broadcast_to(np.eye(2), params.shape[:-1] + (2, 2)).copy()
    with pytest.raises(ValueError):
        ControlSet(axes=((0.0, 1.0, False),), grid_sizes=(3, 4), A_of=A_of)
    with pytest.raises(ValueError):
        ControlSet(axes=((1.0, 0.0, False),), grid_sizes=(3,), A_of=A_of)
    with pytest.raises(ValueError):
        ControlSet(axes=((0.5, 0.5, False),), grid_sizes=(2,), A_of=A_of)
    cs = ControlSet(axes=((0.0, 1.0, False), (0.0, 2.0, True)),
                    grid_sizes=(3, 4), A_of=A_of)
    grid = cs.grid()
    assert grid.shape == (12, 2)
    # periodic axis omits the duplicate endpoint
    assert set(np.round(np.unique(grid[:, 1]), 12)) == {0.0, 0.5, 1.0, 1.5}
    assert cs.spacings() == [0.5, 0.5]
    # degenerate single-control axis
    single = ControlSet(axes=((0.7, 0.7, False),), grid_sizes=(1,), A_of=A_of)
    assert np.array_equal(single.grid(), [[0.7]])
    assert single.spacings() == [0.0]


def test_exp1_fields():
    p1 = exp1()
    rng = np.random.default_rng(2)
    pts = interior_points(rng)
    assert np.allclose(p1.gamma(pts), 0.4)
    # f = A : D2u must hold identically (manufactured right-hand side)
    H = p1.exact.hess(pts)
    f_direct = np.einsum("nij,nij->n", p1.A(pts), H)
    assert np.abs(f_direct - p1.f(pts)).max() < 1e-12
    eg, eh = fd_check(p1.exact, pts)
    assert eg < 1e-8 and eh < 1e-4
    assert p1.alignment_lines == (("x", 0.0), ("y", 0.0))


def test_exp2_fields():
    p2 = exp2()
    rng = np.random.default_rng(3)
    pts = interior_points(rng)
    # closed-form weight gamma = 7 / (19 + |x|^2 / 2)
    assert np.allclose(p2.gamma(pts), 7.0 / (19.0 + 0.5 * (pts ** 2).sum(1)))
    f_direct = (np.einsum("nij,nij->n", p2.A(pts), p2.exact.hess(pts))
                + np.einsum("ni,ni->n", p2.b(pts), p2.exact.grad(pts))
                - 3.0 * p2.exact.u(pts))
    assert np.abs(f_direct - p2.f(pts)).max() < 1e-12
    eg, eh = fd_check(p2.exact, pts)
    assert eg < 1e-8 and eh < 1e-4


def test_exp3_control_set_constants():
    p3 = exp3()
    cs = p3.control
    # theta = 0: diffusion is I/2 regardless of the rotation angle
    A0 = cs.A_of(np.array([[0.0, 1.234]]))
    assert np.allclose(A0[0], 0.5 * np.eye(2))
    gam0 = gamma_hjb(A0, np.zeros((1, 2)), cs.c_of(np.array([[0.0, 1.234]])), p3.lam)
    assert np.allclose(gam0, 120.0 / 81.0)
    # the Cordes inequality is exactly sharp at theta = pi/3
    parT = np.array([[np.pi / 3.0, 0.77]])
    AT, cT = cs.A_of(parT), cs.c_of(parT)
    num = AT[0, 0, 0] + AT[0, 1, 1] + cT[0] / p3.lam
    den = (AT ** 2).sum() + (cT[0] / p3.lam) ** 2
    assert abs(num * num / den - 2.0 - p3.epsilon) < 1e-12
    assert abs(p3.epsilon - 1.0 / 7.0) < 1e-15
    rng = np.random.default_rng(4)
    pts = rng.uniform(0.05, 0.95, size=(40, 2))
    eg, eh = fd_check(p3.exact, pts)
    assert eg < 1e-7 and eh < 1e-3


def test_exp4_control_set_constants():
    p4 = exp4()
    cs = p4.control
    rng = np.random.default_rng(5)
    phis = rng.uniform(0, 2 * np.pi, size=(30, 1))
    A4 = cs.A_of(phis)
    # rotation conjugation preserves trace and Frobenius norm
    assert np.allclose(A4[:, 0, 0] + A4[:, 1, 1], 20.1)
    gam4 = gamma_hjb(A4, cs.b_of(phis), cs.c_of(phis), p4.lam)
    assert np.allclose(gam4, 40.1 / 803.01)
    # declared epsilon stays below the exact Cordes margin
    eps_exact = 40.1 ** 2 / 803.01 - 2.0
    assert p4.epsilon <= eps_exact
    pts = rng.uniform(0.05, 0.95, size=(40, 2))
    eg, eh = fd_check(p4.exact, pts, h=1e-7)
    assert eg < 1e-5 and eh < 1e-1  # boundary-layer scaling inflates FD error


def closed_form_sup(H):
    """Exact supremum of the exp3 running Hamiltonian at u = 0, grad = 0:
    max over the eigenvalue split of the rotated diffusion, with the
    quadratic-in-z source correction maximized in closed form."""
    trH = H[..., 0, 0] + H[..., 1, 1]
    D = np.sqrt((H[..., 0, 0] - H[..., 1, 1]) ** 2 + 4 * H[..., 0, 1] ** 2)
    z = np.clip(D * np.pi ** 2 / (4 * np.sqrt(3.0)), 0.0, np.sqrt(3.0) / 2)
    return 0.5 * trH + 0.5 * D * z - np.sqrt(3.0) / np.pi ** 2 * z * z


def test_argmax_matches_closed_form():
    p3 = exp3()
    cs3 = p3.control
    aux_cs = ControlSet(axes=cs3.axes, grid_sizes=cs3.grid_sizes,
                        A_of=cs3.A_of, f_of=cs3.f_of)
    aux = HjbProblem(control=aux_cs, lam=p3.lam, epsilon=p3.epsilon)
    x = np.array([[0.3, 0.7], [0.11, 0.45], [0.8, 0.2], [0.5, 0.5], [0.25, 0.99]])
    H = p3.exact.hess(x)
    _, sup = hamiltonian_argmax(aux, x, np.zeros(5), np.zeros((5, 2)), H)
    assert np.abs(sup - closed_form_sup(H)).max() < 1e-10
    # random symmetric perturbations keep the agreement
    rng = np.random.default_rng(6)
    Hp = H + rng.normal(0, 0.5, size=H.shape)
    Hp = 0.5 * (Hp + Hp.transpose(0, 2, 1))
    _, sup_p = hamiltonian_argmax(aux, x, np.zeros(5), np.zeros((5, 2)), Hp)
    assert np.abs(sup_p - closed_form_sup(Hp)).max() < 1e-10
    # brute-force fine grid never exceeds the continuous supremum
    thf = np.linspace(0, np.pi / 3, 161)
    phf = np.linspace(0, 2 * np.pi, 641, endpoint=False)
    TH, PH = np.meshgrid(thf, phf, indexing="ij")
    gridf = np.column_stack([TH.ravel(), PH.ravel()])
    objf = (np.einsum("mij,nij->mn", aux_cs.A_of(gridf), H)
            - (np.sqrt(3.0) * np.sin(gridf[:, 0]) ** 2 / np.pi ** 2)[:, None])
    ref = closed_form_sup(H)
    assert np.all(objf.max(0) <= ref + 1e-12)
    assert np.abs(objf.max(0) - ref).max() < 5e-4  # grid resolution limit


def test_exact_solutions_solve_their_hjb_equations():
    p3 = exp3()
    x3 = np.array([[0.3, 0.7], [0.11, 0.45], [0.8, 0.2], [0.5, 0.5]])
    u3, g3, H3 = p3.exact.u(x3), p3.exact.grad(x3), p3.exact.hess(x3)
    _, sup_u = hamiltonian_argmax(p3, x3, u3, g3, H3)
    _, sup_w = fgamma_sup(p3, x3, u3, g3, H3)
    assert np.abs(sup_u).max() < 1e-10
    assert np.abs(sup_w).max() < 1e-10

    p4 = exp4()
    x4 = np.array([[0.3, 0.7], [0.77, 0.5], [0.5, 0.97]])
    u4, g4, H4 = p4.exact.u(x4), p4.exact.grad(x4), p4.exact.hess(x4)
    _, s4 = hamiltonian_argmax(p4, x4, u4, g4, H4)
    _, s4w = fgamma_sup(p4, x4, u4, g4, H4)
    assert np.abs(s4).max() < 1e-9
    assert np.abs(s4w).max() < 1e-9


def test_weighted_and_unweighted_argmax_differ_in_general():
    """The residual weight gamma^alpha depends on alpha, so the weighted
    and unweighted maximizers are genuinely different selections."""
    p3 = exp3()
    rng = np.random.default_rng(8)
    x = rng.uniform(0.1, 0.9, size=(12, 2))
    u = rng.normal(size=12)
    g = rng.normal(size=(12, 2))
    H = rng.normal(size=(12, 2, 2))
    H = 0.5 * (H + H.transpose(0, 2, 1))
    _, sup_u = hamiltonian_argmax(p3, x, u, g, H)
    _, sup_w = fgamma_sup(p3, x, u, g, H)
    assert not np.allclose(sup_u, sup_w)


def test_periodic_axis_wrapping():
    p3 = exp3()
    rng = np.random.default_rng(9)
    x = rng.uniform(0.1, 0.9, size=(30, 2))
    H = p3.exact.hess(x)
    params, _ = hamiltonian_argmax(p3, x, p3.exact.u(x), p3.exact.grad(x), H)
    lo, hi = 0.0, 2.0 * np.pi
    assert np.all(params[:, 1] >= lo) and np.all(params[:, 1] < hi)
    assert np.all(params[:, 0] >= 0.0) and np.all(params[:, 0] <= np.pi / 3 + 1e-15)
