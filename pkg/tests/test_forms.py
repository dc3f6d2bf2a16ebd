import numpy as np
import pytest

from cordesfem import (
    FaceTermCache,
    VolumeCache,
    assemble_nondiv_system,
    assemble_hjb_linearization,
    hjb_residual,
    normal_jump,
    dump_system,
    build_space,
    evaluate,
    interpolate,
    uniform_rect_mesh,
    newest_vertex_bisect,
    graded_mesh_sequence,
    triangle_rule,
    edge_rule,
    NondivProblem,
    exp1,
    exp2,
    exp3,
)
from cordesfem.analysis import lambda_norm
from cordesfem.forms import MeshAlignmentError, face_coefficient, tri_barycentric
from cordesfem.solvers import control_field, sparse_lu_solve


def rand_free(space, rng):
    co = np.zeros(space.n_dofs)
    co[space.free_to_global] = rng.normal(size=space.n_free)
    return co


def A_identity(p):
    n = len(np.atleast_2d(p))
    return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()


def mt_gap_direct(space, coeffs, vol, face):
    """Miranda-Talenti identity residual computed from the caches."""
    _, _, H = vol.function(coeffs)
    lap2 = ((H[..., 0, 0] + H[..., 1, 1]) ** 2 * vol.weights).sum()
    h2 = ((H ** 2).sum(axis=(-2, -1)) * vol.weights).sum()
    idx = np.arange(len(face.edges))
    jump = np.zeros((len(idx), face.n_q))
    for side in (0, 1):
        _, gu = face.side_function(coeffs, idx, side)
        jump += np.einsum("bqd,bd->bq", gu, face.normal(idx, side))
    elems = space.elem_dofs[face.elems[idx, 0]]
    _, _, he = face.side_basis(idx, 0)
    Hu = np.einsum("bqjdf,bj->bqdf", he, coeffs[elems])
    t = face.tangent[idx]
    dtv = np.einsum("bqdf,bd,bf->bq", Hu, t, t)
    fsum = (face.rule.weights[None, :] * face.length[idx][:, None] * jump * dtv).sum()
    return lap2 - h2 - 2.0 * fsum, h2


def test_miranda_talenti_identity_random_fields():
    rng = np.random.default_rng(11)
    meshes = [
        uniform_rect_mesh(3),
        newest_vertex_bisect(uniform_rect_mesh(2), np.array([0, 3, 5])),
        graded_mesh_sequence(5, 120.0)[-1],
    ]
    for mesh in meshes:
        for k in (3, 4):
            space = build_space(mesh, k)
            vol, face = VolumeCache(space), FaceTermCache(space)
            for _ in range(5):
                v = rand_free(space, rng)
                gap, h2 = mt_gap_direct(space, v, vol, face)
                assert abs(gap) < 1e-10 * max(h2, 1.0)


def test_poisson_energy_identity():
    """At A = I, eps = 1, lam = 0 the bilinear form must equal the broken
    H^2 inner product exactly (the face coefficient becomes 2 and the
    Miranda-Talenti identity converts the Laplacian product)."""
    rng = np.random.default_rng(12)
    mesh = uniform_rect_mesh(3)
    pois = NondivProblem(A=A_identity,
                         f=lambda p: np.ones(len(np.atleast_2d(p))),
                         epsilon=1.0, name="poisson")
    for k in (3, 4):
        space = build_space(mesh, k)
        system = assemble_nondiv_system(space, pois)
        vol = VolumeCache(space)
        for _ in range(5):
            x = rng.normal(size=space.n_free)
            _, _, H = vol.function(system.expand(x))
            h2 = ((H ** 2).sum(axis=(-2, -1)) * vol.weights).sum()
            bvv = x @ (system.matrix @ x)
            assert abs(bvv - h2) < 1e-9 * max(h2, 1.0)


def test_face_coefficient_values():
    assert face_coefficient(1.0) == 2.0
    assert abs(face_coefficient(0.6) - (2.0 - np.sqrt(0.4))) < 1e-15
    assert face_coefficient(0.0) == 1.0


def direct_bilinear(space, mesh, problem, wv, vv, eps):
    """Independent quadrature of the bilinear form via evaluate()."""
    k = space.k
    lam = problem.lam
    coef = face_coefficient(eps)
    rule = triangle_rule(2 * k + 6)
    erule = edge_rule(2 * k + 5)
    vol_sum = 0.0
    for e in range(mesh.n_triangles):
        verts = mesh.vertices[mesh.triangles[e]]
        pts = tri_barycentric(rule) @ verts
        wq = 2.0 * mesh.areas[e] * rule.weights
        gw = evaluate(space, wv, e, pts, 1)
        Hw = evaluate(space, wv, e, pts, 2)
        uw = evaluate(space, wv, e, pts, 0)
        uv = evaluate(space, vv, e, pts, 0)
        Hv = evaluate(space, vv, e, pts, 2)
        Av, gam = problem.A(pts), problem.gamma(pts)
        Lw = np.einsum("nij,nij->n", Av, Hw)
        if problem.b is not None:
            Lw += np.einsum("ni,ni->n", problem.b(pts), gw)
        if problem.c is not None:
            Lw -= problem.c(pts) * uw
        Lv = Hv[:, 0, 0] + Hv[:, 1, 1] - lam * uv
        vol_sum += (wq * gam * Lw * Lv).sum()
    f_sum = 0.0
    s = erule.points
    for edge in np.flatnonzero(~mesh.edge_is_boundary):
        a, b = mesh.edges[edge]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        L = np.linalg.norm(pb - pa)
        pts = pa[None, :] + s[:, None] * (pb - pa)[None, :]
        jmp = normal_jump(space, wv, edge, s)
        em = mesh.edge_elems[edge][0]
        t = (pb - pa) / L
        Hv = evaluate(space, vv, em, pts, 2)
        uv = evaluate(space, vv, em, pts, 0)
        dtv = np.einsum("ndf,d,f->n", Hv, t, t) - lam * uv
        f_sum += L * (erule.weights * jmp * dtv).sum()
    return vol_sum - coef * f_sum


def test_assembled_matrix_matches_direct_quadrature():
    rng = np.random.default_rng(13)
    mesh = uniform_rect_mesh(2, lo=(-1.0, -1.0), hi=(1.0, 1.0))
    p2 = exp2()
    for k in (3, 4):
        space = build_space(mesh, k)
        system = assemble_nondiv_system(space, p2)
        for _ in range(4):
            wv, vv = rand_free(space, rng), rand_free(space, rng)
            direct = direct_bilinear(space, mesh, p2, wv, vv, p2.epsilon)
            asm = vv[space.free_to_global] @ (system.matrix @ wv[space.free_to_global])
            assert abs(direct - asm) < 1e-11 * max(abs(direct), 1.0)


def test_assembled_rhs_matches_direct_quadrature():
    rng = np.random.default_rng(14)
    mesh = uniform_rect_mesh(2, lo=(-1.0, -1.0), hi=(1.0, 1.0))
    p2 = exp2()
    for k in (3, 4):
        space = build_space(mesh, k)
        system = assemble_nondiv_system(space, p2)
        rule = triangle_rule(2 * k + 4)  # same rule: compares code paths
        rv = rand_free(space, rng)
        direct = 0.0
        for e in range(mesh.n_triangles):
            verts = mesh.vertices[mesh.triangles[e]]
            pts = tri_barycentric(rule) @ verts
            wq = 2.0 * mesh.areas[e] * rule.weights
            uv = evaluate(space, rv, e, pts, 0)
            Hv = evaluate(space, rv, e, pts, 2)
            test_action = Hv[:, 0, 0] + Hv[:, 1, 1] - p2.lam * uv
            direct += (wq * p2.gamma(pts) * p2.f(pts) * test_action).sum()
        asm = system.rhs @ rv[space.free_to_global]
        assert abs(direct - asm) < 1e-12 * max(abs(direct), 1.0)


def test_coercivity_with_and_without_eps_tilde():
    """B(v,v) >= (1 - sqrt(1-eps)) ||v||^2 with the standard face factor,
    and >= eps/2 ||v||^2 with the eps-tilde = 0 variant."""
    rng = np.random.default_rng(15)
    p1 = exp1()
    mesh = uniform_rect_mesh(8, lo=(-1.0, -1.0), hi=(1.0, 1.0))
    space = build_space(mesh, 3)
    sys_std = assemble_nondiv_system(space, p1)
    sys_var = assemble_nondiv_system(space, p1, eps_tilde=0.0)
    vol = VolumeCache(space)
    bound_std = 1.0 - np.sqrt(1.0 - p1.epsilon)
    bound_var = p1.epsilon / 2.0
    for _ in range(20):
        x = rng.normal(size=space.n_free)
        norm2 = lambda_norm(space, sys_std.expand(x), 0.0, vol=vol) ** 2
        assert x @ (sys_std.matrix @ x) >= (bound_std - 1e-12) * norm2
        assert x @ (sys_var.matrix @ x) >= (bound_var - 1e-12) * norm2


def test_normal_jump_oracles():
    mesh = uniform_rect_mesh(1)
    space = build_space(mesh, 3)

    def poly(p):
        return np.atleast_2d(p)[:, 0] ** 2

    def dpoly(p):
        p = np.atleast_2d(p)
        return np.column_stack([2 * p[:, 0], np.zeros(len(p))])

    co = interpolate(space, poly, dpoly)
    s = np.array([0.2, 0.5, 0.9])
    diag = np.flatnonzero(~mesh.edge_is_boundary)
    assert len(diag) == 1
    # globally smooth function: no jump
    assert np.abs(normal_jump(space, co, diag[0], s)).max() < 1e-12
    # perturbing one interior bubble changes the jump by a known cubic
    delta = 0.37
    int_dof = space.elem_dofs[1][-space.n_interior_moments:][0]
    co2 = co.copy()
    co2[int_dof] += delta
    jump = normal_jump(space, co2, diag[0], s)
    expect = -60.0 * np.sqrt(2.0) * delta * s * (1 - s)
    assert np.abs(jump - expect).max() < 1e-10
    # boundary edge is invalid
    with pytest.raises(ValueError):
        normal_jump(space, co, int(np.flatnonzero(mesh.edge_is_boundary)[0]), s)


def test_normal_jump_matches_two_sided_evaluation():
    rng = np.random.default_rng(16)
    mesh = uniform_rect_mesh(2)
    for k in (3, 4):
        space = build_space(mesh, k)
        co = rng.normal(size=space.n_dofs)
        s = np.linspace(0.05, 0.95, 7)
        for edge in np.flatnonzero(~mesh.edge_is_boundary):
            a, b = mesh.edges[edge]
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            t = pb - pa
            n_plus = np.array([t[1], -t[0]]) / np.linalg.norm(t)
            pts = pa[None, :] + s[:, None] * t[None, :]
            em, ep = mesh.edge_elems[edge]
            gm = evaluate(space, co, em, pts, 1)
            gp = evaluate(space, co, ep, pts, 1)
            two_sided = (gm - gp) @ n_plus  # = gm.n + gp.(-n), either sign
            jump = normal_jump(space, co, edge, s)
            assert min(np.abs(jump - two_sided).max(),
                       np.abs(jump + two_sided).max()) < 1e-12 * max(
                           1.0, np.abs(jump).max())


def test_alignment_check():
    p1 = exp1()  # requires mesh edges on the coordinate axes
    mesh = uniform_rect_mesh(3, lo=(-1.0, -1.0), hi=(1.0, 1.0))  # odd: no axis line
    space = build_space(mesh, 3)
    with pytest.raises(MeshAlignmentError):
        assemble_nondiv_system(space, p1)


def test_hjb_linearization_reduces_to_nondiv():
    """A constant control field with matching frozen coefficients must
    reproduce the linear assembly exactly."""
    p3 = exp3()
    mesh = uniform_rect_mesh(2)
    space = build_space(mesh, 3)
    vol, face = VolumeCache(space), FaceTermCache(space)
    nq = len(vol.rule.weights)
    theta, phi = 0.31, 1.7
    field = np.broadcast_to(np.array([theta, phi]),
                            (mesh.n_triangles, nq, 2)).copy()
    sys_hjb = assemble_hjb_linearization(space, p3, field, vol=vol, face=face)

    par = np.array([[theta, phi]])
    A0 = p3.control.A_of(par)[0]
    c0 = float(p3.control.c_of(par)[0])

    def A_fn(p):
        return np.broadcast_to(A0, (len(np.atleast_2d(p)), 2, 2)).copy()

    frozen = NondivProblem(
        A=A_fn,
        f=lambda p: np.zeros(len(np.atleast_2d(p))),
        epsilon=p3.epsilon,
        c=lambda p: np.full(len(np.atleast_2d(p)), c0),
        lam=p3.lam,
        name="frozen",
    )
    sys_lin = assemble_nondiv_system(space, frozen, vol=vol, face=face)
    dev = np.abs((sys_hjb.matrix - sys_lin.matrix).toarray()).max()
    scale = np.abs(sys_lin.matrix.toarray()).max()
    assert dev < 1e-12 * scale


def test_hjb_residual_zero_iterate_equals_negative_rhs_path():
    """At the discrete solution the weighted residual matches the solver
    tolerance; at the interpolated exact solution it decays at the
    consistency order k-1."""
    p3 = exp3()
    prev = None
    for n in (2, 4, 8):
        mesh = uniform_rect_mesh(n)
        space = build_space(mesh, 3)
        vol, face = VolumeCache(space), FaceTermCache(space)
        co = interpolate(space, p3.exact.u, p3.exact.grad)
        res = np.linalg.norm(hjb_residual(space, p3, co, vol=vol, face=face))
        if prev is not None:
            assert res < prev
        prev = res


def test_dump_system_round_trip(tmp_path):
    p2 = exp2()
    mesh = uniform_rect_mesh(2, lo=(-1.0, -1.0), hi=(1.0, 1.0))
    space = build_space(mesh, 3)
    system = assemble_nondiv_system(space, p2)
    path = tmp_path / "system.txt"
    dump_system(system, path)
    with open(path) as fh:
        n, nnz = (int(tok) for tok in fh.readline().split())
        assert n == space.n_free
        entries = []
        for _ in range(nnz):
            i, j, v = fh.readline().split()
            entries.append((int(i), int(j), float(v)))
        assert fh.readline().strip() == "rhs"
        rhs = np.array([float(ln) for ln in fh])
    M = np.zeros((n, n))
    for i, j, v in entries:
        M[i, j] = v
    assert np.array_equal(M, system.matrix.toarray())
    assert np.array_equal(rhs, system.rhs)


def test_solution_determinism():
    p2 = exp2()
    mesh = uniform_rect_mesh(4, lo=(-1.0, -1.0), hi=(1.0, 1.0))
    space = build_space(mesh, 3)
    s1 = assemble_nondiv_system(space, p2)
    s2 = assemble_nondiv_system(space, p2)
    assert (s1.matrix != s2.matrix).nnz == 0
    assert np.array_equal(s1.rhs, s2.rhs)
    x1 = sparse_lu_solve(s1.matrix, s1.rhs)
    x2 = sparse_lu_solve(s2.matrix, s2.rhs)
    assert np.array_equal(x1, x2)
