"""Assembly of the renormalized bilinear form and right-hand sides.

The scheme tests the strong operator gamma (A : D^2 w + b . grad w - c w)
against L_lam v = Delta v - lam v elementwise and corrects with interior
face terms:

    B(w, v) = sum_K (gamma L w, L_lam v)_K
              - (2 - sqrt(1 - eps)) sum_F < [[grad w]], Delta_T v - lam v >_F

where [[grad w]] = grad w+ . n+ + grad w- . n- is the scalar normal jump
and Delta_T the second tangential derivative along the face (single
valued for C0 functions).  No penalty parameter appears; coercivity
comes from the Cordes constant eps alone.

Face terms are assembled one side at a time: each side contributes
(grad psi_j . n_side) against its own (Delta_T psi_i - lam psi_i).
Scattering both one-sided blocks reproduces the jump pairing exactly: a
basis function whose degrees of freedom live off the face's closure has
zero trace there (so its test factor vanishes), and a shared basis
function has identical test factors from both sides.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bernstein import bernstein_tables
from .quadrature import triangle_rule, edge_rule
from .problems import gamma_hjb


class MeshAlignmentError(RuntimeError):
    """A coefficient discontinuity line cuts through element interiors."""


def check_alignment(mesh, lines, tol=1e-12):
    """Verify that no element straddles any ('x'|'y', value) line."""
    for axis, value in lines:
        comp = mesh.vertices[mesh.triangles][:, :, 0 if axis == "x" else 1]
        straddles = (comp.min(axis=1) < value - tol) & (comp.max(axis=1) > value + tol)
        if straddles.any():
            raise MeshAlignmentError(
                "mesh does not align with the coefficient line %s = %g" % (axis, value)
            )


def _blocks(n, size):
    for s in range(0, n, size):
        yield np.arange(s, min(n, s + size))


def tri_barycentric(rule):
    """Barycentric coordinates (nq, 3) of a triangle rule's points."""
    x, y = rule.points[:, 0], rule.points[:, 1]
    return np.column_stack([1.0 - x - y, x, y])


class VolumeCache:
    """Element quadrature geometry plus reference Bernstein tables."""

    def __init__(self, space, degree=None, block=2048):
        self.space = space
        k = space.k
        self.rule = triangle_rule(degree if degree is not None else 2 * k + 4)
        self.block = block
        lam = tri_barycentric(self.rule)
        self.tables = bernstein_tables(lam, k, order=2)
        self.points = np.einsum("qa,tad->tqd", lam, space.elem_verts)
        self.weights = 2.0 * space.mesh.areas[:, None] * self.rule.weights[None, :]
        self.n_q = len(lam)

    def basis(self, idx):
        """(val, grad, hess) of all local basis functions on elements idx:
        shapes (B, nq, nloc), (B, nq, nloc, 2), (B, nq, nloc, 2, 2)."""
        s = self.space
        bc = s.basis_coeffs[idx]
        gl = s.gradlam[idx]
        v0, d1, d2 = self.tables
        val = np.einsum("qN,eNj->eqj", v0, bc)
        grad = np.einsum("qNa,ead,eNj->eqjd", d1, gl, bc)
        hess = np.einsum("qNab,ead,ebf,eNj->eqjdf", d2, gl, gl, bc)
        return val, grad, hess

    def function(self, coeffs, idx=None):
        """(u, grad u, hess u) of a coefficient vector at the cache points:
        shapes (B, nq), (B, nq, 2), (B, nq, 2, 2)."""
        s = self.space
        if idx is None:
            idx = np.arange(s.mesh.n_triangles)
        loc = coeffs[s.elem_dofs[idx]]
        bq = np.einsum("eNj,ej->eN", s.basis_coeffs[idx], loc)
        gl = s.gradlam[idx]
        v0, d1, d2 = self.tables
        u = np.einsum("qN,eN->eq", v0, bq)
        g = np.einsum("qNa,ead,eN->eqd", d1, gl, bq)
        H = np.einsum("qNab,ead,ebf,eN->eqdf", d2, gl, gl, bq)
        return u, g, H


class FaceTermCache:
    """Interior-face quadrature geometry and reference trace tables.

    Quadrature points run from the lower- to the higher-indexed endpoint
    of each edge; only six (local_lo, local_hi) orderings occur, so the
    Bernstein trace tables are precomputed once per ordering."""

    def __init__(self, space, degree=None, block=4096):
        self.space = space
        mesh = space.mesh
        k = space.k
        self.rule = edge_rule(degree if degree is not None else 2 * k + 2)
        self.block = block
        s = self.rule.points
        self.n_q = len(s)

        self.edges = np.nonzero(~mesh.edge_is_boundary)[0]
        ev = mesh.edges[self.edges]
        pa = mesh.vertices[ev[:, 0]]
        pb = mesh.vertices[ev[:, 1]]
        self.length = np.linalg.norm(pb - pa, axis=1)
        self.tangent = (pb - pa) / self.length[:, None]
        self.elems = mesh.edge_elems[self.edges]  # (nE, 2): minus, plus

        # outward normal of the lower-indexed (minus) element
        n0 = np.column_stack([self.tangent[:, 1], -self.tangent[:, 0]])
        mid = 0.5 * (pa + pb)
        cent = mesh.barycenters[self.elems[:, 0]]
        flip = np.einsum("ed,ed->e", mid - cent, n0) < 0.0
        n0[flip] *= -1.0
        self.normal_minus = n0

        tri = mesh.triangles
        loc = np.empty((len(self.edges), 2, 2), dtype=int)
        for side in (0, 1):
            t = tri[self.elems[:, side]]
            for which in (0, 1):
                loc[:, side, which] = np.argmax(t == ev[:, which][:, None], axis=1)
        self.pair_index = loc[:, :, 0] * 3 + loc[:, :, 1]

        self.tables = {}
        for lo in range(3):
            for hi in range(3):
                if lo == hi:
                    continue
                lam = np.zeros((self.n_q, 3))
                lam[:, lo] = 1.0 - s
                lam[:, hi] = s
                self.tables[lo * 3 + hi] = bernstein_tables(lam, k, order=2)

        self._matrix_cache = {}

    def normal(self, idx, side):
        return self.normal_minus[idx] if side == 0 else -self.normal_minus[idx]

    def _ref_tables(self, idx, side):
        s = self.space
        pi = self.pair_index[idx, side]
        nq, N = self.n_q, s.n_loc
        v0 = np.empty((len(idx), nq, N))
        d1 = np.empty((len(idx), nq, N, 3))
        d2 = np.empty((len(idx), nq, N, 3, 3))
        for code, tabs in self.tables.items():
            m = pi == code
            if m.any():
                v0[m], d1[m], d2[m] = tabs[0], tabs[1], tabs[2]
        return v0, d1, d2

    def side_basis(self, idx, side):
        """(val, grad, hess) of the side element's local basis at the face
        quadrature points of edges idx."""
        s = self.space
        e = self.elems[idx, side]
        bc = s.basis_coeffs[e]
        gl = s.gradlam[e]
        v0, d1, d2 = self._ref_tables(idx, side)
        val = np.einsum("bqN,bNj->bqj", v0, bc)
        grad = np.einsum("bqNa,bad,bNj->bqjd", d1, gl, bc)
        hess = np.einsum("bqNac,bad,bcf,bNj->bqjdf", d2, gl, gl, bc)
        return val, grad, hess

    def side_function(self, coeffs, idx, side):
        """(u, grad u) of a coefficient vector traced from one side."""
        s = self.space
        e = self.elems[idx, side]
        loc = coeffs[s.elem_dofs[e]]
        bq = np.einsum("bNj,bj->bN", s.basis_coeffs[e], loc)
        gl = s.gradlam[e]
        v0, d1, _ = self._ref_tables(idx, side)
        val = np.einsum("bqN,bN->bq", v0, bq)
        grad = np.einsum("bqNa,bad,bN->bqd", d1, gl, bq)
        return val, grad

    def matrix_triplets(self, lam, coef):
        """COO triplets of the face part of B, i.e.
        -coef * sum_F < [[grad psi_j]], Delta_T psi_i - lam psi_i >_F.
        Cached per (lam, coef)."""
        key = (float(lam), float(coef))
        if key not in self._matrix_cache:
            self._matrix_cache[key] = self._build_matrix(lam, coef)
        return self._matrix_cache[key]

    def _build_matrix(self, lam, coef):
        s = self.space
        w = self.rule.weights
        rows, cols, vals = [], [], []
        for idx in _blocks(len(self.edges), self.block):
            for side in (0, 1):
                e = self.elems[idx, side]
                val, grad, hess = self.side_basis(idx, side)
                t = self.tangent[idx]
                sig = np.einsum("bqjdf,bd,bf->bqj", hess, t, t) - lam * val
                tau = np.einsum("bqjd,bd->bqj", grad, self.normal(idx, side))
                local = -coef * np.einsum(
                    "q,b,bqi,bqj->bij", w, self.length[idx], sig, tau
                )
                dofs = s.elem_dofs[e]
                nloc = s.n_loc
                rows.append(np.repeat(dofs, nloc, axis=1).ravel())
                cols.append(np.tile(dofs, (1, nloc)).ravel())
                vals.append(local.ravel())
        return (
            np.concatenate(rows),
            np.concatenate(cols),
            np.concatenate(vals),
        )

    def residual(self, coeffs, lam, coef):
        """Face part of the residual functional applied to every test
        function: R_i = -coef * sum_F < [[grad u]], Delta_T psi_i - lam psi_i >."""
        s = self.space
        w = self.rule.weights
        out = np.zeros(s.n_dofs)
        for idx in _blocks(len(self.edges), self.block):
            for side in (0, 1):
                e = self.elems[idx, side]
                val, grad, hess = self.side_basis(idx, side)
                t = self.tangent[idx]
                sig = np.einsum("bqjdf,bd,bf->bqj", hess, t, t) - lam * val
                _, gu = self.side_function(coeffs, idx, side)
                jump_side = np.einsum("bqd,bd->bq", gu, self.normal(idx, side))
                contrib = -coef * np.einsum(
                    "q,b,bqi,bq->bi", w, self.length[idx], sig, jump_side
                )
                np.add.at(out, s.elem_dofs[e].ravel(), contrib.ravel())
        return out


@dataclass
class SparseSystem:
    """Assembled linear system restricted to the free degrees of freedom."""

    matrix: object
    rhs: object
    free_to_global: object
    n_dofs: int

    def expand(self, x):
        """Lift a free-dof vector to a full coefficient vector (zeros in
        the constrained boundary slots)."""
        full = np.zeros(self.n_dofs)
        full[self.free_to_global] = x
        return full


def face_coefficient(epsilon):
    """Weight 2 - sqrt(1 - eps) of the interior face correction."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    return 2.0 - np.sqrt(1.0 - epsilon)


def _volume_triplets(space, vol, gam, A, b, c, fvals, lam):
    """Volume triplets of B plus the volume right-hand side
    (gamma f, L_lam psi_i); coefficient arrays are shaped (nt, nq, ...)."""
    nt = space.mesh.n_triangles
    rows, cols, vals = [], [], []
    rhs = np.zeros(space.n_dofs)
    nloc = space.n_loc
    for idx in _blocks(nt, vol.block):
        val, grad, hess = vol.basis(idx)
        wq = vol.weights[idx]
        trial = np.einsum("eqij,eqmij->eqm", A[idx], hess)
        if b is not None:
            trial += np.einsum("eqi,eqmi->eqm", b[idx], grad)
        if c is not None:
            trial -= c[idx][:, :, None] * val
        trial *= gam[idx][:, :, None]
        test = hess[..., 0, 0] + hess[..., 1, 1] - lam * val
        local = np.einsum("eq,eqi,eqj->eij", wq, test, trial)
        dofs = space.elem_dofs[idx]
        rows.append(np.repeat(dofs, nloc, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nloc)).ravel())
        vals.append(local.ravel())
        load = np.einsum("eq,eqi,eq->ei", wq, test, gam[idx] * fvals[idx])
        np.add.at(rhs, dofs.ravel(), load.ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), rhs


def _restrict(space, rows, cols, vals, rhs_full):
    M = sp.coo_matrix(
        (vals, (rows, cols)), shape=(space.n_dofs, space.n_dofs)
    ).tocsr()
    free = space.free_to_global
    return SparseSystem(M[free][:, free].tocsr(), rhs_full[free], free, space.n_dofs)


def _nondiv_fields(problem, vol):
    """Evaluate gamma, A, b, c, f of a NondivProblem at the cache points."""
    nt, nq = vol.points.shape[:2]
    flat = vol.points.reshape(-1, 2)
    A = np.asarray(problem.A(flat)).reshape(nt, nq, 2, 2)
    gam = np.asarray(problem.gamma(flat)).reshape(nt, nq)
    b = (
        np.asarray(problem.b(flat)).reshape(nt, nq, 2)
        if problem.b is not None
        else None
    )
    c = np.asarray(problem.c(flat)).reshape(nt, nq) if problem.c is not None else None
    f = np.asarray(problem.f(flat)).reshape(nt, nq)
    return gam, A, b, c, f


def assemble_nondiv_system(space, problem, eps_tilde=None, vol=None, face=None):
    """Assemble B and the load vector for a linear non-divergence problem.

    `eps_tilde` overrides the Cordes constant inside the face weight
    2 - sqrt(1 - eps) only; pass 0.0 to drop toward the plain
    least-squares end of the family."""
    check_alignment(space.mesh, problem.alignment_lines)
    vol = vol or VolumeCache(space)
    face = face or FaceTermCache(space)
    coef = face_coefficient(problem.epsilon if eps_tilde is None else eps_tilde)
    gam, A, b, c, f = _nondiv_fields(problem, vol)
    rows, cols, vals, rhs = _volume_triplets(space, vol, gam, A, b, c, f, problem.lam)
    fr, fc, fv = face.matrix_triplets(problem.lam, coef)
    return _restrict(
        space,
        np.concatenate([rows, fr]),
        np.concatenate([cols, fc]),
        np.concatenate([vals, fv]),
        rhs,
    )


def _hjb_fields(hjb, vol, control_field):
    """Evaluate gamma, A, b, c, f at the cache points for a frozen
    control field of shape (nt, nq, n_params)."""
    cs = hjb.control
    nt, nq = vol.points.shape[:2]
    flat_p = control_field.reshape(-1, cs.n_params)
    flat_x = vol.points.reshape(-1, 2)
    A = cs.A_of(flat_p)
    b = cs.b_of(flat_p) if cs.b_of is not None else None
    c = cs.c_of(flat_p) if cs.c_of is not None else None
    bz = b if b is not None else np.zeros((len(flat_p), 2))
    cz = c if c is not None else np.zeros(len(flat_p))
    gam = gamma_hjb(A, bz, cz, hjb.lam)
    f = np.zeros(len(flat_x))
    if cs.f_of is not None:
        f = f + np.asarray(cs.f_of(flat_p, flat_x))
    if cs.f_offset is not None:
        f = f + np.asarray(cs.f_offset(flat_x))
    return (
        gam.reshape(nt, nq),
        A.reshape(nt, nq, 2, 2),
        b.reshape(nt, nq, 2) if b is not None else None,
        c.reshape(nt, nq) if c is not None else None,
        f.reshape(nt, nq),
    )


def assemble_hjb_linearization(space, hjb, control_field, vol=None, face=None):
    """Assemble the linear system obtained by freezing the control field
    (pointwise maximizers at the volume quadrature points)."""
    vol = vol or VolumeCache(space)
    face = face or FaceTermCache(space)
    coef = face_coefficient(hjb.epsilon)
    gam, A, b, c, f = _hjb_fields(hjb, vol, control_field)
    rows, cols, vals, rhs = _volume_triplets(space, vol, gam, A, b, c, f, hjb.lam)
    fr, fc, fv = face.matrix_triplets(hjb.lam, coef)
    return _restrict(
        space,
        np.concatenate([rows, fr]),
        np.concatenate([cols, fc]),
        np.concatenate([vals, fv]),
        rhs,
    )


def hjb_residual(space, hjb, coeffs, vol=None, face=None):
    """Renormalized residual of the full nonlinear scheme at `coeffs`,
    restricted to the free degrees of freedom:

    R_i = sum_K (F_gamma[u], L_lam psi_i)_K
          - (2 - sqrt(1-eps)) sum_F < [[grad u]], Delta_T psi_i - lam psi_i >_F

    with F_gamma[u] = sup_a gamma^a (A^a : D^2 u + b^a . grad u - c^a u - f^a).
    """
    from .problems import fgamma_sup

    vol = vol or VolumeCache(space)
    face = face or FaceTermCache(space)
    coef = face_coefficient(hjb.epsilon)
    nt = space.mesh.n_triangles
    out = np.zeros(space.n_dofs)
    for idx in _blocks(nt, vol.block):
        u, gu, Hu = vol.function(coeffs, idx)
        nq = vol.n_q
        flat_x = vol.points[idx].reshape(-1, 2)
        _, sup = fgamma_sup(
            hjb, flat_x, u.ravel(), gu.reshape(-1, 2), Hu.reshape(-1, 2, 2)
        )
        Fg = sup.reshape(len(idx), nq)
        val, grad, hess = vol.basis(idx)
        test = hess[..., 0, 0] + hess[..., 1, 1] - hjb.lam * val
        contrib = np.einsum("eq,eqi,eq->ei", vol.weights[idx], test, Fg)
        np.add.at(out, space.elem_dofs[idx].ravel(), contrib.ravel())
    out += face.residual(coeffs, hjb.lam, coef)
    return out[space.free_to_global]


def normal_jump(space, coeffs, edge, s_points):
    """Normal-derivative jump [[grad u]] along one interior edge.

    `s_points` parameterize the edge from its lower-indexed vertex.
    """
    mesh = space.mesh
    if mesh.edge_is_boundary[edge]:
        raise ValueError("edge %d is a boundary edge" % edge)
    s_points = np.asarray(s_points, dtype=float)
    a, b = mesh.edges[edge]
    pa, pb = mesh.vertices[a], mesh.vertices[b]
    pts = pa[None, :] + s_points[:, None] * (pb - pa)[None, :]
    t = (pb - pa) / np.linalg.norm(pb - pa)
    n_minus = np.array([t[1], -t[0]])
    e_minus, e_plus = mesh.edge_elems[edge]
    cent = mesh.barycenters[e_minus]
    if np.dot(0.5 * (pa + pb) - cent, n_minus) < 0:
        n_minus = -n_minus
    from .fespace import evaluate

    g_minus = evaluate(space, coeffs, e_minus, pts, order=1)
    g_plus = evaluate(space, coeffs, e_plus, pts, order=1)
    return g_minus @ n_minus + g_plus @ (-n_minus)


def dump_system(system, path):
    """Write a SparseSystem as plain text: a header line `n nnz`, one
    `i j value` line per stored entry (CSR order), a `rhs` marker, then
    one value per line."""
    M = system.matrix.tocsr()
    M.sort_indices()
    coo = M.tocoo()
    with open(path, "w") as fh:
        fh.write("%d %d\n" % (M.shape[0], M.nnz))
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write("%d %d %r\n" % (i, j, float(v)))
        fh.write("rhs\n")
        for v in system.rhs:
            fh.write("%r\n" % float(v))
