"""C0 Hermite finite element space of degree k in {3, 4}.

Degrees of freedom per element: value and both first derivatives at each
vertex, k-3 moments against Legendre weights on each edge, and dim P_{k-3}
interior moments.  Functions are therefore C1 at vertices and continuous
across edges.  At a flat boundary vertex the derivative pair is stored in
the (tangent, normal) frame of the boundary so that homogeneous Dirichlet
conditions constrain single DOFs: boundary values, tangential derivatives
at flat boundary vertices, both derivatives at corners, and boundary-edge
moments.

Local bases are built per element by inverting the DOF matrix against a
Bernstein background basis; derivative rows are scaled by the element
diameter to keep that matrix well conditioned.
"""

import numpy as np
from numpy.polynomial.legendre import Legendre

from .bernstein import bernstein_tables, dim, multiindices
from .mesh import VERTEX_CORNER, VERTEX_FLAT
from .quadrature import edge_rule, triangle_rule

DOF_VALUE = 0
DOF_DERIV = 1
DOF_EDGE = 2
DOF_INTERIOR = 3


class ElementBasisEval:
    """Local basis of one element, dual to its DOF functionals.

    `coeffs[:, i]` holds the Bernstein coefficients of basis function i;
    `dof_matrix` is the (derivative-row-scaled) matrix of DOF functionals
    applied to the Bernstein basis that was inverted to obtain them.
    """

    def __init__(self, space, elem):
        self.elem = int(elem)
        self.k = space.k
        self.vertices = space.mesh.vertices[space.mesh.triangles[self.elem]]
        self.coeffs = space.basis_coeffs[self.elem]
        self.dof_matrix = space._dof_matrix_scaled[self.elem]
        self._space = space

    def _tables(self, points, order):
        lam = barycentric(self._space, self.elem, points)
        return bernstein_tables(lam, self.k, order)

    def value(self, points):
        val, = self._tables(points, 0)
        return val @ self.coeffs

    def grad(self, points):
        _, d1 = self._tables(points, 1)
        G = self._space.gradlam[self.elem]
        return np.einsum("pmc,ci,mn->pni", d1, G, self.coeffs)

    def hess(self, points):
        _, _, d2 = self._tables(points, 2)
        G = self._space.gradlam[self.elem]
        return np.einsum("pmcd,ci,dj,mn->pnij", d2, G, G, self.coeffs)


class HermiteSpace:
    """Global C0 Hermite space on a mesh, with constrained-DOF bookkeeping."""

    def __init__(self, mesh, k):
        if k not in (3, 4):
            raise ValueError("only degrees k = 3 and k = 4 are supported")
        self.mesh = mesh
        self.k = k
        nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
        n_em = k - 3
        n_im = dim(k - 3)
        self.n_edge_moments = n_em
        self.n_interior_moments = n_im
        self.n_loc = dim(k)
        self.n_dofs = 3 * nv + n_em * ne + n_im * nt

        tri = mesh.triangles
        cols = [(3 * tri[:, :, None] + np.arange(3)).reshape(nt, 9)]
        if n_em:
            ebase = 3 * nv + n_em * mesh.elem_to_edge
            cols.append((ebase[:, :, None] + np.arange(n_em)).reshape(nt, 3 * n_em))
        ibase = 3 * nv + n_em * ne + n_im * np.arange(nt)
        cols.append(ibase[:, None] + np.arange(n_im))
        self.elem_dofs = np.concatenate(cols, axis=1)

        self._dof_metadata(nv, ne, nt, n_em, n_im)
        self._geometry()
        self._vertex_frames()
        self._local_bases()
        self._constraints(nv, ne, nt, n_em, n_im)

    # ------------------------------------------------------------------

    def _dof_metadata(self, nv, ne, nt, n_em, n_im):
        kind = np.empty(self.n_dofs, dtype=np.int8)
        entity = np.empty(self.n_dofs, dtype=int)
        vk = np.tile([DOF_VALUE, DOF_DERIV, DOF_DERIV], nv)
        kind[: 3 * nv] = vk
        entity[: 3 * nv] = np.repeat(np.arange(nv), 3)
        if n_em:
            kind[3 * nv : 3 * nv + n_em * ne] = DOF_EDGE
            entity[3 * nv : 3 * nv + n_em * ne] = np.repeat(np.arange(ne), n_em)
        off = 3 * nv + n_em * ne
        kind[off:] = DOF_INTERIOR
        entity[off:] = np.repeat(np.arange(nt), n_im)
        self.dof_kind = kind
        self.dof_entity = entity

    def _geometry(self):
        mesh = self.mesh
        nt = mesh.n_triangles
        verts = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
        V = np.concatenate([verts, np.ones((nt, 3, 1))], axis=2)
        self.Vinv = np.linalg.inv(V)
        self.gradlam = self.Vinv[:, :2, :].transpose(0, 2, 1)
        self.elem_verts = verts

    def _vertex_frames(self):
        mesh = self.mesh
        nv = mesh.n_vertices
        frames = np.broadcast_to(np.eye(2), (nv, 2, 2)).copy()
        flats = np.nonzero(mesh.vertex_class == VERTEX_FLAT)[0]
        t = mesh.vertex_tangent[flats]
        frames[flats, 0] = t
        frames[flats, 1] = np.column_stack([-t[:, 1], t[:, 0]])
        self.vertex_frame = frames  # rows: tangent, normal (identity inside)

    def _edge_moment_rows(self):
        """Element-independent edge-moment rows, indexed by (local edge,
        orientation flip): integral over the edge of Bernstein values
        against shifted Legendre weights, arclength measured from the
        lower-indexed endpoint (the 1/|e| normalization cancels |e| ds)."""
        k, n_em = self.k, self.n_edge_moments
        rule = edge_rule(2 * k)
        s, w = rule.points, rule.weights
        legendre = [Legendre.basis(j)(2 * s - 1.0) for j in range(n_em)]
        rows = np.empty((3, 2, n_em, self.n_loc))
        for loc in range(3):
            a, b = (loc + 1) % 3, (loc + 2) % 3
            for flip in (0, 1):
                start, end = (b, a) if flip else (a, b)
                lam = np.zeros((len(s), 3))
                lam[:, start] = 1.0 - s
                lam[:, end] = s
                val, = bernstein_tables(lam, k, 0)
                for j in range(n_em):
                    rows[loc, flip, j] = (w * legendre[j]) @ val
        return rows

    def _local_bases(self):
        mesh, k = self.mesh, self.k
        nt, N = mesh.n_triangles, self.n_loc
        tri = mesh.triangles
        M = np.zeros((nt, N, N))

        # vertex values and Cartesian derivatives
        val_v, d1_v = bernstein_tables(np.eye(3), k, 1)
        for v in range(3):
            M[:, 3 * v, :] = val_v[v]
            dxy = np.einsum("mc,eci->eim", d1_v[v], self.gradlam)
            M[:, 3 * v + 1, :] = dxy[:, 0]
            M[:, 3 * v + 2, :] = dxy[:, 1]

        row = 9
        n_em = self.n_edge_moments
        if n_em:
            erows = self._edge_moment_rows()
            for loc in range(3):
                a, b = (loc + 1) % 3, (loc + 2) % 3
                flip = (tri[:, a] > tri[:, b]).astype(int)
                for j in range(n_em):
                    M[:, row, :] = erows[loc, flip, j]
                    row += 1

        rule = triangle_rule(2 * k)
        lam_q = np.column_stack(
            [1.0 - rule.points.sum(axis=1), rule.points[:, 0], rule.points[:, 1]]
        )
        val_q, = bernstein_tables(lam_q, k, 0)
        M[:, row, :] = 2.0 * rule.weights @ val_q  # mean value over the element
        if self.n_interior_moments == 3:
            x_q = np.einsum("qc,ecd->eqd", lam_q, self.elem_verts)
            centroid = self.elem_verts.mean(axis=1)
            xi = (x_q - centroid[:, None, :]) / mesh.diameters[:, None, None]
            for d in range(2):
                M[:, row + 1 + d, :] = 2.0 * np.einsum(
                    "q,eq,qm->em", rule.weights, xi[:, :, d], val_q
                )

        # rotate derivative rows into (tangent, normal) frames at flat vertices
        frames = self.vertex_frame[tri]  # (nt, 3, 2, 2)
        for v in range(3):
            Q = frames[:, v]
            pair = M[:, 3 * v + 1 : 3 * v + 3, :]
            M[:, 3 * v + 1 : 3 * v + 3, :] = np.einsum("eab,ebm->eam", Q, pair)

        # scale derivative rows by the element diameter, invert, unscale
        scale = np.ones((nt, N))
        for v in range(3):
            scale[:, 3 * v + 1] = mesh.diameters
            scale[:, 3 * v + 2] = mesh.diameters
        Mhat = M * scale[:, :, None]
        X = np.linalg.inv(Mhat)
        self.basis_coeffs = X * scale[:, None, :]
        self._dof_matrix_scaled = Mhat

    def _constraints(self, nv, ne, nt, n_em, n_im):
        vc = self.mesh.vertex_class
        con = np.zeros(self.n_dofs, dtype=bool)
        bnd = np.nonzero(vc > 0)[0]
        con[3 * bnd] = True
        corners = np.nonzero(vc == VERTEX_CORNER)[0]
        con[3 * corners + 1] = True
        con[3 * corners + 2] = True
        flats = np.nonzero(vc == VERTEX_FLAT)[0]
        con[3 * flats + 1] = True  # tangential slot of the rotated pair
        if n_em:
            bedges = np.nonzero(self.mesh.edge_is_boundary)[0]
            for j in range(n_em):
                con[3 * nv + n_em * bedges + j] = True
        self.constrained = con
        self.n_free = int((~con).sum())
        self.free_index = -np.ones(self.n_dofs, dtype=int)
        self.free_index[~con] = np.arange(self.n_free)
        self.free_to_global = np.nonzero(~con)[0]

    # ------------------------------------------------------------------

    def local_basis(self, elem):
        return ElementBasisEval(self, elem)


def build_space(mesh, k):
    """Build the degree-k Hermite space on `mesh` (k in {3, 4})."""
    return HermiteSpace(mesh, k)


def barycentric(space, elem, points):
    """Barycentric coordinates of physical points w.r.t. one element."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    hom = np.column_stack([pts, np.ones(len(pts))])
    return hom @ space.Vinv[elem]


def evaluate(space, coeffs, elem, points, order=0):
    """Evaluate a coefficient vector on one element.

    order 0 -> values (npts,), 1 -> gradients (npts, 2),
    2 -> Hessians (npts, 2, 2).
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.n_dofs,):
        raise ValueError("coefficient vector has wrong length")
    loc = coeffs[space.elem_dofs[elem]]
    bc = space.basis_coeffs[elem] @ loc  # Bernstein coefficients
    lam = barycentric(space, elem, points)
    tabs = bernstein_tables(lam, space.k, order)
    if order == 0:
        return tabs[0] @ bc
    G = space.gradlam[elem]
    if order == 1:
        return np.einsum("pmc,m,ci->pi", tabs[1], bc, G)
    return np.einsum("pmcd,m,ci,dj->pij", tabs[2], bc, G, G)


def interpolate(space, f, grad_f):
    """DOF interpolant of a C1 function given value and gradient callables.

    f(points (n,2)) -> (n,), grad_f(points) -> (n, 2).  Returns the full
    coefficient vector (constrained entries included).
    """
    mesh, k = space.mesh, space.k
    nv = mesh.n_vertices
    out = np.zeros(space.n_dofs)
    out[0 : 3 * nv : 3] = f(mesh.vertices)
    g = grad_f(mesh.vertices)
    rotated = np.einsum("vab,vb->va", space.vertex_frame, g)
    out[1 : 3 * nv : 3] = rotated[:, 0]
    out[2 : 3 * nv : 3] = rotated[:, 1]

    n_em = space.n_edge_moments
    if n_em:
        rule = edge_rule(2 * k + 4)
        s, w = rule.points, rule.weights
        lo = mesh.vertices[mesh.edges[:, 0]]
        hi = mesh.vertices[mesh.edges[:, 1]]
        pts = lo[:, None, :] * (1.0 - s)[None, :, None] + hi[:, None, :] * s[None, :, None]
        fv = f(pts.reshape(-1, 2)).reshape(mesh.n_edges, len(s))
        for j in range(n_em):
            pj = Legendre.basis(j)(2 * s - 1.0)
            out[3 * nv + n_em * np.arange(mesh.n_edges) + j] = fv @ (w * pj)

    rule = triangle_rule(2 * k + 4)
    lam_q = np.column_stack(
        [1.0 - rule.points.sum(axis=1), rule.points[:, 0], rule.points[:, 1]]
    )
    x_q = np.einsum("qc,ecd->eqd", lam_q, space.elem_verts)
    fv = f(x_q.reshape(-1, 2)).reshape(mesh.n_triangles, len(lam_q))
    off = 3 * nv + n_em * mesh.n_edges
    n_im = space.n_interior_moments
    out[off :: n_im] = 2.0 * fv @ rule.weights
    if n_im == 3:
        centroid = space.elem_verts.mean(axis=1)
        xi = (x_q - centroid[:, None, :]) / mesh.diameters[:, None, None]
        for d in range(2):
            out[off + 1 + d :: n_im] = 2.0 * (fv * xi[:, :, d]) @ rule.weights
    return out


def save_coeffs_csv(coeffs, path):
    """Write a DOF vector as CSV lines "index,value"."""
    with open(path, "w") as fh:
        fh.write("index,value\n")
        for i, v in enumerate(np.asarray(coeffs, dtype=float)):
            fh.write("%d,%r\n" % (i, float(v)))


def load_coeffs_csv(path, n_dofs=None):
    """Read a DOF vector written by save_coeffs_csv."""
    idx, vals = [], []
    with open(path) as fh:
        header = fh.readline()
        if header.strip() != "index,value":
            raise ValueError("expected header 'index,value'")
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            parts = ln.split(",")
            if len(parts) != 2:
                raise ValueError("malformed CSV line: %r" % ln)
            idx.append(int(parts[0]))
            vals.append(float(parts[1]))
    n = n_dofs if n_dofs is not None else (max(idx) + 1 if idx else 0)
    out = np.zeros(n)
    out[np.array(idx, dtype=int)] = vals
    return out
