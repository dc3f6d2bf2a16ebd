"""Conforming triangle meshes with newest-vertex bisection.

Triangles are stored counterclockwise.  Each triangle carries a
refinement edge (local index of the edge opposite that vertex index) and
a generation counter; bisection inserts the midpoint of the refinement
edge and recursively refines incompatible neighbours so the mesh stays
conforming.  Boundary vertices are classified into corners (the two
adjacent boundary edges are not collinear) and flat boundary vertices,
which keep a unit tangent of the boundary line through them.
"""

import numpy as np

VERTEX_INTERIOR = 0
VERTEX_FLAT = 1
VERTEX_CORNER = 2


class Mesh:
    """Triangulation of a polygonal domain.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    edges : (ne, 2) int array, each row sorted
    elem_to_edge : (nt, 3) int array; local edge i sits opposite vertex i
    edge_elems : (ne, 2) int array, adjacent elements (-1 if boundary),
        lower element index first
    edge_is_boundary : (ne,) bool
    vertex_class : (nv,) int, one of VERTEX_INTERIOR/FLAT/CORNER
    vertex_tangent : (nv, 2) float, unit boundary tangent for flat vertices
    refinement_edge : (nt,) int, local edge index used by bisection
    generation : (nt,) int
    areas, diameters : (nt,) float
    """

    def __init__(self, vertices, triangles, refinement_edge=None, generation=None):
        self.vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=int)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be an (nv, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must be an (nt, 3) array")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(self.vertices)):
            raise ValueError("triangle indices out of range")

        if refinement_edge is None:
            refedge = None
        else:
            refedge = np.array(refinement_edge, dtype=int).copy()

        # enforce counterclockwise orientation (swap of vertices 1, 2
        # exchanges local edges 1 and 2)
        tri = triangles.copy()
        a = self.vertices[tri[:, 0]]
        d1 = self.vertices[tri[:, 1]] - a
        d2 = self.vertices[tri[:, 2]] - a
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(signed == 0.0):
            raise ValueError("degenerate (zero-area) triangle")
        flip = signed < 0
        if np.any(flip):
            tri[flip, 1], tri[flip, 2] = triangles[flip, 2], triangles[flip, 1]
            if refedge is not None:
                swap = refedge[flip]
                refedge[flip] = np.where(swap == 1, 2, np.where(swap == 2, 1, 0))
        self.triangles = tri
        self.areas = np.abs(signed)

        self._build_edges()
        self._classify_vertices()

        d01 = np.linalg.norm(self.vertices[tri[:, 1]] - self.vertices[tri[:, 0]], axis=1)
        d12 = np.linalg.norm(self.vertices[tri[:, 2]] - self.vertices[tri[:, 1]], axis=1)
        d20 = np.linalg.norm(self.vertices[tri[:, 0]] - self.vertices[tri[:, 2]], axis=1)
        edge_len = np.column_stack([d12, d20, d01])  # local edge i opposite vertex i
        self.diameters = edge_len.max(axis=1)
        if refedge is None:
            refedge = np.argmax(np.round(edge_len / edge_len.max() * 1e12), axis=1)
        if refedge.shape != (len(tri),) or refedge.min() < 0 or refedge.max() > 2:
            raise ValueError("refinement_edge must hold local indices 0..2")
        self.refinement_edge = refedge
        if generation is None:
            generation = np.zeros(len(tri), dtype=int)
        self.generation = np.asarray(generation, dtype=int)

    # -- topology ---------------------------------------------------------

    def _build_edges(self):
        tri = self.triangles
        raw = np.concatenate(
            [tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]], axis=0
        )
        raw = np.sort(raw, axis=1)
        self.edges, inv = np.unique(raw, axis=0, return_inverse=True)
        nt = len(tri)
        self.elem_to_edge = np.column_stack([inv[:nt], inv[nt:2 * nt], inv[2 * nt:]])

        ne = len(self.edges)
        counts = np.zeros(ne, dtype=int)
        np.add.at(counts, self.elem_to_edge.ravel(), 1)
        if counts.max() > 2:
            raise ValueError("non-manifold edge (more than two adjacent triangles)")
        self.edge_elems = -np.ones((ne, 2), dtype=int)
        order = np.argsort(self.elem_to_edge.ravel(), kind="stable")
        elem_ids = np.repeat(np.arange(nt), 3)[order]
        edge_ids = self.elem_to_edge.ravel()[order]
        start = 0
        for eid, cnt in zip(*np.unique(edge_ids, return_counts=True)):
            adj = np.sort(elem_ids[start:start + cnt])
            self.edge_elems[eid, :cnt] = adj
            start += cnt
        self.edge_is_boundary = counts == 1

    def _classify_vertices(self):
        nv = len(self.vertices)
        self.vertex_class = np.zeros(nv, dtype=np.int8)
        self.vertex_tangent = np.zeros((nv, 2))
        bedges = self.edges[self.edge_is_boundary]
        if not len(bedges):
            return
        incident = {}
        for a, b in bedges:
            incident.setdefault(int(a), []).append(int(b))
            incident.setdefault(int(b), []).append(int(a))
        for v, nbrs in incident.items():
            if len(nbrs) != 2:
                raise ValueError("boundary is not a closed polygon at vertex %d" % v)
            d1 = self.vertices[nbrs[0]] - self.vertices[v]
            d2 = self.vertices[nbrs[1]] - self.vertices[v]
            cr = d1[0] * d2[1] - d1[1] * d2[0]
            if abs(cr) <= 1e-12 * np.linalg.norm(d1) * np.linalg.norm(d2):
                self.vertex_class[v] = VERTEX_FLAT
                t = d1 / np.linalg.norm(d1)
                if t[0] < 0 or (t[0] == 0 and t[1] < 0):
                    t = -t
                self.vertex_tangent[v] = t
            else:
                self.vertex_class[v] = VERTEX_CORNER

    # -- conveniences -----------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def h(self):
        return float(self.diameters.max())

    @property
    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)


def uniform_rect_mesh(n, lo=(0.0, 0.0), hi=(1.0, 1.0)):
    """n-by-n grid of squares on [lo1,hi1]x[lo2,hi2], each split by the
    diagonal from its lower-left to its upper-right corner.

    The refinement edge of both triangles in a square is that diagonal
    (the longest edge), so the initial labelling is compatible for
    newest-vertex bisection.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if hi[0] <= lo[0] or hi[1] <= lo[1]:
        raise ValueError("domain must have positive side lengths")
    x = np.linspace(lo[0], hi[0], n + 1)
    y = np.linspace(lo[1], hi[1], n + 1)
    X, Y = np.meshgrid(x, y, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            p00, p10 = vid(i, j), vid(i + 1, j)
            p11, p01 = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((p00, p10, p11))
            tris.append((p00, p11, p01))
    return Mesh(verts, np.array(tris))


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def newest_vertex_bisect(mesh, marked):
    """Bisect the marked triangles, refining neighbours as needed to keep
    the mesh conforming.  Returns a new Mesh; an empty marking returns
    the input mesh unchanged.
    """
    marked = np.asarray(marked)
    if marked.dtype == bool:
        if marked.shape != (mesh.n_triangles,):
            raise ValueError("boolean mark array must have one entry per triangle")
        ids = np.nonzero(marked)[0]
    else:
        ids = marked.astype(int).ravel()
        if len(ids) and (ids.min() < 0 or ids.max() >= mesh.n_triangles):
            raise ValueError("marked triangle index out of range")
    if not len(ids):
        return mesh

    verts = [tuple(p) for p in mesh.vertices]
    # normalize storage to peak-first: refinement edge opposite slot 0
    tris = []
    for t in range(mesh.n_triangles):
        r = mesh.refinement_edge[t]
        v = mesh.triangles[t]
        tris.append((int(v[r]), int(v[(r + 1) % 3]), int(v[(r + 2) % 3])))
    gen = list(mesh.generation)
    active = [True] * len(tris)
    members = {}

    def _register(t):
        p, a, b = tris[t]
        for k in (_edge_key(a, b), _edge_key(b, p), _edge_key(p, a)):
            members.setdefault(k, set()).add(t)

    def _unregister(t):
        p, a, b = tris[t]
        for k in (_edge_key(a, b), _edge_key(b, p), _edge_key(p, a)):
            members[k].discard(t)

    for t in range(len(tris)):
        _register(t)
    midpoint = {}

    def _partner(t):
        p, a, b = tris[t]
        for s in members[_edge_key(a, b)]:
            if s != t:
                return s
        return None

    def _split(t, m):
        p, a, b = tris[t]
        _unregister(t)
        active[t] = False
        for child in ((m, p, a), (m, b, p)):
            tris.append(child)
            gen.append(gen[t] + 1)
            active.append(True)
            _register(len(tris) - 1)

    stack = list(int(i) for i in ids)
    guard = 0
    limit = 100 * (len(tris) + len(stack)) + 10000
    while stack:
        guard += 1
        if guard > limit:
            raise RuntimeError("bisection closure did not terminate")
        t = stack[-1]
        if not active[t]:
            stack.pop()
            continue
        p, a, b = tris[t]
        key = _edge_key(a, b)
        n = _partner(t)
        if n is not None:
            pn, an, bn = tris[n]
            if _edge_key(an, bn) != key:
                stack.append(n)
                continue
        if key in midpoint:
            m = midpoint[key]
        else:
            m = len(verts)
            pa = verts[a]
            pb = verts[b]
            verts.append((0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])))
            midpoint[key] = m
        _split(t, m)
        if n is not None:
            _split(n, m)
        stack.pop()

    keep = [i for i, al in enumerate(active) if al]
    new_tris = np.array([tris[i] for i in keep])
    new_gen = np.array([gen[i] for i in keep])
    return Mesh(
        np.array(verts),
        new_tris,
        refinement_edge=np.zeros(len(keep), dtype=int),
        generation=new_gen,
    )


def graded_mesh_sequence(levels, C, initial=None):
    """Sequence of bisection meshes graded toward the line x2 = 1.

    Level 0 is the initial mesh (a uniform 4x4 unit-square mesh unless
    `initial` is given; the marking rule with C around 100 needs an
    initial grid with n^2 > C/9 to engage at all).  Each further level
    marks, in one pass, every triangle with |T| > C (x2_T - 1)^2 / N,
    where x2_T is the second barycenter coordinate and N the triangle
    count entering the level, then bisects with closure.  Returns a list
    of `levels` meshes.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if C <= 0:
        raise ValueError("grading constant C must be positive")
    mesh = initial if initial is not None else uniform_rect_mesh(4)
    seq = [mesh]
    for _ in range(1, levels):
        prev = seq[-1]
        x2 = prev.barycenters[:, 1]
        marked = prev.areas > C * (x2 - 1.0) ** 2 / prev.n_triangles
        seq.append(newest_vertex_bisect(prev, marked))
    return seq


def save_mesh_txt(mesh, path):
    """Plain-text export: vertex count, one coordinate line per vertex,
    then one 0-based index line per triangle."""
    with open(path, "w") as fh:
        fh.write("%d\n" % mesh.n_vertices)
        for x, y in mesh.vertices:
            fh.write("%r %r\n" % (float(x), float(y)))
        for a, b, c in mesh.triangles:
            fh.write("%d %d %d\n" % (a, b, c))


def load_mesh_txt(path):
    """Read a mesh written by save_mesh_txt.  Raises ValueError on
    malformed files."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty mesh file")
    try:
        nv = int(lines[0])
    except ValueError:
        raise ValueError("first line must be the vertex count") from None
    if nv < 3 or len(lines) < 1 + nv + 1:
        raise ValueError("mesh file truncated")
    try:
        verts = np.array([[float(c) for c in ln.split()] for ln in lines[1:1 + nv]])
        tris = np.array([[int(c) for c in ln.split()] for ln in lines[1 + nv:]])
    except ValueError:
        raise ValueError("malformed coordinate or index line") from None
    if verts.shape != (nv, 2):
        raise ValueError("expected %d coordinate pairs" % nv)
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise ValueError("triangle lines must hold three indices")
    return Mesh(verts, tris)
