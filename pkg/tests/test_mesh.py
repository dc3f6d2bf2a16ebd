import numpy as np
import pytest

from cordesfem import (
    uniform_rect_mesh,
    newest_vertex_bisect,
    graded_mesh_sequence,
    save_mesh_txt,
    load_mesh_txt,
)


def test_uniform_mesh_counts_and_area():
    for n in (1, 2, 5):
        mesh = uniform_rect_mesh(n)
        assert mesh.n_triangles == 2 * n * n
        assert len(mesh.vertices) == (n + 1) ** 2
        assert abs(mesh.areas.sum() - 1.0) < 1e-14
        assert abs(mesh.h - np.sqrt(2.0) / n) < 1e-14
    mesh = uniform_rect_mesh(4, lo=(-1.0, -1.0), hi=(1.0, 1.0))
    assert abs(mesh.areas.sum() - 4.0) < 1e-13
    assert abs(mesh.h - np.sqrt(2.0) / 2.0) < 1e-14


def test_edge_topology_invariants():
    mesh = uniform_rect_mesh(3)
    # each interior edge has two adjacent elements, boundary edges one
    for e in range(mesh.n_edges):
        adj = mesh.edge_elems[e]
        if mesh.edge_is_boundary[e]:
            assert adj[0] >= 0 and adj[1] == -1
        else:
            assert adj[0] >= 0 and adj[1] > adj[0] - mesh.n_triangles
            assert adj[1] >= 0
            # lower-numbered element listed first
            assert adj[0] < adj[1]
        a, b = mesh.edges[e]
        assert a < b
    # Euler characteristic for a disk: V - E + F = 1
    assert len(mesh.vertices) - mesh.n_edges + mesh.n_triangles == 1
    # elem_to_edge round trip: the three edges of t contain t
    for t in range(mesh.n_triangles):
        for e in mesh.elem_to_edge[t]:
            assert t in mesh.edge_elems[e]


def test_bisection_keeps_conformity_and_area():
    rng = np.random.default_rng(5)
    mesh = uniform_rect_mesh(2)
    total = mesh.areas.sum()
    for _ in range(4):
        marked = np.flatnonzero(rng.random(mesh.n_triangles) < 0.4)
        mesh = newest_vertex_bisect(mesh, marked)
        assert abs(mesh.areas.sum() - total) < 1e-13
        assert len(mesh.vertices) - mesh.n_edges + mesh.n_triangles == 1
        interior = ~mesh.edge_is_boundary
        assert np.all(mesh.edge_elems[interior, 1] >= 0)


def test_bisection_marked_all_doubles():
    mesh = uniform_rect_mesh(2)
    fine = newest_vertex_bisect(mesh, np.arange(mesh.n_triangles))
    assert fine.n_triangles == 2 * mesh.n_triangles
    assert fine.generation.max() == mesh.generation.max() + 1


def test_graded_sequence_grows_and_grades():
    seq = graded_mesh_sequence(6, 120.0)
    sizes = [m.n_triangles for m in seq]
    assert sizes[0] == 32
    assert all(b > a for a, b in zip(sizes, sizes[1:]))
    last = seq[-1]
    # triangles near the line x2=1 must be smaller than far ones
    x2 = last.barycenters[:, 1]
    near = last.areas[x2 > 0.95].max()
    far = last.areas[x2 < 0.5].max()
    assert near < far


def test_mesh_save_load_round_trip(tmp_path):
    mesh = newest_vertex_bisect(uniform_rect_mesh(2), np.array([0, 3]))
    path = tmp_path / "mesh.txt"
    save_mesh_txt(mesh, path)
    back = load_mesh_txt(path)
    assert np.array_equal(mesh.triangles, back.triangles)
    assert np.array_equal(mesh.vertices, back.vertices)
    assert np.array_equal(mesh.refinement_edge, back.refinement_edge)


def test_uniform_mesh_rejects_bad_input():
    with pytest.raises(ValueError):
        uniform_rect_mesh(0)
    with pytest.raises(ValueError):
        uniform_rect_mesh(2, lo=(1.0, 0.0), hi=(0.0, 1.0))
