"""Quadrature rules on the reference triangle and the unit interval.

The reference triangle is {(x, y) : x >= 0, y >= 0, x + y <= 1} with area
1/2; edge rules live on [0, 1].  Low triangle degrees use classical
symmetric rules with positive weights; higher degrees fall back to a
conical-product Gauss rule (Gauss-Legendre x Gauss-Jacobi), which keeps
every weight positive at any degree.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_TRIANGLE_DEGREE = 20
MAX_EDGE_DEGREE = 25


@dataclass(frozen=True)
class QuadRule:
    """Points, positive weights and the polynomial degree integrated exactly."""

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int
    kind: str


def _orbit_points(bary_orbits):
    """Expand (multiplicity-aware) barycentric orbits into reference points.

    Each entry is (weight, lam) where lam is a barycentric triple; all
    distinct permutations of lam get the same weight.  Table weights are
    normalized to sum to 1 and are rescaled by the reference area 1/2.
    """
    pts, wts = [], []
    for w, lam in bary_orbits:
        seen = set()
        for perm in ((0, 1, 2), (1, 2, 0), (2, 0, 1), (0, 2, 1), (2, 1, 0), (1, 0, 2)):
            p = (lam[perm[0]], lam[perm[1]], lam[perm[2]])
            if p in seen:
                continue
            seen.add(p)
            # reference vertices (0,0), (1,0), (0,1): x = lam2, y = lam3
            pts.append((p[1], p[2]))
            wts.append(0.5 * w)
    return np.array(pts), np.array(wts)


# orbit tables: (normalized weight, barycentric representative)
_TRI_TABLES = {
    1: [(1.0, (1 / 3, 1 / 3, 1 / 3))],
    2: [(1 / 3, (2 / 3, 1 / 6, 1 / 6))],
    4: [
        (0.223381589678011, (0.108103018168070, 0.445948490915965, 0.445948490915965)),
        (0.109951743655322, (0.816847572980459, 0.091576213509771, 0.091576213509771)),
    ],
    5: [
        (0.225, (1 / 3, 1 / 3, 1 / 3)),
        (0.132394152788506, (0.059715871789770, 0.470142064105115, 0.470142064105115)),
        (0.125939180544827, (0.797426985353087, 0.101286507323456, 0.101286507323456)),
    ],
}


def _conical_rule(degree):
    """Positive-weight product rule exact to the requested total degree."""
    n = (degree + 2) // 2  # Gauss points per direction, 2n-1 >= degree
    x_gl, w_gl = roots_legendre(n)
    xi = 0.5 * (x_gl + 1.0)
    wxi = 0.5 * w_gl
    t, wt = roots_jacobi(n, 1.0, 0.0)  # weight (1-t) on [-1, 1]
    eta = 0.5 * (t + 1.0)
    weta = 0.25 * wt
    X = xi[:, None] * (1.0 - eta[None, :])
    Y = np.broadcast_to(eta[None, :], X.shape)
    W = wxi[:, None] * weta[None, :]
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts, W.ravel(), 2 * n - 1


def triangle_rule(degree):
    """Quadrature rule on the reference triangle, exact to `degree`.

    Weights are positive and sum to 1/2.  Raises ValueError outside
    1 <= degree <= 20.
    """
    if not isinstance(degree, (int, np.integer)):
        raise ValueError("quadrature degree must be an integer")
    if degree < 1 or degree > MAX_TRIANGLE_DEGREE:
        raise ValueError(
            "triangle_rule supports 1 <= degree <= %d, got %s"
            % (MAX_TRIANGLE_DEGREE, degree)
        )
    table_degree = {1: 1, 2: 2, 3: 4, 4: 4, 5: 5}.get(int(degree))
    if table_degree is not None:
        pts, wts = _orbit_points(_TRI_TABLES[table_degree])
        return QuadRule(pts, wts, table_degree, "triangle")
    pts, wts, exact = _conical_rule(int(degree))
    return QuadRule(pts, wts, exact, "triangle")


def edge_rule(degree):
    """Gauss-Legendre rule on [0, 1], exact to `degree` (1 <= degree <= 25)."""
    if not isinstance(degree, (int, np.integer)):
        raise ValueError("quadrature degree must be an integer")
    if degree < 1 or degree > MAX_EDGE_DEGREE:
        raise ValueError(
            "edge_rule supports 1 <= degree <= %d, got %s" % (MAX_EDGE_DEGREE, degree)
        )
    n = (int(degree) + 2) // 2
    x, w = roots_legendre(n)
    return QuadRule(0.5 * (x + 1.0), 0.5 * w, 2 * n - 1, "edge")
