"""Bernstein polynomial basis of degree k on a triangle, in barycentric
coordinates.  Derivatives are taken with respect to the barycentric
coordinates; the chain rule with the (constant) barycentric gradients of
an element is applied by the caller.
"""

from math import factorial

import numpy as np


def multiindices(k):
    """Exponent triples (i, j, l) with i+j+l = k, in a fixed order."""
    out = [(i, j, k - i - j) for i in range(k, -1, -1) for j in range(k - i, -1, -1)]
    return np.array(out, dtype=int)


def dim(k):
    return (k + 1) * (k + 2) // 2


def bernstein_tables(lam, k, order=2):
    """Values and barycentric derivatives of the degree-k Bernstein basis.

    lam has shape (..., 3).  Returns [val] with val (..., N); with
    order >= 1 also d1 (..., N, 3); with order >= 2 also d2 (..., N, 3, 3).
    """
    lam = np.asarray(lam, dtype=float)
    E = multiindices(k)
    coef = np.array(
        [factorial(k) // (factorial(i) * factorial(j) * factorial(l)) for i, j, l in E],
        dtype=float,
    )
    P = lam[..., None] ** np.arange(k + 1)  # (..., 3, k+1)

    def monom(exps):
        ec = np.clip(exps, 0, k)
        return P[..., 0, ec[:, 0]] * P[..., 1, ec[:, 1]] * P[..., 2, ec[:, 2]]

    out = [coef * monom(E)]
    if order >= 1:
        d1 = np.empty(out[0].shape + (3,))
        for c in range(3):
            ec = E.copy()
            ec[:, c] -= 1
            d1[..., c] = coef * E[:, c] * monom(ec)
        out.append(d1)
    if order >= 2:
        d2 = np.empty(out[0].shape + (3, 3))
        for c in range(3):
            for d in range(c, 3):
                ec = E.copy()
                ec[:, c] -= 1
                ec[:, d] -= 1
                fac = E[:, c] * (E[:, d] - (1 if c == d else 0))
                v = coef * fac * monom(ec)
                d2[..., c, d] = v
                d2[..., d, c] = v
        out.append(d2)
    return out
