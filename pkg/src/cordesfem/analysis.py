"""Broken norms, error measurement and convergence reporting."""

from dataclasses import dataclass, field

import numpy as np

from .forms import VolumeCache, FaceTermCache


def _function_tables(space, coeffs, vol):
    u, g, H = vol.function(coeffs)
    return u, g, H, vol.weights


def lambda_norm(space, coeffs, lam, vol=None):
    """Broken norm (sum_K ||D^2 v||^2 + 2 lam ||grad v||^2 + lam^2 ||v||^2)^(1/2);
    at lam = 0 this is the broken H^2 seminorm."""
    vol = vol or VolumeCache(space)
    u, g, H, w = _function_tables(space, coeffs, vol)
    val = (w * (H ** 2).sum(axis=(-2, -1))).sum()
    if lam != 0.0:
        val += 2.0 * lam * (w * (g ** 2).sum(axis=-1)).sum()
        val += lam ** 2 * (w * u ** 2).sum()
    return float(np.sqrt(val))


def error_norms(space, coeffs, exact, lam=0.0, vol=None, degree=None):
    """Errors of a discrete function against an exact solution.

    Returns a dict with keys l2, h1 (H^1 seminorm), h2_broken and
    lambda_norm; integration uses an element rule of degree 2k+4 unless
    `degree` overrides it.
    """
    if vol is None or degree is not None:
        vol = VolumeCache(space, degree=degree)
    u, g, H, w = _function_tables(space, coeffs, vol)
    pts = vol.points.reshape(-1, 2)
    ue = np.asarray(exact.u(pts)).reshape(u.shape)
    ge = np.asarray(exact.grad(pts)).reshape(g.shape)
    He = np.asarray(exact.hess(pts)).reshape(H.shape)
    du, dg, dH = u - ue, g - ge, H - He
    l2 = (w * du ** 2).sum()
    h1 = (w * (dg ** 2).sum(axis=-1)).sum()
    h2 = (w * (dH ** 2).sum(axis=(-2, -1))).sum()
    lnorm = h2 + 2.0 * lam * h1 + lam ** 2 * l2
    return {
        "l2": float(np.sqrt(l2)),
        "h1": float(np.sqrt(h1)),
        "h2_broken": float(np.sqrt(h2)),
        "lambda_norm": float(np.sqrt(lnorm)),
    }


def mt_identity_gap(space, coeffs, vol=None, face=None):
    """Residual of the discrete Miranda-Talenti identity

    sum_K ||Delta v||^2 - sum_K ||D^2 v||^2 - 2 sum_F <[[grad v]], Delta_T v>,

    which vanishes identically on the Hermite space (vertex C^1
    continuity kills the edge endpoint terms)."""
    vol = vol or VolumeCache(space)
    face = face or FaceTermCache(space)
    _, _, H, w = _function_tables(space, coeffs, vol)
    lap2 = (w * (H[..., 0, 0] + H[..., 1, 1]) ** 2).sum()
    h2 = (w * (H ** 2).sum(axis=(-2, -1))).sum()
    idx = np.arange(len(face.edges))
    jump = np.zeros((len(idx), face.n_q))
    for side in (0, 1):
        _, gu = face.side_function(coeffs, idx, side)
        jump += np.einsum("bqd,bd->bq", gu, face.normal(idx, side))
    e_minus = face.elems[idx, 0]
    _, _, hess = face.side_basis(idx, 0)
    loc = coeffs[space.elem_dofs[e_minus]]
    Hu = np.einsum("bqjdf,bj->bqdf", hess, loc)
    t = face.tangent[idx]
    dtv = np.einsum("bqdf,bd,bf->bq", Hu, t, t)
    fsum = (face.rule.weights[None, :] * face.length[idx][:, None] * jump * dtv).sum()
    return float(lap2 - h2 - 2.0 * fsum)


def convergence_orders(errors, scales):
    """Observed orders log(e_i/e_{i+1}) / log(s_i/s_{i+1}); first entry None."""
    out = [None]
    for i in range(1, len(errors)):
        if errors[i] <= 0 or errors[i - 1] <= 0 or scales[i] == scales[i - 1]:
            out.append(float("nan"))
        else:
            out.append(
                float(
                    np.log(errors[i - 1] / errors[i])
                    / np.log(scales[i - 1] / scales[i])
                )
            )
    return out


CSV_HEADER = "h,ndof,l2,h1,h2_broken,lambda_norm,order_l2,order_h1,order_h2,order_lambda"

_ERR_KEYS = ("l2", "h1", "h2_broken", "lambda_norm")


@dataclass
class ErrorReport:
    """Convergence history over a mesh sequence.

    Uniform sequences must have strictly decreasing h, and orders are
    measured against h; graded sequences must have strictly increasing
    ndof, and orders are measured against ndof^(-1/2)."""

    graded: bool = False
    rows: list = field(default_factory=list)

    def add_row(self, h, ndof, errors):
        if self.rows:
            if self.graded:
                if ndof <= self.rows[-1]["ndof"]:
                    raise ValueError("graded sequence requires increasing ndof")
            elif h >= self.rows[-1]["h"]:
                raise ValueError("uniform sequence requires decreasing h")
        self.rows.append(
            {"h": float(h), "ndof": int(ndof), **{k: float(errors[k]) for k in _ERR_KEYS}}
        )

    def orders(self):
        if self.graded:
            scales = [r["ndof"] ** -0.5 for r in self.rows]
        else:
            scales = [r["h"] for r in self.rows]
        return {
            k: convergence_orders([r[k] for r in self.rows], scales) for k in _ERR_KEYS
        }

    def to_csv(self, path):
        ords = self.orders()
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for i, r in enumerate(self.rows):
                cells = ["%r" % r["h"], "%d" % r["ndof"]]
                cells += ["%r" % r[k] for k in _ERR_KEYS]
                for k in _ERR_KEYS:
                    o = ords[k][i]
                    cells.append("" if o is None else "%r" % o)
                fh.write(",".join(cells) + "\n")

    @staticmethod
    def from_csv(path):
        with open(path) as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise ValueError("unexpected error-report header: %s" % header)
            rows = []
            for line in fh:
                parts = line.rstrip("\n").split(",")
                rows.append(
                    {
                        "h": float(parts[0]),
                        "ndof": int(parts[1]),
                        **{k: float(parts[2 + i]) for i, k in enumerate(_ERR_KEYS)},
                    }
                )
        hs = [r["h"] for r in rows]
        graded = any(hs[i + 1] >= hs[i] for i in range(len(hs) - 1))
        rep = ErrorReport(graded=graded)
        for r in rows:
            rep.add_row(r["h"], r["ndof"], r)
        return rep
