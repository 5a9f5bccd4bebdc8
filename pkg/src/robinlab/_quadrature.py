"""Quadrature rules and per-cell adaptive integration of field-weighted P1 products."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

_GAUSS_1D = 8
_GAUSS_TRI = 6
MAX_DEPTH = 60


def gauss01(n=_GAUSS_1D):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


@lru_cache(maxsize=32)
def jacobi01(n, b):
    """Nodes/weights on (0,1) for the weight t**b (b > -1)."""
    x, w = roots_jacobi(n, 0.0, b)
    return 0.5 * (x + 1.0), w * 2.0 ** (-b - 1.0)


def triangle_rule(n=_GAUSS_TRI):
    """Collapsed Gauss product rule on the reference triangle.

    Returns barycentric coordinates (k, 3) and weights summing to 1.
    All points are strictly interior.
    """
    t, w = gauss01(n)
    U, V = np.meshgrid(t, t, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    wt = (WU * WV * (1.0 - U)).ravel() * 2.0
    bary = np.column_stack([1.0 - x - y, x, y])
    return bary, wt


class Singularity:
    """Point singularity |z - center|^(-alpha) of the integrand.

    Pieces flagged singular have ``center`` as their vertex 0; their rule
    absorbs the radial factor into Gauss-Jacobi weights, so the center is
    never evaluated.
    """

    def __init__(self, center, alpha):
        self.center = np.asarray(center, dtype=float)
        self.alpha = float(alpha)


def _points_1d(s, sing, singularity):
    a, b = s[:, 0, 0], s[:, 1, 0]
    t, w = gauss01()
    pts = a[:, None] + (b - a)[:, None] * t[None, :]
    ww = np.abs(b - a)[:, None] * w[None, :]
    radial = None
    if singularity is not None and np.any(sing):
        al = singularity.alpha
        tj, wj = jacobi01(_GAUSS_1D, -al)
        L = np.abs(b - a)[sing]
        pts[sing] = a[sing, None] + (b - a)[sing, None] * tj[None, :]
        # integrand = smooth * r^-alpha with r = L t
        ww[sing] = (L ** (1.0 - al))[:, None] * wj[None, :]
        radial = sing
    return pts[..., None], ww, radial


def _points_2d(s, sing, singularity):
    bary, w = triangle_rule()
    pts = np.einsum("qv,kvd->kqd", bary, s)
    e1 = s[:, 1] - s[:, 0]
    e2 = s[:, 2] - s[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    ww = area[:, None] * w[None, :]
    radial = None
    if singularity is not None and np.any(sing):
        al = singularity.alpha
        tu, wu = jacobi01(_GAUSS_TRI, 1.0 - al)
        tv, wv = gauss01(_GAUSS_TRI)
        U, V = np.meshgrid(tu, tv, indexing="ij")
        WU, WV = np.meshgrid(wu, wv, indexing="ij")
        U, V, W = U.ravel(), V.ravel(), (WU * WV).ravel()
        S = s[sing]
        c = S[:, 0]
        d1 = S[:, 1] - c
        d2 = S[:, 2] - S[:, 1]
        p = c[:, None] + U[None, :, None] * (d1[:, None] + V[None, :, None] * d2[:, None])
        e = d1[:, None] + V[None, :, None] * d2[:, None]
        emag = np.sqrt(np.sum(e * e, axis=2))
        pts[sing] = p
        ww[sing] = 2.0 * area[sing, None] * W[None, :] * emag ** (-al)
        radial = sing
    return pts, ww, radial


def _evaluate(func, pts, radial, singularity):
    k, q, d = pts.shape
    vals = np.empty((k, q))
    reg = np.ones(k, dtype=bool) if radial is None else ~radial
    if np.any(reg):
        vals[reg] = func(pts[reg].reshape(-1, d)).reshape(-1, q)
    if radial is not None and np.any(radial):
        p = pts[radial]
        r = np.sqrt(np.sum((p - singularity.center) ** 2, axis=2))
        vals[radial] = func(p.reshape(-1, d)).reshape(-1, q) * r ** singularity.alpha
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("field is not finite at a quadrature point")
    return vals


def _parent_basis(P, pts):
    if P.shape[2] == 1:
        x0, x1 = P[:, 0, 0], P[:, 1, 0]
        p1 = (pts[..., 0] - x0[:, None]) / (x1 - x0)[:, None]
        return np.stack([1.0 - p1, p1], axis=2)
    T = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    Tinv = np.linalg.inv(T)
    loc = np.einsum("kab,kqb->kqa", Tinv, pts - P[:, None, 0])
    return np.concatenate([1.0 - loc.sum(axis=2, keepdims=True), loc], axis=2)


def _children(c, s, sing):
    if s.shape[2] == 1:
        mid = 0.5 * (s[:, 0] + s[:, 1])
        kids = [np.stack([s[:, 0], mid], axis=1), np.stack([mid, s[:, 1]], axis=1)]
    else:
        m01 = 0.5 * (s[:, 0] + s[:, 1])
        m12 = 0.5 * (s[:, 1] + s[:, 2])
        m20 = 0.5 * (s[:, 2] + s[:, 0])
        kids = [
            np.stack([s[:, 0], m01, m20], axis=1),
            np.stack([m01, s[:, 1], m12], axis=1),
            np.stack([m20, m12, s[:, 2]], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    # only the first child keeps the singular vertex
    flags = [sing] + [np.zeros_like(sing)] * (len(kids) - 1)
    return np.concatenate([c] * len(kids)), np.concatenate(kids), np.concatenate(flags), len(kids)


def adaptive_local_matrices(func, parents, initial, singularity=None, rtol=1e-11):
    """Adaptive subdivision quadrature of func*phi_i*phi_j on each parent cell.

    parents: (n_cells, N+1, N) vertex coordinates.
    initial: list of (cell index, subcell vertices, singular flag) covering
    each cell.  A subcell is accepted once splitting it changes its
    contribution by less than rtol times the whole-cell magnitude.
    """
    dim = parents.shape[2]
    n_loc = dim + 1
    out = np.zeros((len(parents), n_loc, n_loc))
    cid = np.array([c for c, _, _ in initial], dtype=np.int64)
    sub = np.array([s for _, s, _ in initial], dtype=float)
    sing = np.array([f for _, _, f in initial], dtype=bool)
    points = _points_1d if dim == 1 else _points_2d

    def integrate(c, s, flags):
        pts, ww, radial = points(s, flags, singularity)
        vals = _evaluate(func, pts, radial, singularity)
        phi = _parent_basis(parents[c], pts)
        return np.einsum("kq,kqi,kqj->kij", ww * vals, phi, phi)

    coarse = integrate(cid, sub, sing)
    scale = np.zeros(len(parents))
    np.maximum.at(scale, cid, np.abs(coarse).max(axis=(1, 2)))
    scale = np.where(scale > 0, scale, 1e-300)
    for _ in range(MAX_DEPTH):
        if len(cid) == 0:
            break
        kc, ks, kf, nk = _children(cid, sub, sing)
        fine = integrate(kc, ks, kf)
        fine_sum = fine.reshape(nk, len(cid), n_loc, n_loc).sum(axis=0)
        err = np.abs(fine_sum - coarse).max(axis=(1, 2))
        done = err <= rtol * scale[cid]
        np.add.at(out, cid[done], fine_sum[done])
        keep = ~done
        cid = np.tile(cid[keep], nk)
        sub = ks.reshape(nk, -1, *ks.shape[1:])[:, keep].reshape(-1, *ks.shape[1:])
        sing = kf.reshape(nk, -1)[:, keep].ravel()
        coarse = fine.reshape(nk, -1, n_loc, n_loc)[:, keep].reshape(-1, n_loc, n_loc)
    else:
        raise RuntimeError("adaptive quadrature did not converge")
    return out
