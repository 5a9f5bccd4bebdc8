"""Generalized eigenproblems G u = lambda M u, coercivity shifts and Picone defects."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _quadrature as quad
from .forms import AssembledForms, ScalarField, _assemble_xi_mass

log = logging.getLogger(__name__)

EIG_TOL = 1e-12
RESIDUAL_TOL = 1e-10
MAX_ITER = 10_000


class EigenError(RuntimeError):
    pass


@dataclass
class EigenResult:
    lambda_hat_1: float
    u_hat_1: np.ndarray
    residual: float
    iterations: int
    min_interior_value: float
    higher: list = field(default_factory=list)

    def to_dict(self):
        return {
            "lambda_hat_1": self.lambda_hat_1,
            "residual": self.residual,
            "min_interior_value": self.min_interior_value,
            "iterations": self.iterations,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _is_positive_definite(A):
    """Inertia test through an unpivoted symmetric LU: all pivots positive."""
    try:
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError:
        return False
    d = lu.U.diagonal()
    return bool(np.all(d > 0))


def _pd_shift(forms):
    """A shift s >= 1 with G + s M positive definite."""
    s = 1.0
    for _ in range(200):
        if _is_positive_definite(forms.G + s * forms.M):
            return s
        s = 2.0 * s + 1.0
    raise EigenError("could not find a positive definite shift of G")


def _m_residual(forms, lam, x):
    """Dual H1 norm of G x - lam M x (x is M-normalized by the callers)."""
    return forms.dual_norm(forms.apply_G(x) - lam * (forms.M @ x))


def _lowest_pair(forms):
    """Shift-invert power iteration for the smallest eigenpair; cached on forms."""
    cached = forms.__dict__.get("_lowest_pair")
    if cached is not None:
        return cached
    s = _pd_shift(forms)
    lu = spla.splu((forms.G + s * forms.M).tocsc())
    M, G = forms.M, forms.G
    x = np.ones(forms.n)
    x /= math.sqrt(x @ (M @ x))
    lam_old = math.inf
    res = math.inf
    for it in range(1, MAX_ITER + 1):
        y = lu.solve(M @ x)
        y /= math.sqrt(y @ (M @ y))
        lam = forms.gamma(y)
        x = y
        if abs(lam - lam_old) <= EIG_TOL * max(1.0, abs(lam)):
            res = _m_residual(forms, lam, x)
            if res <= RESIDUAL_TOL:
                break
        lam_old = lam
    else:
        res = _m_residual(forms, lam, x)
        raise EigenError(f"power iteration did not converge in {MAX_ITER} steps (residual {res:.3e})")
    out = (lam, x, res, it, s)
    forms.__dict__["_lowest_pair"] = out
    return out


def _smallest_pencil_eigenvalue(A, H, sigma):
    """Smallest eigenvalue of the pencil (A, H), H positive definite."""
    n = A.shape[0]
    if n <= 400:
        w = sla.eigh(A.toarray(), H.toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(w[0])
    w = spla.eigsh(A.tocsc(), k=1, M=H.tocsc(), sigma=sigma, which="LM", v0=np.ones(n),
                   tol=1e-13, return_eigenvectors=False)
    return float(w[0])


def coercivity_shift(forms: AssembledForms):
    """mu = max(0, -lambda_min) + 1 and the H1-equivalence constant c0.

    c0 is the smallest eigenvalue of (G + mu M) against (K + M), reduced by
    a relative 1e-9 so it is a safe lower bound.
    """
    lam_min = _lowest_pair(forms)[0]
    mu = max(0.0, -lam_min) + 1.0
    c0 = _smallest_pencil_eigenvalue(forms.G + mu * forms.M, forms.H1, sigma=-1.0)
    return mu, c0 * (1.0 - 1e-9)


def principal_eigenpair(forms: AssembledForms) -> EigenResult:
    """Principal eigenpair, M-normalized, with positive mean."""
    lam, x, res, it, _ = _lowest_pair(forms)
    u = x.copy()
    if np.sum(forms.lumped * u) < 0:
        u = -u
    top = np.max(np.abs(u))
    if np.min(u) < -1e-10 * top:
        raise EigenError(f"principal eigenvector changes sign (min {np.min(u):.3e}); simplicity surrogate violated")
    u = np.maximum(u, 0.0)
    interior = forms.mesh.interior_nodes
    min_int = float(np.min(u[interior])) if len(interior) else float(np.min(u))
    if not min_int > 0:
        raise EigenError("principal eigenvector vanishes at an interior node")
    return EigenResult(float(lam), u, float(res), int(it), min_int)


def eigenvalues(forms: AssembledForms, k: int, return_status=False):
    """k smallest generalized eigenvalues by shift-invert subspace iteration.

    The block carries a few guard vectors; converged leading vectors are
    locked (deflated).  With return_status the pair (values, converged) is
    returned; on non-convergence the best estimates are returned with a
    warning.
    """
    n = forms.n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    if k == n or n <= 64:
        w = sla.eigh(forms.G.toarray(), forms.M.toarray(), eigvals_only=True)
        vals = [float(v) for v in w[:k]]
        return (vals, True) if return_status else vals
    s = _pd_shift(forms)
    lu = spla.splu((forms.G + s * forms.M).tocsc())
    M, G = forms.M, forms.G
    p = min(n, k + max(4, k // 2))
    rng = np.random.default_rng(12345)
    X = rng.standard_normal((n, p))
    X[:, 0] = 1.0
    old = np.full(k, np.inf)
    converged = False
    for it in range(1, MAX_ITER + 1):
        Y = np.column_stack([lu.solve(M @ X[:, j]) for j in range(p)])
        Gp = Y.T @ (forms.K @ Y + forms.M_xi @ Y + forms.B @ Y)
        Mp = Y.T @ (M @ Y)
        theta, C = sla.eigh(0.5 * (Gp + Gp.T), 0.5 * (Mp + Mp.T))
        X = Y @ C
        vals = theta[:k]
        if np.all(np.abs(vals - old) <= EIG_TOL * np.maximum(1.0, np.abs(vals))):
            res = max(_m_residual(forms, vals[j], X[:, j]) for j in range(k))
            if res <= RESIDUAL_TOL * max(1.0, float(np.max(np.abs(vals)))):
                converged = True
                break
        old = vals.copy()
    if not converged:
        log.warning("subspace iteration stopped after %d steps without convergence", MAX_ITER)
    out = [float(v) for v in vals]
    return (out, converged) if return_status else out


def weighted_mass(forms: AssembledForms, weight: ScalarField):
    """Matrix of int weight * phi_i * phi_j."""
    return _assemble_xi_mass(forms.mesh, weight, forms.M)


def spectral_gap_constant(forms: AssembledForms, theta: ScalarField):
    """Gap constant c with u^T (G - M_theta) u >= c u^T (K + M) u.

    Requires theta <= lambda_hat_1 everywhere.  Returns (c, degenerate)
    where degenerate flags theta identically equal to lambda_hat_1, in which
    case c = 0.
    """
    lam1 = principal_eigenpair(forms).lambda_hat_1
    mesh = forms.mesh
    P = mesh.nodes[mesh.cells]
    samples = np.vstack([mesh.nodes, P.mean(axis=1)])
    vals = theta(samples)
    tol = 1e-12 * max(1.0, abs(lam1))
    if np.any(~np.isfinite(vals)):
        raise ValueError("theta must be bounded")
    bad = np.flatnonzero(vals > lam1 + tol)
    if len(bad):
        i = int(bad[0])
        where = f"node {i}" if i < mesh.n_nodes else f"centroid of cell {i - mesh.n_nodes}"
        raise ValueError(f"theta exceeds lambda_hat_1 = {lam1:.12g} at {where} (value {vals[i]:.12g})")
    degenerate = bool(np.all(np.abs(vals - lam1) <= tol))
    Mt = weighted_mass(forms, theta)
    c = _smallest_pencil_eigenvalue(forms.G - Mt, forms.H1, sigma=-1.0)
    if degenerate:
        return 0.0, True
    return c, False


def _cell_gradients(forms):
    from .forms import _p1_gradients

    return _p1_gradients(forms.mesh)


def picone_defect(u, v, forms: AssembledForms):
    """Quadrature of R(v, u) = |Dv|^2 - Du . D(v^2/u) for nodal u > 0, v >= 0."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(~(u > 0)):
        i = int(np.flatnonzero(~(u > 0))[0])
        raise ValueError(f"u must be positive at every node (node {i} has {u[i]!r})")
    if np.any(v < 0):
        raise ValueError("v must be nonnegative")
    mesh = forms.mesh
    grads, meas = _cell_gradients(forms)
    cu = u[mesh.cells]
    cv = v[mesh.cells]
    Du = np.einsum("ki,kid->kd", cu, grads)
    Dv = np.einsum("ki,kid->kd", cv, grads)
    if mesh.dimension == 1:
        t, w = quad.gauss01()
        lam = np.stack([1.0 - t, t], axis=1)
    else:
        lam, w = quad.triangle_rule()
    uq = cu @ lam.T  # (cells, q)
    vq = cv @ lam.T
    ratio = vq / uq
    # D(v^2/u) = 2 (v/u) Dv - (v/u)^2 Du
    DuDv = np.sum(Du * Dv, axis=1)[:, None]
    DuDu = np.sum(Du * Du, axis=1)[:, None]
    DvDv = np.sum(Dv * Dv, axis=1)[:, None]
    integrand = DvDv - (2.0 * ratio * DuDv - ratio ** 2 * DuDu)
    return float(np.sum(meas[:, None] * w[None, :] * integrand))
