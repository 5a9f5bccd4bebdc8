"""P1 assembly of the Robin energy form and evaluation of truncated functionals.

The quadratic form is

    gamma(u) = |Du|^2 + int xi u^2 + int_boundary beta u^2,

realised as u^T G u with G = K + M_xi + B.  Reaction integrals and the
mass shift use the lumped (nodal) mass so that pointwise truncations are
evaluated exactly at the nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _quadrature as quad
from .mesh import Mesh


class FieldError(ValueError):
    """A coefficient field violates its standing hypothesis."""


class ReactionError(FloatingPointError):
    pass


# ---------------------------------------------------------------- fields

@lru_cache(maxsize=64)
def _compile_expression(expr: str, dim: int):
    import sympy

    syms = sympy.symbols("x y")[:dim]
    try:
        parsed = sympy.sympify(expr, locals={"x": syms[0], "y": syms[-1]} if dim == 2 else {"x": syms[0]})
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise FieldError(f"cannot parse field expression {expr!r}: {exc}") from None
    extra = parsed.free_symbols - set(syms)
    if extra:
        raise FieldError(f"field expression {expr!r} uses unknown symbols {sorted(map(str, extra))}")
    fn = sympy.lambdify(syms, parsed, modules="numpy")

    def evaluate(points):
        cols = [points[:, k] for k in range(dim)]
        return np.broadcast_to(np.asarray(fn(*cols), dtype=float), (len(points),)).copy()

    return evaluate


@dataclass(frozen=True)
class ScalarField:
    """Coefficient field: constant, closed-form expression, or c0*|z - center|^(-alpha).

    role is "potential" (xi) or "boundary" (beta).  For singular powers,
    ``lebesgue_exponent`` is the s with xi in L^s; when omitted the midpoint
    of the admissible range (N, N/alpha) is used.
    """

    kind: str
    role: str = "potential"
    value: float = 0.0
    expr: str | None = None
    func: Callable | None = None
    center: tuple = ()
    strength: float = 0.0
    exponent: float = 0.0
    lebesgue_exponent: float | None = None

    @classmethod
    def constant(cls, c, role="potential"):
        return cls("constant", role=role, value=float(c))

    @classmethod
    def expression(cls, expr, role="potential"):
        """expr is a string in x (and y) or a callable on an (k, N) point array."""
        if callable(expr):
            return cls("expression", role=role, func=expr)
        return cls("expression", role=role, expr=str(expr))

    @classmethod
    def singular_power(cls, center, strength, exponent, s=None, role="potential"):
        center = tuple(float(c) for c in np.atleast_1d(center))
        return cls("singular_power", role=role, center=center, strength=float(strength),
                   exponent=float(exponent), lebesgue_exponent=None if s is None else float(s))

    def shifted(self, c):
        """The field plus a constant (only for constants and expressions)."""
        if self.kind == "constant":
            return ScalarField.constant(self.value + c, self.role)
        return ScalarField.expression(lambda p: self(p) + c, self.role)

    def validate(self, dim):
        if self.role not in ("potential", "boundary"):
            raise FieldError(f"unknown field role {self.role!r}")
        if self.kind == "constant":
            if not math.isfinite(self.value):
                raise FieldError("constant field must be finite")
            if self.role == "boundary" and self.value < 0:
                raise FieldError(f"H(beta): boundary coefficient must be >= 0, got {self.value}")
        elif self.kind == "singular_power":
            if self.role == "boundary":
                raise FieldError("H(beta): boundary coefficient must be Lipschitz, singular powers are not allowed")
            if len(self.center) != dim:
                raise FieldError(f"singular center has {len(self.center)} coordinates, domain has {dim}")
            a = self.exponent
            if a < 0:
                raise FieldError("singular exponent must be >= 0")
            if a > 0 and self.strength > 0:
                raise FieldError("H(xi)': positive part of the potential is unbounded")
            if a > 0:
                s = self.admissible_s(dim)
                if not (s > dim and a * s < dim):
                    raise FieldError(
                        f"H(xi): |z-c|^-{a} is not in L^s with s={s} > N={dim} (need alpha*s < N)")
        elif self.kind == "expression":
            if self.func is None and self.expr is None:
                raise FieldError("expression field without an expression")
        else:
            raise FieldError(f"unknown field kind {self.kind!r}")

    def admissible_s(self, dim):
        if self.lebesgue_exponent is not None:
            return self.lebesgue_exponent
        if self.exponent == 0:
            return math.inf
        return 0.5 * (dim + dim / self.exponent)

    def evaluator(self, dim):
        if self.kind == "constant":
            c = self.value
            return lambda p: np.full(len(p), c)
        if self.kind == "expression":
            if self.func is not None:
                f = self.func
                return lambda p: np.broadcast_to(np.asarray(f(p), dtype=float), (len(p),)).copy()
            return _compile_expression(self.expr, dim)
        c = np.asarray(self.center)
        s0, a = self.strength, self.exponent

        def ev(p):
            r = np.sqrt(np.sum((p - c) ** 2, axis=1))
            with np.errstate(divide="ignore"):
                return s0 * r ** (-a)

        return ev

    def __call__(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.evaluator(points.shape[1])(points)

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "expression":
            return {"kind": "expression", "expr": self.expr if self.expr else "<callable>"}
        return {"kind": "singular_power", "center": list(self.center), "strength": self.strength,
                "exponent": self.exponent, "s": self.lebesgue_exponent}


# ---------------------------------------------------------------- assembly

def _p1_gradients(mesh):
    x = mesh.nodes[mesh.cells]
    if mesh.dimension == 1:
        h = x[:, 1, 0] - x[:, 0, 0]
        grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
        return grads, h
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    T = np.stack([e1, e2], axis=2)  # columns are edges
    Tinv = np.linalg.inv(T)  # rows give gradients of lam1, lam2
    g12 = Tinv
    g0 = -g12.sum(axis=1)
    grads = np.concatenate([g0[:, None, :], g12], axis=1)
    return grads, 0.5 * np.abs(det)


def _scatter(mesh, local):
    n = mesh.n_nodes
    c = mesh.cells
    k = c.shape[1]
    rows = np.repeat(c, k, axis=1).ravel()
    cols = np.tile(c, (1, k)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _reference_mass(dim):
    if dim == 1:
        return np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    return (np.ones((3, 3)) + np.eye(3)) / 12.0


def _xi_initial_pieces(mesh, center):
    """Sub-cells covering every cell, with the singular point moved to vertex 0.

    Returns (cell index, vertices, singular flag) triples.
    """
    P = mesh.nodes[mesh.cells]
    if center is None:
        return P, [(k, cell, False) for k, cell in enumerate(P)]
    c = np.asarray(center, dtype=float)
    pieces = []
    eps = 1e-13
    if mesh.dimension == 1:
        for k, cell in enumerate(P):
            a, b = cell[0, 0], cell[1, 0]
            if a < c[0] < b:
                pieces.append((k, np.array([[c[0]], [a]]), True))
                pieces.append((k, np.array([[c[0]], [b]]), True))
            elif c[0] == a:
                pieces.append((k, cell.copy(), True))
            elif c[0] == b:
                pieces.append((k, cell[::-1].copy(), True))
            else:
                pieces.append((k, cell.copy(), False))
        return P, pieces
    for k, tri in enumerate(P):
        T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
        l12 = np.linalg.solve(T, c - tri[0])
        lam = np.array([1.0 - l12.sum(), l12[0], l12[1]])
        if np.any(lam < -eps):
            pieces.append((k, tri.copy(), False))
            continue
        vert = np.flatnonzero(lam > 1 - eps)
        if len(vert):
            i = int(vert[0])
            pieces.append((k, np.array([tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]]), True))
            continue
        for i in range(3):
            j, m = (i + 1) % 3, (i + 2) % 3
            # skip the degenerate piece when the point lies on edge (i, j)
            if lam[m] > eps:
                pieces.append((k, np.array([c, tri[i], tri[j]]), True))
    return P, pieces


def _assemble_xi_mass(mesh, xi: ScalarField, M):
    if xi.kind == "constant":
        return (xi.value * M).tocsr()
    ev = xi.evaluator(mesh.dimension)
    singular = xi.kind == "singular_power" and xi.exponent > 0
    center = xi.center if singular else None
    P, pieces = _xi_initial_pieces(mesh, center)
    sing = quad.Singularity(xi.center, xi.exponent) if singular else None
    try:
        local = quad.adaptive_local_matrices(ev, P, pieces, sing)
    except FloatingPointError:
        raise FieldError("H(xi)': potential is not finite at a quadrature point") from None
    return _scatter(mesh, local)


def _check_xi_positive_part(mesh, xi):
    if xi.kind == "expression":
        ev = xi.evaluator(mesh.dimension)
        vals = ev(mesh.nodes)
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise FieldError(f"H(xi)': potential is not finite at node {bad}")


def _assemble_boundary(mesh, beta: ScalarField):
    n = mesh.n_nodes
    if mesh.dimension == 1:
        ev = beta.evaluator(1)
        nodes = mesh.facets[:, 0]
        vals = ev(mesh.nodes[nodes])
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise FieldError(f"H(beta): boundary coefficient must be finite and >= 0, got {vals.tolist()}")
        return sp.coo_matrix((vals * mesh.facet_measures, (nodes, nodes)), shape=(n, n)).tocsr()
    f = mesh.facets
    L = mesh.facet_measures
    if beta.kind == "constant":
        local = beta.value * L[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)
    else:
        t, w = quad.gauss01()
        x0 = mesh.nodes[f[:, 0]]
        x1 = mesh.nodes[f[:, 1]]
        pts = x0[:, None, :] + t[None, :, None] * (x1 - x0)[:, None, :]
        vals = beta.evaluator(2)(pts.reshape(-1, 2)).reshape(len(f), len(t))
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            k = np.unravel_index(np.argmin(np.where(np.isfinite(vals), vals, -np.inf)), vals.shape)
            raise FieldError(f"H(beta): boundary coefficient is negative or not finite near {pts[k].tolist()}")
        phi = np.stack([1.0 - t, t])
        local = np.einsum("fq,iq,jq->fij", vals * (L[:, None] * w[None, :]), phi, phi)
    rows = np.repeat(f, 2, axis=1).ravel()
    cols = np.tile(f, (1, 2)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


@dataclass(frozen=True, eq=False)
class AssembledForms:
    mesh: Mesh
    xi: ScalarField
    beta: ScalarField
    K: sp.csr_matrix
    M: sp.csr_matrix
    M_xi: sp.csr_matrix
    B: sp.csr_matrix
    G: sp.csr_matrix
    lumped: np.ndarray

    @property
    def n(self):
        return self.mesh.n_nodes

    @cached_property
    def H1(self):
        return (self.K + self.M).tocsc()

    @cached_property
    def _h1_lu(self):
        return spla.splu(self.H1)

    def h1_norm(self, u):
        return math.sqrt(max(float(u @ (self.H1 @ u)), 0.0))

    def l2_norm(self, u):
        return math.sqrt(max(float(u @ (self.M @ u)), 0.0))

    def dual_norm(self, r):
        """Norm of a residual functional in the dual of the discrete H1."""
        return math.sqrt(max(float(r @ self._h1_lu.solve(r)), 0.0))

    @cached_property
    def _edge_data(self):
        grads, meas = _p1_gradients(self.mesh)
        return grads[:, 1:, :], meas

    def dirichlet_energy(self, u):
        """|Du|^2 summed cellwise from nodal differences (no cancellation)."""
        g, meas = self._edge_data
        c = self.mesh.cells
        d = u[c[:, 1:]] - u[c[:, :1]]
        Du = np.einsum("ki,kid->kd", d, g)
        return float(np.sum(meas * np.sum(Du * Du, axis=1)))

    def apply_G(self, u):
        """G @ u applied term by term; summing K, M_xi, B first loses low-order bits."""
        return self.K @ u + self.M_xi @ u + self.B @ u

    def gamma(self, u):
        u = np.asarray(u, dtype=float)
        return self.dirichlet_energy(u) + float(u @ (self.M_xi @ u)) + float(u @ (self.B @ u))

    def export_coo(self, path, which="G"):
        """Write one matrix as 'row col value' lines."""
        A = getattr(self, which).tocoo()
        order = np.lexsort((A.col, A.row))
        with open(path, "w") as fh:
            for i, j, v in zip(A.row[order], A.col[order], A.data[order]):
                fh.write(f"{i} {j} {v:.17g}\n")


def assemble(mesh: Mesh, xi: ScalarField | None = None, beta: ScalarField | None = None) -> AssembledForms:
    """Assemble K, M, M_xi, B and G = K + M_xi + B with P1 elements."""
    xi = ScalarField.constant(0.0) if xi is None else xi
    beta = ScalarField.constant(0.0, role="boundary") if beta is None else beta
    if beta.role != "boundary":
        beta = ScalarField(**{**beta.__dict__, "role": "boundary"})
    xi.validate(mesh.dimension)
    beta.validate(mesh.dimension)
    _check_xi_positive_part(mesh, xi)

    grads, meas = _p1_gradients(mesh)
    Kloc = meas[:, None, None] * np.einsum("kid,kjd->kij", grads, grads)
    Mloc = meas[:, None, None] * _reference_mass(mesh.dimension)[None]
    K = _scatter(mesh, Kloc)
    M = _scatter(mesh, Mloc)
    M_xi = _assemble_xi_mass(mesh, xi, M)
    B = _assemble_boundary(mesh, beta)
    G = (K + M_xi + B).tocsr()
    lumped = np.asarray(M.sum(axis=1)).ravel()
    for A in (K, M, M_xi, B, G):
        A.sort_indices()
    return AssembledForms(mesh, xi, beta, K, M, M_xi, B, G, lumped)


# ---------------------------------------------------------------- functionals

SHIFT_TARGETS = ("full", "negative", "none")


@dataclass(frozen=True, eq=False)
class VariationalProblem:
    """Functional u -> 1/2 gamma(u) + shift(u) - sum_i m_i P(z_i, u_i).

    reaction is a truncated reaction (or None for the purely quadratic
    functional); mu is the mass shift, applied to u or to its negative part.
    """

    forms: AssembledForms
    reaction: object = None
    mu: float = 0.0
    shift_target: str = "none"

    def __post_init__(self):
        if self.shift_target not in SHIFT_TARGETS:
            raise ValueError(f"shift_target must be one of {SHIFT_TARGETS}")
        if self.mu < 0:
            raise ValueError("mass shift must be >= 0")

    @classmethod
    def from_reaction(cls, forms, reaction):
        return cls(forms, reaction, reaction.mu, reaction.shift_target)

    @property
    def lam(self):
        return getattr(self.reaction, "lam", None)

    def _react(self, u, which):
        if self.reaction is None:
            return np.zeros_like(u)
        vals = getattr(self.reaction, which)(u)
        bad = ~np.isfinite(vals)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ReactionError(f"reaction {which} is not finite at node {i} (u = {u[i]!r})")
        return vals

    def _shift_weights(self, u):
        m = self.forms.lumped
        if self.shift_target == "full":
            return self.mu * m
        if self.shift_target == "negative":
            return self.mu * m * (u < 0)
        return np.zeros_like(m)

    def energy(self, u):
        u = np.asarray(u, dtype=float)
        m = self.forms.lumped
        val = 0.5 * self.forms.gamma(u)
        val += 0.5 * float(np.sum(self._shift_weights(u) * u * u))
        val -= float(m @ self._react(u, "primitive"))
        return val

    def gradient(self, u):
        u = np.asarray(u, dtype=float)
        m = self.forms.lumped
        return self.forms.apply_G(u) + self._shift_weights(u) * u - m * self._react(u, "value")

    def hessian(self, u):
        u = np.asarray(u, dtype=float)
        m = self.forms.lumped
        d = self._shift_weights(u) - m * self._react(u, "derivative")
        return (self.forms.G + sp.diags(d)).tocsc()

    def residual_norm(self, u):
        return self.forms.dual_norm(self.gradient(u))


def _check_lam(problem, lam):
    if lam is not None and problem.lam is not None and not np.isclose(lam, problem.lam, rtol=0, atol=1e-14):
        raise ValueError(f"lambda {lam} does not match the reaction's lambda {problem.lam}")


def energy(problem: VariationalProblem, lam, u):
    _check_lam(problem, lam)
    return problem.energy(u)


def gradient(problem: VariationalProblem, lam, u):
    _check_lam(problem, lam)
    return problem.gradient(u)


def hessian(problem: VariationalProblem, lam, u):
    _check_lam(problem, lam)
    return problem.hessian(u)
