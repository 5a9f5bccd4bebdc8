"""Critical points of the truncated functionals.

Minimization is preconditioned gradient descent (preconditioner G + mu M_l)
with Armijo backtracking and an optional Newton polish.  Saddle points are
found with a discretized mountain-pass path deformation.  ``certify`` chains
these into existence / uniqueness / multiplicity / nonexistence evidence.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import AssembledForms, VariationalProblem, _check_lam
from .nonlinearity import (HypothesisError, Nonlinearity, make_truncation,
                           unilateral_c1, unilateral_constants)
from .spectrum import coercivity_shift, principal_eigenpair

log = logging.getLogger(__name__)

CONVERGED = "Converged"
MAX_ITER = "MaxIter"
TO_ZERO = "DivergedToZero"

STRICT = "StrictlyInteriorPositive"
NONNEG = "Nonnegative"
ZERO = "Zero"
SIGN_CHANGING = "SignChanging"


@dataclass(frozen=True)
class Tolerances:
    tol_grad: float = 1e-9
    tol_eig: float = 1e-8
    uniq_tol: float = 1e-6
    pos_floor: float = 1e-10
    distinctness_floor: float = 1e-3
    zero_tol: float = 1e-7
    neg_tol: float = 1e-8


DEFAULT_TOL = Tolerances()


class SolverError(RuntimeError):
    pass


class NonCoerciveError(SolverError):
    """Energy unbounded below along the iterates."""


class PathCollapseError(SolverError):
    pass


class IntervalViolation(SolverError):
    pass


class UniquenessError(SolverError):
    pass


class CertificationError(SolverError):
    pass


class NonexistenceContradiction(CertificationError):
    """A positive solution was found where none may exist."""


@dataclass
class SolveResult:
    u: np.ndarray
    energy: float
    residual_norm: float
    iterations: int
    status: str
    positivity: str
    message: str = ""

    def to_dict(self):
        return {"energy": self.energy, "residual_norm": self.residual_norm,
                "iterations": self.iterations, "status": self.status,
                "positivity": self.positivity, "u_max": float(np.max(self.u)),
                "u_min": float(np.min(self.u)), "message": self.message}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def write_solution_csv(path, mesh, u):
    """Node coordinates and values, one row per node."""
    cols = ["x", "y"][:mesh.dimension]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + ["u"])
        for p, v in zip(mesh.nodes, u):
            w.writerow([f"{c:.17g}" for c in p] + [f"{v:.17g}"])


def classify(u, forms: AssembledForms, tol: Tolerances = DEFAULT_TOL):
    umax = float(np.max(np.abs(u)))
    if umax <= tol.zero_tol:
        return ZERO
    if float(np.max(np.maximum(-u, 0.0))) > tol.neg_tol:
        return SIGN_CHANGING
    interior = forms.mesh.interior_nodes
    if float(np.min(u[interior])) > tol.pos_floor:
        return STRICT
    return NONNEG


def _converged(forms, u, res, tol):
    """res <= tol_grad * min(1, |u|_H1): a tiny u does not pass on its small residual."""
    return res <= tol.tol_grad * min(1.0, forms.h1_norm(u))


def is_positive_solution(res: SolveResult, tol: Tolerances = DEFAULT_TOL):
    return res.status == CONVERGED and res.positivity == STRICT


# ---------------------------------------------------------------- preconditioner

def _preconditioner(forms, mu):
    """Cached sparse LU of G + mu M_l."""
    cache = forms.__dict__.setdefault("_precond", {})
    lu = cache.get(mu)
    if lu is None:
        lu = spla.splu((forms.G + sp.diags(mu * forms.lumped)).tocsc())
        cache[mu] = lu
    return lu


def shift_of(forms):
    cache = forms.__dict__.setdefault("_shift", {})
    if "mu" not in cache:
        cache["mu"], cache["c0"] = coercivity_shift(forms)
    return cache["mu"]


def _try_newton(problem, u, r):
    try:
        H = problem.hessian(u)
    except FloatingPointError:
        return None
    if not np.all(np.isfinite(H.data)):
        return None
    try:
        with np.errstate(all="ignore"):
            d = spla.splu(H).solve(-r)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(d)):
        return None
    return d


def minimize(problem: VariationalProblem, lam, u0, tol: Tolerances = DEFAULT_TOL, max_iter=20_000,
             newton=True, blowup=1e8, callback=None) -> SolveResult:
    """Descent to a local minimizer from u0; energy is non-increasing.

    lam may be None; otherwise it must match the reaction's lambda.
    callback(it, u, energy, residual) is called after every accepted step.
    """
    _check_lam(problem, lam)
    forms = problem.forms
    P = _preconditioner(forms, shift_of(forms))
    u = np.array(u0, dtype=float)
    E = problem.energy(u)
    r = problem.gradient(u)
    res = forms.dual_norm(r)
    alpha = 1.0
    status, msg = MAX_ITER, "iteration cap reached"
    it = 0
    for it in range(1, max_iter + 1):
        if _converged(forms, u, res, tol):
            status, msg = CONVERGED, ""
            break
        accepted = False
        if newton:
            d = _try_newton(problem, u, r)
            if d is not None:
                slope = float(r @ d)
                if slope < 0 and -slope > 1e-12 * (1 + abs(E)):
                    t = 1.0
                    for _ in range(30):
                        un = u + t * d
                        En = problem.energy(un)
                        if En <= E + 1e-4 * t * slope:
                            accepted = True
                            break
                        t *= 0.5
                else:
                    # the predicted decrease is below the rounding level of E:
                    # judge the full step by the residual instead
                    un = u + d
                    En = problem.energy(un)
                    if En <= E + 1e-12 * (1 + abs(E)):
                        rn = problem.gradient(un)
                        accepted = forms.dual_norm(rn) < 0.5 * res
        used_newton = accepted
        if not accepted:
            d = -P.solve(r)
            slope = float(r @ d)
            t = min(1.0, 2.0 * alpha)
            while t > 1e-14:
                un = u + t * d
                En = problem.energy(un)
                if En <= E + 1e-4 * t * slope:
                    accepted = True
                    alpha = t
                    break
                t *= 0.5
        if not accepted:
            status, msg = MAX_ITER, "line search stalled"
            break
        if En > E + 1e-12 * (1 + abs(E)):
            raise SolverError(f"energy increased from {E!r} to {En!r}")
        u, E = un, En
        if not math.isfinite(E) or np.max(np.abs(u)) > blowup:
            raise NonCoerciveError(
                "energy unbounded below along the iterates; the functional is not coercive here "
                "(use mountain_pass for superlinear problems)")
        r = problem.gradient(u)
        res = forms.dual_norm(r)
        log.debug("minimize it=%d E=%.15g res=%.3e newton=%s", it, E, res, used_newton)
        if callback is not None:
            callback(it, u, E, res)
    else:
        it = max_iter
    if _converged(forms, u, res, tol):
        status, msg = CONVERGED, ""
    return SolveResult(u, E, res, it, status, classify(u, forms, tol), msg)


def find_critical_point(problem: VariationalProblem, u0, tol: Tolerances = DEFAULT_TOL,
                        max_iter=500, blowup=1e8) -> SolveResult:
    """Damped Newton on the merit 1/2 r^T P^-1 r; collapse to 0 gives DivergedToZero.

    Unlike ``minimize`` this also locates saddle points, so it is the
    search used for nonexistence evidence where the functional is not
    bounded below.
    """
    forms = problem.forms
    P = _preconditioner(forms, shift_of(forms))
    u = np.array(u0, dtype=float)
    r = problem.gradient(u)
    Pr = P.solve(r)
    merit = 0.5 * float(r @ Pr)
    res = forms.dual_norm(r)
    status, msg = MAX_ITER, "iteration cap reached"
    it = 0
    for it in range(1, max_iter + 1):
        if _converged(forms, u, res, tol):
            status, msg = CONVERGED, ""
            break
        if np.max(np.abs(u)) <= tol.zero_tol * 1e-3:
            status, msg = TO_ZERO, "iterates collapsed to zero"
            break
        accepted = False
        for direction in ("newton", "merit"):
            if direction == "newton":
                d = _try_newton(problem, u, r)
                if d is None:
                    continue
            else:
                H = problem.hessian(u)
                d = -P.solve(H @ Pr)
            t = 1.0
            for _ in range(40):
                un = u + t * d
                rn = problem.gradient(un)
                Prn = P.solve(rn)
                mn = 0.5 * float(rn @ Prn)
                if mn <= (1 - 1e-4 * t) * merit:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            msg = "merit line search stalled"
            break
        u, r, Pr, merit = un, rn, Prn, mn
        res = forms.dual_norm(r)
        if np.max(np.abs(u)) > blowup:
            msg = "iterates diverged to infinity"
            break
    else:
        it = max_iter
    pos = classify(u, forms, tol)
    if pos == ZERO:
        status = TO_ZERO
    elif _converged(forms, u, res, tol):
        status = CONVERGED
    return SolveResult(u, problem.energy(u), res, it, status, pos, msg)


def newton_polish(problem, u, tol: Tolerances = DEFAULT_TOL, max_iter=50):
    """Newton steps on the merit from a point that is already close to a critical point."""
    return find_critical_point(problem, u, tol, max_iter=max_iter)


# ---------------------------------------------------------------- problem builders

def phi_problem(forms, nl, lam, mu=None):
    """phi_lambda with the full-shift truncation (lam + mu) x + f(x) on x > 0."""
    mu = shift_of(forms) if mu is None else mu
    return VariationalProblem.from_reaction(forms, make_truncation("G_lambda", nl, lam, mu))


def k_problem(forms, nl, lam, mu=None):
    mu = shift_of(forms) if mu is None else mu
    return VariationalProblem.from_reaction(forms, make_truncation("K_lambda", nl, lam, mu))


def _eig(forms, eig):
    return principal_eigenpair(forms) if eig is None else eig


# ---------------------------------------------------------------- seeds

def seed_from_eigenfunction(nl: Nonlinearity, lam, forms: AssembledForms, eig=None, problem=None):
    """t * u_hat_1 with negative energy and t * u_hat_1 <= delta nodewise."""
    eig = _eig(forms, eig)
    if not lam < eig.lambda_hat_1:
        raise ValueError(f"seed needs lambda < lambda_hat_1 = {eig.lambda_hat_1:.12g}, got {lam}")
    if not nl.sublinear:
        raise HypothesisError("eigenfunction seeds with negative energy need a concave term (sublinear class)")
    problem = phi_problem(forms, nl, lam) if problem is None else problem
    u1 = eig.u_hat_1
    t = min(1.0, nl.delta / float(np.max(u1)))
    while t >= 1e-12:
        if problem.energy(t * u1) < 0:
            return t * u1
        t *= 0.5
    raise SolverError("no t in [1e-12, 1] gives negative energy along u_hat_1")


def multistart_seeds(forms, nl, lam, n_starts, seed=0, eig=None, extra=()):
    """Deterministic list of positive starting vectors."""
    eig = _eig(forms, eig)
    u1 = eig.u_hat_1 / float(np.max(eig.u_hat_1))
    n = forms.n
    seeds = [np.array(e, dtype=float) for e in extra]
    if nl.sublinear and lam < eig.lambda_hat_1:
        try:
            seeds.append(seed_from_eigenfunction(nl, lam, forms, eig))
        except SolverError:
            pass
    seeds += [0.5 * u1, np.full(n, 0.1), 3.0 * u1]
    rng = np.random.default_rng(seed)
    x = forms.mesh.nodes
    while len(seeds) < n_starts:
        amp = float(rng.uniform(0.05, 4.0))
        k = rng.integers(0, 3, size=x.shape[1])
        ph = rng.uniform(0, np.pi, size=x.shape[1])
        bump = np.prod(1.0 + 0.5 * np.cos(np.pi * k * x + ph), axis=1)
        noise = 1.0 + 0.2 * rng.random(n)
        seeds.append(amp * bump * noise)
    return seeds[:n_starts]


# ---------------------------------------------------------------- auxiliary problem

AUX_C4_FLOOR = 1e-3


def aux_problem(forms, nl, lam, c4=None, tau=None, mu=None):
    mu = shift_of(forms) if mu is None else mu
    tau = nl.tau_for(forms.mesh.dimension) if tau is None else tau
    if c4 is None:
        c4 = unilateral_constants(nl, lam, tau)
    c4 = max(float(c4), AUX_C4_FLOOR)
    reaction = make_truncation("Aux", nl, lam, mu, c4=c4, tau=tau, c1=unilateral_c1(nl, lam))
    return VariationalProblem.from_reaction(forms, reaction)


def solve_auxiliary(nl: Nonlinearity, lam, forms: AssembledForms, tol: Tolerances = DEFAULT_TOL,
                    c4=None, tau=None, eig=None) -> SolveResult:
    """Positive minimizer u*^lam of the auxiliary functional, checked from two starts."""
    if not nl.sublinear:
        raise HypothesisError("the auxiliary problem is defined for sublinear classes")
    eig = _eig(forms, eig)
    problem = aux_problem(forms, nl, lam, c4, tau)
    u1 = eig.u_hat_1 / float(np.max(eig.u_hat_1))
    t = 1.0
    while problem.energy(t * u1) >= 0:
        t *= 0.5
        if t < 1e-12:
            raise SolverError("auxiliary functional is nonnegative along u_hat_1")
    first = minimize(problem, problem.lam, t * u1, tol)
    second = minimize(problem, problem.lam, 2.0 * u1 + 0.5, tol)
    for res in (first, second):
        if not is_positive_solution(res, tol):
            raise SolverError(f"auxiliary solve did not reach a positive minimizer ({res.status}, {res.positivity})")
    gap = float(np.max(np.abs(first.u - second.u)))
    if gap > tol.uniq_tol:
        raise UniquenessError(f"auxiliary minimizers from two starts differ by {gap:.3e}; mesh too coarse?")
    best = first if first.energy <= second.energy else second
    best.message = f"two-start gap {gap:.3e}"
    return best


# ---------------------------------------------------------------- order intervals

def solve_in_interval(nl: Nonlinearity, lam, forms: AssembledForms, lo, hi=None, kind=None,
                      tol: Tolerances = DEFAULT_TOL, start=None, c4=None, tau=None) -> SolveResult:
    """Minimize an interval-truncated functional; the result lies in [lo, hi].

    With lo = 0 and a sublinear reaction the default truncation freezes the
    auxiliary reaction above hi (its minimizer is u*^lam when hi is a
    solution); otherwise the reaction is frozen below lo and above hi.
    """
    mu = shift_of(forms)
    lo = np.zeros(forms.n) if lo is None else np.asarray(lo, dtype=float)
    if hi is not None:
        hi = np.asarray(hi, dtype=float)
        if np.any(lo > hi + 1e-12):
            raise ValueError("need lo <= hi nodewise")
    if kind is None:
        kind = "GHat" if (nl.sublinear and not np.any(lo) and hi is not None) else ("GStar" if hi is not None else "GTilde")
    if kind == "GHat":
        if hi is None:
            raise ValueError("GHat needs an upper function")
        tau = nl.tau_for(forms.mesh.dimension) if tau is None else tau
        if c4 is None:
            c4 = unilateral_constants(nl, lam, tau)
        c4 = max(float(c4), AUX_C4_FLOOR)
        reaction = make_truncation("GHat", nl, lam, mu, ref=hi, c4=c4, tau=tau, c1=unilateral_c1(nl, lam))
    elif kind == "E_lambda":
        reaction = make_truncation("E_lambda", nl, lam, mu, ref=hi)
    elif kind == "GStar":
        reaction = make_truncation("GStar", nl, lam, mu, lo=lo, hi=hi)
    elif kind == "GTilde":
        reaction = make_truncation("GTilde", nl, lam, mu, lo=lo)
    else:
        raise ValueError(f"unsupported interval truncation {kind!r}")
    problem = VariationalProblem.from_reaction(forms, reaction)
    if start is None:
        start = hi if hi is not None else lo
    res = minimize(problem, problem.lam, np.asarray(start, dtype=float), tol)
    below = float(np.max(lo - res.u))
    above = 0.0 if hi is None else float(np.max(res.u - hi))
    if res.status == CONVERGED and (below > 1e-8 or above > 1e-8):
        raise IntervalViolation(f"solution leaves the order interval (below {below:.3e}, above {above:.3e})")
    return res


# ---------------------------------------------------------------- mountain pass

def find_endpoint(problem: VariationalProblem, direction=None, ref_energy=None, base=None, eig=None):
    """t * direction (plus base) with energy below ref_energy - 1, by doubling t."""
    nl = getattr(problem.reaction, "nl", None)
    if nl is None or not nl.superlinear:
        raise HypothesisError("endpoint search needs a superlinear reaction")
    if direction is None:
        direction = _eig(problem.forms, eig).u_hat_1
    direction = np.asarray(direction, dtype=float)
    if np.any(direction < 0):
        raise ValueError("direction must be nonnegative")
    base = np.zeros_like(direction) if base is None else np.asarray(base, dtype=float)
    ref = problem.energy(base) if ref_energy is None else ref_energy
    t = 1.0
    while t <= 2.0 ** 60:
        u = base + t * direction
        if problem.energy(u) < ref - 1.0:
            return u
        t *= 2.0
    raise SolverError("energy never dropped below the reference along the direction (t > 2^60)")


def _reparametrize(path, metric):
    """Redistribute interior path points uniformly in arc length, endpoints fixed.

    metric is a sparse SPD matrix defining segment lengths.
    """
    seg = np.diff(path, axis=0)
    lens = np.sqrt(np.maximum(np.einsum("ki,ik->k", seg, metric @ seg.T), 0.0))
    s = np.concatenate([[0.0], np.cumsum(lens)])
    if len(path) < 3 or s[-1] <= 0:
        return path
    target = np.linspace(0.0, s[-1], len(path))
    out = np.empty_like(path)
    out[0], out[-1] = path[0], path[-1]
    idx = np.clip(np.searchsorted(s, target[1:-1], side="right") - 1, 0, len(path) - 2)
    w = (target[1:-1] - s[idx]) / np.where(lens[idx] > 0, lens[idx], 1.0)
    out[1:-1] = path[idx] + w[:, None] * (path[idx + 1] - path[idx])
    return out


def mountain_pass(problem: VariationalProblem, u0, u1, tol: Tolerances = DEFAULT_TOL,
                  n_path=40, max_steps=5000, polish_at=1e-3, rho_mp=None, lower=None,
                  step=0.5) -> SolveResult:
    """Saddle point between a local minimizer u0 and a lower far point u1.

    The path u0 -> u1 is discretized with n_path segments and relaxed as a
    climbing string: points up to the highest one take preconditioned
    descent steps with the tangential part removed, the highest point
    reverses its tangential part (so it climbs along the path), and the
    path is redistributed by arc length on the near side and kept straight
    on the far side.  Once the top point is nearly critical a Newton polish
    on the residual finishes it.
    """
    forms = problem.forms
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    E0, E1 = problem.energy(u0), problem.energy(u1)
    if not E1 < E0:
        raise ValueError("the far endpoint must have lower energy than u0")
    dist = forms.h1_norm(u1 - u0)
    if rho_mp is not None and not dist > rho_mp:
        raise ValueError(f"endpoints are closer ({dist:.3e}) than rho_mp")
    mu = shift_of(forms)
    P = _preconditioner(forms, mu)
    Pmat = (forms.G + sp.diags(mu * forms.lumped)).tocsr()
    ts = np.linspace(0.0, 1.0, n_path + 1)
    path = u0[None, :] + ts[:, None] * (u1 - u0)[None, :]
    floor = 1e-12 * (1 + abs(E0))
    prev_res = math.inf
    res = math.inf
    k = 1
    for it in range(1, max_steps + 1):
        E = np.array([problem.energy(p) for p in path])
        k = int(np.argmax(E[1:-1])) + 1
        if E[k] <= E0 + floor:
            raise PathCollapseError(
                "path maximum sits at the local minimizer: no mountain-pass geometry at this "
                "discretization (try a smaller rho_mp or a finer path)")
        R = [problem.gradient(path[i]) for i in range(1, k + 1)]
        res = forms.dual_norm(R[k - 1])
        log.debug("mountain pass it=%d k=%d E=%.12g res=%.3e", it, k, E[k], res)
        if res <= polish_at * min(1.0, forms.h1_norm(path[k])):
            pol = newton_polish(problem, path[k], tol)
            if pol.status == CONVERGED and pol.energy >= max(E0, E1) - floor \
                    and (lower is None or np.all(pol.u >= lower - 1e-8)):
                pol.iterations += it
                pol.message = "mountain pass"
                return pol
            polish_at *= 0.1
        if res > 2.0 * prev_res:
            step *= 0.5
        prev_res = res
        new = path.copy()
        for i in range(1, k + 1):
            d = -P.solve(R[i - 1])
            tan = path[i + 1] - path[i - 1]
            Ptan = Pmat @ tan
            nrm = math.sqrt(max(float(tan @ Ptan), 0.0))
            c = float(d @ Ptan) / nrm if nrm > 0 else 0.0
            that = tan / nrm if nrm > 0 else tan
            new[i] = path[i] + step * (d - (2.0 if i == k else 1.0) * c * that)
        # beyond the top the energy falls without bound for superlinear
        # reactions, so that side stays a straight segment to u1
        left = _reparametrize(new[:k + 1], Pmat)
        w = np.linspace(0.0, 1.0, n_path - k + 1)[1:, None]
        path = np.vstack([left, (1.0 - w) * new[k] + w * u1])
    E = np.array([problem.energy(p) for p in path])
    k = int(np.argmax(E[1:-1])) + 1
    res = forms.dual_norm(problem.gradient(path[k]))
    return SolveResult(path[k], float(E[k]), res, max_steps, MAX_ITER,
                       classify(path[k], forms, tol), "mountain pass step cap reached")


def sphere_energy_sample(problem, center, rho, n_dirs=100, seed=0):
    """Minimum energy over rho-scaled random directions around center (H1 norm)."""
    rng = np.random.default_rng(seed)
    forms = problem.forms
    best = math.inf
    for _ in range(n_dirs):
        v = rng.standard_normal(forms.n)
        # smooth the direction so its H1 norm is dominated by low modes
        v = _preconditioner(forms, shift_of(forms)).solve(forms.lumped * v)
        v *= rho / forms.h1_norm(v)
        best = min(best, problem.energy(center + v))
    return best


# ---------------------------------------------------------------- certificates

@dataclass
class Certificate:
    kind: str
    lam: float
    lambda_hat_1: float
    u: np.ndarray | None = None
    u_second: np.ndarray | None = None
    u_aux: np.ndarray | None = None
    n_starts: int = 0
    energy: float | None = None
    energy_second: float | None = None
    n_solutions: int = 0
    evidence: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"kind": self.kind, "lambda": self.lam, "lambda_hat_1": self.lambda_hat_1,
             "n_starts": self.n_starts, "n_solutions": self.n_solutions,
             "energy": self.energy, "evidence": self.evidence, "tolerances": self.tolerances}
        if self.u is not None:
            d["u_max"] = float(np.max(self.u))
            d["u_min"] = float(np.min(self.u))
        if self.u_second is not None:
            d["energy_second"] = self.energy_second
            d["second_u_max"] = float(np.max(self.u_second))
            d["gap_sup"] = float(np.max(np.abs(self.u_second - self.u)))
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _distinct(solutions, tol):
    out = []
    for s in solutions:
        if all(np.max(np.abs(s.u - o.u)) > tol for o in out):
            out.append(s)
    return out


def _nonexistence(lam, forms, nl, n_starts, seed, eig, tol, extra):
    problem = phi_problem(forms, nl, lam)
    seeds = multistart_seeds(forms, nl, lam, n_starts, seed, eig, extra)
    runs = [find_critical_point(problem, s, tol) for s in seeds]
    norms = [float(np.max(np.abs(r.u))) for r in runs]
    positive = [r for r in runs if is_positive_solution(r, tol)]
    if positive:
        raise NonexistenceContradiction(
            f"found a positive critical point at lambda={lam} >= lambda_hat_1 "
            f"(|u|_inf={np.max(positive[0].u):.3e}); discretization alarm")
    if not all(r.status == TO_ZERO for r in runs):
        bad = [(i, r.status, r.message) for i, r in enumerate(runs) if r.status != TO_ZERO]
        raise CertificationError(f"inconclusive nonexistence evidence: starts {bad} did not collapse to zero")
    return Certificate("Nonexistence", lam, eig.lambda_hat_1, n_starts=len(runs),
                       evidence={"start_sup_norms": [float(np.max(np.abs(s))) for s in seeds],
                                 "final_sup_norms": norms, "statuses": [r.status for r in runs]},
                       tolerances=asdict(tol))


def minimal_solution(nl, lam, forms, solutions, tol: Tolerances = DEFAULT_TOL, eig=None, aux=None):
    """Smallest solution between u*^lam and the nodewise minimum of the given solutions.

    Returns (result, aux_result).  The interval truncation freezes the
    reaction below u*^lam and above the upper function; descent starts at
    the lower end.
    """
    hi = np.min(np.stack([s.u for s in solutions]), axis=0)
    if aux is None:
        aux = solve_auxiliary(nl, lam, forms, tol, eig=eig)
    lo = np.minimum(aux.u, hi)
    res = solve_in_interval(nl, lam, forms, lo, hi, kind="GStar", tol=tol, start=lo)
    return res, aux


def certify(lam, forms: AssembledForms, nl: Nonlinearity, n_starts=10, seed=0, eig=None,
            tol: Tolerances = DEFAULT_TOL, extra_starts=()) -> Certificate:
    """Existence / uniqueness / multiplicity / nonexistence evidence at lam."""
    eig = _eig(forms, eig)
    lam1 = eig.lambda_hat_1
    if lam >= lam1 - tol.tol_eig:
        return _nonexistence(lam, forms, nl, n_starts, seed, eig, tol, extra_starts)
    if nl.sublinear:
        return _certify_sublinear(lam, forms, nl, n_starts, seed, eig, tol, extra_starts)
    return _certify_superlinear(lam, forms, nl, n_starts, seed, eig, tol, extra_starts)


def _certify_sublinear(lam, forms, nl, n_starts, seed, eig, tol, extra):
    problem = phi_problem(forms, nl, lam)
    seeds = multistart_seeds(forms, nl, lam, n_starts, seed, eig, extra)
    runs = [minimize(problem, problem.lam, s, tol) for s in seeds]
    sols = [r for r in runs if is_positive_solution(r, tol)]
    if not sols:
        raise CertificationError(f"no start converged to a positive solution at lambda={lam}: "
                                 f"{[(r.status, r.positivity) for r in runs]}")
    pair_gap = max((float(np.max(np.abs(a.u - b.u))) for a in sols for b in sols), default=0.0)
    distinct = _distinct(sols, tol.uniq_tol)
    ubar, aux = minimal_solution(nl, lam, forms, sols, tol, eig)
    if not is_positive_solution(ubar, tol):
        raise CertificationError(f"minimal-solution solve failed: {ubar.status}, {ubar.positivity}")
    lower_gap = float(np.max(aux.u - ubar.u))
    if lower_gap > 1e-8:
        raise CertificationError(f"lower-bound law violated: u*^lambda exceeds the minimal solution by {lower_gap:.3e}")
    ev = {"pairwise_sup_gap": pair_gap, "n_converged": len(sols),
          "energies": [r.energy for r in sols], "residuals": [r.residual_norm for r in sols],
          "aux_max_excess": lower_gap, "minimal_residual": ubar.residual_norm}
    phi = phi_problem(forms, nl, lam)
    energy = phi.energy(ubar.u)
    kind = "Existence"
    if nl.satisfies("H3"):
        if len(distinct) > 1 or pair_gap > tol.uniq_tol:
            raise UniquenessError(f"class {nl.hclass} forces a unique solution but multistart "
                                  f"solutions differ by {pair_gap:.3e}")
        kind = "Uniqueness"
    return Certificate(kind, lam, eig.lambda_hat_1, u=ubar.u, u_aux=aux.u, n_starts=len(runs),
                       energy=energy, n_solutions=len(distinct), evidence=ev, tolerances=asdict(tol))


def _certify_superlinear(lam, forms, nl, n_starts, seed, eig, tol, extra):
    kprob = k_problem(forms, nl, lam)
    u1 = eig.u_hat_1
    far = find_endpoint(kprob, u1, ref_energy=0.0)
    first = mountain_pass(kprob, np.zeros(forms.n), far, tol)
    sols = [first] if is_positive_solution(first, tol) else []
    seeds = multistart_seeds(forms, nl, lam, n_starts - 1, seed, eig, extra)
    for s in seeds:
        r = find_critical_point(kprob, s, tol)
        if is_positive_solution(r, tol):
            sols.append(r)
    if not sols:
        raise CertificationError(f"no positive solution found at lambda={lam}")
    distinct = _distinct(sols, tol.uniq_tol)
    ubar = min(distinct, key=lambda s: float(np.sum(forms.lumped * s.u)))
    # the lowest solution must lie below every other one
    for s in distinct:
        if np.any(ubar.u > s.u + 1e-8) and s is not ubar:
            log.warning("found solutions are not ordered below the candidate minimal one")
    phi = phi_problem(forms, nl, lam)
    ev = {"n_found": len(sols), "n_distinct": len(distinct),
          "distinct_energies": [float(phi.energy(s.u)) for s in distinct]}
    # second solution above ubar through the lower truncation at ubar
    tprob = VariationalProblem.from_reaction(forms, make_truncation("GTilde", nl, lam, shift_of(forms), lo=ubar.u))
    second = None
    try:
        far2 = find_endpoint(tprob, u1, ref_energy=tprob.energy(ubar.u), base=ubar.u)
        mp = mountain_pass(tprob, ubar.u, far2, tol, lower=ubar.u)
        if mp.status == CONVERGED:
            second = mp
        ev["mountain_pass"] = mp.message or mp.status
    except PathCollapseError as exc:
        ev["mountain_pass"] = f"path collapse: {exc}"
    above = [s for s in distinct if s is not ubar and np.all(s.u >= ubar.u - 1e-8)
             and np.max(s.u - ubar.u) >= tol.distinctness_floor]
    if second is None and above:
        second = max(above, key=lambda s: float(np.max(s.u)))
        ev["second_from"] = "multistart"
    n_sol = len(distinct)
    if second is not None:
        gap = float(np.max(second.u - ubar.u))
        ordered = bool(np.all(second.u >= ubar.u - 1e-8))
        if ordered and gap >= tol.distinctness_floor:
            if all(np.max(np.abs(second.u - s.u)) > tol.uniq_tol for s in distinct):
                n_sol += 1
            return Certificate("Multiplicity", lam, eig.lambda_hat_1, u=ubar.u, u_second=second.u,
                               n_starts=n_starts, energy=phi.energy(ubar.u),
                               energy_second=phi.energy(second.u), n_solutions=n_sol,
                               evidence={**ev, "gap_sup": gap, "second_residual": second.residual_norm},
                               tolerances=asdict(tol))
    return Certificate("Existence", lam, eig.lambda_hat_1, u=ubar.u, n_starts=n_starts,
                       energy=phi.energy(ubar.u), n_solutions=n_sol,
                       evidence={**ev, "second_solution": "not found"}, tolerances=asdict(tol))
