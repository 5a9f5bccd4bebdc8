"""Parameter sweeps over lambda and checks on the minimal-solution branch."""
from __future__ import annotations

import csv
import io
import logging
import multiprocessing as mp
import os
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .spectrum import principal_eigenpair

log = logging.getLogger(__name__)

MONO_TOL = 1e-8
CONT_TOL = 1e-4
EXISTENCE_KINDS = ("Existence", "Uniqueness", "Multiplicity")
CSV_COLUMNS = ("lambda", "status", "energy", "u_max", "u_min_interior", "n_solutions")


@dataclass
class BranchEntry:
    lam: float
    status: str
    u: np.ndarray | None = None
    energy: float | None = None
    n_solutions: int = 0
    certificate: solvers.Certificate | None = None
    error: str | None = None

    @property
    def exists(self):
        return self.status in EXISTENCE_KINDS


@dataclass
class Branch:
    lambda_grid: list
    entries: list
    lambda_hat_1: float
    hclass: str
    forms: object = field(default=None, repr=False)
    nl: object = field(default=None, repr=False)

    def __post_init__(self):
        g = list(self.lambda_grid)
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("lambda grid must be strictly increasing")

    def existence(self):
        return [e for e in self.entries if e.exists]

    def entry(self, lam):
        for e in self.entries:
            if e.lam == lam:
                return e
        raise KeyError(lam)

    def to_csv(self, path=None):
        """Branch table; floats are written with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        interior = self.forms.mesh.interior_nodes if self.forms is not None else None
        for e in self.entries:
            if e.u is not None:
                umin = float(np.min(e.u[interior])) if interior is not None and len(interior) else float(np.min(e.u))
                row = [_fmt(e.lam), e.status, _fmt(e.energy), _fmt(float(np.max(e.u))), _fmt(umin), e.n_solutions]
            else:
                row = [_fmt(e.lam), e.status, "", "", "", e.n_solutions]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(x):
    return "" if x is None else f"{x:.17g}"


# ---------------------------------------------------------------- sweep

def _entry_from(lam, cert=None, exc=None):
    if exc is not None:
        return BranchEntry(lam, "Failed", error=f"{type(exc).__name__}: {exc}")
    if cert.kind == "Nonexistence":
        return BranchEntry(lam, "Nonexistence", certificate=cert)
    return BranchEntry(lam, cert.kind, u=cert.u, energy=cert.energy, n_solutions=cert.n_solutions,
                       certificate=cert)


def _solve_point(forms, nl, lam, n_starts, seed, eig, tol, extra):
    try:
        cert = solvers.certify(lam, forms, nl, n_starts=n_starts, seed=seed, eig=eig, tol=tol,
                               extra_starts=extra)
        return _entry_from(lam, cert)
    except (solvers.SolverError, ValueError, FloatingPointError) as exc:
        log.warning("lambda=%g failed: %s", lam, exc)
        return _entry_from(lam, exc=exc)


# forked workers read the shared problem from here instead of unpickling it
_WORKER_STATE = {}


def _worker(task):
    i, lam = task
    st = _WORKER_STATE
    return i, _solve_point(st["forms"], st["nl"], lam, st["n_starts"], st["seed"] + i, st["eig"],
                           st["tol"], ())


def sweep(forms, nl, grid, n_starts=10, seed=0, warm_start=True, workers=1,
          tol: solvers.Tolerances = solvers.DEFAULT_TOL, eig=None) -> Branch:
    """Certify every lambda of the grid in ascending order.

    Warm start feeds the previous minimal solution in as an extra start and
    runs sequentially.  Cold start may spread the grid over ``workers``
    forked processes; results do not depend on the worker count.
    Per-lambda failures are recorded as entries with status "Failed".
    """
    grid = sorted(float(x) for x in grid)
    eig = principal_eigenpair(forms) if eig is None else eig
    solvers.shift_of(forms)  # factor once before any fork
    entries = [None] * len(grid)
    if warm_start or workers <= 1 or len(grid) <= 1:
        prev = None
        for i, lam in enumerate(grid):
            extra = () if (prev is None or not warm_start) else (prev,)
            e = _solve_point(forms, nl, lam, n_starts, seed + i, eig, tol, extra)
            entries[i] = e
            if e.u is not None:
                prev = e.u
    else:
        _WORKER_STATE.update(forms=forms, nl=nl, n_starts=n_starts, seed=seed, eig=eig, tol=tol)
        try:
            ctx = mp.get_context("fork")
            with ctx.Pool(min(workers, len(grid))) as pool:
                for i, e in pool.imap_unordered(_worker, list(enumerate(grid))):
                    entries[i] = e
        finally:
            _WORKER_STATE.clear()
    return Branch(grid, entries, eig.lambda_hat_1, nl.hclass, forms=forms, nl=nl)


def default_workers():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# ---------------------------------------------------------------- checks

@dataclass
class MonotoneReport:
    passed: bool
    strict_checked: bool
    violations: list = field(default_factory=list)
    strict_gaps: list = field(default_factory=list)

    def to_dict(self):
        return {"passed": self.passed, "strict_checked": self.strict_checked,
                "violations": self.violations, "strict_gaps": self.strict_gaps}


def check_monotone(branch: Branch, mono_tol=MONO_TOL, strict=None) -> MonotoneReport:
    """Nodewise u_lam <= u_eta + mono_tol for consecutive existence entries lam < eta.

    Entries are taken in stored order, so a shuffled branch reports the
    pairs that break the ordering.  With ``strict`` (default: the class
    implies H2 or H6) the minimum interior gap must also be positive.
    """
    ex = branch.existence()
    if strict is None:
        strict = branch.nl is not None and (branch.nl.satisfies("H2") or branch.nl.satisfies("H6"))
    if len(ex) < 2:
        return MonotoneReport(True, strict)
    interior = branch.forms.mesh.interior_nodes if branch.forms is not None else slice(None)
    viol, gaps = [], []
    for a, b in zip(ex, ex[1:]):
        lo, hi = (a, b) if a.lam < b.lam else (b, a)
        if a.lam > b.lam:
            viol.append({"lambda": a.lam, "eta": b.lam, "kind": "order", "node": None, "excess": None})
        diff = lo.u - hi.u
        i = int(np.argmax(diff))
        if diff[i] > mono_tol:
            viol.append({"lambda": lo.lam, "eta": hi.lam, "kind": "nodewise", "node": i,
                         "excess": float(diff[i])})
        if strict:
            g = hi.u[interior] - lo.u[interior]
            j = int(np.argmin(g))
            gaps.append({"lambda": lo.lam, "eta": hi.lam, "min_interior_gap": float(g[j])})
            if not g[j] > 0:
                node = int(np.asarray(interior)[j]) if not isinstance(interior, slice) else j
                viol.append({"lambda": lo.lam, "eta": hi.lam, "kind": "strict", "node": node,
                             "excess": float(-g[j])})
    return MonotoneReport(not viol, strict, viol, gaps)


@dataclass
class ContinuityReport:
    status: str  # "Passed", "Failed" or "NotApplicable"
    lam_star: float
    offsets: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    gradient_gaps: list = field(default_factory=list)
    message: str = ""

    @property
    def passed(self):
        return self.status == "Passed"

    def to_dict(self):
        return {"status": self.status, "lambda_star": self.lam_star, "offsets": self.offsets,
                "gaps": self.gaps, "gradient_gaps": self.gradient_gaps, "message": self.message}


def _gradient_sup(forms, u):
    from .forms import _p1_gradients

    grads, _ = _p1_gradients(forms.mesh)
    D = np.einsum("ki,kid->kd", u[forms.mesh.cells], grads)
    return float(np.max(np.sqrt(np.sum(D * D, axis=1))))


def check_left_continuity(branch: Branch, lam_star, n_approach=20, delta=None, cont_tol=CONT_TOL,
                          n_starts=10, seed=0, tol: solvers.Tolerances = solvers.DEFAULT_TOL) -> ContinuityReport:
    """Solve at lam_star - 2^-k delta (k = 1..n_approach) and compare with u at lam_star.

    delta defaults to the grid spacing below lam_star (or 1).  Passes when
    the sup-norm gaps decrease monotonically and the last one is within
    cont_tol.  Discrete gradient gaps are reported as well.
    """
    e = branch.entry(lam_star)
    if not e.exists:
        return ContinuityReport("NotApplicable", lam_star, message=f"no solution at lambda={lam_star}")
    if lam_star >= branch.lambda_hat_1:
        raise ValueError("lam_star must lie below lambda_hat_1")
    if delta is None:
        below = [x for x in branch.lambda_grid if x < lam_star]
        delta = lam_star - below[-1] if below else 1.0
    forms, nl = branch.forms, branch.nl
    eig = principal_eigenpair(forms)
    offsets, gaps, ggaps = [], [], []
    for k in range(1, n_approach + 1):
        lam = lam_star - delta * 2.0 ** (-k)
        try:
            cert = solvers.certify(lam, forms, nl, n_starts=n_starts, seed=seed, eig=eig, tol=tol,
                                   extra_starts=(e.u,))
        except solvers.SolverError as exc:
            return ContinuityReport("Failed", lam_star, offsets, gaps, ggaps,
                                    f"solve at lambda={lam} failed: {exc}")
        if cert.u is None:
            return ContinuityReport("Failed", lam_star, offsets, gaps, ggaps,
                                    f"no solution at lambda={lam}")
        offsets.append(lam_star - lam)
        gaps.append(float(np.max(np.abs(cert.u - e.u))))
        ggaps.append(_gradient_sup(forms, cert.u - e.u))
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    ok = decreasing and gaps[-1] <= cont_tol
    msg = "" if ok else ("gaps not decreasing" if not decreasing else f"final gap {gaps[-1]:.3e} > {cont_tol:g}")
    return ContinuityReport("Passed" if ok else "Failed", lam_star, offsets, gaps, ggaps, msg)


def summarize(branch: Branch, mono_tol=MONO_TOL) -> dict:
    """Threshold bracket, per-kind tallies and the monotonicity verdict."""
    ex = [e.lam for e in branch.entries if e.exists]
    non = [e.lam for e in branch.entries if e.status == "Nonexistence"]
    lam1 = branch.lambda_hat_1
    tally = {}
    for e in branch.entries:
        tally[e.status] = tally.get(e.status, 0) + 1
    thr = {"largest_existence": max(ex) if ex else None,
           "smallest_nonexistence": min(non) if non else None}
    if ex and non:
        thr["bracket"] = [max(ex), min(non)]
        thr["contains_lambda_hat_1"] = bool(max(ex) <= lam1 <= min(non))
        thr["sandwich_ok"] = bool(max(ex) < min(non))
    elif non:
        thr["estimate"] = f"<= {min(non)!r}"
    elif ex:
        thr["estimate"] = f"> {max(ex)!r}"
    mono = check_monotone(branch, mono_tol)
    below = [e for e in branch.entries if e.lam < lam1]
    sub = branch.nl is not None and branch.nl.sublinear
    if sub:
        verdict = ("unique positive solution for every lambda below lambda_hat_1 on the grid"
                   if below and all(e.status == "Uniqueness" for e in below)
                   else "positive solutions below lambda_hat_1: " + ", ".join(sorted({e.status for e in below})))
    else:
        verdict = ("two positive solutions for every lambda below lambda_hat_1 on the grid"
                   if below and all(e.status == "Multiplicity" for e in below)
                   else "second positive solution not found at lambda = "
                   + ", ".join(f"{e.lam:.6g}" for e in below if e.status != "Multiplicity"))
    if non:
        verdict += "; no positive solution at or above lambda_hat_1"
    return {"lambda_hat_1": lam1, "class": branch.hclass, "threshold": thr, "tally": tally,
            "monotone": mono.to_dict(), "verdict": verdict,
            "failures": {repr(e.lam): e.error for e in branch.entries if e.status == "Failed"}}
