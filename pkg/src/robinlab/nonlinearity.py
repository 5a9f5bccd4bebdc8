"""Reaction terms f(x), their primitives, sampled hypothesis checks and truncations.

Every reaction vanishes for x <= 0.  Sublinear classes are H1..H4 and
superlinear classes H5, H6; see ``CLASS_IMPLIES`` for the lattice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import hyp2f1

SUBLINEAR = ("H1", "H2", "H3", "H4")
SUPERLINEAR = ("H5", "H6")
CLASS_IMPLIES = {
    "H1": {"H1"},
    "H2": {"H1", "H2"},
    "H3": {"H1", "H3"},
    "H4": {"H1", "H2", "H3", "H4"},
    "H5": {"H5"},
    "H6": {"H5", "H6"},
}


class HypothesisError(ValueError):
    pass


def critical_exponent(dim):
    return math.inf if dim <= 2 else 2.0 * dim / (dim - 2)


def default_tau(dim):
    """An exponent in (2N/(N-1), 2*) for the unilateral bound; 3 in one dimension."""
    if dim == 1:
        return 3.0
    if dim == 2:
        return 5.0
    lo, hi = 2.0 * dim / (dim - 1), critical_exponent(dim)
    return 0.5 * (lo + hi)


def _positive_part_eval(fn):
    """Wrap fn so that it is evaluated on x > 0 only and is 0 elsewhere."""

    def wrapped(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        pos = x > 0
        if np.any(pos):
            with np.errstate(divide="ignore", invalid="ignore"):
                out[pos] = fn(x[pos])
        nan = np.isnan(x)
        out[nan] = np.nan
        return out if out.ndim else float(out)

    return wrapped


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Autonomous reaction f with primitive F and derivative df.

    q, r, tau, delta, c1 are the growth data of the hypothesis class:
    sublinear classes use c1 x^(q-1) <= f on [0, delta]; superlinear
    classes use the growth exponent r and the quotient exponent q.
    """

    name: str
    f: Callable
    F: Callable
    df: Callable
    hclass: str
    q: float
    r: float = 2.0
    tau: float | None = None
    delta: float = 1.0
    c1: float = 1.0
    params: dict = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        if self.hclass not in CLASS_IMPLIES:
            raise HypothesisError(f"unknown hypothesis class {self.hclass!r}")

    @property
    def sublinear(self):
        return self.hclass in SUBLINEAR

    @property
    def superlinear(self):
        return self.hclass in SUPERLINEAR

    def satisfies(self, tag):
        return tag in CLASS_IMPLIES[self.hclass]

    def tau_for(self, dim):
        return self.tau if self.tau is not None else default_tau(dim)

    def to_dict(self):
        return {"name": self.name, "class": self.hclass, "params": dict(self.params),
                "q": self.q, "r": self.r, "delta": self.delta, "c1": self.c1}

    # ---- construction

    @classmethod
    def from_expression(cls, expr, hclass, q, r=2.0, tau=None, delta=1.0, c1=1.0,
                        primitive=None, name=None):
        """Reaction from a sympy-parsable expression in x (used for x > 0)."""
        import sympy

        x = sympy.Symbol("x", positive=True)
        try:
            fx = sympy.sympify(expr, locals={"x": x})
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise HypothesisError(f"cannot parse nonlinearity {expr!r}: {exc}") from None
        if fx.free_symbols - {x}:
            raise HypothesisError(f"nonlinearity {expr!r} may only depend on x")
        if primitive is None:
            s = sympy.Symbol("s", positive=True)
            Fx = sympy.integrate(fx.subs(x, s), (s, 0, x))
            if Fx.has(sympy.Integral):
                raise HypothesisError(f"no closed-form primitive for {expr!r}; supply one")
        else:
            Fx = sympy.sympify(primitive, locals={"x": x})
        dfx = sympy.diff(fx, x)
        f = _positive_part_eval(sympy.lambdify(x, fx, "numpy"))
        F = _positive_part_eval(sympy.lambdify(x, Fx, "numpy"))
        df = _positive_part_eval(sympy.lambdify(x, dfx, "numpy"))
        nl = cls(name or str(expr), f, F, df, hclass, float(q), float(r),
                 None if tau is None else float(tau), float(delta), float(c1),
                 {"expr": str(expr)}, f"user reaction {expr}")
        if abs(float(F(1.0)) - _integral(f, 0.0, 1.0)) > 1e-6 * max(1.0, abs(float(F(1.0)))):
            raise HypothesisError("declared primitive does not match the integral of f on [0, 1]")
        return nl


def _integral(f, a, b):
    from scipy.integrate import quad

    return quad(lambda t: float(f(t)), a, b, limit=200)[0]


# ---------------------------------------------------------------- builtins

def _need(cond, msg):
    if not cond:
        raise HypothesisError(msg)


def sub_f1(q=1.5):
    _need(1 < q < 2, f"sub_f1 needs 1 < q < 2 (H1(iii)), got q={q}")
    f = _positive_part_eval(lambda x: x ** (q - 1))
    F = _positive_part_eval(lambda x: x ** q / q)
    df = _positive_part_eval(lambda x: (q - 1) * x ** (q - 2))
    return Nonlinearity("sub_f1", f, F, df, "H4", q, delta=1.0, c1=1.0, params={"q": q},
                        description="x^(q-1)")


def sub_f2(p=1.5, s=1.8, q=1.5):
    _need(1 < p < s < 2, f"sub_f2 needs 1 < p < s < 2, got p={p}, s={s}")
    _need(1 < q < 2, f"sub_f2 needs 1 < q < 2 (H1(iii)), got q={q}")

    def f(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, -lo ** (q - 1) * np.log(lo), hi ** (s - 1) - hi ** (p - 1))

    def F(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        small = -lo ** q * np.log(lo) / q + lo ** q / q ** 2
        big = 1.0 / q ** 2 + (hi ** s - 1) / s - (hi ** p - 1) / p
        return np.where(x <= 1, small, big)

    def df(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, -(q - 1) * lo ** (q - 2) * np.log(lo) - lo ** (q - 2),
                        (s - 1) * hi ** (s - 2) - (p - 1) * hi ** (p - 2))

    # -ln x >= 1 on (0, 1/e]
    return Nonlinearity("sub_f2", _positive_part_eval(f), _positive_part_eval(F),
                        _positive_part_eval(df), "H1", q, delta=math.exp(-1.0), c1=1.0,
                        params={"p": p, "s": s, "q": q},
                        description="-x^(q-1) ln x on [0,1]; x^(s-1) - x^(p-1) for x > 1")


def h2_f2(q=1.5, tau=1.8, s=1.4):
    _need(1 < q < 2 and 1 < tau < 2 and 1 < s < 2, "h2_f2 needs q, tau, s in (1, 2)")
    _need(s < tau, f"h2_f2 needs s < tau, got s={s}, tau={tau}")

    def f(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, lo ** (q - 1), 2 * hi ** (tau - 1) - hi ** (s - 1))

    def F(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, lo ** q / q, 1 / q + 2 * (hi ** tau - 1) / tau - (hi ** s - 1) / s)

    def df(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, (q - 1) * lo ** (q - 2),
                        2 * (tau - 1) * hi ** (tau - 2) - (s - 1) * hi ** (s - 2))

    return Nonlinearity("h2_f2", _positive_part_eval(f), _positive_part_eval(F),
                        _positive_part_eval(df), "H2", q, delta=1.0, c1=1.0,
                        params={"q": q, "tau": tau, "s": s},
                        description="x^(q-1) on [0,1]; 2x^(tau-1) - x^(s-1) for x > 1")


def h2_f3(q=1.3, s=1.6, tau=1.5):
    _need(1 < q < 2 and 1 < s < 2 and 1 < tau < 2, "h2_f3 needs q, s, tau in (1, 2)")
    _need(q < s, f"h2_f3 needs q < s, got q={q}, s={s}")

    def f(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, lo ** (q - 1) - lo ** (s - 1), hi ** (tau - 1) * np.log(hi))

    def F(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        F1 = 1 / q - 1 / s
        big = F1 + hi ** tau * np.log(hi) / tau - (hi ** tau - 1) / tau ** 2
        return np.where(x <= 1, lo ** q / q - lo ** s / s, big)

    def df(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, (q - 1) * lo ** (q - 2) - (s - 1) * lo ** (s - 2),
                        (tau - 1) * hi ** (tau - 2) * np.log(hi) + hi ** (tau - 2))

    # 1 - x^(s-q) >= 1/2 on [0, 2^(-1/(s-q))]
    return Nonlinearity("h2_f3", _positive_part_eval(f), _positive_part_eval(F),
                        _positive_part_eval(df), "H2", q, delta=2.0 ** (-1.0 / (s - q)), c1=0.5,
                        params={"q": q, "s": s, "tau": tau},
                        description="x^(q-1) - x^(s-1) on [0,1]; x^(tau-1) ln x for x > 1")


def h2_f4(q=1.5, tau=1.8, s=1.4):
    _need(1 < q < 2 and 1 < tau < 2 and 1 < s < 2, "h2_f4 needs q, tau, s in (1, 2)")
    _need(s < tau, f"h2_f4 needs s < tau, got s={s}, tau={tau}")
    a = q - 1
    c = math.log(2.0)

    def F_small(x):
        # int_0^x ln(1 + t^a) dt by parts, remainder as a hypergeometric series
        xa = x ** a
        return x * np.log1p(xa) - a * x ** (a + 1) / (a + 1) * hyp2f1(1.0, 1.0 + 1.0 / a, 2.0 + 1.0 / a, -xa)

    F1 = float(F_small(np.array(1.0)))

    def f(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, np.log1p(lo ** a), hi ** (tau - 1) - hi ** (s - 1) + c)

    def F(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, F_small(lo), F1 + (hi ** tau - 1) / tau - (hi ** s - 1) / s + c * (hi - 1))

    def df(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, a * lo ** (a - 1) / (1 + lo ** a),
                        (tau - 1) * hi ** (tau - 2) - (s - 1) * hi ** (s - 2))

    # ln(1 + y) >= y ln 2 on [0, 1]
    return Nonlinearity("h2_f4", _positive_part_eval(f), _positive_part_eval(F),
                        _positive_part_eval(df), "H2", q, delta=1.0, c1=c,
                        params={"q": q, "tau": tau, "s": s},
                        description="ln(x^(q-1) + 1) on [0,1]; x^(tau-1) - x^(s-1) + ln 2 for x > 1")


def h3_f2(q=1.6, tau=1.3):
    _need(1 < q < 2, f"h3_f2 needs 1 < q < 2, got q={q}")
    _need(1 < tau < q, f"h3_f2 needs 1 < tau < q, got tau={tau}")

    def f(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, lo ** (q - 1), hi ** (tau - 1))

    def F(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, lo ** q / q, 1 / q + (hi ** tau - 1) / tau)

    def df(x):
        lo = np.minimum(x, 1.0)
        hi = np.maximum(x, 1.0)
        return np.where(x <= 1, (q - 1) * lo ** (q - 2), (tau - 1) * hi ** (tau - 2))

    return Nonlinearity("h3_f2", _positive_part_eval(f), _positive_part_eval(F),
                        _positive_part_eval(df), "H4", q, delta=1.0, c1=1.0,
                        params={"q": q, "tau": tau},
                        description="x^(q-1) on [0,1]; x^(tau-1) for x > 1")


def super_f1(q=3.0):
    _need(q > 2, f"super_f1 needs 2 < q < 2*, got q={q}")
    f = _positive_part_eval(lambda x: x ** (q - 1))
    F = _positive_part_eval(lambda x: x ** q / q)
    df = _positive_part_eval(lambda x: (q - 1) * x ** (q - 2))
    return Nonlinearity("super_f1", f, F, df, "H6", q, r=q, params={"q": q},
                        description="x^(q-1)")


def super_f2():
    f = _positive_part_eval(lambda x: x * np.log1p(x))
    F = _positive_part_eval(lambda x: 0.5 * (x * x - 1.0) * np.log1p(x) - 0.25 * x * x + 0.5 * x)
    df = _positive_part_eval(lambda x: np.log1p(x) + x / (1.0 + x))
    # x ln(1+x) <= x^2, and (f x - 2F)/x^2 -> 1/2
    return Nonlinearity("super_f2", f, F, df, "H6", 2.0, r=3.0, params={},
                        description="x ln(1+x)")


BUILTINS = {
    "sub_f1": (sub_f1, "H4", "x^(q-1)", "1 < q < 2", ""),
    "sub_f2": (sub_f2, "H1", "-x^(q-1) ln x on [0,1]; x^(s-1) - x^(p-1) for x > 1",
               "1 < p < s < 2, 1 < q < 2", "vanishes at x = 1"),
    "h2_f2": (h2_f2, "H2", "x^(q-1) on [0,1]; 2x^(tau-1) - x^(s-1) for x > 1",
              "1 < q, tau, s < 2, s < tau", ""),
    "h2_f3": (h2_f3, "H2", "x^(q-1) - x^(s-1) on [0,1]; x^(tau-1) ln x for x > 1",
              "1 < q, s, tau < 2, q < s", "vanishes at x = 1"),
    "h2_f4": (h2_f4, "H2", "ln(x^(q-1) + 1) on [0,1]; x^(tau-1) - x^(s-1) + ln 2 for x > 1",
              "1 < q, tau, s < 2, s < tau", ""),
    "h3_f2": (h3_f2, "H4", "x^(q-1) on [0,1]; x^(tau-1) for x > 1", "1 < tau < q < 2", ""),
    "super_f1": (super_f1, "H6", "x^(q-1)", "2 < q < 2*", "satisfies AR"),
    "super_f2": (super_f2, "H6", "x ln(1+x)", "none", "fails AR"),
}


def builtin(name, **params) -> Nonlinearity:
    try:
        ctor = BUILTINS[name][0]
    except KeyError:
        raise HypothesisError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
    try:
        return ctor(**params)
    except TypeError as exc:
        raise HypothesisError(f"bad parameters for {name}: {exc}") from None


def catalog():
    """(name, class, formula, parameter range, note) for every builtin."""
    return [(name, cls_, formula, rng, note) for name, (_, cls_, formula, rng, note) in BUILTINS.items()]


# ---------------------------------------------------------------- hypothesis checks

@dataclass
class ClauseResult:
    clause: str
    passed: bool
    witness: dict


@dataclass
class HypothesisReport:
    name: str
    hclass: str
    clauses: list

    @property
    def passed(self):
        return all(c.passed for c in self.clauses)

    def clause(self, name):
        for c in self.clauses:
            if c.clause == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"name": self.name, "class": self.hclass, "passed": self.passed,
                "clauses": [{"clause": c.clause, "passed": c.passed, "witness": c.witness}
                            for c in self.clauses]}


def sample_grid(x_max=1e3, n_points=1000):
    """Union of a log grid on [1e-6, x_max] and a uniform grid on (0, x_max]."""
    if n_points < 1000:
        raise ValueError("sampled checks need at least 1000 points")
    g = np.concatenate([np.geomspace(1e-6, x_max, n_points), np.linspace(0, x_max, n_points + 1)[1:]])
    return np.unique(g)


def shifted_monotonicity_constant(nl, rho, n_points=1000):
    """xi_hat with f(x) + xi_hat x nondecreasing on sampled [0, rho]."""
    x = np.unique(np.concatenate([np.linspace(0, rho, n_points + 1),
                                  np.geomspace(min(1e-6, rho / 2), rho, n_points)]))
    fx = nl.f(x)
    slopes = np.diff(fx) / np.diff(x)
    return max(0.0, -float(np.min(slopes))) + 1e-6


def ar_check(nl, x_max=1e3, n_tail=200, margin=0.01):
    """Sampled unilateral AR test: exists tau > 2 with tau F <= f x on the tail.

    R(x) = f(x) x / F(x) is fitted against s = 1/ln x by a quadratic and
    extrapolated to s = 0; tau is the smaller of the limit and the tail
    minimum of R.
    """
    x = np.geomspace(x_max ** (1.0 / 3.0), x_max, n_tail)
    F = nl.F(x)
    fx = nl.f(x) * x
    if np.any(F <= 0):
        return ClauseResult("AR", False, {"reason": "F not positive on the tail"})
    R = fx / F
    s = 1.0 / np.log(x)
    coef = np.polyfit(s, R, 2)
    limit = float(coef[-1])
    tau = min(limit, float(np.min(R)))
    return ClauseResult("AR", bool(tau > 2.0 + margin), {
        "tau": tau, "R_limit": limit, "R_min": float(np.min(R)), "R_at_x_max": float(R[-1]),
        "x_range": [float(x[0]), float(x[-1])]})


def check_hypotheses(nl: Nonlinearity, x_max=1e3, n_points=1000, dim=1) -> HypothesisReport:
    """Sampled verification of the clauses of the declared class (report only)."""
    x = sample_grid(x_max, n_points)
    fx = nl.f(x)
    out = []
    neg = -np.geomspace(1e-6, x_max, 50)
    out.append(ClauseResult("normalization", bool(nl.f(0.0) == 0 and np.all(nl.f(neg) == 0)),
                            {"f0": float(nl.f(0.0)), "max_abs_f_negative": float(np.max(np.abs(nl.f(neg))))}))
    # primitive consistency by central differences
    xs = np.geomspace(1e-3, min(x_max, 50.0), 200)
    hstep = 1e-6 * np.maximum(1.0, xs)
    dF = (nl.F(xs + hstep) - nl.F(xs - hstep)) / (2 * hstep)
    err = float(np.max(np.abs(dF - nl.f(xs)) / np.maximum(1.0, np.abs(nl.f(xs)))))
    out.append(ClauseResult("primitive", err < 1e-6, {"max_rel_error": err}))

    if nl.sublinear:
        imin = int(np.argmin(fx))
        out.append(ClauseResult("positivity", bool(np.all(fx > 0)),
                                {"min_f": float(fx[imin]), "at_x": float(x[imin])}))
        out.append(ClauseResult("H1(i)", bool(np.all(np.isfinite(fx))),
                                {"a_rho": float(np.max(fx)), "rho": float(x_max)}))
        tail = x[x >= x_max / 10]
        ratio = nl.f(tail) / tail
        slope = float(np.polyfit(np.log(tail), np.log(np.maximum(ratio, 1e-300)), 1)[0])
        out.append(ClauseResult("H1(ii)", bool(slope < 0 and ratio[-1] < ratio[0]),
                                {"f_over_x_at_x_max": float(ratio[-1]), "log_slope": slope}))
        near = x[(x > 0) & (x <= nl.delta)]
        lower = nl.f(near) / (nl.c1 * near ** (nl.q - 1))
        out.append(ClauseResult("H1(iii)", bool(np.min(lower) >= 1 - 1e-12 and 1 < nl.q < 2),
                                {"min_ratio": float(np.min(lower)), "delta": nl.delta, "c1": nl.c1, "q": nl.q}))
        if nl.satisfies("H2"):
            xi = shifted_monotonicity_constant(nl, x_max, n_points)
            out.append(ClauseResult("H2(iv)", bool(math.isfinite(xi)), {"xi_hat": xi, "rho": float(x_max)}))
        if nl.satisfies("H3"):
            quo = fx / x
            d = np.diff(quo)
            out.append(ClauseResult("H3(iv)", bool(np.all(d < 0)),
                                    {"max_increment": float(np.max(d)), "n_points": int(len(x))}))
    else:
        pos = fx[x > 0]
        out.append(ClauseResult("positivity", bool(np.all(pos > 0)), {"min_f": float(np.min(pos))}))
        two_star = critical_exponent(dim)
        a = float(np.max(fx / (1 + x ** (nl.r - 1))))
        out.append(ClauseResult("H5(i)", bool(2 < nl.r < two_star and math.isfinite(a)),
                                {"a": a, "r": nl.r}))
        Fx = nl.F(x)
        tail = x >= math.sqrt(x_max)
        g = Fx[tail] / x[tail] ** 2
        grows = bool(np.all(np.diff(g) > 0) and g[-1] > 2 * g[0])
        out.append(ClauseResult("H5(ii)-superquadratic", grows,
                                {"F_over_x2_at_x_max": float(g[-1]), "F_over_x2_at_sqrt_x_max": float(g[0])}))
        qlo = max(1.0, (nl.r - 2) * dim / 2)
        quot = (fx * x - 2 * Fx) / x ** nl.q
        env = float(np.min(quot[x >= x_max / 10]))
        out.append(ClauseResult("H5(ii)-quotient", bool(env > 0 and qlo < nl.q < two_star),
                                {"xi_tilde_envelope": env, "q": nl.q,
                                 "quotient_at_x_max": float(quot[-1])}))
        small = np.geomspace(1e-8, 1e-2, 100)
        r0 = nl.f(small) / small
        out.append(ClauseResult("H5(iii)", bool(r0[0] < 1e-3 and np.all(np.diff(r0) >= 0)),
                                {"f_over_x_at_1e-8": float(r0[0])}))
        if nl.satisfies("H6"):
            xi = shifted_monotonicity_constant(nl, x_max, n_points)
            out.append(ClauseResult("H6(iv)", bool(math.isfinite(xi)), {"xi_hat": xi, "rho": float(x_max)}))
        out.append(ar_check(nl, x_max))
    return HypothesisReport(nl.name, nl.hclass, out)


# ---------------------------------------------------------------- unilateral bound

def unilateral_c1(nl: Nonlinearity, lam):
    """Concave coefficient used in the unilateral bound.

    For lam < 0 the linear term -lam x dominates c1 x^(q-1) - f only if the
    full c1 is used, so half of it is kept.
    """
    return nl.c1 if lam >= 0 else 0.5 * nl.c1


def unilateral_constants(nl: Nonlinearity, lam, tau=None, x_max=1e3, n_points=20_000):
    """Grid-certified c4 >= 0 with lam x + f(x) >= c1 x^(q-1) - c4 x^(tau-1), inflated by 10%.

    The tail beyond x_max is bounded by c1 x^(q-tau) + max(-lam, 0) x^(2-tau),
    which is decreasing there because q < 2 < tau.
    """
    if not nl.sublinear:
        raise HypothesisError("the unilateral bound is for sublinear classes")
    tau = 3.0 if tau is None else float(tau)
    if not tau > 2:
        raise HypothesisError("tau must exceed 2")
    c1 = unilateral_c1(nl, lam)
    q = nl.q
    x = np.unique(np.concatenate([np.geomspace(1e-12, x_max, n_points),
                                  np.linspace(0, x_max, n_points + 1)[1:]]))
    num = c1 * x ** (q - 1) - lam * x - nl.f(x)
    need = num / x ** (tau - 1)
    tail = c1 * x_max ** (q - tau) + max(-lam, 0.0) * x_max ** (2 - tau)
    # below the grid: the bound holds if c1 x^(q-1) - lam x - f < 0 there
    x0 = x[0]
    if x0 < nl.delta:
        slack = (c1 - nl.c1) * x0 ** (q - 1) + max(-lam, 0.0) * x0
        if slack > 0:
            raise HypothesisError("unilateral bound cannot be certified near zero")
    sup = max(float(np.max(need)), tail if num[-1] > 0 else 0.0)
    if not math.isfinite(sup):
        raise HypothesisError(f"unilateral bound fails for lambda={lam}")
    return 1.1 * max(sup, 0.0)


# ---------------------------------------------------------------- truncations

TRUNCATIONS = ("G_lambda", "Aux", "GHat", "E_lambda", "K_lambda", "GTilde", "GStar")
_NEGATIVE_SHIFT = {"Aux", "K_lambda"}


@dataclass(frozen=True, eq=False)
class TruncatedReaction:
    """Pointwise reaction x -> g(z, x) with exact primitive and derivative.

    Reference functions are nodal vectors: ``ref`` for GHat / E_lambda,
    ``lo`` for GTilde, ``lo`` and ``hi`` for GStar.  Evaluation against a
    full nodal vector uses the reference at the same node; ``at`` evaluates
    one node for arbitrary x.
    """

    kind: str
    nl: Nonlinearity
    lam: float
    mu: float
    c1: float = 1.0
    c4: float = 0.0
    tau: float = 3.0
    ref: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    @property
    def shift_target(self):
        return "negative" if self.kind in _NEGATIVE_SHIFT else "full"

    # ---- the building blocks

    def _b(self, x):
        """(lam + mu) x + f(x) and its primitive and slope, for x >= 0."""
        a = self.lam + self.mu
        return a * x + self.nl.f(x), 0.5 * a * x * x + self.nl.F(x), a + self.nl.df(x)

    def _aux(self, x):
        c1, c4, q, t = self.c1, self.c4, self.nl.q, self.tau
        xp = np.maximum(x, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = c1 * xp ** (q - 1) - c4 * xp ** (t - 1)
            P = c1 * xp ** q / q - c4 * xp ** t / t
            d = np.where(xp > 0, c1 * (q - 1) * xp ** (q - 2) - c4 * (t - 1) * xp ** (t - 2), 0.0)
        return v, P, d

    def _ghat_piece(self, x):
        v, P, d = self._aux(x)
        xp = np.maximum(x, 0.0)
        return v + self.mu * xp, P + 0.5 * self.mu * xp * xp, d + self.mu

    @staticmethod
    def _freeze_above(piece, x, ref):
        """0 for x < 0, piece on [0, ref], frozen at ref above it."""
        ref = np.maximum(ref, 0.0)
        xc = np.clip(x, 0.0, ref)
        v, P, d = piece(xc)
        val = np.where(x < 0, 0.0, v)
        prim = np.where(x < 0, 0.0, P + np.where(x > ref, v * (x - ref), 0.0))
        der = np.where((x > 0) & (x < ref), d, 0.0)
        return val, prim, der

    def _tilde(self, x, lo):
        lo = np.maximum(lo, 0.0)
        vlo, Plo, _ = self._b(lo)
        xa = np.maximum(x, lo)
        v, P, d = self._b(xa)
        below = x <= lo
        val = np.where(below, vlo, v)
        prim = np.where(below, vlo * x, vlo * lo + P - Plo)
        der = np.where(below, 0.0, d)
        return val, prim, der

    def _evaluate(self, x, ref=None, lo=None, hi=None):
        x = np.asarray(x, dtype=float)
        k = self.kind
        if k == "G_lambda":
            v, P, d = self._b(np.maximum(x, 0.0))
            pos = x > 0
            return np.where(pos, v, 0.0), np.where(pos, P, 0.0), np.where(pos, d, 0.0)
        if k == "K_lambda":
            xp = np.maximum(x, 0.0)
            v = self.lam * xp + self.nl.f(xp)
            P = 0.5 * self.lam * xp * xp + self.nl.F(xp)
            d = self.lam + self.nl.df(xp)
            pos = x > 0
            return np.where(pos, v, 0.0), np.where(pos, P, 0.0), np.where(pos, d, 0.0)
        if k == "Aux":
            v, P, d = self._aux(x)
            pos = x > 0
            return np.where(pos, v, 0.0), np.where(pos, P, 0.0), np.where(pos, d, 0.0)
        if k == "GHat":
            return self._freeze_above(self._ghat_piece, x, ref)
        if k == "E_lambda":
            return self._freeze_above(self._b, x, ref)
        if k == "GTilde":
            return self._tilde(x, lo)
        if k == "GStar":
            hi_ = np.maximum(hi, lo)
            vt, Pt, dt = self._tilde(x, lo)
            vh, Ph, _ = self._tilde(hi_, lo)
            above = x > hi_
            return (np.where(above, vh, vt), np.where(above, Ph + vh * (x - hi_), Pt),
                    np.where(above, 0.0, dt))
        raise ValueError(f"unknown truncation {k!r}")

    def _refs(self, nodes=None):
        pick = (lambda a: a) if nodes is None else (lambda a: None if a is None else a[nodes])
        return {"ref": pick(self.ref), "lo": pick(self.lo), "hi": pick(self.hi)}

    def value(self, u):
        return self._evaluate(u, **self._refs())[0]

    def primitive(self, u):
        return self._evaluate(u, **self._refs())[1]

    def derivative(self, u):
        return self._evaluate(u, **self._refs())[2]

    def at(self, node, x):
        """(value, primitive) at one node for scalar or array x."""
        r = {k: (None if v is None else v[node]) for k, v in
             (("ref", self.ref), ("lo", self.lo), ("hi", self.hi))}
        v, P, _ = self._evaluate(np.asarray(x, dtype=float), **r)
        return v, P

    def frozen_level(self):
        """Nodal level above (or below, for GTilde) which the reaction is constant."""
        return {"GHat": self.ref, "E_lambda": self.ref, "GTilde": self.lo, "GStar": self.hi}.get(self.kind)


def make_truncation(kind, nl: Nonlinearity, lam, mu, ref=None, lo=None, hi=None,
                    c4=None, tau=None, c1=None) -> TruncatedReaction:
    """Build one of the truncated reactions.

    GHat and E_lambda need ``ref`` (the level above which they freeze);
    GTilde needs ``lo``; GStar needs ``lo`` and ``hi``.  Aux and GHat use
    c1, c4 and tau of the unilateral bound (computed if not given).
    """
    if kind not in TRUNCATIONS:
        raise ValueError(f"unknown truncation {kind!r}; choose from {TRUNCATIONS}")
    if mu < 0:
        raise ValueError("mu must be >= 0")
    need = {"GHat": ("ref",), "E_lambda": ("ref",), "GTilde": ("lo",), "GStar": ("lo", "hi")}.get(kind, ())
    given = {"ref": ref, "lo": lo, "hi": hi}
    for name in need:
        if given[name] is None:
            raise ValueError(f"truncation {kind} needs the reference function {name!r}")
    conv = {k: None if v is None else np.asarray(v, dtype=float).copy() for k, v in given.items()}
    for v in conv.values():
        if v is not None:
            v.setflags(write=False)
    if kind == "GStar" and np.any(conv["lo"] > conv["hi"] + 1e-12):
        raise ValueError("GStar needs lo <= hi nodewise")
    kw = {}
    if kind in ("Aux", "GHat"):
        if not nl.sublinear:
            raise HypothesisError(f"{kind} is built for sublinear classes")
        tau = 3.0 if tau is None else float(tau)
        if c4 is None:
            c4 = unilateral_constants(nl, lam, tau)
        kw = {"c1": unilateral_c1(nl, lam) if c1 is None else float(c1), "c4": float(c4), "tau": tau}
    return TruncatedReaction(kind, nl, float(lam), float(mu), **kw, **conv)
