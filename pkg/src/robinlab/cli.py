"""Command line entry point: ``robin-lab <verb> --config run.json``.

Config files are JSON with ``schema_version`` 1::

    {
      "schema_version": 1,
      "domain": {"kind": "interval", "a": 0, "b": 1},
      "mesh": {"n": 2048},
      "xi": {"kind": "constant", "value": 0},
      "beta": {"kind": "constant", "value": 1},
      "nonlinearity": {"builtin": "sub_f1", "params": {"q": 1.5}},
      "lambda": {"relative": [-2, -1, -0.5, 0.5]},
      "solver": {"n_starts": 10, "seed": 0, "tol_grad": 1e-9, "warm_start": true},
      "output": "out"
    }

``lambda`` takes exactly one of ``value``, ``values``, ``grid`` ({min, max,
count}) or ``relative`` (offsets from lambda_hat_1).  Exit codes: 0 success,
1 solver failure, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import branch as br
from . import solvers
from .forms import FieldError, ScalarField, assemble
from .mesh import Domain, MeshError, build_mesh
from .nonlinearity import HypothesisError, Nonlinearity, builtin, catalog
from .spectrum import coercivity_shift, eigenvalues, principal_eigenpair

log = logging.getLogger("robinlab")

SCHEMA_VERSION = 1
VERBS = ("eig", "solve", "certify", "sweep", "list-builtins", "selftest")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("; ".join(f"{p['field']}: {p['message']}" for p in problems))


# ---------------------------------------------------------------- config

def _field(spec, role, where, problems):
    if spec is None:
        return ScalarField.constant(0.0 if role == "potential" else 1.0, role)
    if isinstance(spec, (int, float)):
        return ScalarField.constant(spec, role)
    if not isinstance(spec, dict):
        problems.append({"field": where, "message": "expected an object or a number"})
        return None
    kind = spec.get("kind", "constant")
    try:
        if kind == "constant":
            return ScalarField.constant(float(spec["value"]), role)
        if kind == "expression":
            return ScalarField.expression(str(spec["expr"]), role)
        if kind == "singular_power":
            return ScalarField.singular_power(spec["center"], spec["strength"], spec["exponent"],
                                              spec.get("s"), role)
    except (KeyError, TypeError, ValueError) as exc:
        problems.append({"field": where, "message": f"bad {kind} field: {exc!r}"})
        return None
    problems.append({"field": where + ".kind", "message": f"unknown kind {kind!r}"})
    return None


def _nonlinearity(spec, problems):
    if not isinstance(spec, dict):
        problems.append({"field": "nonlinearity", "message": "required object"})
        return None
    try:
        if "builtin" in spec:
            return builtin(spec["builtin"], **spec.get("params", {}))
        if "expression" in spec:
            keys = ("hclass", "q", "r", "tau", "delta", "c1", "primitive", "name")
            kw = {k: spec[k] for k in keys if k in spec}
            if "class" in spec:
                kw["hclass"] = spec["class"]
            if "hclass" not in kw or "q" not in kw:
                problems.append({"field": "nonlinearity", "message": "expression needs 'class' and 'q'"})
                return None
            return Nonlinearity.from_expression(spec["expression"], **kw)
    except HypothesisError as exc:
        problems.append({"field": "nonlinearity", "message": str(exc)})
        return None
    problems.append({"field": "nonlinearity", "message": "give 'builtin' or 'expression'"})
    return None


def _lambda_spec(spec, problems):
    if spec is None:
        return None
    if not isinstance(spec, dict):
        problems.append({"field": "lambda", "message": "expected an object"})
        return None
    absolute = [k for k in ("value", "values", "grid") if k in spec]
    if len(absolute) + ("relative" in spec) != 1:
        problems.append({"field": "lambda",
                         "message": "give exactly one of value, values, grid (absolute) or relative"})
        return None
    try:
        if "value" in spec:
            return ("absolute", [float(spec["value"])])
        if "values" in spec:
            return ("absolute", [float(v) for v in spec["values"]])
        if "grid" in spec:
            g = spec["grid"]
            n = int(g["count"])
            if n < 1:
                raise ValueError("count must be >= 1")
            return ("absolute", [float(v) for v in np.linspace(float(g["min"]), float(g["max"]), n)])
        return ("relative", [float(v) for v in spec["relative"]])
    except (KeyError, TypeError, ValueError) as exc:
        problems.append({"field": "lambda", "message": f"malformed: {exc!r}"})
        return None


def load_config(path, overrides=None):
    """Parse and validate a config; raises ConfigError listing every bad field."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([{"field": "<file>", "message": str(exc)}]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([{"field": "<file>", "message": f"invalid JSON: {exc}"}]) from None
    return parse_config(raw, overrides)


def parse_config(raw, overrides=None):
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError([{"field": "<root>", "message": "expected a JSON object"}])
    if raw.get("schema_version") != SCHEMA_VERSION:
        problems.append({"field": "schema_version", "message": f"must be {SCHEMA_VERSION}"})
    dom = raw.get("domain", {})
    domain = mesh = None
    try:
        if dom.get("kind") == "rectangle":
            domain = Domain.rectangle(dom.get("lx", 1.0), dom.get("ly", 1.0))
        else:
            domain = Domain.interval(dom.get("a", 0.0), dom.get("b", 1.0))
    except (MeshError, TypeError, AttributeError) as exc:
        problems.append({"field": "domain", "message": str(exc)})
    ms = raw.get("mesh", {})
    if domain is not None:
        try:
            res = ms["n"] if domain.dimension == 1 else (ms["nx"], ms["ny"])
            mesh = build_mesh(domain, res)
        except (KeyError, TypeError) as exc:
            problems.append({"field": "mesh", "message": f"missing resolution {exc}"})
        except MeshError as exc:
            problems.append({"field": "mesh", "message": str(exc)})
    xi = _field(raw.get("xi"), "potential", "xi", problems)
    beta = _field(raw.get("beta"), "boundary", "beta", problems)
    for name, f in (("xi", xi), ("beta", beta)):
        if f is not None and domain is not None:
            try:
                f.validate(domain.dimension)
            except FieldError as exc:
                problems.append({"field": name, "message": str(exc)})
    nl = _nonlinearity(raw.get("nonlinearity"), problems)
    lam = _lambda_spec(raw.get("lambda"), problems)
    sv = dict(raw.get("solver", {}))
    sv.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        tol = replace(solvers.DEFAULT_TOL, **{k: float(sv[k]) for k in
                                              ("tol_grad", "tol_eig", "uniq_tol", "pos_floor",
                                               "distinctness_floor") if k in sv})
        n_starts = int(sv.get("n_starts", 10))
        seed = int(sv.get("seed", 0))
        workers = sv.get("workers")
        workers = br.default_workers() if workers is None else int(workers)
        if n_starts < 1 or workers < 1 or tol.tol_grad <= 0:
            raise ValueError("n_starts, workers and tol_grad must be positive")
    except (TypeError, ValueError) as exc:
        problems.append({"field": "solver", "message": str(exc)})
        tol, n_starts, seed, workers = solvers.DEFAULT_TOL, 10, 0, 1
    if problems:
        raise ConfigError(problems)
    return {"raw": raw, "mesh": mesh, "xi": xi, "beta": beta, "nl": nl, "lambda": lam,
            "tol": tol, "n_starts": n_starts, "seed": seed, "workers": workers,
            "warm_start": bool(sv.get("warm_start", True)),
            "n_approach": int(sv.get("n_approach", 20)),
            "output": raw.get("output", "out")}


def resolve_lambdas(cfg, lam1):
    kind, vals = cfg["lambda"]
    return [lam1 + v for v in vals] if kind == "relative" else list(vals)


def _lam_tag(lam):
    return f"{lam:.10g}"


# ---------------------------------------------------------------- verbs

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def cmd_eig(cfg, out):
    forms = assemble(cfg["mesh"], cfg["xi"], cfg["beta"])
    eig = principal_eigenpair(forms)
    mu, c0 = coercivity_shift(forms)
    k = int(cfg["raw"].get("eig", {}).get("k", 1))
    payload = {"lambda_hat_1": eig.lambda_hat_1, "residual": eig.residual, "iterations": eig.iterations,
               "min_interior_value": eig.min_interior_value, "mu": mu, "c0": c0,
               "mesh": cfg["mesh"].summary()}
    if k > 1:
        payload["eigenvalues"] = eigenvalues(forms, k)
    _write_json(out / "eig.json", payload)
    solvers.write_solution_csv(out / "eigenfunction.csv", cfg["mesh"], eig.u_hat_1)
    return payload


def _need_lambda(cfg):
    if cfg["lambda"] is None:
        raise ConfigError([{"field": "lambda", "message": "this verb needs a lambda spec"}])


def cmd_solve(cfg, out):
    _need_lambda(cfg)
    forms = assemble(cfg["mesh"], cfg["xi"], cfg["beta"])
    eig = principal_eigenpair(forms)
    nl, tol = cfg["nl"], cfg["tol"]
    results = {}
    for lam in resolve_lambdas(cfg, eig.lambda_hat_1):
        if nl.sublinear:
            problem = solvers.phi_problem(forms, nl, lam)
            res = solvers.minimize(problem, lam, solvers.seed_from_eigenfunction(nl, lam, forms, eig), tol)
        else:
            problem = solvers.k_problem(forms, nl, lam)
            far = solvers.find_endpoint(problem, eig.u_hat_1, ref_energy=0.0)
            res = solvers.mountain_pass(problem, np.zeros(forms.n), far, tol)
        solvers.write_solution_csv(out / f"solution_{_lam_tag(lam)}.csv", cfg["mesh"], res.u)
        results[_lam_tag(lam)] = res.to_dict()
        if res.status != solvers.CONVERGED:
            raise solvers.SolverError(f"solve at lambda={lam} ended with {res.status}: {res.message}")
    return results


def cmd_certify(cfg, out):
    _need_lambda(cfg)
    forms = assemble(cfg["mesh"], cfg["xi"], cfg["beta"])
    eig = principal_eigenpair(forms)
    results = {}
    for lam in resolve_lambdas(cfg, eig.lambda_hat_1):
        cert = solvers.certify(lam, forms, cfg["nl"], cfg["n_starts"], cfg["seed"], eig, cfg["tol"])
        _write_json(out / f"certificate_{_lam_tag(lam)}.json", cert.to_dict())
        if cert.u is not None:
            solvers.write_solution_csv(out / f"solution_{_lam_tag(lam)}.csv", cfg["mesh"], cert.u)
        results[_lam_tag(lam)] = cert.kind
    return results


def cmd_sweep(cfg, out):
    _need_lambda(cfg)
    forms = assemble(cfg["mesh"], cfg["xi"], cfg["beta"])
    eig = principal_eigenpair(forms)
    grid = resolve_lambdas(cfg, eig.lambda_hat_1)
    b = br.sweep(forms, cfg["nl"], grid, cfg["n_starts"], cfg["seed"], cfg["warm_start"],
                 cfg["workers"], cfg["tol"], eig)
    b.to_csv(out / "branch.csv")
    for e in b.entries:
        if e.certificate is not None:
            _write_json(out / f"certificate_{_lam_tag(e.lam)}.json", e.certificate.to_dict())
        if e.u is not None:
            solvers.write_solution_csv(out / f"solution_{_lam_tag(e.lam)}.csv", cfg["mesh"], e.u)
    summary = br.summarize(b)
    _write_json(out / "summary.json", summary)
    return summary


def cmd_list_builtins():
    lines = []
    for name, cls_, formula, rng, note in catalog():
        line = f"{name:<9} {cls_:<3} f(x) = {formula}   [{rng}]"
        lines.append(line + (f"   ({note})" if note else ""))
    return "\n".join(lines)


def cmd_selftest():
    """Small end-to-end checks; returns a list of (name, passed, detail)."""
    from .mesh import build_interval_mesh
    from .nonlinearity import TRUNCATIONS, make_truncation, sub_f1, super_f1
    from .forms import VariationalProblem
    from .spectrum import picone_defect
    from scipy.optimize import brentq

    out = []
    mesh = build_interval_mesh(0.0, 1.0, 256)
    forms = assemble(mesh, ScalarField.constant(0.0), ScalarField.constant(1.0, "boundary"))
    lam1 = principal_eigenpair(forms).lambda_hat_1
    # t^2 with tan t = 2t/(t^2-1), smallest positive root (t in (1, pi/2))
    t = brentq(lambda t: (t * t - 1) * np.sin(t) - 2 * t * np.cos(t), 1.0, 0.5 * np.pi)
    ref = t * t
    out.append(("eigenvalue", abs(lam1 - ref) / ref < 1e-4, f"{lam1:.10f} vs {ref:.10f}"))
    rng = np.random.default_rng(0)
    mu = solvers.shift_of(forms)
    worst = 0.0
    for kind in TRUNCATIONS:
        nl = super_f1() if kind in ("K_lambda", "GTilde", "GStar") else sub_f1()
        refv = 0.5 + rng.random(forms.n)
        kw = {"G_lambda": {}, "K_lambda": {}, "Aux": {}, "GHat": {"ref": refv}, "E_lambda": {"ref": refv},
              "GTilde": {"lo": 0.5 * refv}, "GStar": {"lo": 0.5 * refv, "hi": refv}}[kind]
        p = VariationalProblem.from_reaction(forms, make_truncation(kind, nl, 0.5, mu, **kw))
        u = rng.random(forms.n) * 2 - 0.2
        d = rng.standard_normal(forms.n)
        h = 1e-6
        fd = (p.energy(u + h * d) - p.energy(u - h * d)) / (2 * h)
        an = float(p.gradient(u) @ d)
        worst = max(worst, abs(fd - an) / max(1.0, abs(an)))
    out.append(("gradients", worst < 1e-6, f"max relative error {worst:.2e}"))
    u = 1.0 + rng.random(forms.n)
    out.append(("picone", abs(picone_defect(u, 2 * u, forms)) < 1e-10, "R(2u, u) = 0"))
    return out


# ---------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="robin-lab", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--tol-grad", type=float, dest="tol_grad")
    return p


def _error(out, stage, exc, code, problems=None):
    payload = {"error": {"stage": stage, "type": type(exc).__name__, "message": str(exc)}}
    if problems:
        payload["error"]["fields"] = problems
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None):
    level = os.environ.get("ROBIN_LAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.verb == "list-builtins":
        print(cmd_list_builtins())
        return 0
    if args.verb == "selftest":
        checks = cmd_selftest()
        for name, ok, detail in checks:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return 0 if all(ok for _, ok, _ in checks) else 1
    out = Path(args.out) if args.out else None
    if not args.config:
        return _error(out, "config", ConfigError([{"field": "--config", "message": "required"}]), 2,
                      [{"field": "--config", "message": "required"}])
    overrides = {"seed": args.seed, "workers": args.workers, "tol_grad": args.tol_grad}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        return _error(out, "config", exc, 2, exc.problems)
    out = out or Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    verb = {"eig": cmd_eig, "solve": cmd_solve, "certify": cmd_certify, "sweep": cmd_sweep}[args.verb]
    t0 = time.perf_counter()
    try:
        result = verb(cfg, out)
    except ConfigError as exc:
        return _error(out, "config", exc, 2, exc.problems)
    except (solvers.SolverError, HypothesisError, FieldError, FloatingPointError, ValueError, RuntimeError) as exc:
        return _error(out, args.verb, exc, 1)
    log.info("%s finished in %.2fs", args.verb, time.perf_counter() - t0)
    print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
