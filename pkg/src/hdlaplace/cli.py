"""Command-line front end.

Subcommands write one JSON report (stdout or --out) and, for sweeps, a CSV
table (--csv).  Logs go to stderr.  Exit codes: 0 ok, 1 error, 2 when the
oracle could not resolve the remainder.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings
from fractions import Fraction
from importlib import resources

import numpy as np

from . import __version__
from .bounds import (
    certificate,
    chaos_scaling,
    check_growth_conditions,
    deriv_norms,
    radius_default,
)
from .coefficients import a2_closed_form, expansion_terms
from .oracle import BudgetExhausted, integrate_reference, true_remainder
from .problem import BUILTINS, builtin_problem, load_problem, standardize
from .quartic import quartic_profile, tightness_csv, tightness_experiment

SCHEMA_VERSION = "1.0"
THREADS_ENV = "HDLAPLACE_THREADS"
EXIT_OK, EXIT_ERROR, EXIT_INCONCLUSIVE = 0, 1, 2

log = logging.getLogger("hdlaplace")


class ConfigError(ValueError):
    """Malformed run configuration; the message names the offending field."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_ERROR)


def load_schema():
    text = resources.files("hdlaplace").joinpath("report.schema.json").read_text()
    return json.loads(text)


# --------------------------------------------------------------------------
# JSON helpers
# --------------------------------------------------------------------------

def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _emit(report, path):
    text = json.dumps(_clean(report), indent=2, allow_nan=False)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _write_csv(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------

def _threads_default():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"environment variable {THREADS_ENV} must be an integer, got {raw!r}")


def resolve_config(args):
    """Fully-resolved RunConfig as a plain dict (echoed into the report)."""
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    if cfg.get("threads") is None:
        cfg["threads"] = _threads_default()
    if cfg["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    if "L" in cfg and cfg["L"] is not None and cfg["L"] < 1:
        raise ConfigError("L must be at least 1")
    if args.subcommand in ("expand", "bound", "verify"):
        has_b, has_p = cfg.get("builtin") is not None, cfg.get("problem") is not None
        if has_b == has_p:
            raise ConfigError("problem source: give exactly one of --builtin or --problem")
        if has_b:
            name = cfg["builtin"]
            if cfg.get("n") is None:
                raise ConfigError("n is required for builtin problems")
            if cfg["n"] <= 0:
                raise ConfigError("n must be positive")
            if name in ("gaussian", "quartic", "glm-logistic") and cfg.get("d") is None:
                raise ConfigError(f"d is required for builtin {name!r}")
            if name in ("stirling", "stirling1d"):
                cfg["d"] = 1
    if args.subcommand == "verify" and cfg.get("oracle") == "none":
        raise ConfigError("oracle: verify needs an oracle mode other than 'none'")
    return cfg


def _problem_from_config(cfg):
    if cfg.get("builtin"):
        params = {"n": cfg["n"], "L": cfg["L"]}
        if cfg.get("d") is not None:
            params["d"] = cfg["d"]
        if cfg["builtin"] == "glm-logistic":
            params["seed"] = cfg["seed"]
            params["g"] = cfg.get("g") or "constant"
        return builtin_problem(cfg["builtin"], **params), None, cfg["n"]
    with open(cfg["problem"]) as fh:
        doc = json.load(fh)
    spec, jet = load_problem(doc)
    n = spec.n if spec is not None else doc.get("n")
    if n is None:
        raise ConfigError("n: problem document with an inline jet must give 'n'")
    return spec, jet, float(n)


# --------------------------------------------------------------------------
# Report pieces
# --------------------------------------------------------------------------

def _terms_block(jet, L, n, method, samples, seed):
    out = []
    for res in expansion_terms(jet, L, n, method=method, samples=samples, seed=seed):
        kk = res.k // 2
        exact = str(res.value) if isinstance(res.value, Fraction) else None
        out.append({"k": res.k, "A": float(res.value), "A_exact": exact,
                    "term": float(res.value) / n**kk, "stderr": res.mc_stderr,
                    "method": res.method})
    return out


def _profiles(spec, L, R, seed):
    if spec.name == "quartic":
        return quartic_profile(spec.d, spec.n, R, L)
    return deriv_norms(spec, R, L, seed=seed)


def _certificate_block(spec, cfg):
    L, d, n = cfg["L"], spec.d, spec.n
    R = cfg.get("R") or radius_default(d, n, L)
    cfg["R"] = R
    try:
        prof0, profR = _profiles(spec, L, R, cfg["seed"])
        cert = certificate(prof0, profR, d, n, L, R=R, refined=cfg.get("refined", False))
        growth = check_growth_conditions(prof0, profR, d, n, L)
    except (ValueError, ArithmeticError) as exc:
        log.warning("certificate unavailable: %s", exc)
        return None, None, str(exc)
    growth = {"ok": growth["ok"], "tau_eps": growth["tau_eps"],
              "violations": growth["violations"]}
    return cert.to_json(), growth, None


def _oracle_block(spec, cfg, terms):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = integrate_reference(spec, mode=cfg["oracle"], tol=cfg.get("tol"),
                                  budget=cfg.get("budget"), seed=cfg["seed"],
                                  threads=cfg["threads"])
    for w in caught:
        log.warning("%s", w.message)
    rem = true_remainder(spec, cfg["L"], res, [t["term"] for t in terms])
    rem["ci"] = list(rem["ci"])
    return res.to_json(), rem


def _envelope(cfg, result, status="ok"):
    return {"schema": "hdlaplace-report", "schema_version": SCHEMA_VERSION,
            "tool_version": __version__, "subcommand": cfg["subcommand"],
            "status": status, "config": cfg, "result": result}


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def run_expand(cfg, with_certificate=True, force_oracle=False):
    spec, jet, n = _problem_from_config(cfg)
    L = cfg["L"]
    if jet is None:
        jet = standardize(spec, L)
    terms = _terms_block(jet, L, n, cfg["coeff_method"], cfg["samples"], cfg["seed"])
    result = {"problem": spec.name if spec is not None else "jet", "d": jet.dim, "n": n, "L": L,
              "epsilon": jet.dim / math.sqrt(n),
              "g0": float(jet.f(0).values[0]), "terms": terms,
              "partial_sum": float(jet.f(0).values[0]) + math.fsum(t["term"] for t in terms),
              "certificate": None, "certificate_error": None, "growth": None,
              "oracle": None, "true_remainder": None}
    status = "ok"
    if spec is not None and with_certificate:
        result["certificate"], result["growth"], result["certificate_error"] = _certificate_block(spec, cfg)
    if spec is not None and (force_oracle or cfg.get("oracle", "none") != "none"):
        result["oracle"], result["true_remainder"] = _oracle_block(spec, cfg, terms)
        if result["true_remainder"]["inconclusive"]:
            status = "inconclusive"
    elif force_oracle:
        raise ConfigError("problem: verify needs a full problem, not an inline jet")
    return _envelope(cfg, result, status)


def run_bound(cfg):
    spec, jet, n = _problem_from_config(cfg)
    if spec is None:
        raise ConfigError("problem: bound needs a full problem, not an inline jet")
    cert, growth, err = _certificate_block(spec, cfg)
    return _envelope(cfg, {"problem": spec.name, "d": spec.d, "n": n, "L": cfg["L"],
                           "certificate": cert, "certificate_error": err, "growth": growth})


def run_verify(cfg):
    return run_expand(cfg, with_certificate=False, force_oracle=True)


def run_quartic(cfg):
    results = []
    for L in cfg["Ls"]:
        grid = [(d, m * d * d) for d in cfg["dims"] for m in cfg["multipliers"]]
        results.append({"L": L, **tightness_experiment(L, grid)})
    _write_csv(tightness_csv(results), cfg.get("csv"))
    summary = [{"L": r["L"], "band": r["band"], "slope": r["slope"], "rows": r["rows"]}
               for r in results]
    return _envelope(cfg, {"experiments": summary})


def run_glm(cfg):
    from .glm import GlmInstance, glm_a2, glm_potential

    if cfg["d"] < 1 or cfg["n"] < 1:
        raise ConfigError("d and n must be positive")
    inst = GlmInstance.random(int(cfg["n"]), cfg["d"], cfg["seed"])
    spec = glm_potential(inst, g=cfg["g"], L=cfg["L"])
    gjet = (spec.g0(), spec.derivative("g", 1, spec.x0).to_dense(),
            spec.derivative("g", 2, spec.x0).to_dense())
    a2 = glm_a2(inst, gjet)
    jet = standardize(spec, cfg["L"])
    a2_std = float(a2_closed_form(jet))
    cert, growth, err = _certificate_block(spec, cfg)
    terms = _terms_block(jet, cfg["L"], spec.n, "explicit", cfg["samples"], cfg["seed"])
    result = {"problem": spec.name, "d": spec.d, "n": spec.n, "L": cfg["L"],
              "A2": a2, "A2_standardized": a2_std, "terms": terms,
              "certificate": cert, "certificate_error": err, "growth": growth,
              "oracle": None, "true_remainder": None}
    status = "ok"
    if cfg["oracle"] != "none":
        result["oracle"], result["true_remainder"] = _oracle_block(spec, cfg, terms)
        if result["true_remainder"]["inconclusive"]:
            status = "inconclusive"
        o = result["oracle"]
        rows = ["n,d,seed,oracle,oracle_error,partial_sum,rem",
                f"{spec.n},{spec.d},{cfg['seed']},{o['value']!r},{o['error']!r},"
                f"{1.0 * spec.g0() + sum(t['term'] for t in terms)!r},"
                f"{result['true_remainder']['rem']!r}"]
        _write_csv("\n".join(rows) + "\n", cfg.get("csv"))
    return _envelope(cfg, result, status)


def run_chaos(cfg):
    res = chaos_scaling(cfg["family"], dims=tuple(cfg["dims"]), q=cfg["q"],
                        samples=cfg["samples"], seed=cfg["seed"])
    lines = ["d,empirical,stderr,norm,scaled"]
    lines += [f"{r['d']},{r['empirical']!r},{r['stderr']!r},{r['norm']!r},{r['scaled']!r}"
              for r in res["rows"]]
    _write_csv("\n".join(lines) + "\n", cfg.get("csv"))
    return _envelope(cfg, res)


RUNNERS = {"expand": run_expand, "bound": run_bound, "verify": run_verify,
           "quartic": run_quartic, "glm": run_glm, "chaos": run_chaos}


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker cap (default: ${THREADS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=0, help="seed for every stochastic step")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _problem_args(p):
    src = p.add_argument_group("problem source (exactly one)")
    src.add_argument("--builtin", choices=BUILTINS + ("stirling",), help="builtin problem")
    src.add_argument("--problem", help="path to a problem JSON document")
    p.add_argument("--d", type=int, help="dimension (builtins)")
    p.add_argument("--n", type=float, help="sample size n (builtins)")
    p.add_argument("--L", type=int, default=1, help="expansion order L (default 1)")
    p.add_argument("--g", default="constant", choices=("constant", "linear", "quadratic"),
                   help="prefactor for glm-logistic")
    p.add_argument("--R", type=float, default=None, help="localization radius (default: radius rule)")
    p.add_argument("--refined", action="store_true", help="use the refined odd-order ladder")
    p.add_argument("--coeff-method", dest="coeff_method", default="explicit",
                   choices=("explicit", "mc"), help="coefficient evaluator")
    p.add_argument("--samples", type=int, default=10**6, help="MC samples for coefficients")


def _oracle_args(p, default="none"):
    p.add_argument("--oracle", default=default, choices=("none", "auto", "deterministic", "mc"),
                   help=f"reference integrator (default {default})")
    p.add_argument("--tol", type=float, default=None, help="deterministic tolerance (default 1e-9)")
    p.add_argument("--budget", type=int, default=None,
                   help="evaluation cap (deterministic) or sample count (mc, default 1e6)")


def build_parser():
    ap = _Parser(prog="hdlaplace", description="High-dimensional Laplace expansion engine.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("expand", help="expansion terms, certificate and optional oracle truth")
    _problem_args(p)
    _oracle_args(p)
    _common(p)
    p = sub.add_parser("bound", help="remainder certificate and growth-condition report")
    _problem_args(p)
    _common(p)
    p = sub.add_parser("verify", help="expansion terms against the oracle remainder")
    _problem_args(p)
    _oracle_args(p, "auto")
    _common(p)

    p = sub.add_parser("quartic", help="tightness sweep on the quartic family (CSV)")
    p.add_argument("--L", dest="Ls", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--multipliers", type=float, nargs="+", default=[16, 64, 256],
                   help="n = multiplier * d^2")
    p.add_argument("--csv", help="write the sweep table here")
    _common(p)

    p = sub.add_parser("glm", help="GLM certificate, A2 and oracle comparison")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--g", default="constant", choices=("constant", "linear", "quadratic"))
    p.add_argument("--R", type=float, default=None)
    p.add_argument("--refined", action="store_true")
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--csv", help="write the oracle comparison row here")
    _oracle_args(p, "mc")
    _common(p)

    p = sub.add_parser("chaos", help="third-order chaos moment scaling in d")
    p.add_argument("--family", default="e1-perp", choices=("e1-perp", "uniform"))
    p.add_argument("--dims", type=int, nargs="+", default=[2, 4, 8, 16])
    p.add_argument("--q", type=int, default=4)
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--csv", help="write the per-d table here")
    _common(p)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        report = RUNNERS[args.subcommand](cfg)
        _emit(report, cfg.get("out"))
    except (ConfigError, ValueError, KeyError, OSError, BudgetExhausted) as exc:
        sys.stderr.write(f"hdlaplace: error: {exc}\n")
        return EXIT_ERROR
    return EXIT_INCONCLUSIVE if report["status"] == "inconclusive" else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
