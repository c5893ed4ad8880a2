"""Batch front end: ``gsplab <command> --config run.yaml``.

A run config is a YAML or JSON mapping::

    schema_version: 1
    measure: {catalog: uniform, domain: integer}   # or a full measure description
    params: {N: 10, n_samples: 100000}
    rng: {seed: 7}
    output: {path: out.json, format: json}

Command-line flags override the config. Exit codes: 0 ok, 1 a verify check
failed, 2 invalid input, 3 the requested mathematics does not apply.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import bounds, catalog, chebyshev, gauss_tools, persistence, sampler
from .errors import CovarianceInvalidError, InapplicableError, ValidationError
from .rng import RngSpec
from .spectral import (SCHEMA_VERSION, Domain, covariance, measure_digest, measure_from_config,
                       measure_to_config, moment, sigma_sq, total_mass)

COMMANDS = ("measure-info", "sample", "estimate", "curve", "bounds", "regimes", "cheby", "verify", "report")
FORMATS = ("csv", "json")
LONG_COLUMNS = ("series", "N", "value", "lo", "hi")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_INAPPLICABLE = 0, 1, 2, 3


# ---------------------------------------------------------------- serialization

def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats spelled out."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Domain):
        return obj.value
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------- config

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path!r}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ValidationError(f"config {path!r} is not valid YAML/JSON: {exc}") from None
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ValidationError("the config must be a mapping")
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version!r}")
    return cfg


_CATALOG = {
    "uniform": catalog.uniform, "gap": catalog.gap, "power": catalog.power,
    "atoms_plus_density": catalog.atoms_plus_density, "expwell": catalog.expwell,
}


def build_measure(cfg: dict | None):
    if cfg is None:
        raise ValidationError("this command needs a 'measure' entry")
    if not isinstance(cfg, dict):
        raise ValidationError("'measure' must be a mapping")
    if "catalog" not in cfg:
        return measure_from_config(cfg)
    name = cfg["catalog"]
    if name == "atoms":
        return catalog.atoms(*[tuple(map(float, a)) for a in cfg.get("atoms", [])],
                             domain=cfg.get("domain", "continuous"))
    if name not in _CATALOG:
        raise ValidationError(f"unknown catalog measure {name!r}; known: {sorted(_CATALOG) + ['atoms']}")
    kwargs = dict(cfg.get("args", {}))
    if "domain" in cfg:
        kwargs["domain"] = Domain.parse(cfg["domain"])
    try:
        rho = _CATALOG[name](**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad arguments for catalog measure {name!r}: {exc}") from None
    return rho.validate()


def _n_list(params) -> list:
    if "N_list" in params:
        values = params["N_list"]
    elif "N_range" in params:
        r = params["N_range"]
        values = list(range(int(r["start"]), int(r["stop"]) + 1, int(r.get("step", 1))))
    elif "N" in params:
        values = [params["N"]]
    else:
        raise ValidationError("give N, N_list or N_range")
    return [int(v) if float(v).is_integer() else float(v) for v in values]


# ---------------------------------------------------------------- commands

def cmd_measure_info(ctx) -> tuple[dict, list | None]:
    rho = ctx.measure()
    p = ctx.params
    deltas = [float(d) for d in p.get("deltas", [-2, -1, 1, 2])]
    out = {
        "digest": measure_digest(rho),
        "config": measure_to_config(rho),
        "total_mass": total_mass(rho),
        "moments": [{"delta": d, "value": moment(rho, d)} for d in deltas],
        "sigma_sq": [{"N": N, "value": sigma_sq(rho, N)} for N in _n_list(p)]
        if any(k in p for k in ("N", "N_list", "N_range")) else [],
    }
    lags = [float(t) for t in p.get("lags", [0, 1, 2, 5, 10])]
    out["covariance"] = [{"t": t, "value": float(v)} for t, v in zip(lags, covariance(rho, np.array(lags)))]
    return out, None


def _grid(rho, p):
    N = p.get("N")
    if N is None:
        raise ValidationError("sample needs N")
    if rho.domain is Domain.INTEGER:
        return sampler.PathGrid(Domain.INTEGER, 1, 1, int(N))
    if "h" not in p:
        raise ValidationError("continuous-time sampling needs a grid step h")
    return persistence.continuous_grid(float(N), float(p["h"]))


def cmd_sample(ctx):
    rho = ctx.measure()
    p = ctx.params
    grid = _grid(rho, p)
    n_paths = int(p.get("n_paths", 4))
    method = p.get("method", "exact")
    if method == "exact":
        paths = sampler.sample_exact(rho, grid, n_paths, ctx.rng, ctx.threads)
    elif method == "circulant":
        paths = sampler.sample_circulant(rho, grid, n_paths, ctx.rng, ctx.threads)
    elif method == "spectral":
        paths = sampler.sample_spectral(rho, grid, int(p.get("n_modes", 1024)), n_paths, ctx.rng,
                                        ctx.threads)
    else:
        raise ValidationError(f"unknown sampling method {method!r}")
    rows = [{"t": float(t), "value": float(v), "path_id": p_.provenance.get("path_id", i)}
            for i, p_ in enumerate(paths) for t, v in zip(grid.times, p_.values)]
    doc = {"grid": {"domain": grid.domain.value, "start": grid.start, "step": grid.step,
                    "count": grid.count},
           "provenance": paths[0].provenance if paths else {},
           "paths": [p_.values for p_ in paths]}
    return doc, (("t", "value", "path_id"), rows)


def cmd_estimate(ctx):
    rho = ctx.measure()
    p = ctx.params
    N = p.get("N")
    if N is None:
        raise ValidationError("estimate needs N")
    kw = dict(n_samples=int(p.get("n_samples", 100_000)), rng=ctx.rng, method=p.get("method", "auto"),
              workers=ctx.threads, max_dim=int(p.get("max_dim", 512)))
    if rho.domain is Domain.INTEGER:
        est = persistence.persistence_integer(rho, N, **kw)
    else:
        if "h" not in p:
            raise ValidationError("continuous-time estimates need a grid step h")
        est = persistence.persistence_continuous(rho, float(N), float(p["h"]), **kw)
    rec = dict(est.to_record(), N=N, p=est.p, seed=ctx.rng.seed, measure_digest=measure_digest(rho))
    return rec, (tuple(sorted(rec)), [rec])


def cmd_curve(ctx):
    rho = ctx.measure()
    p = ctx.params
    params = persistence.CurveParams(n_samples=int(p.get("n_samples", 100_000)),
                                     h=None if p.get("h") is None else float(p["h"]),
                                     workers=ctx.threads, max_dim=int(p.get("max_dim", 512)))
    points = persistence.persistence_curve(rho, _n_list(p), p.get("method", "auto"), params, ctx.rng)
    rows = persistence.curve_rows(points, ctx.rng.seed)
    doc = {"kind": "curve", "schema_version": SCHEMA_VERSION, "measure_digest": measure_digest(rho),
           "rows": [dict(r, low_confidence=bool(pt.estimate and pt.estimate.low_confidence),
                         error=pt.error or "") for r, pt in zip(rows, points)]}
    return doc, (persistence.CURVE_COLUMNS, rows)


def bound_params(p: dict) -> bounds.BoundParams:
    consts = bounds.UniversalConstants(**{k: float(v) for k, v in p.get("universal_constants", {}).items()})
    floor = p.get("ac_floor", {})
    E = floor.get("E")
    return bounds.BoundParams(
        beta=None if p.get("beta") is None else float(p["beta"]),
        ell0=None if p.get("ell0") is None else float(p["ell0"]),
        k=None if p.get("k") is None else int(p["k"]),
        s=float(p.get("s", 0.0)),
        q=None if p.get("q") is None else float(p["q"]),
        E=None if E is None else (float(E[0]), float(E[1])),
        nu=None if floor.get("nu") is None else float(floor["nu"]),
        constants=consts)


def cmd_bounds(ctx):
    rho = ctx.measure()
    p = ctx.params
    rows = bounds.bounds_table(rho, _n_list(p), bound_params(p))
    doc = {"kind": "bounds", "schema_version": SCHEMA_VERSION, "measure_digest": measure_digest(rho),
           "rows": rows}
    return doc, (bounds.BOUNDS_COLUMNS, rows)


def cmd_regimes(ctx):
    p = ctx.params
    features = p.get("features")
    if features is None:
        rho = ctx.measure()
        features, domain = bounds.features_of(rho), rho.domain
    else:
        domain = Domain.parse(p.get("domain", ctx.cfg.get("measure", {}).get("domain", "integer")))
    classes = bounds.envelope(features, domain)
    doc = {"kind": "regimes", "schema_version": SCHEMA_VERSION, "features": features,
           "domain": domain.value, "classes": [c.to_record() for c in classes]}
    rows = [dict(c.to_record(), **{"class": c.cls}) for c in classes]
    return doc, (("class", "side", "exponent", "expression", "conditions"), rows)


def _cheby_case(family, k, N, gen):
    if family == "chebyshev":
        scale = 2.0 ** (1 - k)
        fk_value = math.factorial(k) / N**k
        return (lambda x: scale * chebyshev.chebyshev_value(k, np.clip(np.asarray(x) / N, -1, 1)),
                lambda x: np.full(np.shape(x), fk_value))
    case = chebyshev.random_positive_case(gen, k, N)
    return case.f, case.fk


def cmd_cheby(ctx):
    p = ctx.params
    family = p.get("family", "chebyshev")
    if family not in ("chebyshev", "random"):
        raise ValidationError("family must be 'chebyshev' or 'random'")
    ks = [int(k) for k in p.get("k_list", [p["k"]] if "k" in p else range(2, 11))]
    N = float(p.get("N", 10))
    window = p.get("window", "9/20")
    per_k = int(p.get("n_functions", 1)) if family == "random" else 1
    rows = []
    for k in ks:
        gen = ctx.rng.generator("cheby-" + family, k)
        for i in range(per_k):
            f, fk = _cheby_case(family, k, N, gen)
            rep = chebyshev.verify_continuous(f, fk, k, N, window)
            rows.append({"k": k, "N": N, "case": i, "window": window, "lhs": rep.lhs, "sup": rep.sup,
                         "implied_c0": rep.implied_c0, "samples": chebyshev.SUP_SAMPLES,
                         "seed": ctx.rng.seed})
    return {"kind": "cheby", "family": family, "reports": rows}, \
        (("k", "N", "case", "window", "lhs", "sup", "implied_c0", "samples", "seed"), rows)


# ---------------------------------------------------------------- verify

def _random_correlation(gen, d):
    a = gen.normal(size=(d, d + 2))
    cov = a @ a.T
    s = np.sqrt(np.diag(cov))
    return cov / np.outer(s, s)


def _verify_tail_bounds(ctx, p):
    return [gauss_tools.tail_bounds_check(np.geomspace(1e-3, 30, int(p.get("n_points", 1000))))]


def _verify_khatri_sidak(ctx, p):
    gen = ctx.rng.generator("verify-khatri-sidak", 0)
    out = []
    for i in range(int(p.get("n_matrices", 20))):
        d = int(gen.integers(2, 6))
        out.append(gauss_tools.khatri_sidak_check(_random_correlation(gen, d), float(gen.uniform(0.2, 2.5)),
                                                  int(p.get("n_samples", 20_000)),
                                                  RngSpec(ctx.rng.seed * 1000 + i)))
    return out


def _verify_iid_average(ctx, p):
    gen = ctx.rng.generator("verify-iid-average", 0)
    out = []
    for _ in range(int(p.get("n_pairs", 1000))):
        b = gen.normal(0, 2, int(gen.integers(1, 50)))
        q = float(b.mean() + abs(gen.normal(0, 0.5)))
        out.append(gauss_tools.iid_average_bound_check(b, q))
    return out


def _verify_min_norm(ctx, p):
    gen = ctx.rng.generator("verify-min-norm", 0)
    out = []
    for k in range(1, int(p.get("k_max", 10)) + 1):
        worst = None
        for _ in range(int(p.get("n_polys", 1000))):
            coeffs = np.append(gen.normal(0, 2.0 ** (1 - k), k), 1.0)
            rep = chebyshev.min_norm_check(coeffs)
            worst = rep if worst is None or rep.max_abs_at_extrema < worst.max_abs_at_extrema else worst
        out.append(gauss_tools.CheckReport("min_norm", f"k={k}", worst.max_abs_at_extrema - worst.threshold,
                                           worst.passed, None, {"k": k, "min_over_polys": worst.max_abs_at_extrema}))
    return out


def _verify_hermite_genocchi(ctx, p):
    gen = ctx.rng.generator("verify-hermite-genocchi", 0)
    out = []
    for k in range(1, int(p.get("k_max", 6)) + 1):
        nodes = chebyshev.extrema(k)
        coeffs = gen.normal(size=k + 3)
        poly = np.polynomial.Polynomial(coeffs)
        dd = chebyshev.divided_difference(nodes, poly(nodes.nodes)).leading
        mc = chebyshev.hermite_genocchi_mc(poly.deriv(k), nodes, int(p.get("n_mc", 100_000)),
                                           RngSpec(ctx.rng.seed * 1000 + k), ctx.threads)
        out.append(gauss_tools.CheckReport("hermite_genocchi", f"k={k}", -abs(mc.estimate - dd),
                                           abs(mc.estimate - dd) <= 3 * mc.se, mc.se,
                                           {"mc": mc.estimate, "divided_difference": dd}))
    return out


def _verify_continuous(ctx, p):
    gen = ctx.rng.generator("verify-continuous", 0)
    c0 = float(p.get("c0", 2.0))
    out = []
    for _ in range(int(p.get("n_functions", 50))):
        k = int(gen.integers(1, 9))
        N = float(gen.choice([10.0, 100.0]))
        case = chebyshev.random_positive_case(gen, k, N)
        rep = chebyshev.verify_continuous(case.f, case.fk, k, N)
        out.append(gauss_tools.CheckReport("continuous", f"k={k}, N={N:g}", c0 - rep.implied_c0,
                                           rep.holds_at(c0), None, {"implied_c0": rep.implied_c0}))
    return out


VERIFY_CHECKS = {
    "tail_bounds": _verify_tail_bounds,
    "khatri_sidak": _verify_khatri_sidak,
    "iid_average": _verify_iid_average,
    "min_norm": _verify_min_norm,
    "hermite_genocchi": _verify_hermite_genocchi,
    "continuous": _verify_continuous,
}


def cmd_verify(ctx):
    p = ctx.params
    names = p.get("checks", sorted(VERIFY_CHECKS))
    unknown = set(names) - set(VERIFY_CHECKS)
    if unknown:
        raise ValidationError(f"unknown checks {sorted(unknown)}; known: {sorted(VERIFY_CHECKS)}")
    results = {}
    for name in names:
        reports = VERIFY_CHECKS[name](ctx, p.get(name, {}))
        results[name] = {"n": len(reports), "passed": sum(r.passed for r in reports),
                         "worst_margin": min(r.margin for r in reports),
                         "failures": [r.to_record() for r in reports if not r.passed]}
    ok = all(r["passed"] == r["n"] for r in results.values())
    rows = [{"check": k, "n": v["n"], "passed": v["passed"], "worst_margin": v["worst_margin"]}
            for k, v in results.items()]
    ctx.status = EXIT_OK if ok else EXIT_FAILED
    return {"kind": "verify", "all_passed": ok, "seed": ctx.rng.seed, "checks": results}, \
        (("check", "n", "passed", "worst_margin"), rows)


# ---------------------------------------------------------------- report

def _read_artifact(path: str):
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        doc = json.loads(text)
        if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValidationError(f"{path}: schema_version {doc.get('schema_version')!r} is not supported")
        return doc.get("kind"), doc
    rows = list(csv.DictReader(io.StringIO(text)))
    header = tuple(next(csv.reader(io.StringIO(text)), []))
    if header == persistence.CURVE_COLUMNS:
        return "curve", {"rows": rows}
    if header == bounds.BOUNDS_COLUMNS:
        return "bounds", {"rows": rows}
    raise ValidationError(f"{path}: unrecognized CSV header {header}")


def _num(v):
    if v in ("", None):
        return math.nan
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    return float(v)


def build_report(artifacts: list[tuple[str, dict]]) -> dict:
    if not artifacts:
        raise ValidationError("report needs at least one artifact")
    curve, bnds, regimes = {}, {}, []
    for kind, doc in artifacts:
        if kind == "curve":
            for r in doc["rows"]:
                if r["method"] != "gap":
                    curve[_num(r["N"])] = (_num(r["log_p"]), _num(r["se_log"]))
        elif kind == "bounds":
            for r in doc["rows"]:
                bnds[_num(r["N"])] = (_num(r["lower_log"]), _num(r["upper_log"]))
        elif kind == "regimes":
            regimes.append({"features": doc["features"], "domain": doc["domain"], "classes": doc["classes"]})
        else:
            raise ValidationError(f"artifact kind {kind!r} cannot be joined")
    long_rows, ordering = [], []
    for N, (lp, se) in sorted(curve.items()):
        long_rows.append({"series": "estimate", "N": N, "value": lp, "lo": lp - 3 * se, "hi": lp + 3 * se})
    for N, (lo, up) in sorted(bnds.items()):
        long_rows.append({"series": "lower_bound", "N": N, "value": lo, "lo": lo, "hi": lo})
        long_rows.append({"series": "upper_bound", "N": N, "value": up, "lo": up, "hi": up})
    for N in sorted(set(curve) & set(bnds)):
        lp, se = curve[N]
        lo, up = bnds[N]
        ordering.append({"N": N, "lower_le_estimate": bool(not lo > lp + 3 * se),
                         "estimate_le_trivial": bool(lp <= 3 * se),
                         "estimate_le_upper": None if math.isnan(up) else bool(not lp - 3 * se > up)})
    fits = {}
    pts = [(N, lp, se) for N, (lp, se) in sorted(curve.items())
           if math.isfinite(lp) and lp < 0 and se < 0.5 * abs(lp)]
    if len(pts) >= 4:
        for model in ("PowerOfN", "PowerTimesLog"):
            try:
                fit = bounds.slope_fit(pts, model, n_boot=500, rng=0)
                fits[model] = {"exponent": fit.exponent, "ci": list(fit.ci), "n_points": fit.n_points}
            except ValidationError as exc:
                fits[model] = {"error": str(exc)}
    return {"kind": "report", "schema_version": SCHEMA_VERSION, "ordering": ordering, "slope_fits": fits,
            "regimes": regimes, "long": long_rows}


def cmd_report(ctx):
    inputs = list(ctx.inputs) or list(ctx.params.get("inputs", []))
    if not inputs:
        raise ValidationError("report needs at least one artifact")
    summary = build_report([_read_artifact(p) for p in inputs])
    return summary, (LONG_COLUMNS, summary["long"])


HANDLERS = {
    "measure-info": cmd_measure_info, "sample": cmd_sample, "estimate": cmd_estimate, "curve": cmd_curve,
    "bounds": cmd_bounds, "regimes": cmd_regimes, "cheby": cmd_cheby, "verify": cmd_verify,
    "report": cmd_report,
}


# ---------------------------------------------------------------- driver

class Context:
    def __init__(self, cfg, rng, threads, inputs):
        self.cfg = cfg
        self.params = cfg.get("params", {}) or {}
        self.rng = rng
        self.threads = threads
        self.inputs = inputs
        self.status = EXIT_OK
        self._measure = None

    def measure(self):
        if self._measure is None:
            self._measure = build_measure(self.cfg.get("measure"))
        return self._measure


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gsplab", description="Persistence experiments for Gaussian stationary processes.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("inputs", nargs="*", help="artifact files (report only)")
    ap.add_argument("--config", help="YAML or JSON run config")
    ap.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    ap.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    ap.add_argument("--out", help="output path (default: stdout)")
    ap.add_argument("--format", choices=FORMATS, help="output format")
    return ap


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        rng_cfg = cfg.get("rng", {}) or {}
        seed = args.seed if args.seed is not None else int(rng_cfg.get("seed", 0))
        if not 0 <= seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ValidationError("--threads must be at least 1")
        rng = RngSpec(seed, int(rng_cfg.get("stream_count", 32)))
        out_cfg = cfg.get("output", {}) or {}
        fmt = args.format or out_cfg.get("format", "json")
        if fmt not in FORMATS:
            raise ValidationError(f"format must be one of {FORMATS}")
        out_path = args.out or out_cfg.get("path")
        ctx = Context(cfg, rng, args.threads, args.inputs)
        doc, table = HANDLERS[args.command](ctx)
        if fmt == "csv":
            if table is None:
                raise ValidationError(f"{args.command} has no CSV form; use --format json")
            text = _csv_text(*table)
        else:
            text = dumps(doc)
    except ValidationError as exc:
        stderr.write(dumps({"error": "validation", "exit_code": EXIT_CONFIG, "message": str(exc)}))
        return EXIT_CONFIG
    except (InapplicableError, CovarianceInvalidError) as exc:
        stderr.write(dumps({"error": "inapplicable", "exit_code": EXIT_INAPPLICABLE, "message": str(exc)}))
        return EXIT_INAPPLICABLE
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return ctx.status


def main(argv=None) -> None:
    sys.exit(run(argv))
