"""
Command-line front end.

``ergotrack --config run.ini`` executes one command (``local``, ``lp``,
``simulate``, ``track`` or ``verify``) and writes its result, as CSV and/or
JSON, plus ``metadata.json`` into the output directory.
``ergotrack compare LOCAL LP SIM`` consolidates three result files.

Exit codes: 0 success, 1 solver failure, 2 configuration error.

Config schema (INI sections, ``key = value``; see README for details)::

    [run]      command, output_dir, format
    [model]    class, a, r, l, k, h
    [grid]     nx, nu, box                                   (lp)
    [path]     dt, horizon, seed, n_paths, x0                 (simulate, track, verify)
    [strategy] strategy = optimal | distorted:LAM | null:FACTOR  (simulate, track)
    [tracking] T, eps, delta_frac, n_times, n_checkpoints, strategies,
               a, b, r, l, k, h  (paths: "constant v", "linear v0 v1",
               "sinusoid mean amp period", "table t0 v0; t1 v1; ...")
    [exponents] zeta_D, zeta_Q, beta_Q, beta_F, beta_P
"""
import argparse
import configparser
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, replace
from typing import Optional

from . import __version__
from .errors import ConfigError, ErgotrackError
from .localsolve import ControlClass, ModelParams, solve
from .occulp import LPStatus, lp_value
from .simkit import PathConfig, null_strategy, simulate, strategy_for
from .tracker import (CoefficientPath, CostExponents, TrackingProblem, TrackingStrategy,
                      lower_bound_integral, simulate_tracking, verify_lower_bound)

COMMANDS = ("local", "lp", "simulate", "track", "verify")
FORMATS = ("csv", "json", "both")
LP_TOL = 0.03
MC_TOL = 0.02
PARAM_RTOL = 1e-12
CSV_HEADER = "# ergotrack {} csv v1\n"


@dataclass(frozen=True)
class GridOptions:
    nx: int = 161
    nu: Optional[int] = None
    box: Optional[float] = None


@dataclass(frozen=True)
class TrackOptions:
    eps: tuple = (0.05,)
    delta_frac: float = 0.05
    n_times: int = 201
    n_checkpoints: int = 65
    strategies: tuple = ("optimal",)


@dataclass(frozen=True)
class RunConfig:
    command: str
    cls: ControlClass
    params: Optional[ModelParams] = None
    tracking: Optional[TrackingProblem] = None
    grid: Optional[GridOptions] = None
    path: Optional[PathConfig] = None
    strategy: str = "optimal"
    track: Optional[TrackOptions] = None
    output_dir: str = "."
    format: str = "both"


# ----------------------------------------------------------------------
# parsing

def _get(sec, key, conv, default=None, required=False):
    name = sec.name
    if key not in sec or sec[key].strip() == "":
        if required:
            raise ConfigError(f"missing required field '{key}' in [{name}]")
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"field '{key}' in [{name}] has malformed value {raw!r}") from None


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(s)
    return int(v)


def _section(cp, name):
    if not cp.has_section(name):
        cp.add_section(name)
    return cp[name]


def _parse_path_spec(text):
    parts = text.replace(",", " ").split(None, 1)
    kind = parts[0].lower()
    rest = parts[1] if len(parts) > 1 else ""
    if kind == "table":
        pairs = [p.split() for p in rest.split(";") if p.strip()]
        if any(len(p) != 2 for p in pairs):
            raise ValueError(text)
        return CoefficientPath.table([float(p[0]) for p in pairs], [float(p[1]) for p in pairs])
    args = [float(v) for v in rest.split()]
    return CoefficientPath(kind, tuple(args))


def _format_path_spec(path: CoefficientPath):
    if path.kind == "table":
        return "table " + "; ".join(f"{t!r} {v!r}" for t, v in zip(*path.args))
    return " ".join([path.kind] + [repr(v) for v in path.args])


def _parse_strategy(text):
    text = text.strip().lower()
    name, _, arg = text.partition(":")
    if name == "optimal" and not arg:
        return TrackingStrategy.rescaled_optimal()
    if name in ("distorted", "null") and arg:
        return TrackingStrategy(name, float(arg))
    if name == "null":
        return TrackingStrategy.null()
    raise ValueError(text)


def parse_config(text) -> RunConfig:
    """Parse config text; raises ConfigError naming the offending field.

    ``#`` starts an inline comment (``;`` separates table entries).
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config does not parse: {exc}") from None
    run = _section(cp, "run")
    command = _get(run, "command", str.lower, required=True)
    if command not in COMMANDS:
        raise ConfigError(f"field 'command' in [run] must be one of {', '.join(COMMANDS)}")
    fmt = _get(run, "format", str.lower, "both")
    if fmt not in FORMATS:
        raise ConfigError("field 'format' in [run] must be csv, json or both")
    out_dir = _get(run, "output_dir", str, ".")

    model = _section(cp, "model")
    try:
        cls = ControlClass.parse(_get(model, "class", str, required=True))
    except ErgotrackError as exc:
        raise ConfigError(f"field 'class' in [model]: {exc}") from None

    kw = dict(command=command, cls=cls, output_dir=out_dir, format=fmt)
    try:
        if command in ("local", "lp", "simulate"):
            vals = {k: _get(model, k, float, required=True) for k in ("a", "r")}
            vals.update({k: _get(model, k, float, 0.0) for k in ("l", "k", "h")})
            p = ModelParams(**vals)
            p.require(cls)
            kw["params"] = p
        if command == "lp":
            g = _section(cp, "grid")
            kw["grid"] = GridOptions(_get(g, "nx", _int, 161), _get(g, "nu", _int),
                                     _get(g, "box", float))
        if command in ("simulate", "track", "verify"):
            ps = _section(cp, "path")
            defaults = (1e-3, 1e3, 4) if command == "simulate" else (1e-2, 1.0, 20)
            kw["path"] = PathConfig(_get(ps, "dt", float, defaults[0]),
                                    _get(ps, "horizon", float, defaults[1]),
                                    _get(ps, "seed", _int, 0),
                                    _get(ps, "n_paths", _int, defaults[2]),
                                    _get(ps, "x0", float, 0.0))
        if command in ("simulate", "track"):
            st = _section(cp, "strategy")
            s = _get(st, "strategy", str.lower, "optimal")
            _get(st, "strategy", _parse_strategy)
            kw["strategy"] = s
        if command in ("track", "verify"):
            kw["tracking"], kw["track"] = _parse_tracking(cp, cls, model)
    except ConfigError:
        raise
    except ErgotrackError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(**kw)


def _parse_tracking(cp, cls, model):
    tr = _section(cp, "tracking")
    T = _get(tr, "T", float, required=True)
    paths = {}
    for name in ("a", "b", "r", "l", "k", "h"):
        path = _get(tr, name, _parse_path_spec)
        if path is None and name in model and model[name].strip():
            path = CoefficientPath.constant(_get(model, name, float))
        if path is not None:
            paths[f"{name}_path"] = path
    for name in ("a", "r"):
        if f"{name}_path" not in paths:
            raise ConfigError(f"missing required field '{name}' in [tracking] (or [model])")
    ex = _section(cp, "exponents")
    e = {k: _get(ex, k, float) for k in ("zeta_D", "zeta_Q", "beta_Q", "beta_F", "beta_P")}
    if all(v is None for v in e.values()):
        exps = CostExponents.quadratic()
    else:
        exps = CostExponents(**{k: v for k, v in e.items() if v is not None})
    tp = TrackingProblem(T=T, cls=cls, exponents=exps, **paths)
    eps = _get(tr, "eps", lambda s: tuple(float(v) for v in s.replace(",", " ").split()), (0.05,))
    strategies = _get(tr, "strategies", lambda s: tuple(v.strip().lower() for v in s.split(",")),
                      ("optimal",))
    for s in strategies:
        try:
            _parse_strategy(s)
        except ValueError:
            raise ConfigError(f"field 'strategies' in [tracking] has malformed entry {s!r}") from None
    opts = TrackOptions(eps, _get(tr, "delta_frac", float, 0.05), _get(tr, "n_times", _int, 201),
                        _get(tr, "n_checkpoints", _int, 65), strategies)
    return tp, opts


def config_echo(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["run"] = {"command": cfg.command, "output_dir": cfg.output_dir, "format": cfg.format}
    model = {"class": cfg.cls.value}
    if cfg.params is not None:
        model.update({k: repr(v) for k, v in cfg.params.as_dict().items()})
    cp["model"] = model
    if cfg.grid is not None:
        cp["grid"] = {k: repr(v) for k, v in vars(cfg.grid).items() if v is not None}
    if cfg.path is not None:
        c = cfg.path
        cp["path"] = {"dt": repr(c.dt), "horizon": repr(c.horizon), "seed": str(int(c.seed)),
                      "n_paths": str(int(c.n_paths)), "x0": repr(c.x0)}
    if cfg.command in ("simulate", "track"):
        cp["strategy"] = {"strategy": cfg.strategy}
    if cfg.tracking is not None:
        tp, o = cfg.tracking, cfg.track
        sec = {"T": repr(tp.T), "eps": ", ".join(repr(e) for e in o.eps),
               "delta_frac": repr(o.delta_frac), "n_times": str(o.n_times),
               "n_checkpoints": str(o.n_checkpoints), "strategies": ", ".join(o.strategies)}
        for name in ("a", "b", "r", "l", "k", "h"):
            path = getattr(tp, f"{name}_path")
            if path is not None:
                sec[name] = _format_path_spec(path)
        cp["tracking"] = sec
        cp["exponents"] = {k: repr(v) for k, v in tp.exponents.as_dict().items()
                           if v is not None and k not in ("zeta_F", "zeta_P")}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ----------------------------------------------------------------------
# commands

def _csv_row(keys, d):
    return ",".join(_fmt(d.get(k)) for k in keys) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_single(out, name, data, keys, fmt):
    if fmt in ("json", "both"):
        with open(os.path.join(out, f"{name}.json"), "w") as fh:
            json.dump(data, fh, indent=2)
    if fmt in ("csv", "both"):
        with open(os.path.join(out, f"{name}.csv"), "w") as fh:
            fh.write(CSV_HEADER.format(name))
            fh.write(",".join(keys) + "\n")
            fh.write(_csv_row(keys, data))


def _base(cfg):
    d = {"command": cfg.command, "class": cfg.cls.value}
    if cfg.params is not None:
        d["params"] = cfg.params.as_dict()
    return d


def run_local(cfg, out):
    sol = solve(cfg.params, cfg.cls)
    data = _base(cfg)
    data.update(sol.policy_summary())
    keys = ["class", "cost", "iota", "U", "xi_star", "x_tilde", "theta"]
    flat = dict(data, **{"class": cfg.cls.value})
    _write_single(out, "local", flat, keys, cfg.format)
    return data


def run_lp(cfg, out):
    g = cfg.grid
    sol, lp = lp_value(cfg.params, cfg.cls, g.nx, nu=g.nu, box=g.box)
    if sol.status is not LPStatus.OPTIMAL:
        raise ErgotrackError(f"LP finished with status {sol.status.value}")
    exact = solve(cfg.params, cfg.cls).cost
    data = _base(cfg)
    data.update({
        "objective": sol.objective_value, "closed_form": exact,
        "rel_gap": (sol.objective_value - exact) / exact, "status": sol.status.value,
        "iterations": int(sol.iterations), "max_row_error": sol.max_row_error,
        "nx": lp.grid.nx, "nu": lp.grid.nu, "x_range": [lp.grid.x_lo, lp.grid.x_hi],
        "n_variables": int(lp.c.size), "n_rows": int(lp.b.size),
    })
    keys = ["class", "nx", "nu", "objective", "closed_form", "rel_gap", "status", "iterations"]
    _write_single(out, "lp", data, keys, cfg.format)
    return data


def _sim_strategy(cfg, sol):
    s = _parse_strategy(cfg.strategy)
    if s.kind == "null":
        return null_strategy(sol, s.lam)
    return strategy_for(sol, s.lam if s.kind == "distorted" else 1.0)


def run_simulate(cfg, out):
    sol = solve(cfg.params, cfg.cls)
    res = simulate(cfg.params, _sim_strategy(cfg, sol), cfg.path)
    data = _base(cfg)
    data.update(res.summary())
    data["closed_form"] = sol.cost
    data["l1_distance"] = res.l1_distance(sol.density) if cfg.strategy == "optimal" else None
    if cfg.format in ("json", "both"):
        with open(os.path.join(out, "simulate.json"), "w") as fh:
            json.dump(data, fh, indent=2)
    if cfg.format in ("csv", "both"):
        res.to_csv(os.path.join(out, "simulate.csv"))
    return data


def run_track(cfg, out):
    tp, o = cfg.tracking, cfg.track
    strat = _parse_strategy(cfg.strategy)
    bound = lower_bound_integral(tp, o.n_times)
    res = simulate_tracking(tp, o.eps[0], cfg.path, strat, o.n_checkpoints)
    data = {"command": "track", "class": cfg.cls.value, "problem": tp.as_dict(),
            "eps": res.eps, "beta": res.beta, "dt": res.dt, "n_steps": res.n_steps,
            "strategy": res.strategy, "J_eps": res.J_eps, "normalized": res.normalized,
            "stderr": res.stderr, "bound": bound,
            "weights": res.weights.tolist(), "outside_guarantee": res.outside_guarantee}
    if cfg.format in ("json", "both"):
        with open(os.path.join(out, "track.json"), "w") as fh:
            json.dump(data, fh, indent=2)
    if cfg.format in ("csv", "both"):
        with open(os.path.join(out, "track.csv"), "w") as fh:
            fh.write(CSV_HEADER.format("track"))
            fh.write("trial,seed,J_eps,normalized,deviation,regular,fixed,proportional,n_interventions\n")
            for i in range(res.seeds.size):
                vals = [str(i), str(int(res.seeds[i])), repr(float(res.trial_J[i])),
                        repr(float(res.trial_normalized[i]))]
                vals += [repr(float(v)) for v in res.breakdown[i]]
                vals.append(str(int(res.interventions[i])))
                fh.write(",".join(vals) + "\n")
    return data


def run_verify(cfg, out):
    o = cfg.track
    rep = verify_lower_bound(cfg.tracking, o.eps, o.delta_frac, cfg.path,
                             [_parse_strategy(s) for s in o.strategies], o.n_times, o.n_checkpoints)
    data = dict(rep.summary(), command="verify", **{"class": cfg.cls.value})
    if cfg.format in ("json", "both"):
        with open(os.path.join(out, "verify.json"), "w") as fh:
            json.dump(data, fh, indent=2)
    if cfg.format in ("csv", "both"):
        rep.to_csv(os.path.join(out, "verify.csv"))
    return data


_RUNNERS = {"local": run_local, "lp": run_lp, "simulate": run_simulate,
            "track": run_track, "verify": run_verify}


def execute(cfg: RunConfig, quiet=True):
    """Run ``cfg``; writes results and metadata.json, returns the result dict."""
    out = cfg.output_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir {out!r} is not writable: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output_dir {out!r} is not writable")
    t0 = time.perf_counter()
    data = _RUNNERS[cfg.command](cfg, out)
    wall = time.perf_counter() - t0
    meta = {
        "tool": "ergotrack", "version": __version__, "command": cfg.command,
        "seed": int(cfg.path.seed) if cfg.path is not None else None,
        "wall_time_s": wall, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config_echo": config_echo(cfg),
    }
    with open(os.path.join(out, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    if not quiet:
        keys = ("cost", "objective", "avg_cost", "normalized", "bound")
        shown = {k: data[k] for k in keys if k in data}
        print(f"{cfg.command}: {json.dumps(shown)} ({wall:.2f} s)")
    return data


# ----------------------------------------------------------------------
# compare

def _params_of(d, what):
    try:
        return d["class"], d["params"]
    except KeyError:
        raise ConfigError(f"{what} result has no class/params echo") from None


def compare(local_file, lp_file, sim_file):
    """Consolidate closed-form, LP and Monte Carlo results of one parameter set."""
    docs = []
    for path, what in ((local_file, "local"), (lp_file, "lp"), (sim_file, "simulate")):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read {what} result {path}: {exc}") from None
        if d.get("command") != what:
            raise ConfigError(f"{path} is not a {what} result")
        docs.append(d)
    ref_cls, ref_p = _params_of(docs[0], "local")
    for d, what in zip(docs[1:], ("lp", "simulate")):
        cls, p = _params_of(d, what)
        bad = [k for k in ref_p if abs(p.get(k, math.nan) - ref_p[k]) > PARAM_RTOL * max(1.0, abs(ref_p[k]))
               or math.isnan(p.get(k, math.nan))]
        if cls != ref_cls:
            bad.insert(0, "class")
        if bad:
            raise ConfigError(f"parameter mismatch between local and {what} results: {', '.join(bad)}")
    loc, lp, sim = docs
    I = loc["cost"]
    lp_gap = (lp["objective"] - I) / I
    mc_gap = (sim["avg_cost"] - I) / I
    se = sim.get("stderr") or 0.0
    mc_tol = max(MC_TOL, 3 * se / I) if math.isfinite(se) else MC_TOL
    flags = []
    if abs(lp_gap) > LP_TOL:
        flags.append({"source": "lp", "gap": lp_gap, "tolerance": LP_TOL,
                      "hint": f"grid-resolution: LP grid nx={lp['nx']} is too coarse, refine nx"})
    if abs(mc_gap) > mc_tol:
        flags.append({"source": "simulate", "gap": mc_gap, "tolerance": mc_tol,
                      "hint": "sampling: increase horizon or n_paths, or reduce dt"})
    rows = [
        {"source": "closed_form", "value": I, "stderr": 0.0, "rel_gap": 0.0, "tolerance": 0.0},
        {"source": "lp", "value": lp["objective"], "stderr": 0.0, "rel_gap": lp_gap, "tolerance": LP_TOL},
        {"source": "simulate", "value": sim["avg_cost"], "stderr": se, "rel_gap": mc_gap,
         "tolerance": mc_tol},
    ]
    return {"command": "compare", "class": ref_cls, "params": ref_p, "rows": rows,
            "flags": flags, "clean": not flags}


def _write_compare(rep, out, fmt):
    os.makedirs(out, exist_ok=True)
    if fmt in ("json", "both"):
        with open(os.path.join(out, "compare.json"), "w") as fh:
            json.dump(rep, fh, indent=2)
    if fmt in ("csv", "both"):
        keys = ["source", "value", "stderr", "rel_gap", "tolerance"]
        with open(os.path.join(out, "compare.csv"), "w") as fh:
            fh.write(CSV_HEADER.format("compare"))
            fh.write(",".join(keys) + ",flagged\n")
            flagged = {f["source"] for f in rep["flags"]}
            for r in rep["rows"]:
                fh.write(_csv_row(keys, r).rstrip("\n") + f",{int(r['source'] in flagged)}\n")


def _print_compare(rep):
    print(f"{'source':<12} {'value':>14} {'stderr':>10} {'rel_gap':>10}")
    for r in rep["rows"]:
        print(f"{r['source']:<12} {r['value']:>14.8g} {r['stderr']:>10.3g} {r['rel_gap']:>10.3%}")
    for f in rep["flags"]:
        print(f"FLAG {f['source']}: gap {f['gap']:.3%} > {f['tolerance']:.3%} ({f['hint']})")
    if rep["clean"]:
        print("all gaps within tolerance")


# ----------------------------------------------------------------------
# entry point

def _common(ap):
    ap.add_argument("--output", help="output directory (overrides [run] output_dir)")
    ap.add_argument("--format", choices=FORMATS, help="result format")
    ap.add_argument("--quiet", action="store_true", help="suppress progress output")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "compare":
        ap = argparse.ArgumentParser(prog="ergotrack compare")
        ap.add_argument("files", nargs=3, metavar=("LOCAL", "LP", "SIM"))
        _common(ap)
        try:
            ns = ap.parse_args(argv[1:])
        except SystemExit as exc:
            return 2 if exc.code else 0
        try:
            rep = compare(*ns.files)
            _write_compare(rep, ns.output or ".", ns.format or "both")
        except ErgotrackError as exc:
            print(f"ergotrack: error: {exc}", file=sys.stderr)
            return 2
        if not ns.quiet:
            _print_compare(rep)
        return 0

    ap = argparse.ArgumentParser(prog="ergotrack", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", required=True, help="run configuration file")
    ap.add_argument("--seed", type=int, help="seed override (unsigned 64-bit)")
    ap.add_argument("--version", action="version", version=f"ergotrack {__version__}")
    _common(ap)
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        try:
            with open(ns.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from None
        cfg = parse_config(text)
        over = {}
        if ns.output:
            over["output_dir"] = ns.output
        if ns.format:
            over["format"] = ns.format
        if ns.seed is not None:
            if cfg.path is None:
                raise ConfigError(f"--seed has no effect for command {cfg.command}")
            c = cfg.path
            over["path"] = PathConfig(c.dt, c.horizon, ns.seed, c.n_paths, c.x0)
        if over:
            cfg = replace(cfg, **over)
    except ConfigError as exc:
        print(f"ergotrack: config error: {exc}", file=sys.stderr)
        return 2
    try:
        execute(cfg, quiet=ns.quiet)
    except ConfigError as exc:
        print(f"ergotrack: config error: {exc}", file=sys.stderr)
        return 2
    except (ErgotrackError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"ergotrack: solver error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
