"""Command-line front end.

    ebprod estimate --config run.toml
    ebprod simulate --config sim.toml --B 20
    ebprod grid describe --input panel.csv --model cd
    ebprod ttp --posteriors out/firm_posteriors.csv --input panel.csv
    ebprod ols-baseline --input panel.csv --out ols/
    ebprod report --from out/

Exit codes: 0 ok, 2 configuration, 3 data, 4 non-convergence, 5 internal.
Progress and errors go to stderr as one JSON object per line.
"""

import argparse
import contextlib
import json
import logging
from pathlib import Path
import shutil
import sys
import tempfile

import numpy as np
import pandas as pd

from . import __version__, _accel, analytics, report
from .config import RunConfig, apply_overrides, load_config
from .errors import ConfigError, DataError, EBError
from .grid import TypeTable, default_grid
from .likelihood import GridDensity
from .models import Family, model_from_name
from .ols import per_firm_ols, pooled_ols
from .panel import load_panel, quantile_trim
from .posterior import (dispersion_table, firm_posteriors, population_moments,
                        posterior_mean_moments, value_columns)
from .solver import solve

log = logging.getLogger("ebprod")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONV, EXIT_INTERNAL = 0, 2, 3, 4, 5


class JsonLines(logging.Formatter):
    def format(self, record):
        msg = record.getMessage()
        try:
            body = json.loads(msg)
            if not isinstance(body, dict):
                raise ValueError
        except ValueError:
            body = {"message": msg}
        return json.dumps({"level": record.levelname.lower(), "logger": record.name, **body}, sort_keys=True)


def setup_logging(quiet=False):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLines())
    root = logging.getLogger("ebprod")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if quiet else logging.INFO)
    root.propagate = False


def event(name, **kw):
    log.info(json.dumps({"event": name, **kw}, default=str))


@contextlib.contextmanager
def atomic_dir(target):
    """Yield a temporary directory that replaces ``target`` only on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.parent / f".{target.name}.old"
        shutil.rmtree(old, ignore_errors=True)
        target.rename(old)
    tmp.rename(target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


# --- shared steps ------------------------------------------------------------


def load_data(cfg):
    data = load_panel(cfg.input, cfg.columns or None, cfg.log_transform, cfg.years)
    if cfg.trim:
        data = quantile_trim(data, *cfg.trim)
    event("data", firms=data.n_firms, periods=data.n_periods, dropped=data.dropped)
    return data


def model_and_data(cfg, data):
    model = model_from_name(cfg.family, data.n_periods)
    if model.family is Family.INTENSIVE:
        data = data.intensive()
    return model, data


def build_grid(cfg, model, data):
    points = {n: v["points"] for n, v in cfg.grid.items() if isinstance(v, dict) and "points" in v}
    unknown = set(cfg.grid) - set(model.param_names)
    if unknown:
        raise ConfigError(f"grid overrides name unknown parameters {sorted(unknown)}")
    return default_grid(model, data, points).with_overrides(cfg.grid)


def config_echo(cfg):
    # thread count and output location are deliberately left out so the
    # artifacts do not depend on them
    return {
        "family": cfg.family, "grid": cfg.grid, "tol": cfg.tol, "max_iter": cfg.max_iter,
        "loglik_tol": cfg.loglik_tol, "threshold": cfg.threshold, "restarts": cfg.restarts,
        "accelerate": cfg.accelerate, "seed": cfg.seed, "input": Path(cfg.input).name if cfg.input else None,
        "log_transform": cfg.log_transform, "years": cfg.years, "trim": cfg.trim, "version": __version__,
    }


def write_analytics(cfg, post, data, model, out):
    """Requested analytics; prerequisites that are missing are skipped with a warning."""
    done = []
    if cfg.dominance:
        report.write_json(analytics.dominance_diagnostic(post, model), out / "dominance.json")
        done.append("dominance")
    if cfg.ttp and model.family is not Family.INTENSIVE:
        ref = cfg.ttp_reference
        if ref == "median_by_sector" and data.sector is None:
            log.warning(json.dumps({"event": "skip", "what": "ttp", "why": "no sector column; using pooled medians"}))
            ref = "pooled_median"
        ttp = analytics.compute_ttp(post, data, model, ref if isinstance(ref, str) else tuple(ref))
        pooled, by_sector = ttp.summary()
        report.write_csv(ttp.frame(), out / "ttp.csv")
        report.write_csv(by_sector, out / "ttp_sectors.csv")
        report.write_json(pooled, out / "ttp_summary.json")
        report.ttp_overlay(ttp, out / "ttp_overlay.svg")
        done.append("ttp")
    if cfg.markups and model.family is not Family.INTENSIVE:
        if data.wage_share is None:
            log.warning(json.dumps({"event": "skip", "what": "markups", "why": "no wage_share column"}))
        else:
            mk = analytics.compute_markups(post, data, model)
            report.write_csv(mk.frame(), out / "markups.csv")
            report.write_json({**mk.summary(), "label": mk.label}, out / "markup_summary.json")
            report.write_svg(report.svg_histogram({"markup": mk.markup.ravel()}, title="Labor markups",
                                                  xlabel="markup"), out / "hist_markup.svg")
            done.append("markups")
    if cfg.anova:
        frames = [analytics.anova_decomposition(post, data, model, "size", cfg.anova_size_mode)]
        if data.sector is not None:
            frames.insert(0, analytics.anova_decomposition(post, data, model, "sector"))
            frames.append(analytics.anova_decomposition(post, data, model, "sector+size", cfg.anova_size_mode))
        report.write_csv(pd.concat(frames, ignore_index=True), out / "anova.csv")
        done.append("anova")
    return done


# --- subcommands -------------------------------------------------------------


def run_estimate(cfg: RunConfig):
    cfg.validate()
    _accel.set_threads(cfg.threads)
    data = load_data(cfg)
    model, data = model_and_data(cfg, data)
    g = build_grid(cfg, model, data)
    table = TypeTable(g)
    src = GridDensity(model, data, table)
    event("grid", Q=g.Q, axes=g.to_dict(), backend=_accel.backend_name())
    pi, rep = solve(src, tol=cfg.tol, max_iter=cfg.max_iter, loglik_tol=cfg.loglik_tol,
                    memory_budget=cfg.memory_budget, restarts=cfg.restarts, seed=cfg.seed,
                    log_every=cfg.log_every, accelerate=cfg.accelerate, threshold=cfg.threshold)
    event("solved", converged=rep.converged, iterations=rep.iterations, loglik=pi.loglik,
          support=pi.support_size)

    post = firm_posteriors(src, pi, table, data.firm_ids)
    mix = population_moments(pi, table)
    pm = posterior_mean_moments(post)
    support = pi.support
    moments = {
        "loglik": pi.loglik,
        "support_size": pi.support_size,
        "mixture": mix.to_dict(),
        "posterior_means": pm.to_dict(),
        "dispersion_mixture": dispersion_table(value_columns(model, table.params(support)), pi.weights[support]),
        "dispersion_posterior_means": dispersion_table({n: post.column(n) for n in post.names}),
    }
    with atomic_dir(cfg.output) as out:
        report.write_csv(report.pi_star_frame(pi, table), out / "pi_star.csv")
        report.write_csv(report.posteriors_frame(post), out / "firm_posteriors.csv")
        report.write_csv(report.moments_frame(mix), out / "moments_mixture.csv")
        report.write_csv(report.corr_frame(mix), out / "corr_mixture.csv")
        report.write_csv(report.corr_frame(pm), out / "corr_posterior_means.csv")
        report.write_json(moments, out / "moments.json")
        report.write_json(json.loads(rep.to_json()), out / "solver_report.json")
        report.write_json({"config": config_echo(cfg), "grid": g.to_dict(), "Q": g.Q}, out / "run.json")
        report.posterior_histograms(post, out)
        done = write_analytics(cfg, post, data, model, out)
    event("written", output=str(cfg.output), analytics=done)
    return EXIT_OK if rep.converged else EXIT_NONCONV


def _sim_spec(cfg):
    from .simulate import DGPSpec, calibrated_dgp

    s = dict(cfg.simulation)
    base = {k: s.pop(k) for k in ("I", "T", "B", "within_sd", "clamp", "label", "bounds") if k in s}
    base["seed"] = int(s.pop("seed", cfg.seed))
    if "within_sd" in base:
        base["within_sd"] = tuple(base["within_sd"])
    if "bounds" in base:
        base["bounds"] = {k: tuple(v) for k, v in base["bounds"].items()}
    inputs = s.pop("inputs", None)
    if inputs is not None:
        base["inputs"] = load_panel(inputs)
        base.setdefault("T", base["inputs"].n_periods)
    mean, cov = s.pop("mean", None), s.pop("cov", None)
    extra = {k: s.pop(k) for k in ("workers", "s_range", "points") if k in s}
    if s:
        raise ConfigError(f"unknown [simulation] keys: {sorted(s)}")
    if mean is None and cov is None:
        spec = calibrated_dgp(**base)
    else:
        spec = DGPSpec(mean=mean, cov=cov, **base)
    return spec, extra


def run_simulate(cfg: RunConfig):
    from .simulate import SIM_S_RANGE, run_bias_mse, simulation_grid

    cfg.validate(need_input=False)
    _accel.set_threads(cfg.threads)
    spec, extra = _sim_spec(cfg)
    points = {n: v["points"] for n, v in cfg.grid.items() if isinstance(v, dict) and "points" in v}
    points.update(extra.get("points", {}))
    s_range = tuple(extra.get("s_range", SIM_S_RANGE))

    def grid_for(data):
        g = simulation_grid(data, points, s_range)
        rest = {n: {k: v for k, v in o.items() if k != "points"} for n, o in cfg.grid.items() if n != "s"}
        return g.with_overrides({n: o for n, o in rest.items() if o})

    event("simulate", I=spec.I, T=spec.T, B=spec.B, seed=spec.seed, label=spec.label)
    res = run_bias_mse(spec, grid_for, tol=cfg.tol, max_iter=cfg.max_iter,
                       memory_budget=cfg.memory_budget, workers=int(extra.get("workers", 1)),
                       accelerate=cfg.accelerate)
    with atomic_dir(cfg.output) as out:
        report.write_csv(res.summary, out / "simulation_summary.csv")
        report.write_csv(res.replications, out / "replications.csv")
        report.write_json(json.loads(res.to_json()), out / "simulation.json")
    event("written", output=str(cfg.output), failed=res.failed)
    return EXIT_NONCONV if res.failed == spec.B else EXIT_OK


def run_grid_describe(cfg):
    cfg.validate()
    data = load_data(cfg)
    model, data = model_and_data(cfg, data)
    g = build_grid(cfg, model, data)
    print(g.describe())
    return EXIT_OK


def _posteriors_and_data(cfg, args):
    cfg.validate()
    if not args.posteriors or not Path(args.posteriors).is_file():
        raise ConfigError("--posteriors must point to a firm_posteriors.csv file")
    data = load_data(cfg)
    model, data = model_and_data(cfg, data)
    post = report.read_posteriors(args.posteriors)
    if list(post.firm_ids) != list(data.firm_ids):
        raise DataError("posterior firm ids do not match the panel")
    return post, data, model


def run_ttp(cfg, args):
    post, data, model = _posteriors_and_data(cfg, args)
    ref = cfg.ttp_reference
    ttp = analytics.compute_ttp(post, data, model, ref if isinstance(ref, str) else tuple(ref))
    pooled, by_sector = ttp.summary()
    with atomic_dir(cfg.output) as out:
        report.write_csv(ttp.frame(), out / "ttp.csv")
        report.write_csv(by_sector, out / "ttp_sectors.csv")
        report.write_json(pooled, out / "ttp_summary.json")
        report.ttp_overlay(ttp, out / "ttp_overlay.svg")
    return EXIT_OK


def run_markups(cfg, args):
    post, data, model = _posteriors_and_data(cfg, args)
    mk = analytics.compute_markups(post, data, model)
    with atomic_dir(cfg.output) as out:
        report.write_csv(mk.frame(), out / "markups.csv")
        report.write_json({**mk.summary(), "label": mk.label}, out / "markup_summary.json")
    return EXIT_OK


def run_anova(cfg, args):
    post, data, model = _posteriors_and_data(cfg, args)
    groupings = args.grouping or (["sector", "size", "sector+size"] if data.sector is not None else ["size"])
    frames = [analytics.anova_decomposition(post, data, model, g, cfg.anova_size_mode) for g in groupings]
    with atomic_dir(cfg.output) as out:
        report.write_csv(pd.concat(frames, ignore_index=True), out / "anova.csv")
    return EXIT_OK


def run_ols(cfg):
    cfg.validate()
    data = load_data(cfg)
    model, data = model_and_data(cfg, data)
    fit = per_firm_ols(data, model)
    coefs, rsd = pooled_ols(data, model)
    with atomic_dir(cfg.output) as out:
        report.write_csv(fit.frame(), out / "firm_ols.csv")
        report.write_json({"pooled": coefs, "residual_sd": rsd, "rank_deficient": int((~fit.rank_ok).sum())},
                          out / "pooled_ols.json")
        for n in fit.names:
            v = fit.column(n)
            report.write_svg(report.svg_histogram({n: v[np.isfinite(v)]}, title=f"Per-firm OLS: {n}", xlabel=n),
                             out / f"ols_hist_{report._safe(n)}.svg")
    return EXIT_OK


def run_report(args):
    src = Path(args.source)
    if not src.is_dir():
        raise ConfigError(f"{src} is not a directory")
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if (src / "firm_posteriors.csv").is_file():
        made += report.posterior_histograms(report.read_posteriors(src / "firm_posteriors.csv"), out)
    if (src / "ttp.csv").is_file():
        df = pd.read_csv(src / "ttp.csv", float_precision="round_trip")
        tt = analytics.TTPResult(df["firm_id"].tolist(), df["sector"].to_numpy(), df["ln_ttp"].to_numpy(),
                                 df["ln_tfp"].to_numpy(), df["scale"].to_numpy(), {}, "")
        report.ttp_overlay(tt, out / "ttp_overlay.svg")
        made.append(out / "ttp_overlay.svg")
    if (src / "markups.csv").is_file():
        v = pd.read_csv(src / "markups.csv", float_precision="round_trip")["markup"].to_numpy()
        report.write_svg(report.svg_histogram({"markup": v}, title="Labor markups", xlabel="markup"),
                         out / "hist_markup.svg")
        made.append(out / "hist_markup.svg")
    if not made:
        raise DataError(f"no known CSV artifacts in {src}")
    event("report", files=[p.name for p in made])
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------


def _grid_arg(text):
    """``NAME=POINTS`` or ``NAME=MIN:MAX:POINTS``."""
    try:
        name, spec = text.split("=", 1)
        parts = spec.split(":")
        if len(parts) == 1:
            return name, {"points": int(parts[0])}
        lo, hi, n = parts
        return name, {"min": float(lo), "max": float(hi), "points": int(n)}
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid override {text!r}") from None


def _reference(text):
    if text in ("median_by_sector", "pooled_median"):
        return text
    try:
        k0, l0 = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("reference is median_by_sector, pooled_median or K0,L0") from None
    return (k0, l0)


def _common(p, data=True):
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--out", dest="output", type=Path, help="output directory")
    p.add_argument("--threads", type=int)
    p.add_argument("--memory-budget", dest="memory_budget_mb", type=float, help="MiB")
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")
    if data:
        p.add_argument("--input", type=Path)
        p.add_argument("--model", dest="family", choices=["cd", "ces", "intensive"])
        p.add_argument("--log-transform", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--grid", action="append", type=_grid_arg, default=None, metavar="NAME=SPEC")


def _solver_flags(p):
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--log-every", type=int)
    p.add_argument("--accelerate", action=argparse.BooleanOptionalAction, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="ebprod", description="Empirical Bayes heterogeneous production functions")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit the mixing distribution and write all artifacts")
    _common(p)
    _solver_flags(p)
    for flag in ("ttp", "markups", "anova", "dominance"):
        p.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--ttp-reference", type=_reference)

    p = sub.add_parser("simulate", help="bias/MSE study on synthetic panels")
    _common(p, data=False)
    _solver_flags(p)
    p.add_argument("--grid", action="append", type=_grid_arg, default=None, metavar="NAME=SPEC")
    p.add_argument("--I", dest="sim_I", type=int)
    p.add_argument("--T", dest="sim_T", type=int)
    p.add_argument("--B", dest="sim_B", type=int)
    p.add_argument("--workers", dest="sim_workers", type=int)

    p = sub.add_parser("grid", help="grid utilities")
    gsub = p.add_subparsers(dest="grid_command", required=True)
    d = gsub.add_parser("describe", help="print the grid that estimate would use")
    _common(d)

    for name, helptext in (("ttp", "total technology productivity"), ("markups", "labor markups"),
                           ("anova", "variance shares by sector and size")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--posteriors", type=Path, required=True, help="firm_posteriors.csv from estimate")
        if name == "ttp":
            p.add_argument("--ttp-reference", type=_reference)
        if name == "anova":
            p.add_argument("--grouping", action="append", choices=["sector", "size", "sector+size"])
            p.add_argument("--size-mode", dest="anova_size_mode", choices=["additive", "joint"])

    p = sub.add_parser("ols-baseline", help="per-firm OLS estimates")
    _common(p)

    p = sub.add_parser("report", help="regenerate SVG figures from CSV artifacts")
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    return ap


_FLAG_KEYS = ("output", "threads", "memory_budget_mb", "seed", "input", "family", "log_transform", "tol",
              "max_iter", "restarts", "threshold", "log_every", "accelerate", "ttp", "markups", "anova",
              "dominance", "ttp_reference", "anova_size_mode")


def config_from_args(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    apply_overrides(cfg, **{k: getattr(args, k, None) for k in _FLAG_KEYS})
    if getattr(args, "grid", None):
        grid = dict(cfg.grid)
        for name, o in args.grid:
            grid[name] = {**grid.get(name, {}), **o}
        cfg.grid = grid
    sim = dict(cfg.simulation)
    for key in ("I", "T", "B", "workers"):
        v = getattr(args, f"sim_{key}", None)
        if v is not None:
            sim[key] = v
    cfg.simulation = sim
    return cfg


def dispatch(args):
    if args.command == "report":
        return run_report(args)
    cfg = config_from_args(args)
    if args.command == "estimate":
        return run_estimate(cfg)
    if args.command == "simulate":
        return run_simulate(cfg)
    if args.command == "grid":
        return run_grid_describe(cfg)
    if args.command == "ttp":
        return run_ttp(cfg, args)
    if args.command == "markups":
        return run_markups(cfg, args)
    if args.command == "anova":
        return run_anova(cfg, args)
    if args.command == "ols-baseline":
        return run_ols(cfg)
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(getattr(args, "quiet", False))
    try:
        return dispatch(args)
    except EBError as exc:
        log.error(json.dumps({"event": "error", "kind": type(exc).__name__, "message": str(exc)}))
        return exc.exit_code
    except (ValueError, IndexError) as exc:
        # validation failures surfacing from library code are configuration problems
        log.error(json.dumps({"event": "error", "kind": type(exc).__name__, "message": str(exc)}))
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        log.error(json.dumps({"event": "error", "kind": type(exc).__name__, "message": repr(exc)}))
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
