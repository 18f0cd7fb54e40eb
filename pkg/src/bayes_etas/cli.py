"""Command-line entry point: ``bayes-etas {fit,simulate,forecast,bench,summarize}``.

Option precedence is command line, then ``--config`` JSON, then built-in
defaults. Every command writes its data files plus one ``manifest.json``
into ``--out-dir``; wall-clock timings appear only in the manifest (and in
the explicitly timing-based benchmark tables), so data files are
byte-identical across runs with the same seed.

Exit codes: 0 success, 1 numerical failure, 2 usage or I/O error. Errors
are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import (
    CatalogError,
    Region,
    fit_background_kde,
    fit_gutenberg_richter,
    load_catalog,
    temporal_background,
    uniform_background,
    write_catalog,
)
from .diagnostics import BenchmarkTable, benchmark, summarize
from .forecast import ForecastConfig, ForecastError, forecast_counts, mle_plugin_forecast
from .latent import SamplerError
from .model import EtasParams, LikelihoodError, ParameterError, make_kernel
from .posterior import McmcConfig, PriorSpec, read_samples, write_samples
from .simulate import SimConfig, SimulationError, find_window_for_count, simulate_catalog

log = logging.getLogger("bayes_etas")

DEFAULTS = {
    "fit": {
        "catalog": None, "M0": None, "T": None, "time_origin": None, "region": None,
        "model": "temporal", "background": None, "sampler": "latent",
        "samples": 5500, "burn_in": 500, "thin": 1, "inner_steps": 1, "proposal_sd": None,
        "tune": False, "store_branching": False, "chains": 1,
    },
    "simulate": {
        "mu": 0.2, "K": 0.5, "alpha": 1.0, "c": 0.03, "p": 1.3, "beta": 2.3, "T": 5000.0, "M0": 0.0,
        "kernel": "none", "sigma_x2": None, "sigma_y2": None, "d": None, "q": None, "region": None,
        "n_target": None, "allow_supercritical": False, "clip_region": False, "max_events": 1_000_000,
    },
    "forecast": {
        "samples": None, "catalog": None, "M0": None, "T": None, "time_origin": None, "region": None,
        "horizon": None, "min_mag": None, "beta": None, "n_sims": 1, "grid": None,
        "plugin_mle": False, "plugin_draws": None,
    },
    "bench": {
        "sizes": "100,500", "samplers": "latent,direct", "samples": 5500, "burn_in": 500,
        "mu": 0.2, "K": 0.5, "alpha": 1.0, "c": 0.03, "p": 1.3, "beta": 2.3, "M0": 3.0, "tune": True,
        "inner_steps": 10,
    },
    "summarize": {"samples": None},
}


class UsageError(ValueError):
    """Bad arguments or configuration (exit code 2)."""


class JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message, 2)
        sys.exit(2)


def _emit_error(kind: str, message: str, code: int) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")


# parsing ------------------------------------------------------------------------


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed (default 0)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="numba worker threads")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option defaults")
    g.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory (default: out)")
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="log warnings only")


def _catalog_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--catalog", help="catalog CSV (time,magnitude[,longitude,latitude])")
    p.add_argument("--M0", type=float, help="completeness magnitude (default: smallest magnitude)")
    p.add_argument("--T", type=float, help="end of the observation window in days")
    p.add_argument("--time-origin", help="ISO 8601 origin when the time column holds timestamps")
    p.add_argument("--region", help="xmin,xmax,ymin,ymax")


def _param_options(p: argparse.ArgumentParser) -> None:
    for name in ("mu", "K", "alpha", "c", "p", "beta"):
        p.add_argument(f"--{name}", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(prog="bayes-etas", description="Bayesian ETAS estimation and forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=JsonArgumentParser)

    fit = sub.add_parser("fit", help="sample the posterior of an ETAS model")
    _common(fit)
    _catalog_options(fit)
    fit.add_argument("--model", choices=("temporal", "gaussian", "powerlaw"))
    fit.add_argument("--background", choices=("uniform", "kde"), help="spatial background (default kde)")
    fit.add_argument("--sampler", choices=("latent", "direct"))
    fit.add_argument("--samples", type=int, help="total sweeps including burn-in")
    fit.add_argument("--burn-in", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--inner-steps", type=int, help="Metropolis steps per block per sweep (latent)")
    fit.add_argument("--proposal-sd", help="overrides, e.g. 'c=0.01,p=0.05'")
    fit.add_argument("--tune", action="store_true", default=None, help="pick proposal sds by pilot runs first")
    fit.add_argument("--store-branching", action="store_true", default=None)
    fit.add_argument("--chains", type=int)

    sim = sub.add_parser("simulate", help="simulate a synthetic catalog with known parents")
    _common(sim)
    _param_options(sim)
    sim.add_argument("--T", type=float)
    sim.add_argument("--M0", type=float)
    sim.add_argument("--kernel", choices=("none", "gaussian", "powerlaw"))
    for name in ("sigma_x2", "sigma_y2", "d", "q"):
        sim.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    sim.add_argument("--region", help="xmin,xmax,ymin,ymax (spatial kernels)")
    sim.add_argument("--n-target", type=float, help="choose T so the expected count is this")
    sim.add_argument("--allow-supercritical", action="store_true", default=None)
    sim.add_argument("--clip-region", action="store_true", default=None)
    sim.add_argument("--max-events", type=int)

    fc = sub.add_parser("forecast", help="posterior-predictive forecast")
    _common(fc)
    _catalog_options(fc)
    fc.add_argument("--samples", help="posterior sample CSV written by fit")
    fc.add_argument("--horizon", type=float, help="forecast window length in days")
    fc.add_argument("--min-mag", type=float, help="magnitude threshold R (default M0)")
    fc.add_argument("--beta", type=float, help="Gutenberg-Richter rate (default: fitted)")
    fc.add_argument("--n-sims", type=int)
    fc.add_argument("--grid", help="spatial grid as NXxNY, e.g. 64x64")
    fc.add_argument("--plugin-mle", action="store_true", default=None, help="also run the MLE plug-in forecast")
    fc.add_argument("--plugin-draws", type=int, help="plug-in realizations (default: number of draws)")

    bench = sub.add_parser("bench", help="compare samplers by minutes to 200 effective samples")
    _common(bench)
    bench.add_argument("--sizes", help="comma-separated catalog sizes")
    bench.add_argument("--samplers", help="comma-separated subset of latent,direct")
    bench.add_argument("--samples", type=int)
    bench.add_argument("--burn-in", type=int)
    bench.add_argument("--inner-steps", type=int)
    _param_options(bench)
    bench.add_argument("--M0", type=float)
    bench.add_argument("--tune", action=argparse.BooleanOptionalAction, default=None)

    sm = sub.add_parser("summarize", help="posterior summary of a sample file")
    _common(sm)
    sm.add_argument("--samples")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the ``--config`` file and explicit flags."""
    opts = dict(DEFAULTS[args.command])
    opts.update(seed=0, threads=None, out_dir="out", quiet=False)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        path = Path(cfg_path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            file_opts = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from exc
        if not isinstance(file_opts, dict):
            raise UsageError("config file must hold a JSON object")
        file_opts = {k.replace("-", "_"): v for k, v in file_opts.items()}
        unknown = set(file_opts) - set(opts)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        opts.update(file_opts)
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        opts[k] = v
    return opts


# helpers -----------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _region(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return Region(*map(float, text))
    return Region.parse(text)


def _load(opts: dict, M0=None, T=None):
    region = _region(opts.get("region"))
    M0 = opts.get("M0") if opts.get("M0") is not None else M0
    T = opts.get("T") if opts.get("T") is not None else T
    if M0 is None:
        probe = load_catalog(opts["catalog"], -math.inf, T, opts.get("time_origin"), region)
        M0 = float(probe.m.min())
    return load_catalog(opts["catalog"], M0, T, opts.get("time_origin"), region)


def _parse_sd(text) -> dict:
    if not text:
        return {}
    if isinstance(text, dict):
        return {k: float(v) for k, v in text.items()}
    out = {}
    for part in str(text).split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise UsageError(f"bad --proposal-sd entry {part!r}; expected name=value")
        out[key.strip()] = float(value)
    return out


def _parse_grid(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return int(text[0]), int(text[1])
    nx, sep, ny = str(text).lower().partition("x")
    if not sep:
        raise UsageError(f"bad --grid {text!r}; expected NXxNY")
    return int(nx), int(ny)


def _background(opts: dict, catalog, kernel: str):
    if kernel == "none":
        return temporal_background()
    if not catalog.spatial:
        raise UsageError("a spatial model needs longitude/latitude columns")
    if catalog.region is None:
        raise UsageError("a spatial model needs --region")
    if (opts.get("background") or "kde") == "uniform":
        return uniform_background(catalog.region)
    return fit_background_kde(catalog, region=catalog.region)


def _kernel_name(model: str) -> str:
    return "none" if model == "temporal" else model


# commands ----------------------------------------------------------------------


def _run_chain(job):
    from .latent import run_latent_mcmc
    from .direct import run_direct_mcmc
    from .tuning import pilot_tune

    catalog, priors, config, f, kernel, sampler, tune = job
    run = run_latent_mcmc if sampler == "latent" else run_direct_mcmc
    if tune:
        config, _ = pilot_tune(catalog, sampler, priors, config, f, kernel)
    return run(catalog, priors, config, f, kernel)


def cmd_fit(opts: dict, out: Path) -> dict:
    if not opts.get("catalog"):
        raise UsageError("fit needs --catalog")
    catalog = _load(opts)
    kernel = _kernel_name(opts["model"])
    f = _background(opts, catalog, kernel)
    priors = PriorSpec()
    if opts["chains"] < 1:
        raise UsageError("--chains must be at least 1")
    jobs = []
    for chain in range(opts["chains"]):
        config = McmcConfig(n_samples=opts["samples"], burn_in=opts["burn_in"], thin=opts["thin"],
                            seed=opts["seed"], proposal_sd=_parse_sd(opts["proposal_sd"]),
                            inner_mh_steps=opts["inner_steps"], store_branching=bool(opts["store_branching"]),
                            chain=chain)
        jobs.append((catalog, priors, config, f, kernel, opts["sampler"], bool(opts["tune"])))
    log.info("fitting %s model to %d events with the %s sampler", opts["model"], catalog.n, opts["sampler"])
    workers = min(len(jobs), opts.get("threads") or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(job) for job in jobs]
    outputs, timings = [], {}
    for chain, samples in enumerate(results):
        stem = "samples" if len(results) == 1 else f"samples_chain{chain}"
        outputs += write_samples(samples, out / f"{stem}.csv")
        summary = summarize(samples)
        outputs.append(_write_json(out / f"{stem}.summary.json", summary.to_json()))
        (out / f"{stem}.summary.txt").write_text(summary.table() + "\n", encoding="utf-8")
        outputs.append(out / f"{stem}.summary.txt")
        timings[stem] = samples.timing
        if not opts["quiet"]:
            print(summary.table())
    return {"outputs": outputs, "timings": timings, "inputs": [opts["catalog"]]}


def cmd_simulate(opts: dict, out: Path) -> dict:
    kernel = opts["kernel"]
    spatial_values = {"gaussian": ("sigma_x2", "sigma_y2"), "powerlaw": ("d", "q")}.get(kernel, ())
    missing = [k for k in spatial_values if opts.get(k) is None]
    if missing:
        raise UsageError(f"kernel {kernel} needs --{' --'.join(m.replace('_', '-') for m in missing)}")
    params = EtasParams(opts["mu"], opts["K"], opts["alpha"], opts["c"], opts["p"],
                        make_kernel(kernel, [opts[k] for k in spatial_values]))
    region = _region(opts.get("region"))
    if kernel != "none" and region is None:
        raise UsageError("a spatial kernel needs --region")
    T = opts["T"]
    if opts.get("n_target") is not None:
        T = find_window_for_count(params, opts["beta"], opts["n_target"])
        log.info("window T=%.6g days gives an expected %g events", T, opts["n_target"])
    result = simulate_catalog(SimConfig(
        params=params, beta=opts["beta"], T=T, M0=opts["M0"], region=region, seed=opts["seed"],
        max_events=opts["max_events"], allow_supercritical=bool(opts["allow_supercritical"]),
        clip_to_region=bool(opts["clip_region"]),
    ))
    cat_path = out / "catalog.csv"
    write_catalog(cat_path, result.catalog, result.parents)
    truth = {
        "params": params.as_dict(), "kernel": kernel, "beta": opts["beta"], "T": T, "M0": opts["M0"],
        "region": None if region is None else list(region.as_tuple()), "seed": opts["seed"],
        "n_events": result.catalog.n, "n_background": int(np.count_nonzero(result.parents == 0)),
        "n_outside_region": int(np.count_nonzero(result.outside)),
        "generation_sizes": list(result.generation_sizes),
    }
    log.info("simulated %d events", result.catalog.n)
    return {"outputs": [cat_path, _write_json(out / "truth.json", truth)], "inputs": []}


def cmd_forecast(opts: dict, out: Path) -> dict:
    for key in ("samples", "catalog", "horizon"):
        if opts.get(key) is None:
            raise UsageError(f"forecast needs --{key}")
    samples = read_samples(opts["samples"])
    catalog = _load(opts, M0=samples.M0 if math.isfinite(samples.M0) else None,
                    T=samples.T if math.isfinite(samples.T) else None)
    beta = opts.get("beta")
    if beta is None:
        beta = fit_gutenberg_richter(catalog).beta
        log.info("fitted Gutenberg-Richter beta=%.4f", beta)
    config = ForecastConfig(horizon=opts["horizon"], min_mag=opts.get("min_mag"), n_sims=opts["n_sims"],
                            grid=_parse_grid(opts.get("grid")), seed=opts["seed"])
    result = forecast_counts(samples, catalog, beta, config)
    result.provenance["samples_file_sha256"] = sha256_file(opts["samples"])
    outputs = [out / "forecast.json"]
    (out / "forecast.json").write_text(result.dumps(), encoding="utf-8")
    if result.grid is not None:
        (out / "grid.csv").write_text(result.grid.to_csv(), encoding="utf-8")
        outputs.append(out / "grid.csv")
    if opts.get("plugin_mle"):
        f = None
        if samples.kernel != "none":
            from .catalog import background_from_description

            f = background_from_description(samples.background, catalog)
        plug = mle_plugin_forecast(catalog, beta, config, n_draws=opts.get("plugin_draws") or len(samples),
                                   f=f, kernel=samples.kernel, seed=opts["seed"])
        (out / "forecast_plugin.json").write_text(plug.dumps(), encoding="utf-8")
        outputs.append(out / "forecast_plugin.json")
        if plug.grid is not None:
            (out / "grid_plugin.csv").write_text(plug.grid.to_csv(), encoding="utf-8")
            outputs.append(out / "grid_plugin.csv")
    if not opts["quiet"]:
        lo, hi = result.interval()
        print(f"mean {result.mean:.4g}, 95% interval [{lo}, {hi}], "
              f"P(at least one m>={result.min_mag:g}) = {result.exceedance:.4f} +/- {result.exceedance_se:.4f}")
    return {"outputs": outputs, "inputs": [opts["samples"], opts["catalog"]]}


def cmd_bench(opts: dict, out: Path) -> dict:
    from .tuning import pilot_tune

    sizes = [int(s) for s in str(opts["sizes"]).split(",") if s.strip()]
    samplers = tuple(s.strip() for s in str(opts["samplers"]).split(",") if s.strip())
    if not sizes or any(n < 10 for n in sizes):
        raise UsageError("--sizes needs catalog sizes of at least 10")
    if not samplers or set(samplers) - {"latent", "direct"}:
        raise UsageError("--samplers must be drawn from latent,direct")
    theta = EtasParams(opts["mu"], opts["K"], opts["alpha"], opts["c"], opts["p"])
    base = McmcConfig(n_samples=opts["samples"], burn_in=opts["burn_in"], seed=opts["seed"],
                      inner_mh_steps=opts["inner_steps"])
    if base.n_stored < 10:
        raise UsageError("nothing to measure: need at least 10 post-burn-in draws")
    catalogs, configs = {}, {}
    for k, n in enumerate(sizes):
        catalogs[n] = synthetic_catalog(theta, opts["beta"], opts["M0"], n, seed=opts["seed"] + k)
        for name in samplers:
            configs[(n, name)] = pilot_tune(catalogs[n], name, config=base)[0] if opts["tune"] else base
    table = benchmark(catalogs, config=base, samplers=samplers, configs=configs)
    (out / "ess.csv").write_text(table.ess_csv(), encoding="utf-8")
    (out / "table.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "table.txt").write_text(table.to_text(), encoding="utf-8")
    if not opts["quiet"]:
        print(table.to_text())
    sds = {f"{n}/{s}": dict(sorted(c.proposal_sd.items())) for (n, s), c in configs.items()}
    _write_json(out / "proposals.json", sds)
    return {"outputs": [out / "ess.csv", out / "proposals.json"],
            "timing_outputs": [out / "table.csv", out / "table.txt"],
            "timings": {"benchmark": [r.__dict__ for r in table.rows]}, "inputs": []}


def synthetic_catalog(theta: EtasParams, beta: float, M0: float, n: int, seed: int = 0, slack: float = 4.0):
    """A temporal catalog with exactly ``n`` events simulated under ``theta``."""
    T = find_window_for_count(theta, beta, n)
    for attempt in range(20):
        sim = simulate_catalog(SimConfig(theta, beta, slack * T * (attempt + 1), M0=M0, seed=seed + 7919 * attempt))
        if sim.catalog.n >= n:
            return sim.catalog.head(n)
    raise SimulationError(f"could not simulate {n} events")


def cmd_summarize(opts: dict, out: Path) -> dict:
    if not opts.get("samples"):
        raise UsageError("summarize needs --samples")
    summary = summarize(read_samples(opts["samples"]))
    _write_json(out / "summary.json", summary.to_json())
    (out / "summary.txt").write_text(summary.table() + "\n", encoding="utf-8")
    if not opts["quiet"]:
        print(summary.table())
    return {"outputs": [out / "summary.json", out / "summary.txt"], "inputs": [opts["samples"]]}


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "forecast": cmd_forecast, "bench": cmd_bench,
            "summarize": cmd_summarize}

NUMERICAL = (LikelihoodError, SamplerError, SimulationError, FloatingPointError, ArithmeticError)
USAGE = (UsageError, CatalogError, ParameterError, ForecastError, OSError, ValueError, KeyError, TypeError)


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        logging.basicConfig(level=logging.WARNING if opts["quiet"] else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
        if opts.get("threads"):
            import numba

            numba.set_num_threads(max(1, min(int(opts["threads"]), numba.config.NUMBA_NUM_THREADS)))
        out = Path(opts["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        report = COMMANDS[args.command](opts, out)
        wall = time.perf_counter() - start
        manifest = {
            "command": args.command,
            "argv": argv,
            "config": {k: _jsonable(v) for k, v in sorted(opts.items())},
            "seed": opts["seed"],
            "inputs": {str(p): sha256_file(p) for p in report.get("inputs", [])},
            "outputs": sorted(p.name for p in report["outputs"]),
            "timing_outputs": sorted(p.name for p in report.get("timing_outputs", [])),
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "wall_clock_seconds": wall,
            "timings": report.get("timings", {}),
        }
        _write_json(out / "manifest.json", manifest)
    except NUMERICAL as exc:
        _emit_error(type(exc).__name__, str(exc), 1)
        return 1
    except USAGE as exc:
        _emit_error(type(exc).__name__, str(exc), 2)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
