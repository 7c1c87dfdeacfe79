#!/usr/bin/env python3
"""Command-line tool for fitting, simulating and checking epidemic count models.

Subcommands: fit, predict, simulate, reconstruct, weights. Validation errors
exit with status 2 and one JSON diagnostic per line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from epicount.__about__ import __version__
from epicount.errors import EpicountError, ModelSpecError, UsageError
from epicount.inference import (
    FitOptions,
    FitResult,
    McmcOptions,
    fit_map,
    predict_one_step,
    priors_from_config,
    sample_posterior,
    with_posterior,
)
from epicount.mean_models import (
    ModelSpec,
    ParamVector,
    TsirSpec,
    default_params,
    natural_params,
    param_layout,
    params_from_mapping,
    spec_from_config,
    spec_to_config,
)
from epicount.panel import SurveillancePanel, load_panel, load_spatial
from epicount.simulate import (
    LAGGED_COUNT,
    PHI,
    ReseedPoisson,
    reconstruct_susceptibles,
    replicates_frame,
    simulate_ee,
    simulate_replicates,
    simulate_tsir,
)
from epicount.underreporting import (
    CUMULATIVE_VARIANCE,
    WEIGHTINGS,
    fit_reporting,
    scale_counts,
)
from epicount.weights import (
    SCHEME_KINDS,
    build_weights,
    make_scheme,
    zero_row_warnings,
)

DIST_NAME = "epicount-tools"
MOD_VERSION = __version__

LOG_NAME = "epicount.log"
THREADS_ENV = "EPICOUNT_THREADS"

# Fit files keep at most this many posterior (or curvature) draws.
MAX_STORED_DRAWS = 200


class RunManifest(NamedTuple):
    command: str
    config_hash: str | None
    input_digests: dict
    seed: int | None
    tool_version: str
    duration_seconds: float


class AppLogFile:
    """Application log file."""

    def __init__(self) -> None:
        """Initialize the AppLogFile object. Set the log path to None."""
        self.log_path: Path | None = None

    def set_log_path(self, log_path: Path | None):
        """Set the log path to enable logging (None disables it)."""
        self.log_path = log_path

    def write(self, message: str):
        """Write a message to the log file, unless the log path is None."""
        if self.log_path is None:
            return
        with self.log_path.open("a") as f:
            f.write(
                "[{}]: {}\n".format(
                    datetime.now().strftime("%Y-%m-%dT%H:%M:%S"), message
                )
            )


class AppLogHandler(logging.Handler):
    """Forward library log records into the application log file."""

    def __init__(self, log_file: AppLogFile) -> None:
        super().__init__(level=logging.INFO)
        self.log_file = log_file

    def emit(self, record: logging.LogRecord) -> None:
        self.log_file.write(f"{record.levelname} {record.name}: {record.getMessage()}")


app_log = AppLogFile()


class DiagnosticArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as JSON diagnostics."""

    def error(self, message: str):
        emit_diagnostic(UsageError("usage", f"{self.prog}: {message}").diagnostic())
        self.exit(2)


def get_app_version() -> str:
    try:
        return metadata.version(DIST_NAME)
    except metadata.PackageNotFoundError:
        return MOD_VERSION


def emit_diagnostic(diag: dict) -> None:
    sys.stderr.write(json.dumps(diag) + "\n")


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        threads = 0
    if threads < 1:
        raise UsageError(
            "bad_env", f"{THREADS_ENV} must be a positive integer, got '{value}'."
        )
    return threads


def _add_common(ap: argparse.ArgumentParser) -> None:
    ap.add_argument(
        "--no-log",
        dest="no_log",
        action="store_true",
        help="Do not create a log file.",
    )
    ap.add_argument(
        "--threads",
        dest="threads",
        type=int,
        default=None,
        help=f"Worker threads for multi-start fits, chains and replicates. "
        f"Default: ${THREADS_ENV} or 1.",
    )


def _add_panel(ap: argparse.ArgumentParser, births: bool = False) -> None:
    ap.add_argument(
        "--counts",
        required=True,
        help="Long-format counts CSV with header area,time,count.",
    )
    ap.add_argument(
        "--populations",
        required=True,
        help="Populations CSV, area,population or area,time,population.",
    )
    ap.add_argument(
        "--births",
        required=births,
        default=None,
        help="Births CSV with header area,time,births.",
    )
    ap.add_argument(
        "--period",
        type=int,
        default=52,
        help="Observation steps per year (default 52).",
    )
    ap.add_argument(
        "--maternal-lag",
        dest="maternal_lag",
        type=int,
        default=0,
        help="Steps before births join the susceptible pool (default 0).",
    )


def get_args(arglist=None):
    """Get command line arguments.

    :param arglist: List of command line arguments.
    :return: argparse.Namespace
    """
    ap = DiagnosticArgumentParser(
        prog="epicount",
        description="Fit, simulate and check spatio-temporal infectious-disease "
        "count models (TSIR and epidemic/endemic) on areal surveillance data.",
    )
    ap.add_argument(
        "--version", action="version", version=f"%(prog)s {get_app_version()}"
    )
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="MAP fit with optional MCMC.")
    fit.add_argument("--model", choices=["tsir", "ee"], default=None)
    fit.add_argument("--config", required=True, help="Model config JSON.")
    _add_panel(fit)
    fit.add_argument("--spatial", default=None, help="Spatial structure JSON.")
    fit.add_argument("--out", required=True, help="Output fit JSON file.")
    fit.add_argument("--seed", type=int, required=True)
    fit.add_argument(
        "--mcmc",
        nargs=3,
        type=int,
        metavar=("DRAWS", "BURNIN", "CHAINS"),
        default=None,
        help="Run adaptive random-walk Metropolis from the MAP.",
    )
    fit.add_argument("--starts", type=int, default=FitOptions().n_starts)
    fit.add_argument("--max-iter", dest="max_iter", type=int, default=500)
    _add_common(fit)

    pred = sub.add_parser("predict", help="One-step-ahead bands from a fit.")
    pred.add_argument("--fit", required=True, help="Fit JSON written by 'fit'.")
    _add_panel(pred)
    pred.add_argument("--spatial", default=None)
    pred.add_argument(
        "--time",
        type=int,
        default=None,
        help="Single time to predict (2..T+1). Default: all.",
    )
    pred.add_argument(
        "--nonzero-only",
        dest="nonzero_only",
        action="store_true",
        help="Only areas with at least one reported case.",
    )
    pred.add_argument("--out", required=True)
    _add_common(pred)

    sim = sub.add_parser("simulate", help="Forward simulation replicates.")
    sim.add_argument("--model", choices=["tsir", "ee"], default=None)
    sim.add_argument(
        "--config",
        default=None,
        help="Model config JSON with a 'params' block.",
    )
    sim.add_argument("--fit", default=None, help="Use MAP estimates from a fit.")
    _add_panel(sim)
    sim.add_argument("--spatial", default=None)
    sim.add_argument("--times", type=int, default=None, help="Horizon T.")
    sim.add_argument("--reps", type=int, default=1)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument(
        "--overdispersion",
        choices=[PHI, LAGGED_COUNT],
        default=PHI,
        help="TSIR negative binomial size: fitted phi or the lagged count.",
    )
    sim.add_argument(
        "--reseed",
        type=float,
        default=None,
        metavar="MEAN",
        help="TSIR only: replace structural zeros by Poisson(MEAN) draws.",
    )
    sim.add_argument("--out", required=True)
    _add_common(sim)

    rec = sub.add_parser("reconstruct", help="Estimate the reporting factor.")
    _add_panel(rec, births=True)
    rec.add_argument(
        "--weighting", choices=list(WEIGHTINGS), default=CUMULATIVE_VARIANCE
    )
    rec.add_argument("--area", default=None, help="Fit one area instead of the total.")
    rec.add_argument(
        "--bootstrap",
        type=int,
        default=0,
        help="Residual bootstrap replicates for the slope (needs --seed).",
    )
    rec.add_argument("--seed", type=int, default=None)
    rec.add_argument(
        "--xbar0",
        type=float,
        default=None,
        help="Also reconstruct susceptibles from this starting value.",
    )
    rec.add_argument("--out", required=True, help="Output report JSON.")
    _add_common(rec)

    wts = sub.add_parser("weights", help="Write a weight matrix as CSV.")
    wts.add_argument("--scheme", choices=list(SCHEME_KINDS), required=True)
    wts.add_argument("--theta", type=float, default=None)
    wts.add_argument("--spatial", required=True)
    wts.add_argument("--out", default=None, help="Output CSV (default stdout).")
    _add_common(wts)

    return ap.parse_args(arglist)


def get_digest(file_name: Path | str) -> str:
    """SHA-256 of a file, read in chunks."""
    BUFFER_SIZE = 65535
    sha = hashlib.sha256()
    with Path(file_name).open("rb") as f:
        while True:
            data = f.read(BUFFER_SIZE)
            if not data:
                break
            sha.update(data)
    return sha.hexdigest()


def write_atomic(path: Path, text: str) -> None:
    """Write text to a temporary file beside path, then rename over it."""
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="\n") as f:
        f.write(text)
    tmp.replace(path)


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, nan/inf to None."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path: Path, data: dict) -> None:
    print(f"Writing '{path}'.")
    app_log.write(f"Writing '{path}'")
    write_atomic(path, json.dumps(_clean(data), indent=2) + "\n")


def write_csv(path: Path, frame: pd.DataFrame) -> None:
    print(f"Writing '{path}'.")
    app_log.write(f"Writing '{path}'")
    write_atomic(path, frame.to_csv(index=False, lineterminator="\n"))


def read_json(path: Path | str, what: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError("missing_file", f"Cannot find {what} '{path}'.", path=str(path))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as ex:
        raise ModelSpecError(
            "schema", f"Invalid JSON in '{path}': {ex}", path=str(path)
        ) from ex
    if not isinstance(data, dict):
        raise ModelSpecError("schema", f"'{path}' must hold a JSON object.", path=str(path))
    return data


def load_model_config(path: Path | str, model: str | None) -> dict:
    config = read_json(path, "config")
    if model is not None:
        if config.get("model", model) != model:
            raise ModelSpecError(
                "model",
                f"--model {model} conflicts with config model '{config['model']}'.",
            )
        config = {**config, "model": model}
    return config


def _panel(args) -> SurveillancePanel:
    return load_panel(
        args.counts, args.populations, args.births, args.period, args.maternal_lag
    )


def _spatial(args):
    return None if args.spatial is None else load_spatial(args.spatial)


def _inputs(args, names) -> dict:
    digests = {}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            digests[name] = {"path": str(value), "sha256": get_digest(value)}
    return digests


def write_manifest(out: Path, manifest: RunManifest) -> None:
    path = out.with_name(out.name + ".manifest.json")
    write_atomic(path, json.dumps(_clean(manifest._asdict()), indent=2) + "\n")


# --- fit files --------------------------------------------------------------


def _thin(draws: np.ndarray | None) -> np.ndarray | None:
    if draws is None:
        return None
    keep = np.unique(
        np.linspace(0, draws.shape[0] - 1, min(draws.shape[0], MAX_STORED_DRAWS)).astype(int)
    )
    return draws[keep]


def fit_to_json(fit: FitResult, panel: SurveillancePanel) -> dict:
    params = fit.map_estimate
    labels = params.layout.labels()
    draws = fit.draws
    summary = None
    if draws is not None:
        q = np.quantile(draws, [0.025, 0.5, 0.975], axis=0)
        summary = {
            label: {
                "mean": float(np.mean(draws[:, k])),
                "sd": float(np.std(draws[:, k], ddof=1)) if draws.shape[0] > 1 else 0.0,
                "q025": float(q[0, k]),
                "q50": float(q[1, k]),
                "q975": float(q[2, k]),
            }
            for k, label in enumerate(labels)
        }
    return {
        "tool_version": get_app_version(),
        "config": spec_to_config(fit.spec),
        "priors": fit.priors._asdict(),
        "areas": list(panel.areas),
        "estimates": params.blocks_dict(),
        "natural": natural_params(fit.spec, params),
        "std_errors": dict(zip(labels, fit.std_errors.tolist())),
        "log_posterior": fit.log_posterior,
        "log_likelihood": fit.log_likelihood,
        "aic": fit.aic,
        "gradient_norm": fit.gradient_norm,
        "converged": fit.converged,
        "iterations": fit.n_iter,
        "boundary": list(fit.boundary),
        "singular": list(fit.singular),
        "warnings": list(fit.warnings),
        "draw_source": fit.draw_source,
        "acceptance": fit.acceptance,
        "rhat": None if fit.rhat is None else dict(zip(labels, fit.rhat.tolist())),
        "draws_summary": summary,
        "parameters": {
            "labels": labels,
            "map": params.values.tolist(),
            "draws": None if draws is None else _thin(draws).tolist(),
        },
    }


def load_fit_json(path: Path | str, areas) -> tuple[ModelSpec, ParamVector, np.ndarray | None]:
    data = read_json(path, "fit")
    try:
        spec = spec_from_config(data["config"])
        stored = data["parameters"]
    except KeyError as ex:
        raise ModelSpecError("schema", f"Fit file '{path}' lacks {ex}.") from ex
    layout = param_layout(spec, areas)
    if stored["labels"] != layout.labels():
        raise ModelSpecError(
            "fit_mismatch",
            f"Fit file '{path}' does not match the panel's areas or the model.",
            path=str(path),
        )
    params = ParamVector(layout, np.array(stored["map"], dtype=float))
    draws = stored.get("draws")
    return spec, params, None if draws is None else np.array(draws, dtype=float)


def bands_frame(panel: SurveillancePanel, times: np.ndarray, bands) -> pd.DataFrame:
    n = panel.n_areas
    k = times.size
    return pd.DataFrame(
        {
            "area": np.repeat(np.array(panel.areas, dtype=object), k),
            "time": np.tile(times, n),
            "q025": bands.q025.reshape(-1),
            "q50": bands.q50.reshape(-1),
            "q975": bands.q975.reshape(-1),
            "observed": panel.counts[:, times - 1].reshape(-1),
        }
    )


# --- subcommands ------------------------------------------------------------


def run_fit(args, threads: int) -> tuple[Path, RunManifest]:
    config = load_model_config(args.config, args.model)
    spec = spec_from_config(config)
    priors = priors_from_config(config.get("priors"))
    panel = _panel(args)
    spatial = _spatial(args)
    init = default_params(spec, panel)
    if config.get("params"):
        init = params_from_mapping(spec, panel.areas, config["params"], base=init)
    opts = FitOptions(
        max_iter=args.max_iter, n_starts=max(1, args.starts), seed=args.seed, threads=threads
    )
    app_log.write(f"FIT model '{spec.family}' with {opts.n_starts} start(s)")
    fit = fit_map(spec, priors, panel, spatial, opts, init)
    if args.mcmc is not None:
        n_draws, burn_in, chains = args.mcmc
        mcmc = McmcOptions(
            n_draws=n_draws,
            burn_in=burn_in,
            chains=max(1, chains),
            seed=args.seed,
            threads=threads,
        )
        app_log.write(f"MCMC {chains} chain(s) x {n_draws} draws")
        sample = sample_posterior(spec, priors, panel, spatial, fit.map_estimate, mcmc)
        fit = with_posterior(fit, sample, panel, spatial, seed=args.seed)

    out = Path(args.out)
    write_json(out, fit_to_json(fit, panel))
    bands_path = out.with_name(out.stem + ".bands.csv")
    write_csv(bands_path, bands_frame(panel, fit.times, fit.mean_bands))
    pred_path = out.with_name(out.stem + ".predictive.csv")
    write_csv(pred_path, bands_frame(panel, fit.times, fit.predictive_bands))
    if not fit.converged:
        print("Fit did not converge; see warnings in the fit file.")
    return out, RunManifest(
        "fit",
        get_digest(args.config),
        _inputs(args, ["config", "counts", "populations", "births", "spatial"]),
        args.seed,
        get_app_version(),
        0.0,
    )


def run_predict(args, threads: int) -> tuple[Path, RunManifest]:
    panel = _panel(args)
    spatial = _spatial(args)
    spec, params, draws = load_fit_json(args.fit, panel.areas)
    if args.time is None:
        times = range(2, panel.n_times + 2)
    else:
        times = [args.time]
    keep = np.ones(panel.n_areas, dtype=bool)
    if args.nonzero_only:
        keep = panel.counts.sum(axis=1) > 0
    rows = []
    for t in times:
        pred = predict_one_step(spec, params, panel, spatial, t, draws)
        observed = panel.counts[:, t - 1] if t <= panel.n_times else None
        for i, area in enumerate(panel.areas):
            if not keep[i]:
                continue
            rows.append(
                {
                    "area": area,
                    "time": t,
                    "mean": pred.mean[i],
                    "q025": pred.q025[i],
                    "q50": pred.q50[i],
                    "q975": pred.q975[i],
                    "observed": None if observed is None else int(observed[i]),
                }
            )
    frame = pd.DataFrame(
        rows, columns=["area", "time", "mean", "q025", "q50", "q975", "observed"]
    )
    frame["observed"] = frame["observed"].astype("Int64")
    out = Path(args.out)
    write_csv(out, frame)
    return out, RunManifest(
        "predict",
        get_digest(args.fit),
        _inputs(args, ["fit", "counts", "populations", "births", "spatial"]),
        None,
        get_app_version(),
        0.0,
    )


def run_simulate(args, threads: int) -> tuple[Path, RunManifest]:
    panel = _panel(args)
    spatial = _spatial(args)
    if args.fit is not None:
        spec, params, _ = load_fit_json(args.fit, panel.areas)
        config_path = args.fit
    elif args.config is not None:
        config = load_model_config(args.config, args.model)
        spec = spec_from_config(config)
        if not config.get("params"):
            raise ModelSpecError(
                "params", "Simulation needs a 'params' block in the config or --fit."
            )
        params = params_from_mapping(
            spec, panel.areas, config["params"], base=default_params(spec, panel)
        )
        config_path = args.config
    else:
        raise UsageError("usage", "simulate needs --config or --fit.")
    if args.reps < 1:
        raise UsageError("usage", "--reps must be at least 1.")
    n_times = args.times or panel.n_times
    reseed = None if args.reseed is None else ReseedPoisson(args.reseed)
    if not isinstance(spec, TsirSpec) and (
        reseed is not None or args.overdispersion != PHI
    ):
        raise UsageError(
            "usage", "--overdispersion and --reseed apply to the tsir model only."
        )

    def run_one(child):
        if isinstance(spec, TsirSpec):
            return simulate_tsir(
                spec, params, panel, spatial, n_times, child, args.overdispersion, reseed
            )
        return simulate_ee(spec, params, panel, spatial, n_times, child)

    app_log.write(f"SIMULATE {args.reps} replicate(s), seed {args.seed}")
    results = simulate_replicates(run_one, args.reps, args.seed, threads)
    out = Path(args.out)
    write_csv(out, replicates_frame(results, panel.areas))
    return out, RunManifest(
        "simulate",
        get_digest(config_path),
        _inputs(args, ["config", "fit", "counts", "populations", "births", "spatial"]),
        args.seed,
        get_app_version(),
        0.0,
    )


def run_reconstruct(args, threads: int) -> tuple[Path, RunManifest]:
    if args.bootstrap > 0 and args.seed is None:
        raise UsageError("usage", "--bootstrap needs --seed.")
    panel = _panel(args)
    fit = fit_reporting(
        panel,
        args.weighting,
        area=args.area,
        n_boot=args.bootstrap,
        seed=args.seed or 0,
    )
    scaled = scale_counts(panel, fit)
    out = Path(args.out)
    scaled_path = out.with_name(out.stem + ".scaled.csv")
    report = {
        "rho_hat": fit.rho_hat,
        "intercept": fit.intercept,
        "rho_se": fit.rho_se,
        "bootstrap_se": fit.bootstrap_se,
        "weighting": fit.weighting,
        "area": fit.area,
        "trend": fit.trend,
        "trend_pvalue": fit.trend_pvalue,
        "nonconstant": fit.nonconstant,
        "notes": list(scaled.notes),
        "scaled_counts": str(scaled_path),
    }
    write_csv(
        scaled_path,
        pd.DataFrame(
            {
                "area": np.repeat(np.array(panel.areas, dtype=object), panel.n_times),
                "time": np.tile(np.arange(1, panel.n_times + 1), panel.n_areas),
                "count": scaled.counts.reshape(-1),
            }
        ),
    )
    if args.xbar0 is not None:
        series = reconstruct_susceptibles(panel, fit.rho_hat, args.xbar0)
        sus_path = out.with_name(out.stem + ".susceptibles.csv")
        report["susceptibles"] = str(sus_path)
        report["negative_susceptibles"] = [
            {"area": a, "time": t} for a, t in series.negative
        ]
        write_csv(
            sus_path,
            pd.DataFrame(
                {
                    "area": np.repeat(np.array(panel.areas, dtype=object), panel.n_times),
                    "time": np.tile(np.arange(1, panel.n_times + 1), panel.n_areas),
                    "susceptibles": series.values.reshape(-1),
                }
            ),
        )
    write_json(out, report)
    return out, RunManifest(
        "reconstruct",
        None,
        _inputs(args, ["counts", "populations", "births"]),
        args.seed,
        get_app_version(),
        0.0,
    )


def run_weights(args, threads: int) -> tuple[Path | None, RunManifest]:
    spatial = load_spatial(args.spatial)
    scheme = make_scheme(args.scheme, args.theta)
    wm = build_weights(scheme, spatial)
    zero_row_warnings(wm, spatial.areas)
    frame = pd.DataFrame(wm.w, columns=list(spatial.areas))
    frame.insert(0, "area", list(spatial.areas))
    manifest = RunManifest(
        "weights", None, _inputs(args, ["spatial"]), None, get_app_version(), 0.0
    )
    if args.out is None:
        sys.stdout.write(frame.to_csv(index=False, lineterminator="\n"))
        return None, manifest
    out = Path(args.out)
    write_csv(out, frame)
    return out, manifest


COMMANDS = {
    "fit": run_fit,
    "predict": run_predict,
    "simulate": run_simulate,
    "reconstruct": run_reconstruct,
    "weights": run_weights,
}


def run(arglist=None) -> int:
    """Run one subcommand and return the process exit code."""
    try:
        args = get_args(arglist)
    except SystemExit as ex:
        return int(ex.code or 0)

    out_dir = Path(args.out).parent if getattr(args, "out", None) else Path.cwd()
    if not args.no_log and out_dir.exists():
        app_log.set_log_path(out_dir / LOG_NAME)
    else:
        app_log.set_log_path(None)
    handler = AppLogHandler(app_log)
    package_log = logging.getLogger("epicount")
    package_log.addHandler(handler)
    previous_level = package_log.level
    package_log.setLevel(logging.INFO)

    start = time.perf_counter()
    app_log.write(f"START {args.command} (version {get_app_version()})")
    try:
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise UsageError("usage", "--threads must be at least 1.")
        out, manifest = COMMANDS[args.command](args, threads)
        manifest = manifest._replace(
            duration_seconds=round(time.perf_counter() - start, 3)
        )
        # Output sent to stdout gets its manifest in the working directory.
        write_manifest(Path.cwd() / args.command if out is None else out, manifest)
    except EpicountError as ex:
        app_log.write(f"ERROR {ex.diagnostic()}")
        emit_diagnostic(ex.diagnostic())
        return 2
    except OSError as ex:
        path = None if ex.filename is None else str(ex.filename)
        diag = UsageError("io", str(ex), path=path).diagnostic()
        app_log.write(f"ERROR {diag}")
        emit_diagnostic(diag)
        return 2
    finally:
        package_log.removeHandler(handler)
        package_log.setLevel(previous_level)
    app_log.write(f"FINISH {args.command}")
    return 0


def main(arglist=None) -> int:
    """Main function.

    :param arglist: List of command line arguments. Optional.
    :return: Exit code.
    """
    return run(arglist)


if __name__ == "__main__":
    sys.exit(main())
