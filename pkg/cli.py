"""
lfocv command line.

    python cli.py lfo data.csv --model model.json --L 20 --M 1 --tau 0.7
    python cli.py loo data.csv --model model.json
    python cli.py marginal data.csv --model model.json
    python cli.py simulate --matrix matrix.json --out-dir runs/desk
    python cli.py report --matrix matrix.json --out-dir runs/desk

Every JSON output is validated against its schema in schemas/ and written
with a ``.manifest.json`` beside it. Exit codes: 0 success, 2 usage or
configuration error, 3 model-fit failure.
"""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Tuple

from tqdm import tqdm

from ar_trend import ArTrendSpec, load_model_file
from config_loader import CONFIG_KEYS, Config, load_config
from lfo_engine import (
    LfoAbortedError,
    LfoConfig,
    LfoConfigError,
    LfoResult,
    child_seed,
    fit_with_retry,
    in_sample_lpd,
    log_marginal_likelihood,
    psis_loo,
    run_lfo,
)
from model_api import (
    DataFormatError,
    FitFailureError,
    InsufficientHistoryError,
    NumericDomainError,
    SamplerConfig,
    TimeSeries,
    UnsupportedConfigurationError,
)
from psis import k_regime
from run_common import (
    EXIT_FIT_FAILURE,
    EXIT_OK,
    EXIT_USAGE,
    TOOL_VERSION,
    file_digest,
    write_json,
)
from simlab import (
    ExperimentMatrix,
    MatrixError,
    load_report,
    run_experiment,
    write_report_tables,
)


logger = logging.getLogger("lfocv")

LOG_FORMAT = "[%(asctime)s] %(levelname)s %(message)s"
LOG_DATE_FORMAT = "%H:%M:%S"

DEFAULT_SEED = 1

USAGE_ERRORS = (
    LfoConfigError,
    DataFormatError,
    MatrixError,
    InsufficientHistoryError,
    UnsupportedConfigurationError,
    FileNotFoundError,
    ValueError,
)
FIT_ERRORS = (FitFailureError, NumericDomainError, LfoAbortedError)


@dataclass
class RunManifest:
    """What produced an output file."""

    command: str
    config: Dict[str, Any]
    seed: int
    tool_version: str = TOOL_VERSION
    inputs: Dict[str, Optional[str]] = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def add_input(self, path: Optional[str]) -> None:
        if path:
            self.inputs[os.path.abspath(path)] = file_digest(path)

    def finish(self) -> Dict[str, Any]:
        self.finished = _now()
        return asdict(self)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def manifest_path(out_path: str) -> str:
    root, _ = os.path.splitext(out_path)
    return root + ".manifest.json"


def _progress_bar(total: int, label: str, quiet: bool):
    """A tqdm bar and a (done, total) callback that moves it."""
    bar = tqdm(total=total, desc=label, unit="step", disable=quiet, leave=False)

    def callback(done: int, _total: Optional[int]) -> None:
        bar.update(done - bar.n)

    return bar, callback


# ===== SHARED SETUP =====

def _load_inputs(args) -> Tuple[Config, TimeSeries, ArTrendSpec, SamplerConfig]:
    """Config, series, model and sampler settings for the analysis commands."""
    config = load_config(args.config)
    data = TimeSeries.from_csv(args.data)
    spec, model_sampler = (load_model_file(args.model) if args.model
                           else (ArTrendSpec(), None))
    sampler = model_sampler or config.sampler
    return config, data, spec, sampler


def _out_path(args, config: Config, default_name: str) -> str:
    if args.out:
        return args.out
    return os.path.join(config.output_dir, default_name)


def _write_with_manifest(out_path: str, document: Dict[str, Any], schema: str,
                         manifest: RunManifest) -> None:
    write_json(out_path, document, schema)
    write_json(manifest_path(out_path), manifest.finish(), "run_manifest")
    logger.info("Wrote %s", out_path)


def _print_lfo_summary(result: LfoResult) -> None:
    refits = len(result.refit_indices)
    print(f"mode:         {result.mode} ({result.measure})")
    print(f"total:        {result.total:.2f}")
    print(f"SE:           {result.se:.2f}")
    print(f"refits:       {refits} of {result.n_eval} predictions")
    if result.mode != "exact" and result.refit_cadence is not None:
        print(f"cadence:      one refit every {result.refit_cadence:.1f} observations")
    max_k = result.max_k
    if max_k is not None:
        print(f"max k:        {max_k:.2f} ({k_regime(max_k)})")


# ===== COMMANDS =====

def cmd_lfo(args) -> int:
    """Run exact, forward or backward LFO on a CSV series."""
    config, data, spec, sampler = _load_inputs(args)
    lfo_config = LfoConfig(M=args.M, L=args.L, tau=args.tau, mode=args.mode,
                           measure=args.measure,
                           psis_debug_path=args.psis_debug or config.psis_debug)
    lfo_config.validate(data.n)
    out_path = _out_path(args, config, "lfo_result.json")

    manifest = RunManifest("lfo", {"lfo": asdict(lfo_config), "model": spec.describe(),
                                   "sampler": sampler.to_dict()}, args.seed, started=_now())
    manifest.add_input(args.data)
    manifest.add_input(args.model)

    workers = args.workers or config.threads
    bar, callback = _progress_bar(len(lfo_config.evaluation_indices(data.n)), args.mode,
                                  args.quiet)
    try:
        result = run_lfo(spec, data, lfo_config, sampler, args.seed, callback, workers)
    except LfoAbortedError as e:
        _write_with_manifest(out_path, e.partial.to_dict(), "lfo_result", manifest)
        raise
    finally:
        bar.close()

    _write_with_manifest(out_path, result.to_dict(), "lfo_result", manifest)
    _print_lfo_summary(result)
    return EXIT_OK


def cmd_loo(args) -> int:
    """Run PSIS-LOO from one full-data fit."""
    config, data, spec, sampler = _load_inputs(args)
    out_path = _out_path(args, config, "loo_result.json")
    if not 0 <= args.L < data.n:
        raise LfoConfigError(f"--L must lie in [0, {data.n - 1}], got {args.L}")
    manifest = RunManifest("loo", {"model": spec.describe(), "sampler": sampler.to_dict(),
                                   "L": args.L},
                           args.seed, started=_now())
    manifest.add_input(args.data)
    manifest.add_input(args.model)

    posterior = fit_with_retry(spec, data, data.n, sampler, child_seed(args.seed, data.n))
    result = psis_loo(spec, data, sampler, args.seed, posterior=posterior,
                      psis_debug_path=args.psis_debug or config.psis_debug)
    document = result.to_dict()
    document["lpd"] = in_sample_lpd(spec, posterior, data)
    document["L"] = args.L
    document["total_after_L"] = result.total_after(args.L)
    _write_with_manifest(out_path, document, "loo_result", manifest)

    print(f"elpd_loo:     {result.total:.2f}")
    if args.L:
        print(f"elpd_loo j>{args.L}: {document['total_after_L']:.2f}")
    print(f"SE:           {result.se:.2f}")
    print(f"in-sample lpd:{document['lpd']:.2f}")
    print(f"k > {result.threshold}:      {len(result.flagged)} of {data.n} observations")
    return EXIT_OK


def cmd_marginal(args) -> int:
    """Log marginal likelihood as a sum of one-step-ahead predictive terms."""
    config, data, spec, sampler = _load_inputs(args)
    out_path = _out_path(args, config, "marginal_result.json")
    manifest = RunManifest("marginal", {"model": spec.describe(), "sampler": sampler.to_dict(),
                                        "approximate": args.approximate, "tau": args.tau},
                           args.seed, started=_now())
    manifest.add_input(args.data)
    manifest.add_input(args.model)

    bar, callback = _progress_bar(data.n, "marginal", args.quiet)
    try:
        marginal = log_marginal_likelihood(spec, data, sampler, args.seed,
                                           approximate=args.approximate, tau=args.tau,
                                           progress_callback=callback,
                                           max_workers=args.workers or config.threads)
    finally:
        bar.close()

    document = {
        "value": marginal.value,
        "mcse": marginal.mcse if math.isfinite(marginal.mcse) else None,
        "approximate": args.approximate,
        "lfo": marginal.lfo.to_dict(),
    }
    _write_with_manifest(out_path, document, "marginal_result", manifest)
    print(f"log p(y):     {marginal.value:.3f} (MCSE {marginal.mcse:.3f})")
    return EXIT_OK


def _load_matrix(path: str) -> ExperimentMatrix:
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            values = json.load(handle)
    except json.JSONDecodeError as e:
        raise MatrixError(f"{path} is not valid JSON: {e}") from e
    return ExperimentMatrix.from_dict(values)


def cmd_simulate(args) -> int:
    """Run (or resume) a simulation matrix, then write the report tables."""
    config = load_config(args.config)
    matrix = _load_matrix(args.matrix)
    out_dir = args.out_dir or config.output_dir
    manifest = RunManifest("simulate", matrix.to_dict(), args.seed, started=_now())
    manifest.add_input(args.matrix)

    bar, callback = _progress_bar(len(matrix.units()), "trials", args.quiet)
    try:
        report = run_experiment(matrix, None, args.seed, out_dir,
                                max_workers=args.workers or config.threads,
                                progress_callback=callback)
    finally:
        bar.close()

    paths = write_report_tables(report, out_dir)
    write_json(os.path.join(out_dir, "simulate.manifest.json"), manifest.finish(),
               "run_manifest")
    failed = sum(report.failed.values())
    print(f"units:        {len(matrix.units())} ({failed} failed)")
    for name, path in paths.items():
        print(f"{name + ':':<14}{path}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Rebuild the report tables from stored trial files."""
    config = load_config(args.config)
    matrix = _load_matrix(args.matrix)
    out_dir = args.out_dir or config.output_dir
    report = load_report(matrix, out_dir, args.seed)
    if not report.records:
        raise MatrixError(f"no trial results under {out_dir}")
    for name, path in write_report_tables(report, out_dir).items():
        print(f"{name + ':':<14}{path}")
    return EXIT_OK


def cmd_config(args) -> int:
    """Show a config.json value, or set it when a value is given."""
    config = load_config(args.config)
    if args.value is None:
        print(json.dumps(config.get(args.key)))
        return EXIT_OK
    try:
        value = json.loads(args.value)
    except json.JSONDecodeError:
        value = args.value
    config.update(args.key, value)
    logger.info("Set %s in %s", args.key, config.config_file)
    return EXIT_OK


# ===== ARGUMENTS =====

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config.json path (default: beside the app)")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: threads from config/LFOCV_THREADS)")


def _add_analysis(parser: argparse.ArgumentParser) -> None:
    _add_common(parser)
    parser.add_argument("data", help="CSV with header 't,y'")
    parser.add_argument("--model", help="model JSON {p, trend_degree, priors, sampler?}")
    parser.add_argument("--out", help="output JSON path")
    parser.add_argument("--psis-debug", help="append PSIS diagnostics as JSON lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfocv", description="Leave-future-out cross-validation for time-series models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true",
                           help="warnings only, no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    lfo = sub.add_parser("lfo", help="exact or PSIS-approximated LFO-CV")
    _add_analysis(lfo)
    lfo.add_argument("--M", type=int, default=1, help="prediction horizon")
    lfo.add_argument("--L", type=int, default=25, help="minimum history")
    lfo.add_argument("--tau", type=float, default=0.7, help="Pareto k refit threshold")
    lfo.add_argument("--mode", choices=("forward", "backward", "exact"), default="forward")
    lfo.add_argument("--measure", choices=("elpd", "rmse"), default="elpd")
    lfo.set_defaults(func=cmd_lfo)

    loo = sub.add_parser("loo", help="PSIS-LOO baseline")
    _add_analysis(loo)
    loo.add_argument("--L", type=int, default=0,
                     help="also sum observations L+1..N, as predicted by 1-step LFO")
    loo.set_defaults(func=cmd_loo)

    marginal = sub.add_parser("marginal", help="log marginal likelihood via LFO with L=0, M=1")
    _add_analysis(marginal)
    marginal.add_argument("--approximate", action="store_true",
                          help="forward PSIS instead of exact refits")
    marginal.add_argument("--tau", type=float, default=0.7)
    marginal.set_defaults(func=cmd_marginal)

    simulate = sub.add_parser("simulate", help="run a simulation matrix (resumable)")
    _add_common(simulate)
    simulate.add_argument("--matrix", required=True, help="experiment matrix JSON")
    simulate.add_argument("--out-dir", help="directory for trial files and tables")
    simulate.set_defaults(func=cmd_simulate)

    report = sub.add_parser("report", help="rebuild tables from stored trials")
    _add_common(report)
    report.add_argument("--matrix", required=True, help="experiment matrix JSON")
    report.add_argument("--out-dir", help="directory holding trials/")
    report.set_defaults(func=cmd_report)

    settings = sub.add_parser("config", help="show or set a config.json value")
    settings.add_argument("--config", help="config.json path (default: beside the app)")
    settings.add_argument("key", choices=CONFIG_KEYS)
    settings.add_argument("value", nargs="?", help="JSON value; plain text is stored as a string")
    settings.set_defaults(func=cmd_config)
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATE_FORMAT, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the command and map failures to exit codes."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        return args.func(args)
    except FIT_ERRORS as e:
        logger.error("Model fit failed: %s", e)
        return EXIT_FIT_FAILURE
    except USAGE_ERRORS as e:
        logger.error("%s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
