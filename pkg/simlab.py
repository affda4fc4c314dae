"""
Simulation study: compare approximate leave-future-out estimates to exact ones.

Series come from six generating models (constant, linear or quadratic trend,
each with or without AR(2) residuals); each is fitted with the model that
generated it. For every (kind, M, trial) unit the exact LFO and PSIS-LOO values
are computed once and the forward and backward approximations once per
threshold tau. Finished units are stored as JSON files so an interrupted
matrix resumes, and the report is a pure fold over those records.
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from ar_trend import ArTrendSpec, time_rescale
from lfo_engine import LfoConfig, LfoError, lfo_backward, lfo_exact, lfo_forward, psis_loo
from model_api import (
    ModelError,
    SamplerConfig,
    Seed,
    TimeSeries,
    as_seed_sequence,
)
from psis import PsisError
from run_common import ProgressCallback, ProgressReporter, validate_document
from trial_store import iter_trials, load_done, trial_path, write_trial


logger = logging.getLogger(__name__)

# Generating values of the full model.
TREND_COEFFICIENTS = (0.0, 17.0, 25.0)
AR_COEFFICIENTS = (0.5, 0.3)
DEFAULT_SIGMA_INNOV = 1.0

# Desk-scale defaults; the full-size design is available through ``full_scale``.
DESK_N = 100
DESK_TRIALS = 20
FULL_N = 200
FULL_TRIALS = 100
DEFAULT_L = 25
DEFAULT_TAUS = (0.5, 0.6, 0.7)
DEFAULT_MS = (1, 4)
DESK_SAMPLER = SamplerConfig(chains=4, warmup=500, draws=250)

QUANTILES = (0.05, 0.5, 0.95)
CSV_FLOAT_FORMAT = "%.10g"


class SimlabError(Exception):
    """Base exception for simulation experiments."""


class MatrixError(SimlabError):
    """Raised for an invalid experiment matrix."""


class KindSpec(NamedTuple):
    """A generating model: trend degree and whether residuals are AR(2)."""

    name: str
    trend_degree: int
    autoregressive: bool


KINDS: List[KindSpec] = [
    KindSpec("constant", 0, False),
    KindSpec("linear", 1, False),
    KindSpec("quadratic", 2, False),
    KindSpec("ar2-only", 0, True),
    KindSpec("ar2-linear", 1, True),
    KindSpec("ar2-quadratic", 2, True),
]
KIND_NAMES = [k.name for k in KINDS]
_KINDS_BY_NAME = {k.name: k for k in KINDS}


def kind_spec(name: str) -> KindSpec:
    try:
        return _KINDS_BY_NAME[name]
    except KeyError as e:
        raise MatrixError(f"unknown kind {name!r}; expected one of {KIND_NAMES}") from e


# ===== GENERATION =====

@dataclass(frozen=True)
class GenSpec:
    """Parameters of one generating model."""

    kind: str
    b: Tuple[float, float, float]
    phi: Tuple[float, float]
    sigma_innov: float = DEFAULT_SIGMA_INNOV
    N: int = DESK_N

    def __post_init__(self):
        spec = kind_spec(self.kind)
        if not self.sigma_innov > 0:
            raise MatrixError(f"sigma_innov must be positive, got {self.sigma_innov}")
        if self.N < 1:
            raise MatrixError(f"N must be at least 1, got {self.N}")
        if len(self.b) != 3 or len(self.phi) != 2:
            raise MatrixError("b needs three coefficients and phi two")
        if any(self.b[d] != 0 for d in range(spec.trend_degree + 1, 3)):
            raise MatrixError(f"kind {self.kind} has no trend terms above degree "
                              f"{spec.trend_degree}")
        if not spec.autoregressive and any(self.phi):
            raise MatrixError(f"kind {self.kind} has no AR terms")

    @classmethod
    def for_kind(cls, kind: str, N: int = DESK_N,
                 sigma_innov: float = DEFAULT_SIGMA_INNOV) -> "GenSpec":
        """The generating values used in the study, zeroed where the kind drops a term."""
        spec = kind_spec(kind)
        b = tuple(c if d <= spec.trend_degree else 0.0
                  for d, c in enumerate(TREND_COEFFICIENTS))
        phi = AR_COEFFICIENTS if spec.autoregressive else (0.0, 0.0)
        return cls(kind=kind, b=b, phi=phi, sigma_innov=sigma_innov, N=N)


def generate_series(gen: GenSpec, seed: Seed) -> TimeSeries:
    """
    Simulate y_i = b_0 + b_1 t + b_2 t^2 + eps_i at t = 1..N scaled to [0, 1].

    eps follows the AR(2) recursion on N(0, sigma_innov^2) innovations with
    zero pre-sample residuals.
    """
    rng = np.random.default_rng(as_seed_sequence(seed))
    innovations = rng.normal(0.0, gen.sigma_innov, size=gen.N)
    residuals = lfilter([1.0], [1.0, -gen.phi[0], -gen.phi[1]], innovations)
    t = np.arange(1, gen.N + 1, dtype=float)
    scaled = time_rescale(t)
    trend = gen.b[0] + gen.b[1] * scaled + gen.b[2] * scaled ** 2
    return TimeSeries(y=trend + residuals, t=t)


def model_for_kind(kind: str) -> ArTrendSpec:
    """The fitted model always matches the generating one."""
    spec = kind_spec(kind)
    return ArTrendSpec(p=2 if spec.autoregressive else 0, trend_degree=spec.trend_degree)


# ===== MATRIX =====

def validate_matrix(values: Dict) -> Optional[str]:
    """
    Check an experiment matrix before running it.

    Returns
    -------
    Optional[str]
        An error message, or None if the values are usable.
    """
    if not isinstance(values, dict):
        return "The matrix must be a JSON object."

    unknown = set(values) - set(ExperimentMatrix.__dataclass_fields__) - {"full_scale"}
    if unknown:
        return f"Unknown matrix keys: {', '.join(sorted(unknown))}"

    kinds = values.get("kinds", KIND_NAMES)
    if not kinds or not isinstance(kinds, list):
        return "kinds must be a non-empty list."
    bad = [k for k in kinds if k not in KIND_NAMES]
    if bad:
        return f"Unknown kinds: {', '.join(map(str, bad))}"

    for key in ("N", "L", "trials"):
        value = values.get(key)
        if value is not None and (not isinstance(value, int) or isinstance(value, bool)):
            return f"{key} must be an integer."
    if values.get("trials", 1) < 1:
        return "trials must be at least 1."

    taus = values.get("taus", list(DEFAULT_TAUS))
    if not taus or not all(isinstance(t, (int, float)) and 0 <= t <= 1 for t in taus):
        return "taus must be a non-empty list of numbers in [0, 1]."

    ms = values.get("Ms", list(DEFAULT_MS))
    if not ms or not all(isinstance(m, int) and m >= 1 for m in ms):
        return "Ms must be a non-empty list of positive integers."

    measures = values.get("measures", ["elpd"])
    if not measures or any(m not in ("elpd", "rmse") for m in measures):
        return "measures must be a non-empty subset of ['elpd', 'rmse']."
    if "elpd" not in measures:
        return "measures must include 'elpd'."

    sigma = values.get("sigma_innov", DEFAULT_SIGMA_INNOV)
    if not isinstance(sigma, (int, float)) or sigma <= 0:
        return "sigma_innov must be a positive number."

    n = values.get("N", FULL_N if values.get("full_scale") else DESK_N)
    L = values.get("L", DEFAULT_L)
    if L < 0 or L + max(ms) > n:
        return f"L + max(Ms) = {L + max(ms)} exceeds N = {n}."

    sampler = values.get("sampler")
    if sampler is not None:
        try:
            SamplerConfig.from_dict(sampler)
        except (TypeError, ValueError) as e:
            return f"Invalid sampler settings: {e}"

    return None


@dataclass(frozen=True)
class ExperimentMatrix:
    """Conditions of a simulation experiment."""

    kinds: Tuple[str, ...] = tuple(KIND_NAMES)
    taus: Tuple[float, ...] = DEFAULT_TAUS
    Ms: Tuple[int, ...] = DEFAULT_MS
    trials: int = DESK_TRIALS
    N: int = DESK_N
    L: int = DEFAULT_L
    measures: Tuple[str, ...] = ("elpd",)
    backward: bool = True
    loo: bool = True
    sigma_innov: float = DEFAULT_SIGMA_INNOV
    sampler: SamplerConfig = DESK_SAMPLER

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ExperimentMatrix":
        """
        Build from a matrix JSON object; ``full_scale`` switches the size defaults.

        Raises
        ------
        MatrixError
            If ``validate_matrix`` rejects the values.
        """
        error = validate_matrix(values)
        if error:
            raise MatrixError(error)
        values = dict(values)
        full_scale = values.pop("full_scale", False)
        defaults = {"N": FULL_N, "trials": FULL_TRIALS} if full_scale else {}
        for key in ("kinds", "taus", "Ms", "measures"):
            if key in values:
                values[key] = tuple(values[key])
        if "sampler" in values:
            values["sampler"] = SamplerConfig.from_dict(values["sampler"])
        return cls(**{**defaults, **values})

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["sampler"] = self.sampler.to_dict()
        for key in ("kinds", "taus", "Ms", "measures"):
            values[key] = list(values[key])
        return values

    def units(self) -> List[Tuple[str, int, int]]:
        """(kind, M, trial) work units in report order."""
        return [(kind, M, trial) for kind in self.kinds for M in self.Ms
                for trial in range(self.trials)]


# ===== TRIALS =====

@dataclass(frozen=True)
class TrialRecord:
    """Results of one trial at one threshold."""

    seed: Tuple[int, ...]
    kind: str
    M: int
    tau: float
    trial: int
    elpd_exact: Optional[float] = None
    elpd_approx_fwd: Optional[float] = None
    elpd_approx_bwd: Optional[float] = None
    elpd_loo: Optional[float] = None  # observations L+1..N only
    refit_prop_fwd: Optional[float] = None
    refit_prop_bwd: Optional[float] = None
    rmse_exact: Optional[float] = None
    rmse_approx_fwd: Optional[float] = None
    rmse_approx_bwd: Optional[float] = None
    failed: bool = False

    @property
    def elpd_diff_fwd(self) -> Optional[float]:
        return _diff(self.elpd_approx_fwd, self.elpd_exact)

    @property
    def elpd_diff_bwd(self) -> Optional[float]:
        return _diff(self.elpd_approx_bwd, self.elpd_exact)

    @property
    def rmse_diff_fwd(self) -> Optional[float]:
        return _diff(self.rmse_approx_fwd, self.rmse_exact)

    @property
    def rmse_diff_bwd(self) -> Optional[float]:
        return _diff(self.rmse_approx_bwd, self.rmse_exact)

    @property
    def loo_minus_fwd(self) -> Optional[float]:
        return _diff(self.elpd_loo, self.elpd_approx_fwd)


def _diff(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    return a - b


def unit_seeds(master_seed: int, kind: str, M: int, trial: int) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """
    (data seed, analysis seed) of a unit.

    The data seed does not depend on M, so both horizons see the same series.
    """
    kind_index = KIND_NAMES.index(kind)
    data_seed = (int(master_seed), kind_index, trial)
    return data_seed, data_seed + (M,)


def run_trial(matrix: ExperimentMatrix, kind: str, M: int, trial: int,
              master_seed: int) -> Dict[str, Any]:
    """
    Run one (kind, M, trial) unit and return its JSON-ready record.

    Model and engine failures are recorded in the record, not raised.
    """
    data_seed, seed = unit_seeds(master_seed, kind, M, trial)
    record: Dict[str, Any] = {
        "kind": kind, "M": M, "trial": trial, "seed": list(seed),
        "N": matrix.N, "L": matrix.L, "sigma_innov": matrix.sigma_innov,
        "status": "ok", "error": None, "results": [],
    }
    try:
        data = generate_series(GenSpec.for_kind(kind, matrix.N, matrix.sigma_innov), data_seed)
        spec = model_for_kind(kind)
        sampler = matrix.sampler

        exact = {}
        for measure in matrix.measures:
            config = LfoConfig(M=M, L=matrix.L, mode="exact", measure=measure)
            exact[measure] = lfo_exact(spec, data, config, sampler, seed).total
        elpd_loo = None
        if matrix.loo and M == 1:
            elpd_loo = psis_loo(spec, data, sampler, seed).total_after(matrix.L)

        for tau in matrix.taus:
            row: Dict[str, Any] = {
                "tau": tau, "elpd_exact": exact["elpd"], "elpd_loo": elpd_loo,
                "rmse_exact": exact.get("rmse"),
            }
            for measure in matrix.measures:
                config = LfoConfig(M=M, L=matrix.L, tau=tau, measure=measure)
                fwd = lfo_forward(spec, data, config, sampler, seed)
                row[f"{measure}_approx_fwd"] = fwd.total
                if measure == "elpd":
                    row["refit_prop_fwd"] = fwd.refit_proportion
                if matrix.backward:
                    bwd = lfo_backward(spec, data, replace(config, mode="backward"),
                                       sampler, seed)
                    row[f"{measure}_approx_bwd"] = bwd.total
                    if measure == "elpd":
                        row["refit_prop_bwd"] = bwd.refit_proportion
            record["results"].append(row)
    except (ModelError, LfoError, PsisError) as e:
        logger.warning("Trial %s M=%d #%d failed: %s", kind, M, trial, e)
        record.update(status="failed", error=str(e), results=[])
    return record


def _records_from(trial: Dict[str, Any]) -> List[TrialRecord]:
    """Expand a stored unit into one TrialRecord per tau."""
    seed = tuple(trial["seed"])
    if trial.get("status") == "failed":
        return [TrialRecord(seed=seed, kind=trial["kind"], M=trial["M"], tau=math.nan,
                            trial=trial["trial"], failed=True)]
    fields = set(TrialRecord.__dataclass_fields__)
    return [TrialRecord(seed=seed, kind=trial["kind"], M=trial["M"], trial=trial["trial"],
                        **{k: v for k, v in row.items() if k in fields})
            for row in trial["results"]]


# ===== REPORT =====

class CellKey(NamedTuple):
    kind: str
    M: int
    tau: float


@dataclass(frozen=True)
class ExperimentReport:
    """Per-trial records and the aggregates folded from them."""

    matrix: ExperimentMatrix
    records: Tuple[TrialRecord, ...]
    master_seed: int = 0
    failed: Dict[Tuple[str, int], int] = field(default_factory=dict)

    def cells(self) -> Dict[CellKey, List[TrialRecord]]:
        """Successful records grouped by (kind, M, tau) in matrix order."""
        grouped: Dict[CellKey, List[TrialRecord]] = {}
        for kind in self.matrix.kinds:
            for M in self.matrix.Ms:
                for tau in self.matrix.taus:
                    rows = [r for r in self.records if not r.failed and r.kind == kind
                            and r.M == M and r.tau == tau]
                    if rows:
                        grouped[CellKey(kind, M, tau)] = rows
        return grouped

    def aggregates(self) -> pd.DataFrame:
        """Mean, SD, SE of the mean and quantiles per cell and estimator."""
        rows = []
        for key, records in self.cells().items():
            for estimator, values in _estimators(records).items():
                if not values:
                    continue
                arr = np.asarray(values, dtype=float)
                sd = float(arr.std(ddof=1)) if arr.size > 1 else math.nan
                row = {
                    "kind": key.kind, "M": key.M, "tau": key.tau,
                    "estimator": estimator, "n": int(arr.size),
                    "failed": self.failed.get((key.kind, key.M), 0),
                    "mean": float(arr.mean()), "sd": sd,
                    "se_mean": sd / math.sqrt(arr.size) if arr.size > 1 else math.nan,
                }
                for q in QUANTILES:
                    row[f"q{int(q * 100):02d}"] = float(np.quantile(arr, q))
                rows.append(row)
        return pd.DataFrame(rows, columns=AGGREGATE_COLUMNS)


AGGREGATE_COLUMNS = ["kind", "M", "tau", "estimator", "n", "failed", "mean", "sd",
                     "se_mean"] + [f"q{int(q * 100):02d}" for q in QUANTILES]

# estimator name -> TrialRecord attribute
ESTIMATORS = {
    "elpd_fwd_diff": "elpd_diff_fwd",
    "elpd_bwd_diff": "elpd_diff_bwd",
    "rmse_fwd_diff": "rmse_diff_fwd",
    "rmse_bwd_diff": "rmse_diff_bwd",
    "loo_minus_fwd": "loo_minus_fwd",
    "refit_prop_fwd": "refit_prop_fwd",
    "refit_prop_bwd": "refit_prop_bwd",
}


def _estimators(records: Sequence[TrialRecord]) -> Dict[str, List[float]]:
    values: Dict[str, List[float]] = {}
    for name, attr in ESTIMATORS.items():
        values[name] = [getattr(r, attr) for r in records if getattr(r, attr) is not None]
    return values


def build_report(matrix: ExperimentMatrix, trials: Iterable[Dict[str, Any]],
                 master_seed: int = 0) -> ExperimentReport:
    """Fold stored unit records into a report."""
    records: List[TrialRecord] = []
    failed: Dict[Tuple[str, int], int] = {}
    order = {unit: n for n, unit in enumerate(matrix.units())}
    for trial in sorted(trials, key=lambda t: order.get((t["kind"], t["M"], t["trial"]), -1)):
        if (trial["kind"], trial["M"], trial["trial"]) not in order:
            continue
        expanded = _records_from(trial)
        if expanded and expanded[0].failed:
            failed[(trial["kind"], trial["M"])] = failed.get((trial["kind"], trial["M"]), 0) + 1
        records.extend(expanded)
    return ExperimentReport(matrix, tuple(records), master_seed, failed)


def run_experiment(matrix: ExperimentMatrix, sampler: Optional[SamplerConfig],
                   master_seed: int, out_dir: str, max_workers: int = 1,
                   progress_callback: Optional[ProgressCallback] = None) -> ExperimentReport:
    """
    Run every (kind, M, trial) unit not already stored under ``out_dir``.

    Parameters
    ----------
    matrix : ExperimentMatrix
    sampler : SamplerConfig, optional
        Overrides the matrix's sampler settings.
    master_seed : int
    out_dir : str
        Unit records go to ``out_dir/trials``.
    max_workers : int
        Worker processes; the report does not depend on the count.
    progress_callback : Callable[[int, Optional[int]], None], optional

    Returns
    -------
    ExperimentReport
    """
    if sampler is not None:
        matrix = replace(matrix, sampler=sampler)
    units = matrix.units()
    progress = ProgressReporter(len(units), progress_callback)

    stored: List[Dict[str, Any]] = []
    pending = []
    for kind, M, trial in units:
        record, reason = load_done(trial_path(out_dir, kind, M, trial))
        if record is not None and record.get("seed") == list(unit_seeds(master_seed, kind, M, trial)[1]):
            stored.append(record)
            progress.advance()
        else:
            if record is not None:
                reason = "seed changed"
            logger.debug("Running %s M=%d #%d (%s)", kind, M, trial, reason)
            pending.append((kind, M, trial))
    if stored:
        logger.info("Resuming: %d of %d units already stored", len(stored), len(units))

    def finish(record: Dict[str, Any]) -> None:
        validate_document(record, "trial_result")
        write_trial(trial_path(out_dir, record["kind"], record["M"], record["trial"]), record)
        stored.append(record)
        progress.advance()

    if max_workers <= 1 or len(pending) < 2:
        for kind, M, trial in pending:
            finish(run_trial(matrix, kind, M, trial, master_seed))
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            futures = [executor.submit(run_trial, matrix, kind, M, trial, master_seed)
                       for kind, M, trial in pending]
            for future in as_completed(futures):
                finish(future.result())

    report = build_report(matrix, stored, master_seed)
    n_failed = sum(report.failed.values())
    if n_failed:
        logger.warning("%d of %d units failed and are excluded from aggregates",
                       n_failed, len(units))
    return report


def load_report(matrix: ExperimentMatrix, out_dir: str, master_seed: int = 0) -> ExperimentReport:
    """Rebuild a report from the unit files under ``out_dir``."""
    return build_report(matrix, iter_trials(out_dir), master_seed)


# ===== TABLES =====

class RefitRow(NamedTuple):
    mode: str
    M: int
    tau: float
    kind: str
    mean_refit_prop: float


def summarize_refits(report: ExperimentReport) -> List[RefitRow]:
    """
    Mean refit proportion per (mode, M, tau, kind); cells without data are omitted.

    Raises
    ------
    SimlabError
        If the report holds no records.
    """
    if not report.records:
        raise SimlabError("report has no trial records")
    rows = []
    cells = report.cells()
    for mode, attr in (("forward", "refit_prop_fwd"), ("backward", "refit_prop_bwd")):
        for key, records in cells.items():
            values = [getattr(r, attr) for r in records if getattr(r, attr) is not None]
            if values:
                rows.append(RefitRow(mode, key.M, key.tau, key.kind, float(np.mean(values))))
    return sorted(rows, key=lambda r: (r.mode != "forward", r.M, r.tau,
                                       report.matrix.kinds.index(r.kind)))


def refit_table(report: ExperimentReport) -> pd.DataFrame:
    """Refit proportions with one column per kind and one row per (mode, M, tau)."""
    frame = pd.DataFrame(summarize_refits(report), columns=RefitRow._fields)
    if frame.empty:
        return pd.DataFrame(columns=["mode", "M", "tau"])
    table = frame.pivot_table(index=["mode", "M", "tau"], columns="kind",
                              values="mean_refit_prop", sort=False)
    kinds = [k for k in report.matrix.kinds if k in table.columns]
    return table[kinds].reset_index()


def histogram_frame(report: ExperimentReport) -> pd.DataFrame:
    """Long table (value, kind, tau, M, estimator) of per-trial differences."""
    rows = []
    for key, records in report.cells().items():
        for estimator, values in _estimators(records).items():
            if estimator.startswith("refit"):
                continue
            rows.extend({"value": v, "kind": key.kind, "tau": key.tau, "M": key.M,
                         "estimator": estimator} for v in values)
    return pd.DataFrame(rows, columns=["value", "kind", "tau", "M", "estimator"])


def write_report_tables(report: ExperimentReport, out_dir: str) -> Dict[str, str]:
    """Write refits.csv, histogram.csv and aggregates.csv; return their paths."""
    paths = {
        "refits": os.path.join(out_dir, "refits.csv"),
        "histogram": os.path.join(out_dir, "histogram.csv"),
        "aggregates": os.path.join(out_dir, "aggregates.csv"),
    }
    os.makedirs(out_dir, exist_ok=True)
    refit_table(report).to_csv(paths["refits"], index=False, float_format=CSV_FLOAT_FORMAT)
    histogram_frame(report).to_csv(paths["histogram"], index=False,
                                   float_format=CSV_FLOAT_FORMAT)
    report.aggregates().to_csv(paths["aggregates"], index=False,
                               float_format=CSV_FLOAT_FORMAT)
    return paths
