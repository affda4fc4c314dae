"""
Leave-future-out cross-validation of M-step-ahead predictions.

Exact LFO refits the model at every prediction index. The approximate forward
and backward variants reuse the most recent fit through Pareto smoothed
importance sampling and refit only when the Pareto k diagnostic exceeds the
threshold tau. PSIS-LOO, the in-sample LPD and the sequential marginal
likelihood share the same term functions.

Prediction index i means "predict y_{i+1:i+M} from y_{1:i}". Every per-index
fit is seeded from (master seed, i, 0), so all three modes draw the same
posterior at a shared refit index.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from model_api import (
    FitFailureError,
    ModelSpec,
    PosteriorDraws,
    SamplerConfig,
    Seed,
    TimeSeries,
    UnsupportedConfigurationError,
    as_seed_sequence,
    batch_means_se,
    fit_prefix,
    log_lik_matrix,
)
from psis import PsisError, PsisResult, k_regime, pareto_smooth
from run_common import (
    FIT_MAX_RETRIES,
    WARMUP_RETRY_FACTOR,
    ProgressCallback,
    ProgressReporter,
)


logger = logging.getLogger(__name__)

MODES = ("forward", "backward", "exact")
MEASURES = ("elpd", "rmse")

# Seed streams under each prediction index.
FIT_STREAM = 0
PREDICT_STREAM = 1

# PSIS-LOO observations above this k are flagged.
LOO_K_THRESHOLD = 0.7


class LfoError(Exception):
    """Base exception for cross-validation runs."""


class LfoConfigError(LfoError):
    """Raised for settings that do not fit the data."""


class ContractViolationError(LfoError):
    """Raised when a term function is called outside its preconditions."""


class LfoAbortedError(LfoError):
    """Raised when a refit fails for good; carries the results so far."""

    def __init__(self, message: str, partial: "LfoResult"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class LfoConfig:
    """Horizon M, minimum history L, refit threshold tau, mode and measure."""

    M: int = 1
    L: int = 0
    tau: float = 0.7
    mode: str = "forward"
    measure: str = "elpd"
    psis_debug_path: Optional[str] = None

    def validate(self, n: int) -> None:
        """
        Check the settings against a series of length ``n``.

        Raises
        ------
        LfoConfigError
            If the evaluation set {L..N-M} would be empty or a field is out of
            range.
        """
        if self.M < 1:
            raise LfoConfigError(f"M must be at least 1, got {self.M}")
        if self.L < 0:
            raise LfoConfigError(f"L must be non-negative, got {self.L}")
        if self.L + self.M > n:
            raise LfoConfigError(
                f"L + M = {self.L + self.M} exceeds the series length {n}"
            )
        if not 0 <= self.tau <= 1:
            raise LfoConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.mode not in MODES:
            raise LfoConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.measure not in MEASURES:
            raise LfoConfigError(f"measure must be one of {MEASURES}, got {self.measure!r}")

    def evaluation_indices(self, n: int) -> range:
        return range(self.L, n - self.M + 1)


def _json_float(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


@dataclass(frozen=True)
class LfoResult:
    """
    Pointwise contributions of one LFO run, ordered by ascending index.

    ``k_values`` holds None at refit points; ``refit_flags`` marks the indices
    whose value came from a fresh fit.
    """

    mode: str
    measure: str
    M: int
    L: int
    tau: float
    indices: Tuple[int, ...]
    pointwise: np.ndarray
    k_values: Tuple[Optional[float], ...]
    refit_flags: Tuple[bool, ...]
    mcse: np.ndarray = field(default_factory=lambda: np.zeros(0))
    partial: bool = False

    @property
    def total(self) -> float:
        return float(np.sum(self.pointwise))

    @property
    def n_eval(self) -> int:
        return len(self.indices)

    @property
    def refit_indices(self) -> List[int]:
        return [i for i, refit in zip(self.indices, self.refit_flags) if refit]

    @property
    def refit_proportion(self) -> float:
        if not self.indices:
            return math.nan
        return len(self.refit_indices) / len(self.indices)

    @property
    def refit_cadence(self) -> Optional[float]:
        """Evaluated indices per refit, or None without refits."""
        refits = len(self.refit_indices)
        return self.n_eval / refits if refits else None

    @property
    def se(self) -> float:
        return elpd_standard_error(self.pointwise, self.M)

    @property
    def total_mcse(self) -> float:
        """Monte-Carlo error of the total, terms combined in quadrature."""
        if self.mcse.size == 0:
            return math.nan
        return float(math.sqrt(np.sum(np.square(self.mcse))))

    @property
    def max_k(self) -> Optional[float]:
        finite = [k for k in self.k_values if k is not None and math.isfinite(k)]
        return max(finite) if finite else None

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready document matching schemas/lfo_result.schema.json."""
        mcse = self.mcse if self.mcse.size == len(self.indices) \
            else np.full(len(self.indices), math.nan)
        return {
            "mode": self.mode,
            "measure": self.measure,
            "M": self.M,
            "L": self.L,
            "tau": self.tau,
            "total": self.total,
            "se": _json_float(self.se),
            "refit_indices": self.refit_indices,
            "refit_proportion": _json_float(self.refit_proportion),
            "partial": self.partial,
            "pointwise": [
                {
                    "i": int(i),
                    "value": float(value),
                    "k": _json_float(k),
                    "refit": bool(refit),
                    "mcse": _json_float(float(error)),
                }
                for i, value, k, refit, error in zip(
                    self.indices, self.pointwise, self.k_values, self.refit_flags, mcse
                )
            ],
        }


class _ResultBuilder:
    """Collects per-index records in loop order."""

    def __init__(self, config: LfoConfig, mode: str):
        self.config = config
        self.mode = mode
        self.records: Dict[int, Tuple[float, Optional[float], bool, float]] = {}

    def add(self, i: int, value: float, k: Optional[float], refit: bool,
            mcse: float) -> None:
        self.records[i] = (value, k, refit, mcse)

    def build(self, partial: bool = False) -> LfoResult:
        indices = tuple(sorted(self.records))
        rows = [self.records[i] for i in indices]
        return LfoResult(
            mode=self.mode,
            measure=self.config.measure,
            M=self.config.M,
            L=self.config.L,
            tau=self.config.tau,
            indices=indices,
            pointwise=np.array([r[0] for r in rows], dtype=float),
            k_values=tuple(r[1] for r in rows),
            refit_flags=tuple(r[2] for r in rows),
            mcse=np.array([r[3] for r in rows], dtype=float),
            partial=partial,
        )


# ===== SEEDS AND FITS =====

def child_seed(master: Seed, i: int, stream: int = FIT_STREAM) -> Tuple[int, ...]:
    """Seed tuple for index ``i`` and ``stream`` under a master seed."""
    base = tuple(master) if isinstance(master, (tuple, list)) else (int(master),)
    return base + (int(i), int(stream))


def fit_with_retry(spec: ModelSpec, data: TimeSeries, i: int, sampler: SamplerConfig,
                    seed: Seed) -> PosteriorDraws:
    """Fit a prefix, retrying with a longer warmup after a sampler failure."""
    config = sampler
    for attempt in range(FIT_MAX_RETRIES + 1):
        try:
            return fit_prefix(spec, data, i, config, seed)
        except FitFailureError as e:
            if attempt == FIT_MAX_RETRIES:
                raise
            config = config.with_warmup(max(config.warmup, 1) * WARMUP_RETRY_FACTOR)
            logger.warning("Fit at prefix %d failed (%s); retrying with warmup %d",
                           i, e, config.warmup)
    raise AssertionError("unreachable")


# ===== TERMS =====

def log_weighted_mean_exp(values: np.ndarray, log_weights: Optional[np.ndarray] = None) -> float:
    """log(sum_s w_s exp(v_s) / sum_s w_s), uniform weights when none are given."""
    values = np.asarray(values, dtype=float)
    if log_weights is None:
        return float(logsumexp(values) - math.log(values.size))
    log_weights = np.asarray(log_weights, dtype=float)
    return float(logsumexp(values + log_weights) - logsumexp(log_weights))


def _ratio_log_mcse(log_values: np.ndarray, log_weights: Optional[np.ndarray] = None) -> float:
    """
    Monte-Carlo error of log(weighted mean of exp(log_values)).

    Batch means over the draw order, linearized through the ratio estimator.
    """
    values = np.exp(log_values - np.max(log_values))
    if log_weights is None:
        weights = np.ones_like(values)
    else:
        weights = np.exp(log_weights - np.max(log_weights))
    weights = weights / weights.mean()
    estimate = float(np.sum(weights * values) / np.sum(weights))
    if estimate <= 0:
        return math.nan
    return batch_means_se(weights * (values - estimate)) / estimate


def _require_prefix(posterior: PosteriorDraws, i: int) -> None:
    if posterior.fitted_prefix_len != i:
        raise ContractViolationError(
            f"draws are fitted to prefix {posterior.fitted_prefix_len}, expected {i}"
        )


def _require_horizon(data: TimeSeries, i: int, horizon: int) -> None:
    if horizon < 1 or i < 0 or i + horizon > data.n:
        raise ContractViolationError(
            f"prediction of y[{i + 1}..{i + horizon}] is outside the series of length {data.n}"
        )


def _predictive_log_lik(posterior: PosteriorDraws, spec: ModelSpec, data: TimeSeries,
                        i: int, horizon: int) -> np.ndarray:
    """Per-draw log p(y_{i+1:i+M} | y_{1:i}, theta)."""
    _require_horizon(data, i, horizon)
    return log_lik_matrix(spec, posterior, data, i + 1, i + horizon, i=i).sum(axis=1)


def msap_elpd_term_exact(posterior: PosteriorDraws, spec: ModelSpec, data: TimeSeries,
                         i: int, M: int) -> float:
    """
    log of the draw average of p(y_{i+1:i+M} | y_{1:i}, theta) from a fit to y_{1:i}.

    Raises
    ------
    ContractViolationError
        If the draws are not fitted to prefix i or the horizon runs past N.
    NumericDomainError
        If any factor is not finite.
    """
    _require_prefix(posterior, i)
    return log_weighted_mean_exp(_predictive_log_lik(posterior, spec, data, i, M))


def forward_log_ratios(posterior: PosteriorDraws, spec: ModelSpec, data: TimeSeries,
                       i: int) -> np.ndarray:
    """
    Log importance ratios from p(theta | y_{1:i*}) to p(theta | y_{1:i}), i > i*.

    Per draw: sum_{j=i*+1..i} log p(y_j | y_{1:j-1}, theta).
    """
    i_star = posterior.fitted_prefix_len
    if i <= i_star or i > data.n:
        raise ContractViolationError(
            f"forward ratios need i* < i <= N; got i*={i_star}, i={i}"
        )
    return log_lik_matrix(spec, posterior, data, i_star + 1, i, i=i).sum(axis=1)


def backward_log_ratios(posterior: PosteriorDraws, spec: ModelSpec, data: TimeSeries,
                        i: int) -> np.ndarray:
    """
    Log importance ratios from p(theta | y_{1:i*}) to p(theta | y_{1:i}), i < i*.

    Per draw: -sum_{j=i+1..i*} log p(y_j | y_{1:j-1}, theta).
    """
    i_star = posterior.fitted_prefix_len
    if i >= i_star or i < 0:
        raise ContractViolationError(
            f"backward ratios need 0 <= i < i*; got i*={i_star}, i={i}"
        )
    return -log_lik_matrix(spec, posterior, data, i + 1, i_star, i=i).sum(axis=1)


def msap_elpd_term_psis(posterior: PosteriorDraws, spec: ModelSpec, data: TimeSeries,
                        i: int, M: int, psis: PsisResult) -> float:
    """Self-normalized PSIS estimate of log p(y_{i+1:i+M} | y_{1:i})."""
    log_lik = _predictive_log_lik(posterior, spec, data, i, M)
    if psis.log_weights.size != log_lik.size:
        raise ContractViolationError(
            f"{psis.log_weights.size} weights for {log_lik.size} draws"
        )
    return log_weighted_mean_exp(log_lik, psis.log_weights)


def rmse_term(predictions, y_obs, weights=None) -> float:
    """
    Weighted mean squared prediction error summed over the horizon.

    Per response m: sum_s w_s (yhat_m^s - y_m)^2 / sum_s w_s, then summed over
    m = 1..M. No square root is taken.

    Parameters
    ----------
    predictions : array_like
        S x M posterior predictive draws.
    y_obs : array_like
        The M observed values.
    weights : array_like, optional
        S non-negative weights; uniform when omitted.

    Raises
    ------
    ContractViolationError
        On shape mismatches or non-finite predictions.
    """
    predictions = np.asarray(predictions, dtype=float)
    y_obs = np.atleast_1d(np.asarray(y_obs, dtype=float))
    if predictions.ndim == 1:
        predictions = predictions[:, None]
    if predictions.shape[1] != y_obs.size:
        raise ContractViolationError(
            f"predictions have horizon {predictions.shape[1]}, observations {y_obs.size}"
        )
    if not np.all(np.isfinite(predictions)):
        raise ContractViolationError("predictions must be finite")
    if weights is None:
        weights = np.ones(predictions.shape[0])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (predictions.shape[0],):
        raise ContractViolationError(
            f"{weights.size} weights for {predictions.shape[0]} predictions"
        )
    squared = (predictions - y_obs[None, :]) ** 2
    return float(np.sum(weights @ squared) / np.sum(weights))


def _rmse_mcse(predictions: np.ndarray, y_obs: np.ndarray,
               weights: Optional[np.ndarray] = None) -> float:
    squared = np.sum((predictions - y_obs[None, :]) ** 2, axis=1)
    weights = np.ones_like(squared) if weights is None else weights / np.mean(weights)
    estimate = float(np.sum(weights * squared) / np.sum(weights))
    return batch_means_se(weights * (squared - estimate))


def elpd_standard_error(pointwise, M: int = 1) -> float:
    """
    Standard error of the summed pointwise values.

    For M = 1: sd(pointwise) * sqrt(n). For M > 1 the SE is computed on every
    Mth point starting at the first, then scaled by n / n_sub to the full sum.
    Returns NaN when fewer than two points remain.
    """
    pointwise = np.asarray(pointwise, dtype=float).ravel()
    subsequence = pointwise[::max(int(M), 1)]
    if subsequence.size < 2:
        logger.warning("Standard error undefined: %d usable points", subsequence.size)
        return math.nan
    se_sub = float(np.std(subsequence, ddof=1) * math.sqrt(subsequence.size))
    return se_sub * pointwise.size / subsequence.size


# ===== STEP EVALUATION =====

def _exact_step(spec: ModelSpec, data: TimeSeries, posterior: PosteriorDraws,
                config: LfoConfig, seed: Seed, i: int) -> Tuple[float, float]:
    """Value and MCSE at a refit index."""
    if config.measure == "rmse":
        predictions, y_obs = _predictions(spec, data, posterior, config, seed, i)
        return rmse_term(predictions, y_obs), _rmse_mcse(predictions, y_obs)
    log_lik = _predictive_log_lik(posterior, spec, data, i, config.M)
    return log_weighted_mean_exp(log_lik), _ratio_log_mcse(log_lik)


def _psis_step(spec: ModelSpec, data: TimeSeries, posterior: PosteriorDraws,
               config: LfoConfig, seed: Seed, i: int, psis: PsisResult) -> Tuple[float, float]:
    """Value and MCSE at an importance-sampled index."""
    if config.measure == "rmse":
        predictions, y_obs = _predictions(spec, data, posterior, config, seed, i)
        weights = psis.normalized_weights()
        return (rmse_term(predictions, y_obs, weights),
                _rmse_mcse(predictions, y_obs, weights))
    log_lik = _predictive_log_lik(posterior, spec, data, i, config.M)
    return (log_weighted_mean_exp(log_lik, psis.log_weights),
            _ratio_log_mcse(log_lik, psis.log_weights))


def _predictions(spec: ModelSpec, data: TimeSeries, posterior: PosteriorDraws,
                 config: LfoConfig, seed: Seed, i: int) -> Tuple[np.ndarray, np.ndarray]:
    _require_horizon(data, i, config.M)
    rng = np.random.default_rng(as_seed_sequence(child_seed(seed, i, PREDICT_STREAM)))
    predictions = spec.predictive_paths(posterior.draws, data, i, config.M, rng)
    return predictions, data.y[i:i + config.M]


def _smooth(log_ratios: np.ndarray, config: LfoConfig, i: int) -> Optional[PsisResult]:
    """Pareto smooth; None when the tail cannot be fitted and a refit is due."""
    try:
        return pareto_smooth(log_ratios, debug_path=config.psis_debug_path)
    except PsisError as e:
        logger.warning("Pareto smoothing failed at i=%d (%s); refitting", i, e)
        return None


# ===== RUNNERS =====

def lfo_forward(spec: ModelSpec, data: TimeSeries, config: LfoConfig,
                sampler: SamplerConfig, seed: Seed,
                progress_callback: Optional[ProgressCallback] = None) -> LfoResult:
    """
    Forward PSIS-LFO: fit at L, then walk i = L+1..N-M.

    At each step the ratios accumulated since the last refit i* are smoothed;
    if k > tau the model is refit to y_{1:i} and the exact term is used,
    otherwise the PSIS term. tau = 0 refits at every index.

    Raises
    ------
    LfoConfigError
        If the config does not fit the data.
    LfoAbortedError
        If a refit fails after its retry; ``partial`` holds the results so far.
    """
    config.validate(data.n)
    builder = _ResultBuilder(config, "forward")
    indices = config.evaluation_indices(data.n)
    progress = ProgressReporter(len(indices), progress_callback)

    posterior = None
    try:
        for i in indices:
            psis = None
            if posterior is not None and config.tau > 0:
                psis = _smooth(forward_log_ratios(posterior, spec, data, i), config, i)
            if psis is None or psis.k_hat > config.tau:
                if psis is not None:
                    logger.info("Refit at i=%d (k=%.2f)", i, psis.k_hat)
                posterior = fit_with_retry(spec, data, i, sampler, child_seed(seed, i))
                value, mcse = _exact_step(spec, data, posterior, config, seed, i)
                builder.add(i, value, None, True, mcse)
            else:
                value, mcse = _psis_step(spec, data, posterior, config, seed, i, psis)
                builder.add(i, value, psis.k_hat, False, mcse)
            progress.advance()
    except FitFailureError as e:
        logger.error("Forward LFO aborted: %s", e)
        raise LfoAbortedError(str(e), builder.build(partial=True)) from e

    return builder.build()


def lfo_backward(spec: ModelSpec, data: TimeSeries, config: LfoConfig,
                 sampler: SamplerConfig, seed: Seed,
                 progress_callback: Optional[ProgressCallback] = None) -> LfoResult:
    """
    Backward PSIS-LFO: fit to all N observations, then walk i = N-M down to L.

    The initial full-data fit is not an evaluation index and does not count
    as a refit.
    """
    config.validate(data.n)
    builder = _ResultBuilder(config, "backward")
    indices = config.evaluation_indices(data.n)
    progress = ProgressReporter(len(indices), progress_callback)

    try:
        posterior = None
        if config.tau > 0:
            posterior = fit_with_retry(spec, data, data.n, sampler,
                                        child_seed(seed, data.n))
        for i in reversed(indices):
            psis = None
            if posterior is not None and config.tau > 0:
                psis = _smooth(backward_log_ratios(posterior, spec, data, i), config, i)
            if psis is None or psis.k_hat > config.tau:
                if psis is not None:
                    logger.info("Refit at i=%d (k=%.2f)", i, psis.k_hat)
                posterior = fit_with_retry(spec, data, i, sampler, child_seed(seed, i))
                value, mcse = _exact_step(spec, data, posterior, config, seed, i)
                builder.add(i, value, None, True, mcse)
            else:
                value, mcse = _psis_step(spec, data, posterior, config, seed, i, psis)
                builder.add(i, value, psis.k_hat, False, mcse)
            progress.advance()
    except FitFailureError as e:
        logger.error("Backward LFO aborted: %s", e)
        raise LfoAbortedError(str(e), builder.build(partial=True)) from e

    return builder.build()


def _exact_index(spec: ModelSpec, data: TimeSeries, config: LfoConfig,
                 sampler: SamplerConfig, seed: Seed, i: int) -> Tuple[int, float, float]:
    posterior = fit_with_retry(spec, data, i, sampler, child_seed(seed, i))
    value, mcse = _exact_step(spec, data, posterior, config, seed, i)
    return i, value, mcse


def lfo_exact(spec: ModelSpec, data: TimeSeries, config: LfoConfig,
              sampler: SamplerConfig, seed: Seed,
              progress_callback: Optional[ProgressCallback] = None,
              max_workers: int = 1) -> LfoResult:
    """
    Exact LFO: refit at every i in L..N-M.

    With ``max_workers`` > 1 the indices are fitted in a process pool; the
    result does not depend on the worker count.
    """
    config.validate(data.n)
    builder = _ResultBuilder(config, "exact")
    indices = config.evaluation_indices(data.n)
    progress = ProgressReporter(len(indices), progress_callback)

    try:
        if max_workers <= 1 or len(indices) < 2:
            for i in indices:
                _, value, mcse = _exact_index(spec, data, config, sampler, seed, i)
                builder.add(i, value, None, True, mcse)
                progress.advance()
        else:
            with ProcessPoolExecutor(max_workers=max_workers) as executor:
                futures = [executor.submit(_exact_index, spec, data, config, sampler, seed, i)
                           for i in indices]
                for future in as_completed(futures):
                    i, value, mcse = future.result()
                    builder.add(i, value, None, True, mcse)
                    progress.advance()
    except FitFailureError as e:
        logger.error("Exact LFO aborted: %s", e)
        raise LfoAbortedError(str(e), builder.build(partial=True)) from e

    return builder.build()


def run_lfo(spec: ModelSpec, data: TimeSeries, config: LfoConfig,
            sampler: SamplerConfig, seed: Seed,
            progress_callback: Optional[ProgressCallback] = None,
            max_workers: int = 1) -> LfoResult:
    """Dispatch on ``config.mode``."""
    config.validate(data.n)
    if config.mode == "exact":
        return lfo_exact(spec, data, config, sampler, seed, progress_callback, max_workers)
    if config.mode == "backward":
        return lfo_backward(spec, data, config, sampler, seed, progress_callback)
    return lfo_forward(spec, data, config, sampler, seed, progress_callback)


@dataclass(frozen=True)
class ManyResult:
    """LFO over several independent series."""

    results: Tuple[LfoResult, ...]

    @property
    def total(self) -> float:
        return float(sum(r.total for r in self.results))

    @property
    def se(self) -> float:
        return float(math.sqrt(sum(r.se ** 2 for r in self.results)))


def lfo_many(spec: ModelSpec, series: Sequence[TimeSeries], config: LfoConfig,
             sampler: SamplerConfig, seed: Seed, dependent: bool = False,
             progress_callback: Optional[ProgressCallback] = None) -> ManyResult:
    """
    Run LFO separately on independent series and sum the totals.

    Series k runs under the master seed extended by k.

    Raises
    ------
    UnsupportedConfigurationError
        If the series are declared dependent.
    """
    if dependent:
        raise UnsupportedConfigurationError(
            "dependent series need a joint likelihood; only independent series are supported"
        )
    if not series:
        raise LfoConfigError("no series given")
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    progress = ProgressReporter(len(series), progress_callback)
    results = []
    for k, data in enumerate(series):
        results.append(run_lfo(spec, data, config, sampler, base + (k,)))
        progress.advance()
    return ManyResult(tuple(results))


# ===== LOO, LPD AND MARGINAL LIKELIHOOD =====

@dataclass(frozen=True)
class LooResult:
    """PSIS-LOO pointwise elpd with the Pareto k of every observation."""

    pointwise: np.ndarray
    k_values: Tuple[float, ...]
    threshold: float = LOO_K_THRESHOLD

    @property
    def total(self) -> float:
        return float(np.sum(self.pointwise))

    def total_after(self, L: int) -> float:
        """Sum over observations L+1..N, the ones 1-step LFO with history L predicts."""
        if not 0 <= L < self.pointwise.size:
            raise LfoConfigError(f"L must lie in [0, {self.pointwise.size - 1}], got {L}")
        return float(np.sum(self.pointwise[L:]))

    @property
    def se(self) -> float:
        return elpd_standard_error(self.pointwise, 1)

    @property
    def flagged(self) -> List[int]:
        """1-based observations whose k exceeds the threshold."""
        return [j + 1 for j, k in enumerate(self.k_values) if k > self.threshold]

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready document matching schemas/loo_result.schema.json."""
        flagged = set(self.flagged)
        return {
            "total": self.total,
            "se": _json_float(self.se),
            "threshold": self.threshold,
            "flagged": sorted(flagged),
            "pointwise": [
                {"j": j + 1, "value": float(value), "k": _json_float(k),
                 "regime": k_regime(k),
                 "flagged": (j + 1) in flagged}
                for j, (value, k) in enumerate(zip(self.pointwise, self.k_values))
            ],
        }


def psis_loo(spec: ModelSpec, data: TimeSeries, sampler: SamplerConfig, seed: Seed,
             posterior: Optional[PosteriorDraws] = None,
             psis_debug_path: Optional[str] = None) -> LooResult:
    """
    PSIS-LOO from one full-data fit.

    Observation j gets raw log ratios -log p(y_j | y_{1:j-1}, theta); the
    smoothed weights give its elpd term. High-k observations are flagged, never
    refit.
    """
    if posterior is None:
        posterior = fit_with_retry(spec, data, data.n, sampler, child_seed(seed, data.n))
    _require_prefix(posterior, data.n)
    log_lik = log_lik_matrix(spec, posterior, data, 1, data.n)

    pointwise = np.empty(data.n)
    k_values = []
    for j in range(data.n):
        psis = pareto_smooth(-log_lik[:, j], debug_path=psis_debug_path)
        pointwise[j] = log_weighted_mean_exp(log_lik[:, j], psis.log_weights)
        k_values.append(psis.k_hat)

    result = LooResult(pointwise, tuple(k_values))
    if result.flagged:
        logger.warning("PSIS-LOO: %d observations with k > %.1f", len(result.flagged),
                       LOO_K_THRESHOLD)
    return result


def in_sample_lpd(spec: ModelSpec, posterior: PosteriorDraws, data: TimeSeries) -> float:
    """Log pointwise predictive density of the data used for the fit."""
    n = posterior.fitted_prefix_len
    if n < 1:
        raise ContractViolationError("in-sample LPD needs a fit to at least one observation")
    log_lik = log_lik_matrix(spec, posterior, data, 1, n)
    return float(np.sum(logsumexp(log_lik, axis=0) - math.log(log_lik.shape[0])))


@dataclass(frozen=True)
class MarginalLikelihood:
    """log p(y) as a sum of one-step-ahead predictive terms."""

    value: float
    mcse: float
    lfo: LfoResult


def log_marginal_likelihood(spec: ModelSpec, data: TimeSeries, sampler: SamplerConfig,
                            seed: Seed, approximate: bool = False, tau: float = 0.7,
                            progress_callback: Optional[ProgressCallback] = None,
                            max_workers: int = 1) -> MarginalLikelihood:
    """
    log p(y) = sum_i log p(y_i | y_{1:i-1}) via LFO with L = 0 and M = 1.

    The first term uses draws from the prior. ``approximate`` switches from
    exact refits to forward PSIS with threshold ``tau``.
    """
    sampler = replace(sampler, enforce_min_history=False)
    config = LfoConfig(M=1, L=0, tau=tau, mode="forward" if approximate else "exact")
    result = run_lfo(spec, data, config, sampler, seed, progress_callback, max_workers)
    return MarginalLikelihood(result.total, result.total_mcse, result)
