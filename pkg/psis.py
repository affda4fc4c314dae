"""
Pareto smoothed importance sampling.

Fits a generalized Pareto distribution (GPD) to the largest importance ratios,
replaces them with expected order statistics of the fit, and reports the shape
estimate k_hat that tells the engine whether the importance sampling estimate
can be trusted or the model has to be refit. Pure functions of their inputs:
no state is kept between calls.
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import stats
from scipy.special import softmax


logger = logging.getLogger(__name__)

# Fewer draws than this cannot support a tail fit of at least MIN_TAIL points.
MIN_DRAWS = 25
MIN_TAIL = 5

# Tail size is ceil(min(TAIL_FRACTION * S, TAIL_SQRT_FACTOR * sqrt(S))).
TAIL_FRACTION = 0.2
TAIL_SQRT_FACTOR = 3.0

# Profile-likelihood quadrature: GPD_GRID_POINTS + floor(sqrt(n)) grid points
# over the transformed shape variable.
GPD_GRID_POINTS = 30
GPD_PRIOR_BS = 3.0

# Weak prior on k: K_PRIOR_WEIGHT pseudo-observations at K_PRIOR_VALUE.
K_PRIOR_WEIGHT = 10.0
K_PRIOR_VALUE = 0.5

# Log-space spread below which ratios count as all equal.
DEGENERATE_SPAN = 1e-12

# Pareto k regime boundaries.
K_GOOD = 0.5
K_OK = 0.7
K_BAD = 1.0


class PsisError(Exception):
    """Base exception for Pareto smoothing errors."""


class InsufficientDrawsError(PsisError):
    """Raised when there are too few draws to smooth."""


class InsufficientTailError(PsisError):
    """Raised when a GPD fit is asked for with fewer than MIN_TAIL points."""


class GpdDomainError(PsisError):
    """Raised for non-positive excesses or non-finite ratios."""


class InsufficientVariationError(PsisError):
    """Raised when the tail sample is constant and has no interior MLE."""


@dataclass(frozen=True)
class GpdFit:
    """Shape and scale of a fitted generalized Pareto tail."""

    k_hat: float
    sigma_hat: float
    n_tail: int


@dataclass(frozen=True)
class PsisResult:
    """
    Smoothed log importance weights and the Pareto k diagnostic.

    ``log_weights`` are not normalized; every consumer self-normalizes.
    ``k_hat`` is ``-inf`` when no tail could be fitted (all ratios equal, or a
    flat tail).
    """

    log_weights: np.ndarray
    k_hat: float
    n_tail: int
    degenerate_flag: bool

    def normalized_weights(self) -> np.ndarray:
        """Weights rescaled to sum to one."""
        shifted = self.log_weights - np.max(self.log_weights)
        weights = np.exp(shifted)
        return weights / weights.sum()


def tail_length(n_draws: int) -> int:
    """
    Number of largest ratios replaced by smoothed values.

    Parameters
    ----------
    n_draws : int
        Number of draws S.

    Returns
    -------
    int
        ceil(min(0.2 S, 3 sqrt(S))), clamped to [MIN_TAIL, S - 1].

    Raises
    ------
    InsufficientDrawsError
        If S < MIN_DRAWS.
    """
    if n_draws < MIN_DRAWS:
        raise InsufficientDrawsError(
            f"Pareto smoothing needs at least {MIN_DRAWS} draws, got {n_draws}"
        )
    n_tail = math.ceil(min(TAIL_FRACTION * n_draws,
                           TAIL_SQRT_FACTOR * math.sqrt(n_draws)))
    return int(min(max(n_tail, MIN_TAIL), n_draws - 1))


def _profile_gpd(excesses: np.ndarray) -> Tuple[float, float]:
    """
    Profile-likelihood quadrature estimate of (k, sigma).

    ``excesses`` must be sorted ascending, non-negative, with a positive
    maximum. The grid runs over b = -k / sigma; each grid point is weighted by
    its profile likelihood and the posterior mean of b gives k and sigma.
    """
    n = excesses.size
    n_grid = GPD_GRID_POINTS + int(math.sqrt(n))

    quartile = excesses[int(n / 4 + 0.5) - 1]
    if quartile <= 0:
        quartile = excesses[excesses > 0][0]

    b_grid = 1 - np.sqrt(n_grid / (np.arange(1, n_grid + 1) - 0.5))
    b_grid = b_grid / (GPD_PRIOR_BS * quartile) + 1 / excesses[-1]

    k_grid = np.log1p(-b_grid[:, None] * excesses).mean(axis=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        profile = n * (np.log(-b_grid / k_grid) - k_grid - 1)
    profile = np.where(np.isfinite(profile), profile, -np.inf)
    if not np.any(np.isfinite(profile)):
        raise InsufficientVariationError("GPD profile likelihood is flat")

    b_post = float(np.sum(b_grid * softmax(profile)))
    k_post = float(np.log1p(-b_post * excesses).mean())
    sigma_hat = -k_post / b_post
    if not (math.isfinite(sigma_hat) and sigma_hat > 0):
        raise InsufficientVariationError(
            f"GPD scale estimate is not positive: {sigma_hat}"
        )

    k_hat = (n * k_post + K_PRIOR_WEIGHT * K_PRIOR_VALUE) / (n + K_PRIOR_WEIGHT)
    return k_hat, sigma_hat


def fit_generalized_pareto(excesses) -> GpdFit:
    """
    Fit a generalized Pareto distribution to positive threshold excesses.

    Parameters
    ----------
    excesses : array_like
        Positive values above a threshold.

    Returns
    -------
    GpdFit
        Shape k_hat, scale sigma_hat, and the number of points used.

    Raises
    ------
    InsufficientTailError
        Fewer than MIN_TAIL values.
    GpdDomainError
        A non-positive or non-finite value.
    InsufficientVariationError
        All values equal.
    """
    values = np.asarray(excesses, dtype=float).ravel()
    if values.size < MIN_TAIL:
        raise InsufficientTailError(
            f"GPD fit needs at least {MIN_TAIL} excesses, got {values.size}"
        )
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise GpdDomainError("GPD excesses must be finite and positive")

    values = np.sort(values)
    if values[-1] - values[0] <= DEGENERATE_SPAN * values[-1]:
        raise InsufficientVariationError("GPD excesses are all equal")

    k_hat, sigma_hat = _profile_gpd(values)
    return GpdFit(k_hat=k_hat, sigma_hat=sigma_hat, n_tail=values.size)


def gpd_quantile(probs, k: float, sigma: float) -> np.ndarray:
    """Quantiles of a zero-location GPD with shape k and scale sigma."""
    return stats.genpareto.ppf(probs, c=k, scale=sigma)


def pareto_smooth(log_ratios, debug_path: Optional[str] = None) -> PsisResult:
    """
    Pareto smooth a vector of log importance ratios.

    The largest ``tail_length(S)`` ratios are replaced by GPD quantiles at
    probabilities (z - 0.5) / n_tail shifted by the cutpoint (the next largest
    ratio), then truncated at the largest raw ratio. Ratios at or below the
    cutpoint are returned untouched. Arithmetic runs on ratios shifted by their
    maximum so nothing overflows.

    Parameters
    ----------
    log_ratios : array_like
        S finite log importance ratios, known up to an additive constant.
    debug_path : str, optional
        Append a JSON line {S, n_tail, k_hat, cutpoint} to this file.

    Returns
    -------
    PsisResult

    Raises
    ------
    InsufficientDrawsError
        S < MIN_DRAWS.
    GpdDomainError
        A non-finite log ratio.
    """
    ratios = np.asarray(log_ratios, dtype=float).ravel()
    n_draws = ratios.size
    n_tail = tail_length(n_draws)
    if not np.all(np.isfinite(ratios)):
        raise GpdDomainError("log importance ratios must be finite")

    max_ratio = float(ratios.max())
    if max_ratio - float(ratios.min()) < DEGENERATE_SPAN:
        result = PsisResult(np.full(n_draws, max_ratio), -math.inf, n_tail, True)
        _dump_diagnostics(debug_path, n_draws, n_tail, -math.inf, max_ratio)
        return result

    shifted = ratios - max_ratio
    order = np.argsort(shifted, kind="stable")
    tail_idx = order[-n_tail:]
    log_cut = float(shifted[order[-n_tail - 1]])
    tail = shifted[tail_idx]

    log_weights = ratios.copy()
    k_hat = -math.inf
    excesses = np.exp(tail) - math.exp(log_cut)
    if tail[-1] - tail[0] >= DEGENERATE_SPAN and np.count_nonzero(excesses > 0) >= MIN_TAIL:
        k_hat, sigma_hat = _profile_gpd(np.maximum(excesses, 0.0))
        probs = (np.arange(1, n_tail + 1) - 0.5) / n_tail
        smoothed = np.log(gpd_quantile(probs, k_hat, sigma_hat) + math.exp(log_cut))
        log_weights[tail_idx] = np.minimum(smoothed, 0.0) + max_ratio
    else:
        logger.debug("Flat Pareto tail over %d draws; smoothing skipped", n_draws)

    _dump_diagnostics(debug_path, n_draws, n_tail, k_hat, log_cut + max_ratio)
    return PsisResult(log_weights, float(k_hat), n_tail, False)


def _dump_diagnostics(debug_path: Optional[str], n_draws: int, n_tail: int,
                      k_hat: float, cutpoint: float) -> None:
    """Append one diagnostic record as a JSON line."""
    if not debug_path:
        return
    record = {
        "S": n_draws,
        "n_tail": n_tail,
        "k_hat": k_hat if math.isfinite(k_hat) else None,
        "cutpoint": cutpoint,
    }
    with open(debug_path, 'a', encoding='utf-8') as handle:
        handle.write(json.dumps(record) + "\n")


def k_regime(k_hat: Optional[float]) -> str:
    """
    Classify a Pareto k estimate.

    Returns
    -------
    str
        'good' (k < 0.5), 'ok' (0.5 <= k < 0.7), 'bad' (0.7 <= k < 1),
        'very bad' (k >= 1), or 'none' when no estimate exists.
    """
    if k_hat is None or math.isnan(k_hat):
        return "none"
    if k_hat < K_GOOD:
        return "good"
    if k_hat < K_OK:
        return "ok"
    if k_hat < K_BAD:
        return "bad"
    return "very bad"
