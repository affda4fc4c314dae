"""
Bayesian Gaussian model with a polynomial time trend and AR(p) residuals.

    y_j = b_0 + b_1 t_j + b_2 t_j^2 + eps_j
    eps_j = phi_1 eps_{j-1} + ... + phi_p eps_{j-p} + e_j,   e_j ~ N(0, sigma^2)

Time is rescaled so the first time stamp of the series maps to 0 and the last
to 1. Residuals before the first observation are taken as 0, so the likelihood
factorizes from j = 1 with no latent initial state.

Posterior draws come from an adaptive random-walk Metropolis sampler run on
(b, phi, log sigma) with all chains advanced together as one array.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.signal import lfilter

from model_api import (
    DataFormatError,
    FitFailureError,
    InitializationError,
    InsufficientHistoryError,
    ModelSpec,
    PosteriorDraws,
    SamplerConfig,
    SamplerDiagnostics,
    Seed,
    TimeSeries,
    UnsupportedConfigurationError,
    as_seed_sequence,
)


logger = logging.getLogger(__name__)

MAX_TREND_DEGREE = 2

# Optimal random-walk acceptance rates for d > 1 and d == 1.
TARGET_ACCEPTANCE = 0.234
TARGET_ACCEPTANCE_1D = 0.44

# Proposal covariance is re-estimated from pooled warmup draws this often.
COVARIANCE_UPDATE_INTERVAL = 50
# Adaptation of the covariance starts after this share of warmup.
COVARIANCE_ADAPT_START = 0.2
# Robbins-Monro step size decays as (t + 1) ** -SCALE_DECAY.
SCALE_DECAY = 0.6
COVARIANCE_JITTER = 1e-8
INIT_JITTER = 0.1

# Scale floor for the starting point of sigma.
MIN_SIGMA_INIT = 1e-3


@dataclass(frozen=True)
class ArTrendPriors:
    """Prior scales: b_k ~ N(0, b_sd), phi_k ~ N(0, phi_sd), sigma ~ N+(0, sigma_sd)."""

    b_sd: float = 10.0
    phi_sd: float = 1.0
    sigma_sd: float = 10.0

    def __post_init__(self):
        for name in ("b_sd", "phi_sd", "sigma_sd"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"prior {name} must be positive, got {value}")


class ArTrendParams(NamedTuple):
    """One parameter draw: trend coefficients, AR coefficients, residual SD."""

    b: np.ndarray
    phi: np.ndarray
    sigma: float


@dataclass(frozen=True)
class ArTrendSpec(ModelSpec):
    """
    AR(p) residuals around a polynomial trend of degree 0, 1 or 2.

    Draw vectors are laid out as [b_0..b_deg, phi_1..phi_p, sigma]. With
    ``fixed_sigma`` set, sigma is not sampled and its column holds the fixed
    value.
    """

    p: int = 0
    trend_degree: int = 2
    priors: ArTrendPriors = field(default_factory=ArTrendPriors)
    fixed_sigma: Optional[float] = None

    def __post_init__(self):
        if self.p < 0:
            raise ValueError(f"AR order must be non-negative, got {self.p}")
        if self.trend_degree not in range(MAX_TREND_DEGREE + 1):
            raise ValueError(f"trend_degree must be 0, 1 or 2, got {self.trend_degree}")
        if self.fixed_sigma is not None and not self.fixed_sigma > 0:
            raise ValueError(f"fixed_sigma must be positive, got {self.fixed_sigma}")

    # ----- layout -----

    @property
    def n_trend(self) -> int:
        return self.trend_degree + 1

    @property
    def n_params(self) -> int:
        """Width of a draw vector."""
        return self.n_trend + self.p + 1

    @property
    def n_free(self) -> int:
        """Number of sampled parameters."""
        return self.n_trend + self.p + (0 if self.fixed_sigma is not None else 1)

    @property
    def min_history(self) -> int:
        """Shortest prefix the sampler accepts by default."""
        return self.n_free + 2

    def unpack(self, theta: np.ndarray) -> ArTrendParams:
        """Split a draw vector into named parts."""
        theta = np.asarray(theta, dtype=float)
        b = theta[:self.n_trend]
        phi = theta[self.n_trend:self.n_trend + self.p]
        return ArTrendParams(b=b, phi=phi, sigma=float(theta[-1]))

    def pack(self, params: ArTrendParams) -> np.ndarray:
        """Inverse of ``unpack``."""
        return np.concatenate([np.asarray(params.b, dtype=float),
                               np.asarray(params.phi, dtype=float),
                               [float(params.sigma)]])

    # ----- serialization -----

    def describe(self) -> Dict[str, Any]:
        return {"name": "ar-trend", **self.to_dict()}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p": self.p,
            "trend_degree": self.trend_degree,
            "priors": {"b_sd": self.priors.b_sd, "phi_sd": self.priors.phi_sd,
                       "sigma_sd": self.priors.sigma_sd},
            "fixed_sigma": self.fixed_sigma,
        }

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ArTrendSpec":
        """
        Build a spec from its JSON object.

        Raises
        ------
        ValueError
            On unknown keys or invalid values.
        """
        values = dict(values)
        values.pop("name", None)
        values.pop("sampler", None)
        unknown = set(values) - {"p", "trend_degree", "priors", "fixed_sigma"}
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        priors = values.pop("priors", None) or {}
        if not isinstance(priors, dict):
            raise ValueError("priors must be a JSON object")
        try:
            return cls(priors=ArTrendPriors(**priors), **values)
        except TypeError as e:
            raise ValueError(f"invalid model spec: {e}") from e

    # ----- model-api contract -----

    def fit_prefix(self, data: TimeSeries, i: int, config: SamplerConfig,
                   seed: Seed) -> PosteriorDraws:
        return metropolis_fit(self, data, i, config, seed)

    def conditional_log_lik(self, theta: np.ndarray, data: TimeSeries, j: int) -> float:
        params = self.unpack(theta)
        prefix = data.y[:j]
        _, innovations = residual_recursion(params, prefix, time_rescale(data.t)[:j])
        return float(stats.norm.logpdf(innovations[-1], scale=params.sigma))

    def pointwise_log_lik(self, draws: np.ndarray, data: TimeSeries,
                          start: int, stop: int) -> np.ndarray:
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        innovations = _innovations_batch(self, draws, data.y[:stop],
                                         _design_matrix(self, time_rescale(data.t))[:stop])
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            values = stats.norm.logpdf(innovations[:, start - 1:stop],
                                       scale=draws[:, -1:])
        return values

    def log_likelihood(self, theta: np.ndarray, data: TimeSeries,
                       i: Optional[int] = None) -> float:
        """Joint log likelihood of y_{1:i} (all of y by default)."""
        i = data.n if i is None else i
        if i == 0:
            return 0.0
        return float(self.pointwise_log_lik(np.atleast_2d(theta), data, 1, i).sum())

    def predictive_sample(self, theta: np.ndarray, data: TimeSeries, i: int,
                          horizon: int, rng: np.random.Generator,
                          free_forecast: bool = False) -> np.ndarray:
        return self.predictive_paths(np.atleast_2d(theta), data, i, horizon, rng)[0]

    def predictive_paths(self, draws: np.ndarray, data: TimeSeries, i: int,
                         horizon: int, rng: np.random.Generator) -> np.ndarray:
        """
        Simulate y_{i+1:i+horizon} once per draw.

        Each step feeds its simulated residual into the next step's AR term.
        Innovations are drawn up front as one (S, horizon) standard normal
        block, so a single draw consumes the same stream as a length-horizon
        vector.
        """
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        n_draws = draws.shape[0]
        times = extended_time_scale(data.t, i + horizon)
        design = _design_matrix(self, times)
        trend_coef = draws[:, :self.n_trend]
        phi = draws[:, self.n_trend:self.n_trend + self.p]
        sigma = draws[:, -1]

        eps = np.zeros((n_draws, i + horizon))
        if i > 0:
            eps[:, :i] = data.y[:i][None, :] - trend_coef @ design[:i].T
        z = rng.standard_normal((n_draws, horizon))

        paths = np.empty((n_draws, horizon))
        for h in range(horizon):
            j = i + h
            ar_term = np.zeros(n_draws)
            for k in range(1, min(self.p, j) + 1):
                ar_term += phi[:, k - 1] * eps[:, j - k]
            eps[:, j] = ar_term + sigma * z[:, h]
            paths[:, h] = design[j] @ trend_coef.T + eps[:, j]
        return paths


# ===== TIME AND RESIDUALS =====

def time_rescale(t_raw) -> np.ndarray:
    """
    Affine map of time stamps onto [0, 1], first to 0 and last to 1.

    A single time stamp maps to [0].

    Raises
    ------
    DataFormatError
        If the stamps are constant or not strictly increasing.
    """
    t_raw = np.asarray(t_raw, dtype=float).ravel()
    if t_raw.size == 1:
        return np.zeros(1)
    span = t_raw[-1] - t_raw[0]
    if not span > 0 or np.any(np.diff(t_raw) <= 0):
        raise DataFormatError("time stamps must be strictly increasing to rescale")
    return (t_raw - t_raw[0]) / span


def extended_time_scale(t_raw, length: int) -> np.ndarray:
    """
    Scaled time for the first ``length`` positions of a series.

    Positions beyond the data continue at the last observed spacing and are
    scaled with the same affine map, so they land above 1.
    """
    t_raw = np.asarray(t_raw, dtype=float).ravel()
    scaled = time_rescale(t_raw)
    if length <= t_raw.size:
        return scaled[:length]
    extra = length - t_raw.size
    if t_raw.size == 1:
        step = 1.0
    else:
        step = scaled[-1] - scaled[-2]
    tail = scaled[-1] + step * np.arange(1, extra + 1)
    return np.concatenate([scaled, tail])


def _design_matrix(spec: ArTrendSpec, t_scaled: np.ndarray) -> np.ndarray:
    """Columns 1, t, t^2 up to the trend degree."""
    return np.vander(np.asarray(t_scaled, dtype=float), spec.n_trend, increasing=True)


def residual_recursion(params: ArTrendParams, y, t_scaled) -> Tuple[np.ndarray, np.ndarray]:
    """
    Trend residuals eps and innovations e for one parameter draw.

    e_j = eps_j - sum_k phi_k eps_{j-k}, with eps_{j-k} = 0 before the series.

    Parameters
    ----------
    params : ArTrendParams
    y : array_like
        Observations.
    t_scaled : array_like
        Scaled time stamps aligned with ``y``.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        (eps, e), each as long as ``y``.
    """
    y = np.asarray(y, dtype=float)
    b = np.asarray(params.b, dtype=float)
    trend = np.vander(np.asarray(t_scaled, dtype=float), b.size, increasing=True) @ b
    eps = y - trend
    phi = np.asarray(params.phi, dtype=float)
    innovations = lfilter(np.concatenate([[1.0], -phi]), [1.0], eps)
    return eps, innovations


def _innovations_batch(spec: ArTrendSpec, draws: np.ndarray, y: np.ndarray,
                       design: np.ndarray) -> np.ndarray:
    """Innovations for every draw as an S x len(y) array."""
    eps = y[None, :] - draws[:, :spec.n_trend] @ design.T
    innovations = eps.copy()
    for k in range(1, min(spec.p, y.size - 1) + 1):
        phi_k = draws[:, spec.n_trend + k - 1][:, None]
        innovations[:, k:] -= phi_k * eps[:, :-k]
    return innovations


# ===== PRIOR =====

def log_prior(params: ArTrendParams, spec: ArTrendSpec) -> float:
    """
    Sum of the independent prior log densities.

    Returns -inf for sigma <= 0. With a fixed sigma the sigma term is left out.
    """
    return float(_log_prior_batch(spec, spec.pack(params)[None, :])[0])


def _log_prior_batch(spec: ArTrendSpec, draws: np.ndarray) -> np.ndarray:
    priors = spec.priors
    b = draws[:, :spec.n_trend]
    phi = draws[:, spec.n_trend:spec.n_trend + spec.p]
    sigma = draws[:, -1]
    total = stats.norm.logpdf(b, scale=priors.b_sd).sum(axis=1)
    total += stats.norm.logpdf(phi, scale=priors.phi_sd).sum(axis=1)
    if spec.fixed_sigma is None:
        with np.errstate(divide='ignore'):
            total = total + stats.halfnorm.logpdf(sigma, scale=priors.sigma_sd)
    return np.where(sigma > 0, total, -np.inf)


def sample_prior(spec: ArTrendSpec, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the prior as an n_draws x n_params array."""
    priors = spec.priors
    b = rng.normal(0.0, priors.b_sd, size=(n_draws, spec.n_trend))
    phi = rng.normal(0.0, priors.phi_sd, size=(n_draws, spec.p))
    if spec.fixed_sigma is not None:
        sigma = np.full((n_draws, 1), spec.fixed_sigma)
    else:
        sigma = np.abs(rng.normal(0.0, priors.sigma_sd, size=(n_draws, 1)))
    return np.hstack([b, phi, sigma])


# ===== SAMPLER =====

class _RunningMoments:
    """Pooled running mean and covariance, merged batch by batch."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def update(self, batch: np.ndarray) -> None:
        n_batch = batch.shape[0]
        batch_mean = batch.mean(axis=0)
        centered = batch - batch_mean
        batch_m2 = centered.T @ centered
        total = self.count + n_batch
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * n_batch / total
        self.m2 = self.m2 + batch_m2 + np.outer(delta, delta) * self.count * n_batch / total
        self.count = total

    def covariance(self) -> np.ndarray:
        return self.m2 / max(self.count - 1, 1)


class _PrefixPosterior:
    """Unnormalized log posterior of y_{1:i} on (b, phi, log sigma)."""

    def __init__(self, spec: ArTrendSpec, data: TimeSeries, i: int):
        self.spec = spec
        self.y = data.y[:i]
        self.design = _design_matrix(spec, time_rescale(data.t))[:i]

    def to_draws(self, z: np.ndarray) -> np.ndarray:
        """Map sampler coordinates to draw vectors."""
        if self.spec.fixed_sigma is not None:
            sigma = np.full((z.shape[0], 1), self.spec.fixed_sigma)
        else:
            with np.errstate(over='ignore'):
                sigma = np.exp(z[:, -1:])
        return np.hstack([z[:, :self.spec.n_trend + self.spec.p], sigma])

    def __call__(self, z: np.ndarray) -> np.ndarray:
        draws = self.to_draws(z)
        sigma = draws[:, -1]
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            innovations = _innovations_batch(self.spec, draws, self.y, self.design)
            log_lik = stats.norm.logpdf(innovations, scale=sigma[:, None]).sum(axis=1)
            value = log_lik + _log_prior_batch(self.spec, draws)
            if self.spec.fixed_sigma is None:
                value = value + z[:, -1]
        return np.where(np.isfinite(value), value, -np.inf)


def _initial_point(spec: ArTrendSpec, target: _PrefixPosterior) -> Tuple[np.ndarray, np.ndarray]:
    """
    Least-squares starting point and a block-diagonal proposal covariance.

    Trend coefficients come from OLS, AR coefficients from regressing the
    trend residuals on their lags.
    """
    y, design = target.y, target.design
    n = y.size
    b, *_ = np.linalg.lstsq(design, y, rcond=None)
    eps = y - design @ b

    phi = np.zeros(spec.p)
    if spec.p > 0 and n > spec.p:
        lags = np.column_stack([np.concatenate([np.zeros(k), eps[:-k]])
                                for k in range(1, spec.p + 1)])
        phi, *_ = np.linalg.lstsq(lags, eps, rcond=None)
    innovations = lfilter(np.concatenate([[1.0], -phi]), [1.0], eps)
    sigma = max(float(np.std(innovations)), MIN_SIGMA_INIT) if n > 1 else 1.0
    scale = spec.fixed_sigma or sigma

    gram = design.T @ design / scale ** 2 + np.eye(spec.n_trend) / spec.priors.b_sd ** 2
    blocks = [np.linalg.inv(gram)]
    if spec.p > 0:
        blocks.append(np.eye(spec.p) / max(n, 1))
    start = [b, phi]
    if spec.fixed_sigma is None:
        blocks.append(np.eye(1) / (2.0 * max(n, 1)))
        start.append([math.log(sigma)])

    dim = spec.n_free
    cov = np.zeros((dim, dim))
    offset = 0
    for block in blocks:
        width = block.shape[0]
        cov[offset:offset + width, offset:offset + width] = block
        offset += width
    return np.concatenate(start), cov


def _cholesky(cov: np.ndarray) -> np.ndarray:
    dim = cov.shape[0]
    jitter = COVARIANCE_JITTER * max(float(np.mean(np.diag(cov))), 1.0)
    return np.linalg.cholesky(cov + jitter * np.eye(dim))


def metropolis_fit(spec: ArTrendSpec, data: TimeSeries, i: int, config: SamplerConfig,
                   seed: Seed) -> PosteriorDraws:
    """
    Adaptive random-walk Metropolis draws from p(theta | y_{1:i}).

    All chains move in lockstep. During warmup the proposal covariance is
    re-estimated from the pooled chain states and a global log step size
    follows a Robbins-Monro recursion toward the optimal acceptance rate;
    both are frozen once warmup ends. A prefix of length 0 returns exact prior
    draws.

    Parameters
    ----------
    spec : ArTrendSpec
    data : TimeSeries
    i : int
        Prefix length.
    config : SamplerConfig
    seed : int or tuple of int

    Returns
    -------
    PosteriorDraws
        ``chains * draws`` draws ordered chain by chain.

    Raises
    ------
    InsufficientHistoryError
        If i is below the model's minimum history and the config enforces it.
    InitializationError
        If the posterior is not finite at the least-squares start.
    FitFailureError
        If the post-warmup acceptance rate falls outside the configured window.
    """
    rng = np.random.default_rng(as_seed_sequence(seed))
    n_chains = config.chains

    if i == 0:
        draws = sample_prior(spec, config.total_draws, rng)
        diagnostics = SamplerDiagnostics(1.0, n_chains, seed, 0, method="prior")
        return PosteriorDraws(draws, 0, diagnostics)

    if config.enforce_min_history and i < spec.min_history:
        raise InsufficientHistoryError(
            f"prefix of length {i} is shorter than the {spec.min_history} "
            f"observations this model needs"
        )

    target = _PrefixPosterior(spec, data, i)
    start, cov = _initial_point(spec, target)
    if not np.isfinite(target(start[None, :])[0]):
        raise InitializationError(
            f"log posterior is not finite at the starting point for prefix {i}",
            SamplerDiagnostics(math.nan, n_chains, seed, config.warmup),
        )

    dim = spec.n_free
    chol = _cholesky(cov)
    current = start + INIT_JITTER * rng.standard_normal((n_chains, dim)) @ chol.T
    current_lp = target(current)
    stuck = ~np.isfinite(current_lp)
    current[stuck] = start
    current_lp[stuck] = target(start[None, :])[0]

    target_rate = TARGET_ACCEPTANCE if dim > 1 else TARGET_ACCEPTANCE_1D
    log_scale = math.log(2.38 / math.sqrt(dim))
    moments = _RunningMoments(dim)
    adapt_from = int(COVARIANCE_ADAPT_START * config.warmup)

    n_iter = config.warmup + config.draws * config.thin
    kept = np.empty((n_chains, config.draws, dim))
    accepted = 0
    for t in range(n_iter):
        proposal = current + math.exp(log_scale) * rng.standard_normal((n_chains, dim)) @ chol.T
        proposal_lp = target(proposal)
        log_u = np.log(rng.uniform(size=n_chains))
        with np.errstate(invalid='ignore'):
            accept = log_u < proposal_lp - current_lp
        current = np.where(accept[:, None], proposal, current)
        current_lp = np.where(accept, proposal_lp, current_lp)

        if t < config.warmup:
            log_scale += (accept.mean() - target_rate) / (t + 1) ** SCALE_DECAY
            if t >= adapt_from:
                moments.update(current)
                if (t + 1) % COVARIANCE_UPDATE_INTERVAL == 0 and moments.count > 2 * dim:
                    try:
                        chol = _cholesky(moments.covariance())
                    except np.linalg.LinAlgError:
                        logger.debug("Pooled covariance not positive definite; kept previous")
            continue

        accepted += int(accept.sum())
        kept_step = t - config.warmup
        if kept_step % config.thin == 0:
            kept[:, kept_step // config.thin] = current

    acceptance = accepted / (n_chains * config.draws * config.thin)
    diagnostics = SamplerDiagnostics(acceptance, n_chains, seed, config.warmup)
    if not config.acceptance_low <= acceptance <= config.acceptance_high:
        raise FitFailureError(
            f"acceptance rate {acceptance:.3f} outside "
            f"[{config.acceptance_low}, {config.acceptance_high}] for prefix {i}",
            diagnostics,
        )

    draws = target.to_draws(kept.reshape(n_chains * config.draws, dim))
    logger.debug("Fit prefix %d: acceptance %.3f over %d chains", i, acceptance, n_chains)
    return PosteriorDraws(draws, i, diagnostics)


# ===== CONJUGATE ORACLES =====

def _require_conjugate(spec: ArTrendSpec) -> None:
    if spec.p != 0 or spec.fixed_sigma is None:
        raise UnsupportedConfigurationError(
            "closed-form results need a trend-only model (p = 0) with fixed sigma"
        )


def _gaussian_linear_log_marginal(y: np.ndarray, design: np.ndarray, b_sd: float,
                                  sigma: float) -> float:
    """log N(y | 0, sigma^2 I + b_sd^2 X X^T)."""
    cov = sigma ** 2 * np.eye(y.size) + b_sd ** 2 * design @ design.T
    return float(stats.multivariate_normal.logpdf(y, mean=np.zeros(y.size), cov=cov))


def conjugate_log_marginal(data: TimeSeries, spec: ArTrendSpec) -> float:
    """
    Exact log p(y) for the trend-only, known-sigma model.

    Raises
    ------
    UnsupportedConfigurationError
        If the model has AR terms or a sampled sigma.
    """
    _require_conjugate(spec)
    design = _design_matrix(spec, time_rescale(data.t))
    return _gaussian_linear_log_marginal(data.y, design, spec.priors.b_sd, spec.fixed_sigma)


def conjugate_posterior(data: TimeSeries, spec: ArTrendSpec,
                        i: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of b given y_{1:i}."""
    _require_conjugate(spec)
    i = data.n if i is None else i
    design = _design_matrix(spec, time_rescale(data.t))[:i]
    sigma2 = spec.fixed_sigma ** 2
    precision = design.T @ design / sigma2 + np.eye(spec.n_trend) / spec.priors.b_sd ** 2
    cov = np.linalg.inv(precision)
    mean = cov @ design.T @ data.y[:i] / sigma2
    return mean, cov


def conjugate_log_predictive_terms(data: TimeSeries, spec: ArTrendSpec) -> np.ndarray:
    """log p(y_i | y_{1:i-1}) for i = 1..N by sequential conjugate updating."""
    _require_conjugate(spec)
    design = _design_matrix(spec, time_rescale(data.t))
    sigma2 = spec.fixed_sigma ** 2
    precision = np.eye(spec.n_trend) / spec.priors.b_sd ** 2
    shift = np.zeros(spec.n_trend)
    terms = np.empty(data.n)
    for j in range(data.n):
        cov = np.linalg.inv(precision)
        x = design[j]
        terms[j] = stats.norm.logpdf(data.y[j], loc=x @ cov @ shift,
                                     scale=math.sqrt(sigma2 + x @ cov @ x))
        precision = precision + np.outer(x, x) / sigma2
        shift = shift + x * data.y[j] / sigma2
    return terms


# ===== MODEL FILES =====

def load_model_file(path: str) -> Tuple[ArTrendSpec, Optional[SamplerConfig]]:
    """
    Read a model JSON file ``{p, trend_degree, priors, fixed_sigma?, sampler?}``.

    Raises
    ------
    ValueError
        If the file is unreadable or holds invalid settings.
    """
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            values = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot read model file {path}: {e}") from e
    if not isinstance(values, dict):
        raise ValueError(f"model file {path} must hold a JSON object")
    sampler = values.get("sampler")
    config = SamplerConfig.from_dict(sampler) if sampler else None
    return ArTrendSpec.from_dict(values), config
