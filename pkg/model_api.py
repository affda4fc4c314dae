"""
The contract a Bayesian time-series model satisfies to be cross-validated.

A model fits prefixes y_{1:i} of a series, exposes the per-observation
conditional log likelihood log p(y_j | y_{1:(j-1)}, theta), and simulates
future paths. Importance ratios and predictive densities are built from
those factors.

Observation indices j and prefix lengths i are 1-based as in the usual
notation: ``data.y[j - 1]`` is observation j, and the prefix of length i is
``data.y[:i]``.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd


logger = logging.getLogger(__name__)

# CSV ingestion schema.
CSV_COLUMNS = ("t", "y")

# Draw floor shared with PSIS.
MIN_TOTAL_DRAWS = 25

Seed = Union[int, Tuple[int, ...]]


class ModelError(Exception):
    """Base exception for model and data errors."""


class DataFormatError(ModelError):
    """Raised for malformed or empty input series."""


class FitFailureError(ModelError):
    """Raised when a sampler run does not produce usable draws."""

    def __init__(self, message: str, diagnostics: Optional["SamplerDiagnostics"] = None):
        super().__init__(message)
        self.diagnostics = diagnostics


class InitializationError(FitFailureError):
    """Raised when the posterior is not finite at the starting point."""


class NumericDomainError(ModelError):
    """Raised when a log density evaluates to a non-finite value."""

    def __init__(self, message: str, j: Optional[int] = None,
                 draw: Optional[int] = None):
        super().__init__(message)
        self.j = j
        self.draw = draw


class InsufficientHistoryError(ModelError):
    """Raised when a prefix is too short for the requested fit."""


class UnsupportedConfigurationError(ModelError):
    """Raised for model or engine configurations that are not implemented."""


@dataclass(frozen=True)
class TimeSeries:
    """
    Ordered observations y_{1:N} with strictly increasing time stamps.

    Arrays are copied and frozen on construction.
    """

    y: np.ndarray
    t: Optional[np.ndarray] = None
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        if y.size < 1:
            raise DataFormatError("time series is empty")
        if not np.all(np.isfinite(y)):
            raise DataFormatError("time series contains non-finite values")

        t = np.arange(1, y.size + 1, dtype=float) if self.t is None \
            else np.array(self.t, dtype=float).ravel()
        if t.size != y.size:
            raise DataFormatError(
                f"time stamps ({t.size}) and observations ({y.size}) differ in length"
            )
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise DataFormatError("time stamps must be strictly increasing")
        if self.labels is not None and len(self.labels) != y.size:
            raise DataFormatError("one label per observation is required")

        y.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        """Number of observations N."""
        return int(self.y.size)

    @classmethod
    def from_csv(cls, path: str) -> "TimeSeries":
        """
        Read a two-column ``t,y`` CSV with a header row.

        Raises
        ------
        DataFormatError
            If the file cannot be parsed, lacks the expected columns, or holds
            no rows.
        """
        try:
            frame = pd.read_csv(path, encoding="utf-8", decimal=".")
        except pd.errors.EmptyDataError as e:
            raise DataFormatError(
                f"{path} is empty; expected a header row 't,y' and data rows"
            ) from e
        except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
            raise DataFormatError(f"cannot read {path}: {e}") from e

        columns = [str(c).strip() for c in frame.columns]
        if not set(CSV_COLUMNS).issubset(columns):
            raise DataFormatError(
                f"{path} has columns {columns}; expected a header row 't,y'"
            )
        frame.columns = columns
        if frame.empty:
            raise DataFormatError(f"{path} has a header but no data rows")

        try:
            t = pd.to_numeric(frame["t"]).to_numpy(dtype=float)
            y = pd.to_numeric(frame["y"]).to_numpy(dtype=float)
        except (ValueError, TypeError) as e:
            raise DataFormatError(f"{path} holds non-numeric values: {e}") from e
        return cls(y=y, t=t)

    def to_csv(self, path: str) -> None:
        """Write the series in the ingestion format."""
        pd.DataFrame({"t": self.t, "y": self.y}).to_csv(path, index=False)


@dataclass(frozen=True)
class SamplerConfig:
    """
    Sampler settings shared by every fit of an analysis.

    The total number of kept draws is ``chains * draws``.
    """

    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    thin: int = 1
    acceptance_low: float = 0.1
    acceptance_high: float = 0.6
    enforce_min_history: bool = True

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 0 or self.draws < 1 or self.thin < 1:
            raise ValueError(f"invalid sampler settings: {self}")
        if self.total_draws < MIN_TOTAL_DRAWS:
            raise ValueError(
                f"sampler keeps {self.total_draws} draws; at least "
                f"{MIN_TOTAL_DRAWS} are required"
            )
        if not 0 <= self.acceptance_low < self.acceptance_high <= 1:
            raise ValueError("acceptance bounds must satisfy 0 <= low < high <= 1")

    @property
    def total_draws(self) -> int:
        """Number of kept draws S."""
        return self.chains * self.draws

    def with_warmup(self, warmup: int) -> "SamplerConfig":
        """Copy with a different warmup length."""
        return replace(self, warmup=warmup)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> "SamplerConfig":
        """Build from a JSON object; unknown keys are rejected."""
        values = dict(values or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown sampler settings: {sorted(unknown)}")
        return cls(**values)


@dataclass(frozen=True)
class SamplerDiagnostics:
    """What the sampler reports about a fit."""

    acceptance_rate: float
    chains: int
    seed: Optional[Seed]
    warmup: int = 0
    method: str = "metropolis"


@dataclass(frozen=True)
class PosteriorDraws:
    """
    S parameter draws from p(theta | y_{1:i*}) in the model's own
    parameterization, tagged with i* (``fitted_prefix_len``).

    Rows are ordered chain by chain, so contiguous blocks are contiguous runs
    of one chain.
    """

    draws: np.ndarray
    fitted_prefix_len: int
    diagnostics: SamplerDiagnostics = field(
        default_factory=lambda: SamplerDiagnostics(math.nan, 1, None)
    )

    def __post_init__(self):
        draws = np.array(self.draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        if draws.ndim != 2 or draws.shape[0] < 1:
            raise ValueError("draws must be a non-empty S x d array")
        if not np.all(np.isfinite(draws)):
            raise ValueError("posterior draws must be finite")
        if self.fitted_prefix_len < 0:
            raise ValueError("fitted_prefix_len must be non-negative")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)

    @property
    def n_draws(self) -> int:
        """Number of draws S."""
        return int(self.draws.shape[0])


class ModelSpec(ABC):
    """
    Capability contract for a cross-validatable time-series model.

    Subclasses implement the four required capabilities. The two vectorized
    hooks have loop defaults built on the scalar ones; models override them
    when they can evaluate all draws at once.
    """

    @abstractmethod
    def fit_prefix(self, data: TimeSeries, i: int, config: SamplerConfig,
                   seed: Seed) -> PosteriorDraws:
        """Draw from p(theta | y_{1:i}); deterministic given the seed."""

    @abstractmethod
    def conditional_log_lik(self, theta: np.ndarray, data: TimeSeries, j: int) -> float:
        """log p(y_j | y_{1:(j-1)}, theta)."""

    @abstractmethod
    def predictive_sample(self, theta: np.ndarray, data: TimeSeries, i: int,
                          horizon: int, rng: np.random.Generator,
                          free_forecast: bool = False) -> np.ndarray:
        """One simulated path y_{i+1:i+horizon} given y_{1:i} and theta."""

    @abstractmethod
    def describe(self) -> Dict[str, Any]:
        """JSON-ready description of the model."""

    def pointwise_log_lik(self, draws: np.ndarray, data: TimeSeries,
                          start: int, stop: int) -> np.ndarray:
        """
        Conditional log likelihoods for observations start..stop (inclusive)
        under every draw, as an S x (stop - start + 1) array.
        """
        columns = range(start, stop + 1)
        return np.array([[self.conditional_log_lik(theta, data, j) for j in columns]
                         for theta in draws], dtype=float).reshape(len(draws), len(columns))

    def predictive_paths(self, draws: np.ndarray, data: TimeSeries, i: int,
                         horizon: int, rng: np.random.Generator) -> np.ndarray:
        """One simulated path per draw, as an S x horizon array."""
        return np.array([self.predictive_sample(theta, data, i, horizon, rng)
                         for theta in draws], dtype=float).reshape(len(draws), horizon)


# ===== CONTRACT ENTRY POINTS =====

def fit_prefix(spec: ModelSpec, data: TimeSeries, i: int, config: SamplerConfig,
               seed: Seed) -> PosteriorDraws:
    """
    Fit ``spec`` to the first ``i`` observations.

    A prefix of length 0 yields draws from the prior.

    Raises
    ------
    ValueError
        If i is outside [0, N].
    FitFailureError
        If the sampler fails; carries the sampler diagnostics.
    """
    if not 0 <= i <= data.n:
        raise ValueError(f"prefix length {i} outside [0, {data.n}]")
    posterior = spec.fit_prefix(data, i, config, seed)
    if posterior.fitted_prefix_len != i:
        raise ModelError(
            f"model returned draws for prefix {posterior.fitted_prefix_len}, expected {i}"
        )
    return posterior


def conditional_log_lik(spec: ModelSpec, theta: np.ndarray, data: TimeSeries,
                        j: int, draw: Optional[int] = None) -> float:
    """
    log p(y_j | y_{1:(j-1)}, theta) with a finiteness check.

    Raises
    ------
    NumericDomainError
        If the value is not finite; names j and the draw.
    """
    if not 1 <= j <= data.n:
        raise ValueError(f"observation index {j} outside [1, {data.n}]")
    value = float(spec.conditional_log_lik(np.asarray(theta, dtype=float), data, j))
    if not math.isfinite(value):
        raise NumericDomainError(
            f"log likelihood of observation {j} is {value} (draw {draw})", j=j, draw=draw
        )
    return value


def log_lik_matrix(spec: ModelSpec, posterior: PosteriorDraws, data: TimeSeries,
                   start: int, stop: int, i: Optional[int] = None) -> np.ndarray:
    """
    S x (stop - start + 1) conditional log likelihoods with a finiteness check.

    ``i`` is the prediction index the matrix serves, only used in errors.
    """
    if not 1 <= start <= stop <= data.n:
        raise ValueError(f"observation range {start}..{stop} outside [1, {data.n}]")
    values = spec.pointwise_log_lik(posterior.draws, data, start, stop)
    bad = ~np.isfinite(values)
    if np.any(bad):
        draw, column = (int(v) for v in np.argwhere(bad)[0])
        j = start + column
        raise NumericDomainError(
            f"non-finite log likelihood at i={i}, j={j} (draw {draw})", j=j, draw=draw
        )
    return values


def predictive_sample(spec: ModelSpec, theta: np.ndarray, data: TimeSeries, i: int,
                      horizon: int, rng: np.random.Generator,
                      free_forecast: bool = False) -> np.ndarray:
    """
    Simulate y_{i+1:i+horizon} from p(. | y_{1:i}, theta).

    Raises
    ------
    ValueError
        If the path runs past the data and ``free_forecast`` is not set.
    """
    if horizon < 1 or i < 0:
        raise ValueError("horizon must be positive and i non-negative")
    if i + horizon > data.n and not free_forecast:
        raise ValueError(
            f"path {i + 1}..{i + horizon} runs past N={data.n}; set free_forecast"
        )
    return spec.predictive_sample(np.asarray(theta, dtype=float), data, i, horizon,
                                  rng, free_forecast=free_forecast)


def batch_means_se(values: np.ndarray, n_batches: int = 20) -> float:
    """
    Monte-Carlo standard error of the mean of ordered draws by batch means.

    Contiguous batches absorb the autocorrelation of a Markov chain.
    """
    values = np.asarray(values, dtype=float).ravel()
    n_batches = min(n_batches, values.size)
    if n_batches < 2:
        return math.nan
    means = np.array([b.mean() for b in np.array_split(values, n_batches)])
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def as_seed_sequence(seed: Optional[Seed]) -> np.random.SeedSequence:
    """Turn an int or a tuple of non-negative ints into a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, Sequence):
        return np.random.SeedSequence([int(s) for s in seed])
    return np.random.SeedSequence(seed)
