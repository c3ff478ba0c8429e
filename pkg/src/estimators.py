"""
Monte Carlo estimators for the empirical quantities the bounds constrain:
covariances, variance/tails/moments of X_L, alpha-mixing surrogates and
ergodic averages.

Every estimator is a pure function of its inputs and the master seed.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ValidationError
from .fields.base import BaseFieldModel, GridSpec
from .functionals import (
    AverageKind,
    LocalFunctional,
    ergodic_average,
    kernel_mass,
    kernel_truncated,
    raw_average,
    spatial_average,
    transform_field,
)
from .montecarlo import (
    Estimate,
    mean_estimate,
    ordered_mean,
    proportion_estimate,
    replicate_map,
    variance_estimate,
)

logger = logging.getLogger(__name__)

MAX_MOMENT_ORDER = 6


@dataclass(frozen=True)
class EventFamily:
    """Threshold events {box average over a cubic region >= level}."""

    levels: Tuple[float, ...]
    region_size: float

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if not levels:
            raise ValidationError("family.levels", "must be nonempty")
        if not all(math.isfinite(v) for v in levels):
            raise ValidationError("family.levels", "must be finite")
        object.__setattr__(self, "levels", tuple(sorted(levels)))
        if not self.region_size > 0:
            raise ValidationError("family.region_size", "must be positive")


@dataclass(frozen=True)
class MixingQuery:
    """Separation R, diameter cap D (None for no cap) and the event family."""

    R: float
    family: EventFamily
    D: Optional[float] = None


# ---------------------------------------------------------------------------
# Covariance
# ---------------------------------------------------------------------------

def _canonical_offset(offset: Sequence[int]) -> Tuple[int, ...]:
    """Pick one of +-offset so both signs visit the same index pairs in the same order."""
    for component in offset:
        if component != 0:
            return tuple(offset) if component > 0 else tuple(-c for c in offset)
    return tuple(offset)


def empirical_covariance(
    model: BaseFieldModel,
    lag: Sequence[float],
    replicates: int,
    seed: int,
    mean: Optional[float] = None,
) -> Estimate:
    """Torus average of A(x)A(x+lag) minus the squared mean, aggregated over replicates.

    Without ``mean`` each replicate subtracts the square of its own field mean
    and the estimate carries the "pooled-mean" flag.
    """
    if replicates < 2:
        raise ValidationError("replicates", "must be >= 2")
    offset = _canonical_offset(model.grid.lag_to_offset(lag))

    def _one(_index: int, stream_seed: int) -> float:
        A = model.sample(stream_seed)
        product = float(np.mean(A.values * A.shifted(offset).values))
        centre = float(np.mean(A.values)) if mean is None else mean
        return product - centre * centre

    values = replicate_map(_one, replicates, seed)
    flags = {"pooled-mean"} if mean is None else set()
    return mean_estimate(values, seed, flags)


def weighted_covariance_integral(
    model: BaseFieldModel,
    alpha: float,
    max_lag: float,
    replicates: int,
    seed: int,
) -> Estimate:
    """h^d sum_{|z| <= max_lag} (1+|z|)^-alpha C_hat(z), C_hat the per-replicate FFT covariance."""
    grid = model.grid
    if replicates < 2:
        raise ValidationError("replicates", "must be >= 2")
    if not 0 < max_lag <= grid.half_side:
        raise ValidationError("max_lag", f"must lie in (0, {grid.half_side}]")
    dist = grid.torus_distance()
    weight = np.where(dist <= max_lag, (1.0 + dist) ** (-alpha), 0.0) * grid.cell_volume
    mean = model.mean

    def _one(_index: int, stream_seed: int) -> float:
        values = model.sample(stream_seed).values
        centred = values - (np.mean(values) if mean is None else mean)
        spectrum = np.abs(np.fft.fftn(centred)) ** 2
        cov = np.fft.ifftn(spectrum).real / grid.n_cells
        return float(np.sum(weight * cov))

    values = replicate_map(_one, replicates, seed)
    return mean_estimate(values, seed, {"pooled-mean"} if mean is None else set())


# ---------------------------------------------------------------------------
# Spatial averages
# ---------------------------------------------------------------------------

def sample_averages(
    model: BaseFieldModel,
    f: LocalFunctional,
    kind: AverageKind,
    L: float,
    replicates: int,
    seed: int,
) -> Tuple[List[float], Set[str]]:
    """X_L for every replicate (index order) and the flags that qualify them."""
    kind = AverageKind.parse(kind)
    grid = model.grid
    mean_F = f.analytic_mean(model)
    flags: Set[str] = set()
    if kernel_truncated(grid, L, kind):
        logger.warning("L=%g exceeds the torus window for %s; kernel truncated", L, kind.value)
        flags.add("kernel-truncation")

    if mean_F is not None:
        def _centred(_index: int, stream_seed: int) -> float:
            F = transform_field(f, model.sample(stream_seed))
            return spatial_average(F, mean_F, L, kind)

        return replicate_map(_centred, replicates, seed), flags

    def _raw(_index: int, stream_seed: int) -> Tuple[float, float]:
        F = transform_field(f, model.sample(stream_seed))
        return raw_average(F, L, kind), float(np.mean(F.values))

    rows = replicate_map(_raw, replicates, seed)
    pooled = ordered_mean(row[1] for row in rows)
    mass = kernel_mass(grid, L, kind)
    flags.add("pooled-mean")
    return [raw - pooled * mass for raw, _ in rows], flags


def variance_of_average(
    model: BaseFieldModel,
    f: LocalFunctional,
    kind: AverageKind,
    L: float,
    replicates: int,
    seed: int,
) -> Estimate:
    """Sample variance of X_L across replicates."""
    if replicates < 2:
        raise ValidationError("replicates", "variance needs at least 2 replicates")
    averages, flags = sample_averages(model, f, kind, L, replicates, seed)
    return variance_estimate(averages, seed, flags)


def tail_probability(
    model: BaseFieldModel,
    f: LocalFunctional,
    kind: AverageKind,
    L: float,
    delta: float,
    replicates: int,
    seed: int,
) -> Estimate:
    """Fraction of replicates with X_L >= delta."""
    if replicates < 2:
        raise ValidationError("replicates", "must be >= 2")
    averages, flags = sample_averages(model, f, kind, L, replicates, seed)
    return proportion_estimate([x >= delta for x in averages], seed, flags)


def moment_of_average(
    model: BaseFieldModel,
    f: LocalFunctional,
    kind: AverageKind,
    L: float,
    p: int,
    replicates: int,
    seed: int,
) -> Estimate:
    """Sample mean of X_L^(2p)."""
    if not 1 <= int(p) <= MAX_MOMENT_ORDER or int(p) != p:
        raise ValidationError("p", f"moment order must be an integer in 1..{MAX_MOMENT_ORDER}")
    if replicates < 2:
        raise ValidationError("replicates", "must be >= 2")
    averages, flags = sample_averages(model, f, kind, L, replicates, seed)
    return mean_estimate([x ** (2 * int(p)) for x in averages], seed, flags)


# ---------------------------------------------------------------------------
# Mixing
# ---------------------------------------------------------------------------

def mixing_regions(grid: GridSpec, query: MixingQuery) -> Tuple[np.ndarray, np.ndarray]:
    """Two cubic cell regions at distance >= R, the second shifted along axis 0."""
    if query.R < grid.h:
        raise ValidationError("query.R", "separation must be at least one grid spacing")
    k = max(1, int(round(query.family.region_size / grid.h)))
    gap = int(math.ceil(query.R / grid.h - 1e-9)) - 1
    if 2 * k + 2 * gap > grid.N:
        raise ValidationError("query", f"regions of {k} cells at separation {query.R} do not fit on N={grid.N}")
    diameter = (k - 1) * grid.h * math.sqrt(grid.d)
    if query.D is not None and diameter > query.D:
        raise ValidationError("query.D", f"region diameter {diameter:g} exceeds the cap {query.D:g}")

    first = np.zeros(grid.shape, dtype=bool)
    first[(slice(0, k),) * grid.d] = True
    second = np.roll(first, k + gap, axis=0)
    return first, second


def mixing_coefficient(model: BaseFieldModel, query: MixingQuery, replicates: int, seed: int) -> Estimate:
    """max over event pairs of |P[G1 and G2] - P[G1] P[G2]|; a lower bound on the true coefficient.

    The standard error belongs to the maximizing pair only.
    """
    if replicates < 2:
        raise ValidationError("replicates", "must be >= 2")
    first, second = mixing_regions(model.grid, query)

    def _one(_index: int, stream_seed: int) -> Tuple[float, float]:
        values = model.sample(stream_seed).values
        return float(np.mean(values[first])), float(np.mean(values[second]))

    pairs = np.asarray(replicate_map(_one, replicates, seed), dtype=float)
    n = len(pairs)
    best = (-1.0, 0.0)
    for level_1 in query.family.levels:
        hits_1 = pairs[:, 0] >= level_1
        p1 = np.count_nonzero(hits_1) / n
        for level_2 in query.family.levels:
            hits_2 = pairs[:, 1] >= level_2
            p2 = np.count_nonzero(hits_2) / n
            p12 = np.count_nonzero(hits_1 & hits_2) / n
            deviation = abs(p12 - p1 * p2)
            if deviation > best[0]:
                products = (hits_1 - p1) * (hits_2 - p2)
                best = (deviation, math.sqrt(np.var(products, ddof=1) / n))
    return Estimate(best[0], best[1], n, seed, frozenset({"max-statistic", "finite-event-family"}))


# ---------------------------------------------------------------------------
# Ergodicity
# ---------------------------------------------------------------------------

def ergodic_fluctuation(
    model: BaseFieldModel,
    f: LocalFunctional,
    R: float,
    replicates: int,
    seed: int,
) -> Estimate:
    """Root mean square of (ball average of F over B_R) - E[F] across replicates."""
    if replicates < 2:
        raise ValidationError("replicates", "must be >= 2")
    averages = replicate_map(lambda _i, s: ergodic_average(model.sample(s), f, R), replicates, seed)
    mean_F = f.analytic_mean(model)
    flags = set()
    if mean_F is None:
        mean_F = ordered_mean(averages)
        flags.add("pooled-mean")
    squares = mean_estimate([(a - mean_F) ** 2 for a in averages], seed, flags)
    rms = math.sqrt(squares.value)
    std_error = squares.std_error / (2.0 * rms) if rms > 0 else 0.0
    return Estimate(rms, std_error, squares.n, seed, squares.flags)
