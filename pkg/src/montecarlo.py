"""
Replicate scheduling and deterministic reduction.

Replicate ``i`` always draws from the stream derived from (master_seed, i), and
every reduction runs over replicates in ascending index order with compensated
summation, so the thread count changes wall time only.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Callable, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np

from .config import Config
from .errors import ValidationError
from .fields.base import check_seed, derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate with its provenance."""

    value: float
    std_error: float
    n: int
    seed: int
    flags: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "flags", frozenset(self.flags))
        if self.n < 1:
            raise ValidationError("n", "an estimate needs at least one replicate")
        if self.std_error < 0:
            raise ValidationError("std_error", "must be nonnegative")

    def with_flags(self, *flags: str) -> "Estimate":
        return replace(self, flags=self.flags | frozenset(flags))

    @property
    def flag_string(self) -> str:
        return ";".join(sorted(self.flags))


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------

def _run_batch(fn: Callable[[int, int], Any], indices: Sequence[int], seeds: Sequence[int]) -> List[Any]:
    return [fn(i, seeds[i]) for i in indices]


def replicate_map(
    fn: Callable[[int, int], Any],
    replicates: int,
    seed: int,
    *,
    threads: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> List[Any]:
    """Evaluate ``fn(index, stream_seed)`` for every replicate; results in index order."""
    if replicates < 1:
        raise ValidationError("replicates", "must be >= 1")
    seed = check_seed(seed)
    threads = threads or Config.THREADS
    batch_size = batch_size or Config.BATCH_SIZE
    seeds = [derive_seed(seed, i) for i in range(replicates)]
    batches = [range(start, min(start + batch_size, replicates)) for start in range(0, replicates, batch_size)]

    results: List[Any] = [None] * replicates
    if threads <= 1 or len(batches) == 1:
        for batch in batches:
            for i, res in zip(batch, _run_batch(fn, batch, seeds)):
                results[i] = res
        return results

    with ThreadPoolExecutor(max_workers=threads) as executor:
        future_to_batch = {
            executor.submit(_run_batch, fn, batch, seeds): batch
            for batch in batches
        }
        for future in as_completed(future_to_batch):
            batch = future_to_batch[future]
            try:
                batch_results = future.result()
            except Exception as exc:
                logger.error("Replicates %d-%d failed: %s", batch.start, batch.stop - 1, exc)
                raise
            for i, res in zip(batch, batch_results):
                results[i] = res
    return results


# ---------------------------------------------------------------------------
# Reductions (ascending index, compensated)
# ---------------------------------------------------------------------------

def ordered_mean(values: Iterable[float]) -> float:
    values = [float(v) for v in values]
    return math.fsum(values) / len(values)


def ordered_variance(values: Iterable[float]) -> float:
    """Unbiased sample variance, two-pass with math.fsum."""
    values = [float(v) for v in values]
    n = len(values)
    if n < 2:
        raise ValidationError("replicates", "sample variance needs at least 2 replicates")
    mean = math.fsum(values) / n
    return math.fsum((v - mean) ** 2 for v in values) / (n - 1)


def mean_estimate(values: Sequence[float], seed: int, flags: Iterable[str] = ()) -> Estimate:
    """Sample mean with standard error s / sqrt(n)."""
    n = len(values)
    std_error = math.sqrt(ordered_variance(values) / n) if n >= 2 else 0.0
    return Estimate(ordered_mean(values), std_error, n, seed, frozenset(flags))


def variance_estimate(values: Sequence[float], seed: int, flags: Iterable[str] = ()) -> Estimate:
    """Sample variance; its standard error from the fourth central moment.

    Var[s^2] ~ (m4 - (n-3)/(n-1) s^4) / n
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    s2 = ordered_variance(values)
    mean = ordered_mean(values)
    m4 = math.fsum((v - mean) ** 4 for v in values) / n
    var_s2 = max(m4 - (n - 3) / (n - 1) * s2 * s2, 0.0) / n
    return Estimate(s2, math.sqrt(var_s2), n, seed, frozenset(flags))


def proportion_estimate(hits: Sequence[bool], seed: int, flags: Iterable[str] = ()) -> Estimate:
    """Fraction of hits with the binomial standard error sqrt(p(1-p)/n)."""
    n = len(hits)
    p = sum(1 for h in hits if h) / n
    return Estimate(p, math.sqrt(p * (1.0 - p) / n), n, seed, frozenset(flags))
