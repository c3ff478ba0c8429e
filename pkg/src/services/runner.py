"""
Experiment runner: executes a sweep, confronts the bound regimes and writes the report.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .. import __version__
from ..bounds import MIN_FIT_POINTS, BoundRegime, FitPoint, FitResult, RegimeKind, evaluate, fit_constant
from ..errors import ValidationError
from ..estimators import (
    EventFamily,
    MixingQuery,
    empirical_covariance,
    ergodic_fluctuation,
    mixing_coefficient,
    mixing_regions,
    sample_averages,
    variance_of_average,
)
from ..functionals import ball_stencil
from ..montecarlo import Estimate, mean_estimate, proportion_estimate
from ..oracle import TinyFieldSpec, efron_stein_check
from .experiment import ExperimentConfig, ExperimentKind
from .formatter import ReportFormatter

logger = logging.getLogger(__name__)

# Regimes whose point arguments each experiment can supply.
ALLOWED_REGIMES: Dict[ExperimentKind, Tuple[RegimeKind, ...]] = {
    ExperimentKind.VARIANCE_SCAN: (RegimeKind.VAR_MSG,),
    ExperimentKind.TAIL_SCAN: (
        RegimeKind.TAIL_MSG_FCT,
        RegimeKind.TAIL_MLSI_FCT,
        RegimeKind.TAIL_OSC_ALG,
        RegimeKind.TAIL_OSC_EXP_SG,
        RegimeKind.TAIL_OSC_EXP_LSI,
        RegimeKind.TAIL_MIXING,
    ),
    ExperimentKind.MIXING_SCAN: (RegimeKind.MIXING_DECAY,),
    ExperimentKind.COVARIANCE_SCAN: (RegimeKind.COV_DECAY,),
    ExperimentKind.MOMENT_SCAN: (RegimeKind.MOMENT_SG, RegimeKind.MOMENT_LSI),
    ExperimentKind.ERGODIC_SCAN: (),
    ExperimentKind.ORACLE_CHECK: (),
}

_NEEDS_WEIGHT = (RegimeKind.VAR_MSG, RegimeKind.COV_DECAY, RegimeKind.MIXING_DECAY)


@dataclass(frozen=True)
class ResultRow:
    """One CSV record per sweep point."""

    experiment: str
    model_tag: str
    functional: str
    avg_kind: str
    param_name: str
    param_value: str
    value: float
    std_error: float
    n: int
    seed: int
    flags: str
    config_hash: str


@dataclass(frozen=True)
class Verdict:
    regime: str
    params: str
    n_points: int
    fit: FitResult
    config_hash: str


@dataclass
class Report:
    rows: List[ResultRow]
    verdicts: List[Verdict]
    provenance: Dict[str, Any]
    scaling: Optional["ScalingFit"] = None
    paths: Dict[str, str] = field(default_factory=dict)

    @property
    def all_dominated(self) -> bool:
        return all(v.fit.dominated for v in self.verdicts)


class ScalingFit(NamedTuple):
    slope: float
    intercept: float
    residual: float


# ---------------------------------------------------------------------------
# Scaling fit
# ---------------------------------------------------------------------------

def _column(row: Any, name: str) -> float:
    value = row[name] if isinstance(row, Mapping) else getattr(row, name)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(name, f"column value {value!r} is not numeric")


def fit_scaling(rows: Sequence[Any], x_col: str, y_col: str) -> ScalingFit:
    """Least squares on (log x, log y); residual is the max absolute log deviation."""
    if len(rows) < 3:
        raise ValidationError("rows", "a scaling fit needs at least 3 rows")
    x = np.array([_column(r, x_col) for r in rows])
    y = np.array([_column(r, y_col) for r in rows])
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValidationError(y_col if np.any(y <= 0) else x_col, "log-log fit needs positive values")
    log_x, log_y = np.log(x), np.log(y)
    slope, intercept = np.polyfit(log_x, log_y, 1)
    residual = float(np.max(np.abs(log_y - (slope * log_x + intercept))))
    return ScalingFit(float(slope), float(intercept), residual)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _param(value: Any) -> str:
    if isinstance(value, tuple):
        return "|".join(_param(v) for v in value)
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _row(config: ExperimentConfig, point: Any, estimate: Estimate) -> ResultRow:
    return ResultRow(
        experiment=config.experiment.value,
        model_tag=config.model.model_tag if config.model is not None else "tiny",
        functional=config.functional.label if config.functional is not None else config.oracle.functional.label,
        avg_kind=config.average.value if config.model is not None else "",
        param_name=config.experiment.param_name,
        param_value=_param(point),
        value=estimate.value,
        std_error=estimate.std_error,
        n=estimate.n,
        seed=estimate.seed,
        flags=estimate.flag_string,
        config_hash=config.config_hash,
    )


def _point_id(config: ExperimentConfig, point: Any) -> str:
    return f"{config.experiment.param_name}={_param(point)}"


def _mixing_scale(config: ExperimentConfig) -> float:
    """Configured D, else the region diameter (at least h)."""
    if config.mixing.D is not None:
        return config.mixing.D
    grid = config.model.grid
    k = max(1, int(round(config.mixing.region_size / grid.h)))
    return max((k - 1) * grid.h * math.sqrt(grid.d), grid.h)


def _curve_args(config: ExperimentConfig, point: Any) -> Dict[str, float]:
    """Arguments of the bound curves at one sweep point."""
    kind = config.experiment
    if kind is ExperimentKind.VARIANCE_SCAN:
        return {"L": point}
    if kind is ExperimentKind.TAIL_SCAN:
        delta, L = point
        return {"delta": delta, "L": L}
    if kind is ExperimentKind.MIXING_SCAN:
        return {"R": point, "D": _mixing_scale(config)}
    if kind is ExperimentKind.COVARIANCE_SCAN:
        return {"x_norm": point}
    if kind is ExperimentKind.MOMENT_SCAN:
        return {"p": point}
    return {}


SweepResult = Tuple[List[ResultRow], List[FitPoint]]


def _variance_scan(config: ExperimentConfig) -> SweepResult:
    rows, points = [], []
    for L in config.sweep:
        logger.info("VarianceScan L=%g", L)
        est = variance_of_average(config.model, config.functional, config.average, L, config.replicates, config.seed)
        rows.append(_row(config, L, est))
        points.append(FitPoint(_curve_args(config, L), est.value, est.std_error, _point_id(config, L)))
    return rows, points


def _tail_scan(config: ExperimentConfig) -> SweepResult:
    rows, points = [], []
    cache: Dict[float, Tuple[List[float], set]] = {}
    for delta, L in config.sweep:
        logger.info("TailScan delta=%g L=%g", delta, L)
        if L not in cache:
            cache[L] = sample_averages(
                config.model, config.functional, config.average, L, config.replicates, config.seed
            )
        averages, flags = cache[L]
        est = proportion_estimate([x >= delta for x in averages], config.seed, flags)
        rows.append(_row(config, (delta, L), est))
        points.append(
            FitPoint(_curve_args(config, (delta, L)), est.value, est.std_error, _point_id(config, (delta, L)))
        )
    return rows, points


def _mixing_query(config: ExperimentConfig, R: float) -> MixingQuery:
    settings = config.mixing
    return MixingQuery(R, EventFamily(settings.levels, settings.region_size), settings.D)


def _mixing_scan(config: ExperimentConfig) -> SweepResult:
    rows, points = [], []
    for R in config.sweep:
        logger.info("MixingScan R=%g", R)
        est = mixing_coefficient(config.model, _mixing_query(config, R), config.replicates, config.seed)
        rows.append(_row(config, R, est))
        points.append(FitPoint(_curve_args(config, R), est.value, est.std_error, _point_id(config, R)))
    return rows, points


def _covariance_scan(config: ExperimentConfig) -> SweepResult:
    rows, points = [], []
    d = config.model.grid.d
    for lag in config.sweep:
        logger.info("CovarianceScan lag=%g", lag)
        vector = (lag,) + (0.0,) * (d - 1)
        est = empirical_covariance(config.model, vector, config.replicates, config.seed, mean=config.model.mean)
        rows.append(_row(config, lag, est))
        # The bound controls |C(x)|.
        points.append(FitPoint(_curve_args(config, lag), abs(est.value), est.std_error, _point_id(config, lag)))
    return rows, points


def _moment_scan(config: ExperimentConfig) -> SweepResult:
    rows, points = [], []
    averages, flags = sample_averages(
        config.model, config.functional, config.average, config.L, config.replicates, config.seed
    )
    for p in config.sweep:
        logger.info("MomentScan p=%d L=%g", p, config.L)
        est = mean_estimate([x ** (2 * p) for x in averages], config.seed, flags)
        rows.append(_row(config, p, est))
        points.append(FitPoint(_curve_args(config, p), est.value, est.std_error, _point_id(config, p)))
    return rows, points


def _ergodic_scan(config: ExperimentConfig) -> SweepResult:
    rows = []
    for R in config.sweep:
        logger.info("ErgodicScan R=%g", R)
        est = ergodic_fluctuation(config.model, config.functional, R, config.replicates, config.seed)
        rows.append(_row(config, R, est))
    return rows, []


def _oracle_check(config: ExperimentConfig) -> SweepResult:
    rows = []
    for n in config.sweep:
        spec = TinyFieldSpec.iid(n, config.oracle.law)
        check = efron_stein_check(spec, config.oracle.functional)
        logger.info("OracleCheck n=%d: Var=%s rhs=%s holds=%s", n, check.variance, check.rhs, check.holds)
        flags = {"exact", "efron-stein-holds" if check.holds else "efron-stein-violated"}
        est = Estimate(float(check.variance), 0.0, spec.configuration_count, config.seed, frozenset(flags))
        rows.append(_row(config, n, est))
    return rows, []


_SWEEPS: Dict[ExperimentKind, Callable[[ExperimentConfig], SweepResult]] = {
    ExperimentKind.VARIANCE_SCAN: _variance_scan,
    ExperimentKind.TAIL_SCAN: _tail_scan,
    ExperimentKind.MIXING_SCAN: _mixing_scan,
    ExperimentKind.COVARIANCE_SCAN: _covariance_scan,
    ExperimentKind.MOMENT_SCAN: _moment_scan,
    ExperimentKind.ERGODIC_SCAN: _ergodic_scan,
    ExperimentKind.ORACLE_CHECK: _oracle_check,
}


# ---------------------------------------------------------------------------
# Preflight and verdicts
# ---------------------------------------------------------------------------

def preflight(config: ExperimentConfig) -> None:
    """Reject incompatible combinations before any replicate is drawn."""
    for regime in config.regimes:
        if regime.kind not in ALLOWED_REGIMES[config.experiment]:
            raise ValidationError(
                "regimes", f"{regime.kind.value} cannot be confronted with {config.experiment.value}"
            )
        if config.weight is None and (
            regime.kind in _NEEDS_WEIGHT
            or (regime.kind in (RegimeKind.TAIL_MSG_FCT, RegimeKind.TAIL_MLSI_FCT) and "pi_star" not in regime.params)
        ):
            raise ValidationError("weight", f"{regime.kind.value} needs a weight family")

    if config.model is None:
        return
    grid = config.model.grid
    if config.functional.radius is not None:
        ball_stencil(grid, config.functional.radius)
    if config.experiment is ExperimentKind.MIXING_SCAN:
        for R in config.sweep:
            mixing_regions(grid, _mixing_query(config, R))
    elif config.experiment is ExperimentKind.COVARIANCE_SCAN:
        for lag in config.sweep:
            grid.lag_to_offset((lag,) + (0.0,) * (grid.d - 1))
    elif config.experiment is ExperimentKind.ERGODIC_SCAN:
        if config.sweep[-1] > grid.half_side:
            raise ValidationError("sweep", f"R must not exceed the torus half-side {grid.half_side}")
    elif config.experiment in (ExperimentKind.VARIANCE_SCAN, ExperimentKind.TAIL_SCAN, ExperimentKind.MOMENT_SCAN):
        scales = [config.L] if config.experiment is ExperimentKind.MOMENT_SCAN else [
            point[1] if isinstance(point, tuple) else point for point in config.sweep
        ]
        if any(not L > 0 for L in scales):
            raise ValidationError("sweep", "averaging scales must be positive")
    if config.experiment is ExperimentKind.MOMENT_SCAN and any(not 1 <= p <= 6 for p in config.sweep):
        raise ValidationError("sweep", "moment orders must lie in 1..6")

    if config.regimes and len(config.sweep) < MIN_FIT_POINTS:
        raise ValidationError("sweep", f"confronting a bound needs at least {MIN_FIT_POINTS} sweep points")
    # Every curve must evaluate at every point, so missing or bad regime parameters surface here.
    for regime in config.regimes:
        for point in config.sweep:
            evaluate(regime, _curve_args(config, point), config.weight, config.dimension)


def _regime_params(regime: BoundRegime) -> str:
    return ";".join(f"{k}={v:g}" for k, v in sorted(regime.params.items()) if k != "C")


def confront(config: ExperimentConfig, points: Sequence[FitPoint]) -> List[Verdict]:
    verdicts = []
    if not points:
        return verdicts
    for regime in config.regimes:
        fit = fit_constant(regime, points, config.weight, config.dimension)
        logger.info(
            "Verdict %s: C_fit=%.4g dominated=%s margin=%.3g worst=%s",
            regime.kind.value, fit.C_fit, fit.dominated, fit.margin, fit.worst_point,
        )
        verdicts.append(Verdict(regime.kind.value, _regime_params(regime), len(points), fit, config.config_hash))
    return verdicts


def _scaling(config: ExperimentConfig, rows: Sequence[ResultRow]) -> Optional[ScalingFit]:
    if config.experiment not in (
        ExperimentKind.VARIANCE_SCAN,
        ExperimentKind.ERGODIC_SCAN,
    ):
        return None
    try:
        return fit_scaling(rows, "param_value", "value")
    except ValidationError as exc:
        logger.debug("No scaling fit: %s", exc)
        return None


def run_experiment(config: ExperimentConfig, *, write: bool = True) -> Report:
    """Execute the sweep, confront the regimes and (optionally) write the report files."""
    start = time.perf_counter()
    logger.info("=" * 50)
    logger.info(
        "Starting %s: %d sweep point(s), %d replicates, seed %d",
        config.experiment.value, len(config.sweep), config.replicates, config.seed,
    )
    preflight(config)

    rows, points = _SWEEPS[config.experiment](config)
    verdicts = confront(config, points)
    scaling = _scaling(config, rows)
    if scaling is not None:
        logger.info("Log-log slope %.4f (residual %.3g)", scaling.slope, scaling.residual)

    elapsed = time.perf_counter() - start
    provenance = {
        "config_hash": config.config_hash,
        "seed": config.seed,
        "tool_version": __version__,
        "wall_time": round(elapsed, 3),
    }
    report = Report(rows, verdicts, provenance, scaling)
    if write:
        report.paths = ReportFormatter.write_report(report, config.output_dir)
    logger.info("%s completed in %.1fs", config.experiment.value, elapsed)
    return report
