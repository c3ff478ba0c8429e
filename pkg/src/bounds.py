"""
Predicted bound curves, the one-constant fit, and domination verdicts.

Each regime has exactly one free constant C; the curves are increasing in C,
which is what makes ``fit_constant`` a monotone root find.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from scipy import optimize

from .errors import ValidationError
from .weights import DimensionContext, WeightFamily, WeightKind, pi_star, tail_integral, weighted_integral

logger = logging.getLogger(__name__)

C_MIN = 1e-12
C_MAX = 1e12
MIN_FIT_POINTS = 3
# Domination slack in standard errors.
SE_SLACK = 3.0


class RegimeKind(str, Enum):
    VAR_MSG = "VarMSG"
    TAIL_MSG_FCT = "TailMSGfct"
    TAIL_MLSI_FCT = "TailMLSIfct"
    TAIL_OSC_ALG = "TailOscAlg"
    TAIL_OSC_EXP_SG = "TailOscExpSG"
    TAIL_OSC_EXP_LSI = "TailOscExpLSI"
    TAIL_MIXING = "TailMixing"
    COV_DECAY = "CovDecay"
    MIXING_DECAY = "MixingDecay"
    PSI_L = "PsiL"
    PSI_P0_ALPHA = "PsiP0Alpha"
    MOMENT_SG = "MomentSG"
    MOMENT_LSI = "MomentLSI"
    CONC_EXP = "ConcExp"
    CONC_GAUSS = "ConcGauss"
    CONC_POISSON = "ConcPoisson"
    CONC_P0_ALPHA = "ConcP0Alpha"

    @classmethod
    def parse(cls, value) -> "RegimeKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == key or member.name.lower() == key:
                return member
        raise ValidationError("regime.kind", f"unknown bound regime {value!r}")

    @property
    def fittable(self) -> bool:
        return self not in (RegimeKind.PSI_L, RegimeKind.PSI_P0_ALPHA)


# Named parameters each regime needs, besides its point arguments.
REQUIRED_PARAMS: Dict[RegimeKind, tuple] = {
    RegimeKind.VAR_MSG: ("C",),
    RegimeKind.TAIL_MSG_FCT: ("C",),
    RegimeKind.TAIL_MLSI_FCT: ("C",),
    RegimeKind.TAIL_OSC_ALG: ("C", "beta"),
    RegimeKind.TAIL_OSC_EXP_SG: ("C", "beta"),
    RegimeKind.TAIL_OSC_EXP_LSI: ("C", "beta"),
    RegimeKind.TAIL_MIXING: ("C", "beta"),
    RegimeKind.COV_DECAY: ("C",),
    RegimeKind.MIXING_DECAY: ("C",),
    RegimeKind.PSI_L: ("L_param", "C"),
    RegimeKind.PSI_P0_ALPHA: ("p0", "alpha"),
    RegimeKind.MOMENT_SG: ("C",),
    RegimeKind.MOMENT_LSI: ("C",),
    RegimeKind.CONC_EXP: ("C",),
    RegimeKind.CONC_GAUSS: ("C",),
    RegimeKind.CONC_POISSON: ("C", "L_param"),
    RegimeKind.CONC_P0_ALPHA: ("C", "p0", "alpha"),
}


@dataclass(frozen=True)
class BoundRegime:
    kind: RegimeKind
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", RegimeKind.parse(self.kind))
        params = {}
        for k, v in dict(self.params).items():
            try:
                params[str(k)] = float(v)
            except (TypeError, ValueError):
                raise ValidationError(f"regime.{k}", f"parameter value {v!r} is not numeric")
        for name in REQUIRED_PARAMS[self.kind]:
            if name not in params:
                raise ValidationError(f"regime.{name}", f"{self.kind.value} requires parameter {name}")
        if "C" in params and not params["C"] > 0:
            raise ValidationError("regime.C", "must be positive")
        object.__setattr__(self, "params", params)

    def get(self, name: str, default: Optional[float] = None) -> Optional[float]:
        return self.params.get(name, default)

    def require(self, name: str) -> float:
        if name not in self.params:
            raise ValidationError(f"regime.{name}", f"{self.kind.value} requires parameter {name}")
        return self.params[name]

    def with_constant(self, C: float) -> "BoundRegime":
        params = dict(self.params)
        params["C"] = C
        return replace(self, params=params)

    @property
    def C(self) -> float:
        return self.params["C"]


@dataclass(frozen=True)
class FitPoint:
    """One empirical value (with standard error) at the curve arguments ``args``."""

    args: Mapping[str, float]
    value: float
    std_error: float = 0.0
    point_id: str = ""

    @property
    def target(self) -> float:
        return self.value + SE_SLACK * self.std_error


@dataclass(frozen=True)
class FitResult:
    C_fit: float
    dominated: bool
    margin: float
    worst_point: Optional[str] = None


# ---------------------------------------------------------------------------
# Shape helpers
# ---------------------------------------------------------------------------

def _positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0:
        raise ValidationError(name, f"must be positive, got {value}")
    return value


def _dimension(regime: BoundRegime, ctx: Optional[DimensionContext]) -> int:
    if "d" in regime.params:
        return int(regime.params["d"])
    if ctx is None:
        raise ValidationError("regime.d", f"{regime.kind.value} requires parameter d")
    return ctx.d


def _pi_star_at(regime: BoundRegime, L: float, w: Optional[WeightFamily], ctx: Optional[DimensionContext]) -> float:
    if "pi_star" in regime.params:
        return regime.params["pi_star"]
    if w is None or ctx is None:
        raise ValidationError("regime.pi_star", f"{regime.kind.value} needs pi_star or a weight family")
    return pi_star(w, ctx, L)


def _osc_rate(regime: BoundRegime, delta: float) -> float:
    """min(delta, delta^2), or delta^2 / C0 for bounded functionals."""
    C0 = regime.get("C0")
    if C0 is not None:
        return delta * delta / _positive("regime.C0", C0)
    return min(delta, delta * delta)


def psi_L(u: float, L_param: float, C: float) -> float:
    """(u/L) log(1 + L u / C)."""
    return (u / L_param) * math.log1p(L_param * u / C)


def psi_p0_alpha(u: float, p0: float, alpha: float) -> float:
    """min(1, u^(2 p0)) exp(u^(2/(2+alpha)))."""
    return min(1.0, u ** (2.0 * p0)) * math.exp(u ** (2.0 / (2.0 + alpha)))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def predicted_variance(w: WeightFamily, ctx: DimensionContext, L: float) -> float:
    """pi_*(L)^-1."""
    return 1.0 / pi_star(w, ctx, L)


def predicted_tail(
    regime: BoundRegime,
    delta: float,
    L: float,
    w: Optional[WeightFamily] = None,
    ctx: Optional[DimensionContext] = None,
) -> float:
    """Right-hand side of the regime's tail bound P[X_L >= delta]."""
    delta = _positive("delta", delta)
    L = _positive("L", L)
    C = regime.C
    kind = regime.kind

    if kind is RegimeKind.TAIL_MSG_FCT:
        return math.exp(-(delta / C) * math.sqrt(_pi_star_at(regime, L, w, ctx)))
    if kind is RegimeKind.TAIL_MLSI_FCT:
        return math.exp(-(delta * delta / C) * _pi_star_at(regime, L, w, ctx))

    beta = regime.require("beta")
    d = _dimension(regime, ctx)
    if kind is RegimeKind.TAIL_OSC_ALG:
        correction = 1.0 + delta ** (-2.0 * beta / d) * abs(math.log(delta))
        return C * math.exp(-delta / C) * correction * L ** (-beta)
    if kind is RegimeKind.TAIL_OSC_EXP_SG:
        return math.exp(-_osc_rate(regime, delta) / C * L ** min(beta, d / 2.0))
    if kind is RegimeKind.TAIL_OSC_EXP_LSI:
        return math.exp(-_osc_rate(regime, delta) / C * L ** min(beta, float(d)))
    if kind is RegimeKind.TAIL_MIXING:
        exponent = d * beta / (d + beta)
        rate = delta * delta * (abs(math.log(delta)) + 1.0) ** (-exponent) * L ** exponent
        return C * math.exp(-rate / C)
    raise ValidationError("regime.kind", f"{kind.value} is not a tail regime")


def predicted_covariance_decay(w: WeightFamily, x_norm: float, C: float) -> float:
    """C * int_{max((|x|-2)/2, 0)}^inf pi."""
    if x_norm < 0:
        raise ValidationError("x_norm", "must be >= 0")
    return C * tail_integral(w, max((x_norm - 2.0) / 2.0, 0.0))


def predicted_mixing(w: WeightFamily, ctx: DimensionContext, R: float, D: float, C: float) -> float:
    """C (1 + D/R)^d int_{max(R-1, 0)}^inf pi."""
    R = _positive("R", R)
    D = _positive("D", D)
    return C * (1.0 + D / R) ** ctx.d * tail_integral(w, max(R - 1.0, 0.0))


def predicted_weighted_covariance(w: WeightFamily, ctx: DimensionContext, alpha: float, C: float) -> float:
    """Bound on int (1+|x|)^-alpha |C(x)| dx, split on alpha against d.

    Returns inf when the weighted integral diverges for an algebraic weight.
    """
    d = ctx.d
    if alpha < d:
        if w.kind is WeightKind.ALGEBRAIC and d - alpha >= w.beta:
            return math.inf
        return C * weighted_integral(w, lambda s: (s + 1.0) ** (d - alpha))
    if alpha == d:
        return C * weighted_integral(w, lambda s: math.log(2.0 + s) ** 2)
    return C * tail_integral(w, 0.0)


def psi_functions(kind: RegimeKind, u: float, params: Mapping[str, float]) -> float:
    regime = BoundRegime(kind, params)
    if u < 0:
        raise ValidationError("u", "must be >= 0")
    if regime.kind is RegimeKind.PSI_L:
        return psi_L(u, _positive("L_param", regime.params["L_param"]), regime.C)
    if regime.kind is RegimeKind.PSI_P0_ALPHA:
        return psi_p0_alpha(u, regime.params["p0"], regime.params["alpha"])
    raise ValidationError("regime.kind", f"{regime.kind.value} is not a psi function")


def moment_growth_shape(kind: RegimeKind, p: int, C: float, base: float) -> float:
    """(C p^2)^p base^p for MomentSG, (C p)^p base^p for MomentLSI."""
    kind = RegimeKind.parse(kind)
    if p < 1:
        raise ValidationError("p", "must be >= 1")
    if not base > 0:
        raise ValidationError("base", "must be positive")
    if kind is RegimeKind.MOMENT_SG:
        return (C * p * p) ** p * base ** p
    if kind is RegimeKind.MOMENT_LSI:
        return (C * p) ** p * base ** p
    raise ValidationError("regime.kind", f"{kind.value} is not a moment regime")


def concentration_bound(regime: BoundRegime, r: float) -> float:
    """Nonlinear concentration shapes as functions of the deviation r."""
    if r < 0:
        raise ValidationError("r", "must be >= 0")
    C = regime.C
    kind = regime.kind
    if kind is RegimeKind.CONC_EXP:
        return math.exp(-r / C)
    if kind is RegimeKind.CONC_GAUSS:
        return math.exp(-max(r * r, r) / C)
    if kind is RegimeKind.CONC_POISSON:
        return math.exp(-psi_L(r, regime.params["L_param"], C) / C)
    if kind is RegimeKind.CONC_P0_ALPHA:
        kappa = regime.get("kappa", 1.0)
        u = r / C
        if u == 0:
            return 1.0
        # psi_{p0,alpha} overflows for small C; compare in logs
        log_psi = 2.0 * regime.params["p0"] * min(0.0, math.log(u)) + u ** (2.0 / (2.0 + regime.params["alpha"]))
        return math.exp(min(0.0, math.log(C * kappa) - log_psi))
    raise ValidationError("regime.kind", f"{kind.value} is not a concentration regime")


def _arg(args: Mapping[str, float], name: str, regime: BoundRegime) -> float:
    if name in args:
        return float(args[name])
    if name in regime.params:
        return regime.params[name]
    raise ValidationError(name, f"{regime.kind.value} needs argument {name}")


def evaluate(
    regime: BoundRegime,
    args: Mapping[str, float],
    w: Optional[WeightFamily] = None,
    ctx: Optional[DimensionContext] = None,
) -> float:
    """Value of the regime's curve at the point ``args`` (delta, L, x_norm, R, D, p, base, u or r)."""
    kind = regime.kind
    if kind is RegimeKind.VAR_MSG:
        if w is None or ctx is None:
            raise ValidationError("weight", "VarMSG needs a weight family")
        return regime.C * predicted_variance(w, ctx, _arg(args, "L", regime))
    if kind in (
        RegimeKind.TAIL_MSG_FCT,
        RegimeKind.TAIL_MLSI_FCT,
        RegimeKind.TAIL_OSC_ALG,
        RegimeKind.TAIL_OSC_EXP_SG,
        RegimeKind.TAIL_OSC_EXP_LSI,
        RegimeKind.TAIL_MIXING,
    ):
        return predicted_tail(regime, _arg(args, "delta", regime), _arg(args, "L", regime), w, ctx)
    if kind is RegimeKind.COV_DECAY:
        if w is None:
            raise ValidationError("weight", "CovDecay needs a weight family")
        return predicted_covariance_decay(w, _arg(args, "x_norm", regime), regime.C)
    if kind is RegimeKind.MIXING_DECAY:
        if w is None or ctx is None:
            raise ValidationError("weight", "MixingDecay needs a weight family")
        return predicted_mixing(w, ctx, _arg(args, "R", regime), _arg(args, "D", regime), regime.C)
    if kind in (RegimeKind.PSI_L, RegimeKind.PSI_P0_ALPHA):
        return psi_functions(kind, _arg(args, "u", regime), regime.params)
    if kind in (RegimeKind.MOMENT_SG, RegimeKind.MOMENT_LSI):
        return moment_growth_shape(kind, int(_arg(args, "p", regime)), regime.C, _arg(args, "base", regime))
    return concentration_bound(regime, _arg(args, "r", regime))


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _solve_point(curve: Callable[[float], float], target: float) -> Optional[float]:
    """Smallest C with curve(C) >= target, or None when C_MAX does not reach it."""
    if curve(C_MIN) >= target:
        return C_MIN
    if curve(C_MAX) < target:
        return None
    log_c = optimize.brentq(
        lambda t: curve(math.exp(t)) - target,
        math.log(C_MIN),
        math.log(C_MAX),
        xtol=1e-14,
        maxiter=500,
    )
    return math.exp(log_c)


def _log_margin(bound: float, target: float) -> float:
    if bound <= 0:
        return -math.inf
    return math.log(bound) - math.log(target)


def fit_constant(
    regime: BoundRegime,
    points: Sequence[FitPoint],
    w: Optional[WeightFamily] = None,
    ctx: Optional[DimensionContext] = None,
) -> FitResult:
    """Smallest C whose curve dominates every point's value plus 3 standard errors.

    The margin is the minimum over points of log(bound) - log(value + 3 se);
    points whose target is not positive are trivially dominated.
    """
    if not regime.kind.fittable:
        raise ValidationError("regime.kind", f"{regime.kind.value} has no fit slot")
    if len(points) < MIN_FIT_POINTS:
        raise ValidationError("points", f"a fit needs at least {MIN_FIT_POINTS} points, got {len(points)}")

    def _curve(point: FitPoint) -> Callable[[float], float]:
        return lambda C: evaluate(regime.with_constant(C), point.args, w, ctx)

    solved: List[Optional[float]] = []
    for point in points:
        solved.append(_solve_point(_curve(point), point.target) if point.target > 0 else C_MIN)

    infeasible = [p for p, c in zip(points, solved) if c is None]
    if infeasible:
        C_fit = C_MAX
    else:
        C_fit = max(solved) * (1.0 + 1e-10)

    margins = []
    for index, point in enumerate(points):
        if point.target <= 0:
            continue
        bound = _curve(point)(C_fit)
        margins.append((_log_margin(bound, point.target), point.point_id or str(index)))

    if not margins:
        return FitResult(C_fit, True, math.inf, None)
    margin, worst = min(margins, key=lambda item: item[0])
    if infeasible:
        logger.warning("%s cannot dominate point %s for any C <= %g", regime.kind.value, worst, C_MAX)
    return FitResult(C_fit, margin >= 0, margin, worst)
