"""
Weight functions pi(l) of multiscale inequalities and the scalar quantities
derived from them: tail integrals, pi_*, and the asymptotic equivalents of pi_*.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Optional, Sequence

from scipy import integrate, special

from .config import Config
from .errors import QuadratureError, ValidationError

logger = logging.getLogger(__name__)

_SUPPORTED_DIMENSIONS = (1, 2, 3)


class WeightKind(str, Enum):
    ALGEBRAIC = "algebraic"
    STRETCHED_EXP = "stretched_exp"
    COMPACT = "compact"

    @classmethod
    def parse(cls, value: str) -> "WeightKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "algebraic": cls.ALGEBRAIC,
            "stretchedexp": cls.STRETCHED_EXP,
            "stretched_exp": cls.STRETCHED_EXP,
            "compact": cls.COMPACT,
        }
        if key not in aliases:
            raise ValidationError("weight.kind", f"unknown weight family {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class WeightFamily:
    """A parametric weight pi.

    Algebraic(beta):        normalization * (l+1)^(-1-beta)
    StretchedExp(beta, c):  normalization * exp(-l^beta / c)
    Compact(R):             normalization * 1[l <= R]
    """

    kind: WeightKind
    beta: Optional[float] = None
    c: Optional[float] = None
    R: Optional[float] = None
    normalization: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind.parse(self.kind))
        if not (self.normalization > 0 and math.isfinite(self.normalization)):
            raise ValidationError("weight.normalization", "must be a positive real")
        if self.kind in (WeightKind.ALGEBRAIC, WeightKind.STRETCHED_EXP):
            if self.beta is None or not self.beta > 0:
                raise ValidationError("weight.beta", f"{self.kind.value} needs beta > 0")
        if self.kind is WeightKind.STRETCHED_EXP:
            if self.c is None or not self.c > 0:
                raise ValidationError("weight.c", "stretched_exp needs c > 0")
        if self.kind is WeightKind.COMPACT:
            if self.R is None or not self.R > 0:
                raise ValidationError("weight.R", "compact needs R > 0")

    # -- constructors ------------------------------------------------------

    @classmethod
    def algebraic(cls, beta: float, normalization: float = 1.0) -> "WeightFamily":
        return cls(WeightKind.ALGEBRAIC, beta=beta, normalization=normalization)

    @classmethod
    def stretched_exp(cls, beta: float, c: float, normalization: float = 1.0) -> "WeightFamily":
        return cls(WeightKind.STRETCHED_EXP, beta=beta, c=c, normalization=normalization)

    @classmethod
    def compact(cls, R: float, normalization: float = 1.0) -> "WeightFamily":
        return cls(WeightKind.COMPACT, R=R, normalization=normalization)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WeightFamily":
        if "kind" not in data:
            raise ValidationError("weight.kind", "missing")

        def _opt(key):
            value = data.get(key)
            return None if value is None else float(value)

        return cls(
            WeightKind.parse(data["kind"]),
            beta=_opt("beta"),
            c=_opt("c"),
            R=_opt("R"),
            normalization=float(data.get("normalization", 1.0)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "beta": self.beta,
            "c": self.c,
            "R": self.R,
            "normalization": self.normalization,
        }

    @property
    def label(self) -> str:
        if self.kind is WeightKind.ALGEBRAIC:
            return f"algebraic(beta={self.beta:g})"
        if self.kind is WeightKind.STRETCHED_EXP:
            return f"stretched_exp(beta={self.beta:g},c={self.c:g})"
        return f"compact(R={self.R:g})"


@dataclass(frozen=True)
class DimensionContext:
    """Ambient dimension d together with the unit-ball volume |B_1|."""

    d: int
    ball_volume_unit: float = field(default=None)

    def __post_init__(self):
        if self.d not in _SUPPORTED_DIMENSIONS:
            raise ValidationError("d", f"dimension must be one of {_SUPPORTED_DIMENSIONS}")
        exact = unit_ball_volume(self.d)
        if self.ball_volume_unit is None:
            object.__setattr__(self, "ball_volume_unit", exact)
        elif not math.isclose(self.ball_volume_unit, exact, rel_tol=1e-12):
            raise ValidationError(
                "ball_volume_unit", f"{self.ball_volume_unit} != |B_1| = {exact} in d={self.d}"
            )

    @property
    def sphere_area_unit(self) -> float:
        """Surface measure of the unit sphere, d * |B_1|."""
        return self.d * self.ball_volume_unit


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def quad(
    fn: Callable[[float], float],
    a: float,
    b: float,
    *,
    points: Optional[Sequence[float]] = None,
) -> float:
    """scipy adaptive quadrature with the configured tolerances.

    Raises QuadratureError when scipy reports a failure whose error estimate
    misses the tolerance.
    """
    kwargs = dict(
        epsabs=Config.QUAD_EPSABS,
        epsrel=Config.QUAD_EPSREL,
        limit=Config.QUAD_LIMIT,
        full_output=1,
    )
    if points:
        inner = sorted(p for p in points if a < p < b)
        if inner:
            kwargs["points"] = inner
    result = integrate.quad(fn, a, b, **kwargs)
    value, abserr = result[0], result[1]
    if len(result) > 3:
        tolerance = max(Config.QUAD_EPSABS, 1e-8 * abs(value))
        if not math.isfinite(value) or abserr > tolerance:
            raise QuadratureError(
                f"quadrature on [{a}, {b}] failed: {result[3]} (estimate {value}, error {abserr})"
            )
        logger.debug("quadrature warning accepted on [%s, %s]: %s", a, b, result[3])
    return float(value)


def integrate_to_infinity(fn: Callable[[float], float], r: float) -> float:
    """Integral of fn over [r, inf) through the substitution t = 1/(1+s-r)."""

    def integrand(t: float) -> float:
        if t <= 0.0:
            return 0.0
        return fn(r + (1.0 - t) / t) / (t * t)

    return quad(integrand, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def _check_nonneg(name: str, value: float) -> float:
    value = float(value)
    if not value >= 0 or math.isnan(value):
        raise ValidationError(name, f"must be >= 0, got {value}")
    return value


def _raw_weight(w: WeightFamily, ell: float) -> float:
    if w.kind is WeightKind.ALGEBRAIC:
        return w.normalization * (ell + 1.0) ** (-1.0 - w.beta)
    if w.kind is WeightKind.STRETCHED_EXP:
        return w.normalization * math.exp(-(ell ** w.beta) / w.c)
    return w.normalization if ell <= w.R else 0.0


def eval_weight(w: WeightFamily, ell: float) -> float:
    """pi(ell) per the family formula."""
    return _raw_weight(w, _check_nonneg("ell", ell))


def _tail_closed_form(w: WeightFamily, r: float) -> float:
    if w.kind is WeightKind.ALGEBRAIC:
        return w.normalization * (r + 1.0) ** (-w.beta) / w.beta
    if w.kind is WeightKind.STRETCHED_EXP:
        a = 1.0 / w.beta
        # int_r^inf exp(-s^beta/c) ds = c^(1/beta) Gamma(1 + 1/beta) Q(1/beta, r^beta/c)
        return (
            w.normalization
            * w.c ** a
            * special.gamma(1.0 + a)
            * special.gammaincc(a, r ** w.beta / w.c)
        )
    return w.normalization * max(w.R - r, 0.0)


def _tail_quadrature(w: WeightFamily, r: float) -> float:
    if w.kind is WeightKind.COMPACT:
        if r >= w.R:
            return 0.0
        return quad(lambda s: _raw_weight(w, s), r, w.R)
    return integrate_to_infinity(lambda s: _raw_weight(w, s), r)


def tail_integral(w: WeightFamily, r: float, method: str = "auto") -> float:
    """int_r^inf pi(l) dl.

    ``method`` is "auto"/"closed" for the closed form or "quadrature" for the
    adaptive path; the two agree to 1e-8 relative.
    """
    r = _check_nonneg("r", r)
    if method in ("auto", "closed"):
        return float(_tail_closed_form(w, r))
    if method == "quadrature":
        return _tail_quadrature(w, r)
    raise ValidationError("method", f"unknown tail integral method {method!r}")


def weighted_integral(w: WeightFamily, g: Callable[[float], float]) -> float:
    """int_0^inf g(l) pi(l) dl."""
    if w.kind is WeightKind.COMPACT:
        return quad(lambda s: g(s) * _raw_weight(w, s), 0.0, w.R)
    return integrate_to_infinity(lambda s: g(s) * _raw_weight(w, s), 0.0)


def ball_average_of_tail(w: WeightFamily, ctx: DimensionContext, ell: float) -> float:
    """Average over B_ell of x -> tail_integral(w, |x|), reduced to a radial integral.

    (1/|B_ell|) int_{B_ell} T(|x|) dx = d * int_0^1 u^(d-1) T(ell*u) du
    """
    ell = _check_nonneg("ell", ell)
    if ell == 0.0:
        return _tail_closed_form(w, 0.0)
    d = ctx.d
    points = None
    if w.kind is WeightKind.COMPACT and w.R < ell:
        points = [w.R / ell]
    return d * quad(lambda u: u ** (d - 1) * _tail_closed_form(w, ell * u), 0.0, 1.0, points=points)


def pi_star(w: WeightFamily, ctx: DimensionContext, ell: float) -> float:
    """pi_*(ell) = (avg_{B_ell} int_{|x|}^inf pi)^(-1); ell = 0 is the degenerate-ball limit."""
    return 1.0 / ball_average_of_tail(w, ctx, ell)


def pi_star_asymptotic(beta: float, ctx: DimensionContext, ell: float) -> float:
    """Three-case equivalent of pi_* for pi(l) ~ (l+1)^(-1-beta)."""
    if not beta > 0:
        raise ValidationError("beta", "must be > 0")
    ell = _check_nonneg("ell", ell)
    d = ctx.d
    if math.isclose(beta, d, rel_tol=0.0, abs_tol=1e-12):
        return (ell + 1.0) ** d / math.log(2.0 + ell)
    if beta < d:
        return (ell + 1.0) ** beta
    return (ell + 1.0) ** d
