"""
Local functionals f(A), the transformed field F(x) = f(A(.+x)), and the
spatial averages X_L measured by every concentration experiment.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache, reduce
from typing import Any, Dict, Optional

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .fields.base import BaseFieldModel, FieldSample, GridSpec, derive_seed
from .montecarlo import Estimate, mean_estimate, replicate_map
from .weights import DimensionContext, integrate_to_infinity

logger = logging.getLogger(__name__)

# Cells at exactly the ball radius belong to the ball.
_RADIUS_SLACK = 1e-9


class FunctionalKind(str, Enum):
    CELL_VALUE = "cell_value"
    BALL_AVERAGE = "ball_average"
    THRESHOLD = "threshold"

    @classmethod
    def parse(cls, value) -> "FunctionalKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "")
        for member in cls:
            if member.value.replace("_", "") == key:
                return member
        raise ValidationError("functional.kind", f"unknown functional {value!r}")


class AverageKind(str, Enum):
    EXP_KERNEL = "exp_kernel"
    BOX = "box"

    @classmethod
    def parse(cls, value) -> "AverageKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "")
        for member in cls:
            if member.value.replace("_", "") == key:
                return member
        raise ValidationError("average", f"unknown average kind {value!r}")


@dataclass(frozen=True)
class LocalFunctional:
    """CellValue, BallAverage(radius) or Threshold(radius, level).

    Threshold is the indicator that the ball average exceeds ``level``;
    it is bounded by C0 = 1 on every field.
    """

    kind: FunctionalKind
    radius: Optional[float] = None
    level: Optional[float] = None
    locality_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FunctionalKind.parse(self.kind))
        if self.kind is FunctionalKind.CELL_VALUE:
            object.__setattr__(self, "radius", None)
        elif self.radius is None or not self.radius > 0:
            raise ValidationError("functional.radius", f"{self.kind.value} needs radius > 0")
        if self.kind is FunctionalKind.THRESHOLD:
            if self.level is None or not math.isfinite(self.level):
                raise ValidationError("functional.level", "threshold needs a finite level")
        if not self.locality_radius > 0:
            raise ValidationError("functional.locality_radius", "must be positive")

    @classmethod
    def cell_value(cls) -> "LocalFunctional":
        return cls(FunctionalKind.CELL_VALUE)

    @classmethod
    def ball_average(cls, radius: float) -> "LocalFunctional":
        return cls(FunctionalKind.BALL_AVERAGE, radius=radius)

    @classmethod
    def threshold(cls, radius: float, level: float) -> "LocalFunctional":
        return cls(FunctionalKind.THRESHOLD, radius=radius, level=level)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LocalFunctional":
        if "kind" not in data:
            raise ValidationError("functional.kind", "missing")
        radius = data.get("radius")
        level = data.get("level")
        return cls(
            FunctionalKind.parse(data["kind"]),
            radius=None if radius is None else float(radius),
            level=None if level is None else float(level),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "radius": self.radius, "level": self.level}

    @property
    def label(self) -> str:
        if self.kind is FunctionalKind.CELL_VALUE:
            return "cell_value"
        if self.kind is FunctionalKind.BALL_AVERAGE:
            return f"ball_average(r={self.radius:g})"
        return f"threshold(r={self.radius:g},level={self.level:g})"

    @property
    def support_radius(self) -> float:
        return 0.0 if self.radius is None else self.radius

    @property
    def is_exactly_local(self) -> bool:
        """f(A) is measurable with respect to A on B_{locality_radius}."""
        return self.support_radius <= self.locality_radius

    def bound(self, model_bound: Optional[float] = None) -> Optional[float]:
        """Deterministic C0 >= sup|f|, given the field's own bound if any."""
        if self.kind is FunctionalKind.THRESHOLD:
            return 1.0
        return model_bound

    def analytic_mean(self, model: BaseFieldModel) -> Optional[float]:
        """E[F] when it follows from the model; None means a pooled estimate is needed."""
        if self.kind is FunctionalKind.THRESHOLD:
            return None
        return model.mean


# ---------------------------------------------------------------------------
# Transformed field
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def ball_stencil(grid: GridSpec, radius: float) -> np.ndarray:
    """Normalized indicator of the cells within ``radius`` of the centre cell."""
    m = int(math.floor(radius / grid.h + _RADIUS_SLACK))
    if 2 * m >= grid.N:
        raise ValidationError("functional.radius", f"radius {radius} exceeds the torus half-side")
    offsets = np.arange(-m, m + 1) * grid.h
    axes = np.meshgrid(*([offsets] * grid.d), indexing="ij", sparse=True)
    dist = np.sqrt(sum(a * a for a in axes))
    stencil = (dist <= radius + _RADIUS_SLACK * grid.h).astype(float)
    stencil /= stencil.sum()
    stencil.setflags(write=False)
    return stencil


def ball_mask(grid: GridSpec, radius: float) -> np.ndarray:
    """Cells at torus distance <= radius from the origin (closed ball)."""
    return grid.torus_distance() <= radius + _RADIUS_SLACK * grid.h


def _check_radius(f: LocalFunctional, grid: GridSpec) -> None:
    if f.support_radius > grid.half_side:
        raise ValidationError("functional.radius", f"radius {f.support_radius} exceeds half-side {grid.half_side}")


def transform_field(f: LocalFunctional, A: FieldSample) -> FieldSample:
    """F(x) = f(A(.+x)) on the whole torus."""
    _check_radius(f, A.grid)
    if f.kind is FunctionalKind.CELL_VALUE:
        values = A.values
    else:
        values = ndimage.convolve(A.values, ball_stencil(A.grid, f.radius), mode="wrap")
        if f.kind is FunctionalKind.THRESHOLD:
            values = (values > f.level).astype(float)
    return A.with_values(values, model_tag=f"{A.model_tag}|{f.label}")


def evaluate_at_origin(f: LocalFunctional, A: FieldSample) -> float:
    """f(A), i.e. the transformed field at the origin cell, without transforming the torus."""
    _check_radius(f, A.grid)
    if f.kind is FunctionalKind.CELL_VALUE:
        return float(A.values[(0,) * A.grid.d])
    value = float(np.mean(A.values[ball_mask(A.grid, f.radius)]))
    if f.kind is FunctionalKind.THRESHOLD:
        return 1.0 if value > f.level else 0.0
    return value


# ---------------------------------------------------------------------------
# Spatial averages
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def averaging_kernel(grid: GridSpec, L: float, kind: AverageKind) -> np.ndarray:
    """Weights k(y) with X_L = sum_y k(y) (F(y) - mean_F).

    ExpKernel: h^d L^-d exp(-|y|/L) with the torus distance |y|.
    Box: the normalized indicator of the cells with -L/2 <= o*h < L/2 on every axis.
    """
    if not L > 0:
        raise ValidationError("L", "must be positive")
    kind = AverageKind.parse(kind)
    if kind is AverageKind.EXP_KERNEL:
        kernel = grid.cell_volume * L ** (-grid.d) * np.exp(-grid.torus_distance() / L)
    else:
        offsets = grid.axis_offsets() * grid.h
        inside = (offsets >= -0.5 * L) & (offsets < 0.5 * L)
        axes = np.meshgrid(*([inside] * grid.d), indexing="ij", sparse=True)
        mask = np.broadcast_to(reduce(np.logical_and, axes), grid.shape)
        kernel = mask / np.count_nonzero(mask)
    kernel = np.ascontiguousarray(kernel, dtype=float)
    kernel.setflags(write=False)
    return kernel


def kernel_truncated(grid: GridSpec, L: float, kind: AverageKind) -> bool:
    """True when the torus cuts the averaging window (flag "kernel-truncation")."""
    if AverageKind.parse(kind) is AverageKind.EXP_KERNEL:
        return L > grid.half_side
    return L > grid.side_length


def spatial_average(F: FieldSample, mean_F: float, L: float, kind: AverageKind) -> float:
    """X_L centred at the origin cell, with the externally supplied mean_F."""
    kernel = averaging_kernel(F.grid, float(L), AverageKind.parse(kind))
    return float(np.sum(kernel * (F.values - mean_F)))


def raw_average(F: FieldSample, L: float, kind: AverageKind) -> float:
    """sum_y k(y) F(y); X_L = raw_average - mean_F * kernel_mass."""
    return float(np.sum(averaging_kernel(F.grid, float(L), AverageKind.parse(kind)) * F.values))


def kernel_mass(grid: GridSpec, L: float, kind: AverageKind) -> float:
    return float(np.sum(averaging_kernel(grid, float(L), AverageKind.parse(kind))))


def ergodic_average(sample: FieldSample, f: LocalFunctional, R: float) -> float:
    """Discrete average of F over the closed ball B_R around the origin."""
    if not 0 < R <= sample.grid.half_side:
        raise ValidationError("R", f"must lie in (0, {sample.grid.half_side}]")
    F = transform_field(f, sample)
    return float(np.mean(F.values[ball_mask(sample.grid, R)]))


# ---------------------------------------------------------------------------
# Locality
# ---------------------------------------------------------------------------

def locality_defect(
    f: LocalFunctional,
    model: BaseFieldModel,
    ell: float,
    replicates: int,
    seed: int,
) -> Estimate:
    """Max over replicates of |f(A) - f(A')|, A' equal to A on B_ell and redrawn outside."""
    if replicates < 2:
        raise ValidationError("replicates", "locality defect needs at least 2 replicates")
    if ell < 0:
        raise ValidationError("ell", "must be >= 0")

    def _one(_index: int, stream_seed: int) -> float:
        A = model.sample(stream_seed)
        resampled = model.resample_exterior(stream_seed, derive_seed(stream_seed, 1), ell)
        return abs(evaluate_at_origin(f, A) - evaluate_at_origin(f, resampled))

    defects = replicate_map(_one, replicates, seed)
    spread = mean_estimate(defects, seed)
    return Estimate(max(defects), spread.std_error, replicates, seed, frozenset({"max-statistic"}))


def derivative_profile(ell: float, x_norm: float, L: float, ctx: DimensionContext, C_loc: float) -> float:
    """L^-d (L ^ (ell+1))^d exp(-|x| / (C (L+ell+1)))."""
    if ell < 0 or x_norm < 0:
        raise ValidationError("ell", "ell and x_norm must be >= 0")
    if not L > 0 or not C_loc > 0:
        raise ValidationError("L", "L and C_loc must be positive")
    d = ctx.d
    return L ** (-d) * min(L, ell + 1.0) ** d * math.exp(-x_norm / (C_loc * (L + ell + 1.0)))


def derivative_profile_integral(ell: float, L: float, ctx: DimensionContext, C_loc: float) -> float:
    """Integral of derivative_profile over R^d by radial quadrature."""
    scale = C_loc * (L + ell + 1.0)
    d = ctx.d
    radial = integrate_to_infinity(
        lambda s: s ** (d - 1) * derivative_profile(ell, scale * s, L, ctx, C_loc), 0.0
    )
    return ctx.sphere_area_unit * scale ** d * radial


def derivative_profile_integral_closed(ell: float, L: float, ctx: DimensionContext, C_loc: float) -> float:
    d = ctx.d
    peak = derivative_profile(ell, 0.0, L, ctx, C_loc)
    return peak * ctx.sphere_area_unit * math.gamma(d) * (C_loc * (L + ell + 1.0)) ** d
