"""
Boolean model: indicator of a union of balls centred at Poisson points on the torus.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import stats

from ..errors import ValidationError
from ..weights import unit_ball_volume
from .base import BaseFieldModel, FieldSample, GridSpec, minimal_image, spawn_rngs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RadiusLaw:
    """Fixed(r) or ParetoTail(r0, a) with P[radius > t] = (r0/t)^a for t >= r0."""

    kind: str
    r: Optional[float] = None
    r0: Optional[float] = None
    a: Optional[float] = None

    def __post_init__(self):
        kind = str(self.kind).strip().lower()
        aliases = {"fixed": "fixed", "pareto": "pareto", "paretotail": "pareto", "pareto_tail": "pareto"}
        if kind not in aliases:
            raise ValidationError("radius_law.kind", f"unknown radius law {self.kind!r}")
        object.__setattr__(self, "kind", aliases[kind])
        if self.kind == "fixed" and not (self.r is not None and self.r > 0):
            raise ValidationError("radius_law.r", "fixed radius must be > 0")
        if self.kind == "pareto":
            if not (self.r0 is not None and self.r0 > 0):
                raise ValidationError("radius_law.r0", "must be > 0")
            if not (self.a is not None and self.a > 0):
                raise ValidationError("radius_law.a", "must be > 0")

    @classmethod
    def fixed(cls, r: float) -> "RadiusLaw":
        return cls("fixed", r=r)

    @classmethod
    def pareto(cls, r0: float, a: float) -> "RadiusLaw":
        return cls("pareto", r0=r0, a=a)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RadiusLaw":
        def _opt(key):
            return None if data.get(key) is None else float(data[key])

        return cls(data.get("kind", "fixed"), r=_opt("r"), r0=_opt("r0"), a=_opt("a"))

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "fixed":
            return {"kind": "fixed", "r": self.r}
        return {"kind": "pareto", "r0": self.r0, "a": self.a}

    @property
    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed(r={self.r:g})"
        return f"pareto(r0={self.r0:g},a={self.a:g})"

    def check_dimension(self, d: int) -> None:
        if self.kind == "pareto" and not self.a > d:
            raise ValidationError(
                "radius_law.a", f"Pareto exponent a={self.a} must exceed d={d} (finite mean ball volume)"
            )

    def moment(self, d: int) -> float:
        """E[radius^d]."""
        if self.kind == "fixed":
            return self.r ** d
        self.check_dimension(d)
        return self.a * self.r0 ** d / (self.a - d)

    def radii(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF radii from uniforms in [0, 1)."""
        if self.kind == "fixed":
            return np.full(u.shape, self.r)
        return self.r0 * (1.0 - u) ** (-1.0 / self.a)


def _germs(
    grid: GridSpec, intensity: float, law: RadiusLaw, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Poisson count first, then uniform centres, then radii; one substream each.

    The count comes from the inverse Poisson CDF and centres/radii are read as
    prefixes of their streams, so for one seed the germs at a lower intensity
    are a subset of those at a higher one.
    """
    count_rng, centre_rng, radius_rng = spawn_rngs(seed, 3)
    side = grid.side_length
    mean_count = intensity * side ** grid.d
    u = count_rng.random()
    n = 0 if mean_count == 0 else max(int(stats.poisson.ppf(u, mean_count)), 0)
    centres = centre_rng.random((n, grid.d)) * side
    radii = law.radii(radius_rng.random(n))
    return centres, radii


def paint_balls(grid: GridSpec, centres: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Indicator of the periodic union of balls at the cell positions i*h."""
    covered = np.zeros(grid.shape, dtype=bool)
    positions = np.arange(grid.N) * grid.h
    side = grid.side_length
    for centre, radius in zip(centres, radii):
        index, sq = [], []
        for axis in range(grid.d):
            delta = minimal_image(positions - centre[axis], side)
            near = np.nonzero(np.abs(delta) <= radius)[0]
            if near.size == 0:
                break
            index.append(near)
            sq.append(delta[near] ** 2)
        else:
            window = np.ix_(*index)
            dist2 = sum(np.meshgrid(*sq, indexing="ij", sparse=True))
            covered[window] |= dist2 <= radius * radius
    return covered.astype(np.float64)


def sample_boolean(grid: GridSpec, intensity: float, radius_law: RadiusLaw, seed: int) -> FieldSample:
    if not (intensity >= 0 and math.isfinite(intensity)):
        raise ValidationError("intensity", "must be a nonnegative real")
    radius_law.check_dimension(grid.d)
    centres, radii = _germs(grid, intensity, radius_law, seed)
    values = paint_balls(grid, centres, radii)
    return FieldSample(grid, values, _tag(intensity, radius_law), seed)


def _tag(intensity: float, law: RadiusLaw) -> str:
    return f"boolean(lambda={intensity:g},{law.label})"


class BooleanFieldModel(BaseFieldModel):
    """Poisson inclusions with random radii."""

    def __init__(self, grid: GridSpec, intensity: float, radius_law: RadiusLaw):
        super().__init__(grid)
        if not (intensity >= 0 and math.isfinite(intensity)):
            raise ValidationError("intensity", "must be a nonnegative real")
        radius_law.check_dimension(grid.d)
        self.intensity = float(intensity)
        self.radius_law = radius_law
        if radius_law.kind == "fixed" and 2 * radius_law.r >= grid.side_length:
            logger.warning("Ball diameter %.3g reaches the torus side %.3g", 2 * radius_law.r, grid.side_length)

    @property
    def model_tag(self) -> str:
        return _tag(self.intensity, self.radius_law)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "boolean",
            "grid": self.grid.to_dict(),
            "intensity": self.intensity,
            "radius_law": self.radius_law.to_dict(),
        }

    def sample(self, seed: int) -> FieldSample:
        return sample_boolean(self.grid, self.intensity, self.radius_law, seed)

    @property
    def mean(self) -> float:
        """Coverage fraction 1 - exp(-lambda E|B_r|)."""
        volume = unit_ball_volume(self.grid.d) * self.radius_law.moment(self.grid.d)
        return 1.0 - math.exp(-self.intensity * volume)

    @property
    def variance(self) -> float:
        p = self.mean
        return p * (1.0 - p)

    @property
    def bound(self) -> float:
        return 1.0

    def resample_exterior(self, seed: int, exterior_seed: int, ell: float) -> FieldSample:
        """Keep the germs centred in B_ell, redraw the Poisson process outside it."""
        side = self.grid.side_length

        def _centre_distance(centres):
            return np.sqrt(np.sum(minimal_image(centres, side) ** 2, axis=1))

        kept_c, kept_r = _germs(self.grid, self.intensity, self.radius_law, seed)
        new_c, new_r = _germs(self.grid, self.intensity, self.radius_law, exterior_seed)
        inside = _centre_distance(kept_c) < ell
        outside = _centre_distance(new_c) >= ell
        centres = np.concatenate([kept_c[inside], new_c[outside]])
        radii = np.concatenate([kept_r[inside], new_r[outside]])
        values = paint_balls(self.grid, centres, radii)
        return FieldSample(self.grid, values, self.model_tag, seed)
