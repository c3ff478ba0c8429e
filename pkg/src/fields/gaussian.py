"""
Stationary Gaussian fields on the torus by circulant embedding.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, Optional

import numpy as np

from ..config import Config
from ..errors import SynthesisError, ValidationError
from .base import BaseFieldModel, FieldSample, GridSpec, interior_mask, make_rng

logger = logging.getLogger(__name__)

# Image sums stop once the neglected mass is below this fraction of sigma^2
_WRAP_TOLERANCE = 1e-12
_MAX_IMAGES = 32


class CovarianceKind(str, Enum):
    DELTA_LAG = "delta_lag"
    EXPONENTIAL = "exponential"
    ALGEBRAIC_DECAY = "algebraic_decay"

    @classmethod
    def parse(cls, value) -> "CovarianceKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "delta_lag": cls.DELTA_LAG,
            "deltalag": cls.DELTA_LAG,
            "exponential": cls.EXPONENTIAL,
            "algebraic_decay": cls.ALGEBRAIC_DECAY,
            "algebraicdecay": cls.ALGEBRAIC_DECAY,
        }
        if key not in aliases:
            raise ValidationError("covariance.kind", f"unknown covariance {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class CovarianceModel:
    """Isotropic covariance C(|x|) with C(0) = sigma2."""

    kind: CovarianceKind
    sigma2: float = 1.0
    rho: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CovarianceKind.parse(self.kind))
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValidationError("covariance.sigma2", "must be a positive real")
        if self.kind is CovarianceKind.EXPONENTIAL and not (self.rho and self.rho > 0):
            raise ValidationError("covariance.rho", "exponential covariance needs rho > 0")
        if self.kind is CovarianceKind.ALGEBRAIC_DECAY and not (self.gamma and self.gamma > 0):
            raise ValidationError("covariance.gamma", "algebraic decay needs gamma > 0")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CovarianceModel":
        if "kind" not in data:
            raise ValidationError("covariance.kind", "missing")
        return cls(
            CovarianceKind.parse(data["kind"]),
            sigma2=float(data.get("sigma2", 1.0)),
            rho=None if data.get("rho") is None else float(data["rho"]),
            gamma=None if data.get("gamma") is None else float(data["gamma"]),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "sigma2": self.sigma2, "rho": self.rho, "gamma": self.gamma}

    @property
    def label(self) -> str:
        if self.kind is CovarianceKind.DELTA_LAG:
            return f"delta_lag(s2={self.sigma2:g})"
        if self.kind is CovarianceKind.EXPONENTIAL:
            return f"exponential(s2={self.sigma2:g},rho={self.rho:g})"
        return f"algebraic_decay(s2={self.sigma2:g},gamma={self.gamma:g})"

    def evaluate(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind is CovarianceKind.DELTA_LAG:
            return np.where(r == 0.0, self.sigma2, 0.0)
        if self.kind is CovarianceKind.EXPONENTIAL:
            return self.sigma2 * np.exp(-r / self.rho)
        return self.sigma2 * (1.0 + r) ** (-self.gamma)


def _image_count(grid: GridSpec, cov: CovarianceModel) -> int:
    """Smallest K such that images beyond the K-th shell carry < 1e-12 sigma^2."""
    side = grid.side_length
    d = grid.d
    for k in range(_MAX_IMAGES + 1):
        neglected = 0.0
        for j in range(k + 1, k + 200):
            shell = (2 * j + 1) ** d - (2 * j - 1) ** d
            neglected += shell * math.exp(-(j - 0.5) * side / cov.rho)
        if neglected < _WRAP_TOLERANCE:
            return k
    logger.warning(
        "Covariance wrap truncated at %d images (rho=%g, side=%g)", _MAX_IMAGES, cov.rho, side
    )
    return _MAX_IMAGES


def wrapped_covariance(grid: GridSpec, cov: CovarianceModel) -> np.ndarray:
    """Torus target covariance, indexed by the cell lag from the origin.

    Exponential covariances are summed over periodic images. Algebraic decay is
    not summable over images when gamma <= d, so it uses the minimal-image
    distance instead.
    """
    if cov.kind is CovarianceKind.DELTA_LAG:
        c = np.zeros(grid.shape)
        c[(0,) * grid.d] = cov.sigma2
        return c
    if cov.kind is CovarianceKind.ALGEBRAIC_DECAY:
        return cov.evaluate(grid.torus_distance())

    offsets = grid.axis_offsets() * grid.h
    side = grid.side_length
    k_max = _image_count(grid, cov)
    c = np.zeros(grid.shape)
    for image in itertools.product(range(-k_max, k_max + 1), repeat=grid.d):
        axes = np.meshgrid(
            *[offsets + k * side for k in image], indexing="ij", sparse=True
        )
        c += cov.evaluate(np.sqrt(sum(a * a for a in axes)))
    return c


@lru_cache(maxsize=32)
def spectral_coefficients(grid: GridSpec, cov: CovarianceModel) -> np.ndarray:
    """Nonnegative DFT of the wrapped covariance; tiny negative modes clipped to 0."""
    lam = np.fft.fftn(wrapped_covariance(grid, cov)).real
    tolerance = Config.SPECTRAL_TOL * cov.sigma2
    worst = int(np.argmin(lam))
    if lam.flat[worst] < -tolerance:
        mode = tuple(int(i) for i in np.unravel_index(worst, grid.shape))
        raise SynthesisError(mode, float(lam.flat[worst]), tolerance)
    clipped = int(np.count_nonzero(lam < 0))
    if clipped:
        logger.warning("Clipped %d negative spectral modes for %s", clipped, cov.label)
    lam = np.maximum(lam, 0.0)
    lam.setflags(write=False)
    return lam


def sample_gaussian(grid: GridSpec, cov: CovarianceModel, seed: int) -> FieldSample:
    """Centered Gaussian field whose torus covariance is the clipped wrapped covariance."""
    lam = spectral_coefficients(grid, cov)
    rng = make_rng(seed)
    m = grid.n_cells
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    values = np.fft.ifftn(np.sqrt(lam / m) * noise).real * m
    return FieldSample(grid, values, f"gaussian:{cov.label}", seed)


class GaussianFieldModel(BaseFieldModel):
    """Gaussian field with a CovarianceModel."""

    def __init__(self, grid: GridSpec, covariance: CovarianceModel):
        super().__init__(grid)
        self.covariance = covariance

    @property
    def model_tag(self) -> str:
        return f"gaussian:{self.covariance.label}"

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "gaussian", "grid": self.grid.to_dict(), "covariance": self.covariance.to_dict()}

    def sample(self, seed: int) -> FieldSample:
        return sample_gaussian(self.grid, self.covariance, seed)

    @property
    def mean(self) -> float:
        return 0.0

    @property
    def variance(self) -> float:
        return float(self.torus_covariance().flat[0])

    @property
    def spectrum(self) -> np.ndarray:
        return spectral_coefficients(self.grid, self.covariance)

    def torus_covariance(self) -> np.ndarray:
        """Exact covariance of the synthesized field (inverse DFT of the clipped spectrum)."""
        return np.fft.ifftn(self.spectrum).real

    def linear_average_variance(self, kernel: np.ndarray) -> float:
        """Var[sum_y k(y) A(y)] = sum_y sum_y' k(y) k(y') C(y - y'), evaluated in Fourier space."""
        kernel = np.asarray(kernel, dtype=float)
        if kernel.shape != self.grid.shape:
            raise ValidationError("kernel", "kernel shape must match the grid")
        k_hat = np.fft.fftn(kernel)
        return float(np.sum(self.spectrum * (k_hat.real ** 2 + k_hat.imag ** 2)) / self.grid.n_cells)

    def resample_exterior(self, seed: int, exterior_seed: int, ell: float) -> FieldSample:
        if self.covariance.kind is not CovarianceKind.DELTA_LAG:
            return super().resample_exterior(seed, exterior_seed, ell)
        inside = interior_mask(self.grid, ell)
        kept = self.sample(seed)
        fresh = self.sample(exterior_seed)
        return kept.with_values(np.where(inside, kept.values, fresh.values))
