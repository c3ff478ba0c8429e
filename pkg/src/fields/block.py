"""
Block-i.i.d. fields: one independent draw per aligned cube of side block*h.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from ..errors import ValidationError
from .base import BaseFieldModel, FieldSample, GridSpec, interior_mask, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlockLaw:
    """Bernoulli(p) on {0, 1}, or UniformPM1 (uniform on {-1, +1})."""

    kind: str
    p: Optional[float] = None

    def __post_init__(self):
        kind = str(self.kind).strip().lower()
        aliases = {"bernoulli": "bernoulli", "uniform_pm1": "uniform_pm1", "uniformpm1": "uniform_pm1"}
        if kind not in aliases:
            raise ValidationError("law.kind", f"unknown block law {self.kind!r}")
        object.__setattr__(self, "kind", aliases[kind])
        if self.kind == "bernoulli" and not (self.p is not None and 0.0 <= self.p <= 1.0):
            raise ValidationError("law.p", "Bernoulli parameter must lie in [0, 1]")

    @classmethod
    def bernoulli(cls, p: float) -> "BlockLaw":
        return cls("bernoulli", p=p)

    @classmethod
    def uniform_pm1(cls) -> "BlockLaw":
        return cls("uniform_pm1")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BlockLaw":
        return cls(data.get("kind", "bernoulli"), p=None if data.get("p") is None else float(data["p"]))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "p": self.p}

    @property
    def label(self) -> str:
        return f"bernoulli(p={self.p:g})" if self.kind == "bernoulli" else "uniform_pm1"

    @property
    def mean(self) -> float:
        return self.p if self.kind == "bernoulli" else 0.0

    @property
    def variance(self) -> float:
        return self.p * (1.0 - self.p) if self.kind == "bernoulli" else 1.0

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        u = rng.random(shape)
        if self.kind == "bernoulli":
            return (u < self.p).astype(np.float64)
        return np.where(u < 0.5, -1.0, 1.0)


def _check_block(grid: GridSpec, block: int) -> int:
    if not isinstance(block, (int, np.integer)) or block < 1 or grid.N % block:
        raise ValidationError("block", f"block={block!r} must be a positive divisor of N={grid.N}")
    return int(block)


def _expand(draws: np.ndarray, block: int) -> np.ndarray:
    values = draws
    for axis in range(draws.ndim):
        values = np.repeat(values, block, axis=axis)
    return values


def _block_draws(grid: GridSpec, block: int, law: BlockLaw, seed: int) -> np.ndarray:
    blocks_per_side = grid.N // block
    return law.draw(make_rng(seed), (blocks_per_side,) * grid.d)


def sample_block_iid(grid: GridSpec, block: int, law: BlockLaw, seed: int) -> FieldSample:
    block = _check_block(grid, block)
    values = _expand(_block_draws(grid, block, law, seed), block)
    return FieldSample(grid, values, _tag(block, law), seed)


def _tag(block: int, law: BlockLaw) -> str:
    return f"block_iid(block={block},{law.label})"


class BlockIIDFieldModel(BaseFieldModel):
    """Finite-range field: constant on aligned cubes, independent across cubes."""

    def __init__(self, grid: GridSpec, block: int, law: BlockLaw):
        super().__init__(grid)
        self.block = _check_block(grid, block)
        self.law = law

    @property
    def model_tag(self) -> str:
        return _tag(self.block, self.law)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "block_iid", "grid": self.grid.to_dict(), "block": self.block, "law": self.law.to_dict()}

    def sample(self, seed: int) -> FieldSample:
        return sample_block_iid(self.grid, self.block, self.law, seed)

    @property
    def mean(self) -> float:
        return self.law.mean

    @property
    def variance(self) -> float:
        return self.law.variance

    @property
    def bound(self) -> float:
        return 1.0

    @property
    def dependence_range(self) -> float:
        """Cells farther apart than this lie in distinct blocks."""
        return self.block * self.grid.h * np.sqrt(self.grid.d)

    def resample_exterior(self, seed: int, exterior_seed: int, ell: float) -> FieldSample:
        """Blocks meeting B_ell keep their draw; every other block is redrawn."""
        kept = _block_draws(self.grid, self.block, self.law, seed)
        fresh = _block_draws(self.grid, self.block, self.law, exterior_seed)
        touched = np.zeros(kept.shape, dtype=bool)
        cells = np.nonzero(interior_mask(self.grid, ell))
        touched[tuple(c // self.block for c in cells)] = True
        draws = np.where(touched, kept, fresh)
        return FieldSample(self.grid, _expand(draws, self.block), self.model_tag, seed)
