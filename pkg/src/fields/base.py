"""
Grid, field sample and the abstract field model shared by every generator.
"""

import logging
import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import UnsupportedModelError, ValidationError

logger = logging.getLogger(__name__)

MAX_CELLS = 2 ** 24
SEED_LIMIT = 2 ** 64

# Binary dump: magic, version, d, N then N^d little-endian float64 (row-major)
DUMP_MAGIC = b"MSFI"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIII")


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def check_seed(seed: int, name: str = "seed") -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValidationError(name, f"must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < SEED_LIMIT:
        raise ValidationError(name, "must be a 64-bit unsigned integer")
    return seed


def make_rng(seed: Union[int, np.random.SeedSequence]) -> np.random.Generator:
    """Counter-based Philox generator for one seed."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(check_seed(seed))
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed: int, count: int) -> Tuple[np.random.Generator, ...]:
    """Independent substreams of one seed, in a fixed order."""
    children = np.random.SeedSequence(check_seed(seed)).spawn(count)
    return tuple(make_rng(child) for child in children)


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit seed of stream ``index`` under ``master_seed``."""
    ss = np.random.SeedSequence([check_seed(master_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Periodic grid of N^d cells with spacing h (torus side N*h)."""

    d: int
    N: int
    h: float = 1.0
    periodic: bool = True

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValidationError("grid.d", "dimension must be 1, 2 or 3")
        if not isinstance(self.N, (int, np.integer)) or self.N < 1 or self.N & (self.N - 1):
            raise ValidationError("grid.N", f"must be a power of two, got {self.N!r}")
        if self.N ** self.d > MAX_CELLS:
            raise ValidationError("grid.N", f"N^d = {self.N ** self.d} exceeds 2^24 cells")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValidationError("grid.h", "spacing must be a positive real")
        if not self.periodic:
            raise ValidationError("grid.periodic", "only periodic grids are supported")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GridSpec":
        for key in ("d", "N"):
            if key not in data:
                raise ValidationError(f"grid.{key}", "missing")
        return cls(
            d=int(data["d"]),
            N=int(data["N"]),
            h=float(data.get("h", 1.0)),
            periodic=bool(data.get("periodic", True)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"d": self.d, "N": self.N, "h": self.h, "periodic": self.periodic}

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def n_cells(self) -> int:
        return self.N ** self.d

    @property
    def side_length(self) -> float:
        return self.N * self.h

    @property
    def half_side(self) -> float:
        return 0.5 * self.side_length

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    def axis_offsets(self) -> np.ndarray:
        """Minimal-image integer offsets of the cells along one axis, in [-N/2, N/2)."""
        half = self.N // 2
        return (np.arange(self.N) + half) % self.N - half

    def torus_distance(self) -> np.ndarray:
        """Physical minimal-image distance of every cell to the origin cell."""
        return _torus_distance(self)

    def lag_to_offset(self, lag: Sequence[float], name: str = "lag") -> Tuple[int, ...]:
        """Convert a physical lag vector to whole-cell offsets; rejects lags beyond half-side."""
        lag = np.atleast_1d(np.asarray(lag, dtype=float))
        if lag.shape != (self.d,):
            raise ValidationError(name, f"expected {self.d} components, got {lag.shape}")
        cells = np.rint(lag / self.h)
        if not np.allclose(cells * self.h, lag, rtol=0.0, atol=1e-9 * self.h):
            raise ValidationError(name, "must be a multiple of the grid spacing")
        if np.any(np.abs(cells) > self.N // 2):
            raise ValidationError(name, "exceeds the torus half-side")
        return tuple(int(c) for c in cells)


@lru_cache(maxsize=64)
def _torus_distance(grid: GridSpec) -> np.ndarray:
    offsets = grid.axis_offsets() * grid.h
    axes = np.meshgrid(*([offsets] * grid.d), indexing="ij", sparse=True)
    dist = np.sqrt(sum(a * a for a in axes))
    dist = np.broadcast_to(dist, grid.shape).copy()
    dist.setflags(write=False)
    return dist


def interior_mask(grid: GridSpec, ell: float) -> np.ndarray:
    """Cells at torus distance strictly less than ``ell`` from the origin (B_0 is empty)."""
    return grid.torus_distance() < ell


def minimal_image(delta: np.ndarray, side: float) -> np.ndarray:
    return (delta + 0.5 * side) % side - 0.5 * side


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FieldSample:
    """One realization on the grid; immutable after creation."""

    grid: GridSpec
    values: np.ndarray
    model_tag: str
    seed: int

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != self.grid.shape:
            raise ValidationError("values", f"shape {values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("values", "field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray, model_tag: Optional[str] = None) -> "FieldSample":
        return FieldSample(self.grid, values, model_tag or self.model_tag, self.seed)

    def shifted(self, offset: Sequence[int]) -> "FieldSample":
        """Torus translate: result(x) = values(x + offset)."""
        shift = tuple(-int(o) for o in offset)
        return self.with_values(np.roll(self.values, shift, axis=tuple(range(self.grid.d))))

    def dump(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with path.open("wb") as fh:
            fh.write(_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, self.grid.d, self.grid.N))
            fh.write(self.values.astype("<f8").tobytes(order="C"))
        logger.debug("Dumped %s to %s", self.model_tag, path)
        return path


def load_field(
    path: Union[str, Path],
    *,
    h: float = 1.0,
    model_tag: str = "loaded",
    seed: int = 0,
) -> FieldSample:
    """Read a FieldSample written by ``FieldSample.dump``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValidationError("path", "file too short for an MSFI header")
    magic, version, d, n = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ValidationError("path", f"bad magic {magic!r}")
    if version != DUMP_VERSION:
        raise ValidationError("path", f"unsupported dump version {version}")
    grid = GridSpec(d=d, N=n, h=h)
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * grid.n_cells:
        raise ValidationError("path", "payload size does not match header")
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape)
    return FieldSample(grid, values, model_tag, seed)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class BaseFieldModel(ABC):
    """Abstract base class for stationary field models on a periodic grid"""

    def __init__(self, grid: GridSpec):
        self.grid = grid

    @abstractmethod
    def sample(self, seed: int) -> FieldSample:
        """Pure function of (model, seed)."""

    @property
    @abstractmethod
    def model_tag(self) -> str:
        """Short description of the model, carried by every sample."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        pass

    @property
    def mean(self) -> Optional[float]:
        """Analytic E[A(0)], or None when the model has none."""
        return None

    @property
    def variance(self) -> Optional[float]:
        return None

    @property
    def bound(self) -> Optional[float]:
        """Deterministic bound on |A|, if any."""
        return None

    def resample_exterior(self, seed: int, exterior_seed: int, ell: float) -> FieldSample:
        """Field equal to ``sample(seed)`` on B_ell, with the exterior redrawn from
        ``exterior_seed`` according to the conditional law."""
        raise UnsupportedModelError(self.model_tag, "conditional resampling")

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.model_tag})"
