"""
Exact enumeration on tiny discrete fields.

All arithmetic is rational (fractions.Fraction), so the oracle values are
exact and can be compared with Monte Carlo estimates or committed as golden
numbers.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import EnumerationCapError, ValidationError

logger = logging.getLogger(__name__)

MAX_CELLS = 12
MAX_ATOMS_PER_CELL = 4
MAX_CONFIGURATIONS = 2 ** 20
MAX_SIGMA_ATOMS = 16

Configuration = Tuple[Fraction, ...]


def _fraction(value: Any) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(str(value))


@dataclass(frozen=True)
class CellLaw:
    """A finite-support law: values with positive rational probabilities summing to 1."""

    values: Tuple[Fraction, ...]
    probs: Tuple[Fraction, ...]

    def __post_init__(self):
        values = tuple(_fraction(v) for v in self.values)
        probs = tuple(_fraction(p) for p in self.probs)
        if not values or len(values) != len(probs):
            raise ValidationError("cell_law", "values and probs must be nonempty and of equal length")
        if len(values) > MAX_ATOMS_PER_CELL:
            raise EnumerationCapError(f"cell law has {len(values)} atoms (max {MAX_ATOMS_PER_CELL})")
        if len(set(values)) != len(values):
            raise ValidationError("cell_law.values", "atoms must be distinct")
        if any(p <= 0 for p in probs) or sum(probs) != 1:
            raise ValidationError("cell_law.probs", "probabilities must be positive and sum to 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def bernoulli(cls, p: Any) -> "CellLaw":
        p = _fraction(p)
        if not 0 <= p <= 1:
            raise ValidationError("cell_law.p", "Bernoulli parameter must lie in [0, 1]")
        if p in (0, 1):
            return cls((p,), (Fraction(1),))
        return cls((Fraction(0), Fraction(1)), (1 - p, p))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CellLaw":
        if "p" in data:
            return cls.bernoulli(data["p"])
        return cls(tuple(data.get("values", ())), tuple(data.get("probs", ())))

    @property
    def support_size(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TinyFieldSpec:
    """n cells with finite laws; ``duplicates`` maps a cell to the cell it copies."""

    n: int
    cell_laws: Tuple[CellLaw, ...]
    duplicates: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.n <= MAX_CELLS:
            raise EnumerationCapError(f"n={self.n} cells exceeds the cap of {MAX_CELLS}")
        laws = tuple(self.cell_laws)
        if len(laws) == 1 and self.n > 1:
            laws = laws * self.n
        if len(laws) != self.n:
            raise ValidationError("cell_laws", f"expected {self.n} laws, got {len(laws)}")
        object.__setattr__(self, "cell_laws", laws)
        duplicates = {int(k): int(v) for k, v in dict(self.duplicates).items()}
        for cell, source in duplicates.items():
            if not (0 <= cell < self.n and 0 <= source < self.n) or cell == source:
                raise ValidationError("duplicates", f"invalid copy {cell} -> {source}")
        object.__setattr__(self, "duplicates", duplicates)
        roots = [self._root(i) for i in range(self.n)]
        object.__setattr__(self, "_roots", tuple(roots))
        if self.configuration_count > MAX_CONFIGURATIONS:
            raise EnumerationCapError(
                f"{self.configuration_count} configurations exceed the cap of {MAX_CONFIGURATIONS}"
            )

    def _root(self, cell: int) -> int:
        seen = {cell}
        while cell in self.duplicates:
            cell = self.duplicates[cell]
            if cell in seen:
                raise ValidationError("duplicates", "copy map contains a cycle")
            seen.add(cell)
        return cell

    @classmethod
    def iid(cls, n: int, law: CellLaw) -> "TinyFieldSpec":
        return cls(n, (law,) * n)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TinyFieldSpec":
        n = int(data["n"])
        laws = data.get("cell_laws")
        if laws is None:
            laws = [data.get("law", {"p": "1/2"})]
        return cls(
            n,
            tuple(CellLaw.from_dict(item) for item in laws),
            {int(k): int(v) for k, v in data.get("duplicates", {}).items()},
        )

    @property
    def is_product(self) -> bool:
        return not self.duplicates

    @property
    def free_cells(self) -> List[int]:
        return [i for i in range(self.n) if i not in self.duplicates]

    @property
    def configuration_count(self) -> int:
        count = 1
        for i in self.free_cells:
            count *= self.cell_laws[i].support_size
        return count

    def configurations(self) -> Iterator[Tuple[Configuration, Fraction]]:
        """Every configuration with positive probability, in a fixed order."""
        free = self.free_cells
        roots = self._roots
        choices = [range(self.cell_laws[i].support_size) for i in free]
        for picks in itertools.product(*choices):
            chosen = {}
            prob = Fraction(1)
            for cell, k in zip(free, picks):
                law = self.cell_laws[cell]
                chosen[cell] = law.values[k]
                prob *= law.probs[k]
            yield tuple(chosen[roots[i]] for i in range(self.n)), prob


class TinyFunctionalKind(str, Enum):
    SUM = "sum"
    CELL_PRODUCT = "cell_product"
    THRESHOLD_COUNT = "threshold_count"


@dataclass(frozen=True)
class TinyFunctional:
    """Sum, CellProduct or ThresholdCount(level) = #{i : A_i >= level} over ``cells`` (all by default)."""

    kind: TinyFunctionalKind
    cells: Optional[Tuple[int, ...]] = None
    level: Optional[Fraction] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TinyFunctionalKind(self.kind))
        if self.cells is not None:
            object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        if self.kind is TinyFunctionalKind.THRESHOLD_COUNT:
            if self.level is None:
                raise ValidationError("functional.level", "threshold_count needs a level")
            object.__setattr__(self, "level", _fraction(self.level))

    def evaluate(self, config: Configuration) -> Fraction:
        values = config if self.cells is None else tuple(config[i] for i in self.cells)
        if self.kind is TinyFunctionalKind.SUM:
            return sum(values, Fraction(0))
        if self.kind is TinyFunctionalKind.CELL_PRODUCT:
            result = Fraction(1)
            for v in values:
                result *= v
            return result
        return Fraction(sum(1 for v in values if v >= self.level))

    @property
    def label(self) -> str:
        scope = "" if self.cells is None else f"[{','.join(str(c) for c in self.cells)}]"
        if self.kind is TinyFunctionalKind.THRESHOLD_COUNT:
            return f"threshold_count(level={self.level}){scope}"
        return f"{self.kind.value}{scope}"


@dataclass(frozen=True)
class Moments:
    mean: Fraction
    variance: Fraction
    fourth_central: Fraction


@dataclass(frozen=True)
class Oscillation:
    by_exterior: Dict[Configuration, Fraction]
    mean_square: Fraction


@dataclass(frozen=True)
class EfronStein:
    variance: Fraction
    rhs: Fraction
    holds: bool


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def exact_moments(spec: TinyFieldSpec, X: TinyFunctional) -> Moments:
    """Mean, variance and fourth central moment of X(A) by full enumeration."""
    table = [(X.evaluate(config), prob) for config, prob in spec.configurations()]
    mean = sum((x * p for x, p in table), Fraction(0))
    variance = sum(((x - mean) ** 2 * p for x, p in table), Fraction(0))
    fourth = sum(((x - mean) ** 4 * p for x, p in table), Fraction(0))
    return Moments(mean, variance, fourth)


def _check_subset(spec: TinyFieldSpec, cells: Sequence[int], name: str) -> Tuple[int, ...]:
    cells = tuple(sorted(set(int(c) for c in cells)))
    if not cells:
        raise ValidationError(name, "must be a nonempty subset of cells")
    if cells[0] < 0 or cells[-1] >= spec.n:
        raise ValidationError(name, f"cells must lie in 0..{spec.n - 1}")
    return cells


def exact_oscillation(spec: TinyFieldSpec, X: TinyFunctional, S: Sequence[int]) -> Oscillation:
    """max - min of X over the configurations sharing one exterior (cells outside S)."""
    S = _check_subset(spec, S, "S")
    exterior = [i for i in range(spec.n) if i not in S]
    highs: Dict[Configuration, Fraction] = {}
    lows: Dict[Configuration, Fraction] = {}
    weights: Dict[Configuration, Fraction] = {}
    for config, prob in spec.configurations():
        key = tuple(config[i] for i in exterior)
        value = X.evaluate(config)
        if key in highs:
            highs[key] = max(highs[key], value)
            lows[key] = min(lows[key], value)
            weights[key] += prob
        else:
            highs[key] = lows[key] = value
            weights[key] = prob
    osc = {key: highs[key] - lows[key] for key in highs}
    mean_square = sum((osc[key] ** 2 * weights[key] for key in osc), Fraction(0))
    return Oscillation(osc, mean_square)


def efron_stein_check(spec: TinyFieldSpec, X: TinyFunctional) -> EfronStein:
    """Var[X] <= 1/2 sum_i E[osc_i(X)^2] for product laws."""
    if not spec.is_product:
        raise ValidationError("dependency", "the Efron-Stein check needs independent cells")
    variance = exact_moments(spec, X).variance
    rhs = Fraction(1, 2) * sum(
        (exact_oscillation(spec, X, [i]).mean_square for i in range(spec.n)), Fraction(0)
    )
    holds = variance <= rhs
    if not holds:
        logger.error("Efron-Stein violated for %s: %s > %s", X.label, variance, rhs)
    return EfronStein(variance, rhs, holds)


def _joint_table(
    spec: TinyFieldSpec, S: Tuple[int, ...], T: Tuple[int, ...]
) -> Tuple[List[Configuration], List[Configuration], Dict[Tuple[int, int], Fraction]]:
    s_atoms: Dict[Configuration, int] = {}
    t_atoms: Dict[Configuration, int] = {}
    joint: Dict[Tuple[int, int], Fraction] = {}
    for config, prob in spec.configurations():
        s_key = tuple(config[i] for i in S)
        t_key = tuple(config[i] for i in T)
        a = s_atoms.setdefault(s_key, len(s_atoms))
        b = t_atoms.setdefault(t_key, len(t_atoms))
        joint[(a, b)] = joint.get((a, b), Fraction(0)) + prob
    for name, atoms in (("S", s_atoms), ("T", t_atoms)):
        if len(atoms) > MAX_SIGMA_ATOMS:
            raise EnumerationCapError(f"sigma({name}) has {len(atoms)} atoms (max {MAX_SIGMA_ATOMS})")
    return list(s_atoms), list(t_atoms), joint


def exact_alpha(spec: TinyFieldSpec, S: Sequence[int], T: Sequence[int]) -> Fraction:
    """sup over G1 in sigma(A_S), G2 in sigma(A_T) of |P[G1 and G2] - P[G1] P[G2]|.

    For a fixed G1 the sup over G2 equals half the total variation
    1/2 sum_t |P[G1, A_T = t] - P[G1] P[A_T = t]|, so only the G1 side is enumerated.
    """
    S = _check_subset(spec, S, "S")
    T = _check_subset(spec, T, "T")
    if set(S) & set(T):
        raise ValidationError("T", "S and T must be disjoint")
    s_atoms, t_atoms, joint = _joint_table(spec, S, T)

    # Integer probabilities over a common denominator Q.
    Q = math.lcm(*(prob.denominator for prob in joint.values()))
    a, b = len(s_atoms), len(t_atoms)
    table = np.zeros((a, b), dtype=object)
    for (i, j), prob in joint.items():
        table[i, j] = int(prob * Q)
    t_marginal = table.sum(axis=0)

    bits = (np.arange(2 ** a, dtype=np.int64)[:, None] >> np.arange(a)) & 1
    mass = bits.astype(object) @ table
    g1_mass = mass.sum(axis=1)
    # Scaled by Q^2: Q * P[G1, t] - P[G1] * P[t]
    deviation = mass * Q - g1_mass[:, None] * t_marginal[None, :]
    best = max(sum(abs(v) for v in row) for row in deviation)
    return Fraction(int(best), 2 * Q * Q)
