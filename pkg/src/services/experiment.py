"""
Experiment definitions: one flat JSON document per experiment.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from ..bounds import BoundRegime, RegimeKind
from ..config import Config
from ..errors import ValidationError
from ..fields import BaseFieldModel, model_from_dict
from ..fields.base import check_seed
from ..functionals import AverageKind, LocalFunctional
from ..oracle import CellLaw, TinyFunctional
from ..weights import DimensionContext, WeightFamily

logger = logging.getLogger(__name__)


class ExperimentKind(str, Enum):
    VARIANCE_SCAN = "VarianceScan"
    TAIL_SCAN = "TailScan"
    MIXING_SCAN = "MixingScan"
    COVARIANCE_SCAN = "CovarianceScan"
    MOMENT_SCAN = "MomentScan"
    ERGODIC_SCAN = "ErgodicScan"
    ORACLE_CHECK = "OracleCheck"

    @classmethod
    def parse(cls, value) -> "ExperimentKind":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).strip().lower():
                return member
        raise ValidationError("experiment", f"unknown experiment kind {value!r}")

    @property
    def param_name(self) -> str:
        return {
            ExperimentKind.VARIANCE_SCAN: "L",
            ExperimentKind.TAIL_SCAN: "delta|L",
            ExperimentKind.MIXING_SCAN: "R",
            ExperimentKind.COVARIANCE_SCAN: "lag",
            ExperimentKind.MOMENT_SCAN: "p",
            ExperimentKind.ERGODIC_SCAN: "R",
            ExperimentKind.ORACLE_CHECK: "n",
        }[self]


# Smallest replicate count accepted for a reported experiment.
REPLICATE_FLOORS: Dict[ExperimentKind, int] = {
    ExperimentKind.VARIANCE_SCAN: 100,
    ExperimentKind.TAIL_SCAN: 1000,
    ExperimentKind.MOMENT_SCAN: 1000,
    ExperimentKind.MIXING_SCAN: 100,
    ExperimentKind.COVARIANCE_SCAN: 100,
    ExperimentKind.ERGODIC_SCAN: 100,
}

# Regimes confronted when a config names none but provides a weight.
DEFAULT_REGIMES: Dict[ExperimentKind, RegimeKind] = {
    ExperimentKind.VARIANCE_SCAN: RegimeKind.VAR_MSG,
    ExperimentKind.MIXING_SCAN: RegimeKind.MIXING_DECAY,
    ExperimentKind.COVARIANCE_SCAN: RegimeKind.COV_DECAY,
}

SweepPoint = Union[float, Tuple[float, float]]


def _require(data: Dict[str, Any], key: str) -> Any:
    if key not in data or data[key] is None:
        raise ValidationError(key, "missing")
    return data[key]


def _parse_sweep(kind: ExperimentKind, raw: Any, default_L: Optional[float]) -> Tuple[SweepPoint, ...]:
    if not isinstance(raw, list) or not raw:
        raise ValidationError("sweep", "must be a nonempty list")
    points: List[SweepPoint] = []
    for item in raw:
        if kind is ExperimentKind.TAIL_SCAN:
            if isinstance(item, (list, tuple)):
                if len(item) != 2:
                    raise ValidationError("sweep", "TailScan entries are [delta, L] pairs")
                points.append((float(item[0]), float(item[1])))
            elif default_L is None:
                raise ValidationError("L", "TailScan with scalar sweep entries needs L")
            else:
                points.append((float(item), float(default_L)))
        elif kind in (ExperimentKind.MOMENT_SCAN, ExperimentKind.ORACLE_CHECK):
            if int(item) != item:
                raise ValidationError("sweep", "entries must be integers")
            points.append(int(item))
        else:
            points.append(float(item))
    if any(b <= a for a, b in zip(points, points[1:])):
        raise ValidationError("sweep", "must be strictly increasing")
    return tuple(points)


@dataclass(frozen=True)
class MixingSettings:
    levels: Tuple[float, ...]
    region_size: float
    D: Optional[float] = None


@dataclass(frozen=True)
class OracleSettings:
    law: CellLaw
    functional: TinyFunctional


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentKind
    raw: Dict[str, Any] = field(repr=False, compare=False)
    sweep: Tuple[SweepPoint, ...] = ()
    replicates: int = 0
    seed: int = 0
    output_dir: str = ""
    model: Optional[BaseFieldModel] = None
    functional: Optional[LocalFunctional] = None
    average: AverageKind = AverageKind.BOX
    weight: Optional[WeightFamily] = None
    regimes: Tuple[BoundRegime, ...] = ()
    L: Optional[float] = None
    mixing: Optional[MixingSettings] = None
    oracle: Optional[OracleSettings] = None

    # -- parsing -----------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ValidationError("config", "must be a JSON object")
        kind = ExperimentKind.parse(_require(data, "experiment"))
        L = data.get("L")
        sweep = _parse_sweep(kind, _require(data, "sweep"), L)
        seed = check_seed(int(_require(data, "seed")))
        output_dir = str(data.get("output_dir") or Path(Config.OUTPUT_DIR) / kind.value)

        if kind is ExperimentKind.ORACLE_CHECK:
            oracle_data = _require(data, "oracle")
            settings = OracleSettings(
                CellLaw.from_dict(oracle_data.get("law", {"p": "1/2"})),
                TinyFunctional(**_require(oracle_data, "functional")),
            )
            return cls(kind, dict(data), sweep, int(data.get("replicates", 0)), seed, output_dir, oracle=settings)

        replicates = int(_require(data, "replicates"))
        floor = REPLICATE_FLOORS[kind]
        if replicates < floor:
            raise ValidationError("replicates", f"{kind.value} needs at least {floor} replicates, got {replicates}")

        model = model_from_dict(_require(data, "model"))
        functional = LocalFunctional.from_dict(data.get("functional") or {"kind": "cell_value"})
        average = AverageKind.parse(data.get("average", "box"))
        weight = WeightFamily.from_dict(data["weight"]) if data.get("weight") else None

        regimes = []
        for entry in data.get("regimes") or []:
            params = {"C": 1.0}
            params.update(entry.get("params", {}))
            regimes.append(BoundRegime(_require(entry, "kind"), params))
        if not data.get("regimes") and weight is not None and kind in DEFAULT_REGIMES:
            regimes.append(BoundRegime(DEFAULT_REGIMES[kind], {"C": 1.0}))

        mixing = None
        if kind is ExperimentKind.MIXING_SCAN:
            mixing_data = _require(data, "mixing")
            mixing = MixingSettings(
                tuple(float(v) for v in _require(mixing_data, "levels")),
                float(_require(mixing_data, "region_size")),
                None if mixing_data.get("D") is None else float(mixing_data["D"]),
            )
        if kind is ExperimentKind.MOMENT_SCAN and L is None:
            raise ValidationError("L", "MomentScan needs the averaging scale L")

        return cls(
            kind,
            dict(data),
            sweep,
            replicates,
            seed,
            output_dir,
            model=model,
            functional=functional,
            average=average,
            weight=weight,
            regimes=tuple(regimes),
            L=None if L is None else float(L),
            mixing=mixing,
        )

    def with_overrides(
        self,
        *,
        seed: Optional[int] = None,
        replicates: Optional[int] = None,
        output_dir: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Re-validate with CLI overrides applied to the raw document."""
        data = dict(self.raw)
        if seed is not None:
            data["seed"] = seed
        if replicates is not None:
            data["replicates"] = replicates
        if output_dir is not None:
            data["output_dir"] = output_dir
        return ExperimentConfig.from_dict(data)

    # -- provenance --------------------------------------------------------

    def canonical_json(self) -> str:
        data = dict(self.raw)
        data["seed"] = self.seed
        data["output_dir"] = self.output_dir
        if self.experiment is not ExperimentKind.ORACLE_CHECK:
            data["replicates"] = self.replicates
        return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @property
    def dimension(self) -> Optional[DimensionContext]:
        return None if self.model is None else DimensionContext(self.model.grid.d)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError("config", f"no such file: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError("config", f"invalid JSON in {path}: {exc}")
    logger.debug("Loaded experiment config from %s", path)
    return ExperimentConfig.from_dict(data)
