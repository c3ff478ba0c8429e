from typing import Any, Dict

from ..errors import ValidationError
from .base import (
    BaseFieldModel,
    FieldSample,
    GridSpec,
    derive_seed,
    load_field,
    make_rng,
)
from .block import BlockIIDFieldModel, BlockLaw, sample_block_iid
from .boolean import BooleanFieldModel, RadiusLaw, sample_boolean
from .gaussian import CovarianceKind, CovarianceModel, GaussianFieldModel, sample_gaussian


def model_from_dict(data: Dict[str, Any]) -> BaseFieldModel:
    """Build a field model from its config record."""
    if not isinstance(data, dict):
        raise ValidationError("model", "must be a mapping")
    if "grid" not in data:
        raise ValidationError("model.grid", "missing")
    grid = GridSpec.from_dict(data["grid"])
    kind = str(data.get("kind", "")).lower()
    if kind == "gaussian":
        if "covariance" not in data:
            raise ValidationError("model.covariance", "missing")
        return GaussianFieldModel(grid, CovarianceModel.from_dict(data["covariance"]))
    if kind == "boolean":
        if "intensity" not in data:
            raise ValidationError("model.intensity", "missing")
        return BooleanFieldModel(grid, float(data["intensity"]), RadiusLaw.from_dict(data.get("radius_law", {})))
    if kind == "block_iid":
        if "block" not in data:
            raise ValidationError("model.block", "missing")
        return BlockIIDFieldModel(grid, int(data["block"]), BlockLaw.from_dict(data.get("law", {})))
    raise ValidationError("model.kind", f"unknown field model {data.get('kind')!r}")


__all__ = [
    'BaseFieldModel', 'FieldSample', 'GridSpec', 'derive_seed', 'load_field', 'make_rng',
    'BlockIIDFieldModel', 'BlockLaw', 'sample_block_iid',
    'BooleanFieldModel', 'RadiusLaw', 'sample_boolean',
    'CovarianceKind', 'CovarianceModel', 'GaussianFieldModel', 'sample_gaussian',
    'model_from_dict',
]
