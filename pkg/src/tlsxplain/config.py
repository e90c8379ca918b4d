"""Pipeline configuration: defaults < config file < command-line flags."""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml
from pydantic import Field, validator  # type: ignore

from .errors import ConfigError
from .features import default_schema
from .model import default_params
from .schemas import FeatureSchema, HyperParams, OversampleSettings, Schema
from .types import ModelKind
from .utils import PathLike

logger = logging.getLogger(__name__)

CONFIG_ENV = "TLSXPLAIN_CONFIG"

DEFAULT_TUNE_GRID: Dict[str, List[Any]] = {
    "n_estimators": [5, 10, 23, 50, 100],
    "max_depth": [3, 6, 12, 24, 42],
}


class PipelineConfig(Schema):

    schema_path: Optional[str] = None
    window_seconds: float = Field(1800.0, gt=0)
    bin_width: float = Field(150.0, gt=0)
    n_states: int = Field(3, ge=1)
    per_direction_markov: bool = False
    cipher_vocab: Optional[List[int]] = None
    extension_vocab: Optional[List[int]] = None
    version_vocab: Optional[List[int]] = None

    model: str = "xgb"
    # per-kind overrides of the defaults, keyed rf / xgb / extra
    params: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    oversample: OversampleSettings = Field(
        default_factory=OversampleSettings
    )
    cv_folds: int = Field(10, ge=2)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    seed: int = Field(0, ge=0)
    jobs: int = Field(1, ge=1)
    top_k: int = Field(10, ge=1)
    tune_grid: Dict[str, List[Any]] = Field(
        default_factory=lambda: {k: list(v)
                                 for k, v in DEFAULT_TUNE_GRID.items()}
    )
    scoring: str = "accuracy"

    @validator('model')
    def known_model(cls, v):
        try:
            return ModelKind.from_alias(v).alias
        except ValueError:
            raise ValueError(
                f"unknown model {v!r}; use rf, xgb or extra"
            ) from None

    @validator('params')
    def known_param_kinds(cls, v):
        for alias, overrides in v.items():
            try:
                kind = ModelKind.from_alias(alias)
            except ValueError:
                raise ValueError(f"params for unknown model {alias!r}") \
                    from None
            default_params(kind).with_overrides(**overrides)
        return {ModelKind.from_alias(a).alias: o for a, o in v.items()}

    @property
    def kind(self) -> ModelKind:
        return ModelKind.from_alias(self.model)

    def hyper_params(self, kind: Optional[ModelKind] = None) -> HyperParams:
        """Defaults of `kind` with configured overrides and the run seed."""
        kind = ModelKind(kind) if kind is not None else self.kind
        overrides = dict(self.params.get(kind.alias, {}))
        overrides.setdefault('seed', self.seed)
        return default_params(kind).with_overrides(**overrides)

    def feature_schema(self) -> FeatureSchema:
        if self.schema_path is not None:
            schema = FeatureSchema.load(self.schema_path)
            logger.info("using schema %s from %s", schema.schema_version,
                        self.schema_path)
            return schema
        return default_schema(
            self.cipher_vocab, self.extension_vocab, self.version_vocab,
            bin_width=self.bin_width,
            n_states=self.n_states,
            window_seconds=self.window_seconds,
            per_direction_markov=self.per_direction_markov,
        )


def read_config_file(path: PathLike) -> Dict[str, Any]:
    """Parse a JSON or YAML mapping."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding='utf-8'))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML/JSON: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(
        path: Optional[PathLike] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        environ: Optional[Mapping[str, str]] = None
) -> PipelineConfig:
    """Resolve the configuration of one run.

    `path` falls back to $TLSXPLAIN_CONFIG; overrides whose value is None
    are flags that were not given.
    """
    environ = os.environ if environ is None else environ
    path = path if path is not None else environ.get(CONFIG_ENV) or None
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
        logger.info("loaded configuration from %s", path)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == 'oversample' and isinstance(value, dict):
            merged = dict(values.get('oversample') or {})
            merged.update(value)
            value = merged
        values[key] = value
    unknown = set(values) - set(PipelineConfig.__fields__)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    return PipelineConfig(**values)
