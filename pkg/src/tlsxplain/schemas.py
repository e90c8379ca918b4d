"""Pydantic models for every file tlsxplain reads or writes."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import (  # type: ignore
    BaseModel,
    Field,
    root_validator,
    validator,
)

from .types import Direction, FeatureGroup, ModelKind, OutputSpace
from .utils import canonical_json

FORMAT_VERSION = "1"


class Schema(BaseModel):

    class Config:

        allow_population_by_field_name = True

    def dict(self, *, exclude_none=True, by_alias=True, **kwargs):
        """Make `dict` exclude `None`s and use aliases by default."""
        return super().dict(
            exclude_none=exclude_none,
            by_alias=by_alias,
            **kwargs
        )

    def json(self, *, exclude_none=True, by_alias=True, **kwargs):
        return super().json(
            exclude_none=exclude_none,
            by_alias=by_alias,
            **kwargs
        )


# Feature schema

class FeatureSpec(Schema):

    name: str
    group: FeatureGroup
    unit: Optional[str] = None


class FeatureSchema(Schema):
    """Ordered feature list plus the parameters that produce it."""

    schema_version: str
    window_seconds: float = Field(1800.0, gt=0)
    bin_width: float = Field(150.0, gt=0)
    n_states: int = Field(3, ge=1)
    per_direction_markov: bool = False
    cipher_vocab: List[int]
    extension_vocab: List[int]
    version_vocab: List[int]
    features: List[FeatureSpec]

    @validator('features')
    def names_are_unique(cls, features):
        seen = set()
        for spec in features:
            if spec.name in seen:
                raise ValueError(f"duplicate feature name {spec.name!r}")
            seen.add(spec.name)
        return features

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.features]

    @property
    def dimension(self) -> int:
        return len(self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def names_in(self, group: FeatureGroup) -> List[str]:
        return [f.name for f in self.features if f.group == group]

    def dump(self) -> str:
        return canonical_json(self.dict())

    @classmethod
    def load(cls, path: Union[str, Path]) -> FeatureSchema:
        return cls.parse_file(path)


# Models and training

class HyperParams(Schema):

    n_estimators: int = Field(100, ge=1)
    max_depth: Optional[int] = Field(None, ge=1)
    min_samples_split: int = Field(2, ge=1)
    min_samples_leaf: int = Field(1, ge=1)
    learning_rate: float = Field(0.3, gt=0, le=1)
    min_child_weight: float = Field(1.0, ge=0)
    gamma: float = Field(0.0, ge=0)
    colsample: float = Field(1.0, gt=0, le=1)
    subsample: float = Field(1.0, gt=0, le=1)
    lambda_l2: float = Field(1.0, gt=0, alias='lambda')
    seed: int = Field(0, ge=0)
    bootstrap: bool = True
    # "sqrt", a fraction in (0, 1], or None for every feature; dumps drop
    # None, so every optional field must default to None
    max_features: Optional[Union[float, str]] = None

    @validator('max_features')
    def check_max_features(cls, v):
        if v is None or v == "sqrt":
            return v
        if isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                raise ValueError(
                    f"max_features must be 'sqrt', a fraction or null, "
                    f"got {v!r}"
                ) from None
        if not 0 < v <= 1:
            raise ValueError(f"max_features fraction {v} not in (0, 1]")
        return v

    def with_overrides(self, **overrides: Any) -> HyperParams:
        values = super().dict(by_alias=False, exclude_none=False)
        values.update(overrides)
        return HyperParams(**values)


class NodeRecord(Schema):
    """One node; leaves have `feature == -1` and no children."""

    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0
    cover: float = 0.0


class TreeRecord(Schema):

    nodes: List[NodeRecord]


class Provenance(Schema):

    tool: str = "tlsxplain"
    version: str
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)


class EnsembleFile(Schema):

    format_version: str = FORMAT_VERSION
    kind: ModelKind
    base_score: float
    learning_rate: float = 1.0
    feature_count: int = Field(..., ge=1)
    schema_version: str
    feature_names: Optional[List[str]] = None
    params: Optional[HyperParams] = None
    train_loss: Optional[List[float]] = None
    trees: List[TreeRecord]
    provenance: Optional[Provenance] = None


class OversampleSettings(Schema):

    enabled: bool = False
    k_neighbors: int = Field(5, ge=1)
    beta: float = Field(1.0, ge=0)
    # None oversamples the minority class
    target_class: Optional[int] = None
    target_share: Optional[float] = Field(None, gt=0, lt=1)


# Metrics

class MetricsReport(Schema):

    tp: int = Field(..., ge=0)
    tn: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)
    accuracy: float = Field(..., ge=0, le=1)
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)
    mcc: float = Field(..., ge=-1, le=1)
    false_positive_rate: float = Field(..., ge=0, le=1)

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "mcc")


class CrossValidationReport(Schema):

    k: int
    folds: List[MetricsReport]
    mean: Dict[str, float]
    std: Dict[str, float]


class ValidationPoint(Schema):

    value: Any
    train_mean: float
    train_std: float
    val_mean: float
    val_std: float


class ValidationCurveReport(Schema):

    param_name: str
    kind: ModelKind
    k: int
    points: List[ValidationPoint]
    best_value: Any


class TrainReport(Schema):

    kind: ModelKind
    params: HyperParams
    class_counts: Dict[str, int]
    cross_validation: Optional[CrossValidationReport] = None
    test: Optional[MetricsReport] = None
    provenance: Optional[Provenance] = None


class EvalReport(Schema):

    kind: ModelKind
    metrics: MetricsReport
    provenance: Optional[Provenance] = None


class TuneReport(Schema):

    curves: List[ValidationCurveReport]
    provenance: Optional[Provenance] = None


# Dataset manifest

class ManifestEntry(Schema):

    family: str
    type: str
    samples: int
    source: str


class ManifestTotals(Schema):

    by_family: Dict[str, int]
    by_type: Dict[str, int]
    total: int


# Explanations

class Contribution(Schema):

    feature: str
    value: Optional[float] = None
    phi: float
    direction: Direction


class LocalReport(Schema):
    """Data behind a force plot for one sample."""

    flow_id: str
    output_space: OutputSpace
    base_value: float
    fx: float
    probability: float
    base_margin: float
    fx_margin: float
    net_direction: Direction
    contributions: List[Contribution]
    others_phi: float = 0.0
    others_count: int = 0

    @root_validator(skip_on_failure=True)
    def sums_close(cls, values):
        total = sum(c.phi for c in values['contributions'])
        total += values['others_phi']
        gap = values['fx'] - values['base_value']
        if abs(total - gap) > 1e-6 * max(1.0, abs(values['fx'])):
            raise ValueError(
                f"contributions sum to {total}, expected {gap}"
            )
        return values


class FeatureImportance(Schema):

    feature: str
    index: int
    rank: int
    mean_abs_phi: float
    mean_phi: float
    # quantiles (0.05, 0.25, 0.5, 0.75, 0.95) of positive / negative phis
    positive_quantiles: Optional[List[float]] = None
    negative_quantiles: Optional[List[float]] = None


class GlobalSummary(Schema):

    output_space: OutputSpace
    n_samples: int
    base_value: float
    features: List[FeatureImportance]
    top_k: List[str]
    by_class: Optional[Dict[str, List[FeatureImportance]]] = None
    provenance: Optional[Provenance] = None

    @validator('features')
    def ranks_are_permutation(cls, features):
        ranks = sorted(f.rank for f in features)
        if ranks != list(range(1, len(features) + 1)):
            raise ValueError("ranks must be a permutation of 1..d")
        return features


# CLI side files

class Scaler(Schema):

    feature_names: List[str]
    mean: List[float]
    std: List[float]


class ExtractionLog(Schema):

    files: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    capture: Dict[str, int] = Field(default_factory=dict)
    flows: Dict[str, Any] = Field(default_factory=dict)
    rows: int = 0


class ExtractMeta(Schema):

    schema_version: str
    log: ExtractionLog
    provenance: Provenance
