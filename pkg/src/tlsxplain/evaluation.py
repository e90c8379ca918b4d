"""Metrics, k-fold cross-validation and validation curves."""
from __future__ import annotations

import logging
import math
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed  # type: ignore

from .dataset import LabeledDataset, adasyn, kfold_split
from .errors import ConfigError, LengthMismatch, NonBinaryLabel
from .model import TreeEnsemble, default_params, predict_batch, train
from .schemas import (
    METRIC_NAMES,
    CrossValidationReport,
    HyperParams,
    MetricsReport,
    OversampleSettings,
    ValidationCurveReport,
    ValidationPoint,
)
from .types import ModelKind

logger = logging.getLogger(__name__)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_metrics(y_true: Sequence[int], y_pred: Sequence[int]) \
        -> MetricsReport:
    """Confusion counts and rates; zero denominators give 0."""
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if len(t) != len(p):
        raise LengthMismatch(f"{len(t)} true labels, {len(p)} predictions")
    for name, values in (("true", t), ("predicted", p)):
        if not np.all(np.isin(values, (0, 1))):
            raise NonBinaryLabel(f"{name} labels must be 0 or 1")
    tp = int(np.sum((t == 1) & (p == 1)))
    tn = int(np.sum((t == 0) & (p == 0)))
    fp = int(np.sum((t == 0) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    return metrics_from_counts(tp, tn, fp, fn)


def metrics_from_counts(tp: int, tn: int, fp: int, fn: int) \
        -> MetricsReport:
    n = tp + tn + fp + fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = min(1.0, _ratio(2 * precision * recall, precision + recall))
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(den) if den else 0.0
    return MetricsReport(
        tp=tp, tn=tn, fp=fp, fn=fn,
        accuracy=_ratio(tp + tn, n),
        precision=precision,
        recall=recall,
        f1=f1,
        mcc=max(-1.0, min(1.0, mcc)),
        false_positive_rate=_ratio(fp, fp + tn),
    )


def evaluate(ensemble: TreeEnsemble, ds: LabeledDataset) -> MetricsReport:
    _, _, labels = predict_batch(ensemble, ds.X)
    return compute_metrics(ds.y, labels)


def summarize(reports: Sequence[MetricsReport]) \
        -> Tuple[Dict[str, float], Dict[str, float]]:
    """Mean and population std of each metric across folds."""
    mean, std = {}, {}
    for name in METRIC_NAMES:
        values = np.array([getattr(r, name) for r in reports])
        mean[name] = float(values.mean())
        std[name] = float(values.std())
    return mean, std


def _fit_fold(ds: LabeledDataset, train_idx, val_idx, kind: ModelKind,
              params: HyperParams, oversample: Optional[OversampleSettings],
              fold: int) -> Tuple[MetricsReport, MetricsReport]:
    fit_on = ds.subset(train_idx)
    if oversample is not None and oversample.enabled:
        # synthetic rows never reach the validation fold
        fit_on = adasyn(
            fit_on, k_neighbors=oversample.k_neighbors,
            beta=oversample.beta, seed=params.seed + fold,
            target_class=oversample.target_class,
            target_share=oversample.target_share,
        )
    model = train(kind, fit_on.X, fit_on.y, params)
    original = ds.subset(train_idx)
    held_out = ds.subset(val_idx)
    return (compute_metrics(original.y, predict_batch(model, original.X)[2]),
            compute_metrics(held_out.y, predict_batch(model, held_out.X)[2]))


def _fold_reports(ds, kind, params, k, seed, oversample, jobs):
    folds = kfold_split(len(ds), k, seed, labels=ds.y)
    everything = np.arange(len(ds))
    return Parallel(n_jobs=jobs)(
        delayed(_fit_fold)(
            ds, np.setdiff1d(everything, val), val, kind, params,
            oversample, f,
        )
        for f, val in enumerate(folds)
    )


def cross_validate(
        ds: LabeledDataset,
        kind: ModelKind,
        params: Optional[HyperParams] = None,
        k: int = 10,
        seed: int = 0,
        oversample: Optional[OversampleSettings] = None,
        jobs: int = 1
) -> CrossValidationReport:
    kind = ModelKind(kind)
    params = params if params is not None else default_params(kind)
    results = _fold_reports(ds, kind, params, k, seed, oversample, jobs)
    folds = [val for _, val in results]
    mean, std = summarize(folds)
    logger.info("%d-fold %s: mean mcc %.4f", k, kind.alias, mean["mcc"])
    return CrossValidationReport(k=k, folds=folds, mean=mean, std=std)


def _value_key(value: Any):
    # None (unlimited) sorts after every number
    return (value is None, value if value is not None else 0)


def validation_curve(
        ds: LabeledDataset,
        kind: ModelKind,
        param_name: str,
        values: Sequence[Any],
        params: Optional[HyperParams] = None,
        k: int = 10,
        seed: int = 0,
        scoring: str = "accuracy",
        oversample: Optional[OversampleSettings] = None,
        jobs: int = 1
) -> ValidationCurveReport:
    """Cross-validated train/validation score per candidate value."""
    kind = ModelKind(kind)
    fields = HyperParams.__fields__
    aliases = {f.alias: name for name, f in fields.items()}
    field_name = aliases.get(param_name, param_name)
    if field_name not in fields:
        raise ConfigError(f"unknown hyper-parameter {param_name!r}")
    if scoring not in METRIC_NAMES:
        raise ConfigError(f"unknown score {scoring!r}")
    if not values:
        raise ConfigError(f"no candidate values for {param_name}")
    base = params if params is not None else default_params(kind)

    points = []
    for value in values:
        candidate = base.with_overrides(**{field_name: value})
        results = _fold_reports(ds, kind, candidate, k, seed, oversample,
                                jobs)
        train_scores = np.array([getattr(t, scoring) for t, _ in results])
        val_scores = np.array([getattr(v, scoring) for _, v in results])
        points.append(ValidationPoint(
            value=value,
            train_mean=float(train_scores.mean()),
            train_std=float(train_scores.std()),
            val_mean=float(val_scores.mean()),
            val_std=float(val_scores.std()),
        ))
        logger.info("%s=%r: validation %s %.4f", param_name, value,
                    scoring, points[-1].val_mean)

    top = max(p.val_mean for p in points)
    best = min((p.value for p in points if p.val_mean == top),
               key=_value_key)
    return ValidationCurveReport(param_name=param_name, kind=kind, k=k,
                                 points=points, best_value=best)


def compare_models(
        train_ds: LabeledDataset,
        test_ds: LabeledDataset,
        kinds: Sequence[ModelKind] = tuple(ModelKind),
        params: Optional[Dict[ModelKind, HyperParams]] = None,
        jobs: int = 1
) -> Dict[str, MetricsReport]:
    """Held-out metrics of each model kind trained on the same split."""
    reports: Dict[str, MetricsReport] = {}
    for kind in kinds:
        kind = ModelKind(kind)
        kind_params = (params or {}).get(kind) or default_params(kind)
        model = train(kind, train_ds.X, train_ds.y, kind_params, jobs=jobs)
        reports[kind.alias] = evaluate(model, test_ds)
    return reports

