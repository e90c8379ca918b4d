"""Exact Shapley attributions for tree ensembles.

`tree_shap` is the polynomial-time path-dependent algorithm: node covers
stand in for the distribution of features left out of a coalition.
`brute_force_shap` enumerates every coalition with the same conditional
expectation and serves as its oracle on small models.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed  # type: ignore

from .errors import (
    DimensionMismatch,
    EfficiencyViolation,
    EmptyInput,
    MissingCover,
    TooManyFeatures,
)
from .model import Tree, TreeEnsemble, model_output
from .objects import ShapExplanation
from .schemas import (
    Contribution,
    FeatureImportance,
    GlobalSummary,
    LocalReport,
)
from .types import Direction, Label, OutputSpace
from .utils import format_float, logit, sigmoid

logger = logging.getLogger(__name__)

MAX_BRUTE_FORCE_FEATURES = 14
EFFICIENCY_TOLERANCE = 1e-6
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def output_space(ensemble: TreeEnsemble) -> OutputSpace:
    return (OutputSpace.PROBABILITY if ensemble.is_averaging
            else OutputSpace.MARGIN)


def check_covers(ensemble: TreeEnsemble) -> None:
    for t, tree in enumerate(ensemble.trees):
        covers = tree.covers
        if len(covers) != tree.n_nodes or not np.all(np.isfinite(covers)) \
                or np.any(covers <= 0):
            raise MissingCover(
                f"tree {t} has missing or non-positive node covers"
            )


def _scale(ensemble: TreeEnsemble) -> float:
    return 1.0 / len(ensemble.trees) if ensemble.is_averaging else 1.0


def _offset(ensemble: TreeEnsemble) -> float:
    return 0.0 if ensemble.is_averaging else ensemble.base_score


# Path-dependent TreeSHAP

class _Path:
    """The unique feature path from the root to the current node."""

    __slots__ = ("feature", "zero", "one", "weight")

    def __init__(self, feature=(), zero=(), one=(), weight=()):
        self.feature = list(feature)
        self.zero = list(zero)
        self.one = list(one)
        self.weight = list(weight)

    def copy(self) -> _Path:
        return _Path(self.feature, self.zero, self.one, self.weight)

    def extend(self, zero: float, one: float, feature: int) -> None:
        depth = len(self.feature)
        self.feature.append(feature)
        self.zero.append(zero)
        self.one.append(one)
        self.weight.append(1.0 if depth == 0 else 0.0)
        w = self.weight
        for i in range(depth - 1, -1, -1):
            w[i + 1] += one * w[i] * (i + 1) / (depth + 1)
            w[i] = zero * w[i] * (depth - i) / (depth + 1)

    def unwind(self, index: int) -> None:
        depth = len(self.feature) - 1
        one, zero = self.one[index], self.zero[index]
        w = self.weight
        next_one = w[depth]
        for i in range(depth - 1, -1, -1):
            if one != 0:
                tmp = w[i]
                w[i] = next_one * (depth + 1) / ((i + 1) * one)
                next_one = tmp - w[i] * zero * (depth - i) / (depth + 1)
            else:
                w[i] = w[i] * (depth + 1) / (zero * (depth - i))
        for values in (self.feature, self.zero, self.one):
            del values[index]
        del w[depth]

    def unwound_sum(self, index: int) -> float:
        depth = len(self.feature) - 1
        one, zero = self.one[index], self.zero[index]
        w = self.weight
        next_one = w[depth]
        total = 0.0
        if one != 0:
            for i in range(depth - 1, -1, -1):
                tmp = next_one / ((i + 1) * one)
                total += tmp
                next_one = w[i] - tmp * zero * (depth - i)
        else:
            for i in range(depth - 1, -1, -1):
                total += w[i] / (zero * (depth - i))
        return total * (depth + 1)


class _TreeView:
    """Plain-list copy of a tree for the recursive walk."""

    def __init__(self, tree: Tree):
        self.left = tree.children_left.tolist()
        self.right = tree.children_right.tolist()
        self.feature = tree.features.tolist()
        self.threshold = tree.thresholds.tolist()
        self.value = tree.values.tolist()
        self.cover = tree.covers.tolist()


def _tree_shap_recursive(tree: _TreeView, x: Sequence[float],
                         phi: np.ndarray, node: int, path: _Path,
                         zero: float, one: float, feature: int,
                         scale: float) -> None:
    path = path.copy()
    path.extend(zero, one, feature)
    left = tree.left[node]
    if left < 0:
        value = tree.value[node] * scale
        for i in range(1, len(path.feature)):
            w = path.unwound_sum(i)
            phi[path.feature[i]] += w * (path.one[i] - path.zero[i]) * value
        return

    split = tree.feature[node]
    right = tree.right[node]
    hot, cold = (left, right) if x[split] <= tree.threshold[node] \
        else (right, left)
    cover = tree.cover[node]
    incoming_zero = incoming_one = 1.0
    if split in path.feature:
        k = path.feature.index(split)
        incoming_zero, incoming_one = path.zero[k], path.one[k]
        path.unwind(k)
    _tree_shap_recursive(tree, x, phi, hot, path,
                         incoming_zero * tree.cover[hot] / cover,
                         incoming_one, split, scale)
    _tree_shap_recursive(tree, x, phi, cold, path,
                         incoming_zero * tree.cover[cold] / cover,
                         0.0, split, scale)


def tree_expected_value(tree: Tree) -> float:
    """Cover-weighted mean leaf value, accumulated bottom-up."""
    expected = tree.values.astype(np.float64).copy()
    for node in range(tree.n_nodes - 1, -1, -1):
        left = tree.children_left[node]
        if left < 0:
            continue
        right = tree.children_right[node]
        cover = tree.covers[node]
        expected[node] = (tree.covers[left] / cover * expected[left]
                          + tree.covers[right] / cover * expected[right])
    return float(expected[0])


def expected_value(ensemble: TreeEnsemble) -> float:
    """Ensemble output with every feature left out of the coalition."""
    check_covers(ensemble)
    total = sum(tree_expected_value(t) for t in ensemble.trees)
    return _offset(ensemble) + _scale(ensemble) * total


def _vector(ensemble: TreeEnsemble, x) -> np.ndarray:
    values = getattr(x, 'values', x)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (ensemble.feature_count,):
        raise DimensionMismatch(
            f"expected {ensemble.feature_count} features, got shape "
            f"{values.shape}"
        )
    return values


def tree_phi(tree: Tree, x: Sequence[float], n_features: int,
             scale: float = 1.0) -> np.ndarray:
    phi = np.zeros(n_features)
    _tree_shap_recursive(_TreeView(tree), list(x), phi, 0, _Path(),
                         1.0, 1.0, -1, scale)
    return phi


def tree_shap(ensemble: TreeEnsemble, x, flow_id: str = "") \
        -> ShapExplanation:
    """Attributions in the ensemble's additive output space.

    Boosted models are explained in margin units; averaging models in
    probability units, each tree contributing 1/T of its leaf values.
    """
    check_covers(ensemble)
    values = _vector(ensemble, x)
    scale = _scale(ensemble)
    phi = np.zeros(ensemble.feature_count)
    row = values.tolist()
    for tree in ensemble.trees:
        _tree_shap_recursive(_TreeView(tree), row, phi, 0, _Path(),
                             1.0, 1.0, -1, scale)
    return ShapExplanation(
        base_value=expected_value(ensemble),
        phi=phi,
        fx=float(model_output(ensemble, values)[0]),
        flow_id=flow_id or getattr(x, 'flow_id', ""),
        output_space=output_space(ensemble),
    )


def check_efficiency(explanation: ShapExplanation,
                     tolerance: float = EFFICIENCY_TOLERANCE) -> None:
    limit = tolerance * max(1.0, abs(explanation.fx))
    if explanation.closure_error > limit:
        raise EfficiencyViolation(
            f"{explanation.flow_id or 'sample'}: base + sum(phi) misses "
            f"f(x) by {explanation.closure_error:.3g}"
        )


def _explain_rows(ensemble, X, flow_ids):
    return [tree_shap(ensemble, X[i], flow_ids[i]) for i in range(len(X))]


def explain_batch(ensemble: TreeEnsemble, X: np.ndarray,
                  flow_ids: Optional[Sequence[str]] = None,
                  jobs: int = 1, check: bool = True) \
        -> List[ShapExplanation]:
    """Explain every row; efficiency is checked before returning."""
    X = np.asarray(X, dtype=np.float64)
    check_covers(ensemble)
    ids = list(flow_ids) if flow_ids is not None else [""] * len(X)
    if jobs == 1 or len(X) < 2:
        explanations = _explain_rows(ensemble, X, ids)
    else:
        chunks = np.array_split(np.arange(len(X)), min(len(X), 4 * jobs))
        parts = Parallel(n_jobs=jobs)(
            delayed(_explain_rows)(ensemble, X[c], [ids[i] for i in c])
            for c in chunks if len(c)
        )
        explanations = [e for part in parts for e in part]
    if check:
        for e in explanations:
            check_efficiency(e)
    return explanations


# Coalition enumeration

def _tree_coalition_values(tree: Tree, x: np.ndarray,
                           in_coalition: np.ndarray) -> np.ndarray:
    """v(S) of one tree for every subset S (rows of `in_coalition`)."""
    out = np.zeros(in_coalition.shape[0])
    stack = [(0, np.ones(in_coalition.shape[0]))]
    while stack:
        node, weight = stack.pop()
        left = tree.children_left[node]
        if left < 0:
            out += weight * tree.values[node]
            continue
        right = tree.children_right[node]
        f = tree.features[node]
        goes_left = x[f] <= tree.thresholds[node]
        known = in_coalition[:, f]
        cover = tree.covers[node]
        for child, hot in ((left, goes_left), (right, not goes_left)):
            fraction = tree.covers[child] / cover
            w = weight * np.where(known, 1.0 if hot else 0.0, fraction)
            if np.any(w):
                stack.append((child, w))
    return out


def _membership(masks: np.ndarray, n_features: int) -> np.ndarray:
    return ((masks[:, None] >> np.arange(n_features)[None, :]) & 1) \
        .astype(bool)


def coalition_value(ensemble: TreeEnsemble, x, subset: Iterable[int]) \
        -> float:
    """Expected output when only the features in `subset` are known."""
    check_covers(ensemble)
    values = _vector(ensemble, x)
    known = np.zeros((1, ensemble.feature_count), dtype=bool)
    for f in subset:
        known[0, f] = True
    total = sum(float(_tree_coalition_values(t, values, known)[0])
                for t in ensemble.trees)
    return _offset(ensemble) + _scale(ensemble) * total


def brute_force_shap(ensemble: TreeEnsemble, x) -> np.ndarray:
    """Shapley values by summing over all 2^d coalitions."""
    d = ensemble.feature_count
    if d > MAX_BRUTE_FORCE_FEATURES:
        raise TooManyFeatures(
            f"{d} features; exhaustive enumeration is limited to "
            f"{MAX_BRUTE_FORCE_FEATURES}"
        )
    check_covers(ensemble)
    values = _vector(ensemble, x)
    masks = np.arange(1 << d, dtype=np.int64)
    known = _membership(masks, d)
    v = np.full(len(masks), _offset(ensemble))
    for tree in ensemble.trees:
        v += _scale(ensemble) * _tree_coalition_values(tree, values, known)

    sizes = known.sum(axis=1)
    weights = np.array([
        math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
        if s < d else 0.0
        for s in range(d + 1)
    ])
    phi = np.zeros(d)
    for i in range(d):
        without = masks[~known[:, i]]
        gains = v[without | (1 << i)] - v[without]
        phi[i] = float(np.sum(weights[sizes[without]] * gains))
    return phi


# Reports

def _direction(phi: float) -> Direction:
    if phi > 0:
        return Direction.PUSHES_MALWARE
    if phi < 0:
        return Direction.PUSHES_NORMAL
    return Direction.NEUTRAL


def _importances(phi: np.ndarray, names: Sequence[str]) \
        -> List[FeatureImportance]:
    mean_abs = np.abs(phi).mean(axis=0)
    mean = phi.mean(axis=0)
    order = np.argsort(-mean_abs, kind='stable')
    out = []
    for rank, j in enumerate(order, start=1):
        column = phi[:, j]
        positive, negative = column[column > 0], column[column < 0]
        out.append(FeatureImportance(
            feature=names[j],
            index=int(j),
            rank=rank,
            mean_abs_phi=float(mean_abs[j]),
            mean_phi=float(mean[j]),
            positive_quantiles=[float(q) for q in np.quantile(
                positive, QUANTILES)] if len(positive) else None,
            negative_quantiles=[float(q) for q in np.quantile(
                negative, QUANTILES)] if len(negative) else None,
        ))
    return out


def _phi_matrix(explanations: Sequence[ShapExplanation]) -> np.ndarray:
    if not explanations:
        raise EmptyInput("no explanations to summarize")
    dims = {len(e.phi) for e in explanations}
    if len(dims) != 1:
        raise DimensionMismatch(f"explanations of dimensions {sorted(dims)}")
    return np.vstack([e.phi for e in explanations])


def global_summary(
        explanations: Sequence[ShapExplanation],
        feature_names: Sequence[str],
        k: int = 10,
        labels: Optional[Sequence[int]] = None
) -> GlobalSummary:
    """Mean |phi| ranking; ties keep feature order."""
    phi = _phi_matrix(explanations)
    if phi.shape[1] != len(feature_names):
        raise DimensionMismatch(
            f"{phi.shape[1]} attributions for {len(feature_names)} names"
        )
    features = _importances(phi, feature_names)
    by_class: Optional[Dict[str, List[FeatureImportance]]] = None
    if labels is not None:
        y = np.asarray(labels)
        if len(y) != len(phi):
            raise DimensionMismatch(
                f"{len(y)} labels for {len(phi)} explanations"
            )
        by_class = {
            Label(int(c)).name.lower(): _importances(phi[y == c],
                                                     feature_names)
            for c in np.unique(y) if int(c) in (Label.NORMAL, Label.MALWARE)
        }
    return GlobalSummary(
        output_space=explanations[0].output_space,
        n_samples=len(phi),
        base_value=float(np.mean([e.base_value for e in explanations])),
        features=features,
        top_k=[f.feature for f in features[:max(0, k)]],
        by_class=by_class,
    )


def local_report(
        explanation: ShapExplanation,
        feature_names: Sequence[str],
        values: Optional[Sequence[float]] = None,
        top_k: int = 10
) -> LocalReport:
    """Force-plot data: the top contributions plus an "others" term."""
    phi = explanation.phi
    if len(phi) != len(feature_names):
        raise DimensionMismatch(
            f"{len(phi)} attributions for {len(feature_names)} names"
        )
    order = np.argsort(-np.abs(phi), kind='stable')
    shown, rest = order[:max(0, top_k)], order[max(0, top_k):]
    contributions = [
        Contribution(
            feature=feature_names[j],
            value=None if values is None else float(values[j]),
            phi=float(phi[j]),
            direction=_direction(float(phi[j])),
        )
        for j in shown
    ]
    base, fx = explanation.base_value, explanation.fx
    if explanation.output_space is OutputSpace.PROBABILITY:
        probability = fx
        base_margin, fx_margin = logit(base), logit(fx)
    else:
        probability = sigmoid(fx)
        base_margin, fx_margin = base, fx
    return LocalReport(
        flow_id=explanation.flow_id,
        output_space=explanation.output_space,
        base_value=base,
        fx=fx,
        probability=probability,
        base_margin=base_margin,
        fx_margin=fx_margin,
        net_direction=_direction(fx - base),
        contributions=contributions,
        others_phi=float(phi[rest].sum()) if len(rest) else 0.0,
        others_count=len(rest),
    )


def importance_csv(summary: GlobalSummary) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(["feature", "mean_abs_phi", "mean_phi", "rank"])
    for f in summary.features:
        writer.writerow([f.feature, format_float(f.mean_abs_phi),
                         format_float(f.mean_phi), f.rank])
    return out.getvalue()


def dependence_rows(
        explanations: Sequence[ShapExplanation],
        X: np.ndarray,
        feature_names: Sequence[str],
        features: Optional[Sequence[str]] = None
) -> List[Tuple[str, str, float, float]]:
    """Long-form (feature, flow_id, value, phi) rows for plotting."""
    phi = _phi_matrix(explanations)
    X = np.asarray(X, dtype=np.float64)
    if X.shape != phi.shape:
        raise DimensionMismatch(
            f"values of shape {X.shape} for attributions {phi.shape}"
        )
    index = {name: j for j, name in enumerate(feature_names)}
    rows = []
    for name in (features if features is not None else feature_names):
        j = index[name]
        rows.extend(
            (name, e.flow_id, float(X[i, j]), float(phi[i, j]))
            for i, e in enumerate(explanations)
        )
    return rows


def dependence_csv(rows: Iterable[Tuple[str, str, float, float]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(["feature", "flow_id", "value", "phi"])
    for feature, flow_id, value, phi in rows:
        writer.writerow([feature, flow_id, format_float(value),
                         format_float(phi)])
    return out.getvalue()
