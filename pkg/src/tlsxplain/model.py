"""Tree ensembles: random forest, extra trees and logistic boosting.

Trees are stored as parallel, index-linked node arrays. Node 0 is the
root; leaves have `children_left == -1`. A sample goes left when
`x[feature] <= threshold`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed  # type: ignore

from .errors import (
    DimensionMismatch,
    EmptyData,
    NonBinaryLabel,
    SingleClass,
)
from .objects import FeatureVector, Prediction
from .schemas import (
    EnsembleFile,
    HyperParams,
    NodeRecord,
    Provenance,
    TreeRecord,
)
from .types import ModelKind, SplitRule
from .utils import (
    PathLike,
    atomic_write,
    canonical_json,
    logit,
    logit_array,
    sigmoid,
    sigmoid_array,
)

logger = logging.getLogger(__name__)

LEAF = -1
# hessians are floored so boosted covers stay positive
MIN_HESSIAN = 1e-16


@dataclass(frozen=True, eq=False)
class Tree:

    children_left: np.ndarray
    children_right: np.ndarray
    features: np.ndarray
    thresholds: np.ndarray
    values: np.ndarray
    covers: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.values)

    def is_leaf(self, node: int) -> bool:
        return self.children_left[node] == LEAF

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if not self.is_leaf(node):
                for child in (self.children_left[node],
                              self.children_right[node]):
                    depths[child] = depths[node] + 1
        return int(depths.max()) if self.n_nodes else 0

    @property
    def used_features(self) -> List[int]:
        return sorted({int(f) for f in self.features if f != LEAF})

    def leaf_index(self, x: np.ndarray) -> int:
        node = 0
        while self.children_left[node] != LEAF:
            if x[self.features[node]] <= self.thresholds[node]:
                node = self.children_left[node]
            else:
                node = self.children_right[node]
        return node

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of X."""
        nodes = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.children_left[nodes] != LEAF
        while np.any(active):
            r, n = rows[active], nodes[active]
            go_left = X[r, self.features[n]] <= self.thresholds[n]
            nodes[r] = np.where(go_left, self.children_left[n],
                                self.children_right[n])
            active = self.children_left[nodes] != LEAF
        return nodes

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.values[self.apply(X)]

    def to_record(self) -> TreeRecord:
        return TreeRecord(nodes=[
            NodeRecord(
                feature=int(self.features[i]),
                threshold=float(self.thresholds[i]),
                left=int(self.children_left[i]),
                right=int(self.children_right[i]),
                value=float(self.values[i]),
                cover=float(self.covers[i]),
            )
            for i in range(self.n_nodes)
        ])

    @classmethod
    def from_record(cls, record: TreeRecord) -> Tree:
        nodes = record.nodes
        return cls(
            children_left=np.array([n.left for n in nodes], dtype=np.int64),
            children_right=np.array([n.right for n in nodes],
                                    dtype=np.int64),
            features=np.array([n.feature for n in nodes], dtype=np.int64),
            thresholds=np.array([n.threshold for n in nodes],
                                dtype=np.float64),
            values=np.array([n.value for n in nodes], dtype=np.float64),
            covers=np.array([n.cover for n in nodes], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> Tree:
        return cls(
            children_left=np.array([LEAF]), children_right=np.array([LEAF]),
            features=np.array([LEAF]), thresholds=np.array([0.0]),
            values=np.array([float(value)]), covers=np.array([float(cover)]),
        )


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    """Trained trees plus the rule that combines them.

    Forest and extra-trees leaves hold class-1 probabilities that are
    averaged; boosted leaves hold margin increments added to
    `base_score`.
    """

    kind: ModelKind
    trees: List[Tree]
    base_score: float
    feature_count: int
    schema_version: str = ""
    learning_rate: float = 1.0
    feature_names: Optional[List[str]] = None
    params: Optional[HyperParams] = None
    train_loss: List[float] = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, 'kind', ModelKind(self.kind))
        for t, tree in enumerate(self.trees):
            used = tree.used_features
            if used and used[-1] >= self.feature_count:
                raise DimensionMismatch(
                    f"tree {t} splits on feature {used[-1]} but the model "
                    f"has {self.feature_count} features"
                )
        if (self.kind is not ModelKind.BOOSTED) and not self.trees:
            raise EmptyData(f"{self.kind.value} ensemble without trees")

    @property
    def is_averaging(self) -> bool:
        return self.kind is not ModelKind.BOOSTED


# Prediction

def _as_matrix(ensemble: TreeEnsemble, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != ensemble.feature_count:
        raise DimensionMismatch(
            f"expected {ensemble.feature_count} features, got shape "
            f"{X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise DimensionMismatch("feature values must be finite")
    return X


def model_output(ensemble: TreeEnsemble, X) -> np.ndarray:
    """Mean leaf probability (averaging kinds) or margin (boosted)."""
    X = _as_matrix(ensemble, X)
    if ensemble.is_averaging:
        total = np.zeros(len(X))
        for tree in ensemble.trees:
            total += tree.predict(X)
        return total / len(ensemble.trees)
    margin = np.full(len(X), ensemble.base_score)
    for tree in ensemble.trees:
        margin += tree.predict(X)
    return margin


def predict_batch(ensemble: TreeEnsemble, X) \
        -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Margins, probabilities and 0/1 labels for every row of X."""
    out = model_output(ensemble, X)
    if ensemble.is_averaging:
        probability = out
        margin = logit_array(out)
    else:
        margin = out
        probability = sigmoid_array(out)
    labels = (probability >= 0.5).astype(np.int64)
    return margin, probability, labels


def predict(ensemble: TreeEnsemble,
            x: Union[FeatureVector, Sequence[float], np.ndarray]) \
        -> Prediction:
    values = x.values if isinstance(x, FeatureVector) else x
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise DimensionMismatch(f"expected one sample, got {values.shape}")
    out = float(model_output(ensemble, values)[0])
    if ensemble.is_averaging:
        probability, margin = out, logit(out)
    else:
        probability, margin = sigmoid(out), out
    return Prediction(margin=margin, probability=probability,
                      label=int(probability >= 0.5))


# Tree growing

def resolve_max_features(max_features, n_features: int) -> int:
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    return max(1, min(n_features, int(float(max_features) * n_features)))


class _TreeBuilder:
    """Greedy recursive splitting over per-row statistics.

    Every row carries (a, b, c): for gini a = w*y, b = w; for the boosted
    gain a = g, b = h. c is 1 per distinct row, so `min_samples_leaf` and
    `min_samples_split` count rows, not bootstrap draws. Node covers are
    b sums.
    """

    def __init__(self, X: np.ndarray, params: HyperParams, rule: SplitRule,
                 rng: np.random.Generator, *, randomized: bool = False,
                 allowed: Optional[np.ndarray] = None,
                 max_features=None):
        self.X = X
        self.params = params
        self.rule = SplitRule(rule)
        self.rng = rng
        self.randomized = randomized
        self.allowed = (np.arange(X.shape[1]) if allowed is None
                        else np.asarray(allowed))
        self.n_candidates = resolve_max_features(max_features,
                                                 len(self.allowed))
        self.max_depth = params.max_depth
        self.left: List[int] = []
        self.right: List[int] = []
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.value: List[float] = []
        self.cover: List[float] = []

    def build(self, rows: np.ndarray, a: np.ndarray, b: np.ndarray,
              c: np.ndarray) -> Tree:
        self.a, self.b, self.c = a, b, c
        self._grow(np.asarray(rows, dtype=np.int64), 0)
        return Tree(
            children_left=np.array(self.left, dtype=np.int64),
            children_right=np.array(self.right, dtype=np.int64),
            features=np.array(self.feature, dtype=np.int64),
            thresholds=np.array(self.threshold, dtype=np.float64),
            values=np.array(self.value, dtype=np.float64),
            covers=np.array(self.cover, dtype=np.float64),
        )

    def _leaf_value(self, A: float, B: float) -> float:
        """Gini leaves hold the class-1 probability; boosted leaves hold a
        log-odds increment already scaled by the learning rate."""
        if self.rule is SplitRule.GINI:
            return A / B
        return -A / (B + self.params.lambda_l2) * self.params.learning_rate

    def _score(self, A, B):
        if self.rule is SplitRule.GINI:
            # weighted gini impurity: B * 2p(1-p) with p = A/B
            with np.errstate(invalid='ignore', divide='ignore'):
                return np.where(B > 0, 2.0 * A * (B - A) / B, 0.0)
        return A * A / (B + self.params.lambda_l2)

    def _gain(self, A_l, B_l, A, B):
        A_r, B_r = A - A_l, B - B_l
        if self.rule is SplitRule.GINI:
            return (self._score(A, B) - self._score(A_l, B_l)
                    - self._score(A_r, B_r))
        return (0.5 * (self._score(A_l, B_l) + self._score(A_r, B_r)
                       - self._score(A, B)) - self.params.gamma)

    def _allowed_children(self, B_l, C_l, B, C):
        p = self.params
        ok = (C_l >= p.min_samples_leaf) & (C - C_l >= p.min_samples_leaf)
        if self.rule is SplitRule.BOOSTED_GAIN:
            ok &= (B_l >= p.min_child_weight) & (B - B_l >= p.min_child_weight)
        return ok

    def _new_node(self, value: float, cover: float) -> int:
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.value.append(value)
        self.cover.append(cover)
        return len(self.value) - 1

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        A = float(self.a[rows].sum())
        B = float(self.b[rows].sum())
        C = float(self.c[rows].sum())
        node = self._new_node(self._leaf_value(A, B), B)

        if self.max_depth is not None and depth >= self.max_depth:
            return node
        if C < self.params.min_samples_split:
            return node
        if self.rule is SplitRule.GINI and (A == 0 or A == B):
            return node
        split = self._best_split(rows, A, B, C)
        if split is None:
            return node

        f, threshold = split
        go_left = self.X[rows, f] <= threshold
        left = self._grow(rows[go_left], depth + 1)
        right = self._grow(rows[~go_left], depth + 1)
        self.left[node], self.right[node] = left, right
        self.feature[node], self.threshold[node] = f, threshold
        # exact additivity for path-dependent explanations
        self.cover[node] = self.cover[left] + self.cover[right]
        return node

    def _candidates(self, rows: np.ndarray) -> np.ndarray:
        block = self.X[np.ix_(rows, self.allowed)]
        varying = self.allowed[block.min(axis=0) < block.max(axis=0)]
        if len(varying) <= self.n_candidates:
            if self.n_candidates < len(self.allowed):
                return self.rng.permutation(varying)
            return varying
        return self.rng.choice(varying, size=self.n_candidates,
                               replace=False)

    def _best_split(self, rows, A, B, C) -> Optional[Tuple[int, float]]:
        best: Optional[Tuple[int, float]] = None
        best_gain = 0.0
        for f in self._candidates(rows):
            f = int(f)
            if self.randomized:
                found = self._random_cut(rows, f, A, B, C)
            else:
                found = self._exact_cut(rows, f, A, B, C)
            if found is not None and found[1] > best_gain:
                best, best_gain = (f, found[0]), found[1]
        return best

    def _exact_cut(self, rows, f, A, B, C) -> Optional[Tuple[float, float]]:
        xs = self.X[rows, f]
        order = np.argsort(xs, kind='stable')
        xs = xs[order]
        A_l = np.cumsum(self.a[rows][order])[:-1]
        B_l = np.cumsum(self.b[rows][order])[:-1]
        C_l = np.cumsum(self.c[rows][order])[:-1]
        valid = (xs[:-1] < xs[1:]) & self._allowed_children(B_l, C_l, B, C)
        if not np.any(valid):
            return None
        gains = np.where(valid, self._gain(A_l, B_l, A, B), -np.inf)
        i = int(np.argmax(gains))
        if not gains[i] > 0:
            return None
        lo, hi = xs[i], xs[i + 1]
        threshold = (lo + hi) / 2.0
        if threshold >= hi:
            threshold = lo
        return float(threshold), float(gains[i])

    def _random_cut(self, rows, f, A, B, C) -> Optional[Tuple[float, float]]:
        xs = self.X[rows, f]
        lo, hi = float(xs.min()), float(xs.max())
        threshold = float(self.rng.uniform(lo, hi))
        if threshold >= hi:
            threshold = lo
        left = xs <= threshold
        A_l = float(self.a[rows][left].sum())
        B_l = float(self.b[rows][left].sum())
        C_l = float(self.c[rows][left].sum())
        if not self._allowed_children(B_l, C_l, B, C):
            return None
        gain = float(self._gain(A_l, B_l, A, B))
        if not gain > 0:
            return None
        return threshold, gain


# Training

def _check_data(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyData(f"training data of shape {X.shape}")
    if len(y) != len(X):
        raise DimensionMismatch(f"{len(y)} labels for {len(X)} rows")
    if not np.all(np.isin(y, (0, 1))):
        bad = sorted(set(np.unique(y).tolist()) - {0, 1})
        raise NonBinaryLabel(f"labels must be 0 or 1, found {bad[:5]}")
    if not np.all(np.isfinite(X)):
        raise DimensionMismatch("training features must be finite")
    return X, y.astype(np.float64)


def train_cart(
        X,
        y,
        params: Optional[HyperParams] = None,
        split_rule: SplitRule = SplitRule.GINI,
        rng: Optional[np.random.Generator] = None,
        *,
        weights: Optional[np.ndarray] = None,
        margins: Optional[np.ndarray] = None
) -> Tree:
    """One greedy tree over every feature.

    Gini trees store weighted class-1 fractions (probabilities, never
    logits); boosted-gain trees fit the logistic gradients at `margins`
    (default 0) and store margin increments.
    """
    X, y = _check_data(X, y)
    params = params if params is not None else HyperParams()
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    builder = _TreeBuilder(X, params, split_rule, rng,
                           max_features=params.max_features)
    if SplitRule(split_rule) is SplitRule.GINI:
        w = np.ones(len(X)) if weights is None else np.asarray(weights, float)
        rows = np.flatnonzero(w > 0)
        return builder.build(rows, w * y, w, np.ones(len(X)))
    m = np.zeros(len(X)) if margins is None else np.asarray(margins, float)
    g, h = _gradients(m, y)
    return builder.build(np.arange(len(X)), g, h, np.ones(len(X)))


def bootstrap_counts(n: int, seed: int, tree_index: int) -> np.ndarray:
    """How often each row is drawn into tree `tree_index`'s resample."""
    return _bootstrap(np.random.default_rng(seed ^ tree_index), n)


def _bootstrap(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.bincount(rng.integers(0, n, size=n),
                       minlength=n).astype(np.float64)


def _fit_averaged_tree(X, y, params: HyperParams, index: int,
                       randomized: bool) -> Tree:
    rng = np.random.default_rng(params.seed ^ index)
    if params.bootstrap:
        w = _bootstrap(rng, len(X))
    else:
        w = np.ones(len(X))
    builder = _TreeBuilder(X, params, SplitRule.GINI, rng,
                           randomized=randomized,
                           max_features=params.max_features)
    return builder.build(np.flatnonzero(w > 0), w * y, w, w)


def _train_averaged(kind: ModelKind, X, y, params: HyperParams,
                    randomized: bool, jobs: int, **meta) -> TreeEnsemble:
    X, y = _check_data(X, y)
    trees = Parallel(n_jobs=jobs)(
        delayed(_fit_averaged_tree)(X, y, params, i, randomized)
        for i in range(params.n_estimators)
    )
    logger.info("Trained %s with %d trees", kind.value, len(trees))
    return TreeEnsemble(kind=kind, trees=list(trees), base_score=0.0,
                        feature_count=X.shape[1], params=params, **meta)


def train_random_forest(X, y, params: Optional[HyperParams] = None,
                        jobs: int = 1, **meta) -> TreeEnsemble:
    """Bootstrap-aggregated gini trees; prediction is the mean leaf
    probability, i.e. a weighted average of the training labels that
    share the sample's leaf in each tree."""
    params = params if params is not None else default_params(
        ModelKind.FOREST)
    return _train_averaged(ModelKind.FOREST, X, y, params, False, jobs,
                           **meta)


def train_extra_trees(X, y, params: Optional[HyperParams] = None,
                      jobs: int = 1, **meta) -> TreeEnsemble:
    params = params if params is not None else default_params(
        ModelKind.EXTRA)
    return _train_averaged(ModelKind.EXTRA, X, y, params, True, jobs,
                           **meta)


def _gradients(margins: np.ndarray, y: np.ndarray):
    p = sigmoid_array(margins)
    return p - y, np.maximum(p * (1.0 - p), MIN_HESSIAN)


def log_loss(y: np.ndarray, margins: np.ndarray) -> float:
    """Mean logistic loss, evaluated stably in margin space."""
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, margins) - y * margins))


def train_boosted(X, y, params: Optional[HyperParams] = None,
                  strict: bool = False, **meta) -> TreeEnsemble:
    """Stagewise logistic boosting with second-order leaf values."""
    params = params if params is not None else default_params(
        ModelKind.BOOSTED)
    X, y = _check_data(X, y)
    n, d = X.shape
    base = logit(float(y.mean()))
    if y.min() == y.max():
        message = (f"all {n} training labels are {int(y[0])}; "
                   f"boosting yields a constant model")
        if strict:
            raise SingleClass(message)
        logger.warning(message)
        return TreeEnsemble(kind=ModelKind.BOOSTED, trees=[],
                            base_score=base, feature_count=d,
                            learning_rate=params.learning_rate,
                            params=params, **meta)

    rng = np.random.default_rng(params.seed)
    margins = np.full(n, base)
    trees, losses = [], []
    n_rows = max(1, int(round(params.subsample * n)))
    n_cols = max(1, int(round(params.colsample * d)))
    for _ in range(params.n_estimators):
        g, h = _gradients(margins, y)
        if n_rows < n:
            rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        else:
            rows = np.arange(n)
        allowed = None
        if n_cols < d:
            allowed = np.sort(rng.choice(d, size=n_cols, replace=False))
        builder = _TreeBuilder(X, params, SplitRule.BOOSTED_GAIN, rng,
                               allowed=allowed,
                               max_features=params.max_features)
        tree = builder.build(rows, g, h, np.ones(n))
        trees.append(tree)
        margins = margins + tree.predict(X)
        losses.append(log_loss(y, margins))
    logger.info("Boosted %d rounds, final training log-loss %.6g",
                len(trees), losses[-1])
    return TreeEnsemble(kind=ModelKind.BOOSTED, trees=trees,
                        base_score=base, feature_count=d,
                        learning_rate=params.learning_rate, params=params,
                        train_loss=losses, **meta)


def default_params(kind: ModelKind) -> HyperParams:
    kind = ModelKind(kind)
    if kind is ModelKind.FOREST:
        return HyperParams(n_estimators=23, max_depth=42,
                           min_samples_split=6, min_samples_leaf=2,
                           max_features="sqrt", bootstrap=True)
    if kind is ModelKind.BOOSTED:
        return HyperParams(n_estimators=23, max_depth=43,
                           learning_rate=0.47, min_child_weight=0.4,
                           gamma=3.28, colsample=1.0, subsample=0.82,
                           lambda_l2=1.0, max_features=None,
                           bootstrap=False)
    return HyperParams(n_estimators=100, max_depth=None,
                       min_samples_split=2, min_samples_leaf=1,
                       max_features="sqrt", bootstrap=False)


def train(kind: ModelKind, X, y, params: Optional[HyperParams] = None,
          jobs: int = 1, **meta) -> TreeEnsemble:
    """Dispatch on model kind; `meta` lands on the ensemble."""
    kind = ModelKind(kind)
    params = params if params is not None else default_params(kind)
    if kind is ModelKind.FOREST:
        return train_random_forest(X, y, params, jobs, **meta)
    if kind is ModelKind.EXTRA:
        return train_extra_trees(X, y, params, jobs, **meta)
    return train_boosted(X, y, params, **meta)


# Serialization

def to_file(ensemble: TreeEnsemble,
            provenance: Optional[Provenance] = None) -> EnsembleFile:
    return EnsembleFile(
        kind=ensemble.kind,
        base_score=ensemble.base_score,
        learning_rate=ensemble.learning_rate,
        feature_count=ensemble.feature_count,
        schema_version=ensemble.schema_version,
        feature_names=ensemble.feature_names,
        params=ensemble.params,
        train_loss=ensemble.train_loss or None,
        trees=[t.to_record() for t in ensemble.trees],
        provenance=provenance,
    )


def from_file(model_file: EnsembleFile) -> TreeEnsemble:
    trees = [Tree.from_record(r) for r in model_file.trees]
    for t, tree in enumerate(trees):
        # children are stored after their parent, which also rules out cycles
        nodes = np.arange(tree.n_nodes)
        internal = tree.children_left != LEAF
        for children in (tree.children_left, tree.children_right):
            if np.any(children[internal] <= nodes[internal]) \
                    or np.any(children >= tree.n_nodes) \
                    or np.any(children[~internal] != LEAF):
                raise DimensionMismatch(f"tree {t} has a malformed node link")
    return TreeEnsemble(
        kind=model_file.kind,
        trees=trees,
        base_score=model_file.base_score,
        feature_count=model_file.feature_count,
        schema_version=model_file.schema_version,
        learning_rate=model_file.learning_rate,
        feature_names=model_file.feature_names,
        params=model_file.params,
        train_loss=list(model_file.train_loss or []),
    )


def dump_ensemble(ensemble: TreeEnsemble,
                  provenance: Optional[Provenance] = None) -> str:
    return canonical_json(to_file(ensemble, provenance).dict())


def save_ensemble(ensemble: TreeEnsemble, path: PathLike,
                  provenance: Optional[Provenance] = None) -> None:
    atomic_write(path, dump_ensemble(ensemble, provenance))


def load_ensemble(path: PathLike) -> TreeEnsemble:
    return from_file(EnsembleFile.parse_file(Path(path)))
