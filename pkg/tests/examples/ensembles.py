"""Hand-built and random trees with consistent covers."""
import numpy as np

from tlsxplain.model import LEAF, Tree, TreeEnsemble
from tlsxplain.types import ModelKind


def stump(feature, threshold, left_value, right_value, left_cover=1.0,
          right_cover=1.0):
    return Tree(
        children_left=np.array([1, LEAF, LEAF]),
        children_right=np.array([2, LEAF, LEAF]),
        features=np.array([feature, LEAF, LEAF]),
        thresholds=np.array([threshold, 0.0, 0.0]),
        values=np.array([0.0, left_value, right_value]),
        covers=np.array([left_cover + right_cover, left_cover,
                         right_cover]),
    )


def random_tree(rng, n_features, max_depth, probability_leaves=False):
    """Preorder tree; internal covers are the sum of their children."""
    left, right, feature, threshold, value, cover = [], [], [], [], [], []

    def grow(depth):
        node = len(value)
        left.append(LEAF)
        right.append(LEAF)
        feature.append(LEAF)
        threshold.append(0.0)
        value.append(0.0)
        cover.append(0.0)
        if depth < max_depth and (depth == 0 or rng.random() < 0.7):
            feature[node] = int(rng.integers(n_features))
            threshold[node] = float(rng.random())
            left[node] = grow(depth + 1)
            right[node] = grow(depth + 1)
            cover[node] = cover[left[node]] + cover[right[node]]
        else:
            value[node] = float(rng.random() if probability_leaves
                                else rng.normal())
            cover[node] = float(rng.integers(1, 20))
        return node

    grow(0)
    return Tree(
        children_left=np.array(left, dtype=np.int64),
        children_right=np.array(right, dtype=np.int64),
        features=np.array(feature, dtype=np.int64),
        thresholds=np.array(threshold, dtype=np.float64),
        values=np.array(value, dtype=np.float64),
        covers=np.array(cover, dtype=np.float64),
    )


def random_ensemble(rng, kind, n_features, n_trees=3, max_depth=4):
    kind = ModelKind(kind)
    averaging = kind is not ModelKind.BOOSTED
    trees = [random_tree(rng, n_features, max_depth, averaging)
             for _ in range(n_trees)]
    return TreeEnsemble(
        kind=kind, trees=trees,
        base_score=0.0 if averaging else float(rng.normal()),
        feature_count=n_features,
    )
