"""Labeled datasets: manifests, CSV I/O, splits and oversampling."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateMinority,
    DuplicateFamily,
    LengthMismatch,
    NonPositiveCount,
    SchemaMismatch,
    TooFewSamples,
)
from .objects import FeatureVector
from .schemas import FeatureSchema, ManifestEntry, ManifestTotals, Scaler
from .types import Label
from .utils import PathLike, format_float

logger = logging.getLogger(__name__)

BUNDLED_MANIFEST = Path(__file__).parent / "data" / "malware_families.csv"
MANIFEST_COLUMNS = ("family", "type", "samples", "source")

UNLABELED = -1
UNVERSIONED = "unversioned"

# normal-to-malware proportion of the imbalanced evaluation regime
IMBALANCED_MINORITY_SHARE = 0.0103


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature rows, one label per row (-1 when unknown)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: List[str]
    schema_version: str = UNVERSIONED
    flow_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != len(self.feature_names):
            raise SchemaMismatch(
                f"matrix of shape {self.X.shape} does not match "
                f"{len(self.feature_names)} feature names"
            )
        if len(self.y) != len(self.X):
            raise LengthMismatch(
                f"{len(self.y)} labels for {len(self.X)} rows"
            )
        if not self.flow_ids:
            object.__setattr__(
                self, 'flow_ids', [f"row{i}" for i in range(len(self.X))]
            )

    def __len__(self):
        return len(self.X)

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    @property
    def class_counts(self) -> Dict[int, int]:
        labels, counts = np.unique(self.y, return_counts=True)
        return {int(k): int(v) for k, v in zip(labels, counts)}

    @property
    def is_labeled(self) -> bool:
        return bool(np.all(np.isin(self.y, (Label.NORMAL, Label.MALWARE))))

    @property
    def vectors(self) -> List[FeatureVector]:
        return [
            FeatureVector(values=self.X[i], schema_version=self.schema_version,
                          label=None if self.y[i] == UNLABELED
                          else int(self.y[i]),
                          flow_id=self.flow_ids[i])
            for i in range(len(self))
        ]

    @classmethod
    def from_vectors(
            cls,
            vectors: Sequence[FeatureVector],
            schema: FeatureSchema
    ) -> LabeledDataset:
        for v in vectors:
            if v.schema_version != schema.schema_version:
                raise SchemaMismatch(
                    f"{v.flow_id}: vector schema {v.schema_version} != "
                    f"{schema.schema_version}"
                )
        if vectors:
            X = np.vstack([v.values for v in vectors])
        else:
            X = np.zeros((0, schema.dimension))
        y = np.array([UNLABELED if v.label is None else v.label
                      for v in vectors], dtype=np.int64)
        return cls(X=X, y=y, feature_names=schema.names,
                   schema_version=schema.schema_version,
                   flow_ids=[v.flow_id for v in vectors])

    def subset(self, indices: Sequence[int]) -> LabeledDataset:
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            X=self.X[idx], y=self.y[idx],
            feature_names=list(self.feature_names),
            schema_version=self.schema_version,
            flow_ids=[self.flow_ids[i] for i in idx],
        )

    def concat(self, other: LabeledDataset) -> LabeledDataset:
        if other.feature_names != self.feature_names:
            raise SchemaMismatch("cannot concatenate different schemas")
        return LabeledDataset(
            X=np.vstack([self.X, other.X]),
            y=np.concatenate([self.y, other.y]),
            feature_names=list(self.feature_names),
            schema_version=self.schema_version,
            flow_ids=self.flow_ids + other.flow_ids,
        )

    def check_schema(self, schema: FeatureSchema) -> None:
        if self.feature_names != schema.names:
            raise SchemaMismatch(
                f"dataset columns do not match schema "
                f"{schema.schema_version}"
            )
        if self.schema_version not in (UNVERSIONED, schema.schema_version):
            raise SchemaMismatch(
                f"dataset schema {self.schema_version} != "
                f"{schema.schema_version}"
            )


# Manifest

def load_manifest(path: Optional[PathLike] = None) -> List[ManifestEntry]:
    """Read a family manifest; the bundled one when `path` is None."""
    path = Path(path) if path is not None else BUNDLED_MANIFEST
    with open(path, newline='', encoding='utf-8') as f:
        return parse_manifest(f.read(), source=str(path))


def parse_manifest(text: str, source: str = "<manifest>") \
        -> List[ManifestEntry]:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or [])
    if reader.fieldnames is not None and missing:
        raise SchemaMismatch(
            f"{source}: manifest lacks column(s) {sorted(missing)}"
        )
    entries = []
    seen = set()
    for line, row in enumerate(reader, start=2):
        try:
            samples = int(row['samples'])
        except (TypeError, ValueError):
            raise NonPositiveCount(
                f"{source}:{line}: samples {row['samples']!r} is not a count"
            ) from None
        if samples < 1:
            raise NonPositiveCount(
                f"{source}:{line}: {row['family']} has {samples} samples"
            )
        key = (row['family'], row['source'])
        if key in seen:
            raise DuplicateFamily(
                f"{source}:{line}: family {row['family']!r} listed twice "
                f"for source {row['source']!r}"
            )
        seen.add(key)
        entries.append(ManifestEntry(
            family=row['family'], type=row['type'],
            samples=samples, source=row['source'],
        ))
    return entries


def sum_samples(entries: Sequence[ManifestEntry]) -> ManifestTotals:
    by_family: Dict[str, int] = {}
    by_type: Dict[str, int] = {}
    for e in entries:
        by_family[e.family] = by_family.get(e.family, 0) + e.samples
        by_type[e.type] = by_type.get(e.type, 0) + e.samples
    return ManifestTotals(
        by_family=by_family,
        by_type=by_type,
        total=sum(by_family.values()),
    )


# CSV

def dataset_to_csv(ds: LabeledDataset) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(list(ds.feature_names) + ["label", "flow_id"])
    for row, label, flow_id in zip(ds.X, ds.y, ds.flow_ids):
        writer.writerow(
            [format_float(v) for v in row]
            + ["" if label == UNLABELED else str(int(label)), flow_id]
        )
    return out.getvalue()


def dataset_from_csv(
        text: str,
        schema: Optional[FeatureSchema] = None,
        schema_version: Optional[str] = None,
        source: str = "<csv>"
) -> LabeledDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaMismatch(f"{source}: empty file, no header row")
    header = rows[0]
    if header[-2:] != ["label", "flow_id"]:
        raise SchemaMismatch(
            f"{source}: last two columns must be label, flow_id"
        )
    names = header[:-2]
    if schema is not None:
        if names != schema.names:
            extra = sorted(set(names) - set(schema.names))
            lacking = sorted(set(schema.names) - set(names))
            raise SchemaMismatch(
                f"{source}: header does not match schema "
                f"{schema.schema_version} (unknown: {extra[:5]}, "
                f"missing: {lacking[:5]})"
            )
        schema_version = schema.schema_version

    X = np.zeros((len(rows) - 1, len(names)), dtype=np.float64)
    y = np.full(len(rows) - 1, UNLABELED, dtype=np.int64)
    flow_ids = []
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise SchemaMismatch(
                f"{source}:{i + 2}: {len(row)} fields, expected "
                f"{len(header)}"
            )
        X[i] = [float(v) for v in row[:-2]]
        if row[-2] != "":
            y[i] = int(row[-2])
        flow_ids.append(row[-1])
    return LabeledDataset(
        X=X, y=y, feature_names=names,
        schema_version=schema_version or UNVERSIONED,
        flow_ids=flow_ids,
    )


def read_csv(
        path: PathLike,
        schema: Optional[FeatureSchema] = None,
        schema_version: Optional[str] = None
) -> LabeledDataset:
    path = Path(path)
    with open(path, newline='', encoding='utf-8') as f:
        return dataset_from_csv(f.read(), schema, schema_version,
                                source=str(path))


# Splits

def kfold_split(
        n: int,
        k: int = 10,
        seed: int = 0,
        labels: Optional[Sequence[int]] = None
) -> List[np.ndarray]:
    """Partition range(n) into k folds whose sizes differ by at most one.

    With `labels`, indices are shuffled within each class and the classes
    are dealt round-robin, so every fold gets its share of each class.
    """
    if k < 2:
        raise TooFewSamples(f"k-fold needs k >= 2, got {k}")
    if n < k:
        raise TooFewSamples(f"{n} samples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    if labels is None:
        order = rng.permutation(n)
    else:
        y = np.asarray(labels)
        if len(y) != n:
            raise TooFewSamples(f"{len(y)} labels for {n} samples")
        order = np.concatenate([
            rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)
        ])
    positions = np.arange(n) % k
    return [np.sort(order[positions == f]) for f in range(k)]


def train_test_split(
        ds: LabeledDataset,
        test_fraction: float = 0.2,
        seed: int = 0
) -> Tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; each class contributes round(fraction * n_c)."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction {test_fraction} not in (0, 1)")
    if len(ds) < 2:
        raise TooFewSamples(f"{len(ds)} samples cannot be split")
    rng = np.random.default_rng(seed)
    test = []
    for c in np.unique(ds.y):
        members = rng.permutation(np.flatnonzero(ds.y == c))
        test.append(members[:int(round(test_fraction * len(members)))])
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(np.arange(len(ds)), test_idx)
    if len(test_idx) == 0 or len(train_idx) == 0:
        raise TooFewSamples(
            f"test fraction {test_fraction} leaves an empty split"
        )
    return ds.subset(train_idx), ds.subset(test_idx)


def make_imbalanced(
        ds: LabeledDataset,
        minority_share: float = IMBALANCED_MINORITY_SHARE,
        seed: int = 0,
        minority_class: int = Label.MALWARE
) -> LabeledDataset:
    """Subsample so `minority_class` makes up `minority_share` of rows.

    The majority class is kept whole when possible; row order is kept.
    """
    if not 0 < minority_share < 1:
        raise ValueError(f"minority_share {minority_share} not in (0, 1)")
    rng = np.random.default_rng(seed)
    minority = np.flatnonzero(ds.y == minority_class)
    majority = np.flatnonzero(ds.y != minority_class)
    if len(minority) == 0 or len(majority) == 0:
        raise TooFewSamples("both classes are needed")
    n_min = max(1, int(round(
        minority_share * len(majority) / (1 - minority_share)
    )))
    if n_min <= len(minority):
        minority = rng.choice(minority, size=n_min, replace=False)
    else:
        n_maj = int(round(len(minority) * (1 - minority_share)
                          / minority_share))
        majority = rng.choice(majority, size=n_maj, replace=False)
    keep = np.sort(np.concatenate([minority, majority]))
    return ds.subset(keep)


# Standardization

def fit_scaler(ds: LabeledDataset) -> Scaler:
    return Scaler(
        feature_names=list(ds.feature_names),
        mean=[float(v) for v in ds.X.mean(axis=0)],
        std=[float(v) for v in ds.X.std(axis=0)],
    )


def apply_scaler(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    std = np.asarray(scaler.std)
    std = np.where(std > 0, std, 1.0)
    return (np.asarray(X) - np.asarray(scaler.mean)) / std


# ADASYN

def binary_columns(X: np.ndarray) -> np.ndarray:
    """Columns whose every value is 0 or 1."""
    if len(X) == 0:
        return np.zeros(X.shape[1], dtype=bool)
    return np.all((X == 0) | (X == 1), axis=0)


def _standardize(X: np.ndarray) -> np.ndarray:
    std = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)


def _nearest(queries: np.ndarray, pool: np.ndarray, k: int,
             exclude: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices into `pool` of the k nearest rows for each query."""
    d = (np.sum(queries ** 2, axis=1)[:, None]
         + np.sum(pool ** 2, axis=1)[None, :]
         - 2.0 * queries @ pool.T)
    if exclude is not None:
        d[np.arange(len(queries)), exclude] = np.inf
    return np.argsort(d, axis=1, kind='stable')[:, :k]


def synthetic_count(n_target: int, n_other: int, beta: float = 1.0,
                    target_share: Optional[float] = None) -> int:
    if target_share is None:
        return max(0, int(round((n_other - n_target) * beta)))
    # n_target + G == share * (n_target + n_other + G)
    g = (target_share * (n_target + n_other) - n_target) / (1 - target_share)
    return max(0, int(round(g)))


def adasyn(
        ds: LabeledDataset,
        k_neighbors: int = 5,
        beta: float = 1.0,
        seed: int = 0,
        target_class: Optional[int] = None,
        target_share: Optional[float] = None,
        binary: Optional[np.ndarray] = None,
        strict: bool = False
) -> LabeledDataset:
    """Adaptive synthetic oversampling of one class.

    The target class defaults to the minority. Synthetic rows are
    appended after the originals, which are returned untouched.
    """
    counts = ds.class_counts
    if len(counts) != 2:
        raise TooFewSamples(
            f"oversampling needs two classes, got {sorted(counts)}"
        )
    if target_class is None:
        target_class = min(counts, key=lambda c: (counts[c], -c))
    if target_class not in counts:
        raise TooFewSamples(f"class {target_class} is not present")
    n_target = counts[target_class]
    n_other = len(ds) - n_target

    G = synthetic_count(n_target, n_other, beta, target_share)
    if G == 0:
        return ds
    if n_target < k_neighbors + 1:
        raise TooFewSamples(
            f"class {target_class} has {n_target} samples, needs at least "
            f"{k_neighbors + 1} for {k_neighbors} neighbours"
        )

    Z = _standardize(ds.X)
    target = np.flatnonzero(ds.y == target_class)
    neighbours = _nearest(Z[target], Z, k_neighbors, exclude=target)
    r = np.sum(ds.y[neighbours] != target_class, axis=1) / k_neighbors
    if r.sum() == 0:
        message = (f"class {target_class} has no other-class neighbours; "
                   f"no synthetic samples generated")
        if strict:
            raise DegenerateMinority(message)
        logger.warning(message)
        return ds

    g = np.rint(r / r.sum() * G).astype(np.int64)
    own = _nearest(Z[target], Z[target], k_neighbors,
                   exclude=np.arange(len(target)))

    rng = np.random.default_rng(seed)
    seeds = np.repeat(np.arange(len(target)), g)
    picks = own[seeds, rng.integers(0, k_neighbors, size=len(seeds))]
    u = rng.random(len(seeds))[:, None]
    base = ds.X[target[seeds]]
    synthetic = base + u * (ds.X[target[picks]] - base)

    mask = binary_columns(ds.X) if binary is None else binary
    synthetic[:, mask] = np.rint(synthetic[:, mask])

    logger.info("Generated %d synthetic samples of class %d",
                len(synthetic), target_class)
    return ds.concat(LabeledDataset(
        X=synthetic,
        y=np.full(len(synthetic), target_class, dtype=np.int64),
        feature_names=list(ds.feature_names),
        schema_version=ds.schema_version,
        flow_ids=[f"adasyn#{i}" for i in range(len(synthetic))],
    ))
