"""The `tlsxplain` command line."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed  # type: ignore
from pydantic import ValidationError  # type: ignore

from . import __version__
from .capture import CaptureStats, read_pcap_file
from .config import PipelineConfig, load_config
from .dataset import (
    UNVERSIONED,
    LabeledDataset,
    adasyn,
    dataset_to_csv,
    fit_scaler,
    load_manifest,
    read_csv,
    sum_samples,
    train_test_split,
)
from .errors import (
    CaptureError,
    ConfigError,
    NonBinaryLabel,
    SchemaMismatch,
    TlsXplainError,
)
from .evaluation import cross_validate, evaluate, validation_curve
from .explain import (
    dependence_csv,
    dependence_rows,
    explain_batch,
    global_summary,
    importance_csv,
    local_report,
)
from .features import featurize_flows
from .flow import FlowStats, dump_flows_jsonl, process_packets
from .model import TreeEnsemble, load_ensemble, save_ensemble, train
from .objects import BiFlow, FeatureVector
from .schemas import (
    EvalReport,
    ExtractionLog,
    ExtractMeta,
    FeatureSchema,
    Provenance,
    TrainReport,
    TuneReport,
)
from .synth import generate_synthetic_corpus, write_synthetic_pcaps
from .types import Label, Profile
from .utils import PathLike, atomic_write, canonical_json, input_digests

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
PCAP_SUFFIXES = (".pcap", ".cap")


# Helpers

def sidecar(path: PathLike, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.name + suffix)


def provenance(config: PipelineConfig,
               inputs: Sequence[PathLike]) -> Provenance:
    return Provenance(version=__version__, config=config.dict(),
                      inputs=input_digests(inputs))


def write_json(path: PathLike, model) -> None:
    atomic_write(path, canonical_json(model.dict()))


def read_dataset(path: PathLike,
                 schema: Optional[FeatureSchema] = None) -> LabeledDataset:
    """Read a feature CSV, taking its schema version from the sidecar."""
    meta_path = sidecar(path, ".meta.json")
    version = None
    if meta_path.exists():
        version = ExtractMeta.parse_file(meta_path).schema_version
    return read_csv(path, schema, version)


def _labeled(ds: LabeledDataset, path: PathLike) -> LabeledDataset:
    if not ds.is_labeled:
        raise NonBinaryLabel(f"{path}: every row needs a 0/1 label")
    return ds


def _configured_schema(config: PipelineConfig) -> Optional[FeatureSchema]:
    return config.feature_schema() if config.schema_path else None


def _check_model_schema(ensemble: TreeEnsemble, ds: LabeledDataset,
                        path: PathLike) -> None:
    if ds.schema_version not in (UNVERSIONED, ensemble.schema_version):
        raise SchemaMismatch(
            f"{path}: dataset schema {ds.schema_version} != model schema "
            f"{ensemble.schema_version}"
        )
    if ensemble.feature_names is not None \
            and ensemble.feature_names != ds.feature_names:
        raise SchemaMismatch(f"{path}: columns differ from the model's")
    if ds.dimension != ensemble.feature_count:
        raise SchemaMismatch(
            f"{path}: {ds.dimension} columns, model expects "
            f"{ensemble.feature_count}"
        )


# extract

def pcap_files(inputs: Sequence[PathLike]) -> List[Path]:
    files: List[Path] = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            files.extend(sorted(p for p in path.rglob('*')
                                if p.suffix.lower() in PCAP_SUFFIXES))
        else:
            files.append(path)
    return files


def read_label_map(path: PathLike) -> Dict[str, int]:
    """`path,label` rows; labels are 0/1 or normal/malware."""
    labels = {}
    with open(path, newline='', encoding='utf-8') as f:
        for i, row in enumerate(csv.DictReader(f), start=2):
            try:
                value = row['label'].strip().lower()
                key = row['path'].strip()
            except (KeyError, AttributeError):
                raise ConfigError(
                    f"{path}:{i}: label map needs path and label columns"
                ) from None
            if value in ("0", "1"):
                labels[key] = int(value)
            elif value in (p.value for p in Profile):
                labels[key] = int(Profile(value).label)
            else:
                raise ConfigError(f"{path}:{i}: unknown label {value!r}")
    return labels


def label_for(path: Path, label_map: Dict[str, int],
              default: Optional[str]) -> Optional[int]:
    """Label map, then --label, then the nearest malware/ or normal/
    directory; None when nothing says."""
    for key in (str(path), path.name):
        if key in label_map:
            return label_map[key]
    if default is not None:
        return int(Profile(default).label)
    for parent in path.parents:
        if parent.name in (p.value for p in Profile):
            return int(Profile(parent.name).label)
    return None


def _extract_file(path: Path, schema: FeatureSchema, label: Optional[int],
                  keep_flows: bool) \
        -> Tuple[List[FeatureVector], CaptureStats, FlowStats, List[BiFlow]]:
    stats = CaptureStats()
    try:
        packets = read_pcap_file(path, stats)
    except CaptureError as e:
        raise type(e)(f"{path}: {e}") from e
    flows, flow_stats = process_packets(packets, schema.window_seconds,
                                        source=path.name)
    vectors = featurize_flows(flows, schema, label)
    return vectors, stats, flow_stats, flows if keep_flows else []


def cmd_extract(args: argparse.Namespace, config: PipelineConfig) -> int:
    schema = config.feature_schema()
    files = pcap_files(args.inputs)
    label_map = read_label_map(args.label_map) if args.label_map else {}
    labels = [label_for(p, label_map, args.label) for p in files]
    results = Parallel(n_jobs=config.jobs)(
        delayed(_extract_file)(p, schema, label, bool(args.dump_flows))
        for p, label in zip(files, labels)
    )

    vectors: List[FeatureVector] = []
    flows: List[BiFlow] = []
    log = ExtractionLog()
    capture_total, flow_total = CaptureStats(), FlowStats()
    for path, (file_vectors, cs, fs, file_flows) in zip(files, results):
        vectors.extend(file_vectors)
        flows.extend(file_flows)
        capture_total.merge(cs)
        flow_total.merge(fs)
        log.files[str(path)] = {
            "capture": asdict(cs), "flows": asdict(fs),
            "rows": len(file_vectors),
        }
        if cs.truncated_tail or cs.malformed:
            logger.warning("%s: %d malformed frame(s), %d truncated tail "
                           "record(s)", path, cs.malformed, cs.truncated_tail)
    log.capture = asdict(capture_total)
    log.flows = asdict(flow_total)
    log.rows = len(vectors)

    ds = LabeledDataset.from_vectors(vectors, schema)
    atomic_write(args.output, dataset_to_csv(ds))
    write_json(sidecar(args.output, ".meta.json"), ExtractMeta(
        schema_version=schema.schema_version, log=log,
        provenance=provenance(config, files),
    ))
    if args.standardize:
        write_json(sidecar(args.output, ".scaler.json"), fit_scaler(ds))
    if args.dump_flows:
        atomic_write(args.dump_flows, dump_flows_jsonl(flows))
    logger.info("%d flow(s) seen, %d row(s) written to %s",
                flow_total.flows, len(ds), args.output)
    return 0


# train / eval / tune

def cmd_train(args: argparse.Namespace, config: PipelineConfig) -> int:
    ds = _labeled(read_dataset(args.dataset, _configured_schema(config)),
                  args.dataset)
    kind = config.kind
    params = config.hyper_params()
    fit_on, test = train_test_split(ds, config.test_fraction, config.seed)
    oversample = config.oversample

    cv = None
    if not args.no_cv:
        cv = cross_validate(fit_on, kind, params, k=config.cv_folds,
                            seed=config.seed, oversample=oversample,
                            jobs=config.jobs)
    if oversample.enabled:
        fit_on = adasyn(fit_on, k_neighbors=oversample.k_neighbors,
                        beta=oversample.beta, seed=config.seed,
                        target_class=oversample.target_class,
                        target_share=oversample.target_share)
    model = train(kind, fit_on.X, fit_on.y, params, jobs=config.jobs,
                  schema_version=ds.schema_version,
                  feature_names=list(ds.feature_names))
    test_metrics = evaluate(model, test)

    prov = provenance(config, [args.dataset])
    save_ensemble(model, args.output, prov)
    report = TrainReport(
        kind=kind, params=params,
        class_counts={Label(c).name.lower(): n
                      for c, n in ds.class_counts.items()},
        cross_validation=cv, test=test_metrics, provenance=prov,
    )
    write_json(args.metrics or sidecar(args.output, ".metrics.json"),
               report)
    logger.info("held-out mcc %.4f, accuracy %.4f", test_metrics.mcc,
                test_metrics.accuracy)
    return 0


def cmd_eval(args: argparse.Namespace, config: PipelineConfig) -> int:
    model = load_ensemble(args.model_path)
    ds = _labeled(read_dataset(args.dataset), args.dataset)
    _check_model_schema(model, ds, args.dataset)
    prov = provenance(config, [args.model_path, args.dataset])
    report = EvalReport(kind=model.kind, metrics=evaluate(model, ds),
                        provenance=prov)
    if args.output:
        write_json(args.output, report)
    else:
        sys.stdout.write(canonical_json(report.dict()))
    return 0


def parse_grid_value(text: str) -> Any:
    if text.lower() in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_grid(items: Sequence[str]) -> Dict[str, List[Any]]:
    grid: Dict[str, List[Any]] = {}
    for item in items:
        name, sep, values = item.partition('=')
        if not sep or not values:
            raise ConfigError(f"--param expects NAME=V1,V2,..., got {item!r}")
        grid[name.strip()] = [parse_grid_value(v.strip())
                              for v in values.split(',')]
    return grid


def cmd_tune(args: argparse.Namespace, config: PipelineConfig) -> int:
    ds = _labeled(read_dataset(args.dataset, _configured_schema(config)),
                  args.dataset)
    params = config.hyper_params()
    curves = [
        validation_curve(ds, config.kind, name, values, params,
                         k=config.cv_folds, seed=config.seed,
                         scoring=config.scoring,
                         oversample=config.oversample, jobs=config.jobs)
        for name, values in config.tune_grid.items()
    ]
    write_json(args.output, TuneReport(
        curves=curves, provenance=provenance(config, [args.dataset])
    ))
    for curve in curves:
        logger.info("best %s = %r", curve.param_name, curve.best_value)
    return 0


# explain

def cmd_explain(args: argparse.Namespace, config: PipelineConfig) -> int:
    model = load_ensemble(args.model_path)
    ds = read_dataset(args.dataset)
    _check_model_schema(model, ds, args.dataset)
    if args.limit is not None:
        ds = ds.subset(np.arange(min(args.limit, len(ds))))
    names = list(ds.feature_names)

    # every sample passes the efficiency check before anything is written
    explanations = explain_batch(model, ds.X, ds.flow_ids, jobs=config.jobs)
    summary = global_summary(
        explanations, names, k=config.top_k,
        labels=ds.y if ds.is_labeled else None,
    )
    reports = [
        local_report(e, names, ds.X[i], top_k=args.local_top_k)
        for i, e in enumerate(explanations)
    ]
    summary = summary.copy(update={
        'provenance': provenance(config, [args.model_path, args.dataset])
    })

    out = Path(args.output_dir)
    write_json(out / "global.json", summary)
    atomic_write(out / "importance.csv", importance_csv(summary))
    atomic_write(out / "local.jsonl",
                 "".join(r.json(sort_keys=True) + "\n" for r in reports))
    top = summary.top_k if not args.all_features else None
    atomic_write(out / "dependence.csv", dependence_csv(
        dependence_rows(explanations, ds.X, names, top)
    ))
    logger.info("explained %d sample(s); top feature %s", len(reports),
                summary.top_k[0] if summary.top_k else "-")
    return 0


# synth / schema / manifest

def cmd_synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    schema = config.feature_schema()
    if args.profile == "both":
        plan = [(Profile.NORMAL, args.n - args.n // 2),
                (Profile.MALWARE, args.n // 2)]
    else:
        plan = [(Profile(args.profile), args.n)]
    vectors: List[FeatureVector] = []
    for offset, (profile, n) in enumerate(plan):
        vectors.extend(generate_synthetic_corpus(
            profile, n, seed=config.seed + offset, schema=schema
        ))
        if args.pcap_dir:
            write_synthetic_pcaps(Path(args.pcap_dir) / profile.value,
                                  profile, n, seed=config.seed + offset)
    ds = LabeledDataset.from_vectors(vectors, schema)
    atomic_write(args.output, dataset_to_csv(ds))
    write_json(sidecar(args.output, ".meta.json"), ExtractMeta(
        schema_version=schema.schema_version,
        log=ExtractionLog(rows=len(ds)),
        provenance=provenance(config, []),
    ))
    logger.info("wrote %d synthetic row(s) to %s", len(ds), args.output)
    return 0


def cmd_schema(args: argparse.Namespace, config: PipelineConfig) -> int:
    text = config.feature_schema().dump()
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_manifest(args: argparse.Namespace, config: PipelineConfig) -> int:
    totals = sum_samples(load_manifest(args.manifest))
    text = canonical_json(totals.dict())
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


# Argument parsing

def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='count', default=0,
                        help="-v for INFO, -vv for DEBUG")
    common.add_argument('--config', help="JSON or YAML configuration file")
    common.add_argument('--jobs', type=int, help="parallel workers")
    common.add_argument('--seed', type=int)
    return common


def parse_codes(text: str) -> List[int]:
    """`0xc02f,0x1301` or decimal codes, comma separated."""
    try:
        return [int(code, 0) for code in text.split(',') if code.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated codes, got {text!r}"
        ) from None


def _feature_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--schema', dest='schema_path',
                        help="feature schema JSON")
    parser.add_argument('--window-seconds', type=float)
    parser.add_argument('--bin-width', type=float)
    parser.add_argument('--n-states', type=int)
    parser.add_argument('--per-direction-markov', action='store_true',
                        default=None,
                        help="add forward/backward Markov matrices")
    parser.add_argument('--cipher-vocab', type=parse_codes,
                        metavar='CODES', help="one-hot cipher suites")
    parser.add_argument('--extension-vocab', type=parse_codes,
                        metavar='CODES', help="one-hot extension types")
    parser.add_argument('--version-vocab', type=parse_codes,
                        metavar='CODES', help="one-hot TLS versions")


def _model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--model', help="rf, xgb or extra")
    parser.add_argument('--cv-folds', type=int)
    parser.add_argument('--oversample', dest='oversample_enabled',
                        action='store_true', default=None,
                        help="ADASYN on training folds")
    parser.add_argument('--no-oversample', dest='oversample_enabled',
                        action='store_false', default=None)
    parser.add_argument('--k-neighbors', type=int)
    parser.add_argument('--beta', type=float)
    parser.add_argument('--target-class', type=int, choices=[0, 1],
                        help="class to oversample (default: minority)")
    parser.add_argument('--target-share', type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='tlsxplain',
        description="Explainable malware detection on encrypted traffic.",
    )
    parser.add_argument('--version', action='version',
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)
    common = _common()

    p = sub.add_parser('extract', parents=[common],
                       help="pcaps -> feature CSV")
    p.add_argument('inputs', nargs='+', help="pcap files or directories")
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--label', choices=[x.value for x in Profile])
    p.add_argument('--label-map', help="CSV with path,label columns")
    p.add_argument('--standardize', action='store_true',
                   help="also write per-feature mean/std")
    p.add_argument('--dump-flows', help="JSONL dump of kept flows")
    _feature_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser('train', parents=[common],
                       help="feature CSV -> model JSON + metrics")
    p.add_argument('dataset')
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--metrics', help="default: <output>.metrics.json")
    p.add_argument('--test-fraction', type=float)
    p.add_argument('--no-cv', action='store_true')
    p.add_argument('--schema', dest='schema_path')
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', parents=[common],
                       help="metrics of a saved model")
    p.add_argument('model_path', metavar='model')
    p.add_argument('dataset')
    p.add_argument('-o', '--output')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('explain', parents=[common],
                       help="global and local SHAP reports")
    p.add_argument('model_path', metavar='model')
    p.add_argument('dataset')
    p.add_argument('-o', '--output-dir', required=True)
    p.add_argument('--top-k', type=int)
    p.add_argument('--local-top-k', type=int, default=10)
    p.add_argument('--limit', type=int, help="explain the first N rows")
    p.add_argument('--all-features', action='store_true',
                   help="dependence rows for every feature")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser('tune', parents=[common], help="validation curves")
    p.add_argument('dataset')
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--param', action='append', default=[],
                   metavar='NAME=V1,V2', help="replaces the default grid")
    p.add_argument('--scoring')
    p.add_argument('--schema', dest='schema_path')
    _model_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser('synth', parents=[common],
                       help="synthetic labeled corpus")
    p.add_argument('--profile', default='both',
                   choices=[x.value for x in Profile] + ['both'])
    p.add_argument('-n', type=int, default=1000, help="number of flows")
    p.add_argument('-o', '--output', required=True)
    p.add_argument('--pcap-dir', help="also write the crafted captures")
    _feature_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('schema', parents=[common],
                       help="write the feature schema")
    p.add_argument('-o', '--output')
    _feature_flags(p)
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser('manifest', parents=[common],
                       help="sum a dataset manifest")
    p.add_argument('manifest', nargs='?',
                   help="CSV with family,type,samples,source "
                        "(default: the bundled table)")
    p.add_argument('-o', '--output')
    p.set_defaults(func=cmd_manifest)
    return parser


_FLAG_KEYS = (
    'schema_path', 'window_seconds', 'bin_width', 'n_states', 'model',
    'per_direction_markov', 'cipher_vocab', 'extension_vocab',
    'version_vocab', 'cv_folds', 'test_fraction', 'seed', 'jobs', 'top_k',
    'scoring',
)


def config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {k: getattr(args, k, None) for k in _FLAG_KEYS}
    oversample = {
        'enabled': getattr(args, 'oversample_enabled', None),
        'k_neighbors': getattr(args, 'k_neighbors', None),
        'beta': getattr(args, 'beta', None),
        'target_class': getattr(args, 'target_class', None),
        'target_share': getattr(args, 'target_share', None),
    }
    oversample = {k: v for k, v in oversample.items() if v is not None}
    if oversample:
        overrides['oversample'] = oversample
    if getattr(args, 'param', None):
        overrides['tune_grid'] = parse_grid(args.param)
    return overrides


def setup_logging(verbosity: int) -> None:
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbosity, 2)]
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        config = load_config(args.config, config_overrides(args))
        return args.func(args, config)
    except (TlsXplainError, ValidationError, OSError) as e:
        logger.error("%s: %s", args.command, e)
        return 1


if __name__ == '__main__':  # pragma: no cover
    sys.exit(main())
