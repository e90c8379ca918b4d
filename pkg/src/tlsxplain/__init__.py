# flake8: noqa
__version__ = "0.1.0"

from .capture import read_packets, read_pcap_file
from .flow import process_packets
from .tls import extract_metadata
from .features import build_vector, default_schema, featurize_flows
from .dataset import LabeledDataset, adasyn, kfold_split, read_csv
from .synth import generate_synthetic_corpus
from .model import (
    TreeEnsemble,
    load_ensemble,
    predict,
    save_ensemble,
    train,
)
from .evaluation import compute_metrics, cross_validate, validation_curve
from .explain import brute_force_shap, global_summary, local_report, tree_shap

__all__ = (
    "read_packets",
    "read_pcap_file",
    "process_packets",
    "extract_metadata",
    "build_vector",
    "default_schema",
    "featurize_flows",
    "LabeledDataset",
    "adasyn",
    "kfold_split",
    "read_csv",
    "generate_synthetic_corpus",
    "TreeEnsemble",
    "load_ensemble",
    "predict",
    "save_ensemble",
    "train",
    "compute_metrics",
    "cross_validate",
    "validation_curve",
    "brute_force_shap",
    "global_summary",
    "local_report",
    "tree_shap",
)
