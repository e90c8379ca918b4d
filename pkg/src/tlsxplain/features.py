"""Per-flow feature extraction.

A flow becomes one fixed-length vector laid out by a `FeatureSchema`:

    meta | length | time | markov | tls | cert

Sizes are TCP payload bytes and times are milliseconds; both are binned
with the same width (150) into `n_states` (3) Markov states.
"""
from __future__ import annotations

import hashlib
import json
import logging
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import SchemaMismatch
from .objects import (
    BiFlow,
    FeatureVector,
    MarkovFeatures,
    PacketRecord,
    TlsMetadata,
)
from .schemas import FeatureSchema, FeatureSpec
from .tls import extract_metadata, is_grease
from .types import FeatureGroup
from .utils import population_std

logger = logging.getLogger(__name__)

SCHEMA_FAMILY = "tlsx-1"

DEFAULT_CIPHER_VOCAB = [
    # TLS 1.3
    0x1301, 0x1302, 0x1303,
    # AEAD suites with forward secrecy
    0xc02b, 0xc02f, 0xc02c, 0xc030, 0xcca9, 0xcca8,
    # CBC ECDHE
    0xc009, 0xc013, 0xc00a, 0xc014, 0xc023, 0xc027, 0xc024, 0xc028,
    # static RSA
    0x009c, 0x009d, 0x002f, 0x0035, 0x003c, 0x003d, 0x000a,
    # RC4
    0x0005, 0x0004,
    # DHE
    0x009e, 0x009f, 0x0033, 0x0039,
]

DEFAULT_EXTENSION_VOCAB = [
    0, 5, 10, 11, 13, 15, 16, 18, 21, 23, 27, 35, 43, 45, 51, 0xff01,
]

DEFAULT_VERSION_VOCAB = [0x0301, 0x0302, 0x0303, 0x0304]

_META = [
    ("bytes_in", "bytes"), ("bytes_out", "bytes"),
    ("num_pkts_in", "packets"), ("num_pkts_out", "packets"),
    ("duration", "s"), ("dst_port", None),
    ("Init_Fwd_Win_Bytes", "bytes"), ("Init_Bwd_Win_Bytes", "bytes"),
    ("fwd_present", "flag"), ("bwd_present", "flag"),
]

_LENGTH = [
    "Fwd_Pkt_Len_Min", "Fwd_Pkt_Len_Max", "Fwd_Pkt_Len_Mean",
    "Fwd_Pkt_Len_Std",
    "Bwd_Pkt_Len_Min", "Max_Bpckt", "Bwd_Pkt_Len_Mean", "Bwd_Pkt_Len_Std",
    "Pkt_Len_Min", "Pkt_Len_Max", "Pkt_Len_Mean", "Pkt_Len_Std",
]

_TIME = [
    "Fwd_IAT_Min", "Fwd_IAT_Max", "Mean_f_inter", "Fwd_IAT_Std",
    "Bwd_IAT_Min", "Bwd_IAT_Max", "Mean_b_inter", "Bwd_IAT_Std",
    "Flow_IAT_Min", "Flow_IAT_Max", "Flow_IAT_Mean", "Flow_IAT_Std",
]

_TIME_FLAGS = ["fwd_iat_present", "bwd_iat_present", "flow_iat_present"]

_CERT = [
    ("certValidDays", "days"), ("cert_present", "flag"),
    ("cert_self_signed", "flag"),
]


def _hex(code: int) -> str:
    return f"0x{code:04x}"


def markov_names(n_states: int, per_direction: bool = False) -> List[str]:
    prefixes = ["size", "iat"]
    if per_direction:
        prefixes += ["fwd_size", "bwd_size", "fwd_iat", "bwd_iat"]
    return [f"{p}_s{i}_{j}" for p in prefixes
            for i in range(n_states) for j in range(n_states)]


def tls_names(cipher_vocab, extension_vocab, version_vocab) -> List[str]:
    names = ["tls_parsed", "num_offered_ciphers", "num_client_exts",
             "cipher_mismatch"]
    names += [f"offered_{_hex(c)}" for c in cipher_vocab]
    names += ["offered_other"]
    names += [f"selected_{_hex(c)}" for c in cipher_vocab]
    names += ["selected_other"]
    names += [f"ext_{_hex(e)}" for e in extension_vocab] + ["ext_other"]
    names += [f"srv_ext_{_hex(e)}" for e in extension_vocab]
    names += ["srv_ext_other"]
    names += [f"version_{_hex(v)}" for v in version_vocab]
    names += ["version_other"]
    return names


def default_schema(
        cipher_vocab: Optional[Sequence[int]] = None,
        extension_vocab: Optional[Sequence[int]] = None,
        version_vocab: Optional[Sequence[int]] = None,
        *,
        bin_width: float = 150.0,
        n_states: int = 3,
        window_seconds: float = 1800.0,
        per_direction_markov: bool = False
) -> FeatureSchema:
    """Build a schema; its version is derived from its content."""
    ciphers = list(cipher_vocab if cipher_vocab is not None
                   else DEFAULT_CIPHER_VOCAB)
    extensions = list(extension_vocab if extension_vocab is not None
                      else DEFAULT_EXTENSION_VOCAB)
    versions = list(version_vocab if version_vocab is not None
                    else DEFAULT_VERSION_VOCAB)

    specs = [FeatureSpec(name=n, group=FeatureGroup.META, unit=u)
             for n, u in _META]
    specs += [FeatureSpec(name=n, group=FeatureGroup.LENGTH, unit="bytes")
              for n in _LENGTH]
    specs += [FeatureSpec(name=n, group=FeatureGroup.TIME, unit="ms")
              for n in _TIME]
    specs += [FeatureSpec(name=n, group=FeatureGroup.TIME, unit="flag")
              for n in _TIME_FLAGS]
    specs += [FeatureSpec(name=n, group=FeatureGroup.MARKOV,
                          unit="probability")
              for n in markov_names(n_states, per_direction_markov)]
    specs += [FeatureSpec(name=n, group=FeatureGroup.TLS)
              for n in tls_names(ciphers, extensions, versions)]
    specs += [FeatureSpec(name=n, group=FeatureGroup.CERT, unit=u)
              for n, u in _CERT]

    content = {
        "names": [s.name for s in specs],
        "bin_width": bin_width,
        "n_states": n_states,
        "window_seconds": window_seconds,
    }
    digest = hashlib.sha256(
        json.dumps(content, sort_keys=True).encode()
    ).hexdigest()[:8]
    return FeatureSchema(
        schema_version=f"{SCHEMA_FAMILY}-{digest}",
        window_seconds=window_seconds,
        bin_width=bin_width,
        n_states=n_states,
        per_direction_markov=per_direction_markov,
        cipher_vocab=ciphers,
        extension_vocab=extensions,
        version_vocab=versions,
        features=specs,
    )


# Markov chains

def discretize(
        values: Sequence[float],
        bin_width: float = 150.0,
        n_states: int = 3
) -> np.ndarray:
    """state = min(floor(value / bin_width), n_states - 1)."""
    if bin_width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    v = np.asarray(values, dtype=np.float64)
    states = np.floor(v / bin_width)
    return np.minimum(states, n_states - 1).astype(np.int64)


def transition_matrix(states: Sequence[int], n_states: int = 3) -> np.ndarray:
    """Row-normalized counts of consecutive state pairs.

    Rows of states that never start a transition stay all-zero.
    """
    s = np.asarray(states, dtype=np.int64)
    counts = np.zeros((n_states, n_states), dtype=np.float64)
    if len(s) >= 2:
        np.add.at(counts, (s[:-1], s[1:]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid='ignore', divide='ignore'):
        matrix = np.where(totals > 0, counts / totals, 0.0)
    return matrix


def _sizes(packets: Sequence[PacketRecord]) -> np.ndarray:
    return np.array([len(p.payload) for p in packets], dtype=np.float64)


def _iats_ms(packets: Sequence[PacketRecord]) -> np.ndarray:
    ts = np.array([p.ts for p in packets], dtype=np.float64)
    return np.diff(ts) * 1000.0


def _time_sorted(packets: Sequence[PacketRecord]) -> List[PacketRecord]:
    return sorted(packets, key=lambda p: (p.ts, p.index))


def markov_features(
        packets: Sequence[PacketRecord],
        bin_width: float = 150.0,
        n_states: int = 3
) -> MarkovFeatures:
    packets = _time_sorted(packets)
    size_states = discretize(_sizes(packets), bin_width, n_states)
    iat_states = discretize(_iats_ms(packets), bin_width, n_states)
    return MarkovFeatures(
        size_matrix=transition_matrix(size_states, n_states),
        iat_matrix=transition_matrix(iat_states, n_states),
    )


def _markov_values(flow: BiFlow, schema: FeatureSchema) -> Dict[str, float]:
    n = schema.n_states
    parts = [("", flow.packets)]
    if schema.per_direction_markov:
        parts += [("fwd_", flow.fwd_packets), ("bwd_", flow.bwd_packets)]
    out: Dict[str, float] = {}
    for prefix, packets in parts:
        mk = markov_features(packets, schema.bin_width, n)
        for kind, matrix in (("size", mk.size_matrix),
                             ("iat", mk.iat_matrix)):
            for i in range(n):
                for j in range(n):
                    out[f"{prefix}{kind}_s{i}_{j}"] = float(matrix[i, j])
    return out


# Statistics

def _length_stats(lengths: np.ndarray) -> List[float]:
    if len(lengths) == 0:
        return [0.0, 0.0, 0.0, 0.0]
    return [float(lengths.min()), float(lengths.max()),
            float(lengths.mean()), population_std(lengths)]


def _iat_stats(packets: Sequence[PacketRecord]):
    if len(packets) < 2:
        return [0.0, 0.0, 0.0, 0.0], 0.0
    iats = _iats_ms(packets)
    return [float(iats.min()), float(iats.max()), float(iats.mean()),
            population_std(iats)], 1.0


def stat_features(flow: BiFlow) -> Dict[str, float]:
    """Connection metadata, packet-length and inter-arrival statistics."""
    fwd = _time_sorted(flow.fwd_packets)
    bwd = _time_sorted(flow.bwd_packets)
    merged = flow.packets
    fwd_len, bwd_len = _sizes(fwd), _sizes(bwd)

    out: Dict[str, float] = {
        "bytes_in": float(fwd_len.sum()),
        "bytes_out": float(bwd_len.sum()),
        "num_pkts_in": float(len(fwd)),
        "num_pkts_out": float(len(bwd)),
        "duration": (merged[-1].ts - merged[0].ts) if merged else 0.0,
        "dst_port": float(flow.responder[1]),
        "Init_Fwd_Win_Bytes": float(fwd[0].window) if fwd else 0.0,
        "Init_Bwd_Win_Bytes": float(bwd[0].window) if bwd else 0.0,
        "fwd_present": 1.0 if fwd else 0.0,
        "bwd_present": 1.0 if bwd else 0.0,
    }

    length_values = (_length_stats(fwd_len) + _length_stats(bwd_len)
                     + _length_stats(_sizes(merged)))
    out.update(zip(_LENGTH, length_values))

    fwd_iat, fwd_ok = _iat_stats(fwd)
    bwd_iat, bwd_ok = _iat_stats(bwd)
    flow_iat, flow_ok = _iat_stats(merged)
    out.update(zip(_TIME, fwd_iat + bwd_iat + flow_iat))
    out.update(zip(_TIME_FLAGS, [fwd_ok, bwd_ok, flow_ok]))
    return out


# TLS encodings

def _indicators(prefix: str, codes: Iterable[int],
                vocab: Sequence[int]) -> Dict[str, float]:
    out = {f"{prefix}{_hex(c)}": 0.0 for c in vocab}
    out[f"{prefix}other"] = 0.0
    known = set(vocab)
    for code in codes:
        if is_grease(code):
            continue
        if code in known:
            out[f"{prefix}{_hex(code)}"] = 1.0
        else:
            out[f"{prefix}other"] = 1.0
    return out


def one_hot_tls(
        meta: Optional[TlsMetadata],
        schema: FeatureSchema
) -> Dict[str, float]:
    """0/1 indicators for offered/selected ciphers, extensions, version."""
    parsed = meta is not None and meta.parsed
    m = meta if parsed else TlsMetadata()
    assert m is not None
    out = {
        "tls_parsed": 1.0 if parsed else 0.0,
        "num_offered_ciphers": float(
            sum(1 for c in m.offered_ciphers if not is_grease(c))
        ),
        "num_client_exts": float(
            sum(1 for e in m.client_extensions if not is_grease(e))
        ),
        "cipher_mismatch": 1.0 if m.cipher_mismatch else 0.0,
    }
    out.update(_indicators("offered_", m.offered_ciphers,
                           schema.cipher_vocab))
    selected = [m.selected_cipher] if m.selected_cipher is not None else []
    out.update(_indicators("selected_", selected, schema.cipher_vocab))
    out.update(_indicators("ext_", m.client_extensions,
                           schema.extension_vocab))
    out.update(_indicators("srv_ext_", m.server_extensions,
                           schema.extension_vocab))
    version = [m.version_used] if m.version_used is not None else []
    out.update(_indicators("version_", version, schema.version_vocab))
    return out


def cert_features(meta: Optional[TlsMetadata]) -> Dict[str, float]:
    days = meta.cert_valid_days if meta is not None else None
    if days is None:
        return {"certValidDays": 0.0, "cert_present": 0.0,
                "cert_self_signed": 0.0}
    return {
        "certValidDays": float(days),
        "cert_present": 1.0,
        "cert_self_signed": 1.0 if meta and meta.cert_self_signed else 0.0,
    }


def build_vector(
        flow: BiFlow,
        meta: Optional[TlsMetadata],
        schema: FeatureSchema,
        label: Optional[int] = None
) -> FeatureVector:
    produced: Dict[str, float] = {}
    for part in (stat_features(flow), _markov_values(flow, schema),
                 one_hot_tls(meta, schema), cert_features(meta)):
        produced.update(part)

    names = schema.names
    unknown = set(produced) - set(names)
    if unknown:
        raise SchemaMismatch(
            f"features not in schema {schema.schema_version}: "
            f"{sorted(unknown)[:5]}"
        )
    missing = [n for n in names if n not in produced]
    if missing:
        raise SchemaMismatch(
            f"schema {schema.schema_version} names features nothing "
            f"computes: {missing[:5]}"
        )
    values = np.array([produced[n] for n in names], dtype=np.float64)
    return FeatureVector(
        values=values,
        schema_version=schema.schema_version,
        label=label,
        flow_id=flow.flow_id,
    )


def featurize_flows(
        flows: Iterable[BiFlow],
        schema: FeatureSchema,
        label: Optional[int] = None
) -> List[FeatureVector]:
    vectors = []
    for flow in flows:
        meta = extract_metadata(flow)
        vectors.append(build_vector(flow, meta, schema, label))
    return vectors
