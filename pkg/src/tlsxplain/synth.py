"""Synthetic TLS traffic for desk-scale runs.

Flows are crafted packet by packet and pushed through the real pipeline
(flow assembly, filters, TLS parsing, features). The two profiles differ
in the directions malware is known to differ from benign browsing:
smaller packets, long beacon-like gaps, older protocol versions and
ciphers, fewer extensions, long-lived and often self-signed certificates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import craft
from .features import default_schema, featurize_flows
from .flow import process_packets
from .objects import FeatureVector, PacketRecord
from .schemas import FeatureSchema
from .types import ContentType, Profile, TlsVersion
from .utils import PathLike, atomic_write

logger = logging.getLogger(__name__)

EPOCH = 1_600_000_000.0
FLOW_SPACING = 2.0
NOT_BEFORE = datetime(2020, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class TrafficProfile:
    """Distribution parameters of one traffic class.

    Ranges are inclusive (low, high) and drawn uniformly; byte sizes
    are lognormal with (log-mean, sigma); times are milliseconds.
    """

    profile: Profile
    tls13_share: float
    legacy_versions: Tuple[int, ...]
    cipher_pool: Tuple[int, ...]
    n_ciphers: Tuple[int, int]
    selected_pool: Tuple[int, ...]
    extension_pool: Tuple[int, ...]
    n_extensions: Tuple[int, int]
    grease_share: float
    cert_days: Tuple[int, ...]
    self_signed_share: float
    server_ports: Tuple[int, ...]
    exchanges: Tuple[int, int]
    request_bytes: Tuple[float, float]
    response_bytes: Tuple[float, float]
    think_ms: Tuple[float, float]
    server_delay_ms: Tuple[float, float]
    rtt_ms: Tuple[float, float]


NORMAL = TrafficProfile(
    profile=Profile.NORMAL,
    tls13_share=0.6,
    legacy_versions=(TlsVersion.TLS_1_2,),
    cipher_pool=(0x1301, 0x1302, 0x1303, 0xc02b, 0xc02f, 0xc02c, 0xc030,
                 0xcca9, 0xcca8, 0xc013, 0xc014, 0x009c, 0x009d, 0x002f,
                 0x0035),
    n_ciphers=(8, 15),
    selected_pool=(0xc02f, 0xc02b, 0xc030),
    extension_pool=(0, 5, 10, 11, 13, 16, 18, 23, 27, 35, 45, 51, 0xff01),
    n_extensions=(9, 13),
    grease_share=0.5,
    cert_days=(90, 365, 397),
    self_signed_share=0.0,
    server_ports=(443,),
    exchanges=(4, 12),
    request_bytes=(math.log(500), 0.4),
    response_bytes=(math.log(3000), 0.5),
    think_ms=(150.0, 900.0),
    server_delay_ms=(20.0, 120.0),
    rtt_ms=(10.0, 60.0),
)

MALWARE = TrafficProfile(
    profile=Profile.MALWARE,
    tls13_share=0.0,
    legacy_versions=(TlsVersion.TLS_1_0, TlsVersion.TLS_1_2),
    cipher_pool=(0x0005, 0x0004, 0x000a, 0x002f, 0x0035, 0xc013, 0xc014,
                 0x0033, 0x0039, 0x0016, 0x009c),
    n_ciphers=(3, 9),
    selected_pool=(0x002f, 0x0035, 0x0005, 0xc014),
    extension_pool=(0, 10, 11, 15, 35, 0xff01),
    n_extensions=(0, 4),
    grease_share=0.0,
    cert_days=(365, 730, 3650, 7300),
    self_signed_share=0.7,
    server_ports=(443, 447, 4443, 8443),
    exchanges=(3, 10),
    request_bytes=(math.log(120), 0.4),
    response_bytes=(math.log(180), 0.5),
    think_ms=(2000.0, 6000.0),
    server_delay_ms=(1.0, 10.0),
    rtt_ms=(40.0, 200.0),
)

PROFILES = {Profile.NORMAL: NORMAL, Profile.MALWARE: MALWARE}

_GREASE = tuple(0x0a0a + 0x1010 * i for i in range(16))


def _uniform_int(rng: np.random.Generator, bounds: Tuple[int, int]) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def _uniform_s(rng: np.random.Generator,
               bounds: Tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1])) / 1000.0


def _lognormal(rng: np.random.Generator,
               params: Tuple[float, float]) -> int:
    return max(16, int(rng.lognormal(params[0], params[1])))


def _pick(rng: np.random.Generator, pool: Sequence[int], n: int) \
        -> List[int]:
    n = min(n, len(pool))
    chosen = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in sorted(chosen)]


def _app_data(size: int) -> bytes:
    return craft.tls_record(ContentType.APPLICATION_DATA,
                            bytes(max(0, size - 5)))


def _endpoints(profile: TrafficProfile, i: int,
               rng: np.random.Generator):
    net = 0 if profile.profile is Profile.NORMAL else 1
    client = (f"10.{net}.{(i // 250) % 250}.{i % 250 + 1}",
              49152 + i % 16000)
    server_net = "93.184" if net == 0 else "185.10"
    server = (f"{server_net}.{_uniform_int(rng, (0, 255))}."
              f"{_uniform_int(rng, (1, 254))}",
              int(rng.choice(profile.server_ports)))
    return client, server


def synthetic_conversation(
        profile: TrafficProfile,
        i: int,
        rng: np.random.Generator,
        start: float
) -> craft.Conversation:
    """One complete TLS connection drawn from `profile`."""
    client, server = _endpoints(profile, i, rng)
    conv = craft.Conversation(
        client=client, server=server,
        client_isn=int(rng.integers(0, 1 << 32)),
        server_isn=int(rng.integers(0, 1 << 32)),
        client_window=int(rng.choice((8192, 64240, 65535))),
        server_window=int(rng.choice((29200, 65160, 65535))),
    )
    rtt = _uniform_s(rng, profile.rtt_ms)
    t = conv.handshake(start, rtt)

    tls13 = rng.random() < profile.tls13_share
    ciphers = _pick(rng, profile.cipher_pool,
                    _uniform_int(rng, profile.n_ciphers))
    if tls13:
        selected = int(rng.choice((0x1301, 0x1302)))
    else:
        selected = int(rng.choice(profile.selected_pool))
    if selected not in ciphers:
        ciphers.append(selected)
    extension_types = _pick(rng, profile.extension_pool,
                            _uniform_int(rng, profile.n_extensions))
    grease = rng.random() < profile.grease_share
    if grease:
        ciphers.insert(0, int(rng.choice(_GREASE)))

    extensions = []
    for ext in extension_types:
        if ext == 0:
            extensions.append(craft.sni_extension(f"host{i}.example"))
        else:
            extensions.append(craft.extension(ext, b"\x00\x00"))
    if tls13:
        extensions.append(craft.client_supported_versions(
            [TlsVersion.TLS_1_3, TlsVersion.TLS_1_2]
        ))
    legacy = int(rng.choice(profile.legacy_versions))
    hello = craft.client_hello(ciphers, extensions if extensions else None,
                               version=legacy)
    record = craft.tls_record(ContentType.HANDSHAKE, hello,
                              TlsVersion.TLS_1_0)
    t = conv.send(True, record, t + 0.001)

    t += rtt / 2
    if tls13:
        flight = craft.tls_record(ContentType.HANDSHAKE, craft.server_hello(
            selected, [craft.server_supported_version(TlsVersion.TLS_1_3)]
        ))
        flight += craft.tls_record(ContentType.CHANGE_CIPHER_SPEC, b"\x01")
        flight += _app_data(_uniform_int(rng, (2000, 4500)))
    else:
        days = int(rng.choice(profile.cert_days))
        self_signed = rng.random() < profile.self_signed_share
        cert = craft.certificate(
            NOT_BEFORE, NOT_BEFORE + timedelta(days=days),
            issuer=f"srv{i}.example" if self_signed else "Example CA",
            subject=f"srv{i}.example",
        )
        messages = (craft.server_hello(selected, [], version=legacy)
                    + craft.certificate_message([cert])
                    + craft.server_hello_done())
        flight = craft.tls_record(ContentType.HANDSHAKE, messages, legacy)
    t = conv.send(False, flight, t, gap=0.0005)

    t += rtt / 2
    finished = craft.tls_record(ContentType.CHANGE_CIPHER_SPEC, b"\x01") \
        + _app_data(53)
    t = conv.send(True, finished, t)

    for _ in range(_uniform_int(rng, profile.exchanges)):
        t += _uniform_s(rng, profile.think_ms)
        t = conv.send(True, _app_data(_lognormal(rng,
                                                 profile.request_bytes)), t)
        t += _uniform_s(rng, profile.server_delay_ms)
        t = conv.send(False, _app_data(_lognormal(rng,
                                                  profile.response_bytes)),
                      t, gap=0.0005)
        t += rtt / 2
        conv.ack(True, t)
    conv.close(t + 0.05, rtt)
    return conv


def synthetic_packets(
        profile: Profile,
        n_flows: int,
        seed: int = 0
) -> List[PacketRecord]:
    """Packets of `n_flows` connections, interleaved in time order."""
    params = PROFILES[Profile(profile)]
    rng = np.random.default_rng(seed)
    conversations = [
        synthetic_conversation(params, i, rng, EPOCH + i * FLOW_SPACING)
        for i in range(n_flows)
    ]
    return craft.merge_conversations(conversations)


def generate_synthetic_corpus(
        profile: Profile,
        n_flows: int,
        seed: int = 0,
        schema: Optional[FeatureSchema] = None
) -> List[FeatureVector]:
    """Labeled feature vectors of `n_flows` synthetic connections."""
    profile = Profile(profile)
    if n_flows <= 0:
        return []
    schema = schema if schema is not None else default_schema()
    packets = synthetic_packets(profile, n_flows, seed)
    source = f"synth-{profile.value}-{seed}"
    flows, stats = process_packets(packets, schema.window_seconds, source)
    if stats.kept_flows != n_flows:
        logger.warning("%s: %d of %d crafted flows survived filtering",
                       source, stats.kept_flows, n_flows)
    return featurize_flows(flows, schema, label=int(profile.label))


def write_synthetic_pcaps(
        directory: PathLike,
        profile: Profile,
        n_flows: int,
        seed: int = 0,
        flows_per_file: int = 500
) -> List[Path]:
    """Write the same connections as classic pcaps under `directory`."""
    profile = Profile(profile)
    params = PROFILES[profile]
    rng = np.random.default_rng(seed)
    conversations = [
        synthetic_conversation(params, i, rng, EPOCH + i * FLOW_SPACING)
        for i in range(n_flows)
    ]
    out_dir = Path(directory)
    paths = []
    for part, start in enumerate(range(0, n_flows, flows_per_file)):
        chunk = conversations[start:start + flows_per_file]
        path = out_dir / f"{profile.value}-{seed}-{part:04d}.pcap"
        atomic_write(path, craft.capture_bytes(
            craft.merge_conversations(chunk)
        ))
        paths.append(path)
    return paths
