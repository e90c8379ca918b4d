from __future__ import annotations

import functools
import ipaddress
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .types import IpProto, OutputSpace, TcpFlag

__all__ = (
    "PcapHeader",
    "RawFrame",
    "PacketRecord",
    "Endpoint",
    "FlowKey",
    "BiFlow",
    "TlsRecord",
    "TlsMetadata",
    "MarkovFeatures",
    "FeatureVector",
    "Prediction",
    "ShapExplanation",
)


Endpoint = Tuple[str, int]


@functools.lru_cache(maxsize=65536)
def _ip_sort_key(ip: str) -> Tuple[int, int]:
    addr = ipaddress.ip_address(ip)
    return addr.version, int(addr)


def endpoint_sort_key(ep: Endpoint) -> Tuple[int, int, int]:
    version, value = _ip_sort_key(ep[0])
    return version, value, ep[1]


@dataclass(frozen=True)
class PcapHeader:

    magic: int
    version: Tuple[int, int]
    thiszone: int
    sigfigs: int
    snaplen: int
    linktype: int
    nanosecond: bool
    byte_order: str  # '<' or '>'

    @property
    def timestamp_resolution(self) -> str:
        return "nanosecond" if self.nanosecond else "microsecond"


@dataclass(frozen=True)
class RawFrame:

    data: bytes
    ts: float
    linktype: int
    wire_len: int
    index: int
    offset: int = 0


@dataclass(frozen=True)
class PacketRecord:
    """One decoded TCP segment."""

    ts: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int = IpProto.TCP
    tcp_flags: TcpFlag = TcpFlag(0)
    payload: bytes = b""
    wire_len: int = 0
    seq: int = 0
    window: int = 0
    index: int = 0

    @property
    def src(self) -> Endpoint:
        return self.src_ip, self.src_port

    @property
    def dst(self) -> Endpoint:
        return self.dst_ip, self.dst_port

    def has(self, flag: TcpFlag) -> bool:
        return bool(self.tcp_flags & flag)


@dataclass(frozen=True)
class FlowKey:
    """Canonical 5-tuple: `ep_a` sorts before `ep_b`."""

    ep_a: Endpoint
    ep_b: Endpoint
    protocol: int = IpProto.TCP

    @classmethod
    def of(cls, src: Endpoint, dst: Endpoint,
           protocol: int = IpProto.TCP) -> FlowKey:
        if endpoint_sort_key(dst) < endpoint_sort_key(src):
            src, dst = dst, src
        return cls(src, dst, protocol)

    @classmethod
    def for_packet(cls, pkt: PacketRecord) -> FlowKey:
        return cls.of(pkt.src, pkt.dst, pkt.protocol)

    def __str__(self):
        a, b = self.ep_a, self.ep_b
        return f"{a[0]}:{a[1]}-{b[0]}:{b[1]}/{self.protocol}"


def _time_order(packets) -> List[PacketRecord]:
    return sorted(packets, key=lambda p: (p.ts, p.index))


@dataclass(frozen=True)
class BiFlow:
    """One window of a bidirectional connection.

    `fwd_packets` travel initiator -> responder.
    """

    key: FlowKey
    initiator: Endpoint
    fwd_packets: Tuple[PacketRecord, ...]
    bwd_packets: Tuple[PacketRecord, ...]
    window_start: float
    window_end: float
    window_index: int = 0
    handshake_complete: Optional[bool] = None
    encrypted: Optional[bool] = None
    source: str = ""

    @property
    def responder(self) -> Endpoint:
        return self.key.ep_b if self.initiator == self.key.ep_a \
            else self.key.ep_a

    @property
    def packets(self) -> List[PacketRecord]:
        """Both directions merged in time order (ties by capture order)."""
        return _time_order(self.fwd_packets + self.bwd_packets)

    @property
    def n_packets(self) -> int:
        return len(self.fwd_packets) + len(self.bwd_packets)

    @property
    def flow_id(self) -> str:
        return f"{self.source}#{self.key}@{self.window_index}"


@dataclass(frozen=True)
class TlsRecord:

    content_type: int
    version: int
    fragment: bytes


@dataclass
class TlsMetadata:
    """Observable TLS handshake fields of one flow."""

    client_version: Optional[int] = None
    server_version: Optional[int] = None
    offered_ciphers: List[int] = field(default_factory=list)
    selected_cipher: Optional[int] = None
    client_extensions: List[int] = field(default_factory=list)
    server_extensions: List[int] = field(default_factory=list)
    sni: Optional[str] = None
    cert_valid_days: Optional[int] = None
    cert_self_signed: Optional[bool] = None
    parsed: bool = False
    unknown_version: bool = False

    @property
    def version_used(self) -> Optional[int]:
        """Negotiated version, falling back to the client's offer."""
        if self.server_version is not None:
            return self.server_version
        return self.client_version

    @property
    def cipher_mismatch(self) -> bool:
        return (self.selected_cipher is not None
                and self.selected_cipher not in self.offered_ciphers)


@dataclass(frozen=True, eq=False)
class MarkovFeatures:

    size_matrix: np.ndarray
    iat_matrix: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.size_matrix.ravel(), self.iat_matrix.ravel()]
        )


@dataclass(frozen=True, eq=False)
class FeatureVector:

    values: np.ndarray
    schema_version: str
    label: Optional[int] = None
    flow_id: str = ""

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Prediction:

    margin: float
    probability: float
    label: int


@dataclass(frozen=True, eq=False)
class ShapExplanation:
    """Attributions of one sample; `base_value + phi.sum() == fx`."""

    base_value: float
    phi: np.ndarray
    fx: float
    flow_id: str = ""
    output_space: OutputSpace = OutputSpace.MARGIN

    @property
    def closure_error(self) -> float:
        return abs(self.base_value + float(self.phi.sum()) - self.fx)
