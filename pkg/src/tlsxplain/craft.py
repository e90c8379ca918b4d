"""Byte-level builders for captures, TLS handshakes and certificates.

The synthetic corpus and the test fixtures are made from these, so every
crafted flow goes through the same decoders as real traffic.
"""
from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, List, Optional, Sequence, Tuple

from .objects import Endpoint, PacketRecord
from .types import (
    ContentType,
    EtherType,
    ExtensionType,
    HandshakeType,
    IpProto,
    LinkType,
    TcpFlag,
    TlsVersion,
)

Frame = Tuple[float, bytes]

MSS = 1460


# pcap

def pcap_global_header(
        linktype: int = LinkType.ETHERNET,
        *,
        nanosecond: bool = False,
        big_endian: bool = False,
        snaplen: int = 65535
) -> bytes:
    order = '>' if big_endian else '<'
    magic = 0xa1b23c4d if nanosecond else 0xa1b2c3d4
    return struct.pack(order + 'IHHiIII', magic, 2, 4, 0, 0, snaplen,
                       linktype)


def pcap_record(ts: float, frame: bytes, *, nanosecond: bool = False,
                big_endian: bool = False,
                orig_len: Optional[int] = None) -> bytes:
    order = '>' if big_endian else '<'
    sec = int(ts)
    scale = 1_000_000_000 if nanosecond else 1_000_000
    frac = int(round((ts - sec) * scale))
    if frac >= scale:
        sec, frac = sec + 1, frac - scale
    wire = len(frame) if orig_len is None else orig_len
    return struct.pack(order + 'IIII', sec, frac, len(frame), wire) + frame


def pcap_bytes(
        frames: Iterable[Frame],
        linktype: int = LinkType.ETHERNET,
        *,
        nanosecond: bool = False,
        big_endian: bool = False
) -> bytes:
    out = bytearray(pcap_global_header(
        linktype, nanosecond=nanosecond, big_endian=big_endian
    ))
    for ts, frame in frames:
        out += pcap_record(ts, frame, nanosecond=nanosecond,
                           big_endian=big_endian)
    return bytes(out)


# Link, network and transport layers

def ethernet(payload: bytes, ethertype: int = EtherType.IPV4,
             vlan_tags: Sequence[int] = ()) -> bytes:
    dst = bytes.fromhex("020000000002")
    src = bytes.fromhex("020000000001")
    header = bytearray(dst + src)
    for i, vid in enumerate(vlan_tags):
        tpid = EtherType.QINQ if i == 0 and len(vlan_tags) > 1 \
            else EtherType.VLAN
        header += struct.pack('!HH', tpid, vid & 0x0fff)
    header += struct.pack('!H', ethertype)
    return bytes(header) + payload


def ipv4(src: str, dst: str, payload: bytes, *,
         proto: int = IpProto.TCP, ihl_words: int = 5,
         fragment_offset: int = 0, more_fragments: bool = False,
         ttl: int = 64) -> bytes:
    options = bytes((ihl_words - 5) * 4)
    header_len = ihl_words * 4
    frag = (0x2000 if more_fragments else 0) | (fragment_offset & 0x1fff)
    header = struct.pack(
        '!BBHHHBBH4s4s',
        0x40 | ihl_words, 0, header_len + len(payload), 0, frag, ttl,
        proto, 0,
        ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed,
    )
    return header + options + payload


def ipv6(src: str, dst: str, payload: bytes, *,
         next_header: int = IpProto.TCP,
         extensions: Sequence[Tuple[int, bytes]] = ()) -> bytes:
    """`extensions` are (type, body) pairs; bodies are padded to 8n-2."""
    chain = bytearray()
    types = [t for t, _ in extensions] + [next_header]
    for i, (_, body) in enumerate(extensions):
        padded = body + bytes((-(len(body) + 2)) % 8)
        chain += bytes([types[i + 1], (len(padded) + 2) // 8 - 1]) + padded
    first = types[0]
    body = bytes(chain) + payload
    header = struct.pack(
        '!IHBB16s16s', 6 << 28, len(body), first, 64,
        ipaddress.IPv6Address(src).packed, ipaddress.IPv6Address(dst).packed,
    )
    return header + body


def ipv6_fragment_header(offset: int, more: bool = False) -> bytes:
    return struct.pack('!HI', (offset << 3) | int(more), 1)


def tcp(src_port: int, dst_port: int, payload: bytes = b"", *,
        seq: int = 0, ack: int = 0, flags: int = TcpFlag.ACK,
        window: int = 65535, options: bytes = b"") -> bytes:
    options = options + bytes((-len(options)) % 4)
    data_offset = (20 + len(options)) // 4
    header = struct.pack('!HHIIBBHHH', src_port, dst_port, seq, ack,
                         data_offset << 4, int(flags), window, 0, 0)
    return header + options + payload


def frame_for(record: PacketRecord, linktype: int = LinkType.ETHERNET) \
        -> bytes:
    """Serialize a `PacketRecord` back to the frame it decodes from."""
    segment = tcp(record.src_port, record.dst_port, record.payload,
                  seq=record.seq, flags=record.tcp_flags,
                  window=record.window)
    if ipaddress.ip_address(record.src_ip).version == 6:
        packet = ipv6(record.src_ip, record.dst_ip, segment)
        ethertype = EtherType.IPV6
    else:
        packet = ipv4(record.src_ip, record.dst_ip, segment)
        ethertype = EtherType.IPV4
    if linktype == LinkType.RAW:
        return packet
    return ethernet(packet, ethertype)


def capture_bytes(records: Sequence[PacketRecord],
                  linktype: int = LinkType.ETHERNET) -> bytes:
    return pcap_bytes(((r.ts, frame_for(r, linktype)) for r in records),
                      linktype)


# TCP conversations

_SEQ_MOD = 1 << 32


@dataclass
class Conversation:
    """Builds the packets of one TCP connection, in time order."""

    client: Endpoint
    server: Endpoint
    client_isn: int = 1000
    server_isn: int = 5000
    client_window: int = 64240
    server_window: int = 65535
    packets: List[PacketRecord] = field(default_factory=list)

    def __post_init__(self):
        self._next_seq = {True: self.client_isn, False: self.server_isn}

    def _emit(self, from_client: bool, at: float, flags: int,
              payload: bytes = b"") -> PacketRecord:
        src, dst = (self.client, self.server) if from_client \
            else (self.server, self.client)
        seq = self._next_seq[from_client]
        record = PacketRecord(
            ts=at,
            src_ip=src[0], dst_ip=dst[0], src_port=src[1], dst_port=dst[1],
            tcp_flags=TcpFlag(flags),
            payload=payload,
            seq=seq,
            window=self.client_window if from_client else self.server_window,
            index=len(self.packets),
        )
        consumed = len(payload) + (1 if flags & (TcpFlag.SYN | TcpFlag.FIN)
                                   else 0)
        self._next_seq[from_client] = (seq + consumed) % _SEQ_MOD
        self.packets.append(record)
        return record

    def handshake(self, at: float = 0.0, rtt: float = 0.01) -> float:
        """SYN, SYN+ACK, ACK; returns the time of the final ACK."""
        self._emit(True, at, TcpFlag.SYN)
        self._emit(False, at + rtt / 2, TcpFlag.SYN | TcpFlag.ACK)
        self._emit(True, at + rtt, TcpFlag.ACK)
        return at + rtt

    def send(self, from_client: bool, payload: bytes, at: float,
             gap: float = 0.0) -> float:
        """Send payload in MSS-sized segments spaced `gap` apart."""
        chunks = [payload[i:i + MSS] for i in range(0, len(payload), MSS)]
        for i, chunk in enumerate(chunks or [b""]):
            self._emit(from_client, at + i * gap,
                       TcpFlag.PSH | TcpFlag.ACK, chunk)
        return at + max(0, len(chunks) - 1) * gap

    def ack(self, from_client: bool, at: float) -> None:
        self._emit(from_client, at, TcpFlag.ACK)

    def close(self, at: float, rtt: float = 0.01) -> float:
        self._emit(True, at, TcpFlag.FIN | TcpFlag.ACK)
        self._emit(False, at + rtt / 2, TcpFlag.FIN | TcpFlag.ACK)
        self._emit(True, at + rtt, TcpFlag.ACK)
        return at + rtt


def merge_conversations(conversations: Iterable[Conversation]) \
        -> List[PacketRecord]:
    """Interleave by timestamp and renumber in capture order."""
    records = [p for c in conversations for p in c.packets]
    records.sort(key=lambda p: (p.ts, p.index))
    return [replace(p, index=i) for i, p in enumerate(records)]


# TLS

def tls_record(content_type: int, body: bytes,
               version: int = TlsVersion.TLS_1_2) -> bytes:
    return struct.pack('!BHH', content_type, version, len(body)) + body


def handshake_message(msg_type: int, body: bytes) -> bytes:
    return bytes([msg_type]) + len(body).to_bytes(3, 'big') + body


def _vector(data: bytes, length_bytes: int) -> bytes:
    return len(data).to_bytes(length_bytes, 'big') + data


def _u16s(values: Iterable[int]) -> bytes:
    return b"".join(struct.pack('!H', v) for v in values)


def extension(ext_type: int, data: bytes = b"") -> bytes:
    return struct.pack('!H', ext_type) + _vector(data, 2)


def sni_extension(host: str) -> bytes:
    entry = b"\x00" + _vector(host.encode('ascii'), 2)
    return extension(ExtensionType.SERVER_NAME, _vector(entry, 2))


def client_supported_versions(versions: Sequence[int]) -> bytes:
    return extension(ExtensionType.SUPPORTED_VERSIONS,
                     _vector(_u16s(versions), 1))


def server_supported_version(version: int) -> bytes:
    return extension(ExtensionType.SUPPORTED_VERSIONS,
                     struct.pack('!H', version))


def client_hello(
        ciphers: Sequence[int],
        extensions: Optional[Sequence[bytes]] = None,
        *,
        version: int = TlsVersion.TLS_1_2,
        session_id: bytes = b"",
        random: bytes = bytes(32)
) -> bytes:
    """ClientHello handshake message; `extensions=None` omits the block."""
    body = (struct.pack('!H', version) + random + _vector(session_id, 1)
            + _vector(_u16s(ciphers), 2) + _vector(b"\x00", 1))
    if extensions is not None:
        body += _vector(b"".join(extensions), 2)
    return handshake_message(HandshakeType.CLIENT_HELLO, body)


def server_hello(
        cipher: int,
        extensions: Optional[Sequence[bytes]] = None,
        *,
        version: int = TlsVersion.TLS_1_2,
        session_id: bytes = b"",
        random: bytes = bytes(32)
) -> bytes:
    body = (struct.pack('!H', version) + random + _vector(session_id, 1)
            + struct.pack('!HB', cipher, 0))
    if extensions is not None:
        body += _vector(b"".join(extensions), 2)
    return handshake_message(HandshakeType.SERVER_HELLO, body)


def certificate_message(certificates: Sequence[bytes]) -> bytes:
    chain = b"".join(_vector(c, 3) for c in certificates)
    return handshake_message(HandshakeType.CERTIFICATE, _vector(chain, 3))


def server_hello_done() -> bytes:
    return handshake_message(14, b"")


# DER

_OID_SHA256_RSA = bytes.fromhex("2a864886f70d01010b")
_OID_RSA = bytes.fromhex("2a864886f70d010101")
_OID_COMMON_NAME = bytes.fromhex("550403")


def der(tag: int, value: bytes) -> bytes:
    n = len(value)
    if n < 0x80:
        length = bytes([n])
    else:
        raw = n.to_bytes((n.bit_length() + 7) // 8, 'big')
        length = bytes([0x80 | len(raw)]) + raw
    return bytes([tag]) + length + value


def der_sequence(*items: bytes) -> bytes:
    return der(0x30, b"".join(items))


def der_integer(value: int) -> bytes:
    raw = value.to_bytes(max(1, (value.bit_length() + 8) // 8), 'big')
    return der(0x02, raw)


def der_time(moment: datetime) -> bytes:
    """UTCTime for 1950..2049, GeneralizedTime otherwise."""
    if 1950 <= moment.year < 2050:
        return der(0x17, moment.strftime("%y%m%d%H%M%SZ").encode())
    return der(0x18, moment.strftime("%Y%m%d%H%M%SZ").encode())


def der_name(common_name: str) -> bytes:
    attribute = der_sequence(der(0x06, _OID_COMMON_NAME),
                             der(0x0c, common_name.encode('utf-8')))
    return der_sequence(der(0x31, attribute))


def certificate(
        not_before: datetime,
        not_after: datetime,
        *,
        issuer: str = "Example CA",
        subject: str = "example.com",
        serial: int = 1,
        with_version: bool = True
) -> bytes:
    """Structurally valid, unsigned X.509 certificate."""
    algorithm = der_sequence(der(0x06, _OID_SHA256_RSA), der(0x05, b""))
    spki = der_sequence(
        der_sequence(der(0x06, _OID_RSA), der(0x05, b"")),
        der(0x03, b"\x00"),
    )
    fields = []
    if with_version:
        fields.append(der(0xa0, der_integer(2)))
    fields += [
        der_integer(serial),
        algorithm,
        der_name(issuer),
        der_sequence(der_time(not_before), der_time(not_after)),
        der_name(subject),
        spki,
    ]
    tbs = der_sequence(*fields)
    return der_sequence(tbs, algorithm, der(0x03, b"\x00" + bytes(32)))
