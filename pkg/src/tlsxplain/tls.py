"""Passive TLS handshake parsing.

Nothing here decrypts anything: only the cleartext record headers,
hello messages and (pre-1.3) certificate chains are read.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, List, Optional, Sequence, Tuple

from .errors import MalformedDer, MalformedHello
from .objects import BiFlow, PacketRecord, TlsMetadata, TlsRecord
from .types import ContentType, ExtensionType, HandshakeType, TlsVersion

logger = logging.getLogger(__name__)

RECORD_HEADER_LEN = 5
HANDSHAKE_HEADER_LEN = 4
# TLSCiphertext may carry up to 2^14 + 2048 bytes
MAX_RECORD_LEN = (1 << 14) + 2048

_KNOWN_VERSIONS = {int(v) for v in TlsVersion}
_CONTENT_TYPES = {int(t) for t in ContentType}

_SEQ_MOD = 1 << 32


def is_grease(code: int) -> bool:
    """GREASE values look like 0x?a?a with equal bytes."""
    return (code & 0x0f0f) == 0x0a0a and (code >> 8) == (code & 0xff)


# TCP reassembly

def reassemble(packets: Sequence[PacketRecord]) -> bytes:
    """Concatenate one direction's payloads in sequence-number order.

    Duplicate bytes are dropped (the earliest capture wins); the stream
    stops at the first gap. The order of `packets` does not matter.
    """
    segments = sorted((p for p in packets if p.payload),
                      key=lambda p: (p.ts, p.index))
    if not segments:
        return b""
    base = segments[0].seq
    ordered = []
    for arrival, pkt in enumerate(segments):
        rel = (pkt.seq - base) % _SEQ_MOD
        if rel >= _SEQ_MOD // 2:
            # retransmission of bytes before the first payload we saw
            continue
        ordered.append((rel, arrival, pkt.payload))
    ordered.sort(key=lambda item: (item[0], item[1]))

    stream = bytearray()
    for rel, _, payload in ordered:
        expected = len(stream)
        if rel > expected:
            break
        end = rel + len(payload)
        if end <= expected:
            continue
        stream += payload[expected - rel:]
    return bytes(stream)


# Record layer

@dataclass
class RecordParse:

    records: List[TlsRecord] = field(default_factory=list)
    truncated: bool = False

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def parse_records(stream_bytes: bytes) -> RecordParse:
    """Split a byte stream into TLS records.

    Parsing stops at the first position that does not hold a complete,
    plausible record header; `truncated` is then set.
    """
    result = RecordParse()
    offset = 0
    while offset < len(stream_bytes):
        if offset + RECORD_HEADER_LEN > len(stream_bytes):
            result.truncated = True
            break
        content_type, version, length = struct.unpack_from(
            '!BHH', stream_bytes, offset
        )
        if (content_type not in _CONTENT_TYPES
                or version >> 8 != 3
                or length > MAX_RECORD_LEN):
            result.truncated = True
            break
        start = offset + RECORD_HEADER_LEN
        if start + length > len(stream_bytes):
            result.truncated = True
            break
        result.records.append(TlsRecord(
            content_type=content_type,
            version=version,
            fragment=stream_bytes[start:start + length],
        ))
        offset = start + length
    return result


def handshake_messages(records: Iterable[TlsRecord]) -> List[bytes]:
    """Reassemble handshake messages (4-byte header included).

    Fragments spanning records are concatenated. Collection stops at the
    first ChangeCipherSpec or application data record, after which
    handshake bytes are encrypted.
    """
    buffer = bytearray()
    for record in records:
        if record.content_type == ContentType.HANDSHAKE:
            buffer += record.fragment
        elif record.content_type in (ContentType.CHANGE_CIPHER_SPEC,
                                     ContentType.APPLICATION_DATA):
            break

    messages = []
    offset = 0
    while offset + HANDSHAKE_HEADER_LEN <= len(buffer):
        length = int.from_bytes(buffer[offset + 1:offset + 4], 'big')
        end = offset + HANDSHAKE_HEADER_LEN + length
        if end > len(buffer):
            break
        messages.append(bytes(buffer[offset:end]))
        offset = end
    return messages


# Handshake messages

class _Reader:
    """Bounds-checked big-endian cursor; overruns raise `error`."""

    def __init__(self, data: bytes, error=MalformedHello):
        self.data = data
        self.pos = 0
        self.error = error

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise self.error(
                f"need {n} bytes at offset {self.pos}, "
                f"only {self.remaining()} left"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def uint(self, n: int) -> int:
        return int.from_bytes(self.take(n), 'big')

    def vector(self, length_bytes: int) -> bytes:
        return self.take(self.uint(length_bytes))


def _u16_list(data: bytes) -> List[int]:
    if len(data) % 2:
        raise MalformedHello(f"odd-length 16-bit list ({len(data)} bytes)")
    return [int.from_bytes(data[i:i + 2], 'big')
            for i in range(0, len(data), 2)]


def _handshake_body(handshake_bytes: bytes, expected: HandshakeType) -> bytes:
    reader = _Reader(handshake_bytes)
    msg_type = reader.uint(1)
    if msg_type != expected:
        raise MalformedHello(
            f"expected handshake type {int(expected)}, got {msg_type}"
        )
    body = reader.vector(3)
    return body


def _extensions(reader: _Reader) -> List[Tuple[int, bytes]]:
    if reader.remaining() == 0:
        # pre-extension hellos end after compression methods
        return []
    block = _Reader(reader.vector(2))
    if reader.remaining():
        raise MalformedHello(f"{reader.remaining()} trailing bytes")
    out = []
    while block.remaining():
        ext_type = block.uint(2)
        out.append((ext_type, block.vector(2)))
    return out


def _parse_sni(data: bytes) -> Optional[str]:
    reader = _Reader(_Reader(data).vector(2))
    while reader.remaining():
        name_type = reader.uint(1)
        name = reader.vector(2)
        if name_type == 0:
            return name.decode('ascii', errors='replace')
    return None


def _flag_unknown(meta: TlsMetadata, *versions: Optional[int]) -> None:
    for v in versions:
        if v is not None and v not in _KNOWN_VERSIONS:
            meta.unknown_version = True


def parse_client_hello(
        handshake_bytes: bytes,
        meta: Optional[TlsMetadata] = None
) -> TlsMetadata:
    """Fill the client-side fields of `meta` from a ClientHello."""
    meta = meta if meta is not None else TlsMetadata()
    reader = _Reader(_handshake_body(handshake_bytes,
                                     HandshakeType.CLIENT_HELLO))
    client_version = reader.uint(2)
    reader.take(32)  # random
    reader.vector(1)  # session id
    ciphers = _u16_list(reader.vector(2))
    reader.vector(1)  # compression methods

    extensions = _extensions(reader)
    for ext_type, data in extensions:
        if ext_type == ExtensionType.SERVER_NAME and data:
            meta.sni = _parse_sni(data)
        elif ext_type == ExtensionType.SUPPORTED_VERSIONS:
            listed = _Reader(data).vector(1)
            offered = [v for v in _u16_list(listed) if not is_grease(v)]
            if offered:
                client_version = max(offered)

    meta.client_version = client_version
    meta.offered_ciphers = ciphers
    meta.client_extensions = [ext_type for ext_type, _ in extensions]
    meta.parsed = True
    _flag_unknown(meta, client_version)
    return meta


def parse_server_hello(
        handshake_bytes: bytes,
        meta: Optional[TlsMetadata] = None
) -> TlsMetadata:
    meta = meta if meta is not None else TlsMetadata()
    reader = _Reader(_handshake_body(handshake_bytes,
                                     HandshakeType.SERVER_HELLO))
    server_version = reader.uint(2)
    reader.take(32)
    reader.vector(1)
    selected = reader.uint(2)
    reader.uint(1)  # compression method

    extensions = _extensions(reader)
    for ext_type, data in extensions:
        if ext_type == ExtensionType.SUPPORTED_VERSIONS and len(data) == 2:
            server_version = int.from_bytes(data, 'big')

    meta.server_version = server_version
    meta.selected_cipher = selected
    meta.server_extensions = [ext_type for ext_type, _ in extensions]
    _flag_unknown(meta, server_version)
    return meta


def leaf_certificate(handshake_bytes: bytes) -> Optional[bytes]:
    """First certificate of a (TLS <= 1.2) Certificate message."""
    reader = _Reader(_handshake_body(handshake_bytes,
                                     HandshakeType.CERTIFICATE))
    chain = _Reader(reader.vector(3))
    if not chain.remaining():
        return None
    return chain.vector(3)


def parse_server_side(
        handshake_messages_: Sequence[bytes],
        meta: Optional[TlsMetadata] = None
) -> TlsMetadata:
    """Fill server fields from the responder's handshake messages."""
    meta = meta if meta is not None else TlsMetadata()
    seen_hello = seen_cert = False
    for message in handshake_messages_:
        if not message:
            continue
        msg_type = message[0]
        if msg_type == HandshakeType.SERVER_HELLO and not seen_hello:
            parse_server_hello(message, meta)
            seen_hello = True
        elif msg_type == HandshakeType.CERTIFICATE and not seen_cert:
            seen_cert = True
            der = leaf_certificate(message)
            if der is None:
                continue
            try:
                days, self_signed = cert_validity_days(der)
            except MalformedDer as e:
                logger.debug("Leaf certificate not decodable: %s", e)
                continue
            meta.cert_valid_days = days
            meta.cert_self_signed = self_signed
    return meta


def extract_metadata(flow: BiFlow) -> TlsMetadata:
    """Handshake metadata of a flow; `parsed` is False on failure."""
    meta = TlsMetadata()
    client = handshake_messages(parse_records(reassemble(flow.fwd_packets)))
    server = handshake_messages(parse_records(reassemble(flow.bwd_packets)))
    hello = next(
        (m for m in client if m[0] == HandshakeType.CLIENT_HELLO), None
    )
    if hello is None:
        logger.debug("%s: no ClientHello found", flow.flow_id)
        return meta
    try:
        parse_client_hello(hello, meta)
        parse_server_side(server, meta)
    except MalformedHello as e:
        logger.warning("%s: unparsable handshake: %s", flow.flow_id, e)
        return TlsMetadata()
    return meta


# X.509 DER

_TAG_SEQUENCE = 0x30
_TAG_UTC_TIME = 0x17
_TAG_GENERALIZED_TIME = 0x18
_TAG_VERSION = 0xa0


def _der_tlv(data: bytes, offset: int) -> Tuple[int, int, int]:
    """Return (tag, value_start, value_end) of the element at offset."""
    if offset + 2 > len(data):
        raise MalformedDer(f"truncated element at offset {offset}")
    tag = data[offset]
    first = data[offset + 1]
    pos = offset + 2
    if first < 0x80:
        length = first
    else:
        n = first & 0x7f
        if n == 0 or n > 4 or pos + n > len(data):
            raise MalformedDer(f"bad length encoding at offset {offset}")
        length = int.from_bytes(data[pos:pos + n], 'big')
        pos += n
    if pos + length > len(data):
        raise MalformedDer(
            f"element at offset {offset} overruns its container"
        )
    return tag, pos, pos + length


def _der_time(tag: int, value: bytes) -> datetime:
    try:
        text = value.decode('ascii')
    except UnicodeDecodeError:
        raise MalformedDer("non-ASCII time value") from None
    if not text.endswith('Z'):
        raise MalformedDer(f"time {text!r} is not UTC")
    text = text[:-1].split('.')[0]
    try:
        if tag == _TAG_UTC_TIME:
            year = int(text[:2])
            # X.509: YY >= 50 is 19YY, otherwise 20YY
            year += 1900 if year >= 50 else 2000
            rest = text[2:]
        elif tag == _TAG_GENERALIZED_TIME:
            year = int(text[:4])
            rest = text[4:]
        else:
            raise MalformedDer(f"unexpected time tag 0x{tag:02x}")
        if len(rest) == 8:
            rest += "00"
        if len(rest) != 10:
            raise MalformedDer(f"bad time {value!r}")
        return datetime(
            year, int(rest[0:2]), int(rest[2:4]), int(rest[4:6]),
            int(rest[6:8]), int(rest[8:10]), tzinfo=timezone.utc
        )
    except ValueError as e:
        if isinstance(e, MalformedDer):
            raise
        raise MalformedDer(f"bad time {value!r}: {e}") from None


def cert_validity_days(der_bytes: bytes) -> Tuple[int, bool]:
    """Validity length in whole days and issuer == subject."""
    tag, start, _ = _der_tlv(der_bytes, 0)
    if tag != _TAG_SEQUENCE:
        raise MalformedDer("certificate is not a SEQUENCE")
    tag, pos, tbs_end = _der_tlv(der_bytes, start)
    if tag != _TAG_SEQUENCE:
        raise MalformedDer("tbsCertificate is not a SEQUENCE")

    fields = []
    while pos < tbs_end and len(fields) < 6:
        tag, vstart, vend = _der_tlv(der_bytes, pos)
        fields.append((tag, pos, vstart, vend))
        pos = vend
    if fields and fields[0][0] == _TAG_VERSION:
        fields = fields[1:]
    # serialNumber, signature, issuer, validity, subject
    if len(fields) < 5:
        raise MalformedDer("tbsCertificate has too few fields")
    _, issuer_at, _, issuer_end = fields[2]
    vtag, _, vstart, vend = fields[3]
    _, subject_at, _, subject_end = fields[4]
    if vtag != _TAG_SEQUENCE:
        raise MalformedDer("validity is not a SEQUENCE")

    tag1, s1, e1 = _der_tlv(der_bytes, vstart)
    tag2, s2, e2 = _der_tlv(der_bytes, e1)
    if e2 > vend:
        raise MalformedDer("validity overruns its SEQUENCE")
    not_before = _der_time(tag1, der_bytes[s1:e1])
    not_after = _der_time(tag2, der_bytes[s2:e2])
    seconds = (not_after - not_before).total_seconds()
    if seconds < 0:
        raise MalformedDer("notAfter precedes notBefore")

    self_signed = (der_bytes[issuer_at:issuer_end]
                   == der_bytes[subject_at:subject_end])
    return int(seconds // 86400), self_signed
