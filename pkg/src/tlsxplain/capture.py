"""Classic pcap reading and Ethernet/IP/TCP decoding.

Only TCP over IPv4/IPv6 leaves this module. Everything else is skipped
and counted in `CaptureStats`.
"""
from __future__ import annotations

import ipaddress
import logging
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

from .errors import (
    BadMagic,
    MalformedFrame,
    TruncatedHeader,
    UnsupportedFormat,
    UnsupportedLinkType,
)
from .objects import PacketRecord, PcapHeader, RawFrame
from .types import EtherType, IpProto, LinkType, TcpFlag
from .utils import PathLike

logger = logging.getLogger(__name__)

PCAP_GLOBAL_HEADER_LEN = 24
PCAP_PACKET_HEADER_LEN = 16

# magic as read little-endian -> (byte order, nanosecond timestamps)
_MAGICS = {
    0xa1b2c3d4: ('<', False),
    0xd4c3b2a1: ('>', False),
    0xa1b23c4d: ('<', True),
    0x4d3cb2a1: ('>', True),
}
_PCAPNG_MAGIC = 0x0a0d0d0a

ETHERNET_HEADER_LEN = 14
VLAN_TAG_LEN = 4
MAX_VLAN_DEPTH = 2
IPV4_MIN_HEADER_LEN = 20
IPV6_HEADER_LEN = 40
TCP_MIN_HEADER_LEN = 20

_IPV6_EXTENSIONS = {IpProto.HOPOPT, IpProto.IPV6_ROUTE, IpProto.IPV6_OPTS}


@dataclass
class CaptureStats:

    frames: int = 0
    tcp_packets: int = 0
    non_ip: int = 0
    non_tcp: int = 0
    fragments_dropped: int = 0
    malformed: int = 0
    truncated_tail: int = 0

    def merge(self, other: CaptureStats) -> None:
        for name, value in asdict(other).items():
            setattr(self, name, getattr(self, name) + value)


def parse_global_header(data: bytes) -> PcapHeader:
    if len(data) < PCAP_GLOBAL_HEADER_LEN:
        raise TruncatedHeader(
            f"pcap global header needs {PCAP_GLOBAL_HEADER_LEN} bytes, "
            f"got {len(data)}", offset=0
        )
    magic, = struct.unpack('<I', data[:4])
    if magic == _PCAPNG_MAGIC:
        raise UnsupportedFormat(
            "pcapng captures are not supported; convert to classic pcap "
            "(e.g. `editcap -F pcap in.pcapng out.pcap`)", offset=0
        )
    if magic not in _MAGICS:
        raise BadMagic(f"unknown pcap magic 0x{magic:08x}", offset=0)
    order, nano = _MAGICS[magic]
    (_, major, minor, thiszone, sigfigs,
     snaplen, linktype) = struct.unpack(order + 'IHHiIII', data[:24])
    return PcapHeader(
        magic=magic,
        version=(major, minor),
        thiszone=thiszone,
        sigfigs=sigfigs,
        snaplen=snaplen,
        linktype=linktype,
        nanosecond=nano,
        byte_order=order,
    )


def read_pcap(
        data: bytes,
        stats: Optional[CaptureStats] = None
) -> Iterator[RawFrame]:
    """Yield the frames of a classic pcap file in file order."""
    header = parse_global_header(data)
    record_fmt = header.byte_order + 'IIII'
    divisor = 1e9 if header.nanosecond else 1e6
    offset = PCAP_GLOBAL_HEADER_LEN
    index = 0
    while offset < len(data):
        if offset + PCAP_PACKET_HEADER_LEN > len(data):
            _truncated_tail(stats, offset, len(data) - offset)
            return
        ts_sec, ts_frac, incl_len, orig_len = struct.unpack_from(
            record_fmt, data, offset
        )
        start = offset + PCAP_PACKET_HEADER_LEN
        if start + incl_len > len(data):
            _truncated_tail(stats, offset, len(data) - offset)
            return
        if stats is not None:
            stats.frames += 1
        yield RawFrame(
            data=data[start:start + incl_len],
            ts=ts_sec + ts_frac / divisor,
            linktype=header.linktype,
            wire_len=max(orig_len, incl_len),
            index=index,
            offset=offset,
        )
        offset = start + incl_len
        index += 1


def _truncated_tail(stats, offset, remaining):
    logger.warning(
        "Truncated trailing pcap record at byte offset %d (%d bytes left)",
        offset, remaining
    )
    if stats is not None:
        stats.truncated_tail += 1


def decode_frame(
        raw_frame: bytes,
        linktype: int,
        *,
        ts: float = 0.0,
        wire_len: Optional[int] = None,
        index: int = 0,
        stats: Optional[CaptureStats] = None
) -> Optional[PacketRecord]:
    """Decode one link-layer frame into a TCP `PacketRecord`.

    Returns None for anything that is not TCP over IP. Raises
    `MalformedFrame` when a declared header does not fit in the frame.
    """
    if linktype == LinkType.ETHERNET:
        ethertype, l3 = _strip_ethernet(raw_frame)
    elif linktype == LinkType.RAW:
        if not raw_frame:
            raise MalformedFrame("empty raw-IP frame")
        version = raw_frame[0] >> 4
        ethertype = {4: EtherType.IPV4, 6: EtherType.IPV6}.get(version, -1)
        l3 = 0
    else:
        raise UnsupportedLinkType(
            f"linktype {linktype} is not supported "
            f"(expected {LinkType.ETHERNET.value} or {LinkType.RAW.value})"
        )

    if ethertype == EtherType.IPV4:
        parsed = _decode_ipv4(raw_frame, l3, stats)
    elif ethertype == EtherType.IPV6:
        parsed = _decode_ipv6(raw_frame, l3, stats)
    else:
        if stats is not None:
            stats.non_ip += 1
        return None
    if parsed is None:
        return None

    src_ip, dst_ip, l4, l4_end = parsed
    if l4 + TCP_MIN_HEADER_LEN > len(raw_frame):
        raise MalformedFrame("frame shorter than TCP header")
    (src_port, dst_port, seq, _ack,
     offset_byte, flags, window) = struct.unpack_from(
        '!HHIIBBH', raw_frame, l4
    )
    data_offset = (offset_byte >> 4) * 4
    if data_offset < TCP_MIN_HEADER_LEN or l4 + data_offset > len(raw_frame):
        raise MalformedFrame(f"bad TCP data offset {data_offset}")
    payload = raw_frame[l4 + data_offset:max(l4 + data_offset, l4_end)]

    if stats is not None:
        stats.tcp_packets += 1
    return PacketRecord(
        ts=ts,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        protocol=IpProto.TCP,
        tcp_flags=TcpFlag(flags & 0x3f),
        payload=payload,
        wire_len=max(wire_len if wire_len is not None else 0,
                     len(raw_frame)),
        seq=seq,
        window=window,
        index=index,
    )


def _strip_ethernet(frame: bytes) -> Tuple[int, int]:
    if len(frame) < ETHERNET_HEADER_LEN:
        raise MalformedFrame("frame shorter than Ethernet header")
    ethertype, = struct.unpack_from('!H', frame, 12)
    offset = ETHERNET_HEADER_LEN
    depth = 0
    while ethertype in (EtherType.VLAN, EtherType.QINQ):
        depth += 1
        if depth > MAX_VLAN_DEPTH:
            raise MalformedFrame(f"more than {MAX_VLAN_DEPTH} VLAN tags")
        if offset + VLAN_TAG_LEN > len(frame):
            raise MalformedFrame("truncated VLAN tag")
        ethertype, = struct.unpack_from('!H', frame, offset + 2)
        offset += VLAN_TAG_LEN
    return ethertype, offset


def _decode_ipv4(frame, l3, stats):
    if l3 + IPV4_MIN_HEADER_LEN > len(frame):
        raise MalformedFrame("frame shorter than IPv4 header")
    ihl = (frame[l3] & 0x0f) * 4
    if ihl < IPV4_MIN_HEADER_LEN or l3 + ihl > len(frame):
        raise MalformedFrame(f"bad IPv4 header length {ihl}")
    total_length, = struct.unpack_from('!H', frame, l3 + 2)
    frag, = struct.unpack_from('!H', frame, l3 + 6)
    proto = frame[l3 + 9]
    if proto != IpProto.TCP:
        if stats is not None:
            stats.non_tcp += 1
        return None
    if frag & 0x1fff:
        # non-first fragment
        if stats is not None:
            stats.fragments_dropped += 1
        return None
    src = str(ipaddress.IPv4Address(frame[l3 + 12:l3 + 16]))
    dst = str(ipaddress.IPv4Address(frame[l3 + 16:l3 + 20]))
    # total_length bounds the payload (strips Ethernet padding); snaplen
    # truncation leaves it shorter than declared.
    end = min(l3 + max(total_length, ihl), len(frame))
    return src, dst, l3 + ihl, end


def _decode_ipv6(frame, l3, stats):
    if l3 + IPV6_HEADER_LEN > len(frame):
        raise MalformedFrame("frame shorter than IPv6 header")
    payload_length, = struct.unpack_from('!H', frame, l3 + 4)
    next_header = frame[l3 + 6]
    src = str(ipaddress.IPv6Address(frame[l3 + 8:l3 + 24]))
    dst = str(ipaddress.IPv6Address(frame[l3 + 24:l3 + 40]))
    end = min(l3 + IPV6_HEADER_LEN + payload_length, len(frame))
    offset = l3 + IPV6_HEADER_LEN
    while next_header in _IPV6_EXTENSIONS or next_header == IpProto.IPV6_FRAG:
        if offset + 8 > len(frame):
            raise MalformedFrame("truncated IPv6 extension header")
        if next_header == IpProto.IPV6_FRAG:
            frag, = struct.unpack_from('!H', frame, offset + 2)
            if frag >> 3:
                if stats is not None:
                    stats.fragments_dropped += 1
                return None
            ext_len = 8
        else:
            ext_len = (frame[offset + 1] + 1) * 8
        next_header = frame[offset]
        offset += ext_len
    if next_header != IpProto.TCP:
        if stats is not None:
            stats.non_tcp += 1
        return None
    if offset > len(frame):
        raise MalformedFrame("IPv6 extension headers overrun the frame")
    return src, dst, offset, end


def read_packets(
        data: bytes,
        stats: Optional[CaptureStats] = None,
        source: str = "<bytes>"
) -> List[PacketRecord]:
    """Parse a pcap and decode every frame, counting what was skipped."""
    stats = stats if stats is not None else CaptureStats()
    packets = []
    for frame in read_pcap(data, stats):
        try:
            record = decode_frame(
                frame.data, frame.linktype, ts=frame.ts,
                wire_len=frame.wire_len, index=frame.index, stats=stats
            )
        except MalformedFrame as e:
            stats.malformed += 1
            logger.warning(
                "%s: malformed frame %d at byte offset %d: %s",
                source, frame.index, frame.offset, e
            )
            continue
        if record is not None:
            packets.append(record)
    return packets


def read_pcap_file(
        path: PathLike,
        stats: Optional[CaptureStats] = None
) -> List[PacketRecord]:
    path = Path(path)
    return read_packets(path.read_bytes(), stats, source=str(path))
