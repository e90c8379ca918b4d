import struct

import pytest

from tlsxplain import craft
from tlsxplain.capture import (
    CaptureStats,
    decode_frame,
    parse_global_header,
    read_packets,
    read_pcap,
    read_pcap_file,
)
from tlsxplain.errors import (
    BadMagic,
    CaptureError,
    MalformedFrame,
    TruncatedHeader,
    UnsupportedFormat,
    UnsupportedLinkType,
)
from tlsxplain.types import EtherType, IpProto, LinkType, TcpFlag


def _segment(payload=b"hello", **kwargs):
    return craft.tcp(50000, 443, payload, seq=7, flags=TcpFlag.ACK,
                     window=1024, **kwargs)


def test_hand_assembled_pcap():
    header = struct.pack('<IHHiIII', 0xa1b2c3d4, 2, 4, 0, 0, 65535, 1)
    record = struct.pack('<IIII', 100, 5, 60, 60) + bytes(range(60))

    frames = list(read_pcap(header + record))

    assert len(frames) == 1
    assert frames[0].ts == pytest.approx(100.000005, abs=1e-9)
    assert frames[0].data == bytes(range(60))
    assert frames[0].wire_len == 60
    assert frames[0].linktype == LinkType.ETHERNET


@pytest.mark.parametrize("nanosecond", [False, True])
@pytest.mark.parametrize("big_endian", [False, True])
def test_header_variants(nanosecond, big_endian):
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment()))
    data = craft.pcap_bytes([(12.25, frame)], nanosecond=nanosecond,
                            big_endian=big_endian)

    header = parse_global_header(data)
    frames = list(read_pcap(data))

    assert header.nanosecond is nanosecond
    assert header.byte_order == ('>' if big_endian else '<')
    assert frames[0].ts == pytest.approx(12.25)
    assert frames[0].data == frame


def test_bad_magic():
    with pytest.raises(BadMagic):
        parse_global_header(b"\x00" * 24)


def test_pcapng_is_rejected():
    data = struct.pack('<I', 0x0a0d0d0a) + bytes(28)

    with pytest.raises(UnsupportedFormat) as e:
        list(read_pcap(data))

    assert "pcapng" in str(e.value)


def test_short_global_header():
    with pytest.raises(TruncatedHeader):
        parse_global_header(b"\xd4\xc3\xb2\xa1")


def test_capture_errors_are_value_errors():
    assert issubclass(CaptureError, ValueError)


def test_truncated_tail_is_counted():
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment()))
    data = craft.pcap_bytes([(1.0, frame), (2.0, frame)])
    stats = CaptureStats()

    frames = list(read_pcap(data[:-10], stats))

    assert len(frames) == 1
    assert stats.frames == 1
    assert stats.truncated_tail == 1


def test_ipv4_options_are_skipped():
    packet = craft.ipv4("10.0.0.1", "10.0.0.2", _segment(b"payload"),
                        ihl_words=6)
    frame = craft.ethernet(packet)

    record = decode_frame(frame, LinkType.ETHERNET, ts=3.0)

    assert frame[14 + 24 + 20:] == b"payload"
    assert record.payload == b"payload"
    assert record.src == ("10.0.0.1", 50000)
    assert record.dst == ("10.0.0.2", 443)
    assert record.seq == 7
    assert record.window == 1024
    assert record.tcp_flags == TcpFlag.ACK
    assert record.ts == 3.0


def test_ethernet_padding_is_trimmed():
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment()))

    record = decode_frame(frame + bytes(12), LinkType.ETHERNET)

    assert record.payload == b"hello"


@pytest.mark.parametrize("tags", [[10], [10, 20]])
def test_vlan_tags(tags):
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment()),
                           vlan_tags=tags)

    assert decode_frame(frame, LinkType.ETHERNET).payload == b"hello"


def test_too_many_vlan_tags():
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment()),
                           vlan_tags=[1, 2, 3])

    with pytest.raises(MalformedFrame):
        decode_frame(frame, LinkType.ETHERNET)


def test_non_first_fragment_is_dropped():
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment(),
                                      fragment_offset=185))
    stats = CaptureStats()

    assert decode_frame(frame, LinkType.ETHERNET, stats=stats) is None
    assert stats.fragments_dropped == 1


def test_first_fragment_is_kept():
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment(),
                                      more_fragments=True))

    assert decode_frame(frame, LinkType.ETHERNET) is not None


def test_ipv6_with_extension_headers():
    packet = craft.ipv6(
        "2001:db8::1", "2001:db8::2", _segment(),
        extensions=[(IpProto.HOPOPT, bytes(4)),
                    (IpProto.IPV6_FRAG, craft.ipv6_fragment_header(0))],
    )
    frame = craft.ethernet(packet, EtherType.IPV6)

    record = decode_frame(frame, LinkType.ETHERNET)

    assert record.src_ip == "2001:db8::1"
    assert record.payload == b"hello"


def test_ipv6_trailing_fragment_is_dropped():
    packet = craft.ipv6(
        "2001:db8::1", "2001:db8::2", _segment(),
        extensions=[(IpProto.IPV6_FRAG, craft.ipv6_fragment_header(8))],
    )
    stats = CaptureStats()

    record = decode_frame(craft.ethernet(packet, EtherType.IPV6),
                          LinkType.ETHERNET, stats=stats)

    assert record is None
    assert stats.fragments_dropped == 1


def test_non_tcp_and_non_ip_are_counted():
    udp = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", bytes(8),
                                    proto=IpProto.UDP))
    arp = craft.ethernet(bytes(28), EtherType.ARP)
    stats = CaptureStats()

    assert decode_frame(udp, LinkType.ETHERNET, stats=stats) is None
    assert decode_frame(arp, LinkType.ETHERNET, stats=stats) is None
    assert stats.non_tcp == 1
    assert stats.non_ip == 1


def test_raw_ip_linktype():
    packet = craft.ipv4("10.0.0.1", "10.0.0.2", _segment())

    assert decode_frame(packet, LinkType.RAW).payload == b"hello"


def test_unsupported_linktype():
    with pytest.raises(UnsupportedLinkType):
        decode_frame(bytes(40), 113)


def test_bad_tcp_data_offset():
    segment = bytearray(_segment())
    segment[12] = 0x20  # 8-byte header
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2",
                                      bytes(segment)))

    with pytest.raises(MalformedFrame):
        decode_frame(frame, LinkType.ETHERNET)


def test_read_packets_skips_malformed_frames():
    good = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment()))
    data = craft.pcap_bytes([(1.0, good), (2.0, b"\x00" * 6), (3.0, good)])
    stats = CaptureStats()

    packets = read_packets(data, stats)

    assert [p.ts for p in packets] == [1.0, 3.0]
    assert [p.index for p in packets] == [0, 2]
    assert stats.frames == 3
    assert stats.malformed == 1
    assert stats.tcp_packets == 2


def test_read_pcap_file(tmp_path):
    path = tmp_path / "one.pcap"
    frame = craft.ethernet(craft.ipv4("10.0.0.1", "10.0.0.2", _segment()))
    path.write_bytes(craft.pcap_bytes([(5.5, frame)]))

    packets = read_pcap_file(path)

    assert len(packets) == 1
    assert packets[0].ts == 5.5


def test_stats_merge():
    a = CaptureStats(frames=2, tcp_packets=1, non_ip=1)
    b = CaptureStats(frames=3, malformed=1)

    a.merge(b)

    assert a == CaptureStats(frames=5, tcp_packets=1, non_ip=1, malformed=1)
