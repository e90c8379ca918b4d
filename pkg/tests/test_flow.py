import json

from hypothesis import given, strategies as st

from tlsxplain import craft
from tlsxplain.capture import read_packets
from tlsxplain.flow import (
    assemble_flows,
    dump_flows_jsonl,
    filter_encrypted,
    looks_like_tls_record,
    process_packets,
    three_way_handshake,
    window_split,
)
from tlsxplain.objects import FlowKey
from tlsxplain.types import TcpFlag

from .examples import captures


def test_window_split_three_windows():
    packets = [captures.pkt(t) for t in (0.0, 1800.0, 3600.0)]

    groups = window_split(packets, 1800.0)

    assert [[p.ts for p in g] for g in groups] == [[0.0], [1800.0],
                                                   [3600.0]]


def test_window_split_is_half_open():
    packets = [captures.pkt(t) for t in (0.0, 1799.999, 1800.0)]

    groups = window_split(packets, 1800.0)

    assert [[p.ts for p in g] for g in groups] == [[0.0, 1799.999],
                                                   [1800.0]]


def test_window_split_one_group():
    packets = [captures.pkt(t) for t in (0.0, 10.0, 1799.0)]

    assert len(window_split(packets, 1800.0)) == 1


def test_window_split_empty():
    assert window_split([]) == []


def test_flow_key_is_canonical():
    a, b = ("10.0.0.2", 443), ("10.0.0.1", 50000)

    assert FlowKey.of(a, b) == FlowKey.of(b, a)
    assert str(FlowKey.of(a, b)) == "10.0.0.1:50000-10.0.0.2:443/6"


_endpoint = st.tuples(
    st.sampled_from(["10.0.0.1", "10.0.0.2", "192.168.1.9", "::1",
                     "2001:db8::1"]),
    st.integers(0, 65535),
)


@given(_endpoint, _endpoint)
def test_flow_key_ignores_direction(a, b):
    key = FlowKey.of(a, b)

    assert key == FlowKey.of(b, a)
    assert {key.ep_a, key.ep_b} == {a, b}


def test_both_directions_share_one_flow():
    conv = captures.golden_conversation()

    flows = assemble_flows(conv.packets)

    assert len(flows) == 1
    flow = flows[0]
    assert flow.initiator == captures.CLIENT
    assert flow.responder == captures.SERVER
    assert len(flow.fwd_packets) == 4
    assert len(flow.bwd_packets) == 3
    assert flow.handshake_complete is True


def test_windows_inherit_the_first_handshake():
    conv = captures.golden_conversation()
    conv.send(True, captures.app_data(50), 2000.0)

    flows = assemble_flows(conv.packets, window_seconds=1800.0,
                           source="cap")

    assert [f.window_index for f in flows] == [0, 1]
    assert flows[1].window_start == 1800.0
    assert flows[1].handshake_complete is True
    assert flows[1].flow_id == "cap#10.0.0.1:50000-10.0.0.2:443/6@1"


def test_initiator_is_the_syn_sender():
    conv = captures.golden_conversation()
    # server packet captured first
    packets = sorted(conv.packets, key=lambda p: p.src != captures.SERVER)

    flow = assemble_flows(packets)[0]

    assert flow.initiator == captures.CLIENT


def test_three_way_handshake_order_matters():
    syn = captures.pkt(0.0, flags=TcpFlag.SYN)
    synack = captures.pkt(0.01, src=captures.SERVER, dst=captures.CLIENT,
                          flags=TcpFlag.SYN | TcpFlag.ACK)
    ack = captures.pkt(0.02, flags=TcpFlag.ACK)
    early_ack = captures.pkt(0.005, flags=TcpFlag.ACK)

    assert three_way_handshake([syn, ack], [synack])
    assert not three_way_handshake([syn, early_ack], [synack])
    assert not three_way_handshake([syn, ack], [])


def test_tls_record_detection():
    assert looks_like_tls_record(captures.app_data(20))
    assert looks_like_tls_record(b"\x16\x03\x01\x00\x05")
    assert not looks_like_tls_record(captures.HTTP_GET)
    assert not looks_like_tls_record(b"\x17\x03")


def test_plaintext_flow_is_not_encrypted():
    flow = assemble_flows(captures.plaintext_conversation().packets)[0]

    assert not filter_encrypted(flow)


def test_process_packets_on_golden_capture():
    packets = read_packets(captures.golden_capture_bytes())

    flows, stats = process_packets(packets, source="golden")

    assert [f.key.ep_b[1] for f in flows] == [443, 8443]
    assert stats.flows == 3
    assert stats.kept_flows == 2
    assert stats.discarded_flows == {"not_encrypted": 1}
    assert stats.discarded_packets == {"not_encrypted": 8}
    assert stats.kept_packets + stats.total_discarded_packets == \
        stats.tcp_packets
    assert all(f.encrypted and f.handshake_complete for f in flows)


def test_missing_handshake_is_discarded():
    conv = captures.golden_conversation()
    # capture started after the SYN
    packets = conv.packets[1:]

    flows, stats = process_packets(packets)

    assert flows == []
    assert stats.discarded_flows == {"no_handshake": 1}


def test_dump_flows_jsonl():
    flows, _ = process_packets(captures.golden_conversation().packets)

    lines = dump_flows_jsonl(flows).splitlines()

    record = json.loads(lines[0])
    assert len(lines) == 1
    assert record["n_fwd"] == 4
    assert record["n_bwd"] == 3
    assert "SYN" in record["flags"]


def test_crafted_packets_round_trip_through_the_decoder():
    packets = captures.golden_conversation().packets

    decoded = read_packets(craft.capture_bytes(packets))

    assert [(p.src, p.dst, p.payload, p.seq, p.window, int(p.tcp_flags))
            for p in decoded] == \
        [(p.src, p.dst, p.payload, p.seq, p.window, int(p.tcp_flags))
         for p in packets]
