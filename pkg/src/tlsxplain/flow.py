"""Bidirectional flow assembly, windowing and the flow filters."""
from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Sequence, Tuple

from .objects import BiFlow, Endpoint, FlowKey, PacketRecord
from .types import ContentType, TcpFlag

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_SECONDS = 1800.0

_TLS_CONTENT_TYPES = {int(t) for t in ContentType}


@dataclass
class FlowStats:
    """Flows and packets seen/kept/discarded, per discard reason."""

    tcp_packets: int = 0
    flows: int = 0
    kept_flows: int = 0
    kept_packets: int = 0
    discarded_flows: Dict[str, int] = field(default_factory=dict)
    discarded_packets: Dict[str, int] = field(default_factory=dict)

    def discard(self, reason: str, flow: BiFlow) -> None:
        self.discarded_flows[reason] = self.discarded_flows.get(reason, 0) + 1
        self.discarded_packets[reason] = \
            self.discarded_packets.get(reason, 0) + flow.n_packets

    @property
    def total_discarded_packets(self) -> int:
        return sum(self.discarded_packets.values())

    def merge(self, other: FlowStats) -> None:
        self.tcp_packets += other.tcp_packets
        self.flows += other.flows
        self.kept_flows += other.kept_flows
        self.kept_packets += other.kept_packets
        for reason, n in other.discarded_flows.items():
            self.discarded_flows[reason] = \
                self.discarded_flows.get(reason, 0) + n
        for reason, n in other.discarded_packets.items():
            self.discarded_packets[reason] = \
                self.discarded_packets.get(reason, 0) + n


def window_split(
        flow_packets: Sequence[PacketRecord],
        window_seconds: float = DEFAULT_WINDOW_SECONDS
) -> List[List[PacketRecord]]:
    """Partition time-sorted packets into half-open windows.

    Window g holds packets with ts in [t0 + g*W, t0 + (g+1)*W) where t0
    is the first timestamp. Empty windows are not emitted.
    """
    if not flow_packets:
        return []
    t0 = flow_packets[0].ts
    groups: Dict[int, List[PacketRecord]] = OrderedDict()
    for pkt in flow_packets:
        g = _window_index(pkt.ts, t0, window_seconds)
        groups.setdefault(g, []).append(pkt)
    return list(groups.values())


def _window_index(ts: float, t0: float, window_seconds: float) -> int:
    return int(math.floor((ts - t0) / window_seconds))


def _initiator(packets: Sequence[PacketRecord]) -> Endpoint:
    for pkt in packets:
        if pkt.has(TcpFlag.SYN) and not pkt.has(TcpFlag.ACK):
            return pkt.src
    return packets[0].src


def assemble_flows(
        packets: Iterable[PacketRecord],
        window_seconds: float = DEFAULT_WINDOW_SECONDS,
        source: str = ""
) -> List[BiFlow]:
    """Group TCP packets into one `BiFlow` per (5-tuple, window)."""
    by_key: Dict[FlowKey, List[PacketRecord]] = OrderedDict()
    for pkt in packets:
        by_key.setdefault(FlowKey.for_packet(pkt), []).append(pkt)

    flows = []
    for key, key_packets in by_key.items():
        key_packets.sort(key=lambda p: (p.ts, p.index))
        initiator = _initiator(key_packets)
        t0 = key_packets[0].ts
        handshake = None
        for group in window_split(key_packets, window_seconds):
            g = _window_index(group[0].ts, t0, window_seconds)
            start = t0 + g * window_seconds
            fwd = tuple(p for p in group if p.src == initiator)
            bwd = tuple(p for p in group if p.src != initiator)
            if handshake is None:
                # the first window decides; later windows inherit
                handshake = three_way_handshake(fwd, bwd)
            flows.append(BiFlow(
                key=key,
                initiator=initiator,
                fwd_packets=fwd,
                bwd_packets=bwd,
                window_start=start,
                window_end=start + window_seconds,
                window_index=g,
                handshake_complete=handshake,
                source=source,
            ))
    return flows


def three_way_handshake(
        fwd: Sequence[PacketRecord],
        bwd: Sequence[PacketRecord]
) -> bool:
    """SYN (fwd), then SYN+ACK (bwd), then ACK (fwd), in time order."""
    stage = 0
    merged = sorted(
        [(p, True) for p in fwd] + [(p, False) for p in bwd],
        key=lambda item: (item[0].ts, item[0].index)
    )
    for pkt, is_fwd in merged:
        syn, ack = pkt.has(TcpFlag.SYN), pkt.has(TcpFlag.ACK)
        if stage == 0 and is_fwd and syn and not ack:
            stage = 1
        elif stage == 1 and not is_fwd and syn and ack:
            stage = 2
        elif stage == 2 and is_fwd and ack and not syn:
            return True
    return False


def filter_handshake(flow: BiFlow) -> bool:
    if flow.handshake_complete is not None:
        return flow.handshake_complete
    return three_way_handshake(flow.fwd_packets, flow.bwd_packets)


def looks_like_tls_record(payload: bytes) -> bool:
    """Content type 20..23 followed by legacy version major byte 3."""
    return (len(payload) >= 5
            and payload[0] in _TLS_CONTENT_TYPES
            and payload[1] == 3)


def filter_encrypted(flow: BiFlow) -> bool:
    for pkt in flow.fwd_packets + flow.bwd_packets:
        if looks_like_tls_record(pkt.payload):
            return True
    return False


def process_packets(
        packets: Sequence[PacketRecord],
        window_seconds: float = DEFAULT_WINDOW_SECONDS,
        source: str = ""
) -> Tuple[List[BiFlow], FlowStats]:
    """Assemble flows and keep complete, encrypted ones."""
    stats = FlowStats(tcp_packets=len(packets))
    kept = []
    for flow in assemble_flows(packets, window_seconds, source):
        stats.flows += 1
        if not filter_handshake(flow):
            stats.discard("no_handshake", flow)
            continue
        if not filter_encrypted(flow):
            stats.discard("not_encrypted", flow)
            continue
        kept.append(replace(flow, handshake_complete=True, encrypted=True))
        stats.kept_flows += 1
        stats.kept_packets += flow.n_packets

    for reason, n in stats.discarded_flows.items():
        logger.info("%s: discarded %d flow(s): %s", source or "capture",
                    n, reason)
    return kept, stats


def flow_debug_record(flow: BiFlow) -> Dict[str, object]:
    flags = 0
    for pkt in flow.fwd_packets + flow.bwd_packets:
        flags |= int(pkt.tcp_flags)
    return {
        "key": str(flow.key),
        "initiator": f"{flow.initiator[0]}:{flow.initiator[1]}",
        "n_fwd": len(flow.fwd_packets),
        "n_bwd": len(flow.bwd_packets),
        "window_start": flow.window_start,
        "flags": [f.name for f in TcpFlag if flags & f],
    }


def dump_flows_jsonl(flows: Iterable[BiFlow]) -> str:
    return "".join(
        json.dumps(flow_debug_record(f), sort_keys=True) + "\n"
        for f in flows
    )
