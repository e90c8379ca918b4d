"""Crafted packets and captures shared by the tests."""
from datetime import datetime, timezone

from tlsxplain import craft
from tlsxplain.objects import PacketRecord
from tlsxplain.types import ContentType, TcpFlag, TlsVersion

CLIENT = ("10.0.0.1", 50000)
SERVER = ("10.0.0.2", 443)

NOT_BEFORE = datetime(2020, 1, 1, tzinfo=timezone.utc)
NOT_AFTER = datetime(2021, 1, 1, tzinfo=timezone.utc)  # 366 days

HTTP_GET = b"GET / HTTP/1.1\r\nHost: example.test\r\n\r\n"


def pkt(ts, src=CLIENT, dst=SERVER, flags=TcpFlag.ACK, payload=b"",
        index=0, seq=0, window=65535):
    return PacketRecord(
        ts=ts, src_ip=src[0], dst_ip=dst[0], src_port=src[1],
        dst_port=dst[1], tcp_flags=TcpFlag(flags), payload=payload,
        seq=seq, window=window, index=index,
    )


def app_data(size):
    return craft.tls_record(ContentType.APPLICATION_DATA, bytes(size - 5))


def golden_client_hello():
    """74-byte record: two suites, SNI "a.test" and renegotiation_info."""
    hello = craft.client_hello(
        [0xc02f, 0x002f],
        [craft.sni_extension("a.test"), craft.extension(0xff01, b"\x00")],
    )
    return craft.tls_record(ContentType.HANDSHAKE, hello, TlsVersion.TLS_1_0)


def golden_server_flight():
    cert = craft.certificate(NOT_BEFORE, NOT_AFTER, issuer="Example CA",
                             subject="a.test")
    messages = (craft.server_hello(0xc02f, [])
                + craft.certificate_message([cert])
                + craft.server_hello_done())
    return craft.tls_record(ContentType.HANDSHAKE, messages)


SERVER_FLIGHT_LEN = len(golden_server_flight())


def golden_conversation(client=CLIENT, server=SERVER, start=0.0):
    """SYN 0, SYN+ACK .01, ACK .02, hello .03, server flight .05,
    100 bytes up at .3, 400 bytes down at .5."""
    conv = craft.Conversation(client=client, server=server)
    conv.handshake(start, rtt=0.02)
    conv.send(True, golden_client_hello(), start + 0.03)
    conv.send(False, golden_server_flight(), start + 0.05)
    conv.send(True, app_data(100), start + 0.3)
    conv.send(False, app_data(400), start + 0.5)
    return conv


def plaintext_conversation(client=("10.0.0.3", 40000),
                           server=("10.0.0.2", 80), start=0.0):
    conv = craft.Conversation(client=client, server=server)
    conv.handshake(start)
    conv.send(True, HTTP_GET, start + 0.05)
    conv.send(False, b"HTTP/1.1 200 OK\r\n\r\nhello", start + 0.08)
    conv.close(start + 0.1)
    return conv


def golden_capture_bytes():
    """Two TLS connections and one plaintext one."""
    conversations = [
        golden_conversation(),
        golden_conversation(client=("10.0.0.1", 50001),
                            server=("10.0.0.9", 8443), start=1.0),
        plaintext_conversation(start=0.5),
    ]
    return craft.capture_bytes(craft.merge_conversations(conversations))


def _std(values):
    mean = sum(values) / len(values)
    return (sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5


# Hand-derived features of `golden_conversation()`. Payload sizes:
# fwd 0, 0, 74, 100 at 0, .02, .03, .3; bwd 0, F, 400 at .01, .05, .5.
_F = SERVER_FLIGHT_LEN
_ALL_SIZES = [0, 0, 0, 74, _F, 100, 400]

GOLDEN_FEATURES = {
    "bytes_in": 174.0,
    "bytes_out": _F + 400.0,
    "num_pkts_in": 4.0,
    "num_pkts_out": 3.0,
    "duration": 0.5,
    "dst_port": 443.0,
    "Init_Fwd_Win_Bytes": 64240.0,
    "Init_Bwd_Win_Bytes": 65535.0,
    "fwd_present": 1.0,
    "bwd_present": 1.0,
    "Fwd_Pkt_Len_Min": 0.0,
    "Fwd_Pkt_Len_Max": 100.0,
    "Fwd_Pkt_Len_Mean": 43.5,
    "Fwd_Pkt_Len_Std": 1976.75 ** 0.5,
    "Bwd_Pkt_Len_Min": 0.0,
    "Max_Bpckt": max(_F, 400.0),
    "Bwd_Pkt_Len_Mean": (_F + 400.0) / 3,
    "Bwd_Pkt_Len_Std": _std([0, _F, 400]),
    "Pkt_Len_Min": 0.0,
    "Pkt_Len_Max": max(_F, 400.0),
    "Pkt_Len_Mean": sum(_ALL_SIZES) / 7,
    "Pkt_Len_Std": _std(_ALL_SIZES),
    # forward gaps 20, 10, 270 ms; backward 40, 450; overall
    # 10, 10, 10, 20, 250, 200
    "Fwd_IAT_Min": 10.0,
    "Fwd_IAT_Max": 270.0,
    "Mean_f_inter": 100.0,
    "Fwd_IAT_Std": _std([20, 10, 270]),
    "Bwd_IAT_Min": 40.0,
    "Bwd_IAT_Max": 450.0,
    "Mean_b_inter": 245.0,
    "Bwd_IAT_Std": 205.0,
    "Flow_IAT_Min": 10.0,
    "Flow_IAT_Max": 250.0,
    "Flow_IAT_Mean": 500.0 / 6,
    "Flow_IAT_Std": _std([10, 10, 10, 20, 250, 200]),
    "fwd_iat_present": 1.0,
    "bwd_iat_present": 1.0,
    "flow_iat_present": 1.0,
    # gap states 0 0 0 0 1 1
    "iat_s0_0": 0.75,
    "iat_s0_1": 0.25,
    "iat_s1_1": 1.0,
    "tls_parsed": 1.0,
    "num_offered_ciphers": 2.0,
    "num_client_exts": 2.0,
    "cipher_mismatch": 0.0,
    "offered_0xc02f": 1.0,
    "offered_0x002f": 1.0,
    "selected_0xc02f": 1.0,
    "ext_0x0000": 1.0,
    "ext_0xff01": 1.0,
    "version_0x0303": 1.0,
    "certValidDays": 366.0,
    "cert_present": 1.0,
    "cert_self_signed": 0.0,
}


def _transitions(prefix, states, n_states=3):
    counts = {}
    for a, b in zip(states, states[1:]):
        counts[a, b] = counts.get((a, b), 0) + 1
    out = {}
    for (a, b), n in counts.items():
        row = sum(v for (i, _), v in counts.items() if i == a)
        out[f"{prefix}_s{a}_{b}"] = n / row
    return out


# sizes 0 0 0 74 F 100 400 with 150-byte bins
GOLDEN_FEATURES.update(_transitions(
    "size", [0, 0, 0, 0, min(_F // 150, 2), 0, 2]
))
