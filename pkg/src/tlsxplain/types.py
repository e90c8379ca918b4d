from enum import Enum, IntEnum, IntFlag


class LinkType(IntEnum):

    ETHERNET = 1
    RAW = 101


class EtherType(IntEnum):

    IPV4 = 0x0800
    ARP = 0x0806
    VLAN = 0x8100
    QINQ = 0x88A8
    IPV6 = 0x86DD


class IpProto(IntEnum):

    HOPOPT = 0
    TCP = 6
    UDP = 17
    IPV6_ROUTE = 43
    IPV6_FRAG = 44
    IPV6_OPTS = 60


class TcpFlag(IntFlag):

    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20


class ContentType(IntEnum):
    """TLS record layer content types."""

    CHANGE_CIPHER_SPEC = 20
    ALERT = 21
    HANDSHAKE = 22
    APPLICATION_DATA = 23


class HandshakeType(IntEnum):

    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    CERTIFICATE = 11


class TlsVersion(IntEnum):

    SSL_3_0 = 0x0300
    TLS_1_0 = 0x0301
    TLS_1_1 = 0x0302
    TLS_1_2 = 0x0303
    TLS_1_3 = 0x0304


class ExtensionType(IntEnum):

    SERVER_NAME = 0
    SUPPORTED_VERSIONS = 43


# Constants for the string values used in files and on the command line.
class FeatureGroup(str, Enum):

    META = "meta"
    LENGTH = "length"
    TIME = "time"
    MARKOV = "markov"
    TLS = "tls"
    CERT = "cert"


class ModelKind(str, Enum):

    FOREST = "forest-average"
    BOOSTED = "boosted-sum"
    EXTRA = "extra-average"

    @classmethod
    def from_alias(cls, name: str) -> "ModelKind":
        """Resolve the short command-line names (rf, xgb, extra)."""
        aliases = {
            "rf": cls.FOREST, "xgb": cls.BOOSTED, "extra": cls.EXTRA
        }
        if name in aliases:
            return aliases[name]
        return cls(name)

    @property
    def alias(self) -> str:
        return {
            ModelKind.FOREST: "rf",
            ModelKind.BOOSTED: "xgb",
            ModelKind.EXTRA: "extra",
        }[self]


class SplitRule(str, Enum):

    GINI = "gini"
    BOOSTED_GAIN = "boosted-gain"


class Label(IntEnum):

    NORMAL = 0
    MALWARE = 1


class Profile(str, Enum):

    NORMAL = "normal"
    MALWARE = "malware"

    @property
    def label(self) -> Label:
        return Label.MALWARE if self is Profile.MALWARE else Label.NORMAL


class Direction(str, Enum):

    PUSHES_MALWARE = "pushes-malware"
    PUSHES_NORMAL = "pushes-normal"
    NEUTRAL = "neutral"


class OutputSpace(str, Enum):

    MARGIN = "margin"
    PROBABILITY = "probability"
