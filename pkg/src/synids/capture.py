"""Packet capture ingest: classic capture files, JSONL metadata, sessions, features.

Timestamps are integer microseconds throughout. Session identifiers are
64-bit hashes of the direction-normalized 5-tuple, so the same flow hashes
identically no matter which side sent the first packet.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import struct
import sys
from dataclasses import dataclass
from typing import BinaryIO, Iterable, List, Optional, Sequence, TextIO, Union

import numpy as np

from .errors import FileError, LineParseError, MalformedHeader, TruncatedRecord

log = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
_MAGICS = (struct.pack("<I", PCAP_MAGIC), struct.pack(">I", PCAP_MAGIC))
LINKTYPE_ETHERNET = 1
ETHERTYPE_IPV4 = 0x0800

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

INBOUND = 0
OUTBOUND = 1

FEATURE_DIM = 10
DEFAULT_IDLE_TIMEOUT_US = 60_000_000

_U16 = 0xFFFF
_U32 = 0xFFFFFFFF
_U64 = 0xFFFFFFFFFFFFFFFF

FIELDS = (
    "session_id",
    "timestamp",
    "direction",
    "src_addr",
    "dst_addr",
    "src_port",
    "dst_port",
    "size_bytes",
    "protocol",
    "tcp_flags",
    "tcp_tsval",
    "payload_len",
)

_LIMITS = {
    "session_id": _U64,
    "direction": 1,
    "src_addr": _U32,
    "dst_addr": _U32,
    "src_port": _U16,
    "dst_port": _U16,
    "size_bytes": _U16,
    "protocol": 0xFF,
    "tcp_flags": 0xFF,
    "tcp_tsval": _U32,
    "payload_len": _U16,
}


@dataclass(frozen=True)
class PacketMeta:
    session_id: int
    timestamp: int
    direction: int
    src_addr: int
    dst_addr: int
    src_port: int
    dst_port: int
    size_bytes: int
    protocol: int
    tcp_flags: int
    tcp_tsval: int
    payload_len: int

    def __post_init__(self):
        for name in FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ValueError(f"{name} must be an integer, got {value!r}")
            limit = _LIMITS.get(name)
            if limit is not None and not 0 <= value <= limit:
                raise ValueError(f"{name}={value} out of range [0, {limit}]")
        if self.payload_len > self.size_bytes:
            raise ValueError(
                f"payload_len {self.payload_len} exceeds size_bytes {self.size_bytes}"
            )

    def to_dict(self) -> dict:
        return {name: int(getattr(self, name)) for name in FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass
class Session:
    session_id: int
    packets: List[PacketMeta]

    @property
    def first_seen(self) -> int:
        return self.packets[0].timestamp

    @property
    def last_seen(self) -> int:
        return self.packets[-1].timestamp


@dataclass
class CaptureStats:
    records: int = 0
    parsed: int = 0
    skipped: int = 0
    linktype: Optional[int] = None


# --------------------------------------------------------------------------
# session keys


def infer_direction(src_addr: int, src_port: int, dst_addr: int, dst_port: int) -> int:
    """Packets travelling toward the lower (service) port are inbound.

    Capture files carry no notion of direction, so both the parser and the
    traffic generator derive it from the endpoints with this one rule.
    """
    return OUTBOUND if (src_port, src_addr) < (dst_port, dst_addr) else INBOUND


def flow_key(protocol: int, src_addr: int, src_port: int, dst_addr: int, dst_port: int):
    a = (src_addr, src_port)
    b = (dst_addr, dst_port)
    lo, hi = (a, b) if a <= b else (b, a)
    return (protocol, lo[0], lo[1], hi[0], hi[1])


def flow_hash(protocol, src_addr, src_port, dst_addr, dst_port, segment: int = 0) -> int:
    """64-bit id of a bidirectional flow; ``segment`` numbers idle-timeout splits."""
    key = flow_key(protocol, src_addr, src_port, dst_addr, dst_port)
    raw = struct.pack("<BIHIHI", *key, segment)
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")


def packet_flow_hash(p: PacketMeta, segment: int = 0) -> int:
    return flow_hash(p.protocol, p.src_addr, p.src_port, p.dst_addr, p.dst_port, segment)


# --------------------------------------------------------------------------
# classic capture format


def _read_all(source: Union[bytes, bytearray, memoryview, BinaryIO]) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    return source.read()


def parse_capture(
    source: Union[bytes, BinaryIO], stats: Optional[CaptureStats] = None
) -> List[PacketMeta]:
    """Parse a classic capture file into packet metadata records.

    Non-IPv4 frames, other transport protocols and non-Ethernet link types are
    skipped and counted in ``stats``. A record running past the end of the
    data raises :class:`TruncatedRecord` carrying the packets parsed so far.
    """
    data = _read_all(source)
    stats = stats if stats is not None else CaptureStats()
    if len(data) < 24:
        raise MalformedHeader(f"capture header needs 24 bytes, got {len(data)}")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le == PCAP_MAGIC:
        endian = "<"
    elif magic_le == 0xD4C3B2A1:
        endian = ">"
    else:
        raise MalformedHeader(f"bad capture magic 0x{magic_le:08x}")
    _, _, _, _, _, linktype = struct.unpack_from(endian + "HHiIII", data, 4)
    stats.linktype = linktype
    if linktype != LINKTYPE_ETHERNET:
        log.warning("unsupported link type %d, all records skipped", linktype)

    rec_hdr = struct.Struct(endian + "IIII")
    packets: List[PacketMeta] = []
    offset = 24
    while offset < len(data):
        if len(data) - offset < rec_hdr.size:
            raise TruncatedRecord(
                f"record header at offset {offset} truncated", packets
            )
        ts_sec, ts_usec, incl_len, orig_len = rec_hdr.unpack_from(data, offset)
        offset += rec_hdr.size
        if incl_len > len(data) - offset:
            raise TruncatedRecord(
                f"record at offset {offset - rec_hdr.size} claims {incl_len} bytes, "
                f"{len(data) - offset} remain",
                packets,
            )
        frame = data[offset : offset + incl_len]
        offset += incl_len
        stats.records += 1
        if linktype != LINKTYPE_ETHERNET:
            stats.skipped += 1
            continue
        meta = _decode_ethernet(frame, ts_sec * 1_000_000 + ts_usec, orig_len)
        if meta is None:
            stats.skipped += 1
            continue
        packets.append(meta)
        stats.parsed += 1
    return packets


def _decode_ethernet(frame: bytes, timestamp: int, orig_len: int) -> Optional[PacketMeta]:
    if len(frame) < 14 + 20:
        return None
    if struct.unpack_from("!H", frame, 12)[0] != ETHERTYPE_IPV4:
        return None
    ip = 14
    ver_ihl = frame[ip]
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or len(frame) < ip + ihl:
        return None
    total_len = struct.unpack_from("!H", frame, ip + 2)[0]
    proto = frame[ip + 9]
    src_addr, dst_addr = struct.unpack_from("!II", frame, ip + 12)
    l4 = ip + ihl
    src_port = dst_port = flags = tsval = 0
    if proto == PROTO_TCP:
        if len(frame) < l4 + 20:
            return None
        src_port, dst_port = struct.unpack_from("!HH", frame, l4)
        hdr_len = (frame[l4 + 12] >> 4) * 4
        flags = frame[l4 + 13]
        tsval = _tcp_tsval(frame[l4 + 20 : l4 + hdr_len])
    elif proto == PROTO_UDP:
        if len(frame) < l4 + 8:
            return None
        src_port, dst_port = struct.unpack_from("!HH", frame, l4)
        hdr_len = 8
    elif proto == PROTO_ICMP:
        hdr_len = 8
    else:
        return None
    size = min(orig_len, _U16)
    payload = max(0, total_len - ihl - hdr_len)
    payload = min(payload, size)
    return PacketMeta(
        session_id=flow_hash(proto, src_addr, src_port, dst_addr, dst_port),
        timestamp=timestamp,
        direction=infer_direction(src_addr, src_port, dst_addr, dst_port),
        src_addr=src_addr,
        dst_addr=dst_addr,
        src_port=src_port,
        dst_port=dst_port,
        size_bytes=size,
        protocol=proto,
        tcp_flags=flags,
        tcp_tsval=tsval,
        payload_len=payload,
    )


def _tcp_tsval(options: bytes) -> int:
    i = 0
    while i < len(options):
        kind = options[i]
        if kind == 0:
            break
        if kind == 1:
            i += 1
            continue
        if i + 1 >= len(options):
            break
        length = options[i + 1]
        if length < 2:
            break
        if kind == 8 and length == 10 and i + 10 <= len(options):
            return struct.unpack_from("!I", options, i + 2)[0]
        i += length
    return 0


# --------------------------------------------------------------------------
# JSONL metadata


def parse_metadata_jsonl(
    stream: Union[str, TextIO, Iterable[str]],
    errors: Optional[List[LineParseError]] = None,
) -> List[PacketMeta]:
    """Read one PacketMeta per JSON line.

    Bad lines are skipped; each one is appended to ``errors`` when given,
    otherwise logged.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records = []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not a JSON object")
            missing = [name for name in FIELDS if name not in obj]
            if missing:
                raise ValueError(f"missing fields: {', '.join(missing)}")
            records.append(PacketMeta(**{name: obj[name] for name in FIELDS}))
        except (ValueError, TypeError) as exc:
            err = LineParseError(line_no, str(exc))
            if errors is not None:
                errors.append(err)
            else:
                log.warning("%s", err)
    return records


def write_metadata_jsonl(packets: Iterable[PacketMeta], stream: TextIO) -> None:
    for p in packets:
        stream.write(p.to_json())
        stream.write("\n")


# --------------------------------------------------------------------------
# sessions


def group_sessions(
    packets: Sequence[PacketMeta], idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US
) -> List[Session]:
    """Partition packets into bidirectional sessions.

    Packets of one flow are ordered by timestamp (stable on input order) and
    split wherever two consecutive packets are more than ``idle_timeout_us``
    apart. The first segment of a flow keeps the plain flow hash as its id;
    later segments get the hash salted with their segment number, and their
    packets are re-stamped with it.
    """
    flows = {}
    for idx, p in enumerate(packets):
        key = flow_key(p.protocol, p.src_addr, p.src_port, p.dst_addr, p.dst_port)
        flows.setdefault(key, []).append((p.timestamp, idx, p))

    sessions = []
    for members in flows.values():
        members.sort(key=lambda item: (item[0], item[1]))
        segment = 0
        current = [members[0][2]]
        for _, _, p in members[1:]:
            if p.timestamp - current[-1].timestamp > idle_timeout_us:
                sessions.append(_make_session(current, segment))
                segment += 1
                current = []
            current.append(p)
        sessions.append(_make_session(current, segment))
    sessions.sort(key=lambda s: (s.first_seen, s.session_id))
    return sessions


def _make_session(packets: List[PacketMeta], segment: int) -> Session:
    sid = packet_flow_hash(packets[0], segment)
    packets = [p if p.session_id == sid else dataclasses.replace(p, session_id=sid) for p in packets]
    return Session(sid, packets)


# --------------------------------------------------------------------------
# features


def featurize(p: PacketMeta) -> np.ndarray:
    """Map one packet onto the unit hypercube, 10 components."""
    return np.array(
        [
            float(p.direction),
            p.src_addr / 2.0**32,
            p.dst_addr / 2.0**32,
            p.src_port / 65535.0,
            p.dst_port / 65535.0,
            min(p.size_bytes, 1514) / 1514.0,
            p.protocol / 255.0,
            p.tcp_flags / 255.0,
            (p.tcp_tsval % 2**20) / 2.0**20,
            min(p.payload_len, 1460) / 1460.0,
        ],
        dtype=np.float64,
    )


def featurize_many(packets: Sequence[PacketMeta]) -> np.ndarray:
    """Vectorized :func:`featurize`; returns an ``(len(packets), 10)`` array."""
    if not packets:
        return np.zeros((0, FEATURE_DIM))
    raw = np.array([[getattr(p, name) for name in FIELDS[2:]] for p in packets], dtype=np.int64)
    direction, src, dst, sport, dport, size, proto, flags, tsval, payload = raw.T
    out = np.empty((len(packets), FEATURE_DIM))
    out[:, 0] = direction
    out[:, 1] = src / 2.0**32
    out[:, 2] = dst / 2.0**32
    out[:, 3] = sport / 65535.0
    out[:, 4] = dport / 65535.0
    out[:, 5] = np.minimum(size, 1514) / 1514.0
    out[:, 6] = proto / 255.0
    out[:, 7] = flags / 255.0
    out[:, 8] = (tsval % 2**20) / 2.0**20
    out[:, 9] = np.minimum(payload, 1460) / 1460.0
    return out


def read_packets(path: str, errors: Optional[list] = None) -> List[PacketMeta]:
    """Load packets from a capture file or a ``.jsonl`` metadata file.

    ``-`` reads standard input; the format is then told apart by the
    leading magic number.
    """
    if str(path) == "-":
        data = sys.stdin.buffer.read()
        if data[:4] in _MAGICS:
            return parse_capture(data)
        return parse_metadata_jsonl(io.StringIO(data.decode("utf-8")), errors)
    try:
        if str(path).endswith(".jsonl"):
            with open(path, encoding="utf-8") as fh:
                return parse_metadata_jsonl(fh, errors)
        with open(path, "rb") as fh:
            return parse_capture(fh)
    except OSError as exc:
        raise FileError(f"cannot read {path}: {exc}") from exc
