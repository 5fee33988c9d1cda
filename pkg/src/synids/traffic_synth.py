"""Synthetic labeled traffic: background service mixes plus an HTTP GET flood.

Background sessions arrive as a Poisson process per profile, with log-normal
payload sizes and exponential packet gaps. The attack is a stream of short
TCP sessions (handshake, GET, response, FIN) against port 80; the number of
attack packets is fixed at rate x duration and their session starts are
uniform over the interval, i.e. a Poisson process conditioned on its count.
"""

from __future__ import annotations

import ipaddress
import logging
import math
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .capture import (
    PROTO_ICMP,
    PROTO_TCP,
    PROTO_UDP,
    PacketMeta,
    flow_hash,
    infer_direction,
    write_metadata_jsonl,
)
from .config import get_bool, get_float, get_int, get_list
from .errors import FileError, InvalidSpec

log = logging.getLogger(__name__)

EPOCH_US = 1_500_000_000_000_000
SERVER_ADDR = int(ipaddress.IPv4Address("10.0.0.2"))
CLIENT_NET = int(ipaddress.IPv4Address("192.168.1.0"))
PUBLIC_LO, PUBLIC_HI = 0x0B000000, 0xDF000000

SYN, FIN_ACK, SYN_ACK, ACK, PSH_ACK = 0x02, 0x11, 0x12, 0x10, 0x18

ETH_LEN = 14
IP_LEN = 20
TCP_LEN = 32  # 20 + NOP NOP timestamp option
UDP_LEN = 8
ICMP_LEN = 8
MAX_TCP_PAYLOAD = 1514 - ETH_LEN - IP_LEN - TCP_LEN


@dataclass
class BackgroundProfile:
    name: str
    protocol: int = PROTO_TCP
    server_port: int = 80
    session_rate: float = 10.0  # sessions per minute
    packets_mean: float = 10.0
    payload_median: float = 400.0
    payload_sigma: float = 1.0
    gap_mean_s: float = 0.05
    remote_peers: bool = False


# Protocols of the background mixes; volumes are not given and are our choice.
DEFAULT_PROFILES: Dict[str, BackgroundProfile] = {
    "http": BackgroundProfile("http", PROTO_TCP, 80, 12.0, 10.0, 500.0, 1.0, 0.04),
    "https": BackgroundProfile("https", PROTO_TCP, 443, 8.0, 14.0, 700.0, 0.9, 0.05),
    "ssh": BackgroundProfile("ssh", PROTO_TCP, 22, 1.0, 60.0, 80.0, 0.6, 0.4),
    "bittorrent": BackgroundProfile("bittorrent", PROTO_TCP, 6881, 2.0, 80.0, 1000.0, 0.5, 0.08,
                                    remote_peers=True),
}


@dataclass
class AttackSpec:
    enabled: bool = False
    start_s: float = 0.0
    end_s: float = 0.0
    request_rate_pps: float = 15.90
    client_count: int = 1


@dataclass
class ScenarioSpec:
    duration_s: float = 60.0
    seed: int = 0
    profiles: List[BackgroundProfile] = field(
        default_factory=lambda: [replace(DEFAULT_PROFILES[n]) for n in ("http", "ssh")]
    )
    attack: AttackSpec = field(default_factory=AttackSpec)
    epoch_us: int = EPOCH_US
    client_pool: int = 40

    def validate(self) -> None:
        if not self.duration_s > 0:
            raise InvalidSpec("duration_s must be positive")
        for p in self.profiles:
            if not (p.session_rate > 0 and p.packets_mean >= 1 and p.gap_mean_s > 0
                    and p.payload_median > 0 and p.payload_sigma >= 0):
                raise InvalidSpec(f"profile {p.name}: rates and sizes must be positive")
            if p.protocol not in (PROTO_TCP, PROTO_UDP, PROTO_ICMP):
                raise InvalidSpec(f"profile {p.name}: unsupported protocol {p.protocol}")
        a = self.attack
        if a.enabled:
            if not 0 <= a.start_s < a.end_s <= self.duration_s:
                raise InvalidSpec("attack needs 0 <= start_s < end_s <= duration_s")
            if not a.request_rate_pps > 0 or a.client_count < 1:
                raise InvalidSpec("attack rate and client count must be positive")
        if self.client_pool < 1:
            raise InvalidSpec("client_pool must be positive")

    @classmethod
    def from_config(cls, cfg: Dict[str, str]) -> "ScenarioSpec":
        spec = cls(
            duration_s=get_float(cfg, "duration_s", 60.0),
            seed=get_int(cfg, "seed", 0),
            epoch_us=get_int(cfg, "epoch_us", EPOCH_US),
            client_pool=get_int(cfg, "client_pool", 40),
        )
        names = get_list(cfg, "background.profiles", ["http", "ssh"])
        profiles = []
        for name in names:
            base = replace(DEFAULT_PROFILES.get(name, BackgroundProfile(name)))
            pre = f"background.{name}."
            base.protocol = get_int(cfg, pre + "protocol", base.protocol)
            base.server_port = get_int(cfg, pre + "port", base.server_port)
            base.session_rate = get_float(cfg, pre + "rate_per_min", base.session_rate)
            base.packets_mean = get_float(cfg, pre + "packets_mean", base.packets_mean)
            base.payload_median = get_float(cfg, pre + "payload_median", base.payload_median)
            base.payload_sigma = get_float(cfg, pre + "payload_sigma", base.payload_sigma)
            base.gap_mean_s = get_float(cfg, pre + "gap_mean_s", base.gap_mean_s)
            base.remote_peers = get_bool(cfg, pre + "remote_peers", base.remote_peers)
            profiles.append(base)
        spec.profiles = profiles
        spec.attack = AttackSpec(
            enabled=get_bool(cfg, "attack.enabled", False),
            start_s=get_float(cfg, "attack.start_s", 0.0),
            end_s=get_float(cfg, "attack.end_s", spec.duration_s),
            request_rate_pps=get_float(cfg, "attack.rate_pps", 15.90),
            client_count=get_int(cfg, "attack.clients", 1),
        )
        spec.validate()
        return spec


# --------------------------------------------------------------------------
# generation


class _Hosts:
    """Per-host TCP timestamp clocks (random phase, millisecond ticks)."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.offsets: Dict[int, int] = {}

    def tsval(self, addr: int, t_us: int) -> int:
        if addr not in self.offsets:
            self.offsets[addr] = int(self.rng.integers(1, 2**32))
        return (self.offsets[addr] + t_us // 1000) % 2**32


def _packet(t_us, proto, src, sport, dst, dport, flags, payload, hosts) -> PacketMeta:
    if proto == PROTO_TCP:
        header = TCP_LEN
    elif proto == PROTO_UDP:
        header = UDP_LEN
    else:
        header = ICMP_LEN
    return PacketMeta(
        session_id=flow_hash(proto, src, sport, dst, dport),
        timestamp=int(t_us),
        direction=infer_direction(src, sport, dst, dport),
        src_addr=src,
        dst_addr=dst,
        src_port=sport,
        dst_port=dport,
        size_bytes=ETH_LEN + IP_LEN + header + payload,
        protocol=proto,
        tcp_flags=flags if proto == PROTO_TCP else 0,
        tcp_tsval=hosts.tsval(src, t_us) if proto == PROTO_TCP else 0,
        payload_len=payload,
    )


def _payload(rng, median, sigma, limit=MAX_TCP_PAYLOAD) -> int:
    return int(min(limit, max(1, round(rng.lognormal(math.log(median), sigma)))))


def _background_session(rng, hosts, profile, spec, t_start_us, end_us, out):
    if profile.remote_peers:
        client = int(rng.integers(PUBLIC_LO, PUBLIC_HI))
        server, sport_server = SERVER_ADDR, profile.server_port
        cport = int(rng.integers(1024, 65536))
    else:
        client = CLIENT_NET + 1 + int(rng.integers(spec.client_pool))
        server, sport_server = SERVER_ADDR, profile.server_port
        cport = int(rng.integers(32768, 61000))
    count = 1 + int(rng.poisson(profile.packets_mean - 1))
    gaps = rng.exponential(profile.gap_mean_s * 1e6, size=count)
    gaps[0] = 0
    times = t_start_us + np.cumsum(gaps).astype(np.int64)
    proto = profile.protocol
    for i, t in enumerate(times):
        if t >= end_us:
            break
        if proto == PROTO_TCP and i < 3 and count >= 4:
            flags, outbound = (SYN, False) if i == 0 else ((SYN_ACK, True) if i == 1 else (ACK, False))
            payload = 0
        else:
            outbound = bool(rng.random() < 0.5)
            last = i == count - 1 and proto == PROTO_TCP
            flags = FIN_ACK if last else PSH_ACK
            payload = _payload(rng, profile.payload_median, profile.payload_sigma)
        if outbound:
            src, sp, dst, dp = server, sport_server, client, cport
        else:
            src, sp, dst, dp = client, cport, server, sport_server
        if proto == PROTO_ICMP:
            sp = dp = 0
        out.append(_packet(t, proto, src, sp, dst, dp, flags, payload, hosts))


# one ab request: handshake, GET, response, FIN; (outbound, flags, payload)
_FLOOD_SESSION = (
    (False, SYN, 0),
    (True, SYN_ACK, 0),
    (False, ACK, 0),
    (False, PSH_ACK, 82),
    (True, PSH_ACK, 730),
    (False, FIN_ACK, 0),
)
_FLOOD_SPAN_US = 150_000


def _attack(rng, hosts, spec, out) -> List[Tuple[int, int]]:
    a = spec.attack
    start = spec.epoch_us + int(round(a.start_s * 1e6))
    end = spec.epoch_us + int(round(a.end_s * 1e6))
    total = int(round(a.request_rate_pps * (a.end_s - a.start_s)))
    per = len(_FLOOD_SESSION)
    sessions = -(-total // per)
    span = min(_FLOOD_SPAN_US, max(1, (end - start) // 4))
    starts = np.sort(rng.integers(start, end - span, size=sessions, endpoint=False))
    # bots are scattered over public address space, so each one lands at
    # its own height on the canvas
    clients = np.unique(rng.integers(PUBLIC_LO, PUBLIC_HI, size=4 * a.client_count))
    clients = rng.permutation(clients)[: a.client_count]
    next_port = {int(c): int(rng.integers(32768, 61000)) for c in clients}
    remaining = total
    for s in starts:
        client = int(clients[rng.integers(a.client_count)])
        port = next_port[client]
        next_port[client] = 32768 + (port - 32768 + 1) % (61000 - 32768)
        gaps = np.minimum(rng.exponential(span / (2 * per), size=per), span / per)
        gaps[0] = 0
        times = s + np.cumsum(gaps).astype(np.int64)
        for (outbound, flags, payload), t in zip(_FLOOD_SESSION[:remaining], times):
            if outbound:
                p = _packet(t, PROTO_TCP, SERVER_ADDR, 80, client, port, flags, payload, hosts)
            else:
                p = _packet(t, PROTO_TCP, client, port, SERVER_ADDR, 80, flags, payload, hosts)
            out.append(p)
        remaining -= min(per, remaining)
    return [(start, end)]


def generate(spec: ScenarioSpec) -> Tuple[List[PacketMeta], List[Tuple[int, int]]]:
    """Packets sorted by time plus the ground-truth attack intervals (microseconds)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    hosts = _Hosts(rng)
    end_us = spec.epoch_us + int(round(spec.duration_s * 1e6))
    packets: List[PacketMeta] = []
    for profile in spec.profiles:
        expected = profile.session_rate * spec.duration_s / 60.0
        n = int(rng.poisson(expected))
        starts = np.sort(rng.integers(spec.epoch_us, end_us, size=n))
        for t in starts:
            _background_session(rng, hosts, profile, spec, int(t), end_us, packets)
    truth: List[Tuple[int, int]] = []
    if spec.attack.enabled:
        truth = _attack(rng, hosts, spec, packets)
    order = sorted(range(len(packets)), key=lambda i: (packets[i].timestamp, i))
    return [packets[i] for i in order], truth


# --------------------------------------------------------------------------
# writers


def _checksum(header: bytes) -> int:
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def encode_frame(p: PacketMeta) -> bytes:
    """Ethernet/IPv4/L4 headers for ``p``; payload bytes are left out (snaplen)."""
    if p.protocol == PROTO_TCP:
        options = b""
        if p.tcp_tsval:
            options = b"\x01\x01\x08\x0a" + struct.pack("!II", p.tcp_tsval, 0)
        hlen = 20 + len(options)
        l4 = struct.pack("!HHIIBBHHH", p.src_port, p.dst_port, 0, 0, (hlen // 4) << 4,
                         p.tcp_flags, 65535, 0, 0) + options
    elif p.protocol == PROTO_UDP:
        l4 = struct.pack("!HHHH", p.src_port, p.dst_port, UDP_LEN + p.payload_len, 0)
    elif p.protocol == PROTO_ICMP:
        l4 = struct.pack("!BBHHH", 8, 0, 0, 0, 0)
    else:
        raise ValueError(f"protocol {p.protocol} cannot be written")
    total = IP_LEN + len(l4) + p.payload_len
    if ETH_LEN + total != p.size_bytes:
        raise ValueError(
            f"size_bytes {p.size_bytes} inconsistent with headers + payload {ETH_LEN + total}"
        )
    ip = bytearray(struct.pack("!BBHHHBBHII", 0x45, 0, total, 0, 0x4000, 64, p.protocol, 0,
                               p.src_addr, p.dst_addr))
    struct.pack_into("!H", ip, 10, _checksum(bytes(ip)))
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + b"\x08\x00"
    return eth + bytes(ip) + l4


def capture_bytes(packets: Sequence[PacketMeta]) -> bytes:
    out = [struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)]
    for p in sorted(packets, key=lambda q: q.timestamp):
        frame = encode_frame(p)
        sec, usec = divmod(p.timestamp, 1_000_000)
        out.append(struct.pack("<IIII", sec, usec, len(frame), p.size_bytes))
        out.append(frame)
    return b"".join(out)


def write_capture(packets: Sequence[PacketMeta], path: str, fmt: str = "capture") -> None:
    """Write a classic capture file or JSONL metadata, atomically."""
    tmp = f"{path}.tmp"
    try:
        if fmt == "capture":
            with open(tmp, "wb") as fh:
                fh.write(capture_bytes(packets))
        elif fmt == "jsonl":
            with open(tmp, "w", encoding="utf-8") as fh:
                write_metadata_jsonl(sorted(packets, key=lambda q: q.timestamp), fh)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        os.replace(tmp, path)
    except OSError as exc:
        raise FileError(f"cannot write {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
