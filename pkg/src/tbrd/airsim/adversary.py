"""Attackers. Each works only from public data and captured traffic."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace

from .. import odid, tesla
from ..odid import AuthBundle, CodecError, MessagePack
from ..transmitter import TelemetrySample, build_beacon
from .channel import HONEST, BroadcastChannel
from .geo import LocalFrame

REPLAY = "replay"
GHOST = "ghost"
FORGERY = "forgery"


@dataclass
class Replayer:
    """Records honest packs for ``capture_ms`` and re-broadcasts each ``offset_ms`` later."""

    offset_ms: int = 30_000
    capture_ms: int = 30_000
    target: str | None = None
    name: str = "replayer"
    kind: str = field(default="replayer", init=False)
    _start: int | None = field(default=None, init=False, repr=False)

    def attach(self, channel: BroadcastChannel) -> None:
        channel.tap(self._hear)

    def _hear(self, t, sender, pack, origin, channel):
        if origin != HONEST or (self.target and sender != self.target):
            return
        if self._start is None:
            self._start = t
        if t - self._start < self.capture_ms:
            channel.transmit(t + self.offset_ms, self.name, pack, REPLAY)


@dataclass
class DelayedForger:
    """Forges ``M_i`` with a moved position as soon as ``K_i`` is disclosed.

    On hearing an honest pack for interval ``j`` it learns ``K_{j-d}`` and,
    ``lag_ms`` later, broadcasts a pack for interval ``i = j - d`` that
    carries a correct MAC under that key.
    """

    d: int = 1
    lag_ms: int = 50
    offset_deg: float = 0.001
    target: str | None = None
    name: str = "forger"
    kind: str = field(default="delayed_forger", init=False)
    forged: list[tuple[int, int]] = field(default_factory=list, init=False, repr=False)

    def attach(self, channel: BroadcastChannel) -> None:
        channel.tap(self._hear)

    def _hear(self, t, sender, pack, origin, channel):
        if origin != HONEST or (self.target and sender != self.target):
            return
        try:
            p = odid.decode_pack(pack)
            j = p.auth_bundle().interval if p.authenticated else 0
        except CodecError:
            return
        i = j - self.d
        if i < 1:
            return
        k_i = p.auth_bundle().disclosed_key
        loc = replace(p.location, lat_deg=p.location.lat_deg + self.offset_deg)
        payload = odid.build_auth_payload(i, p.basic, loc, p.system, p.operator)
        mac = tesla.compute_mac(tesla.derive_mac_key(k_i), payload)
        bundle = AuthBundle(i, mac, tesla.hash_forward(k_i, self.d))
        pages = odid.paginate_auth(bundle, p.auth_pages[0].timestamp)
        forged = odid.encode_pack(MessagePack(p.basic, loc, p.system, p.operator, pages))
        self.forged.append((i, t + self.lag_ms))
        channel.transmit(t + self.lag_ms, self.name, forged, FORGERY)


def ghost_ids(count: int, prefix: str = "GHOST") -> list[str]:
    return [f"{prefix}{k + 1:05d}" for k in range(count)]


@dataclass
class GhostFleet:
    """``count`` unregistered UAS parked on the y-axis, each with its own valid keychain.

    Ghosts are centred on the origin and ``spacing_m`` apart. They broadcast
    one authenticated pack per interval from ``t0_ms`` for ``intervals``
    intervals.
    """

    count: int
    t0_ms: int
    intervals: int
    spacing_m: float = 12.0
    t_int_ms: int = 1000
    d: int = 1
    offset_ms: int = 40
    frame: LocalFrame = LocalFrame()
    seed: int = 0
    operator_id: str = "FAA-OP-GHOST"
    name: str = "ghosts"
    kind: str = field(default="ghost_fleet", init=False)
    _keys: list | None = field(default=None, init=False, repr=False)

    @property
    def ids(self) -> list[str]:
        return ghost_ids(self.count)

    def positions(self) -> list[tuple[float, float]]:
        mid = (self.count - 1) / 2
        return [(0.0, (k - mid) * self.spacing_m) for k in range(self.count)]

    def chain(self, k: int) -> tesla.KeyChain:
        seed = hashlib.sha256(b"ghost" + struct.pack(">QI", self.seed, k)).digest()
        return tesla.generate_chain(seed, tesla.ChainParams(self.t_int_ms, self.d, self.intervals + 1))

    def attach(self, channel: BroadcastChannel) -> None:
        for i in range(1, self.intervals + 1):
            self.broadcast(channel, i)

    def broadcast(self, channel: BroadcastChannel, i: int) -> None:
        """Schedule every ghost's pack for interval ``i``."""
        if self._keys is None:
            self._keys = [self.chain(k).keys for k in range(self.count)]
        t = self.t0_ms + (i - 1) * self.t_int_ms + self.offset_ms
        for uas, keys, (x, y) in zip(self.ids, self._keys, self.positions()):
            lat, lon = self.frame.to_latlon(x, y)
            tel = TelemetrySample(lat, lon, 30.0, 0.0, 0, 0.0, lat, lon, t)
            raw = odid.encode_pack(build_beacon(i, tel, keys, self.d, uas, self.operator_id))
            channel.transmit(t, uas, raw, GHOST)
