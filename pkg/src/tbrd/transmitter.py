"""Authenticated Remote ID broadcaster.

One message pack per key interval. A beacon may only leave inside the
permitted window ``[start, end - E)`` of its interval; a beacon that misses the
window is dropped, never deferred, because sending ``M_i`` during interval
``i + d`` would put it on air alongside the disclosure of its own key.
"""

from __future__ import annotations

import csv
import logging
import socket
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from . import odid, tesla
from .bench import bench  # noqa: F401  (re-exported; part of the transmitter surface)
from .odid import (
    AuthBundle,
    BasicIdMsg,
    LocationMsg,
    MessagePack,
    OperatorIdMsg,
    Status,
    SystemMsg,
)
from .provision import KeysFile

log = logging.getLogger(__name__)

DEFAULT_GUARD_MS = 100
DEFAULT_UDP_PORT = 3411


@dataclass(frozen=True)
class TelemetrySample:
    lat_deg: float
    lon_deg: float
    alt_m: float = 0.0
    speed_mps: float = 0.0
    direction_deg: float = 0.0
    vspeed_mps: float = 0.0
    operator_lat_deg: float = 0.0
    operator_lon_deg: float = 0.0
    t_ms: int = 0


@dataclass(frozen=True)
class TxWindow:
    guard_ms: int = DEFAULT_GUARD_MS

    def validate(self, t_int_ms: int) -> None:
        if not 0 <= self.guard_ms < t_int_ms:
            raise ValueError(f"guard {self.guard_ms} ms must lie in [0, {t_int_ms})")

    def deadline(self, params: tesla.ChainParams, i: int) -> int:
        """First instant at which interval ``i`` may no longer transmit."""
        return params.interval_start(i + 1) - self.guard_ms


class KeyIndexError(IndexError):
    pass


def data_messages(telemetry: TelemetrySample, uas_id: str, operator_id: str
                  ) -> tuple[BasicIdMsg, LocationMsg, SystemMsg, OperatorIdMsg]:
    airborne = telemetry.alt_m > 0 or telemetry.speed_mps > 0
    loc = LocationMsg(
        lat_deg=telemetry.lat_deg,
        lon_deg=telemetry.lon_deg,
        alt_m=telemetry.alt_m,
        speed_mps=telemetry.speed_mps,
        direction_deg=int(round(telemetry.direction_deg)) % 360,
        vspeed_mps=telemetry.vspeed_mps,
        status=Status.AIRBORNE if airborne else Status.GROUND,
        timestamp_ds=odid.tenths_past_hour(telemetry.t_ms),
    )
    return (BasicIdMsg(uas_id), loc, SystemMsg(telemetry.operator_lat_deg, telemetry.operator_lon_deg),
            OperatorIdMsg(operator_id))


def build_beacon(i: int, telemetry: TelemetrySample, keys: Sequence[bytes], d: int,
                 uas_id: str, operator_id: str) -> MessagePack:
    """Authenticated pack for interval ``i``.

    ``keys`` holds ``K_0..K_{n-1}``; ``i`` must index into it, so the last
    key of the chain is never used to MAC (nothing would ever disclose it).
    For ``i < d`` the commitment ``K_0`` is disclosed, since no earlier key
    exists.
    """
    if not 1 <= i < len(keys):
        raise KeyIndexError(f"interval {i} has no key (usable intervals 1..{len(keys) - 1})")
    basic, loc, system, op = data_messages(telemetry, uas_id, operator_id)
    payload = odid.build_auth_payload(i, basic, loc, system, op)
    mac = tesla.compute_mac(tesla.derive_mac_key(keys[i]), payload)
    bundle = AuthBundle(i, mac, keys[max(i - d, 0)])
    pages = odid.paginate_auth(bundle, timestamp=odid.odid_timestamp(telemetry.t_ms))
    return MessagePack(basic, loc, system, op, pages)


def build_plain(telemetry: TelemetrySample, uas_id: str, operator_id: str) -> MessagePack:
    """Unauthenticated pack, used once the keychain is exhausted."""
    return MessagePack(*data_messages(telemetry, uas_id, operator_id))


# telemetry sources

class TelemetrySource(Protocol):
    def sample(self, t_ms: int) -> TelemetrySample: ...


@dataclass
class StaticSource:
    fixed: TelemetrySample

    def sample(self, t_ms: int) -> TelemetrySample:
        return replace(self.fixed, t_ms=t_ms)


DEFAULT_STATIC = TelemetrySample(lat_deg=42.3398, lon_deg=-71.0892, alt_m=30.0, speed_mps=3.0,
                                 direction_deg=90, vspeed_mps=0.0, operator_lat_deg=42.3397,
                                 operator_lon_deg=-71.0893)

SCRIPT_COLUMNS = ("t_ms", "lat_deg", "lon_deg", "alt_m", "speed_mps", "direction_deg", "vspeed_mps",
                  "operator_lat_deg", "operator_lon_deg")


class ScriptSource:
    """Timestamped samples; returns the latest sample at or before the query time.

    Sample times in the script are offsets from the first query, so a
    recorded flight can be replayed at any wall-clock time.
    """

    def __init__(self, rows: Iterable[TelemetrySample]):
        self.rows = sorted(rows, key=lambda r: r.t_ms)
        if not self.rows:
            raise ValueError("telemetry script is empty")
        self._origin: int | None = None

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScriptSource":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(SCRIPT_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"telemetry CSV lacks columns {sorted(missing)}")
            rows = [TelemetrySample(**{k: (int(r[k]) if k == "t_ms" else float(r[k])) for k in SCRIPT_COLUMNS})
                    for r in reader]
        return cls(rows)

    @property
    def duration_ms(self) -> int:
        return self.rows[-1].t_ms - self.rows[0].t_ms

    def sample(self, t_ms: int) -> TelemetrySample:
        if self._origin is None:
            self._origin = t_ms - self.rows[0].t_ms
        rel = t_ms - self._origin
        chosen = self.rows[0]
        for row in self.rows:
            if row.t_ms > rel:
                break
            chosen = row
        return replace(chosen, t_ms=t_ms)


# clocks and channels

class Clock(Protocol):
    def now_ms(self) -> int: ...

    def sleep_until(self, t_ms: int) -> None: ...


class SystemClock:
    """Wall clock, assumed GNSS-disciplined."""

    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000

    def sleep_until(self, t_ms: int) -> None:
        delay = (t_ms - self.now_ms()) / 1000
        if delay > 0:
            time.sleep(delay)


class SimClock:
    def __init__(self, now_ms: int = 0):
        self._now = now_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, ms: int) -> None:
        self._now += ms

    def sleep_until(self, t_ms: int) -> None:
        self._now = max(self._now, t_ms)


class Channel(Protocol):
    def send(self, data: bytes) -> None: ...


class UdpChannel:
    def __init__(self, address: str = "255.255.255.255", port: int = DEFAULT_UDP_PORT):
        self.target = (address, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)

    def send(self, data: bytes) -> None:
        self.sock.sendto(data, self.target)

    def close(self) -> None:
        self.sock.close()


@dataclass
class ListChannel:
    """Collects transmissions with their send time; for tests and simulation."""

    clock: Clock
    sent: list[tuple[int, bytes]] = field(default_factory=list)

    def send(self, data: bytes) -> None:
        self.sent.append((self.clock.now_ms(), data))


# run loop

@dataclass(frozen=True)
class TxLogEntry:
    interval: int
    status: str  # sent | unauthenticated | skipped | failed
    t_ms: int
    pack: bytes = b""
    detail: str = ""


@dataclass
class TxRun:
    t0_ms: int | None = None
    entries: list[TxLogEntry] = field(default_factory=list)

    def sent(self) -> list[TxLogEntry]:
        return [e for e in self.entries if e.status in ("sent", "unauthenticated")]


def run(keys: KeysFile, source: TelemetrySource, channel: Channel, window: TxWindow = TxWindow(),
        clock: Clock | None = None, fallback_intervals: int = 0, intervals: int | None = None,
        on_start: Callable[[int], None] | None = None,
        after_build: Callable[[int], None] | None = None) -> TxRun:
    """Broadcast one pack per interval until the keys (and fallback) run out.

    Interval 1 begins when the loop starts; that instant is the mission
    ``t0`` and is passed to ``on_start`` after the first successful send.
    The counter follows wall time, so skipped intervals still consume their
    index. ``after_build`` runs between construction and the window check,
    which is where tests inject construction delay.
    """
    clock = clock or SystemClock()
    window.validate(keys.t_int_ms)
    auth_intervals = keys.n - 1
    total = auth_intervals + fallback_intervals if intervals is None else intervals
    result = TxRun()
    params = None
    reported = False
    for i in range(1, total + 1):
        if params is not None:
            clock.sleep_until(params.interval_start(i))
        else:
            result.t0_ms = clock.now_ms()
            params = keys.params(result.t0_ms)
        sample = source.sample(clock.now_ms())
        if i <= auth_intervals:
            pack = build_beacon(i, sample, keys.keys, keys.d, keys.uas_id, keys.operator_id)
            status = "sent"
        else:
            pack = build_plain(sample, keys.uas_id, keys.operator_id)
            status = "unauthenticated"
        data = odid.encode_pack(pack)
        if after_build is not None:
            after_build(i)
        now = clock.now_ms()
        if now >= window.deadline(params, i) or now < params.interval_start(i):
            log.warning("interval %d: missed transmit window at t=%d, beacon dropped", i, now)
            result.entries.append(TxLogEntry(i, "skipped", now, detail="outside permitted window"))
            continue
        try:
            channel.send(data)
        except OSError as exc:
            log.error("interval %d: channel failure: %s", i, exc)
            result.entries.append(TxLogEntry(i, "failed", now, detail=str(exc)))
            continue
        result.entries.append(TxLogEntry(i, status, now, data))
        log.debug("interval %d: %s %d bytes at t=%d", i, status, len(data), now)
        if not reported and on_start is not None:
            reported = True
            try:
                on_start(result.t0_ms)
            except Exception as exc:  # USS trouble must not stop the broadcast
                log.error("could not report mission start: %s", exc)
    return result
