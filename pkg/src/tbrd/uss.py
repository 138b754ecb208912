"""UAS Service Supplier: mission registry and its framed TCP protocol.

Frames are a 4-byte big-endian length followed by a UTF-8 JSON object whose
``type`` is one of register, start, end, revoke or query. 32-byte values
travel as lowercase hex. Replies carry ``"ok": true`` or an error code.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import os
import socket
import socketserver
import struct
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

log = logging.getLogger(__name__)

DEFAULT_IP = "0.0.0.0"
DEFAULT_PORT = 5555
HEADER = struct.Struct(">I")
MAX_FRAME = 1 << 20
SNAPSHOT_FORMAT = "tbrd-uss-snapshot"
SNAPSHOT_VERSION = 1


class MissionStatus(str, enum.Enum):
    REGISTERED = "registered"
    ACTIVE = "active"
    ENDED = "ended"
    REVOKED = "revoked"


class QueryStatus(str, enum.Enum):
    FOUND = "found"
    NO_MISSION = "no_mission"
    REVOKED = "revoked"


class UssError(Exception):
    code = "error"


class DuplicateMission(UssError):
    code = "duplicate"


class WindowConflict(UssError):
    code = "conflict"


class UnknownHandle(UssError):
    code = "unknown_handle"


class IllegalTransition(UssError):
    code = "illegal_transition"


class OutsideWindow(UssError):
    code = "outside_window"


class ProtocolError(UssError):
    code = "protocol"


class UssUnavailable(UssError, ConnectionError):
    code = "unavailable"


class SnapshotError(UssError):
    code = "snapshot"


_ERRORS = {cls.code: cls for cls in (DuplicateMission, WindowConflict, UnknownHandle,
                                     IllegalTransition, OutsideWindow, ProtocolError)}


@dataclass(frozen=True)
class MissionRecord:
    handle: str
    operator_id: str
    uas_id: str
    register_start_ms: int
    register_end_ms: int
    k0: bytes
    t_int_ms: int
    d: int
    t0_ms: int = 0
    t_end_ms: int = 0
    status: MissionStatus = MissionStatus.REGISTERED

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["k0"] = self.k0.hex()
        out["status"] = self.status.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MissionRecord":
        d = dict(d)
        d["k0"] = bytes.fromhex(d["k0"])
        d["status"] = MissionStatus(d["status"])
        rec = cls(**d)
        if len(rec.k0) != 32:
            raise ValueError("k0 must be 32 bytes")
        return rec

    def covers(self, t_ms: int) -> bool:
        """Whether an observation at ``t_ms`` falls inside the flown mission."""
        if self.status not in (MissionStatus.ACTIVE, MissionStatus.ENDED):
            return False
        end = self.t_end_ms if self.status is MissionStatus.ENDED else self.register_end_ms
        return self.t0_ms <= t_ms <= end


@dataclass(frozen=True)
class QueryResponse:
    status: QueryStatus
    k0: bytes | None = None
    t0_ms: int = 0
    t_int_ms: int = 0
    d: int = 0
    operator_id: str = ""

    def __post_init__(self):
        if (self.k0 is not None) != (self.status is QueryStatus.FOUND):
            raise ValueError("k0 is present exactly when a mission is found")

    def to_dict(self) -> dict:
        if self.status is not QueryStatus.FOUND:
            return {"status": self.status.value}
        return {"status": self.status.value, "k0": self.k0.hex(), "t0_ms": self.t0_ms,
                "t_int_ms": self.t_int_ms, "d": self.d, "operator_id": self.operator_id}

    @classmethod
    def from_dict(cls, d: dict) -> "QueryResponse":
        status = QueryStatus(d["status"])
        if status is not QueryStatus.FOUND:
            return cls(status)
        return cls(status, bytes.fromhex(d["k0"]), int(d["t0_ms"]), int(d["t_int_ms"]), int(d["d"]),
                   str(d.get("operator_id", "")))


def windows_overlap(a_start: int, a_end: int, b_start: int, b_end: int) -> bool:
    """Half-open windows ``[start, end)`` share at least one instant."""
    return a_start < b_end and b_start < a_end


class Registry:
    """Thread-safe mission store.

    Every mutation and query runs under one lock, so readers never see a
    half-applied record. With ``snapshot_path`` set, the whole registry is
    written atomically before a mutation is acknowledged.
    """

    def __init__(self, snapshot_path: str | os.PathLike | None = None):
        self._lock = threading.RLock()
        self._records: dict[str, MissionRecord] = {}
        self._next_id = 1
        self.snapshot_path = Path(snapshot_path) if snapshot_path else None

    # mutations

    def register(self, operator_id: str, uas_id: str, start_ms: int, end_ms: int, k0: bytes,
                 t_int_ms: int, d: int) -> str:
        if end_ms <= start_ms:
            raise OutsideWindow(f"window end {end_ms} is not after start {start_ms}")
        if len(k0) != 32:
            raise ProtocolError("k0 must be 32 bytes")
        if t_int_ms <= 0 or d < 1:
            raise ProtocolError("t_int_ms must be positive and d >= 1")
        with self._lock:
            for rec in self._records.values():
                if rec.uas_id != uas_id or rec.status is MissionStatus.REVOKED:
                    continue
                if (rec.operator_id, rec.register_start_ms, rec.register_end_ms, rec.k0) == (
                        operator_id, start_ms, end_ms, k0):
                    raise DuplicateMission(f"mission already registered as {rec.handle}")
                if windows_overlap(rec.register_start_ms, rec.register_end_ms, start_ms, end_ms):
                    raise WindowConflict(f"window overlaps mission {rec.handle} for {uas_id}")
            handle = f"M{self._next_id:06d}"
            self._next_id += 1
            self._records[handle] = MissionRecord(handle, operator_id, uas_id, start_ms, end_ms,
                                                  bytes(k0), t_int_ms, d)
            self._persist()
            return handle

    def start(self, handle: str, t0_ms: int) -> MissionRecord:
        with self._lock:
            rec = self._get(handle)
            if rec.status is not MissionStatus.REGISTERED:
                raise IllegalTransition(f"cannot start a mission that is {rec.status.value}")
            if not rec.register_start_ms <= t0_ms <= rec.register_end_ms:
                raise OutsideWindow(f"start {t0_ms} outside registered window")
            return self._put(dataclasses.replace(rec, t0_ms=t0_ms, status=MissionStatus.ACTIVE))

    def end(self, handle: str, t_end_ms: int) -> MissionRecord:
        with self._lock:
            rec = self._get(handle)
            if rec.status is not MissionStatus.ACTIVE:
                raise IllegalTransition(f"cannot end a mission that is {rec.status.value}")
            if t_end_ms < rec.t0_ms:
                raise OutsideWindow(f"end {t_end_ms} precedes start {rec.t0_ms}")
            return self._put(dataclasses.replace(rec, t_end_ms=t_end_ms, status=MissionStatus.ENDED))

    def revoke(self, handle: str) -> MissionRecord:
        with self._lock:
            rec = self._get(handle)
            if rec.status is MissionStatus.REVOKED:
                return rec
            return self._put(dataclasses.replace(rec, status=MissionStatus.REVOKED))

    # queries

    def query(self, observer_id: str, uas_id: str, t_obs_ms: int) -> QueryResponse:
        log.info("query observer=%s uas=%s t=%d", observer_id, uas_id, t_obs_ms)
        with self._lock:
            revoked = False
            for rec in self._records.values():
                if rec.uas_id != uas_id:
                    continue
                if rec.covers(t_obs_ms):
                    return QueryResponse(QueryStatus.FOUND, rec.k0, rec.t0_ms, rec.t_int_ms, rec.d,
                                         rec.operator_id)
                if rec.status is MissionStatus.REVOKED:
                    lo = rec.t0_ms or rec.register_start_ms
                    hi = rec.t_end_ms or rec.register_end_ms
                    revoked = revoked or lo <= t_obs_ms <= hi
            return QueryResponse(QueryStatus.REVOKED if revoked else QueryStatus.NO_MISSION)

    def get(self, handle: str) -> MissionRecord:
        with self._lock:
            return self._get(handle)

    def records(self) -> list[MissionRecord]:
        with self._lock:
            return list(self._records.values())

    # persistence

    def to_dict(self) -> dict:
        with self._lock:
            return {"format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION, "next_id": self._next_id,
                    "missions": [r.to_dict() for r in self._records.values()]}

    def snapshot(self, path: str | os.PathLike) -> None:
        path = Path(path)
        data = json.dumps(self.to_dict(), sort_keys=True, indent=1).encode()
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    @classmethod
    def restore(cls, path: str | os.PathLike, persist: bool = True) -> "Registry":
        """Load a snapshot; raises SnapshotError if it is unreadable or inconsistent."""
        path = Path(path)
        try:
            doc = json.loads(path.read_bytes())
            if doc.get("format") != SNAPSHOT_FORMAT or doc.get("version") != SNAPSHOT_VERSION:
                raise ValueError("not a registry snapshot")
            records = [MissionRecord.from_dict(r) for r in doc["missions"]]
            next_id = int(doc["next_id"])
        except (OSError, ValueError, KeyError, TypeError, AttributeError) as exc:
            raise SnapshotError(f"cannot restore {path}: {exc}") from exc
        reg = cls(path if persist else None)
        reg._records = {r.handle: r for r in records}
        if len(reg._records) != len(records):
            raise SnapshotError(f"cannot restore {path}: duplicate handles")
        reg._next_id = next_id
        return reg

    def _get(self, handle: str) -> MissionRecord:
        try:
            return self._records[handle]
        except KeyError:
            raise UnknownHandle(f"no mission {handle!r}") from None

    def _put(self, rec: MissionRecord) -> MissionRecord:
        self._records[rec.handle] = rec
        self._persist()
        return rec

    def _persist(self) -> None:
        if self.snapshot_path is not None:
            self.snapshot(self.snapshot_path)


# request dispatch

def _field(req: dict, name: str, kind: type) -> Any:
    try:
        v = req[name]
    except KeyError:
        raise ProtocolError(f"missing field {name!r}") from None
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise ProtocolError(f"field {name!r} must be an integer")
    if kind is str and not isinstance(v, str):
        raise ProtocolError(f"field {name!r} must be a string")
    return v


def _hex32(req: dict, name: str) -> bytes:
    v = _field(req, name, str)
    try:
        raw = bytes.fromhex(v)
    except ValueError:
        raise ProtocolError(f"field {name!r} is not hex") from None
    if len(raw) != 32 or v != v.lower():
        raise ProtocolError(f"field {name!r} must be 64 lowercase hex chars")
    return raw


def handle_request(registry: Registry, req: Any) -> dict:
    """Apply one decoded request; never raises, errors become error replies."""
    try:
        if not isinstance(req, dict):
            raise ProtocolError("request must be a JSON object")
        kind = req.get("type")
        if kind == "register":
            handle = registry.register(
                _field(req, "operator_id", str), _field(req, "uas_id", str),
                _field(req, "start_ms", int), _field(req, "end_ms", int), _hex32(req, "k0"),
                _field(req, "t_int_ms", int), _field(req, "d", int))
            return {"ok": True, "handle": handle}
        if kind == "start":
            rec = registry.start(_field(req, "handle", str), _field(req, "t0_ms", int))
        elif kind == "end":
            rec = registry.end(_field(req, "handle", str), _field(req, "t_end_ms", int))
        elif kind == "revoke":
            rec = registry.revoke(_field(req, "handle", str))
        elif kind == "query":
            t_obs = _field(req, "t_obs_ms", int)
            if t_obs <= 0:
                raise ProtocolError("t_obs_ms must be positive")
            resp = registry.query(_field(req, "observer_id", str), _field(req, "uas_id", str), t_obs)
            return {"ok": True, **resp.to_dict()}
        else:
            raise ProtocolError(f"unknown request type {kind!r}")
        return {"ok": True, "handle": rec.handle, "status": rec.status.value}
    except UssError as exc:
        return {"ok": False, "error": exc.code, "detail": str(exc)}


# framing

def encode_message(obj: dict) -> bytes:
    body = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return HEADER.pack(len(body)) + body


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EOFError("connection closed mid-frame" if buf else "connection closed")
        buf += chunk
    return bytes(buf)


def read_message(sock: socket.socket) -> Any:
    """Read one frame; raises EOFError on clean close, ProtocolError on bad frames."""
    (length,) = HEADER.unpack(_recv_exact(sock, HEADER.size))
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds {MAX_FRAME}")
    body = _recv_exact(sock, length)
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"frame is not UTF-8 JSON: {exc}") from None


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        registry = self.server.registry
        while True:
            try:
                req = read_message(self.request)
            except EOFError:
                return
            except ProtocolError as exc:
                self.request.sendall(encode_message({"ok": False, "error": exc.code, "detail": str(exc)}))
                return
            except OSError:
                return
            self.request.sendall(encode_message(handle_request(registry, req)))


class UssServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, registry: Registry, ip: str = DEFAULT_IP, port: int = DEFAULT_PORT):
        self.registry = registry
        super().__init__((ip, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="uss-server", daemon=True)
        t.start()
        return t


def parse_endpoint(s: str) -> tuple[str, int]:
    host, sep, port = s.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected host:port, got {s!r}")
    return host, int(port)


class UssClient:
    """Blocking client; one short-lived connection per request."""

    def __init__(self, host: str, port: int = DEFAULT_PORT, timeout: float = 5.0):
        self.host, self.port, self.timeout = host, port, timeout

    @classmethod
    def from_endpoint(cls, endpoint: str, timeout: float = 5.0) -> "UssClient":
        return cls(*parse_endpoint(endpoint), timeout=timeout)

    def request(self, obj: dict) -> dict:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
                sock.sendall(encode_message(obj))
                reply = read_message(sock)
        except (OSError, EOFError) as exc:
            raise UssUnavailable(f"USS {self.host}:{self.port} unreachable: {exc}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError("reply is not a JSON object")
        if not reply.get("ok"):
            raise _ERRORS.get(reply.get("error"), UssError)(reply.get("detail", "request failed"))
        return reply

    def register(self, operator_id: str, uas_id: str, start_ms: int, end_ms: int, k0: bytes,
                 t_int_ms: int, d: int) -> str:
        return self.request({"type": "register", "operator_id": operator_id, "uas_id": uas_id,
                             "start_ms": start_ms, "end_ms": end_ms, "k0": k0.hex(),
                             "t_int_ms": t_int_ms, "d": d})["handle"]

    def start(self, handle: str, t0_ms: int) -> dict:
        return self.request({"type": "start", "handle": handle, "t0_ms": t0_ms})

    def end(self, handle: str, t_end_ms: int) -> dict:
        return self.request({"type": "end", "handle": handle, "t_end_ms": t_end_ms})

    def revoke(self, handle: str) -> dict:
        return self.request({"type": "revoke", "handle": handle})

    def query(self, observer_id: str, uas_id: str, t_obs_ms: int) -> QueryResponse:
        reply = self.request({"type": "query", "observer_id": observer_id, "uas_id": uas_id,
                              "t_obs_ms": t_obs_ms})
        return QueryResponse.from_dict(reply)
