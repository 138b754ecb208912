"""Observer-side verification of authenticated Remote ID packs.

A pack is parked until a later pack from the same UAS discloses a key at or
beyond its interval. The MAC key is then derived by hashing forward, the MAC
is checked, the mission is looked up at the USS, both the MAC key and the
pack's own disclosed key are checked against the mission commitment, and
finally the arrival time is checked against the key schedule.

Disclosed keys are only trusted for release once they hash to the registered
commitment, so a spoofer broadcasting junk keys under a real UAS ID cannot
turn honest pending packs into MAC failures.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import itertools
import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from . import odid, tesla
from .odid import AuthBundle, CodecError, MessagePack
from .uss import QueryResponse, QueryStatus, UssError

log = logging.getLogger(__name__)

DEFAULT_EXPIRY_MS = 24 * 3600 * 1000


class Outcome(str, enum.Enum):
    PENDING = "pending"
    AUTHENTIC = "authentic"
    MAC_MISMATCH = "mac_mismatch"
    CHAIN_MISMATCH = "chain_mismatch"
    INTERVAL_VIOLATION = "interval_violation"
    REPLAY_DETECTED = "replay_detected"
    UNKNOWN_MISSION = "unknown_mission"
    REVOKED_MISSION = "revoked_mission"
    OPERATOR_MISMATCH = "operator_mismatch"
    UNAUTHENTICATED = "unauthenticated"
    MALFORMED = "malformed"

    @property
    def terminal(self) -> bool:
        return self is not Outcome.PENDING


@dataclass(frozen=True)
class Verdict:
    msg_id: int
    uas_id: str
    interval: int
    outcome: Outcome
    arrival_ms: int
    decided_ms: int
    detail: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        d["outcome"] = self.outcome.value
        return json.dumps(d, sort_keys=True)


@dataclass
class PendingMsg:
    msg_id: int
    raw: bytes
    arrival_ms: int
    pack: MessagePack
    bundle: AuthBundle
    payload: bytes
    uss: QueryResponse | None = None
    # set once the MAC has been verified while the USS was unreachable
    mac_key: bytes | None = None

    @property
    def uas_id(self) -> str:
        return self.pack.basic.uas_id

    @property
    def interval(self) -> int:
        return self.bundle.interval


class PendingBuffer:
    """Per-UAS pending messages; every operation is atomic."""

    def __init__(self):
        self._lock = threading.Lock()
        self._by_uas: dict[str, dict[int, PendingMsg]] = {}

    def add(self, msg: PendingMsg) -> None:
        with self._lock:
            self._by_uas.setdefault(msg.uas_id, {})[msg.msg_id] = msg

    def take(self, uas_id: str, max_interval: int) -> list[PendingMsg]:
        """Remove and return messages with interval <= max_interval."""
        with self._lock:
            bucket = self._by_uas.get(uas_id, {})
            out = [m for m in bucket.values() if m.interval <= max_interval]
            for m in out:
                del bucket[m.msg_id]
            return sorted(out, key=lambda m: (m.interval, m.msg_id))

    def take_all(self, uas_id: str | None = None) -> list[PendingMsg]:
        with self._lock:
            keys = [uas_id] if uas_id is not None else list(self._by_uas)
            out = []
            for k in keys:
                out.extend(self._by_uas.pop(k, {}).values())
            return out

    def expire(self, before_ms: int) -> list[PendingMsg]:
        with self._lock:
            out = []
            for bucket in self._by_uas.values():
                for mid in [mid for mid, m in bucket.items() if m.arrival_ms < before_ms]:
                    out.append(bucket.pop(mid))
            return out

    def uas_ids(self) -> list[str]:
        with self._lock:
            return [u for u, b in self._by_uas.items() if b]

    def __len__(self) -> int:
        with self._lock:
            return sum(len(b) for b in self._by_uas.values())


class ReuseLedger:
    """Record of ``(uas_id, interval) -> payload digest`` for authenticated packs.

    With a path, entries are appended to a JSON-lines file and reloaded on
    start, so key reuse is caught across observer restarts.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._seen: dict[tuple[str, int], str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._seen.setdefault((rec["uas_id"], rec["interval"]), rec["digest"])

    def check_and_record(self, uas_id: str, interval: int, payload: bytes) -> bool:
        """False if this slot was already used by a different payload."""
        digest = hashlib.sha256(payload).hexdigest()
        with self._lock:
            prior = self._seen.get((uas_id, interval))
            if prior is not None:
                return prior == digest
            self._seen[(uas_id, interval)] = digest
            if self.path:
                with self.path.open("a") as fh:
                    fh.write(json.dumps({"uas_id": uas_id, "interval": interval, "digest": digest}) + "\n")
            return True


@dataclass
class VerifierConfig:
    observer_id: str = "observer"
    max_skew_ms: int = tesla.DEFAULT_MAX_SKEW_MS
    expiry_ms: int = DEFAULT_EXPIRY_MS
    # schedule assumed for missions the USS does not know
    default_d: int = 1
    reuse_log: str | None = None


class Verifier:
    """Buffers packs and emits verdicts.

    ``uss`` is anything with ``query(observer_id, uas_id, t_obs_ms)``: a
    :class:`~tbrd.uss.UssClient` or an in-process
    :class:`~tbrd.uss.Registry`. Transport errors leave messages pending;
    :meth:`retry_uss` picks them up later.
    """

    def __init__(self, uss, config: VerifierConfig | None = None, **overrides):
        self.uss = uss
        self.config = config or VerifierConfig(**overrides)
        self.buffer = PendingBuffer()
        self.ledger = ReuseLedger(self.config.reuse_log)
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self._candidates: dict[str, dict[tuple[int, bytes], None]] = {}
        self._genuine: dict[tuple[int, bytes, bytes], bool] = {}
        self._verdicts: dict[int, Verdict] = {}
        self._awaiting_uss: dict[int, PendingMsg] = {}

    # public API

    def receive(self, raw: bytes, arrival_ms: int) -> list[Verdict]:
        """Ingest one pack and release whatever it unlocks."""
        first = self.ingest(raw, arrival_ms)
        out = [first]
        if first.outcome is Outcome.PENDING:
            released = self.try_release(first.uas_id, arrival_ms)
            out = [v for v in released if v.msg_id == first.msg_id] or out
            out += [v for v in released if v.msg_id != first.msg_id]
        return out

    def ingest(self, raw: bytes, arrival_ms: int) -> Verdict:
        msg_id = next(self._ids)
        try:
            pack = odid.decode_pack(raw)
        except CodecError as exc:
            return self._record(Verdict(msg_id, _peek_uas(raw), 0, Outcome.MALFORMED, arrival_ms,
                                        arrival_ms, f"parse failure: {exc}"))
        uas_id = pack.basic.uas_id
        if not pack.authenticated:
            return self._record(Verdict(msg_id, uas_id, 0, Outcome.UNAUTHENTICATED, arrival_ms, arrival_ms,
                                        "pack carries no authentication pages"))
        try:
            bundle = pack.auth_bundle()
            payload = pack.auth_payload()
        except CodecError as exc:
            return self._record(Verdict(msg_id, uas_id, 0, Outcome.MALFORMED, arrival_ms, arrival_ms,
                                        f"parse failure: {exc}"))
        msg = PendingMsg(msg_id, bytes(raw), arrival_ms, pack, bundle, payload)
        msg.uss = self._lookup(msg)
        d = msg.uss.d if msg.uss and msg.uss.status is QueryStatus.FOUND else self.config.default_d
        with self._lock:
            self._candidates.setdefault(uas_id, {})[(max(bundle.interval - d, 0), bundle.disclosed_key)] = None
        self.buffer.add(msg)
        return self._record(Verdict(msg_id, uas_id, bundle.interval, Outcome.PENDING, arrival_ms, arrival_ms))

    def try_release(self, uas_id: str | None = None, now_ms: int | None = None) -> list[Verdict]:
        """Verify every pending message a known disclosed key can reach."""
        out = []
        for uas in ([uas_id] if uas_id is not None else self.buffer.uas_ids()):
            with self._lock:
                cands = sorted(self._candidates.get(uas, {}))
            if not cands:
                continue
            for msg in self.buffer.take(uas, cands[-1][0]):
                v = self._verify(msg, cands, now_ms if now_ms is not None else msg.arrival_ms)
                if v is None:
                    self.buffer.add(msg)
                else:
                    out.append(v)
        return out

    def retry_uss(self, now_ms: int) -> list[Verdict]:
        """Re-run USS lookups for messages whose lookup failed earlier."""
        with self._lock:
            waiting = list(self._awaiting_uss.values())
            self._awaiting_uss.clear()
        for msg in waiting:
            msg.uss = None
            self.buffer.add(msg)
        for msg in self.buffer.take_all():
            if msg.uss is None:
                msg.uss = self._lookup(msg)
            self.buffer.add(msg)
        return self.try_release(now_ms=now_ms)

    def expire(self, now_ms: int) -> list[PendingMsg]:
        dropped = self.buffer.expire(now_ms - self.config.expiry_ms)
        for m in dropped:
            log.info("dropping pending message %d (%s, i=%d): expired", m.msg_id, m.uas_id, m.interval)
        return dropped

    def verdict(self, msg_id: int) -> Verdict:
        return self._verdicts[msg_id]

    def verdicts(self) -> list[Verdict]:
        with self._lock:
            return list(self._verdicts.values())

    # verification steps

    def _verify(self, msg: PendingMsg, cands: list[tuple[int, bytes]], now_ms: int) -> Verdict | None:
        """Return a terminal verdict, or None if the message must keep waiting."""
        i = msg.interval
        usable = [(idx, key) for idx, key in cands if idx >= i]
        resp = msg.uss
        found = resp is not None and resp.status is QueryStatus.FOUND
        mac_key = msg.mac_key
        if mac_key is None and found:
            genuine = next(((idx, key) for idx, key in usable if self._is_genuine(idx, key, resp.k0)), None)
            if genuine is not None:
                idx, key = genuine
                k_i = tesla.hash_forward(key, idx - i)
                if not self._mac_ok(msg, k_i):
                    return self._final(msg, Outcome.MAC_MISMATCH, now_ms,
                                       f"MAC does not verify under K_{i} derived from K_{idx}")
                mac_key = k_i
        if mac_key is None:
            # No key proven against the commitment reaches this interval. Any key that
            # makes the MAC check pass will do: the chain check still runs on it, so
            # the outcome cannot be authentic, and a key that fails the MAC proves
            # nothing, so the message keeps waiting.
            for idx, key in usable:
                k_i = tesla.hash_forward(key, idx - i)
                if self._mac_ok(msg, k_i):
                    mac_key = k_i
                    break
            else:
                return None
        return self._uss_check(msg, mac_key, now_ms)

    def _uss_check(self, msg: PendingMsg, k_i: bytes, now_ms: int) -> Verdict | None:
        resp = msg.uss
        if resp is not None and resp.status is not QueryStatus.FOUND:
            # the start report trails the first broadcast, so a miss at ingest may be stale
            resp = msg.uss = self._lookup(msg)
        if resp is None:
            msg.mac_key = k_i
            with self._lock:
                self._awaiting_uss[msg.msg_id] = msg
            return None
        if resp.status is QueryStatus.NO_MISSION:
            return self._final(msg, Outcome.UNKNOWN_MISSION, now_ms, "no registered mission covers this observation")
        if resp.status is QueryStatus.REVOKED:
            return self._final(msg, Outcome.REVOKED_MISSION, now_ms, "mission commitment was revoked")
        i = msg.interval
        if not tesla.verify_commitment(k_i, i, resp.k0):
            return self._final(msg, Outcome.CHAIN_MISMATCH, now_ms, f"MAC key K_{i} does not hash to K_0")
        disclosed_idx = max(i - resp.d, 0)
        if not tesla.verify_commitment(msg.bundle.disclosed_key, disclosed_idx, resp.k0):
            return self._final(msg, Outcome.CHAIN_MISMATCH, now_ms,
                               f"disclosed key K_{disclosed_idx} does not hash to K_0")
        if msg.pack.operator.operator_id != resp.operator_id:
            return self._final(msg, Outcome.OPERATOR_MISMATCH, now_ms,
                               f"broadcast operator {msg.pack.operator.operator_id!r} is not the registered operator")
        return self._temporal_check(msg, resp, now_ms)

    def _temporal_check(self, msg: PendingMsg, resp: QueryResponse, now_ms: int) -> Verdict:
        i = msg.interval
        params = tesla.ChainParams(resp.t_int_ms, resp.d, max(i, 1), resp.t0_ms)
        if not tesla.paper_time_check(msg.arrival_ms, i, params):
            return self._final(msg, Outcome.INTERVAL_VIOLATION, now_ms,
                               f"arrived at {msg.arrival_ms}, too late for interval {i}")
        if not tesla.safety_condition(msg.arrival_ms, i, params, self.config.max_skew_ms):
            return self._final(msg, Outcome.INTERVAL_VIOLATION, now_ms,
                               f"K_{i} could already have been disclosed at {msg.arrival_ms}")
        if not self.ledger.check_and_record(msg.uas_id, i, msg.payload):
            return self._final(msg, Outcome.REPLAY_DETECTED, now_ms,
                               f"interval {i} already used with a different payload")
        return self._final(msg, Outcome.AUTHENTIC, now_ms)

    # helpers

    def _lookup(self, msg: PendingMsg) -> QueryResponse | None:
        try:
            return self.uss.query(self.config.observer_id, msg.uas_id, msg.arrival_ms)
        except (UssError, OSError) as exc:
            log.warning("USS lookup for %s failed: %s", msg.uas_id, exc)
            return None

    def _is_genuine(self, idx: int, key: bytes, k0: bytes) -> bool:
        with self._lock:
            hit = self._genuine.get((idx, key, k0))
        if hit is None:
            hit = tesla.verify_commitment(key, idx, k0)
            with self._lock:
                self._genuine[(idx, key, k0)] = hit
        return hit

    @staticmethod
    def _mac_ok(msg: PendingMsg, k_i: bytes) -> bool:
        expected = tesla.compute_mac(tesla.derive_mac_key(k_i), msg.payload)
        return hmac.compare_digest(expected, msg.bundle.mac)

    def _final(self, msg: PendingMsg, outcome: Outcome, now_ms: int, detail: str = "") -> Verdict:
        return self._record(Verdict(msg.msg_id, msg.uas_id, msg.interval, outcome, msg.arrival_ms, now_ms, detail))

    def _record(self, v: Verdict) -> Verdict:
        with self._lock:
            prior = self._verdicts.get(v.msg_id)
            if prior is not None and prior.outcome.terminal:
                raise RuntimeError(f"message {v.msg_id} already has terminal verdict {prior.outcome.value}")
            self._verdicts[v.msg_id] = v
        return v


def _peek_uas(raw: bytes) -> str:
    """Best-effort UAS ID from a pack that failed to decode."""
    try:
        if len(raw) >= 3 + odid.MSG_SIZE and raw[3] >> 4 == odid.MsgType.BASIC_ID:
            return odid.BasicIdMsg.decode(raw[3:3 + odid.MSG_SIZE]).uas_id
    except CodecError:
        pass
    return ""


def summarize(verdicts: Iterable[Verdict]) -> dict[str, dict[str, int]]:
    """Histogram of outcomes per UAS ID."""
    out: dict[str, dict[str, int]] = {}
    for v in verdicts:
        bucket = out.setdefault(v.uas_id, {})
        bucket[v.outcome.value] = bucket.get(v.outcome.value, 0) + 1
    return out


@dataclass
class VerdictWriter:
    """Writes one JSON record per terminal verdict."""

    stream: object
    include_pending: bool = False
    written: int = field(default=0)

    def write(self, verdicts: Iterable[Verdict]) -> None:
        for v in verdicts:
            if v.outcome.terminal or self.include_pending:
                self.stream.write(v.to_json() + "\n")
                self.written += 1
        if hasattr(self.stream, "flush"):
            self.stream.flush()
