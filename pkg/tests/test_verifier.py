import json
import os
import random
import threading

import pytest

from tbrd import odid, tesla
from tbrd.odid import AuthBundle, MessagePack
from tbrd.provision import MissionPlan, plan_mission, register_with_uss
from tbrd.transmitter import TelemetrySample, build_beacon, build_plain
from tbrd.uss import Registry, UssUnavailable
from tbrd.verifier import Outcome, PendingBuffer, ReuseLedger, Verdict, Verifier, VerdictWriter, summarize

T = 1_700_000_000_000
UAS = "TESTUAS123"
OP = "FAA-OP-0001"


def tel(t_ms, lat=42.3398):
    return TelemetrySample(lat, -71.0892, 30.0, 3.0, 90, 0.0, 42.3397, -71.0893, t_ms)


class Mission:
    """A registered, started mission with helpers to mint packs."""

    def __init__(self, registry, uas=UAS, op=OP, n_intervals=100, d=1, seed=None, register=True, t0=T):
        plan = MissionPlan(op, uas, T, T + n_intervals * 1000, 1000, d)
        self.chain, self.keys, req = plan_mission(plan, seed=seed or os.urandom(32))
        self.d, self.uas, self.op, self.t0 = d, uas, op, t0
        if register:
            self.handle = register_with_uss(req, registry)
            registry.start(self.handle, t0)

    def at(self, i, offset=50):
        return self.t0 + (i - 1) * 1000 + offset

    def pack(self, i, lat=42.3398, op=None):
        p = build_beacon(i, tel(self.at(i), lat), self.keys.keys, self.d, self.uas, op or self.op)
        return odid.encode_pack(p)


@pytest.fixture
def registry():
    return Registry()


@pytest.fixture
def mission(registry):
    return Mission(registry)


@pytest.fixture
def verifier(registry):
    return Verifier(registry)


def outcomes(verdicts):
    return {v.interval: v.outcome for v in verdicts if v.outcome.terminal}


# ingest

def test_valid_pack_pending(mission, verifier):
    v = verifier.ingest(mission.pack(4), mission.at(4))
    assert v.outcome is Outcome.PENDING and v.interval == 4 and v.uas_id == UAS


def test_garbage_is_malformed(verifier):
    v = verifier.ingest(os.urandom(50), T)
    assert v.outcome is Outcome.MALFORMED and "parse failure" in v.detail


def test_missing_auth_page_is_malformed(mission, verifier):
    pack = odid.decode_pack(mission.pack(4))
    pages = list(pack.auth_pages)
    pages[2] = pages[1]  # page 2 lost, page 1 twice
    raw = odid.encode_pack(MessagePack(pack.basic, pack.location, pack.system, pack.operator, tuple(pages)))
    v = verifier.ingest(raw, mission.at(4))
    assert v.outcome is Outcome.MALFORMED
    assert v.uas_id == UAS


def test_truncated_pack_is_malformed(mission, verifier):
    v = verifier.ingest(mission.pack(4)[:150], mission.at(4))
    assert v.outcome is Outcome.MALFORMED


def test_unauthenticated_pack(verifier):
    raw = odid.encode_pack(build_plain(tel(T), UAS, OP))
    assert verifier.ingest(raw, T).outcome is Outcome.UNAUTHENTICATED


def test_interval_zero_is_malformed(mission, verifier):
    pack = odid.decode_pack(mission.pack(4))
    pages = odid.paginate_auth(AuthBundle(0, bytes(32), mission.keys.keys[0]))
    raw = odid.encode_pack(MessagePack(pack.basic, pack.location, pack.system, pack.operator, pages))
    assert verifier.ingest(raw, mission.at(1)).outcome is Outcome.MALFORMED


# release

def test_m4_then_m5_authentic(mission, verifier):
    first = verifier.receive(mission.pack(4), mission.at(4))
    assert [v.outcome for v in first] == [Outcome.PENDING]
    out = verifier.receive(mission.pack(5), mission.at(5))
    assert outcomes(out) == {4: Outcome.AUTHENTIC}
    assert verifier.verdict(out[-1].msg_id).outcome is Outcome.AUTHENTIC


def test_gap_tolerant_release(mission, verifier):
    verifier.receive(mission.pack(4), mission.at(4))
    out = verifier.receive(mission.pack(7), mission.at(7))
    assert outcomes(out) == {4: Outcome.AUTHENTIC}


def test_larger_delay(registry):
    m = Mission(registry, d=3)
    verifier = Verifier(registry)
    verifier.receive(m.pack(4), m.at(4))
    assert outcomes(verifier.receive(m.pack(6), m.at(6))) == {}
    assert outcomes(verifier.receive(m.pack(7), m.at(7))) == {4: Outcome.AUTHENTIC}


def test_bit_flip_is_mac_mismatch(mission, verifier):
    raw = bytearray(mission.pack(4))
    raw[3 + odid.MSG_SIZE + 6] ^= 0x01  # low byte of latitude in the location frame
    verifier.receive(bytes(raw), mission.at(4))
    out = verifier.receive(mission.pack(5), mission.at(5))
    assert outcomes(out) == {4: Outcome.MAC_MISMATCH}


def test_unregistered_chain_is_unknown_mission(registry, verifier):
    ghost = Mission(registry, uas="GHOST00001", register=False)
    verifier.receive(ghost.pack(4), ghost.at(4))
    out = verifier.receive(ghost.pack(5), ghost.at(5))
    assert outcomes(out) == {4: Outcome.UNKNOWN_MISSION}


def test_start_report_after_first_pack(registry, verifier):
    # the transmitter reports t0 only after its first broadcast has gone out
    plan = MissionPlan(OP, UAS, T, T + 10_000, 1000, 1)
    _, keys, req = plan_mission(plan, seed=os.urandom(32))
    handle = register_with_uss(req, registry)
    pack = lambda i: odid.encode_pack(build_beacon(i, tel(T + (i - 1) * 1000), keys.keys, 1, UAS, OP))
    verifier.receive(pack(1), T + 5)
    registry.start(handle, T)
    assert outcomes(verifier.receive(pack(2), T + 1005)) == {1: Outcome.AUTHENTIC}


def test_revoked_mission(registry, mission, verifier):
    registry.revoke(mission.handle)
    verifier.receive(mission.pack(4), mission.at(4))
    assert outcomes(verifier.receive(mission.pack(5), mission.at(5))) == {4: Outcome.REVOKED_MISSION}


def test_cross_mission_commitment_is_chain_mismatch(registry, verifier):
    # the USS holds one commitment, the UAS broadcasts from a different chain
    registered = Mission(registry)
    rogue = Mission(registry, register=False)
    assert registered.keys.commitment != rogue.keys.commitment
    verifier.receive(rogue.pack(4), rogue.at(4))
    out = verifier.receive(rogue.pack(5), rogue.at(5))
    assert outcomes(out) == {4: Outcome.CHAIN_MISMATCH}


def test_operator_mismatch(mission, verifier):
    verifier.receive(mission.pack(4, op="FAA-OP-9999"), mission.at(4))
    out = verifier.receive(mission.pack(5), mission.at(5))
    assert outcomes(out) == {4: Outcome.OPERATOR_MISMATCH}


def test_replay_30s_later(mission, verifier):
    captured = mission.pack(4)
    verifier.receive(captured, mission.at(4))
    verifier.receive(mission.pack(5), mission.at(5))
    out = verifier.receive(captured, mission.at(4) + 30_000)
    assert outcomes(out) == {4: Outcome.INTERVAL_VIOLATION}


def test_same_slot_two_payloads(mission, verifier):
    verifier.receive(mission.pack(4), mission.at(4))
    verifier.receive(mission.pack(4, lat=42.5), mission.at(4) + 10)
    out = verifier.receive(mission.pack(5), mission.at(5))
    assert sorted(v.outcome.value for v in out if v.outcome.terminal) == ["authentic", "replay_detected"]


def test_duplicate_delivery_of_same_pack_is_not_replay(mission, verifier):
    verifier.receive(mission.pack(4), mission.at(4))
    verifier.receive(mission.pack(4), mission.at(4) + 5)
    out = verifier.receive(mission.pack(5), mission.at(5))
    assert [v.outcome for v in out if v.outcome.terminal] == [Outcome.AUTHENTIC] * 2


def test_delayed_forgery_detected_next_interval(mission, verifier):
    verifier.receive(mission.pack(4), mission.at(4))
    verifier.receive(mission.pack(5), mission.at(5))  # discloses K_4
    forged = odid.encode_pack(build_beacon(4, tel(mission.at(5) + 50, lat=40.0), mission.keys.keys, 1, UAS, OP))
    out = verifier.receive(forged, mission.at(5) + 50)
    assert [v.outcome for v in out] == [Outcome.INTERVAL_VIOLATION]
    assert out[0].decided_ms < mission.t0 + 5 * 1000


def test_arrival_near_interval_end_violates_safety(mission, verifier):
    # arrival plus skew reaches interval i + d, when K_i may already be public
    verifier.receive(mission.pack(4), mission.t0 + 4000 - 5)
    out = verifier.receive(mission.pack(5), mission.at(5))
    assert outcomes(out) == {4: Outcome.INTERVAL_VIOLATION}


def test_bogus_disclosures_do_not_block_honest(mission, verifier):
    verifier.receive(mission.pack(4), mission.at(4))
    junk = odid.decode_pack(mission.pack(9))
    pages = odid.paginate_auth(AuthBundle(9, os.urandom(32), os.urandom(32)))
    raw = odid.encode_pack(MessagePack(junk.basic, junk.location, junk.system, junk.operator, pages))
    out = verifier.receive(raw, mission.at(4) + 100)
    assert outcomes(out) == {}
    out = verifier.receive(mission.pack(5), mission.at(5))
    assert outcomes(out)[4] is Outcome.AUTHENTIC


def test_started_mid_flight(mission, verifier):
    for i in range(40, 46):
        verifier.receive(mission.pack(i), mission.at(i))
    final = [v for v in verifier.verdicts() if v.outcome.terminal]
    assert {v.interval: v.outcome for v in final} == {i: Outcome.AUTHENTIC for i in range(40, 45)}


def test_lossy_completeness(mission, verifier):
    rng = random.Random(7)
    delivered = [i for i in range(1, 60) if rng.random() < 0.5]
    for i in delivered:
        verifier.receive(mission.pack(i), mission.at(i))
    final = {v.interval: v.outcome for v in verifier.verdicts() if v.outcome.terminal}
    assert final == {i: Outcome.AUTHENTIC for i in delivered[:-1]}


# USS availability

class FlakyUss:
    def __init__(self, registry):
        self.registry = registry
        self.up = False

    def query(self, *a):
        if not self.up:
            raise UssUnavailable("USS unreachable")
        return self.registry.query(*a)


def test_uss_unreachable_keeps_pending_then_retries(registry, mission):
    uss = FlakyUss(registry)
    verifier = Verifier(uss)
    verifier.receive(mission.pack(4), mission.at(4))
    out = verifier.receive(mission.pack(5), mission.at(5))
    assert outcomes(out) == {}
    assert verifier.verdict(out[0].msg_id).outcome is Outcome.PENDING
    uss.up = True
    out = verifier.retry_uss(mission.at(5) + 60_000)
    assert outcomes(out) == {4: Outcome.AUTHENTIC}


# verdict bookkeeping

def test_terminal_verdicts_are_final(mission, verifier):
    verifier.receive(mission.pack(4), mission.at(4))
    v = verifier.receive(mission.pack(5), mission.at(5))[-1]
    with pytest.raises(RuntimeError):
        verifier._record(Verdict(v.msg_id, v.uas_id, v.interval, Outcome.MAC_MISMATCH, 0, 0))


def test_expiry(mission):
    verifier = Verifier(Registry(), expiry_ms=5_000)
    verifier.ingest(mission.pack(4), mission.at(4))
    assert len(verifier.buffer) == 1
    assert verifier.expire(mission.at(4) + 4_000) == []
    dropped = verifier.expire(mission.at(4) + 6_000)
    assert [m.interval for m in dropped] == [4] and len(verifier.buffer) == 0


def test_reuse_ledger_across_runs(tmp_path, registry, mission):
    log = tmp_path / "reuse.jsonl"
    first = Verifier(registry, reuse_log=str(log))
    first.receive(mission.pack(4), mission.at(4))
    first.receive(mission.pack(5), mission.at(5))
    second = Verifier(registry, reuse_log=str(log))
    second.receive(mission.pack(4, lat=41.0), mission.at(4))
    out = second.receive(mission.pack(5), mission.at(5))
    assert outcomes(out) == {4: Outcome.REPLAY_DETECTED}


def test_reuse_ledger_same_payload():
    ledger = ReuseLedger()
    assert ledger.check_and_record("U", 1, b"a")
    assert ledger.check_and_record("U", 1, b"a")
    assert not ledger.check_and_record("U", 1, b"b")
    assert ledger.check_and_record("U", 2, b"b")


def test_verdict_json_schema(mission, verifier):
    verifier.receive(mission.pack(4), mission.at(4))
    v = next(v for v in verifier.receive(mission.pack(5), mission.at(5)) if v.interval == 4)
    rec = json.loads(v.to_json())
    assert set(rec) == {"msg_id", "uas_id", "interval", "outcome", "arrival_ms", "decided_ms", "detail"}
    assert rec["outcome"] == "authentic"


def test_writer_skips_pending(mission, verifier, tmp_path):
    import io
    buf = io.StringIO()
    w = VerdictWriter(buf)
    w.write(verifier.receive(mission.pack(4), mission.at(4)))
    w.write(verifier.receive(mission.pack(5), mission.at(5)))
    lines = buf.getvalue().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["interval"] == 4


def test_summarize():
    vs = [Verdict(1, "A", 1, Outcome.AUTHENTIC, 0, 0), Verdict(2, "A", 2, Outcome.AUTHENTIC, 0, 0),
          Verdict(3, "B", 1, Outcome.UNKNOWN_MISSION, 0, 0)]
    assert summarize(vs) == {"A": {"authentic": 2}, "B": {"unknown_mission": 1}}


# concurrency

def test_pending_buffer_concurrent_insert_drain():
    from types import SimpleNamespace

    buf = PendingBuffer()
    n = 5000
    taken = []

    def producer():
        for k in range(n):
            buf.add(SimpleNamespace(msg_id=k, uas_id="U", interval=k % 50, arrival_ms=k))

    def consumer(stop):
        while not stop.is_set() or len(buf):
            taken.extend(m.msg_id for m in buf.take("U", 49))

    stop = threading.Event()
    c = threading.Thread(target=consumer, args=(stop,))
    c.start()
    producer()
    stop.set()
    c.join()
    assert sorted(taken) == list(range(n))


def test_concurrent_ingest_and_release(registry):
    m = Mission(registry, n_intervals=400)
    verifier = Verifier(registry)
    packs = [(m.pack(i), m.at(i)) for i in range(1, 301)]
    results = []
    stop = threading.Event()

    def releaser():
        while not stop.is_set():
            results.extend(verifier.try_release(UAS))

    r = threading.Thread(target=releaser)
    r.start()
    for raw, t in packs:
        results.append(verifier.ingest(raw, t))
    stop.set()
    r.join()
    results.extend(verifier.try_release(UAS))
    terminal = [v for v in results if v.outcome.terminal]
    ids = [v.msg_id for v in terminal]
    assert len(ids) == len(set(ids)) == 299
    assert all(v.outcome is Outcome.AUTHENTIC for v in terminal)
    assert len(verifier.buffer) == 1
