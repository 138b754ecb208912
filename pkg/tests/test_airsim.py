import csv
import json
import math

import pytest

from tbrd import odid, tesla
from tbrd.airsim.adversary import DelayedForger, GhostFleet, Replayer, ghost_ids
from tbrd.airsim.channel import BroadcastChannel, ChannelConfig, link_rng, run_channel
from tbrd.airsim.cli import main as sim_main
from tbrd.airsim.geo import LocalFrame, heading_deg, velocity
from tbrd.airsim.scenarios import (
    Scenario,
    ScenarioError,
    list_scenarios,
    load_scenario,
    run_attack_suite,
)
from tbrd.airsim.swarm import (
    GhostAttack,
    SwarmScenario,
    _segment_min_distance,
    _time_to_breach,
    choose_velocity,
    path_deviation,
    run_swarm,
)
from tbrd.verifier import Outcome

T = 1_700_000_000_000


def script(n=20, senders=("A",)):
    return [(T + k * 100, senders[k % len(senders)], bytes([k % 256]) * 10) for k in range(n)]


# channel

def test_lossless_is_fanout():
    trace = run_channel(script(5), ChannelConfig(), receivers=("r1", "r2"))
    assert [(d.t_ms, d.receiver, d.pack) for d in trace] == [
        (t, r, p) for t, _, p in script(5) for r in ("r1", "r2")]


def test_sender_does_not_hear_itself():
    trace = run_channel(script(5), ChannelConfig(), receivers=("A", "B"))
    assert {d.receiver for d in trace} == {"B"}


def test_total_loss_is_empty():
    assert run_channel(script(50), ChannelConfig(loss_prob=1.0, seed=3)) == []


@pytest.mark.parametrize("seed", [0, 1, 2**64 - 1])
def test_half_loss_binomial_bound(seed):
    trace = run_channel(script(1000), ChannelConfig(loss_prob=0.5, seed=seed))
    assert 400 <= len(trace) <= 600


def test_jitter_bounds_and_determinism():
    cfg = ChannelConfig(loss_prob=0.3, jitter_ms=25, seed=99)
    a = run_channel(script(200), cfg)
    b = run_channel(script(200), cfg)
    assert a == b
    assert all(0 <= d.t_ms - d.t_tx_ms <= 25 for d in a)
    assert [d.t_ms for d in a] == sorted(d.t_ms for d in a)
    assert run_channel(script(200), ChannelConfig(0.3, 25, 100)) != a


def test_links_are_independent():
    # adding a sender and a receiver must not change what r1 hears from A
    a_packs = [(T + k * 100, "A", bytes([k % 256]) * 10) for k in range(300)]
    b_packs = [(T + k * 100 + 50, "B", b"b" * 10) for k in range(300)]
    cfg = ChannelConfig(0.5, 10, 4)
    alone = run_channel(a_packs, cfg, ("r1",))
    crowded = [d for d in run_channel(sorted(a_packs + b_packs), cfg, ("r1", "r2"))
               if d.receiver == "r1" and d.sender == "A"]
    assert alone == crowded
    # and the link stream is exactly the documented per-link RNG
    rng = link_rng(4, "A", "r1")
    expected = []
    for t, _, p in a_packs:
        lost, delay = rng.random() < 0.5, rng.randint(0, 10)
        if not lost:
            expected.append((t + delay, t, p))
    assert sorted((d.t_ms, d.t_tx_ms, d.pack) for d in alone) == sorted(expected)


def test_script_must_be_ordered():
    with pytest.raises(ValueError):
        run_channel([(T + 10, "A", b"x"), (T, "A", b"y")])


@pytest.mark.parametrize("kw", [{"loss_prob": -0.1}, {"loss_prob": 1.5}, {"jitter_ms": -1}, {"seed": 2**64}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ChannelConfig(**kw)


def test_cannot_schedule_in_past():
    ch = BroadcastChannel()
    ch.attach("r")
    ch.transmit(T, "A", b"x")
    ch.run_until(T + 5)
    with pytest.raises(ValueError):
        ch.transmit(T, "A", b"y")


# geo

def test_frame_roundtrip():
    f = LocalFrame()
    for x, y in [(0, 0), (20, -20), (-35.5, 12.25)]:
        bx, by = f.to_xy(*f.to_latlon(x, y))
        assert bx == pytest.approx(x, abs=1e-9) and by == pytest.approx(y, abs=1e-9)


def test_heading_and_velocity():
    assert heading_deg(0, 1) == 0 and heading_deg(1, 0) == 90 and heading_deg(0, -1) == 180
    vx, vy = velocity(2.0, 270)
    assert vx == pytest.approx(-2) and vy == pytest.approx(0, abs=1e-12)


# adversaries

def honest_packs(n=10):
    from tbrd.provision import MissionPlan, plan_mission
    from tbrd.transmitter import TelemetrySample, build_beacon
    _, kf, _ = plan_mission(MissionPlan("OP", "UAS", T, T + (n + 1) * 1000), seed=bytes(32))
    out = []
    for i in range(1, n + 1):
        tel = TelemetrySample(42.0, -71.0, 30, 1, 0, 0, 42.0, -71.0, T + (i - 1) * 1000)
        out.append((T + (i - 1) * 1000, "UAS", odid.encode_pack(build_beacon(i, tel, kf.keys, 1, "UAS", "OP"))))
    return kf, out


def test_replayer_offsets_captured_window():
    _, packs = honest_packs(10)
    trace = run_channel(packs, adversaries=[Replayer(offset_ms=5000, capture_ms=3000)])
    replays = [d for d in trace if d.origin == "replay"]
    assert [d.t_ms for d in replays] == [T + 5000, T + 6000, T + 7000]
    assert [d.pack for d in replays] == [p for _, _, p in packs[:3]]


def test_forger_uses_only_disclosed_key():
    kf, packs = honest_packs(6)
    forger = DelayedForger(lag_ms=50)
    trace = run_channel(packs, adversaries=[forger])
    forged = [d for d in trace if d.origin == "forgery"]
    assert [i for i, _ in forger.forged] == [1, 2, 3, 4, 5]
    for d in forged:
        p = odid.decode_pack(d.pack)
        b = p.auth_bundle()
        # the forgery is cryptographically valid under the real K_i
        assert b.mac == tesla.compute_mac(tesla.derive_mac_key(kf.keys[b.interval]), p.auth_payload())
        assert b.disclosed_key == kf.keys[b.interval - 1]
        # and it only goes out after K_i was on air
        assert d.t_tx_ms == T + b.interval * 1000 + 50


def test_ghost_fleet_geometry():
    g = GhostFleet(4, T, 3, spacing_m=10)
    assert g.ids == ghost_ids(4) == ["GHOST00001", "GHOST00002", "GHOST00003", "GHOST00004"]
    assert g.positions() == [(0.0, -15.0), (0.0, -5.0), (0.0, 5.0), (0.0, 15.0)]
    trace = run_channel([], adversaries=[g])
    assert len(trace) == 12 and {d.origin for d in trace} == {"ghost"}
    p = odid.decode_pack(trace[0].pack)
    assert p.authenticated and p.basic.uas_id.startswith("GHOST")


# swarm policy

def test_time_to_breach():
    assert _time_to_breach(10, 0, 2, 0, 4, 5) == pytest.approx(3.0)
    assert _time_to_breach(10, 0, -2, 0, 4, 5) is None  # moving apart
    assert _time_to_breach(30, 0, 2, 0, 4, 5) is None  # beyond horizon
    assert _time_to_breach(1, 0, 0, 0, 4, 5) == 0.0  # already inside
    assert _time_to_breach(10, 5, 2, 0, 4, 5) is None  # passes wide


def test_free_agent_heads_to_goal():
    sc = SwarmScenario()
    vx, vy = choose_velocity(0, 0, (10, 0), [], sc)
    assert (vx, vy) == pytest.approx((2.0, 0.0))
    assert choose_velocity(0, 0, (0.3, 0), [], sc) == (0.0, 0.0)
    assert choose_velocity(0, 0, (1.0, 0), [], sc) == pytest.approx((1.0, 0.0))


def test_agent_avoids_head_on():
    vx, vy = choose_velocity(0, 0, (20, 0), [(6, 0, -2, 0)], SwarmScenario())
    assert abs(vy) > 0.1


def test_segment_min_distance():
    assert _segment_min_distance((0, 0), (2, 0), (2, 1), (0, 1)) == pytest.approx(1.0)
    assert _segment_min_distance((0, 0), (0, 0), (3, 4), (3, 4)) == pytest.approx(5.0)


def test_path_deviation_pads():
    assert path_deviation([(0, 0), (1, 0)], [(0, 0), (1, 0), (1, 0)]) == 0
    assert path_deviation([(0, 0)], [(0, 0), (0, 3)]) == 3


def test_invalid_auth_mode():
    with pytest.raises(ValueError):
        SwarmScenario(auth_mode="maybe")


# swarm runs

@pytest.mark.parametrize("mode", ["none", "tbrd"])
def test_baseline_completes_safely(mode):
    r = run_swarm(SwarmScenario(auth_mode=mode))
    assert all(r.completed.values())
    assert r.min_separation_m >= 2.0
    for agent, path in r.paths.items():
        gx, gy = dict(zip(r.paths, SwarmScenario().goals()))[agent]
        assert math.hypot(path[-1][0] - gx, path[-1][1] - gy) <= 0.5


@pytest.mark.parametrize("count", [5, 10])
def test_ghosts_ignored_under_tbrd(count):
    r = run_swarm(SwarmScenario(auth_mode="tbrd"), GhostAttack(count))
    assert all(v <= 1e-6 for v in r.max_deviation().values())
    assert r.paths == r.baseline.paths
    assert r.metrics()["ghosts_flagged_unknown_mission"] == count
    assert r.min_separation_m >= 2.0


@pytest.mark.parametrize("count", [5, 10])
def test_ghosts_deflect_unprotected_swarm(count):
    r = run_swarm(SwarmScenario(auth_mode="none"), GhostAttack(count))
    assert all(r.completed.values())
    assert all(v > 0 for v in r.max_deviation().values())


def test_swarm_deterministic():
    a = run_swarm(SwarmScenario(auth_mode="tbrd", loss_prob=0.2), GhostAttack(5), seed=11)
    b = run_swarm(SwarmScenario(auth_mode="tbrd", loss_prob=0.2), GhostAttack(5), seed=11)
    assert a.paths == b.paths and a.metrics() == b.metrics()


# scenarios

def test_corpus_contents():
    ids = set(list_scenarios())
    assert {"honest_lossy", "replay", "ghost_fleet_5", "ghost_fleet_10", "delayed_forgery"} <= ids
    for sid in ids:
        assert load_scenario(sid).id == sid


def test_bad_scenarios(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario("does_not_exist")
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"id": "x", "kind": "mission", "bogus": 1})
    with pytest.raises(ScenarioError):
        Scenario(id="x", kind="swarm", adversary={"kind": "replayer"})
    with pytest.raises(ScenarioError):
        Scenario(id="x", kind="volcano")
    p = tmp_path / "mine.json"
    p.write_text(json.dumps({"id": "mine", "kind": "mission", "mission": {"intervals": 5}}))
    assert load_scenario(str(p)).mission == {"intervals": 5}


def test_honest_lossy_zero_false_verdicts():
    r = run_attack_suite("honest_lossy", seed=4)
    hist = r.histograms()["TBRD-UAS-0001"]["honest"]
    assert set(hist) <= {"authentic", "pending"}
    assert hist.get("pending", 0) <= 1


def test_delayed_forgery_detected_next_interval():
    r = run_attack_suite("delayed_forgery", seed=2)
    forged = [rec for rec in r.records if rec.origin == "forgery"]
    assert forged and all(rec.verdict.outcome is Outcome.INTERVAL_VIOLATION for rec in forged)
    for rec in forged:
        i = rec.verdict.interval
        assert r.params.interval_start(i + 1) <= rec.verdict.decided_ms < r.params.interval_start(i + 2)


def test_suite_deterministic():
    a = run_attack_suite("replay", seed=8)
    b = run_attack_suite("replay", seed=8)
    assert a.metrics() == b.metrics()
    assert [x.to_json() for x in a.records] == [x.to_json() for x in b.records]


@pytest.mark.slow
def test_attack_soundness_100_seeds():
    adversarial = [s for s in list_scenarios() if load_scenario(s).adversary]
    for sid in adversarial:
        for seed in range(100):
            r = run_attack_suite(sid, seed, baseline=False)
            assert r.forged_authentic() == [], (sid, seed)


# CLI

def test_sim_cli_outputs(tmp_path, capsys):
    assert sim_main(["--scenario", "delayed_forgery", "--seed", "3", "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["forged_authentic"] == 0 and metrics["scenario"] == "delayed_forgery"
    lines = (tmp_path / "verdicts.jsonl").read_text().splitlines()
    recs = [json.loads(ln) for ln in lines]
    assert {r["origin"] for r in recs} == {"honest", "forgery"}
    rows = list(csv.DictReader((tmp_path / "trajectories.csv").open()))
    assert len(rows) == 30 and rows[0]["uas_id"] == "TBRD-UAS-0001"


def test_sim_cli_swarm(tmp_path):
    assert sim_main(["--scenario", "ghost_fleet_5_noauth", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "trajectories.csv").open()))
    assert {r["run"] for r in rows} == {"attack", "baseline"}
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert all(v > 0 for v in m["swarm"]["max_deviation_m"].values())


def test_sim_cli_reproducible(tmp_path):
    for sub in ("a", "b"):
        sim_main(["--scenario", "honest_lossy", "--seed", "17", "--out", str(tmp_path / sub)])
    for name in ("metrics.json", "verdicts.jsonl", "trajectories.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sim_cli_list(capsys):
    assert sim_main(["--list"]) == 0
    assert "ghost_fleet_10" in capsys.readouterr().out


def test_sim_cli_unknown(tmp_path, capsys):
    assert sim_main(["--scenario", "nope", "--out", str(tmp_path)]) == 2
