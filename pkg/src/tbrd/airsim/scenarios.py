"""Scenario corpus and the attack-suite runner.

A scenario is a JSON document. ``kind: "mission"`` runs one honest
transmitter and a ground observer over the lossy channel, optionally with a
replayer or a delayed forger listening in. ``kind: "swarm"`` runs the
four-agent swarm, optionally with a ghost fleet.

Every delivered pack carries a ground-truth origin label (honest, replay,
forgery, ghost) so verdicts can be scored.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..provision import MissionPlan, plan_mission, register_with_uss
from ..tesla import ChainParams
from ..transmitter import DEFAULT_STATIC, ListChannel, SimClock, StaticSource, TxRun, TxWindow, run
from ..uss import Registry
from ..verifier import Outcome, Verdict, Verifier
from .adversary import GHOST, DelayedForger, Replayer
from .channel import HONEST, BroadcastChannel, ChannelConfig, Delivery
from .swarm import EPOCH_MS, GhostAttack, SwarmResult, SwarmScenario, run_swarm

OBSERVER = "observer"
UAS_ID = "TBRD-UAS-0001"
OPERATOR_ID = "FAA-OP-0001"
KINDS = ("mission", "swarm")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    id: str
    kind: str
    description: str = ""
    channel: dict = field(default_factory=dict)
    mission: dict = field(default_factory=dict)
    swarm: dict = field(default_factory=dict)
    adversary: dict | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"scenario kind must be one of {KINDS}, not {self.kind!r}")
        adv = (self.adversary or {}).get("kind")
        allowed = {"mission": (None, "replayer", "delayed_forger"), "swarm": (None, "ghost_fleet")}[self.kind]
        if adv not in allowed:
            raise ScenarioError(f"adversary {adv!r} is not supported in a {self.kind} scenario")

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        unknown = set(d) - {"id", "kind", "description", "channel", "mission", "swarm", "adversary"}
        if unknown:
            raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None

    def channel_config(self, seed: int) -> ChannelConfig:
        return ChannelConfig(float(self.channel.get("loss_prob", 0.0)), int(self.channel.get("jitter_ms", 0)), seed)

    def swarm_scenario(self) -> SwarmScenario:
        return SwarmScenario(**{**self.swarm, "loss_prob": float(self.channel.get("loss_prob", 0.0)),
                                "jitter_ms": int(self.channel.get("jitter_ms", 0))})


def _corpus_dir():
    return resources.files("tbrd.airsim") / "scenarios"


def list_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in _corpus_dir().iterdir() if p.name.endswith(".json"))


def load_scenario(ref: str) -> Scenario:
    """Load a shipped scenario by id, or any scenario file by path."""
    path = Path(ref)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        entry = _corpus_dir() / f"{ref}.json"
        if not entry.is_file():
            raise ScenarioError(f"no scenario {ref!r}; shipped: {', '.join(list_scenarios())}")
        text = entry.read_text()
    return Scenario.from_dict(json.loads(text))


@dataclass(frozen=True)
class Record:
    """A verdict joined with where its pack really came from."""

    verdict: Verdict
    origin: str
    sender: str
    t_tx_ms: int

    def to_json(self) -> str:
        d = json.loads(self.verdict.to_json())
        d.update(origin=self.origin, sender=self.sender, t_tx_ms=self.t_tx_ms)
        return json.dumps(d, sort_keys=True)


@dataclass
class SuiteResult:
    scenario: Scenario
    seed: int
    records: list[Record]
    trace: list[Delivery] = field(default_factory=list)
    params: ChainParams | None = None
    tx: TxRun | None = None
    swarm: SwarmResult | None = None

    def histograms(self) -> dict[str, dict[str, dict[str, int]]]:
        """``{uas_id: {origin: {outcome: count}}}`` over terminal and pending verdicts."""
        out: dict = {}
        for r in self.records:
            h = out.setdefault(r.verdict.uas_id, {}).setdefault(r.origin, {})
            h[r.verdict.outcome.value] = h.get(r.verdict.outcome.value, 0) + 1
        return out

    def forged_authentic(self) -> list[Record]:
        """Soundness violations: non-honest packs that verified."""
        return [r for r in self.records if r.origin != HONEST and r.verdict.outcome is Outcome.AUTHENTIC]

    def metrics(self) -> dict:
        out = {"scenario": self.scenario.id, "seed": self.seed, "kind": self.scenario.kind,
               "verdicts": self.histograms(), "forged_authentic": len(self.forged_authentic()),
               "deliveries": len(self.trace)}
        if self.tx is not None:
            out["transmitted"] = len(self.tx.sent())
            out["t0_ms"] = self.tx.t0_ms
        if self.swarm is not None:
            out["swarm"] = self.swarm.metrics()
        return out


def _seed_bytes(seed: int, label: bytes) -> bytes:
    return hashlib.sha256(label + struct.pack(">Q", seed)).digest()


def run_attack_suite(scenario: Scenario | str, seed: int = 0, baseline: bool = True) -> SuiteResult:
    """Run one scenario. ``baseline=False`` skips the no-attack swarm rerun used for deviation."""
    if isinstance(scenario, str):
        scenario = load_scenario(scenario)
    if scenario.kind == "swarm":
        return _run_swarm_suite(scenario, seed, baseline)
    return _run_mission_suite(scenario, seed)


def _run_mission_suite(sc: Scenario, seed: int) -> SuiteResult:
    m = sc.mission
    intervals = int(m.get("intervals", 60))
    t_int = int(m.get("t_int_ms", 1000))
    d = int(m.get("d", 1))
    registry = Registry()
    # intervals authenticated broadcasts need keys K_0..K_intervals
    plan = MissionPlan(OPERATOR_ID, UAS_ID, EPOCH_MS, EPOCH_MS + (intervals + 1) * t_int, t_int, d)
    _, keys, req = plan_mission(plan, seed=_seed_bytes(seed, b"mission"))
    handle = register_with_uss(req, registry)

    clock = SimClock(EPOCH_MS + int(m.get("start_delay_ms", 0)))
    tx_channel = ListChannel(clock)
    tx = run(keys, StaticSource(DEFAULT_STATIC), tx_channel, TxWindow(int(m.get("guard_ms", 100))), clock,
             fallback_intervals=int(m.get("fallback_intervals", 0)),
             on_start=lambda t0: registry.start(handle, t0))

    channel = BroadcastChannel(sc.channel_config(seed))
    verifier = Verifier(registry, observer_id=OBSERVER)
    labels: dict[int, tuple[str, str, int]] = {}

    def on_deliver(dl: Delivery) -> None:
        verdicts = verifier.receive(dl.pack, dl.t_ms)
        labels[verdicts[0].msg_id] = (dl.origin, dl.sender, dl.t_tx_ms)

    channel.attach(OBSERVER, on_deliver)
    adv = dict(sc.adversary or {})
    kind = adv.pop("kind", None)
    if kind == "replayer":
        Replayer(**adv).attach(channel)
    elif kind == "delayed_forger":
        DelayedForger(d=d, **adv).attach(channel)
    for t, raw in tx_channel.sent:
        channel.transmit(t, UAS_ID, raw)
    channel.run_until()
    records = [Record(v, *labels[v.msg_id]) for v in verifier.verdicts()]
    return SuiteResult(sc, seed, records, channel.trace, keys.params(tx.t0_ms), tx)


def _run_swarm_suite(sc: Scenario, seed: int, baseline: bool = True) -> SuiteResult:
    adv = dict(sc.adversary or {})
    attack = None
    if adv.pop("kind", None) == "ghost_fleet":
        attack = GhostAttack(**adv)
    result = run_swarm(sc.swarm_scenario(), attack, seed, with_baseline=baseline)
    records = [Record(v, GHOST if v.uas_id.startswith("GHOST") else HONEST, v.uas_id, v.arrival_ms)
               for v in result.verdicts]
    return SuiteResult(sc, seed, records, swarm=result)
