"""2-D four-agent swarm exchanging authenticated Remote ID.

Agents start on the corners of a square centred on the origin and fly to
the opposite corner. Each timestep every agent broadcasts one pack, then
picks a velocity with a sampled velocity-obstacle heuristic fed from the
positions it has received. With ``auth_mode="tbrd"`` only positions from
packs that verified ``authentic`` are used, so an agent sees its neighbours
one interval late and extrapolates them along their broadcast velocity;
with ``auth_mode="none"`` every decoded pack is used as is.

The policy: sample candidate velocities around the preferred one (toward
the goal at up to ``max_speed``) and score each as its distance from the
preferred velocity plus, for every neighbour whose predicted closest
approach within ``tau`` falls under the safety distance ``2 * radius``, a
penalty inversely proportional to the time until that distance is breached.
Ties go to the earlier sample, which is ordered right-turn first, so a
symmetric encounter resolves into a roundabout instead of a standoff.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass, field

from .. import odid
from ..odid import CodecError
from ..provision import MissionPlan, plan_mission, register_with_uss
from ..transmitter import TelemetrySample, build_beacon
from ..uss import Registry
from ..verifier import Outcome, Verifier
from .adversary import GhostFleet
from .channel import BroadcastChannel, ChannelConfig, Delivery
from .geo import LocalFrame, heading_deg, velocity

EPOCH_MS = 1_700_000_000_000
AGENT_IDS = ("SWARM00001", "SWARM00002", "SWARM00003", "SWARM00004")
OPERATOR_ID = "FAA-OP-SWARM"
OBSERVER = "observer"
COLLISION_WEIGHT = 4.0
SPEED_FRACTIONS = (1.0, 0.75, 0.5, 0.25)
ANGLE_STEP_DEG = 10


@dataclass(frozen=True)
class SwarmScenario:
    auth_mode: str = "tbrd"
    side_m: float = 40.0
    radius_m: float = 2.0
    tau_s: float = 5.0
    dt_s: float = 1.0
    max_speed_mps: float = 2.0
    max_steps: int = 120
    goal_tol_m: float = 0.5
    loss_prob: float = 0.0
    jitter_ms: int = 0

    def __post_init__(self):
        if self.auth_mode not in ("none", "tbrd"):
            raise ValueError(f"auth_mode must be 'none' or 'tbrd', not {self.auth_mode!r}")
        if self.dt_s * 1000 != int(self.dt_s * 1000) or self.dt_s <= 0:
            raise ValueError("dt_s must be a positive whole number of milliseconds")

    @property
    def t_int_ms(self) -> int:
        return int(self.dt_s * 1000)

    def starts(self) -> list[tuple[float, float]]:
        h = self.side_m / 2
        return [(-h, -h), (h, -h), (h, h), (-h, h)]

    def goals(self) -> list[tuple[float, float]]:
        return [(-x, -y) for x, y in self.starts()]


@dataclass(frozen=True)
class GhostAttack:
    count: int = 10
    spacing_m: float = 12.0


@dataclass
class Neighbour:
    t_ms: int
    x: float
    y: float
    vx: float
    vy: float


@dataclass
class Agent:
    uas_id: str
    x: float
    y: float
    goal: tuple[float, float]
    keys: tuple[bytes, ...]
    verifier: Verifier | None
    vx: float = 0.0
    vy: float = 0.0
    path: list[tuple[float, float]] = field(default_factory=list)
    known: dict[str, Neighbour] = field(default_factory=dict)
    _raw: dict[int, tuple[bytes, int]] = field(default_factory=dict, repr=False)

    def done(self, tol: float) -> bool:
        return math.hypot(self.goal[0] - self.x, self.goal[1] - self.y) <= tol


def _time_to_breach(px, py, wx, wy, safety, tau):
    """Time until |p - w t| first drops below ``safety`` within ``tau``, or None."""
    if px * px + py * py < safety * safety:
        return 0.0
    a = wx * wx + wy * wy
    if a == 0:
        return None
    b = px * wx + py * wy
    c = px * px + py * py - safety * safety
    disc = b * b - a * c
    if b <= 0 or disc < 0:
        return None
    t = (b - math.sqrt(disc)) / a
    return t if t <= tau else None


def choose_velocity(x: float, y: float, goal: tuple[float, float], neighbours: list[tuple[float, float, float, float]],
                    sc: SwarmScenario) -> tuple[float, float]:
    gx, gy = goal[0] - x, goal[1] - y
    dist = math.hypot(gx, gy)
    if dist <= sc.goal_tol_m:
        return 0.0, 0.0
    speed = min(sc.max_speed_mps, dist / sc.dt_s)
    pvx, pvy = gx / dist * speed, gy / dist * speed
    base = math.atan2(pvy, pvx)
    candidates = []
    for frac in SPEED_FRACTIONS:
        for k in range(0, 180 + ANGLE_STEP_DEG, ANGLE_STEP_DEG):
            for ang in ((-k, k) if 0 < k < 180 else (k,)):
                a = base + math.radians(ang)
                candidates.append((speed * frac * math.cos(a), speed * frac * math.sin(a)))
    candidates.append((0.0, 0.0))
    safety = 2 * sc.radius_m
    best, best_cost = (0.0, 0.0), math.inf
    for vx, vy in candidates:
        cost = math.hypot(vx - pvx, vy - pvy)
        for nx, ny, nvx, nvy in neighbours:
            t = _time_to_breach(nx - x, ny - y, vx - nvx, vy - nvy, safety, sc.tau_s)
            if t is not None:
                cost += COLLISION_WEIGHT / (t + 0.1)
        if cost < best_cost - 1e-12:
            best, best_cost = (vx, vy), cost
    return best


def _segment_min_distance(a0, a1, b0, b1) -> float:
    """Closest approach of two points moving linearly over one step."""
    px, py = b0[0] - a0[0], b0[1] - a0[1]
    wx = (b1[0] - b0[0]) - (a1[0] - a0[0])
    wy = (b1[1] - b0[1]) - (a1[1] - a0[1])
    a = wx * wx + wy * wy
    t = 0.0 if a == 0 else min(1.0, max(0.0, -(px * wx + py * wy) / a))
    return math.hypot(px + wx * t, py + wy * t)


@dataclass
class SwarmResult:
    scenario: SwarmScenario
    attack: GhostAttack | None
    paths: dict[str, list[tuple[float, float]]]
    completed: dict[str, bool]
    min_separation_m: float
    steps: int
    ghost_verdicts: dict[str, dict[str, int]]
    verdicts: list = field(default_factory=list, repr=False)
    baseline: "SwarmResult | None" = field(default=None, repr=False)

    def max_deviation(self) -> dict[str, float]:
        """Per-agent largest waypoint distance from the no-attack baseline."""
        if self.baseline is None:
            return {a: 0.0 for a in self.paths}
        return {a: path_deviation(self.paths[a], self.baseline.paths[a]) for a in self.paths}

    def metrics(self) -> dict:
        dev = self.max_deviation()
        return {
            "scenario": asdict(self.scenario),
            "attack": asdict(self.attack) if self.attack else None,
            "steps": self.steps,
            "completed": self.completed,
            "min_separation_m": self.min_separation_m,
            "max_deviation_m": dev,
            "ghost_verdicts": self.ghost_verdicts,
            "ghosts_flagged_unknown_mission": sum(
                1 for h in self.ghost_verdicts.values() if h.get(Outcome.UNKNOWN_MISSION.value, 0) > 0),
        }


def path_deviation(a: list, b: list) -> float:
    n = max(len(a), len(b))
    pad = lambda p, k: p[min(k, len(p) - 1)]  # noqa: E731
    return max(math.hypot(pad(a, k)[0] - pad(b, k)[0], pad(a, k)[1] - pad(b, k)[1]) for k in range(n))


def run_swarm(scenario: SwarmScenario = SwarmScenario(), attack: GhostAttack | None = None, seed: int = 0,
              frame: LocalFrame = LocalFrame(), with_baseline: bool = True) -> SwarmResult:
    result = _simulate(scenario, attack, seed, frame)
    if attack is not None and with_baseline:
        result.baseline = _simulate(scenario, None, seed, frame)
    return result


def _simulate(sc: SwarmScenario, attack: GhostAttack | None, seed: int, frame: LocalFrame) -> SwarmResult:
    t_int = sc.t_int_ms
    n_keys = sc.max_steps + 2
    registry = Registry()
    channel = BroadcastChannel(ChannelConfig(sc.loss_prob, sc.jitter_ms, seed))
    agents: list[Agent] = []
    for k, (uas, start, goal) in enumerate(zip(AGENT_IDS, sc.starts(), sc.goals())):
        chain_seed = hashlib.sha256(b"swarm" + struct.pack(">QI", seed, k)).digest()
        plan = MissionPlan(OPERATOR_ID, uas, EPOCH_MS, EPOCH_MS + (n_keys + 1) * t_int, t_int, 1)
        _, keys, req = plan_mission(plan, seed=chain_seed)
        registry.start(register_with_uss(req, registry), EPOCH_MS)
        verifier = Verifier(registry, observer_id=uas) if sc.auth_mode == "tbrd" else None
        agent = Agent(uas, start[0], start[1], goal, keys.keys, verifier)
        agent.path.append((agent.x, agent.y))
        agents.append(agent)
        channel.attach(uas, _make_receiver(agent, frame))

    observer = Verifier(registry, observer_id=OBSERVER)
    observed = []
    channel.attach(OBSERVER, lambda d: observed.extend(observer.receive(d.pack, d.t_ms)))

    ghosts = None
    if attack is not None:
        ghosts = GhostFleet(attack.count, EPOCH_MS, sc.max_steps + 1, attack.spacing_m, t_int, 1,
                            frame=frame, seed=seed)

    min_sep = math.inf
    steps = 0
    for step in range(sc.max_steps):
        t_step = EPOCH_MS + step * t_int
        for k, a in enumerate(agents):
            lat, lon = frame.to_latlon(a.x, a.y)
            speed = math.hypot(a.vx, a.vy)
            tel = TelemetrySample(lat, lon, 30.0, speed, heading_deg(a.vx, a.vy), 0.0, lat, lon, t_step)
            raw = odid.encode_pack(build_beacon(step + 1, tel, a.keys, 1, a.uas_id, OPERATOR_ID))
            channel.transmit(t_step + 20 + 5 * k, a.uas_id, raw)
        if ghosts is not None:
            ghosts.broadcast(channel, step + 1)
        t_decide = t_step + t_int // 2
        channel.run_until(t_decide)
        if all(a.done(sc.goal_tol_m) for a in agents):
            break
        moves = []
        for a in agents:
            neigh = []
            for uas, nb in sorted(a.known.items()):
                if uas == a.uas_id:
                    continue
                # positions only change at decision instants, so age is counted in whole steps
                age = (t_decide - nb.t_ms) // t_int * sc.dt_s
                neigh.append((nb.x + nb.vx * age, nb.y + nb.vy * age, nb.vx, nb.vy))
            moves.append(choose_velocity(a.x, a.y, a.goal, neigh, sc))
        before = [(a.x, a.y) for a in agents]
        for a, (vx, vy) in zip(agents, moves):
            a.vx, a.vy = vx, vy
            a.x += vx * sc.dt_s
            a.y += vy * sc.dt_s
            a.path.append((a.x, a.y))
        after = [(a.x, a.y) for a in agents]
        for p in range(len(agents)):
            for q in range(p + 1, len(agents)):
                min_sep = min(min_sep, _segment_min_distance(before[p], after[p], before[q], after[q]))
        steps = step + 1
    channel.run_until()

    ghost_hist: dict[str, dict[str, int]] = {}
    if attack is not None:
        for v in observer.verdicts():
            if v.uas_id.startswith("GHOST"):
                h = ghost_hist.setdefault(v.uas_id, {})
                h[v.outcome.value] = h.get(v.outcome.value, 0) + 1
    return SwarmResult(sc, attack, {a.uas_id: a.path for a in agents},
                       {a.uas_id: a.done(sc.goal_tol_m) for a in agents}, min_sep, steps, ghost_hist,
                       observer.verdicts())


def _make_receiver(agent: Agent, frame: LocalFrame):
    def learn(raw: bytes, arrival_ms: int) -> None:
        try:
            p = odid.decode_pack(raw)
        except CodecError:
            return
        x, y = frame.to_xy(p.location.lat_deg, p.location.lon_deg)
        vx, vy = velocity(p.location.speed_mps, p.location.direction_deg)
        agent.known[p.basic.uas_id] = Neighbour(arrival_ms, x, y, vx, vy)

    def on_deliver(d: Delivery) -> None:
        if agent.verifier is None:
            learn(d.pack, d.t_ms)
            return
        verdicts = agent.verifier.receive(d.pack, d.t_ms)
        agent._raw[verdicts[0].msg_id] = (d.pack, d.t_ms)
        for v in verdicts:
            if v.outcome.terminal:
                raw, arrival = agent._raw.pop(v.msg_id, (None, 0))
                if raw is not None and v.outcome is Outcome.AUTHENTIC:
                    learn(raw, arrival)

    return on_deliver
