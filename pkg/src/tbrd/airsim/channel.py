"""Seeded discrete-event broadcast channel.

Every attached receiver hears every transmission except its own, subject to
i.i.d. loss and uniform jitter. Each (sender, receiver) link draws from its
own RNG, seeded from the channel seed and the two names, so adding a sender
or receiver never perturbs the randomness seen on the other links.

Taps model an adversary sitting next to the transmitters: they hear every
transmission losslessly at its transmit time.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

HONEST = "honest"


@dataclass(frozen=True)
class ChannelConfig:
    loss_prob: float = 0.0
    jitter_ms: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"loss_prob {self.loss_prob} outside [0, 1]")
        if self.jitter_ms < 0:
            raise ValueError("jitter_ms must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class Delivery:
    t_ms: int
    receiver: str
    sender: str
    pack: bytes
    origin: str = HONEST
    t_tx_ms: int = 0


Tap = Callable[[int, str, bytes, str, "BroadcastChannel"], None]


class Adversary(Protocol):
    name: str

    def attach(self, channel: "BroadcastChannel") -> None: ...


def link_rng(seed: int, sender: str, receiver: str) -> random.Random:
    h = hashlib.sha256(f"{seed}|{sender}|{receiver}".encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


class BroadcastChannel:
    def __init__(self, config: ChannelConfig = ChannelConfig()):
        self.config = config
        self.now_ms = 0
        self.trace: list[Delivery] = []
        self._receivers: dict[str, Callable[[Delivery], None]] = {}
        self._taps: list[Tap] = []
        self._links: dict[tuple[str, str], random.Random] = {}
        self._queue: list = []
        self._seq = itertools.count()

    def attach(self, name: str, on_deliver: Callable[[Delivery], None] | None = None) -> None:
        if name in self._receivers:
            raise ValueError(f"receiver {name!r} already attached")
        self._receivers[name] = on_deliver or (lambda d: None)

    def tap(self, fn: Tap) -> None:
        self._taps.append(fn)

    def transmit(self, t_ms: int, sender: str, pack: bytes, origin: str = HONEST) -> None:
        self._push(t_ms, ("tx", sender, bytes(pack), origin))

    def schedule(self, t_ms: int, fn: Callable[[int], None]) -> None:
        self._push(t_ms, ("call", fn))

    def run_until(self, t_ms: int | None = None) -> None:
        """Process every event at or before ``t_ms`` (all events if None)."""
        while self._queue and (t_ms is None or self._queue[0][0] <= t_ms):
            t, _, event = heapq.heappop(self._queue)
            self.now_ms = t
            if event[0] == "tx":
                self._fanout(t, *event[1:])
            elif event[0] == "rx":
                d = event[1]
                self.trace.append(d)
                self._receivers[d.receiver](d)
            else:
                event[1](t)
        if t_ms is not None:
            self.now_ms = max(self.now_ms, t_ms)

    def _push(self, t_ms: int, event) -> None:
        if t_ms < self.now_ms:
            raise ValueError(f"cannot schedule at {t_ms}, channel time is {self.now_ms}")
        heapq.heappush(self._queue, (t_ms, next(self._seq), event))

    def _link(self, sender: str, receiver: str) -> random.Random:
        key = (sender, receiver)
        if key not in self._links:
            self._links[key] = link_rng(self.config.seed, sender, receiver)
        return self._links[key]

    def _fanout(self, t: int, sender: str, pack: bytes, origin: str) -> None:
        cfg = self.config
        for name in sorted(self._receivers):
            if name == sender:
                continue
            rng = self._link(sender, name)
            # draw both numbers every time so one link's stream never depends on outcomes
            lost = rng.random() < cfg.loss_prob
            delay = rng.randint(0, cfg.jitter_ms)
            if not lost:
                self._push(t + delay, ("rx", Delivery(t + delay, name, sender, pack, origin, t)))
        for tap in self._taps:
            tap(t, sender, pack, origin, self)


@dataclass
class ScriptEntry:
    t_ms: int
    sender: str
    pack: bytes
    origin: str = field(default=HONEST)


def run_channel(script: Iterable, config: ChannelConfig = ChannelConfig(),
                receivers: Iterable[str] = ("observer",),
                adversaries: Iterable[Adversary] = ()) -> list[Delivery]:
    """Deliver a transmit script; returns the delivery trace in time order.

    Script entries are ``(t_ms, sender, pack)`` or ``(t_ms, sender, pack, origin)``
    with non-decreasing times.
    """
    ch = BroadcastChannel(config)
    for r in receivers:
        ch.attach(r)
    for adv in adversaries:
        adv.attach(ch)
    last = None
    for entry in script:
        e = ScriptEntry(*entry)
        if last is not None and e.t_ms < last:
            raise ValueError("script times must be non-decreasing")
        last = e.t_ms
        ch.transmit(e.t_ms, e.sender, e.pack, e.origin)
    ch.run_until()
    return ch.trace
