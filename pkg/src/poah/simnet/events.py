"""Seeded discrete-event queue, link latency models and broadcast delivery."""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

LATENCY_KINDS = ("constant", "uniform", "normal")


@dataclass(frozen=True)
class LatencyModel:
    """Millisecond delay distribution.

    ``constant`` uses ``a``; ``uniform`` draws from [a, b]; ``normal`` has mean
    ``a`` and standard deviation ``b`` and is clipped at zero.
    """

    kind: str = "constant"
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in LATENCY_KINDS:
            raise ValueError(f"unknown latency kind {self.kind!r}; expected one of {LATENCY_KINDS}")
        if self.kind == "constant" and self.a < 0:
            raise ValueError("constant latency must be >= 0")
        if self.kind == "uniform" and not 0 <= self.a <= self.b:
            raise ValueError("uniform latency needs 0 <= lo <= hi")
        if self.kind == "normal" and self.b < 0:
            raise ValueError("normal latency needs std >= 0")

    @classmethod
    def parse(cls, text) -> LatencyModel:
        """Parse ``"uniform:100:200"``, ``"normal:150:20"``, ``"constant:100"`` or a bare number."""
        if isinstance(text, LatencyModel):
            return text
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            return cls("constant", float(text))
        parts = str(text).strip().split(":")
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError:
            raise ValueError(f"bad latency spec {text!r}") from None
        kind = parts[0]
        expected = {"constant": 1, "uniform": 2, "normal": 2}.get(kind)
        if expected is None:
            raise ValueError(f"unknown latency kind in {text!r}")
        if len(nums) != expected:
            raise ValueError(f"{kind} latency takes {expected} parameter(s): {text!r}")
        return cls(kind, *nums)

    def sample(self, rng: random.Random) -> int:
        if self.kind == "constant":
            return round(self.a)
        if self.kind == "uniform":
            return round(rng.uniform(self.a, self.b))
        return max(0, round(rng.gauss(self.a, self.b)))

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return (self.a + self.b) / 2
        return self.a

    def __str__(self) -> str:
        def fmt(v):
            return str(int(v)) if float(v).is_integer() else repr(v)

        if self.kind == "constant":
            return f"constant:{fmt(self.a)}"
        return f"{self.kind}:{fmt(self.a)}:{fmt(self.b)}"


@dataclass(frozen=True)
class AdversaryConfig:
    forge_rate: float = 0.0
    spoof_mac_rate: float = 0.0
    fake_authentication_rate: float = 0.0
    tamper_history_rate: float = 0.0
    # trusted nodes that fake-authenticate; defaults to the first trusted node
    compromised: Optional[Tuple[str, ...]] = None

    def errors(self) -> List[Tuple[str, str]]:
        errs = []
        for name in ("forge_rate", "spoof_mac_rate", "fake_authentication_rate", "tamper_history_rate"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                errs.append((name, f"must be in [0, 1], got {value!r}"))
        if not errs and self.forge_rate + self.spoof_mac_rate > 1.0:
            errs.append(("spoof_mac_rate", "forge_rate + spoof_mac_rate must not exceed 1"))
        return errs


@dataclass(order=True)
class SimEvent:
    deliver_at: int
    sequence_no: int = 0
    destination: str = field(default="", compare=False)
    message: Any = field(default=None, compare=False)
    source: Optional[str] = field(default=None, compare=False)
    # local timers are not network traffic and are left out of send accounting
    local: bool = field(default=False, compare=False)


class Network:
    """Single-threaded event loop with integer-millisecond clock.

    Events are ordered by (deliver_at, sequence_no); sequence numbers are handed
    out at insertion, so equal-time events fire in insertion order.
    """

    def __init__(
        self,
        node_ids: Iterable[str],
        latency: LatencyModel = LatencyModel(),
        rng: Optional[random.Random] = None,
        loss_rate: float = 0.0,
        link_latency: Optional[Dict[Tuple[str, str], LatencyModel]] = None,
    ):
        if not 0.0 <= loss_rate <= 1.0:
            raise ValueError("loss_rate must be in [0, 1]")
        self.node_ids = list(node_ids)
        self.latency = latency
        self.rng = rng or random.Random(0)
        self.loss_rate = loss_rate
        self.link_latency = dict(link_latency or {})
        self.clock = 0
        self._queue: List[Tuple[int, int, SimEvent]] = []
        self._seq = itertools.count()
        self.sent = 0
        self.lost = 0
        self.delivered = 0
        self.local_events = 0

    def schedule(self, event: SimEvent) -> SimEvent:
        if event.deliver_at < self.clock:
            raise ValueError(f"cannot schedule at {event.deliver_at} before clock {self.clock}")
        event.sequence_no = next(self._seq)
        # plain tuples compare much faster than dataclass instances
        heapq.heappush(self._queue, (event.deliver_at, event.sequence_no, event))
        return event

    def schedule_local(self, at: int, destination: str, message) -> SimEvent:
        return self.schedule(SimEvent(at, destination=destination, message=message, local=True))

    def link_model(self, source: str, destination: str) -> LatencyModel:
        return self.link_latency.get((source, destination), self.latency)

    def send(self, source: str, destination: str, message, at: int) -> Optional[SimEvent]:
        self.sent += 1
        if self.loss_rate > 0.0 and self.rng.random() < self.loss_rate:
            self.lost += 1
            return None
        delay = self.link_model(source, destination).sample(self.rng)
        return self.schedule(SimEvent(at + delay, destination=destination, message=message, source=source))

    def broadcast(self, source: str, message, at: int) -> List[SimEvent]:
        if source not in self.node_ids:
            raise KeyError(f"unknown sender {source!r}")
        events = []
        for dest in self.node_ids:
            if dest != source:
                ev = self.send(source, dest, message, at)
                if ev is not None:
                    events.append(ev)
        return events

    def pending(self) -> int:
        return len(self._queue)

    def pop(self) -> SimEvent:
        event = heapq.heappop(self._queue)[2]
        self.clock = event.deliver_at
        if event.local:
            self.local_events += 1
        else:
            self.delivered += 1
        return event

    def run(self, handler: Callable[[SimEvent], None], until: Optional[int] = None) -> int:
        """Deliver events to ``handler`` until the queue drains (or ``until``)."""
        count = 0
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                break
            handler(self.pop())
            count += 1
        return count
