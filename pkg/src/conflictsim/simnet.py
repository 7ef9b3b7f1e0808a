"""Deterministic discrete-event engine with a logical millisecond clock.

Events fire in (fire_at, seq) order, where seq is the insertion counter, so
equal-time events resolve in schedule order and a whole run is a pure
function of (scenario, seed).  "Races" between orderers come from seeded
jitter delays, not from wall-clock nondeterminism.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import TimeInPastError, UnknownNodeError

SimTime = int

# Event kinds recorded in traces.
SUBMIT = "submit"
DELIVER = "deliver"
ORDER_TICK = "order-tick"
COMMIT = "commit"
TIMEOUT = "timeout"
ATTACK_PHASE = "attack-phase"


@dataclass(frozen=True)
class Event:
    fire_at: SimTime
    seq: int
    kind: str
    target: str
    payload: Any = None


@dataclass
class NodeConfig:
    id: str
    role: str = "peer"  # client | peer | orderer
    channels: frozenset[str] = frozenset(("main",))
    is_adversary: bool = False
    # Fixed per-cycle processing cost added on top of drawn jitter.
    processing_delay: SimTime = 0
    # Client-to-service submission latency override (falls back to topology
    # default when None).
    latency: SimTime | None = None


@dataclass
class Topology:
    nodes: list[NodeConfig] = field(default_factory=list)
    links: dict[tuple[str, str], SimTime] = field(default_factory=dict)
    default_latency: SimTime = 5

    def __post_init__(self):
        self._by_id = {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> NodeConfig:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._by_id

    def add_node(self, node: NodeConfig) -> None:
        self.nodes.append(node)
        self._by_id[node.id] = node

    def latency(self, src: str, dst: str) -> SimTime:
        link = self.links.get((src, dst))
        if link is None:
            link = self.links.get((dst, src))
        if link is not None:
            return link
        src_node = self._by_id.get(src)
        if src_node is not None and src_node.latency is not None:
            return src_node.latency
        return self.default_latency

    def orderers(self, channel: str) -> list[NodeConfig]:
        return [
            n for n in self.nodes if n.role == "orderer" and channel in n.channels
        ]

    def validate(self) -> None:
        seen: set[str] = set()
        for node in self.nodes:
            if not node.id:
                raise ValueError("node id must be non-empty")
            if node.id in seen:
                raise ValueError(f"duplicate node id {node.id}")
            seen.add(node.id)
        for (a, b), delay in self.links.items():
            if delay <= 0:
                raise ValueError(f"link {a}->{b} latency must be positive")
        if self.default_latency <= 0:
            raise ValueError("default latency must be positive")


class Engine:
    """Single-threaded event loop. One instance per trial."""

    def __init__(self, seed: int = 0, topology: Topology | None = None,
                 record_trace: bool = False):
        self.now: SimTime = 0
        self.rng = random.Random(seed)
        self.topology = topology or Topology()
        self._heap: list[tuple[SimTime, int, str, str, Any, Callable | None]] = []
        self._seq = 0
        self.record_trace = record_trace
        self.trace: list[tuple[SimTime, int, str, str]] = []
        # Adversary-injected extra delay per directed link.
        self._injected: dict[tuple[str, str], SimTime] = {}
        self.last_event_time: SimTime = 0

    # -- scheduling -------------------------------------------------------

    def schedule(self, event: Event) -> None:
        """Enqueue a pre-built event; its seq is reassigned on insertion."""
        self.schedule_call(event.fire_at, event.kind, event.target,
                           payload=event.payload)

    def schedule_call(
        self,
        fire_at: SimTime,
        kind: str,
        target: str,
        fn: Callable[["Engine", Any], None] | None = None,
        payload: Any = None,
    ) -> int:
        if fire_at < self.now:
            raise TimeInPastError(
                f"cannot schedule {kind} at {fire_at}, now is {self.now}"
            )
        self._seq += 1
        heapq.heappush(self._heap, (fire_at, self._seq, kind, target, payload, fn))
        return self._seq

    def send(
        self,
        src: str,
        dst: str,
        fn: Callable[["Engine", Any], None] | None = None,
        payload: Any = None,
        extra_delay: SimTime = 0,
    ) -> SimTime:
        """Schedule a deliver event after the link latency (plus injections)."""
        topo = self.topology
        topo.node(src)
        topo.node(dst)
        delay = topo.latency(src, dst) + self._injected.get((src, dst), 0)
        at = self.now + delay + extra_delay
        self.schedule_call(at, DELIVER, dst, fn, payload)
        return at

    def inject_link_delay(self, src: str, dst: str, extra: SimTime) -> None:
        self._injected[(src, dst)] = extra

    # -- execution --------------------------------------------------------

    def run_until(self, deadline: SimTime) -> SimTime:
        if deadline < self.now:
            raise TimeInPastError(f"deadline {deadline} is before now {self.now}")
        heap = self._heap
        trace = self.trace
        recording = self.record_trace
        while heap and heap[0][0] <= deadline:
            fire_at, seq, kind, target, payload, fn = heapq.heappop(heap)
            self.now = fire_at
            self.last_event_time = fire_at
            if recording:
                trace.append((fire_at, seq, kind, target))
            if fn is not None:
                fn(self, payload)
        self.now = deadline
        return self.now

    def pending_events(self) -> int:
        return len(self._heap)
