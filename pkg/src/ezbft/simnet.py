"""Deterministic discrete-event network hosting replicas and clients.

Time is virtual and measured in integer microseconds.  Events are ordered by
``(time, rank, insertion)``: at equal timestamps message deliveries run
before timers, and timers before workload submissions, which makes
"the reply and the timeout arrive together" resolve in favour of the reply.
Links are FIFO; jitter and probabilistic drops come from one seeded RNG, so a
scenario and a seed fully determine the trace.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .client import Client, Delivery
from .crypto import NodeId, NodeKind, client as client_id, replica as replica_id
from .effects import Broadcast, CancelTimer, Deliver, Effect, Send, SetTimer
from .kv import Command
from .messages import decode, encode, kind_name
from .monitor import SafetyMonitor
from .replica import Replica

# event ranks at equal timestamps
DELIVER, TIMER, SUBMIT = 0, 1, 2

FAULT_KINDS = ("crash", "mute", "drop", "delay", "partition", "equivocate", "lie-deps")
# kinds that make the target replica faulty (count against f)
FAULTY_KINDS = frozenset({"crash", "mute", "drop", "equivocate", "lie-deps"})


@dataclass(frozen=True)
class Fault:
    """One scripted fault.  Times are microseconds; ``end`` None means forever.

    ``crash``: the target stops at ``start``.  ``mute``: the target's outbound
    traffic is dropped in [start, end).  ``drop``: each outbound message is
    dropped with probability ``prob``.  ``delay``: outbound messages whose kind
    matches ``pattern`` ("*" for all) get ``extra`` added.  ``partition``:
    traffic between ``group`` and the other nodes sent in [start, end) is held
    until ``end``.  ``equivocate`` and ``lie-deps`` select replica wrappers.
    """

    kind: str
    target: Optional[NodeId] = None
    start: int = 0
    end: Optional[int] = None
    prob: float = 0.0
    extra: int = 0
    pattern: str = "*"
    strategy: str = "echo"
    group: frozenset[int] = frozenset()
    honest: int = 1

    def active(self, now: int) -> bool:
        return self.start <= now and (self.end is None or now < self.end)


class ScenarioError(ValueError):
    """The scenario violates a model assumption and is rejected before running."""


@dataclass
class LatencyModel:
    """One-way delays between sites plus bounded uniform jitter.

    Every node sits at a site; replica i sits at site i and a client sits at
    the site of the replica it is co-located with, so co-located pairs have
    zero delay.  Jitter only applies to pairs at different sites.
    """

    matrix: Sequence[Sequence[int]]
    locations: dict[NodeId, int] = field(default_factory=dict)
    jitter: int = 0

    def __post_init__(self) -> None:
        n = len(self.matrix)
        for row in self.matrix:
            if len(row) != n:
                raise ScenarioError("latency matrix must be square")
            if any(d < 0 for d in row):
                raise ScenarioError("latency matrix entries must be non-negative")
        if self.jitter < 0:
            raise ScenarioError("jitter must be non-negative")

    def site(self, node: NodeId) -> int:
        if node.kind is NodeKind.REPLICA:
            return node.index
        return self.locations[node]

    def base(self, src: NodeId, dst: NodeId) -> int:
        return self.matrix[self.site(src)][self.site(dst)]

    def max_delay(self) -> int:
        return max(max(row) for row in self.matrix)


class TraceLog:
    """Line-delimited event records: ``time kind src dst msg-kind instance detail``."""

    def __init__(self) -> None:
        self.lines: list[str] = []

    def add(self, time: int, kind: str, src, dst, msg_kind: str = "-", instance=None, detail: str = "") -> int:
        inst = "-" if instance is None else str(instance)
        line = f"{time} {kind} {src} {dst} {msg_kind} {inst}"
        if detail:
            line += " " + detail
        self.lines.append(line)
        return len(self.lines)

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines:
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()


@dataclass
class Submission:
    client: NodeId
    t: int
    command: Command
    time: int
    line: int


@dataclass
class DeliveryRecord:
    delivery: Delivery
    steps: int


def _instance_of(msg):
    return getattr(msg, "instance", None)


class Simulator:
    """Runs replica and client state machines over a simulated network.

    ``next_command(client_index, now)`` is the closed-loop workload: it is
    called once at ``start_times`` and after every delivery, and returns the
    next command (or None when the client is finished).
    """

    def __init__(
        self,
        n: int,
        f: int,
        replicas: Sequence[Replica],
        clients: Sequence[Client],
        latency: LatencyModel,
        next_command: Callable[[int, int], Optional[Command]],
        start_times: Optional[dict[int, int]] = None,
        faults: Iterable[Fault] = (),
        seed: int = 0,
        wire: bool = True,
        allow_excess_faults: bool = False,
    ) -> None:
        self.n, self.f = n, f
        self.replicas = list(replicas)
        self.clients = list(clients)
        self.latency = latency
        self.next_command = next_command
        self.faults = list(faults)
        self.rng_seed = seed
        self.rng = random.Random(seed)
        self.wire = wire
        self.now = 0
        self.trace = TraceLog()
        self._heap: list = []
        self._counter = 0
        self._timers: dict[tuple[NodeId, object], int] = {}
        self._link_clock: dict[tuple[NodeId, NodeId], int] = {}
        self._client_hop: dict[int, int] = {}
        self.submissions: list[Submission] = []
        self.deliveries: list[DeliveryRecord] = []
        self.messages_sent = 0
        self.messages_dropped = 0
        self.sent_by_kind: dict[str, int] = {}
        self.faulty = self._validate(allow_excess_faults)
        self.submitted_ids: set = set()
        self.monitor = SafetyMonitor([i for i in range(n) if i not in self.faulty], self.submitted_ids)
        for c, start in sorted((start_times or {i: 0 for i in range(len(self.clients))}).items()):
            self._push(start, SUBMIT, ("submit", c))

    # -- validation -------------------------------------------------------

    def _validate(self, allow_excess: bool) -> frozenset[int]:
        if self.n != 3 * self.f + 1:
            raise ScenarioError(f"N must equal 3f+1 (N={self.n}, f={self.f})")
        if len(self.replicas) != self.n or len(self.latency.matrix) < self.n:
            raise ScenarioError("replica count and latency matrix must match N")
        for c in self.clients:
            if c.node not in self.latency.locations:
                raise ScenarioError(f"client {c.node} has no location")
        faulty = set()
        for fault in self.faults:
            if fault.kind not in FAULT_KINDS:
                raise ScenarioError(f"unknown fault kind {fault.kind!r}")
            if fault.kind in FAULTY_KINDS:
                if fault.target is None or not fault.target.is_replica or fault.target.index >= self.n:
                    raise ScenarioError(f"fault {fault.kind} needs a replica target")
                faulty.add(fault.target.index)
        if len(faulty) > self.f and not allow_excess:
            raise ScenarioError(f"{len(faulty)} faulty replicas exceed f={self.f}")
        return frozenset(faulty)

    @property
    def out_of_model(self) -> bool:
        return len(self.faulty) > self.f

    # -- event queue ------------------------------------------------------

    def _push(self, time: int, rank: int, event) -> None:
        self._counter += 1
        heapq.heappush(self._heap, (time, rank, self._counter, event))

    def crashed(self, node: NodeId) -> bool:
        return any(
            f.kind == "crash" and f.target == node and f.start <= self.now for f in self.faults
        )

    # -- sending ----------------------------------------------------------

    def _send(self, src: NodeId, dst: NodeId, msg, hop: int) -> None:
        kind = kind_name(msg)
        self.messages_sent += 1
        self.sent_by_kind[kind] = self.sent_by_kind.get(kind, 0) + 1
        delay = self.latency.base(src, dst)
        for fault in self.faults:
            if fault.target != src or not fault.active(self.now):
                continue
            if fault.kind == "mute" or (fault.kind == "drop" and self.rng.random() < fault.prob):
                self.messages_dropped += 1
                self.trace.add(self.now, "drop", src, dst, kind, _instance_of(msg), f"fault={fault.kind}")
                return
            if fault.kind == "delay" and fault.pattern in ("*", kind):
                delay += fault.extra
        if self.latency.jitter and delay > 0:
            delay += self.rng.randint(0, self.latency.jitter)
        at = self.now + delay
        for fault in self.faults:
            if fault.kind == "partition" and fault.active(self.now) and fault.end is not None:
                src_in = self.latency.site(src) in fault.group
                dst_in = self.latency.site(dst) in fault.group
                if src_in != dst_in:
                    at = max(at, fault.end + delay)
        link = (src, dst)
        at = max(at, self._link_clock.get(link, 0))
        self._link_clock[link] = at
        if self.wire:
            data = encode(msg)
            msg = decode(data)
        self._push(at, DELIVER, ("deliver", src, dst, msg, hop))

    def _apply(self, node: NodeId, effects: list[Effect], hop: int) -> None:
        for e in effects:
            if isinstance(e, Send):
                self._send(node, e.dst, e.msg, hop + 1)
            elif isinstance(e, Broadcast):
                for r in range(self.n):
                    if node.is_replica and r == node.index and not e.include_self:
                        continue
                    self._send(node, replica_id(r), e.msg, hop + 1)
            elif isinstance(e, SetTimer):
                key = (node, e.key)
                self._counter += 1
                gen = self._counter
                self._timers[key] = gen
                self._push(self.now + e.delay, TIMER, ("timer", node, e.key, gen, hop))
            elif isinstance(e, CancelTimer):
                self._timers.pop((node, e.key), None)
            elif isinstance(e, Deliver):
                self._on_delivery(e.delivery, hop)

    # -- handlers ---------------------------------------------------------

    def _on_delivery(self, d: Delivery, hop: int) -> None:
        self.deliveries.append(DeliveryRecord(d, hop))
        self.trace.add(
            self.now, "deliver", d.client, "-", "-", d.instance,
            f"t={d.t} path={d.path} steps={hop} rep={d.rep}",
        )
        self._submit(d.client.index)

    def _submit(self, c: int) -> None:
        cmd = self.next_command(c, self.now)
        if cmd is None:
            return
        cl = self.clients[c]
        self._client_hop[c] = 0
        effects = cl.submit(cmd, self.now)
        line = self.trace.add(self.now, "submit", cl.node, "-", "-", None, f"t={cl.t} cmd={cmd}")
        self.submissions.append(Submission(cl.node, cl.t, cmd, self.now, line))
        self.submitted_ids.add((cl.node, cl.t))
        self._apply(cl.node, effects, 0)

    def _deliver(self, src: NodeId, dst: NodeId, msg, hop: int) -> None:
        kind = kind_name(msg)
        if self.crashed(dst):
            self.trace.add(self.now, "lost", src, dst, kind, _instance_of(msg), "crashed")
            return
        line = self.trace.add(self.now, "recv", src, dst, kind, _instance_of(msg), f"hop={hop}")
        if dst.is_replica:
            r = self.replicas[dst.index]
            effects = r.handle(src, msg, self.now)
            self._drain(r, line)
        else:
            self._client_hop[dst.index] = max(self._client_hop.get(dst.index, 0), hop)
            effects = self.clients[dst.index].handle(msg, self.now)
        self._apply(dst, effects, hop)

    def _timer(self, node: NodeId, key, gen: int, hop: int) -> None:
        del self._timers[(node, key)]
        if self.crashed(node):
            return
        line = self.trace.add(self.now, "timer", node, node, "-", None, str(key))
        if node.is_replica:
            r = self.replicas[node.index]
            effects = r.on_timer(key, self.now)
            self._drain(r, line)
        else:
            hop = self._client_hop.get(node.index, 0)
            effects = self.clients[node.index].on_timer(key, self.now)
        self._apply(node, effects, hop)

    def _drain(self, r: Replica, line: int) -> None:
        if r.events:
            for event in r.events:
                self.monitor.observe(r.index, event, self.now, line)
            r.events.clear()

    # -- main loop --------------------------------------------------------

    def step(self) -> bool:
        if not self._heap:
            return False
        time, _, _, event = heapq.heappop(self._heap)
        kind = event[0]
        if kind == "timer" and self._timers.get((event[1], event[2])) != event[3]:
            return True  # cancelled or superseded; does not advance the clock
        self.now = time
        if kind == "deliver":
            self._deliver(*event[1:])
        elif kind == "timer":
            self._timer(*event[1:])
        elif kind == "submit":
            self._submit(event[1])
        return True

    def run(self, time_limit: Optional[int] = None) -> "Simulator":
        while self._heap:
            if time_limit is not None and self._heap[0][0] > time_limit:
                break
            self.step()
        if time_limit is not None and self._heap:
            self.now = time_limit
        return self

    @property
    def quiescent(self) -> bool:
        return not self._heap
