"""Dependency-graph ordering and execution.

Edges point from a command to its dependencies.  Strongly connected
components are found with an iterative Tarjan pass, the condensation is
traversed dependencies-first, and ties between independent components as
well as the order inside a component are decided by ``(seq, space, slot)``
only, so the output never depends on traversal order.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence, TypeVar

from .kv import Command, KVState, Mode, Reply
from .messages import CommandStatus, InstanceId

N = TypeVar("N", bound=Hashable)


def strongly_connected_components(
    nodes: Iterable[N], successors: Callable[[N], Iterable[N]]
) -> list[list[N]]:
    """Tarjan's algorithm without recursion.

    Components are returned so that every component comes after all the
    components it can reach (sinks first).
    """
    index: dict[N, int] = {}
    low: dict[N, int] = {}
    on_stack: set[N] = set()
    stack: list[N] = []
    out: list[list[N]] = []
    counter = 0

    for root in nodes:
        if root in index:
            continue
        work: list[tuple[N, Iterable[N]]] = [(root, iter(successors(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(successors(w))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
    return out


def order_key(iid: InstanceId, seq: int) -> tuple[int, int, int]:
    return (seq, iid.space, iid.slot)


def linearize(
    nodes: Iterable[InstanceId],
    deps: Mapping[InstanceId, Iterable[InstanceId]],
    seq: Mapping[InstanceId, int],
) -> list[InstanceId]:
    """Deterministic total order of ``nodes``, dependencies first.

    Edges to instances outside ``nodes`` are ignored.
    """
    members = sorted(set(nodes))
    member_set = set(members)

    def succ(v: InstanceId) -> list[InstanceId]:
        return sorted(d for d in deps.get(v, ()) if d in member_set)

    comps = strongly_connected_components(members, succ)
    comp_of: dict[InstanceId, int] = {}
    for ci, comp in enumerate(comps):
        comp.sort(key=lambda i: order_key(i, seq[i]))
        for v in comp:
            comp_of[v] = ci

    # dependents[c] = components that depend on c; pending[c] = unresolved deps of c
    pending = [0] * len(comps)
    dependents: list[set[int]] = [set() for _ in comps]
    for ci, comp in enumerate(comps):
        targets = {comp_of[d] for v in comp for d in succ(v)} - {ci}
        pending[ci] = len(targets)
        for t in targets:
            dependents[t].add(ci)

    heap = [(order_key(comps[ci][0], seq[comps[ci][0]]), ci) for ci in range(len(comps)) if pending[ci] == 0]
    heapq.heapify(heap)
    order: list[InstanceId] = []
    while heap:
        _, ci = heapq.heappop(heap)
        order.extend(comps[ci])
        for dep in sorted(dependents[ci]):
            pending[dep] -= 1
            if pending[dep] == 0:
                heapq.heappush(heap, (order_key(comps[dep][0], seq[comps[dep][0]]), dep))
    return order


@dataclass
class Record:
    """Per-instance protocol state held by a replica."""

    instance: InstanceId
    request: "RequestMsg"  # noqa: F821
    owner: int
    deps: frozenset[InstanceId]
    seq: int
    status: CommandStatus = CommandStatus.PRE_ACCEPTED
    spec_rep: Reply = None
    final_rep: Reply = None
    spec_order: Optional["SpecOrderMsg"] = None  # noqa: F821
    own_reply: Optional["SpecReplyMsg"] = None  # noqa: F821
    commit: Optional[object] = None
    reply_on_final: bool = False

    @property
    def command(self) -> Command:
        return self.request.command

    @property
    def command_id(self):
        return self.request.command_id

    @property
    def committed(self) -> bool:
        return self.status.committed


@dataclass
class DepGraph:
    nodes: set[InstanceId]
    deps: dict[InstanceId, frozenset[InstanceId]]
    seq: dict[InstanceId, int]

    def edges(self) -> list[tuple[InstanceId, InstanceId]]:
        return sorted((a, b) for a in self.nodes for b in self.deps[a] if b in self.nodes)

    def linearize(self) -> list[InstanceId]:
        return linearize(self.nodes, self.deps, self.seq)


@dataclass
class ExecutionEngine:
    """Speculative and final execution over one replica's records.

    ``is_void`` reports instances known never to commit (slots of a frozen
    instance space outside the new owner's selected history); they count as
    satisfied dependencies and are never executed.
    """

    records: dict[InstanceId, Record]
    state: KVState = field(default_factory=KVState)
    partial_rollback: bool = True
    is_void: Callable[[InstanceId], bool] = lambda _: False
    executed: list[InstanceId] = field(default_factory=list)
    final_by_command: dict = field(default_factory=dict)
    spec_by_command: dict = field(default_factory=dict)
    rollbacks: int = 0

    # -- speculative ------------------------------------------------------

    def execute_speculative(self, iid: InstanceId) -> Reply:
        rec = self.records[iid]
        if rec.status is not CommandStatus.PRE_ACCEPTED:
            return rec.spec_rep
        cid = rec.command_id
        if cid in self.final_by_command:
            rep = self.final_by_command[cid]
        elif cid in self.spec_by_command:
            rep = self.spec_by_command[cid]
        else:
            rep = self.state.apply(rec.command, Mode.SPECULATIVE, iid)
            self.spec_by_command[cid] = rep
        rec.spec_rep = rep
        rec.status = CommandStatus.SPEC_EXECUTED
        return rep

    def discard_speculative(self, iids: Iterable[InstanceId]) -> None:
        if self.state.discard(iids):
            self.rollbacks += 1

    # -- final ------------------------------------------------------------

    def _satisfied(self, iid: InstanceId) -> bool:
        rec = self.records.get(iid)
        if rec is not None and rec.status is CommandStatus.FINALLY_EXECUTED:
            return True
        return self.is_void(iid)

    def closure(self, iid: InstanceId) -> Optional[set[InstanceId]]:
        """Unexecuted instances reachable from ``iid``, or None if any is uncommitted."""
        seen: set[InstanceId] = set()
        todo = [iid]
        while todo:
            v = todo.pop()
            if v in seen or self._satisfied(v):
                continue
            rec = self.records.get(v)
            if rec is None or not rec.committed:
                return None
            seen.add(v)
            todo.extend(rec.deps)
        return seen

    def ready_for_final(self, iid: InstanceId) -> bool:
        rec = self.records.get(iid)
        if rec is None or not rec.committed:
            return False
        return self.closure(iid) is not None

    def graph(self, nodes: Iterable[InstanceId]) -> DepGraph:
        nodes = set(nodes)
        return DepGraph(
            nodes,
            {v: self.records[v].deps for v in nodes},
            {v: self.records[v].seq for v in nodes},
        )

    def execute_final(self, iid: InstanceId) -> list[Record]:
        """Finally execute ``iid`` and every unexecuted dependency, in order.

        Returns the records executed by this call (empty when not ready or
        already executed).
        """
        rec = self.records.get(iid)
        if rec is None or rec.status is CommandStatus.FINALLY_EXECUTED:
            return []
        nodes = self.closure(iid)
        if not nodes:
            return []
        done = []
        for v in self.graph(nodes).linearize():
            done.append(self._apply_final(self.records[v]))
        return done

    def _apply_final(self, rec: Record) -> Record:
        cid = rec.command_id
        if cid in self.final_by_command:
            rec.final_rep = self.final_by_command[cid]
            self.discard_speculative([rec.instance])
        else:
            # speculative results are invalidated when another entry on the key ran first
            first = self.state.first_tag_on(rec.command.key)
            if first is not None and first != rec.instance:
                self.rollbacks += 1
            rep, _ = self.state.finalize(rec.command, rec.instance, self.partial_rollback)
            rec.final_rep = rep
            self.final_by_command[cid] = rep
        rec.status = CommandStatus.FINALLY_EXECUTED
        self.executed.append(rec.instance)
        return rec

    def execute_ready(self, candidates: Iterable[InstanceId]) -> list[Record]:
        """Finally execute every candidate whose dependencies allow it."""
        out: list[Record] = []
        for iid in sorted(candidates):
            out.extend(self.execute_final(iid))
        return out
