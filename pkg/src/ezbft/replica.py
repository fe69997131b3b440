"""Replica-side protocol state machine.

A replica is a command-leader for requests its clients send it, orders them
in its own instance space, and validates and speculatively executes the
orders of every other leader.  Commits arrive from clients with certificates;
final execution follows the dependency graph.  Suspect leaders are replaced
through the owner-change protocol, which freezes their instance space.

Handlers are atomic: each incoming message or timer returns a list of
effects and never blocks.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .client import combine
from .crypto import Keyring, NodeId, replica
from .effects import Broadcast, CancelTimer, Effect, Send, SetTimer
from .execution import ExecutionEngine, Record
from .history import select_history, valid_commit_proof
from .kv import interferes
from .messages import (
    ZERO_DIGEST,
    CommandStatus,
    CommitFastMsg,
    CommitMsg,
    CommitReplyMsg,
    InstanceId,
    NewOwnerMsg,
    OwnerChangeMsg,
    POMMsg,
    RequestMsg,
    ResendReqMsg,
    SafeInstance,
    SlotEvidence,
    SpecOrderMsg,
    SpecReplyMsg,
    StartOwnerChangeMsg,
    chain_digest,
    request_digest,
    signed,
    signing_payload,
    validate_fast_certificate,
    validate_slow_certificate,
    verify_pom,
    verify_request,
    verify_spec_order,
)


def make_spec_order(
    keys: Keyring, owner: int, iid: InstanceId, deps, seq: int, req: RequestMsg, prev: bytes
) -> SpecOrderMsg:
    """A signed SpecOrder chained onto ``prev``."""
    so = SpecOrderMsg(owner, iid, frozenset(deps), seq, b"", request_digest(req), req)
    return signed(SpecOrderMsg(owner, iid, so.deps, seq, chain_digest(prev, so), so.d, req), keys)


@dataclass
class ReplicaConfig:
    n: int
    f: int
    resend_timeout: int
    buffer_timeout: int
    buffer_limit: int = 1024
    gap_retries: int = 3
    owner_change_quorum: Optional[int] = None
    owner_change_timeout: Optional[int] = None
    checkpoint_interval: int = 128
    partial_rollback: bool = True

    def __post_init__(self) -> None:
        if self.n != 3 * self.f + 1:
            raise ValueError(f"N must equal 3f+1 (got N={self.n}, f={self.f})")
        if self.owner_change_quorum is None:
            self.owner_change_quorum = 2 * self.f + 1
        if self.owner_change_timeout is None:
            self.owner_change_timeout = 2 * self.resend_timeout


@dataclass
class Space:
    index: int
    owner: int
    next_slot: int = 0
    chain: bytes = ZERO_DIGEST
    changing: bool = False
    change_owner: int = 0  # owner number this replica is currently helping to install
    frozen: bool = False
    history_start: int = 0
    safe: dict[int, SafeInstance] = field(default_factory=dict)


class Replica:
    def __init__(self, index: int, keys: Keyring, cfg: ReplicaConfig) -> None:
        self.index = index
        self.node = replica(index)
        self.keys = keys
        self.cfg = cfg
        self.n, self.f = cfg.n, cfg.f
        self.spaces = [Space(i, i) for i in range(cfg.n)]
        self.records: dict[InstanceId, Record] = {}
        self.by_key: dict[bytes, list[InstanceId]] = {}
        self.instances_of: dict[tuple, set[InstanceId]] = {}
        self.engine = ExecutionEngine(self.records, partial_rollback=cfg.partial_rollback, is_void=self.is_void)
        self.unexecuted: set[InstanceId] = set()
        self.t_seen: dict[NodeId, int] = {}
        self.cache: dict[NodeId, tuple[int, object]] = {}
        self.mine: dict[tuple, InstanceId] = {}
        self.buffer: dict[tuple[int, int], SpecOrderMsg] = {}
        self.gap_attempts: dict[int, int] = {}
        self.resend_wait: dict[tuple, tuple[RequestMsg, int]] = {}  # cid -> (request, space asked)
        self.pending_resends: dict[int, dict[tuple, RequestMsg]] = {}
        self.soc_votes: dict[tuple[int, int], set[int]] = {}
        self.owner_changes: dict[tuple[int, int], dict[int, OwnerChangeMsg]] = {}
        self.new_owner_sent: set[tuple[int, int]] = set()
        self.deferred: dict[int, list] = {}
        self.final_commands: dict[InstanceId, tuple] = {}
        self.events: list[tuple] = []
        self.suspects: set[int] = set()
        self.metrics: Counter = Counter()

    # ------------------------------------------------------------------
    # dispatch

    def handle(self, src: NodeId, msg, now: int) -> list[Effect]:
        if isinstance(msg, RequestMsg):
            out = self.on_request(msg)
        elif isinstance(msg, SpecOrderMsg):
            out = self.on_spec_order(msg)
        elif isinstance(msg, CommitFastMsg):
            out = self.on_commit_fast(msg)
        elif isinstance(msg, CommitMsg):
            out = self.on_commit(msg)
        elif isinstance(msg, ResendReqMsg):
            out = self.on_resend_req(msg)
        elif isinstance(msg, POMMsg):
            out = self.on_pom(msg)
        elif isinstance(msg, StartOwnerChangeMsg):
            out = self.on_start_owner_change(msg)
        elif isinstance(msg, OwnerChangeMsg):
            out = self.on_owner_change(msg)
        elif isinstance(msg, NewOwnerMsg):
            out = self.on_new_owner(msg)
        else:
            self.metrics["unexpected"] += 1
            out = []
        return self.transform(out)

    def transform(self, effects: list[Effect]) -> list[Effect]:
        """Outbound hook; byzantine wrappers override it."""
        return effects

    def on_timer(self, key, now: int) -> list[Effect]:
        kind = key[0]
        out: list[Effect] = []
        if kind == "resend":
            waiting = self.resend_wait.pop(key[1], None)
            if waiting is not None:
                self.metrics["resend_timeouts"] += 1
                out = self.start_owner_change(waiting[1])
        elif kind == "gap":
            out = self._on_gap_timer(key[1])
        elif kind == "owner":
            out = self._on_owner_change_timer(key[1], key[2])
        return self.transform(out)

    # ------------------------------------------------------------------
    # helpers

    def is_void(self, iid: InstanceId) -> bool:
        space = self.spaces[iid.space]
        return space.frozen and iid.slot >= space.history_start and iid.slot not in space.safe

    def suspect(self, leader: int) -> None:
        self.suspects.add(leader)
        self.metrics["suspicions"] += 1

    def interfering(self, rec_cmd, exclude: InstanceId) -> set[InstanceId]:
        out = set()
        for iid in self.by_key.get(rec_cmd.key, ()):
            rec = self.records.get(iid)
            if rec is not None and iid != exclude and interferes(rec_cmd, rec.command):
                out.add(iid)
        return out

    def seq_of(self, iid: InstanceId) -> Optional[int]:
        rec = self.records.get(iid)
        return rec.seq if rec is not None else None

    def _index(self, rec: Record) -> None:
        self.records[rec.instance] = rec
        self.by_key.setdefault(rec.command.key, []).append(rec.instance)
        self.instances_of.setdefault(rec.command_id, set()).add(rec.instance)

    def _forget(self, iid: InstanceId) -> Optional[Record]:
        rec = self.records.pop(iid, None)
        if rec is None:
            return None
        self.by_key[rec.command.key].remove(iid)
        self.instances_of[rec.command_id].discard(iid)
        self.unexecuted.discard(iid)
        return rec

    def _remember_reply(self, client: NodeId, t: int, msg) -> None:
        cached = self.cache.get(client)
        if cached is None or t > cached[0] or (t == cached[0] and isinstance(msg, CommitReplyMsg)):
            self.cache[client] = (t, msg)
        self.t_seen[client] = max(self.t_seen.get(client, 0), t)

    def _cached_reply(self, req: RequestMsg) -> list[Effect]:
        cached = self.cache.get(req.client)
        if cached is not None and cached[0] == req.t:
            self.metrics["cached_replies"] += 1
            return [Send(req.client, cached[1])]
        return []

    def _spec_reply(self, rec: Record, so: SpecOrderMsg) -> SpecReplyMsg:
        reply = SpecReplyMsg(
            so.owner, rec.instance, rec.deps, rec.seq, so.d, so.request.client, so.request.t,
            self.node, rec.spec_rep, so,
        )
        return signed(reply, self.keys)

    # ------------------------------------------------------------------
    # ordering

    def on_request(self, m: RequestMsg) -> list[Effect]:
        if not verify_request(m, self.keys):
            self.metrics["bad_signature"] += 1
            return []
        if (m.origin is not None and m.origin != self.index) or self.spaces[self.index].frozen:
            return self.on_retransmission(m)
        if m.command_id in self.mine:
            return self._cached_reply(m)
        if m.t <= self.t_seen.get(m.client, 0):
            cached = self._cached_reply(m)
            if not cached:
                self.metrics["stale_requests"] += 1
            return cached
        return self.propose(m)

    def propose(self, m: RequestMsg) -> list[Effect]:
        """Order ``m`` in this replica's own instance space."""
        space = self.spaces[self.index]
        iid = InstanceId(self.index, space.next_slot)
        deps = frozenset(self.interfering(m.command, iid))
        seq = 1 + max((self.records[d].seq for d in deps), default=0)
        so = make_spec_order(self.keys, space.owner, iid, deps, seq, m, space.chain)
        space.chain = so.h
        space.next_slot += 1
        self.mine[m.command_id] = iid
        rec = Record(iid, m, so.owner, deps, seq, spec_order=so)
        self._index(rec)
        self.engine.execute_speculative(iid)
        reply = self._spec_reply(rec, so)
        rec.own_reply = reply
        self._remember_reply(m.client, m.t, reply)
        self.metrics["proposed"] += 1
        return [Broadcast(so, include_self=False), Send(m.client, reply)]

    def on_spec_order(self, m: SpecOrderMsg) -> list[Effect]:
        if not verify_spec_order(m, self.keys, self.n):
            self.metrics["bad_signature"] += 1
            return []
        space = self.spaces[m.instance.space]
        if space.frozen or space.changing:
            self.metrics["frozen_drops"] += 1
            return []
        if m.owner != space.owner or m.leader(self.n) == self.index:
            self.metrics["stale_owner"] += 1
            return []
        slot = m.instance.slot
        if slot < space.next_slot:
            return self._duplicate_spec_order(m)
        if slot > space.next_slot:
            if len(self.buffer) >= self.cfg.buffer_limit:
                self.metrics["buffer_overflow"] += 1
                self.suspect(space.index)
                return []
            self.buffer[(space.index, slot)] = m
            self.metrics["buffered"] += 1
            if space.index in self.gap_attempts:
                return []
            self.gap_attempts[space.index] = 0
            return self._request_fill(space)
        out = self._accept_in_order(space, m)
        while (space.index, space.next_slot) in self.buffer and not (space.frozen or space.changing):
            out.extend(self._accept_in_order(space, self.buffer.pop((space.index, space.next_slot))))
        if space.index in self.gap_attempts:
            if any(k[0] == space.index for k in self.buffer):
                self.gap_attempts[space.index] = 0
                out.extend(self._request_fill(space))
            else:
                del self.gap_attempts[space.index]
                out.append(CancelTimer(("gap", space.index)))
        return out

    def _request_fill(self, space: Space) -> list[Effect]:
        """Ask the leader to re-send its orders from our next expected slot."""
        first = min(slot for (sp, slot) in self.buffer if sp == space.index)
        req = self.buffer[(space.index, first)].request
        self.metrics["gap_fill_requests"] += 1
        return [
            Send(replica(space.owner % self.n), ResendReqMsg(req, self.node, space.next_slot)),
            SetTimer(("gap", space.index), self.cfg.buffer_timeout),
        ]

    def _on_gap_timer(self, space_index: int) -> list[Effect]:
        space = self.spaces[space_index]
        if space_index not in self.gap_attempts or not any(k[0] == space_index for k in self.buffer):
            self.gap_attempts.pop(space_index, None)
            return []
        self.gap_attempts[space_index] += 1
        self.metrics["gap_timeouts"] += 1
        if self.gap_attempts[space_index] <= self.cfg.gap_retries:
            return self._request_fill(space)
        del self.gap_attempts[space_index]
        self.suspect(space_index)
        return self.start_owner_change(space_index)

    def _duplicate_spec_order(self, m: SpecOrderMsg) -> list[Effect]:
        out = self._satisfy_resend(m)
        self.metrics["duplicate_spec_orders"] += 1
        return out

    def _satisfy_resend(self, m: SpecOrderMsg) -> list[Effect]:
        cid = m.request.command_id
        if cid in self.resend_wait:
            del self.resend_wait[cid]
            return [CancelTimer(("resend", cid))]
        return []

    def _accept_in_order(self, space: Space, m: SpecOrderMsg) -> list[Effect]:
        if m.h != chain_digest(space.chain, m):
            self.metrics["digest_mismatch"] += 1
            self.suspect(space.index)
            return []
        space.chain = m.h
        space.next_slot += 1
        out = self._satisfy_resend(m)
        iid = m.instance
        req = m.request
        self.t_seen[req.client] = max(self.t_seen.get(req.client, 0), req.t)
        existing = self.records.get(iid)
        if existing is not None:
            # already learned from a commit certificate
            if existing.spec_order is None:
                existing.spec_order = m
            return out
        local = self.interfering(req.command, iid) - m.deps
        deps = m.deps | local
        if deps == m.deps:
            seq = m.seq
        else:
            known = [s for s in (self.seq_of(d) for d in deps) if s is not None]
            seq = max(m.seq, 1 + max(known, default=0))
        rec = Record(iid, req, m.owner, frozenset(deps), seq, spec_order=m)
        self._index(rec)
        self.engine.execute_speculative(iid)
        reply = self._spec_reply(rec, m)
        rec.own_reply = reply
        self._remember_reply(req.client, req.t, reply)
        out.append(Send(req.client, reply))
        return out

    # ------------------------------------------------------------------
    # commit

    def _learn(self, so: SpecOrderMsg) -> Record:
        """Record for ``so.instance`` holding exactly ``so``, replacing a rival order."""
        rec = self.records.get(so.instance)
        if rec is not None and rec.spec_order is not None and rec.spec_order.d != so.d:
            self.metrics["replaced_orders"] += 1
            self._forget(so.instance)
            self.engine.discard_speculative([so.instance])
            rec = None
        if rec is None:
            rec = Record(so.instance, so.request, so.owner, so.deps, so.seq, spec_order=so)
            self._index(rec)
        return rec

    def _commit(self, rec: Record, deps, seq, status: CommandStatus, proof) -> None:
        rec.deps, rec.seq, rec.status, rec.commit = frozenset(deps), seq, status, proof
        self.unexecuted.add(rec.instance)
        self.events.append(("commit", rec.instance, rec.command_id))

    def _defer_if_changing(self, iid: InstanceId, m) -> Optional[list[Effect]]:
        space = self.spaces[iid.space]
        if space.changing and not space.frozen:
            self.deferred.setdefault(space.index, []).append(m)
            self.metrics["deferred_commits"] += 1
            return []
        if space.frozen and iid.slot >= space.history_start:
            return self._answer_frozen(iid, m)
        return None

    def _answer_frozen(self, iid: InstanceId, m) -> list[Effect]:
        rec = self.records.get(iid)
        if rec is None or iid.slot not in self.spaces[iid.space].safe:
            self.metrics["frozen_drops"] += 1
            return []
        if isinstance(m, CommitMsg):
            rec.reply_on_final = True
            if rec.status is CommandStatus.FINALLY_EXECUTED:
                return [self._commit_reply(rec)]
        return []

    def on_commit_fast(self, m: CommitFastMsg) -> list[Effect]:
        cc = m.cc
        if not (
            validate_fast_certificate(cc, self.keys, self.n)
            and cc.spec_order.instance == m.instance
            and cc.spec_order.request.client == m.client
        ):
            self.metrics["bad_certificate"] += 1
            return []
        deferred = self._defer_if_changing(m.instance, m)
        if deferred is not None:
            return deferred
        rec = self._learn(cc.spec_order)
        if rec.committed:
            return []
        first = cc.replies[0]
        self._commit(rec, first.deps, first.seq, CommandStatus.COMMITTED_FAST, m)
        return self.execute_ready()

    def valid_commit(self, m: CommitMsg) -> bool:
        cc = m.cc
        return (
            self.keys.verify(m.client, signing_payload(m), m.sig)
            and validate_slow_certificate(cc, self.keys, self.n, self.f)
            and cc.spec_order.instance == m.instance
            and cc.spec_order.request.client == m.client
            and combine(cc.replies) == (m.deps, m.seq)
        )

    def on_commit(self, m: CommitMsg) -> list[Effect]:
        if not self.valid_commit(m):
            self.metrics["bad_commit"] += 1
            return []
        deferred = self._defer_if_changing(m.instance, m)
        if deferred is not None:
            return deferred
        rec = self._learn(m.cc.spec_order)
        rec.reply_on_final = True
        if rec.committed:
            if rec.status is CommandStatus.FINALLY_EXECUTED:
                return [self._commit_reply(rec)]
            return []
        self._commit(rec, m.deps, m.seq, CommandStatus.COMMITTED_SLOW, m)
        return self.execute_ready()

    def _commit_reply(self, rec: Record) -> Send:
        req = rec.request
        msg = CommitReplyMsg(req.client, req.t, rec.instance, rec.final_rep, self.node)
        self._remember_reply(req.client, req.t, msg)
        return Send(req.client, msg)

    def execute_ready(self) -> list[Effect]:
        out: list[Effect] = []
        for rec in self.engine.execute_ready(self.unexecuted):
            self.unexecuted.discard(rec.instance)
            self.final_commands[rec.instance] = rec.command_id
            self.events.append(("final", rec.instance, rec.command_id))
            if rec.reply_on_final:
                out.append(self._commit_reply(rec))
        return out

    # ------------------------------------------------------------------
    # silent leaders

    def on_retransmission(self, m: RequestMsg) -> list[Effect]:
        cached = self.cache.get(m.client)
        if cached is not None and m.t < cached[0]:
            return []
        cid = m.command_id
        origin = self.spaces[self.index if m.origin is None else m.origin]
        # remembered even when answered from the cache: an owner change may void the cached order
        self.pending_resends.setdefault(origin.index, {})[cid] = m
        if cached is not None and m.t == cached[0]:
            return self._cached_reply(m)
        target = self.adopter(origin.index)
        if target is None or self.spaces[target].changing:
            return []
        if target == self.index:
            return self._adopt(m)
        if cid in self.resend_wait:
            return []
        self.resend_wait[cid] = (m, target)
        return [
            Send(replica(target), ResendReqMsg(m, self.node, self.spaces[target].next_slot)),
            SetTimer(("resend", cid), self.cfg.resend_timeout),
        ]

    def adopter(self, space_index: int) -> Optional[int]:
        """The replica now responsible for ordering requests aimed at ``space_index``.

        A frozen space hands its clients to its new owner, whose own space may in turn
        have been frozen; follow the chain to a replica that still orders commands.
        """
        seen = set()
        while self.spaces[space_index].frozen:
            if space_index in seen:
                return None
            seen.add(space_index)
            space_index = self.spaces[space_index].owner % self.n
        return space_index

    def _adopt(self, m: RequestMsg) -> list[Effect]:
        """Order a request whose leader's space was frozen, unless it already survives."""
        cid = m.command_id
        cached = self.cache.get(m.client)
        if cached is not None and m.t < cached[0]:
            return []
        if cid in self.mine or cid in self.engine.final_by_command:
            return self._cached_reply(m)
        if any(self.records[i].committed for i in self.instances_of.get(cid, ())):
            return []
        self.metrics["adopted"] += 1
        return self.propose(m)

    MAX_FILL = 256

    def on_resend_req(self, m: ResendReqMsg) -> list[Effect]:
        req = m.request
        if not m.sender.is_replica or not verify_request(req, self.keys):
            return []
        if req.origin is not None and self.adopter(req.origin) != self.index:
            return []
        out: list[Effect] = []
        iid = self.mine.get(req.command_id)
        fresh = iid is None
        if fresh:
            if req.origin not in (None, self.index):
                out = self._adopt(req)
            elif req.t > self.t_seen.get(req.client, 0):
                out = self.propose(req)
            iid = self.mine.get(req.command_id)
            if iid is None:
                return out
        # everything the requester is missing up to and including this request's order
        for slot in range(max(m.have, iid.slot - self.MAX_FILL + 1), iid.slot + 1):
            rec = self.records.get(InstanceId(self.index, slot))
            if rec is not None and rec.spec_order is not None and rec.spec_order.owner == self.spaces[self.index].owner:
                if slot == iid.slot and fresh:
                    continue  # just broadcast
                out.append(Send(m.sender, rec.spec_order))
        return out

    # ------------------------------------------------------------------
    # owner change

    def start_owner_change(self, space_index: int) -> list[Effect]:
        """Commit to replacing the owner of ``space_index``."""
        space = self.spaces[space_index]
        if space_index == self.index or space.changing or space.frozen:
            return []
        space.changing = True
        self.metrics["owner_changes_started"] += 1
        soc = signed(StartOwnerChangeMsg(space_index, space.owner, self.node), self.keys)
        for key in [k for k in self.buffer if k[0] == space_index]:
            del self.buffer[key]
        self.gap_attempts.pop(space_index, None)
        return [Broadcast(soc, include_self=False), *self._support_owner(space, self.next_owner(space, space.owner))]

    def next_owner(self, space: Space, after: int) -> int:
        """The next owner number after ``after`` whose replica is not the space's original one."""
        nxt = after + 1
        while nxt % self.n == space.index:
            nxt += 1
        return nxt

    def _support_owner(self, space: Space, owner: int) -> list[Effect]:
        space.change_owner = owner
        oc = signed(self.owner_change_view(space, owner), self.keys)
        return [
            Send(replica(owner % self.n), oc),
            SetTimer(("owner", space.index, owner), self.cfg.owner_change_timeout),
        ]

    def _on_owner_change_timer(self, space_index: int, owner: int) -> list[Effect]:
        """The prospective owner stayed silent: back the next candidate."""
        space = self.spaces[space_index]
        if space.frozen or not space.changing or space.change_owner != owner:
            return []
        self.metrics["owner_change_timeouts"] += 1
        if len(self.soc_votes.get((space_index, space.owner), ())) < self.f:
            return self._abandon_owner_change(space)
        self.suspect(owner % self.n)
        return self._support_owner(space, self.next_owner(space, owner))

    def _abandon_owner_change(self, space: Space) -> list[Effect]:
        """Nobody else suspects the owner: resume normal processing of its space."""
        self.metrics["owner_changes_abandoned"] += 1
        space.changing = False
        out: list[Effect] = []
        for d in self.deferred.pop(space.index, []):
            out.extend(self.on_commit(d) if isinstance(d, CommitMsg) else self.on_commit_fast(d))
        return out

    def checkpoint(self, space: Space) -> int:
        k = self.cfg.checkpoint_interval
        base = space.history_start
        while all(
            self.final_commands.get(InstanceId(space.index, s)) is not None
            for s in range(base, base + k)
        ):
            base += k
        return base

    def owner_change_view(self, space: Space, new_owner: int) -> OwnerChangeMsg:
        cp = self.checkpoint(space)
        entries = []
        # Slots below our own checkpoint are reported too: the selected history starts at the
        # lowest checkpoint in the proof, and a lagging reporter may not know them.
        for iid in sorted(i for i in self.records if i.space == space.index and i.slot >= space.history_start):
            rec = self.records[iid]
            if rec.spec_order is None or rec.spec_order.owner != space.owner:
                continue
            commit = rec.commit if isinstance(rec.commit, (CommitMsg, CommitFastMsg)) else None
            entries.append(SlotEvidence(iid.slot, rec.spec_order, rec.own_reply, commit))
        return OwnerChangeMsg(space.index, new_owner, self.node, cp, tuple(entries))

    def on_pom(self, m: POMMsg) -> list[Effect]:
        if not verify_pom(m, self.keys, self.n):
            self.metrics["bad_pom"] += 1
            return []
        space = self.spaces[m.space]
        if m.owner != space.owner:
            return []
        self.metrics["valid_poms"] += 1
        self.suspect(m.space)
        return self.start_owner_change(m.space)

    def on_start_owner_change(self, m: StartOwnerChangeMsg) -> list[Effect]:
        if not m.sender.is_replica or not self.keys.verify(m.sender, signing_payload(m), m.sig):
            return []
        if m.space >= self.n or m.space == self.index or m.owner != self.spaces[m.space].owner:
            return []
        votes = self.soc_votes.setdefault((m.space, m.owner), set())
        votes.add(m.sender.index)
        if len(votes) >= self.f + 1:
            return self.start_owner_change(m.space)
        return []

    def _valid_owner_change(self, oc: OwnerChangeMsg, owner: int) -> bool:
        return (
            oc.sender.is_replica
            and oc.owner == owner
            and self.keys.verify(oc.sender, signing_payload(oc), oc.sig)
        )

    def on_owner_change(self, m: OwnerChangeMsg) -> list[Effect]:
        if m.space >= self.n or m.owner % self.n != self.index or m.space == self.index:
            return []
        space = self.spaces[m.space]
        if space.frozen or m.owner <= space.owner or not self._valid_owner_change(m, m.owner):
            return []
        key = (m.space, m.owner)
        got = self.owner_changes.setdefault(key, {})
        got.setdefault(m.sender.index, m)
        if len(got) < self.cfg.owner_change_quorum or key in self.new_owner_sent:
            return []
        self.new_owner_sent.add(key)
        proof = tuple(got[i] for i in sorted(got))
        safe = select_history(proof, self.keys, self.n, self.f)
        msg = signed(NewOwnerMsg(m.space, m.owner, self.node, proof, safe), self.keys)
        return [Broadcast(msg, include_self=True)]

    def valid_new_owner(self, m: NewOwnerMsg) -> bool:
        space = self.spaces[m.space]
        if space.frozen or m.owner <= space.owner or m.sender != replica(m.owner % self.n):
            return False
        if not self.keys.verify(m.sender, signing_payload(m), m.sig):
            return False
        senders = [oc.sender for oc in m.proof]
        if len(set(senders)) != len(senders) or len(senders) < self.cfg.owner_change_quorum:
            return False
        if not all(oc.space == m.space and self._valid_owner_change(oc, m.owner) for oc in m.proof):
            return False
        return select_history(m.proof, self.keys, self.n, self.f) == m.safe

    def on_new_owner(self, m: NewOwnerMsg) -> list[Effect]:
        # our own space may be handed over too, if others timed out waiting for us
        if m.space >= self.n or self.spaces[m.space].frozen:
            return []
        if not self.valid_new_owner(m):
            self.metrics["bad_new_owner"] += 1
            self.suspect(m.sender.index)
            return []
        space = self.spaces[m.space]
        start = min((oc.checkpoint for oc in m.proof), default=0)
        space.owner = m.owner
        space.frozen = True
        space.changing = False
        self.gap_attempts.pop(m.space, None)
        space.history_start = start
        space.safe = {g.slot: g for g in m.safe}
        self.metrics["owner_changes_applied"] += 1

        dropped: list[InstanceId] = []
        for iid in sorted(i for i in self.records if i.space == m.space and i.slot >= start):
            g = space.safe.get(iid.slot)
            rec = self.records[iid]
            if g is None or rec.spec_order is None or rec.spec_order.d != g.spec_order.d:
                if rec.committed:
                    self.events.append(("uncommit", iid, rec.command_id))
                cached = self.cache.get(rec.request.client)
                if cached is not None and getattr(cached[1], "instance", None) == iid:
                    del self.cache[rec.request.client]
                if self.mine.get(rec.command_id) == iid:
                    del self.mine[rec.command_id]
                self._forget(iid)
                dropped.append(iid)
        self.engine.discard_speculative(dropped)
        for key in [k for k in self.buffer if k[0] == m.space]:
            del self.buffer[key]

        for g in m.safe:
            rec = self._learn(g.spec_order)
            rec.reply_on_final = True
            if rec.status is CommandStatus.FINALLY_EXECUTED:
                continue
            if rec.committed and (rec.deps, rec.seq) != (g.deps, g.seq):
                self.events.append(("recommit", rec.instance, rec.command_id))
            if not rec.committed or (rec.deps, rec.seq) != (g.deps, g.seq):
                self._commit(rec, g.deps, g.seq, CommandStatus.COMMITTED_SLOW, g)

        # relay, so that every correct replica freezes the space even if the new owner is faulty
        out: list[Effect] = [Broadcast(m, include_self=False)]
        waiting = [(cid, req) for cid, (req, target) in self.resend_wait.items() if target == m.space]
        for cid, _ in waiting:
            del self.resend_wait[cid]
            out.append(CancelTimer(("resend", cid)))
        deferred = self.deferred.pop(m.space, [])
        out.extend(self.execute_ready())
        for d in deferred:
            out.extend(self.on_commit(d) if isinstance(d, CommitMsg) else self.on_commit_fast(d))
        for origin in sorted(self.pending_resends):
            if self.adopter(origin) == self.index:
                for req in self.pending_resends.pop(origin).values():
                    out.extend(self._adopt(req))
        for _, req in waiting:
            out.extend(self.on_retransmission(req))
        return out
