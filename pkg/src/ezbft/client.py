"""Client-side protocol state machine.

A client is closed-loop: it submits one command, collects SpecReplies, and
either delivers on 3f+1 matching replies (broadcasting a CommitFast) or, when
the slow-path timer fires, combines 2f+1 replies into a Commit and waits for
2f+1 identical CommitReplies.  It also detects equivocating command-leaders
and escalates silent ones by broadcasting a retransmission.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .crypto import Keyring, NodeId, replica
from .effects import Broadcast, CancelTimer, Deliver, Effect, Send, SetTimer
from .kv import Command, Reply
from .messages import (
    CertKind,
    CommitCertificate,
    CommitFastMsg,
    CommitMsg,
    CommitReplyMsg,
    InstanceId,
    POMMsg,
    RequestMsg,
    SpecReplyMsg,
    match_spec_replies,
    request_digest,
    signed,
    verify_spec_reply,
)


def combine(replies: Sequence[SpecReplyMsg]) -> tuple[frozenset[InstanceId], int]:
    """Final dependencies and sequence number from slow-quorum replies.

    Dependencies are the union of all reported sets; the sequence number is
    the highest reported one.  Only values carried by the replies are used,
    so any replica can recompute the result from the certificate.
    """
    deps: frozenset[InstanceId] = frozenset().union(*(r.deps for r in replies))
    return deps, max(r.seq for r in replies)


def default_slow_quorum(n: int, f: int) -> tuple[int, ...]:
    return tuple(range(2 * f + 1))


class Phase(Enum):
    SPECULATIVE_WAIT = "speculative-wait"
    SLOW_WAIT = "slow-wait"
    DONE = "done"


@dataclass
class PendingRequest:
    command: Command
    t: int
    target: int
    submitted_at: int
    digests: set[bytes] = field(default_factory=set)
    replies: dict[InstanceId, dict[int, SpecReplyMsg]] = field(default_factory=dict)
    commit_replies: dict[int, Reply] = field(default_factory=dict)
    phase: Phase = Phase.SPECULATIVE_WAIT
    retransmit_delay: int = 0
    accused: set[int] = field(default_factory=set)
    commit_instance: Optional[InstanceId] = None

    def reply_count(self) -> int:
        return max((len(v) for v in self.replies.values()), default=0)


@dataclass
class Delivery:
    client: NodeId
    t: int
    command: Command
    rep: Reply
    path: str
    submitted_at: int
    delivered_at: int
    instance: Optional[InstanceId]


SLOW_TIMER = "slow"
RETRANSMIT_TIMER = "retransmit"


class Client:
    def __init__(
        self,
        node: NodeId,
        keys: Keyring,
        n: int,
        f: int,
        home: int,
        slow_timeout: int,
        retransmit_timeout: int,
        backoff_cap: Optional[int] = None,
        slow_quorums: Optional[dict[int, Sequence[int]]] = None,
    ) -> None:
        self.node = node
        self.keys = keys
        self.n = n
        self.f = f
        self.home = home
        self.slow_timeout = slow_timeout
        self.retransmit_timeout = retransmit_timeout
        self.backoff_cap = backoff_cap or 8 * retransmit_timeout
        self.slow_quorums = {i: tuple(q) for i, q in (slow_quorums or {}).items()}
        self.t = 0
        self.pending: Optional[PendingRequest] = None
        self.deliveries: list[Delivery] = []
        self.poms_sent: list[POMMsg] = []
        self.ignored_replies = 0

    # -- helpers ---------------------------------------------------------

    def slow_quorum(self, leader: int) -> tuple[int, ...]:
        return self.slow_quorums.get(leader, default_slow_quorum(self.n, self.f))

    def _all_replicas(self) -> list[NodeId]:
        return [replica(i) for i in range(self.n)]

    def _deliver(self, rep: Reply, path: str, now: int, instance: Optional[InstanceId]) -> list[Effect]:
        p = self.pending
        assert p is not None
        p.phase = Phase.DONE
        d = Delivery(self.node, p.t, p.command, rep, path, p.submitted_at, now, instance)
        self.deliveries.append(d)
        self.pending = None
        if instance is not None and instance.space != p.target:
            # the request was re-ordered elsewhere; follow it
            self.home = instance.space
        return [CancelTimer(SLOW_TIMER), CancelTimer(RETRANSMIT_TIMER), Deliver(d)]

    # -- operations ------------------------------------------------------

    def submit(self, cmd: Command, now: int) -> list[Effect]:
        if self.pending is not None:
            raise RuntimeError("closed-loop client already has a pending request")
        self.t += 1
        req = signed(RequestMsg(cmd, self.t, self.node), self.keys)
        self.pending = PendingRequest(
            cmd, self.t, self.home, now, {request_digest(req)}, retransmit_delay=self.retransmit_timeout
        )
        return [
            Send(replica(self.home), req),
            SetTimer(SLOW_TIMER, self.slow_timeout),
            SetTimer(RETRANSMIT_TIMER, self.retransmit_timeout),
        ]

    def handle(self, msg, now: int) -> list[Effect]:
        if isinstance(msg, SpecReplyMsg):
            return self.on_spec_reply(msg, now)
        if isinstance(msg, CommitReplyMsg):
            return self.on_commit_reply(msg, now)
        return []

    def on_spec_reply(self, m: SpecReplyMsg, now: int) -> list[Effect]:
        p = self.pending
        if p is None or p.phase is Phase.DONE or m.client != self.node or m.t != p.t:
            self.ignored_replies += 1
            return []
        if m.d not in p.digests or not verify_spec_reply(m, self.keys, self.n):
            self.ignored_replies += 1
            return []
        group = p.replies.setdefault(m.instance, {})
        if m.sender.index in group:
            return []
        group[m.sender.index] = m
        out: list[Effect] = []

        pom = self._find_pom(m)
        if pom is not None:
            out.extend(self._accuse(pom))

        if p.phase is Phase.SPECULATIVE_WAIT and len(group) == self.n:
            first = group[0]
            if all(match_spec_replies(first, r) for r in group.values()):
                cc = CommitCertificate(CertKind.FAST, tuple(group[i] for i in range(self.n)))
                out.extend(self._deliver(first.rep, "fast", now, m.instance))
                out.append(Broadcast(CommitFastMsg(self.node, m.instance, cc)))
        return out

    def _find_pom(self, m: SpecReplyMsg) -> Optional[POMMsg]:
        p = self.pending
        assert p is not None
        so = m.spec_order
        leader = so.leader(self.n)
        if leader in p.accused:
            return None
        for inst, group in sorted(p.replies.items()):
            if inst == m.instance or inst.space != m.instance.space:
                continue
            for other in group.values():
                if other.spec_order.owner == so.owner:
                    return POMMsg(so.owner, other, m)
        return None

    def _accuse(self, pom: POMMsg) -> list[Effect]:
        p = self.pending
        assert p is not None
        leader = pom.first.spec_order.leader(self.n)
        p.accused.add(leader)
        self.poms_sent.append(pom)
        if self.home == leader:
            self.home = (leader + 1) % self.n
        return [Broadcast(pom)]

    def on_timer(self, key: str, now: int) -> list[Effect]:
        if key == SLOW_TIMER:
            return self.on_slow_timer(now)
        if key == RETRANSMIT_TIMER:
            return self.on_retransmit_timer(now)
        return []

    def _slow_candidates(self) -> list[tuple[InstanceId, list[SpecReplyMsg]]]:
        """Instances with a slow quorum of replies, best first."""
        p = self.pending
        assert p is not None
        quorum_size = 2 * self.f + 1
        found = []
        for inst, group in sorted(p.replies.items(), key=lambda kv: (-len(kv[1]), kv[0])):
            if len(group) < quorum_size:
                continue
            leader = next(iter(group.values())).spec_order.leader(self.n)
            designated = self.slow_quorum(leader)
            if all(i in group for i in designated):
                chosen = [group[i] for i in sorted(designated)]
            else:
                chosen = [group[i] for i in sorted(group)[:quorum_size]]
            found.append((inst, chosen))
        return found

    def _commit_msg(self, inst: InstanceId, chosen: list[SpecReplyMsg]) -> CommitMsg:
        deps, seq = combine(chosen)
        cc = CommitCertificate(CertKind.SLOW, tuple(chosen))
        return signed(CommitMsg(self.node, inst, deps, seq, cc), self.keys)

    def on_slow_timer(self, now: int) -> list[Effect]:
        p = self.pending
        if p is None or p.phase is not Phase.SPECULATIVE_WAIT:
            return []
        cands = self._slow_candidates()
        if not cands:
            return self._retransmit()
        inst, chosen = cands[0]
        p.phase = Phase.SLOW_WAIT
        p.commit_instance = inst
        return [Broadcast(self._commit_msg(inst, chosen))]

    def on_commit_reply(self, m: CommitReplyMsg, now: int) -> list[Effect]:
        p = self.pending
        if p is None or p.phase is Phase.DONE or m.client != self.node or m.t != p.t:
            return []
        if not m.sender.is_replica or m.sender.index in p.commit_replies:
            return []
        p.commit_replies[m.sender.index] = m.rep
        tally: dict[Reply, int] = {}
        for rep in p.commit_replies.values():
            tally[rep] = tally.get(rep, 0) + 1
        if tally[m.rep] >= 2 * self.f + 1:
            return self._deliver(m.rep, "slow", now, m.instance)
        return []

    def on_retransmit_timer(self, now: int) -> list[Effect]:
        p = self.pending
        if p is None or p.phase is Phase.DONE:
            return []
        return self._retransmit()

    def _retransmit(self) -> list[Effect]:
        p = self.pending
        assert p is not None
        req = signed(RequestMsg(p.command, p.t, self.node, origin=p.target), self.keys)
        p.digests.add(request_digest(req))
        delay = p.retransmit_delay
        p.retransmit_delay = min(2 * delay, self.backoff_cap)
        out: list[Effect] = [Broadcast(req), SetTimer(RETRANSMIT_TIMER, delay)]
        if p.phase is Phase.SPECULATIVE_WAIT:
            out.append(SetTimer(SLOW_TIMER, self.slow_timeout))
        elif p.phase is Phase.SLOW_WAIT:
            # the committed instance may have been voided by an owner change while the
            # request was re-ordered elsewhere: commit every candidate, only one survives
            out.extend(Broadcast(self._commit_msg(inst, chosen)) for inst, chosen in self._slow_candidates())
        return out

