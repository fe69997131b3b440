"""Named byzantine strategies, each a thin wrapper over a correct replica.

Every attack keeps the host's state machine intact and only rewrites what
the host sends, so each behaviour is small enough to review on its own.
Crash, mute, drop and delay faults need no wrapper; the simulator applies
them to a replica's traffic.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable

from .crypto import Keyring, replica
from .effects import Broadcast, Effect, Send
from .execution import Record
from .messages import InstanceId, RequestMsg, SpecOrderMsg, SpecReplyMsg, signed
from .replica import Replica, ReplicaConfig, make_spec_order

LIE_STRATEGIES = ("echo", "empty")


class LyingReplica(Replica):
    """Reports fabricated dependency metadata in its SpecReplies.

    ``echo`` repeats the leader's (D, S) as if nothing interfered locally;
    ``empty`` claims no dependencies and sequence number 1.
    """

    def __init__(self, index: int, keys: Keyring, cfg: ReplicaConfig, strategy: str = "echo") -> None:
        if strategy not in LIE_STRATEGIES:
            raise ValueError(f"unknown lie-deps strategy {strategy!r}")
        super().__init__(index, keys, cfg)
        self.strategy = strategy

    def _spec_reply(self, rec: Record, so: SpecOrderMsg) -> SpecReplyMsg:
        honest = super()._spec_reply(rec, so)
        if self.strategy == "echo":
            deps, seq = so.deps, so.seq
        else:
            deps, seq = frozenset(), 1
        self.metrics["lies"] += 1
        return signed(replace(honest, deps=deps, seq=seq, sig=b""), self.keys)


class EquivocatingReplica(Replica):
    """Orders the same request at different slots for two disjoint groups.

    After ``honest`` correct proposals the leader keeps two chains.  Group A
    sees the real space; group B sees every later request one slot further
    on, the gap filled with a replay of the last honest request.  Both chains
    are validly signed and digest-linked, so only a client holding replies
    from both groups can tell.
    """

    def __init__(
        self,
        index: int,
        keys: Keyring,
        cfg: ReplicaConfig,
        group_b: Iterable[int],
        honest: int = 1,
    ) -> None:
        super().__init__(index, keys, cfg)
        self.group_b = frozenset(group_b) - {index}
        if not self.group_b or len(self.group_b) >= cfg.n - 1:
            raise ValueError("group B must be a proper non-empty subset of the other replicas")
        self.honest = honest
        self.proposals = 0
        self.last_request: RequestMsg | None = None
        self.b_next = 0
        self.b_chain = self.spaces[index].chain

    def propose(self, m: RequestMsg) -> list[Effect]:
        out = super().propose(m)
        self.proposals += 1
        space = self.spaces[self.index]
        if self.proposals <= self.honest or self.last_request is None:
            self.last_request = m
            self.b_next, self.b_chain = space.next_slot, space.chain
            return out
        real = next(e.msg for e in out if isinstance(e, Broadcast))
        b_orders = []
        if self.b_next == real.instance.slot:
            # first divergence: pad group B's chain with a replayed request
            b_orders.append(self._b_order(self.last_request, real))
        b_orders.append(self._b_order(m, real))
        self.metrics["equivocations"] += 1

        rewritten: list[Effect] = []
        for e in out:
            if isinstance(e, Broadcast):
                for r in range(self.n):
                    if r == self.index:
                        continue
                    if r in self.group_b:
                        rewritten.extend(Send(replica(r), so) for so in b_orders)
                    else:
                        rewritten.append(Send(replica(r), e.msg))
            else:
                rewritten.append(e)
        return rewritten

    def _b_order(self, req: RequestMsg, real: SpecOrderMsg) -> SpecOrderMsg:
        iid = InstanceId(self.index, self.b_next)
        so = make_spec_order(self.keys, real.owner, iid, real.deps - {iid}, real.seq, req, self.b_chain)
        self.b_next += 1
        self.b_chain = so.h
        return so

    def on_resend_req(self, m) -> list[Effect]:
        # re-sending one chain to the other group would expose it cheaply; stay quiet
        return []
