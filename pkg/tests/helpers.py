"""Message builders and effect filters shared by the unit tests."""

from __future__ import annotations

from ezbft.crypto import client, make_keyrings, replica
from ezbft.effects import Broadcast, Send
from ezbft.kv import Command
from ezbft.messages import RequestMsg, SpecReplyMsg, signed
from ezbft.replica import Replica, ReplicaConfig

N, F = 4, 1
SEED = bytes(32)


def all_keys():
    nodes = [replica(i) for i in range(N)] + [client(i) for i in range(4)]
    return make_keyrings(SEED, nodes)


def request(keys, c: int, t: int, cmd: Command, origin=None) -> RequestMsg:
    return signed(RequestMsg(cmd, t, client(c), origin), keys[client(c)])


def replica_config(**kw) -> ReplicaConfig:
    kw.setdefault("resend_timeout", 1000)
    kw.setdefault("buffer_timeout", 1000)
    return ReplicaConfig(n=N, f=F, **kw)


def replicas(keys, **kw) -> list[Replica]:
    return [Replica(i, keys[replica(i)], replica_config(**kw)) for i in range(N)]


def sent(effects, kind=None):
    """Messages carried by Send/Broadcast effects, optionally filtered by type."""
    out = []
    for e in effects:
        if isinstance(e, (Send, Broadcast)) and (kind is None or isinstance(e.msg, kind)):
            out.append(e.msg)
    return out


def spec_replies(effects) -> list[SpecReplyMsg]:
    return sent(effects, SpecReplyMsg)


class Net:
    """Synchronous, in-order message pump between replicas; client-bound messages are collected.

    ``drop`` filters (src, dst, msg) triples; timers are recorded but never fire by themselves.
    """

    def __init__(self, reps, drop=None):
        self.reps = reps
        self.drop = drop or (lambda src, dst, msg: False)
        self.to_clients = []
        self.timers = {i: [] for i in range(len(reps))}
        self.queue = []

    def emit(self, src, effects):
        from ezbft.effects import SetTimer

        for e in effects:
            if isinstance(e, Send):
                self.queue.append((src, e.dst, e.msg))
            elif isinstance(e, Broadcast):
                for r in self.reps:
                    if r.node != src or e.include_self:
                        self.queue.append((src, r.node, e.msg))
            elif isinstance(e, SetTimer) and src.is_replica:
                self.timers[src.index].append(e.key)

    def inject(self, src, dst, msg):
        self.queue.append((src, dst, msg))
        return self.run()

    def run(self):
        while self.queue:
            src, dst, msg = self.queue.pop(0)
            if self.drop(src, dst, msg):
                continue
            if dst.is_replica:
                self.emit(dst, self.reps[dst.index].handle(src, msg, 0))
            else:
                self.to_clients.append((src, dst, msg))
        return self

    def fire(self, index, key):
        self.emit(self.reps[index].node, self.reps[index].on_timer(key, 0))
        return self.run()

    def client_msgs(self, kind, dst=None):
        return [m for s, d, m in self.to_clients if isinstance(m, kind) and (dst is None or d == dst)]
