import dataclasses

from hypothesis import given, settings
from hypothesis import strategies as st

from ezbft.client import Client, Phase, combine, default_slow_quorum
from ezbft.crypto import client, replica
from ezbft.effects import Broadcast, CancelTimer, Deliver, Send, SetTimer
from ezbft.kv import Command
from ezbft.messages import (
    CommitFastMsg,
    CommitMsg,
    CommitReplyMsg,
    InstanceId,
    POMMsg,
    RequestMsg,
    SpecReplyMsg,
    SpecOrderMsg,
    verify_pom,
)
from ezbft.replica import make_spec_order

from helpers import Net, replicas, sent, spec_replies

L2 = InstanceId(3, 0)


def new_client(keys, home=0, **kw):
    return Client(client(0), keys[client(0)], 4, 1, home, slow_timeout=100, retransmit_timeout=300, **kw)


def first_round(keys, c, cmd=Command.put("x", 1), rs=None):
    rs = rs or replicas(keys)
    req = sent(c.submit(cmd, 0), RequestMsg)[0]
    net = Net(rs)
    net.inject(client(0), replica(c.home), req)
    return rs, net, net.to_clients


def test_combine_examples():
    from ezbft.messages import SpecReplyMsg

    def rep(deps, seq):
        return SpecReplyMsg(0, InstanceId(0, 0), frozenset(deps), seq, b"", client(0), 1, replica(0), None, None)

    assert combine([rep([], 1), rep([], 1), rep([L2], 2)]) == ({L2}, 2)
    a, b = InstanceId(1, 0), InstanceId(2, 0)
    deps, seq = combine([rep([a], 3), rep([b], 2), rep([], 1)])
    assert deps == {a, b} and seq == 3


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.frozensets(st.integers(0, 5), max_size=3), st.integers(1, 9)), min_size=3, max_size=3))
def test_combine_dominates_every_reply(vals):
    from ezbft.messages import SpecReplyMsg

    reps = [
        SpecReplyMsg(0, InstanceId(0, 9), frozenset(InstanceId(1, d) for d in ds), s, b"", client(0), 1, replica(0), None, None)
        for ds, s in vals
    ]
    deps, seq = combine(reps)
    assert all(r.deps <= deps and r.seq <= seq for r in reps)
    assert seq in {r.seq for r in reps}


def test_default_slow_quorum():
    assert default_slow_quorum(4, 1) == (0, 1, 2)


def test_fast_path_delivery_and_commit_fast(keys):
    c = new_client(keys)
    rs, net, msgs = first_round(keys, c)
    replies = [m for _, _, m in msgs]
    assert len(replies) == 4
    effects = []
    for m in replies:
        effects += c.handle(m, 50)
    deliveries = [e.delivery for e in effects if isinstance(e, Deliver)]
    assert len(deliveries) == 1 and deliveries[0].path == "fast" and deliveries[0].instance == InstanceId(0, 0)
    assert any(isinstance(e, Broadcast) and isinstance(e.msg, CommitFastMsg) for e in effects)
    assert CancelTimer("slow") in effects and c.pending is None


def test_slow_path_when_a_replica_is_silent(keys):
    c = new_client(keys)
    rs = replicas(keys)
    req = sent(c.submit(Command.put("x", 1), 0), RequestMsg)[0]
    net = Net(rs, drop=lambda src, dst, m: src == replica(3))
    net.inject(client(0), replica(0), req)
    for m in net.client_msgs(SpecReplyMsg):
        assert not [e for e in c.handle(m, 10) if isinstance(e, Deliver)]
    out = c.on_timer("slow", 100)
    commit = [e.msg for e in out if isinstance(e, Broadcast)][0]
    assert isinstance(commit, CommitMsg) and commit.deps == frozenset() and commit.seq == 1
    assert sorted(r.sender.index for r in commit.cc.replies) == [0, 1, 2]
    assert c.pending.phase is Phase.SLOW_WAIT
    net.to_clients.clear()
    net.emit(client(0), out)
    net.run()
    effects = []
    for m in net.client_msgs(CommitReplyMsg):
        effects += c.handle(m, 200)
    d = [e.delivery for e in effects if isinstance(e, Deliver)]
    assert len(d) == 1 and d[0].path == "slow"


def test_slow_commit_carries_a_disagreeing_replicas_dependencies(keys):
    from ezbft.messages import signed

    c = new_client(keys)
    rs = replicas(keys)
    l2_req = signed(RequestMsg(Command.put("x", 2), 1, client(1)), keys[client(1)])
    rs[2].handle(replica(3), make_spec_order(keys[replica(3)], 3, L2, (), 1, l2_req, bytes(32)), 0)
    _, net, msgs = first_round(keys, c, rs=rs)
    for _, _, m in msgs:
        assert not [e for e in c.handle(m, 10) if isinstance(e, Deliver)]
    commit = [e.msg for e in c.on_timer("slow", 100) if isinstance(e, Broadcast)][0]
    assert commit.deps == {L2} and commit.seq == 2


def test_minority_lies_do_not_change_the_result(keys):
    c = new_client(keys)
    _, _, msgs = first_round(keys, c, Command.get("x"))
    c.on_timer("slow", 100)
    good = CommitReplyMsg(client(0), 1, InstanceId(0, 0), None, replica(0))
    assert not c.handle(dataclasses.replace(good, rep=42, sender=replica(3)), 0)
    assert not c.handle(good, 0)
    assert not c.handle(dataclasses.replace(good, sender=replica(1)), 0)
    out = c.handle(dataclasses.replace(good, sender=replica(2)), 0)
    (d,) = [e.delivery for e in out if isinstance(e, Deliver)]
    assert d.rep is None


def test_equivocation_produces_verifying_pom(keys):
    c = new_client(keys)
    req = sent(c.submit(Command.put("x", 1), 0), RequestMsg)[0]
    k0 = keys[replica(0)]
    a = make_spec_order(k0, 0, InstanceId(0, 0), (), 1, req, bytes(32))
    rs = replicas(keys)
    ra = spec_replies(rs[1].handle(replica(0), a, 0))[0]
    # the second group sees a different command at slot 0 and ours at slot 1
    other = sent(Client(client(1), keys[client(1)], 4, 1, 0, 1, 1).submit(Command.get("z"), 0), RequestMsg)[0]
    filler = make_spec_order(k0, 0, InstanceId(0, 0), (), 1, other, bytes(32))
    b = make_spec_order(k0, 0, InstanceId(0, 1), (), 1, req, filler.h)
    rs[2].handle(replica(0), filler, 0)
    rb = spec_replies(rs[2].handle(replica(0), b, 0))[0]
    c.handle(ra, 0)
    out = c.handle(rb, 0)
    poms = [e.msg for e in out if isinstance(e, Broadcast) and isinstance(e.msg, POMMsg)]
    assert len(poms) == 1 and verify_pom(poms[0], keys[replica(3)], 4)
    assert c.home == 1  # stops sending to the accused leader


def test_retransmission_broadcasts_with_origin_and_backs_off(keys):
    c = new_client(keys)
    c.submit(Command.put("x", 1), 0)
    out = c.on_timer("retransmit", 300)
    (req,) = [e.msg for e in out if isinstance(e, Broadcast)]
    assert req.origin == 0 and req.t == 1
    assert SetTimer("retransmit", 300) in out
    out = c.on_timer("retransmit", 900)
    assert SetTimer("retransmit", 600) in out


def test_ignores_replies_for_other_requests(keys):
    c = new_client(keys)
    _, _, msgs = first_round(keys, c)
    stale = dataclasses.replace(msgs[0][2], t=99)
    assert c.handle(stale, 0) == [] and c.ignored_replies == 1


def test_submit_is_closed_loop(keys):
    import pytest

    c = new_client(keys)
    out = c.submit(Command.get("x"), 0)
    assert isinstance(out[0], Send) and out[0].dst == replica(0)
    with pytest.raises(RuntimeError):
        c.submit(Command.get("x"), 0)
