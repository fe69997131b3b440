"""History selection during an owner change, on hand-built proof sets."""

import itertools

from ezbft.crypto import client, replica
from ezbft.history import select_history, valid_commit_proof
from ezbft.kv import Command
from ezbft.messages import (
    CertKind,
    CommitCertificate,
    CommitFastMsg,
    InstanceId,
    OwnerChangeMsg,
    ProofKind,
    SlotEvidence,
    signed,
)
from ezbft.replica import make_spec_order

from helpers import replicas, request, sent, spec_replies
from test_replica import _slow_commit

N, F = 4, 1


def build_space(keys, count, holders=(1, 2, 3)):
    """R0 orders ``count`` commands; ``holders`` receive them.  Returns per-slot (so, replies)."""
    rs = replicas(keys)
    slots = []
    for t in range(1, count + 1):
        out = rs[0].handle(client(0), request(keys, 0, t, Command.put(f"k{t}", t)), 0)
        so = sent(out, type(rs[0].records[InstanceId(0, t - 1)].spec_order))[0]
        reps = {0: spec_replies(out)[0]}
        for i in holders:
            reps[i] = spec_replies(rs[i].handle(replica(0), so, 0))[0]
        slots.append((so, reps))
    return slots


def fast_commit(slot):
    so, reps = slot
    return CommitFastMsg(client(0), so.instance, CommitCertificate(CertKind.FAST, tuple(reps[i] for i in range(N))))


def oc(keys, sender, entries, owner=1, checkpoint=0):
    return signed(OwnerChangeMsg(0, owner, replica(sender), checkpoint, tuple(entries)), keys[replica(sender)])


def ev(slots, i, sender, commit=None):
    so, reps = slots[i]
    return SlotEvidence(i, so, reps.get(sender), commit)


def test_commit_proofs_validate(keys):
    slots = build_space(keys, 1)
    assert valid_commit_proof(fast_commit(slots[0]), slots[0][0], keys[replica(1)], N, F)
    slow = _slow_commit(keys, [slots[0][1][i] for i in (0, 1, 2)])
    assert valid_commit_proof(slow, slots[0][0], keys[replica(1)], N, F)
    other = build_space(keys, 2)[1][0]
    assert not valid_commit_proof(fast_commit(slots[0]), other, keys[replica(1)], N, F)


def test_condition_one_alone(keys):
    slots = build_space(keys, 3)
    proof = [
        oc(keys, 1, [ev(slots, i, 1, fast_commit(slots[i])) for i in range(3)]),
        oc(keys, 2, []),
        oc(keys, 3, []),
    ]
    g = select_history(proof, keys[replica(1)], N, F)
    assert [s.slot for s in g] == [0, 1, 2]
    assert all(s.proof is ProofKind.COMMIT for s in g)
    assert [s.spec_order for s in g] == [slots[i][0] for i in range(3)]


def test_order_proven_prefix_extended_by_commit(keys):
    slots = build_space(keys, 3)
    proof = [
        oc(keys, 1, [ev(slots, 0, 1), ev(slots, 1, 1)]),
        oc(keys, 2, [ev(slots, 0, 2), ev(slots, 1, 2)]),
        oc(keys, 3, [ev(slots, 0, 3), ev(slots, 1, 3), ev(slots, 2, 3, fast_commit(slots[2]))]),
    ]
    g = select_history(proof, keys[replica(1)], N, F)
    assert [s.slot for s in g] == [0, 1, 2]
    assert [s.proof for s in g] == [ProofKind.SPEC_ORDERS, ProofKind.SPEC_ORDERS, ProofKind.COMMIT]


def test_order_proven_takes_agreed_metadata(keys):
    slots = build_space(keys, 1)
    proof = [oc(keys, i, [ev(slots, 0, i)]) for i in (1, 2, 3)]
    (g,) = select_history(proof, keys[replica(1)], N, F)
    assert (g.deps, g.seq) == (frozenset(), 1)


def test_incomparable_uncertified_claims_are_excluded(keys):
    req_a = request(keys, 0, 1, Command.put("x", 1))
    req_b = request(keys, 1, 1, Command.put("x", 2))
    k0 = keys[replica(0)]
    a = make_spec_order(k0, 0, InstanceId(0, 0), (), 1, req_a, bytes(32))
    b = make_spec_order(k0, 0, InstanceId(0, 0), (), 1, req_b, bytes(32))
    proof = [
        oc(keys, 1, [SlotEvidence(0, a)]),
        oc(keys, 2, [SlotEvidence(0, b)]),
        oc(keys, 3, []),
    ]
    assert select_history(proof, keys[replica(1)], N, F) == ()


def test_lower_owner_numbers_are_ignored(keys):
    slots = build_space(keys, 1)
    so = slots[0][0]
    # owner number 1 + N belongs to R1 again; its order for slot 0 supersedes owner 0's
    newer = make_spec_order(keys[replica(1)], 1 + N, InstanceId(0, 0), (), 1, so.request, bytes(32))
    proof = [oc(keys, i, [SlotEvidence(0, newer)], owner=2 + N) for i in (1, 2)]
    proof.append(oc(keys, 3, [ev(slots, 0, 3, fast_commit(slots[0]))], owner=2 + N))
    g = select_history(proof, keys[replica(1)], N, F)
    assert [s.spec_order for s in g] == [newer]


def test_history_starts_at_lowest_checkpoint(keys):
    slots = build_space(keys, 3)
    proof = [
        oc(keys, 1, [ev(slots, i, 1) for i in range(3)], checkpoint=2),
        oc(keys, 2, [ev(slots, i, 2) for i in range(3)], checkpoint=1),
        oc(keys, 3, [ev(slots, i, 3) for i in range(1, 3)], checkpoint=1),
    ]
    g = select_history(proof, keys[replica(1)], N, F)
    assert [s.slot for s in g] == [1, 2]


def test_committed_slots_survive_every_quorum_and_lie(keys):
    """Exhaustive: a committed slot is selected for every OwnerChange quorum,
    whichever reporter holds the Commit, and even when one reporter lies about the slot."""
    slow = build_space(keys, 1, holders=(1, 2))  # slow-committed at R0, R1, R2
    fast = build_space(keys, 1)  # fast-committed everywhere
    k0 = keys[replica(0)]
    rival_req = request(keys, 2, 1, Command.put("x", 9))
    rival = make_spec_order(k0, 0, InstanceId(0, 0), (), 1, rival_req, bytes(32))
    slow_commit = _slow_commit(keys, [slow[0][1][i] for i in (0, 1, 2)])
    cases = [(slow, slow_commit, {0, 1, 2}), (fast, fast_commit(fast[0]), {0, 1, 2, 3})]
    for slots, commit, holders in cases:
        for quorum in itertools.combinations(range(N), 2 * F + 1):
            for committer in [None, *quorum]:
                for liar in [None, *quorum]:
                    proof = []
                    for i in quorum:
                        if i == liar:
                            entries = [SlotEvidence(0, rival)]
                        elif i in holders:
                            entries = [ev(slots, 0, i, commit if i == committer else None)]
                        else:
                            entries = []
                        proof.append(oc(keys, i, entries))
                    g = select_history(proof, keys[replica(1)], N, F)
                    honest_holders = (set(quorum) & holders) - {liar}
                    if committer in honest_holders or len(honest_holders) >= F + 1:
                        assert [s.spec_order for s in g] == [slots[0][0]], (quorum, committer, liar)
                    assert all(s.spec_order != rival for s in g)
