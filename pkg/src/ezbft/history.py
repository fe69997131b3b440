"""Selecting the safe history of an instance space during an owner change.

Each OwnerChange message carries one replica's view of the suspect's space.
A slot entry is *commit-proven* when any message in the proof set holds a
valid Commit or CommitFast for it, and *order-proven* when at least f+1
distinct reporters hold the same leader-signed SpecOrder for it.  Only
entries under the highest owner number count, and at most one SpecOrder per
slot can be proven: a commit-proven order wins, otherwise the order-proven
one must have strictly more reporters than any rival.

The selection picks the longest reported sequence whose entries are all
commit-proven or all order-proven, then accepts the longest extension by
another reporter whose additional entries are proven the other way.
Everything is a pure function of the messages and the key table, so every
replica can recompute it from a NewOwner message.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .client import combine
from .crypto import Keyring
from .messages import (
    CommitFastMsg,
    CommitMsg,
    InstanceId,
    OwnerChangeMsg,
    ProofKind,
    SafeInstance,
    SlotEvidence,
    SpecOrderMsg,
    encode,
    signing_payload,
    validate_fast_certificate,
    validate_slow_certificate,
    verify_request,
    verify_spec_order,
    verify_spec_reply,
)


def valid_commit_proof(commit, so: SpecOrderMsg, keys: Keyring, n: int, f: int) -> bool:
    """Does ``commit`` certify ``so`` at its instance?"""
    if isinstance(commit, CommitFastMsg):
        cc = commit.cc
        return (
            commit.instance == so.instance
            and validate_fast_certificate(cc, keys, n)
            and cc.spec_order.instance == so.instance
            and cc.spec_order.d == so.d
            and cc.spec_order.owner == so.owner
        )
    if isinstance(commit, CommitMsg):
        cc = commit.cc
        return (
            commit.instance == so.instance
            and commit.client == so.request.client
            and keys.verify(commit.client, signing_payload(commit), commit.sig)
            and validate_slow_certificate(cc, keys, n, f)
            and cc.spec_order.instance == so.instance
            and cc.spec_order.d == so.d
            and cc.spec_order.owner == so.owner
            and combine(cc.replies) == (commit.deps, commit.seq)
        )
    return False


def commit_values(commit) -> tuple[frozenset[InstanceId], int]:
    if isinstance(commit, CommitMsg):
        return commit.deps, commit.seq
    first = commit.cc.replies[0]
    return first.deps, first.seq


def _valid_entry(e: SlotEvidence, oc: OwnerChangeMsg, keys: Keyring, n: int) -> bool:
    so = e.spec_order
    if so.instance != InstanceId(oc.space, e.slot) or not verify_spec_order(so, keys, n):
        return False
    if e.reply is not None:
        r = e.reply
        if r.sender != oc.sender or r.spec_order != so or not verify_spec_reply(r, keys, n):
            return False
    return True


@dataclass
class _Candidate:
    so: SpecOrderMsg
    reporters: set[int]
    commits: list
    replies: list


@dataclass
class _Analysis:
    start: int
    # per reporter: slot -> candidate key (encoded SpecOrder)
    views: dict[int, dict[int, bytes]]
    candidates: dict[int, dict[bytes, _Candidate]]
    commit_proven: dict[int, bytes]
    order_proven: dict[int, bytes]


def _analyse(proof: Sequence[OwnerChangeMsg], keys: Keyring, n: int, f: int) -> _Analysis:
    start = min((oc.checkpoint for oc in proof), default=0)
    views: dict[int, dict[int, bytes]] = {}
    candidates: dict[int, dict[bytes, _Candidate]] = {}
    entries = []
    for oc in proof:
        for e in oc.entries:
            if _valid_entry(e, oc, keys, n):
                entries.append((oc, e))
    top_owner = max((e.spec_order.owner for _, e in entries), default=0)

    for oc, e in entries:
        so = e.spec_order
        if so.owner != top_owner:
            continue
        key = encode(so)
        views.setdefault(oc.sender.index, {})[e.slot] = key
        cand = candidates.setdefault(e.slot, {}).setdefault(key, _Candidate(so, set(), [], []))
        cand.reporters.add(oc.sender.index)
        if e.reply is not None:
            cand.replies.append(e.reply)
        if e.commit is not None and valid_commit_proof(e.commit, so, keys, n, f):
            cand.commits.append(e.commit)

    commit_proven: dict[int, bytes] = {}
    order_proven: dict[int, bytes] = {}
    for slot, cands in candidates.items():
        committed = sorted(k for k, c in cands.items() if c.commits)
        if committed:
            # two certified orders for one slot cannot both be real; keep the lowest deterministically
            commit_proven[slot] = committed[0]
            if len(cands[committed[0]].reporters) >= f + 1:
                order_proven[slot] = committed[0]
            continue
        ranked = sorted(cands.items(), key=lambda kv: (-len(kv[1].reporters), kv[0]))
        best_key, best = ranked[0]
        runner_up = len(ranked[1][1].reporters) if len(ranked) > 1 else 0
        if len(best.reporters) >= f + 1 and len(best.reporters) > runner_up:
            order_proven[slot] = best_key
    return _Analysis(start, views, candidates, commit_proven, order_proven)


def _prefix(view: dict[int, bytes], start: int, proven: dict[int, bytes], offset: int = 0) -> int:
    """Length of the run of slots from ``start + offset`` whose entries are proven."""
    length = offset
    while True:
        slot = start + length
        key = view.get(slot)
        if key is None or proven.get(slot) != key:
            return length
        length += 1


def select_history(
    proof: Sequence[OwnerChangeMsg], keys: Keyring, n: int, f: int
) -> tuple[SafeInstance, ...]:
    a = _analyse(proof, keys, n, f)
    reporters = sorted(a.views)

    # base sequence: longest prefix satisfying Condition 1 (commits) or 2 (f+1 orders)
    base_len, base_rule, base_rep = 0, None, None
    for rule, proven in ((ProofKind.COMMIT, a.commit_proven), (ProofKind.SPEC_ORDERS, a.order_proven)):
        for rep in reporters:
            length = _prefix(a.views[rep], a.start, proven)
            if length > base_len:
                base_len, base_rule, base_rep = length, rule, rep

    rules = [base_rule] if base_rule is not None else [ProofKind.COMMIT, ProofKind.SPEC_ORDERS]
    best_len, best_rep, best_rule = base_len, base_rep, base_rule
    for rule in rules:
        extra = a.order_proven if rule is ProofKind.COMMIT else a.commit_proven
        for rep in reporters:
            view = a.views[rep]
            if base_rep is not None and any(
                view.get(a.start + i) != a.views[base_rep][a.start + i] for i in range(base_len)
            ):
                continue
            length = _prefix(view, a.start, extra, base_len)
            if length > best_len:
                best_len, best_rep, best_rule = length, rep, rule

    if best_rep is None:
        return ()
    chosen = a.views[best_rep]
    out = []
    for i in range(best_len):
        slot = a.start + i
        cand = a.candidates[slot][chosen[slot]]
        out.append(_safe_instance(slot, cand, f, slot in a.commit_proven and a.commit_proven[slot] == chosen[slot]))
    return tuple(out)


def _safe_instance(slot: int, cand: _Candidate, f: int, commit_proven: bool) -> SafeInstance:
    so = cand.so
    if commit_proven:
        values = sorted({commit_values(c) for c in cand.commits}, key=lambda v: (v[1], sorted(v[0])))
        deps, seq = values[0]
        return SafeInstance(slot, so, deps, seq, ProofKind.COMMIT)
    # a fast-path commit leaves f+1 identical reports from correct replicas
    tally: dict[tuple, set[int]] = {}
    for r in cand.replies:
        tally.setdefault((r.deps, r.seq), set()).add(r.sender.index)
    agreed = sorted(
        (v for v, senders in tally.items() if len(senders) >= f + 1), key=lambda v: (v[1], sorted(v[0]))
    )
    if agreed:
        deps, seq = agreed[0]
    else:
        deps = frozenset(so.deps).union(*(r.deps for r in cand.replies))
        seq = max([so.seq] + [r.seq for r in cand.replies])
    return SafeInstance(slot, so, deps, seq, ProofKind.SPEC_ORDERS)


def history_start(proof: Iterable[OwnerChangeMsg]) -> int:
    return min((oc.checkpoint for oc in proof), default=0)
