import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ezbft.crypto import client, replica
from ezbft.kv import Command
from ezbft.messages import (
    DecodeError,
    InstanceId,
    POMMsg,
    RequestMsg,
    SpecOrderMsg,
    decode,
    encode,
    kind_name,
    match_spec_replies,
    signing_payload,
    verify_pom,
    verify_request,
    verify_spec_order,
    verify_spec_reply,
)
from ezbft.replica import make_spec_order

from helpers import replicas, request, spec_replies
from msg_strategies import messages, requests

SLOW = settings(max_examples=150, deadline=None)


@SLOW
@given(messages)
def test_decode_inverts_encode(m):
    data = encode(m)
    assert decode(data) == m
    assert encode(decode(data)) == data


@SLOW
@given(messages, messages)
def test_encoding_is_injective(a, b):
    if a != b:
        assert encode(a) != encode(b)
    else:
        assert encode(a) == encode(b)


@SLOW
@given(messages, st.data())
def test_truncated_encodings_are_rejected(m, data):
    raw = encode(m)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(DecodeError):
        decode(raw[:cut])


@given(messages)
@settings(max_examples=50, deadline=None)
def test_trailing_bytes_are_rejected(m):
    with pytest.raises(DecodeError):
        decode(encode(m) + b"\x00")


def test_unknown_tag_rejected():
    with pytest.raises(DecodeError):
        decode(b"\xff")


def test_non_canonical_dependency_order_rejected(keys):
    req = request(keys, 0, 1, Command.put("x", 1))
    so = SpecOrderMsg(0, InstanceId(0, 2), frozenset({InstanceId(0, 0), InstanceId(0, 1)}), 1, b"h" * 32, b"d" * 32, req)
    raw = bytearray(encode(so))
    a, b = InstanceId(0, 0), InstanceId(0, 1)
    enc = lambda i: i.space.to_bytes(4, "big") + i.slot.to_bytes(8, "big")  # noqa: E731
    pos = raw.index(enc(a) + enc(b))
    raw[pos : pos + 24] = enc(b) + enc(a)
    with pytest.raises(DecodeError):
        decode(bytes(raw))


@given(requests)
@settings(max_examples=50, deadline=None)
def test_embedded_request_bytes_preserved(req):
    so = SpecOrderMsg(1, InstanceId(1, 0), frozenset(), 1, bytes(32), bytes(32), req)
    assert encode(req) in encode(so)
    assert encode(decode(encode(so)).request) == encode(req)


def test_signing_payload_ignores_signature(keys):
    req = request(keys, 0, 1, Command.get("k"))
    assert signing_payload(req) == signing_payload(dataclasses.replace(req, sig=b"other"))
    assert verify_request(req, keys[client(1)])
    assert not verify_request(dataclasses.replace(req, t=2), keys[client(1)])


def test_signing_payload_refuses_unsigned_kinds(keys):
    from ezbft.messages import CommitReplyMsg

    with pytest.raises(TypeError):
        signing_payload(CommitReplyMsg(client(0), 1, InstanceId(0, 0), None, replica(0)))


def _fresh_replies(keys, cmd=Command.put("x", 1)):
    rs = replicas(keys)
    out = rs[0].handle(client(0), request(keys, 0, 1, cmd), 0)
    so = [m for m in (e.msg for e in out if hasattr(e, "msg")) if isinstance(m, SpecOrderMsg)][0]
    reps = spec_replies(out)
    for r in rs[1:]:
        reps += spec_replies(r.handle(replica(0), so, 0))
    return so, reps


def test_spec_order_and_replies_verify(keys):
    so, reps = _fresh_replies(keys)
    assert verify_spec_order(so, keys[replica(1)], 4)
    assert len(reps) == 4
    assert all(verify_spec_reply(r, keys[client(0)], 4) for r in reps)
    forged = dataclasses.replace(reps[1], seq=reps[1].seq + 1)
    assert not verify_spec_reply(forged, keys[client(0)], 4)


def test_match_spec_replies_fields(keys):
    _, reps = _fresh_replies(keys)
    a, b = reps[0], reps[1]
    assert a.sender != b.sender and match_spec_replies(a, b)
    assert not match_spec_replies(a, dataclasses.replace(b, deps=frozenset({InstanceId(3, 0)})))
    assert not match_spec_replies(a, dataclasses.replace(b, seq=b.seq + 1))
    assert not match_spec_replies(a, dataclasses.replace(b, rep=7))


def test_pom_requires_two_slots_for_one_command(keys):
    req = request(keys, 0, 1, Command.put("x", 1))
    k0 = keys[replica(0)]
    a = make_spec_order(k0, 0, InstanceId(0, 0), (), 1, req, bytes(32))
    b = make_spec_order(k0, 0, InstanceId(0, 1), (), 1, req, a.h)
    rs = replicas(keys)

    def reply_for(so):
        return spec_replies(rs[1].handle(replica(0), so, 0))[0] if so.instance.slot == 0 else None

    ra = reply_for(a)
    rb = dataclasses.replace(ra, instance=b.instance, spec_order=b)
    rb = dataclasses.replace(rb, sig=keys[replica(1)].sign(signing_payload(rb)))
    assert verify_pom(POMMsg(0, ra, rb), keys[client(0)], 4)
    assert not verify_pom(POMMsg(0, ra, ra), keys[client(0)], 4)
    other = request(keys, 0, 2, Command.put("x", 1))
    c = make_spec_order(k0, 0, InstanceId(0, 1), (), 1, other, a.h)
    rc = dataclasses.replace(rb, spec_order=c, d=c.d, t=2)
    assert not verify_pom(POMMsg(0, ra, rc), keys[client(0)], 4)


def test_kind_names():
    assert kind_name(RequestMsg(Command.get("k"), 1, client(0))) == "Request"
