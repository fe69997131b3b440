"""Protocol identifiers, messages, and their canonical byte encoding.

Every message is an immutable dataclass.  ``encode`` produces a canonical,
injective byte string: a tag byte per kind, fixed-width big-endian integers,
length-prefixed variable fields, and dependency sets sorted by instance
order.  Embedded messages are carried as their own full encoding, so a
relayed Request inside a SpecOrder is byte-identical to the original.

Signed messages are signed over ``signing_payload(msg)``, the encoding of the
signed fields with the signature left empty.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import ClassVar, Iterable, Optional, Union

from .crypto import DIGEST_SIZE, Keyring, NodeId, NodeKind, digest, replica
from .kv import Command, Op, Reply

ZERO_DIGEST = bytes(DIGEST_SIZE)


class DecodeError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class InstanceId:
    space: int
    slot: int

    def __str__(self) -> str:
        return f"R{self.space}.{self.slot}"


class CommandStatus(IntEnum):
    PRE_ACCEPTED = 0
    SPEC_EXECUTED = 1
    COMMITTED_FAST = 2
    COMMITTED_SLOW = 3
    FINALLY_EXECUTED = 4

    @property
    def committed(self) -> bool:
        return self >= CommandStatus.COMMITTED_FAST


class CertKind(IntEnum):
    FAST = 0
    SLOW = 1


class ProofKind(IntEnum):
    COMMIT = 0
    SPEC_ORDERS = 1


# --------------------------------------------------------------------------
# Low-level codec


class Writer:
    def __init__(self) -> None:
        self.parts: list[bytes] = []

    def u8(self, v: int) -> None:
        self.parts.append(struct.pack(">B", v))

    def u32(self, v: int) -> None:
        self.parts.append(struct.pack(">I", v))

    def u64(self, v: int) -> None:
        self.parts.append(struct.pack(">Q", v))

    def i64(self, v: int) -> None:
        self.parts.append(struct.pack(">q", v))

    def blob(self, b: bytes) -> None:
        self.u32(len(b))
        self.parts.append(b)

    def node(self, n: NodeId) -> None:
        self.parts.append(n.encode())

    def instance(self, i: InstanceId) -> None:
        self.u32(i.space)
        self.u64(i.slot)

    def deps(self, deps: Iterable[InstanceId]) -> None:
        items = sorted(deps)
        self.u32(len(items))
        for i in items:
            self.instance(i)

    def reply(self, rep: Reply) -> None:
        if rep is None:
            self.u8(0)
        else:
            self.u8(1)
            self.i64(rep)

    def command(self, c: Command) -> None:
        self.u8(int(c.op))
        self.blob(c.key)
        self.i64(c.value)

    def message(self, m: "Message") -> None:
        self.blob(encode(m))

    def optional(self, m: Optional["Message"]) -> None:
        if m is None:
            self.u8(0)
        else:
            self.u8(1)
            self.message(m)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated message")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def node(self) -> NodeId:
        kind = self.u8()
        return NodeId(NodeKind(kind), self.u32())

    def instance(self) -> InstanceId:
        return InstanceId(self.u32(), self.u64())

    def deps(self) -> frozenset[InstanceId]:
        items = [self.instance() for _ in range(self.u32())]
        if items != sorted(set(items)):
            raise DecodeError("dependency set not canonical")
        return frozenset(items)

    def reply(self) -> Reply:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise DecodeError("bad reply flag")
        return self.i64()

    def command(self) -> Command:
        return Command(Op(self.u8()), self.blob(), self.i64())

    def message(self) -> "Message":
        return decode(self.blob())

    def optional(self) -> Optional["Message"]:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise DecodeError("bad optional flag")
        return self.message()

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes")


# --------------------------------------------------------------------------
# Messages


@dataclass(frozen=True)
class RequestMsg:
    TAG: ClassVar[int] = 1
    command: Command
    t: int
    client: NodeId
    origin: Optional[int] = None  # original recipient, set on retransmission
    sig: bytes = b""

    @property
    def command_id(self) -> tuple[NodeId, int]:
        return (self.client, self.t)

    def _core(self, w: Writer) -> None:
        w.command(self.command)
        w.u64(self.t)
        w.node(self.client)
        if self.origin is None:
            w.u8(0)
        else:
            w.u8(1)
            w.u32(self.origin)

    def _encode(self, w: Writer) -> None:
        self._core(w)
        w.blob(self.sig)

    @classmethod
    def _decode(cls, r: Reader) -> "RequestMsg":
        cmd, t, c = r.command(), r.u64(), r.node()
        origin = r.u32() if r.u8() else None
        return cls(cmd, t, c, origin, r.blob())


@dataclass(frozen=True)
class SpecOrderMsg:
    TAG: ClassVar[int] = 2
    owner: int
    instance: InstanceId
    deps: frozenset[InstanceId]
    seq: int
    h: bytes
    d: bytes
    request: RequestMsg
    sig: bytes = b""

    def leader(self, n: int) -> int:
        return self.owner % n

    def _core(self, w: Writer) -> None:
        w.u64(self.owner)
        w.instance(self.instance)
        w.deps(self.deps)
        w.u64(self.seq)
        w.blob(self.h)
        w.blob(self.d)

    def _encode(self, w: Writer) -> None:
        self._core(w)
        w.blob(self.sig)
        w.message(self.request)

    @classmethod
    def _decode(cls, r: Reader) -> "SpecOrderMsg":
        owner, inst, deps, seq, h, d = r.u64(), r.instance(), r.deps(), r.u64(), r.blob(), r.blob()
        sig = r.blob()
        req = r.message()
        if not isinstance(req, RequestMsg):
            raise DecodeError("SpecOrder must embed a Request")
        return cls(owner, inst, deps, seq, h, d, req, sig)


@dataclass(frozen=True)
class SpecReplyMsg:
    TAG: ClassVar[int] = 3
    owner: int
    instance: InstanceId
    deps: frozenset[InstanceId]
    seq: int
    d: bytes
    client: NodeId
    t: int
    sender: NodeId
    rep: Reply
    spec_order: SpecOrderMsg
    sig: bytes = b""

    def _core(self, w: Writer) -> None:
        w.u64(self.owner)
        w.instance(self.instance)
        w.deps(self.deps)
        w.u64(self.seq)
        w.blob(self.d)
        w.node(self.client)
        w.u64(self.t)
        w.reply(self.rep)

    def _encode(self, w: Writer) -> None:
        self._core(w)
        w.blob(self.sig)
        w.node(self.sender)
        w.message(self.spec_order)

    @classmethod
    def _decode(cls, r: Reader) -> "SpecReplyMsg":
        owner, inst, deps, seq, d = r.u64(), r.instance(), r.deps(), r.u64(), r.blob()
        c, t, rep, sig = r.node(), r.u64(), r.reply(), r.blob()
        sender, so = r.node(), r.message()
        if not isinstance(so, SpecOrderMsg):
            raise DecodeError("SpecReply must embed a SpecOrder")
        return cls(owner, inst, deps, seq, d, c, t, sender, rep, so, sig)


@dataclass(frozen=True)
class CommitCertificate:
    kind: CertKind
    replies: tuple[SpecReplyMsg, ...]

    def _encode(self, w: Writer) -> None:
        w.u8(int(self.kind))
        w.u32(len(self.replies))
        for rep in self.replies:
            w.message(rep)

    @classmethod
    def _decode(cls, r: Reader) -> "CommitCertificate":
        kind = CertKind(r.u8())
        replies = tuple(r.message() for _ in range(r.u32()))
        if not all(isinstance(x, SpecReplyMsg) for x in replies):
            raise DecodeError("certificate must hold SpecReplies")
        return cls(kind, replies)  # type: ignore[arg-type]

    @property
    def spec_order(self) -> SpecOrderMsg:
        return self.replies[0].spec_order


@dataclass(frozen=True)
class CommitFastMsg:
    TAG: ClassVar[int] = 4
    client: NodeId
    instance: InstanceId
    cc: CommitCertificate

    def _encode(self, w: Writer) -> None:
        w.node(self.client)
        w.instance(self.instance)
        self.cc._encode(w)

    @classmethod
    def _decode(cls, r: Reader) -> "CommitFastMsg":
        return cls(r.node(), r.instance(), CommitCertificate._decode(r))


@dataclass(frozen=True)
class CommitMsg:
    TAG: ClassVar[int] = 5
    client: NodeId
    instance: InstanceId
    deps: frozenset[InstanceId]
    seq: int
    cc: CommitCertificate
    sig: bytes = b""

    def _core(self, w: Writer) -> None:
        w.node(self.client)
        w.instance(self.instance)
        w.deps(self.deps)
        w.u64(self.seq)
        self.cc._encode(w)

    def _encode(self, w: Writer) -> None:
        self._core(w)
        w.blob(self.sig)

    @classmethod
    def _decode(cls, r: Reader) -> "CommitMsg":
        c, inst, deps, seq = r.node(), r.instance(), r.deps(), r.u64()
        cc = CommitCertificate._decode(r)
        return cls(c, inst, deps, seq, cc, r.blob())


@dataclass(frozen=True)
class CommitReplyMsg:
    TAG: ClassVar[int] = 6
    client: NodeId
    t: int
    instance: InstanceId
    rep: Reply
    sender: NodeId

    def _encode(self, w: Writer) -> None:
        w.node(self.client)
        w.u64(self.t)
        w.instance(self.instance)
        w.reply(self.rep)
        w.node(self.sender)

    @classmethod
    def _decode(cls, r: Reader) -> "CommitReplyMsg":
        return cls(r.node(), r.u64(), r.instance(), r.reply(), r.node())


@dataclass(frozen=True)
class ResendReqMsg:
    """Asks a leader for its SpecOrders from slot ``have`` up to the one for ``request``."""

    TAG: ClassVar[int] = 7
    request: RequestMsg
    sender: NodeId
    have: int = 0

    def _encode(self, w: Writer) -> None:
        w.message(self.request)
        w.node(self.sender)
        w.u64(self.have)

    @classmethod
    def _decode(cls, r: Reader) -> "ResendReqMsg":
        req = r.message()
        if not isinstance(req, RequestMsg):
            raise DecodeError("ResendReq must embed a Request")
        return cls(req, r.node(), r.u64())


@dataclass(frozen=True)
class POMMsg:
    TAG: ClassVar[int] = 8
    owner: int
    first: SpecReplyMsg
    second: SpecReplyMsg

    @property
    def space(self) -> int:
        return self.first.instance.space

    def _encode(self, w: Writer) -> None:
        w.u64(self.owner)
        w.message(self.first)
        w.message(self.second)

    @classmethod
    def _decode(cls, r: Reader) -> "POMMsg":
        owner, a, b = r.u64(), r.message(), r.message()
        if not (isinstance(a, SpecReplyMsg) and isinstance(b, SpecReplyMsg)):
            raise DecodeError("POM must hold two SpecReplies")
        return cls(owner, a, b)


@dataclass(frozen=True)
class StartOwnerChangeMsg:
    TAG: ClassVar[int] = 9
    space: int
    owner: int
    sender: NodeId
    sig: bytes = b""

    def _core(self, w: Writer) -> None:
        w.u32(self.space)
        w.u64(self.owner)
        w.node(self.sender)

    def _encode(self, w: Writer) -> None:
        self._core(w)
        w.blob(self.sig)

    @classmethod
    def _decode(cls, r: Reader) -> "StartOwnerChangeMsg":
        return cls(r.u32(), r.u64(), r.node(), r.blob())


@dataclass(frozen=True)
class SlotEvidence:
    """One slot of a replica's view of an instance space.

    ``reply`` is the SpecReply the reporting replica itself sent for the slot,
    ``commit`` a Commit or CommitFast it received, if any.
    """

    slot: int
    spec_order: SpecOrderMsg
    reply: Optional[SpecReplyMsg] = None
    commit: Optional[Union[CommitMsg, CommitFastMsg]] = None

    def _encode(self, w: Writer) -> None:
        w.u64(self.slot)
        w.message(self.spec_order)
        w.optional(self.reply)
        w.optional(self.commit)

    @classmethod
    def _decode(cls, r: Reader) -> "SlotEvidence":
        slot, so, rep, com = r.u64(), r.message(), r.optional(), r.optional()
        if not isinstance(so, SpecOrderMsg):
            raise DecodeError("evidence must embed a SpecOrder")
        if rep is not None and not isinstance(rep, SpecReplyMsg):
            raise DecodeError("evidence reply must be a SpecReply")
        if com is not None and not isinstance(com, (CommitMsg, CommitFastMsg)):
            raise DecodeError("evidence commit must be Commit or CommitFast")
        return cls(slot, so, rep, com)


@dataclass(frozen=True)
class OwnerChangeMsg:
    TAG: ClassVar[int] = 10
    space: int
    owner: int  # the proposed new owner number
    sender: NodeId
    checkpoint: int
    entries: tuple[SlotEvidence, ...]
    sig: bytes = b""

    def _core(self, w: Writer) -> None:
        w.u32(self.space)
        w.u64(self.owner)
        w.node(self.sender)
        w.u64(self.checkpoint)
        w.u32(len(self.entries))
        for e in self.entries:
            e._encode(w)

    def _encode(self, w: Writer) -> None:
        self._core(w)
        w.blob(self.sig)

    @classmethod
    def _decode(cls, r: Reader) -> "OwnerChangeMsg":
        space, owner, sender, cp = r.u32(), r.u64(), r.node(), r.u64()
        entries = tuple(SlotEvidence._decode(r) for _ in range(r.u32()))
        return cls(space, owner, sender, cp, entries, r.blob())


@dataclass(frozen=True)
class SafeInstance:
    """A slot of the history selected by a new owner."""

    slot: int
    spec_order: SpecOrderMsg
    deps: frozenset[InstanceId]
    seq: int
    proof: ProofKind

    def _encode(self, w: Writer) -> None:
        w.u64(self.slot)
        w.message(self.spec_order)
        w.deps(self.deps)
        w.u64(self.seq)
        w.u8(int(self.proof))

    @classmethod
    def _decode(cls, r: Reader) -> "SafeInstance":
        slot, so, deps, seq, proof = r.u64(), r.message(), r.deps(), r.u64(), ProofKind(r.u8())
        if not isinstance(so, SpecOrderMsg):
            raise DecodeError("safe instance must embed a SpecOrder")
        return cls(slot, so, deps, seq, proof)


@dataclass(frozen=True)
class NewOwnerMsg:
    TAG: ClassVar[int] = 11
    space: int
    owner: int
    sender: NodeId
    proof: tuple[OwnerChangeMsg, ...]
    safe: tuple[SafeInstance, ...]
    sig: bytes = b""

    def _core(self, w: Writer) -> None:
        w.u32(self.space)
        w.u64(self.owner)
        w.node(self.sender)
        w.u32(len(self.proof))
        for oc in self.proof:
            w.message(oc)
        w.u32(len(self.safe))
        for g in self.safe:
            g._encode(w)

    def _encode(self, w: Writer) -> None:
        self._core(w)
        w.blob(self.sig)

    @classmethod
    def _decode(cls, r: Reader) -> "NewOwnerMsg":
        space, owner, sender = r.u32(), r.u64(), r.node()
        proof = tuple(r.message() for _ in range(r.u32()))
        if not all(isinstance(p, OwnerChangeMsg) for p in proof):
            raise DecodeError("NewOwner proof must hold OwnerChange messages")
        safe = tuple(SafeInstance._decode(r) for _ in range(r.u32()))
        return cls(space, owner, sender, proof, safe, r.blob())  # type: ignore[arg-type]


Message = Union[
    RequestMsg,
    SpecOrderMsg,
    SpecReplyMsg,
    CommitFastMsg,
    CommitMsg,
    CommitReplyMsg,
    ResendReqMsg,
    POMMsg,
    StartOwnerChangeMsg,
    OwnerChangeMsg,
    NewOwnerMsg,
]

MESSAGE_TYPES: dict[int, type] = {
    cls.TAG: cls
    for cls in (
        RequestMsg,
        SpecOrderMsg,
        SpecReplyMsg,
        CommitFastMsg,
        CommitMsg,
        CommitReplyMsg,
        ResendReqMsg,
        POMMsg,
        StartOwnerChangeMsg,
        OwnerChangeMsg,
        NewOwnerMsg,
    )
}

KIND_NAMES = {tag: cls.__name__.removesuffix("Msg") for tag, cls in MESSAGE_TYPES.items()}


def kind_name(m: Message) -> str:
    return KIND_NAMES[m.TAG]


def encode(m: Message) -> bytes:
    w = Writer()
    w.u8(m.TAG)
    m._encode(w)
    return w.getvalue()


def decode(data: bytes) -> Message:
    r = Reader(data)
    tag = r.u8()
    cls = MESSAGE_TYPES.get(tag)
    if cls is None:
        raise DecodeError(f"unknown message tag {tag}")
    msg = cls._decode(r)
    r.done()
    return msg


def signing_payload(m: Message) -> bytes:
    if not hasattr(m, "_core"):
        raise TypeError(f"{type(m).__name__} is not a signed message")
    w = Writer()
    w.u8(m.TAG)
    m._core(w)  # type: ignore[union-attr]
    return w.getvalue()


def signed(m, keyring: Keyring):
    return replace(m, sig=keyring.sign(signing_payload(m)))


def request_digest(req: RequestMsg) -> bytes:
    return digest(encode(req))


def chain_digest(prev: bytes, so: SpecOrderMsg) -> bytes:
    """Next value of an instance space's digest chain.

    Covers the SpecOrder's ordering fields (not its own ``h`` or signature).
    """
    w = Writer()
    w.blob(prev)
    w.u64(so.owner)
    w.instance(so.instance)
    w.deps(so.deps)
    w.u64(so.seq)
    w.blob(so.d)
    return digest(w.getvalue())


# --------------------------------------------------------------------------
# Verification


def verify_request(req: RequestMsg, keys: Keyring) -> bool:
    return req.client.kind is NodeKind.CLIENT and keys.verify(req.client, signing_payload(req), req.sig)


def verify_spec_order(so: SpecOrderMsg, keys: Keyring, n: int) -> bool:
    return (
        so.instance not in so.deps
        and so.seq >= 1
        and so.d == request_digest(so.request)
        and keys.verify(replica(so.leader(n)), signing_payload(so), so.sig)
        and verify_request(so.request, keys)
    )


def verify_spec_reply(rep: SpecReplyMsg, keys: Keyring, n: int) -> bool:
    so = rep.spec_order
    return (
        rep.sender.is_replica
        and rep.sender.index < n
        and rep.owner == so.owner
        and rep.instance == so.instance
        and rep.d == so.d
        and rep.client == so.request.client
        and rep.t == so.request.t
        and rep.instance not in rep.deps
        and keys.verify(rep.sender, signing_payload(rep), rep.sig)
        and verify_spec_order(so, keys, n)
    )


def match_spec_replies(a: SpecReplyMsg, b: SpecReplyMsg) -> bool:
    """Fast-path match: equal owner, instance, deps, seq, client, t and result."""
    return (
        a.owner == b.owner
        and a.instance == b.instance
        and a.deps == b.deps
        and a.seq == b.seq
        and a.client == b.client
        and a.t == b.t
        and a.rep == b.rep
    )


def validate_fast_certificate(cc: CommitCertificate, keys: Keyring, n: int) -> bool:
    if cc.kind is not CertKind.FAST or len(cc.replies) != n:
        return False
    senders = {r.sender for r in cc.replies}
    if senders != {replica(i) for i in range(n)}:
        return False
    first = cc.replies[0]
    return all(
        match_spec_replies(first, r) and r.d == first.d and verify_spec_reply(r, keys, n)
        for r in cc.replies
    )


def validate_slow_certificate(cc: CommitCertificate, keys: Keyring, n: int, f: int) -> bool:
    if cc.kind is not CertKind.SLOW or len(cc.replies) != 2 * f + 1:
        return False
    if len({r.sender for r in cc.replies}) != len(cc.replies):
        return False
    first = cc.replies[0]
    return all(
        r.instance == first.instance
        and r.owner == first.owner
        and r.d == first.d
        and verify_spec_reply(r, keys, n)
        for r in cc.replies
    )


def verify_pom(pom: POMMsg, keys: Keyring, n: int) -> bool:
    """Two leader-signed orders of the same client command at different instances."""
    a, b = pom.first.spec_order, pom.second.spec_order
    return (
        a.owner == b.owner == pom.owner
        and a.instance.space == b.instance.space
        and a.instance != b.instance
        and a.request.command_id == b.request.command_id
        and verify_spec_order(a, keys, n)
        and verify_spec_order(b, keys, n)
    )
