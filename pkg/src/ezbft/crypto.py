"""Node identities, signing, and digests.

Two schemes share one interface.  ``HmacScheme`` is the deterministic test
scheme used by the simulator: a signature is HMAC-SHA256 keyed by the
signer's secret over ``signer-id || payload``.  Its public key is the
verification secret itself, so it only models an adversary that never
forges, which is the adversary the simulator implements.  ``Ed25519Scheme``
is a drop-in real scheme backed by ``cryptography``.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping, Protocol

DIGEST_ALGORITHM = "sha256"
DIGEST_SIZE = 32


class NodeKind(IntEnum):
    REPLICA = 0
    CLIENT = 1


@dataclass(frozen=True, order=True)
class NodeId:
    kind: NodeKind
    index: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"negative node index {self.index}")

    def encode(self) -> bytes:
        return bytes([int(self.kind)]) + self.index.to_bytes(4, "big")

    @property
    def is_replica(self) -> bool:
        return self.kind is NodeKind.REPLICA

    def __str__(self) -> str:
        return f"{'R' if self.kind is NodeKind.REPLICA else 'c'}{self.index}"


def replica(index: int) -> NodeId:
    return NodeId(NodeKind.REPLICA, index)


def client(index: int) -> NodeId:
    return NodeId(NodeKind.CLIENT, index)


@dataclass(frozen=True)
class KeyPair:
    node: NodeId
    secret: bytes
    public: bytes


def digest(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


class SignatureScheme(Protocol):
    name: str

    def keygen(self, seed: bytes, node: NodeId) -> KeyPair: ...

    def sign(self, key: KeyPair, payload: bytes) -> bytes: ...

    def verify(self, public: bytes, node: NodeId, payload: bytes, signature: bytes) -> bool: ...


def _derive_secret(seed: bytes, node: NodeId) -> bytes:
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    return hashlib.sha256(b"ezbft-keygen" + seed + node.encode()).digest()


class HmacScheme:
    name = "hmac-sha256-test"

    def keygen(self, seed: bytes, node: NodeId) -> KeyPair:
        secret = _derive_secret(seed, node)
        return KeyPair(node, secret, secret)

    def sign(self, key: KeyPair, payload: bytes) -> bytes:
        return hmac.new(key.secret, key.node.encode() + payload, hashlib.sha256).digest()

    def verify(self, public: bytes, node: NodeId, payload: bytes, signature: bytes) -> bool:
        expected = hmac.new(public, node.encode() + payload, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)


class Ed25519Scheme:
    name = "ed25519"

    def keygen(self, seed: bytes, node: NodeId) -> KeyPair:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
        from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

        secret = _derive_secret(seed, node)
        public = Ed25519PrivateKey.from_private_bytes(secret).public_key().public_bytes(
            Encoding.Raw, PublicFormat.Raw
        )
        return KeyPair(node, secret, public)

    def sign(self, key: KeyPair, payload: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(key.secret).sign(key.node.encode() + payload)

    def verify(self, public: bytes, node: NodeId, payload: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, node.encode() + payload)
        except (InvalidSignature, ValueError):
            return False
        return True


class Keyring:
    """Public-key table for every node, plus the local node's own key pair."""

    def __init__(self, scheme: SignatureScheme, public: Mapping[NodeId, bytes], own: KeyPair | None = None):
        self.scheme = scheme
        self.public = dict(public)
        self.own = own

    def sign(self, payload: bytes) -> bytes:
        if self.own is None:
            raise RuntimeError("keyring has no private key")
        return self.scheme.sign(self.own, payload)

    def verify(self, node: NodeId, payload: bytes, signature: bytes) -> bool:
        pk = self.public.get(node)
        if pk is None:
            return False
        return self.scheme.verify(pk, node, payload, signature)

    def for_node(self, key: KeyPair) -> "Keyring":
        return Keyring(self.scheme, self.public, key)


def make_keyrings(
    seed: bytes, nodes: list[NodeId], scheme: SignatureScheme | None = None
) -> dict[NodeId, Keyring]:
    """Generate keys for ``nodes`` and return one keyring per node."""
    scheme = scheme or HmacScheme()
    pairs = {node: scheme.keygen(seed, node) for node in nodes}
    shared = Keyring(scheme, {node: kp.public for node, kp in pairs.items()})
    return {node: shared.for_node(kp) for node, kp in pairs.items()}
