"""Outputs of the protocol state machines, interpreted by the simulator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable, Union

from .crypto import NodeId


@dataclass(frozen=True)
class Send:
    dst: NodeId
    msg: Any


@dataclass(frozen=True)
class Broadcast:
    """Send to every replica; ``include_self`` only matters for replica senders."""

    msg: Any
    include_self: bool = True


@dataclass(frozen=True)
class SetTimer:
    key: Hashable
    delay: int


@dataclass(frozen=True)
class CancelTimer:
    key: Hashable


@dataclass(frozen=True)
class Deliver:
    """A client hands a reply to its application."""

    delivery: Any


Effect = Union[Send, Broadcast, SetTimer, CancelTimer, Deliver]
