"""The replicated key-value application.

Commands are ``get``, ``put`` and ``increment`` on integer values.  Mutating
commands reply ``None`` (an acknowledgement) so that increments commute in
both state and replies; ``get`` replies the current value, or ``None`` for a
missing key.

``KVState`` keeps a final map plus a speculative overlay.  Speculative
applications are logged with undo records so they can be rolled back either
entirely or from the earliest entry touching a given key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Hashable, Iterable, Optional

Reply = Optional[int]
EMPTY: Reply = None


class Op(IntEnum):
    GET = 0
    PUT = 1
    INCREMENT = 2


class Mode(Enum):
    SPECULATIVE = "speculative"
    FINAL = "final"


@dataclass(frozen=True)
class Command:
    op: Op
    key: bytes
    value: int = 0

    def __str__(self) -> str:
        if self.op is Op.GET:
            return f"get {self.key.decode(errors='replace')}"
        name = "put" if self.op is Op.PUT else "inc"
        return f"{name} {self.key.decode(errors='replace')} {self.value}"

    @classmethod
    def get(cls, key: str | bytes) -> "Command":
        return cls(Op.GET, _key(key))

    @classmethod
    def put(cls, key: str | bytes, value: int) -> "Command":
        return cls(Op.PUT, _key(key), value)

    @classmethod
    def increment(cls, key: str | bytes, value: int = 1) -> "Command":
        return cls(Op.INCREMENT, _key(key), value)


def _key(key: str | bytes) -> bytes:
    return key.encode() if isinstance(key, str) else key


def interferes(a: Command, b: Command) -> bool:
    """True iff executing ``a`` and ``b`` in the two orders can differ."""
    if a.key != b.key:
        return False
    if a.op is Op.GET and b.op is Op.GET:
        return False
    if a.op is Op.INCREMENT and b.op is Op.INCREMENT:
        return False
    return True


def apply_to(store: dict[bytes, int], cmd: Command) -> Reply:
    """Apply ``cmd`` to a plain dict.  Used by the serial oracle and by KVState."""
    if cmd.op is Op.GET:
        return store.get(cmd.key, EMPTY)
    if cmd.op is Op.PUT:
        store[cmd.key] = cmd.value
    else:
        store[cmd.key] = store.get(cmd.key, 0) + cmd.value
    return EMPTY


@dataclass
class _SpecEntry:
    tag: Hashable
    cmd: Command
    # overlay value of cmd.key before this entry; _ABSENT when the key was not overlaid
    prev: object


_ABSENT = object()


@dataclass
class KVState:
    final: dict[bytes, int] = field(default_factory=dict)
    overlay: dict[bytes, int] = field(default_factory=dict)
    log: list[_SpecEntry] = field(default_factory=list)

    def read(self, key: bytes, mode: Mode = Mode.SPECULATIVE) -> Reply:
        if mode is Mode.SPECULATIVE and key in self.overlay:
            return self.overlay[key]
        return self.final.get(key, EMPTY)

    def apply(self, cmd: Command, mode: Mode, tag: Hashable = None) -> Reply:
        if mode is Mode.FINAL:
            return apply_to(self.final, cmd)
        prev = self.overlay.get(cmd.key, _ABSENT)
        self.log.append(_SpecEntry(tag, cmd, prev))
        if cmd.op is Op.GET:
            return self.read(cmd.key)
        if cmd.op is Op.PUT:
            self.overlay[cmd.key] = cmd.value
        else:
            self.overlay[cmd.key] = (self.read(cmd.key) or 0) + cmd.value
        return EMPTY

    def rollback(self) -> "KVState":
        self.overlay.clear()
        self.log.clear()
        return self

    def speculative_tags(self) -> list[Hashable]:
        return [e.tag for e in self.log]

    def first_tag_on(self, key: bytes) -> Hashable:
        return next((e.tag for e in self.log if e.cmd.key == key), None)

    def _undo_to(self, index: int) -> list[_SpecEntry]:
        undone = self.log[index:]
        for entry in reversed(undone):
            if entry.prev is _ABSENT:
                self.overlay.pop(entry.cmd.key, None)
            else:
                self.overlay[entry.cmd.key] = entry.prev  # type: ignore[assignment]
        del self.log[index:]
        return undone

    def finalize(self, cmd: Command, tag: Hashable, partial: bool = True) -> tuple[Reply, int]:
        """Final-apply ``cmd`` and drop its speculative entry, if any.

        Speculative entries from the earliest one touching ``cmd.key`` (or all
        of them when ``partial`` is false) are undone and re-applied on top of
        the new final state.  Returns the final reply and the number of
        surviving entries that had to be re-applied.
        """
        if partial:
            start = next(
                (i for i, e in enumerate(self.log) if e.tag == tag or e.cmd.key == cmd.key),
                len(self.log),
            )
        else:
            start = 0
        undone = self._undo_to(start)
        rep = apply_to(self.final, cmd)
        survivors = [e for e in undone if e.tag != tag]
        for entry in survivors:
            self.apply(entry.cmd, Mode.SPECULATIVE, entry.tag)
        return rep, len(survivors)

    def discard(self, tags: Iterable[Hashable]) -> int:
        """Remove the speculative entries carrying any of ``tags``; re-apply the rest."""
        drop = set(tags)
        start = next((i for i, e in enumerate(self.log) if e.tag in drop), None)
        if start is None:
            return 0
        undone = self._undo_to(start)
        survivors = [e for e in undone if e.tag not in drop]
        for entry in survivors:
            self.apply(entry.cmd, Mode.SPECULATIVE, entry.tag)
        return len(survivors)

    def snapshot(self, mode: Mode = Mode.FINAL) -> dict[bytes, int]:
        if mode is Mode.FINAL:
            return dict(self.final)
        view = dict(self.final)
        view.update(self.overlay)
        return view


def serial_execute(commands: Iterable[Command]) -> tuple[dict[bytes, int], list[Reply]]:
    store: dict[bytes, int] = {}
    replies = [apply_to(store, c) for c in commands]
    return store, replies
