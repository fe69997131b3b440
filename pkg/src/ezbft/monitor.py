"""Online safety monitor fed by replica commit and execution events."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable


@dataclass(frozen=True)
class Violation:
    prop: str
    time: int
    line: int
    detail: str

    def __str__(self) -> str:
        return f"{self.prop} violated at t={self.time} (trace line {self.line}): {self.detail}"


@dataclass
class SafetyMonitor:
    """Checks Consistency, Stability and Nontriviality after every replica step.

    Only events from correct replicas are considered.  Consistency: no two
    correct replicas commit or finally execute different commands at one
    instance.  Stability: a correct replica never withdraws a commit nor
    changes the dependency metadata of a committed instance.  Nontriviality: a
    correct replica only executes commands some client submitted.
    """

    correct: Iterable[int]
    submitted: set = field(default_factory=set)
    committed: dict = field(default_factory=dict)
    executed: dict = field(default_factory=dict)
    commits_by_replica: dict = field(default_factory=dict)
    violations: list[Violation] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.correct = frozenset(self.correct)

    def observe(self, replica: int, event: tuple, time: int, line: int) -> None:
        if replica not in self.correct:
            return
        kind, iid, cid = event
        if kind == "commit":
            self.commits_by_replica.setdefault(replica, set()).add(iid)
            self._agree(self.committed, iid, cid, replica, time, line, "commit")
        elif kind == "final":
            if cid not in self.submitted:
                self.violations.append(
                    Violation("Nontriviality", time, line, f"R{replica} executed {_cid(cid)}, never submitted")
                )
            self._agree(self.executed, iid, cid, replica, time, line, "final execution")
        elif kind == "uncommit":
            self.violations.append(
                Violation("Stability", time, line, f"R{replica} withdrew committed instance {iid}")
            )
        elif kind == "recommit":
            self.violations.append(
                Violation("Stability", time, line, f"R{replica} changed the metadata of committed {iid}")
            )

    def _agree(self, table: dict, iid, cid, replica: int, time: int, line: int, what: str) -> None:
        seen = table.get(iid)
        if seen is None:
            table[iid] = (cid, replica)
        elif seen[0] != cid:
            self.violations.append(
                Violation(
                    "Consistency", time, line,
                    f"{what} of {iid}: R{seen[1]} has {_cid(seen[0])}, R{replica} has {_cid(cid)}",
                )
            )

    @property
    def ok(self) -> bool:
        return not self.violations


def _cid(cid) -> str:
    c, t = cid
    return f"{c}/{t}"
