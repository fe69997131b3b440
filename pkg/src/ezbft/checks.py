"""Post-run invariant checks over a finished simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .execution import linearize
from .kv import apply_to, interferes
from .simnet import Simulator

PROPERTIES = ("Nontriviality", "Consistency", "Stability", "Liveness", "Serializability")


@dataclass
class PropertyResult:
    name: str
    ok: bool
    detail: str = ""
    line: Optional[int] = None

    def __str__(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        where = f" (trace line {self.line})" if self.line else ""
        return f"{status} {self.name}{where}{': ' + self.detail if self.detail else ''}"


@dataclass
class InvariantReport:
    results: list[PropertyResult] = field(default_factory=list)
    out_of_model: bool = False

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    def get(self, name: str) -> PropertyResult:
        return next(r for r in self.results if r.name == name)

    def lines(self) -> list[str]:
        out = [str(r) for r in self.results]
        if self.out_of_model:
            out.append("NOTE run is out of model: more than f replicas are faulty")
        return out


def correct_replicas(sim: Simulator):
    return [r for r in sim.replicas if r.index not in sim.faulty]


def global_linearization(sim: Simulator) -> list:
    """Committed instances known to any correct replica, in execution order.

    Each command appears once, at its first position.
    """
    deps, seq, cmds = {}, {}, {}
    for r in correct_replicas(sim):
        for iid, rec in r.records.items():
            if rec.committed and iid not in deps:
                deps[iid], seq[iid], cmds[iid] = rec.deps, rec.seq, (rec.command_id, rec.command)
    order, seen = [], set()
    for iid in linearize(deps.keys(), deps, seq):
        cid, cmd = cmds[iid]
        if cid not in seen:
            seen.add(cid)
            order.append((iid, cid, cmd))
    return order


def executed_commands(replica) -> list:
    """(cid, command) in the replica's final-execution order, first occurrence only."""
    out, seen = [], set()
    for iid in replica.engine.executed:
        cid = replica.final_commands.get(iid)
        rec = replica.records.get(iid)
        if cid is None or cid in seen or rec is None:
            continue
        seen.add(cid)
        out.append((cid, rec.command))
    return out


def check_serializability(sim: Simulator) -> PropertyResult:
    order = global_linearization(sim)
    store: dict = {}
    for _, _, cmd in order:
        apply_to(store, cmd)
    position = {cid: i for i, (_, cid, _) in enumerate(order)}
    for r in correct_replicas(sim):
        done = executed_commands(r)
        if {cid for cid, _ in done} != set(position):
            return PropertyResult(
                "Serializability", False,
                f"R{r.index} finally executed {len(done)} of {len(position)} committed commands",
            )
        if r.engine.state.final != store:
            return PropertyResult("Serializability", False, f"R{r.index} final state differs from the serial oracle")
        by_key: dict = {}
        for cid, cmd in done:
            by_key.setdefault(cmd.key, []).append((cid, cmd))
        for seqs in by_key.values():
            for i, (a, ca) in enumerate(seqs):
                for b, cb in seqs[i + 1 :]:
                    if interferes(ca, cb) and position[a] > position[b]:
                        return PropertyResult(
                            "Serializability", False,
                            f"R{r.index} ran interfering commands in an order other replicas may not",
                        )
    return PropertyResult("Serializability", True, f"{len(order)} commands match the serial oracle")


def check_invariants(
    sim: Simulator, time_limit: Optional[int] = None, serializability: Optional[bool] = None
) -> InvariantReport:
    report = InvariantReport(out_of_model=sim.out_of_model)
    violations = sim.monitor.violations
    for prop in ("Nontriviality", "Consistency", "Stability"):
        bad = [v for v in violations if v.prop == prop]
        if bad:
            report.results.append(PropertyResult(prop, False, f"{len(bad)} violation(s); first: {bad[0].detail}", bad[0].line))
        else:
            report.results.append(PropertyResult(prop, True))

    delivered = {(d.delivery.client, d.delivery.t) for d in sim.deliveries}
    missing = [s for s in sim.submissions if (s.client, s.t) not in delivered]
    if missing:
        first = missing[0]
        report.results.append(
            PropertyResult(
                "Liveness", False,
                f"{len(missing)} submitted command(s) undelivered by t={time_limit}; first {first.client}/{first.t}",
                first.line,
            )
        )
    else:
        report.results.append(PropertyResult("Liveness", True, f"{len(delivered)} delivered"))

    if serializability is not False:
        report.results.append(check_serializability(sim))
    return report
