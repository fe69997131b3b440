"""Per-command latency records and per-region summaries."""

from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass, field
from typing import Optional

from .simnet import Simulator

MS = 1000.0


@dataclass
class CommandRecord:
    id: str
    client: str
    region: str
    command: str
    submit_ms: float
    deliver_ms: float
    latency_ms: float
    path: str
    steps: int
    instance: Optional[str]


@dataclass
class RegionSummary:
    region: str
    count: int
    mean_ms: float
    median_ms: float
    p99_ms: float
    fast_ratio: float


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    records: list[CommandRecord]
    regions: list[RegionSummary]
    submitted: int
    delivered: int
    undelivered: int
    planned: int
    fast_ratio: float
    mean_latency_ms: float
    throughput_per_s: float
    owner_changes: int
    rollbacks: int
    messages_sent: int
    messages_dropped: int
    end_time_ms: float
    trace_digest: str
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("records")
        return d

    def to_jsonl(self) -> str:
        lines = [json.dumps({"record": asdict(r)}, sort_keys=True) for r in self.records]
        lines.append(json.dumps({"summary": self.summary()}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def region(self, name: str) -> RegionSummary:
        return next(r for r in self.regions if r.region == name)


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, -(-len(ordered) * q // 100))
    return ordered[int(rank) - 1]


def _summarise(region: str, records: list[CommandRecord]) -> RegionSummary:
    lat = [r.latency_ms for r in records]
    return RegionSummary(
        region,
        len(records),
        statistics.fmean(lat) if lat else 0.0,
        statistics.median(lat) if lat else 0.0,
        percentile(lat, 99),
        sum(r.path == "fast" for r in records) / len(records) if records else 0.0,
    )


def collect_metrics(sim: Simulator, cfg, planned: int) -> MetricsReport:
    records = []
    for rec in sim.deliveries:
        d = rec.delivery
        site = sim.latency.site(d.client)
        records.append(
            CommandRecord(
                id=f"{d.client}/{d.t}",
                client=str(d.client),
                region=cfg.sites[site],
                command=str(d.command),
                submit_ms=d.submitted_at / MS,
                deliver_ms=d.delivered_at / MS,
                latency_ms=(d.delivered_at - d.submitted_at) / MS,
                path=d.path,
                steps=rec.steps,
                instance=str(d.instance) if d.instance is not None else None,
            )
        )
    by_region: dict[str, list[CommandRecord]] = {}
    for r in records:
        by_region.setdefault(r.region, []).append(r)
    regions = [_summarise(name, by_region[name]) for name in cfg.sites if name in by_region]

    correct = [r for r in sim.replicas if r.index not in sim.faulty]
    frozen = {(i, s.owner) for r in correct for i, s in enumerate(r.spaces) if s.frozen}
    span = (
        (max(r.deliver_ms for r in records) - min(r.submit_ms for r in records)) / 1000.0 if records else 0.0
    )
    lat = [r.latency_ms for r in records]
    return MetricsReport(
        scenario=cfg.name,
        seed=sim.rng_seed,
        records=records,
        regions=regions,
        submitted=len(sim.submissions),
        delivered=len(records),
        undelivered=len(sim.submissions) - len(records),
        planned=planned,
        fast_ratio=sum(r.path == "fast" for r in records) / len(records) if records else 0.0,
        mean_latency_ms=statistics.fmean(lat) if lat else 0.0,
        throughput_per_s=len(records) / span if span > 0 else 0.0,
        owner_changes=len(frozen),
        rollbacks=sum(r.engine.rollbacks for r in correct),
        messages_sent=sim.messages_sent,
        messages_dropped=sim.messages_dropped,
        end_time_ms=sim.now / MS,
        trace_digest=sim.trace.digest(),
    )
