"""Builds a simulation from a scenario and runs it."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Optional

from .adversary import EquivocatingReplica, LyingReplica
from .checks import InvariantReport, check_invariants
from .client import Client
from .config import ClientSpec, ScenarioConfig
from .crypto import Ed25519Scheme, HmacScheme, client, make_keyrings, replica
from .kv import Command
from .metrics import MetricsReport, collect_metrics
from .replica import Replica, ReplicaConfig
from .simnet import Fault, LatencyModel, Simulator


class Workload:
    """Closed-loop command generator, one seeded stream per client.

    A command uses the shared hot key with probability ``conflict_rate`` and
    one of the client's private keys otherwise; it writes with probability
    ``write_ratio`` and reads otherwise.
    """

    HOT_KEY = "hot"

    def __init__(self, specs: list[ClientSpec], seed: int) -> None:
        self.specs = specs
        self.issued = [0] * len(specs)
        self.rngs = [random.Random(f"workload:{seed}:{i}") for i in range(len(specs))]

    def __call__(self, c: int, now: int) -> Optional[Command]:
        spec = self.specs[c]
        if self.issued[c] >= spec.requests:
            return None
        i = self.issued[c]
        self.issued[c] += 1
        if spec.script is not None:
            return spec.script[i]
        rng = self.rngs[c]
        hot = rng.random() < spec.conflict_rate
        key = self.HOT_KEY if hot else f"c{c}.k{rng.randrange(spec.keys)}"
        if rng.random() < spec.write_ratio:
            return Command.put(key, rng.randrange(1000))
        return Command.get(key)

    @property
    def total(self) -> int:
        return sum(s.requests for s in self.specs)


def _key_seed(cfg: ScenarioConfig, seed: int) -> bytes:
    return hashlib.sha256(f"keys:{cfg.name}:{seed}".encode()).digest()


def _replica_for(i: int, cfg: ScenarioConfig, keys, rcfg: ReplicaConfig, seed: int) -> Replica:
    for fault in cfg.faults:
        if fault.target != replica(i):
            continue
        if fault.kind == "lie-deps":
            return LyingReplica(i, keys, rcfg, fault.strategy)
        if fault.kind == "equivocate":
            return EquivocatingReplica(i, keys, rcfg, _group_b(fault, cfg.n, seed), fault.honest)
    return Replica(i, keys, rcfg)


def _group_b(fault: Fault, n: int, seed: int) -> frozenset[int]:
    if fault.group:
        return fault.group
    others = [r for r in range(n) if r != fault.target.index]
    rng = random.Random(f"equivocate:{seed}")
    rng.shuffle(others)
    return frozenset(others[: rng.randint(1, len(others) - 1)])


def build_simulation(cfg: ScenarioConfig, seed: Optional[int] = None) -> tuple[Simulator, Workload]:
    seed = cfg.seed if seed is None else seed
    scheme = Ed25519Scheme() if cfg.signature == "ed25519" else HmacScheme()
    nodes = [replica(i) for i in range(cfg.n)] + [client(i) for i in range(len(cfg.clients))]
    keys = make_keyrings(_key_seed(cfg, seed), nodes, scheme)
    rcfg = ReplicaConfig(
        cfg.n,
        cfg.f,
        resend_timeout=cfg.timers.resend,
        buffer_timeout=cfg.timers.buffer,
        owner_change_quorum=cfg.owner_change_quorum,
        checkpoint_interval=cfg.checkpoint_interval,
        partial_rollback=cfg.partial_rollback,
    )
    replicas = [_replica_for(i, cfg, keys[replica(i)], rcfg, seed) for i in range(cfg.n)]
    clients = [
        Client(
            client(i),
            keys[client(i)],
            cfg.n,
            cfg.f,
            spec.home,
            cfg.timers.slow,
            cfg.timers.retransmit,
            cfg.timers.backoff_cap,
            cfg.slow_quorums,
        )
        for i, spec in enumerate(cfg.clients)
    ]
    latency = LatencyModel(cfg.matrix, {client(i): s.site for i, s in enumerate(cfg.clients)}, cfg.jitter)
    workload = Workload(cfg.clients, seed)
    sim = Simulator(
        cfg.n,
        cfg.f,
        replicas,
        clients,
        latency,
        workload,
        start_times={i: s.start for i, s in enumerate(cfg.clients)},
        faults=cfg.faults,
        seed=seed,
        wire=cfg.wire,
        allow_excess_faults=cfg.allow_excess_faults,
    )
    return sim, workload


@dataclass
class RunResult:
    scenario: ScenarioConfig
    seed: int
    time_limit: int
    sim: Simulator
    metrics: MetricsReport
    report: InvariantReport

    @property
    def digest(self) -> str:
        return self.sim.trace.digest()


def run_scenario(
    cfg: ScenarioConfig,
    seed: Optional[int] = None,
    time_limit: Optional[int] = None,
    serializability: Optional[bool] = None,
) -> RunResult:
    """Run ``cfg`` to quiescence or the time limit, then collect metrics and checks."""
    seed = cfg.seed if seed is None else seed
    limit = cfg.time_limit if time_limit is None else time_limit
    sim, workload = build_simulation(cfg, seed)
    sim.run(limit)
    metrics = collect_metrics(sim, cfg, workload.total)
    report = check_invariants(sim, time_limit=limit, serializability=serializability)
    return RunResult(cfg, seed, limit, sim, metrics, report)
