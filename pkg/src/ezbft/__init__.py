"""Leaderless Byzantine fault-tolerant state machine replication.

Replicas order client commands in per-replica instance spaces, execute them
speculatively, and agree on dependencies and sequence numbers that fix a
deterministic final order.  Everything runs on a deterministic simulated
network; see :mod:`ezbft.cli` for the command-line entry point.
"""

from .client import Client, Delivery
from .config import ScenarioConfig, load_scenario, parse_scenario, resolve_scenario
from .crypto import client, make_keyrings, replica
from .harness import RunResult, build_simulation, run_scenario
from .kv import Command
from .replica import Replica, ReplicaConfig
from .simnet import Fault, LatencyModel, Simulator

__all__ = [
    "Client",
    "Command",
    "Delivery",
    "Fault",
    "LatencyModel",
    "Replica",
    "ReplicaConfig",
    "RunResult",
    "ScenarioConfig",
    "Simulator",
    "build_simulation",
    "client",
    "load_scenario",
    "make_keyrings",
    "parse_scenario",
    "replica",
    "resolve_scenario",
    "run_scenario",
]

__version__ = "0.1.0"
