"""Scenario files: INI sections of ``key = value`` pairs.

Grammar (all times in milliseconds, floats allowed; ``#`` and ``;`` start
comments)::

    [scenario]      name, description, f (required), n (optional, must be
                    3f+1), seed, time_limit_ms, checkpoint_interval,
                    owner_change_quorum, partial_rollback, wire,
                    allow_excess_faults, signature (hmac | ed25519)
    [latency]       sites = names...      one name per replica site
                    jitter_ms = bound     uniform per-message jitter
                    <site> = d0 d1 ...    one full matrix row per site, or
                    <a>-<b> = d           symmetric pair entries
    [timers]        slow_ms, retransmit_ms, resend_ms, buffer_ms,
                    backoff_cap_ms (defaults derive from the max delay)
    [slow_quorums]  <leader> = r r r      designated slow quorum per leader
    [workload]      clients_per_replica, requests, keys, conflict_rate,
                    write_ratio, think_ms
    [client.<i>]    home, site, requests, keys, conflict_rate,
                    write_ratio, start_ms, think_ms,
                    script = cmd; cmd; ...  (get k | put k v | inc k v)
    [fault.<i>]     kind (crash|mute|drop|delay|partition|equivocate|
                    lie-deps), target (R<i>), start_ms, end_ms, prob,
                    extra_ms, pattern, strategy, group, honest
    [compare]       primary = <site index or name>

When any ``[client.<i>]`` section exists, ``[workload]`` is ignored.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .crypto import NodeId, replica
from .kv import Command
from .simnet import FAULT_KINDS, Fault, ScenarioError

MS = 1000


class ConfigError(ValueError):
    """The scenario file cannot be parsed."""


@dataclass
class ClientSpec:
    home: int
    site: int
    requests: int = 1
    keys: int = 16
    conflict_rate: float = 0.0
    write_ratio: float = 1.0
    start: int = 0
    think: int = 0
    script: Optional[list[Command]] = None


@dataclass
class Timers:
    slow: int
    retransmit: int
    resend: int
    buffer: int
    backoff_cap: int


@dataclass
class ScenarioConfig:
    name: str
    n: int
    f: int
    sites: list[str]
    matrix: list[list[int]]
    clients: list[ClientSpec]
    timers: Timers
    description: str = ""
    seed: int = 0
    jitter: int = 0
    time_limit: int = 60_000 * MS
    checkpoint_interval: int = 128
    owner_change_quorum: Optional[int] = None
    partial_rollback: bool = True
    wire: bool = True
    allow_excess_faults: bool = False
    signature: str = "hmac"
    slow_quorums: dict[int, tuple[int, ...]] = field(default_factory=dict)
    faults: list[Fault] = field(default_factory=list)
    primary: int = 0
    source: str = ""

    def validate(self) -> "ScenarioConfig":
        if self.f < 0 or self.n != 3 * self.f + 1:
            raise ScenarioError(f"N must equal 3f+1 (N={self.n}, f={self.f})")
        if len(self.matrix) != self.n:
            raise ScenarioError(f"latency matrix has {len(self.matrix)} sites, expected {self.n}")
        for i, row in enumerate(self.matrix):
            if len(row) != self.n or any(d < 0 for d in row):
                raise ScenarioError(f"latency row {self.sites[i]} must have {self.n} non-negative entries")
        if not self.clients:
            raise ScenarioError("scenario has no clients")
        for i, c in enumerate(self.clients):
            if not (0 <= c.home < self.n and 0 <= c.site < self.n):
                raise ScenarioError(f"client {i}: home/site out of range")
            if not 0.0 <= c.conflict_rate <= 1.0 or not 0.0 <= c.write_ratio <= 1.0:
                raise ScenarioError(f"client {i}: rates must lie in [0, 1]")
            if c.requests < 0 or c.keys < 1:
                raise ScenarioError(f"client {i}: requests must be >= 0 and keys >= 1")
        for leader, q in self.slow_quorums.items():
            if not 0 <= leader < self.n or len(set(q)) != 2 * self.f + 1 or not all(0 <= r < self.n for r in q):
                raise ScenarioError(f"slow quorum for leader {leader} must be {2 * self.f + 1} distinct replicas")
        if self.owner_change_quorum is not None and not self.f + 1 <= self.owner_change_quorum <= self.n:
            raise ScenarioError("owner_change_quorum must lie in [f+1, N]")
        faulty = {fl.target.index for fl in self.faults if fl.kind not in ("delay", "partition") and fl.target}
        if len(faulty) > self.f and not self.allow_excess_faults:
            raise ScenarioError(f"{len(faulty)} faulty replicas exceed f={self.f}")
        if not 0 <= self.primary < self.n:
            raise ScenarioError("compare primary out of range")
        if self.signature not in ("hmac", "ed25519"):
            raise ScenarioError(f"unknown signature scheme {self.signature!r}")
        return self

    @property
    def max_delay(self) -> int:
        return max(max(row) for row in self.matrix)


# --------------------------------------------------------------------------
# parsing helpers


def _ms(value: str, what: str) -> int:
    try:
        return round(float(value) * MS)
    except ValueError:
        raise ConfigError(f"{what}: expected a number of milliseconds, got {value!r}") from None


def _int(value: str, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{what}: expected an integer, got {value!r}") from None


def _float(value: str, what: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{what}: expected a number, got {value!r}") from None


def _bool(value: str, what: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{what}: expected a boolean, got {value!r}")


def parse_command(text: str) -> Command:
    parts = text.split()
    try:
        if parts[0] == "get" and len(parts) == 2:
            return Command.get(parts[1])
        if parts[0] == "put" and len(parts) == 3:
            return Command.put(parts[1], int(parts[2]))
        if parts[0] in ("inc", "increment") and len(parts) in (2, 3):
            return Command.increment(parts[1], int(parts[2]) if len(parts) == 3 else 1)
    except (IndexError, ValueError):
        pass
    raise ConfigError(f"bad command {text!r}: expected 'get k', 'put k v' or 'inc k [v]'")


def _site(value: str, sites: list[str], what: str) -> int:
    v = value.strip()
    if v in sites:
        return sites.index(v)
    if v.upper().startswith("R") and v[1:].isdigit():
        v = v[1:]
    idx = _int(v, what)
    if not 0 <= idx < len(sites):
        raise ScenarioError(f"{what}: site {value!r} out of range")
    return idx


def _replica(value: str, n: int, what: str) -> NodeId:
    v = value.strip()
    if v.upper().startswith("R"):
        v = v[1:]
    idx = _int(v, what)
    if not 0 <= idx < n:
        raise ScenarioError(f"{what}: replica {value!r} out of range")
    return replica(idx)


def _matrix(sec: configparser.SectionProxy, sites: list[str]) -> list[list[int]]:
    n = len(sites)
    m: list[list[Optional[int]]] = [[0 if i == j else None for j in range(n)] for i in range(n)]
    for key, value in sec.items():
        if key in ("sites", "jitter_ms"):
            continue
        if "-" in key:
            a, b = key.split("-", 1)
            i, j = _site(a, sites, "latency"), _site(b, sites, "latency")
            m[i][j] = m[j][i] = _ms(value, f"latency {key}")
            continue
        i = _site(key, sites, "latency")
        row = value.split()
        if len(row) != n:
            raise ScenarioError(f"latency row {key!r} has {len(row)} entries, expected {n}")
        m[i] = [_ms(v, f"latency {key}") for v in row]
    for i in range(n):
        for j in range(n):
            if m[i][j] is None:
                raise ScenarioError(f"latency between {sites[i]} and {sites[j]} is missing")
    return m  # type: ignore[return-value]


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    # keys are case-sensitive so site names survive
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str  # type: ignore[assignment]
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    if not cp.has_section("scenario"):
        raise ConfigError("missing [scenario] section")
    sc = cp["scenario"]
    if "f" not in sc:
        raise ConfigError("[scenario] needs f")
    f = _int(sc["f"], "f")
    n = _int(sc.get("n", str(3 * f + 1)), "n")

    lat = cp["latency"] if cp.has_section("latency") else None
    if lat is None:
        raise ConfigError("missing [latency] section")
    sites = lat.get("sites", "").replace(",", " ").split() or [f"R{i}" for i in range(n)]
    if len(sites) != n:
        raise ScenarioError(f"{len(sites)} latency sites for N={n}")
    matrix = _matrix(lat, sites)
    max_delay = max(max(row) for row in matrix)

    tm = cp["timers"] if cp.has_section("timers") else {}
    jitter = _ms(lat.get("jitter_ms", "0"), "jitter_ms")
    # the largest one-way delay a message can actually experience
    base = max(max_delay + jitter, MS)
    retransmit = _ms(tm["retransmit_ms"], "retransmit_ms") if "retransmit_ms" in tm else 6 * base
    timers = Timers(
        slow=_ms(tm["slow_ms"], "slow_ms") if "slow_ms" in tm else 2 * base,
        retransmit=retransmit,
        resend=_ms(tm["resend_ms"], "resend_ms") if "resend_ms" in tm else 4 * base,
        buffer=_ms(tm["buffer_ms"], "buffer_ms") if "buffer_ms" in tm else 4 * base,
        backoff_cap=_ms(tm["backoff_cap_ms"], "backoff_cap_ms") if "backoff_cap_ms" in tm else 8 * retransmit,
    )

    quorums = {}
    if cp.has_section("slow_quorums"):
        for leader, members in cp["slow_quorums"].items():
            quorums[_site(leader, sites, "slow_quorums")] = tuple(
                _site(m, sites, "slow_quorums") for m in members.replace(",", " ").split()
            )

    clients = _clients(cp, sites, n)
    faults = _faults(cp, n, sites)
    primary = _site(cp["compare"].get("primary", "0"), sites, "primary") if cp.has_section("compare") else 0

    cfg = ScenarioConfig(
        name=sc.get("name", Path(source).stem),
        n=n,
        f=f,
        sites=sites,
        matrix=matrix,
        clients=clients,
        timers=timers,
        description=sc.get("description", ""),
        seed=_int(sc.get("seed", "0"), "seed"),
        jitter=jitter,
        time_limit=_ms(sc.get("time_limit_ms", "60000"), "time_limit_ms"),
        checkpoint_interval=_int(sc.get("checkpoint_interval", "128"), "checkpoint_interval"),
        owner_change_quorum=_int(sc["owner_change_quorum"], "owner_change_quorum")
        if "owner_change_quorum" in sc
        else None,
        partial_rollback=_bool(sc.get("partial_rollback", "true"), "partial_rollback"),
        wire=_bool(sc.get("wire", "true"), "wire"),
        allow_excess_faults=_bool(sc.get("allow_excess_faults", "false"), "allow_excess_faults"),
        signature=sc.get("signature", "hmac"),
        slow_quorums=quorums,
        faults=faults,
        primary=primary,
        source=source,
    )
    return cfg.validate()


def _client_spec(sec, sites: list[str], home: int, what: str, defaults: dict) -> ClientSpec:
    get = lambda k: sec.get(k, defaults.get(k))  # noqa: E731
    script = None
    if sec.get("script"):
        script = [parse_command(part) for part in sec["script"].split(";") if part.strip()]
    return ClientSpec(
        home=home,
        site=_site(sec["site"], sites, what) if "site" in sec else home,
        requests=len(script) if script is not None else _int(get("requests") or "1", what),
        keys=_int(get("keys") or "16", what),
        conflict_rate=_float(get("conflict_rate") or "0", what),
        write_ratio=_float(get("write_ratio") or "1", what),
        start=_ms(sec.get("start_ms", "0"), what),
        think=_ms(get("think_ms") or "0", what),
        script=script,
    )


def _clients(cp: configparser.ConfigParser, sites: list[str], n: int) -> list[ClientSpec]:
    sections = sorted(
        (s for s in cp.sections() if s.startswith("client.")),
        key=lambda s: _int(s.split(".", 1)[1], s),
    )
    defaults = dict(cp["workload"]) if cp.has_section("workload") else {}
    if sections:
        return [
            _client_spec(cp[s], sites, _site(cp[s].get("home", "0"), sites, s), s, defaults) for s in sections
        ]
    per = _int(defaults.get("clients_per_replica", "1"), "clients_per_replica")
    return [_client_spec({}, sites, r, "workload", defaults) for r in range(n) for _ in range(per)]


def _faults(cp: configparser.ConfigParser, n: int, sites: list[str]) -> list[Fault]:
    out = []
    for s in sorted(s for s in cp.sections() if s.startswith("fault.")):
        sec = cp[s]
        kind = sec.get("kind", "")
        if kind not in FAULT_KINDS:
            raise ConfigError(f"[{s}] kind must be one of {', '.join(FAULT_KINDS)}")
        target = _replica(sec["target"], n, s) if "target" in sec else None
        if target is None and kind != "partition":
            raise ConfigError(f"[{s}] needs a target")
        group = frozenset(_site(g, sites, s) for g in sec.get("group", "").replace(",", " ").split())
        out.append(
            Fault(
                kind=kind,
                target=target,
                start=_ms(sec.get("start_ms", "0"), s),
                end=_ms(sec["end_ms"], s) if "end_ms" in sec else None,
                prob=_float(sec.get("prob", "0"), s),
                extra=_ms(sec.get("extra_ms", "0"), s),
                pattern=sec.get("pattern", "*"),
                strategy=sec.get("strategy", "echo"),
                group=group,
                honest=_int(sec.get("honest", "1"), s),
            )
        )
    return out


def load_scenario(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {p}: {e}") from None
    return parse_scenario(text, str(p))


def bundled_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def list_scenarios() -> list[str]:
    return sorted(p.stem for p in bundled_dir().glob("*.ini"))


def resolve_scenario(name_or_path: str) -> ScenarioConfig:
    """A bundled scenario by name, or a scenario file by path."""
    p = Path(name_or_path)
    if p.suffix == ".ini" or p.exists():
        return load_scenario(p)
    bundled = bundled_dir() / f"{name_or_path}.ini"
    if not bundled.exists():
        raise ConfigError(f"unknown scenario {name_or_path!r}; try list-scenarios")
    return load_scenario(bundled)
