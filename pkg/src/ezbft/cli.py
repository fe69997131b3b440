"""Command-line entry point.

Exit codes: 0 success, 2 scenario parse error, 3 invalid scenario,
4 invariant violation (or replay digest mismatch).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .compare import format_table, latency_model_compare
from .config import MS, ConfigError, ScenarioConfig, list_scenarios, resolve_scenario
from .harness import RunResult, run_scenario
from .simnet import ScenarioError

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_VIOLATION = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ezbft", description="Leaderless BFT replication simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--scenario", required=True, help="bundled scenario name or path to an .ini file")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--time-limit", type=float, default=None, help="simulated time limit in ms")
        sp.add_argument("--out-dir", type=Path, default=None, help="write metrics and trace files here")
        sp.add_argument(
            "--strict", action="store_true",
            help="violations are fatal even for out-of-model runs (more than f faulty replicas)",
        )

    common(sub.add_parser("run", help="run a scenario, report metrics and invariants"))
    common(sub.add_parser("check", help="run a scenario and report only the invariant checks"))
    common(sub.add_parser("compare", help="leaderless vs primary-based latency table"))
    rp = sub.add_parser("replay", help="re-run the scenario recorded in a trace file and compare digests")
    rp.add_argument("trace", type=Path)
    rp.add_argument("--out-dir", type=Path, default=None)
    sub.add_parser("list-scenarios", help="list bundled scenarios")
    return p


def _time_limit(args) -> Optional[int]:
    return None if args.time_limit is None else round(args.time_limit * MS)


def _write_outputs(out_dir: Path, result: RunResult) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{result.scenario.name}-seed{result.seed}"
    (out_dir / f"{stem}.metrics.jsonl").write_text(result.metrics.to_jsonl())
    header = (
        f"# scenario={result.scenario.source}\n"
        f"# seed={result.seed}\n"
        f"# time_limit_us={result.time_limit}\n"
        f"# digest={result.digest}\n"
    )
    (out_dir / f"{stem}.trace").write_text(header + result.sim.trace.text())
    (out_dir / f"{stem}.invariants.txt").write_text("\n".join(result.report.lines()) + "\n")


def _violation_exit(result: RunResult, strict: bool) -> int:
    if result.report.ok:
        return EXIT_OK
    if result.report.out_of_model and not strict:
        return EXIT_OK
    return EXIT_VIOLATION


def _print_metrics(result: RunResult) -> None:
    m = result.metrics
    print(f"scenario {m.scenario} seed {m.seed}: {result.scenario.description}")
    print(
        f"submitted {m.submitted}  delivered {m.delivered}  undelivered {m.undelivered}  "
        f"fast-path ratio {m.fast_ratio:.3f}  mean latency {m.mean_latency_ms:.1f} ms"
    )
    print(
        f"throughput {m.throughput_per_s:.1f}/s  owner changes {m.owner_changes}  "
        f"rollbacks {m.rollbacks}  messages {m.messages_sent} (dropped {m.messages_dropped})"
    )
    for r in m.regions:
        print(
            f"  {r.region:<8} n={r.count:<4} mean {r.mean_ms:8.1f}  median {r.median_ms:8.1f}  "
            f"p99 {r.p99_ms:8.1f}  fast {r.fast_ratio:.2f}"
        )
    print(f"trace digest {m.trace_digest}")


def _load(args) -> ScenarioConfig:
    return resolve_scenario(args.scenario)


def _cmd_run(args, quiet_metrics: bool = False) -> int:
    cfg = _load(args)
    result = run_scenario(cfg, args.seed, _time_limit(args))
    if not quiet_metrics:
        _print_metrics(result)
    for line in result.report.lines():
        print(line)
    if args.out_dir is not None:
        _write_outputs(args.out_dir, result)
    return _violation_exit(result, args.strict)


def _cmd_compare(args) -> int:
    cfg = _load(args)
    if any(f.kind not in ("delay", "partition") for f in cfg.faults):
        print("note: compare models a fault-free run; scripted faults still apply to the simulation")
    result = run_scenario(cfg, args.seed, _time_limit(args))
    rows = latency_model_compare(cfg, result.metrics)
    print(format_table(cfg, rows))
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / f"{cfg.name}.compare.json").write_text(
            json.dumps(
                [
                    {
                        "region": r.region,
                        "ezbft_sim_ms": r.ezbft_sim_ms,
                        "ezbft_model_ms": r.ezbft_model_ms,
                        "primary_model_ms": r.primary_model_ms,
                        "improvement": r.improvement,
                    }
                    for r in rows
                ],
                indent=2,
            )
        )
    return _violation_exit(result, strict=False)


def read_trace_header(path: Path) -> dict[str, str]:
    header = {}
    with path.open() as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
    return header


def _cmd_replay(args) -> int:
    try:
        header = read_trace_header(args.trace)
    except OSError as e:
        raise ConfigError(f"cannot read trace: {e}") from None
    if not {"scenario", "seed", "digest"} <= header.keys():
        raise ConfigError("trace file lacks the scenario/seed/digest header")
    cfg = resolve_scenario(header["scenario"])
    limit = int(header["time_limit_us"]) if "time_limit_us" in header else None
    result = run_scenario(cfg, int(header["seed"]), limit)
    same = result.digest == header["digest"]
    print(f"recorded {header['digest']}")
    print(f"replayed {result.digest}")
    print("identical" if same else "MISMATCH")
    if args.out_dir is not None:
        _write_outputs(args.out_dir, result)
    return EXIT_OK if same else EXIT_VIOLATION


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "list-scenarios":
            for name in list_scenarios():
                cfg = resolve_scenario(name)
                print(f"{name:<16} {cfg.description}")
            return EXIT_OK
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "check":
            return _cmd_run(args, quiet_metrics=True)
        if args.verb == "compare":
            return _cmd_compare(args)
        if args.verb == "replay":
            return _cmd_replay(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except ScenarioError as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_PARSE  # pragma: no cover - argparse enforces a verb


if __name__ == "__main__":
    sys.exit(main())
