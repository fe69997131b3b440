"""Randomised end-to-end runs: the safety and liveness invariants hold for any
scenario with at most f Byzantine replicas."""

from __future__ import annotations

from hypothesis import HealthCheck, given, settings, strategies as st

from ezbft.config import parse_scenario
from ezbft.harness import run_scenario

FAULT_KINDS = ("crash", "mute", "equivocate", "lie-deps", "drop", None)


@st.composite
def scenarios(draw) -> str:
    f = draw(st.sampled_from([1, 1, 2]))
    n = 3 * f + 1
    lines = [
        "[scenario]",
        "name = random",
        f"f = {f}",
        f"seed = {draw(st.integers(0, 2**16))}",
        "time_limit_ms = 120000",
        f"checkpoint_interval = {draw(st.sampled_from([2, 4, 128]))}",
        "[latency]",
        f"jitter_ms = {draw(st.sampled_from([0, 2, 10]))}",
    ]
    for i in range(n):
        for j in range(i + 1, n):
            lines.append(f"R{i}-R{j} = {draw(st.integers(1, 60))}")
    lines += [
        "[workload]",
        f"clients_per_replica = {draw(st.integers(1, 2))}",
        f"requests = {draw(st.integers(1, 5))}",
        f"keys = {draw(st.sampled_from([1, 2, 8]))}",
        f"conflict_rate = {draw(st.sampled_from([0, 0.3, 0.7, 1]))}",
        f"write_ratio = {draw(st.sampled_from([0.5, 1]))}",
    ]
    targets = draw(st.lists(st.integers(0, n - 1), min_size=f, max_size=f, unique=True))
    for k, target in enumerate(targets):
        kind = draw(st.sampled_from(FAULT_KINDS))
        if kind is None:
            continue
        lines += [f"[fault.{k}]", f"kind = {kind}", f"target = R{target}"]
        if kind in ("crash", "mute"):
            lines.append(f"start_ms = {draw(st.integers(0, 300))}")
        elif kind == "drop":
            lines.append(f"prob = {draw(st.sampled_from([0.1, 0.5]))}")
        elif kind == "lie-deps":
            lines.append(f"strategy = {draw(st.sampled_from(['echo', 'empty']))}")
        elif kind == "equivocate":
            lines.append(f"honest = {draw(st.integers(0, 2))}")
    return "\n".join(lines) + "\n"


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(scenarios())
def test_invariants_hold_for_random_scenarios(text):
    r = run_scenario(parse_scenario(text))
    assert r.report.ok, "\n".join(r.report.lines()) + "\n" + text
    assert r.metrics.delivered == r.metrics.planned
