"""Leaderless versus primary-based client latency over one delay matrix.

Both models count three one-way legs.  The leaderless fast path goes client
to its home replica, home replica to every replica, and every replica back to
the client; it completes when the slowest of those two-leg paths does.  The
primary-based model routes every request through one fixed primary instead
and, like the fast path, waits for all replicas.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .config import ScenarioConfig

Matrix = Sequence[Sequence[float]]


def leaderless_latency(m: Matrix, client_site: int, home: int) -> float:
    n = len(m)
    return m[client_site][home] + max(m[home][j] + m[j][client_site] for j in range(n))


def primary_latency(m: Matrix, client_site: int, primary: int) -> float:
    return leaderless_latency(m, client_site, primary)


@dataclass
class CompareRow:
    region: str
    site: int
    home: int
    ezbft_model_ms: float
    primary_model_ms: float
    ezbft_sim_ms: Optional[float] = None

    @property
    def ezbft_ms(self) -> float:
        return self.ezbft_sim_ms if self.ezbft_sim_ms is not None else self.ezbft_model_ms

    @property
    def improvement(self) -> float:
        """Relative latency saved against the primary-based model."""
        if self.primary_model_ms == 0:
            return 0.0
        return 1.0 - self.ezbft_ms / self.primary_model_ms


def latency_model_compare(cfg: ScenarioConfig, metrics=None) -> list[CompareRow]:
    """One row per client region; ``metrics`` adds simulated means when given."""
    m = [[d / 1000.0 for d in row] for row in cfg.matrix]
    rows, seen = [], set()
    for spec in cfg.clients:
        if spec.site in seen:
            continue
        seen.add(spec.site)
        region = cfg.sites[spec.site]
        sim = None
        if metrics is not None:
            sim = next((r.mean_ms for r in metrics.regions if r.region == region), None)
        rows.append(
            CompareRow(
                region,
                spec.site,
                spec.home,
                leaderless_latency(m, spec.site, spec.home),
                primary_latency(m, spec.site, cfg.primary),
                sim,
            )
        )
    return sorted(rows, key=lambda r: r.site)


def farthest_region(cfg: ScenarioConfig, rows: list[CompareRow]) -> CompareRow:
    """The row whose client sits farthest (one-way) from the modelled primary."""
    return max(rows, key=lambda r: (cfg.matrix[r.site][cfg.primary], r.site))


def format_table(cfg: ScenarioConfig, rows: list[CompareRow]) -> str:
    header = f"{'region':<10} {'ezbft sim':>10} {'ezbft model':>12} {'primary model':>14} {'improvement':>12}"
    lines = [f"primary = {cfg.sites[cfg.primary]}", header]
    for r in rows:
        sim = f"{r.ezbft_sim_ms:.1f}" if r.ezbft_sim_ms is not None else "-"
        tag = " (primary)" if r.site == cfg.primary else ""
        lines.append(
            f"{r.region:<10} {sim:>10} {r.ezbft_model_ms:>12.1f} {r.primary_model_ms:>14.1f} "
            f"{100 * r.improvement:>11.1f}%{tag}"
        )
    return "\n".join(lines)
