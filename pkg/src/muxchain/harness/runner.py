"""Run one scenario and turn its outcome into the three headline metrics."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Optional

from .config import ScenarioConfig
from .runlog import RunLog

CSV_COLUMNS = ("protocol", "n_nodes", "cl", "macroblock_bytes", "rounds", "median_round_latency_ms",
               "effective_throughput_Bps", "discard_ratio", "empty_slot_rate", "fork_count", "seed", "status")


def fmt_float(x: Optional[float], digits: int = 3) -> str:
    return "" if x is None else f"{x:.{digits}f}"


@dataclass(frozen=True)
class MetricsReport:
    protocol: str
    n_nodes: int
    cl: int
    macroblock_bytes: int
    rounds: int
    round_latencies_ms: tuple[float, ...]
    effective_throughput_Bps: float
    discard_ratio: Optional[float]
    empty_slot_rate: float
    fork_count: int
    seed: int
    status: str

    @property
    def median_round_latency_ms(self) -> Optional[float]:
        return statistics.median(self.round_latencies_ms) if self.round_latencies_ms else None

    def row(self) -> dict[str, str]:
        return {
            "protocol": self.protocol,
            "n_nodes": str(self.n_nodes),
            "cl": str(self.cl),
            "macroblock_bytes": str(self.macroblock_bytes),
            "rounds": str(self.rounds),
            "median_round_latency_ms": fmt_float(self.median_round_latency_ms),
            "effective_throughput_Bps": fmt_float(self.effective_throughput_Bps),
            "discard_ratio": fmt_float(self.discard_ratio, 6),
            "empty_slot_rate": fmt_float(self.empty_slot_rate, 6),
            "fork_count": str(self.fork_count),
            "seed": str(self.seed),
            "status": self.status,
        }


def series_name(cfg: ScenarioConfig) -> str:
    return cfg.protocol if cfg.variant == "mux" else f"{cfg.protocol}-baseline"


def effective(cfg: ScenarioConfig) -> ScenarioConfig:
    """Committee protocols have no separate baseline code path: it is cl=1."""
    if cfg.variant == "baseline" and cfg.protocol != "bitcoin":
        return cfg.replace(cl=1)
    return cfg


def _protocol(name: str):
    if name == "algorand":
        from .. import algorand as mod
    elif name == "rapidchain":
        from .. import rapidchain as mod
    else:
        from .. import bitcoin as mod
    return mod.run


def run_scenario(cfg: ScenarioConfig):
    """Run ``cfg`` to completion; returns ``(MetricsReport, RunLog, Outcome)``."""
    cfg = effective(cfg)
    log = RunLog(cfg)
    out = _protocol(cfg.protocol)(cfg, log)
    # the log prints times to the microsecond; use the same figure so the log recomputes exactly
    elapsed_s = float(f"{out.elapsed_ms:.3f}") / 1000.0
    slots = out.decided_slots + out.empty_slots
    report = MetricsReport(
        protocol=series_name(cfg),
        n_nodes=cfg.n_nodes if cfg.protocol != "rapidchain" else cfg.committee_size,
        cl=cfg.cl,
        macroblock_bytes=cfg.macroblock_size,
        rounds=out.rounds_done,
        round_latencies_ms=tuple(out.round_latencies),
        effective_throughput_Bps=out.appended_bytes / elapsed_s if elapsed_s > 0 else 0.0,
        discard_ratio=out.discard_ratio,
        empty_slot_rate=out.empty_slots / slots if slots else 0.0,
        fork_count=out.fork_count,
        seed=cfg.rng_seed,
        status=out.status,
    )
    log.metrics((k, v) for k, v in report.row().items() if k in
                ("median_round_latency_ms", "effective_throughput_Bps", "discard_ratio",
                 "empty_slot_rate", "fork_count", "status"))
    log.add("metric", "appended_bytes", out.appended_bytes)
    log.add("metric", "elapsed_ms", f"{out.elapsed_ms:.3f}")
    return report, log, out
