"""Scenario configuration.

Config files are plain ``key=value`` lines; ``#`` starts a comment.  Keys are
the field names of :class:`ScenarioConfig`.  Unknown keys, values that do not
parse as the field's type, and broken invariants raise :class:`ConfigError`
naming the key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import random
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

PROTOCOLS = ("algorand", "rapidchain", "bitcoin")
VARIANTS = ("mux", "baseline")
BEHAVIORS = ("none", "silent", "contrarian", "duplicate", "withhold", "equivocate", "mixed")


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        self.key = key
        super().__init__(f"{key}: {msg}")


@dataclass(frozen=True)
class ScenarioConfig:
    protocol: str = "algorand"
    variant: str = "mux"
    n_nodes: int = 100
    committee_size: int = 64
    cl: int = 1
    macroblock_size: int = 4_000_000
    rounds: int = 20
    sim_duration_s: float = 300.0
    fanout: int = 0
    latency_ms: float = 50.0
    bandwidth_bps: float = 20_000_000.0
    byzantine_fraction: float = 0.0
    byzantine_behavior: str = "none"
    rng_seed: int = 1
    time_compression: float = 0.5
    tx_size: int = 1000
    # sortition committee protocol
    # negative picks the smallest value covering every bucket with probability 0.99
    tau_proposer: int = -1
    tau_step: float = 80.0
    tau_final: float = 120.0
    threshold: float = 0.685
    lambda_priority_s: float = 10.0
    lambda_block_s: float = 60.0
    lambda_step_s: float = 20.0
    max_ba_steps: int = 15
    # synchronous committee protocol
    f_count: int = -1
    ida_chunks: int = 16
    propose_timeout_ms: float = 1000.0
    echo_delta_ms: float = 600.0
    ida_timeout_s: float = 300.0
    # proof of work
    block_interval_s: float = 10.0
    pow_base_shift: int = 12
    # output
    trace: bool = False
    watchdog_s: float = 3600.0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError("protocol", f"expected one of {', '.join(PROTOCOLS)}")
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"expected one of {', '.join(VARIANTS)}")
        if self.byzantine_behavior not in BEHAVIORS:
            raise ConfigError("byzantine_behavior", f"expected one of {', '.join(BEHAVIORS)}")
        if self.cl < 1:
            raise ConfigError("cl", "concurrency level must be >= 1")
        if self.macroblock_size <= 0:
            raise ConfigError("macroblock_size", "must be positive")
        if self.macroblock_size % self.cl:
            raise ConfigError("macroblock_size", f"{self.macroblock_size} is not divisible by cl={self.cl}")
        if self.n_nodes < 2:
            raise ConfigError("n_nodes", "need at least two nodes")
        if self.rounds < 1:
            raise ConfigError("rounds", "must be >= 1")
        if not 0.0 <= self.byzantine_fraction < 1.0:
            raise ConfigError("byzantine_fraction", "must lie in [0, 1)")
        if not 0.5 < self.threshold < 1.0:
            raise ConfigError("threshold", "must lie in (0.5, 1)")
        if self.tx_size <= 0:
            raise ConfigError("tx_size", "must be positive")
        if self.time_compression <= 0:
            raise ConfigError("time_compression", "must be positive")
        if self.latency_ms <= 0 or self.bandwidth_bps <= 0:
            raise ConfigError("latency_ms" if self.latency_ms <= 0 else "bandwidth_bps", "must be positive")
        if self.protocol == "rapidchain":
            if self.committee_size < 2:
                raise ConfigError("committee_size", "must be >= 2")
            if self.cl > self.committee_size:
                raise ConfigError("cl", "cannot exceed committee_size")
            if self.f_count >= 0 and 2 * self.f_count >= self.committee_size:
                raise ConfigError("f_count", "must be below half the committee")
        if self.ida_chunks < 1:
            raise ConfigError("ida_chunks", "must be >= 1")

    @property
    def block_size(self) -> int:
        return self.macroblock_size // self.cl

    @property
    def effective_fanout(self) -> int:
        if self.fanout > 0:
            return self.fanout
        return 16 if self.protocol == "rapidchain" else 8

    @property
    def effective_f_count(self) -> int:
        return self.f_count if self.f_count >= 0 else (self.committee_size - 1) // 2

    @property
    def n_participants(self) -> int:
        return self.committee_size if self.protocol == "rapidchain" else self.n_nodes

    def sub_seed(self, label: str) -> int:
        """Independent deterministic seed for one random stream of the run."""
        h = hashlib.sha256(f"{self.rng_seed}/{label}".encode()).digest()
        return int.from_bytes(h[:8], "big")

    def byzantine_ids(self) -> list[int]:
        n = self.n_participants
        k = int(round(self.byzantine_fraction * n))
        if self.protocol == "rapidchain" and self.byzantine_fraction > 0:
            k = min(k, self.effective_f_count)
        rng = random.Random(self.sub_seed("byzantine"))
        return sorted(rng.sample(range(n), k))

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_lines(self) -> list[str]:
        return [f"{f.name}={_fmt(getattr(self, f.name))}" for f in fields(self)]


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, typ: str, raw: str) -> Any:
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw.replace("_", ""))
        if typ == "float":
            return float(raw.replace("_", ""))
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ}") from None


_TYPES = {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(ScenarioConfig)}


def parse_config(text: str, overrides: Mapping[str, Any] | None = None) -> ScenarioConfig:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, _TYPES[key], raw)
    for key, v in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, _TYPES[key], str(v)) if isinstance(v, str) else v
    return ScenarioConfig(**values)


def load_config(path: str | Path, **overrides: Any) -> ScenarioConfig:
    return parse_config(Path(path).read_text(), overrides)
