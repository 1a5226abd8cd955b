"""Run log: an ordered, line-oriented record of one scenario run.

Every line is comma separated and starts with a record type:

``cfg,key,value``                      config echo
``version,v``                          package version
``honest,id;id;...``                   honest node ids
``append,node,round,macro_hash,t``     node appended a macroblock
``macro,round,macro_hash,prev,cl``     canonical macroblock header
``slot,round,i,digest,bucket,body,ids``  non-empty slot, tx ids joined by ``;``
``sibling,round,digest,bucket,body,ids``  linked same-bucket block (PoW only)
``round,r,a,b,latency_ms``             per-round protocol summary
``accept,node,round,n_signers``        committee acceptance evidence
``btc,t,event,bucket,prefix,bytes``    PoW chain events
``env,enqueue,start,delivery,src,dst,kind,size``  data-plane envelope
``metric,name,value``                  final metrics

Times are printed with three decimals so identical runs give identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional

from .. import __version__
from ..core import MacroBlock
from .config import ScenarioConfig


def ms(t: float) -> str:
    return f"{t:.3f}"


class RunLog:
    def __init__(self, cfg: Optional[ScenarioConfig] = None):
        self.lines: list[str] = ["# muxchain run log v1"]
        if cfg is not None:
            for item in cfg.to_lines():
                k, v = item.split("=", 1)
                self.lines.append(f"cfg,{k},{v}")
        self.lines.append(f"version,{__version__}")

    def add(self, *fields: object) -> None:
        self.lines.append(",".join(str(f) for f in fields))

    def honest(self, ids: Iterable[int]) -> None:
        self.add("honest", ";".join(str(i) for i in ids))

    def append(self, node: int, round: int, macro_hash: bytes, t: float) -> None:
        self.add("append", node, round, macro_hash.hex(), ms(t))

    def macro(self, m: MacroBlock, prev: bytes, round: Optional[int] = None) -> None:
        r = m.round if round is None else round
        self.add("macro", r, m.macro_hash.hex(), prev.hex(), m.cl)
        for i, b in enumerate(m.blocks):
            if b is not None:
                self.add("slot", r, i, b.digest.hex(), b.bucket, b.body_size,
                         ";".join(t.hex() for t in b.tx_ids))

    def round_line(self, r: int, a: int, b: int, latency_ms: float) -> None:
        self.add("round", r, a, b, ms(latency_ms))

    def envelopes(self, trace) -> None:
        for e in trace:
            self.add("env", ms(e.enqueue_time), ms(e.tx_start), ms(e.delivery_time),
                     e.src, e.dst, e.kind, e.size)

    def metrics(self, items: Iterable[tuple[str, str]]) -> None:
        for k, v in items:
            self.add("metric", k, v)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.text())


def write_trace(trace, path: str | Path) -> None:
    """Export envelopes as ``time_ms,src,dst,kind,size_bytes`` (delivery time)."""
    with open(path, "w") as fh:
        fh.write("time_ms,src,dst,kind,size_bytes\n")
        for e in sorted(trace, key=lambda e: e.delivery_time):
            fh.write(f"{ms(e.delivery_time)},{e.src},{e.dst},{e.kind},{e.size}\n")


class Outcome:
    """What a protocol run hands back to the runner."""

    def __init__(self, log: RunLog):
        self.log = log
        self.status = "ok"
        self.rounds_done = 0
        self.round_latencies: list[float] = []
        self.appended_bytes = 0
        self.elapsed_ms = 0.0
        self.decided_slots = 0
        self.empty_slots = 0
        self.discard_ratio: Optional[float] = None
        self.fork_count = 0
        self.chains: dict[int, list[bytes]] = {}
        self.trace = None
