"""Replay a run log and report every broken invariant.

Checks: honest nodes append identical macroblocks, logged macro hashes and
prev links recompute, slots hold only in-bucket transactions with no id twice
on the chain, blocks respect the size cap, full PoW macroblocks carry every
bucket, committee acceptances carry a quorum, uplinks never exceed their
bandwidth, nothing arrives faster than the link latency, and the logged
throughput matches the bytes and times in the log.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from ..core import EMPTY, GENESIS_HASH, BucketSpec, slots_macro_hash, tx_bucket
from .config import parse_config
from .runner import fmt_float

EPS_MS = 0.002


@dataclass(frozen=True)
class Violation:
    check: str
    detail: str

    def __str__(self) -> str:
        return f"{self.check}: {self.detail}"


def audit(source: str | Path) -> list[Violation]:
    """``source`` is a log file path or the log text itself."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    return Auditor(text).run()


class Auditor:
    def __init__(self, text: str):
        self.cfg_lines: list[str] = []
        self.honest: set[int] = set()
        self.appends: dict[int, dict[int, tuple[str, float]]] = defaultdict(dict)
        self.macros: list[tuple[int, str, str, int]] = []
        self.slots: dict[int, list[tuple[int, str, int, int, list[str]]]] = defaultdict(list)
        self.siblings: dict[int, list[tuple[str, int, int, list[str]]]] = defaultdict(list)
        self.rounds: list[int] = []
        self.round_latency: list[tuple[int, float]] = []
        self.accepts: list[tuple[int, int, int]] = []
        self.envs: list[tuple[float, float, float, int, int, str, int]] = []
        self.metrics: dict[str, str] = {}
        self.out: list[Violation] = []
        for line in text.splitlines():
            if line and not line.startswith("#"):
                self._parse(line.split(","))
        self.cfg = parse_config("\n".join(self.cfg_lines))

    def _parse(self, f: list[str]) -> None:
        kind = f[0]
        if kind == "cfg":
            self.cfg_lines.append(f"{f[1]}={','.join(f[2:])}")
        elif kind == "honest":
            self.honest = {int(x) for x in f[1].split(";") if x}
        elif kind == "append":
            self.appends[int(f[2])][int(f[1])] = (f[3], float(f[4]))
        elif kind == "macro":
            self.macros.append((int(f[1]), f[2], f[3], int(f[4])))
        elif kind == "slot":
            self.slots[int(f[1])].append((int(f[2]), f[3], int(f[4]), int(f[5]), _ids(f[6])))
        elif kind == "sibling":
            self.siblings[int(f[1])].append((f[2], int(f[3]), int(f[4]), _ids(f[5])))
        elif kind == "round":
            self.rounds.append(int(f[1]))
            self.round_latency.append((int(f[1]), float(f[4])))
        elif kind == "accept":
            self.accepts.append((int(f[1]), int(f[2]), int(f[3])))
        elif kind == "env":
            self.envs.append((float(f[1]), float(f[2]), float(f[3]), int(f[4]), int(f[5]), f[6], int(f[7])))
        elif kind == "metric":
            self.metrics[f[1]] = f[2]

    def flag(self, check: str, detail: str) -> None:
        self.out.append(Violation(check, detail))

    def run(self) -> list[Violation]:
        self.check_chain_identity()
        self.check_macros()
        self.check_contents()
        self.check_exactness()
        self.check_quorum()
        self.check_bandwidth()
        self.check_latency_floor()
        self.check_throughput()
        return self.out

    # -- checks --------------------------------------------------------------------------

    def check_chain_identity(self) -> None:
        canonical = {r: h for r, h, _, _ in self.macros}
        for r in self.rounds:
            seen = {n: h for n, (h, _) in self.appends.get(r, {}).items() if n in self.honest}
            if len(seen) < len(self.honest):
                missing = sorted(self.honest - seen.keys())
                self.flag("chain_identity", f"round {r}: honest nodes {missing[:5]} never appended")
            hashes = set(seen.values())
            if canonical.get(r) is not None:
                hashes.add(canonical[r])
            if len(hashes) > 1:
                self.flag("chain_identity", f"round {r}: {len(hashes)} different macroblocks")

    def check_macros(self) -> None:
        prev = GENESIS_HASH.hex()
        for r, h, p, cl in self.macros:
            slots = [EMPTY] * cl
            for i, d, _, _, _ in self.slots.get(r, []):
                if 0 <= i < cl:
                    slots[i] = bytes.fromhex(d)
                else:
                    self.flag("macro", f"round {r}: slot index {i} outside 0..{cl - 1}")
            if slots_macro_hash(r, slots).hex() != h:
                self.flag("macro", f"round {r}: logged hash does not match its slots")
            if p != prev:
                self.flag("macro", f"round {r}: prev does not name the previous macroblock")
            prev = h

    def check_contents(self) -> None:
        bs = self.cfg.block_size
        seen: set[str] = set()
        for r, _, _, cl in self.macros:
            spec = BucketSpec(cl)
            blocks = [(d, b, size, ids) for _, d, b, size, ids in self.slots.get(r, [])]
            blocks += self.siblings.get(r, [])
            for d, bucket, size, ids in blocks:
                if size > bs:
                    self.flag("size", f"round {r}: block {d[:12]} carries {size} > {bs} bytes")
                for t in ids:
                    if tx_bucket(bytes.fromhex(t), spec) != bucket:
                        self.flag("disjointness", f"round {r}: tx {t[:12]} outside bucket {bucket}")
                    if t in seen:
                        self.flag("disjointness", f"round {r}: tx {t[:12]} appended twice")
                    seen.add(t)

    def check_exactness(self) -> None:
        if self.cfg.protocol != "bitcoin" or self.cfg.variant != "mux":
            return
        for r, _, _, cl in self.macros:
            buckets = sorted(b for _, _, b, _, _ in self.slots.get(r, []))
            if cl != self.cfg.cl or buckets != list(range(cl)):
                self.flag("exactness", f"round {r}: buckets {buckets} instead of 0..{self.cfg.cl - 1}")
        for r, sibs in self.siblings.items():
            for d, b, _, _ in sibs:
                if not 0 <= b < self.cfg.cl:
                    self.flag("exactness", f"round {r}: sibling {d[:12]} in bucket {b}")

    def check_quorum(self) -> None:
        if self.cfg.protocol != "rapidchain":
            return
        need = self.cfg.effective_f_count + 1
        for node, r, n in self.accepts:
            if n < need:
                self.flag("quorum", f"node {node} accepted round {r} with {n} < {need} echoes")

    def check_bandwidth(self) -> None:
        per_byte = 8 * 1000.0 / self.cfg.bandwidth_bps
        lat = self.cfg.latency_ms
        busy_until: dict[int, float] = {}
        for _, start, delivery, src, dst, _, size in sorted(self.envs, key=lambda e: (e[3], e[1])):
            end = delivery - lat
            if end - start < size * per_byte - EPS_MS:
                self.flag("bandwidth", f"{src}->{dst}: {size} bytes in {end - start:.3f} ms")
            if start < busy_until.get(src, 0.0) - EPS_MS:
                self.flag("bandwidth", f"uplink {src} sends two envelopes at once at {start:.3f}")
            busy_until[src] = max(busy_until.get(src, 0.0), end)

    def check_latency_floor(self) -> None:
        lat = self.cfg.latency_ms
        for enq, _, delivery, src, dst, _, _ in self.envs:
            if delivery - enq < lat - EPS_MS:
                self.flag("latency_floor", f"{src}->{dst} delivered {delivery - enq:.3f} ms after enqueue")
        for r, lat_ms in self.round_latency:
            if lat_ms < lat - EPS_MS:
                self.flag("latency_floor", f"round {r}: latency {lat_ms:.3f} ms below one hop")

    def check_throughput(self) -> None:
        logged = self.metrics.get("effective_throughput_Bps")
        if logged is None or not self.rounds:
            return
        counted = set(self.rounds)
        total = sum(size for r in counted for _, _, _, size, _ in self.slots.get(r, []))
        total += sum(size for r in counted for _, _, size, _ in self.siblings.get(r, []))
        last = max((t for r in counted for n, (_, t) in self.appends.get(r, {}).items() if n in self.honest),
                   default=0.0)
        if last <= 0:
            return
        if fmt_float(total / (last / 1000.0)) != logged:
            self.flag("throughput", f"log recomputes to {total / (last / 1000.0):.3f} B/s, report says {logged}")


def _ids(field: str) -> list[str]:
    return [x for x in field.split(";") if x]
