"""Plot-data files from a sweep CSV: one file per (series, metric, cl)."""

from __future__ import annotations

import csv
from pathlib import Path

METRICS = {
    "latency": "median_round_latency_ms",
    "throughput": "effective_throughput_Bps",
    "discard": "discard_ratio",
}


def report(csv_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Write ``{protocol}_{metric}_cl{cl}.dat`` files; x = macroblock MB, y = the CSV value verbatim."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{csv_path}: no rows")
    series: dict[tuple[str, str, int], list[tuple[int, str]]] = {}
    for row in rows:
        if row["status"] == "failed":
            continue
        for metric, col in METRICS.items():
            if row[col] == "":
                continue
            key = (row["protocol"], metric, int(row["cl"]))
            series.setdefault(key, []).append((int(row["macroblock_bytes"]), row[col]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (protocol, metric, cl), points in sorted(series.items()):
        path = out / f"{protocol}_{metric}_cl{cl}.dat"
        lines = [f"# macroblock_mb {METRICS[metric]}"]
        lines += [f"{size / 1e6:g} {y}" for size, y in sorted(points)]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
