"""Cross-product sweeps over concurrency level and macroblock size."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .config import ScenarioConfig
from .runner import CSV_COLUMNS, run_scenario, series_name

MB = 1_000_000


def cell_config(base: ScenarioConfig, cl: int, size: int) -> ScenarioConfig:
    seed = base.sub_seed(f"cell/{cl}/{size}") % (1 << 31)
    return base.replace(cl=cl, macroblock_size=size, rng_seed=seed)


def _failed_row(base: ScenarioConfig, cl: int, size: int, seed: int) -> dict[str, str]:
    row = dict.fromkeys(CSV_COLUMNS, "")
    row.update(protocol=series_name(base), n_nodes=str(base.n_nodes), cl=str(cl),
               macroblock_bytes=str(size), seed=str(seed), status="failed")
    return row


def _run_cell(args) -> tuple[dict[str, str], Optional[str]]:
    base, cl, size = args
    seed = base.sub_seed(f"cell/{cl}/{size}") % (1 << 31)
    try:
        report, log, _ = run_scenario(cell_config(base, cl, size))
    except Exception as exc:  # a broken cell becomes a row, the sweep goes on
        row = _failed_row(base, cl, size, seed)
        return row, f"# cell failed: {type(exc).__name__}: {exc}\n"
    return report.row(), log.text()


def sweep(base: ScenarioConfig, cls: Sequence[int], sizes: Sequence[int],
          out_dir: Optional[str | Path] = None, workers: int = 1) -> list[dict[str, str]]:
    """Run every (cl, macroblock size) cell; rows come back in grid order."""
    cells = [(base, cl, size) for cl in cls for size in sizes]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    rows = [r for r, _ in results]
    if out_dir is not None:
        out = Path(out_dir)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(to_csv(rows))
        for (_, cl, size), (_, text) in zip(cells, results):
            (out / "logs" / f"cl{cl}_mb{size}.log").write_text(text)
    return rows


def to_csv(rows: Sequence[dict[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
