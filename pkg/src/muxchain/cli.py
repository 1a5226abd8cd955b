"""Command line: run, sweep, audit and report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness.audit import audit
from .harness.config import ConfigError, load_config
from .harness.report import report
from .harness.runlog import write_trace
from .harness.runner import run_scenario
from .harness.sweep import MB, sweep, to_csv


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(p, "expected key=value")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_run(args) -> int:
    over = _overrides(args.set)
    if args.seed is not None:
        over["rng_seed"] = str(args.seed)
    cfg = load_config(args.config, **over)
    rep, log, out = run_scenario(cfg)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    log.write(dest / "run.log")
    (dest / "metrics.csv").write_text(to_csv([rep.row()]))
    if out.trace is not None:
        write_trace(out.trace, dest / "trace.csv")
    print(to_csv([rep.row()]), end="")
    return 0 if rep.status == "ok" else 2


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, **_overrides(args.set))
    sizes = [int(round(x * MB)) for x in _floats(args.macroblock_mb)]
    rows = sweep(cfg, _ints(args.cl), sizes, args.out, args.workers)
    print(to_csv(rows), end="")
    return 0 if all(r["status"] == "ok" for r in rows) else 2


def cmd_audit(args) -> int:
    violations = audit(Path(args.log))
    for v in violations:
        print(v)
    print(f"{len(violations)} violation(s)")
    return 1 if violations else 0


def cmd_report(args) -> int:
    for p in report(args.csv, args.out):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="muxchain", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="run a cl x macroblock-size grid")
    p.add_argument("--config", required=True)
    p.add_argument("--cl", required=True, help="comma separated, e.g. 1,2,4,8")
    p.add_argument("--macroblock-mb", required=True, help="comma separated, e.g. 2,4,8")
    p.add_argument("--out", default="sweep")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("audit", help="check a run log for invariant violations")
    p.add_argument("--log", required=True)
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("report", help="plot-data files from a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", default="plots")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
