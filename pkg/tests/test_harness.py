import csv
import random
from pathlib import Path

import pytest

from muxchain.cli import main
from muxchain.core import BucketSpec, tx_bucket
from muxchain.harness.audit import audit
from muxchain.harness.config import ConfigError, ScenarioConfig, load_config, parse_config
from muxchain.harness.report import report
from muxchain.harness.runner import CSV_COLUMNS, run_scenario
from muxchain.harness.sweep import sweep, to_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMALL = dict(protocol="algorand", n_nodes=60, cl=4, macroblock_size=200_000, rounds=2)


def test_minimal_config_takes_defaults():
    c = parse_config("protocol=algorand\nn_nodes=50\n")
    assert c.n_nodes == 50 and c == ScenarioConfig(n_nodes=50)
    assert c.effective_fanout == 8
    assert parse_config("protocol=rapidchain").effective_fanout == 16


def test_zero_concurrency_rejected_naming_the_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("protocol=algorand\ncl=0")
    assert exc.value.key == "cl"


def test_block_size_is_macroblock_over_cl():
    assert parse_config("macroblock_size=4000000\ncl=8").block_size == 500_000


@pytest.mark.parametrize("text,key", [("nodes=5", "nodes"), ("cl=two", "cl"), ("macroblock_size=10\ncl=3", "macroblock_size"),
                                      ("protocol=tendermint", "protocol")])
def test_bad_configs_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key


def test_shipped_configs_load():
    for p in CONFIGS.glob("*.cfg"):
        load_config(p)


def test_single_round_run_reports_positive_metrics():
    rep, log, out = run_scenario(ScenarioConfig(protocol="algorand", n_nodes=60, cl=1, macroblock_size=100_000,
                                                rounds=1))
    assert rep.status == "ok" and rep.rounds == 1
    assert rep.median_round_latency_ms > 0 and rep.effective_throughput_Bps > 0
    assert rep.discard_ratio is None


def test_same_config_same_report_bytes():
    c = ScenarioConfig(**SMALL)
    a, b = run_scenario(c), run_scenario(c)
    assert to_csv([a[0].row()]) == to_csv([b[0].row()])
    assert a[1].text() == b[1].text()


def test_baseline_variant_runs_one_bucket():
    rep, _, _ = run_scenario(ScenarioConfig(**{**SMALL, "variant": "baseline"}))
    assert rep.cl == 1 and rep.protocol == "algorand-baseline"


def test_one_by_one_sweep(tmp_path):
    rows = sweep(ScenarioConfig(**SMALL), [2], [200_000], tmp_path)
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    text = (tmp_path / "sweep.csv").read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert (tmp_path / "logs" / "cl2_mb200000.log").exists()


def test_two_by_two_sweep_uses_fresh_seeds():
    rows = sweep(ScenarioConfig(**SMALL), [1, 2], [100_000, 200_000], workers=2)
    assert [(r["cl"], r["macroblock_bytes"]) for r in rows] == [
        ("1", "100000"), ("1", "200000"), ("2", "100000"), ("2", "200000")]
    assert len({r["seed"] for r in rows}) == 4
    assert all(r["status"] == "ok" for r in rows)


def test_failed_cell_becomes_a_row():
    rows = sweep(ScenarioConfig(**SMALL), [2, 3], [100_000])
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"] == "failed" and rows[1]["cl"] == "3"


# -- audit ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def rc_log():
    c = ScenarioConfig(protocol="rapidchain", committee_size=32, cl=4, macroblock_size=200_000, rounds=3,
                       ida_chunks=4, trace=True)
    return run_scenario(c)[1].text()


@pytest.fixture(scope="module")
def btc_log():
    c = ScenarioConfig(protocol="bitcoin", n_nodes=30, cl=4, macroblock_size=200_000, rounds=3, trace=True)
    return run_scenario(c)[1].text()


def checks(text):
    return {v.check for v in audit(text)}


def edit(text, prefix, fn, nth=0):
    lines = text.split("\n")
    hits = [i for i, line in enumerate(lines) if line.startswith(prefix)]
    i = hits[nth]
    lines[i] = fn(lines[i].split(","))
    return "\n".join(lines)


def test_clean_logs_pass(rc_log, btc_log):
    assert audit(rc_log) == [] and audit(btc_log) == []


def test_audit_reads_files(rc_log, tmp_path):
    p = tmp_path / "run.log"
    p.write_text(rc_log)
    assert audit(p) == []


def test_planted_out_of_bucket_transaction(rc_log):
    spec = BucketSpec(4)
    rng = random.Random(1)

    def plant(f):
        bucket = int(f[4])
        stray = next(d for d in (rng.randbytes(32) for _ in range(100)) if tx_bucket(d, spec) != bucket)
        f[6] = stray.hex() + ";" + f[6]
        return ",".join(f)

    v = audit(edit(rc_log, "slot,", plant))
    assert [x.check for x in v] == ["disjointness"]


def test_planted_duplicate_transaction(rc_log):
    first = next(line for line in rc_log.split("\n") if line.startswith("slot,"))
    tx = first.split(",")[6].split(";")[0]

    def plant(f):
        f[6] = f[6] + ";" + tx
        return ",".join(f)

    assert "disjointness" in checks(edit(rc_log, "slot,", plant, nth=4))


def test_planted_divergent_append(rc_log):
    def plant(f):
        f[3] = "ab" * 32
        return ",".join(f)

    assert "chain_identity" in checks(edit(rc_log, "append,", plant, nth=1))


def test_planted_macro_hash(rc_log):
    def plant(f):
        f[2] = "cd" * 32
        return ",".join(f)

    assert "macro" in checks(edit(rc_log, "macro,", plant))


def test_planted_oversize_block(rc_log):
    def plant(f):
        f[5] = str(10 ** 7)
        return ",".join(f)

    assert "size" in checks(edit(rc_log, "slot,", plant))


def test_planted_missing_bucket(btc_log):
    lines = btc_log.split("\n")
    i = next(k for k, line in enumerate(lines) if line.startswith("slot,"))
    del lines[i]
    assert "exactness" in checks("\n".join(lines))


def test_planted_thin_quorum(rc_log):
    def plant(f):
        f[3] = "3"
        return ",".join(f)

    assert checks(edit(rc_log, "accept,", plant)) == {"quorum"}


def test_planted_uplink_overlap(rc_log):
    env = [line.split(",") for line in rc_log.split("\n") if line.startswith("env,")]
    src = env[0][4]
    same = [f for f in env if f[4] == src]
    later = max(same, key=lambda f: float(f[2]))

    def plant(f):
        return ",".join(f[:2] + [same[0][2]] + f[3:]) if f == later else ",".join(f)

    lines = rc_log.split("\n")
    lines = [plant(line.split(",")) if line.startswith("env,") else line for line in lines]
    assert "bandwidth" in checks("\n".join(lines))


def test_planted_early_delivery(rc_log):
    def plant(f):
        f[3] = f"{float(f[1]) + 10.0:.3f}"
        return ",".join(f)

    assert "latency_floor" in checks(edit(rc_log, "env,", plant))


def test_planted_throughput_mismatch(rc_log):
    def plant(f):
        f[2] = f"{float(f[2]) + 1.0:.3f}"
        return ",".join(f)

    assert checks(edit(rc_log, "metric,effective_throughput_Bps", plant)) == {"throughput"}


# -- report -----------------------------------------------------------------------------

ROWS = [
    {"protocol": "algorand", "n_nodes": "100", "cl": cl, "macroblock_bytes": size, "rounds": "20",
     "median_round_latency_ms": lat, "effective_throughput_Bps": thr, "discard_ratio": "",
     "empty_slot_rate": "0.000000", "fork_count": "0", "seed": "1", "status": "ok"}
    for cl, size, lat, thr in [("1", "2000000", "1000.500", "2000.125"), ("1", "4000000", "2000.000", "2100.000"),
                               ("8", "2000000", "700.250", "3000.000"), ("8", "4000000", "900.000", "3500.750")]
]


def test_report_files_and_values(tmp_path):
    src = tmp_path / "sweep.csv"
    src.write_text(to_csv(ROWS))
    files = report(src, tmp_path / "plots")
    assert sorted(p.name for p in files) == ["algorand_latency_cl1.dat", "algorand_latency_cl8.dat",
                                             "algorand_throughput_cl1.dat", "algorand_throughput_cl8.dat"]
    lat8 = (tmp_path / "plots" / "algorand_latency_cl8.dat").read_text().splitlines()
    assert lat8[1:] == ["2 700.250", "4 900.000"]
    thr1 = (tmp_path / "plots" / "algorand_throughput_cl1.dat").read_text().splitlines()
    assert thr1[1:] == ["2 2000.125", "4 2100.000"]


def test_report_regenerates_byte_identical(tmp_path):
    src = tmp_path / "sweep.csv"
    src.write_text(to_csv(ROWS))
    a = {p.name: p.read_bytes() for p in report(src, tmp_path / "a")}
    b = {p.name: p.read_bytes() for p in report(src, tmp_path / "b")}
    assert a == b


def test_report_rejects_empty_csv(tmp_path):
    src = tmp_path / "empty.csv"
    src.write_text(",".join(CSV_COLUMNS) + "\n")
    with pytest.raises(ValueError):
        report(src, tmp_path / "plots")


# -- command line -----------------------------------------------------------------------

def test_cli_run_audit_sweep_report(tmp_path, capsys):
    cfg = CONFIGS / "algorand.cfg"
    small = ["--set", "n_nodes=60", "--set", "rounds=1", "--set", "macroblock_size=200000", "--set", "trace=true"]
    assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "run")] + small) == 0
    assert {p.name for p in (tmp_path / "run").iterdir()} == {"run.log", "metrics.csv", "trace.csv"}
    assert main(["audit", "--log", str(tmp_path / "run" / "run.log")]) == 0
    assert main(["sweep", "--config", str(cfg), "--cl", "1,2", "--macroblock-mb", "0.2", "--out",
                 str(tmp_path / "sw")] + small) == 0
    with open(tmp_path / "sw" / "sweep.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    assert main(["report", "--csv", str(tmp_path / "sw" / "sweep.csv"), "--out", str(tmp_path / "plots")]) == 0
    assert len(list((tmp_path / "plots").iterdir())) == 4


def test_cli_reports_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("protocol=algorand\ncl=0\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "cl" in capsys.readouterr().err
