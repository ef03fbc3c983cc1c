import gzip
import io
import json

import pandas as pd
import pytest

from arqkey import analysis, cli, fec


def _read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# meta: ")
    meta = json.loads(lines[0][len("# meta: "):])
    return meta, pd.read_csv(io.StringIO("\n".join(lines[1:])))


def test_outage_fig3_ordering(tmp_path):
    out = tmp_path / "fig3.csv"
    code = cli.main(["outage", "--r0", "10", "--rc", "3,4,5,7", "--snr-db", "30", "--out", str(out)])
    assert code == cli.EXIT_OK
    meta, df = _read_csv(out)
    assert meta["command"] == "outage"
    assert meta["seed"] == 0
    last = df.groupby("rc").tail(1).set_index("rc")
    assert (last["p_out"] <= 1e-6).all()
    assert last["key_rate"].is_monotonic_decreasing
    assert len(df[df["rc"] == 3]) == 109


def test_outage_keeps_infeasible_rows(tmp_path):
    out = tmp_path / "o.csv"
    code = cli.main(["outage", "--r0", "2,6", "--rc", "2", "--out", str(out)])
    assert code == cli.EXIT_OK
    _, df = _read_csv(out)
    bad = df[df["r0"] == 2]
    assert len(bad) == 1 and not bad["feasible"].iloc[0]


def test_outage_target_one(tmp_path):
    out = tmp_path / "o.csv"
    cli.main(["outage", "--target-pout", "1", "--out", str(out)])
    _, df = _read_csv(out)
    assert df["k"].tolist() == [1, 1, 1, 1]


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "fig.conf"
    conf.write_text("r0 = 4, 6, 7, 8\nrc = 2\nsnr-db = 30\ntarget-pout = 1e-3\n")
    out = tmp_path / "o.csv"
    assert cli.main(["outage", "--config", str(conf), "--r0", "8", "--out", str(out)]) == cli.EXIT_OK
    meta, df = _read_csv(out)
    assert meta["r0"] == [8.0]
    assert meta["target_pout"] == 1e-3
    assert set(df["r0"]) == {8.0}


def test_unknown_config_key_is_a_usage_error(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("colour = blue\n")
    assert cli.main(["outage", "--config", str(conf)]) == cli.EXIT_USAGE


def test_bad_flag_value_is_a_usage_error():
    assert cli.main(["outage", "--snr-db", "loud"]) == cli.EXIT_USAGE


def test_unknown_subcommand_is_a_usage_error():
    assert cli.main(["plot"]) == cli.EXIT_USAGE


def test_unwritable_output_is_an_io_error(tmp_path):
    out = tmp_path / "missing" / "o.csv"
    assert cli.main(["outage", "--out", str(out)]) == cli.EXIT_IO


def test_parquet_output(tmp_path):
    out = tmp_path / "o.parquet"
    assert cli.main(["outage", "--format", "parquet", "--out", str(out)]) == cli.EXIT_OK
    df = pd.read_parquet(out)
    assert {"r0", "rc", "k", "key_rate", "p_out", "feasible"} <= set(df.columns)


def test_capacity_shape(tmp_path):
    out = tmp_path / "fig1.csv"
    code = cli.main(
        [
            "capacity", "--snr-db", "10,20,30", "--rc", "0,7",
            "--r0-points", "100", "--power-points", "4", "--out", str(out),
        ]
    )
    assert code == cli.EXIT_OK
    _, df = _read_csv(out)
    assert len(df) == 6
    rc0 = df[df["rc"] == 0].sort_values("snr_db")
    rc7 = df[df["rc"] == 7].sort_values("snr_db")
    assert (rc0["ce"].values > rc0["cs"].values).any()
    assert (rc7["ce"].values <= rc0["ce"].values + 1e-12).all()
    assert (rc0["cs"].diff().dropna() >= -1e-9).all()
    assert (rc0["cs"] > 0).all()


def test_capacity_solves_cs_once_per_snr(tmp_path, monkeypatch):
    calls = []
    optimize = analysis.optimize_rate

    def counting(objective, *args, **kwargs):
        calls.append(objective)
        return optimize(objective, *args, **kwargs)

    monkeypatch.setattr(analysis, "optimize_rate", counting)
    code = cli.main(
        [
            "capacity", "--snr-db", "10,20", "--rc", "0,3,7",
            "--r0-points", "50", "--power-points", "2", "--out", str(tmp_path / "cap.csv"),
        ]
    )
    assert code == cli.EXIT_OK
    assert calls.count("cs") == 2
    assert calls.count("ce") == 6
    _, df = _read_csv(tmp_path / "cap.csv")
    for _, group in df.groupby("snr_db"):
        assert group["cs"].nunique() == 1


def test_simulate_summary_against_closed_forms(tmp_path):
    out = tmp_path / "sim.json"
    code = cli.main(["simulate", "--exchanges", "5000", "--seed", "3", "--out", str(out)])
    assert code == cli.EXIT_OK
    summary = json.loads(out.read_text())
    assert summary["meta"]["k"] == 10
    assert summary["exchanges"]["incomplete"] == 0
    assert abs(summary["outage"]["z"]) < 4
    assert abs(summary["throughput"]["z"]) < 4
    assert abs(summary["transmissions"]["z"]) < 4
    assert summary["keys"]["keys_agree"] == summary["keys"]["completed"]


def test_simulate_reports_incomplete_exchanges(tmp_path):
    out = tmp_path / "sim.json"
    code = cli.main(
        ["simulate", "--r0", "12", "--rc", "0", "--snr-db", "0", "--k", "2",
         "--max-frames", "3", "--exchanges", "5", "--out", str(out)]
    )
    assert code == cli.EXIT_INFEASIBLE
    summary = json.loads(out.read_text())
    assert summary["exchanges"] == {"completed": 0, "incomplete": 5}
    text = out.read_text()
    assert "NaN" not in text and "Infinity" not in text
    assert summary["outage"]["empirical"] is None
    assert summary["outage"]["z"] is None
    assert summary["throughput"]["std_error"] is None


def test_seeded_runs_are_byte_identical(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.json"
        trace = tmp_path / f"{name}.jsonl.gz"
        args = ["simulate", "--exchanges", "500", "--seed", "42", "--out", str(out),
                "--trace", str(trace), "--trace-exchanges", "5"]
        assert cli.main(args) == cli.EXIT_OK
        outputs.append((out.read_bytes(), trace.read_bytes()))
    assert outputs[0] == outputs[1]


def test_trace_replays_cleanly(tmp_path):
    trace = tmp_path / "run.jsonl.gz"
    cli.main(["simulate", "--exchanges", "50", "--trace", str(trace), "--trace-exchanges", "5",
              "--out", str(tmp_path / "sim.json")])
    out = tmp_path / "replay.json"
    assert cli.main(["replay", str(trace), "--out", str(out)]) == cli.EXIT_OK
    rows = json.loads(out.read_text())["rows"]
    assert [r["exchange"] for r in rows] == [0, 1, 2, 3, 4]
    assert all(r["complete"] and r["keys_agree"] and r["problems"] == 0 for r in rows)


def test_tampered_trace_is_a_mismatch(tmp_path):
    trace = tmp_path / "run.jsonl.gz"
    cli.main(["simulate", "--exchanges", "20", "--trace", str(trace), "--trace-exchanges", "2",
              "--out", str(tmp_path / "sim.json")])
    lines = gzip.decompress(trace.read_bytes()).decode().splitlines()
    frame = json.loads(lines[1])
    frame["acked"] = not frame["acked"]
    lines[1] = json.dumps(frame)
    tampered = tmp_path / "tampered.jsonl"
    tampered.write_text("\n".join(lines) + "\n")
    assert cli.main(["replay", str(tampered), "--out", str(tmp_path / "r.json")]) == cli.EXIT_MISMATCH


def test_replay_missing_file_is_an_io_error(tmp_path):
    assert cli.main(["replay", str(tmp_path / "absent.jsonl")]) == cli.EXIT_IO


def test_fec_rejects_too_few_trials():
    assert cli.main(["fec", "--trials", str(fec.MIN_FEC_TRIALS - 1)]) == cli.EXIT_USAGE


def test_fec_table(tmp_path):
    out = tmp_path / "fig4.csv"
    code = cli.main(
        ["fec", "--schemes", "uncoded-bpsk-240", "--snr-db", "10,30", "--trials", "10000", "--out", str(out)]
    )
    assert code == cli.EXIT_OK
    meta, df = _read_csv(out)
    assert meta["schemes"] == ["uncoded-bpsk-240"]
    assert list(df.columns) == ["scheme", "snr_db", "p", "q", "k_star", "key_rate", "feasible"]
    assert df["key_rate"].iloc[0] > df["key_rate"].iloc[1]


def test_fec_all_infeasible(tmp_path):
    out = tmp_path / "fig4.csv"
    code = cli.main(
        ["fec", "--schemes", "uncoded-bpsk-240", "--snr-db", "60", "--trials", "10000", "--out", str(out)]
    )
    assert code == cli.EXIT_INFEASIBLE
