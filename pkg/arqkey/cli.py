"""Command-line runner: one subcommand per experiment.

    python -m arqkey capacity --config configs/fig1.conf --out fig1.csv
    python -m arqkey outage   --config configs/fig2.conf --out fig2.csv
    python -m arqkey simulate --exchanges 100000 --trace run.jsonl.gz
    python -m arqkey fec      --config configs/fig4.conf --workers 8 --out fig4.csv
    python -m arqkey replay   run.jsonl.gz

Tables go out as CSV (a ``# meta: {...}`` line, then a header row), Parquet
(meta in the schema metadata) or a JSON summary object. Nothing in a result
file depends on wall-clock time, so a fixed seed gives identical bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq

from . import analysis, coset, fading, fec, protocol, traces
from .config import COMMANDS, ExperimentConfig, read_config_file, resolve, schema
from .errors import ArqKeyError, ConfigError, DomainError, TraceFormatError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 4
EXIT_MISMATCH = 5

FLOAT_FORMAT = "%.10g"


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _jsonable(value: Any) -> Any:
    """Plain JSON value; NaN and infinities become null."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _summary_text(payload: dict) -> str:
    return json.dumps(_jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_table(df: pd.DataFrame, cfg: ExperimentConfig, fmt: str) -> None:
    """Write a result table to cfg['out'] (stdout when unset) in ``fmt``."""
    meta = cfg.meta()
    out = cfg["out"]
    if fmt == "parquet":
        if out is None:
            raise ConfigError("--format parquet needs --out")
        table = pa.Table.from_pandas(df, preserve_index=False)
        encoded = json.dumps(_jsonable(meta), sort_keys=True, allow_nan=False).encode()
        table = table.replace_schema_metadata({**(table.schema.metadata or {}), traces.META_KEY: encoded})
        pq.write_table(table, out)
        return
    if fmt == "summary":
        text = _summary_text({"meta": meta, "rows": df.to_dict("records")})
    else:
        header = "# meta: " + json.dumps(_jsonable(meta), sort_keys=True, allow_nan=False) + "\n"
        text = header + df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    _emit(text, out)


def write_summary(payload: dict, cfg: ExperimentConfig, fmt: str) -> None:
    """Single-record results: JSON object, or a one-row table."""
    if fmt == "summary":
        _emit(_summary_text({"meta": cfg.meta(), **payload}), cfg["out"])
        return
    flat = pd.json_normalize(payload, sep=".")
    write_table(flat, cfg, fmt)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    logger.info("wrote %s", out)


def _ordered(func: Callable, tasks: list[tuple], workers: int) -> list:
    """Map func over tasks; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [func(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(func, *t) for t in tasks]
        return [f.result() for f in futures]


def _z(observed: float, expected: float, std_error: float) -> float:
    if not math.isfinite(std_error) or std_error <= 0:
        return 0.0 if observed == expected else math.nan
    return (observed - expected) / std_error


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _rate_options(cfg_values: dict) -> dict:
    return dict(
        r0_max=cfg_values["r0_max"],
        r0_points=cfg_values["r0_points"],
        power_points=cfg_values["power_points"],
        mean_gain_bob=cfg_values["mean_gain_bob"],
        mean_gain_eve=cfg_values["mean_gain_eve"],
    )


def _cs_point(snr_db: float, cfg_values: dict) -> analysis.Optimum:
    return analysis.optimize_rate("cs", fading.snr_db_to_power(snr_db), 0.0, **_rate_options(cfg_values))


def _ce_point(snr_db: float, rc: float, cfg_values: dict) -> analysis.Optimum:
    return analysis.optimize_rate("ce", fading.snr_db_to_power(snr_db), rc, **_rate_options(cfg_values))


def cmd_capacity(cfg: ExperimentConfig) -> int:
    """Optimized C_s and C_e per (SNR, Rc); C_s does not depend on Rc and is solved once per SNR."""
    snrs, rcs, workers = cfg["snr_db"], cfg["rc"], cfg["workers"]
    cs_by_snr = dict(zip(snrs, _ordered(_cs_point, [(snr, cfg.values) for snr in snrs], workers)))
    ce_tasks = [(snr, rc, cfg.values) for snr in snrs for rc in rcs]
    rows = []
    for (snr, rc, _), ce in zip(ce_tasks, _ordered(_ce_point, ce_tasks, workers)):
        cs = cs_by_snr[snr]
        rows.append({
            "snr_db": snr,
            "rc": rc,
            "cs": cs.value,
            "cs_r0": cs.argmax_r0,
            "cs_power": cs.argmax_power,
            "ce": ce.value,
            "ce_r0": ce.argmax_r0,
            "ce_power": ce.argmax_power,
            "ce_degenerate": ce.degenerate,
        })
    df = pd.DataFrame(rows).sort_values(["rc", "snr_db"], kind="stable", ignore_index=True)
    write_table(df, cfg, cfg["format"] or "csv")
    return EXIT_OK


def cmd_outage(cfg: ExperimentConfig) -> int:
    """Outage / key-rate tradeoff rows, one per (R0, Rc, k)."""
    power = fading.snr_db_to_power(cfg["snr_db"])
    rows = []
    for rc in cfg["rc"]:
        for point in analysis.tradeoff_sweep(
            rc,
            power,
            cfg["r0"],
            cfg["target_pout"],
            k_max=cfg["k_max"],
            mean_gain_bob=cfg["mean_gain_bob"],
            mean_gain_eve=cfg["mean_gain_eve"],
        ):
            rows.append(
                {
                    "r0": point.r0,
                    "rc": point.rc,
                    "k": point.k,
                    "key_rate": point.key_rate,
                    "p_out": point.p_out,
                    "feasible": point.feasible,
                }
            )
    df = pd.DataFrame(rows).sort_values(["rc", "r0", "k"], kind="stable", ignore_index=True)
    infeasible = int((~df["feasible"]).sum())
    if infeasible:
        logger.warning("%d (R0, Rc) pairs have R0 <= Rc and are marked infeasible", infeasible)
    write_table(df, cfg, cfg["format"] or "csv")
    return EXIT_OK


def _simulation_setup(cfg: ExperimentConfig) -> tuple[protocol.ProtocolParams, fading.ChannelSpec]:
    power = fading.snr_db_to_power(cfg["snr_db"])
    point = analysis.OperatingPoint(cfg["r0"], cfg["rc"], power, cfg["k"])
    params = protocol.ProtocolParams(
        point,
        payload_bits=cfg["payload_bits"],
        max_frames=cfg["max_frames"],
        seed=cfg["seed"],
        replace_on_nack=cfg["replace_on_nack"],
    )
    spec = fading.ChannelSpec(cfg["mean_gain_bob"], cfg["mean_gain_eve"], power)
    return params, spec


def _key_checks(params: protocol.ProtocolParams, spec: fading.ChannelSpec, count: int, sink: list) -> dict:
    """Distill keys for the first ``count`` exchanges and check Alice == Bob."""
    agree = completed = eve_full = 0
    for index, trace in protocol.iter_exchanges(params, spec, count):
        sink.append((index, trace))
        if not trace.complete:
            continue
        completed += 1
        width = params.payload_bits
        alice = coset.distill(coset.KeyParts(trace.key_alice.reshape(-1, width), (False,) * params.point.k))
        parts = coset.eve_key_parts(trace, params.replace_on_nack)
        bob = coset.distill(coset.KeyParts(trace.key_bob.reshape(-1, width), parts.erased_mask))
        agree += int(np.array_equal(alice.bits, bob.bits))
        eve_full += int(parts.erased_count == 0)
    return {"checked": count, "completed": completed, "keys_agree": agree, "eve_full_intercepts": eve_full}


def cmd_simulate(cfg: ExperimentConfig) -> int:
    """Monte Carlo outage and key throughput against the closed forms."""
    params, spec = _simulation_setup(cfg)
    point = params.point
    tally = protocol.run_exchanges(params, spec, cfg["exchanges"], cfg["workers"])
    outage = protocol.outage_from_tally(tally)
    throughput = protocol.throughput_from_tally(tally, point)

    expected_pout = analysis.p_out(point, spec.mean_gain_eve)
    expected_rate = analysis.key_rate(point, spec.mean_gain_bob)
    expected_n0 = analysis.avg_transmissions(point, spec.mean_gain_bob)

    traced: list = []
    keys = _key_checks(params, spec, min(cfg["trace_exchanges"], cfg["exchanges"]), traced)
    if cfg["trace"] is not None:
        traces.write_trace(cfg["trace"], params, spec, traced)

    payload = {
        "exchanges": {"completed": tally.completed, "incomplete": tally.incomplete},
        "outage": {
            "empirical": outage.probability,
            "std_error": outage.std_error,
            "closed_form": expected_pout,
            "z": _z(outage.probability, expected_pout, outage.std_error),
        },
        "throughput": {
            "empirical": throughput.rate,
            "std_error": throughput.std_error,
            "closed_form": expected_rate,
            "z": _z(throughput.rate, expected_rate, throughput.std_error),
            "raw_rate": throughput.raw_rate,
        },
        "transmissions": {
            "empirical": throughput.mean_transmissions,
            "std_error": throughput.transmissions_std_error,
            "closed_form": expected_n0,
            "z": _z(throughput.mean_transmissions, expected_n0, throughput.transmissions_std_error),
        },
        "keys": keys,
    }
    write_summary(payload, cfg, cfg["format"] or "summary")
    if tally.completed == 0:
        logger.error("no exchange completed within max_frames=%d", params.max_frames)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_fec(cfg: ExperimentConfig) -> int:
    """Key rate at the outage target per (scheme, SNR) with real codes."""
    if cfg["trials"] < fec.MIN_FEC_TRIALS:
        raise ConfigError(f"trials must be >= {fec.MIN_FEC_TRIALS}, got {cfg['trials']}")
    schemes = [fec.PacketSpec.parse(name) for name in cfg["schemes"]]
    points = fec.fig4_experiment(
        schemes,
        cfg["snr_db"],
        cfg["trials"],
        cfg["seed"],
        code=fec.ConvCodeSpec.named(cfg["puncture"]),
        target_pout=cfg["target_pout"],
        r0_bits_per_use=cfg["r0"],
        workers=cfg["workers"],
        genie_budget=cfg["genie_budget"],
        genie_mode=cfg["genie_mode"],
        hard_decision=cfg["hard_decision"],
    )
    df = pd.DataFrame(
        [
            {
                "scheme": pt.scheme,
                "snr_db": pt.snr_db,
                "p": pt.p,
                "q": pt.q,
                "k_star": pt.k_star,
                "key_rate": pt.key_rate,
                "feasible": pt.feasible,
            }
            for pt in points
        ]
    )
    write_table(df, cfg, cfg["format"] or "csv")
    if not df["feasible"].any():
        logger.error("every (scheme, SNR) point is infeasible")
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_replay(cfg: ExperimentConfig) -> int:
    """Re-derive ACKs, keys and the outage flag from a recorded trace."""
    if cfg["trace"] is None:
        raise ConfigError("replay needs a trace file")
    trace_file = traces.load_trace(cfg["trace"])
    params = trace_file.params
    rows = []
    mismatches = 0
    for exchange in sorted(trace_file.exchanges):
        frames = trace_file.exchanges[exchange]
        trace, problems = protocol.replay(frames, params)
        for problem in problems:
            logger.warning("exchange %d: %s", exchange, problem)
        key_hex = ""
        keys_agree = None
        if trace.complete:
            parts = coset.eve_key_parts(trace, params.replace_on_nack)
            alice = coset.distill(parts)
            bob = coset.distill(coset.KeyParts(trace.key_bob.reshape(-1, params.payload_bits), parts.erased_mask))
            keys_agree = bool(np.array_equal(alice.bits, bob.bits))
            key_hex = alice.hex()
        mismatches += len(problems)
        rows.append(
            {
                "exchange": exchange,
                "frames": len(frames),
                "acked": len(trace.acked_indices),
                "complete": trace.complete,
                "keys_agree": keys_agree,
                "eve_full_intercept": trace.eve_full_intercept,
                "problems": len(problems),
                "key": key_hex,
            }
        )
    df = pd.DataFrame(
        rows,
        columns=["exchange", "frames", "acked", "complete", "keys_agree", "eve_full_intercept", "problems", "key"],
    )
    write_table(df, cfg, cfg["format"] or "summary")
    if mismatches:
        logger.error("%d recorded flags disagree with the operating point", mismatches)
        return EXIT_MISMATCH
    return EXIT_OK


COMMAND_HANDLERS: dict[str, Callable[[ExperimentConfig], int]] = {
    "capacity": cmd_capacity,
    "outage": cmd_outage,
    "simulate": cmd_simulate,
    "fec": cmd_fec,
    "replay": cmd_replay,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

HELP = {
    "seed": "unsigned 64-bit seed (default 0)",
    "out": "output path (default stdout)",
    "format": "csv, summary or parquet",
    "workers": "worker processes (default 1)",
    "snr_db": "SNR in dB (comma-separated where a list is accepted)",
    "rc": "Genie side-information rate(s) Rc",
    "r0": "transmission rate(s) R0",
    "trace": "trace file (.jsonl or .jsonl.gz)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arqkey",
        description="ARQ secret key sharing over block-fading wiretap channels",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, help=COMMAND_HANDLERS[command].__doc__)
        p.add_argument("--config", help="KEY=VALUE config file")
        p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
        if command == "replay":
            p.add_argument("trace_path", nargs="?", help=HELP["trace"])
        for key in schema(command):
            p.add_argument(
                "--" + key.replace("_", "-"),
                dest=key,
                default=None,
                metavar="VALUE",
                help=HELP.get(key),
            )
    return parser


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.log_level)

    flags = {key: getattr(args, key, None) for key in schema(args.command)}
    if args.command == "replay" and args.trace_path is not None:
        flags["trace"] = args.trace_path

    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, flags, file_values)
        return COMMAND_HANDLERS[args.command](cfg)
    except (ConfigError, DomainError) as exc:
        print(f"arqkey {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TraceFormatError) as exc:
        print(f"arqkey {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArqKeyError as exc:
        print(f"arqkey {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
