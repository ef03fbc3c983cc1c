"""Exchange trace files: line-delimited JSON, optionally gzipped, or Parquet.

The first line is a ``{"type": "meta", ...}`` record carrying the operating
point and channel; every following ``{"type": "frame", ...}`` line is one
transmission:

    exchange, index, part, h_b, h_e, acked, intercepted, payload (hex)

Lines with any other type are skipped. Parquet copies (tools/trace2parquet.py)
keep the meta record in the schema metadata.
"""

from __future__ import annotations

import gzip
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq

from . import fading
from .analysis import OperatingPoint
from .errors import TraceFormatError
from .protocol import ExchangeTrace, FrameRecord, ProtocolParams

logger = logging.getLogger(__name__)

META_KEY = b"arqkey.meta"
FRAME_COLUMNS = ["exchange", "index", "part", "h_b", "h_e", "acked", "intercepted", "payload"]


@dataclass
class TraceFile:
    params: ProtocolParams
    spec: fading.ChannelSpec
    exchanges: dict[int, list[FrameRecord]] = field(default_factory=dict)


def payload_to_hex(bits: np.ndarray) -> str:
    return np.packbits(bits).tobytes().hex()


def payload_from_hex(text: str, payload_bits: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    return np.unpackbits(raw, count=payload_bits)


def meta_record(params: ProtocolParams, spec: fading.ChannelSpec) -> dict:
    pt = params.point
    return {
        "type": "meta",
        "r0": pt.r0,
        "rc": pt.rc,
        "power": pt.power,
        "k": pt.k,
        "payload_bits": params.payload_bits,
        "max_frames": params.max_frames,
        "seed": params.seed,
        "replace_on_nack": params.replace_on_nack,
        "mean_gain_bob": spec.mean_gain_bob,
        "mean_gain_eve": spec.mean_gain_eve,
        "distribution": spec.distribution,
    }


def _from_meta(meta: dict) -> tuple[ProtocolParams, fading.ChannelSpec]:
    point = OperatingPoint(meta["r0"], meta["rc"], meta["power"], meta["k"])
    params = ProtocolParams(
        point,
        payload_bits=meta["payload_bits"],
        max_frames=meta["max_frames"],
        seed=meta["seed"],
        replace_on_nack=meta.get("replace_on_nack", True),
    )
    spec = fading.ChannelSpec(
        meta.get("mean_gain_bob", 1.0),
        meta.get("mean_gain_eve", 1.0),
        meta["power"],
        meta.get("distribution", fading.RAYLEIGH),
    )
    return params, spec


def frame_record(exchange: int, frame: FrameRecord) -> dict:
    return {
        "type": "frame",
        "exchange": exchange,
        "index": frame.index,
        "part": frame.part,
        "h_b": frame.gains.h_b,
        "h_e": frame.gains.h_e,
        "acked": frame.bob_acked,
        "intercepted": frame.eve_intercepted,
        "payload": payload_to_hex(frame.payload),
    }


def write_trace(
    path: str | Path,
    params: ProtocolParams,
    spec: fading.ChannelSpec,
    traces: Iterable[tuple[int, ExchangeTrace]],
) -> int:
    """Write the meta record and every frame; returns the number of frames."""
    path = Path(path)
    lines = [json.dumps(meta_record(params, spec), separators=(",", ":"))]
    for exchange, trace in traces:
        for frame in trace.frames:
            lines.append(json.dumps(frame_record(exchange, frame), separators=(",", ":")))
    data = ("\n".join(lines) + "\n").encode("utf-8")
    if path.suffix == ".gz":
        # mtime=0 keeps seeded output byte-identical across runs.
        data = gzip.compress(data, mtime=0)
    path.write_bytes(data)
    count = len(lines) - 1
    logger.info("wrote %d frames to %s", count, path)
    return count


def _frame_from_row(row: dict, payload_bits: int) -> FrameRecord:
    return FrameRecord(
        index=int(row["index"]),
        part=int(row["part"]),
        gains=fading.BlockGains(float(row["h_b"]), float(row["h_e"])),
        payload=payload_from_hex(row["payload"], payload_bits),
        bob_acked=bool(row["acked"]),
        eve_intercepted=bool(row["intercepted"]),
    )


def _load_jsonl(path: Path) -> TraceFile:
    meta = None
    rows: list[dict] = []
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(str(path), line_no, f"invalid JSON ({exc.msg})") from exc
            kind = record.get("type")
            if kind == "meta":
                meta = record
            elif kind == "frame":
                missing = [c for c in FRAME_COLUMNS if c not in record]
                if missing:
                    raise TraceFormatError(str(path), line_no, f"missing fields {missing}")
                rows.append(record)
    if meta is None:
        raise TraceFormatError(str(path), 1, "no meta record")
    return _assemble(meta, rows)


def _assemble(meta: dict, rows: Iterable[dict]) -> TraceFile:
    params, spec = _from_meta(meta)
    trace_file = TraceFile(params, spec)
    for row in rows:
        frames = trace_file.exchanges.setdefault(int(row["exchange"]), [])
        frames.append(_frame_from_row(row, params.payload_bits))
    return trace_file


def load_trace(path: str | Path) -> TraceFile:
    """Load a trace written by write_trace (.jsonl, .jsonl.gz or .parquet)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"No trace found at {path}")
    if path.suffix == ".parquet":
        table = pq.read_table(path)
        raw_meta = (table.schema.metadata or {}).get(META_KEY)
        if raw_meta is None:
            raise TraceFormatError(str(path), 0, "parquet file carries no meta record")
        return _assemble(json.loads(raw_meta), table.to_pandas().to_dict("records"))
    return _load_jsonl(path)


def load_trace_frame(path: str | Path) -> pd.DataFrame:
    """Frame records as a flat DataFrame, one row per transmission."""
    path = Path(path)
    if path.suffix == ".parquet":
        return pd.read_parquet(path)
    trace_file = load_trace(path)
    rows = [
        frame_record(exchange, frame)
        for exchange, frames in trace_file.exchanges.items()
        for frame in frames
    ]
    df = pd.DataFrame(rows, columns=["type", *FRAME_COLUMNS]).drop(columns="type")
    if not df.empty:
        for col in ("exchange", "index", "part"):
            df[col] = df[col].astype("int64")
    return df


def write_trace_parquet(src: str | Path, dest: str | Path) -> int:
    """Convert a JSONL trace to Parquet, keeping the meta record; returns row count."""
    trace_file = load_trace(src)
    df = load_trace_frame(src)
    table = pa.Table.from_pandas(df, preserve_index=False)
    meta = json.dumps(meta_record(trace_file.params, trace_file.spec)).encode()
    table = table.replace_schema_metadata({**(table.schema.metadata or {}), META_KEY: meta})
    pq.write_table(table, dest)
    return len(df)
