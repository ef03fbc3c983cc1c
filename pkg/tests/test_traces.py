import json

import numpy as np
import pandas as pd
import pytest

from arqkey import fading, protocol, traces
from arqkey.analysis import OperatingPoint
from arqkey.errors import TraceFormatError


@pytest.fixture
def run():
    params = protocol.ProtocolParams(OperatingPoint(3.0, 1.0, 10.0, 3), payload_bits=20, seed=5)
    spec = fading.ChannelSpec(power=10.0)
    return params, spec, list(protocol.iter_exchanges(params, spec, 4))


def test_payload_hex_roundtrip():
    bits = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1, 1], dtype=np.uint8)
    assert traces.payload_to_hex(bits) == "b1c0"
    assert traces.payload_from_hex("b1c0", 10).tolist() == bits.tolist()


@pytest.mark.parametrize("name", ["run.jsonl", "run.jsonl.gz"])
def test_write_then_load(tmp_path, run, name):
    params, spec, exchanges = run
    path = tmp_path / name
    count = traces.write_trace(path, params, spec, exchanges)
    assert count == sum(len(t.frames) for _, t in exchanges)

    loaded = traces.load_trace(path)
    assert loaded.params == params
    assert loaded.spec == spec
    assert sorted(loaded.exchanges) == [0, 1, 2, 3]
    for index, trace in exchanges:
        frames = loaded.exchanges[index]
        assert [f.gains for f in frames] == [f.gains for f in trace.frames]
        assert [f.bob_acked for f in frames] == [f.bob_acked for f in trace.frames]
        assert all(np.array_equal(a.payload, b.payload) for a, b in zip(frames, trace.frames))


def test_gzip_output_is_byte_identical(tmp_path, run):
    params, spec, exchanges = run
    traces.write_trace(tmp_path / "a.jsonl.gz", params, spec, exchanges)
    traces.write_trace(tmp_path / "b.jsonl.gz", params, spec, exchanges)
    assert (tmp_path / "a.jsonl.gz").read_bytes() == (tmp_path / "b.jsonl.gz").read_bytes()


def test_first_line_is_meta(tmp_path, run):
    params, spec, exchanges = run
    path = tmp_path / "run.jsonl"
    traces.write_trace(path, params, spec, exchanges)
    first, second = path.read_text().splitlines()[:2]
    assert json.loads(first)["type"] == "meta"
    frame = json.loads(second)
    assert frame["type"] == "frame"
    assert set(traces.FRAME_COLUMNS) <= set(frame)


def test_load_trace_frame(tmp_path, run):
    params, spec, exchanges = run
    path = tmp_path / "run.jsonl"
    traces.write_trace(path, params, spec, exchanges)
    df = traces.load_trace_frame(path)
    assert list(df.columns) == traces.FRAME_COLUMNS
    assert len(df) == sum(len(t.frames) for _, t in exchanges)
    assert df["acked"].sum() == sum(len(t.acked_indices) for _, t in exchanges)


def test_parquet_copy_keeps_meta(tmp_path, run):
    params, spec, exchanges = run
    src = tmp_path / "run.jsonl.gz"
    traces.write_trace(src, params, spec, exchanges)
    dest = tmp_path / "run.parquet"
    rows = traces.write_trace_parquet(src, dest)
    assert rows == len(pd.read_parquet(dest))
    loaded = traces.load_trace(dest)
    assert loaded.params == params
    assert len(loaded.exchanges[0]) == len(exchanges[0][1].frames)


def test_unknown_record_types_are_skipped(tmp_path, run):
    params, spec, exchanges = run
    path = tmp_path / "run.jsonl"
    traces.write_trace(path, params, spec, exchanges[:1])
    with open(path, "a") as f:
        f.write('{"type": "note", "text": "hand edit"}\n\n')
    assert len(traces.load_trace(path).exchanges[0]) == len(exchanges[0][1].frames)


def test_bad_json_names_the_line(tmp_path, run):
    params, spec, exchanges = run
    path = tmp_path / "run.jsonl"
    traces.write_trace(path, params, spec, exchanges[:1])
    with open(path, "a") as f:
        f.write("{not json\n")
    with pytest.raises(TraceFormatError) as info:
        traces.load_trace(path)
    assert info.value.line_no == len(exchanges[0][1].frames) + 2


def test_missing_meta(tmp_path):
    path = tmp_path / "run.jsonl"
    path.write_text('{"type": "frame", "exchange": 0}\n')
    with pytest.raises(TraceFormatError):
        traces.load_trace(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        traces.load_trace(tmp_path / "absent.jsonl")
