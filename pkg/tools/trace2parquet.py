#!/usr/bin/env python3
"""Convert exchange traces (JSONL or JSONL.gz) to Parquet.

Usage:
    python3 tools/trace2parquet.py run.jsonl.gz            # writes run.parquet
    python3 tools/trace2parquet.py traces/*.jsonl --force  # re-convert existing
"""

import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from arqkey.errors import TraceFormatError
from arqkey.traces import write_trace_parquet


def parquet_path(src: Path) -> Path:
    name = src.name
    for suffix in (".gz", ".jsonl"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return src.with_name(name + ".parquet")


def convert(src: Path, force: bool = False) -> bool:
    """Convert one trace. Returns True if converted."""
    out = parquet_path(src)
    if out.exists() and not force:
        return False
    rows = write_trace_parquet(src, out)
    print(f"  {src.name}: {rows:,} frames -> {out.name}")
    return True


def main():
    force = "--force" in sys.argv
    paths = [Path(a) for a in sys.argv[1:] if not a.startswith("-")]

    if not paths:
        print("No trace files given.")
        return

    converted = 0
    for p in paths:
        try:
            if convert(p, force=force):
                converted += 1
        except FileNotFoundError:
            print(f"  {p}: not found, skipping")
        except TraceFormatError as e:
            print(f"  {p}: bad trace: {e}")

    print(f"\nConverted {converted}/{len(paths)} files.")


if __name__ == "__main__":
    main()
