#!/usr/bin/env python3
"""Stub converter: map an exported inference-request log to the trace format.

Public request logs come in many shapes; this stub only needs three columns
(arrival timestamp, input token count, output token count) and writes the
canonical ``arrival_s,input_tokens,output_tokens`` CSV that the simulator
ingests.  Extend the column mapping here for other export formats.

Example:
    python scripts/convert_inference_trace.py export.csv trace.csv \
        --time-col TIMESTAMP --input-col ContextTokens --output-col GeneratedTokens \
        --time-unit ms
"""

import argparse
import csv
import sys

from chainserve.workload import TraceRecord, TraceWorkload, write_trace

UNIT_SCALE = {"s": 1.0, "ms": 1e-3, "us": 1e-6}


def convert(src, dst, time_col, input_col, output_col, time_unit="s"):
    scale = UNIT_SCALE[time_unit]
    rows = []
    with open(src, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                rows.append((
                    float(row[time_col]) * scale,
                    int(float(row[input_col])),
                    int(float(row[output_col])),
                ))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{src}:{lineno}: {exc}") from None
    rows.sort(key=lambda r: r[0])
    if not rows:
        raise ValueError(f"{src}: no data rows")
    t0 = rows[0][0]
    records = tuple(
        TraceRecord(arrival_s=t - t0, input_tokens=tin, output_tokens=tout)
        for t, tin, tout in rows
    )
    write_trace(TraceWorkload(records), dst)
    return len(records)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", help="exported request log (CSV with a header)")
    parser.add_argument("dest", help="canonical trace CSV to write")
    parser.add_argument("--time-col", required=True)
    parser.add_argument("--input-col", required=True)
    parser.add_argument("--output-col", required=True)
    parser.add_argument("--time-unit", choices=sorted(UNIT_SCALE), default="s")
    args = parser.parse_args(argv)
    try:
        n = convert(args.source, args.dest, args.time_col, args.input_col,
                    args.output_col, args.time_unit)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {n} records to {args.dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
