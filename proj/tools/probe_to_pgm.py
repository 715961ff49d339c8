#!/usr/bin/env python3
"""Render a log-spectrum CSV (probe_NN.csv or --spectrum output) as a PGM image.

Rows of the CSV are frames, columns are the 512 FFT bins. The image has time
on the x axis and frequency on the y axis, low frequencies at the bottom.
Only bins 0..256 are drawn since the upper half mirrors them.

    probe_to_pgm.py probes/probe_03.csv probe_03.pgm --range 10
"""

import argparse
import csv
import sys


def read_rows(path):
    with open(path, newline="") as f:
        rows = [[float(v) for v in row] for row in csv.reader(f) if row]
    if not rows:
        sys.exit(f"{path}: no frames")
    if any(len(r) != len(rows[0]) for r in rows):
        sys.exit(f"{path}: ragged rows")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("csv")
    ap.add_argument("pgm")
    ap.add_argument("--range", type=float, default=10.0,
                    help="dynamic range below the maximum, in natural-log units (default 10, about 87 dB)")
    ap.add_argument("--all-bins", action="store_true", help="draw the mirrored upper half too")
    args = ap.parse_args()

    rows = read_rows(args.csv)
    bins = len(rows[0]) if args.all_bins else len(rows[0]) // 2 + 1
    top = max(max(r[:bins]) for r in rows)
    lo = top - args.range

    def level(v):
        return int(round(255 * min(max((v - lo) / args.range, 0.0), 1.0)))

    with open(args.pgm, "w") as out:
        out.write(f"P2\n{len(rows)} {bins}\n255\n")
        for k in reversed(range(bins)):
            out.write(" ".join(str(level(r[k])) for r in rows))
            out.write("\n")


if __name__ == "__main__":
    main()
