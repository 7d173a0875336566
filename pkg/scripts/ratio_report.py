"""Recompute the reference improvement ratios from the reference timings.

Optionally puts desk-measured component timings next to them, read from a
``run_bench.py`` JSONL file.
"""
import argparse
import json

from ppnorm.bench import format_table, reference_ratio_rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--desk", help="JSONL written by run_bench.py")
    args = ap.parse_args()

    rows = reference_ratio_rows()
    for r in rows:
        r["delta"] = r["ratio"] - r["expected"]
    print(format_table(rows))
    print(f"max |delta| = {max(abs(r['delta']) for r in rows):.2e}")

    if args.desk:
        with open(args.desk) as fh:
            desk = [json.loads(line) for line in fh if line.strip()]
        cols = ["n", "t_bk", "t_gmw", "t_he_per_cmp", "rounds", "bytes", "ratio"]
        print("\ndesk timings (synthetic cohort, not comparable in absolute terms)")
        print(format_table([d for d in desk if d.get("n") is not None], cols))


if __name__ == "__main__":
    main()
