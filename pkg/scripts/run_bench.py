"""Desk benchmark on the channel-shift corpus.

Scores every trial in each mode over an n grid and times the protocol
components. The output files share the ``--out`` prefix
(``.txt`` / ``.jsonl`` / ``.info.json``).

    python scripts/run_bench.py --out results/bench           # about 6 minutes on one CPU
    python scripts/run_bench.py --dry-run --out results/dry    # metrics only
"""
import argparse
import json
import logging
from pathlib import Path

from ppnorm import bench
from ppnorm.pipeline import REFERENCE_N_GRID, PipelineConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--n", type=int, nargs="+", default=list(REFERENCE_N_GRID))
    ap.add_argument("--key-bits", type=int, default=512, help="key used for the scored trials")
    ap.add_argument("--timing-key-bits", type=int, default=3072, help="key used for HE timing")
    ap.add_argument("--protected-n-max", type=int, default=50)
    ap.add_argument("--rtt-ms", type=float, default=1.0)
    ap.add_argument("--bandwidth-bps", type=float, default=1e9)
    ap.add_argument("--dry-run", action="store_true")
    ap.add_argument("--out", default="results/bench")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)

    cfg = bench.BenchConfig(
        corpus=bench.bench_corpus_config(args.seed),
        pipeline=PipelineConfig(key_bits=args.key_bits, seed=args.seed, rtt_ms=args.rtt_ms,
                                bandwidth_bps=args.bandwidth_bps),
        n_grid=tuple(args.n), protected_n_max=args.protected_n_max,
        timing_key_bits=args.timing_key_bits, dry_run=args.dry_run)
    report = bench.bench_run(cfg)
    print(report.table())

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".txt").write_text(report.table() + "\n")
    out.with_suffix(".jsonl").write_text(report.to_jsonl())
    out.with_suffix(".info.json").write_text(json.dumps(report.info, indent=2, default=str))


if __name__ == "__main__":
    main()
