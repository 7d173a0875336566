"""Predicted communication of one secure pruning query, from the circuits alone.

Nothing is executed: rounds and bytes come from the circuit layer sizes, so
the reference operating point (40960-bit keys, large cohorts) is cheap to
tabulate. Rounds are network round trips; bytes are per party.
"""
import argparse

from ppnorm.bench import format_table
from ppnorm.pipeline import REFERENCE_N_GRID
from ppnorm.smpc.protocols import prune_bytes, prune_rounds
from ppnorm.transport import ChannelStats, NetConfig, simulated_time


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bits", type=int, default=40960)
    ap.add_argument("--K", type=int, default=2048)
    ap.add_argument("--cohort", type=int, default=1024)
    ap.add_argument("--n", type=int, nargs="+", default=list(REFERENCE_N_GRID))
    ap.add_argument("--rtt-ms", type=float, default=1.0)
    ap.add_argument("--bandwidth-bps", type=float, default=1e9)
    args = ap.parse_args()

    net = NetConfig.from_flags(args.bandwidth_bps, args.rtt_ms)
    rows = []
    for n in args.n:
        if n > args.cohort:
            continue
        rounds = prune_rounds(args.bits, args.cohort, n, args.K)
        sent = prune_bytes(args.bits, args.cohort, n, args.K)
        total = sum(rounds.values())
        t = simulated_time(ChannelStats(rounds=total, bytes_sent=[sent, sent]), net)
        rows.append({"n": n, **{f"rounds_{k}": v for k, v in rounds.items()},
                     "rounds": total, "MB_per_party": sent / 1e6, "network_s": t})
    print(format_table(rows))


if __name__ == "__main__":
    main()
