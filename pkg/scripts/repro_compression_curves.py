#!/usr/bin/env python3
"""Compression-ratio curves: transmitted bytes and training FLOPs of the
whole-model baseline relative to the partially federated algorithm, as a
function of the client count.

The ratios are closed-form (no training); with a real dataset the index sets
come from its actual rating pattern, otherwise from a generated corpus with
matching attributes:

    python scripts/repro_compression_curves.py --ml1m /data/ml-1m/ratings.dat \
        --out runs/compression.csv
    python scripts/repro_compression_curves.py --smoke --out runs/compression.csv
"""

from __future__ import annotations

import argparse
import sys

from fedrec import data, metrics


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--ml1m", help="path to the MovieLens ratings.dat")
    parser.add_argument("--out", required=True, help="output CSV path")
    parser.add_argument("--clients", default="10,30,100,300,1000,3000,6040",
                        help="comma-separated client counts")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--smoke", action="store_true",
                        help="use a small generated corpus instead of a dataset")
    args = parser.parse_args(argv)

    if args.smoke:
        matrix = data.gen_synthetic(120, 60, sparsity=0.85, seed=args.seed)
        client_counts = [2, 5, 10, 30, 60, 120]
    elif args.ml1m:
        matrix = data.load_movielens(args.ml1m)
        client_counts = [int(c) for c in args.clients.split(",")]
    else:
        matrix = data.gen_synthetic(
            6040, 3706, sparsity=1.0 - 1_000_209 / (6040 * 3706),
            seed=args.seed, popularity_skew=1.4, min_ratings_per_user=20,
        )
        client_counts = [int(c) for c in args.clients.split(",")]

    n = matrix.num_items
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write("clients,mean_active_items,comm_ratio,compute_ratio\n")
        for m_clients in client_counts:
            if m_clients > matrix.num_users:
                continue
            part = data.partition(matrix, m_clients, seed=args.seed)
            sizes = [len(s) for s in part.item_index_sets]
            counts = [len(u) for u in part.members]
            selections = [list(range(m_clients))]
            fa = metrics.comm_cost("fedavg", m_clients, 1.0, n, sizes, 1,
                                   selections=selections)
            po = metrics.comm_cost("personalfr", m_clients, 1.0, n, sizes, 1,
                                   selections=selections)
            fa_f = metrics.compute_cost("fedavg", n, counts, sizes, 5, 1,
                                        selections=selections)
            po_f = metrics.compute_cost("personalfr", n, counts, sizes, 5, 1,
                                        selections=selections)
            mean_active = sum(sizes) / len(sizes)
            handle.write(
                f"{m_clients},{mean_active:.1f},"
                f"{fa.total_bytes / po.total_bytes:.4f},{fa_f / po_f:.4f}\n"
            )
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
