#!/usr/bin/env python3
"""Single-threaded Hamming distance throughput benchmark.

Measures one-query-vs-database distance evaluations per second on packed
barcodes, the kernel behind every search.

Usage:
    python scripts/benchmark_hamming.py [--length 255] [--db-size 2000000]
"""

import argparse
import time

import numpy as np

from bobsearch.barcode import Barcode, hamming_to_many, packed_size, stack_words


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--length", type=int, default=255, help="barcode bits")
    parser.add_argument("--db-size", type=int, default=2_000_000)
    parser.add_argument("--reps", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    nbytes = packed_size(args.length)
    codes = [
        Barcode(rng.integers(0, 256, nbytes, dtype=np.uint8), args.length)
        for _ in range(256)
    ]
    words = stack_words(codes, args.length)
    db = words[rng.integers(0, len(codes), size=args.db_size)]
    query = stack_words(
        [Barcode(rng.integers(0, 256, nbytes, dtype=np.uint8), args.length)],
        args.length,
    )[0]

    hamming_to_many(query, db[:1000])  # warm up
    t0 = time.perf_counter()
    for _ in range(args.reps):
        distances = hamming_to_many(query, db)
    elapsed = time.perf_counter() - t0

    rate = args.reps * args.db_size / elapsed
    print(
        f"L={args.length}: {rate:.3e} distances/s "
        f"({args.reps} x {args.db_size} in {elapsed:.2f}s, "
        f"min={distances.min()}, max={distances.max()})"
    )


if __name__ == "__main__":
    main()
