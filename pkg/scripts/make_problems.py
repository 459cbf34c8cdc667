#!/usr/bin/env python3
"""Synthesize an evaluation problem set from sampled skeletons.

Writes <out>/<group>/<name>.txt (whitespace table, variables first,
target last) and <name>.truth (pre-order token line) so the result can
be fed straight to `srforge evaluate --problems <out>`.  Constants are
realized once per problem; the truth file keeps the C placeholders.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from srforge.datagen import (
    GenerationConfig,
    TabularDataset,
    build_skeleton_bank,
    realization_seed_for,
    realize,
)
from srforge.expr_core import format_token_line


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--group", default="synthetic")
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--rows", type=int, default=120)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    config = GenerationConfig(
        n_raw_samples=args.count * 40, master_seed=args.seed, n_rows=args.rows
    )
    bank = build_skeleton_bank(config)
    if bank.n_unique < args.count:
        raise SystemExit(f"only {bank.n_unique} unique skeletons for {args.count} problems")

    group_dir = args.out / args.group
    group_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for skeleton_id, (tree, tokens) in enumerate(bank.entries):
        if written == args.count:
            break
        table = None
        for repeat in range(50):
            seed = realization_seed_for(args.seed, skeleton_id, repeat)
            result = realize(tree, np.random.default_rng(seed), config, skeleton_id, seed)
            if isinstance(result, TabularDataset):
                table = result
                break
        if table is None:
            continue  # skeleton rejects nearly everything, skip it
        n_vars = max(
            (int(t[1:]) for t in tokens if t.startswith("x")), default=0
        )
        # stored layout is y first; problem files carry variables first
        cols = np.concatenate(
            [table.matrix[:, 1 : 1 + n_vars], table.matrix[:, :1]], axis=1
        )
        name = f"p{written:03d}"
        np.savetxt(group_dir / f"{name}.txt", cols, fmt="%.9g")
        (group_dir / f"{name}.truth").write_text(format_token_line(tokens) + "\n")
        written += 1

    print(f"wrote {written} problems to {group_dir}")
    return 0 if written == args.count else 1


if __name__ == "__main__":
    sys.exit(main())
