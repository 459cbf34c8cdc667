#!/usr/bin/env python3
"""Desk-scale end-to-end run: generate a corpus, train, evaluate.

Chains the CLI subcommands with one shared output directory and seed so
the whole loop is reproducible from a single invocation.  The defaults
finish on a laptop CPU in well under an hour; pass --profile paper (and
a lot of patience) for the full-size configuration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from srforge.cli import main as cli


def run(argv: list[str]) -> None:
    print("+ srforge " + " ".join(argv))
    code = cli(argv)
    if code != 0:
        raise SystemExit(code)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--n-raw", type=int, default=20000)
    ap.add_argument("--realizations", type=int, default=10)
    ap.add_argument("--profile", default="desk", choices=("desk", "paper"))
    ap.add_argument("--encoder", default="mix", choices=("mlp", "att", "mix"))
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--warmup", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--problems", type=Path, default=None,
                    help="existing problem root; omit to synthesize one")
    args = ap.parse_args()

    corpus = args.out / "corpus"
    run_dir = args.out / f"train_{args.encoder}"
    report = args.out / f"report_{args.encoder}"

    run(["generate", "--out", str(corpus), "--n-raw", str(args.n_raw),
         "--realizations", str(args.realizations), "--seed", str(args.seed)])
    run(["train", "--corpus", str(corpus), "--out", str(run_dir),
         "--profile", args.profile, "--encoder", args.encoder,
         "--epochs", str(args.epochs), "--warmup", str(args.warmup),
         "--seed", str(args.seed)])

    problems = args.problems
    if problems is None:
        problems = args.out / "problems"
        if not problems.exists():
            from make_problems import main as make_problems

            sys.argv = ["make_problems", "--out", str(problems),
                        "--seed", str(args.seed + 1)]
            if make_problems() != 0:
                return 1
    run(["evaluate", "--problems", str(problems), "--checkpoint",
         str(run_dir / "model_final.ckpt"), "--out", str(report),
         "--seed", str(args.seed)])
    print(f"done; report at {report / 'report.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
