"""Command-line front end: generate / train / predict / evaluate /
count-params / treedist.

Configuration is a flat key=value file merged with flag overrides
(flags win).  Unknown config keys are errors.  Commands with an output
directory echo the fully resolved configuration there as run.cfg.

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 numeric failure (non-finite loss, incomplete decode).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import datagen, evalbench
from .expr_core import (
    VOCAB,
    ExprError,
    format_token_line,
    parse_token_line,
    preorder_parse,
    print_infix,
)
from .model import (
    ENCODER_KINDS,
    IncompleteDecodeError,
    Model,
    ModelConfig,
    count_params_closed_form,
)
from .tensor_nn import CheckpointFormatError
from .train_loop import ALLOWED_SMOOTHING, TrainConfig, load_model, train
from .treedist import normalized_ted, ted

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

PROFILES = {
    "desk": dict(d_model=64, n_enc_layers=2, n_dec_layers=2, batch_size=64),
    "paper": dict(d_model=256, n_enc_layers=4, n_dec_layers=8, batch_size=1024),
}


class UsageError(Exception):
    """Bad flags, bad config file, or inconsistent options."""


class DataError(Exception):
    """Missing or malformed input artifacts."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map to 1
        raise UsageError(message)


@dataclass(frozen=True)
class Option:
    name: str  # config key; the flag is --name with _ -> -
    convert: Callable[[str], object]
    default: object = None  # None with required=True means must be set
    help: str = ""
    required: bool = False
    choices: Optional[tuple] = None
    is_flag: bool = False  # boolean store_true option


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _smoothing(text: str) -> float:
    value = float(text)
    if value not in ALLOWED_SMOOTHING:
        raise ValueError(f"label smoothing must be one of {ALLOWED_SMOOTHING}")
    return value


THREADS_OPTION = Option(
    "threads", int, 0,
    help="worker threads (0 = use SRFORGE_THREADS or 1)",
)

COMMAND_OPTIONS: dict[str, list[Option]] = {
    "generate": [
        Option("out", str, required=True, help="corpus output directory"),
        Option("n_raw", int, 1000, help="raw skeleton samples"),
        Option("seed", int, 0, help="master seed"),
        Option("realizations", int, 5, help="datasets per unique skeleton"),
        THREADS_OPTION,
    ],
    "train": [
        Option("corpus", str, required=True, help="corpus directory"),
        Option("out", str, required=True, help="run output directory"),
        Option("profile", str, "desk", choices=tuple(PROFILES)),
        Option("encoder", str, "mix", choices=ENCODER_KINDS),
        Option("label_smoothing", _smoothing, 0.0, help="0 or 0.1"),
        Option("epochs", int, 10),
        Option("batch_size", int, 0, help="0 = profile default"),
        Option("seed", int, 0),
        Option("warmup", int, 4000, help="schedule warmup steps"),
        Option("lr_scale", float, 1.0),
        Option("p_drop", float, 0.25),
        Option("checkpoint_every", int, 0, help="epochs between checkpoints"),
        Option("resume", str, "", help="checkpoint to continue from"),
        THREADS_OPTION,
    ],
    "predict": [
        Option("checkpoint", str, required=True),
        Option("input", str, required=True, help="whitespace numeric table"),
        Option(
            "layout", str, "raw", choices=("raw", "problem"),
            help="raw: 7 columns, response first; problem: variables then target",
        ),
        THREADS_OPTION,
    ],
    "evaluate": [
        Option("checkpoint", str, "", help="required unless --oracle"),
        Option("problems", str, required=True, help="problem root directory"),
        Option("out", str, required=True, help="report output directory"),
        Option("n_obs", int, 50),
        Option("repeats", int, 30),
        Option("seed", int, 0),
        Option("oracle", _bool, False, is_flag=True,
               help="score the ground truth against itself"),
        THREADS_OPTION,
    ],
    "count-params": [
        Option("d_model", int, 256),
        Option("n_enc", int, 4),
        Option("n_dec", int, 8),
        Option("heads", int, 4),
        Option("vocab", int, 20),
        THREADS_OPTION,
    ],
    "treedist": [THREADS_OPTION],
}


def build_parser() -> _Parser:
    parser = _Parser(prog="srforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in COMMAND_OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key=value config file")
        for opt in options:
            flag = "--" + opt.name.replace("_", "-")
            if opt.is_flag:
                p.add_argument(flag, dest=opt.name, action="store_true",
                               default=argparse.SUPPRESS, help=opt.help)
            else:
                p.add_argument(flag, dest=opt.name, type=opt.convert,
                               default=argparse.SUPPRESS, help=opt.help,
                               choices=opt.choices)
        if command == "treedist":
            p.add_argument("trees", nargs=2,
                           help="two pre-order token lines (prediction, truth)")
    return parser


def read_config_file(path: str) -> dict[str, str]:
    lines = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise DataError(f"cannot read config file {path}: {err}") from None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {line_no}: expected key=value")
        key, _, value = line.partition("=")
        lines[key.strip()] = value.strip()
    return lines


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags; unknown keys rejected."""
    options = {opt.name: opt for opt in COMMAND_OPTIONS[command]}
    resolved = {name: opt.default for name, opt in options.items()}
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key not in options:
                raise UsageError(f"unknown config key {key!r} for {command}")
            try:
                value = options[key].convert(raw)
            except ValueError as err:
                raise UsageError(f"config key {key}: {err}") from None
            if options[key].choices and value not in options[key].choices:
                raise UsageError(
                    f"config key {key}: {value!r} not in {options[key].choices}"
                )
            resolved[key] = value
    for name in options:
        if hasattr(args, name):
            resolved[name] = getattr(args, name)
    for name, opt in options.items():
        if opt.required and not resolved[name]:
            raise UsageError(f"missing required option --{name.replace('_', '-')}")
    if resolved.get("threads", 0) == 0:
        resolved["threads"] = int(os.environ.get("SRFORGE_THREADS", "1"))
    if resolved["threads"] < 1:
        raise UsageError("threads must be >= 1")
    return resolved


def write_run_cfg(directory: Path, resolved: dict) -> None:
    lines = [f"{key}={resolved[key]}" for key in sorted(resolved)]
    (directory / "run.cfg").write_text("\n".join(lines) + "\n")


def cmd_generate(cfg: dict) -> int:
    gen_cfg = datagen.GenerationConfig(
        n_raw_samples=cfg["n_raw"],
        master_seed=cfg["seed"],
        n_realizations=cfg["realizations"],
    )
    bank = datagen.build_skeleton_bank(gen_cfg)
    split = datagen.build_corpus(bank, gen_cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    datagen.write_corpus(split, out)
    write_run_cfg(out, cfg)
    realized = len(split.all_datasets)
    print(f"raw {bank.n_raw}")
    print(f"valid {bank.n_valid}")
    print(f"unique {bank.n_unique}")
    print(f"realized {realized}")
    print(f"split {len(split.train)}/{len(split.validation)}/{len(split.test)}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    corpus_dir = Path(cfg["corpus"])
    if not (corpus_dir / "data.bin").exists():
        raise DataError(f"no corpus at {corpus_dir}")
    corpus = datagen.read_corpus(corpus_dir)

    profile = PROFILES[cfg["profile"]]
    batch_size = cfg["batch_size"] or profile["batch_size"]
    cfg = {**cfg, "batch_size": batch_size}
    if cfg["resume"]:
        model = load_model(Path(cfg["resume"]))
    else:
        model_cfg = ModelConfig(
            d_model=profile["d_model"],
            n_enc_layers=profile["n_enc_layers"],
            n_dec_layers=profile["n_dec_layers"],
            encoder_kind=cfg["encoder"],
            p_drop=cfg["p_drop"],
        )
        model = Model(model_cfg, seed=cfg["seed"])
    train_cfg = TrainConfig(
        epochs=cfg["epochs"],
        batch_size=batch_size,
        label_smoothing=cfg["label_smoothing"],
        seed=cfg["seed"],
        warmup_steps=cfg["warmup"],
        lr_scale=cfg["lr_scale"],
        checkpoint_every=cfg["checkpoint_every"],
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_run_cfg(out, cfg)
    history = train(model, corpus, train_cfg, out_dir=out)
    final = [r for r in history if r.split == "train"][-1]
    print(f"steps {model.store.step_count}")
    print(f"final train loss {final.loss:.6f} accuracy {final.accuracy:.4f}")
    return EXIT_OK


def _read_matrix(path: Path, layout: str) -> np.ndarray:
    table = evalbench.parse_table(path.read_text(), str(path))
    valid = np.isfinite(table).all(axis=1)
    table = table[valid]
    if table.shape[0] == 0:
        raise DataError(f"{path}: no finite rows")
    if layout == "raw":
        if table.shape[1] != 7:
            raise DataError(
                f"{path}: raw layout needs exactly 7 columns, got {table.shape[1]}"
            )
        return table.astype(np.float32)
    if table.shape[1] > 7:
        raise DataError(f"{path}: more than 6 variables is unsupported")
    rows = np.arange(table.shape[0])
    return evalbench.assemble_input(table[:, :-1], table[:, -1], rows)


def cmd_predict(cfg: dict) -> int:
    model = load_model(Path(cfg["checkpoint"]))
    matrix = _read_matrix(Path(cfg["input"]), cfg["layout"])
    memory = model.encode(matrix)
    try:
        token_ids = model.greedy_decode(memory)
    except IncompleteDecodeError as err:
        partial = [VOCAB.token_of(t) for t in err.partial]
        print(f"incomplete decode; partial: {format_token_line(partial)}",
              file=sys.stderr)
        return EXIT_NUMERIC
    tokens = [VOCAB.token_of(t) for t in token_ids]
    print(format_token_line(tokens))
    print(print_infix(preorder_parse(tokens)))
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    problems = evalbench.discover_problems(Path(cfg["problems"]))
    protocol = evalbench.EvalProtocolConfig(
        n_obs=cfg["n_obs"], repeats=cfg["repeats"], seed=cfg["seed"]
    )
    if cfg["oracle"]:
        predictor_for = evalbench.oracle_predictor
    else:
        if not cfg["checkpoint"]:
            raise UsageError("--checkpoint is required without --oracle")
        model = load_model(Path(cfg["checkpoint"]))
        shared = evalbench.model_predictor(model)
        predictor_for = lambda problem: shared
    report = evalbench.evaluate_problems(
        predictor_for, problems, protocol, n_threads=cfg["threads"]
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_run_cfg(out, cfg)
    evalbench.write_report(report, out / "report.json", out / "report.csv")
    for group, mean in report.group_means.items():
        print(f"{group} {mean:.6f}")
    return EXIT_OK


def cmd_count_params(cfg: dict) -> int:
    for kind in ENCODER_KINDS:
        model_cfg = ModelConfig(
            d_model=cfg["d_model"],
            n_enc_layers=cfg["n_enc"],
            n_dec_layers=cfg["n_dec"],
            n_heads=cfg["heads"],
            vocab_size=cfg["vocab"],
            encoder_kind=kind,
        )
        closed = count_params_closed_form(model_cfg)
        allocated = Model(model_cfg, seed=0).store.total_count()
        marker = "" if closed == allocated else "  MISMATCH"
        print(f"{kind} closed {closed} allocated {allocated}{marker}")
        if closed != allocated:
            return EXIT_NUMERIC
    return EXIT_OK


def cmd_treedist(cfg: dict, trees: list[str]) -> int:
    pred = preorder_parse(parse_token_line(trees[0]))
    truth = preorder_parse(parse_token_line(trees[1]))
    print(f"ted {ted(pred, truth)}")
    print(f"normalized {normalized_ted(pred, truth):.6f}")
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args.command, args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "count-params":
            return cmd_count_params(cfg)
        return cmd_treedist(cfg, args.trees)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataError,
        ExprError,
        datagen.CorpusFormatError,
        CheckpointFormatError,
        OSError,
    ) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (RuntimeError, ArithmeticError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
