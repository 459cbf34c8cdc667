"""Benchmark evaluation: problem files -> normalized tree-edit-distance report.

A problem is a whitespace-delimited numeric table plus a ground-truth
expression (infix with C placeholders, or a pre-order token line).
Preprocessing rescales variables to typical magnitudes in [0.1, 10] by
powers of ten, divides the target by its own power-of-ten scale, and
standardizes the truth as simplify(C * truth) so the absorbed scale has
a constant to live in.  Predictions and truths are both compared in
simplified canonical form.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .expr_core import (
    VOCAB,
    ExprError,
    Node,
    leaf,
    parse_infix,
    parse_token_line,
    preorder_parse,
    preorder_serialize,
)
from .model import IncompleteDecodeError, Model
from .simplify import simplify
from .treedist import normalized_ted

MAX_VARIABLES = 6
FLAG_UNUSABLE = "unusable"
FLAG_UNSUPPORTED_ARITY = "unsupported_arity"

# a predictor maps a (n_obs, 7) matrix to a pre-order token-name list,
# or raises IncompleteDecodeError
Predictor = Callable[[np.ndarray], list[str]]


class ProblemParseError(ExprError):
    """Malformed problem table or truth file."""


@dataclass(frozen=True)
class SrsdProblem:
    name: str
    group: str
    variables: np.ndarray  # (n_valid_rows, k)
    target: np.ndarray  # (n_valid_rows,)
    truth: Node
    flags: tuple[str, ...] = ()

    @property
    def n_variables(self) -> int:
        return self.variables.shape[1]

    @property
    def usable(self) -> bool:
        return FLAG_UNUSABLE not in self.flags


@dataclass(frozen=True)
class EvalProtocolConfig:
    n_obs: int = 50
    repeats: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.n_obs < 1 or self.repeats < 1:
            raise ValueError("n_obs and repeats must be >= 1")


@dataclass(frozen=True)
class ProblemResult:
    name: str
    group: str
    mean_nted: Optional[float]  # None when the problem was unusable
    flags: tuple[str, ...] = ()
    n_incomplete: int = 0


@dataclass(frozen=True)
class EvalReport:
    problems: tuple[ProblemResult, ...]
    group_means: dict[str, float] = field(default_factory=dict)


def parse_table(text: str, path: str) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        values = []
        for col_no, token in enumerate(fields, start=1):
            try:
                values.append(float(token))
            except ValueError:
                raise ProblemParseError(
                    f"{path}: line {line_no}, column {col_no}: "
                    f"not a number: {token!r}"
                ) from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ProblemParseError(
                f"{path}: line {line_no}: expected {width} columns, "
                f"got {len(values)}"
            )
        rows.append(values)
    if not rows or width < 2:
        raise ProblemParseError(f"{path}: need at least two numeric columns")
    return np.asarray(rows, dtype=np.float64)


def parse_truth(text: str) -> Node:
    """Accept either a pre-order token line or infix with C placeholders."""
    stripped = text.strip()
    try:
        return preorder_parse(parse_token_line(stripped))
    except ExprError:
        return parse_infix(stripped)


def load_problem(
    data_path: Path,
    truth_path: Path,
    name: Optional[str] = None,
    group: str = "default",
    target_last: bool = True,
    min_rows: int = 50,
) -> SrsdProblem:
    """Read a table and its truth; filter non-finite rows; attach flags."""
    data_path, truth_path = Path(data_path), Path(truth_path)
    table = parse_table(data_path.read_text(), str(data_path))
    if target_last:
        variables, target = table[:, :-1], table[:, -1]
    else:
        variables, target = table[:, 1:], table[:, 0]
    valid = np.isfinite(variables).all(axis=1) & np.isfinite(target)
    variables, target = variables[valid], target[valid]

    flags = []
    if variables.shape[1] > MAX_VARIABLES:
        flags.append(FLAG_UNSUPPORTED_ARITY)
    if variables.shape[0] < min_rows:
        flags.append(FLAG_UNUSABLE)
    truth = parse_truth(truth_path.read_text())
    return SrsdProblem(
        name=name or data_path.stem,
        group=group,
        variables=variables,
        target=target,
        truth=truth,
        flags=tuple(flags),
    )


def preprocess(problem: SrsdProblem) -> SrsdProblem:
    """Rescale columns by powers of ten and standardize the truth.

    Each variable column is divided by 10^round(log10 median|col|) (zeros
    ignored; all-zero columns keep scale 1).  The target is divided by
    10^round(mean log10 |y|) over its nonzero entries; an all-zero target
    marks the problem unusable.  The truth becomes simplify(C * truth).
    """
    variables = problem.variables.copy()
    for j in range(problem.n_variables):
        column = variables[:, j]
        magnitudes = np.abs(column[column != 0])
        if magnitudes.size:
            median = np.median(magnitudes)
            variables[:, j] = column / 10.0 ** np.round(np.log10(median))

    flags = problem.flags
    target = problem.target
    nonzero = np.abs(target[target != 0])
    if nonzero.size == 0:
        if FLAG_UNUSABLE not in flags:
            flags = flags + (FLAG_UNUSABLE,)
    else:
        target = target / 10.0 ** np.round(np.mean(np.log10(nonzero)))

    truth = simplify(Node("mul", (leaf("C"), problem.truth)))
    return replace(
        problem, variables=variables, target=target, truth=truth, flags=flags
    )


def _repeat_seed(base_seed: int, problem_name: str, repeat: int) -> int:
    digest = hashlib.sha256(
        f"{base_seed}:{problem_name}:{repeat}".encode()
    ).digest()
    return int.from_bytes(digest[:8], "little")


def assemble_input(
    variables: np.ndarray, target: np.ndarray, rows: np.ndarray
) -> np.ndarray:
    """(n_obs, 7) model input: target in column 0, variables zero-padded."""
    n_obs = len(rows)
    matrix = np.zeros((n_obs, 1 + MAX_VARIABLES), dtype=np.float32)
    matrix[:, 0] = target[rows]
    matrix[:, 1 : 1 + variables.shape[1]] = variables[rows]
    return matrix


def run_protocol(
    predictor: Predictor, problem: SrsdProblem, cfg: EvalProtocolConfig
) -> tuple[float, int]:
    """Mean normalized TED over seeded repeats, plus the incomplete count.

    Each repeat samples n_obs valid rows without replacement with a seed
    derived from (cfg.seed, problem name, repeat index).  Incomplete
    decodes and unsupported-arity problems score 1.0 per repeat.
    """
    if not problem.usable:
        raise ValueError(f"problem {problem.name!r} is flagged unusable")
    if len(problem.target) < cfg.n_obs:
        raise ValueError(
            f"problem {problem.name!r} has {len(problem.target)} valid rows, "
            f"fewer than n_obs={cfg.n_obs}"
        )
    if FLAG_UNSUPPORTED_ARITY in problem.flags:
        return 1.0, 0

    scores = []
    n_incomplete = 0
    for repeat in range(cfg.repeats):
        rng = np.random.default_rng(_repeat_seed(cfg.seed, problem.name, repeat))
        rows = rng.choice(len(problem.target), size=cfg.n_obs, replace=False)
        matrix = assemble_input(problem.variables, problem.target, rows)
        try:
            tokens = predictor(matrix)
        except IncompleteDecodeError:
            n_incomplete += 1
            scores.append(1.0)
            continue
        predicted = simplify(preorder_parse(tokens))
        scores.append(normalized_ted(predicted, problem.truth))
    return float(np.mean(scores)), n_incomplete


def model_predictor(model: Model) -> Predictor:
    def predict(matrix: np.ndarray) -> list[str]:
        memory = model.encode(matrix)
        token_ids = model.greedy_decode(memory)
        return [VOCAB.token_of(t) for t in token_ids]

    return predict


def oracle_predictor(problem: SrsdProblem) -> Predictor:
    """Ignores the input and replays the problem's (standardized) truth."""
    tokens = preorder_serialize(problem.truth)

    def predict(matrix: np.ndarray) -> list[str]:
        return list(tokens)

    return predict


def evaluate_problems(
    predictor_for: Callable[[SrsdProblem], Predictor],
    problems: Sequence[SrsdProblem],
    cfg: EvalProtocolConfig,
    n_threads: int = 1,
) -> EvalReport:
    """Preprocess, run the protocol per problem, aggregate group means.

    Problems are independent, so results do not depend on n_threads;
    the predictor (a frozen model) is shared read-only.
    """

    def job(problem: SrsdProblem) -> ProblemResult:
        prepared = preprocess(problem)
        if not prepared.usable:
            return ProblemResult(prepared.name, prepared.group, None, prepared.flags)
        mean_nted, n_incomplete = run_protocol(
            predictor_for(prepared), prepared, cfg
        )
        return ProblemResult(
            prepared.name, prepared.group, mean_nted, prepared.flags, n_incomplete
        )

    if n_threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(job, problems))
    else:
        results = [job(p) for p in problems]
    return aggregate(results)


def aggregate(results: Sequence[ProblemResult]) -> EvalReport:
    """Unweighted per-group means over usable problems."""
    by_group: dict[str, list[float]] = {}
    for r in results:
        if r.mean_nted is not None:
            by_group.setdefault(r.group, []).append(r.mean_nted)
    groups_seen = {r.group for r in results}
    for group in sorted(groups_seen - set(by_group)):
        warnings.warn(f"group {group!r} has no usable problems; omitted")
    means = {g: float(np.mean(v)) for g, v in sorted(by_group.items())}
    return EvalReport(problems=tuple(results), group_means=means)


def discover_problems(root: Path) -> list[SrsdProblem]:
    """Layout: <root>/<group>/<name>.txt with <name>.truth beside it."""
    root = Path(root)
    problems = []
    for group_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for data_path in sorted(group_dir.glob("*.txt")):
            truth_path = data_path.with_suffix(".truth")
            if not truth_path.exists():
                raise ProblemParseError(f"missing truth file for {data_path}")
            problems.append(
                load_problem(data_path, truth_path, group=group_dir.name)
            )
    if not problems:
        raise ProblemParseError(f"no problems found under {root}")
    return problems


def report_to_dict(report: EvalReport) -> dict:
    return {
        "problems": [
            {
                "name": r.name,
                "group": r.group,
                "mean_nted": r.mean_nted,
                "flags": list(r.flags),
                "n_incomplete": r.n_incomplete,
            }
            for r in report.problems
        ],
        "group_means": dict(report.group_means),
    }


def write_report(report: EvalReport, json_path: Path, csv_path: Path) -> None:
    Path(json_path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n")
    lines = ["name,group,mean_nted,flags,n_incomplete"]
    for r in report.problems:
        score = "" if r.mean_nted is None else f"{r.mean_nted:.6f}"
        lines.append(
            f"{r.name},{r.group},{score},{';'.join(r.flags)},{r.n_incomplete}"
        )
    Path(csv_path).write_text("\n".join(lines) + "\n")
