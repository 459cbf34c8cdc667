"""Synthetic corpus construction: weighted skeleton sampling, filtering,
numeric realization into (50, 7) tables, augmentation, and persistence.

The pipeline is sample -> simplify -> filter -> dedup for skeletons,
then per skeleton a fixed number of numeric realizations: constants
drawn uniformly, variables log-uniformly, rows rejected wholesale on
domain errors or |y| beyond the cap.  Every random draw flows through
seeds derived from (master seed, skeleton id, realization index), so a
corpus is reproducible record-for-record regardless of worker count.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .expr_core import (
    CONSTANT_TOKEN,
    EvalDomainError,
    EvalNonFiniteError,
    GENERATIVE_TOKENS,
    Node,
    VARIABLE_TOKENS,
    VOCAB,
    evaluate_columns,
    leaf,
    preorder_parse,
    preorder_serialize,
    token_arity,
)
from .simplify import canonical_key, simplify, validate_skeleton

DEFAULT_SAMPLING_WEIGHTS: dict[str, float] = {
    "add": 2.0,
    "mul": 2.0,
    "neg": 1.0,
    "inv": 1.0,
    "sq": 1.0,
    "sqrt": 0.5,
    "cb": 0.25,
    "sin": 0.5,
    "cos": 0.5,
    "log": 0.5,
    "exp": 0.5,
    "C": 4.0,
    "x1": 1.0,
    "x2": 1.0,
    "x3": 1.0,
    "x4": 1.0,
    "x5": 1.0,
    "x6": 1.0,
}

N_VARIABLES = len(VARIABLE_TOKENS)
N_TABLE_COLUMNS = 1 + N_VARIABLES  # y first, then x1..x6

# entropy tag for the split shuffle; skeleton ids are u32 so no overlap
_SPLIT_STREAM_TAG = 2**32


@dataclass(frozen=True)
class GenerationConfig:
    sampling_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SAMPLING_WEIGHTS))
    n_raw_samples: int = 1_000_000
    max_tokens: int = 30
    node_budget: int = 30
    const_range: tuple[float, float] = (-100.0, 100.0)
    var_range: tuple[float, float] = (0.1, 10.0)
    n_rows: int = 50
    n_realizations: int = 100
    y_cap: float = 1e9
    master_seed: int = 0

    def __post_init__(self):
        missing = set(GENERATIVE_TOKENS) - set(self.sampling_weights)
        if missing:
            raise ValueError(f"sampling weights missing for {sorted(missing)}")
        extra = set(self.sampling_weights) - set(GENERATIVE_TOKENS)
        if extra:
            raise ValueError(f"sampling weights for unknown tokens {sorted(extra)}")
        for token, w in self.sampling_weights.items():
            if w < 0:
                raise ValueError(f"negative weight for {token}")
            if token in (CONSTANT_TOKEN,) + VARIABLE_TOKENS and w <= 0:
                raise ValueError(f"leaf token {token} needs a positive weight")
        if self.const_range[0] >= self.const_range[1]:
            raise ValueError("constant range must be ordered")
        if not 0 < self.var_range[0] < self.var_range[1]:
            raise ValueError("variable range must be positive and ordered")
        if self.n_rows < 1:
            raise ValueError("n_rows must be >= 1")
        if self.node_budget < 1:
            raise ValueError("node_budget must be >= 1")


@dataclass(eq=False)
class TabularDataset:
    """One realized table: column 0 is y, columns 1..6 are x1..x6 with
    unused variables exactly zero; ground_truth is the skeleton's
    pre-order token sequence."""

    matrix: np.ndarray  # (n_rows, 7) float32
    ground_truth: tuple[str, ...]
    skeleton_id: int
    realization_seed: int

    def __eq__(self, other):
        if not isinstance(other, TabularDataset):
            return NotImplemented
        return (
            self.skeleton_id == other.skeleton_id
            and self.realization_seed == other.realization_seed
            and self.ground_truth == other.ground_truth
            and self.matrix.shape == other.matrix.shape
            and np.array_equal(self.matrix, other.matrix)
        )


@dataclass(frozen=True)
class Rejected:
    reason: str  # "domain" or "magnitude"


@dataclass(frozen=True)
class SkeletonBank:
    entries: tuple[tuple[Node, tuple[str, ...]], ...]
    n_raw: int
    n_valid: int
    n_unique: int
    rejections: dict[str, int]


@dataclass
class CorpusSplit:
    train: list[TabularDataset]
    validation: list[TabularDataset]
    test: list[TabularDataset]

    def __eq__(self, other):
        if not isinstance(other, CorpusSplit):
            return NotImplemented
        return (
            self.train == other.train
            and self.validation == other.validation
            and self.test == other.test
        )

    @property
    def all_datasets(self) -> list[TabularDataset]:
        return self.train + self.validation + self.test


# ---------------------------------------------------------------------------
# Skeleton sampling
# ---------------------------------------------------------------------------

class _TokenSampler:
    """Weighted draws over the generative tokens, restricted by the arity
    a placement may still afford under the node budget."""

    def __init__(self, weights: dict[str, float]):
        self.by_max_arity: list[tuple[tuple[str, ...], np.ndarray]] = []
        for cap in (0, 1, 2):
            tokens = tuple(t for t in GENERATIVE_TOKENS if token_arity(t) <= cap and weights[t] > 0)
            w = np.array([weights[t] for t in tokens], dtype=np.float64)
            total = w.sum()
            if total <= 0:
                raise ValueError("no token with positive weight is placeable")
            self.by_max_arity.append((tokens, np.cumsum(w / total)))

    def draw(self, rng: np.random.Generator, max_arity: int) -> str:
        tokens, cumulative = self.by_max_arity[max_arity]
        return tokens[int(np.searchsorted(cumulative, rng.random(), side="right").clip(0, len(tokens) - 1))]


def sample_skeleton(rng: np.random.Generator, config: GenerationConfig, sampler: Optional[_TokenSampler] = None) -> Node:
    """Grow a tree in pre-order by weighted token draws.

    Each placement may add at most (budget - placed - open slots) extra
    arity, which forces leaves near the budget and guarantees the result
    never exceeds node_budget nodes.
    """
    if sampler is None:
        sampler = _TokenSampler(config.sampling_weights)
    tokens: list[str] = []
    open_slots = 1
    while open_slots:
        allowance = config.node_budget - len(tokens) - open_slots
        token = sampler.draw(rng, min(allowance, 2))
        tokens.append(token)
        open_slots += token_arity(token) - 1
    return preorder_parse(tokens)


def build_skeleton_bank(config: GenerationConfig) -> SkeletonBank:
    """sample -> simplify -> filter -> dedup, with per-stage counts."""
    sampler = _TokenSampler(config.sampling_weights)
    rng = np.random.default_rng(np.random.SeedSequence([config.master_seed]))
    seen: set[str] = set()
    entries: list[tuple[Node, tuple[str, ...]]] = []
    n_valid = 0
    rejections: dict[str, int] = {}
    for _ in range(config.n_raw_samples):
        tree = simplify(sample_skeleton(rng, config, sampler))
        reason = validate_skeleton(tree, config.max_tokens)
        if reason is not None:
            rejections[reason] = rejections.get(reason, 0) + 1
            continue
        n_valid += 1
        key = canonical_key(tree)
        if key in seen:
            continue
        seen.add(key)
        entries.append((tree, tuple(preorder_serialize(tree))))
    return SkeletonBank(
        entries=tuple(entries),
        n_raw=config.n_raw_samples,
        n_valid=n_valid,
        n_unique=len(entries),
        rejections=rejections,
    )


# ---------------------------------------------------------------------------
# Numeric realization
# ---------------------------------------------------------------------------

def realize(
    skeleton: Node,
    rng: np.random.Generator,
    config: GenerationConfig,
    skeleton_id: int = 0,
    realization_seed: int = 0,
) -> Union[TabularDataset, Rejected]:
    """Draw constants then per-variable rows, evaluate, and filter.

    Draw order is fixed: one uniform constant per C occurrence in
    pre-order, then n_rows log-uniform values per present variable in
    index order.  Any domain error rejects the whole table ("domain");
    non-finite or |y| > y_cap rejects it ("magnitude").
    """
    tokens = preorder_serialize(skeleton)
    n_constants = sum(1 for t in tokens if t == CONSTANT_TOKEN)
    constants = rng.uniform(config.const_range[0], config.const_range[1], size=n_constants).tolist()
    lo, hi = np.log(config.var_range[0]), np.log(config.var_range[1])
    present = [v for v in VARIABLE_TOKENS if v in tokens]
    columns = {v: np.exp(rng.uniform(lo, hi, size=config.n_rows)) for v in present}
    try:
        y = evaluate_columns(skeleton, columns, constants)
    except EvalDomainError:
        return Rejected("domain")
    except EvalNonFiniteError:
        return Rejected("magnitude")
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), (config.n_rows,))
    if np.any(np.abs(y) > config.y_cap):
        return Rejected("magnitude")
    matrix = np.zeros((config.n_rows, N_TABLE_COLUMNS), dtype=np.float32)
    matrix[:, 0] = y
    for v, col in columns.items():
        matrix[:, 1 + VARIABLE_TOKENS.index(v)] = col
    return TabularDataset(matrix, tuple(tokens), skeleton_id, realization_seed)


def realization_seed_for(master_seed: int, skeleton_id: int, repeat: int) -> int:
    seq = np.random.SeedSequence([master_seed, skeleton_id, repeat])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def build_corpus(bank: SkeletonBank, config: GenerationConfig) -> CorpusSplit:
    """Realize every skeleton n_realizations times (rejections dropped,
    not retried), shuffle, and split 80/10/10 by dataset."""
    datasets: list[TabularDataset] = []
    for skeleton_id, (tree, _tokens) in enumerate(bank.entries):
        for repeat in range(config.n_realizations):
            seed = realization_seed_for(config.master_seed, skeleton_id, repeat)
            result = realize(tree, np.random.default_rng(seed), config, skeleton_id, seed)
            if isinstance(result, TabularDataset):
                datasets.append(result)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.master_seed, _SPLIT_STREAM_TAG]))
    order = shuffle_rng.permutation(len(datasets))
    shuffled = [datasets[i] for i in order]
    n = len(shuffled)
    n_train = (n * 8) // 10
    n_train_val = (n * 9) // 10
    return CorpusSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train_val],
        test=shuffled[n_train_val:],
    )


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def permute_dataset_columns(dataset: TabularDataset, perm: np.ndarray) -> TabularDataset:
    """Apply a permutation of the six variable slots: variable i's column
    and tokens move to slot perm[i] (0-based over x1..x6); y is fixed."""
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(N_VARIABLES)):
        raise ValueError("perm must be a permutation of 0..5")
    matrix = dataset.matrix.copy()
    matrix[:, 1 + perm] = dataset.matrix[:, 1:]
    renames = {VARIABLE_TOKENS[i]: VARIABLE_TOKENS[int(perm[i])] for i in range(N_VARIABLES)}
    ground_truth = tuple(renames.get(t, t) for t in dataset.ground_truth)
    return TabularDataset(matrix, ground_truth, dataset.skeleton_id, dataset.realization_seed)


def augment_permute_columns(dataset: TabularDataset, rng: np.random.Generator) -> TabularDataset:
    """Random variable-column permutation with consistent token renaming."""
    return permute_dataset_columns(dataset, rng.permutation(N_VARIABLES))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

MAGIC = b"SRFORGE1"
FORMAT_VERSION = 1
_FIXED_ROWS = 50


class CorpusFormatError(Exception):
    """Raised for bad magic, unsupported version, or truncated records."""


def _encode_record(ds: TabularDataset) -> bytes:
    if ds.matrix.shape != (_FIXED_ROWS, N_TABLE_COLUMNS):
        raise CorpusFormatError(f"record matrix must be {( _FIXED_ROWS, N_TABLE_COLUMNS)}, got {ds.matrix.shape}")
    ids = bytes(VOCAB.id_of(t) for t in ds.ground_truth)
    if len(ids) > 255:
        raise CorpusFormatError("ground truth longer than 255 tokens")
    return (
        struct.pack("<IQ", ds.skeleton_id, ds.realization_seed)
        + np.ascontiguousarray(ds.matrix, dtype="<f4").tobytes()
        + struct.pack("<B", len(ids))
        + ids
    )


def write_corpus(split: CorpusSplit, path: Union[str, Path]) -> None:
    """Persist as skeletons.txt + data.bin + split.json in a directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    records = split.all_datasets
    by_id: dict[int, tuple[str, ...]] = {}
    for ds in records:
        prior = by_id.setdefault(ds.skeleton_id, ds.ground_truth)
        if prior != ds.ground_truth:
            raise CorpusFormatError(f"conflicting ground truths for skeleton id {ds.skeleton_id}")
    with open(path / "skeletons.txt", "w") as fh:
        for skeleton_id in sorted(by_id):
            fh.write(f"{skeleton_id} {' '.join(by_id[skeleton_id])}\n")
    with open(path / "data.bin", "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(records)))
        for ds in records:
            fh.write(_encode_record(ds))
    boundaries = (len(split.train), len(split.train) + len(split.validation))
    with open(path / "split.json", "w") as fh:
        json.dump(
            {
                "train": list(range(0, boundaries[0])),
                "validation": list(range(boundaries[0], boundaries[1])),
                "test": list(range(boundaries[1], len(records))),
            },
            fh,
        )


def read_corpus(path: Union[str, Path]) -> CorpusSplit:
    path = Path(path)
    blob = (path / "data.bin").read_bytes()
    if blob[:8] != MAGIC:
        raise CorpusFormatError("bad magic; not a corpus data file")
    version, count = struct.unpack_from("<IQ", blob, 8)
    if version != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported corpus format version {version}")
    offset = 8 + 12
    matrix_bytes = _FIXED_ROWS * N_TABLE_COLUMNS * 4
    records: list[TabularDataset] = []
    for _ in range(count):
        try:
            skeleton_id, seed = struct.unpack_from("<IQ", blob, offset)
            offset += 12
            if offset + matrix_bytes > len(blob):
                raise struct.error("truncated matrix payload")
            matrix = np.frombuffer(blob, dtype="<f4", count=_FIXED_ROWS * N_TABLE_COLUMNS, offset=offset)
            offset += matrix_bytes
            (length,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            ids = blob[offset : offset + length]
            if len(ids) != length:
                raise struct.error("truncated token ids")
            offset += length
        except struct.error as exc:
            raise CorpusFormatError(f"truncated corpus record: {exc}") from exc
        tokens = tuple(VOCAB.token_of(i) for i in ids)
        records.append(TabularDataset(matrix.reshape(_FIXED_ROWS, N_TABLE_COLUMNS).copy(), tokens, skeleton_id, seed))
    if offset != len(blob):
        raise CorpusFormatError("trailing bytes after last record")
    with open(path / "split.json") as fh:
        split_indices = json.load(fh)
    return CorpusSplit(
        train=[records[i] for i in split_indices["train"]],
        validation=[records[i] for i in split_indices["validation"]],
        test=[records[i] for i in split_indices["test"]],
    )


def audit_corpus(split: CorpusSplit, config: GenerationConfig) -> int:
    """Check every dataset invariant; returns the number audited."""
    for ds in split.all_datasets:
        if ds.matrix.shape[1] != N_TABLE_COLUMNS:
            raise ValueError(f"dataset {ds.skeleton_id} has bad column count")
        if not np.all(np.isfinite(ds.matrix)):
            raise ValueError(f"dataset {ds.skeleton_id} has non-finite entries")
        if np.any(np.abs(ds.matrix[:, 0]) > config.y_cap):
            raise ValueError(f"dataset {ds.skeleton_id} exceeds the y cap")
        tree = preorder_parse(ds.ground_truth)
        used = {t for t in ds.ground_truth if t in VARIABLE_TOKENS}
        for i, v in enumerate(VARIABLE_TOKENS):
            column = ds.matrix[:, 1 + i]
            if v not in used and np.any(column != 0.0):
                raise ValueError(f"dataset {ds.skeleton_id} has a nonzero unused column {v}")
        if validate_skeleton(tree, config.max_tokens) is not None:
            raise ValueError(f"dataset {ds.skeleton_id} ground truth fails skeleton filters")
    return len(split.all_datasets)
