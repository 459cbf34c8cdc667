"""Set-style transformer for tabular samples -> skeleton token sequences.

Three encoder variants share a per-cell embedding MLP and a final
row-max-pooled memory of shape (d_cols, d_model):

  mlp  alternating MLPs with row/column max-pool feature exchange;
       equivariant over rows and columns, cheapest.
  att  self-attention across the column axis, batched over rows;
       equivariant over rows and columns.
  mix  flattens each row, attends across rows, broadcasts back;
       row-equivariant only (the flatten MLP mixes columns).

The decoder is a standard causal transformer over token embeddings with
cross-attention into the memory.  All parameter shapes are chosen so the
per-block counts match the closed forms in count_params_closed_form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr_core import PAD_ID, SOS_ID, VOCAB, PrefixStatus, prefix_status, token_arity
from .tensor_nn import (
    ParameterStore,
    Tensor,
    broadcast_to,
    concatenate,
    dropout,
    embedding,
    init_uniform,
    layer_norm,
    linear,
    max_along,
    multi_head_attention,
    no_grad,
    relu,
    reshape,
    sinusoidal_positional_encoding,
)

ENCODER_KINDS = ("mlp", "att", "mix")


class IncompleteDecodeError(Exception):
    """Greedy decoding hit the length cap with open argument slots."""

    def __init__(self, partial: list[int]):
        super().__init__(
            f"sequence still incomplete after {len(partial)} tokens"
        )
        self.partial = partial


class ParameterCountError(RuntimeError):
    """Allocated parameter total disagrees with the closed form."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    n_enc_layers: int = 4
    n_dec_layers: int = 8
    n_heads: int = 4
    vocab_size: int = 20
    max_len: int = 31
    n_rows: int = 50
    d_cols: int = 7
    p_drop: float = 0.25
    encoder_kind: str = "mlp"

    def __post_init__(self):
        if self.d_model < 2 or self.d_model % 2:
            raise ValueError("d_model must be even and >= 2")
        if self.d_model % self.n_heads:
            raise ValueError("n_heads must divide d_model")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.d_cols != 7:
            raise ValueError("d_cols is fixed at 7 (response + six variables)")
        if self.n_enc_layers < 1 or self.n_dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        if self.vocab_size < 3:
            raise ValueError("vocabulary needs PAD, SOS and a generative token")
        if not 0 <= self.p_drop < 1:
            raise ValueError("p_drop must be in [0, 1)")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")


def encoder_layer_param_count(cfg: ModelConfig) -> int:
    """Parameters in one encoder layer of the configured kind."""
    d, c = cfg.d_model, cfg.d_cols
    if cfg.encoder_kind == "mlp":
        return (3 * d * d) // 2 + 2 * d
    if cfg.encoder_kind == "att":
        return 4 * d * d + 6 * d
    return (5 + c) * d * d + 8 * d


def count_params_closed_form(cfg: ModelConfig) -> int:
    """Total trainable parameters, block by block.

    cell MLP d^2+3d, N_enc encoder layers, last MLP d^2+d, token
    embeddings v*d, N_dec decoder layers of 12d^2+17d, output v*d+v.
    """
    d, v = cfg.d_model, cfg.vocab_size
    total = d * d + 3 * d
    total += cfg.n_enc_layers * encoder_layer_param_count(cfg)
    total += d * d + d
    total += v * d
    total += cfg.n_dec_layers * (12 * d * d + 17 * d)
    total += v * d + v
    return total


def count_params(cfg: ModelConfig) -> int:
    """Closed-form count, cross-checked against an actual allocation."""
    closed = count_params_closed_form(cfg)
    allocated = Model(cfg, seed=0).store.total_count()
    if closed != allocated:
        raise ParameterCountError(
            f"closed form {closed} != allocated {allocated} for {cfg}"
        )
    return closed


class _Affine:
    def __init__(self, store, rng, name, fan_in, fan_out):
        self.w = store.register(f"{name}.w", init_uniform(rng, (fan_in, fan_out), fan_in))
        self.b = store.register(f"{name}.b", np.zeros(fan_out, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class _Norm:
    def __init__(self, store, name, d):
        self.gain = store.register(f"{name}.gain", np.ones(d, dtype=np.float32))
        self.bias = store.register(f"{name}.bias", np.zeros(d, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class _Attention:
    def __init__(self, store, rng, name, d, n_heads):
        self.n_heads = n_heads
        self.proj = [
            _Affine(store, rng, f"{name}.{p}", d, d) for p in ("q", "k", "v", "o")
        ]

    def __call__(self, q, k, v, mask=None) -> Tensor:
        pq, pk, pv, po = self.proj
        return multi_head_attention(
            q, k, v,
            pq.w, pq.b, pk.w, pk.b, pv.w, pv.b, po.w, po.b,
            self.n_heads, mask=mask,
        )


def _mlp2(first: _Affine, second: _Affine, x: Tensor) -> Tensor:
    return second(relu(first(x)))


def _pool_and_join(h: Tensor, axis: int) -> Tensor:
    # max over one axis, tiled back and concatenated on the feature axis
    pooled = max_along(h, axis=axis)
    shape = h.data.shape
    expanded = reshape(pooled, shape[:axis] + (1,) + shape[axis:][1:])
    tiled = broadcast_to(expanded, shape)
    return concatenate([h, tiled], axis=-1)


class Model:
    """Allocates parameters at construction; forward passes are methods.

    encode/decode accept both single instances and a leading batch axis:
    x (n, c) or (B, n, c); tokens (L,) or (B, L) with matching memory.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.store = ParameterStore()
        rng = np.random.default_rng(seed)
        d, c, v = cfg.d_model, cfg.d_cols, cfg.vocab_size

        self.cell1 = _Affine(self.store, rng, "enc.cell.l1", 1, d)
        self.cell2 = _Affine(self.store, rng, "enc.cell.l2", d, d)
        self.enc_layers = []
        for i in range(cfg.n_enc_layers):
            base = f"enc.layer{i}"
            if cfg.encoder_kind == "mlp":
                layer = {
                    "mlp1a": _Affine(self.store, rng, f"{base}.mlp1.l1", d, d // 2),
                    "mlp1b": _Affine(self.store, rng, f"{base}.mlp1.l2", d // 2, d // 2),
                    "mlp2a": _Affine(self.store, rng, f"{base}.mlp2.l1", d, d // 2),
                    "mlp2b": _Affine(self.store, rng, f"{base}.mlp2.l2", d // 2, d // 2),
                }
            elif cfg.encoder_kind == "att":
                layer = {
                    "attn": _Attention(self.store, rng, f"{base}.attn", d, cfg.n_heads),
                    "norm": _Norm(self.store, f"{base}.norm", d),
                }
            else:
                layer = {
                    "flat1": _Affine(self.store, rng, f"{base}.flat.l1", c * d, d),
                    "flat2": _Affine(self.store, rng, f"{base}.flat.l2", d, d),
                    "attn": _Attention(self.store, rng, f"{base}.attn", d, cfg.n_heads),
                    "norm": _Norm(self.store, f"{base}.norm", d),
                }
            self.enc_layers.append(layer)
        self.enc_last = _Affine(self.store, rng, "enc.last", d, d)

        self.embed = self.store.register("dec.embed", init_uniform(rng, (v, d), d))
        self.dec_layers = []
        for i in range(cfg.n_dec_layers):
            base = f"dec.layer{i}"
            self.dec_layers.append({
                "self": _Attention(self.store, rng, f"{base}.self", d, cfg.n_heads),
                "norm1": _Norm(self.store, f"{base}.norm1", d),
                "cross": _Attention(self.store, rng, f"{base}.cross", d, cfg.n_heads),
                "norm2": _Norm(self.store, f"{base}.norm2", d),
                "ff1": _Affine(self.store, rng, f"{base}.ff.l1", d, 2 * d),
                "ff2": _Affine(self.store, rng, f"{base}.ff.l2", 2 * d, d),
                "norm3": _Norm(self.store, f"{base}.norm3", d),
            })
        self.out = _Affine(self.store, rng, "out", d, v)

        self._pe = sinusoidal_positional_encoding(cfg.max_len, d)

    def copy_parameters_from(self, store: ParameterStore) -> None:
        if store.names() != self.store.names():
            raise ValueError("parameter name mismatch between stores")
        for name, tensor in store.items():
            target = self.store[name]
            if tensor.data.shape != target.data.shape:
                raise ValueError(f"shape mismatch for parameter {name!r}")
            target.data[...] = tensor.data

    # -- encoder ---------------------------------------------------------

    def _drop(self, x: Tensor, training: bool, rng) -> Tensor:
        return dropout(x, self.cfg.p_drop, training, rng)

    def _encoder_layer(self, layer: dict, x: Tensor, training: bool, rng) -> Tensor:
        kind = self.cfg.encoder_kind
        if kind == "mlp":
            h = _mlp2(layer["mlp1a"], layer["mlp1b"], x)
            h = _pool_and_join(h, axis=-3)  # exchange across rows
            h = _mlp2(layer["mlp2a"], layer["mlp2b"], h)
            return _pool_and_join(h, axis=-2)  # exchange across columns
        if kind == "att":
            mixed = layer["attn"](x, x, x)  # sequence axis = columns
            return layer["norm"](x + self._drop(mixed, training, rng))
        shape = x.data.shape  # (.., n, c, d)
        flat = reshape(x, shape[:-2] + (shape[-2] * shape[-1],))
        h = _mlp2(layer["flat1"], layer["flat2"], flat)  # (.., n, d)
        mixed = layer["attn"](h, h, h)  # sequence axis = rows
        mixed = reshape(mixed, shape[:-2] + (1, shape[-1]))
        mixed = broadcast_to(mixed, shape)
        return layer["norm"](x + self._drop(mixed, training, rng))

    def embed_cells(self, x: np.ndarray) -> Tensor:
        """Per-cell two-layer MLP: (.., n, c) scalars -> (.., n, c, d) features."""
        cells = Tensor(np.asarray(x, dtype=np.float32)[..., None])
        return self.cell2(relu(self.cell1(cells)))

    def encode(self, x: np.ndarray, training: bool = False, rng=None) -> Tensor:
        """(n_rows, d_cols) or (B, n_rows, d_cols) -> memory (.., d_cols, d_model)."""
        h = self.embed_cells(x)
        for layer in self.enc_layers:
            h = self._encoder_layer(layer, h, training, rng)
        h = self.enc_last(h)
        return max_along(h, axis=-3)

    # -- decoder ---------------------------------------------------------

    def decode(
        self, memory: Tensor, tokens: np.ndarray, training: bool = False, rng=None
    ) -> Tensor:
        """Token ids (L,) or (B, L) -> logits (.., L, vocab_size)."""
        ids = np.asarray(tokens)
        length = ids.shape[-1]
        if length > self.cfg.max_len:
            raise ValueError(f"sequence length {length} exceeds {self.cfg.max_len}")
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise ValueError("token id out of range")

        h = embedding(self.embed, ids) + Tensor(self._pe[:length])
        h = self._drop(h, training, rng)
        causal = np.triu(np.full((length, length), -np.inf, dtype=np.float32), k=1)
        for layer in self.dec_layers:
            a = layer["self"](h, h, h, mask=causal)
            h = layer["norm1"](h + self._drop(a, training, rng))
            a = layer["cross"](h, memory, memory)
            h = layer["norm2"](h + self._drop(a, training, rng))
            a = _mlp2(layer["ff1"], layer["ff2"], h)
            h = layer["norm3"](h + self._drop(a, training, rng))
        return self.out(h)

    # -- autoregressive decoding -----------------------------------------

    def greedy_decode(self, memory: Tensor) -> list[int]:
        """Argmax decoding from [SOS]; returns generative token ids.

        SOS/PAD logits are masked out.  Stops as soon as the emitted
        prefix parses as a complete tree; raises IncompleteDecodeError
        if max_len - 1 tokens still leave open slots.
        """
        seq = [SOS_ID]
        emitted: list[int] = []
        with no_grad():
            while True:
                logits = self.decode(memory, np.asarray(seq)).data
                row = logits[-1].copy()
                row[PAD_ID] = -np.inf
                row[SOS_ID] = -np.inf
                token_id = int(row.argmax())
                emitted.append(token_id)
                seq.append(token_id)
                names = [VOCAB.token_of(t) for t in emitted]
                if prefix_status(names) is PrefixStatus.COMPLETE:
                    return emitted
                if len(emitted) >= self.cfg.max_len - 1:
                    raise IncompleteDecodeError(emitted)

    def greedy_decode_batch(self, memory: Tensor) -> list[list[int] | None]:
        """Lockstep greedy decoding over a batched memory (B, d_cols, d).

        Returns one token-id list per instance, or None where the length
        cap was reached before the prefix completed.
        """
        n = memory.data.shape[0]
        seqs = np.full((n, 1), SOS_ID, dtype=np.int64)
        deficits = np.ones(n, dtype=np.int64)  # open argument slots
        done = np.zeros(n, dtype=bool)
        results: list[list[int] | None] = [None] * n
        emitted: list[list[int]] = [[] for _ in range(n)]
        with no_grad():
            for _ in range(self.cfg.max_len - 1):
                logits = self.decode(memory, seqs).data[:, -1].copy()
                logits[:, PAD_ID] = -np.inf
                logits[:, SOS_ID] = -np.inf
                next_ids = logits.argmax(axis=-1)
                next_ids[done] = PAD_ID  # keep finished rows inert
                for i in np.flatnonzero(~done):
                    token_id = int(next_ids[i])
                    emitted[i].append(token_id)
                    deficits[i] += token_arity(VOCAB.token_of(token_id)) - 1
                    if deficits[i] == 0:
                        results[i] = emitted[i]
                        done[i] = True
                if done.all():
                    break
                seqs = np.concatenate([seqs, next_ids[:, None]], axis=1)
        return results
