"""Neural-network operations built on the autodiff core.

softmax, layer_norm, and the loss are fused primitives with hand-written
backward passes; attention and linear layers are compositions.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import Tensor, make_node, matmul, reshape, swapaxes

LAYER_NORM_EPS = 1e-5


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b over the last axis."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"linear: {x.data.shape} @ {w.data.shape} mismatch")
    return matmul(x, w) + b


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(grad):
        if x.requires_grad:
            inner = (grad * data).sum(axis=axis, keepdims=True)
            x.accumulate((grad - inner) * data)

    return make_node(data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = gain.data * xhat + bias.data

    def backward(grad):
        if gain.requires_grad:
            gain.accumulate((grad * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate(grad.reshape(-1, grad.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = grad * gain.data
            mean_gx = gx.mean(axis=-1, keepdims=True)
            mean_gx_xhat = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate(inv_std * (gx - mean_gx - xhat * mean_gx_xhat))

    return make_node(data, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Zero elements with probability p and rescale survivors by 1/(1-p)
    during training; identity at inference."""
    if not 0 <= p < 1:
        raise ValueError("dropout probability must be in [0, 1)")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    scale = 1.0 / (1.0 - p)
    mask = (rng.random(x.data.shape) >= p).astype(x.data.dtype) * scale
    data = x.data * mask

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * mask)

    return make_node(data, (x,), backward)


def multi_head_attention(
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    n_heads: int,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Scaled dot-product attention with learned projections.

    Sequence axis is the second-to-last; leading axes are batch.  mask,
    if given, is additive (-inf blocks a key) and broadcasts against the
    (.., heads, T_q, T_k) score array.
    """
    d_model = q_in.data.shape[-1]
    if d_model % n_heads:
        raise ValueError(f"{n_heads} heads do not divide d_model={d_model}")
    d_head = d_model // n_heads

    def split_heads(t: Tensor) -> Tensor:
        *lead, T, _ = t.data.shape
        t = reshape(t, (*lead, T, n_heads, d_head))
        return swapaxes(t, -3, -2)  # (.., heads, T, d_head)

    q = split_heads(linear(q_in, wq, bq))
    k = split_heads(linear(k_in, wk, bk))
    v = split_heads(linear(v_in, wv, bv))
    scores = matmul(q, swapaxes(k, -1, -2)) * float(1.0 / np.sqrt(d_head))
    if mask is not None:
        scores = scores + Tensor(np.asarray(mask, dtype=scores.data.dtype))
    weights = softmax(scores, axis=-1)
    mixed = matmul(weights, v)
    mixed = swapaxes(mixed, -3, -2)
    *lead, T, _, _ = mixed.data.shape
    merged = reshape(mixed, (*lead, T, d_model))
    return linear(merged, wo, bo)


def cross_entropy_label_smoothed(
    logits: Tensor, targets: np.ndarray, pad_mask: np.ndarray, epsilon: float
) -> Tensor:
    """Mean cross-entropy over unmasked positions against the smoothed
    target (1-eps)*onehot + eps/v spread over all classes.

    The scalar reduction runs in float64 regardless of the logits dtype;
    the gradient (softmax - smoothed target) / n_kept is cast back.
    """
    if not 0 <= epsilon < 1:
        raise ValueError("label smoothing must be in [0, 1)")
    if logits.data.ndim != 2:
        raise ValueError("logits must be (positions, classes); flatten batches first")
    targets = np.asarray(targets)
    keep = ~np.asarray(pad_mask, dtype=bool)
    n_kept = int(keep.sum())
    if n_kept == 0:
        raise ValueError("all positions are masked; loss undefined")
    v = logits.data.shape[-1]
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - log_norm
    q = np.full_like(logp, epsilon / v)
    q[np.arange(len(targets)), targets] += 1.0 - epsilon
    per_position = -(q * logp).sum(axis=-1)
    # the scalar stays float64 so reductions keep full precision even
    # for float32 logits; backward casts back to the logits dtype
    data = np.asarray(per_position[keep].mean(), dtype=np.float64)

    def backward(grad):
        if logits.requires_grad:
            p = np.exp(logp)
            d = (p - q) / n_kept
            d[~keep] = 0.0
            logits.accumulate((float(grad) * d).astype(logits.data.dtype))

    return make_node(data, (logits,), backward)


def sinusoidal_positional_encoding(length: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position table with wavelength base 10000."""
    if d_model % 2:
        raise ValueError("d_model must be even")
    positions = np.arange(length)[:, None].astype(np.float64)
    exponents = np.arange(0, d_model, 2).astype(np.float64) / d_model
    angles = positions / np.power(10000.0, exponents)[None, :]
    table = np.zeros((length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(dtype)
