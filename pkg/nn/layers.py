"""
Transformer primitives: layer normalization, linear maps, embeddings with
sinusoidal positions, multi-head attention and the position-wise feed-forward block
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from autodiff import Parameter, ShapeError, Tensor, ops
from .module import Module

MASK_VALUE = -1e9


class LayerNorm(Module):
    """LayerNormParams: gain 1, bias 0 at init"""

    def __init__(self, name: str, d_model: int, eps: float = 1e-6):
        if eps <= 0:
            raise ValueError(f"layer norm eps must be positive, got {eps}")
        self.gain = Parameter(f"{name}.gain", np.ones(d_model))
        self.bias = Parameter(f"{name}.bias", np.zeros(d_model))
        self.eps = eps

    @property
    def d_model(self) -> int:
        return self.gain.shape[0]


def layer_norm(x: Tensor, p: LayerNorm) -> Tensor:
    """Per row: (x - mean) / sqrt(var + eps) * gain + bias, population variance"""
    d = p.d_model
    if x.shape[-1] != d:
        raise ShapeError("layer_norm", x.shape, p.gain.shape)
    if x.ndim == 1:
        return ops.reshape(layer_norm(ops.reshape(x, (1, d)), p), (d,))
    rows = x.shape[0]
    mean = ops.mean_last(x)
    centered = ops.sub(x, ops.broadcast_cols(mean, d))
    variance = ops.add(ops.var_last(x), Tensor(np.full(rows, p.eps)))
    inv_std = ops.power(variance, -0.5)
    normed = ops.mul(centered, ops.broadcast_cols(inv_std, d))
    return ops.add(ops.mul(normed, ops.broadcast_rows(p.gain, rows)), ops.broadcast_rows(p.bias, rows))


class Linear(Module):
    """Xavier-uniform weight [d_in, d_out], zero bias"""

    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.weight = Parameter(f"{name}.weight", rng.uniform(-limit, limit, size=(d_in, d_out)))
        self.bias = Parameter(f"{name}.bias", np.zeros(d_out))


def linear(x: Tensor, p: Linear) -> Tensor:
    return ops.add(ops.matmul(x, p.weight), ops.broadcast_rows(p.bias, x.shape[0]))


class Embedding(Module):
    def __init__(self, name: str, vocab_size: int, d_model: int, rng: np.random.Generator):
        self.table = Parameter(f"{name}.table", rng.normal(0.0, d_model ** -0.5, size=(vocab_size, d_model)))

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]


def positional_encoding(positions, d_model: int) -> np.ndarray:
    """Sinusoids: even columns sin(pos / 10000^(i/d)), odd columns cos of the same angle"""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, even / d_model)
    pe = np.zeros((positions.shape[0], d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe


def embed(tokens, table: Embedding, d_model: int, positions=None) -> Tensor:
    """Row lookup scaled by sqrt(d_model) plus the sinusoidal position term"""
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= table.vocab_size):
        bad = int(tokens[(tokens < 0) | (tokens >= table.vocab_size)][0])
        raise IndexError(f"token id {bad} outside vocabulary of {table.vocab_size}")
    if positions is None:
        positions = np.arange(tokens.size)
    looked_up = ops.scale(ops.gather_rows(table.table, tokens), math.sqrt(d_model))
    return ops.add(looked_up, Tensor(positional_encoding(positions, d_model)))


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    heads: int

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_model ({self.d_model})")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


class MultiHeadAttention(Module):
    def __init__(self, name: str, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.query = Linear(f"{name}.q", cfg.d_model, cfg.d_model, rng)
        self.key = Linear(f"{name}.k", cfg.d_model, cfg.d_model, rng)
        self.value = Linear(f"{name}.v", cfg.d_model, cfg.d_model, rng)
        self.output = Linear(f"{name}.o", cfg.d_model, cfg.d_model, rng)


def causal_mask(length: int) -> np.ndarray:
    """True where query i may attend to key j (j <= i)"""
    return np.tril(np.ones((length, length), dtype=bool))


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Optional[np.ndarray],
    cfg: AttentionConfig,
    params: MultiHeadAttention,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, List[np.ndarray]]]:
    """
    Per head softmax(Q K^T / sqrt(d_k) + mask) V, heads concatenated and projected

    Args:
        q: queries [t_q, d]
        k, v: keys and values [t_k, d]
        mask: boolean [t_q, t_k], True where attention is allowed; None allows everything.
            Query rows without any allowed key get a zero context.
        return_weights: also return each head's attention matrix
    """
    if k.shape != v.shape or q.shape[-1] != cfg.d_model or k.shape[-1] != cfg.d_model:
        raise ShapeError("multi_head_attention", q.shape, k.shape, v.shape)
    bias = keep = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q.shape[0], k.shape[0]):
            raise ShapeError("attention mask", mask.shape, (q.shape[0], k.shape[0]))
        bias = Tensor(np.where(mask, 0.0, MASK_VALUE))
        # a query with no admissible key reads nothing
        empty = ~mask.any(axis=1)
        if empty.any():
            keep = Tensor(np.where(empty[:, None], 0.0, np.ones(mask.shape)))

    queries = linear(q, params.query)
    keys = linear(k, params.key)
    values = linear(v, params.value)
    d_k = cfg.d_k
    heads, weights = [], []
    for h in range(cfg.heads):
        lo, hi = h * d_k, (h + 1) * d_k
        scores = ops.scale(
            ops.matmul(ops.slice_cols(queries, lo, hi), ops.transpose(ops.slice_cols(keys, lo, hi))),
            1.0 / math.sqrt(d_k),
        )
        if bias is not None:
            scores = ops.add(scores, bias)
        attn = ops.softmax(scores)
        if keep is not None:
            attn = ops.mul(attn, keep)
        weights.append(attn.data)
        attn = ops.dropout(attn, dropout, rng)
        heads.append(ops.matmul(attn, ops.slice_cols(values, lo, hi)))
    merged = heads[0] if len(heads) == 1 else ops.concat(heads, axis=1)
    out = linear(merged, params.output)
    return (out, weights) if return_weights else out


class FeedForward(Module):
    def __init__(self, name: str, d_model: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(f"{name}.w1", d_model, d_ff, rng)
        self.outer = Linear(f"{name}.w2", d_ff, d_model, rng)


def feed_forward(
    x: Tensor,
    params: FeedForward,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """linear -> ReLU -> linear, row-wise"""
    hidden = ops.dropout(ops.relu(linear(x, params.inner)), dropout, rng)
    return linear(hidden, params.outer)
