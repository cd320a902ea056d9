"""
Encoder/decoder stacks with aggregation nodes between complete layers
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Sequence

import numpy as np

from autodiff import Tensor, no_grad, ops
from nn import (
    AttentionConfig,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    PackedSequences,
    SmoothingConfig,
    attention_mask,
    embed,
    feed_forward,
    label_smoothed_cross_entropy,
    layer_norm,
    linear,
    multi_head_attention,
    pack,
    token_accuracy,
)
from .residual import AggregationMode, Aggregator, NormPlacement, UnitTrace, residual_unit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """Fully determines the architecture"""
    encoder_depth: int = 6
    decoder_depth: int = 2
    d_model: int = 64
    d_ff: int = 256
    heads: int = 4
    norm: NormPlacement = NormPlacement.PRE
    aggregation: AggregationMode = AggregationMode.STANDARD
    src_vocab: int = 16
    tgt_vocab: int = 16
    dropout: float = 0.1
    attention_dropout: Optional[float] = None  # 0.1 for pre-norm, 0 for post-norm when unset
    relu_dropout: Optional[float] = None
    ln_eps: float = 1e-6
    pad_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'norm', NormPlacement(self.norm))
        object.__setattr__(self, 'aggregation', AggregationMode(self.aggregation))
        default_rate = 0.1 if self.norm is NormPlacement.PRE else 0.0
        if self.attention_dropout is None:
            object.__setattr__(self, 'attention_dropout', default_rate)
        if self.relu_dropout is None:
            object.__setattr__(self, 'relu_dropout', default_rate)
        if self.encoder_depth < 1 or self.decoder_depth < 1:
            raise ValueError(f"depths must be >= 1, got encoder={self.encoder_depth} decoder={self.decoder_depth}")
        if self.d_model % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        for name in ('dropout', 'attention_dropout', 'relu_dropout'):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {rate}")
        if not 0 <= self.pad_id < min(self.src_vocab, self.tgt_vocab):
            raise ValueError(f"pad_id {self.pad_id} outside vocabulary")

    def to_dict(self) -> dict:
        data = asdict(self)
        data['norm'] = self.norm.value
        data['aggregation'] = self.aggregation.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def config_hash(self) -> bytes:
        """32-byte digest of the architecture; dropout rates excluded"""
        data = self.to_dict()
        for key in ('dropout', 'attention_dropout', 'relu_dropout'):
            data.pop(key)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).digest()

    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.d_model, self.heads)


@dataclass
class ForwardContext:
    training: bool = False
    rng: Optional[np.random.Generator] = None
    units: Optional[List[UnitTrace]] = None

    def rate(self, value: float) -> float:
        return value if self.training else 0.0


@dataclass
class ActivationTrace:
    """y_0..y_L layer outputs and x_1..x_L layer inputs"""
    y: List[Tensor] = field(default_factory=list)
    x: List[Tensor] = field(default_factory=list)


@dataclass
class EncoderOutput:
    memory: Tensor          # final encoder output [B*T, d]
    packed: PackedSequences
    trace: ActivationTrace
    top: Tensor             # y_L before the top layer norm


class EncoderLayer(Module):
    """Self-attention unit then feed-forward unit"""

    def __init__(self, prefix: str, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.self_attn = MultiHeadAttention(f"{prefix}.self_attn", cfg.attention(), rng)
        self.self_attn_ln = LayerNorm(f"{prefix}.self_attn_ln", cfg.d_model, cfg.ln_eps)
        self.ffn = FeedForward(f"{prefix}.ffn", cfg.d_model, cfg.d_ff, rng)
        self.ffn_ln = LayerNorm(f"{prefix}.ffn_ln", cfg.d_model, cfg.ln_eps)

    def __call__(self, x: Tensor, mask: np.ndarray, ctx: ForwardContext) -> Tensor:
        cfg = self.cfg
        h = residual_unit(
            x,
            lambda z: multi_head_attention(
                z, z, z, mask, cfg.attention(), self.self_attn, ctx.rate(cfg.attention_dropout), ctx.rng
            ),
            cfg.norm, self.self_attn_ln, ctx.rate(cfg.dropout), ctx.rng, ctx.units,
        )
        return residual_unit(
            h,
            lambda z: feed_forward(z, self.ffn, ctx.rate(cfg.relu_dropout), ctx.rng),
            cfg.norm, self.ffn_ln, ctx.rate(cfg.dropout), ctx.rng, ctx.units,
        )


class DecoderLayer(Module):
    """Masked self-attention, encoder-decoder attention, feed-forward"""

    def __init__(self, prefix: str, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.self_attn = MultiHeadAttention(f"{prefix}.self_attn", cfg.attention(), rng)
        self.self_attn_ln = LayerNorm(f"{prefix}.self_attn_ln", cfg.d_model, cfg.ln_eps)
        self.cross_attn = MultiHeadAttention(f"{prefix}.cross_attn", cfg.attention(), rng)
        self.cross_attn_ln = LayerNorm(f"{prefix}.cross_attn_ln", cfg.d_model, cfg.ln_eps)
        self.ffn = FeedForward(f"{prefix}.ffn", cfg.d_model, cfg.d_ff, rng)
        self.ffn_ln = LayerNorm(f"{prefix}.ffn_ln", cfg.d_model, cfg.ln_eps)

    def __call__(self, x: Tensor, memory: Tensor, self_mask: np.ndarray, cross_mask: np.ndarray, ctx: ForwardContext) -> Tensor:
        cfg = self.cfg
        attn_rate = ctx.rate(cfg.attention_dropout)
        h = residual_unit(
            x,
            lambda z: multi_head_attention(z, z, z, self_mask, cfg.attention(), self.self_attn, attn_rate, ctx.rng),
            cfg.norm, self.self_attn_ln, ctx.rate(cfg.dropout), ctx.rng, ctx.units,
        )
        h = residual_unit(
            h,
            lambda z: multi_head_attention(z, memory, memory, cross_mask, cfg.attention(), self.cross_attn, attn_rate, ctx.rng),
            cfg.norm, self.cross_attn_ln, ctx.rate(cfg.dropout), ctx.rng, ctx.units,
        )
        return residual_unit(
            h,
            lambda z: feed_forward(z, self.ffn, ctx.rate(cfg.relu_dropout), ctx.rng),
            cfg.norm, self.ffn_ln, ctx.rate(cfg.dropout), ctx.rng, ctx.units,
        )


def run_stack(y0: Tensor, layers: Sequence, aggregator: Aggregator, call) -> ActivationTrace:
    """x_(l+1) = G(y_0..y_l); y_(l+1) = layer(x_(l+1))"""
    trace = ActivationTrace(y=[y0])
    for index, layer in enumerate(layers):
        x = aggregator.combine(trace.y, index)
        trace.x.append(x)
        trace.y.append(call(layer, x))
    return trace


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "encoder"):
        self.cfg = cfg
        self.embedding = Embedding(f"{prefix}.embedding", cfg.src_vocab, cfg.d_model, rng)
        self.layers = [EncoderLayer(f"{prefix}.layer{l + 1}", cfg, rng) for l in range(cfg.encoder_depth)]
        self.aggregator = Aggregator(f"{prefix}.dlcl", cfg.aggregation, cfg.norm, cfg.encoder_depth, cfg.d_model, cfg.ln_eps)
        # extra top norm keeps the unnormalized pre-norm sum in range
        self.top_ln = LayerNorm(f"{prefix}.top_ln", cfg.d_model, cfg.ln_eps) if cfg.norm is NormPlacement.PRE else None


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "decoder"):
        self.cfg = cfg
        self.embedding = Embedding(f"{prefix}.embedding", cfg.tgt_vocab, cfg.d_model, rng)
        self.layers = [DecoderLayer(f"{prefix}.layer{l + 1}", cfg, rng) for l in range(cfg.decoder_depth)]
        self.aggregator = Aggregator(f"{prefix}.dlcl", cfg.aggregation, cfg.norm, cfg.decoder_depth, cfg.d_model, cfg.ln_eps)
        self.top_ln = LayerNorm(f"{prefix}.top_ln", cfg.d_model, cfg.ln_eps) if cfg.norm is NormPlacement.PRE else None
        self.projection = Linear(f"{prefix}.projection", cfg.d_model, cfg.tgt_vocab, rng)


class DlclTransformer(Module):
    """Encoder-decoder Transformer; parameters drawn from one seeded generator"""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        names = self.parameter_dict()
        logger.debug(f"built {cfg.norm.value}-norm/{cfg.aggregation.value} model with {len(names)} parameter arrays")

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters())

    def encode(self, src_ids: Sequence[int]) -> EncoderOutput:
        with no_grad():
            return encoder_forward(self, np.asarray([list(src_ids)], dtype=np.int64))

    def next_log_probs(self, memory: EncoderOutput, prefix: Sequence[int]) -> np.ndarray:
        """Log-probabilities of the token following prefix"""
        with no_grad():
            logits = decoder_forward(self, np.asarray([list(prefix)], dtype=np.int64), memory)
            return ops.log_softmax(logits).data[-1]


def encoder_forward(model: DlclTransformer, tokens, ctx: Optional[ForwardContext] = None) -> EncoderOutput:
    """Embed, run L complete layers with aggregation between them, top LN for pre-norm"""
    ctx = ctx or ForwardContext()
    cfg = model.cfg
    enc = model.encoder
    packed = pack(tokens, cfg.pad_id)
    mask = attention_mask(packed, packed)
    y0 = ops.dropout(
        embed(packed.ids, enc.embedding, cfg.d_model, packed.positions), ctx.rate(cfg.dropout), ctx.rng
    )
    trace = run_stack(y0, enc.layers, enc.aggregator, lambda layer, x: layer(x, mask, ctx))
    top = trace.y[-1]
    memory = layer_norm(top, enc.top_ln) if enc.top_ln is not None else top
    return EncoderOutput(memory, packed, trace, top)


def decoder_forward(model: DlclTransformer, tgt_tokens, encoded: EncoderOutput, ctx: Optional[ForwardContext] = None) -> Tensor:
    """Logits [B*T, V]; self-attention is causal, cross-attention reads the final encoder output"""
    ctx = ctx or ForwardContext()
    cfg = model.cfg
    dec = model.decoder
    packed = pack(tgt_tokens, cfg.pad_id)
    self_mask = attention_mask(packed, packed, causal=True)
    cross_mask = attention_mask(packed, encoded.packed)
    y0 = ops.dropout(
        embed(packed.ids, dec.embedding, cfg.d_model, packed.positions), ctx.rate(cfg.dropout), ctx.rng
    )
    trace = run_stack(
        y0, dec.layers, dec.aggregator,
        lambda layer, x: layer(x, encoded.memory, self_mask, cross_mask, ctx),
    )
    top = trace.y[-1]
    if dec.top_ln is not None:
        top = layer_norm(top, dec.top_ln)
    return linear(top, dec.projection)


@dataclass
class LossResult:
    loss: Tensor
    tokens: int
    correct: int
    encoded: EncoderOutput


def sequence_loss(
    model: DlclTransformer,
    src,
    tgt_in,
    tgt_out,
    epsilon_ls: float = 0.1,
    ctx: Optional[ForwardContext] = None,
) -> LossResult:
    """Per-token mean label-smoothed loss of a padded batch"""
    ctx = ctx or ForwardContext()
    encoded = encoder_forward(model, src, ctx)
    logits = decoder_forward(model, tgt_in, encoded, ctx)
    smoothing = SmoothingConfig(epsilon_ls, model.cfg.tgt_vocab, model.cfg.pad_id)
    targets = np.asarray(tgt_out, dtype=np.int64).reshape(-1)
    loss, tokens = label_smoothed_cross_entropy(logits, targets, smoothing)
    correct, _ = token_accuracy(logits, targets, model.cfg.pad_id)
    return LossResult(loss, tokens, correct, encoded)
