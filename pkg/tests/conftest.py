import numpy as np
import pytest

from database import RunRegistry, make_engine
from model import ModelConfig
from training import Batch


def tiny_config(**overrides) -> ModelConfig:
    values = dict(
        encoder_depth=2,
        decoder_depth=1,
        d_model=8,
        d_ff=16,
        heads=2,
        src_vocab=10,
        tgt_vocab=10,
        dropout=0.0,
        attention_dropout=0.0,
        relu_dropout=0.0,
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_batch():
    return Batch.from_pairs([([3, 4, 5], [3, 4, 5]), ([6, 7], [6, 7])])


@pytest.fixture
def other_batch():
    return Batch.from_pairs([([8, 9, 3, 4], [8, 9, 3, 4])])


@pytest.fixture
def registry():
    return RunRegistry(make_engine("sqlite://"), enabled=True)


@pytest.fixture
def offline_registry():
    return RunRegistry(enabled=False)


def layer_norm_reference(x, ln):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + ln.eps) * ln.gain.data + ln.bias.data


def attention_reference(q, kv, mask, params):
    """Per-head softmax attention written out with plain numpy"""
    heads = params.cfg.heads
    d_k = params.cfg.d_k
    queries = q @ params.query.weight.data + params.query.bias.data
    keys = kv @ params.key.weight.data + params.key.bias.data
    values = kv @ params.value.weight.data + params.value.bias.data
    merged = []
    for h in range(heads):
        cols = slice(h * d_k, (h + 1) * d_k)
        scores = queries[:, cols] @ keys[:, cols].T / np.sqrt(d_k)
        if mask is not None:
            scores = np.where(mask, scores, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        weights = np.exp(scores)
        weights /= weights.sum(axis=1, keepdims=True)
        merged.append(weights @ values[:, cols])
    return np.concatenate(merged, axis=1) @ params.output.weight.data + params.output.bias.data


def feed_forward_reference(x, params):
    hidden = np.maximum(x @ params.inner.weight.data + params.inner.bias.data, 0.0)
    return hidden @ params.outer.weight.data + params.outer.bias.data


def randomize_biases(module, rng):
    for p in module.parameters():
        if p.name.endswith(".bias"):
            p.data = rng.normal(size=p.shape)
