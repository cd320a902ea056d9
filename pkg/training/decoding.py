"""
Greedy and beam-search decoding with a length penalty
"""
import logging
from dataclasses import dataclass
from typing import Any, List, Protocol, Sequence, Tuple

import numpy as np

from .tasks import BOS_ID, EOS_ID

logger = logging.getLogger(__name__)


class Decodable(Protocol):
    def encode(self, src_ids: Sequence[int]) -> Any: ...

    def next_log_probs(self, memory: Any, prefix: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    alpha: float = 0.6
    max_len: int = 32
    bos_id: int = BOS_ID
    eos_id: int = EOS_ID

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


BEAM_PRESETS = {
    'en-de': BeamConfig(beam_size=4, alpha=0.6),
    'zh-en': BeamConfig(beam_size=6, alpha=1.0),
}


@dataclass(frozen=True)
class Hypothesis:
    tokens: Tuple[int, ...]   # generated tokens, always ending with eos
    log_prob: float
    score: float
    finished_at: int          # decoding step at which it finished
    forced: bool = False      # eos appended at max_len, not scored

    @property
    def payload(self) -> List[int]:
        return list(self.tokens[:-1])


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def score(log_prob: float, length: int, alpha: float) -> float:
    return log_prob / length_penalty(length, alpha)


def _finish(tokens: Tuple[int, ...], log_prob: float, step: int, cfg: BeamConfig, forced: bool) -> Hypothesis:
    length = len(tokens)
    if forced:
        tokens = tokens + (cfg.eos_id,)
    return Hypothesis(tokens, log_prob, score(log_prob, length, cfg.alpha), step, forced)


def _best(finished: List[Hypothesis]) -> Hypothesis:
    # highest score, then earlier finish, then lexicographic tokens
    return min(finished, key=lambda h: (-h.score, h.finished_at, h.tokens))


def _greedy(model: Decodable, memory: Any, cfg: BeamConfig) -> Hypothesis:
    tokens: Tuple[int, ...] = ()
    log_prob = 0.0
    for step in range(1, cfg.max_len + 1):
        log_probs = model.next_log_probs(memory, (cfg.bos_id,) + tokens)
        token = int(np.argmax(log_probs))
        tokens += (token,)
        log_prob += float(log_probs[token])
        if token == cfg.eos_id:
            return _finish(tokens, log_prob, step, cfg, forced=False)
    return _finish(tokens, log_prob, cfg.max_len, cfg, forced=True)


def greedy_decode(model: Decodable, src: Sequence[int], cfg: BeamConfig = BeamConfig()) -> Hypothesis:
    return _greedy(model, model.encode(src), cfg)


def beam_search_decode(model: Decodable, src: Sequence[int], cfg: BeamConfig = BeamConfig()) -> Hypothesis:
    """
    Keep the beam_size best extensions by log-probability each step; extensions
    ending in eos retire into the finished pool. Hypotheses alive at max_len are
    force-finished. The greedy path joins the finished pool, so the result never
    scores below greedy decoding. The best finished hypothesis by length-normalized
    score wins.
    """
    memory = model.encode(src)
    finished: List[Hypothesis] = [_greedy(model, memory, cfg)]
    alive: List[Tuple[Tuple[int, ...], float]] = [((), 0.0)]
    for step in range(1, cfg.max_len + 1):
        candidates = []
        for tokens, log_prob in alive:
            log_probs = model.next_log_probs(memory, (cfg.bos_id,) + tokens)
            for token, value in enumerate(log_probs):
                candidates.append((log_prob + float(value), tokens + (token,)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for log_prob, tokens in candidates[: cfg.beam_size]:
            if tokens[-1] == cfg.eos_id:
                finished.append(_finish(tokens, log_prob, step, cfg, forced=False))
            else:
                alive.append((tokens, log_prob))
        if not alive:
            break
    for tokens, log_prob in alive:
        finished.append(_finish(tokens, log_prob, cfg.max_len, cfg, forced=True))
    best = _best(finished)
    logger.debug(f"beam search kept {len(finished)} finished hypotheses; best score {best.score:.4f}")
    return best
