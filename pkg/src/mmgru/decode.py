"""Greedy caption generation and sequence scoring.

Generation runs the same recurrence as training: image first, then
words, each step feeding the argmax word back in until STOP or the
length cap. Ties in the argmax resolve to the lowest index, so decoding
is deterministic. Scoring reuses the training forward pass: a
caption's log probability is the negative of its unregularized loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Vocabulary
from .errors import DataError
from .gru import stack_forward
from .model import ModelParams, embed_image, embed_word, forward


@dataclass
class DecodeConfig:
    """max_len caps emitted words (sentinels not counted); forbid_unk
    masks the unknown token out of the argmax."""

    max_len: int = 30
    forbid_unk: bool = True

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError(f"max_len must be positive, got {self.max_len}")


def generate(params: ModelParams, vocab: Vocabulary, feature: np.ndarray, config: DecodeConfig | None = None) -> list[str]:
    """Greedy caption for one image feature, START/STOP stripped.

    Runs at most max_len steps past the image, so at most max_len words
    come back; a model that never emits STOP is cut off there. A step
    whose argmax is START feeds START back in without emitting anything
    (it still consumes a step, which keeps degenerate models finite).
    """
    if len(vocab) != params.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} tokens but model expects {params.vocab_size}")
    config = config or DecodeConfig()
    v = embed_image(params, feature)
    h_prevs = [np.zeros(params.hidden) for _ in params.layers]
    hs, _ = stack_forward(params.stack, params.layers, v, h_prevs)
    index = vocab.start_id
    words: list[str] = []
    for _ in range(config.max_len):
        x = embed_word(params, index)
        hs, _ = stack_forward(params.stack, params.layers, x, hs)
        y = hs[-1] @ params.W_d + params.b_d
        if config.forbid_unk:
            y = y.copy()
            y[vocab.unk_id] = -np.inf
        index = int(np.argmax(y))
        if index == vocab.stop_id:
            break
        if index != vocab.start_id:
            words.append(vocab.tokens[index])
    return words


def sequence_logprob(params: ModelParams, feature: np.ndarray, caption) -> float:
    """Log probability of an encoded caption given an image.

    Sums log p over every predicted position (all words after START,
    STOP included); equals minus the unregularized training loss.
    """
    loss, _ = forward(params, feature, caption, l2_lambda=0.0)
    return -loss
