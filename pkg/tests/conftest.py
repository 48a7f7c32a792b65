"""Shared builders for toy datasets and models."""

import numpy as np
import pytest

from mmgru.dataset import CaptionDataset, CaptionRecord, build_vocab, encode_caption, normalize_text
from mmgru.gru import StackKind
from mmgru.linalg import Rng
from mmgru.model import ModelParams, TrainConfig, sgd_epoch


def make_dataset(sentences, d_img=6, feature_seed=31):
    """Dataset with one image per sentence and random features."""
    tokenized = [normalize_text(s) for s in sentences]
    vocab = build_vocab(tokenized, min_count=1)
    rng = Rng(feature_seed)
    records = []
    for i, tokens in enumerate(tokenized):
        feature = np.array([rng.next_float() * 2 - 1 for _ in range(d_img)])
        records.append(CaptionRecord(f"im{i}", feature, [encode_caption(tokens, vocab)]))
    return CaptionDataset(records=records, vocab=vocab, feature_dim=d_img), tokenized


def train_overfit(dataset, hidden=10, epochs=300, learning_rate=0.2, seed=3, stack=StackKind.SINGLE):
    """Train until the model memorizes the toy dataset."""
    cfg = TrainConfig(learning_rate=learning_rate, l2_lambda=0.0, epochs=epochs, seed=seed, hidden_size=hidden)
    rng = Rng(cfg.seed)
    params = ModelParams.init(
        rng, dataset.feature_dim, hidden, len(dataset.vocab), stack=stack, scale=cfg.init_scale
    )
    loss = None
    for _ in range(epochs):
        params, loss = sgd_epoch(params, dataset, cfg, rng)
    return params, loss


@pytest.fixture(scope="session")
def overfit_toy():
    """Two-pair memorized model with a vocabulary under ten tokens.

    Used by decoder and retrieval tests that need a model whose greedy
    captions are known exactly.
    """
    dataset, tokenized = make_dataset(["dog runs fast", "cat sits still"])
    params, loss = train_overfit(dataset)
    assert loss < 0.1, f"overfit fixture failed to converge (loss {loss})"
    return params, dataset, tokenized
