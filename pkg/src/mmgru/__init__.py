"""Multimodal GRU image captioning.

A self-contained captioning engine: dense float64 math on top of
numpy, a GRU with hand-derived backpropagation and two stacking
variants, per-example SGD training of an image-conditioned language
model, greedy decoding, bidirectional image/caption retrieval, and
the standard caption metrics (BLEU, METEOR, CIDEr).
"""

from .dataset import (
    CaptionDataset,
    CaptionRecord,
    Vocabulary,
    build_vocab,
    encode_caption,
    load_captions,
    load_features,
    normalize_text,
    write_features,
)
from .decode import DecodeConfig, generate, sequence_logprob
from .errors import DataError, FormatError, ShapeError
from .gru import GruParams, StackKind, gru_backward, gru_forward, param_count
from .linalg import Rng
from .metrics import MetricReport, bleu, cider, evaluate, meteor
from .model import ModelParams, TrainConfig, backward, forward, load_checkpoint, save_checkpoint, sgd_epoch
from .retrieval import RankResult, median_rank, rank_bidirectional, recall_at_k, score_pair

__version__ = "0.1.0"

__all__ = [
    "CaptionDataset",
    "CaptionRecord",
    "DataError",
    "DecodeConfig",
    "FormatError",
    "GruParams",
    "MetricReport",
    "ModelParams",
    "RankResult",
    "Rng",
    "ShapeError",
    "StackKind",
    "TrainConfig",
    "Vocabulary",
    "backward",
    "bleu",
    "build_vocab",
    "cider",
    "encode_caption",
    "evaluate",
    "forward",
    "generate",
    "gru_backward",
    "gru_forward",
    "load_captions",
    "load_checkpoint",
    "load_features",
    "median_rank",
    "meteor",
    "normalize_text",
    "param_count",
    "rank_bidirectional",
    "recall_at_k",
    "save_checkpoint",
    "score_pair",
    "sequence_logprob",
    "sgd_epoch",
    "write_features",
    "__version__",
]
