"""The multimodal caption model: training forward/backward, SGD, checkpoints.

The model conditions a GRU stack on an image once, then predicts each
caption word from the previous one:

    v = feature W_I + b_I          (image embedding, fed at the first step)
    x_t = W_s[w_t]                 (word embedding = row lookup)
    h_t = stack(x_t, h_{t-1})      (hidden starts at zero, sees v first)
    y_t = h_t W_d + b_d            (logits over the vocabulary)

The training loss for one (feature, caption) pair is the negative log
likelihood of every word after START (STOP included), plus an L2 term
over weight matrices; biases are not regularized.

Checkpoints are a single binary file (layout at `save_checkpoint`) that
also carries the vocabulary, so a decoder needs nothing else.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .dataset import CaptionDataset, Vocabulary
from .errors import DataError, FormatError, ShapeError
from .gru import GruCache, GruParams, StackKind, layers_for, stack_backward, stack_forward
from .linalg import Rng, init_uniform, log_softmax

MGRU_MAGIC = b"MGRU"
MGRU_VERSION = 1

_KIND_CODES = {StackKind.SINGLE: 0, StackKind.CONVENTIONAL: 1, StackKind.FEEDBACK: 2}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}


@dataclass
class TrainConfig:
    """Hyperparameters for SGD training.

    A learning rate of exactly 0 is permitted (it makes an epoch a pure
    evaluation pass, useful for measuring loss without touching the
    parameters).
    """

    learning_rate: float = 1e-2
    l2_lambda: float = 1e-4
    epochs: int = 1
    seed: int = 0
    hidden_size: int = 256
    init_scale: float = 0.1
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.l2_lambda < 0:
            raise ValueError(f"l2_lambda must be nonnegative, got {self.l2_lambda}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.hidden_size < 1:
            raise ValueError(f"hidden_size must be positive, got {self.hidden_size}")
        if self.init_scale <= 0:
            raise ValueError(f"init_scale must be positive, got {self.init_scale}")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError(f"max_grad_norm must be positive, got {self.max_grad_norm}")


@dataclass
class ModelParams:
    """All trainable tensors plus the stack kind they are wired for."""

    W_I: np.ndarray
    b_I: np.ndarray
    W_s: np.ndarray
    layers: list[GruParams]
    W_d: np.ndarray
    b_d: np.ndarray
    stack: StackKind

    def __post_init__(self):
        h = self.W_I.shape[1]
        n0 = self.W_s.shape[0]
        if self.b_I.shape != (h,):
            raise ShapeError(f"b_I has shape {self.b_I.shape}, expected ({h},)")
        if self.W_s.shape[1] != h:
            raise ShapeError(f"W_s has shape {self.W_s.shape}, expected (*, {h})")
        if self.W_d.shape != (h, n0):
            raise ShapeError(f"W_d has shape {self.W_d.shape}, expected ({h}, {n0})")
        if self.b_d.shape != (n0,):
            raise ShapeError(f"b_d has shape {self.b_d.shape}, expected ({n0},)")
        for i, layer in enumerate(self.layers):
            if layer.d_in != h or layer.hidden != h:
                raise ShapeError(f"layer {i} is {layer.d_in}x{layer.hidden}, expected {h}x{h}")
        want = 1 if self.stack == StackKind.SINGLE else 2
        if len(self.layers) != want:
            raise ValueError(f"{self.stack.value} stack needs {want} layer(s), got {len(self.layers)}")

    @property
    def d_img(self) -> int:
        return self.W_I.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_I.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.W_s.shape[0]

    @classmethod
    def init(
        cls,
        rng: Rng,
        d_img: int,
        hidden: int,
        vocab_size: int,
        stack: StackKind = StackKind.SINGLE,
        scale: float = 0.1,
    ) -> "ModelParams":
        return cls(
            W_I=init_uniform(rng, d_img, hidden, scale),
            b_I=np.zeros(hidden),
            W_s=init_uniform(rng, vocab_size, hidden, scale),
            layers=layers_for(stack, rng, hidden, hidden, scale),
            W_d=init_uniform(rng, hidden, vocab_size, scale),
            b_d=np.zeros(vocab_size),
            stack=stack,
        )

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "W_I", self.W_I
        yield "b_I", self.b_I
        yield "W_s", self.W_s
        for i, layer in enumerate(self.layers):
            for name, tensor in layer.named_tensors():
                yield f"gru{i}.{name}", tensor
        yield "W_d", self.W_d
        yield "b_d", self.b_d

    def named_weights(self) -> Iterator[tuple[str, np.ndarray]]:
        """Tensors that carry the L2 penalty: every weight matrix, no biases."""
        yield "W_I", self.W_I
        yield "W_s", self.W_s
        for i, layer in enumerate(self.layers):
            for name, tensor in layer.named_weights():
                yield f"gru{i}.{name}", tensor
        yield "W_d", self.W_d

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            W_I=np.zeros_like(self.W_I),
            b_I=np.zeros_like(self.b_I),
            W_s=np.zeros_like(self.W_s),
            layers=[layer.zeros_like() for layer in self.layers],
            W_d=np.zeros_like(self.W_d),
            b_d=np.zeros_like(self.b_d),
            stack=self.stack,
        )


@dataclass
class StepTrace:
    """Everything the backward pass needs from one forward pass.

    caches[0] is the image step; caches[t + 1] is the step that read
    caption[t] and predicted caption[t + 1]. probs[t] is the softmax
    over that prediction.
    """

    feature: np.ndarray
    caption: list[int]
    caches: list[list[GruCache]]
    probs: list[np.ndarray]
    data_loss: float
    l2_lambda: float = 0.0
    log_probs: list[float] = field(default_factory=list)


def embed_image(params: ModelParams, feature: np.ndarray) -> np.ndarray:
    """Project an image feature into the hidden space: v = feature W_I + b_I."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (params.d_img,):
        raise ShapeError(f"feature has shape {feature.shape}, expected ({params.d_img},)")
    return feature @ params.W_I + params.b_I


def embed_word(params: ModelParams, index: int) -> np.ndarray:
    """Word embedding: row `index` of W_s.

    Equivalent to multiplying a one-hot row vector into W_s, done as a
    lookup. Returns a view; callers must not write through it.
    """
    if not 0 <= index < params.vocab_size:
        raise DataError(f"word id {index} outside vocabulary of size {params.vocab_size}")
    return params.W_s[index]


def regularizer(params: ModelParams, l2_lambda: float) -> float:
    """L2 penalty over weight matrices (biases excluded)."""
    if l2_lambda == 0.0:
        return 0.0
    return l2_lambda * sum(float(np.sum(w * w)) for _, w in params.named_weights())


def _check_caption(params: ModelParams, caption) -> list[int]:
    caption = [int(w) for w in caption]
    if len(caption) < 2:
        raise DataError(f"caption must hold at least START and STOP, got length {len(caption)}")
    for w in caption:
        if not 0 <= w < params.vocab_size:
            raise DataError(f"word id {w} outside vocabulary of size {params.vocab_size}")
    # Sentinel indices are fixed by Vocabulary construction: START=0, STOP=1.
    if caption[0] != 0 or caption[-1] != 1:
        raise DataError(f"caption must begin with START (0) and end with STOP (1), got {caption[0]}..{caption[-1]}")
    return caption


def forward(params: ModelParams, feature: np.ndarray, caption, l2_lambda: float = 0.0) -> tuple[float, StepTrace]:
    """Loss and trace for one (feature, encoded caption) pair.

    The image embedding is consumed exactly once, before any word, with
    the hidden state at zero. The loss sums -log p over every position
    after START, STOP included, plus the L2 term.
    """
    caption = _check_caption(params, caption)
    v = embed_image(params, feature)
    h_prevs = [np.zeros(params.hidden) for _ in params.layers]
    hs, cache = stack_forward(params.stack, params.layers, v, h_prevs)
    caches = [cache]
    probs: list[np.ndarray] = []
    log_probs: list[float] = []
    data_loss = 0.0
    for t in range(len(caption) - 1):
        x = embed_word(params, caption[t])
        hs, cache = stack_forward(params.stack, params.layers, x, hs)
        caches.append(cache)
        y = hs[-1] @ params.W_d + params.b_d
        logp = log_softmax(y)
        log_probs.append(float(logp[caption[t + 1]]))
        probs.append(np.exp(logp))
        data_loss -= logp[caption[t + 1]]
    data_loss = float(data_loss)
    trace = StepTrace(
        feature=np.asarray(feature, dtype=np.float64),
        caption=caption,
        caches=caches,
        probs=probs,
        data_loss=data_loss,
        l2_lambda=l2_lambda,
        log_probs=log_probs,
    )
    return data_loss + regularizer(params, l2_lambda), trace


def backward(params: ModelParams, trace: StepTrace) -> ModelParams:
    """Analytic gradients of the loss `forward` returned, same trace.

    Walks the steps in reverse, carrying per-layer recurrent gradients,
    and finishes with the image step so W_I and b_I pick up everything
    that flowed back through the first hidden state.
    """
    grads = params.zeros_like()
    n_layers = len(params.layers)
    dh_prevs = [np.zeros(params.hidden) for _ in range(n_layers)]
    caption = trace.caption
    for t in range(len(caption) - 2, -1, -1):
        p = trace.probs[t]
        dy = p.copy()
        dy[caption[t + 1]] -= 1.0
        h_top = trace.caches[t + 1][-1].h
        grads.W_d += np.outer(h_top, dy)
        grads.b_d += dy
        dhs = [g.copy() for g in dh_prevs]
        dhs[-1] += dy @ params.W_d.T
        layer_grads, dx, dh_prevs = stack_backward(params.stack, params.layers, trace.caches[t + 1], dhs)
        for acc, g in zip(grads.layers, layer_grads):
            for (_, a), (_, b) in zip(acc.named_tensors(), g.named_tensors()):
                a += b
        grads.W_s[caption[t]] += dx
    layer_grads, dv, _ = stack_backward(params.stack, params.layers, trace.caches[0], dh_prevs)
    for acc, g in zip(grads.layers, layer_grads):
        for (_, a), (_, b) in zip(acc.named_tensors(), g.named_tensors()):
            a += b
    grads.W_I += np.outer(trace.feature, dv)
    grads.b_I += dv
    if trace.l2_lambda:
        for (_, gw), (_, w) in zip(grads.named_weights(), params.named_weights()):
            gw += 2.0 * trace.l2_lambda * w
    return grads


def _clip_global_norm(grads: ModelParams, max_norm: float) -> None:
    total = sum(float(np.sum(g * g)) for _, g in grads.named_tensors())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for _, g in grads.named_tensors():
            g *= scale


def sgd_epoch(
    params: ModelParams, dataset: CaptionDataset, config: TrainConfig, rng: Rng
) -> tuple[ModelParams, float]:
    """One pass of per-example SGD over every (feature, caption) pair.

    Pairs are visited in an order shuffled by `rng`, one update per
    pair (batch size 1), parameters modified in place (and returned).
    The second return value is the mean per-example data loss, each
    example measured at the parameter values it was trained from; the
    L2 term drives updates but is not part of the reported number.
    """
    pairs = list(dataset.pairs())
    if not pairs:
        raise ValueError("dataset has no (feature, caption) pairs")
    order = list(range(len(pairs)))
    rng.shuffle(order)
    total = 0.0
    for i in order:
        feature, caption = pairs[i]
        _, trace = forward(params, feature, caption, config.l2_lambda)
        total += trace.data_loss
        grads = backward(params, trace)
        if config.max_grad_norm is not None:
            _clip_global_norm(grads, config.max_grad_norm)
        if config.learning_rate != 0.0:
            for (_, p), (_, g) in zip(params.named_tensors(), grads.named_tensors()):
                p -= config.learning_rate * g
    return params, total / len(pairs)


def _tensor_block(name: str, tensor: np.ndarray) -> bytes:
    arr = np.asarray(tensor)
    rows, cols = (1, arr.shape[0]) if arr.ndim == 1 else arr.shape
    raw_name = name.encode("utf-8")
    return struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<II", rows, cols) + arr.astype("<f4").tobytes()


def save_checkpoint(params: ModelParams, vocab: Vocabulary, path) -> None:
    """Write model plus vocabulary as one little-endian binary file.

    Layout: magic "MGRU", u32 version = 1, u32 d_img, u32 hidden,
    u32 vocab size, u8 stack kind (0 single, 1 conventional,
    2 feedback), u32 layer count; the vocabulary as u32 count then
    length-prefixed (u16) UTF-8 tokens in index order; one block per
    tensor (u16 name length, name, u32 rows, u32 cols, row-major
    float32 values) in a fixed order; u32 CRC-32 of all preceding
    bytes. Tensors are stored as float32, so loading returns the
    float32-rounded values; a second save of what load returned is
    byte-identical to the first file.
    """
    if len(vocab) != params.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} tokens but model expects {params.vocab_size}")
    parts = [
        struct.pack(
            "<4sIIIIBI",
            MGRU_MAGIC,
            MGRU_VERSION,
            params.d_img,
            params.hidden,
            params.vocab_size,
            _KIND_CODES[params.stack],
            len(params.layers),
        ),
        struct.pack("<I", len(vocab)),
    ]
    for token in vocab.tokens:
        raw = token.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    for name, tensor in params.named_tensors():
        parts.append(_tensor_block(name, tensor))
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.blob):
            raise FormatError(f"{self.path}: truncated at byte {self.offset}")
        out = struct.unpack_from(fmt, self.blob, self.offset)
        self.offset += size
        return out

    def take_bytes(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise FormatError(f"{self.path}: truncated at byte {self.offset}")
        out = self.blob[self.offset : self.offset + size]
        self.offset += size
        return out


def load_checkpoint(path) -> tuple[ModelParams, Vocabulary]:
    """Read a file written by `save_checkpoint`, verifying the CRC."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise FormatError(f"{path}: too short to be a checkpoint")
    body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != stored_crc:
        raise FormatError(f"{path}: checksum mismatch")
    r = _Reader(body, path)
    magic, version, d_img, hidden, n0, kind_code, n_layers = r.take("<4sIIIIBI")
    if magic != MGRU_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MGRU_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"{path}: unknown stack kind code {kind_code}")
    stack = _CODE_KINDS[kind_code]
    want_layers = 1 if stack == StackKind.SINGLE else 2
    if n_layers != want_layers:
        raise FormatError(f"{path}: {stack.value} stack with {n_layers} layers")
    (token_count,) = r.take("<I")
    if token_count != n0:
        raise FormatError(f"{path}: header says {n0} tokens, vocabulary block has {token_count}")
    tokens = []
    for _ in range(token_count):
        (tok_len,) = r.take("<H")
        tokens.append(r.take_bytes(tok_len).decode("utf-8"))
    try:
        vocab = Vocabulary.from_tokens(tokens)
    except (DataError, IndexError) as exc:
        raise FormatError(f"{path}: invalid vocabulary block: {exc}") from exc

    tensors: dict[str, np.ndarray] = {}
    while r.offset < len(body):
        (name_len,) = r.take("<H")
        name = r.take_bytes(name_len).decode("utf-8")
        rows, cols = r.take("<II")
        raw = r.take_bytes(4 * rows * cols)
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)

    def grab(name: str, shape: tuple[int, ...]) -> np.ndarray:
        if name not in tensors:
            raise FormatError(f"{path}: missing tensor {name!r}")
        arr = tensors.pop(name)
        flat_want = int(np.prod(shape))
        if arr.size != flat_want:
            raise FormatError(f"{path}: tensor {name!r} has {arr.size} values, expected {flat_want}")
        return arr.reshape(shape)

    layers = []
    for i in range(n_layers):
        fields = {}
        for name in GruParams._NAMES:
            shape = (hidden,) if name.startswith("b") else (hidden, hidden)
            fields[name] = grab(f"gru{i}.{name}", shape)
        layers.append(GruParams(**fields))
    params = ModelParams(
        W_I=grab("W_I", (d_img, hidden)),
        b_I=grab("b_I", (hidden,)),
        W_s=grab("W_s", (n0, hidden)),
        layers=layers,
        W_d=grab("W_d", (hidden, n0)),
        b_d=grab("b_d", (n0,)),
        stack=stack,
    )
    if tensors:
        raise FormatError(f"{path}: unexpected tensors {sorted(tensors)}")
    return params, vocab
