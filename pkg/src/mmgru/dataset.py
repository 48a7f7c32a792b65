"""Text normalization, vocabulary, and the two on-disk input formats.

Inputs come in two files:

* an MMFT feature file mapping image ids to fixed-size float vectors
  (binary, little-endian; layout documented at `write_features`), and
* a caption file: one JSON object per line, {"id": ..., "captions": [...]}.

`load_captions` joins the two on image id and encodes every caption as
an id sequence framed by START/STOP, which is the only caption shape
the model ever sees.
"""

from __future__ import annotations

import json
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError, FormatError, ShapeError

TOKEN_START = "<start>"
TOKEN_STOP = "<stop>"
TOKEN_UNK = "<unk>"
SENTINELS = (TOKEN_START, TOKEN_STOP, TOKEN_UNK)

_STRIP_RE = re.compile(r"[^a-z0-9\s]+")

MMFT_MAGIC = b"MMFT"
MMFT_VERSION = 1


def normalize_text(raw: str) -> list[str]:
    """Lowercase, drop non-alphanumeric characters, split on whitespace.

    Characters outside [a-z0-9] vanish rather than becoming separators:
    "rock-climbing" becomes "rockclimbing", not two words. Digits stay.
    """
    return _STRIP_RE.sub("", raw.lower()).split()


@dataclass(frozen=True)
class Vocabulary:
    """Bijection between tokens and contiguous indices.

    Indices 0..2 are always START, STOP, UNK in that order; corpus
    tokens follow. Construct via `build_vocab` or `from_tokens`.
    """

    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        tokens = tuple(tokens)
        if tokens[:3] != SENTINELS:
            raise DataError(f"vocabulary must start with {SENTINELS}, got {tokens[:3]}")
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            dupes = [t for t, n in Counter(tokens).items() if n > 1]
            raise DataError(f"duplicate tokens in vocabulary: {dupes}")
        return cls(tokens=tokens, index=index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def start_id(self) -> int:
        return 0

    @property
    def stop_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 5) -> Vocabulary:
    """Vocabulary over normalized sentences, rare words dropped.

    Words seen fewer than `min_count` times are excluded (they encode
    to UNK later). Surviving words are ordered by descending frequency,
    ties broken lexicographically, so the same corpus always produces
    the same index assignment.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be at least 1, got {min_count}")
    counts: Counter[str] = Counter()
    for sentence in corpus:
        counts.update(sentence)
    for sentinel in SENTINELS:
        if sentinel in counts:
            raise DataError(f"corpus token collides with sentinel {sentinel!r}")
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary.from_tokens(SENTINELS + tuple(kept))


def encode_caption(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    """Token ids framed by START and STOP; out-of-vocabulary maps to UNK."""
    unk = vocab.unk_id
    body = [vocab.index.get(tok, unk) for tok in tokens]
    return [vocab.start_id, *body, vocab.stop_id]


def decode_tokens(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Tokens for an id sequence, with START and STOP framing removed."""
    out = []
    for idx in ids:
        if not 0 <= idx < len(vocab):
            raise DataError(f"token id {idx} outside vocabulary of size {len(vocab)}")
        if idx in (vocab.start_id, vocab.stop_id):
            continue
        out.append(vocab.tokens[idx])
    return out


def write_features(path, features: Mapping[str, np.ndarray]) -> None:
    """Write an MMFT feature file.

    Layout (little-endian): magic "MMFT", u32 version = 1, u32 record
    count, u32 dimension; then per record a u16 byte length, the UTF-8
    image id, and dimension float32 values. Records go out in sorted id
    order so the same mapping always produces the same bytes.
    """
    ids = sorted(features)
    if not ids:
        dim = 0
    else:
        first = np.asarray(features[ids[0]])
        if first.ndim != 1:
            raise ShapeError(f"feature for {ids[0]!r} has shape {first.shape}, expected a vector")
        dim = first.shape[0]
    parts = [struct.pack("<4sIII", MMFT_MAGIC, MMFT_VERSION, len(ids), dim)]
    for image_id in ids:
        vec = np.asarray(features[image_id], dtype="<f4")
        if vec.shape != (dim,):
            raise ShapeError(f"feature for {image_id!r} has shape {vec.shape}, expected ({dim},)")
        raw_id = image_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise DataError(f"image id longer than 65535 bytes: {image_id[:32]!r}...")
        parts.append(struct.pack("<H", len(raw_id)))
        parts.append(raw_id)
        parts.append(vec.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_features(path) -> dict[str, np.ndarray]:
    """Read an MMFT feature file into {image id: float64 vector}."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, count, dim = struct.unpack_from("<4sIII", blob, 0)
    if magic != MMFT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MMFT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = 16
    record_bytes = 4 * dim
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 2 > len(blob):
            raise FormatError(f"{path}: truncated at record {len(out)}")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + id_len + record_bytes > len(blob):
            raise FormatError(f"{path}: truncated at record {len(out)}")
        image_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += record_bytes
        if image_id in out:
            raise DataError(f"{path}: duplicate image id {image_id!r}")
        out[image_id] = vec
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after last record")
    return out


def read_caption_file(path) -> list[tuple[str, list[str]]]:
    """Read a caption file: one {"id", "captions"} JSON object per line.

    Blank lines are allowed. Raises on malformed JSON, wrong field
    types, an empty caption list, or a repeated image id; errors name
    the offending line.
    """
    entries: list[tuple[str, list[str]]] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{path}: line {lineno}: expected an object")
            image_id = obj.get("id")
            captions = obj.get("captions")
            if not isinstance(image_id, str):
                raise FormatError(f"{path}: line {lineno}: 'id' must be a string")
            if not isinstance(captions, list) or not all(isinstance(c, str) for c in captions):
                raise FormatError(f"{path}: line {lineno}: 'captions' must be a list of strings")
            if not captions:
                raise DataError(f"{path}: line {lineno}: empty caption list for {image_id!r}")
            if image_id in seen:
                raise DataError(f"{path}: line {lineno}: duplicate image id {image_id!r}")
            seen.add(image_id)
            entries.append((image_id, captions))
    return entries


@dataclass
class CaptionRecord:
    """One image: its feature vector and its encoded captions."""

    image_id: str
    feature: np.ndarray
    captions: list[list[int]]


@dataclass
class CaptionDataset:
    """Joined image/caption corpus plus the vocabulary it was encoded with."""

    records: list[CaptionRecord]
    vocab: Vocabulary
    feature_dim: int

    def pairs(self) -> Iterator[tuple[np.ndarray, list[int]]]:
        """Flat (feature, encoded caption) stream over every caption."""
        for record in self.records:
            for caption in record.captions:
                yield record.feature, caption

    def num_pairs(self) -> int:
        return sum(len(record.captions) for record in self.records)


def build_vocab_from_captions(entries: Sequence[tuple[str, list[str]]], min_count: int = 5) -> Vocabulary:
    """Vocabulary over every caption in a caption-file's entries."""
    return build_vocab((normalize_text(s) for _, sentences in entries for s in sentences), min_count)


def load_captions(path, features: Mapping[str, np.ndarray], vocab: Vocabulary) -> CaptionDataset:
    """Join a caption file against loaded features and encode everything.

    Every image id in the caption file must have a feature vector;
    features without captions are silently unused. Caption order and
    image order follow the file.
    """
    entries = read_caption_file(path)
    dims = {np.asarray(vec).shape[0] for vec in features.values()}
    if len(dims) > 1:
        raise DataError(f"features disagree on dimension: {sorted(dims)}")
    records = []
    missing = []
    for image_id, sentences in entries:
        if image_id not in features:
            missing.append(image_id)
            continue
        encoded = [encode_caption(normalize_text(s), vocab) for s in sentences]
        records.append(CaptionRecord(image_id, np.asarray(features[image_id], dtype=np.float64), encoded))
    if missing:
        raise DataError(f"{path}: no feature vector for image ids {missing[:5]}" + ("..." if len(missing) > 5 else ""))
    dim = dims.pop() if dims else 0
    return CaptionDataset(records=records, vocab=vocab, feature_dim=dim)
