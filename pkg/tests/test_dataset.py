"""Text normalization, vocabulary, and the two input file formats."""

import json
import struct

import numpy as np
import pytest

from mmgru.dataset import (
    MMFT_MAGIC,
    SENTINELS,
    Vocabulary,
    build_vocab,
    build_vocab_from_captions,
    decode_tokens,
    encode_caption,
    load_captions,
    load_features,
    normalize_text,
    read_caption_file,
    write_features,
)
from mmgru.errors import DataError, FormatError, ShapeError


class TestNormalizeText:
    def test_punctuation_and_case(self):
        assert normalize_text("A Dog runs!") == ["a", "dog", "runs"]

    def test_empty(self):
        assert normalize_text("") == []

    def test_punctuation_inside_word(self):
        assert normalize_text("it's 2 cats.") == ["its", "2", "cats"]

    def test_hyphen_joins(self):
        # removed characters vanish instead of splitting the word
        assert normalize_text("rock-climbing dog") == ["rockclimbing", "dog"]

    def test_whitespace_only(self):
        assert normalize_text(" \t\n ") == []


class TestBuildVocab:
    def test_no_filtering(self):
        vocab = build_vocab([["a", "a", "b"]], min_count=1)
        assert vocab.tokens == (*SENTINELS, "a", "b")

    def test_min_count_filters(self):
        vocab = build_vocab([["a", "a", "b"]], min_count=2)
        assert "b" not in vocab
        assert "a" in vocab

    def test_default_min_count_is_five(self):
        corpus = [["common"] * 5 + ["rare"] * 4]
        vocab = build_vocab(corpus)
        assert "common" in vocab
        assert "rare" not in vocab

    def test_ordering_frequency_then_lex(self):
        vocab = build_vocab([["b", "b", "c", "c", "a"]], min_count=1)
        # b and c tie at 2 (lexicographic), a trails at 1
        assert vocab.tokens[3:] == ("b", "c", "a")

    def test_permutation_invariance(self):
        corpus_a = [["x", "y"], ["y", "z"], ["z", "z"]]
        corpus_b = [["z", "z"], ["y", "z"], ["x", "y"]]
        assert build_vocab(corpus_a, 1) == build_vocab(corpus_b, 1)

    def test_min_count_zero_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([["a"]], min_count=0)

    def test_sentinel_indices(self):
        vocab = build_vocab([["a"]], min_count=1)
        assert (vocab.start_id, vocab.stop_id, vocab.unk_id) == (0, 1, 2)
        assert len({vocab.start_id, vocab.stop_id, vocab.unk_id}) == 3

    def test_from_tokens_requires_sentinels(self):
        with pytest.raises(DataError):
            Vocabulary.from_tokens(("a", "b", "c"))

    def test_from_tokens_rejects_duplicates(self):
        with pytest.raises(DataError):
            Vocabulary.from_tokens((*SENTINELS, "a", "a"))


class TestEncodeDecode:
    @pytest.fixture()
    def vocab(self):
        return build_vocab([["a", "dog", "runs"]], min_count=1)

    def test_empty_caption(self, vocab):
        assert encode_caption([], vocab) == [vocab.start_id, vocab.stop_id]

    def test_known_tokens(self, vocab):
        out = encode_caption(["a", "dog"], vocab)
        assert out == [vocab.start_id, vocab.index["a"], vocab.index["dog"], vocab.stop_id]

    def test_oov_maps_to_unk(self, vocab):
        assert encode_caption(["zyzzyva"], vocab) == [vocab.start_id, vocab.unk_id, vocab.stop_id]

    def test_decode_inverts_encode(self, vocab):
        tokens = ["a", "dog", "runs"]
        assert decode_tokens(encode_caption(tokens, vocab), vocab) == tokens

    def test_decode_rejects_out_of_range(self, vocab):
        with pytest.raises(DataError):
            decode_tokens([0, 99, 1], vocab)

    def test_framing_always_present(self, vocab):
        for tokens in ([], ["a"], ["dog", "runs", "zyzzyva"]):
            encoded = encode_caption(tokens, vocab)
            assert encoded[0] == vocab.start_id
            assert encoded[-1] == vocab.stop_id


class TestFeatureFile:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        # stored as float32; draw f32-representable values so the
        # round trip is exact
        features = {
            f"img{i}": rng.normal(size=8).astype(np.float32).astype(np.float64) for i in range(5)
        }
        path = tmp_path / "f.mmft"
        write_features(path, features)
        loaded = load_features(path)
        assert set(loaded) == set(features)
        for key in features:
            assert np.array_equal(loaded[key], features[key])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.mmft"
        write_features(path, {})
        assert load_features(path) == {}

    def test_dim_4096_accepted(self, tmp_path):
        path = tmp_path / "big.mmft"
        write_features(path, {"a": np.zeros(4096, dtype=np.float32)})
        loaded = load_features(path)
        assert loaded["a"].shape == (4096,)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mmft"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(FormatError):
            load_features(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v9.mmft"
        path.write_bytes(struct.pack("<4sIII", MMFT_MAGIC, 9, 0, 0))
        with pytest.raises(FormatError):
            load_features(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.mmft"
        write_features(path, {"a": np.ones(4, dtype=np.float32)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(FormatError, match="truncated"):
            load_features(path)

    def test_duplicate_id(self, tmp_path):
        record = struct.pack("<H", 1) + b"a" + np.ones(2, dtype="<f4").tobytes()
        blob = struct.pack("<4sIII", MMFT_MAGIC, 1, 2, 2) + record + record
        path = tmp_path / "dup.mmft"
        path.write_bytes(blob)
        with pytest.raises(DataError):
            load_features(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "trail.mmft"
        write_features(path, {"a": np.ones(2, dtype=np.float32)})
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError):
            load_features(path)

    def test_mixed_dims_rejected_on_write(self, tmp_path):
        with pytest.raises(ShapeError):
            write_features(tmp_path / "x.mmft", {"a": np.zeros(3), "b": np.zeros(4)})

    def test_writer_sorts_ids(self, tmp_path):
        p1, p2 = tmp_path / "a.mmft", tmp_path / "b.mmft"
        v = {"z": np.ones(2, dtype=np.float32), "a": np.zeros(2, dtype=np.float32)}
        write_features(p1, v)
        write_features(p2, dict(reversed(list(v.items()))))
        assert p1.read_bytes() == p2.read_bytes()


class TestCaptionFile:
    def _write(self, tmp_path, lines):
        path = tmp_path / "caps.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def test_reads_entries(self, tmp_path):
        path = self._write(
            tmp_path,
            [
                json.dumps({"id": "a", "captions": ["A dog.", "The dog!"]}),
                "",
                json.dumps({"id": "b", "captions": ["cat"]}),
            ],
        )
        entries = read_caption_file(path)
        assert [e[0] for e in entries] == ["a", "b"]
        assert entries[0][1] == ["A dog.", "The dog!"]

    def test_invalid_json_names_line(self, tmp_path):
        path = self._write(tmp_path, [json.dumps({"id": "a", "captions": ["x"]}), "{oops"])
        with pytest.raises(FormatError, match="line 2"):
            read_caption_file(path)

    def test_wrong_types(self, tmp_path):
        path = self._write(tmp_path, [json.dumps({"id": 3, "captions": ["x"]})])
        with pytest.raises(FormatError):
            read_caption_file(path)
        path = self._write(tmp_path, [json.dumps({"id": "a", "captions": "x"})])
        with pytest.raises(FormatError):
            read_caption_file(path)

    def test_empty_caption_list(self, tmp_path):
        path = self._write(tmp_path, [json.dumps({"id": "a", "captions": []})])
        with pytest.raises(DataError):
            read_caption_file(path)

    def test_duplicate_id(self, tmp_path):
        line = json.dumps({"id": "a", "captions": ["x"]})
        path = self._write(tmp_path, [line, line])
        with pytest.raises(DataError):
            read_caption_file(path)


class TestLoadCaptions:
    def test_join_and_encode(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        sentences = ["A dog runs.", "The dog runs!", "Dog runs fast.", "A dog.", "Dog!"]
        path.write_text(json.dumps({"id": "a", "captions": sentences}) + "\n", encoding="utf-8")
        entries = read_caption_file(path)
        vocab = build_vocab_from_captions(entries, min_count=1)
        features = {"a": np.arange(4, dtype=np.float64)}
        data = load_captions(path, features, vocab)
        assert len(data.records) == 1
        assert len(data.records[0].captions) == 5
        assert data.feature_dim == 4
        for encoded in data.records[0].captions:
            assert encoded[0] == vocab.start_id
            assert encoded[-1] == vocab.stop_id
            assert all(w < len(vocab) for w in encoded)

    def test_missing_feature_lists_id(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        path.write_text(json.dumps({"id": "ghost", "captions": ["x y z"]}) + "\n", encoding="utf-8")
        vocab = build_vocab([["x", "y", "z"]], min_count=1)
        with pytest.raises(DataError, match="ghost"):
            load_captions(path, {"other": np.zeros(3)}, vocab)

    def test_unused_features_allowed(self, tmp_path):
        path = tmp_path / "caps.jsonl"
        path.write_text(json.dumps({"id": "a", "captions": ["x"]}) + "\n", encoding="utf-8")
        vocab = build_vocab([["x"]], min_count=1)
        data = load_captions(path, {"a": np.zeros(3), "spare": np.zeros(3)}, vocab)
        assert [r.image_id for r in data.records] == ["a"]
