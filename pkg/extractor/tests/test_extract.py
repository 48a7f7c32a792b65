import json
import shutil
import struct

import numpy as np
import pytest
from conftest import make_images
from PIL import Image

from mmgru.dataset import load_features
from vggfeat import ExtractionJob, extract
from vggfeat.cli import main


@pytest.fixture(scope="session")
def extracted(sample_images, tmp_path_factory):
    directory, ids = sample_images
    out = tmp_path_factory.mktemp("out") / "features.mmft"
    summary = extract(ExtractionJob(images=directory, out=out))
    return out, ids, summary


class TestExtraction:
    def test_three_images_written(self, extracted):
        _, ids, summary = extracted
        assert summary.written == 3
        assert summary.skipped == []
        assert summary.used_random_weights

    def test_header_record_count(self, extracted):
        out, _, _ = extracted
        with open(out, "rb") as fh:
            magic, version, count, dim = struct.unpack("<4sIII", fh.read(16))
        assert magic == b"MMFT"
        assert version == 1
        assert count == 3
        assert dim == 4096

    def test_loads_through_engine_reader(self, extracted):
        out, ids, _ = extracted
        features = load_features(out)
        assert sorted(features) == ids
        for vec in features.values():
            assert vec.shape == (4096,)
            assert np.all(np.isfinite(vec))
            assert np.any(vec != 0.0)

    def test_distinct_images_distinct_features(self, extracted):
        out, ids, _ = extracted
        features = load_features(out)
        assert not np.array_equal(features["alpha"], features["beta"])
        assert not np.array_equal(features["beta"], features["gamma"])

    def test_reextraction_bit_identical(self, extracted, sample_images, tmp_path):
        out, _, _ = extracted
        directory, _ = sample_images
        again = tmp_path / "again.mmft"
        extract(ExtractionJob(images=directory, out=again))
        assert again.read_bytes() == out.read_bytes()

    def test_same_image_twice_identical_vectors(self, sample_images, tmp_path):
        directory, _ = sample_images
        pair_dir = tmp_path / "pair"
        pair_dir.mkdir()
        shutil.copy(directory / "alpha.png", pair_dir / "first.png")
        shutil.copy(directory / "alpha.png", pair_dir / "second.png")
        out = tmp_path / "pair.mmft"
        extract(ExtractionJob(images=pair_dir, out=out))
        features = load_features(out)
        assert np.array_equal(features["first"], features["second"])

    def test_unreadable_file_skipped_with_count(self, tmp_path):
        directory = tmp_path / "mixed"
        make_images(directory)
        (directory / "broken.png").write_bytes(b"this is not an image")
        out = tmp_path / "mixed.mmft"
        summary = extract(ExtractionJob(images=directory, out=out))
        assert summary.written == 3
        assert len(summary.skipped) == 1
        assert "broken.png" in summary.skipped[0]
        assert sorted(load_features(out)) == ["alpha", "beta", "gamma"]

    def test_duplicate_stem_skipped(self, tmp_path):
        directory = tmp_path / "dup"
        directory.mkdir()
        img = Image.fromarray(np.full((10, 10, 3), 99, dtype=np.uint8))
        img.save(directory / "a.jpeg")
        img.save(directory / "a.png")
        out = tmp_path / "dup.mmft"
        summary = extract(ExtractionJob(images=directory, out=out))
        assert summary.written == 1
        assert len(summary.skipped) == 1
        assert "duplicate" in summary.skipped[0]
        assert sorted(load_features(out)) == ["a"]

    def test_empty_directory_writes_valid_empty_file(self, tmp_path):
        directory = tmp_path / "none"
        directory.mkdir()
        out = tmp_path / "empty.mmft"
        summary = extract(ExtractionJob(images=directory, out=out))
        assert summary.written == 0
        assert load_features(out) == {}

    def test_missing_directory_raises(self, tmp_path):
        with pytest.raises(NotADirectoryError):
            extract(ExtractionJob(images=tmp_path / "ghost", out=tmp_path / "x.mmft"))

    def test_batch_size_does_not_change_values(self, sample_images, tmp_path):
        directory, _ = sample_images
        one = tmp_path / "b1.mmft"
        big = tmp_path / "b8.mmft"
        extract(ExtractionJob(images=directory, out=one, batch_size=1))
        extract(ExtractionJob(images=directory, out=big, batch_size=8))
        a, b = load_features(one), load_features(big)
        for image_id in a:
            assert np.allclose(a[image_id], b[image_id], rtol=0, atol=1e-5)

    def test_bad_batch_size_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            ExtractionJob(images=tmp_path, out=tmp_path / "x.mmft", batch_size=0)


class TestCli:
    def test_success_summary_and_warning(self, sample_images, tmp_path, capsys):
        directory, _ = sample_images
        out = tmp_path / "cli.mmft"
        code = main(["--images", str(directory), "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        payload = json.loads(captured.out)
        assert payload == {
            "out": str(out),
            "written": 3,
            "skipped": 0,
            "random_weights": True,
        }
        assert "seeded random weights" in captured.err
        assert load_features(out)["alpha"].shape == (4096,)

    def test_device_hint_falls_back(self, sample_images, tmp_path, capsys):
        directory, _ = sample_images
        pair_dir = tmp_path / "one"
        pair_dir.mkdir()
        shutil.copy(directory / "gamma.png", pair_dir / "gamma.png")
        out = tmp_path / "cuda.mmft"
        code = main(["--images", str(pair_dir), "--out", str(out), "--device", "cuda"])
        captured = capsys.readouterr()
        assert code == 0
        assert "falling back to cpu" in captured.err
        assert load_features(out)["gamma"].shape == (4096,)

    def test_missing_directory_exit_code(self, tmp_path, capsys):
        code = main(["--images", str(tmp_path / "ghost"), "--out", str(tmp_path / "x.mmft")])
        captured = capsys.readouterr()
        assert code == 1
        assert "error:" in captured.err

    def test_bad_weights_path_exit_code(self, sample_images, tmp_path, capsys):
        directory, _ = sample_images
        code = main(
            ["--images", str(directory), "--out", str(tmp_path / "x.mmft"),
             "--weights", str(tmp_path / "no_such.pth")]
        )
        captured = capsys.readouterr()
        assert code == 1
        assert "error:" in captured.err

    def test_missing_flags_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["--images", "somewhere"])
        assert info.value.code == 2
