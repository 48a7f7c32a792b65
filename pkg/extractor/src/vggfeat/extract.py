"""Run VGG-16 over a directory of images and write fc7 activations.

The output is a 4096-dim vector per image in the MMFT binary format the
captioning engine reads, one record per image, id = file stem, sorted.
Preprocessing is fixed: RGB, bilinear resize straight to 224x224, scale
to [0,1], ImageNet mean/std normalization. Features come from the second
fully connected layer after its ReLU, with dropout off (eval mode), so
the same file always maps to the same vector.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torchvision
from PIL import Image, UnidentifiedImageError

from mmgru.dataset import write_features

FEATURE_DIM = 4096

# stock ImageNet channel statistics
_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
_STD = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)


@dataclass
class ExtractionJob:
    """One extraction run: where the images are and where features go."""

    images: Path
    out: Path
    batch_size: int = 8
    device: str = "cpu"
    weights: Path | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        self.images = Path(self.images)
        self.out = Path(self.out)
        if self.weights is not None:
            self.weights = Path(self.weights)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class ExtractionSummary:
    written: int
    skipped: list[str] = field(default_factory=list)
    used_random_weights: bool = False


def _resolve_device(hint: str) -> tuple[torch.device, str | None]:
    """Map a device hint to something usable, with a note if it changed."""
    if hint.startswith("cuda") and not torch.cuda.is_available():
        return torch.device("cpu"), f"device {hint!r} unavailable, falling back to cpu"
    return torch.device(hint), None


def build_model(weights: Path | None = None, seed: int = 0, device: torch.device | None = None) -> torch.nn.Module:
    """Construct VGG-16 truncated after the second classifier ReLU.

    With a weights path, loads that state dict (a plain torchvision vgg16
    checkpoint). Without one, the network keeps its randomly initialized
    weights, made reproducible by seeding; outputs are then deterministic
    placeholders, not ImageNet features.
    """
    torch.manual_seed(seed)
    model = torchvision.models.vgg16(weights=None)
    if weights is not None:
        state = torch.load(weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    # classifier[:5] = fc6, ReLU, dropout, fc7, ReLU; eval() turns dropout off
    model.classifier = model.classifier[:5]
    model.eval()
    if device is not None:
        model.to(device)
    return model


def prepare_image(image: Image.Image) -> torch.Tensor:
    """Fixed pipeline: RGB, 224x224 bilinear, [0,1], ImageNet normalize."""
    rgb = image.convert("RGB").resize((224, 224), Image.Resampling.BILINEAR)
    array = np.asarray(rgb, dtype=np.float32) / 255.0
    tensor = torch.from_numpy(array).permute(2, 0, 1)
    return (tensor - _MEAN) / _STD


def iter_image_files(directory: Path) -> list[Path]:
    """Regular files in name order; every file is a candidate image."""
    return sorted(p for p in directory.iterdir() if p.is_file())


def extract(job: ExtractionJob) -> ExtractionSummary:
    """Extract features for every readable image under job.images.

    Unreadable files and duplicate stems are skipped and reported in the
    summary, never fatal. An empty directory still writes a valid, empty
    feature file. Records land in sorted id order.
    """
    if not job.images.is_dir():
        raise NotADirectoryError(f"{job.images} is not a directory")
    device, note = _resolve_device(job.device)
    skipped: list[str] = []
    if note:
        print(f"warning: {note}", file=sys.stderr)

    pending: list[tuple[str, Path]] = []
    seen: set[str] = set()
    for path in iter_image_files(job.images):
        if path.stem in seen:
            skipped.append(f"{path.name}: duplicate id {path.stem!r}")
            continue
        seen.add(path.stem)
        pending.append((path.stem, path))

    if not pending:
        write_features(job.out, {})
        return ExtractionSummary(written=0, skipped=skipped, used_random_weights=job.weights is None)

    model = build_model(job.weights, seed=job.seed, device=device)
    features: dict[str, np.ndarray] = {}
    batch_ids: list[str] = []
    batch_tensors: list[torch.Tensor] = []

    def flush() -> None:
        if not batch_ids:
            return
        stacked = torch.stack(batch_tensors).to(device)
        with torch.inference_mode():
            out = model(stacked)
        for image_id, row in zip(batch_ids, out.cpu().numpy()):
            features[image_id] = row
        batch_ids.clear()
        batch_tensors.clear()

    for image_id, path in pending:
        try:
            with Image.open(path) as img:
                tensor = prepare_image(img)
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            skipped.append(f"{path.name}: {exc}")
            continue
        batch_ids.append(image_id)
        batch_tensors.append(tensor)
        if len(batch_ids) >= job.batch_size:
            flush()
    flush()

    write_features(job.out, features)
    return ExtractionSummary(
        written=len(features),
        skipped=skipped,
        used_random_weights=job.weights is None,
    )
