"""VGG-16 feature extraction into the MMFT feature format."""

from .extract import ExtractionJob, ExtractionSummary, build_model, extract

__all__ = ["ExtractionJob", "ExtractionSummary", "build_model", "extract"]
