"""Bidirectional image/sentence retrieval by model score.

Every (image, caption) pair gets a score: the caption's log probability
given the image, divided by the number of predicted positions so long
captions are not penalized (raw unnormalized scores are available too).
Direction "i2s" ranks all candidate captions for each image query;
"s2i" ranks all candidate images for each caption query. Ties break on
candidate id, so results are stable. Caption candidates are identified
as "<image_id>#<k>" with k the caption's position in its record.

Reported ranks are 1-based. Two summary statistics:

* recall_at_k: fraction of queries whose best-ranked correct candidate
  lands in the top k.
* median_rank: mode "per-query" averages each query's median correct
  rank over the query set; mode "best" takes the median over queries
  of the best correct rank. The two disagree whenever a query has
  several correct candidates, so reports label which mode produced a
  number rather than leaving it implicit.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import CaptionDataset
from .decode import sequence_logprob
from .model import ModelParams

DIRECTIONS = ("i2s", "s2i")
MEDIAN_MODES = ("per-query", "best")


@dataclass
class RankResult:
    """One query's full ranking and where its correct candidates landed."""

    query_id: str
    ranked_ids: list[str]
    correct_ranks: list[int]  # 1-based, ascending


def score_pair(params: ModelParams, feature: np.ndarray, caption, normalize: bool = True) -> float:
    """Model score for one (image feature, encoded caption) pair."""
    logprob = sequence_logprob(params, feature, caption)
    if not normalize:
        return logprob
    return logprob / (len(caption) - 1)


def caption_entries(dataset: CaptionDataset) -> list[tuple[str, str, list[int]]]:
    """Flat caption pool as (candidate id, owning image id, encoded caption)."""
    return [
        (f"{record.image_id}#{k}", record.image_id, caption)
        for record in dataset.records
        for k, caption in enumerate(record.captions)
    ]


def score_matrix(
    params: ModelParams, dataset: CaptionDataset, normalize: bool = True, threads: int = 1
) -> tuple[np.ndarray, list[str], list[tuple[str, str, list[int]]]]:
    """Score every image against every caption in the dataset.

    Returns (matrix, image ids, caption entries) with matrix[i, j] the
    score of caption j under image i. Rows are computed independently,
    optionally across a thread pool; assembly is by index, so the
    result does not depend on thread count.
    """
    entries = caption_entries(dataset)
    image_ids = [record.image_id for record in dataset.records]
    matrix = np.zeros((len(image_ids), len(entries)))

    def fill_row(i: int) -> None:
        feature = dataset.records[i].feature
        for j, (_, _, caption) in enumerate(entries):
            matrix[i, j] = score_pair(params, feature, caption, normalize)

    if threads > 1 and len(image_ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill_row, range(len(image_ids))))
    else:
        for i in range(len(image_ids)):
            fill_row(i)
    return matrix, image_ids, entries


def _rank(query_id: str, candidates: list[tuple[str, float]], correct: set[str]) -> RankResult:
    order = sorted(candidates, key=lambda pair: (-pair[1], pair[0]))
    ranked_ids = [cand_id for cand_id, _ in order]
    correct_ranks = sorted(rank for rank, cand_id in enumerate(ranked_ids, start=1) if cand_id in correct)
    return RankResult(query_id=query_id, ranked_ids=ranked_ids, correct_ranks=correct_ranks)


def rank_from_matrix(matrix: np.ndarray, image_ids: list[str], entries, direction: str) -> list[RankResult]:
    """Rankings for one direction out of a precomputed score matrix."""
    if direction == "i2s":
        results = []
        for i, image_id in enumerate(image_ids):
            candidates = [(entries[j][0], float(matrix[i, j])) for j in range(len(entries))]
            correct = {cand_id for cand_id, owner, _ in entries if owner == image_id}
            results.append(_rank(image_id, candidates, correct))
        return results
    if direction == "s2i":
        results = []
        for j, (cand_id, owner, _) in enumerate(entries):
            candidates = [(image_ids[i], float(matrix[i, j])) for i in range(len(image_ids))]
            results.append(_rank(cand_id, candidates, {owner}))
        return results
    raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def rank_bidirectional(
    params: ModelParams,
    dataset: CaptionDataset,
    direction: str,
    normalize: bool = True,
    threads: int = 1,
) -> list[RankResult]:
    """Rankings for one retrieval direction ("i2s" or "s2i").

    Callers needing both directions should compute `score_matrix` once
    and call `rank_from_matrix` per direction; the scores are shared.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if not dataset.records:
        raise ValueError("dataset has no records to rank")
    matrix, image_ids, entries = score_matrix(params, dataset, normalize, threads)
    return rank_from_matrix(matrix, image_ids, entries, direction)


def recall_at_k(results: list[RankResult], k: int) -> float:
    """Fraction of queries whose best correct candidate ranks in the top k."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if not results:
        raise ValueError("no rank results")
    hits = sum(1 for r in results if r.correct_ranks and r.correct_ranks[0] <= k)
    return hits / len(results)


def median_rank(results: list[RankResult], mode: str = "per-query") -> float:
    """Median-rank summary; see the module docstring for the two modes."""
    if mode not in MEDIAN_MODES:
        raise ValueError(f"mode must be one of {MEDIAN_MODES}, got {mode!r}")
    if not results:
        raise ValueError("no rank results")
    if any(not r.correct_ranks for r in results):
        bad = [r.query_id for r in results if not r.correct_ranks]
        raise ValueError(f"queries with no correct candidate: {bad[:5]}")
    if mode == "per-query":
        return float(statistics.mean(statistics.median(r.correct_ranks) for r in results))
    return float(statistics.median(r.correct_ranks[0] for r in results))
