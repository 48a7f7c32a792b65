"""Caption quality metrics: BLEU, METEOR (exact match), CIDEr.

All three take tokenized sentences: a hypothesis per image and one or
more references per image. Tokenization is the caller's business;
`read_pairs_file` applies the same normalization the training corpus
gets.

BLEU is corpus-level: clipped n-gram counts are pooled over the corpus
before dividing, and the brevity penalty compares total hypothesis
length against the sum of closest-reference lengths. B-N multiplies
the geometric mean of orders 1..N by that penalty; if any pooled
precision is zero the geometric mean is zero, and a flag says so
rather than letting a lone zero silently zero the score.

METEOR here is the exact-match variant: unigram alignment maximizing
the number of matches, then minimizing the number of contiguous chunks
among maximum alignments. Small sentences get an exhaustive search
over maximum alignments; past a size budget a greedy sweep stands in
and the result is flagged. The sentence score combines harmonic-mean
F (recall weighted 9:1) with a fragmentation penalty 0.5*(chunks/m)^3;
a hypothesis is scored against each reference and keeps the best. The
corpus number is the mean sentence score.

CIDEr turns every sentence into tf-idf vectors over n-grams (n = 1..4,
raw counts, idf from reference sets with document frequency clamped to
at least 1) and averages cosine similarity against each reference,
then over n, scaled by 10; the corpus number is the mean over images.
It needs at least two images, otherwise every idf is log(1) = 0.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import chain, combinations, permutations, product

from .dataset import normalize_text
from .errors import DataError, FormatError

_METEOR_EXHAUSTIVE_MAX_LEN = 20
_METEOR_BUDGET = 100_000

Tokens = list[str]


def ngram_counts(tokens: Tokens, n: int) -> Counter:
    """Counts of length-n windows; empty when the sentence is shorter than n."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_matches(hyp: Tokens, refs: list[Tokens], n: int) -> tuple[int, int]:
    """(clipped match count, hypothesis n-gram count) for one sentence.

    Each hypothesis n-gram counts up to the most times it appears in
    any single reference.
    """
    hyp_counts = ngram_counts(hyp, n)
    if not hyp_counts:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in refs:
        for gram, count in ngram_counts(ref, n).items():
            if count > max_ref[gram]:
                max_ref[gram] = count
    matched = sum(min(count, max_ref[gram]) for gram, count in hyp_counts.items())
    return matched, sum(hyp_counts.values())


def modified_precision(hyps: list[Tokens], refs: list[list[Tokens]], n: int) -> float:
    """Corpus-pooled clipped precision: sum matches, sum totals, divide once."""
    matched = total = 0
    for hyp, ref_group in zip(hyps, refs):
        m, t = clipped_matches(hyp, ref_group, n)
        matched += m
        total += t
    return matched / total if total else 0.0


def closest_ref_length(hyp_len: int, ref_lens: list[int]) -> int:
    """Reference length nearest the hypothesis; ties go to the shorter."""
    return min(ref_lens, key=lambda length: (abs(length - hyp_len), length))


def brevity_penalty(ref_total: int, hyp_total: int) -> float:
    """1 when the hypothesis corpus is at least reference length, else exp(1 - r/c)."""
    if hyp_total < 1:
        raise ValueError(f"hypothesis length must be positive, got {hyp_total}")
    if hyp_total >= ref_total:
        return 1.0
    return math.exp(1.0 - ref_total / hyp_total)


def bleu_scores(hyps: list[Tokens], refs: list[list[Tokens]], max_n: int = 4) -> dict:
    """Corpus BLEU for every order 1..max_n.

    Returns precisions, the brevity penalty, scores ("b1".."b4"), and
    a flag listing orders whose pooled precision was zero.
    """
    _check_pairs(hyps, refs)
    hyp_total = sum(len(h) for h in hyps)
    if hyp_total == 0:
        return {
            "precisions": [0.0] * max_n,
            "brevity_penalty": 0.0,
            "scores": [0.0] * max_n,
            "zero_orders": list(range(1, max_n + 1)),
        }
    ref_total = sum(closest_ref_length(len(h), [len(r) for r in group]) for h, group in zip(hyps, refs))
    bp = brevity_penalty(ref_total, hyp_total)
    precisions = [modified_precision(hyps, refs, n) for n in range(1, max_n + 1)]
    scores = []
    zero_orders = [n for n, p in enumerate(precisions, start=1) if p == 0.0]
    for n in range(1, max_n + 1):
        head = precisions[:n]
        if 0.0 in head:
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in head) / n))
    return {"precisions": precisions, "brevity_penalty": bp, "scores": scores, "zero_orders": zero_orders}


def bleu(hyps: list[Tokens], refs: list[list[Tokens]], max_n: int = 4) -> float:
    """Corpus B-max_n (geometric mean of orders 1..max_n times the penalty)."""
    return bleu_scores(hyps, refs, max_n)["scores"][max_n - 1]


def _chunk_count(pairs: list[tuple[int, int]]) -> int:
    """Chunks in an alignment: runs contiguous in both sentences, in order."""
    chunks = 0
    prev_h = prev_r = None
    for h, r in pairs:
        if prev_h is None or h != prev_h + 1 or r != prev_r + 1:
            chunks += 1
        prev_h, prev_r = h, r
    return chunks


def _positions(tokens: Tokens) -> dict[str, list[int]]:
    pos: dict[str, list[int]] = defaultdict(list)
    for i, tok in enumerate(tokens):
        pos[tok].append(i)
    return pos


def _alignment_exhaustive(hyp: Tokens, ref: Tokens) -> tuple[int, int] | None:
    """(matches, minimal chunks) over all maximum alignments, or None if
    the search space exceeds the budget."""
    hyp_pos = _positions(hyp)
    ref_pos = _positions(ref)
    shared = sorted(w for w in hyp_pos if w in ref_pos)
    if not shared:
        return 0, 0
    per_type: list[list[list[tuple[int, int]]]] = []
    space = 1
    for w in shared:
        hs, rs = hyp_pos[w], ref_pos[w]
        k = min(len(hs), len(rs))
        # count before materializing so a single repeated token cannot
        # allocate past the budget
        space *= math.comb(len(hs), k) * math.perm(len(rs), k)
        if space > _METEOR_BUDGET:
            return None
        options = [list(zip(h_sel, r_sel)) for h_sel in combinations(hs, k) for r_sel in permutations(rs, k)]
        per_type.append(options)
    matches = sum(min(len(hyp_pos[w]), len(ref_pos[w])) for w in shared)
    best = None
    for combo in product(*per_type):
        pairs = sorted(chain.from_iterable(combo))
        chunks = _chunk_count(pairs)
        if best is None or chunks < best:
            best = chunks
            if best == 1:
                break
    return matches, best


def _alignment_greedy(hyp: Tokens, ref: Tokens) -> tuple[int, int]:
    """Left-to-right maximum matching that prefers extending the current
    chunk; matches is exact, chunks is an upper bound."""
    hyp_pos = _positions(hyp)
    ref_pos = _positions(ref)
    quota = {w: min(len(hyp_pos[w]), len(ref_pos[w])) for w in hyp_pos if w in ref_pos}
    used: set[int] = set()
    pairs: list[tuple[int, int]] = []
    prev_r = -2
    for h, tok in enumerate(hyp):
        if quota.get(tok, 0) <= 0:
            continue
        free = [r for r in ref_pos[tok] if r not in used]
        if not free:
            continue
        r = prev_r + 1 if prev_r + 1 in free else free[0]
        pairs.append((h, r))
        used.add(r)
        quota[tok] -= 1
        prev_r = r
    return len(pairs), _chunk_count(sorted(pairs))


def meteor_sentence(hyp: Tokens, refs: list[Tokens]) -> tuple[float, dict]:
    """Best exact-match METEOR score of a hypothesis over its references.

    The info dict reports matches, chunks, which reference won, and
    whether any alignment fell back to the greedy search.
    """
    if not refs:
        raise DataError("meteor needs at least one reference")
    best_score = 0.0
    best_info = {"matches": 0, "chunks": 0, "ref_index": None, "greedy": False}
    any_greedy = False
    for idx, ref in enumerate(refs):
        if not hyp or not ref:
            continue
        greedy = False
        if len(hyp) > _METEOR_EXHAUSTIVE_MAX_LEN or len(ref) > _METEOR_EXHAUSTIVE_MAX_LEN:
            result = None
        else:
            result = _alignment_exhaustive(hyp, ref)
        if result is None:
            result = _alignment_greedy(hyp, ref)
            greedy = True
            any_greedy = True
        matches, chunks = result
        if matches == 0:
            continue
        precision = matches / len(hyp)
        recall = matches / len(ref)
        harmonic = 10.0 * precision * recall / (recall + 9.0 * precision)
        penalty = 0.5 * (chunks / matches) ** 3
        score = harmonic * (1.0 - penalty)
        if score > best_score:
            best_score = score
            best_info = {"matches": matches, "chunks": chunks, "ref_index": idx, "greedy": greedy}
    best_info["any_greedy"] = any_greedy
    return best_score, best_info


def meteor(hyps: list[Tokens], refs: list[list[Tokens]]) -> float:
    """Corpus METEOR: mean of per-sentence scores."""
    _check_pairs(hyps, refs)
    return sum(meteor_sentence(h, r)[0] for h, r in zip(hyps, refs)) / len(hyps)


def _tfidf(counts: Counter, idf: dict, unseen: float) -> dict:
    # grams with no reference occurrences have df clamped to 1, so they
    # carry full idf weight (they dilute the hypothesis vector)
    return {gram: count * idf.get(gram, unseen) for gram, count in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    norm_a = math.sqrt(sum(v * v for v in a.values()))
    norm_b = math.sqrt(sum(v * v for v in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    if len(a) > len(b):
        a, b = b, a
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return dot / (norm_a * norm_b)


def cider(hyps: list[Tokens], refs: list[list[Tokens]], max_n: int = 4) -> tuple[float, list[float]]:
    """Corpus CIDEr and the per-image scores it averages."""
    _check_pairs(hyps, refs)
    n_images = len(hyps)
    if n_images < 2:
        raise ValueError("cider needs at least two images: idf is degenerate on one")
    idfs: list[dict] = []
    for n in range(1, max_n + 1):
        df: Counter = Counter()
        for group in refs:
            grams = set()
            for ref in group:
                grams.update(ngram_counts(ref, n))
            df.update(grams)
        idfs.append({gram: math.log(n_images / max(1, count)) for gram, count in df.items()})
    unseen = math.log(n_images)
    per_image = []
    for hyp, group in zip(hyps, refs):
        order_means = []
        for n in range(1, max_n + 1):
            idf = idfs[n - 1]
            hyp_vec = _tfidf(ngram_counts(hyp, n), idf, unseen)
            sims = [_cosine(hyp_vec, _tfidf(ngram_counts(ref, n), idf, unseen)) for ref in group]
            order_means.append(sum(sims) / len(sims))
        per_image.append(10.0 * sum(order_means) / max_n)
    return sum(per_image) / n_images, per_image


def _check_pairs(hyps, refs) -> None:
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses but {len(refs)} reference groups")
    if not hyps:
        raise DataError("empty corpus")
    for i, group in enumerate(refs):
        if not group:
            raise DataError(f"image {i} has no references")


@dataclass
class MetricReport:
    """Every corpus metric plus the per-image detail behind them."""

    ids: list[str]
    bleu: list[float]  # B-1 .. B-4
    bleu_precisions: list[float]
    brevity_penalty: float
    meteor: float
    meteor_per_sentence: list[float]
    cider: float
    cider_per_image: list[float]
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "bleu": {f"b{n}": score for n, score in enumerate(self.bleu, start=1)},
            "bleu_precisions": self.bleu_precisions,
            "brevity_penalty": self.brevity_penalty,
            "meteor": self.meteor,
            "cider": self.cider,
            "per_image": [
                {"id": i, "meteor": m, "cider": c}
                for i, m, c in zip(self.ids, self.meteor_per_sentence, self.cider_per_image)
            ],
            "flags": self.flags,
        }


def evaluate(ids: list[str], hyps: list[Tokens], refs: list[list[Tokens]]) -> MetricReport:
    """All metrics over one corpus of (hypothesis, references) pairs."""
    _check_pairs(hyps, refs)
    if len(ids) != len(hyps):
        raise DataError(f"{len(ids)} ids but {len(hyps)} hypotheses")
    bleu_out = bleu_scores(hyps, refs)
    flags = []
    if bleu_out["zero_orders"]:
        flags.append("bleu_zero_precision_orders=" + ",".join(str(n) for n in bleu_out["zero_orders"]))
    meteor_sentences = []
    greedy_ids = []
    for image_id, hyp, group in zip(ids, hyps, refs):
        score, info = meteor_sentence(hyp, group)
        meteor_sentences.append(score)
        if info["any_greedy"]:
            greedy_ids.append(image_id)
    if greedy_ids:
        flags.append("meteor_greedy_alignment=" + ",".join(greedy_ids[:10]))
    cider_corpus, cider_each = cider(hyps, refs)
    return MetricReport(
        ids=list(ids),
        bleu=bleu_out["scores"],
        bleu_precisions=bleu_out["precisions"],
        brevity_penalty=bleu_out["brevity_penalty"],
        meteor=sum(meteor_sentences) / len(meteor_sentences),
        meteor_per_sentence=meteor_sentences,
        cider=cider_corpus,
        cider_per_image=cider_each,
        flags=flags,
    )


def read_pairs_file(path) -> tuple[list[str], list[Tokens], list[list[Tokens]]]:
    """Read an evaluation file: JSON lines of {"id", "hyp", "refs"}.

    Sentences are normalized the same way training captions are, so
    scores do not depend on punctuation or case differences.
    """
    ids: list[str] = []
    hyps: list[Tokens] = []
    refs: list[list[Tokens]] = []
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
            image_id, hyp, ref_group = obj.get("id"), obj.get("hyp"), obj.get("refs")
            if not isinstance(image_id, str):
                raise FormatError(f"{path}: line {lineno}: 'id' must be a string")
            if not isinstance(hyp, str):
                raise FormatError(f"{path}: line {lineno}: 'hyp' must be a string")
            if not isinstance(ref_group, list) or not all(isinstance(r, str) for r in ref_group):
                raise FormatError(f"{path}: line {lineno}: 'refs' must be a list of strings")
            if not ref_group:
                raise DataError(f"{path}: line {lineno}: empty reference list for {image_id!r}")
            if image_id in seen:
                raise DataError(f"{path}: line {lineno}: duplicate id {image_id!r}")
            seen.add(image_id)
            ids.append(image_id)
            hyps.append(normalize_text(hyp))
            refs.append([normalize_text(r) for r in ref_group])
    if not ids:
        raise DataError(f"{path}: no evaluation pairs")
    return ids, hyps, refs
