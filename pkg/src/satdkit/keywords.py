"""Keyword extraction by backtracking pooled CNN features to source n-grams.

Each pooled feature is one filter's max over its feature map. Multiplying the
concatenated feature vector elementwise by the output head's row for a target
class scores each feature's contribution to that class; the top features are
then traced back through the pooling argmax to the exact window of input
tokens that produced them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import DatasetError, DebtLabel, LabeledCorpus, SATD_LABELS, SourceKind
from .embedding import encode
from .model import ForwardCache, ModelBundle, forward

DEFAULT_PER_SAMPLE_TOP = 3
DEFAULT_MIN_FREQUENCY = 2
DEFAULT_TOP_FRACTION = 0.10


def contributions_from_cache(head_w: np.ndarray, cache: ForwardCache, target_class: int) -> np.ndarray:
    """score_f = X_f * W[target_class, f]; no softmax involved."""
    if not 0 <= target_class < head_w.shape[0]:
        raise ValueError(f"class {target_class} out of range")
    return cache.x * head_w[target_class]


def feature_contributions(
    bundle: ModelBundle, ids: np.ndarray, task: int, target_class: int
) -> np.ndarray:
    """Per-feature contribution scores (length F) for one input and class."""
    _, cache = forward(bundle.params, bundle.config, ids, task, training=False)
    return contributions_from_cache(bundle.params.head_w[task], cache, target_class)


def backtrack(cache: ForwardCache, feature: int) -> list[str]:
    """Map a pooled feature index back to the tokens of its argmax window.

    PAD positions are dropped from the window ends, so the phrase can be
    shorter than the region size (or empty for an all-PAD window). Requires a
    cache from a forward call that was given the token sequence.
    """
    m = cache.feature_maps
    total = m * len(cache.region_sizes)
    if not 0 <= feature < total:
        raise ValueError(f"feature index {feature} out of range for F={total}")
    if cache.tokens is None:
        raise ValueError("cache has no tokens; pass tokens= to forward for backtracking")
    h = cache.region_sizes[feature // m]
    position = int(cache.argmax[h][feature % m])
    return cache.tokens[position : min(position + h, cache.n)]


@dataclass
class KeywordEntry:
    """A token n-gram with its accumulated contribution and sample frequency."""

    phrase: str
    score: float
    frequency: int


@dataclass
class KeywordReport:
    """Ranked keyword lists per SATD class for one source."""

    source: SourceKind
    per_class: dict[DebtLabel, list[KeywordEntry]]
    per_sample_top: int
    min_frequency: int

    def combined(self) -> list[KeywordEntry]:
        """One ranked list over all SATD classes, phrase scores merged."""
        merged: dict[str, KeywordEntry] = {}
        for entries in self.per_class.values():
            for e in entries:
                if e.phrase in merged:
                    merged[e.phrase].score += e.score
                    merged[e.phrase].frequency += e.frequency
                else:
                    merged[e.phrase] = KeywordEntry(e.phrase, e.score, e.frequency)
        return _ranked(merged.values())

    def to_json(self) -> dict:
        return {
            "source": self.source.value,
            "per_sample_top": self.per_sample_top,
            "min_frequency": self.min_frequency,
            "classes": {
                label.value: [
                    {"phrase": e.phrase, "score": e.score, "frequency": e.frequency}
                    for e in entries
                ]
                for label, entries in self.per_class.items()
            },
        }


def _ranked(entries) -> list[KeywordEntry]:
    return sorted(entries, key=lambda e: (-e.score, -e.frequency, e.phrase))


def extract_keywords(
    bundle: ModelBundle,
    corpus: LabeledCorpus,
    task: int,
    per_sample_top: int = DEFAULT_PER_SAMPLE_TOP,
    min_frequency: int = DEFAULT_MIN_FREQUENCY,
    use_predictions: bool = False,
) -> KeywordReport:
    """Aggregate backtracked phrases over a corpus into ranked keyword lists.

    For every sample whose label (or prediction, with use_predictions) is a
    SATD class, the per_sample_top features by contribution toward that class
    are backtracked; phrase scores are summed across samples and each sample
    counts once toward a phrase's frequency.
    """
    scores: dict[DebtLabel, dict[str, KeywordEntry]] = {lb: {} for lb in SATD_LABELS}
    config = bundle.config
    for rec in corpus.records:
        if not rec.tokens:
            continue
        ids, _ = encode(rec.tokens, bundle.vocab, config.max_len)
        _, cache = forward(
            bundle.params, config, ids, task, training=False, tokens=rec.tokens
        )
        if use_predictions:
            target = int(np.argmax(cache.probs))
        else:
            target = rec.label.class_index if rec.label is not None else None
        if target is None or target >= len(SATD_LABELS):
            continue
        label = SATD_LABELS[target]
        contrib = contributions_from_cache(bundle.params.head_w[task], cache, target)
        top = np.argsort(-contrib, kind="stable")[:per_sample_top]
        sample_phrases: dict[str, float] = {}
        for f in top:
            tokens = backtrack(cache, int(f))
            if not tokens:
                continue
            phrase = " ".join(tokens)
            sample_phrases[phrase] = sample_phrases.get(phrase, 0.0) + float(contrib[f])
        for phrase, score in sample_phrases.items():
            entry = scores[label].get(phrase)
            if entry is None:
                scores[label][phrase] = KeywordEntry(phrase, score, 1)
            else:
                entry.score += score
                entry.frequency += 1
    per_class = {
        label: _ranked(e for e in bucket.values() if e.frequency >= min_frequency)
        for label, bucket in scores.items()
    }
    return KeywordReport(
        source=corpus.source,
        per_class=per_class,
        per_sample_top=per_sample_top,
        min_frequency=min_frequency,
    )


def shared_keyword_matrix(
    lists: Mapping[SourceKind, Sequence[str]], top_fraction: float = DEFAULT_TOP_FRACTION
) -> tuple[list[SourceKind], np.ndarray]:
    """Count exact-phrase intersections between per-source top keyword lists.

    The cutoff is floor(top_fraction * mean list length); each list is
    truncated to the cutoff before intersecting. The diagonal holds the
    cutoff itself. Returns (source order, symmetric count matrix).
    """
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError("top_fraction must be in (0, 1]")
    if not lists:
        raise DatasetError("no keyword lists given")
    for source, phrases in lists.items():
        if not phrases:
            raise DatasetError(f"empty keyword list for source '{source.value}'")
    sources = sorted(lists, key=lambda s: s.task_id)
    cutoff = int(top_fraction * np.mean([len(lists[s]) for s in sources]))
    tops = {s: set(list(lists[s])[:cutoff]) for s in sources}
    matrix = np.zeros((len(sources), len(sources)), dtype=np.int64)
    for i, a in enumerate(sources):
        for j, b in enumerate(sources):
            matrix[i, j] = cutoff if i == j else len(tops[a] & tops[b])
    return sources, matrix
