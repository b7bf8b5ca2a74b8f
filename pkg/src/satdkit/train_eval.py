"""Multitask stochastic training, cross-validation, metrics, and statistics.

Training follows the per-sample stochastic recipe: pick a task, draw a sample
from that task's training set, run forward/backward/update with that task's
class weights, repeat. An epoch is one such step per training sample summed
over all tasks.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats as scipy_stats

from .corpus import (
    DatasetError,
    LabeledCorpus,
    NUM_CLASSES,
    label_for_class,
    stratified_split,
)
from .embedding import EmbeddingMatrix, Vocab, encode
from .model import (
    ADADELTA,
    ModelBundle,
    ModelConfig,
    OptimizerState,
    backward,
    forward,
    init_params,
    predict_index,
    step,
    weighted_loss,
)

log = logging.getLogger(__name__)

WEIGHT_NONE = "none"
WEIGHT_INVERSE_FREQUENCY = "inverse_frequency"
TASKS_UNIFORM = "uniform"
TASKS_PROPORTIONAL = "proportional"


@dataclass
class TrainConfig:
    """Training-loop hyperparameters wrapped around a ModelConfig."""

    epochs: int = 20
    seed: int = 0
    learning_rate: float = 1.0
    class_weight_scheme: str = WEIGHT_INVERSE_FREQUENCY
    task_selection: str = TASKS_UNIFORM
    optimizer: str = ADADELTA
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.class_weight_scheme not in (WEIGHT_NONE, WEIGHT_INVERSE_FREQUENCY):
            raise ValueError(f"unknown class weight scheme '{self.class_weight_scheme}'")
        if self.task_selection not in (TASKS_UNIFORM, TASKS_PROPORTIONAL):
            raise ValueError(f"unknown task selection '{self.task_selection}'")


def class_weights(
    corpus: LabeledCorpus,
    num_classes: int = NUM_CLASSES,
    scheme: str = WEIGHT_INVERSE_FREQUENCY,
) -> np.ndarray:
    """Per-class loss weights; inverse frequency w_c = N / (C_present * N_c).

    Classes absent from the corpus get weight 0 (they cannot occur). The
    'none' scheme returns all ones, and balanced corpora reduce to ones.
    """
    if not corpus.records:
        raise DatasetError("cannot compute class weights for an empty corpus")
    weights = np.ones(num_classes, dtype=np.float64)
    if scheme == WEIGHT_NONE:
        return weights
    counts = np.zeros(num_classes, dtype=np.int64)
    for label, count in corpus.class_counts.items():
        counts[label.class_index] += count
    present = int(np.count_nonzero(counts))
    total = counts.sum()
    for c in range(num_classes):
        weights[c] = total / (present * counts[c]) if counts[c] else 0.0
    return weights


def _encode_corpus(corpus: LabeledCorpus, vocab: Vocab, max_len: int):
    """Encode every record; records with no tokens are dropped with a warning."""
    ids_list: list[np.ndarray] = []
    labels: list[int] = []
    dropped = 0
    for rec in corpus.records:
        if not rec.tokens:
            dropped += 1
            continue
        ids, _ = encode(rec.tokens, vocab, max_len)
        ids_list.append(ids)
        labels.append(rec.label.class_index)
    if dropped:
        log.warning(
            "%s corpus: dropped %d record(s) with no tokens from training",
            corpus.source.value,
            dropped,
        )
    if not ids_list:
        raise DatasetError(f"{corpus.source.value} corpus has no tokenized records")
    return ids_list, labels


def train_multitask(
    corpora: Sequence[LabeledCorpus],
    config: TrainConfig,
    vocab: Vocab,
    embedding: EmbeddingMatrix,
) -> tuple[ModelBundle, list[tuple[int, float]]]:
    """Train one model jointly over the given per-task corpora.

    Returns the trained bundle and a training log of (step, smoothed loss)
    pairs, one entry per 1,000 steps. Deterministic for a fixed seed.
    """
    if not corpora:
        raise DatasetError("train_multitask needs at least one corpus")
    mc = config.model
    if mc.num_tasks != len(corpora):
        raise ValueError(
            f"config declares {mc.num_tasks} tasks but {len(corpora)} corpora given"
        )
    if mc.embedding_mode != embedding.mode:
        embedding = EmbeddingMatrix(embedding.vectors, embedding.dim, mc.embedding_mode)
    encoded = []
    task_weights = []
    for corpus in corpora:
        encoded.append(_encode_corpus(corpus, vocab, mc.max_len))
        task_weights.append(class_weights(corpus, mc.num_classes, config.class_weight_scheme))
    init_ss, train_ss = np.random.SeedSequence(config.seed).spawn(2)
    params = init_params(mc, embedding, seed=init_ss)
    rng = np.random.default_rng(train_ss)
    state = OptimizerState()
    sizes = np.array([len(ids) for ids, _ in encoded])
    total = int(sizes.sum())
    steps = config.epochs * total
    proportional = config.task_selection == TASKS_PROPORTIONAL
    task_p = sizes / total if proportional else None
    num_tasks = len(corpora)
    chunk: list[float] = []
    train_log: list[tuple[int, float]] = []
    for s in range(steps):
        if proportional:
            task = int(rng.choice(num_tasks, p=task_p))
        else:
            task = int(rng.integers(num_tasks))
        ids_list, labels = encoded[task]
        i = int(rng.integers(len(ids_list)))
        probs, cache = forward(params, mc, ids_list[i], task, training=True, rng=rng)
        chunk.append(weighted_loss(probs, labels[i], task_weights[task]))
        grads = backward(params, mc, cache, labels[i], task_weights[task])
        step(params, grads, state, config.learning_rate, config.optimizer)
        if len(chunk) == 1000:
            train_log.append((s + 1, float(np.mean(chunk))))
            chunk.clear()
    if chunk:
        train_log.append((steps, float(np.mean(chunk))))
    return ModelBundle(params=params, config=mc, vocab=vocab), train_log


def confusion_counts(
    truths: Sequence[int], preds: Sequence[int], num_classes: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-vs-rest (TP, FP, FN) count vectors over class indices."""
    tp = np.zeros(num_classes, dtype=np.int64)
    fp = np.zeros(num_classes, dtype=np.int64)
    fn = np.zeros(num_classes, dtype=np.int64)
    for t, p in zip(truths, preds):
        if t == p:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    return tp, fp, fn


def _safe_div(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


@dataclass
class Metrics:
    """Per-class TP/FP/FN with derived precision/recall/F1 and macro-F1.

    Macro-F1 averages the debt classes only (every class except the final
    non-SATD index).
    """

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def from_predictions(
        cls, truths: Sequence[int], preds: Sequence[int], num_classes: int = NUM_CLASSES
    ) -> "Metrics":
        return cls(*confusion_counts(truths, preds, num_classes))

    @property
    def num_classes(self) -> int:
        return len(self.tp)

    def precision(self, c: int) -> float:
        return _safe_div(self.tp[c], self.tp[c] + self.fp[c])

    def recall(self, c: int) -> float:
        return _safe_div(self.tp[c], self.tp[c] + self.fn[c])

    def f1(self, c: int) -> float:
        p, r = self.precision(c), self.recall(c)
        return _safe_div(2.0 * p * r, p + r)

    @property
    def satd_classes(self) -> range:
        return range(self.num_classes - 1)

    @property
    def macro_f1(self) -> float:
        return float(np.mean([self.f1(c) for c in self.satd_classes]))

    def class_name(self, c: int) -> str:
        if self.num_classes == NUM_CLASSES:
            return label_for_class(c).value
        return f"class_{c}"

    def to_json(self) -> dict:
        per_class = {}
        for c in range(self.num_classes):
            per_class[self.class_name(c)] = {
                "tp": int(self.tp[c]),
                "fp": int(self.fp[c]),
                "fn": int(self.fn[c]),
                "precision": self.precision(c),
                "recall": self.recall(c),
                "f1": self.f1(c),
            }
        return {"per_class": per_class, "macro_f1": self.macro_f1}


def evaluate(bundle: ModelBundle, test: LabeledCorpus, task: int) -> Metrics:
    """Predict every test record and accumulate one-vs-rest counts."""
    if not test.records:
        raise DatasetError("cannot evaluate on an empty test set")
    truths: list[int] = []
    preds: list[int] = []
    for rec in test.records:
        if not rec.tokens:
            raise DatasetError(f"record '{rec.id}' has no tokens; run prep first")
        ids, _ = encode(rec.tokens, bundle.vocab, bundle.config.max_len)
        truths.append(rec.label.class_index)
        preds.append(predict_index(bundle.params, bundle.config, ids, task))
    return Metrics.from_predictions(truths, preds, bundle.config.num_classes)


@dataclass
class CVReport:
    """Stratified cross-validation results: per fold x task, plus averages."""

    k: int
    seed: int
    fold_metrics: list[dict[int, Metrics]]
    source_names: list[str]

    def task_mean(self, task: int, score) -> float:
        values = [score(fm[task]) for fm in self.fold_metrics if task in fm]
        return float(np.mean(values)) if values else 0.0

    def task_macro_f1(self, task: int) -> float:
        return self.task_mean(task, lambda m: m.macro_f1)

    @property
    def tasks(self) -> list[int]:
        present = sorted({t for fm in self.fold_metrics for t in fm})
        return present

    @property
    def grand_average(self) -> float:
        """Mean over tasks of per-task fold means (primary aggregation)."""
        return float(np.mean([self.task_macro_f1(t) for t in self.tasks]))

    @property
    def pooled_average(self) -> float:
        """Mean over every fold x task cell (alternative aggregation)."""
        values = [m.macro_f1 for fm in self.fold_metrics for m in fm.values()]
        return float(np.mean(values))

    def to_json(self) -> dict:
        folds = []
        for i, fm in enumerate(self.fold_metrics):
            folds.append(
                {
                    "fold": i,
                    "tasks": {self.source_names[t]: m.to_json() for t, m in sorted(fm.items())},
                }
            )
        per_task = {}
        for t in self.tasks:
            first = next(fm[t] for fm in self.fold_metrics if t in fm)
            per_class = {}
            for c in range(first.num_classes):
                per_class[first.class_name(c)] = {
                    "precision": self.task_mean(t, lambda m, c=c: m.precision(c)),
                    "recall": self.task_mean(t, lambda m, c=c: m.recall(c)),
                    "f1": self.task_mean(t, lambda m, c=c: m.f1(c)),
                }
            per_task[self.source_names[t]] = {
                "macro_f1": self.task_macro_f1(t),
                "per_class": per_class,
            }
        return {
            "k": self.k,
            "seed": self.seed,
            "folds": folds,
            "per_task": per_task,
            "grand_average": self.grand_average,
            "pooled_average": self.pooled_average,
        }

    def to_csv_rows(self) -> list[list]:
        rows: list[list] = [["fold", "task", "class", "precision", "recall", "f1"]]
        for i, fm in enumerate(self.fold_metrics):
            for t, m in sorted(fm.items()):
                for c in range(m.num_classes):
                    rows.append(
                        [
                            i,
                            self.source_names[t],
                            m.class_name(c),
                            f"{m.precision(c):.6f}",
                            f"{m.recall(c):.6f}",
                            f"{m.f1(c):.6f}",
                        ]
                    )
        return rows


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(fold,)).generate_state(1)[0])


def _split_fold(
    corpora: Sequence[LabeledCorpus],
    assignments,
    fold: int,
) -> tuple[list[LabeledCorpus], list[LabeledCorpus | None]]:
    train_corpora: list[LabeledCorpus] = []
    test_corpora: list[LabeledCorpus | None] = []
    for corpus, assign in zip(corpora, assignments):
        train_recs = [r for r in corpus.records if assign.fold_of(r.id) != fold]
        test_recs = [r for r in corpus.records if assign.fold_of(r.id) == fold]
        train_corpora.append(LabeledCorpus.from_records(train_recs, corpus.source))
        test_corpora.append(
            LabeledCorpus.from_records(test_recs, corpus.source) if test_recs else None
        )
    return train_corpora, test_corpora


def _run_fold(
    corpora: Sequence[LabeledCorpus],
    config: TrainConfig,
    vocab: Vocab,
    embedding: EmbeddingMatrix,
    assignments,
    fold: int,
) -> dict[int, Metrics]:
    train_corpora, test_corpora = _split_fold(corpora, assignments, fold)
    fold_config = replace(config, seed=_fold_seed(config.seed, fold))
    bundle, _ = train_multitask(train_corpora, fold_config, vocab, embedding.copy())
    out: dict[int, Metrics] = {}
    for task, test in enumerate(test_corpora):
        if test is None:
            log.warning("fold %d has no test records for task %d; skipping", fold, task)
            continue
        out[task] = evaluate(bundle, test, task)
    return out


def cross_validate(
    corpora: Sequence[LabeledCorpus],
    config: TrainConfig,
    vocab: Vocab,
    embedding: EmbeddingMatrix,
    k: int = 10,
    threads: int = 1,
) -> CVReport:
    """Stratified k-fold CV: train one multitask model per fold, evaluate each
    task on its held-out partition. Fold seeds derive from the run seed, so
    results are identical regardless of `threads`.
    """
    if k < 2:
        raise DatasetError(f"fold count must be >= 2, got {k}")
    assignments = [stratified_split(corpus, k, config.seed) for corpus in corpora]
    args = [(corpora, config, vocab, embedding, assignments, fold) for fold in range(k)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_fold, *a) for a in args]
            fold_metrics = [f.result() for f in futures]
    else:
        fold_metrics = [_run_fold(*a) for a in args]
    source_names = [c.source.value for c in corpora]
    return CVReport(k=k, seed=config.seed, fold_metrics=fold_metrics, source_names=source_names)


def cohen_kappa(ratings_a: Sequence, ratings_b: Sequence) -> float:
    """Chance-corrected agreement between two raters' label sequences."""
    if len(ratings_a) != len(ratings_b):
        raise ValueError(
            f"rating sequences differ in length ({len(ratings_a)} vs {len(ratings_b)})"
        )
    n = len(ratings_a)
    if n == 0:
        raise ValueError("rating sequences must be non-empty")
    observed = sum(1 for a, b in zip(ratings_a, ratings_b) if a == b) / n
    labels = set(ratings_a) | set(ratings_b)
    freq_a = {lb: sum(1 for a in ratings_a if a == lb) / n for lb in labels}
    freq_b = {lb: sum(1 for b in ratings_b if b == lb) / n for lb in labels}
    expected = sum(freq_a[lb] * freq_b[lb] for lb in labels)
    if expected == 1.0:
        return 1.0
    return (observed - expected) / (1.0 - expected)


def cliffs_delta(samples_a: Sequence[float], samples_b: Sequence[float]) -> float:
    """d = (#{a>b} - #{a<b}) / (|A||B|) by full pairwise comparison."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    diff = a[:, None] - b[None, :]
    return float((np.count_nonzero(diff > 0) - np.count_nonzero(diff < 0)) / diff.size)


NEGLIGIBLE = "negligible"
SMALL = "small"
MEDIUM = "medium"
LARGE = "large"


def magnitude_of(d: float) -> str:
    """Effect-size bands: small at 0.11, medium at 0.28, large at 0.43."""
    ad = abs(d)
    if ad < 0.11:
        return NEGLIGIBLE
    if ad < 0.28:
        return SMALL
    if ad < 0.43:
        return MEDIUM
    return LARGE


@dataclass
class StatResult:
    """Welch t-test p-value plus Cliff's delta with its magnitude band."""

    p_value: float
    cliffs_delta: float
    magnitude: str


def compare(samples_a: Sequence[float], samples_b: Sequence[float]) -> StatResult:
    """Two-sided unequal-variance t-test and Cliff's delta for two samples."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    d = cliffs_delta(a, b)
    if a.var() == 0.0 and b.var() == 0.0:
        p = 1.0 if a[0] == b[0] else 0.0
    else:
        p = float(scipy_stats.ttest_ind(a, b, equal_var=False).pvalue)
    return StatResult(p_value=p, cliffs_delta=d, magnitude=magnitude_of(d))
