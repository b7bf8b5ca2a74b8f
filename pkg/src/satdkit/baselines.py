"""Reference classifiers: the random baseline and TF-IDF + logistic regression.

Both are written out explicitly (no sklearn) so the smoothed-idf formula and
the full-batch gradient-descent training are auditable against their stated
contracts. scipy.sparse only supplies the matrix container.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .corpus import DatasetError, LabeledCorpus, NUM_CLASSES
from .train_eval import Metrics

log = logging.getLogger(__name__)


def random_classifier(
    train: LabeledCorpus,
    test: LabeledCorpus,
    seed: int,
    num_classes: int = NUM_CLASSES,
) -> Metrics:
    """Sample each test label from the training-set class distribution."""
    if not train.records:
        raise DatasetError("random classifier needs a non-empty training set")
    counts = np.zeros(num_classes, dtype=np.float64)
    for label, count in train.class_counts.items():
        counts[label.class_index] += count
    p = counts / counts.sum()
    rng = np.random.default_rng(seed)
    preds = rng.choice(num_classes, size=len(test.records), p=p)
    truths = [rec.label.class_index for rec in test.records]
    return Metrics.from_predictions(truths, list(map(int, preds)), num_classes)


@dataclass
class TfidfModel:
    """Train-fold vocabulary with smoothed idf: ln((1+N)/(1+df)) + 1."""

    vocabulary: dict[str, int]
    idf: np.ndarray
    num_documents: int


def tfidf_fit(docs: Sequence[Sequence[str]]) -> TfidfModel:
    """Fit vocabulary and idf on training documents (token sequences) only."""
    if not docs:
        raise DatasetError("tfidf_fit needs a non-empty training set")
    df: dict[str, int] = {}
    for tokens in docs:
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1
    vocabulary = {term: i for i, term in enumerate(sorted(df))}
    n = len(docs)
    idf = np.zeros(len(vocabulary), dtype=np.float64)
    for term, i in vocabulary.items():
        idf[i] = np.log((1.0 + n) / (1.0 + df[term])) + 1.0
    return TfidfModel(vocabulary=vocabulary, idf=idf, num_documents=n)


def tfidf_transform(model: TfidfModel, tokens: Sequence[str]) -> dict[int, float]:
    """L2-normalized sparse tf-idf vector; unseen terms are dropped."""
    counts: dict[int, float] = {}
    for term in tokens:
        col = model.vocabulary.get(term)
        if col is not None:
            counts[col] = counts.get(col, 0.0) + 1.0
    vec = {col: tf * model.idf[col] for col, tf in counts.items()}
    norm = np.sqrt(sum(v * v for v in vec.values()))
    if norm > 0:
        vec = {col: v / norm for col, v in vec.items()}
    return vec


def tfidf_matrix(model: TfidfModel, docs: Sequence[Sequence[str]]) -> sparse.csr_matrix:
    """Stack tfidf_transform rows into a CSR matrix."""
    data: list[float] = []
    indices: list[int] = []
    indptr = [0]
    for tokens in docs:
        vec = tfidf_transform(model, tokens)
        for col in sorted(vec):
            indices.append(col)
            data.append(vec[col])
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (data, indices, indptr), shape=(len(docs), len(model.vocabulary))
    )


@dataclass
class LogRegConfig:
    regularization: float = 1.0
    iterations: int = 500
    step_size: float = 0.1


@dataclass
class LogRegModel:
    """Multinomial logistic regression parameters over tf-idf columns."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    # non-finite scores are caught by the caller's isfinite check
    with np.errstate(invalid="ignore", over="ignore"):
        shifted = scores - scores.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)


def logreg_train(
    x: sparse.csr_matrix,
    labels: Sequence[int],
    num_classes: int = NUM_CLASSES,
    config: LogRegConfig | None = None,
) -> LogRegModel:
    """Full-batch gradient descent on mean cross-entropy with an L2 penalty."""
    config = config or LogRegConfig()
    y = np.asarray(labels, dtype=np.int64)
    if len(set(y.tolist())) < 2:
        raise DatasetError("logistic regression needs at least 2 classes in training data")
    n, v = x.shape
    w = np.zeros((num_classes, v), dtype=np.float64)
    b = np.zeros(num_classes, dtype=np.float64)
    onehot = np.zeros((n, num_classes), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0
    with np.errstate(over="ignore", invalid="ignore"):
        for iteration in range(config.iterations):
            scores = np.asarray(x @ w.T) + b
            probs = _softmax_rows(scores)
            if not np.isfinite(probs).all():
                raise FloatingPointError(
                    "logistic regression diverged (non-finite probabilities); "
                    "lower the step size"
                )
            err = (probs - onehot) / n
            grad_w = err.T @ x + (config.regularization / n) * w
            grad_b = err.sum(axis=0)
            w -= config.step_size * np.asarray(grad_w)
            b -= config.step_size * grad_b
    return LogRegModel(weights=w, bias=b)


def logreg_loss(
    model: LogRegModel,
    x: sparse.csr_matrix,
    labels: Sequence[int],
    regularization: float = 1.0,
) -> float:
    """Mean cross-entropy plus the L2 penalty term (for convergence checks)."""
    y = np.asarray(labels, dtype=np.int64)
    probs = _softmax_rows(np.asarray(x @ model.weights.T) + model.bias)
    n = x.shape[0]
    nll = -np.log(np.clip(probs[np.arange(n), y], 1e-12, None)).mean()
    return float(nll + (regularization / (2.0 * n)) * np.sum(model.weights**2))


def logreg_predict(model: LogRegModel, vec: dict[int, float]) -> int:
    """Argmax of linear scores; ties break toward the lowest class index."""
    scores = model.bias.copy()
    for col, value in vec.items():
        scores += value * model.weights[:, col]
    return int(np.argmax(scores))


def logreg_cv_fold(
    train: LabeledCorpus,
    test: LabeledCorpus,
    num_classes: int = NUM_CLASSES,
    config: LogRegConfig | None = None,
) -> Metrics:
    """Fit TF-IDF + logistic regression on the train fold, score the test fold."""
    train_docs = [rec.tokens for rec in train.records]
    tfidf = tfidf_fit(train_docs)
    x = tfidf_matrix(tfidf, train_docs)
    labels = [rec.label.class_index for rec in train.records]
    model = logreg_train(x, labels, num_classes, config)
    truths = []
    preds = []
    for rec in test.records:
        truths.append(rec.label.class_index)
        preds.append(logreg_predict(model, tfidf_transform(tfidf, rec.tokens)))
    return Metrics.from_predictions(truths, preds, num_classes)
