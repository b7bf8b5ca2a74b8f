"""Multitask text CNN: forward pass, backward pass, updates, checkpoints.

The network is: embedding lookup -> per-region-size valid cross-correlation
with ReLU -> max-pool each feature map to a scalar -> concatenate -> dropout
(training only) -> one linear output head per task -> softmax. The single-task
network is the num_tasks=1 degenerate case.

Everything is plain numpy so the backward pass, the pooling argmax positions
(needed for keyword backtracking), and bit-exact determinism stay inspectable.
Training runs in float32; float64 parameters are supported for the
finite-difference check harness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import DebtLabel, label_for_class
from .embedding import (
    EmbeddingMatrix,
    NON_STATIC,
    PAD_INDEX,
    STATIC,
    Vocab,
)

ADADELTA = "adadelta"
SGD = "sgd"

_ADADELTA_DECAY = 0.95
_ADADELTA_EPS = 1e-6
_PROB_FLOOR = 1e-12


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults are the best reported setup."""

    region_sizes: tuple[int, ...] = (1, 2, 3, 4, 5)
    feature_maps: int = 200
    num_tasks: int = 4
    num_classes: int = 5
    dropout_rate: float = 0.5
    embedding_mode: str = STATIC
    max_len: int = 256

    def __post_init__(self) -> None:
        self.region_sizes = tuple(int(h) for h in self.region_sizes)
        if not self.region_sizes:
            raise ValueError("region_sizes must be non-empty")
        if list(self.region_sizes) != sorted(set(self.region_sizes)):
            raise ValueError("region_sizes must be strictly ascending")
        if self.region_sizes[0] < 1 or self.region_sizes[-1] > self.max_len:
            raise ValueError("every region size must satisfy 1 <= h <= max_len")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.embedding_mode not in (STATIC, NON_STATIC):
            raise ValueError(f"unknown embedding mode '{self.embedding_mode}'")

    @property
    def feature_len(self) -> int:
        """Width F of the concatenated pooled feature vector."""
        return self.feature_maps * len(self.region_sizes)

    def to_json(self) -> dict:
        return {
            "region_sizes": list(self.region_sizes),
            "feature_maps": self.feature_maps,
            "num_tasks": self.num_tasks,
            "num_classes": self.num_classes,
            "dropout_rate": self.dropout_rate,
            "embedding_mode": self.embedding_mode,
            "max_len": self.max_len,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(
            region_sizes=tuple(obj["region_sizes"]),
            feature_maps=obj["feature_maps"],
            num_tasks=obj["num_tasks"],
            num_classes=obj["num_classes"],
            dropout_rate=obj["dropout_rate"],
            embedding_mode=obj["embedding_mode"],
            max_len=obj["max_len"],
        )


@dataclass
class ModelParams:
    """All trainable arrays: conv filters, per-task heads, embedding table."""

    filters: dict[int, np.ndarray]
    filter_bias: dict[int, np.ndarray]
    head_w: list[np.ndarray]
    head_b: list[np.ndarray]
    embedding: EmbeddingMatrix

    @property
    def dtype(self):
        return self.head_w[0].dtype


def init_params(
    config: ModelConfig, embedding: EmbeddingMatrix, seed: int, init_scale: float = 0.1
) -> ModelParams:
    """Uniform [-init_scale, init_scale] filters/heads, zero biases."""
    rng = np.random.default_rng(seed)
    dtype = embedding.vectors.dtype
    k = embedding.dim
    m = config.feature_maps
    filters = {}
    filter_bias = {}
    for h in config.region_sizes:
        filters[h] = rng.uniform(-init_scale, init_scale, size=(m, h, k)).astype(dtype)
        filter_bias[h] = np.zeros(m, dtype=dtype)
    head_w = [
        rng.uniform(-init_scale, init_scale, size=(config.num_classes, config.feature_len)).astype(dtype)
        for _ in range(config.num_tasks)
    ]
    head_b = [np.zeros(config.num_classes, dtype=dtype) for _ in range(config.num_tasks)]
    return ModelParams(
        filters=filters,
        filter_bias=filter_bias,
        head_w=head_w,
        head_b=head_b,
        embedding=embedding,
    )


@dataclass
class ForwardCache:
    """Everything the backward pass and keyword backtracking need."""

    ids: np.ndarray
    n: int
    conv_len: int
    task: int
    emb: np.ndarray
    preacts: dict[int, np.ndarray]
    argmax: dict[int, np.ndarray]
    x: np.ndarray
    x_dropped: np.ndarray
    dropout_mask: np.ndarray | None
    logits: np.ndarray
    probs: np.ndarray
    training: bool
    region_sizes: tuple[int, ...]
    feature_maps: int
    tokens: list[str] | None = None


def forward(
    params: ModelParams,
    config: ModelConfig,
    ids: np.ndarray,
    task: int,
    training: bool = False,
    rng: np.random.Generator | None = None,
    tokens: Sequence[str] | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """One sample through the network for one task.

    `ids` must have length max_len (PAD-padded). `rng` drives the inverted
    dropout mask and is required only when training with dropout_rate > 0.
    `tokens` is optionally stashed in the cache for later backtracking.
    """
    if not 0 <= task < config.num_tasks:
        raise ValueError(f"task {task} out of range for {config.num_tasks} tasks")
    ids = np.asarray(ids)
    if ids.shape != (config.max_len,):
        raise ValueError(f"ids must have shape ({config.max_len},), got {ids.shape}")
    n = int(np.count_nonzero(ids != PAD_INDEX))
    if n == 0:
        raise ValueError("empty input")
    # Convolve over the real tokens plus enough PAD for the largest region
    # size to produce at least one window.
    conv_len = max(n, config.region_sizes[-1])
    emb = params.embedding.vectors[ids[:conv_len]]
    k = emb.shape[1]
    preacts: dict[int, np.ndarray] = {}
    argmax: dict[int, np.ndarray] = {}
    pooled_parts = []
    for h in config.region_sizes:
        windows = sliding_window_view(emb, (h, k))[:, 0]
        pre = np.tensordot(windows, params.filters[h], axes=([1, 2], [1, 2]))
        pre = pre + params.filter_bias[h]
        act = np.maximum(pre, 0.0)
        preacts[h] = pre
        argmax[h] = act.argmax(axis=0)
        pooled_parts.append(act.max(axis=0))
    x = np.concatenate(pooled_parts)
    mask = None
    x_dropped = x
    if training and config.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training forward with dropout needs a random stream")
        keep = 1.0 - config.dropout_rate
        mask = (rng.random(x.shape[0]) < keep).astype(x.dtype) / x.dtype.type(keep)
        x_dropped = x * mask
    logits = params.head_w[task] @ x_dropped + params.head_b[task]
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    cache = ForwardCache(
        ids=ids,
        n=n,
        conv_len=conv_len,
        task=task,
        emb=emb,
        preacts=preacts,
        argmax=argmax,
        x=x,
        x_dropped=x_dropped,
        dropout_mask=mask,
        logits=logits,
        probs=probs,
        training=training,
        region_sizes=config.region_sizes,
        feature_maps=config.feature_maps,
        tokens=list(tokens) if tokens is not None else None,
    )
    return probs, cache


def _class_index(label) -> int:
    return label.class_index if isinstance(label, DebtLabel) else int(label)


def weighted_loss(probs: np.ndarray, label, class_weights: np.ndarray) -> float:
    """-w_label * log(p_label), with p clamped below at 1e-12."""
    c = _class_index(label)
    return float(-class_weights[c] * np.log(max(float(probs[c]), _PROB_FLOOR)))


@dataclass
class Gradients:
    """Per-array gradients from one backward pass.

    Heads of tasks other than `task` are exact zero arrays; `emb_rows` /
    `emb_grad` hold the touched embedding rows (None in static mode).
    """

    task: int
    filters: dict[int, np.ndarray]
    filter_bias: dict[int, np.ndarray]
    head_w: list[np.ndarray]
    head_b: list[np.ndarray]
    emb_rows: np.ndarray | None = None
    emb_grad: np.ndarray | None = None


def backward(
    params: ModelParams,
    config: ModelConfig,
    cache: ForwardCache,
    label,
    class_weights: np.ndarray,
) -> Gradients:
    """Reverse-mode gradients of the weighted loss for one sample.

    The pooling stage routes gradient only to each map's argmax position;
    the dropout mask is replayed from the cache.
    """
    if not cache.training:
        raise ValueError("backward requires a cache produced with training=True")
    if cache.region_sizes != config.region_sizes or cache.x.shape[0] != config.feature_len:
        raise ValueError("cache does not match the given params/config")
    c = _class_index(label)
    w = params.dtype.type(class_weights[c])
    dlogits = cache.probs.copy()
    dlogits[c] -= 1.0
    dlogits *= w
    task = cache.task
    head_w_grads = [np.zeros_like(hw) for hw in params.head_w]
    head_b_grads = [np.zeros_like(hb) for hb in params.head_b]
    head_w_grads[task] = np.outer(dlogits, cache.x_dropped)
    head_b_grads[task] = dlogits
    dx = params.head_w[task].T @ dlogits
    if cache.dropout_mask is not None:
        dx = dx * cache.dropout_mask
    m = config.feature_maps
    non_static = params.embedding.mode == NON_STATIC
    filter_grads: dict[int, np.ndarray] = {}
    bias_grads: dict[int, np.ndarray] = {}
    rows_parts = []
    grad_parts = []
    offset = 0
    cols = np.arange(m)
    for h in config.region_sizes:
        g_pool = dx[offset : offset + m]
        am = cache.argmax[h]
        pre_at_max = cache.preacts[h][am, cols]
        # ReLU gate: maps whose pooled maximum was clipped to zero pass nothing.
        g_pre = np.where(pre_at_max > 0, g_pool, 0.0).astype(params.dtype)
        span = am[:, None] + np.arange(h)[None, :]
        windows_at_max = cache.emb[span]
        filter_grads[h] = g_pre[:, None, None] * windows_at_max
        bias_grads[h] = g_pre
        if non_static:
            rows_parts.append(cache.ids[:cache.conv_len][span].ravel())
            grad_parts.append((g_pre[:, None, None] * params.filters[h]).reshape(-1, cache.emb.shape[1]))
        offset += m
    emb_rows = None
    emb_grad = None
    if non_static:
        rows = np.concatenate(rows_parts)
        grads = np.concatenate(grad_parts)
        keep = rows != PAD_INDEX
        rows, grads = rows[keep], grads[keep]
        if rows.size:
            uniq, inverse = np.unique(rows, return_inverse=True)
            acc = np.zeros((uniq.shape[0], grads.shape[1]), dtype=params.dtype)
            np.add.at(acc, inverse, grads)
            emb_rows, emb_grad = uniq, acc
    return Gradients(
        task=task,
        filters=filter_grads,
        filter_bias=bias_grads,
        head_w=head_w_grads,
        head_b=head_b_grads,
        emb_rows=emb_rows,
        emb_grad=emb_grad,
    )


@dataclass
class OptimizerState:
    """Adadelta accumulators, keyed by parameter-array name; lazy allocation."""

    acc_grad: dict[str, np.ndarray] = field(default_factory=dict)
    acc_update: dict[str, np.ndarray] = field(default_factory=dict)

    def slot(self, name: str, shape, dtype) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.acc_grad:
            self.acc_grad[name] = np.zeros(shape, dtype=dtype)
            self.acc_update[name] = np.zeros(shape, dtype=dtype)
        return self.acc_grad[name], self.acc_update[name]


def _check_finite(name: str, grad: np.ndarray) -> None:
    if not np.isfinite(grad).all():
        raise FloatingPointError(
            f"non-finite gradient in {name}; training diverged (inspect learning "
            "rate and inputs)"
        )


def _adadelta_update(param, grad, acc_g, acc_u, lr, where=None):
    """In-place Adadelta on `param`, restricted to `where` rows if given."""
    if where is None:
        acc_g *= _ADADELTA_DECAY
        acc_g += (1.0 - _ADADELTA_DECAY) * grad * grad
        delta = -np.sqrt((acc_u + _ADADELTA_EPS) / (acc_g + _ADADELTA_EPS)) * grad
        acc_u *= _ADADELTA_DECAY
        acc_u += (1.0 - _ADADELTA_DECAY) * delta * delta
        param += lr * delta
    else:
        ag = acc_g[where]
        ag = _ADADELTA_DECAY * ag + (1.0 - _ADADELTA_DECAY) * grad * grad
        delta = -np.sqrt((acc_u[where] + _ADADELTA_EPS) / (ag + _ADADELTA_EPS)) * grad
        acc_g[where] = ag
        acc_u[where] = _ADADELTA_DECAY * acc_u[where] + (1.0 - _ADADELTA_DECAY) * delta * delta
        param[where] += lr * delta


def step(
    params: ModelParams,
    grads: Gradients,
    state: OptimizerState,
    learning_rate: float = 1.0,
    optimizer: str = ADADELTA,
) -> None:
    """Apply one update in place, skipping parameter groups with zero gradient.

    Adadelta uses decay 0.95 and epsilon 1e-6; SGD is kept for the
    gradient-check harness. The PAD embedding row is forced back to zero.
    """
    if optimizer not in (ADADELTA, SGD):
        raise ValueError(f"unknown optimizer '{optimizer}'")
    dtype = params.dtype
    lr = dtype.type(learning_rate)
    groups: list[tuple[str, np.ndarray, np.ndarray]] = []
    for h in params.filters:
        groups.append((f"filters_{h}", params.filters[h], grads.filters[h]))
        groups.append((f"filter_bias_{h}", params.filter_bias[h], grads.filter_bias[h]))
    for t in range(len(params.head_w)):
        groups.append((f"head_w_{t}", params.head_w[t], grads.head_w[t]))
        groups.append((f"head_b_{t}", params.head_b[t], grads.head_b[t]))
    for name, param, grad in groups:
        if not np.any(grad):
            continue
        _check_finite(name, grad)
        if optimizer == SGD:
            param -= lr * grad
        else:
            acc_g, acc_u = state.slot(name, param.shape, dtype)
            _adadelta_update(param, grad, acc_g, acc_u, lr)
    if grads.emb_rows is not None and grads.emb_rows.size:
        _check_finite("embedding", grads.emb_grad)
        table = params.embedding.vectors
        if optimizer == SGD:
            table[grads.emb_rows] -= lr * grads.emb_grad
        else:
            acc_g, acc_u = state.slot("embedding", table.shape, dtype)
            _adadelta_update(table, grads.emb_grad, acc_g, acc_u, lr, where=grads.emb_rows)
        table[PAD_INDEX] = 0.0


def predict_index(params: ModelParams, config: ModelConfig, ids: np.ndarray, task: int) -> int:
    """Argmax class index; ties break toward the lowest index."""
    probs, _ = forward(params, config, ids, task, training=False)
    return int(np.argmax(probs))


def predict(params: ModelParams, config: ModelConfig, ids: np.ndarray, task: int) -> DebtLabel:
    """Predicted debt label for the five-class schema."""
    return label_for_class(predict_index(params, config, ids, task))


@dataclass
class ModelBundle:
    """A trained model with the config and vocabulary needed to apply it."""

    params: ModelParams
    config: ModelConfig
    vocab: Vocab

    def predict_tokens(self, tokens: Sequence[str], task: int) -> tuple[int, np.ndarray]:
        """Encode tokens and return (class index, class probabilities)."""
        from .embedding import encode

        ids, _ = encode(tokens, self.vocab, self.config.max_len)
        probs, _ = forward(self.params, self.config, ids, task, training=False)
        return int(np.argmax(probs)), probs


def _array_table(params: ModelParams, config: ModelConfig):
    """Declared array order for checkpoint serialization."""
    table = [("embedding", params.embedding.vectors)]
    for h in config.region_sizes:
        table.append((f"filters_{h}", params.filters[h]))
        table.append((f"filter_bias_{h}", params.filter_bias[h]))
    for t in range(config.num_tasks):
        table.append((f"head_w_{t}", params.head_w[t]))
        table.append((f"head_b_{t}", params.head_b[t]))
    return table


def _vocab_bytes(vocab: Vocab) -> bytes:
    return ("\n".join(vocab.index_to_word) + "\n").encode("utf-8")


def save_checkpoint(params: ModelParams, config: ModelConfig, vocab: Vocab, path: str | Path) -> None:
    """Write manifest.json, weights.bin, and vocab.txt into a directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    table = _array_table(params, config)
    entries = []
    offset = 0
    with open(path / "weights.bin", "wb") as fh:
        for name, arr in table:
            data = np.ascontiguousarray(arr).tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            fh.write(data)
            offset += len(data)
    vocab_data = _vocab_bytes(vocab)
    (path / "vocab.txt").write_bytes(vocab_data)
    manifest = {
        "format": "satdkit-checkpoint",
        "config": config.to_json(),
        "class_order": [lb.value for lb in DebtLabel],
        "dtype": np.dtype(params.dtype).str,
        "embedding_dim": params.embedding.dim,
        "vocab_sha256": hashlib.sha256(vocab_data).hexdigest(),
        "arrays": entries,
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


class CheckpointError(ValueError):
    """Raised when a checkpoint directory is inconsistent or corrupt."""


def load_checkpoint(path: str | Path) -> ModelBundle:
    """Load and validate a checkpoint directory written by save_checkpoint."""
    path = Path(path)
    with open(path / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "satdkit-checkpoint":
        raise CheckpointError(f"{path}: not a satdkit checkpoint")
    config = ModelConfig.from_json(manifest["config"])
    dtype = np.dtype(manifest["dtype"])
    dim = int(manifest["embedding_dim"])
    vocab_data = (path / "vocab.txt").read_bytes()
    if hashlib.sha256(vocab_data).hexdigest() != manifest["vocab_sha256"]:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    words = vocab_data.decode("utf-8").splitlines()
    vocab = Vocab(
        word_to_index={w: i for i, w in enumerate(words)},
        index_to_word=words,
    )
    expected: dict[str, tuple[int, ...]] = {"embedding": (len(vocab), dim)}
    m = config.feature_maps
    for h in config.region_sizes:
        expected[f"filters_{h}"] = (m, h, dim)
        expected[f"filter_bias_{h}"] = (m,)
    for t in range(config.num_tasks):
        expected[f"head_w_{t}"] = (config.num_classes, config.feature_len)
        expected[f"head_b_{t}"] = (config.num_classes,)
    blob = (path / "weights.bin").read_bytes()
    arrays: dict[str, np.ndarray] = {}
    total = 0
    for entry in manifest["arrays"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected array '{name}' in manifest")
        if shape != expected[name]:
            raise CheckpointError(
                f"{path}: array '{name}' has shape {shape}, expected {expected[name]}"
            )
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        offset = int(entry["offset"])
        if offset != total:
            raise CheckpointError(f"{path}: array '{name}' offset mismatch")
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: weights.bin is truncated at '{name}'")
        arrays[name] = np.frombuffer(
            blob, dtype=dtype, count=count, offset=offset
        ).reshape(shape).copy()
        total += nbytes
    if total != len(blob):
        raise CheckpointError(f"{path}: weights.bin has {len(blob) - total} trailing bytes")
    missing = set(expected) - set(arrays)
    if missing:
        raise CheckpointError(f"{path}: manifest is missing arrays {sorted(missing)}")
    embedding = EmbeddingMatrix(arrays["embedding"], dim=dim, mode=config.embedding_mode)
    params = ModelParams(
        filters={h: arrays[f"filters_{h}"] for h in config.region_sizes},
        filter_bias={h: arrays[f"filter_bias_{h}"] for h in config.region_sizes},
        head_w=[arrays[f"head_w_{t}"] for t in range(config.num_tasks)],
        head_b=[arrays[f"head_b_{t}"] for t in range(config.num_tasks)],
        embedding=embedding,
    )
    return ModelBundle(params=params, config=config, vocab=vocab)
