"""Shared fixtures. The trained planted-trigger model is session-scoped
because several suites (training oracle, keyword recovery, acceptance) share
one training run."""

from __future__ import annotations

import time
from types import SimpleNamespace

import pytest

from satdkit.embedding import build_vocab, random_init
from satdkit.model import ModelConfig
from satdkit.train_eval import TrainConfig, train_multitask

from synthcorpus import planted_multisource

PLANTED_SEED = 3
PLANTED_EPOCHS = 5


@pytest.fixture(scope="session")
def planted_setup():
    """2,000 records per source, 10% SATD, trained for 5 epochs."""
    corpora = planted_multisource(n_per_source=2000, satd_fraction=0.10, seed=PLANTED_SEED)
    vocab = build_vocab(corpora)
    model_config = ModelConfig(
        region_sizes=(1, 2, 3),
        feature_maps=20,
        num_tasks=4,
        num_classes=5,
        dropout_rate=0.2,
        embedding_mode="non_static",
        max_len=24,
    )
    train_config = TrainConfig(epochs=PLANTED_EPOCHS, seed=11, model=model_config)
    embedding = random_init(vocab, dim=32, seed=11, mode="non_static")
    started = time.monotonic()
    bundle, train_log = train_multitask(corpora, train_config, vocab, embedding)
    seconds = time.monotonic() - started
    return SimpleNamespace(
        corpora=corpora,
        bundle=bundle,
        train_log=train_log,
        train_seconds=seconds,
        epochs=PLANTED_EPOCHS,
        steps_per_epoch=sum(len(c) for c in corpora),
    )
