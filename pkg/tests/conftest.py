from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch

import stablevc as svc
from stablevc.synthcorpus import STYLE_CLASSES

REPO_ROOT = Path(__file__).resolve().parents[1]

SMALL_SPEAKERS = (0, 1, 2, 3)
SMALL_PER_CELL = 2
CORPUS_SEED = 7


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--run-slow", action="store_true", default=False, help="run desk-scale training tests")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run; pass --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def package_module():
    return svc


@pytest.fixture(scope="session")
def synth_config() -> svc.SynthConfig:
    return svc.SynthConfig()


@pytest.fixture(scope="session")
def small_corpus() -> svc.Corpus:
    return svc.build_corpus(SMALL_SPEAKERS, STYLE_CLASSES, SMALL_PER_CELL, seed=CORPUS_SEED)


@pytest.fixture(scope="session")
def heldout_corpus() -> svc.Corpus:
    return svc.build_corpus((10, 11, 12), STYLE_CLASSES, 1, seed=CORPUS_SEED, split="heldout")


@pytest.fixture(scope="session")
def small_codebook(small_corpus: svc.Corpus) -> svc.Codebook:
    features = np.concatenate([u.ssl_features for u in small_corpus])
    return svc.fit_kmeans(features, small_corpus.config.vocab_size, seed=0)


@pytest.fixture(scope="session")
def tiny_config(small_corpus: svc.Corpus) -> svc.ModelConfig:
    return svc.ModelConfig.from_corpus(small_corpus, width=16, heads=4, content_depth=1, flow_depth=2)


@pytest.fixture
def tiny_model(tiny_config: svc.ModelConfig, small_codebook: svc.Codebook) -> svc.StableVcModel:
    torch.manual_seed(0)
    return svc.StableVcModel(tiny_config, small_codebook).eval()
