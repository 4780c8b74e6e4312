"""Train the desk-scale model and check the acceptance thresholds; run with --run-slow.

Same scale as ``scripts/desk_acceptance.py``: 32 training and 8 held-out
speakers, a width-64 model and 20k iterations. Expect tens of minutes on CPU.
"""
from __future__ import annotations

import warnings

import numpy as np
import pytest
import torch

import stablevc as svc
from stablevc.evalkit import BENCH_STEPS, duration_mae
from stablevc.synthcorpus import STYLE_CLASSES

pytestmark = pytest.mark.slow

TRAIN_SPEAKERS = tuple(range(32))
HELDOUT_SPEAKERS = tuple(range(32, 40))
PER_CELL = 4
ITERATIONS = 20_000
EVAL_CASES = 100
BENCH_CASES = 20


@pytest.fixture(scope="module")
def desk_run():
    torch.set_num_threads(1)
    corpus = svc.build_corpus(TRAIN_SPEAKERS, STYLE_CLASSES, PER_CELL, seed=0)
    heldout = svc.build_corpus(HELDOUT_SPEAKERS, STYLE_CLASSES, PER_CELL, seed=0, split="heldout")
    features = np.concatenate([u.ssl_features for u in corpus])
    codebook = svc.fit_kmeans(features, corpus.config.vocab_size, seed=0)
    torch.manual_seed(0)
    model = svc.StableVcModel(svc.ModelConfig.from_corpus(corpus, width=64), codebook)
    config = svc.TrainConfig(iterations=ITERATIONS, lr=5e-4, batch_size=8, log_every=1000)
    result = svc.train(model, corpus, config)
    return corpus, heldout, result


@pytest.fixture(scope="module")
def heldout_report(desk_run):
    corpus, heldout, result = desk_run
    cases = svc.make_eval_cases(heldout, EVAL_CASES, seed=0)
    return svc.evaluate_conversions(
        result.model, cases, svc.content_mean(corpus), heldout.speakers, n_steps=10
    ).summary


@pytest.fixture(scope="module")
def bench_rows(desk_run):
    corpus, heldout, result = desk_run
    cases = svc.make_eval_cases(heldout, BENCH_CASES, seed=1)
    table = svc.bench_steps(result.model, cases, svc.content_mean(corpus), heldout.speakers, step_list=BENCH_STEPS)
    return {row["steps"]: row for row in table.sort("steps").iter_rows(named=True)}


def test_flow_loss_decreases(desk_run) -> None:
    _, _, result = desk_run
    smoothed = result.smoothed("cfm", window=200).to_numpy()
    assert smoothed[-1] < result.history.get_column("cfm")[0]
    assert smoothed[-1] < smoothed[199]


def test_durations_on_heldout_speakers(desk_run) -> None:
    _, heldout, result = desk_run
    assert duration_mae(result.model, heldout, rate=1.0) <= 1.0


def test_reconstruction_keeps_timbre(desk_run) -> None:
    corpus, _, result = desk_run
    mean = svc.content_mean(corpus)
    cosines = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for utt in corpus.utterances[::32]:
            mel = svc.convert(result.model, utt, [utt], utt, n_steps=10)
            cosines.append(svc.timbre_similarity(mel, corpus.speakers[utt.speaker_id], mean).cosine)
    assert np.median(cosines) > 0.8


def test_timbre_follows_target(heldout_report) -> None:
    assert heldout_report["timbre_target_closer_rate"] >= 0.9


def test_pitch_follows_style_reference(heldout_report) -> None:
    assert heldout_report["pitch_corr_median"] > 0.6


def test_style_swap(heldout_report) -> None:
    assert heldout_report["swap_follows_rate"] >= 0.8
    assert heldout_report["swap_timbre_drop_mean"] < 0.1


def test_ten_steps_beat_one(bench_rows) -> None:
    assert bench_rows[10]["timbre_cosine"] >= bench_rows[1]["timbre_cosine"]
    assert bench_rows[10]["proxy_loss"] <= bench_rows[1]["proxy_loss"]


def test_frame_time_grows_with_steps(bench_rows) -> None:
    seconds = [bench_rows[n]["seconds_per_frame"] for n in BENCH_STEPS]
    assert all(a < b for a, b in zip(seconds, seconds[1:]))
