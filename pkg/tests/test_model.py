from __future__ import annotations

import numpy as np
import polars as pl
import pytest
import torch

from stablevc.model import (
    ModelConfig,
    StableVcModel,
    TrainConfig,
    convert,
    convert_detailed,
    draw_refs,
    predict_durations,
    reconstruct,
    total_loss,
    train,
)


def _pair(corpus, speaker_id: int):
    utts = corpus.by_speaker(speaker_id)
    return utts[0], utts[1]


def test_loss_components_add_up(tiny_model, small_corpus) -> None:
    a, a_ref = _pair(small_corpus, 0)
    b, b_ref = _pair(small_corpus, 1)
    config = TrainConfig(lambda_grl=0.25)
    total, parts = total_loss(tiny_model, [a, b], [[a_ref], [b_ref]], config, torch.Generator().manual_seed(0))
    assert set(parts) == {"cfm", "dur", "grl"}
    for value in parts.values():
        assert value.item() >= 0
    expected = parts["cfm"] + parts["dur"] + 0.25 * parts["grl"]
    assert total.item() == pytest.approx(expected.item(), rel=1e-6)


def test_zero_lambda_drops_grl_term(tiny_model, small_corpus) -> None:
    utt, ref = _pair(small_corpus, 2)
    total, parts = total_loss(tiny_model, utt, [ref], TrainConfig(lambda_grl=0.0), torch.Generator().manual_seed(1))
    assert total.item() == pytest.approx((parts["cfm"] + parts["dur"]).item(), rel=1e-6)
    assert parts["grl"].item() > 0


def test_untrained_duration_loss_is_mean_squared_log_duration(tiny_model, small_corpus) -> None:
    utt, ref = _pair(small_corpus, 0)
    _, parts = total_loss(tiny_model, utt, [ref], generator=torch.Generator().manual_seed(0))
    _, durations = tiny_model.tokens(utt)
    assert parts["dur"].item() == pytest.approx(float(np.mean(np.log(durations) ** 2)), rel=1e-5)


def test_references_must_match_speaker(tiny_model, small_corpus) -> None:
    utt = small_corpus.by_speaker(0)[0]
    other = small_corpus.by_speaker(1)[0]
    with pytest.raises(ValueError, match="is from speaker 1"):
        total_loss(tiny_model, utt, [other])
    with pytest.raises(ValueError, match="no timbre references"):
        total_loss(tiny_model, [utt], [[]])


def test_draw_refs_excludes_self() -> None:
    rng = np.random.default_rng(0)

    class _Utt:
        def __init__(self, utt_id: str):
            self.utt_id = utt_id

    group = [_Utt(f"u{i}") for i in range(5)]
    for _ in range(20):
        refs = draw_refs(rng, group[0], group, max_refs=3)
        assert 1 <= len(refs) <= 3
        assert all(r.utt_id != "u0" for r in refs)
    assert draw_refs(rng, group[0], group, multi_ref=False) == [group[0]]
    assert draw_refs(rng, group[0], group[:1]) == [group[0]]


def test_zero_iterations_leave_parameters(tiny_model, small_corpus) -> None:
    before = {k: v.clone() for k, v in tiny_model.state_dict().items()}
    result = train(tiny_model, small_corpus, TrainConfig(iterations=0))
    assert result.history.height == 0
    for key, value in result.model.state_dict().items():
        assert torch.equal(value, before[key]), key


def _short_run(tiny_config, small_codebook, small_corpus) -> pl.DataFrame:
    torch.manual_seed(0)
    model = StableVcModel(tiny_config, small_codebook)
    config = TrainConfig(iterations=3, batch_size=4, lr=1e-3, seed=11, log_every=0)
    return train(model, small_corpus, config).history


def test_training_is_reproducible(tiny_config, small_codebook, small_corpus) -> None:
    first = _short_run(tiny_config, small_codebook, small_corpus)
    second = _short_run(tiny_config, small_codebook, small_corpus)
    assert first.columns == ["iteration", "total", "cfm", "dur", "grl"]
    assert first.height == 3
    assert first.equals(second)


def test_training_updates_parameters(tiny_model, small_corpus) -> None:
    before = tiny_model.flow.out.weight.detach().clone()
    result = train(tiny_model, small_corpus, TrainConfig(iterations=2, batch_size=2, lr=1e-2, log_every=0))
    assert not torch.equal(result.model.flow.out.weight, before)
    assert not result.model.training


def test_conversion_length_is_sum_of_durations(tiny_model, small_corpus, heldout_corpus) -> None:
    source = small_corpus.by_speaker(0)[0]
    refs = heldout_corpus.by_speaker(10)[:2]
    out = convert_detailed(tiny_model, source, refs, small_corpus.by_speaker(1)[0], n_steps=2)
    assert out.mel.n_frames == int(out.durations.sum())
    assert out.mel.frames.shape[1] == small_corpus.config.n_mels
    assert len(out.token_ids) == len(out.durations)
    assert np.all(out.durations >= 1)
    assert np.all(np.isfinite(out.mel.frames))


def test_conversion_is_seeded(tiny_model, small_corpus) -> None:
    source = small_corpus.by_speaker(0)[0]
    refs = small_corpus.by_speaker(1)[:1]
    style = small_corpus.by_speaker(2)[0]
    a = convert(tiny_model, source, refs, style, n_steps=3, seed=5)
    b = convert(tiny_model, source, refs, style, n_steps=3, seed=5)
    c = convert(tiny_model, source, refs, style, n_steps=3, seed=6)
    assert np.array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)


def test_untrained_conversion_ignores_style(tiny_model, small_corpus) -> None:
    source = small_corpus.by_speaker(0)[0]
    refs = small_corpus.by_speaker(1)[:1]
    one = convert(tiny_model, source, refs, small_corpus.by_speaker(2)[0], n_steps=2)
    other = convert(tiny_model, source, refs, small_corpus.by_speaker(3)[-1], n_steps=2)
    assert np.array_equal(one.frames, other.frames)
    assert tiny_model.gates() == [0.0] * tiny_model.config.flow_depth


def test_conversion_with_guidance(tiny_model, small_corpus) -> None:
    source = small_corpus.by_speaker(0)[0]
    refs = small_corpus.by_speaker(1)[:1]
    out = convert(tiny_model, source, refs, source, n_steps=2, guidance_scale=2.0)
    assert np.all(np.isfinite(out.frames))


@pytest.mark.parametrize(
    "refs_fn,match",
    [
        (lambda corpus: [], "at least one timbre reference"),
        (lambda corpus: [corpus.by_speaker(0)[0], corpus.by_speaker(1)[0]], "share one speaker"),
    ],
)
def test_conversion_reference_checks(tiny_model, small_corpus, refs_fn, match: str) -> None:
    source = small_corpus.by_speaker(0)[0]
    with pytest.raises(ValueError, match=match):
        convert(tiny_model, source, refs_fn(small_corpus), source)


def test_reconstruct_keeps_source_length(tiny_model, small_corpus) -> None:
    utt = small_corpus.by_speaker(3)[0]
    mel = reconstruct(tiny_model, utt, n_steps=2)
    assert mel.n_frames == utt.n_frames


def test_ablations(tiny_config, small_codebook, small_corpus) -> None:
    config = ModelConfig(
        **{**tiny_config.__dict__, "use_prior": False, "use_gate": False, "use_duration": False}
    )
    torch.manual_seed(0)
    model = StableVcModel(config, small_codebook).eval()
    assert model.gates() == [1.0] * config.flow_depth

    utt = small_corpus.by_speaker(0)[0]
    timbre = model.timbre_reference([[utt]])
    assert timbre.prior_vp is None

    out = convert_detailed(model, utt, [utt], utt, n_steps=1)
    assert out.mel.n_frames == utt.n_frames
    assert np.all(out.durations == 1)
    assert out.log_durations is None

    _, parts = total_loss(model, utt, [utt])
    assert parts["dur"].item() == 0.0
    with pytest.raises(ValueError, match="without a duration predictor"):
        predict_durations(model, utt, [utt], utt)


def test_speaker_table(tiny_model) -> None:
    assert tiny_model.speaker_index(3) == 3
    with pytest.raises(ValueError, match="speaker table"):
        tiny_model.speaker_index(99)


@pytest.mark.parametrize(
    "overrides",
    [{"width": 10, "heads": 4}, {"flow_depth": 0}, {"n_speakers": 2, "speaker_ids": (1, 2, 3)}],
)
def test_model_config_validation(overrides: dict) -> None:
    with pytest.raises(ValueError):
        ModelConfig(**overrides)


def test_codebook_shape_checked(tiny_config) -> None:
    from stablevc.contenttok import Codebook

    with pytest.raises(ValueError, match="codebook is"):
        StableVcModel(tiny_config, Codebook(np.zeros((3, tiny_config.content_dim))))


@pytest.mark.parametrize("bad", [{"lr": 0.0}, {"cond_dropout": 1.0}, {"batch_size": 0}, {"iterations": -1}])
def test_train_config_validation(bad: dict) -> None:
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_config_must_be_known_type() -> None:
    with pytest.raises(TypeError, match="config must be"):
        StableVcModel(config=[1, 2])


def test_predicted_durations_align_with_tokens(tiny_model, small_corpus) -> None:
    utt = small_corpus.by_speaker(1)[0]
    predicted, true = predict_durations(tiny_model, utt, small_corpus.by_speaker(1)[1:], utt)
    assert predicted.shape == true.shape
    assert int(true.sum()) == utt.n_frames
    assert np.all(predicted == 1)
