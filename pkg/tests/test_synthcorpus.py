from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import polars as pl
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablevc.errors import CorpusError, MelbFormatError
from stablevc.synthcorpus import (
    MELB_MAGIC,
    RATES,
    STYLE_CLASSES,
    SynthConfig,
    build_corpus,
    content_mean,
    cosine_similarity,
    derive_seed,
    draw_units,
    ground_truth_pitch,
    ground_truth_timbre,
    make_speaker,
    make_style,
    pitch_bin_position,
    read_corpus,
    read_melb,
    render_utterance,
    speaker_from_tau,
    unit_durations,
    unit_patterns,
    write_corpus,
    write_melb,
)


def _units(seed: int, config: SynthConfig | None = None) -> list[tuple[int, int]]:
    return draw_units(np.random.default_rng(seed), config or SynthConfig())


def test_make_speaker_is_deterministic() -> None:
    a = make_speaker(11)
    b = make_speaker(11)
    np.testing.assert_array_equal(a.tau, b.tau)
    np.testing.assert_array_equal(a.envelope, b.envelope)
    assert np.all(np.abs(a.tau) <= 1.0)


def test_zero_tau_gives_zero_envelope() -> None:
    speaker = speaker_from_tau(np.zeros(8))
    np.testing.assert_array_equal(speaker.envelope, np.zeros(32))


def test_envelope_matches_sinusoid_sum() -> None:
    speaker = make_speaker(1)
    expected = np.zeros(32)
    for m in range(32):
        expected[m] = 0.5 * sum(speaker.tau[j] * math.sin(math.pi * (j + 1) * (m + 0.5) / 32) for j in range(8))
    np.testing.assert_allclose(speaker.envelope, expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize(
    "style_class,u,expected",
    [
        ("flat", 0.0, 180.0),
        ("flat", 0.7, 180.0),
        ("rising", 1.0, 240.0),
        ("rising", 0.0, 120.0),
        ("falling", 1.0, 120.0),
        ("slow_osc", 0.25, 240.0),
        ("fast_osc", 0.5, 180.0 + 60.0 * math.sin(3.0 * math.pi)),
    ],
)
def test_style_contours(style_class: str, u: float, expected: float) -> None:
    assert make_style(style_class, 1.0).f0_fn(u) == pytest.approx(expected)


def test_make_style_rejects_unknown_class_and_rate() -> None:
    with pytest.raises(ValueError, match="style_class"):
        make_style("whisper", 1.0)
    with pytest.raises(ValueError, match="rate"):
        make_style("flat", 1.1)


@settings(max_examples=50, deadline=None)
@given(style_class=st.sampled_from(STYLE_CLASSES), u=st.floats(0.0, 1.0))
def test_contours_stay_in_pitch_range(style_class: str, u: float) -> None:
    f0 = float(make_style(style_class).f0_fn(u))
    assert 100.0 <= f0 <= 400.0


def test_single_unit_with_zero_tau_renders_pattern() -> None:
    config = SynthConfig()
    speaker = speaker_from_tau(np.zeros(8))
    utt = render_utterance(speaker, make_style("flat"), [(5, 4)], config, noise=False)
    expected = np.broadcast_to(unit_patterns(config)[5].astype(np.float32), (utt.n_frames, 32))
    np.testing.assert_array_equal(utt.mel.frames[:, :32], expected)


def test_flat_style_bump_position() -> None:
    config = SynthConfig()
    kappa = float(pitch_bin_position(180.0, config))
    assert kappa == pytest.approx(32 + 8 * math.log2(1.8) / 2)
    assert kappa == pytest.approx(35.39, abs=0.01)

    utt = render_utterance(make_speaker(3), make_style("flat"), _units(0), config, noise=False)
    band = utt.mel.frames[:, 32:]
    assert np.all(band.argmax(axis=1) == 3)
    assert np.all(utt.style_features.argmax(axis=1) == round(kappa) - 32)
    assert np.all(utt.style_features.sum(axis=1) == 1.0)


def test_duration_law_and_rate() -> None:
    units = _units(4)
    speaker = make_speaker(2)
    lengths = {}
    for rate in RATES:
        utt = render_utterance(speaker, make_style("rising", rate), units, noise=False)
        assert utt.n_frames == sum(max(1, round(d / rate)) for _, d in units)
        lengths[rate] = utt.n_frames
    assert lengths[0.8] >= lengths[1.0] >= lengths[1.25]


def test_render_rejects_bad_units() -> None:
    speaker = make_speaker(0)
    with pytest.raises(ValueError, match="at least one unit"):
        render_utterance(speaker, make_style("flat"), [])
    with pytest.raises(ValueError, match="unit_id"):
        render_utterance(speaker, make_style("flat"), [(64, 3)])
    with pytest.raises(ValueError, match="base_duration"):
        render_utterance(speaker, make_style("flat"), [(1, 9)])


@pytest.mark.parametrize("style_class", STYLE_CLASSES)
def test_pitch_readout_recovers_contour(style_class: str) -> None:
    utt = render_utterance(make_speaker(5), make_style(style_class), _units(1), noise=False)
    readout = ground_truth_pitch(utt.mel)
    np.testing.assert_allclose(readout, utt.f0_contour, atol=2.0)


def test_pitch_readout_rising_is_monotone() -> None:
    utt = render_utterance(make_speaker(5), make_style("rising"), _units(2), noise=False)
    readout = ground_truth_pitch(utt.mel)
    assert np.all(np.diff(readout) >= -0.5)


def test_pitch_readout_marks_silent_frames_unvoiced() -> None:
    mel = np.zeros((3, 40))
    mel[1, 35] = 1.0
    readout = ground_truth_pitch(mel)
    assert math.isnan(readout[0]) and math.isnan(readout[2])
    assert readout[1] == pytest.approx(100.0 * 2 ** (3 * 2 / 8))


def _long_units(seed: int, n_units: int = 40) -> list[tuple[int, int]]:
    rng = np.random.default_rng(seed)
    ids = rng.permutation(64)[:n_units]
    return [(int(v), int(unit_durations(SynthConfig())[v])) for v in ids]


def test_timbre_readout_of_zero_tau_is_near_zero() -> None:
    utt = render_utterance(speaker_from_tau(np.zeros(8)), make_style("flat"), _long_units(0), seed=3)
    assert utt.n_frames >= 50
    tau_hat = ground_truth_timbre(utt.mel, utt.ssl_features.mean(axis=0))
    np.testing.assert_allclose(tau_hat, 0.0, atol=0.05)


def test_timbre_readout_recovers_tau() -> None:
    speaker = make_speaker(9)
    utt = render_utterance(speaker, make_style("slow_osc"), _long_units(1), noise=False)
    assert utt.n_frames >= 100
    tau_hat = ground_truth_timbre(utt.mel, utt.ssl_features.mean(axis=0))
    assert cosine_similarity(tau_hat, speaker.tau) > 0.95


def test_timbre_readout_separates_speakers(small_corpus) -> None:
    config = SynthConfig()
    mean = content_mean(small_corpus)
    wins = 0
    for trial in range(100):
        rng = np.random.default_rng([trial, 99])
        a = make_speaker(derive_seed(trial, 0))
        b = make_speaker(derive_seed(trial, 1))
        styles = rng.choice(STYLE_CLASSES, size=3)
        a1, a2, b1 = (
            render_utterance(spk, make_style(str(style)), draw_units(rng, config), config, seed=derive_seed(trial, k))
            for k, (spk, style) in enumerate(zip((a, a, b), styles))
        )
        t_a1 = ground_truth_timbre(a1.mel, mean)
        same = cosine_similarity(t_a1, ground_truth_timbre(a2.mel, mean))
        cross = cosine_similarity(t_a1, ground_truth_timbre(b1.mel, mean))
        wins += same > cross
    assert wins >= 95


def test_drawn_units_have_distinct_neighbours() -> None:
    config = SynthConfig()
    rng = np.random.default_rng(0)
    for _ in range(50):
        units = draw_units(rng, config)
        ids = [u for u, _ in units]
        assert all(x != y for x, y in zip(ids, ids[1:]))
        assert config.min_units <= len(units) <= config.max_units
        assert all(config.min_duration <= d <= config.max_duration for _, d in units)


def test_build_corpus_is_bit_identical_across_runs() -> None:
    a = build_corpus([0, 1], ("flat", "rising"), 2, seed=5)
    b = build_corpus([0, 1], ("flat", "rising"), 2, seed=5)
    assert len(a) == len(b) == 8
    for x, y in zip(a, b):
        assert x.utt_id == y.utt_id
        assert x.rate == y.rate
        np.testing.assert_array_equal(x.mel.frames, y.mel.frames)
        np.testing.assert_array_equal(x.ssl_features, y.ssl_features)


def test_build_corpus_validates_arguments() -> None:
    with pytest.raises(ValueError, match="speaker"):
        build_corpus([], STYLE_CLASSES, 1)
    with pytest.raises(ValueError, match="per_cell"):
        build_corpus([0], STYLE_CLASSES, 0)
    with pytest.raises(ValueError, match="style class"):
        build_corpus([0], ("shouting",), 1)


def test_corpus_get_unknown_id(small_corpus) -> None:
    with pytest.raises(CorpusError, match="unknown utterance"):
        small_corpus.get("nope")


def test_melb_round_trip_and_header(tmp_path: Path) -> None:
    matrix = np.arange(12, dtype=np.float32).reshape(3, 4) / 7.0
    path = tmp_path / "m.melb"
    write_melb(path, matrix)
    raw = path.read_bytes()
    assert raw[:4] == MELB_MAGIC
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 3
    assert int.from_bytes(raw[12:16], "little") == 4
    assert len(raw) == 16 + 4 * 12
    np.testing.assert_array_equal(read_melb(path), matrix)


@pytest.mark.parametrize(
    "mutate,match",
    [
        (lambda raw: b"MELX" + raw[4:], "magic"),
        (lambda raw: raw[:4] + (2).to_bytes(4, "little") + raw[8:], "version"),
        (lambda raw: raw[:-3], "bytes"),
        (lambda raw: raw[:10], "too short"),
    ],
)
def test_melb_rejects_malformed_files(tmp_path: Path, mutate, match: str) -> None:
    path = tmp_path / "m.melb"
    write_melb(path, np.ones((2, 3), dtype=np.float32))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(MelbFormatError, match=match):
        read_melb(path)


def test_write_and_read_corpus(tmp_path: Path) -> None:
    corpus = build_corpus([0, 1, 2], ("flat", "falling"), 2, seed=1)
    manifest = write_corpus(corpus, tmp_path)
    rows = pl.read_ndjson(manifest)
    assert rows.height == 3 * 2 * 2
    assert set(rows.columns) == {"utt_id", "speaker_id", "style_class", "rate", "paths"}
    assert json.loads((tmp_path / "corpus.json").read_text())["config"]["n_mels"] == 40

    loaded = read_corpus(tmp_path)
    assert loaded.speaker_ids == [0, 1, 2]
    for original, restored in zip(corpus, loaded):
        assert restored.utt_id == original.utt_id
        assert restored.style_class == original.style_class
        np.testing.assert_array_equal(restored.mel.frames, original.mel.frames)
        np.testing.assert_array_equal(restored.token_ids, original.token_ids)
        np.testing.assert_array_equal(restored.style_features, original.style_features)
        np.testing.assert_allclose(restored.tau, original.tau)


def test_heldout_split_gets_its_own_manifest(tmp_path: Path) -> None:
    write_corpus(build_corpus([0], ("flat",), 1, seed=1), tmp_path)
    write_corpus(build_corpus([5], ("flat",), 1, seed=1, split="heldout"), tmp_path)
    assert pl.read_ndjson(tmp_path / "manifest.ndjson").height == 1
    assert read_corpus(tmp_path, split="heldout").speaker_ids == [5]


def test_read_corpus_reports_missing_files(tmp_path: Path) -> None:
    with pytest.raises(CorpusError, match="missing corpus file"):
        read_corpus(tmp_path)


def test_cosine_of_zero_vector_is_nan() -> None:
    assert math.isnan(cosine_similarity(np.zeros(3), np.ones(3)))
    assert cosine_similarity(np.ones(3), 2 * np.ones(3)) == pytest.approx(1.0)
