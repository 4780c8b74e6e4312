"""DTW alignment, pitch and timbre metrics, held-out conversion grids and step benchmarks."""
from __future__ import annotations

import logging
import math
import statistics
import time
import warnings
from dataclasses import dataclass
from typing import Any, Literal, Sequence

import numpy as np
import polars as pl

from stablevc.errors import CorpusError
from stablevc.model import StableVcModel, convert, predict_durations, reconstruct
from stablevc.synthcorpus import (
    MIN_TIMBRE_FRAMES,
    Corpus,
    MelSpectrogram,
    SpeakerSpec,
    SynthConfig,
    Utterance,
    cosine_similarity,
    ground_truth_pitch,
    ground_truth_timbre,
)

logger = logging.getLogger(__name__)

BENCH_STEPS: tuple[int, ...] = (1, 2, 5, 10, 20)


@dataclass
class AlignedPair:
    path: list[tuple[int, int]]
    cost: float


def dtw_align(
    a: Sequence[float],
    b: Sequence[float],
    metric: Literal["abs", "squared"] = "abs",
) -> AlignedPair:
    """Minimal-cost monotone alignment, by default under local distance ``|a_i - b_j|``.

    Backtracking prefers the diagonal step, then advancing ``a``, then
    advancing ``b``.

    Parameters
    ----------
    a, b : sequence of float
        Non-empty sequences.
    metric : {"abs", "squared"}
        Local distance. ``"squared"`` uses ``(a_i - b_j) ** 2``, which makes
        the path minimise the summed squared error.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise ValueError("dtw_align needs two non-empty sequences")

    if metric not in ("abs", "squared"):
        raise ValueError(f"metric must be 'abs' or 'squared', got {metric!r}")
    local = np.abs(a[:, None] - b[None, :])
    if metric == "squared":
        local = local**2
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = local[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])

    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        # candidates in tie-break order
        steps = ((i - 1, j - 1), (i - 1, j), (i, j - 1))
        i, j = min(steps, key=lambda s: acc[s])
        path.append((i - 1, j - 1))
    path.reverse()
    return AlignedPair(path=path, cost=float(acc[n, m]))


@dataclass
class PitchMetrics:
    rmse: float
    corr: float
    n_pairs: int


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson coefficient; NaN when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0:
        return math.nan
    return float(np.clip(dx @ dy / denom, -1.0, 1.0))


def pitch_metrics(pred_f0: Sequence[float], ref_f0: Sequence[float]) -> PitchMetrics:
    """RMSE (Hz) and Pearson correlation over DTW-matched pairs.

    Unvoiced NaN frames are dropped from each contour before alignment. The
    path minimises summed squared error, so on equal-length voiced contours
    the RMSE never exceeds the plain elementwise RMSE.
    """
    pred = np.asarray(pred_f0, dtype=np.float64)
    ref = np.asarray(ref_f0, dtype=np.float64)
    pred = pred[np.isfinite(pred)]
    ref = ref[np.isfinite(ref)]
    if pred.size == 0 or ref.size == 0:
        raise ValueError("pitch_metrics needs voiced frames in both contours")
    aligned = dtw_align(pred, ref, metric="squared")
    idx = np.asarray(aligned.path)
    x = pred[idx[:, 0]]
    y = ref[idx[:, 1]]
    rmse = float(np.sqrt(np.mean((x - y) ** 2)))
    corr = pearson(x, y)
    if math.isnan(corr):
        warnings.warn(
            "pitch correlation is undefined: an aligned contour has zero variance",
            UserWarning,
            stacklevel=2,
        )
    return PitchMetrics(rmse=rmse, corr=corr, n_pairs=len(aligned.path))


def pitch_metrics_or_nan(pred_f0: np.ndarray, ref_f0: np.ndarray) -> PitchMetrics:
    try:
        return pitch_metrics(pred_f0, ref_f0)
    except ValueError:
        return PitchMetrics(rmse=math.nan, corr=math.nan, n_pairs=0)


@dataclass
class TimbreScore:
    cosine: float
    low_confidence: bool


def timbre_similarity(
    mel: "MelSpectrogram | np.ndarray",
    target_speaker: SpeakerSpec,
    content_mean: np.ndarray,
    config: "SynthConfig | None" = None,
) -> TimbreScore:
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    low_confidence = frames.shape[0] < MIN_TIMBRE_FRAMES
    if low_confidence:
        warnings.warn(
            f"timbre readout from {frames.shape[0]} frames (< {MIN_TIMBRE_FRAMES}) is low confidence",
            UserWarning,
            stacklevel=2,
        )
    tau_hat = ground_truth_timbre(frames, content_mean, config)
    return TimbreScore(cosine=cosine_similarity(tau_hat, target_speaker.tau), low_confidence=low_confidence)


@dataclass(eq=False)
class EvalCase:
    """One held-out conversion: source content, target timbre, style reference.

    ``swap_style_ref`` is a second style reference of another style class,
    used to check that swapping only the style moves the pitch readout.
    """

    source: Utterance
    timbre_refs: list[Utterance]
    style_ref: Utterance
    swap_style_ref: Utterance | None = None

    @property
    def target_speaker_id(self) -> int:
        return self.timbre_refs[0].speaker_id


def make_eval_cases(corpus: Corpus, n: int, seed: int = 0, n_refs: int = 2) -> list[EvalCase]:
    """Seeded conversion cases drawn from a held-out corpus.

    Source and target speakers differ; the style reference is a different
    utterance with a different style class than the source where one exists.
    """
    if len(corpus.speakers) < 2:
        raise CorpusError("evaluation needs at least two held-out speakers")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    speakers = corpus.speaker_ids
    cases = []
    for _ in range(n):
        source = corpus.utterances[int(rng.integers(len(corpus)))]
        targets = [s for s in speakers if s != source.speaker_id]
        target = targets[int(rng.integers(len(targets)))]
        pool = corpus.by_speaker(target)
        picks = rng.choice(len(pool), size=min(n_refs, len(pool)), replace=False)
        timbre_refs = [pool[int(i)] for i in picks]

        others = [u for u in corpus.utterances if u.utt_id != source.utt_id]
        candidates = [u for u in others if u.style_class != source.style_class] or others or [source]
        style_ref = candidates[int(rng.integers(len(candidates)))]
        swaps = [u for u in corpus.utterances if u.style_class != style_ref.style_class]
        swap = swaps[int(rng.integers(len(swaps)))] if swaps else None
        cases.append(EvalCase(source=source, timbre_refs=timbre_refs, style_ref=style_ref, swap_style_ref=swap))
    return cases


def duration_mae(model: StableVcModel, corpus: Corpus, rate: float | None = 1.0) -> float:
    """Mean absolute error in frames between predicted and true token durations.

    Each utterance is its own style reference; its timbre references are the
    other utterances of its speaker. ``rate=None`` keeps every speaking rate.
    """
    utterances = [u for u in corpus if rate is None or math.isclose(u.rate, rate)]
    if not utterances:
        raise CorpusError(f"no utterances with rate {rate} in the {corpus.split} split")
    errors = []
    for utt in utterances:
        refs = [u for u in corpus.by_speaker(utt.speaker_id) if u.utt_id != utt.utt_id] or [utt]
        predicted, true = predict_durations(model, utt, refs[:3], utt)
        errors.append(np.abs(predicted.astype(np.float64) - true))
    return float(np.concatenate(errors).mean())


@dataclass
class EvalReport:
    table: pl.DataFrame
    summary: dict[str, Any]


def _nan_median(values: Sequence[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    return statistics.median(finite) if finite else math.nan


def evaluate_conversions(
    model: StableVcModel,
    cases: Sequence[EvalCase],
    content_mean: np.ndarray,
    speakers: dict[int, SpeakerSpec],
    config: "SynthConfig | None" = None,
    n_steps: int = 10,
    seed: int = 0,
) -> EvalReport:
    """Convert every case and score timbre against target and source, pitch against the style reference."""
    rows = []
    with warnings.catch_warnings():
        # low-confidence and undefined-correlation cases are recorded in the table
        warnings.simplefilter("ignore", UserWarning)
        for k, case in enumerate(cases):
            out = convert(model, case.source, case.timbre_refs, case.style_ref, n_steps=n_steps, seed=seed + k)
            target = timbre_similarity(out, speakers[case.target_speaker_id], content_mean, config)
            source = timbre_similarity(out, speakers[case.source.speaker_id], content_mean, config)
            f0 = ground_truth_pitch(out, config)
            pitch = pitch_metrics_or_nan(f0, ground_truth_pitch(case.style_ref.mel, config))
            row: dict[str, Any] = {
                "case": k,
                "source": case.source.utt_id,
                "target_speaker": case.target_speaker_id,
                "style_ref": case.style_ref.utt_id,
                "n_frames": out.n_frames,
                "timbre_cos_target": target.cosine,
                "timbre_cos_source": source.cosine,
                "low_confidence": target.low_confidence,
                "pitch_rmse": pitch.rmse,
                "pitch_corr": pitch.corr,
                "swap_style_ref": None,
                "swap_corr_new": math.nan,
                "swap_corr_old": math.nan,
                "swap_timbre_cos_target": math.nan,
            }
            if case.swap_style_ref is not None:
                swapped = convert(
                    model, case.source, case.timbre_refs, case.swap_style_ref, n_steps=n_steps, seed=seed + k
                )
                swapped_f0 = ground_truth_pitch(swapped, config)
                row["swap_style_ref"] = case.swap_style_ref.utt_id
                new_f0 = ground_truth_pitch(case.swap_style_ref.mel, config)
                row["swap_corr_new"] = pitch_metrics_or_nan(swapped_f0, new_f0).corr
                old_f0 = ground_truth_pitch(case.style_ref.mel, config)
                row["swap_corr_old"] = pitch_metrics_or_nan(swapped_f0, old_f0).corr
                row["swap_timbre_cos_target"] = timbre_similarity(
                    swapped, speakers[case.target_speaker_id], content_mean, config
                ).cosine
            rows.append(row)

    table = pl.DataFrame(rows, schema_overrides={"swap_style_ref": pl.Utf8})
    return EvalReport(table=table, summary=summarize(table, n_steps))


def summarize(table: pl.DataFrame, n_steps: int) -> dict[str, Any]:
    closer = table.select((pl.col("timbre_cos_target") > pl.col("timbre_cos_source")).mean()).item()
    swapped = table.filter(pl.col("swap_style_ref").is_not_null())
    summary: dict[str, Any] = {
        "n_cases": table.height,
        "n_steps": n_steps,
        "timbre_target_closer_rate": closer,
        "timbre_cos_target_mean": table.get_column("timbre_cos_target").mean(),
        "pitch_rmse_median": _nan_median(table.get_column("pitch_rmse").to_list()),
        "pitch_corr_median": _nan_median(table.get_column("pitch_corr").to_list()),
        "low_confidence_cases": int(table.get_column("low_confidence").sum()),
    }
    if swapped.height:
        follows = swapped.select((pl.col("swap_corr_new") > pl.col("swap_corr_old")).mean()).item()
        drop = swapped.select((pl.col("timbre_cos_target") - pl.col("swap_timbre_cos_target")).mean()).item()
        summary["swap_follows_rate"] = follows
        summary["swap_timbre_drop_mean"] = drop
    return summary


def bench_steps(
    model: StableVcModel,
    eval_set: Sequence[EvalCase],
    content_mean: np.ndarray,
    speakers: dict[int, SpeakerSpec],
    step_list: Sequence[int] = BENCH_STEPS,
    config: "SynthConfig | None" = None,
    seed: int = 0,
) -> pl.DataFrame:
    """Per step count: reconstruction proxy loss, timbre cosine, wall time per generated frame.

    The proxy loss is the mean squared error between a true-duration
    resynthesis of each case's source and its true mel.
    """
    if not eval_set:
        raise ValueError("bench_steps needs at least one case")
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for n_steps in step_list:
            cosines, losses = [], []
            seconds = 0.0
            frames = 0
            for k, case in enumerate(eval_set):
                start = time.perf_counter()
                out = convert(model, case.source, case.timbre_refs, case.style_ref, n_steps=n_steps, seed=seed + k)
                seconds += time.perf_counter() - start
                frames += out.n_frames
                cosines.append(timbre_similarity(out, speakers[case.target_speaker_id], content_mean, config).cosine)
                recon = reconstruct(model, case.source, n_steps=n_steps, seed=seed + k)
                losses.append(float(np.mean((recon.frames - case.source.mel.frames) ** 2)))
            rows.append(
                {
                    "steps": int(n_steps),
                    "proxy_loss": float(np.mean(losses)),
                    "timbre_cosine": float(np.nanmean(cosines)) if np.isfinite(cosines).any() else math.nan,
                    "seconds_per_frame": seconds / max(frames, 1),
                }
            )
            logger.info("bench: %d steps, %.3g s/frame", n_steps, rows[-1]["seconds_per_frame"])
    return pl.DataFrame(rows)
