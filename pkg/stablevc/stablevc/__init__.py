from __future__ import annotations

from stablevc.cfm import (
    SIGMA_MIN,
    ConditionBundle,
    FlowBatch,
    cfm_loss,
    cfm_target,
    euler_sample,
    gaussian_ot_field,
    make_flow_batch,
    sample_path,
)
from stablevc.checkpoint import load_checkpoint, save_checkpoint
from stablevc.contenttok import (
    Codebook,
    ContentSequence,
    cluster_accuracy,
    dedup,
    embed,
    encode,
    expand,
    fit_kmeans,
    tokenize,
)
from stablevc.dualagc import DiTBlock, DualAttention, FiLM, TimbreReference, film
from stablevc.durmod import DurationPrediction, DurationPredictor, duration_loss, regulate_length
from stablevc.errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    CorpusError,
    MelbFormatError,
    NonFiniteLossError,
    StableVcError,
)
from stablevc.evalkit import (
    AlignedPair,
    bench_steps,
    dtw_align,
    duration_mae,
    evaluate_conversions,
    make_eval_cases,
    pitch_metrics,
    timbre_similarity,
)
from stablevc.model import (
    ModelConfig,
    StableVcModel,
    TrainConfig,
    TrainResult,
    convert,
    convert_detailed,
    predict_durations,
    reconstruct,
    total_loss,
    train,
)
from stablevc.styleenc import GrlHead, StyleEncoder, StyleSequence, encode_style, grl_loss
from stablevc.synthcorpus import (
    Corpus,
    MelSpectrogram,
    SpeakerSpec,
    StyleSpec,
    SynthConfig,
    Utterance,
    build_corpus,
    content_mean,
    ground_truth_pitch,
    ground_truth_timbre,
    make_speaker,
    make_style,
    read_corpus,
    read_melb,
    render_utterance,
    write_corpus,
    write_melb,
)

__all__ = [
    "AlignedPair",
    "CheckpointChecksumError",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "Codebook",
    "ConditionBundle",
    "ConfigError",
    "ContentSequence",
    "Corpus",
    "CorpusError",
    "DiTBlock",
    "DualAttention",
    "DurationPrediction",
    "DurationPredictor",
    "FiLM",
    "FlowBatch",
    "GrlHead",
    "MelSpectrogram",
    "MelbFormatError",
    "ModelConfig",
    "NonFiniteLossError",
    "SIGMA_MIN",
    "SpeakerSpec",
    "StableVcError",
    "StableVcModel",
    "StyleEncoder",
    "StyleSequence",
    "StyleSpec",
    "SynthConfig",
    "TimbreReference",
    "TrainConfig",
    "TrainResult",
    "Utterance",
    "bench_steps",
    "build_corpus",
    "cfm_loss",
    "cfm_target",
    "cluster_accuracy",
    "content_mean",
    "convert",
    "convert_detailed",
    "dedup",
    "dtw_align",
    "duration_mae",
    "duration_loss",
    "embed",
    "encode",
    "encode_style",
    "euler_sample",
    "evaluate_conversions",
    "expand",
    "film",
    "fit_kmeans",
    "gaussian_ot_field",
    "ground_truth_pitch",
    "ground_truth_timbre",
    "grl_loss",
    "load_checkpoint",
    "make_eval_cases",
    "make_flow_batch",
    "make_speaker",
    "make_style",
    "pitch_metrics",
    "predict_durations",
    "read_corpus",
    "read_melb",
    "reconstruct",
    "regulate_length",
    "render_utterance",
    "sample_path",
    "save_checkpoint",
    "timbre_similarity",
    "tokenize",
    "total_loss",
    "train",
    "write_corpus",
    "write_melb",
]
