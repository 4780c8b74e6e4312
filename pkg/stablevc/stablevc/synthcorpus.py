"""Seeded synthetic speech-feature corpus with analytically recoverable factors.

Mel bins ``0..timbre_bins-1`` carry ``envelope(speaker) + pattern(unit)``;
the remaining bins carry a Gaussian pitch bump placed by the F0 contour of
the speaking style. ``ground_truth_pitch`` and ``ground_truth_timbre`` invert
the rendering exactly (up to noise), which is what the evaluation relies on
in place of pretrained verification/pitch models.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Literal, Sequence, Tuple, Union

import numpy as np
import polars as pl

from stablevc.errors import CorpusError, MelbFormatError

logger = logging.getLogger(__name__)

StyleClass = Literal["rising", "falling", "flat", "slow_osc", "fast_osc"]
STYLE_CLASSES: tuple[str, ...] = ("rising", "falling", "flat", "slow_osc", "fast_osc")
RATES: tuple[float, ...] = (0.8, 1.0, 1.25)

MELB_MAGIC = b"MELB"
MELB_VERSION = 1
_MELB_HEADER = struct.Struct("<4sIII")

MIN_TIMBRE_FRAMES = 50

PathLike = Union[str, Path]


@dataclass(frozen=True)
class SynthConfig:
    """Constants of the synthetic generator.

    Parameters
    ----------
    n_timbre_params : int
        J, length of the speaker ``tau`` vector.
    vocab_size : int
        V, number of content units.
    n_mels : int
        M, total mel bins.
    timbre_bins : int
        Bins ``0..timbre_bins-1`` form the content+timbre band; the rest
        form the pitch band.
    bump_width : float
        Standard deviation (in bins) of the pitch bump.
    f0_min, octaves : float
        The pitch band spans ``f0_min`` .. ``f0_min * 2**octaves`` Hz.
    noise_std, ssl_noise_std : float
        Additive noise on mel bins and on ``ssl_features``.
    min_units, max_units : int
        Units per corpus utterance.
    min_duration, max_duration : int
        Range of base unit durations in frames.
    corpus_seed : int
        Seeds the unit patterns and intrinsic unit durations.
    """

    n_timbre_params: int = 8
    vocab_size: int = 64
    n_mels: int = 40
    timbre_bins: int = 32
    bump_width: float = 0.8
    f0_min: float = 100.0
    octaves: float = 2.0
    noise_std: float = 0.01
    ssl_noise_std: float = 0.05
    min_units: int = 14
    max_units: int = 22
    min_duration: int = 2
    max_duration: int = 6
    corpus_seed: int = 1234

    def __post_init__(self) -> None:
        if self.n_timbre_params < 1:
            raise ValueError(f"n_timbre_params must be >= 1, got {self.n_timbre_params}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not 0 < self.timbre_bins < self.n_mels - 1:
            raise ValueError(
                f"timbre_bins must leave at least two pitch bins, got timbre_bins={self.timbre_bins}, "
                f"n_mels={self.n_mels}"
            )
        if self.bump_width <= 0:
            raise ValueError(f"bump_width must be > 0, got {self.bump_width}")
        if self.noise_std < 0 or self.ssl_noise_std < 0:
            raise ValueError("noise levels must be >= 0")
        if not 1 <= self.min_units <= self.max_units:
            raise ValueError(f"invalid unit range [{self.min_units}, {self.max_units}]")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ValueError(f"invalid duration range [{self.min_duration}, {self.max_duration}]")

    @property
    def pitch_bins(self) -> int:
        return self.n_mels - self.timbre_bins

    @property
    def f0_max(self) -> float:
        return self.f0_min * 2.0**self.octaves


def _normalize_synth_config(config: "SynthConfig | Dict[str, Any] | None") -> SynthConfig:
    if config is None:
        return SynthConfig()
    if isinstance(config, SynthConfig):
        return config
    if isinstance(config, dict):
        return SynthConfig(**config)
    raise TypeError(f"config must be SynthConfig, dict, or None, got {type(config)}")


@dataclass(frozen=True, eq=False)
class SpeakerSpec:
    speaker_id: int
    tau: np.ndarray
    envelope: np.ndarray


@dataclass(frozen=True)
class StyleSpec:
    style_class: str
    rate: float = 1.0

    def __post_init__(self) -> None:
        if self.style_class not in STYLE_CLASSES:
            raise ValueError(f"style_class must be one of {STYLE_CLASSES!r}, got {self.style_class!r}")
        if not any(math.isclose(self.rate, r) for r in RATES):
            raise ValueError(f"rate must be one of {RATES!r}, got {self.rate!r}")

    def f0_fn(self, u: "float | np.ndarray") -> np.ndarray:
        """F0 in Hz at normalized time ``u`` in [0, 1]."""
        u = np.asarray(u, dtype=np.float64)
        if self.style_class == "rising":
            f0 = 120.0 + 120.0 * u
        elif self.style_class == "falling":
            f0 = 240.0 - 120.0 * u
        elif self.style_class == "flat":
            f0 = np.full_like(u, 180.0)
        elif self.style_class == "slow_osc":
            f0 = 180.0 + 60.0 * np.sin(2.0 * np.pi * u)
        else:
            f0 = 180.0 + 60.0 * np.sin(6.0 * np.pi * u)
        return np.clip(f0, 100.0, 400.0)


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    frames: np.ndarray

    def __post_init__(self) -> None:
        if self.frames.ndim != 2:
            raise ValueError(f"mel frames must be 2-D (T x M), got shape {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("mel must have at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("mel frames must be finite")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def n_mels(self) -> int:
        return int(self.frames.shape[1])


@dataclass(eq=False)
class Utterance:
    utt_id: str
    speaker_id: int
    style_class: str
    rate: float
    mel: MelSpectrogram
    ssl_features: np.ndarray
    style_features: np.ndarray
    token_ids: np.ndarray
    f0_contour: np.ndarray
    tau: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.mel.n_frames
        lengths = {
            "ssl_features": self.ssl_features.shape[0],
            "style_features": self.style_features.shape[0],
            "token_ids": self.token_ids.shape[0],
            "f0_contour": self.f0_contour.shape[0],
        }
        bad = {k: v for k, v in lengths.items() if v != n}
        if bad:
            raise ValueError(f"per-frame sequences of {self.utt_id!r} must have {n} frames, got {bad}")

    @property
    def n_frames(self) -> int:
        return self.mel.n_frames


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed derived from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@lru_cache(maxsize=8)
def timbre_basis(config: SynthConfig) -> np.ndarray:
    """J x timbre_bins matrix with rows ``sin(pi (j+1) (m+0.5) / timbre_bins)``."""
    j = np.arange(config.n_timbre_params)[:, None] + 1.0
    m = np.arange(config.timbre_bins)[None, :] + 0.5
    basis = np.sin(np.pi * j * m / config.timbre_bins)
    basis.setflags(write=False)
    return basis


@lru_cache(maxsize=8)
def unit_patterns(config: SynthConfig) -> np.ndarray:
    """V x timbre_bins unit patterns B_v, uniform on [-1, 1]."""
    rng = np.random.default_rng([config.corpus_seed, 0])
    patterns = rng.uniform(-1.0, 1.0, size=(config.vocab_size, config.timbre_bins))
    patterns.setflags(write=False)
    return patterns


@lru_cache(maxsize=8)
def unit_durations(config: SynthConfig) -> np.ndarray:
    """Intrinsic base duration of each unit."""
    rng = np.random.default_rng([config.corpus_seed, 1])
    durations = rng.integers(config.min_duration, config.max_duration + 1, size=config.vocab_size)
    durations.setflags(write=False)
    return durations


def speaker_from_tau(
    tau: "np.ndarray | Sequence[float]",
    speaker_id: int = 0,
    config: "SynthConfig | Dict[str, Any] | None" = None,
) -> SpeakerSpec:
    config = _normalize_synth_config(config)
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (config.n_timbre_params,):
        raise ValueError(f"tau must have shape ({config.n_timbre_params},), got {tau.shape}")
    envelope = 0.5 * tau @ timbre_basis(config)
    return SpeakerSpec(speaker_id=int(speaker_id), tau=tau, envelope=envelope)


def make_speaker(
    seed: int,
    config: "SynthConfig | Dict[str, Any] | None" = None,
    speaker_id: int | None = None,
) -> SpeakerSpec:
    """Draw a speaker's timbre parameters and derive its envelope.

    Parameters
    ----------
    seed : int
        Seeds the uniform draw of ``tau`` on [-1, 1].
    config : SynthConfig, dict or None
        Generator settings; ``None`` means the defaults.
    speaker_id : int, optional
        Id stored on the spec. Defaults to ``seed``.
    """
    config = _normalize_synth_config(config)
    rng = np.random.default_rng(seed)
    tau = rng.uniform(-1.0, 1.0, size=config.n_timbre_params)
    return speaker_from_tau(tau, seed if speaker_id is None else speaker_id, config)


def make_style(style_class: str, rate: float = 1.0) -> StyleSpec:
    return StyleSpec(style_class=style_class, rate=rate)


def pitch_bin_position(f0: "float | np.ndarray", config: "SynthConfig | None" = None) -> np.ndarray:
    """Fractional pitch-band bin kappa(f0), clamped to the band."""
    config = _normalize_synth_config(config)
    f0 = np.asarray(f0, dtype=np.float64)
    kappa = config.timbre_bins + config.pitch_bins * np.log2(f0 / config.f0_min) / config.octaves
    return np.clip(kappa, config.timbre_bins, config.n_mels - 1)


def render_utterance(
    speaker: SpeakerSpec,
    style: StyleSpec,
    units: Iterable[Tuple[int, int]],
    config: "SynthConfig | Dict[str, Any] | None" = None,
    *,
    noise: bool = True,
    seed: int = 0,
    utt_id: str = "utt",
) -> Utterance:
    """Render ``(unit_id, base_duration)`` pairs into an utterance.

    Each unit lasts ``max(1, round(base_duration / rate))`` frames. ``noise``
    toggles the mel noise only; ``ssl_features`` always carry
    ``ssl_noise_std`` noise.
    """
    config = _normalize_synth_config(config)
    units = list(units)
    if not units:
        raise ValueError("render_utterance needs at least one unit")

    ids: list[int] = []
    frames_per_unit: list[int] = []
    for unit_id, base_duration in units:
        if not 0 <= int(unit_id) < config.vocab_size:
            raise ValueError(f"unit_id must be in [0, {config.vocab_size}), got {unit_id}")
        if not config.min_duration <= base_duration <= config.max_duration:
            raise ValueError(
                f"base_duration must be in [{config.min_duration}, {config.max_duration}], got {base_duration}"
            )
        ids.append(int(unit_id))
        frames_per_unit.append(max(1, int(round(base_duration / style.rate))))

    token_ids = np.repeat(np.asarray(ids, dtype=np.int64), frames_per_unit)
    n_frames = token_ids.shape[0]
    u = np.linspace(0.0, 1.0, n_frames) if n_frames > 1 else np.zeros(1)
    f0 = style.f0_fn(u)
    kappa = pitch_bin_position(f0, config)

    patterns = unit_patterns(config)
    tb = config.timbre_bins
    rng = np.random.default_rng(seed)

    mel = np.empty((n_frames, config.n_mels), dtype=np.float64)
    mel[:, :tb] = speaker.envelope[None, :] + patterns[token_ids]
    bins = np.arange(tb, config.n_mels, dtype=np.float64)
    mel[:, tb:] = np.exp(-((bins[None, :] - kappa[:, None]) ** 2) / (2.0 * config.bump_width**2))

    ssl = patterns[token_ids] + rng.normal(0.0, config.ssl_noise_std, size=(n_frames, tb))
    if noise and config.noise_std > 0:
        mel += rng.normal(0.0, config.noise_std, size=mel.shape)

    band_index = np.clip(np.round(kappa).astype(np.int64) - tb, 0, config.pitch_bins - 1)
    style_features = np.zeros((n_frames, config.pitch_bins), dtype=np.float32)
    style_features[np.arange(n_frames), band_index] = 1.0

    return Utterance(
        utt_id=utt_id,
        speaker_id=speaker.speaker_id,
        style_class=style.style_class,
        rate=float(style.rate),
        mel=MelSpectrogram(mel.astype(np.float32)),
        ssl_features=ssl.astype(np.float32),
        style_features=style_features,
        token_ids=token_ids,
        f0_contour=f0.astype(np.float32),
        tau=speaker.tau,
    )


def _mel_frames(mel: "MelSpectrogram | np.ndarray") -> np.ndarray:
    if isinstance(mel, MelSpectrogram):
        return mel.frames
    frames = np.asarray(mel)
    if frames.ndim != 2:
        raise ValueError(f"mel must be 2-D (T x M), got shape {frames.shape}")
    return frames


def ground_truth_pitch(
    mel: "MelSpectrogram | np.ndarray",
    config: "SynthConfig | Dict[str, Any] | None" = None,
) -> np.ndarray:
    """Per-frame F0 readout from the pitch band; NaN marks unvoiced frames."""
    config = _normalize_synth_config(config)
    frames = _mel_frames(mel).astype(np.float64)
    tb = config.timbre_bins
    weights = np.maximum(frames[:, tb:], 0.0)
    total = weights.sum(axis=1)
    bins = np.arange(tb, config.n_mels, dtype=np.float64)
    voiced = total > 0
    kappa = np.full(frames.shape[0], np.nan)
    kappa[voiced] = (weights[voiced] * bins).sum(axis=1) / total[voiced]
    return config.f0_min * 2.0 ** ((kappa - tb) * config.octaves / config.pitch_bins)


def ground_truth_timbre(
    mel: "MelSpectrogram | np.ndarray",
    corpus_content_mean: np.ndarray,
    config: "SynthConfig | Dict[str, Any] | None" = None,
) -> np.ndarray:
    """Project the time-averaged timbre band onto the sinusoid basis.

    Reliable from ``MIN_TIMBRE_FRAMES`` frames on; shorter inputs are still
    projected.
    """
    config = _normalize_synth_config(config)
    frames = _mel_frames(mel).astype(np.float64)
    tb = config.timbre_bins
    residual = frames[:, :tb].mean(axis=0) - np.asarray(corpus_content_mean, dtype=np.float64)
    return (2.0 / (tb * 0.5)) * timbre_basis(config) @ residual


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return math.nan
    return float(np.dot(a, b) / denom)


@dataclass(eq=False)
class Corpus:
    utterances: list[Utterance]
    speakers: dict[int, SpeakerSpec]
    config: SynthConfig = field(default_factory=SynthConfig)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    @property
    def speaker_ids(self) -> list[int]:
        return sorted(self.speakers)

    def by_speaker(self, speaker_id: int) -> list[Utterance]:
        return [u for u in self.utterances if u.speaker_id == speaker_id]

    def get(self, utt_id: str) -> Utterance:
        for utt in self.utterances:
            if utt.utt_id == utt_id:
                return utt
        raise CorpusError(f"unknown utterance id {utt_id!r} in {self.split} split")


def draw_units(rng: np.random.Generator, config: SynthConfig) -> list[tuple[int, int]]:
    """Random unit sequence with distinct neighbours and jittered intrinsic durations."""
    n_units = int(rng.integers(config.min_units, config.max_units + 1))
    intrinsic = unit_durations(config)
    units: list[tuple[int, int]] = []
    prev = -1
    for _ in range(n_units):
        if prev < 0:
            unit = int(rng.integers(config.vocab_size))
        else:
            unit = (prev + 1 + int(rng.integers(config.vocab_size - 1))) % config.vocab_size
        jitter = int(rng.choice((-1, 0, 1), p=(0.15, 0.7, 0.15)))
        base = int(np.clip(intrinsic[unit] + jitter, config.min_duration, config.max_duration))
        units.append((unit, base))
        prev = unit
    return units


def build_corpus(
    speaker_ids: Sequence[int],
    style_classes: Sequence[str] = STYLE_CLASSES,
    per_cell: int = 4,
    config: "SynthConfig | Dict[str, Any] | None" = None,
    seed: int = 0,
    *,
    noise: bool = True,
    split: str = "train",
) -> Corpus:
    """Render ``per_cell`` utterances for every (speaker, style class) pair."""
    config = _normalize_synth_config(config)
    if not speaker_ids:
        raise ValueError("build_corpus needs at least one speaker")
    if per_cell < 1:
        raise ValueError(f"per_cell must be >= 1, got {per_cell}")
    for style_class in style_classes:
        if style_class not in STYLE_CLASSES:
            raise ValueError(f"unknown style class {style_class!r}")

    speakers: dict[int, SpeakerSpec] = {}
    utterances: list[Utterance] = []
    for sid in speaker_ids:
        speaker = make_speaker(derive_seed(seed, 0, sid), config, speaker_id=sid)
        speakers[int(sid)] = speaker
        for style_class in style_classes:
            style_index = STYLE_CLASSES.index(style_class)
            for k in range(per_cell):
                utt_seed = derive_seed(seed, 1, sid, style_index, k)
                rng = np.random.default_rng(utt_seed)
                rate = RATES[int(rng.integers(len(RATES)))]
                units = draw_units(rng, config)
                utterances.append(
                    render_utterance(
                        speaker,
                        make_style(style_class, rate),
                        units,
                        config,
                        noise=noise,
                        seed=derive_seed(utt_seed, 2),
                        utt_id=f"spk{int(sid):03d}_{style_class}_{k:02d}",
                    )
                )
    logger.info(
        "rendered %d utterances for %d speakers (%s split)", len(utterances), len(speakers), split
    )
    return Corpus(utterances=utterances, speakers=speakers, config=config, split=split)


def content_mean(corpus: "Corpus | Iterable[Utterance]") -> np.ndarray:
    """Frame mean of ``ssl_features``: the speaker-free content average."""
    utterances = list(corpus)
    if not utterances:
        raise CorpusError("cannot compute a content mean over an empty corpus")
    return np.concatenate([u.ssl_features for u in utterances]).astype(np.float64).mean(axis=0)


def write_melb(path: PathLike, matrix: np.ndarray) -> None:
    """Write a matrix as a MELB file: ``<4sIII`` header then float32 LE rows.

    Parameters
    ----------
    path : str or Path
        Destination file.
    matrix : array_like
        (T, B) values. A 1-D array is stored as a single column.

    Raises
    ------
    ValueError
        ``matrix`` has more than two dimensions.
    """
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"MELB holds 1-D or 2-D matrices, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = _MELB_HEADER.pack(MELB_MAGIC, MELB_VERSION, arr.shape[0], arr.shape[1])
    Path(path).write_bytes(header + arr.tobytes())


def read_melb(path: PathLike) -> np.ndarray:
    """Read a MELB file written by :func:`write_melb`.

    Parameters
    ----------
    path : str or Path
        MELB file.

    Returns
    -------
    numpy.ndarray
        (T, B) float32 matrix.

    Raises
    ------
    MelbFormatError
        Short header, wrong magic or version, or a size that disagrees with the header.
    """
    data = Path(path).read_bytes()
    if len(data) < _MELB_HEADER.size:
        raise MelbFormatError(f"{path}: file too short for a MELB header")
    magic, version, n_frames, n_bins = _MELB_HEADER.unpack_from(data)
    if magic != MELB_MAGIC:
        raise MelbFormatError(f"{path}: bad magic {magic!r}")
    if version != MELB_VERSION:
        raise MelbFormatError(f"{path}: unsupported MELB version {version}")
    expected = _MELB_HEADER.size + 4 * n_frames * n_bins
    if len(data) != expected:
        raise MelbFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_MELB_HEADER.size)
    return values.reshape(n_frames, n_bins).astype(np.float32)


def _split_file(split: str, name: str) -> str:
    return name if split == "train" else f"{split}_{name}"


_FEATURE_KINDS = ("mel", "ssl", "style", "f0", "tokens")


def write_corpus(corpus: Corpus, directory: PathLike) -> Path:
    """Write MELB feature files plus the manifest and speaker table of one split.

    Returns the manifest path.
    """
    root = Path(directory)
    features = root / "features"
    features.mkdir(parents=True, exist_ok=True)

    rows = []
    for utt in corpus.utterances:
        arrays = {
            "mel": utt.mel.frames,
            "ssl": utt.ssl_features,
            "style": utt.style_features,
            "f0": utt.f0_contour,
            "tokens": utt.token_ids.astype(np.float32),
        }
        paths = {}
        for kind in _FEATURE_KINDS:
            rel = f"features/{utt.utt_id}.{kind}.melb"
            write_melb(root / rel, arrays[kind])
            paths[kind] = rel
        rows.append(
            {
                "utt_id": utt.utt_id,
                "speaker_id": utt.speaker_id,
                "style_class": utt.style_class,
                "rate": utt.rate,
                "paths": paths,
            }
        )

    manifest = root / _split_file(corpus.split, "manifest.ndjson")
    pl.DataFrame(rows).write_ndjson(manifest)

    speakers = pl.DataFrame(
        {
            "speaker_id": [s.speaker_id for s in corpus.speakers.values()],
            "tau": [s.tau.tolist() for s in corpus.speakers.values()],
        },
        schema={"speaker_id": pl.Int64, "tau": pl.List(pl.Float64)},
    )
    speakers.write_ndjson(root / _split_file(corpus.split, "speakers.ndjson"))
    (root / "corpus.json").write_text(json.dumps({"config": asdict(corpus.config)}, sort_keys=True, indent=2))
    return manifest


def read_corpus(directory: PathLike, split: str = "train") -> Corpus:
    """Load one split written by :func:`write_corpus`.

    Parameters
    ----------
    directory : str or Path
        Corpus root holding ``corpus.json``, the split manifests and ``features/``.
    split : str, default "train"
        Which split to load, e.g. ``"heldout"``.

    Raises
    ------
    CorpusError
        A manifest, speaker table or config file is missing.
    """
    root = Path(directory)
    manifest_path = root / _split_file(split, "manifest.ndjson")
    speakers_path = root / _split_file(split, "speakers.ndjson")
    config_path = root / "corpus.json"
    for p in (manifest_path, speakers_path, config_path):
        if not p.exists():
            raise CorpusError(f"missing corpus file {p}")

    config = SynthConfig(**json.loads(config_path.read_text())["config"])
    speakers: dict[int, SpeakerSpec] = {}
    for row in pl.read_ndjson(speakers_path).iter_rows(named=True):
        speakers[int(row["speaker_id"])] = speaker_from_tau(row["tau"], row["speaker_id"], config)

    utterances: list[Utterance] = []
    for row in pl.read_ndjson(manifest_path).iter_rows(named=True):
        sid = int(row["speaker_id"])
        if sid not in speakers:
            raise CorpusError(f"utterance {row['utt_id']!r} references unknown speaker {sid}")
        try:
            arrays = {kind: read_melb(root / row["paths"][kind]) for kind in _FEATURE_KINDS}
        except FileNotFoundError as exc:
            raise CorpusError(f"missing feature file for {row['utt_id']!r}: {exc.filename}") from exc
        utterances.append(
            Utterance(
                utt_id=row["utt_id"],
                speaker_id=sid,
                style_class=row["style_class"],
                rate=float(row["rate"]),
                mel=MelSpectrogram(arrays["mel"]),
                ssl_features=arrays["ssl"],
                style_features=arrays["style"],
                token_ids=arrays["tokens"][:, 0].astype(np.int64),
                f0_contour=arrays["f0"][:, 0],
                tau=speakers[sid].tau,
            )
        )
    return Corpus(utterances=utterances, speakers=speakers, config=config, split=split)
