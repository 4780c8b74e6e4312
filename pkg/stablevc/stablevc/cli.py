"""``stablevc`` command line: synth, fit, train, convert, eval, bench.

Settings resolve as flags > config file (``--config``) > defaults. The
config file holds ``key = value`` lines with ``#`` comments; keys are the
``RunConfig`` field names (dashes or underscores).

Exit codes: 0 success, 2 usage error, 3 data error, 4 non-finite loss.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from stablevc import evalkit
from stablevc.checkpoint import load_checkpoint, save_checkpoint
from stablevc.contenttok import Codebook, cluster_accuracy, encode, fit_kmeans
from stablevc.errors import (
    CheckpointError,
    ConfigError,
    CorpusError,
    MelbFormatError,
    NonFiniteLossError,
)
from stablevc.model import ModelConfig, StableVcModel, TrainConfig, convert_detailed, train
from stablevc.synthcorpus import (
    STYLE_CLASSES,
    Corpus,
    build_corpus,
    content_mean,
    ground_truth_pitch,
    read_corpus,
    read_melb,
    write_corpus,
    write_melb,
)

logger = logging.getLogger("stablevc")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

HELDOUT_SPLIT = "heldout"


@dataclass
class RunConfig:
    """Flat settings record of every subcommand.

    Parameters
    ----------
    seed : int
        Seeds corpus generation, k-means, training and sampling.
    threads : int
        torch intra-op threads; 1 keeps runs bit-reproducible.
    corpus_dir : str
        Directory holding the MELB features and manifests.
    speakers, heldout_speakers, styles, per_cell : int
        Corpus sizes: training speakers, unseen evaluation speakers, style
        classes used, utterances per (speaker, style) cell.
    codebook_size : int
        k of the content k-means.
    codebook : str
        Codebook MELB path; empty means ``<corpus_dir>/codebook.melb``.
    checkpoint, out_dir : str
        Checkpoint file and directory for reports.
    iters ... log_every
        Training settings, see ``TrainConfig``.
    steps, guidance : int, float
        Euler steps and guidance scale at conversion time.
    source, timbre_speaker, style_ref, output : str, int, str, str
        ``convert`` inputs and output MELB path.
    eval_cases, bench_cases : int
        Conversions in the evaluation grid and in the step benchmark.
    bench_steps : str
        Comma-separated step counts for ``bench``.
    """

    seed: int = 0
    threads: int = 1
    corpus_dir: str = "corpus"
    speakers: int = 32
    heldout_speakers: int = 8
    styles: int = 5
    per_cell: int = 4
    codebook_size: int = 64
    codebook: str = ""
    checkpoint: str = "stablevc.ckpt"
    out_dir: str = "runs"
    width: int = 64
    heads: int = 4
    content_depth: int = 2
    flow_depth: int = 4
    use_prior: bool = True
    multi_ref: bool = True
    use_gate: bool = True
    use_duration: bool = True
    iters: int = 1000
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.01
    lambda_grl: float = 0.1
    sigma_min: float = 1e-4
    cond_dropout: float = 0.1
    checkpoint_every: int = 0
    log_every: int = 100
    steps: int = 10
    guidance: float = 1.0
    source: str = ""
    timbre_speaker: int = -1
    style_ref: str = ""
    output: str = "converted.melb"
    eval_cases: int = 100
    bench_cases: int = 20
    bench_steps: str = "1,2,5,10,20"

    def __post_init__(self) -> None:
        for name in ("threads", "speakers", "styles", "per_cell", "codebook_size", "steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name.replace('_', '-')} must be >= 1, got {getattr(self, name)}")
        for name in ("heldout_speakers", "iters", "eval_cases", "bench_cases"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name.replace('_', '-')} must be >= 0, got {getattr(self, name)}")
        if self.styles > len(STYLE_CLASSES):
            raise ConfigError(f"styles must be <= {len(STYLE_CLASSES)}, got {self.styles}")
        self.step_list()

    def step_list(self) -> list[int]:
        try:
            steps = [int(s) for s in self.bench_steps.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bench-steps must be comma-separated integers, got {self.bench_steps!r}") from None
        if not steps or min(steps) < 1:
            raise ConfigError(f"bench-steps must list step counts >= 1, got {self.bench_steps!r}")
        return steps

    @property
    def codebook_path(self) -> Path:
        return Path(self.codebook) if self.codebook else Path(self.corpus_dir) / "codebook.melb"

    def model_config(self, corpus: Corpus) -> ModelConfig:
        return ModelConfig.from_corpus(
            corpus,
            width=self.width,
            heads=self.heads,
            content_depth=self.content_depth,
            flow_depth=self.flow_depth,
            codebook_size=self.codebook_size,
            use_prior=self.use_prior,
            multi_ref=self.multi_ref,
            use_gate=self.use_gate,
            use_duration=self.use_duration,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            iterations=self.iters,
            lambda_grl=self.lambda_grl,
            sigma_min=self.sigma_min,
            euler_steps=self.steps,
            cond_dropout=self.cond_dropout,
            checkpoint_every=self.checkpoint_every,
            checkpoint_path=self.checkpoint,
            log_every=self.log_every,
            seed=self.seed,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str) -> Any:
    kind = _FIELDS[key].type
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown setting {key!r}")
        values[key] = _coerce(key, raw.strip("\"'"))
    return values


def load_config_file(path: "str | Path") -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), str(path))


def resolve_config(file_values: dict[str, Any], flag_values: dict[str, Any]) -> RunConfig:
    merged = {**file_values, **{k: v for k, v in flag_values.items() if k in _FIELDS}}
    return RunConfig(**merged)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_settings(parser: argparse.ArgumentParser, names: Sequence[str]) -> None:
    for name in names:
        f = _FIELDS[name]
        if f.type == "bool":
            parser.add_argument(
                _flag(name), dest=name, action=argparse.BooleanOptionalAction, help=f"(default: {f.default})"
            )
        else:
            kind = {"int": int, "float": float}.get(f.type, str)
            parser.add_argument(_flag(name), dest=name, type=kind, help=f"(default: {f.default})")


_CORPUS = ("corpus_dir",)
_SIZES = ("speakers", "heldout_speakers", "styles", "per_cell")
_MODEL = ("width", "heads", "content_depth", "flow_depth", "use_prior", "multi_ref", "use_gate", "use_duration")
_TRAINING = (
    "iters",
    "batch_size",
    "lr",
    "weight_decay",
    "lambda_grl",
    "sigma_min",
    "cond_dropout",
    "checkpoint_every",
    "log_every",
)
_SAMPLING = ("steps", "guidance")
_CODEBOOK = ("codebook_size", "codebook")
_OUTPUTS = ("checkpoint", "out_dir")
_CONVERT = ("source", "timbre_speaker", "style_ref", "output")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="(default: 0)")
    common.add_argument("--config", dest="config_file", help="key = value settings file")
    common.add_argument("--threads", type=int, help="torch threads (default: 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="stablevc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, settings: Sequence[str]) -> None:
        p = sub.add_parser(name, parents=[common], help=help_text, argument_default=argparse.SUPPRESS)
        _add_settings(p, settings)

    add("synth", "render the synthetic corpus", _CORPUS + _SIZES)
    add("fit", "fit the content codebook", _CORPUS + _CODEBOOK)
    add("train", "fit the codebook if needed and train", _CORPUS + _CODEBOOK + _OUTPUTS + _MODEL + _TRAINING)
    add("convert", "convert one utterance", _CORPUS + ("checkpoint",) + _SAMPLING + _CONVERT)
    add("eval", "held-out conversion grid", _CORPUS + _OUTPUTS + ("eval_cases",) + _SAMPLING)
    add("bench", "Euler step benchmark", _CORPUS + _OUTPUTS + ("bench_cases", "bench_steps"))
    return parser


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        return _json_safe(value.item())
    return value


def _write_json(path: Path, payload: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")


def cmd_synth(cfg: RunConfig) -> int:
    styles = STYLE_CLASSES[: cfg.styles]
    root = Path(cfg.corpus_dir)
    corpus = build_corpus(range(cfg.speakers), styles, cfg.per_cell, seed=cfg.seed)
    write_corpus(corpus, root)
    if cfg.heldout_speakers:
        heldout_ids = range(cfg.speakers, cfg.speakers + cfg.heldout_speakers)
        heldout = build_corpus(heldout_ids, styles, cfg.per_cell, seed=cfg.seed, split=HELDOUT_SPLIT)
        write_corpus(heldout, root)
    n_frames = sum(u.n_frames for u in corpus)
    print(
        f"wrote {len(corpus)} utterances ({cfg.speakers} speakers x {len(styles)} styles x {cfg.per_cell}), "
        f"{n_frames} frames, {cfg.heldout_speakers} held-out speakers to {root}"
    )
    return EXIT_OK


def _fit_codebook(cfg: RunConfig, corpus: Corpus) -> Codebook:
    features = np.concatenate([u.ssl_features for u in corpus])
    codebook = fit_kmeans(features, cfg.codebook_size, seed=cfg.seed)
    write_melb(cfg.codebook_path, codebook.centroids)
    truth = np.concatenate([u.token_ids for u in corpus])
    accuracy = cluster_accuracy(encode(features, codebook), truth)
    print(
        f"codebook k={codebook.k} fitted in {len(codebook.history)} iterations, "
        f"objective {codebook.history[-1]:.4g}, unit accuracy {accuracy:.3f} -> {cfg.codebook_path}"
    )
    return codebook


def cmd_fit(cfg: RunConfig) -> int:
    _fit_codebook(cfg, read_corpus(cfg.corpus_dir))
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    corpus = read_corpus(cfg.corpus_dir)
    if cfg.codebook_path.exists():
        codebook = Codebook(read_melb(cfg.codebook_path).astype(np.float64))
    else:
        codebook = _fit_codebook(cfg, corpus)
    torch.manual_seed(cfg.seed)
    model = StableVcModel(cfg.model_config(corpus), codebook)
    result = train(model, corpus, cfg.train_config())
    save_checkpoint(model, cfg.checkpoint)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.history.write_csv(out_dir / "loss_history.csv")
    if result.history.height:
        last = result.history.row(-1, named=True)
        print(
            f"trained {result.history.height} iterations: total {last['total']:.4f} "
            f"cfm {last['cfm']:.4f} dur {last['dur']:.4f} grl {last['grl']:.4f} -> {cfg.checkpoint}"
        )
    else:
        print(f"0 iterations; initial parameters written to {cfg.checkpoint}")
    return EXIT_OK


def _load_corpora(cfg: RunConfig) -> tuple[Corpus, Corpus | None]:
    train_corpus = read_corpus(cfg.corpus_dir)
    try:
        heldout = read_corpus(cfg.corpus_dir, split=HELDOUT_SPLIT)
    except CorpusError:
        heldout = None
    return train_corpus, heldout


def _lookup(corpora: Sequence[Corpus | None], utt_id: str):
    for corpus in corpora:
        if corpus is None:
            continue
        try:
            return corpus.get(utt_id)
        except CorpusError:
            pass
    raise CorpusError(f"unknown utterance id {utt_id!r}")


def cmd_convert(cfg: RunConfig) -> int:
    if not cfg.source or not cfg.style_ref or cfg.timbre_speaker < 0:
        raise ConfigError("convert needs --source, --style-ref and --timbre-speaker")
    model = load_checkpoint(cfg.checkpoint)
    train_corpus, heldout = _load_corpora(cfg)
    corpora = [c for c in (heldout, train_corpus) if c is not None]
    source = _lookup(corpora, cfg.source)
    style_ref = _lookup(corpora, cfg.style_ref)
    refs: list = []
    speaker = None
    for corpus in corpora:
        if cfg.timbre_speaker in corpus.speakers:
            speaker = corpus.speakers[cfg.timbre_speaker]
            refs = corpus.by_speaker(cfg.timbre_speaker)[:3]
            break
    if speaker is None or not refs:
        raise CorpusError(f"unknown timbre speaker {cfg.timbre_speaker}")

    result = convert_detailed(
        model, source, refs, style_ref, n_steps=cfg.steps, seed=cfg.seed, guidance_scale=cfg.guidance
    )
    output = Path(cfg.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    write_melb(output, result.mel.frames)

    mean = content_mean(train_corpus)
    timbre = evalkit.timbre_similarity(result.mel, speaker, mean, train_corpus.config)
    pitch = evalkit.pitch_metrics_or_nan(
        ground_truth_pitch(result.mel, train_corpus.config), ground_truth_pitch(style_ref.mel, train_corpus.config)
    )
    sidecar = {
        "source": source.utt_id,
        "timbre_speaker": cfg.timbre_speaker,
        "timbre_refs": [r.utt_id for r in refs],
        "style_ref": style_ref.utt_id,
        "steps": cfg.steps,
        "guidance": cfg.guidance,
        "seed": cfg.seed,
        "n_frames": result.mel.n_frames,
        "n_mels": result.mel.n_mels,
        "durations": result.durations.tolist(),
        "timbre_cosine": timbre.cosine,
        "timbre_low_confidence": timbre.low_confidence,
        "pitch_rmse": pitch.rmse,
        "pitch_corr": pitch.corr,
    }
    _write_json(output.with_suffix(".json"), sidecar)
    print(f"wrote {result.mel.n_frames} x {result.mel.n_mels} mel to {output}")
    return EXIT_OK


def _heldout_or_fail(cfg: RunConfig) -> tuple[Corpus, Corpus]:
    train_corpus, heldout = _load_corpora(cfg)
    if heldout is None:
        raise CorpusError(f"no held-out split in {cfg.corpus_dir}; run synth with --heldout-speakers > 0")
    return train_corpus, heldout


def cmd_eval(cfg: RunConfig) -> int:
    model = load_checkpoint(cfg.checkpoint)
    train_corpus, heldout = _heldout_or_fail(cfg)
    cases = evalkit.make_eval_cases(heldout, cfg.eval_cases, seed=cfg.seed)
    report = evalkit.evaluate_conversions(
        model, cases, content_mean(train_corpus), heldout.speakers, heldout.config, n_steps=cfg.steps, seed=cfg.seed
    )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.table.write_csv(out_dir / "eval_cases.tsv", separator="\t")
    _write_json(out_dir / "eval_summary.json", report.summary)
    print(json.dumps(_json_safe(report.summary), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    model = load_checkpoint(cfg.checkpoint)
    train_corpus, heldout = _heldout_or_fail(cfg)
    cases = evalkit.make_eval_cases(heldout, max(cfg.bench_cases, 1), seed=cfg.seed)
    table = evalkit.bench_steps(
        model, cases, content_mean(train_corpus), heldout.speakers, cfg.step_list(), heldout.config, seed=cfg.seed
    )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.write_csv(out_dir / "bench.tsv", separator="\t")
    _write_json(out_dir / "bench_summary.json", {"rows": table.to_dicts()})
    print(table)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "train": cmd_train,
    "convert": cmd_convert,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as exc:
        return int(exc.code or 0)

    _configure_logging(bool(args.pop("verbose", False)))
    command = args.pop("command")
    config_file = args.pop("config_file", None)
    try:
        cfg = resolve_config(load_config_file(config_file) if config_file else {}, args)
        torch.set_num_threads(cfg.threads)
        return COMMANDS[command](cfg)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.snapshot_path:
            print(f"diagnostic checkpoint: {exc.snapshot_path}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, CheckpointError, MelbFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
