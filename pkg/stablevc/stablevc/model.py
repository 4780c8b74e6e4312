"""Full model assembly, the combined training objective, the trainer, and conversion."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Sequence

import numpy as np
import polars as pl
import torch
from torch import Tensor, nn
from torch.nn.utils.rnn import pad_sequence

from stablevc.cfm import (
    DEFAULT_GUIDANCE,
    DEFAULT_STEPS,
    SIGMA_MIN,
    ConditionBundle,
    cfm_loss,
    euler_sample,
    make_flow_batch,
)
from stablevc.contenttok import Codebook, tokenize
from stablevc.dualagc import (
    DiTBlock,
    SelfAttentionBlock,
    TimbreReference,
    TimestepEmbedding,
    normalized_positions,
)
from stablevc.durmod import DurationPredictor, duration_loss, regulate_batch
from stablevc.errors import CorpusError, NonFiniteLossError
from stablevc.styleenc import GrlHead, StyleEncoder, StyleSequence, grl_loss
from stablevc.synthcorpus import Corpus, MelSpectrogram, Utterance

logger = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Architecture record; stored verbatim in checkpoints.

    Parameters
    ----------
    width : int
        Model width shared by every sub-module.
    heads : int
        Attention heads; ``width`` must be divisible by it.
    content_depth, flow_depth : int
        Blocks in the content stack and in the flow-matching stack.
    n_mels, content_dim, style_dim, n_timbre_params : int
        Feature sizes of the corpus the model is trained on.
    n_speakers : int
        Classes of the adversarial speaker classifier.
    speaker_ids : tuple of int
        Corpus speaker ids in classifier order. Empty means ids are used as
        class indices directly.
    codebook_size : int
        Number of content clusters.
    use_prior : bool
        Prepend the speaker prior slot to the timbre keys and values.
    multi_ref : bool
        Train with other utterances of the speaker as timbre references;
        off means each utterance is its own reference.
    use_gate : bool
        Scale the style branch by ``tanh(alpha)``; off fixes the weight at 1.
    use_duration : bool
        Deduplicate tokens and predict durations; off keeps frame-level
        tokens with unit durations and drops the duration loss.
    """

    width: int = 64
    heads: int = 4
    content_depth: int = 2
    flow_depth: int = 4
    n_mels: int = 40
    content_dim: int = 32
    style_dim: int = 8
    n_timbre_params: int = 8
    n_speakers: int = 32
    speaker_ids: tuple[int, ...] = ()
    codebook_size: int = 64
    style_blocks: int = 2
    mlp_ratio: float = 4.0
    reversal_scale: float = 1.0
    use_prior: bool = True
    multi_ref: bool = True
    use_gate: bool = True
    use_duration: bool = True

    def __post_init__(self) -> None:
        self.speaker_ids = tuple(int(s) for s in self.speaker_ids)
        if self.width < 1 or self.heads < 1 or self.width % self.heads:
            raise ValueError(f"width must be a positive multiple of heads, got width={self.width}, heads={self.heads}")
        if self.content_depth < 0 or self.flow_depth < 1:
            raise ValueError(
                f"need content_depth >= 0 and flow_depth >= 1, got {self.content_depth}, {self.flow_depth}"
            )
        for name in ("n_mels", "content_dim", "style_dim", "n_timbre_params", "n_speakers", "codebook_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.speaker_ids and len(self.speaker_ids) != self.n_speakers:
            raise ValueError(f"n_speakers={self.n_speakers} but {len(self.speaker_ids)} speaker_ids given")
        if len(set(self.speaker_ids)) != len(self.speaker_ids):
            raise ValueError("speaker_ids must be unique")
        if self.reversal_scale <= 0:
            raise ValueError(f"reversal_scale must be > 0, got {self.reversal_scale}")

    @classmethod
    def from_corpus(cls, corpus: Corpus, **overrides: Any) -> "ModelConfig":
        """Feature sizes and speaker table taken from a training corpus."""
        values: dict[str, Any] = {
            "n_mels": corpus.config.n_mels,
            "content_dim": corpus.config.timbre_bins,
            "style_dim": corpus.config.pitch_bins,
            "n_timbre_params": corpus.config.n_timbre_params,
            "n_speakers": len(corpus.speakers),
            "speaker_ids": tuple(corpus.speaker_ids),
            "codebook_size": corpus.config.vocab_size,
        }
        values.update(overrides)
        return cls(**values)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 8
    iterations: int = 1000
    lambda_grl: float = 0.1
    sigma_min: float = SIGMA_MIN
    euler_steps: int = DEFAULT_STEPS
    cond_dropout: float = 0.1
    max_refs: int = 3
    grad_clip: float | None = 1.0
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    log_every: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.lambda_grl < 0:
            raise ValueError(f"lambda_grl must be >= 0, got {self.lambda_grl}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.sigma_min < 1:
            raise ValueError(f"sigma_min must be in [0, 1), got {self.sigma_min}")
        if not 0 <= self.cond_dropout < 1:
            raise ValueError(f"cond_dropout must be in [0, 1), got {self.cond_dropout}")
        if self.euler_steps < 1:
            raise ValueError(f"euler_steps must be >= 1, got {self.euler_steps}")
        if self.max_refs < 1:
            raise ValueError(f"max_refs must be >= 1, got {self.max_refs}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")


def _normalize_model_config(config: "ModelConfig | Dict[str, Any] | None") -> ModelConfig:
    if config is None:
        return ModelConfig()
    if isinstance(config, ModelConfig):
        return config
    if isinstance(config, dict):
        return ModelConfig(**config)
    raise TypeError(f"config must be ModelConfig, dict, or None, got {type(config)}")


def _normalize_train_config(config: "TrainConfig | Dict[str, Any] | None") -> TrainConfig:
    if config is None:
        return TrainConfig()
    if isinstance(config, TrainConfig):
        return config
    if isinstance(config, dict):
        return TrainConfig(**config)
    raise TypeError(f"config must be TrainConfig, dict, or None, got {type(config)}")


def _pad(rows: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
    padded = pad_sequence(list(rows), batch_first=True)
    lengths = torch.tensor([r.shape[0] for r in rows], device=padded.device)
    mask = torch.arange(padded.shape[1], device=padded.device)[None, :] < lengths[:, None]
    return padded, mask


class FlowField(nn.Module):
    """Vector field ``v(x_t, t, h)`` over padded (B, T, n_mels) mel batches."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        width = config.width
        self.width = width
        self.in_proj = nn.Linear(config.n_mels + width, width)
        self.time = TimestepEmbedding(width)
        self.blocks = nn.ModuleList(
            [
                DiTBlock(width, config.heads, config.n_mels, mlp_ratio=config.mlp_ratio, use_gate=config.use_gate)
                for _ in range(config.flow_depth)
            ]
        )
        self.norm_out = nn.LayerNorm(width)
        self.out = nn.Linear(width, config.n_mels)

    def forward(self, x_t: Tensor, t: Tensor, h: ConditionBundle) -> Tensor:
        dtype = x_t.dtype
        c = self.in_proj(torch.cat([x_t, h.frame_content], dim=-1))
        c = c + normalized_positions(h.frame_mask, self.width, dtype)
        style = StyleSequence(
            frames=h.style.frames + normalized_positions(h.style.mask, self.width, dtype),
            mask=h.style.mask,
        )
        t_embed = self.time(t)
        for block in self.blocks:
            c = block(c, t_embed, style, h.timbre)
        return self.out(self.norm_out(c)) * h.frame_mask[..., None].to(dtype)


class StableVcModel(nn.Module):
    """Content stack, duration predictor, style encoder, GRL head and flow field.

    The codebook is a frozen buffer; everything else trains jointly.
    """

    def __init__(self, config: "ModelConfig | Dict[str, Any] | None" = None, codebook: Codebook | None = None):
        super().__init__()
        config = _normalize_model_config(config)
        self.config = config
        width = config.width

        if codebook is None:
            centroids = torch.zeros(config.codebook_size, config.content_dim)
        else:
            if codebook.k != config.codebook_size or codebook.dim != config.content_dim:
                raise ValueError(
                    f"codebook is {codebook.k} x {codebook.dim}, config expects "
                    f"{config.codebook_size} x {config.content_dim}"
                )
            centroids = torch.as_tensor(codebook.centroids, dtype=torch.float32)
        self.register_buffer("codebook", centroids)

        self.content_in = nn.Linear(config.content_dim, width)
        self.content_stack = nn.ModuleList(
            [SelfAttentionBlock(width, config.heads, mlp_ratio=config.mlp_ratio) for _ in range(config.content_depth)]
        )
        self.duration = DurationPredictor(width)
        self.style_encoder = StyleEncoder(config.style_dim, width, config.style_blocks)
        self.grl_head = GrlHead(width, config.n_speakers, config.reversal_scale)
        self.prior_proj = nn.Linear(config.n_timbre_params, width)
        self.ref_summary = nn.Linear(config.n_mels, width)
        self.flow = FlowField(config)

        self.null_content = nn.Parameter(torch.zeros(width))
        self.null_style = nn.Parameter(torch.zeros(width))
        self.null_ref = nn.Parameter(torch.zeros(config.n_mels))
        self.null_prior = nn.Parameter(torch.zeros(width))

    @property
    def dtype(self) -> torch.dtype:
        return self.codebook.dtype

    @property
    def device(self) -> torch.device:
        return self.codebook.device

    def _tensor(self, array: np.ndarray) -> Tensor:
        return torch.as_tensor(np.asarray(array), dtype=self.dtype, device=self.device)

    def content_codebook(self) -> Codebook:
        return Codebook(centroids=self.codebook.detach().cpu().double().numpy())

    def gates(self) -> list[float]:
        return [float(block.attn.gate()) for block in self.flow.blocks]

    def speaker_index(self, speaker_id: int) -> int:
        if self.config.speaker_ids:
            try:
                return self.config.speaker_ids.index(int(speaker_id))
            except ValueError:
                raise ValueError(f"speaker {speaker_id} is not in the classifier's speaker table") from None
        if not 0 <= speaker_id < self.config.n_speakers:
            raise ValueError(f"speaker {speaker_id} outside [0, {self.config.n_speakers})")
        return int(speaker_id)

    def tokens(self, utterance: Utterance) -> tuple[np.ndarray, np.ndarray]:
        """Content token ids and their durations for one utterance."""
        seq = tokenize(utterance.ssl_features, self.content_codebook(), deduplicate=self.config.use_duration)
        return seq.token_ids, seq.durations

    def encode_content(self, token_ids: Tensor, mask: Tensor) -> Tensor:
        c = self.content_in(self.codebook[token_ids])
        c = (c + normalized_positions(mask, self.config.width, c.dtype)) * mask[..., None].to(c.dtype)
        for block in self.content_stack:
            c = block(c, mask)
        return c

    def encode_styles(self, utterances: Sequence[Utterance]) -> StyleSequence:
        features, mask = _pad([self._tensor(u.style_features) for u in utterances])
        return self.style_encoder(features, mask)

    def timbre_reference(self, ref_groups: Sequence[Sequence[Utterance]]) -> TimbreReference:
        """Concatenated reference frames per batch item, plus the speaker prior."""
        ref_mel, ref_mask = _pad(
            [torch.cat([self._tensor(r.mel.frames) for r in group], dim=0) for group in ref_groups]
        )
        prior = None
        if self.config.use_prior:
            taus = []
            for group in ref_groups:
                if group[0].tau is None:
                    raise ValueError(f"timbre reference {group[0].utt_id!r} carries no speaker tau")
                taus.append(self._tensor(group[0].tau))
            prior = self.prior_proj(torch.stack(taus))
        return TimbreReference(ref_mel=ref_mel, ref_mask=ref_mask, prior_vp=prior)

    def timbre_summary(self, timbre: TimbreReference) -> Tensor:
        weights = timbre.ref_mask.to(timbre.ref_mel.dtype)[..., None]
        projected = self.ref_summary(timbre.ref_mel) * weights
        return projected.sum(dim=1) / weights.sum(dim=1).clamp(min=1.0)

    def null_bundle(self, h: ConditionBundle, drop: Tensor | None = None) -> ConditionBundle:
        """Replace the conditions of the items flagged in ``drop`` (default: all) by the learned null bundle."""
        batch = h.frame_content.shape[0]
        if drop is None:
            drop = torch.ones(batch, dtype=torch.bool, device=h.frame_content.device)
        d3 = drop[:, None, None]
        content = torch.where(d3, self.null_content.expand_as(h.frame_content), h.frame_content)
        style = StyleSequence(torch.where(d3, self.null_style.expand_as(h.style.frames), h.style.frames), h.style.mask)
        ref_mel = torch.where(d3, self.null_ref.expand_as(h.timbre.ref_mel), h.timbre.ref_mel)
        prior = h.timbre.prior_vp
        if prior is not None:
            prior = torch.where(drop[:, None], self.null_prior.expand_as(prior), prior)
        return ConditionBundle(
            frame_content=content,
            frame_mask=h.frame_mask,
            style=style,
            timbre=TimbreReference(ref_mel=ref_mel, ref_mask=h.timbre.ref_mask, prior_vp=prior),
        )


@dataclass
class _Conditioning:
    token_ids: Tensor
    durations: Tensor
    token_mask: Tensor
    hidden: Tensor
    style: StyleSequence
    timbre: TimbreReference
    timbre_summary: Tensor


def _condition(
    model: StableVcModel,
    sources: Sequence[Utterance],
    style_refs: Sequence[Utterance],
    ref_groups: Sequence[Sequence[Utterance]],
) -> _Conditioning:
    ids, durations = zip(*(model.tokens(u) for u in sources))
    token_ids, token_mask = _pad([torch.as_tensor(i, dtype=torch.long, device=model.device) for i in ids])
    true_durations, _ = _pad([torch.as_tensor(d, dtype=torch.long, device=model.device) for d in durations])
    timbre = model.timbre_reference(ref_groups)
    return _Conditioning(
        token_ids=token_ids,
        durations=true_durations,
        token_mask=token_mask,
        hidden=model.encode_content(token_ids, token_mask),
        style=model.encode_styles(style_refs),
        timbre=timbre,
        timbre_summary=model.timbre_summary(timbre),
    )


def _check_refs(utterances: Sequence[Utterance], refs: Sequence[Sequence[Utterance]]) -> None:
    if len(refs) != len(utterances):
        raise ValueError(f"need one reference group per utterance, got {len(refs)} for {len(utterances)}")
    for utt, group in zip(utterances, refs):
        if not group:
            raise ValueError(f"utterance {utt.utt_id!r} has no timbre references")
        for ref in group:
            if ref.speaker_id != utt.speaker_id:
                raise ValueError(
                    f"timbre reference {ref.utt_id!r} is from speaker {ref.speaker_id}, "
                    f"not speaker {utt.speaker_id} of {utt.utt_id!r}"
                )


def total_loss(
    model: StableVcModel,
    utterances: "Utterance | Sequence[Utterance]",
    refs: "Sequence[Utterance] | Sequence[Sequence[Utterance]]",
    config: "TrainConfig | Dict[str, Any] | None" = None,
    generator: torch.Generator | None = None,
) -> tuple[Tensor, dict[str, Tensor]]:
    """``L_cfm + L_dur + lambda_grl * L_grl`` over a batch, regulated by the true durations.

    ``refs`` holds one list of same-speaker timbre references per utterance
    (a flat list when a single utterance is passed). Condition dropout is
    applied only while the model is in training mode.
    """
    config = _normalize_train_config(config)
    if isinstance(utterances, Utterance):
        utterances, refs = [utterances], [list(refs)]
    utterances = list(utterances)
    refs = [list(group) for group in refs]
    _check_refs(utterances, refs)

    state = _condition(model, utterances, utterances, refs)
    if model.config.use_duration:
        log_pred = model.duration(state.hidden, state.style.summary(), state.timbre_summary, state.token_mask)
        l_dur = duration_loss(log_pred, state.durations, state.token_mask)
    else:
        l_dur = state.hidden.new_zeros(())

    frame_content, frame_mask = regulate_batch(state.hidden, state.durations, state.token_mask)
    x1, mel_mask = _pad([model._tensor(u.mel.frames) for u in utterances])
    if x1.shape[1] != frame_content.shape[1] or not torch.equal(mel_mask, frame_mask):
        raise ValueError("token durations do not cover the mel frames")
    h = ConditionBundle(frame_content=frame_content, frame_mask=frame_mask, style=state.style, timbre=state.timbre)
    if model.training and config.cond_dropout > 0:
        drop = torch.rand(len(utterances), generator=generator) < config.cond_dropout
        h = model.null_bundle(h, drop.to(frame_content.device))

    batch = make_flow_batch(x1, h, generator, config.sigma_min)
    l_cfm = cfm_loss(model.flow, batch, frame_mask)
    labels = [model.speaker_index(u.speaker_id) for u in utterances]
    l_grl = grl_loss(state.style, labels, model.grl_head)

    total = l_cfm + l_dur + config.lambda_grl * l_grl
    return total, {"cfm": l_cfm, "dur": l_dur, "grl": l_grl}


def draw_refs(
    rng: np.random.Generator,
    utterance: Utterance,
    same_speaker: Sequence[Utterance],
    multi_ref: bool = True,
    max_refs: int = 3,
) -> list[Utterance]:
    """1..max_refs other utterances of the speaker, or the utterance itself."""
    others = [u for u in same_speaker if u.utt_id != utterance.utt_id]
    if not multi_ref or not others:
        return [utterance]
    n = int(rng.integers(1, min(max_refs, len(others)) + 1))
    picks = rng.choice(len(others), size=n, replace=False)
    return [others[int(i)] for i in picks]


_HISTORY_SCHEMA = {
    "iteration": pl.Int64,
    "total": pl.Float64,
    "cfm": pl.Float64,
    "dur": pl.Float64,
    "grl": pl.Float64,
}


@dataclass
class TrainResult:
    model: StableVcModel
    history: pl.DataFrame = field(default_factory=lambda: pl.DataFrame(schema=_HISTORY_SCHEMA))

    def smoothed(self, column: str = "cfm", window: int = 50) -> pl.Series:
        return self.history.get_column(column).rolling_mean(window_size=window, min_samples=1)


def train(
    model: StableVcModel,
    corpus: Corpus,
    config: "TrainConfig | Dict[str, Any] | None" = None,
) -> TrainResult:
    """Seeded AdamW loop on the combined objective.

    Batches and timbre references come from a numpy generator seeded with
    ``config.seed``; noise, ``t`` and condition dropout from a torch
    generator with the same seed.
    """
    config = _normalize_train_config(config)
    if len(corpus) == 0:
        raise CorpusError("cannot train on an empty corpus")

    rng = np.random.default_rng(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    by_speaker = {sid: corpus.by_speaker(sid) for sid in corpus.speaker_ids}
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    batch_size = min(config.batch_size, len(corpus))

    rows: list[dict[str, Any]] = []
    model.train()
    try:
        for iteration in range(config.iterations):
            picks = rng.choice(len(corpus), size=batch_size, replace=False)
            utts = [corpus.utterances[int(i)] for i in picks]
            refs = [
                draw_refs(rng, u, by_speaker[u.speaker_id], model.config.multi_ref, config.max_refs) for u in utts
            ]
            total, parts = total_loss(model, utts, refs, config, generator)
            row = {"iteration": iteration, "total": float(total), **{k: float(v) for k, v in parts.items()}}
            if not all(math.isfinite(v) for k, v in row.items() if k != "iteration"):
                _abort_non_finite(model, config, row, [u.utt_id for u in utts])

            optimizer.zero_grad(set_to_none=True)
            total.backward()
            if config.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            rows.append(row)

            if config.log_every and iteration % config.log_every == 0:
                logger.info(
                    "iter %d: total %.4f cfm %.4f dur %.4f grl %.4f",
                    iteration,
                    row["total"],
                    row["cfm"],
                    row["dur"],
                    row["grl"],
                )
            if config.checkpoint_every and config.checkpoint_path and (iteration + 1) % config.checkpoint_every == 0:
                from stablevc.checkpoint import save_checkpoint

                save_checkpoint(model, config.checkpoint_path)
                logger.debug("checkpoint written to %s after iteration %d", config.checkpoint_path, iteration)
    finally:
        model.eval()
    return TrainResult(model=model, history=pl.DataFrame(rows, schema=_HISTORY_SCHEMA))


def _abort_non_finite(model: StableVcModel, config: TrainConfig, row: dict[str, Any], utt_ids: list[str]) -> None:
    snapshot = {**row, "utt_ids": utt_ids, "gates": model.gates()}
    snapshot_path = None
    if config.checkpoint_path:
        from stablevc.checkpoint import save_checkpoint

        snapshot_path = str(Path(config.checkpoint_path).with_suffix(".nonfinite.ckpt"))
        save_checkpoint(model, snapshot_path)
    raise NonFiniteLossError(
        f"non-finite loss at iteration {row['iteration']}: "
        f"cfm={row['cfm']} dur={row['dur']} grl={row['grl']}",
        snapshot=snapshot,
        snapshot_path=snapshot_path,
    )


@dataclass(eq=False)
class Conversion:
    mel: MelSpectrogram
    token_ids: np.ndarray
    durations: np.ndarray
    log_durations: np.ndarray | None = None


def _check_timbre_refs(timbre_refs: Sequence[Utterance]) -> list[Utterance]:
    refs = list(timbre_refs)
    if not refs:
        raise ValueError("conversion needs at least one timbre reference")
    speakers = {r.speaker_id for r in refs}
    if len(speakers) > 1:
        raise ValueError(f"timbre references must share one speaker, got {sorted(speakers)}")
    return refs


def _sample(
    model: StableVcModel,
    state: _Conditioning,
    durations: Tensor,
    n_steps: int,
    seed: int,
    guidance_scale: float,
) -> MelSpectrogram:
    frame_content, frame_mask = regulate_batch(state.hidden, durations, state.token_mask)
    h = ConditionBundle(frame_content=frame_content, frame_mask=frame_mask, style=state.style, timbre=state.timbre)
    null_h = model.null_bundle(h) if guidance_scale != 1.0 else None
    x = euler_sample(
        model.flow,
        h,
        (1, frame_content.shape[1], model.config.n_mels),
        n_steps,
        guidance_scale,
        seed,
        null_h,
        dtype=model.dtype,
        device=model.device,
    )
    return MelSpectrogram(x[0].detach().cpu().float().numpy())


@torch.no_grad()
def convert_detailed(
    model: StableVcModel,
    source: Utterance,
    timbre_refs: Sequence[Utterance],
    style_ref: Utterance,
    n_steps: int = DEFAULT_STEPS,
    seed: int = 0,
    guidance_scale: float = DEFAULT_GUIDANCE,
) -> Conversion:
    """Convert ``source`` to the timbre of ``timbre_refs`` and the style of ``style_ref``."""
    refs = _check_timbre_refs(timbre_refs)
    state = _condition(model, [source], [style_ref], [refs])
    log_durations = None
    if model.config.use_duration:
        pred = model.duration.predict(state.hidden, state.style.summary(), state.timbre_summary, state.token_mask)
        durations = pred.rounded
        log_durations = pred.log_durations[0].cpu().double().numpy()
    else:
        durations = torch.ones_like(state.token_ids)
    mel = _sample(model, state, durations, n_steps, seed, guidance_scale)
    return Conversion(
        mel=mel,
        token_ids=state.token_ids[0].cpu().numpy(),
        durations=durations[0].cpu().numpy(),
        log_durations=log_durations,
    )


@torch.no_grad()
def predict_durations(
    model: StableVcModel,
    source: Utterance,
    timbre_refs: Sequence[Utterance],
    style_ref: Utterance,
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted and true durations of the deduplicated source tokens."""
    if not model.config.use_duration:
        raise ValueError("model was built without a duration predictor")
    state = _condition(model, [source], [style_ref], [_check_timbre_refs(timbre_refs)])
    pred = model.duration.predict(state.hidden, state.style.summary(), state.timbre_summary, state.token_mask)
    return pred.rounded[0].cpu().numpy(), state.durations[0].cpu().numpy()


def convert(
    model: StableVcModel,
    source: Utterance,
    timbre_refs: Sequence[Utterance],
    style_ref: Utterance,
    n_steps: int = DEFAULT_STEPS,
    seed: int = 0,
    guidance_scale: float = DEFAULT_GUIDANCE,
) -> MelSpectrogram:
    """Convert ``source`` to the timbre of ``timbre_refs`` and the style of ``style_ref``.

    Parameters
    ----------
    model : StableVcModel
        Trained model.
    source : Utterance
        Supplies the content tokens.
    timbre_refs : sequence of Utterance
        One or more utterances of the target speaker.
    style_ref : Utterance
        Supplies prosody and token durations.
    n_steps : int, default 10
        Euler steps of the sampler.
    seed : int, default 0
        Seed of the starting noise; equal seeds give equal output.
    guidance_scale : float, default 1.0
        Classifier-free guidance weight. 1 disables guidance.

    Returns
    -------
    MelSpectrogram
        Frames at the predicted durations of the source tokens, or one
        frame per token when the model has no duration predictor.

    Raises
    ------
    ValueError
        ``timbre_refs`` is empty or mixes speakers.
    """
    return convert_detailed(model, source, timbre_refs, style_ref, n_steps, seed, guidance_scale).mel


@torch.no_grad()
def reconstruct(
    model: StableVcModel,
    utterance: Utterance,
    refs: Sequence[Utterance] | None = None,
    n_steps: int = DEFAULT_STEPS,
    seed: int = 0,
) -> MelSpectrogram:
    """Resynthesize an utterance with its own style and its true token durations."""
    refs = _check_timbre_refs(refs or [utterance])
    state = _condition(model, [utterance], [utterance], [refs])
    return _sample(model, state, state.durations, n_steps, seed, DEFAULT_GUIDANCE)


def config_dict(config: ModelConfig) -> dict[str, Any]:
    out = asdict(config)
    out["speaker_ids"] = list(config.speaker_ids)
    return out
