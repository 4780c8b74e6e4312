"""Style encoder (4x temporal compression) and the gradient-reversal speaker classifier."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence, Union

import torch
import torch.nn.functional as F
from torch import Tensor, nn

POOL_FACTOR = 4

LabelInput = Union[int, Sequence[int], Tensor]


@dataclass
class StyleSequence:
    """Compressed style frames (B, S, D) and their validity mask (B, S)."""

    frames: Tensor
    mask: Tensor

    @property
    def lengths(self) -> Tensor:
        return self.mask.sum(dim=1)

    def summary(self) -> Tensor:
        """Time average over valid frames, (B, D)."""
        weights = self.mask.to(self.frames.dtype)[..., None]
        return (self.frames * weights).sum(dim=1) / weights.sum(dim=1).clamp(min=1.0)


def pooled_length(n_frames: int, factor: int = POOL_FACTOR) -> int:
    return math.ceil(n_frames / factor)


def average_pool(features: Tensor, mask: Tensor, factor: int = POOL_FACTOR) -> tuple[Tensor, Tensor]:
    """Mean over non-overlapping windows of ``factor`` frames.

    A partial last window is averaged over the frames it has.
    """
    b, t, c = features.shape
    s = pooled_length(t, factor)
    pad = s * factor - t
    weights = mask.to(features.dtype)
    summed = F.pad(features * weights[..., None], (0, 0, 0, pad)).view(b, s, factor, c).sum(dim=2)
    counts = F.pad(weights, (0, pad)).view(b, s, factor).sum(dim=2)
    return summed / counts.clamp(min=1.0)[..., None], counts > 0


class ConvBlock(nn.Module):
    def __init__(self, width: int, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv1d(width, width, kernel_size, padding=kernel_size // 2)
        self.norm = nn.LayerNorm(width)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        weights = mask.to(x.dtype)[..., None]
        y = self.conv((x * weights).transpose(1, 2)).transpose(1, 2)
        return (x + F.silu(self.norm(y))) * weights


class StyleEncoder(nn.Module):
    """Average pooling by 4, an input projection, then residual conv blocks."""

    def __init__(self, in_dim: int = 8, width: int = 64, n_blocks: int = 2, pool_factor: int = POOL_FACTOR):
        super().__init__()
        self.pool_factor = pool_factor
        self.input = nn.Linear(in_dim, width)
        self.blocks = nn.ModuleList([ConvBlock(width) for _ in range(n_blocks)])

    def forward(self, style_features: Tensor, mask: Tensor | None = None) -> StyleSequence:
        if style_features.dim() == 2:
            style_features = style_features.unsqueeze(0)
        if style_features.shape[1] < 1:
            raise ValueError("style features need at least one frame")
        if mask is None:
            mask = torch.ones(style_features.shape[:2], dtype=torch.bool, device=style_features.device)
        pooled, pooled_mask = average_pool(style_features, mask, self.pool_factor)
        x = self.input(pooled) * pooled_mask.to(pooled.dtype)[..., None]
        for block in self.blocks:
            x = block(x, pooled_mask)
        return StyleSequence(frames=x, mask=pooled_mask)


def encode_style(encoder: StyleEncoder, style_features: Any) -> StyleSequence:
    """Encode one utterance's T x 8 style features."""
    param = next(encoder.parameters())
    features = torch.as_tensor(style_features, dtype=param.dtype, device=param.device)
    return encoder(features)


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x: Tensor, scale: float) -> Tensor:
        ctx.scale = scale
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad: Tensor) -> tuple[Tensor, None]:
        return -ctx.scale * grad, None


def reverse_gradient(x: Tensor, scale: float = 1.0) -> Tensor:
    """Identity in the forward pass; multiplies the gradient by ``-scale``."""
    return _GradientReversal.apply(x, scale)


class GrlHead(nn.Module):
    """Speaker classifier over the time-averaged style representation."""

    def __init__(self, width: int, n_speakers: int, reversal_scale: float = 1.0, hidden: int | None = None):
        super().__init__()
        if n_speakers < 1:
            raise ValueError(f"n_speakers must be >= 1, got {n_speakers}")
        if reversal_scale <= 0:
            raise ValueError(f"reversal_scale must be > 0, got {reversal_scale}")
        hidden = hidden or width
        self.n_speakers = n_speakers
        self.reversal_scale = reversal_scale
        self.classifier = nn.Sequential(nn.Linear(width, hidden), nn.SiLU(), nn.Linear(hidden, n_speakers))

    def forward(self, global_style: Tensor, reverse: bool = True) -> Tensor:
        if reverse:
            global_style = reverse_gradient(global_style, self.reversal_scale)
        return self.classifier(global_style)


def grl_loss(style_seq: StyleSequence, speaker_labels: LabelInput, head: GrlHead, *, reverse: bool = True) -> Tensor:
    """Cross-entropy of the speaker classifier on ``avg(style_seq)``.

    Gradients reaching the style encoder are reversed; the classifier's own
    gradients are not.
    """
    labels = torch.as_tensor(speaker_labels, dtype=torch.long, device=style_seq.frames.device).reshape(-1)
    if labels.shape[0] != style_seq.frames.shape[0]:
        raise ValueError(f"expected {style_seq.frames.shape[0]} speaker labels, got {labels.shape[0]}")
    if bool((labels < 0).any()) or bool((labels >= head.n_speakers).any()):
        raise ValueError(f"speaker labels must be in [0, {head.n_speakers})")
    return F.cross_entropy(head(style_seq.summary(), reverse=reverse), labels)
