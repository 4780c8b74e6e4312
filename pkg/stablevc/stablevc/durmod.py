"""Token duration prediction, log-scale duration loss, and length regulation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import torch
import torch.nn.functional as F
from torch import Tensor, nn
from torch.nn.utils.rnn import pad_sequence


@dataclass
class DurationPrediction:
    log_durations: Tensor
    rounded: Tensor


def round_durations(log_durations: Tensor) -> Tensor:
    """``max(1, round(exp(log_d)))`` as integer frame counts."""
    return torch.round(torch.exp(log_durations)).clamp(min=1).long()


class DurationPredictor(nn.Module):
    """Conv stack over token states with style and timbre summaries added as a bias.

    The output layer starts at zero, so an untrained predictor gives one
    frame per token.
    """

    def __init__(self, width: int, kernel_size: int = 3, n_layers: int = 2):
        super().__init__()
        self.style_bias = nn.Linear(width, width)
        self.timbre_bias = nn.Linear(width, width)
        self.convs = nn.ModuleList(
            [nn.Conv1d(width, width, kernel_size, padding=kernel_size // 2) for _ in range(n_layers)]
        )
        self.norms = nn.ModuleList([nn.LayerNorm(width) for _ in range(n_layers)])
        self.proj = nn.Linear(width, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(
        self,
        content_hidden: Tensor,
        style_summary: Tensor,
        timbre_summary: Tensor,
        mask: Tensor | None = None,
    ) -> Tensor:
        if mask is None:
            mask = torch.ones(content_hidden.shape[:2], dtype=torch.bool, device=content_hidden.device)
        weights = mask.to(content_hidden.dtype)[..., None]
        x = content_hidden + (self.style_bias(style_summary) + self.timbre_bias(timbre_summary))[:, None, :]
        for conv, norm in zip(self.convs, self.norms):
            x = F.silu(norm(conv((x * weights).transpose(1, 2)).transpose(1, 2)))
        return self.proj(x).squeeze(-1) * weights[..., 0]

    def predict(
        self,
        content_hidden: Tensor,
        style_summary: Tensor,
        timbre_summary: Tensor,
        mask: Tensor | None = None,
    ) -> DurationPrediction:
        log_durations = self(content_hidden, style_summary, timbre_summary, mask)
        return DurationPrediction(log_durations=log_durations, rounded=round_durations(log_durations))


def duration_loss(log_pred: Tensor, true_durations: Any, mask: Tensor | None = None) -> Tensor:
    """Mean over tokens of ``(log_pred - log(true))**2``."""
    true = torch.as_tensor(true_durations, device=log_pred.device)
    if true.shape != log_pred.shape:
        raise ValueError(f"shape mismatch: log_pred {tuple(log_pred.shape)} vs durations {tuple(true.shape)}")
    if mask is None:
        mask = torch.ones_like(true, dtype=torch.bool)
    if bool((true[mask] < 1).any()):
        raise ValueError("true durations must be >= 1")
    target = torch.log(true.to(log_pred.dtype).clamp(min=1.0))
    weights = mask.to(log_pred.dtype)
    return ((log_pred - target) ** 2 * weights).sum() / weights.sum().clamp(min=1.0)


def regulate_length(hidden: Tensor, durations: Any) -> Tensor:
    """Repeat row ``i`` of an L x D matrix ``durations[i]`` times."""
    durations = torch.as_tensor(durations, dtype=torch.long, device=hidden.device)
    if durations.dim() != 1 or durations.shape[0] != hidden.shape[0]:
        raise ValueError(f"need one duration per row: {hidden.shape[0]} rows, durations {tuple(durations.shape)}")
    if bool((durations < 1).any()):
        raise ValueError("durations must be >= 1")
    return torch.repeat_interleave(hidden, durations, dim=0)


def regulate_batch(hidden: Tensor, durations: Tensor, mask: Tensor) -> tuple[Tensor, Tensor]:
    """Length-regulate a padded (B, L, D) batch; returns frames (B, T, D) and a (B, T) mask."""
    rows = []
    for b in range(hidden.shape[0]):
        n = int(mask[b].sum())
        rows.append(regulate_length(hidden[b, :n], durations[b, :n]))
    frames = pad_sequence(rows, batch_first=True)
    lengths = torch.tensor([r.shape[0] for r in rows], device=hidden.device)
    frame_mask = torch.arange(frames.shape[1], device=hidden.device)[None, :] < lengths[:, None]
    return frames, frame_mask
