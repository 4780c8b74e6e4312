"""DiT blocks with dual timbre/style attention and an adaptive style gate.

All attention here uses query-key normalization: queries and keys are
L2-normalized per head and scaled by a learned temperature, so every
pre-softmax logit lies in ``[-temperature, temperature]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from stablevc.styleenc import StyleSequence


@dataclass
class TimbreReference:
    """Reference mel frames of one speaker per batch item plus its speaker prior.

    ``ref_mel`` is (B, R, M) with ``ref_mask`` (B, R) marking real frames.
    ``prior_vp`` is (B, D), or ``None`` when the prior slot is disabled.
    """

    ref_mel: Tensor
    ref_mask: Tensor
    prior_vp: Tensor | None = None

    def __post_init__(self) -> None:
        if self.ref_mel.dim() != 3 or self.ref_mel.shape[1] < 1:
            raise ValueError(f"ref_mel must be (B, R, M) with R >= 1, got {tuple(self.ref_mel.shape)}")
        if not bool(self.ref_mask.any(dim=1).all()):
            raise ValueError("every timbre reference needs at least one frame")


@dataclass
class AttentionWeights:
    timbre: Tensor
    style: Tensor
    timbre_logits: Tensor
    style_logits: Tensor


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return x.view(b, n, heads, d // heads).transpose(1, 2)


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def qk_norm_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    temperature: Tensor,
    key_mask: Tensor | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Attention over unit-norm queries/keys; returns (output, weights, logits).

    Shapes: q (B, H, L, d), k/v (B, H, S, d), key_mask (B, S) with True for
    real keys.
    """
    logits = temperature * (F.normalize(q, dim=-1) @ F.normalize(k, dim=-1).transpose(-1, -2))
    if key_mask is not None:
        logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
    weights = logits.softmax(dim=-1)
    return weights @ v, weights, logits


def sinusoidal_embedding(t: Tensor, width: int, scale: float = 1000.0) -> Tensor:
    half = width // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / max(half, 1)
    )
    args = scale * t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if width % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def normalized_positions(mask: Tensor, width: int, dtype: torch.dtype = torch.float32) -> Tensor:
    """Sinusoidal features of normalized time u in [0, 1] for each valid position.

    ``mask`` is (B, L); padded positions get zeros.
    """
    lengths = mask.sum(dim=1, keepdim=True).to(dtype)
    idx = torch.arange(mask.shape[1], dtype=dtype, device=mask.device)[None, :]
    u = idx / (lengths - 1.0).clamp(min=1.0)
    half = width // 2
    freqs = math.pi * torch.arange(1, half + 1, dtype=dtype, device=mask.device)
    args = u[..., None] * freqs
    enc = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if width % 2:
        enc = F.pad(enc, (0, 1))
    return enc * mask[..., None].to(dtype)


def feed_forward(width: int, mlp_ratio: float = 4.0) -> nn.Sequential:
    hidden = int(width * mlp_ratio)
    return nn.Sequential(nn.Linear(width, hidden), nn.GELU(), nn.Linear(hidden, width))


class TimestepEmbedding(nn.Module):
    """Sinusoidal timestep features followed by a two-layer SiLU MLP."""

    def __init__(self, width: int, scale: float = 1000.0):
        super().__init__()
        self.width = width
        self.scale = scale
        self.mlp = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, width))

    def forward(self, t: Tensor) -> Tensor:
        return self.mlp(sinusoidal_embedding(t, self.width, self.scale))


def film(c: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """``gamma * c + beta``; (B, D) modulations broadcast over time."""
    if gamma.dim() == c.dim() - 1:
        gamma = gamma.unsqueeze(-2)
        beta = beta.unsqueeze(-2)
    return gamma * c + beta


class FiLM(nn.Module):
    """Timestep-conditioned feature-wise affine layer, identity at initialisation."""

    def __init__(self, width: int, cond_dim: int | None = None):
        super().__init__()
        self.net = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim or width, 2 * width))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def modulation(self, t_embed: Tensor) -> tuple[Tensor, Tensor]:
        delta_gamma, beta = self.net(t_embed).chunk(2, dim=-1)
        return 1.0 + delta_gamma, beta

    def forward(self, c: Tensor, t_embed: Tensor) -> Tensor:
        gamma, beta = self.modulation(t_embed)
        return film(c, gamma, beta)


class DualAttention(nn.Module):
    """Timbre attention plus gated style attention sharing one normalized query.

    The timbre keys are the speaker prior (slot 0) followed by the reference
    frames; a value-space projection of the prior fills value slot 0 so keys
    and values have equal length. The style branch is scaled by
    ``tanh(alpha)`` with ``alpha`` starting at zero, or by 1 when
    ``use_gate`` is off.
    """

    def __init__(
        self,
        width: int,
        heads: int = 4,
        ref_dim: int | None = None,
        *,
        use_gate: bool = True,
        init_temperature: float | None = None,
    ):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} must be divisible by heads {heads}")
        ref_dim = ref_dim or width
        self.heads = heads
        self.head_dim = width // heads
        self.use_gate = use_gate

        self.query = nn.Linear(width, width)
        self.timbre_key = nn.Linear(ref_dim, width)
        self.timbre_value = nn.Linear(ref_dim, width)
        self.prior_key = nn.Linear(width, width)
        self.prior_value = nn.Linear(width, width)
        self.style_key = nn.Linear(width, width)
        self.style_value = nn.Linear(width, width)
        self.out = nn.Linear(width, width)

        self.alpha = nn.Parameter(torch.zeros(()))
        init = math.sqrt(self.head_dim) if init_temperature is None else init_temperature
        self.log_temperature_timbre = nn.Parameter(torch.tensor(math.log(init)))
        self.log_temperature_style = nn.Parameter(torch.tensor(math.log(init)))

    def gate(self) -> Tensor:
        if self.use_gate:
            return torch.tanh(self.alpha)
        return torch.ones_like(self.alpha)

    def timbre_keys_values(self, timbre: TimbreReference) -> tuple[Tensor, Tensor, Tensor]:
        keys = self.timbre_key(timbre.ref_mel)
        values = self.timbre_value(timbre.ref_mel)
        mask = timbre.ref_mask
        if timbre.prior_vp is not None:
            keys = torch.cat([self.prior_key(timbre.prior_vp).unsqueeze(1), keys], dim=1)
            values = torch.cat([self.prior_value(timbre.prior_vp).unsqueeze(1), values], dim=1)
            prior_slot = torch.ones(mask.shape[0], 1, dtype=torch.bool, device=mask.device)
            mask = torch.cat([prior_slot, mask], dim=1)
        return keys, values, mask

    def forward(
        self,
        c: Tensor,
        style: StyleSequence,
        timbre: TimbreReference,
        *,
        return_weights: bool = False,
    ) -> "Tensor | tuple[Tensor, AttentionWeights]":
        q = split_heads(self.query(c), self.heads)

        k_t, v_t, mask_t = self.timbre_keys_values(timbre)
        out_t, w_t, logits_t = qk_norm_attention(
            q,
            split_heads(k_t, self.heads),
            split_heads(v_t, self.heads),
            self.log_temperature_timbre.exp(),
            mask_t,
        )
        out_s, w_s, logits_s = qk_norm_attention(
            q,
            split_heads(self.style_key(style.frames), self.heads),
            split_heads(self.style_value(style.frames), self.heads),
            self.log_temperature_style.exp(),
            style.mask,
        )
        out = self.out(merge_heads(out_t + self.gate() * out_s))
        if return_weights:
            return out, AttentionWeights(w_t, w_s, logits_t, logits_s)
        return out


class DiTBlock(nn.Module):
    """FiLM, then pre-norm dual attention and feed-forward residual sublayers."""

    def __init__(
        self,
        width: int,
        heads: int = 4,
        ref_dim: int | None = None,
        *,
        mlp_ratio: float = 4.0,
        use_gate: bool = True,
    ):
        super().__init__()
        self.film = FiLM(width)
        self.norm_attn = nn.LayerNorm(width)
        self.attn = DualAttention(width, heads, ref_dim, use_gate=use_gate)
        self.norm_ff = nn.LayerNorm(width)
        self.ff = feed_forward(width, mlp_ratio)

    def forward(self, c: Tensor, t_embed: Tensor, style: StyleSequence, timbre: TimbreReference) -> Tensor:
        c = self.film(c, t_embed)
        h = c + self.attn(self.norm_attn(c), style, timbre)
        return h + self.ff(self.norm_ff(h))


class SelfAttentionBlock(nn.Module):
    """Content-stack block: QK-normalized self-attention and feed-forward, no conditioning."""

    def __init__(self, width: int, heads: int = 4, *, mlp_ratio: float = 4.0):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} must be divisible by heads {heads}")
        self.heads = heads
        self.norm_attn = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.log_temperature = nn.Parameter(torch.tensor(math.log(math.sqrt(width // heads))))
        self.norm_ff = nn.LayerNorm(width)
        self.ff = feed_forward(width, mlp_ratio)

    def forward(self, c: Tensor, mask: Tensor) -> Tensor:
        q, k, v = self.qkv(self.norm_attn(c)).chunk(3, dim=-1)
        attended, _, _ = qk_norm_attention(
            split_heads(q, self.heads),
            split_heads(k, self.heads),
            split_heads(v, self.heads),
            self.log_temperature.exp(),
            mask,
        )
        h = c + self.out(merge_heads(attended))
        h = h + self.ff(self.norm_ff(h))
        return h * mask[..., None].to(h.dtype)
