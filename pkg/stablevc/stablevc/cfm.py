"""Optimal-transport conditional flow matching and the Euler sampler.

The probability path between noise ``x0 ~ N(0, I)`` and data ``x1`` is

    x_t = sigma_t * x0 + t * x1,    sigma_t = 1 - (1 - sigma_min) * t

and the regression target of the vector field is
``u = x1 - (1 - sigma_min) * x0``, constant in ``t``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable

import torch
from torch import Tensor

from stablevc.dualagc import TimbreReference
from stablevc.styleenc import StyleSequence

logger = logging.getLogger(__name__)

SIGMA_MIN = 1e-4
DEFAULT_STEPS = 10
DEFAULT_GUIDANCE = 1.0


@dataclass
class ConditionBundle:
    """Everything the vector field is conditioned on besides ``x_t`` and ``t``.

    ``frame_content`` is (B, T, D) and must match the target mel length.
    """

    frame_content: Tensor
    frame_mask: Tensor
    style: StyleSequence
    timbre: TimbreReference

    def __post_init__(self) -> None:
        if self.frame_content.shape[:2] != self.frame_mask.shape:
            raise ValueError(
                f"frame_content {tuple(self.frame_content.shape)} does not match frame_mask "
                f"{tuple(self.frame_mask.shape)}"
            )


VectorField = Callable[[Tensor, Tensor, Any], Tensor]


@dataclass
class FlowBatch:
    x0: Tensor
    x1: Tensor
    t: Tensor
    x_t: Tensor
    target_u: Tensor
    h: Any = None


def pad_t_like_x(t: "Tensor | float", x: Tensor) -> Tensor:
    """Reshape a per-sample ``t`` of shape (B,) so it broadcasts against ``x``."""
    t = torch.as_tensor(t, dtype=x.dtype, device=x.device)
    if t.dim() == 0:
        return t
    return t.reshape(-1, *([1] * (x.dim() - 1)))


def sample_path(x0: Tensor, x1: Tensor, t: "Tensor | float", sigma_min: float = SIGMA_MIN) -> Tensor:
    if x0.shape != x1.shape:
        raise ValueError(f"x0 and x1 must have equal shapes, got {tuple(x0.shape)} and {tuple(x1.shape)}")
    t = pad_t_like_x(t, x0)
    if bool((t < 0).any()) or bool((t > 1).any()):
        raise ValueError("t must lie in [0, 1]")
    sigma_t = (1.0 - t) + sigma_min * t
    return sigma_t * x0 + t * x1


def cfm_target(x0: Tensor, x1: Tensor, sigma_min: float = SIGMA_MIN) -> Tensor:
    if x0.shape != x1.shape:
        raise ValueError(f"x0 and x1 must have equal shapes, got {tuple(x0.shape)} and {tuple(x1.shape)}")
    return x1 - (1.0 - sigma_min) * x0


def make_flow_batch(
    x1: Tensor,
    h: Any = None,
    generator: torch.Generator | None = None,
    sigma_min: float = SIGMA_MIN,
) -> FlowBatch:
    """Draw noise and one uniform ``t`` per sample, then build the path point and target."""
    x0 = torch.randn(x1.shape, generator=generator, dtype=x1.dtype, device=x1.device)
    t = torch.rand(x1.shape[0], generator=generator, dtype=x1.dtype, device=x1.device)
    return FlowBatch(
        x0=x0,
        x1=x1,
        t=t,
        x_t=sample_path(x0, x1, t, sigma_min),
        target_u=cfm_target(x0, x1, sigma_min),
        h=h,
    )


def cfm_loss(field: VectorField, batch: FlowBatch, mask: Tensor | None = None) -> Tensor:
    """Mean squared error between ``field(x_t, t, h)`` and the target.

    ``mask`` (B, T) restricts the average to valid frames of padded
    (B, T, C) batches.
    """
    pred = field(batch.x_t, batch.t, batch.h)
    if pred.shape != batch.target_u.shape:
        raise ValueError(
            f"vector field returned shape {tuple(pred.shape)}, expected {tuple(batch.target_u.shape)}"
        )
    sq = (pred - batch.target_u) ** 2
    if mask is None:
        return sq.mean()
    weights = mask.to(sq.dtype)[..., None]
    return (sq * weights).sum() / (weights.sum() * sq.shape[-1]).clamp(min=1.0)


def euler_sample(
    field: VectorField,
    h: Any,
    shape: "tuple[int, ...] | torch.Size",
    n_steps: int = DEFAULT_STEPS,
    guidance_scale: float = DEFAULT_GUIDANCE,
    seed: int = 0,
    null_h: Any = None,
    *,
    dtype: torch.dtype = torch.float32,
    device: "torch.device | str | None" = None,
    noise: Tensor | None = None,
) -> Tensor:
    """Integrate the field from seeded Gaussian noise at t=0 to t=1.

    Left-endpoint Euler on the grid ``t_k = k / n_steps``. With
    ``guidance_scale != 1`` each step blends the conditional field with the
    field under ``null_h``. ``noise`` replaces the seeded draw.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if guidance_scale != 1.0 and null_h is None:
        raise ValueError("guidance_scale != 1 needs a null condition bundle")

    if noise is None:
        gen = torch.Generator().manual_seed(int(seed))
        x = torch.randn(tuple(shape), generator=gen, dtype=dtype).to(device)
    else:
        x = noise.clone()
    dt = 1.0 / n_steps
    for k in range(n_steps):
        t = torch.full((x.shape[0],), k / n_steps, dtype=x.dtype, device=x.device)
        v = field(x, t, h)
        if guidance_scale != 1.0:
            v_null = field(x, t, null_h)
            v = v_null + guidance_scale * (v - v_null)
        x = x + dt * v
    return x


def gaussian_ot_field(mean: float, var: float, sigma_min: float = SIGMA_MIN) -> VectorField:
    """Exact marginal field transporting N(0, 1) to N(mean, var) along the OT path.

    ``v(x, t) = mean + (t var - (1 - sigma_min) sigma_t) / (sigma_t^2 + t^2 var) * (x - t mean)``
    """
    if var <= 0:
        raise ValueError(f"var must be > 0, got {var}")

    def field(x: Tensor, t: Tensor, h: Any = None) -> Tensor:
        t = pad_t_like_x(t, x)
        sigma_t = (1.0 - t) + sigma_min * t
        gain = (t * var - (1.0 - sigma_min) * sigma_t) / (sigma_t**2 + t**2 * var)
        return mean + gain * (x - t * mean)

    return field
