from __future__ import annotations

import pytest
import torch

from stablevc.cfm import (
    SIGMA_MIN,
    FlowBatch,
    cfm_loss,
    cfm_target,
    euler_sample,
    gaussian_ot_field,
    make_flow_batch,
    sample_path,
)


def _point_mass_field(x1: torch.Tensor, sigma_min: float = SIGMA_MIN):
    """Exact field transporting noise onto the single point ``x1``."""

    def field(x, t, h=None):
        t = t.reshape(-1, *([1] * (x.dim() - 1)))
        sigma_t = 1.0 - (1.0 - sigma_min) * t
        x0 = (x - t * x1) / sigma_t
        return x1 - (1.0 - sigma_min) * x0

    return field


def test_path_endpoints() -> None:
    x0 = torch.randn(3, 4, dtype=torch.float64)
    x1 = torch.randn(3, 4, dtype=torch.float64)
    torch.testing.assert_close(sample_path(x0, x1, 0.0), x0)
    torch.testing.assert_close(sample_path(x0, x1, 1.0), x1 + SIGMA_MIN * x0)


def test_path_midpoint_example() -> None:
    x = sample_path(torch.tensor([1.0], dtype=torch.float64), torch.tensor([3.0], dtype=torch.float64), 0.5)
    assert x.item() == pytest.approx(2.00005, abs=1e-12)


def test_target_is_path_derivative() -> None:
    x0 = torch.randn(5, 2, dtype=torch.float64)
    x1 = torch.randn(5, 2, dtype=torch.float64)
    target = cfm_target(x0, x1)
    for t in (0.1, 0.4, 0.9):
        slope = (sample_path(x0, x1, t + 1e-6) - sample_path(x0, x1, t - 1e-6)) / 2e-6
        torch.testing.assert_close(slope, target, atol=1e-7, rtol=1e-7)


def test_per_sample_t_broadcasts() -> None:
    x0 = torch.zeros(2, 3, 4)
    x1 = torch.ones(2, 3, 4)
    x = sample_path(x0, x1, torch.tensor([0.25, 0.75]))
    assert bool((x[0] == 0.25).all())
    assert bool((x[1] == 0.75).all())


@pytest.mark.parametrize("t", [-0.1, 1.5])
def test_t_outside_unit_interval_rejected(t: float) -> None:
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        sample_path(torch.zeros(2), torch.zeros(2), t)


def test_shape_mismatch_rejected() -> None:
    with pytest.raises(ValueError, match="equal shapes"):
        cfm_target(torch.zeros(2), torch.zeros(3))


def test_cheating_field_has_zero_loss() -> None:
    gen = torch.Generator().manual_seed(0)
    batch = make_flow_batch(torch.randn(4, 6, 3), generator=gen)
    assert cfm_loss(lambda x, t, h: batch.target_u, batch).item() == 0.0


def test_zero_field_loss_is_target_energy() -> None:
    gen = torch.Generator().manual_seed(1)
    batch = make_flow_batch(torch.randn(4, 6, 3), generator=gen)
    loss = cfm_loss(lambda x, t, h: torch.zeros_like(x), batch)
    assert loss.item() == pytest.approx(batch.target_u.pow(2).mean().item(), rel=1e-6)


def test_masked_loss_ignores_padding() -> None:
    x0 = torch.zeros(1, 3, 2)
    x1 = torch.ones(1, 3, 2)
    t = torch.tensor([0.5])
    batch = FlowBatch(x0=x0, x1=x1, t=t, x_t=sample_path(x0, x1, t), target_u=cfm_target(x0, x1))

    def field(x, t, h):
        out = torch.ones_like(x)
        out[:, 2] = 100.0
        return out

    mask = torch.tensor([[True, True, False]])
    assert cfm_loss(field, batch, mask).item() == 0.0


def test_field_shape_checked() -> None:
    batch = make_flow_batch(torch.randn(2, 3))
    with pytest.raises(ValueError, match="vector field returned"):
        cfm_loss(lambda x, t, h: x[:, :2], batch)


def test_flow_batch_is_seeded() -> None:
    x1 = torch.randn(3, 5)
    a = make_flow_batch(x1, generator=torch.Generator().manual_seed(9))
    b = make_flow_batch(x1, generator=torch.Generator().manual_seed(9))
    assert torch.equal(a.x0, b.x0)
    assert torch.equal(a.t, b.t)
    assert bool(((a.t >= 0) & (a.t < 1)).all())


@pytest.mark.parametrize("n_steps", [1, 3, 10])
def test_constant_field_moves_by_constant(n_steps: int) -> None:
    noise = torch.randn(2, 4, dtype=torch.float64)
    out = euler_sample(lambda x, t, h: torch.full_like(x, 0.5), None, noise.shape, n_steps, noise=noise)
    torch.testing.assert_close(out, noise + 0.5)


@pytest.mark.parametrize("n_steps", [1, 2, 7, 10])
def test_point_mass_field_is_integrated_exactly(n_steps: int) -> None:
    x1 = torch.tensor([[2.0, -1.0, 0.5]], dtype=torch.float64)
    noise = torch.randn(1, 3, dtype=torch.float64)
    out = euler_sample(_point_mass_field(x1), None, noise.shape, n_steps, noise=noise)
    torch.testing.assert_close(out, x1 + SIGMA_MIN * noise, atol=1e-10, rtol=0)


def test_seeded_sampling_is_deterministic() -> None:
    field = gaussian_ot_field(1.0, 0.5)
    a = euler_sample(field, None, (8, 3), 5, seed=42)
    b = euler_sample(field, None, (8, 3), 5, seed=42)
    c = euler_sample(field, None, (8, 3), 5, seed=43)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_more_steps_reduce_discretisation_error() -> None:
    field = gaussian_ot_field(2.0, 0.25)
    noise = torch.randn(4096, 1, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    reference = euler_sample(field, None, noise.shape, 1000, noise=noise)
    errors = {
        n: (euler_sample(field, None, noise.shape, n, noise=noise) - reference).abs().mean().item()
        for n in (2, 10)
    }
    assert errors[10] < errors[2]


def test_unit_guidance_and_equal_null_are_no_ops() -> None:
    def field(x, t, h):
        return h * torch.ones_like(x) + 0.1 * x

    noise = torch.randn(3, 2, dtype=torch.float64)
    plain = euler_sample(field, 1.0, noise.shape, 4, noise=noise)
    same_null = euler_sample(field, 1.0, noise.shape, 4, guidance_scale=3.0, null_h=1.0, noise=noise)
    torch.testing.assert_close(plain, same_null)
    unconditional = euler_sample(field, -1.0, noise.shape, 4, noise=noise)
    zero_scale = euler_sample(field, 1.0, noise.shape, 4, guidance_scale=0.0, null_h=-1.0, noise=noise)
    torch.testing.assert_close(unconditional, zero_scale)


def test_sampler_validation() -> None:
    field = gaussian_ot_field(0.0, 1.0)
    with pytest.raises(ValueError, match="n_steps"):
        euler_sample(field, None, (1, 1), 0)
    with pytest.raises(ValueError, match="null condition"):
        euler_sample(field, None, (1, 1), 2, guidance_scale=2.0)
    with pytest.raises(ValueError, match="var"):
        gaussian_ot_field(0.0, 0.0)
