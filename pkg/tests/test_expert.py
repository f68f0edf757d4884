"""Segmentation expert: shape/determinism contracts, FPN and attention
behavior, loss analytics, and double-precision gradient checks."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from defectlab.config import ArchConfig, ExpertTrainConfig
from defectlab.expert import FpnFusion, RegionExpert, SpatialAttention, seg_loss
from defectlab.expert.train import load_expert, train_region_expert
from defectlab.checkpoints import load_checkpoint

from conftest import check_grad


@pytest.fixture(scope="module")
def expert():
    torch.manual_seed(0)
    return RegionExpert(ArchConfig()).eval()


def test_forward_shapes(expert):
    x = torch.rand(2, 3, 64, 64)
    probs, feats = expert(x)
    assert probs.shape == (2, 64, 64)
    assert feats.shape == (2, 64, 8, 8)


def test_forward_probability_range_and_finite(expert):
    for x in (torch.zeros(1, 3, 64, 64), torch.ones(1, 3, 64, 64), torch.rand(1, 3, 64, 64)):
        probs, feats = expert(x)
        assert torch.isfinite(probs).all() and torch.isfinite(feats).all()
        assert probs.min() >= 0.0 and probs.max() <= 1.0


def test_forward_eval_determinism(expert):
    x = torch.rand(1, 3, 64, 64, generator=torch.Generator().manual_seed(1))
    a, fa = expert(x)
    b, fb = expert(x)
    assert torch.equal(a, b) and torch.equal(fa, fb)


def test_forward_rejects_non_divisible(expert):
    with pytest.raises(ValueError):
        expert(torch.rand(1, 3, 60, 60))


def test_fpn_zero_taps_bias_only():
    torch.manual_seed(0)
    fpn = FpnFusion(8)
    taps = [torch.zeros(1, 8, 10, 10) for _ in range(4)]
    out = fpn(taps)
    assert out.shape == (1, 8, 10, 10)
    # with biases, zero taps give a pure bias response: constant over the
    # deep interior (the three stacked 3x3 smooths carry padding effects
    # 3 px inward)
    interior = out[..., 3:-3, 3:-3]
    assert torch.allclose(interior, interior[..., :1, :1].expand_as(interior), atol=1e-6)
    # with all biases zeroed the bias response vanishes entirely
    with torch.no_grad():
        for conv in list(fpn.laterals) + list(fpn.smooths):
            conv.bias.zero_()
    assert torch.equal(fpn(taps), torch.zeros_like(out))


def test_fpn_requires_four_taps():
    fpn = FpnFusion(8)
    with pytest.raises(ValueError):
        fpn([torch.zeros(1, 8, 4, 4)] * 3)


def test_fpn_deepest_tap_propagates_top_down():
    torch.manual_seed(1)
    fpn = FpnFusion(8)
    zero = [torch.zeros(1, 8, 4, 4) for _ in range(4)]
    base = fpn(zero)
    taps = [t.clone() for t in zero]
    taps[3][0, 3, 2, 2] = 5.0  # unit impulse in the deepest tap
    out = fpn(taps)
    assert not torch.allclose(out, base)


def test_spatial_attention_limits():
    torch.manual_seed(0)
    attn = SpatialAttention(8)
    fused = torch.randn(1, 8, 4, 4)
    with torch.no_grad():
        attn.gate.weight.zero_()
        attn.gate.bias.fill_(-40.0)  # gate -> 0
    assert attn(fused).abs().max() < 1e-12
    with torch.no_grad():
        attn.gate.bias.zero_()  # gate = 0.5 everywhere
    assert torch.allclose(attn(fused), 0.5 * fused)
    with torch.no_grad():
        attn.gate.bias.fill_(3.0)
    assert (attn(fused).abs() <= fused.abs() + 1e-12).all()


def test_seg_loss_analytics():
    g = torch.zeros(8, 8)
    g[2:4, 2:4] = 1.0
    half = torch.full((8, 8), 0.5)
    # BCE at p = 0.5 is ln 2; the dice part adds (1 - dice)
    loss = seg_loss(half, g)
    n_pos = g.sum().item()
    dice = (2 * 0.5 * n_pos + 1) / (0.5 * 64 + n_pos + 1)
    assert loss.item() == pytest.approx(math.log(2.0) + (1 - dice), rel=1e-6)


def test_seg_loss_perfect_prediction_small():
    g = torch.zeros(16, 16)
    g[4:10, 4:10] = 1.0
    p = g.clamp(1e-6, 1 - 1e-6)
    assert seg_loss(p, g).item() < 0.05


def test_seg_loss_shape_mismatch():
    with pytest.raises(ValueError):
        seg_loss(torch.rand(4, 4), torch.zeros(4, 5))


def test_seg_loss_gradient_matches_finite_differences():
    torch.manual_seed(2)
    g = (torch.rand(8, 8, dtype=torch.float64) > 0.7).double()
    p = torch.rand(8, 8, dtype=torch.float64) * 0.8 + 0.1
    p.requires_grad_(True)
    check_grad(lambda: seg_loss(p, g), p, n_coords=20, rtol=1e-4)


def test_expert_stack_gradient_matches_finite_differences():
    # fusion + attention + decoder on a tiny double-precision stack
    torch.manual_seed(3)
    arch = ArchConfig(image_size=32, expert_dim=16, fpn_channels=8, decoder_channels=(8, 8, 8, 8))
    model = RegionExpert(arch).double()
    taps = torch.randn(1, 8, 4, 4, dtype=torch.float64) * 0.5
    taps.requires_grad_(True)

    def f():
        fused = model.fpn([taps, taps * 0.5, taps * 0.25, taps * 2.0])
        probs = model.decoder(model.attention(fused))
        return (probs * torch.linspace(0, 1, probs.numel(), dtype=torch.float64).reshape(probs.shape)).sum()

    check_grad(f, taps, n_coords=20, rtol=1e-4)


@pytest.mark.desk
def test_training_checkpoint_contracts(tiny_manifest, tmp_path):
    cfg = ExpertTrainConfig(seed=5, epochs=1, batch_size=8, lr=3e-4)
    path = train_region_expert(tiny_manifest, cfg, tmp_path / "expert")
    states, meta = load_checkpoint(path)
    model = load_expert(path)
    # frozen flag covers every parameter
    assert set(meta["frozen_params"]) == {n for n, _ in model.named_parameters()}
    assert meta["frozen"] is True
    assert all(not p.requires_grad for p in model.parameters())


@pytest.mark.desk
def test_training_determinism(tiny_manifest, tmp_path):
    cfg = ExpertTrainConfig(seed=6, epochs=1, batch_size=8, lr=3e-4)
    p1 = train_region_expert(tiny_manifest, cfg, tmp_path / "a")
    loss1 = load_checkpoint(p1)[1]["final_loss"]
    p2 = train_region_expert(tiny_manifest, cfg, tmp_path / "b")
    loss2 = load_checkpoint(p2)[1]["final_loss"]
    assert loss1 == loss2
