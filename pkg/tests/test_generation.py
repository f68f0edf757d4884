"""Generation branch: schedule invariants, denoiser contracts, diffusion
loss oracles, connector gradients, and pretraining stage guards."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from defectlab.config import ArchConfig, GenStageConfig
from defectlab.generation import Connector, Denoiser, DiffusionSchedule
from defectlab.generation.pipeline import conditioning_batch, diffusion_loss, inpaint
from defectlab.generation.pretrain import run_pretraining_stage
from defectlab.models import UnifiedModel

from conftest import check_grad


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def test_schedule_invariants():
    s = DiffusionSchedule(200, 1e-4, 0.02)
    assert s.alpha_bar[0] == 1.0
    assert bool((s.alpha_bar[1:] < s.alpha_bar[:-1]).all())
    assert bool((s.betas > 0).all()) and bool((s.betas < 1).all())


def test_schedule_t0_identity():
    s = DiffusionSchedule(50, 1e-4, 0.02)
    x0 = torch.randn(2, 3, 8, 8)
    eps = torch.randn(2, 3, 8, 8)
    xt = s.noise_to(x0, torch.zeros(2, dtype=torch.long), eps)
    assert torch.allclose(xt, x0, atol=1e-7)


def test_schedule_rejects_bad_betas():
    with pytest.raises(ValueError):
        DiffusionSchedule(10, 0.02, 1e-4)
    with pytest.raises(ValueError):
        DiffusionSchedule(10, 0.0, 0.02)


def test_sampling_timesteps_strided():
    s = DiffusionSchedule(200, 1e-4, 0.02)
    ts = s.sampling_timesteps(50)
    assert ts[0] == 200 and ts[-1] == 1
    assert all(a > b for a, b in zip(ts, ts[1:]))
    with pytest.raises(ValueError):
        s.sampling_timesteps(0)


# ---------------------------------------------------------------------------
# denoiser
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def denoiser():
    torch.manual_seed(0)
    return Denoiser(ArchConfig()).eval()


def _denoiser_inputs(batch=2, size=64, n=16, d=64, seed=1):
    gen = torch.Generator().manual_seed(seed)
    return (
        torch.randn(batch, 3, size, size, generator=gen),
        torch.randint(1, 200, (batch,), generator=gen),
        (torch.rand(batch, size, size, generator=gen) > 0.8).float(),
        torch.rand(batch, 3, size, size, generator=gen),
        torch.randn(batch, n, d, generator=gen),
    )


def test_denoiser_output_shape(denoiser):
    noisy, t, mask, src, cond = _denoiser_inputs()
    out = denoiser(noisy, t, mask, src, cond)
    assert out.shape == (2, 3, 64, 64)


def test_denoiser_eval_determinism(denoiser):
    args = _denoiser_inputs()
    assert torch.equal(denoiser(*args), denoiser(*args))


def test_denoiser_zero_init_head():
    torch.manual_seed(2)
    fresh = Denoiser(ArchConfig())
    noisy, t, mask, src, cond = _denoiser_inputs(seed=3)
    assert torch.equal(fresh(noisy, t, mask, src, cond), torch.zeros(2, 3, 64, 64))


def test_denoiser_depends_on_conditioning(denoiser):
    noisy, t, mask, src, cond = _denoiser_inputs(seed=4)
    # randomize the zero-initialized head so conditioning can reach the output
    with torch.no_grad():
        denoiser.out_conv.weight.normal_(std=0.05)
    try:
        base = denoiser(noisy, t, mask, src, cond)
        shifted = denoiser(noisy, t, mask, src, cond + 0.5)
        assert (base - shifted).norm() > 0
    finally:
        with torch.no_grad():
            denoiser.out_conv.weight.zero_()


def test_denoiser_channel_mismatch(denoiser):
    noisy, t, mask, src, cond = _denoiser_inputs()
    with pytest.raises(ValueError):
        denoiser(torch.cat([noisy, noisy], dim=1), t, mask, src, cond)


# ---------------------------------------------------------------------------
# diffusion loss
# ---------------------------------------------------------------------------

class _IdentityOracle:
    """Stands in for the model container with a perfect denoiser."""

    def __init__(self, schedule, eps):
        self.schedule = schedule
        self._eps = eps
        self.denoiser = lambda x_t, t, m, s, h: self._eps


def test_diffusion_loss_zero_for_identity_oracle():
    schedule = DiffusionSchedule(100, 1e-4, 0.02)
    gen = torch.Generator().manual_seed(5)
    target = torch.rand(2, 3, 16, 16)
    # draw the same (t, eps) the loss will draw, then hand eps to the oracle
    probe = torch.Generator().manual_seed(5)
    torch.randint(1, 101, (2,), generator=probe)
    eps = torch.randn(2, 3, 16, 16, generator=probe)
    oracle = _IdentityOracle(schedule, eps)
    loss = diffusion_loss(oracle, target, torch.zeros(2, 16, 16), target, None, gen)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_diffusion_loss_near_one_at_zero_init(unified_model, tiny_manifest):
    from defectlab.synthbench.dataset import load_split

    recs = [r for r in load_split(tiny_manifest, "train") if r.anomalous][:4]
    sources = np.stack([r.clean for r in recs])
    masks = np.stack([r.mask for r in recs])
    instructions = [f"add a {r.defect_type} defect in the marked region" for r in recs]
    h = conditioning_batch(unified_model, sources, masks, instructions)
    losses = []
    for seed in range(5):
        gen = torch.Generator().manual_seed(seed)
        losses.append(
            diffusion_loss(
                unified_model,
                unified_model.images_to_tensor(np.stack([r.image for r in recs])),
                torch.from_numpy(masks).float(),
                unified_model.images_to_tensor(sources),
                h,
                gen,
            ).item()
        )
    assert 0.8 <= float(np.mean(losses)) <= 1.2


# ---------------------------------------------------------------------------
# connector
# ---------------------------------------------------------------------------

def test_connector_shape_and_wrong_n():
    torch.manual_seed(6)
    conn = Connector(ArchConfig())
    out = conn(torch.randn(2, 16, 128))
    assert out.shape == (2, 16, 64)
    with pytest.raises(ValueError):
        conn(torch.randn(2, 8, 128))


def test_connector_gradient_check():
    torch.manual_seed(7)
    arch = ArchConfig(metaquery_count=4, d_backbone=16, cond_dim=8, connector_layers=2, connector_heads=2)
    conn = Connector(arch).double()
    x = torch.randn(1, 4, 16, dtype=torch.float64, requires_grad=True)
    w = torch.linspace(-1, 1, 4 * 8, dtype=torch.float64).reshape(4, 8)
    check_grad(lambda: (conn(x) * w).sum(), x, n_coords=16)


def test_connector_not_permutation_invariant():
    # positional embeddings make row order matter (documented non-invariance)
    torch.manual_seed(8)
    conn = Connector(ArchConfig()).eval()
    x = torch.randn(1, 16, 128)
    flipped = conn(torch.flip(x, dims=[1]))
    assert not torch.allclose(conn(x), torch.flip(flipped, dims=[1]), atol=1e-5)


# ---------------------------------------------------------------------------
# pretraining stage guards and inpaint gate
# ---------------------------------------------------------------------------

def test_stage_requires_predecessor(tiny_manifest):
    cfg = GenStageConfig(stage=2, epochs=1, manifest="x")
    with pytest.raises(FileNotFoundError):
        run_pretraining_stage(tiny_manifest, cfg, "/tmp/nope")


def test_stage3_requires_expert(tiny_manifest, tmp_path):
    cfg1 = GenStageConfig(seed=1, stage=1, epochs=1, batch_size=8)
    p1 = run_pretraining_stage(tiny_manifest, cfg1, tmp_path / "g1")
    cfg2 = GenStageConfig(seed=1, stage=2, epochs=1, batch_size=8, prev_ckpt=str(p1))
    p2 = run_pretraining_stage(tiny_manifest, cfg2, tmp_path / "g2")
    cfg3 = GenStageConfig(seed=1, stage=3, epochs=1, batch_size=8, prev_ckpt=str(p2))
    with pytest.raises(FileNotFoundError):
        run_pretraining_stage(tiny_manifest, cfg3, tmp_path / "g3")
    # wrong predecessor stage is also rejected
    cfg2b = GenStageConfig(seed=1, stage=3, epochs=1, batch_size=8, prev_ckpt=str(p1))
    with pytest.raises(FileNotFoundError):
        run_pretraining_stage(tiny_manifest, cfg2b, tmp_path / "g3b")


def test_stage_checkpoint_freezes_backbone(tiny_manifest, tmp_path):
    from defectlab.checkpoints import load_checkpoint, state_dicts_equal

    cfg1 = GenStageConfig(seed=2, stage=1, epochs=1, batch_size=8)
    p1 = run_pretraining_stage(tiny_manifest, cfg1, tmp_path / "g1")
    states, meta = load_checkpoint(p1)
    fresh = UnifiedModel(cfg1.arch, cfg1.seed)
    assert state_dicts_equal(states["backbone"], fresh.backbone.state_dict())
    assert state_dicts_equal(states["interface"], fresh.interface.state_dict())
    assert not state_dicts_equal(states["connector"], fresh.connector.state_dict())
    assert meta["epoch_loss_final"] == meta["epoch_losses"][-1]


def test_inpaint_refuses_untrained(unified_model, tiny_manifest):
    from defectlab.synthbench.dataset import load_split

    rec = [r for r in load_split(tiny_manifest, "train") if r.anomalous][0]
    with pytest.raises(RuntimeError):
        inpaint(unified_model, rec.clean, rec.mask, "add a hole defect in the marked region")


def test_inpaint_output_contract_and_determinism(tiny_manifest, tmp_path):
    from defectlab.synthbench.dataset import load_split

    cfg1 = GenStageConfig(seed=3, stage=1, epochs=1, batch_size=8)
    p1 = run_pretraining_stage(tiny_manifest, cfg1, tmp_path / "g1")
    model, _ = UnifiedModel.load(p1)
    rec = [r for r in load_split(tiny_manifest, "train") if r.anomalous][0]
    out1 = inpaint(model, rec.clean, rec.mask, "restore the marked region",
                   steps=5, seed=9, visual=False, region=False)
    out2 = inpaint(model, rec.clean, rec.mask, "restore the marked region",
                   steps=5, seed=9, visual=False, region=False)
    assert out1.shape == rec.clean.shape
    assert out1.min() >= 0.0 and out1.max() <= 1.0
    assert np.array_equal(out1, out2)
