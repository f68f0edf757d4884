"""EMA loss balancing and unified-training contracts."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from defectlab.config import ArchConfig, UnifiedTrainConfig
from defectlab.training import EmaState, ema_update, joint_loss, understanding_loss
from defectlab.training.unified import (
    build_understanding_batch,
    run_unified_training,
    understanding_step_loss,
    valid_tasks,
)


# ---------------------------------------------------------------------------
# EMA
# ---------------------------------------------------------------------------

def test_ema_first_call_initializes_to_loss():
    state = ema_update(EmaState(), "understand", 2.0)
    assert state.value("understand") == 2.0


def test_ema_constant_stream_is_fixed_point():
    state = EmaState()
    for _ in range(50):
        state = ema_update(state, "generate", 0.7)
    assert state.value("generate") == pytest.approx(0.7)


def test_ema_two_step_arithmetic():
    state = ema_update(EmaState(decay=0.99), "u", 1.0)
    state = ema_update(state, "u", 3.0)
    assert state.value("u") == pytest.approx(0.99 * 1.0 + 0.01 * 3.0)
    assert state.value("u") == pytest.approx(1.02)


def test_ema_rejects_nan():
    with pytest.raises(RuntimeError):
        ema_update(EmaState(), "u", float("nan"))


def test_joint_loss_normalization_fixed_point():
    state = ema_update(ema_update(EmaState(), "understand", 0.5), "generate", 4.0)
    total = joint_loss(torch.tensor(0.5), torch.tensor(4.0), state)
    assert total.item() == pytest.approx(2.0)


def test_joint_loss_lambda_g_zero_is_pure_understanding():
    state = ema_update(ema_update(EmaState(), "understand", 1.0), "generate", 1.0)
    l_u = torch.tensor(3.0, requires_grad=True)
    l_g = torch.tensor(5.0, requires_grad=True)
    total = joint_loss(l_u, l_g, state, lambda_u=1.0, lambda_g=0.0)
    total.backward()
    assert total.item() == pytest.approx(3.0)
    assert l_g.grad.item() == 0.0


def test_joint_loss_requires_initialized_ema():
    with pytest.raises(ValueError):
        joint_loss(torch.tensor(1.0), torch.tensor(1.0), EmaState())


def test_joint_gradient_equals_weighted_sum_of_task_gradients():
    torch.manual_seed(0)
    w = torch.randn(6, dtype=torch.float64, requires_grad=True)
    x = torch.randn(6, dtype=torch.float64)

    def losses():
        l_u = ((w * x) ** 2).mean()
        l_g = (w.sigmoid() - x).abs().mean()
        return l_u, l_g

    state = EmaState(decay=0.9)
    l_u, l_g = losses()
    state = ema_update(state, "understand", l_u.item())
    state = ema_update(state, "generate", l_g.item())
    ema_u, ema_g = state.value("understand"), state.value("generate")

    total = joint_loss(l_u, l_g, state, lambda_u=1.3, lambda_g=0.7)
    total.backward()
    grad_joint = w.grad.detach().clone()

    w.grad = None
    l_u, _ = losses()
    l_u.backward()
    grad_u = w.grad.detach().clone()
    w.grad = None
    _, l_g = losses()
    l_g.backward()
    grad_g = w.grad.detach().clone()

    expected = 1.3 / ema_u * grad_u + 0.7 / ema_g * grad_g
    rel = (grad_joint - expected).norm() / expected.norm()
    assert rel < 1e-6


def test_ema_carries_no_gradient():
    # updates are identical whether the EMA is recomputed or cached
    w = torch.randn(4, requires_grad=True)
    l_u = (w**2).mean()
    l_g = (w.abs()).mean()
    state = ema_update(ema_update(EmaState(), "understand", l_u.item()), "generate", l_g.item())
    total = joint_loss(l_u, l_g, state)
    total.backward()
    g1 = w.grad.detach().clone()
    w.grad = None
    cached_u, cached_g = state.value("understand"), state.value("generate")
    total2 = (w**2).mean() / cached_u + (w.abs()).mean() / cached_g
    total2.backward()
    assert torch.allclose(g1, w.grad)


# ---------------------------------------------------------------------------
# understanding loss
# ---------------------------------------------------------------------------

def test_understanding_loss_zero_when_reference_is_certain():
    vocab_size = 11
    ids = torch.tensor([[1, 2, 3, 4, 5]])
    logits = torch.full((1, 5, vocab_size), -1e4)
    for p in range(4):
        logits[0, p, ids[0, p + 1]] = 1e4
    loss = understanding_loss(logits, ids, torch.tensor([2]), torch.tensor([5]))
    assert loss.item() == pytest.approx(0.0, abs=1e-6)


def test_understanding_loss_uniform_logits_ln_v():
    vocab_size = 37
    ids = torch.randint(0, vocab_size, (2, 8))
    logits = torch.zeros(2, 8, vocab_size)
    loss = understanding_loss(logits, ids, torch.tensor([3, 5]), torch.tensor([8, 8]))
    assert loss.item() == pytest.approx(np.log(vocab_size), rel=1e-6)


def test_understanding_loss_masks_prompt_labels():
    torch.manual_seed(1)
    ids = torch.randint(0, 10, (2, 9))
    logits = torch.randn(2, 9, 10)
    prompt_lens = torch.tensor([4, 6])
    lengths = torch.tensor([9, 8])
    base = understanding_loss(logits, ids, prompt_lens, lengths)
    perturbed = ids.clone()
    perturbed[0, :4] = (perturbed[0, :4] + 3) % 10  # prompt positions only
    perturbed[1, 8] = (perturbed[1, 8] + 1) % 10  # beyond row length
    assert understanding_loss(logits, perturbed, prompt_lens, lengths).item() == base.item()
    answer_perturbed = ids.clone()
    answer_perturbed[0, 5] = (answer_perturbed[0, 5] + 1) % 10
    assert understanding_loss(logits, answer_perturbed, prompt_lens, lengths).item() != base.item()


def test_valid_tasks_split(tiny_manifest):
    from defectlab.synthbench.dataset import load_split

    for rec in load_split(tiny_manifest, "train"):
        tasks = valid_tasks(rec)
        if rec.anomalous:
            assert set(tasks) == {"location", "analysis", "decision", "defect_type"}
        else:
            assert set(tasks) == {"analysis", "decision"}


def test_understanding_step_grads_reach_interface(unified_model, tiny_manifest):
    from defectlab.synthbench.dataset import load_split

    recs = [r for r in load_split(tiny_manifest, "train") if r.anomalous][:3]
    batch = build_understanding_batch(unified_model, recs, "location")
    loss = understanding_step_loss(unified_model, batch, ["oracle"] * 3)
    params = list(unified_model.interface.parameters())
    for p in params:
        p.grad = None
    loss.backward()
    total = sum(float(p.grad.norm()) for p in params if p.grad is not None)
    assert total > 0


# ---------------------------------------------------------------------------
# strategy guards
# ---------------------------------------------------------------------------

def test_unified_requires_expert(tiny_manifest, tmp_path):
    cfg = UnifiedTrainConfig(seed=0, epochs=1, strategy="gt_only")
    with pytest.raises(FileNotFoundError):
        run_unified_training(tiny_manifest, cfg, tmp_path / "u")


def test_joint_requires_stage3_checkpoint(tiny_manifest, tmp_path):
    cfg = UnifiedTrainConfig(seed=0, epochs=1, strategy="joint_preinit", expert_ckpt="e.pt")
    with pytest.raises(FileNotFoundError):
        run_unified_training(tiny_manifest, cfg, tmp_path / "u")


def test_strategy_validation():
    from defectlab.config import ConfigError

    with pytest.raises(ConfigError):
        UnifiedTrainConfig(strategy="alternate")
    with pytest.raises(ConfigError):
        UnifiedTrainConfig(lambda_u=0.0)
