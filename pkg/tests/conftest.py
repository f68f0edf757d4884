from __future__ import annotations

import numpy as np
import pytest
import torch

from defectlab.config import ArchConfig, DataConfig
from defectlab.synthbench.dataset import build_dataset, load_manifest


def fd_grad(f, x: torch.Tensor, indices: list[tuple], eps: float = 1e-6) -> dict:
    """Central-difference gradient of scalar f at selected coordinates."""
    out = {}
    for idx in indices:
        orig = x[idx].item()
        with torch.no_grad():
            x[idx] = orig + eps
            hi = float(f())
            x[idx] = orig - eps
            lo = float(f())
            x[idx] = orig
        out[idx] = (hi - lo) / (2 * eps)
    return out


def check_grad(f, x: torch.Tensor, n_coords: int = 20, rtol: float = 1e-4, seed: int = 0) -> float:
    """Compare autograd and central differences at random coordinates of x.

    Returns the worst relative error; asserts it is below rtol.
    """
    rng = np.random.default_rng(seed)
    loss = f()
    if x.grad is not None:
        x.grad = None
    loss.backward()
    grad = x.grad.detach().clone()
    flat_indices = rng.choice(x.numel(), size=min(n_coords, x.numel()), replace=False)
    indices = [np.unravel_index(int(i), x.shape) for i in flat_indices]
    numeric = fd_grad(lambda: f().item(), x.data, indices)
    worst = 0.0
    for idx, num in numeric.items():
        ana = float(grad[idx])
        denom = max(abs(num), abs(ana), 1e-8)
        rel = abs(num - ana) / denom
        worst = max(worst, rel)
    assert worst < rtol, f"gradient mismatch: worst rel err {worst:.3e} >= {rtol}"
    return worst


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Small dataset for fast unit tests (not the desk-scale benchmark)."""
    out = tmp_path_factory.mktemp("tinydata")
    cfg = DataConfig(seed=11, train_count=24, test_count=12, normal_ratio=0.25)
    path = build_dataset(cfg, out)
    return load_manifest(path)


@pytest.fixture(scope="session")
def arch() -> ArchConfig:
    return ArchConfig()


@pytest.fixture(scope="session")
def unified_model(arch):
    from defectlab.models import UnifiedModel

    return UnifiedModel(arch, seed=3)
