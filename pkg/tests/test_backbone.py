"""Backbone contracts: vocabulary, prompt assembly, rotary positions,
placeholder injection, causality, adapters, and greedy decoding."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from defectlab.backbone import (
    Backbone,
    LoRALinear,
    MetaqueryEmbedding,
    PromptLibrary,
    Vocabulary,
    apply_rope,
    build_default_vocab,
    inject_region_tokens,
    merged_weight,
)
from defectlab.backbone.prompts import default_template_dict
from defectlab.config import ArchConfig


@pytest.fixture(scope="module")
def vocab():
    return build_default_vocab(16, 16)


@pytest.fixture(scope="module")
def prompts(vocab):
    return PromptLibrary(vocab)


@pytest.fixture(scope="module")
def backbone(vocab):
    torch.manual_seed(0)
    return Backbone(ArchConfig(), vocab).eval()


# ---------------------------------------------------------------------------
# vocabulary and prompts
# ---------------------------------------------------------------------------

def test_vocab_round_trip_on_templates(vocab):
    for task, template in default_template_dict().items():
        concrete = template.replace("{instruction}", "add a hole defect in the marked region")
        assert vocab.decode(vocab.encode(concrete)) == concrete


def test_vocab_rejects_unknown_word(vocab):
    with pytest.raises(ValueError):
        vocab.encode("the defect is suspicious")


def test_vocab_asset_matches_programmatic(vocab):
    from pathlib import Path

    asset = Path("src/defectlab/assets/vocab.txt")
    loaded = Vocabulary.load(asset)
    assert loaded.tokens == vocab.tokens


def test_prompt_placeholder_count_is_k_plus_one(prompts):
    seq = prompts.build("location", has_region=True, has_image=True, n_image=16)
    assert len(seq.placeholder_positions) == 17  # K=16 region slots + geometry
    assert seq.placeholder_positions == sorted(seq.placeholder_positions)


def test_prompt_without_region_has_no_placeholders(prompts):
    seq = prompts.build("location", has_region=False, has_image=True, n_image=16)
    assert seq.placeholder_positions == []


def test_prompt_image_span_and_answer(prompts, vocab):
    seq = prompts.build(
        "decision", has_region=True, has_image=True, n_image=16, answer="anomalous"
    )
    start, end = seq.image_span
    assert end - start == 16
    assert all(i == vocab.image_id for i in seq.ids[start:end])
    assert seq.ids[-1] == vocab.eos_id
    assert seq.ids[seq.prompt_len] == vocab.index["anomalous"]


def test_prompt_metaquery_span(prompts):
    seq = prompts.build(
        "generation", has_region=True, has_image=True, n_image=16,
        instruction="add a stain defect in the marked region",
    )
    start, end = seq.metaquery_span
    assert end - start == 16


def test_prompt_unknown_template(prompts):
    with pytest.raises(ValueError):
        prompts.build("caption", n_image=4)


def test_text_only_prompt_drops_image(prompts):
    seq = prompts.build(
        "generation", has_region=False, has_image=False,
        instruction="restore the marked region",
    )
    assert seq.image_span is None and seq.placeholder_positions == []
    assert seq.metaquery_span is not None


# ---------------------------------------------------------------------------
# rotary positions
# ---------------------------------------------------------------------------

def test_rope_matches_complex_rotation_oracle():
    torch.manual_seed(1)
    x = torch.randn(3, 10, 8, dtype=torch.float64)
    positions = torch.arange(10)
    got = apply_rope(x, positions)
    # oracle: complex multiplication z * exp(i * p * theta_k)
    z = torch.complex(x[..., 0::2], x[..., 1::2])
    theta = 10000.0 ** (-torch.arange(0, 8, 2, dtype=torch.float64) / 8)
    phase = torch.exp(1j * positions[:, None].double() * theta[None])
    rotated = z * phase
    want = torch.empty_like(x)
    want[..., 0::2] = rotated.real
    want[..., 1::2] = rotated.imag
    assert torch.allclose(got, want, atol=1e-12)


def test_rope_position_zero_is_identity():
    x = torch.randn(1, 1, 16)
    assert torch.allclose(apply_rope(x, torch.zeros(1, dtype=torch.long)), x)


def test_rope_rejects_odd_dim():
    with pytest.raises(ValueError):
        apply_rope(torch.randn(1, 2, 7), torch.arange(2))


# ---------------------------------------------------------------------------
# embedding and injection
# ---------------------------------------------------------------------------

def test_embed_text_positions_match_table(backbone, vocab):
    ids = torch.tensor(vocab.encode("the defect is located at the center region"))
    x = backbone.embed_sequence(ids)
    assert torch.equal(x, backbone.tok_embed(ids))


def test_embed_splices_visual_rows(backbone, prompts):
    seq = prompts.build("location", has_region=True, has_image=True, n_image=16)
    visual = torch.randn(16, 128)
    x = backbone.embed_sequence(torch.tensor(seq.ids), image_span=seq.image_span, visual=visual)
    start, end = seq.image_span
    assert torch.equal(x[start:end], visual)
    assert torch.equal(x[:start], backbone.tok_embed(torch.tensor(seq.ids[:start])))


def test_injection_locality(backbone, prompts):
    seq = prompts.build("location", has_region=True, has_image=True, n_image=16)
    x = backbone.embed_sequence(torch.tensor(seq.ids))
    payload = torch.randn(17, 128)
    out = inject_region_tokens(x, seq.placeholder_positions, payload)
    changed = [i for i in range(len(seq.ids)) if not torch.equal(out[i], x[i])]
    assert changed == seq.placeholder_positions
    assert torch.equal(out[seq.placeholder_positions], payload)
    untouched = [i for i in range(len(seq.ids)) if i not in seq.placeholder_positions]
    assert torch.equal(out[untouched], x[untouched])


def test_injection_zero_payload(backbone, prompts):
    seq = prompts.build("decision", has_region=True, has_image=True, n_image=16)
    x = backbone.embed_sequence(torch.tensor(seq.ids))
    out = inject_region_tokens(x, seq.placeholder_positions, torch.zeros(17, 128))
    assert bool((out[seq.placeholder_positions] == 0).all())


def test_injection_count_mismatch(backbone, prompts):
    seq = prompts.build("decision", has_region=True, has_image=True, n_image=16)
    x = backbone.embed_sequence(torch.tensor(seq.ids))
    with pytest.raises(ValueError):
        inject_region_tokens(x, seq.placeholder_positions, torch.zeros(16, 128))


def test_injection_gradients_reach_payload(backbone, prompts):
    seq = prompts.build("decision", has_region=True, has_image=True, n_image=16)
    x = backbone.embed_sequence(torch.tensor(seq.ids))
    payload = torch.randn(17, 128, requires_grad=True)
    out = inject_region_tokens(x, seq.placeholder_positions, payload)
    _, logits = backbone.forward(out)
    logits.sum().backward()
    assert payload.grad is not None and payload.grad.norm() > 0


# ---------------------------------------------------------------------------
# forward contracts
# ---------------------------------------------------------------------------

def test_forward_shapes_and_determinism(backbone, vocab):
    ids = torch.tensor([vocab.encode("decide if the surface is normal or anomalous")])
    x = backbone.embed_sequence(ids)
    h1, l1 = backbone.forward(x)
    h2, l2 = backbone.forward(x)
    assert l1.shape == (1, ids.shape[1], len(vocab))
    assert torch.equal(h1, h2) and torch.equal(l1, l2)


def test_forward_rejects_over_length(backbone):
    x = torch.randn(1, ArchConfig().max_len + 1, 128)
    with pytest.raises(ValueError):
        backbone.forward(x)


def test_causal_prefix_logits_invariant_to_suffix(backbone, vocab):
    words = "the defect is located at the center region"
    ids = torch.tensor([vocab.encode(words)])
    x = backbone.embed_sequence(ids)
    _, logits_full = backbone.forward(x)
    x_perturbed = x.clone()
    x_perturbed[0, -2:] += torch.randn(2, 128) * 3.0
    _, logits_pert = backbone.forward(x_perturbed)
    # positions strictly before the edit have bitwise-identical logits
    assert torch.equal(logits_full[0, :-2], logits_pert[0, :-2])
    assert not torch.equal(logits_full[0, -1], logits_pert[0, -1])


# ---------------------------------------------------------------------------
# adapters
# ---------------------------------------------------------------------------

def test_lora_transparent_at_init():
    torch.manual_seed(2)
    layer = LoRALinear(32, 24, rank=4, alpha=8)
    x = torch.randn(5, 32)
    assert torch.equal(layer(x), layer.base(x))


def test_lora_scale_alpha_equals_rank():
    layer = LoRALinear(16, 16, rank=4, alpha=4)
    assert layer.scale == 1.0


def test_lora_merged_equals_two_path():
    torch.manual_seed(3)
    layer = LoRALinear(32, 24, rank=4, alpha=8)
    with torch.no_grad():
        layer.lora_b.normal_(std=0.1)
    x = torch.randn(7, 32)
    two_path = layer(x)
    merged = torch.nn.functional.linear(x, layer.merged_weight(), layer.base.bias)
    assert (two_path - merged).abs().max() < 1e-6


def test_lora_rank_validation():
    with pytest.raises(ValueError):
        LoRALinear(8, 8, rank=8, alpha=16)
    with pytest.raises(ValueError):
        merged_weight(torch.zeros(8, 8), torch.zeros(8, 8), torch.zeros(8, 8), 16, 8)


def test_lora_base_frozen():
    layer = LoRALinear(8, 8, rank=2, alpha=4)
    assert not layer.base.weight.requires_grad
    assert layer.lora_a.requires_grad and layer.lora_b.requires_grad


def test_backbone_frozen_partitions(backbone):
    assert not any(p.requires_grad for p in backbone.patch_encoder.parameters())
    for name, p in backbone.named_parameters():
        if ".base." in name:
            assert not p.requires_grad, name


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def test_generate_max_new_zero(backbone, prompts):
    seq = prompts.build("decision", has_region=False, has_image=False)
    assert backbone.generate(seq, None, None, max_new=0) == ""


def test_generate_deterministic(backbone, prompts):
    seq = prompts.build("decision", has_region=True, has_image=True, n_image=16)
    visual = torch.randn(16, 128, generator=torch.Generator().manual_seed(5))
    payload = torch.randn(17, 128, generator=torch.Generator().manual_seed(6))
    a = backbone.generate(seq, visual, payload, max_new=8)
    b = backbone.generate(seq, visual, payload, max_new=8)
    assert a == b


def test_generate_batch_matches_single(backbone, prompts):
    gen = torch.Generator().manual_seed(7)
    seqs = [prompts.build("decision", has_region=True, has_image=True, n_image=16) for _ in range(3)]
    visual = torch.randn(3, 16, 128, generator=gen)
    payloads = torch.randn(3, 17, 128, generator=gen)
    batched = backbone.generate_batch(seqs, visual, payloads, max_new=6)
    singles = [
        backbone.generate(seqs[i], visual[i], payloads[i], max_new=6) for i in range(3)
    ]
    assert batched == singles


def test_metaquery_embedding_shape():
    mq = MetaqueryEmbedding(16, 128)
    assert mq().shape == (16, 128)
