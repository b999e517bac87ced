"""Affine net, style net, initialization, and the parameter registry."""

import subprocess
import sys

import pytest
import torch

from hierarchyflow.config import mini_config, variant_config
from hierarchyflow.errors import ContractError
from hierarchyflow.nets import (
    AffineNet,
    StyleNet,
    build_model,
    init_params,
    param_count_breakdown,
    parameter_registry,
)
from hierarchyflow.perceptual import FeatureExtractor, LossConfig, total_loss

from conftest import rand_image


class TestAffineNet:
    def test_output_shape_expansion_10(self):
        net = AffineNet(3, 10)
        out = net(rand_image(2, 2))
        assert out.shape == (30, 2, 2)

    def test_output_non_negative(self):
        torch.manual_seed(0)
        net = AffineNet(3, 4)
        for seed in range(5):
            out = net(rand_image(7, 7, seed=seed) * 4 - 2)
            assert float(out.detach().min()) >= 0.0

    def test_zero_parameters_give_zero_output(self):
        net = AffineNet(3, 5)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        out = net(rand_image(4, 4, seed=1))
        assert torch.equal(out, torch.zeros(15, 4, 4))

    def test_spatial_dims_preserved(self):
        net = AffineNet(3, 2)
        assert net(rand_image(5, 9)).shape == (6, 5, 9)

    def test_channel_mismatch(self):
        with pytest.raises(ContractError):
            AffineNet(3, 2)(rand_image(4, 4, c=2))

    def test_hidden_cap_applies(self):
        net = AffineNet(120, 4, hidden_cap=128)
        assert net.conv1.out_channels == 128
        assert net.conv2.out_channels == 128
        small = AffineNet(3, 4, hidden_cap=128)
        assert small.conv1.out_channels == 6
        assert small.conv2.out_channels == 12


class TestStyleNet:
    def test_hf_head_sizes(self):
        model = build_model(variant_config("HF"), seed=0)
        params = model.style_net(rand_image(32, 32, seed=2))
        assert [tuple(p[0].shape) for p in params] == [(30,), (120,)]
        assert [tuple(p[1].shape) for p in params] == [(30,), (120,)]

    def test_sigma_strictly_positive(self):
        model = build_model(variant_config("HF"), seed=1)
        for seed in range(4):
            params = model.style_net(rand_image(24, 24, seed=seed))
            for _, sigma in params:
                assert float(sigma.detach().min()) > 0.0

    def test_undersized_input_rejected(self):
        model = build_model(mini_config(), seed=0)
        with pytest.raises(ContractError):
            model.style_net(rand_image(8, 8))

    def test_output_shape_independent_of_spatial_size(self):
        model = build_model(variant_config("HF"), seed=2)
        a = model.style_net(rand_image(64, 64, seed=3))
        b = model.style_net(rand_image(256, 256, seed=3))
        assert [tuple(m.shape) for m, _ in a] == [tuple(m.shape) for m, _ in b]
        assert [tuple(s.shape) for _, s in a] == [tuple(s.shape) for _, s in b]


class TestInit:
    def test_same_seed_bit_identical(self):
        a = build_model(mini_config(), seed=42)
        b = build_model(mini_config(), seed=42)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        a = build_model(mini_config(), seed=0)
        b = build_model(mini_config(), seed=1)
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_biases_and_fusion_start_at_zero(self):
        model = build_model(mini_config(), seed=3)
        for name, p in model.named_parameters():
            if p.ndim <= 1:
                assert torch.equal(p, torch.zeros_like(p)), name
        for block in model.blocks:
            assert torch.allclose(block.fusion_weights(), torch.full_like(
                block.fusion_weights(), 0.5))

    def test_init_params_deterministic_after_mutation(self):
        model = build_model(mini_config(), seed=5)
        snapshot = {k: v.clone() for k, v in model.named_parameters()}
        with torch.no_grad():
            for p in model.parameters():
                p.add_(1.0)
        init_params(model, 5)
        for k, v in model.named_parameters():
            assert torch.equal(v, snapshot[k])


class TestParameterBudget:
    def test_hf_within_band(self):
        model = build_model(variant_config("HF"), seed=0)
        total = param_count_breakdown(model)["total"]
        assert abs(total - 680_000) <= 0.3 * 680_000

    def test_hf_dagger_within_band(self):
        model = build_model(variant_config("HF†"), seed=0)
        total = param_count_breakdown(model)["total"]
        assert abs(total - 6_300_000) <= 0.3 * 6_300_000

    def test_breakdown_sums_to_total(self):
        model = build_model(variant_config("HF+"), seed=0)
        b = param_count_breakdown(model)
        assert sum(v for k, v in b.items() if k != "total") == b["total"]


class TestRegistry:
    def test_registry_names_unique_and_closed(self):
        model = build_model(mini_config(), seed=0)
        reg = parameter_registry(model)
        assert len(reg) == len(list(model.parameters()))
        expected_prefixes = ("blocks.", "style_net.")
        assert all(name.startswith(expected_prefixes) for name in reg)

    def test_gradient_census_on_training_objective(self):
        """Every parameter gets gradient except the structurally-inert inner
        mu heads: each block's AdaIN normalizes away the per-channel constant
        shifts injected by deeper blocks, so only the first block's mu can
        reach the output."""
        torch.manual_seed(0)
        model = build_model(mini_config(), seed=11)
        extractor = FeatureExtractor.standin(0)
        source = rand_image(16, 16, seed=20)
        target = rand_image(24, 24, seed=21)
        x_hat = model.translate(source, target)
        loss, _ = total_loss(x_hat, source, target, LossConfig(), extractor)
        loss.backward()
        inert = {f"style_net.mu_heads.{b}." for b in range(1, len(model.blocks))}
        for name, p in model.named_parameters():
            assert p.grad is not None, name
            grad_mag = float(p.grad.abs().max())
            if any(name.startswith(pref) for pref in inert):
                # exact zero in exact arithmetic; f32 leaves cancellation noise
                assert grad_mag <= 1e-4, f"{name} expected structurally zero"
            else:
                assert grad_mag > 1e-4, f"{name} unexpectedly has zero gradient"


class TestCrossProcessDeterminism:
    def test_style_params_identical_across_processes(self, tmp_path):
        snippet = (
            "import sys, torch\n"
            "from hierarchyflow.config import mini_config\n"
            "from hierarchyflow.nets import build_model\n"
            "model = build_model(mini_config(), seed=9)\n"
            "img = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(4))\n"
            "out = model.style_net(img)\n"
            "blob = b''.join(t.detach().numpy().tobytes() for p in out for t in p)\n"
            "open(sys.argv[1], 'wb').write(blob)\n"
        )
        blobs = []
        for name in ("a.bin", "b.bin"):
            path = tmp_path / name
            subprocess.run(
                [sys.executable, "-c", snippet, str(path)], check=True, timeout=120
            )
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1] and len(blobs[0]) > 0
