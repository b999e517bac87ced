"""Core coupling-layer behavior against independent brute-force oracles."""

import numpy as np
import pytest
import torch

from hierarchyflow.config import make_config, mini_config, variant_config
from hierarchyflow.errors import ContractError, NumericalError
from hierarchyflow.flow import (
    AffineCache,
    HierarchyBlock,
    adain,
    coupling_forward,
    coupling_reverse,
    recover_source,
    spatial_stats,
    squeeze,
    unsqueeze,
)
from hierarchyflow.nets import build_model

from conftest import rand_image


def oracle_forward(x: np.ndarray, splits) -> np.ndarray:
    """Closed form h_i = x - sum_{j<=i} a_j, concatenated along channels."""
    running = np.cumsum(np.stack(splits, axis=0), axis=0)
    return np.concatenate([x - running[i] for i in range(len(splits))], axis=0)


def oracle_reverse(y_splits, a_splits, alphas) -> np.ndarray:
    """Direct evaluation of the weighted additive fusion recurrence."""
    n = len(y_splits)
    h = y_splits[n - 1] + a_splits[n - 1]
    for i in range(n - 2, -1, -1):
        h = alphas[i] * (y_splits[i] + a_splits[i]) + (1 - alphas[i]) * h
    return h


class TestCouplingRecurrences:
    def test_worked_forward_example(self):
        # 2x2 single-channel input with stubbed affine splits 0.5 and 1.0
        x = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        a1 = torch.full((1, 2, 2), 0.5)
        a2 = torch.full((1, 2, 2), 1.0)
        y = coupling_forward(x, [a1, a2])
        h1 = torch.tensor([[[0.5, 1.5], [2.5, 3.5]]])
        h2 = torch.tensor([[[-0.5, 0.5], [1.5, 2.5]]])
        assert torch.equal(y[:1], h1)
        assert torch.equal(y[1:], h2)

    def test_worked_reverse_example(self):
        x = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        a1 = torch.full((1, 2, 2), 0.5)
        a2 = torch.full((1, 2, 2), 1.0)
        y = coupling_forward(x, [a1, a2])
        alphas = torch.tensor([0.5])
        back = coupling_reverse(y.chunk(2, dim=0), [a1, a2], alphas)
        # h_2' = y_2 + a_2 = x executed through the alpha=0.5 fusion
        expected = torch.tensor([[[0.75, 1.75], [2.75, 3.75]]])
        assert torch.allclose(back, expected, atol=0, rtol=0)

    @pytest.mark.parametrize("seed", range(10))
    def test_forward_matches_prefix_sum_oracle(self, seed):
        gen = torch.Generator().manual_seed(seed)
        c = int(torch.randint(1, 4, (1,), generator=gen))
        h = int(torch.randint(1, 5, (1,), generator=gen))
        w = int(torch.randint(1, 5, (1,), generator=gen))
        n = int(torch.randint(2, 5, (1,), generator=gen))
        x = torch.randn(c, h, w, generator=gen, dtype=torch.float64)
        splits = [torch.rand(c, h, w, generator=gen, dtype=torch.float64) for _ in range(n)]
        got = coupling_forward(x, splits).numpy()
        want = oracle_forward(x.numpy(), [s.numpy() for s in splits])
        np.testing.assert_allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_reverse_matches_recurrence_oracle(self, seed):
        gen = torch.Generator().manual_seed(100 + seed)
        c, hh, w = 2, 3, 4
        n = int(torch.randint(2, 6, (1,), generator=gen))
        y_splits = [torch.randn(c, hh, w, generator=gen, dtype=torch.float64) for _ in range(n)]
        a_splits = [torch.rand(c, hh, w, generator=gen, dtype=torch.float64) for _ in range(n)]
        alphas = torch.rand(n - 1, generator=gen, dtype=torch.float64)
        got = coupling_reverse(y_splits, a_splits, alphas).numpy()
        want = oracle_reverse(
            [t.numpy() for t in y_splits], [t.numpy() for t in a_splits], alphas.numpy()
        )
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestHierarchyBlock:
    def test_zero_affine_replicates_input(self):
        block = HierarchyBlock(3, 4)
        with torch.no_grad():
            for p in block.affine.parameters():
                p.zero_()
        x = rand_image(5, 6, seed=1)
        y, splits = block(x)
        assert y.shape == (12, 5, 6)
        for i in range(4):
            assert torch.equal(y[3 * i : 3 * (i + 1)], x)
        assert all(torch.equal(s, torch.zeros_like(s)) for s in splits)

    def test_block_forward_equals_oracle_with_real_affine(self):
        torch.manual_seed(0)
        block = HierarchyBlock(3, 3)
        x = rand_image(4, 4, seed=2)
        y, splits = block(x)
        want = oracle_forward(x.numpy(), [s.detach().numpy() for s in splits])
        np.testing.assert_allclose(y.detach().numpy(), want, atol=1e-6)

    def test_cache_entries_non_negative(self):
        torch.manual_seed(3)
        block = HierarchyBlock(3, 5)
        _, splits = block(rand_image(8, 8, seed=3))
        for s in splits:
            assert float(s.detach().min()) >= 0.0

    def test_alpha_one_bypass_inverts(self):
        torch.manual_seed(4)
        block = HierarchyBlock(3, 4)
        x = rand_image(6, 6, seed=4)
        y, splits = block(x)
        back = block.reverse(y, splits, adain_bypass=True, alpha_override=1.0)
        assert float((back - x).abs().max()) <= 1e-5

    def test_fusion_weights_init_and_range(self):
        block = HierarchyBlock(3, 4)
        w = block.fusion_weights()
        assert w.shape == (3,)
        assert torch.allclose(w, torch.full((3,), 0.5))
        with torch.no_grad():
            block.fusion_logits.fill_(10.0)
        assert float(block.fusion_weights().max()) < 1.0  # 1 only via override
        assert float(block.fusion_weights(alpha_override=1.0).min()) == 1.0

    def test_channel_mismatch_raises(self):
        block = HierarchyBlock(3, 2)
        with pytest.raises(ContractError):
            block(rand_image(4, 4, c=4))
        y, splits = block(rand_image(4, 4))
        with pytest.raises(ContractError):
            block.reverse(rand_image(4, 4, c=5), splits, adain_bypass=True)

    def test_style_required_without_bypass(self):
        block = HierarchyBlock(3, 2)
        y, splits = block(rand_image(4, 4))
        with pytest.raises(ContractError):
            block.reverse(y, splits, style=None, adain_bypass=False)


class TestAdain:
    def test_identity_stats(self):
        x = rand_image(9, 9, seed=5)
        mean, std = spatial_stats(x, eps=0.0)
        out = adain(x, mean.view(-1), std.view(-1))
        assert float((out - x).abs().max()) <= 1e-5

    def test_two_pixel_example(self):
        # channel [0, 2] has mean 1 and population std 1
        x = torch.tensor([[[0.0, 2.0]]])
        out = adain(x, torch.tensor([5.0]), torch.tensor([3.0]))
        assert torch.allclose(out, torch.tensor([[[2.0, 8.0]]]), atol=1e-5)

    def test_constant_channel_maps_to_target_mean(self):
        # f32 mean-subtraction residue (~1e-7) is amplified by the 1e-5 guard,
        # so the constant case is exact only up to that noise floor
        x = torch.full((2, 4, 4), 0.7)
        out = adain(x, torch.tensor([1.0, -2.0]), torch.tensor([3.0, 0.5]))
        assert torch.allclose(out[0], torch.full((4, 4), 1.0), atol=0.05)
        assert torch.allclose(out[1], torch.full((4, 4), -2.0), atol=0.05)
        x64 = torch.full((2, 4, 4), 0.7, dtype=torch.float64)
        out64 = adain(x64, torch.tensor([1.0, -2.0], dtype=torch.float64),
                      torch.tensor([3.0, 0.5], dtype=torch.float64))
        assert torch.allclose(out64[0], torch.full((4, 4), 1.0, dtype=torch.float64), atol=1e-9)
        assert torch.allclose(out64[1], torch.full((4, 4), -2.0, dtype=torch.float64), atol=1e-9)

    def test_stats_match_targets(self):
        gen = torch.Generator().manual_seed(6)
        x = torch.rand(5, 10, 10, generator=gen)
        mu = torch.randn(5, generator=gen)
        sigma = torch.rand(5, generator=gen) + 0.3
        out = adain(x, mu, sigma)
        mean, std = spatial_stats(out, eps=0.0)
        assert float((mean.view(-1) - mu).abs().max()) <= 1e-4
        assert float((std.view(-1) - sigma).abs().max()) <= 1e-4

    def test_contract_errors(self):
        x = rand_image(4, 4)
        with pytest.raises(ContractError):
            adain(x, torch.zeros(2), torch.ones(2))
        with pytest.raises(ContractError):
            adain(x, torch.zeros(3), torch.tensor([1.0, -1.0, 1.0]))


class TestModel:
    def test_hf_channel_chain(self):
        model = build_model(variant_config("HF"), seed=0)
        x = rand_image(16, 16, seed=7)
        y, cache = model(x)
        assert y.shape == (120, 16, 16)
        assert [len(e) for e in cache.entries] == [10, 4]
        back = model.reverse(y, cache, adain_bypass=True, alpha_override=1.0)
        assert back.shape == (3, 16, 16)

    def test_variant_output_channels(self):
        assert variant_config("HF").output_channels == 120
        assert variant_config("HF†").output_channels == 1920
        assert variant_config("HF+").output_channels == 120
        assert variant_config("HF++").output_channels == 480

    def test_zero_affine_model_replicates_channels(self):
        model = build_model(mini_config(), seed=0)
        with torch.no_grad():
            for block in model.blocks:
                for p in block.affine.parameters():
                    p.zero_()
        x = rand_image(6, 6, seed=8)
        y, _ = model(x)
        for c in range(y.shape[0]):
            assert torch.equal(y[c], x[c % 3])

    def test_exact_inversion_both_dtypes(self):
        for dtype, tol in ((torch.float32, 1e-5), (torch.float64, 1e-10)):
            model = build_model(mini_config(), seed=1, dtype=dtype)
            x = rand_image(12, 12, seed=9, dtype=dtype)
            y, cache = model(x)
            back = model.reverse(y, cache, adain_bypass=True, alpha_override=1.0)
            assert float((back - x).abs().max()) <= tol

    def test_recover_source_any_alpha(self):
        model = build_model(mini_config(), seed=2)
        with torch.no_grad():
            for block in model.blocks:
                block.fusion_logits.uniform_(-3.0, 3.0)
        x = rand_image(10, 10, seed=10)
        y, cache = model(x)
        got = recover_source(model, y, cache)
        assert float((got - x).abs().max()) <= 1e-6

    def test_repeated_forward_reverse_bit_identical(self):
        model = build_model(variant_config("HF"), seed=3)
        x = rand_image(16, 16, seed=11)
        outs = []
        for _ in range(2):
            y, cache = model(x)
            outs.append(model.reverse(y, cache, adain_bypass=True).detach())
        assert torch.equal(outs[0], outs[1])

    def test_cache_consumed_once(self):
        model = build_model(mini_config(), seed=4)
        x = rand_image(8, 8, seed=12)
        y, cache = model(x)
        model.reverse(y, cache, adain_bypass=True)
        with pytest.raises(ContractError):
            model.reverse(y, cache, adain_bypass=True)

    def test_non_finite_input_rejected(self):
        model = build_model(mini_config(), seed=5)
        x = rand_image(8, 8)
        x[0, 0, 0] = float("nan")
        with pytest.raises(NumericalError):
            model(x)

    def test_wrong_channel_count_rejected(self):
        model = build_model(mini_config(), seed=6)
        with pytest.raises(ContractError):
            model(rand_image(8, 8, c=1))

    def test_model_differentiability_finite_differences(self):
        # reverse(forward(x)) with a smooth quadratic loss, style bypassed
        from hierarchyflow.checks import finite_difference_grad, grad_mismatch

        model = build_model(make_config([2]), seed=7, dtype=torch.float64)
        gen = torch.Generator().manual_seed(13)
        x = torch.rand(3, 4, 4, generator=gen, dtype=torch.float64)
        probe = torch.randn(3, 4, 4, generator=gen, dtype=torch.float64)

        def smooth_loss():
            y, cache = model(x)
            out = model.reverse(y, cache, adain_bypass=True)
            return (out * probe).sum() + 0.5 * (out ** 2).sum()

        def objective():
            with torch.no_grad():
                return float(smooth_loss())

        x.requires_grad_(True)
        loss = smooth_loss()
        loss.backward()
        x_grad = x.grad.clone()
        x.requires_grad_(False)

        for name, p in model.named_parameters():
            if name.startswith("style_net"):
                continue  # style path is bypassed here; covered by the loss checks
            fd = finite_difference_grad(objective, p, 1e-5)
            assert grad_mismatch(p.grad, fd) <= 1e-3, name
        fd = finite_difference_grad(objective, x, 1e-5)
        assert grad_mismatch(x_grad, fd) <= 1e-3


class TestSqueeze:
    def test_round_trip_bit_exact(self):
        x = rand_image(8, 10, seed=14)
        assert torch.equal(unsqueeze(squeeze(x)), x)

    def test_enumerated_2x2(self):
        x = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
        y = squeeze(x)
        assert y.shape == (4, 1, 1)
        assert y.view(-1).tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_shape_law(self):
        x = torch.zeros(3, 256, 256)
        assert squeeze(x).shape == (12, 128, 128)

    def test_odd_dims_rejected(self):
        with pytest.raises(ContractError):
            squeeze(torch.zeros(1, 3, 4))
        with pytest.raises(ContractError):
            unsqueeze(torch.zeros(3, 2, 2))

    def test_subpixel_order(self):
        # top-left, top-right, bottom-left, bottom-right per input channel
        x = rand_image(4, 4, c=2, seed=15)
        y = squeeze(x)
        assert torch.equal(y[0], x[0, ::2, ::2])
        assert torch.equal(y[1], x[0, ::2, 1::2])
        assert torch.equal(y[2], x[0, 1::2, ::2])
        assert torch.equal(y[3], x[0, 1::2, 1::2])
        assert torch.equal(y[4], x[1, ::2, ::2])
