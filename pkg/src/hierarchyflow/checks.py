"""Runnable verification suites: inversion, recoverability, gradients, losses.

Each suite returns CheckResult records; the CLI prints one line per record
and exits nonzero if any fails. The gradient suite compares autograd against
central finite differences, which stay independent of the autograd path.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import ModelConfig, mini_config, variant_config, VARIANT_EXPANSIONS
from .flow import adain, recover_source, spatial_stats
from .nets import build_model
from .perceptual import (
    CachedExtractor,
    FeatureExtractor,
    LossConfig,
    aligned_style_loss_from_taps,
    total_loss,
    vanilla_style_loss_from_taps,
)


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    threshold: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.suite}/{self.name}: "
            f"max error {self.value:.3e} (threshold {self.threshold:.1e})"
        )


def check_inversion(
    variants=None, seed: int = 0, size: int = 32, cases: int = 3
) -> list[CheckResult]:
    """Reverse-of-forward identity with fusion weights forced to 1, AdaIN off."""
    results = []
    for name in variants or list(VARIANT_EXPANSIONS):
        config = variant_config(name)
        for dtype, tol in ((torch.float32, 1e-5), (torch.float64, 1e-10)):
            model = build_model(config, seed=seed, dtype=dtype)
            gen = torch.Generator().manual_seed(seed + 1)
            worst = 0.0
            with torch.no_grad():
                for _ in range(cases):
                    x = torch.rand(3, size, size, generator=gen).to(dtype)
                    y, cache = model(x)
                    back = model.reverse(y, cache, adain_bypass=True, alpha_override=1.0)
                    worst = max(worst, float((back - x).abs().max()))
            results.append(
                CheckResult("inversion", f"{name}/{str(dtype).split('.')[-1]}", worst <= tol, worst, tol)
            )
    return results


def check_model_inversion(
    model, seed: int = 0, size: int = 32, cases: int = 3, tol: float = 1e-5
) -> list[CheckResult]:
    """Inversion check bound to an existing (e.g. checkpointed) model."""
    gen = torch.Generator().manual_seed(seed + 1)
    worst = 0.0
    with torch.no_grad():
        for _ in range(cases):
            x = torch.rand(3, size, size, generator=gen).to(model.dtype)
            y, cache = model(x)
            back = model.reverse(y, cache, adain_bypass=True, alpha_override=1.0)
            worst = max(worst, float((back - x).abs().max()))
    label = model.config.variant or "custom"
    return [CheckResult("inversion", f"checkpoint/{label}", worst <= tol, worst, tol)]


def check_recoverability(seed: int = 0, cases: int = 20, tol: float = 1e-6) -> list[CheckResult]:
    """x = y_1 + a_1 blockwise reconstruction for arbitrary fusion weights."""
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for case in range(cases):
        n_blocks = 1 + case % 3
        expansions = [int(torch.randint(2, 5, (1,), generator=gen)) for _ in range(n_blocks)]
        model = build_model(ModelConfig.from_dict({"expansions": expansions}), seed=seed + case)
        with torch.no_grad():
            for block in model.blocks:
                block.fusion_logits.uniform_(-2.0, 2.0, generator=gen)
        size = 2 * int(torch.randint(2, 7, (1,), generator=gen))
        x = torch.rand(3, size, size, generator=gen)
        with torch.no_grad():
            y, cache = model(x)
            worst = max(worst, float((recover_source(model, y, cache) - x).abs().max()))
    return [CheckResult("recoverability", f"{cases}-random-configs", worst <= tol, worst, tol)]


def finite_difference_grad(eval_fn, tensor: torch.Tensor, step: float) -> torch.Tensor:
    """Central finite differences of a scalar function w.r.t. one tensor."""
    flat = tensor.detach().view(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + step
            fp = eval_fn()
            flat[i] = orig - step
            fm = eval_fn()
            flat[i] = orig
            grad[i] = (fp - fm) / (2.0 * step)
    return grad.view(tensor.shape)


def grad_mismatch(a: torch.Tensor, b: torch.Tensor, atol: float = 1e-6) -> float:
    """Worst relative disagreement, ignoring differences below ``atol``.

    The absolute floor absorbs finite-difference roundoff on gradients that
    are structurally zero (e.g. parameters erased by a downstream
    normalization).
    """
    diff = (a - b).abs()
    denom = torch.maximum(a.abs(), b.abs()).clamp_min(atol)
    rel = torch.where(diff > atol, diff / denom, torch.zeros_like(diff))
    return float(rel.max()) if rel.numel() else 0.0


def check_gradients(
    seed: int = 0,
    step: float = 1e-7,
    tol: float = 1e-3,
    include_pixels: bool = True,
    config: ModelConfig | None = None,
) -> list[CheckResult]:
    """Objective gradients vs central finite differences on a tiny model.

    Runs in 64-bit on an 8x8 source and 16x16 target with the standin
    backend; covers every model parameter and optionally the input pixels.
    The evaluation point (fixed by the seed) keeps every ReLU pre-activation
    far from zero relative to the perturbation reach, so central differences
    see a locally smooth function.
    """
    torch.manual_seed(seed)
    config = config or mini_config()
    model = build_model(config, seed=seed, dtype=torch.float64)
    extractor = CachedExtractor(FeatureExtractor.standin(seed), capacity=8)
    cfg = LossConfig(style_weight=0.1, k=0.8)
    gen = torch.Generator().manual_seed(seed + 8)
    source = torch.rand(3, 8, 8, generator=gen, dtype=torch.float64)
    target = torch.rand(3, 16, 16, generator=gen, dtype=torch.float64)

    def objective() -> float:
        with torch.no_grad():
            x_hat = model.translate(source, target)
            loss, _ = total_loss(x_hat, source, target, cfg, extractor)
        return float(loss)

    source.requires_grad_(True)
    target.requires_grad_(True)
    x_hat = model.translate(source, target)
    loss, _ = total_loss(x_hat, source, target, cfg, extractor)
    loss.backward()
    source_grad, target_grad = source.grad.clone(), target.grad.clone()
    # drop grad tracking so the FD phase can reuse cached taps
    source.requires_grad_(False)
    target.requires_grad_(False)

    results = []
    worst_param = 0.0
    for name, p in model.named_parameters():
        fd = finite_difference_grad(objective, p, step)
        worst_param = max(worst_param, grad_mismatch(p.grad, fd))
    results.append(CheckResult("gradients", "model-parameters", worst_param <= tol, worst_param, tol))
    if include_pixels:
        worst_px = 0.0
        for tensor, grad in ((source, source_grad), (target, target_grad)):
            fd = finite_difference_grad(objective, tensor, step)
            worst_px = max(worst_px, grad_mismatch(grad, fd))
        results.append(CheckResult("gradients", "input-pixels", worst_px <= tol, worst_px, tol))
    return results


def check_losses(seed: int = 0, pairs: int = 10) -> list[CheckResult]:
    """Aligned-style loss identities: k=1 equivalence, k-monotonicity, worked case."""
    gen = torch.Generator().manual_seed(seed)
    results = []

    worst_eq = 0.0
    worst_mono = 0.0
    k_grid = [i / 10 for i in range(1, 11)]
    for _ in range(pairs):
        taps_a = [torch.randn(c, 6, 6, generator=gen, dtype=torch.float64) for c in (8, 16, 32)]
        taps_b = [torch.randn(c, 6, 6, generator=gen, dtype=torch.float64) for c in (8, 16, 32)]
        aligned = float(aligned_style_loss_from_taps(taps_a, taps_b, 1.0))
        vanilla = float(vanilla_style_loss_from_taps(taps_a, taps_b))
        worst_eq = max(worst_eq, abs(aligned - vanilla))
        values = [float(aligned_style_loss_from_taps(taps_a, taps_b, k)) for k in k_grid]
        drop = max(
            (values[i] - values[i + 1] for i in range(len(values) - 1)), default=0.0
        )
        worst_mono = max(worst_mono, drop)
    results.append(CheckResult("losses", "k1-vanilla-equivalence", worst_eq <= 1e-7, worst_eq, 1e-7))
    results.append(CheckResult("losses", "k-monotonicity", worst_mono <= 0.0, worst_mono, 0.0))

    # Worked selection example: 5 channels, k=0.8 keeps the 4 best-aligned.
    mu_a = torch.tensor([0.9, 0.1, 0.5, 0.3, 0.7], dtype=torch.float64)
    taps_a = [_tap_with_stats(mu_a, torch.full((5,), 1.2, dtype=torch.float64))]
    taps_b = [_tap_with_stats(torch.zeros(5, dtype=torch.float64), torch.ones(5, dtype=torch.float64))]
    value = float(aligned_style_loss_from_taps(taps_a, taps_b, 0.8))
    err = abs(value - 2.4)
    results.append(CheckResult("losses", "worked-selection-example", err <= 1e-9, err, 1e-9))
    return results


def _tap_with_stats(means: torch.Tensor, stds: torch.Tensor) -> torch.Tensor:
    """Two-pixel channels realizing exact per-channel mean and population std."""
    lo = (means - stds).view(-1, 1, 1)
    hi = (means + stds).view(-1, 1, 1)
    return torch.cat([lo, hi], dim=2)


def check_adain(seed: int = 0, cases: int = 10, tol: float = 1e-4) -> list[CheckResult]:
    """Post-AdaIN channel statistics equal the targets."""
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(cases):
        x = torch.rand(6, 12, 12, generator=gen) * 2.0 - 0.5
        mu = torch.randn(6, generator=gen)
        sigma = torch.rand(6, generator=gen) + 0.5
        with torch.no_grad():
            out = adain(x, mu, sigma)
            mean, std = spatial_stats(out, eps=0.0)
        worst = max(
            worst,
            float((mean.view(-1) - mu).abs().max()),
            float((std.view(-1) - sigma).abs().max()),
        )
    return [CheckResult("adain", "stats-match-targets", worst <= tol, worst, tol)]


SUITE_NAMES = ("inversion", "recoverability", "gradients", "losses", "adain")


def run_suite(name: str, seed: int = 0, variants=None) -> list[CheckResult]:
    if name == "inversion":
        return check_inversion(variants=variants, seed=seed)
    if name == "recoverability":
        return check_recoverability(seed=seed)
    if name == "gradients":
        return check_gradients(seed=seed)
    if name == "losses":
        return check_losses(seed=seed)
    if name == "adain":
        return check_adain(seed=seed)
    if name == "all":
        results = []
        for suite in SUITE_NAMES:
            results.extend(run_suite(suite, seed=seed, variants=variants))
        return results
    raise KeyError(f"unknown suite {name!r}; expected one of {SUITE_NAMES} or 'all'")
