"""Learnable sub-networks: per-block affine predictor and the style encoder."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import ModelConfig
from .errors import ContractError
from .flow import EPS, normalize_channels

SIGMA_FLOOR = 1e-4
STYLE_MIN_INPUT = 16


class AffineNet(nn.Module):
    """Conv-IN-ReLU-Conv-IN-ReLU-Conv-ReLU predictor of the affine tensor.

    3x3 stride-1 convolutions, padding 1, so spatial dims are preserved.
    Hidden widths double the input channels (2C then 4C) up to ``hidden_cap``;
    the last conv maps to expansion * C. The final ReLU makes the output
    non-negative. Instance normalization carries no learnable terms.
    """

    def __init__(self, input_channels: int, expansion: int, hidden_cap: int = 128):
        super().__init__()
        h1 = min(2 * input_channels, hidden_cap)
        h2 = min(4 * input_channels, hidden_cap)
        self.input_channels = input_channels
        self.output_channels = input_channels * expansion
        # conv1/conv2 biases would be erased by the following instance norm,
        # so they are omitted rather than carried as dead parameters
        self.conv1 = nn.Conv2d(input_channels, h1, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(h1, h2, 3, padding=1, bias=False)
        self.conv3 = nn.Conv2d(h2, self.output_channels, 3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.input_channels:
            raise ContractError(
                f"affine net expects ({self.input_channels},H,W), got {tuple(x.shape)}"
            )
        h = x.unsqueeze(0)
        h = F.relu(normalize_channels(self.conv1(h), EPS))
        h = F.relu(normalize_channels(self.conv2(h), EPS))
        h = F.relu(self.conv3(h))
        return h.squeeze(0)


class StyleNet(nn.Module):
    """Shared conv trunk with per-block linear heads emitting (mu, sigma).

    Four 3x3 stride-2 convolutions with ReLU and no normalization layers,
    then global average pooling; each block gets two heads sized to its
    output channels. Sigma passes through softplus plus a small floor so it
    stays strictly positive.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        widths = config.style_widths
        convs = []
        c = config.image_channels
        for w in widths:
            convs.append(nn.Conv2d(c, w, 3, stride=2, padding=1))
            c = w
        self.trunk = nn.ModuleList(convs)
        self.mu_heads = nn.ModuleList(nn.Linear(c, k) for k in config.block_output_channels)
        self.sigma_heads = nn.ModuleList(nn.Linear(c, k) for k in config.block_output_channels)

    def forward(self, image: Tensor) -> list[tuple[Tensor, Tensor]]:
        if image.ndim != 3:
            raise ContractError(f"style input must be (C,H,W), got {tuple(image.shape)}")
        if image.shape[-2] < STYLE_MIN_INPUT or image.shape[-1] < STYLE_MIN_INPUT:
            raise ContractError(
                f"style input must be at least {STYLE_MIN_INPUT}x{STYLE_MIN_INPUT}, "
                f"got {image.shape[-2]}x{image.shape[-1]}"
            )
        h = image.unsqueeze(0)
        for conv in self.trunk:
            h = F.relu(conv(h))
        pooled = h.mean(dim=(-2, -1)).squeeze(0)
        out = []
        for mu_head, sigma_head in zip(self.mu_heads, self.sigma_heads):
            mu = mu_head(pooled)
            sigma = F.softplus(sigma_head(pooled)) + SIGMA_FLOOR
            out.append((mu, sigma))
        return out


def init_params(model: nn.Module, seed: int) -> nn.Module:
    """He-uniform weights, zero biases, zero fusion pre-activations, in place.

    Deterministic given (architecture, seed): parameters are filled in
    registry order from one seeded generator.
    """
    gen = torch.Generator().manual_seed(int(seed))
    for name, p in model.named_parameters():
        with torch.no_grad():
            if p.ndim <= 1:
                # biases and fusion logits
                p.zero_()
            else:
                fan_in = p[0].numel()
                bound = math.sqrt(6.0 / fan_in)
                sample = torch.empty(p.shape, dtype=torch.float32).uniform_(
                    -bound, bound, generator=gen
                )
                p.copy_(sample.to(p.dtype))
    return model


def build_model(config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
    """Construct a HierarchyFlow with seeded initialization."""
    from .flow import HierarchyFlow

    model = HierarchyFlow(config).to(dtype)
    init_params(model, seed)
    return model


def parameter_registry(model: nn.Module) -> dict[str, Tensor]:
    """The closed name -> tensor map covering every learnable parameter."""
    return dict(model.named_parameters())


def param_count_breakdown(model) -> dict[str, int]:
    """Per-component parameter counts plus the total."""
    breakdown: dict[str, int] = {}
    for i, block in enumerate(model.blocks):
        breakdown[f"block{i}.affine"] = sum(p.numel() for p in block.affine.parameters())
        breakdown[f"block{i}.fusion"] = block.fusion_logits.numel()
    breakdown["style.trunk"] = sum(p.numel() for c in model.style_net.trunk for p in c.parameters())
    breakdown["style.heads"] = sum(
        p.numel()
        for heads in (model.style_net.mu_heads, model.style_net.sigma_heads)
        for h in heads
        for p in h.parameters()
    )
    breakdown["total"] = sum(p.numel() for p in model.parameters())
    return breakdown
