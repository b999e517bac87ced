"""Invertible core: hierarchical coupling blocks, AdaIN, squeeze baseline.

Feature maps are torch tensors laid out as (channel, row, column). Images live
in [0, 1]. The forward pass of a block subtracts a cascade of learned affine
splits from the input and concatenates the intermediate maps; the reversed
pass adds the cached splits back and fuses the intermediates with learnable
weights, so with every fusion weight forced to 1 the block is an exact
inverse. AdaIN re-targets per-channel statistics of the concatenated block
output before the reversed pass.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import ModelConfig
from .errors import ContractError, NumericalError

# Guard constant for every per-channel std denominator. Realized as
# sqrt(var + EPS^2) so constant channels normalize to exactly zero while
# non-degenerate channels keep error ~EPS^2/var, far below test tolerances.
EPS = 1e-5


def spatial_stats(x: Tensor, eps: float = EPS) -> tuple[Tensor, Tensor]:
    """Per-channel spatial mean and guarded population std.

    Accepts (C,H,W) or (N,C,H,W); statistics are over the trailing two dims.
    """
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), unbiased=False, keepdim=True)
    std = torch.sqrt(var + eps * eps)
    return mean, std


def normalize_channels(x: Tensor, eps: float = EPS) -> Tensor:
    """Zero-mean, unit-std per channel over spatial positions (guarded)."""
    mean, std = spatial_stats(x, eps)
    return (x - mean) / std


def adain(x: Tensor, mu: Tensor, sigma: Tensor, eps: float = EPS) -> Tensor:
    """Re-target each channel's spatial mean/std to (mu, sigma).

    x: (C,H,W); mu, sigma: 1-D of length C with sigma > 0. A constant channel
    normalizes to zero and therefore maps to the constant mu.
    """
    if mu.ndim != 1 or sigma.ndim != 1 or mu.numel() != x.shape[0] or sigma.numel() != x.shape[0]:
        raise ContractError(
            f"adain target length mismatch: x has {x.shape[0]} channels, "
            f"mu has {mu.numel()}, sigma has {sigma.numel()}"
        )
    if bool((sigma <= 0).any()):
        raise ContractError("adain requires strictly positive sigma targets")
    return sigma.view(-1, 1, 1) * normalize_channels(x, eps) + mu.view(-1, 1, 1)


def coupling_forward(x: Tensor, splits: list[Tensor] | tuple[Tensor, ...]) -> Tensor:
    """Cascaded subtractive coupling: h_1 = x - a_1, h_i = h_{i-1} - a_i.

    Returns concat(h_1..h_n) along channels. Equivalent closed form:
    h_i = x - sum_{j<=i} a_j.
    """
    maps = []
    h = x
    for a in splits:
        h = h - a
        maps.append(h)
    return torch.cat(maps, dim=0)


def coupling_reverse(
    y_splits,
    a_splits,
    alphas: Tensor,
) -> Tensor:
    """Additive coupling with weighted fusion, last split to first.

    h_n = y_n + a_n; h_i = alpha_i * (y_i + a_i) + (1 - alpha_i) * h_{i+1}.
    ``alphas`` holds the n-1 fusion weights, alphas[i] weighing step i+1.
    """
    n = len(y_splits)
    h = y_splits[n - 1] + a_splits[n - 1]
    for i in range(n - 2, -1, -1):
        h = alphas[i] * (y_splits[i] + a_splits[i]) + (1.0 - alphas[i]) * h
    return h


def squeeze(x: Tensor) -> Tensor:
    """Space-to-channel rearrangement: (C,H,W) -> (4C,H/2,W/2).

    Each input channel c yields output channels 4c..4c+3 holding the
    top-left, top-right, bottom-left, bottom-right sub-pixels.
    """
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"squeeze needs even spatial dims, got {h}x{w}")
    return (
        x.reshape(c, h // 2, 2, w // 2, 2)
        .permute(0, 2, 4, 1, 3)
        .reshape(4 * c, h // 2, w // 2)
    )


def unsqueeze(x: Tensor) -> Tensor:
    """Exact inverse of :func:`squeeze`: (4C,H,W) -> (C,2H,2W)."""
    c, h, w = x.shape
    if c % 4:
        raise ContractError(f"unsqueeze needs channels divisible by 4, got {c}")
    return (
        x.reshape(c // 4, 2, 2, h, w)
        .permute(0, 3, 1, 4, 2)
        .reshape(c // 4, 2 * h, 2 * w)
    )


class AffineCache:
    """Per-block affine splits produced by a forward pass.

    Valid only for the input that produced it and consumed at most once by a
    reversed pass.
    """

    def __init__(self, entries: list[tuple[Tensor, ...]]):
        self.entries = entries
        self.consumed = False

    def __len__(self) -> int:
        return len(self.entries)

    def mark_consumed(self):
        if self.consumed:
            raise ContractError("affine cache was already consumed by a reversed pass")
        self.consumed = True


def _check_finite(t: Tensor, what: str):
    if not bool(torch.isfinite(t).all()):
        raise NumericalError(f"non-finite values in {what}")


class HierarchyBlock(nn.Module):
    """One hierarchical coupling layer with its affine net and fusion weights.

    Fusion weights are stored as unconstrained pre-activations and realized
    through a logistic map into (0,1); they initialize to 0.5. The boundary
    value 1 is reachable only through ``alpha_override``.
    """

    def __init__(self, input_channels: int, expansion: int, hidden_cap: int = 128):
        super().__init__()
        from .nets import AffineNet  # deferred to avoid a module cycle

        self.input_channels = input_channels
        self.expansion = expansion
        self.affine = AffineNet(input_channels, expansion, hidden_cap)
        self.fusion_logits = nn.Parameter(torch.zeros(expansion - 1))

    @property
    def output_channels(self) -> int:
        return self.input_channels * self.expansion

    def fusion_weights(self, alpha_override: float | None = None) -> Tensor:
        if alpha_override is not None:
            return torch.full_like(self.fusion_logits, float(alpha_override))
        return torch.sigmoid(self.fusion_logits)

    def forward(self, x: Tensor, block_index: int = 0) -> tuple[Tensor, tuple[Tensor, ...]]:
        if x.ndim != 3 or x.shape[0] != self.input_channels:
            raise ContractError(
                f"block {block_index} expects ({self.input_channels},H,W), got {tuple(x.shape)}"
            )
        a = self.affine(x)
        splits = tuple(a.chunk(self.expansion, dim=0))
        y = coupling_forward(x, splits)
        if not bool(torch.isfinite(y).all()):
            raise NumericalError(f"non-finite activation in forward pass of block {block_index}")
        return y, splits

    def reverse(
        self,
        y: Tensor,
        splits: tuple[Tensor, ...],
        style: tuple[Tensor, Tensor] | None = None,
        adain_bypass: bool = False,
        alpha_override: float | None = None,
        block_index: int = 0,
    ) -> Tensor:
        n = self.expansion
        if y.ndim != 3 or y.shape[0] != n * self.input_channels:
            raise ContractError(
                f"block {block_index} reverse expects ({n * self.input_channels},H,W), "
                f"got {tuple(y.shape)}"
            )
        if len(splits) != n or any(s.shape != (self.input_channels, *y.shape[1:]) for s in splits):
            raise ContractError(f"cache entry does not match block {block_index} geometry")
        if not adain_bypass:
            if style is None:
                raise ContractError("style parameters required unless adain is bypassed")
            y = adain(y, style[0], style[1])
        y_splits = y.chunk(n, dim=0)
        alphas = self.fusion_weights(alpha_override)
        x = coupling_reverse(y_splits, splits, alphas)
        if not bool(torch.isfinite(x).all()):
            raise NumericalError(f"non-finite activation in reversed pass of block {block_index}")
        return x


class HierarchyFlow(nn.Module):
    """Stacked hierarchical coupling blocks plus the style encoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        from .nets import StyleNet

        self.config = config
        self.blocks = nn.ModuleList(
            HierarchyBlock(b.input_channels, b.expansion, config.affine_hidden_cap)
            for b in config.blocks
        )
        self.style_net = StyleNet(config)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def forward(self, x: Tensor) -> tuple[Tensor, AffineCache]:
        """Encode an image through every block; returns output and the cache."""
        if x.ndim != 3 or x.shape[0] != self.config.image_channels:
            raise ContractError(
                f"expected ({self.config.image_channels},H,W) input, got {tuple(x.shape)}"
            )
        _check_finite(x, "model input")
        h = x.to(self.dtype)
        entries = []
        for i, block in enumerate(self.blocks):
            h, splits = block(h, block_index=i)
            entries.append(splits)
        return h, AffineCache(entries)

    def reverse(
        self,
        y: Tensor,
        cache: AffineCache,
        style: list[tuple[Tensor, Tensor]] | None = None,
        adain_bypass: bool = False,
        alpha_override: float | None = None,
    ) -> Tensor:
        """Decode block outputs back to an image, last block to first."""
        if len(cache) != len(self.blocks):
            raise ContractError(
                f"cache has {len(cache)} entries for a {len(self.blocks)}-block model"
            )
        if not adain_bypass and (style is None or len(style) != len(self.blocks)):
            raise ContractError("need one (mu, sigma) pair per block unless adain is bypassed")
        cache.mark_consumed()
        h = y
        for i in range(len(self.blocks) - 1, -1, -1):
            block_style = None if adain_bypass else style[i]
            h = self.blocks[i].reverse(
                h,
                cache.entries[i],
                style=block_style,
                adain_bypass=adain_bypass,
                alpha_override=alpha_override,
                block_index=i,
            )
        return h

    def translate(
        self,
        source: Tensor,
        target: Tensor | None = None,
        adain_bypass: bool = False,
        alpha_override: float | None = None,
    ) -> Tensor:
        """Full pipeline: encode source, inject target style, decode."""
        style = None
        if not adain_bypass:
            if target is None:
                raise ContractError("translate needs a target image unless adain is bypassed")
            style = self.style_net(target.to(self.dtype))
        y, cache = self(source)
        return self.reverse(
            y, cache, style=style, adain_bypass=adain_bypass, alpha_override=alpha_override
        )


def recover_source(model: HierarchyFlow, y: Tensor, cache: AffineCache) -> Tensor:
    """Reconstruct the encoder input using only x = y_1 + a_1 per block.

    Works for any fusion weights because the first intermediate map is always
    h_1 = x - a_1; AdaIN must not have touched y.
    """
    h = y
    for i in range(len(model.blocks) - 1, -1, -1):
        block = model.blocks[i]
        y_first = h[: block.input_channels]
        h = y_first + cache.entries[i][0]
    return h
