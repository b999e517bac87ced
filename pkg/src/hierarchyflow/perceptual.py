"""Frozen feature extraction and the training losses built on it.

Two interchangeable backends expose the same four ReLU taps of a VGG-19
feature stack (relu1_1/relu2_1/relu3_1/relu4_1 with 64/128/256/512 channels):
``pretrained-vgg19`` loads converted weights from a named-tensor container,
``seeded-standin`` builds the identical topology with seeded random weights so
the whole test surface runs without any external download. The losses only
use channel statistics and normalized differences, so every loss identity
holds for either backend.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from . import checkpoint as ckpt
from .errors import CheckpointError, ContractError
from .flow import normalize_channels

# Fixed input normalization (ImageNet statistics), applied by both backends.
INPUT_MEAN = (0.485, 0.456, 0.406)
INPUT_STD = (0.229, 0.224, 0.225)

# Feature stack up to relu4_1. Every conv is 3x3 stride 1 padding 1 + ReLU.
FEATURE_PLAN = (
    ("conv", "conv1_1", 3, 64),
    ("tap", "relu1_1"),
    ("conv", "conv1_2", 64, 64),
    ("pool",),
    ("conv", "conv2_1", 64, 128),
    ("tap", "relu2_1"),
    ("conv", "conv2_2", 128, 128),
    ("pool",),
    ("conv", "conv3_1", 128, 256),
    ("tap", "relu3_1"),
    ("conv", "conv3_2", 256, 256),
    ("conv", "conv3_3", 256, 256),
    ("conv", "conv3_4", 256, 256),
    ("pool",),
    ("conv", "conv4_1", 256, 512),
    ("tap", "relu4_1"),
)

TAP_NAMES = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")
TAP_CHANNELS = {"relu1_1": 64, "relu2_1": 128, "relu3_1": 256, "relu4_1": 512}
STYLE_TAPS = ("relu1_1", "relu2_1", "relu3_1")

# Tiny variance guard inside the loss statistics; keeps std gradients finite
# for (near-)constant channels without moving any tested value.
LOSS_VAR_EPS = 1e-12


def expected_weight_shapes() -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for op in FEATURE_PLAN:
        if op[0] == "conv":
            _, name, cin, cout = op
            shapes[f"{name}.weight"] = (cout, cin, 3, 3)
            shapes[f"{name}.bias"] = (cout,)
    return shapes


@dataclass
class FeatureTaps:
    """The four named taps for one image, tagged with the producing backend."""

    relu1_1: Tensor
    relu2_1: Tensor
    relu3_1: Tensor
    relu4_1: Tensor
    backend: str

    def style(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.relu1_1, self.relu2_1, self.relu3_1

    def get(self, name: str) -> Tensor:
        return getattr(self, name)


class FeatureExtractor:
    """Frozen feature stack; construct via ``standin`` or ``from_weight_file``."""

    def __init__(self, weights: dict[str, Tensor], backend: str):
        shapes = expected_weight_shapes()
        if set(weights) != set(shapes):
            missing = sorted(set(shapes) - set(weights))
            extra = sorted(set(weights) - set(shapes))
            raise CheckpointError(
                f"feature weights name mismatch: missing {missing or 'none'}, "
                f"unexpected {extra or 'none'}"
            )
        for name, shape in shapes.items():
            if tuple(weights[name].shape) != shape:
                raise CheckpointError(
                    f"feature weight {name} has shape {tuple(weights[name].shape)}, "
                    f"expected {shape}"
                )
        self.weights = {k: v.detach().clone() for k, v in weights.items()}
        for v in self.weights.values():
            v.requires_grad_(False)
        self.backend = backend
        self._typed: dict[torch.dtype, dict[str, Tensor]] = {}

    def _weights_for(self, dtype: torch.dtype) -> dict[str, Tensor]:
        if dtype not in self._typed:
            self._typed[dtype] = {k: v.to(dtype) for k, v in self.weights.items()}
        return self._typed[dtype]

    @staticmethod
    def standin(seed: int = 0) -> "FeatureExtractor":
        """Same topology, He-uniform seeded weights; fully self-contained."""
        gen = torch.Generator().manual_seed(int(seed))
        weights: dict[str, Tensor] = {}
        for name, shape in expected_weight_shapes().items():
            if name.endswith(".weight"):
                fan_in = shape[1] * shape[2] * shape[3]
                bound = math.sqrt(6.0 / fan_in)
                weights[name] = torch.empty(shape).uniform_(-bound, bound, generator=gen)
            else:
                weights[name] = torch.zeros(shape)
        return FeatureExtractor(weights, backend=f"seeded-standin:{int(seed)}")

    @staticmethod
    def from_weight_file(path) -> "FeatureExtractor":
        """Load converted VGG-19 weights; raises on any malformation."""
        header, arrays = ckpt.read_container(path)
        if header.get("kind") != "vgg19-features":
            raise CheckpointError(
                f"weight file kind is {header.get('kind')!r}, expected 'vgg19-features'"
            )
        weights = {k: torch.from_numpy(v) for k, v in arrays.items()}
        return FeatureExtractor(weights, backend="pretrained-vgg19")

    def extract(self, image: Tensor) -> FeatureTaps:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ContractError(f"extractor expects a (3,H,W) image, got {tuple(image.shape)}")
        if image.shape[-2] < 8 or image.shape[-1] < 8:
            raise ContractError("extractor needs at least 8x8 input for the relu4_1 tap")
        dtype = image.dtype
        weights = self._weights_for(dtype)
        mean = torch.tensor(INPUT_MEAN, dtype=dtype).view(3, 1, 1)
        std = torch.tensor(INPUT_STD, dtype=dtype).view(3, 1, 1)
        h = ((image - mean) / std).unsqueeze(0)
        taps: dict[str, Tensor] = {}
        for op in FEATURE_PLAN:
            if op[0] == "conv":
                _, name, _, _ = op
                h = F.relu(F.conv2d(h, weights[f"{name}.weight"], weights[f"{name}.bias"], padding=1))
            elif op[0] == "pool":
                h = F.max_pool2d(h, 2)
            else:
                taps[op[1]] = h.squeeze(0)
        return FeatureTaps(backend=self.backend, **taps)


class CachedExtractor:
    """LRU memoization of taps for grad-free inputs (frozen weights make the
    taps a pure function of the pixels). Tensors carrying autograd history
    bypass the cache."""

    def __init__(self, inner: FeatureExtractor, capacity: int = 64):
        self.inner = inner
        self.capacity = capacity
        self._cache: OrderedDict[str, FeatureTaps] = OrderedDict()

    @property
    def backend(self) -> str:
        return self.inner.backend

    def extract(self, image: Tensor) -> FeatureTaps:
        if image.requires_grad or image.grad_fn is not None:
            return self.inner.extract(image)
        key = hashlib.sha1(
            str(image.dtype).encode() + str(tuple(image.shape)).encode()
            + image.detach().contiguous().cpu().numpy().tobytes()
        ).hexdigest()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        taps = self.inner.extract(image)
        self._cache[key] = taps
        if len(self._cache) > self.capacity:
            self._cache.popitem(last=False)
        return taps


@dataclass(frozen=True)
class LossConfig:
    """Objective weights: total = content + style_weight * aligned_style."""

    style_weight: float = 0.1
    k: float = 0.8

    def __post_init__(self):
        if self.style_weight < 0:
            raise ContractError(f"style_weight must be non-negative, got {self.style_weight}")
        _validate_k(self.k)


def _validate_k(k: float):
    if not (0.0 < k <= 1.0):
        raise ContractError(f"k must lie in (0, 1], got {k}")


def _channel_mean_std(f: Tensor) -> tuple[Tensor, Tensor]:
    mean = f.mean(dim=(-2, -1))
    var = f.var(dim=(-2, -1), unbiased=False)
    return mean, torch.sqrt(var + LOSS_VAR_EPS)


def selected_channels(mu_a: Tensor, mu_b: Tensor, k: float) -> Tensor:
    """Indices of the floor(kN) (at least 1) channels with the smallest
    |mean difference|, stable ascending order, ties by channel index."""
    _validate_k(k)
    energy = (mu_a - mu_b).abs().detach()
    n = energy.numel()
    m = max(1, int(math.floor(k * n + 1e-9)))
    order = torch.argsort(energy, stable=True)
    return order[:m]


def content_loss_from_taps(tap_a: Tensor, tap_b: Tensor) -> Tensor:
    """Euclidean distance of channel-normalized content taps."""
    diff = normalize_channels(tap_a) - normalize_channels(tap_b)
    return torch.linalg.vector_norm(diff)


def content_loss(x_hat: Tensor, x: Tensor, extractor) -> Tensor:
    return content_loss_from_taps(
        extractor.extract(x_hat).relu4_1, extractor.extract(x).relu4_1
    )


def aligned_style_loss_from_taps(taps_a, taps_b, k: float) -> Tensor:
    """Mean/std mismatch summed over the best-aligned channel subset per tap.

    The subset is chosen by mean energy only and treated as constant during
    differentiation.
    """
    _validate_k(k)
    total = None
    for fa, fb in zip(taps_a, taps_b):
        if fa.shape[0] != fb.shape[0]:
            raise ContractError(
                f"style taps disagree on channels: {fa.shape[0]} vs {fb.shape[0]}"
            )
        mu_a, sd_a = _channel_mean_std(fa)
        mu_b, sd_b = _channel_mean_std(fb)
        idx = selected_channels(mu_a, mu_b, k)
        term = (mu_a[idx] - mu_b[idx]).abs().sum() + (sd_a[idx] - sd_b[idx]).abs().sum()
        total = term if total is None else total + term
    return total


def vanilla_style_loss_from_taps(taps_a, taps_b) -> Tensor:
    """Per-channel mean/std mismatch over all channels (no selection)."""
    total = None
    for fa, fb in zip(taps_a, taps_b):
        mu_a, sd_a = _channel_mean_std(fa)
        mu_b, sd_b = _channel_mean_std(fb)
        term = (mu_a - mu_b).abs().sum() + (sd_a - sd_b).abs().sum()
        total = term if total is None else total + term
    return total


def aligned_style_loss(x_hat: Tensor, y: Tensor, k: float, extractor) -> Tensor:
    return aligned_style_loss_from_taps(
        extractor.extract(x_hat).style(), extractor.extract(y).style(), k
    )


def total_loss(
    x_hat: Tensor, x: Tensor, y: Tensor, cfg: LossConfig, extractor
) -> tuple[Tensor, dict[str, float]]:
    """Content plus weighted aligned-style loss; components returned for logs."""
    taps_hat = extractor.extract(x_hat)
    content = content_loss_from_taps(taps_hat.relu4_1, extractor.extract(x).relu4_1)
    style = aligned_style_loss_from_taps(taps_hat.style(), extractor.extract(y).style(), cfg.k)
    total = content + cfg.style_weight * style
    return total, {"content": float(content.detach()), "style": float(style.detach())}


def make_extractor(backend: str, seed: int = 0, weight_file=None) -> FeatureExtractor:
    """Backend factory: 'standin' (seeded) or 'vgg19' (requires weight file)."""
    if backend == "standin":
        return FeatureExtractor.standin(seed)
    if backend == "vgg19":
        if weight_file is None:
            raise ContractError(
                "the vgg19 backend needs a weight file (see README for conversion)"
            )
        return FeatureExtractor.from_weight_file(weight_file)
    raise ContractError(f"unknown backend {backend!r}; expected 'standin' or 'vgg19'")
