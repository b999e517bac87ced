"""Image file I/O: 8-bit RGB PNG/JPEG to [0,1] float tensors and back."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch import Tensor

from .errors import ConfigurationError


def load_image(path) -> Tensor:
    """Decode to a (3,H,W) float32 tensor in [0,1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (FileNotFoundError, UnidentifiedImageError, OSError) as e:
        raise ConfigurationError(f"cannot decode image {path}: {e}") from e
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image(tensor: Tensor, path):
    """Clamp to [0,1], quantize to 8-bit RGB, and encode as PNG."""
    path = Path(path)
    if tensor.ndim != 3 or tensor.shape[0] != 3:
        raise ConfigurationError(f"expected a (3,H,W) tensor, got {tuple(tensor.shape)}")
    arr = torch.round(tensor.detach().clamp(0.0, 1.0) * 255.0).to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).cpu().numpy(), mode="RGB").save(path, format="PNG")
