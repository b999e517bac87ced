"""Image quality metrics: SSIM, PSNR, and a checkerboard spectral probe.

Inputs are (C,H,W) or (H,W) tensors with values in [0, 1]. All functions are
pure. PSNR of identical images is reported as infinity and rendered as the
textual sentinel "inf" in reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ContractError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# Rec. 601 luma weights for grayscale conversion.
LUMA = (0.299, 0.587, 0.114)


def _as_chw(x: Tensor, what: str) -> Tensor:
    if x.ndim == 2:
        return x.unsqueeze(0)
    if x.ndim == 3:
        return x
    raise ContractError(f"{what} must be (H,W) or (C,H,W), got {tuple(x.shape)}")


def _check_same_dims(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ContractError(f"image dims differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def to_grayscale(img: Tensor) -> Tensor:
    """(C,H,W) -> (H,W) luma; 1-channel and 2-D inputs pass through."""
    img = _as_chw(img, "image")
    if img.shape[0] == 1:
        return img[0]
    if img.shape[0] != 3:
        raise ContractError(f"grayscale conversion expects 1 or 3 channels, got {img.shape[0]}")
    w = torch.tensor(LUMA, dtype=img.dtype).view(3, 1, 1)
    return (img * w).sum(dim=0)


def _gaussian_window(dtype) -> Tensor:
    half = (SSIM_WINDOW - 1) / 2
    coords = torch.arange(SSIM_WINDOW, dtype=dtype) - half
    g = torch.exp(-(coords ** 2) / (2 * SSIM_SIGMA ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a: Tensor, b: Tensor) -> float:
    """Structural similarity, 11x11 Gaussian window sigma 1.5, data range 1.

    Statistics come from valid (unpadded) windows and the map is averaged
    over positions and channels, so both inputs must be at least 11x11.
    """
    a = _as_chw(a, "first image")
    b = _as_chw(b, "second image")
    _check_same_dims(a, b)
    if a.shape[-2] < SSIM_WINDOW or a.shape[-1] < SSIM_WINDOW:
        raise ContractError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images")
    dtype = torch.promote_types(a.dtype, torch.float32)
    a = a.to(dtype)
    b = b.to(dtype)
    c = a.shape[0]
    win = _gaussian_window(dtype).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(x: Tensor) -> Tensor:
        return F.conv2d(x.unsqueeze(0), win, groups=c).squeeze(0)

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


def psnr(a: Tensor, b: Tensor) -> float:
    """10*log10(1/MSE) for unit data range; inf when the images are identical."""
    a = _as_chw(a, "first image")
    b = _as_chw(b, "second image")
    _check_same_dims(a, b)
    mse = float(((a.double() - b.double()) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def checkerboard_energy(img: Tensor) -> float:
    """Fraction of AC spectral power on the Nyquist row/column.

    The input is grayscale-converted; spatial dims must be even. A perfect
    2x2 checkerboard concentrates all AC power at Nyquist (ratio 1); smooth
    images sit near 0.
    """
    gray = to_grayscale(img).double()
    h, w = gray.shape
    if h % 2 or w % 2:
        raise ContractError(f"checkerboard probe needs even dims, got {h}x{w}")
    power = torch.fft.fft2(gray).abs() ** 2
    total_ac = float(power.sum() - power[0, 0])
    if total_ac <= 0.0:
        return 0.0
    nyquist = float(power[h // 2, :].sum() + power[:, w // 2].sum() - power[h // 2, w // 2])
    return nyquist / total_ac


@dataclass
class MetricReport:
    """Per-pair metric record; serializes psnr infinity as the string 'inf'."""

    name: str
    ssim: float | None = None
    psnr: float | None = None
    checkerboard: float | None = None
    error: str | None = None

    def to_record(self) -> dict:
        rec: dict = {"name": self.name}
        if self.error is not None:
            rec["error"] = self.error
            return rec
        rec["ssim"] = self.ssim
        rec["psnr"] = "inf" if self.psnr is not None and math.isinf(self.psnr) else self.psnr
        rec["checkerboard"] = self.checkerboard
        return rec


def compare_images(name: str, a: Tensor, b: Tensor) -> MetricReport:
    """SSIM/PSNR of a pair plus the checkerboard ratio of the first image."""
    try:
        report = MetricReport(name=name, ssim=ssim(a, b), psnr=psnr(a, b))
        ha, wa = a.shape[-2:]
        if ha % 2 == 0 and wa % 2 == 0:
            report.checkerboard = checkerboard_energy(a)
        return report
    except ContractError as e:
        return MetricReport(name=name, error=str(e))
