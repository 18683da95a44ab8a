"""Laplacian pyramid decomposition and reconstruction.

Images are torch tensors laid out as ``(C, H, W)`` or ``(N, C, H, W)``.
All operations are linear and differentiable, so the same functions serve
data preparation, the detail network's ``Up`` operator and reconstruction
inside the training graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

__all__ = [
    "BINOMIAL_TAPS",
    "DimensionError",
    "LaplacianPyramid",
    "decompose",
    "downsample",
    "kernel_taps",
    "reconstruct",
    "upsample",
]

# 5-tap binomial (Burt & Adelson) resampling kernel.
BINOMIAL_TAPS = (1.0, 4.0, 6.0, 4.0, 1.0)


class DimensionError(ValueError):
    """Raised when image dimensions do not fit a resampling operation."""


def kernel_taps(dtype=torch.float32, device=None) -> torch.Tensor:
    taps = torch.tensor(BINOMIAL_TAPS, dtype=torch.float64)
    taps = taps / taps.sum()
    return taps.to(dtype=dtype, device=device)


def _reflect_index(n: int, pad: int, device=None) -> torch.Tensor:
    # symmetric reflection without repeating the edge sample, valid for any n >= 1
    idx = torch.arange(-pad, n + pad, device=device)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = torch.remainder(idx, period)
    return torch.where(idx >= n, period - idx, idx)


def _as_batch(img: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if img.dim() == 3:
        return img.unsqueeze(0), True
    if img.dim() == 4:
        return img, False
    raise DimensionError(f"expected a (C, H, W) or (N, C, H, W) tensor, got shape {tuple(img.shape)}")


def _blur(x: torch.Tensor, taps: torch.Tensor) -> torch.Tensor:
    """Separable reflect-padded convolution of a batch with a 1-D kernel."""
    n, c, h, w = x.shape
    pad = taps.numel() // 2
    x = x.index_select(2, _reflect_index(h, pad, x.device))
    x = x.index_select(3, _reflect_index(w, pad, x.device))
    x = x.reshape(n * c, 1, h + 2 * pad, w + 2 * pad)
    x = F.conv2d(x, taps.view(1, 1, -1, 1))
    x = F.conv2d(x, taps.view(1, 1, 1, -1))
    return x.reshape(n, c, h, w)


def downsample(img: torch.Tensor) -> torch.Tensor:
    """Blur with the binomial kernel and keep every second row and column."""
    x, squeeze = _as_batch(img)
    h, w = x.shape[-2:]
    for axis, size in (("height", h), ("width", w)):
        if size % 2:
            raise DimensionError(f"cannot downsample: {axis} {size} is odd")
    out = _blur(x, kernel_taps(x.dtype, x.device))[..., ::2, ::2]
    return out.squeeze(0) if squeeze else out


def upsample(img: torch.Tensor) -> torch.Tensor:
    """Zero-insert to twice the size, then blur with the kernel scaled by 2 per axis."""
    x, squeeze = _as_batch(img)
    n, c, h, w = x.shape
    up = x.new_zeros(n, c, 2 * h, 2 * w)
    up[..., ::2, ::2] = x
    out = _blur(up, 2.0 * kernel_taps(x.dtype, x.device))
    return out.squeeze(0) if squeeze else out


@dataclass
class LaplacianPyramid:
    """Low-frequency base plus band-pass residuals, finest residual first."""

    low: torch.Tensor
    residuals: list[torch.Tensor] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.residuals)

    def reconstruct(self) -> torch.Tensor:
        return reconstruct(self.low, self.residuals)


def decompose(img: torch.Tensor, levels: int = 2) -> LaplacianPyramid:
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    divisor = 2**levels
    h, w = img.shape[-2:]
    if h % divisor or w % divisor:
        raise DimensionError(
            f"image of size {h}x{w} cannot be decomposed into {levels} levels: "
            f"height and width must be divisible by {divisor}"
        )
    residuals = []
    current = img
    for _ in range(levels):
        smaller = downsample(current)
        residuals.append(current - upsample(smaller))
        current = smaller
    return LaplacianPyramid(low=current, residuals=residuals)


def reconstruct(low: torch.Tensor, residuals) -> torch.Tensor:
    """Iterate ``x <- upsample(x) + residual`` from the coarsest residual to the finest."""
    x = low
    for level in reversed(range(len(residuals))):
        residual = residuals[level]
        expected = (2 * x.shape[-2], 2 * x.shape[-1])
        if tuple(residual.shape[-2:]) != expected:
            raise DimensionError(
                f"residual at level {level} has size {tuple(residual.shape[-2:])}, "
                f"expected {expected} to match the next coarser stage"
            )
        x = upsample(x) + residual
    return x
