"""Reading and writing 8-bit images as float tensors in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

__all__ = [
    "from_uint8",
    "load_image",
    "resize_center_crop",
    "save_image",
    "save_residual",
    "to_uint8",
]


def from_uint8(array: np.ndarray) -> torch.Tensor:
    """``H x W x 3`` uint8 array to a ``3 x H x W`` float tensor."""
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32) / 255.0).permute(2, 0, 1).contiguous()


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """``3 x H x W`` float tensor to an ``H x W x 3`` uint8 array (clamped, rounded)."""
    arr = img.detach().to(torch.float64).clamp(0.0, 1.0).permute(1, 2, 0).cpu().numpy()
    return np.round(arr * 255.0).astype(np.uint8)


def resize_center_crop(pil: Image.Image, resolution: int) -> Image.Image:
    """Scale the shorter side to ``resolution`` and crop the central square."""
    w, h = pil.size
    scale = resolution / min(w, h)
    nw, nh = max(resolution, round(w * scale)), max(resolution, round(h * scale))
    pil = pil.resize((nw, nh), Image.BICUBIC)
    left, top = (nw - resolution) // 2, (nh - resolution) // 2
    return pil.crop((left, top, left + resolution, top + resolution))


def load_image(path, resolution: int | None = None) -> torch.Tensor:
    with Image.open(path) as pil:
        pil = pil.convert("RGB")
        if resolution is not None:
            pil = resize_center_crop(pil, resolution)
        return from_uint8(np.asarray(pil))


def save_image(img: torch.Tensor, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)
    return path


def save_residual(residual: torch.Tensor, path) -> Path:
    """Save a band-pass residual shifted by +0.5 so zero maps to mid-gray."""
    return save_image(residual + 0.5, path)
