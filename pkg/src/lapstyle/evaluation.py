"""Image-quality metrics: PSNR, SSIM and a VGG-feature perceptual distance.

The perceptual distance has the LPIPS structure (unit-normalize channel
vectors per position, squared difference, spatial mean) but uses unit
channel weights unless a weight file is supplied, so its values are not
the published LPIPS numbers.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .features import ParameterSet, VGGEncoder
from .imageio import load_image

__all__ = [
    "LUMA_WEIGHTS",
    "MetricReport",
    "evaluate_batch",
    "gaussian_window",
    "load_perceptual_weights",
    "perceptual_distance",
    "psnr",
    "read_manifest",
    "ssim",
]

log = logging.getLogger(__name__)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
PERCEPTUAL_TAGS = ("1_1", "2_1", "3_1", "4_1")


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    _check_shapes(a, b)
    mse = float(((a.double() - b.double()) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def _luma(img: torch.Tensor) -> torch.Tensor:
    w = torch.tensor(LUMA_WEIGHTS, dtype=torch.float64).view(3, 1, 1)
    return (img.double() * w).sum(dim=-3)


def ssim(a: torch.Tensor, b: torch.Tensor, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0,
         window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows of the BT.601 luminance."""
    _check_shapes(a, b)
    if min(a.shape[-2:]) < window:
        raise ValueError(f"image {tuple(a.shape[-2:])} is smaller than the {window}x{window} SSIM window")
    x = _luma(a).view(1, 1, *a.shape[-2:])
    y = _luma(b).view(1, 1, *b.shape[-2:])
    g = gaussian_window(window, sigma).view(1, 1, window, window)
    mu_x, mu_y = F.conv2d(x, g), F.conv2d(y, g)
    sxx = F.conv2d(x * x, g) - mu_x**2
    syy = F.conv2d(y * y, g) - mu_y**2
    sxy = F.conv2d(x * y, g) - mu_x * mu_y
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float((num / den).mean())


def load_perceptual_weights(path) -> dict[str, torch.Tensor]:
    """Per-layer non-negative channel weights from an ``.npz`` keyed by feature tag."""
    with np.load(path) as archive:
        return {t: torch.from_numpy(archive[t].astype(np.float32)).reshape(-1) for t in PERCEPTUAL_TAGS}


def _unit(f: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    return f / (torch.linalg.vector_norm(f, dim=-3, keepdim=True) + eps)


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, encoder, weights: dict | None = None) -> float:
    _check_shapes(a, b)
    if isinstance(encoder, ParameterSet):
        encoder = VGGEncoder(encoder)
    with torch.no_grad():
        fa = encoder(a.float(), upto="4_1")
        fb = encoder(b.float(), upto="4_1")
    total = 0.0
    for t in PERCEPTUAL_TAGS:
        diff = (_unit(fa[t]) - _unit(fb[t])) ** 2
        if weights is not None:
            diff = diff * weights[t].view(-1, 1, 1).to(diff)
        total += float(diff.sum(dim=-3).mean())
    return total / len(PERCEPTUAL_TAGS)


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def _ok(self):
        return [r for r in self.rows if r.get("error") is None]

    @property
    def mean_psnr(self) -> float:
        finite = [r["psnr"] for r in self._ok() if math.isfinite(r["psnr"])]
        return float(np.mean(finite)) if finite else math.inf

    @property
    def infinite_psnr_count(self) -> int:
        return sum(1 for r in self._ok() if not math.isfinite(r["psnr"]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r["ssim"] for r in self._ok()]))

    @property
    def mean_perceptual(self) -> float:
        return float(np.mean([r["perceptual"] for r in self._ok()]))

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pair", "stylized", "style", "psnr_db", "ssim", "perceptual", "error"])
            for r in self.rows:
                if r.get("error"):
                    writer.writerow([r["pair"], r["stylized"], r["style"], "", "", "", r["error"]])
                else:
                    psnr_text = "inf" if not math.isfinite(r["psnr"]) else f"{r['psnr']:.6f}"
                    writer.writerow([r["pair"], r["stylized"], r["style"], psnr_text, f"{r['ssim']:.6f}", f"{r['perceptual']:.6f}", ""])
            writer.writerow([])
            writer.writerow(["aggregate", "pairs", len(self._ok()), "errors", len(self.rows) - len(self._ok())])
            writer.writerow(["mean_psnr_db", f"{self.mean_psnr:.6f}", "inf_excluded", self.infinite_psnr_count])
            writer.writerow(["mean_ssim", f"{self.mean_ssim:.6f}"])
            writer.writerow(["mean_perceptual", f"{self.mean_perceptual:.6f}"])
        return path


def read_manifest(path) -> list[tuple[str, str]]:
    """``stylized<TAB>style`` per line; blank lines and ``#`` comments ignored."""
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two tab-separated paths")
        pairs.append(tuple(_resolve(p.strip(), path.parent) for p in parts))
    if not pairs:
        raise ValueError(f"manifest {path} lists no image pairs")
    return pairs


def _resolve(p: str, base: Path) -> str:
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


def evaluate_batch(manifest, encoder, weights: dict | None = None) -> MetricReport:
    if isinstance(encoder, ParameterSet):
        encoder = VGGEncoder(encoder)
    report = MetricReport()
    for i, (stylized, style) in enumerate(read_manifest(manifest)):
        row = {"pair": i, "stylized": stylized, "style": style, "error": None}
        try:
            a = load_image(stylized)
            b = load_image(style)
            row.update(psnr=psnr(a, b), ssim=ssim(a, b), perceptual=perceptual_distance(a, b, encoder, weights))
        except (OSError, ValueError) as exc:
            log.warning("pair %d failed: %s", i, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        report.rows.append(row)
    return report
