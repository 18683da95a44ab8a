"""
Image-quality metrics
=====================

PSNR, SSIM and the VGG perceptual distance, alone and through a manifest.
"""

from pathlib import Path

import torch

from lapstyle.evaluation import evaluate_batch, perceptual_distance, psnr, ssim
from lapstyle.features import VGGEncoder, random_encoder_weights
from lapstyle.imageio import save_image

encoder = VGGEncoder(random_encoder_weights(0))
torch.manual_seed(0)
x = torch.rand(3, 64, 64, dtype=torch.float64) * 0.8

###############################################################################
# A uniform +0.1 shift has MSE 0.01, so PSNR is exactly 20 dB.
print("psnr(x + 0.1, x) =", psnr(x + 0.1, x))
print("ssim(x, x)       =", ssim(x, x))

###############################################################################
# More noise lowers every fidelity score.
for sigma in (0.02, 0.1, 0.3):
    y = (x + sigma * torch.randn_like(x)).clamp(0, 1)
    print(f"sigma={sigma}: psnr={psnr(y, x):6.2f}  ssim={ssim(y, x):.3f}  perceptual={perceptual_distance(y, x, encoder):.4f}")

###############################################################################
# Batch evaluation reads a tab-separated manifest and writes a CSV report.
out = Path("notebook_out/evaluation")
save_image(x, out / "a.png")
save_image((x + 0.1).clamp(0, 1), out / "b.png")
(out / "pairs.tsv").write_text("a.png\tb.png\na.png\ta.png\n")
report = evaluate_batch(out / "pairs.tsv", encoder)
report.to_csv(out / "metrics.csv")
print("mean psnr (finite only):", report.mean_psnr, "identical pairs:", report.infinite_psnr_count)
