"""
Laplacian pyramid decomposition
===============================

Split an image into a low-frequency base and band-pass residuals, then put
it back together.
"""

from pathlib import Path

import numpy as np
import torch

from lapstyle.imageio import save_image, save_residual
from lapstyle.pyramid import decompose, reconstruct

out = Path("notebook_out/pyramid")

###############################################################################
# A synthetic 256x256 image: a smooth colour ramp with a sharp square.
yy, xx = np.mgrid[0:256, 0:256] / 256.0
img = np.stack([yy, xx, 1 - yy])
img[:, 96:160, 96:160] = [[[0.9]], [[0.2]], [[0.1]]]
x = torch.from_numpy(img.astype(np.float32))

###############################################################################
# Two levels give a 64x64 base plus residuals at 256 and 128.
pyr = decompose(x, levels=2)
print("base", tuple(pyr.low.shape), "residuals", [tuple(h.shape) for h in pyr.residuals])

# The residuals hold the square's edges; flat regions are near zero.
for k, h in enumerate(pyr.residuals):
    print(f"h{k}: max |value| = {h.abs().max():.4f}")

###############################################################################
# Reconstruction is exact up to float rounding.
err = (reconstruct(pyr.low, pyr.residuals) - x).abs().max()
print(f"round-trip error {err:.2e}")

save_image(pyr.low, out / "low.png")
for k, h in enumerate(pyr.residuals):
    save_residual(h, out / f"h{k}.png")  # shifted by +0.5 so zero is mid-gray
print("wrote", sorted(p.name for p in out.iterdir()))
