"""
Two-stage training on a toy dataset
===================================

Train the base network on low-resolution images, then the detail network
with the base frozen, and stylize one image. The runs are tiny so the
script finishes in a few minutes on a CPU.
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from lapstyle.detail_net import full_stylize
from lapstyle.features import VGGEncoder, random_encoder_weights
from lapstyle.imageio import load_image, save_image
from lapstyle.training import TrainConfig, plot_loss_log, train_stage1, train_stage2

root = Path("notebook_out/training")

###############################################################################
# Toy data: gradient images with a disc as content, dark strokes on paper
# as the style.
rng = np.random.default_rng(0)
(root / "content").mkdir(parents=True, exist_ok=True)
yy, xx = np.mgrid[0:128, 0:128] / 128
for i in range(4):
    img = np.stack([yy * rng.uniform(), xx * rng.uniform(), 1 - yy], -1)
    img[(yy - 0.5) ** 2 + (xx - rng.uniform(0.3, 0.7)) ** 2 < 0.04] = rng.uniform(size=3)
    Image.fromarray((img * 255).astype(np.uint8)).save(root / "content" / f"c{i}.png")
paper = np.full((128, 128, 3), [0.93, 0.9, 0.82])
for x0 in rng.integers(0, 120, 10):
    paper[:, x0 : x0 + 5] *= 0.4
Image.fromarray((paper * 255).astype(np.uint8)).save(root / "style.png")

params = random_encoder_weights(0)

###############################################################################
# Stage 1 trains the attention modules and decoder at 32x32.
cfg1 = TrainConfig(content_dir=str(root / "content"), style_image=str(root / "style.png"), resolution=128,
                   stage="base", iterations=30, batch_size=2, output_dir=str(root / "s1"))
base_ckpt = train_stage1(cfg1, params)
print("stage 1 total:", round(base_ckpt.history[0]["total"]), "->", round(base_ckpt.history[-1]["total"]))

###############################################################################
# Stage 2 trains only the detail network; the base output is cached.
cfg2 = TrainConfig(content_dir=str(root / "content"), style_image=str(root / "style.png"), resolution=128,
                   stage="detail", iterations=20, learning_rate=1e-3, max_samples=256, output_dir=str(root / "s2"))
detail_ckpt = train_stage2(cfg2, base_ckpt, params)
print("stage 2 total:", round(detail_ckpt.history[0]["total"]), "->", round(detail_ckpt.history[-1]["total"]))
plot_loss_log(root / "s2" / "stage2_loss.log", root / "s2" / "loss.png")

###############################################################################
# Stylize one content image and keep the coarse-to-fine stages.
encoder = VGGEncoder(params)
with torch.no_grad():
    result = full_stylize(load_image(root / "content" / "c0.png"), load_image(root / "style.png"), encoder,
                          base_ckpt.build().eval(), detail_ckpt.build().eval())
for stage in result.stages:
    save_image(stage.clamp(0, 1), root / f"stage_{stage.shape[-1]}.png")
print("stages", [s.shape[-1] for s in result.stages])
