"""
Encoder features and the style losses
=====================================

Extract VGG-19 features and evaluate each loss term on a pair of images.
No pretrained weights ship with the package, so this uses the seeded
synthetic encoder. Point ``LAPSTYLE_WEIGHTS`` at a converted archive to use
real ImageNet weights instead.
"""

import os

import torch

from lapstyle.features import VGGEncoder, load_encoder_weights, random_encoder_weights
from lapstyle.losses import (
    mean_variance_loss,
    perceptual_content_loss,
    remd_loss,
    self_similarity_loss,
)

params = load_encoder_weights() if os.environ.get("LAPSTYLE_WEIGHTS") else random_encoder_weights(0)
encoder = VGGEncoder(params).eval()
print("encoder", params.manifest["source"], "digest", params.digest()[:12])

###############################################################################
# Features at ReLU_1_1 through ReLU_5_1 halve in size after each pooling.
torch.manual_seed(0)
content = torch.rand(1, 3, 128, 128)
style = torch.rand(1, 3, 128, 128) * 0.5
with torch.no_grad():
    f_c, f_s = encoder(content), encoder(style)
for tag, f in f_c.items():
    print(tag, tuple(f.shape))

###############################################################################
# Every term is zero when its two arguments coincide.
with torch.no_grad():
    print("l_mv(c, c) =", float(mean_variance_loss(f_c, f_c)))
    print("l_p(c, c)  =", float(perceptual_content_loss(f_c, f_c)))

###############################################################################
# Content versus style: the statistics terms see the darker style, while the
# normalized perceptual term ignores a global rescaling.
with torch.no_grad():
    print("l_mv(c, s)  =", float(mean_variance_loss(f_c, f_s)))
    print("l_r(c, s)   =", float(remd_loss(f_c, f_s, ("3_1", "4_1"))))
    print("l_ss(c, s)  =", float(self_similarity_loss(f_c, f_s, ("3_1", "4_1"))))
    print("l_p(c, 2c)  =", float(perceptual_content_loss(encoder(content), {k: 2 * v for k, v in f_c.items()})))
