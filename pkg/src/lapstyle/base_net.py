"""Low-resolution style transfer network: VGG encoder, two style-attention
modules at ReLU_4_1 and ReLU_5_1, a fusion convolution and a mirrored decoder.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .features import VGGEncoder, normalize_mv
from .pyramid import DimensionError

__all__ = ["BaseNet", "Decoder", "SAModule", "base_forward", "sa_attention"]


class SAModule(nn.Module):
    """Learned 1x1 projections for style-attentional feature embedding."""

    def __init__(self, channels: int = 512):
        super().__init__()
        self.w_c = nn.Conv2d(channels, channels, 1)
        self.w_s = nn.Conv2d(channels, channels, 1)
        self.w_h = nn.Conv2d(channels, channels, 1)
        self.w_out = nn.Conv2d(channels, channels, 1)

    def forward(self, f_c: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        return sa_attention(f_c, f_s, self)


def sa_attention(f_c: torch.Tensor, f_s: torch.Tensor, params: SAModule, return_attention: bool = False):
    """Embed style features into content features by cross attention.

    Logits ``A[i, j]`` pair content position ``i`` with style position ``j``
    (both mean-variance normalized and projected); each row is softmaxed
    over ``j`` and used to average the projected raw style features. The
    result goes through ``w_out`` and is added back onto ``f_c``.
    """
    if f_c.shape[-3] != f_s.shape[-3]:
        raise ValueError(f"channel mismatch: content has {f_c.shape[-3]}, style has {f_s.shape[-3]}")
    squeeze = f_c.dim() == 3
    if squeeze:
        f_c, f_s = f_c.unsqueeze(0), f_s.unsqueeze(0)
    n, c, h, w = f_c.shape
    q = params.w_c(normalize_mv(f_c)).flatten(2)  # N x C x Nc
    k = params.w_s(normalize_mv(f_s)).flatten(2)  # N x C x Ns
    v = params.w_h(f_s).flatten(2)
    logits = torch.bmm(q.transpose(1, 2), k)  # N x Nc x Ns
    attn = torch.softmax(logits, dim=-1)  # max-subtracted internally
    f_cs = torch.bmm(v, attn.transpose(1, 2)).view(n, c, h, w)
    out = f_c + params.w_out(f_cs)
    if squeeze:
        out, attn = out.squeeze(0), attn.squeeze(0)
    return (out, attn) if return_attention else out


def _conv(cin: int, cout: int) -> list[nn.Module]:
    return [nn.ReflectionPad2d(1), nn.Conv2d(cin, cout, 3)]


class Decoder(nn.Module):
    """Mirror of the VGG-19 stack from the 512-channel ReLU_4_1 stage down to RGB."""

    def __init__(self):
        super().__init__()
        layers: list[nn.Module] = []
        plan = [
            (512, 256, True),
            (256, 256, False),
            (256, 256, False),
            (256, 256, False),
            (256, 128, True),
            (128, 128, False),
            (128, 64, True),
            (64, 64, False),
        ]
        for cin, cout, up in plan:
            layers += _conv(cin, cout) + [nn.ReLU()]
            if up:
                layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
        layers += _conv(64, 3) + [nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.net(f)


class BaseNet(nn.Module):
    """Trainable part of the base network; the frozen encoder is passed in."""

    def __init__(self):
        super().__init__()
        self.sa4 = SAModule(512)
        self.sa5 = SAModule(512)
        self.fuse = nn.Sequential(*_conv(512, 512))
        self.decoder = Decoder()

    def forward(self, x_c: torch.Tensor, x_s: torch.Tensor, encoder: VGGEncoder) -> torch.Tensor:
        return base_forward(x_c, x_s, encoder, self)


def base_forward(x_c: torch.Tensor, x_s: torch.Tensor, encoder: VGGEncoder, net: BaseNet) -> torch.Tensor:
    """Stylize a low-resolution content image; output matches ``x_c``'s size, values in [0, 1]."""
    squeeze = x_c.dim() == 3
    if squeeze:
        x_c, x_s = x_c.unsqueeze(0), x_s.unsqueeze(0)
    if x_c.shape[-2:] != x_s.shape[-2:]:
        raise DimensionError(f"content {tuple(x_c.shape[-2:])} and style {tuple(x_s.shape[-2:])} sizes differ")
    if x_s.shape[0] != x_c.shape[0]:
        x_s = x_s.expand(x_c.shape[0], -1, -1, -1)
    fc = encoder(x_c)
    fs = encoder(x_s)
    f4 = net.sa4(fc["4_1"], fs["4_1"])
    f5 = net.sa5(fc["5_1"], fs["5_1"])
    # the 5_1 map is half the 4_1 size; bring it onto the 4_1 grid before summing
    fused = net.fuse(f4 + F.interpolate(f5, scale_factor=2, mode="nearest"))
    out = net.decoder(fused)
    return out.squeeze(0) if squeeze else out
